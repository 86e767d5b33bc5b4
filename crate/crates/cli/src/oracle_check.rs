//! Quick self-checks of the estimators against exact references.

use paris_smc::models::{simulate, HmmModel, LgssmModel, LgssmParams, SlamModel, SlamSpec, SvModel};
use paris_smc::oracle::{finite_diff, hmm_tangent_exact, kalman_filter, DEFAULT_STEP};
use paris_smc::{
    emission_grad, score_increment, tangent_init, tangent_measure, tangent_step, BackwardSamplerConfig,
    ParameterVector, Purpose, StateSpaceModel, StreamSeed, UpdateRule,
};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// `|a − b| / max(|a|, |b|, 1)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest relative error between analytic and finite-difference gradients
/// of `log g + log q` and of `g` over `points` random configurations.
pub fn gradient_error<M, F>(model: &M, points: usize, seed: u64, mut draw_theta: F) -> f64
where
    M: StateSpaceModel,
    F: FnMut(&mut paris_smc::rng::ParticleRng) -> Vec<f64>,
{
    let mut rng = StreamSeed(seed).sequential(Purpose::Auxiliary);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < points {
        let th = draw_theta(&mut rng);
        let theta = ParameterVector::new(th.clone()).expect("finite");
        let t = rng.random_range(0..50usize);
        let x = model.sample_initial(&mut rng);
        let x1 = model.sample_transition(&th, t, &x, &mut rng);
        let y = model.sample_emission(&th, &x, &mut rng);
        let Ok(analytic) = score_increment(model, &theta, t, &x, &x1, &y) else {
            continue;
        };
        let fd = finite_diff(
            |p| model.log_emission_density(p, &x, &y) + model.log_transition_density(p, t, &x, &x1),
            &th,
            DEFAULT_STEP,
        );
        let g_an = emission_grad(model, &theta, &x, &y).expect("admissible");
        let g_fd = finite_diff(|p| model.emission_density(p, &x, &y), &th, DEFAULT_STEP);
        for (a, b) in analytic.iter().zip(&fd).chain(g_an.iter().zip(&g_fd)) {
            worst = worst.max(relative_error(*a, *b));
        }
        done += 1;
    }
    worst
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Gradient checks for every built-in model.
pub fn gradient_checks(points: usize, tol: f64) -> Vec<CheckResult> {
    let sv = SvModel::default();
    let lg = LgssmModel::new(0.7, 1.0, 0.5, LgssmParams::Both).expect("valid");
    let hmm = HmmModel::test_chain();
    let slam = SlamModel::new(SlamSpec::default_layout(5)).expect("valid");
    let truth = slam.true_parameter();
    let errs = [
        (
            "sv",
            gradient_error(&sv, points, 1, |r| {
                vec![r.random_range(-0.9..0.9), r.random_range(0.05..1.0), r.random_range(0.2..2.0)]
            }),
        ),
        (
            "lgssm",
            gradient_error(&lg, points, 2, |r| vec![r.random_range(-0.9..0.9), r.random_range(0.2..2.0)]),
        ),
        ("hmm", gradient_error(&hmm, points, 3, |r| vec![r.random_range(0.1..0.9)])),
        (
            "slam",
            gradient_error(&slam, points, 4, |r| truth.iter().map(|v| v + normal(r)).collect()),
        ),
    ];
    errs.into_iter()
        .map(|(name, e)| CheckResult {
            name: format!("gradient-{name}"),
            passed: e < tol,
            detail: format!("max relative error {e:.2e} over {points} points (limit {tol:.0e})"),
        })
        .collect()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Mean over `reps` PaRIS runs of the tangent measure of `x = j` on the
/// three-state chain compared with the exact tangent filter.
pub fn hmm_tangent_check(n: usize, horizon: usize, reps: usize) -> Result<CheckResult, CliError> {
    let model = HmmModel::test_chain();
    let theta = ParameterVector::new(vec![HmmModel::TEST_CHAIN_THETA])?;
    let ys = simulate(&model, &theta, horizon, StreamSeed(17))?.observations;
    let exact = &hmm_tangent_exact(&model, &theta, &ys[..horizon])?[horizon][0];
    let rule = UpdateRule::Paris(BackwardSamplerConfig::new(2));
    let mut samples = vec![Vec::with_capacity(reps); 3];
    for r in 0..reps {
        let mut s = tangent_init(&model, n, StreamSeed(100 + r as u64))?;
        for y in &ys[..horizon] {
            s = tangent_step(&model, s, y, &theta, &rule)?;
        }
        for (j, out) in samples.iter_mut().enumerate() {
            out.push(tangent_measure(&s, |x: &usize| (*x == j) as u8 as f64)[0]);
        }
    }
    let mut worst: f64 = 0.0;
    for (j, v) in samples.iter().enumerate() {
        let (m, se) = mean_se(v);
        worst = worst.max((m - exact[j]).abs() / se.max(1e-12));
    }
    Ok(CheckResult {
        name: "hmm-tangent".into(),
        passed: worst < 4.0,
        detail: format!("largest deviation {worst:.2} standard errors (limit 4)"),
    })
}

/// Particle tangent of the identity against the derivative of the Kalman
/// predictor mean.
pub fn kalman_tangent_check(n: usize, horizon: usize, reps: usize) -> Result<CheckResult, CliError> {
    let model = LgssmModel::new(0.8, 1.0, 1.0, LgssmParams::Phi)?;
    let theta = ParameterVector::new(vec![0.8])?;
    let ys = simulate(&model, &theta, horizon, StreamSeed(23))?.observations;
    let obs = &ys[..horizon];
    let exact = finite_diff(
        |p| {
            let th = ParameterVector::new(p.to_vec()).expect("finite");
            kalman_filter(&model, &th, obs).expect("admissible")[horizon].pred_mean
        },
        &theta,
        DEFAULT_STEP,
    )[0];
    let rule = UpdateRule::Paris(BackwardSamplerConfig::new(2));
    let mut v = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut s = tangent_init(&model, n, StreamSeed(300 + r as u64))?;
        for y in obs {
            s = tangent_step(&model, s, y, &theta, &rule)?;
        }
        v.push(tangent_measure(&s, |x: &f64| *x)[0]);
    }
    let (m, se) = mean_se(&v);
    let z = (m - exact).abs() / se.max(1e-12);
    Ok(CheckResult {
        name: "kalman-tangent".into(),
        passed: z < 4.0,
        detail: format!("estimate {m:.4} vs exact {exact:.4}, {z:.2} standard errors (limit 4)"),
    })
}

/// Every check at its default size.
pub fn oracle_check() -> Result<Vec<CheckResult>, CliError> {
    let mut out = gradient_checks(100, 1e-6);
    out.push(hmm_tangent_check(1000, 50, 20)?);
    out.push(kalman_tangent_check(1000, 20, 20)?);
    Ok(out)
}

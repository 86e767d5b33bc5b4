use paris_smc::models::{simulate, HmmModel, LgssmModel, LgssmParams, SvModel};
use paris_smc::oracle::{
    finite_diff, hmm_forward, hmm_score_increment, hmm_smoothed_exact, kalman_filter, DEFAULT_STEP,
};
use paris_smc::smc::propagate;
use paris_smc::{
    backward_index, estimate, ffbsm_update, init_cloud, paris_update, score_increment, smoothed_estimate,
    tangent_init, tangent_measure, tangent_step, weight_cloud, zeta_hat, BackwardSamplerConfig, BackwardStatistics,
    EstimateMode, ParameterVector, Purpose, ScoreFunctional, StateSpaceModel, StreamSeed, UpdateRule,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn pv(v: Vec<f64>) -> ParameterVector {
    ParameterVector::new(v).unwrap()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn normal_pdf(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[test]
fn lgssm_scores_match_finite_differences_for_every_parameterization() {
    for params in [LgssmParams::Phi, LgssmParams::Sigma2, LgssmParams::Both] {
        let model = LgssmModel::new(0.6, 0.8, 0.5, params).unwrap();
        let theta = pv(model.nominal_parameter());
        let mut rng = StreamSeed(7).sequential(Purpose::Auxiliary);
        for t in 0..100 {
            let x = model.sample_initial(&mut rng);
            let x1 = model.sample_transition(&theta, t, &x, &mut rng);
            let y = model.sample_emission(&theta, &x, &mut rng);
            let an = score_increment(&model, &theta, t, &x, &x1, &y).unwrap();
            let fd = finite_diff(
                |p| model.log_emission_density(p, &x, &y) + model.log_transition_density(p, t, &x, &x1),
                &theta,
                DEFAULT_STEP,
            );
            for (a, b) in an.iter().zip(&fd) {
                assert!(rel(*a, *b) < 1e-6, "{params:?}: {a} vs {b}");
            }
        }
    }
}

/// The linear-Gaussian model on a 400-point grid over ±6 stationary standard
/// deviations, with the observed values as symbols and a catch-all symbol
/// holding the rest of each emission row.
#[test]
fn discretized_chain_reproduces_the_kalman_likelihood() {
    let (phi, s2, r) = (0.8, 1.0, 1.0);
    let model = LgssmModel::new(phi, s2, r, LgssmParams::Phi).unwrap();
    let theta = pv(vec![phi]);
    let t = 20;
    let ys = simulate(&model, &theta, t - 1, StreamSeed(3)).unwrap().observations;
    assert_eq!(ys.len(), t);
    let kalman = kalman_filter(&model, &theta, &ys).unwrap()[t].log_likelihood;

    let sd = (s2 / (1.0 - phi * phi)).sqrt();
    let m = 400;
    let dx = 12.0 * sd / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|i| -6.0 * sd + i as f64 * dx).collect();
    let normalize = |row: Vec<f64>| {
        let s: f64 = row.iter().sum();
        row.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let initial = normalize(grid.iter().map(|x| normal_pdf(*x, sd * sd)).collect());
    let transition: Vec<Vec<f64>> = grid
        .iter()
        .map(|x| normalize(grid.iter().map(|x1| normal_pdf(x1 - phi * x, s2)).collect()))
        .collect();
    let width = 1e-3;
    let emission: Vec<Vec<f64>> = grid
        .iter()
        .map(|x| {
            let mut row: Vec<f64> = ys.iter().map(|y| normal_pdf(y - x, r) * width).collect();
            let rest = 1.0 - row.iter().sum::<f64>();
            row.push(rest);
            row
        })
        .collect();
    let chain = HmmModel::parameter_free(transition, emission, initial).unwrap();
    let symbols: Vec<usize> = (0..t).collect();
    let exact = hmm_forward(&chain, &pv(vec![0.0]), &symbols).unwrap()[t].log_likelihood;
    let discretized = exact - t as f64 * width.ln();
    assert!((discretized - kalman).abs() < 1e-2, "{discretized} vs {kalman}");
}

#[test]
fn lgssm_tangent_matches_kalman_sensitivity() {
    let model = LgssmModel::new(0.8, 1.0, 1.0, LgssmParams::Phi).unwrap();
    let theta = pv(vec![0.8]);
    let t = 15;
    let ys = simulate(&model, &theta, t, StreamSeed(41)).unwrap().observations;
    let obs = &ys[..t];
    let exact = finite_diff(
        |p| kalman_filter(&model, &pv(p.to_vec()), obs).unwrap()[t].pred_mean,
        &theta,
        DEFAULT_STEP,
    )[0];
    let rule = UpdateRule::Paris(BackwardSamplerConfig::new(2));
    let v: Vec<f64> = (0..30)
        .map(|r| {
            let mut s = tangent_init(&model, 1000, StreamSeed(500 + r)).unwrap();
            for y in obs {
                s = tangent_step(&model, s, y, &theta, &rule).unwrap();
            }
            tangent_measure(&s, |x| *x)[0]
        })
        .collect();
    let (m, se) = mean_se(&v);
    assert!((m - exact).abs() < 4.0 * se, "{m} vs {exact} (se {se})");
}

fn hmm_record(t: usize, seed: u64) -> (HmmModel, ParameterVector, Vec<usize>) {
    let model = HmmModel::test_chain();
    let theta = pv(vec![HmmModel::TEST_CHAIN_THETA]);
    let ys = simulate(&model, &theta, t, StreamSeed(seed)).unwrap().observations;
    (model, theta, ys)
}

#[test]
fn zeta_direction_estimates_the_one_step_score() {
    let t = 25;
    let (model, theta, ys) = hmm_record(t, 12);
    let exact = hmm_forward(&model, &theta, &ys[..=t]).unwrap()[t + 1].step_score[0];
    let rule = UpdateRule::Paris(BackwardSamplerConfig::new(2));
    let v: Vec<f64> = (0..40)
        .map(|r| {
            let mut s = tangent_init(&model, 1000, StreamSeed(900 + r)).unwrap();
            for y in &ys[..t] {
                s = tangent_step(&model, s, y, &theta, &rule).unwrap();
            }
            let (z, dir) = zeta_hat(&model, s.cloud(), s.stats(), &ys[t], &theta).unwrap();
            assert!(z.zeta3 > 0.0 && z.zeta3.is_finite());
            assert!((z.log_zeta3 - z.zeta3.ln()).abs() < 1e-12);
            dir[0]
        })
        .collect();
    let (m, se) = mean_se(&v);
    assert!((m - exact).abs() < 4.0 * se, "{m} vs {exact} (se {se})");
}

#[test]
fn zeta_points_back_towards_the_truth() {
    let model = LgssmModel::new(0.6, 1.0, 1.0, LgssmParams::Phi).unwrap();
    let truth = pv(vec![0.6]);
    let off = pv(vec![0.8]);
    let steps = 1000;
    let ys = simulate(&model, &truth, steps, StreamSeed(77)).unwrap().observations;
    let total_ll = |p: &[f64]| kalman_filter(&model, &pv(p.to_vec()), &ys[..steps]).unwrap()[steps].log_likelihood;
    assert!(finite_diff(total_ll, &off, DEFAULT_STEP)[0] < 0.0);

    let rule = UpdateRule::Paris(BackwardSamplerConfig::new(2));
    let mut s = tangent_init(&model, 300, StreamSeed(78)).unwrap();
    let mut dirs = Vec::with_capacity(steps);
    for y in &ys[..steps] {
        dirs.push(zeta_hat(&model, s.cloud(), s.stats(), y, &off).unwrap().1[0]);
        s = tangent_step(&model, s, y, &off, &rule).unwrap();
    }
    let (m, se) = mean_se(&dirs);
    assert!(m + 2.33 * se < 0.0, "mean {m}, se {se}");
}

fn smoothed_score_runs(precision: usize, reps: u64, seed: u64) -> Vec<f64> {
    let t = 40;
    let (model, theta, ys) = hmm_record(t, 5);
    let rule = UpdateRule::Paris(BackwardSamplerConfig::new(precision));
    (0..reps)
        .map(|r| {
            let mut s = tangent_init(&model, 400, StreamSeed(seed + r)).unwrap();
            for y in &ys[..t] {
                s = tangent_step(&model, s, y, &theta, &rule).unwrap();
            }
            smoothed_estimate(s.stats())[0]
        })
        .collect()
}

#[test]
fn precision_does_not_move_the_limit() {
    let (m2, se2) = mean_se(&smoothed_score_runs(2, 40, 1000));
    let (m10, se10) = mean_se(&smoothed_score_runs(10, 40, 2000));
    let combined = (se2 * se2 + se10 * se10).sqrt();
    assert!((m2 - m10).abs() < 4.0 * combined, "{m2} vs {m10} (se {combined})");
}

#[test]
fn forward_only_smoothing_matches_the_exact_recursion() {
    let t = 30;
    let (model, theta, ys) = hmm_record(t, 9);
    let th = theta.as_slice().to_vec();
    let exact = hmm_smoothed_exact(&model, &theta, &ys[..t], 1, |s, i, j, out| {
        out[0] += hmm_score_increment(&model, &th, i, j, ys[s])[0];
    })
    .unwrap()[t]
        .estimate[0];
    let v: Vec<f64> = (0..20)
        .map(|r| {
            let mut s = tangent_init(&model, 1500, StreamSeed(40 + r)).unwrap();
            for y in &ys[..t] {
                s = tangent_step(&model, s, y, &theta, &UpdateRule::Ffbsm).unwrap();
            }
            smoothed_estimate(s.stats())[0]
        })
        .collect();
    let (m, se) = mean_se(&v);
    assert!((m - exact).abs() < 4.0 * se, "{m} vs {exact} (se {se})");
}

#[test]
fn sampled_update_is_conditionally_unbiased_on_the_chain() {
    let t = 3;
    let (model, theta, ys) = hmm_record(t, 2);
    let n = 20;
    let c0 = weight_cloud(&model, init_cloud(&model, n, StreamSeed(1)).unwrap(), &ys[0], &theta).unwrap();
    let c1 = weight_cloud(&model, propagate(&model, &c0, &theta, StreamSeed(1)).unwrap(), &ys[1], &theta).unwrap();
    let h0 = ScoreFunctional { model: &model, theta: theta.as_slice(), t: 0, y: &ys[0] };
    let zero = BackwardStatistics::zeros(0, n, 1);
    let (s1, _) = ffbsm_update(&model, &zero, &c0, &c1, &h0, &theta).unwrap();
    let c2 = propagate(&model, &c1, &theta, StreamSeed(1)).unwrap();
    let h1 = ScoreFunctional { model: &model, theta: theta.as_slice(), t: 1, y: &ys[1] };
    let (exact, _) = ffbsm_update(&model, &s1, &c1, &c2, &h1, &theta).unwrap();

    let reps = 20_000;
    let cfg = BackwardSamplerConfig::new(2);
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for r in 0..reps {
        let (s, _) = paris_update(&model, &s1, &c1, &c2, &h1, &theta, &cfg, StreamSeed(10_000 + r)).unwrap();
        for (i, v) in s.as_flat().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let m = reps as f64;
    for i in 0..n {
        let mean = sum[i] / m;
        let var = (sq[i] / m - mean * mean) * m / (m - 1.0);
        let se = (var / m).sqrt().max(1e-15);
        assert!((mean - exact.as_flat()[i]).abs() < 4.5 * se, "child {i}: {mean} vs {}", exact.as_flat()[i]);
    }
}

fn backward_counts(model: &SvModel, threshold: usize, draws: usize) -> (Vec<f64>, Vec<f64>) {
    let theta = pv(vec![0.8, 0.1, 1.0]);
    let n = 10;
    let cloud = weight_cloud(model, init_cloud(model, n, StreamSeed(4)).unwrap(), &0.7, &theta).unwrap();
    let child = 0.35;
    let w = cloud.weights().unwrap();
    let raw: Vec<f64> = (0..n)
        .map(|j| w[j] * model.transition_density(theta.as_slice(), 0, &cloud.particles()[j], &child))
        .collect();
    let total: f64 = raw.iter().sum();
    let probs = raw.iter().map(|v| v / total).collect();
    let cfg = BackwardSamplerConfig { precision: 1, max_trials: threshold };
    let mut rng = StreamSeed(threshold as u64).sequential(Purpose::Backward);
    let mut counts = vec![0.0; n];
    for _ in 0..draws {
        counts[backward_index(model, &cloud, &child, &theta, &cfg, &mut rng).unwrap().index] += 1.0;
    }
    (counts, probs)
}

#[test]
fn backward_draws_do_not_depend_on_the_fallback_threshold() {
    let model = SvModel::default();
    let draws = 50_000;
    let (a, probs) = backward_counts(&model, 1, draws);
    let (b, _) = backward_counts(&model, 100, draws);
    let df = (a.len() - 1) as f64;
    let chi2 = ChiSquared::new(df).unwrap();
    for counts in [&a, &b] {
        let stat: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(c, p)| (c - draws as f64 * p).powi(2) / (draws as f64 * p))
            .sum();
        assert!(1.0 - chi2.cdf(stat) > 1e-3, "goodness of fit {stat}");
    }
    // Two-sample homogeneity.
    let stat: f64 = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| **x + **y > 0.0)
        .map(|(x, y)| {
            let e = (x + y) / 2.0;
            (x - e).powi(2) / e + (y - e).powi(2) / e
        })
        .sum();
    assert!(1.0 - chi2.cdf(stat) > 1e-3, "homogeneity {stat}");
}

#[test]
fn trials_per_draw_stay_bounded_on_a_mixing_chain() {
    let (model, theta, ys) = hmm_record(2, 3);
    let per_draw = |n: usize| {
        let c0 = weight_cloud(&model, init_cloud(&model, n, StreamSeed(8)).unwrap(), &ys[0], &theta).unwrap();
        let c1 = propagate(&model, &c0, &theta, StreamSeed(8)).unwrap();
        let h = ScoreFunctional { model: &model, theta: theta.as_slice(), t: 0, y: &ys[0] };
        let zero = BackwardStatistics::zeros(0, n, 1);
        let (_, d) =
            paris_update(&model, &zero, &c0, &c1, &h, &theta, &BackwardSamplerConfig::new(2), StreamSeed(9)).unwrap();
        assert_eq!(d.draws, 2 * n);
        d.trials as f64 / d.draws as f64
    };
    let small = per_draw(250);
    let large = per_draw(4000);
    // Acceptance probability is at least min q / max q.
    let q_min = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| model.q(theta.as_slice(), i, j))
        .fold(f64::INFINITY, f64::min);
    let bound = model.density_bound(theta.as_slice()) / q_min;
    assert!(small <= bound && large <= bound, "{small} {large} (bound {bound})");
    assert!(large / small < 1.2, "{small} -> {large}");
}

#[test]
fn predictor_error_shrinks_at_the_square_root_rate() {
    let t = 20;
    let (model, theta, ys) = hmm_record(t, 31);
    let exact = hmm_forward(&model, &theta, &ys[..t]).unwrap()[t].predictor[0];
    let rmse = |n: usize, base: u64| {
        let sq: f64 = (0..200u64)
            .map(|r| {
                let seed = StreamSeed(base + r);
                let mut c = init_cloud(&model, n, seed).unwrap();
                for y in &ys[..t] {
                    c = propagate(&model, &weight_cloud(&model, c, y, &theta).unwrap(), &theta, seed).unwrap();
                }
                let e = estimate(&c, |x| (*x == 0) as u8 as f64, EstimateMode::Predictor).unwrap();
                (e - exact).powi(2)
            })
            .sum();
        (sq / 200.0).sqrt()
    };
    let ratio = rmse(500, 0) / rmse(2000, 10_000);
    assert!((1.6..=2.5).contains(&ratio), "ratio {ratio}");
}

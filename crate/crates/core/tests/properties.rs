use paris_smc::models::{slam_observe, wrap_angle, HmmModel, LgssmModel, LgssmParams, SlamModel, SlamSpec, SvModel};
use paris_smc::oracle::hmm_forward;
use paris_smc::smc::propagate;
use paris_smc::{
    emission_grad, estimate, init_cloud, paris_update, rml_init, rml_step, smoothed_estimate, step_size,
    tangent_estimate, tangent_init, tangent_measure, tangent_step, weight_cloud, BackwardSamplerConfig,
    BackwardStatistics, EstimateMode, FnFunctional, ParameterVector, Purpose, RmlConfig, StateSpaceModel,
    StepSchedule, StreamSeed, UpdateRule,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn pv(v: Vec<f64>) -> ParameterVector {
    ParameterVector::new(v).unwrap()
}

/// Max of `q(x, x') / bound` over `pairs` draws of `(X_t, X_{t+1})`.
fn worst_density_ratio<M: StateSpaceModel>(model: &M, th: &[f64], seed: u64, pairs: usize) -> f64 {
    let mut rng = StreamSeed(seed).sequential(Purpose::Auxiliary);
    let bound = model.density_bound(th);
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let x = model.sample_initial(&mut rng);
        let x1 = model.sample_transition(th, k, &x, &mut rng);
        worst = worst.max(model.transition_density(th, k, &x, &x1) / bound);
    }
    worst
}

fn sv_theta() -> impl Strategy<Value = Vec<f64>> {
    (-0.95..0.95f64, 0.01..2.0f64, 0.1..3.0f64).prop_map(|(a, b, c)| vec![a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn transition_density_is_bounded(th in sv_theta(), phi in -0.95..0.95f64, s2 in 0.05..3.0f64,
                                     h in 0.01..0.99f64, seed in 0u64..1000) {
        let sv = SvModel::default();
        prop_assert!(worst_density_ratio(&sv, &th, seed, 100) <= 1.0);
        let lg = LgssmModel::new(0.5, 1.0, 1.0, LgssmParams::Both).unwrap();
        prop_assert!(worst_density_ratio(&lg, &[phi, s2], seed, 100) <= 1.0);
        let hmm = HmmModel::test_chain();
        prop_assert!(worst_density_ratio(&hmm, &[h], seed, 100) <= 1.0);
        let slam = SlamModel::new(SlamSpec::default_layout(4)).unwrap();
        let lt = slam.true_parameter();
        prop_assert!(worst_density_ratio(&slam, &lt, seed, 100) <= 1.0);
    }

    #[test]
    fn mode_of_the_transition_respects_the_bound(th in sv_theta(), x in -5.0..5.0f64) {
        let sv = SvModel::default();
        let bound = sv.density_bound(&th);
        let mode = th[0] * x;
        prop_assert!(sv.transition_density(&th, 0, &x, &mode) <= bound);
        let hmm = HmmModel::test_chain();
        let h = [th[0].abs().clamp(0.01, 0.99)];
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!(hmm.transition_density(&h, 0, &i, &j) <= hmm.density_bound(&h));
            }
        }
    }

    #[test]
    fn emission_gradient_is_density_times_log_gradient(th in sv_theta(), x in -3.0..3.0f64, y in -4.0..4.0f64) {
        let sv = SvModel::default();
        let theta = pv(th.clone());
        let g = sv.emission_density(&th, &x, &y);
        let mut log_grad = vec![0.0; 3];
        sv.add_grad_log_emission(&th, &x, &y, &mut log_grad).unwrap();
        let grad = emission_grad(&sv, &theta, &x, &y).unwrap();
        for (a, b) in grad.iter().zip(&log_grad) {
            let expect = g * b;
            prop_assert!((a - expect).abs() <= 1e-12 * expect.abs().max(f64::MIN_POSITIVE), "{a} vs {expect}");
        }
    }

    #[test]
    fn filter_estimate_of_one_is_one(n in 1usize..300, seed in 0u64..1000, y in -3.0..3.0f64) {
        let sv = SvModel::default();
        let theta = pv(vec![0.8, 0.1, 1.0]);
        let c = weight_cloud(&sv, init_cloud(&sv, n, StreamSeed(seed)).unwrap(), &y, &theta).unwrap();
        prop_assert_eq!(estimate(&c, |_| 1.0, EstimateMode::Filter).unwrap(), 1.0);
        let sum: f64 = c.weights().unwrap().iter().sum();
        prop_assert!((sum - c.weight_sum()).abs() <= 1e-12 * sum);
        let next = propagate(&sv, &c, &theta, StreamSeed(seed)).unwrap();
        prop_assert_eq!(next.len(), n);
        prop_assert_eq!(next.t(), 1);
    }

    #[test]
    fn tangent_measure_is_linear_and_shift_invariant(
        seed in 0u64..500, a in -3.0..3.0f64, b in -3.0..3.0f64, c in -100.0..100.0f64, steps in 1usize..8
    ) {
        let sv = SvModel::default();
        let theta = pv(vec![0.8, 0.1, 1.0]);
        let rule = UpdateRule::Paris(BackwardSamplerConfig::new(2));
        let mut s = tangent_init(&sv, 64, StreamSeed(seed)).unwrap();
        let mut rng = StreamSeed(seed).sequential(Purpose::Simulation);
        for _ in 0..steps {
            let y: f64 = rng.sample(StandardNormal);
            s = tangent_step(&sv, s, &y, &theta, &rule).unwrap();
        }
        let f = |x: &f64| x.sin();
        let g = |x: &f64| x * x;
        let mf = tangent_measure(&s, f);
        let mg = tangent_measure(&s, g);
        let combo = tangent_measure(&s, |x| a * f(x) + b * g(x));
        let shifted = tangent_measure(&s, |x| f(x) + c);
        let tau_max = s.stats().as_flat().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..3 {
            let lin = a * mf[k] + b * mg[k];
            let scale = (a.abs() * mf[k].abs() + b.abs() * mg[k].abs()).max(1e-300);
            prop_assert!((combo[k] - lin).abs() <= 1e-10 * scale.max(tau_max * 1e-3));
            // The constant cancels up to rounding in the centred pairing.
            prop_assert!((shifted[k] - mf[k]).abs() <= 1e-12 * tau_max.max(1.0) * (1.0 + c.abs()));
        }
        let est = tangent_estimate(&s);
        let n = est.atoms.len() as f64;
        for k in 0..3 {
            let total: f64 = est.atoms.iter().map(|(v, _)| v[k]).sum();
            prop_assert!(total.abs() <= 1e-10 * n * tau_max.max(f64::MIN_POSITIVE));
        }
        let mean = smoothed_estimate(s.stats());
        for k in 0..3 {
            let direct: f64 = s.stats().rows().map(|r| r[k]).sum::<f64>() / n;
            prop_assert!((s.tau_bar()[k] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            prop_assert!((mean[k] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn constant_increment_from_zero_statistics(n in 1usize..60, c in -5.0..5.0f64, seed in 0u64..1000, k in 1usize..6) {
        let hmm = HmmModel::test_chain();
        let theta = pv(vec![0.3]);
        let prev = weight_cloud(&hmm, init_cloud(&hmm, n, StreamSeed(seed)).unwrap(), &0, &theta).unwrap();
        let next = propagate(&hmm, &prev, &theta, StreamSeed(seed)).unwrap();
        let h = FnFunctional::new(2, move |_: &usize, _: &usize, out: &mut [f64]| {
            out[0] += c;
            out[1] -= c;
            Ok(())
        });
        let stats = BackwardStatistics::zeros(0, n, 2);
        let (s, _) = paris_update(&hmm, &stats, &prev, &next, &h, &theta, &BackwardSamplerConfig::new(k), StreamSeed(seed)).unwrap();
        for r in s.rows() {
            prop_assert!((r[0] - c).abs() <= 1e-12 * c.abs().max(1.0));
            prop_assert!((r[1] + c).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }

    #[test]
    fn exact_predictor_is_a_distribution(h in 0.01..0.99f64, ys in proptest::collection::vec(0usize..2, 0..40)) {
        let hmm = HmmModel::test_chain();
        for st in hmm_forward(&hmm, &pv(vec![h]), &ys).unwrap() {
            prop_assert!(st.predictor.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((st.predictor.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for row in &st.tangent {
                prop_assert!(row.iter().sum::<f64>().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn bearings_are_wrapped(seed in 0u64..1000, x in -40.0..40.0f64, y in -30.0..30.0f64, h in -20.0..20.0f64) {
        let spec = SlamSpec::default_layout(9);
        let mut rng = StreamSeed(seed).sequential(Purpose::Auxiliary);
        for o in slam_observe(&spec, &spec.landmarks, &[x, y, h], &mut rng) {
            prop_assert!(o.bearing > -std::f64::consts::PI && o.bearing <= std::f64::consts::PI);
        }
        let w = wrap_angle(h);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        prop_assert!(((h - w) / std::f64::consts::TAU - ((h - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn step_sizes_decrease(a in 0.001..10.0f64, kappa in 0.51..1.0f64, t in 1usize..100_000) {
        let s = StepSchedule::new(a, kappa).unwrap();
        let g = step_size(&s, t);
        prop_assert!(g > 0.0 && g <= a);
        prop_assert!(step_size(&s, t + 1) < g);
    }

    #[test]
    fn floor_above_the_likelihood_freezes_theta(seed in 0u64..500, steps in 1usize..20) {
        let sv = SvModel::default();
        let theta = pv(vec![0.5, 0.3, 2.0]);
        let cfg = RmlConfig { zeta3_floor: f64::MAX, ..Default::default() };
        let mut rng = StreamSeed(seed).sequential(Purpose::Simulation);
        let y0: f64 = rng.sample(StandardNormal);
        let mut s = rml_init(&sv, theta.clone(), 32, &y0, cfg, StreamSeed(seed)).unwrap();
        for _ in 0..steps {
            let y: f64 = rng.sample(StandardNormal);
            let (next, report) = rml_step(&sv, s, &y).unwrap();
            prop_assert!(report.skipped);
            prop_assert_eq!(next.theta(), &theta);
            s = next;
        }
    }

    #[test]
    fn projected_parameters_are_admissible(th in proptest::collection::vec(-10.0..10.0f64, 3)) {
        let sv = SvModel::default();
        let p = sv.project(&th);
        prop_assert!(sv.validate(&p).is_ok());
        let hmm = HmmModel::test_chain();
        let p = hmm.project(&th[..1]);
        prop_assert!(hmm.validate(&p).is_ok());
    }
}

//! Bootstrap particle filter.
//!
//! A [`ParticleCloud`] at time `t` holds predictor particles `ξ_t^i`. After
//! [`weight_cloud`] each particle carries the importance weight
//! `ω_t^i = g(ξ_t^i, y_t)` on the natural scale, and [`propagate`] draws the
//! next generation by multinomial selection followed by mutation through the
//! transition kernel. Selection happens at every step.

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_parameter, ParameterVector, StateSpaceModel};
use crate::rng::{Purpose, StreamSeed};

/// Weights below this are treated as exactly zero.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Parallel loops use chunks of at least this many particles.
pub(crate) const PAR_MIN_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud<S> {
    t: usize,
    particles: Vec<S>,
    weights: Option<Vec<f64>>,
    weight_sum: f64,
    ancestors: Option<Vec<usize>>,
}

impl<S> ParticleCloud<S> {
    /// Unweighted cloud at time `t`.
    pub fn from_particles(t: usize, particles: Vec<S>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Config("a particle cloud needs at least one particle".into()));
        }
        Ok(ParticleCloud {
            t,
            particles,
            weights: None,
            weight_sum: 0.0,
            ancestors: None,
        })
    }

    /// Cloud with explicit weights, for tests and exact-reference setups.
    pub fn with_weights(t: usize, particles: Vec<S>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != particles.len() {
            return Err(Error::Dimension("one weight per particle".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("weights must be finite and non-negative".into()));
        }
        let mut cloud = Self::from_particles(t, particles)?;
        let weights: Vec<f64> = weights.into_iter().map(|w| if w < WEIGHT_FLOOR { 0.0 } else { w }).collect();
        let sum = weights.iter().sum::<f64>();
        if sum <= 0.0 {
            return Err(Error::Collapsed { t });
        }
        cloud.weights = Some(weights);
        cloud.weight_sum = sum;
        Ok(cloud)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    /// `None` until the cloud has been weighted.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// Indices of the parents selected in the last [`propagate`].
    pub fn ancestors(&self) -> Option<&[usize]> {
        self.ancestors.as_deref()
    }

    pub(crate) fn require_weights(&self) -> Result<&[f64]> {
        self.weights.as_deref().ok_or(Error::Config(format!(
            "cloud at time {} has not been weighted",
            self.t
        )))
    }

    /// Drops the weights, returning the predictor cloud.
    pub fn unweighted(mut self) -> Self {
        self.weights = None;
        self.weight_sum = 0.0;
        self
    }
}

/// Categorical law with probabilities proportional to non-negative reals.
#[derive(Debug, Clone)]
pub struct CategoricalSampler {
    table: Option<WeightedAliasIndex<f64>>,
}

impl CategoricalSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::AllZeroWeights);
        }
        // The single-atom case stays allocation free and draws no randomness.
        if weights.len() == 1 {
            return if weights[0] > 0.0 {
                Ok(CategoricalSampler { table: None })
            } else {
                Err(Error::AllZeroWeights)
            };
        }
        let table = WeightedAliasIndex::new(weights.to_vec()).map_err(|_| Error::AllZeroWeights)?;
        Ok(CategoricalSampler { table: Some(table) })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.table {
            Some(t) => t.sample(rng),
            None => 0,
        }
    }
}

/// `count` i.i.d. draws.
pub fn sample_categorical<R: Rng + ?Sized>(sampler: &CategoricalSampler, rng: &mut R, count: usize) -> Vec<usize> {
    (0..count).map(|_| sampler.sample(rng)).collect()
}

/// `n` i.i.d. draws from the initial law.
pub fn init_cloud<M: StateSpaceModel>(model: &M, n: usize, seed: StreamSeed) -> Result<ParticleCloud<M::State>> {
    if n == 0 {
        return Err(Error::Config("N must be at least 1".into()));
    }
    let particles = (0..n)
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| model.sample_initial(&mut seed.substream(0, i as u64, Purpose::Initial)))
        .collect();
    ParticleCloud::from_particles(0, particles)
}

/// Sets `ω_i = g(ξ_i, y)`.
pub fn weight_cloud<M: StateSpaceModel>(
    model: &M,
    cloud: ParticleCloud<M::State>,
    y: &M::Obs,
    theta: &ParameterVector,
) -> Result<ParticleCloud<M::State>> {
    check_parameter(model, theta)?;
    Ok(weight_unchecked(model, cloud, y, theta))
        .and_then(|c| if c.weight_sum > 0.0 { Ok(c) } else { Err(Error::Collapsed { t: c.t }) })
}

pub(crate) fn weight_unchecked<M: StateSpaceModel>(
    model: &M,
    mut cloud: ParticleCloud<M::State>,
    y: &M::Obs,
    theta: &[f64],
) -> ParticleCloud<M::State> {
    let weights: Vec<f64> = cloud
        .particles
        .par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|x| {
            let w = model.emission_density(theta, x, y);
            if w < WEIGHT_FLOOR || !w.is_finite() {
                0.0
            } else {
                w
            }
        })
        .collect();
    cloud.weight_sum = weights.iter().sum();
    cloud.weights = Some(weights);
    cloud
}

/// Multinomial selection by weight, then mutation through `q(ξ^I, ·)`.
///
/// Particle `i` of the new cloud draws its parent and its move from the
/// substream `(seed, t, i)`.
pub fn propagate<M: StateSpaceModel>(
    model: &M,
    cloud: &ParticleCloud<M::State>,
    theta: &ParameterVector,
    seed: StreamSeed,
) -> Result<ParticleCloud<M::State>> {
    check_parameter(model, theta)?;
    propagate_unchecked(model, cloud, theta, seed)
}

pub(crate) fn propagate_unchecked<M: StateSpaceModel>(
    model: &M,
    cloud: &ParticleCloud<M::State>,
    theta: &[f64],
    seed: StreamSeed,
) -> Result<ParticleCloud<M::State>> {
    let weights = cloud.require_weights()?;
    let sampler = CategoricalSampler::new(weights).map_err(|_| Error::Collapsed { t: cloud.t })?;
    let t = cloud.t;
    let (ancestors, particles): (Vec<usize>, Vec<M::State>) = (0..cloud.len())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| {
            let mut rng = seed.substream(t as u64, i as u64, Purpose::Mutation);
            let parent = sampler.sample(&mut rng);
            let child = model.sample_transition(theta, t, &cloud.particles[parent], &mut rng);
            (parent, child)
        })
        .unzip();
    Ok(ParticleCloud {
        t: t + 1,
        particles,
        weights: None,
        weight_sum: 0.0,
        ancestors: Some(ancestors),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    /// `N⁻¹ Σ f(ξ_i)`.
    Predictor,
    /// `Σ (ω_i / Ω) f(ξ_i)`.
    Filter,
}

pub fn estimate<S, F: Fn(&S) -> f64>(cloud: &ParticleCloud<S>, f: F, mode: EstimateMode) -> Result<f64> {
    match mode {
        EstimateMode::Predictor => {
            Ok(cloud.particles.iter().map(&f).sum::<f64>() / cloud.len() as f64)
        }
        EstimateMode::Filter => {
            let w = cloud.require_weights()?;
            if cloud.weight_sum <= 0.0 {
                return Err(Error::Collapsed { t: cloud.t });
            }
            let acc: f64 = cloud.particles.iter().zip(w).map(|(x, w)| w * f(x)).sum();
            Ok(acc / cloud.weight_sum)
        }
    }
}

/// Writes `t, i, weight, state coords` rows; weight is empty when unset.
pub fn write_cloud_csv<M: StateSpaceModel, W: std::io::Write>(
    model: &M,
    cloud: &ParticleCloud<M::State>,
    header: bool,
    mut out: W,
) -> std::io::Result<()> {
    if header {
        let k = cloud.particles.first().map_or(0, |x| model.state_coords(x).len());
        let coords: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        writeln!(out, "t,i,weight,{}", coords.join(","))?;
    }
    for (i, x) in cloud.particles.iter().enumerate() {
        let w = cloud.weights.as_ref().map(|w| format!("{:?}", w[i])).unwrap_or_default();
        let coords: Vec<String> = model.state_coords(x).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{},{i},{w},{}", cloud.t, coords.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{HmmModel, LgssmModel, LgssmParams, SvModel};
    use crate::oracle::{hmm_forward, kalman_filter};

    fn theta(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn single_particle_cloud() {
        let m = SvModel::default();
        let th = theta(&[0.8, 0.1, 1.0]);
        let c = init_cloud(&m, 1, StreamSeed(1)).unwrap();
        let c = weight_cloud(&m, c, &0.3, &th).unwrap();
        let next = propagate(&m, &c, &th, StreamSeed(1)).unwrap();
        assert_eq!(next.ancestors().unwrap(), &[0]);
        assert_eq!(next.len(), 1);
        let x = c.particles()[0];
        for mode in [EstimateMode::Predictor, EstimateMode::Filter] {
            assert_eq!(estimate(&c, |v| v * v, mode).unwrap(), x * x);
        }
    }

    #[test]
    fn point_mass_initial_law() {
        let m = HmmModel::parameter_free(
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![0.0, 1.0],
        )
        .unwrap();
        let c = init_cloud(&m, 100, StreamSeed(2)).unwrap();
        assert!(c.particles().iter().all(|&x| x == 1));
    }

    #[test]
    fn stationary_initial_mean() {
        let m = LgssmModel::new(0.9, 1.0, 1.0, LgssmParams::Phi).unwrap();
        let n = 100_000;
        let c = init_cloud(&m, n, StreamSeed(3)).unwrap();
        let mean = estimate(&c, |x| *x, EstimateMode::Predictor).unwrap();
        let se = (m.init_var / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "{mean} vs se {se}");
    }

    #[test]
    fn hmm_weights_are_emission_lookups() {
        let m = HmmModel::test_chain();
        let th = theta(&[0.3]);
        let c = ParticleCloud::from_particles(0, vec![0, 1, 2, 1]).unwrap();
        let c = weight_cloud(&m, c, &1, &th).unwrap();
        let g = m.emission_matrix(&th);
        assert_eq!(c.weights().unwrap(), &[g[0][1], g[1][1], g[2][1], g[1][1]]);
        assert_eq!(estimate(&c, |_| 1.0, EstimateMode::Filter).unwrap(), 1.0);
    }

    #[test]
    fn identical_particles_have_equal_weights() {
        let m = SvModel::default();
        let c = ParticleCloud::from_particles(0, vec![0.4; 5]).unwrap();
        let c = weight_cloud(&m, c, &1.1, &theta(&[0.8, 0.1, 1.0])).unwrap();
        let w = c.weights().unwrap();
        assert!(w.iter().all(|v| *v == w[0]));
    }

    #[test]
    fn sv_weights_match_direct_density_bitwise() {
        let m = SvModel::default();
        let th = theta(&[0.8, 0.1, 1.0]);
        let c = init_cloud(&m, 200, StreamSeed(4)).unwrap();
        let y = -0.7;
        let c = weight_cloud(&m, c, &y, &th).unwrap();
        for (x, w) in c.particles().iter().zip(c.weights().unwrap()) {
            let var = th[2] * x.exp();
            let direct = (-0.5 * y * y / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            assert_eq!(w.to_bits(), direct.to_bits());
        }
    }

    #[test]
    fn collapse_is_reported() {
        let m = SvModel::default();
        let c = ParticleCloud::from_particles(4, vec![-700.0; 3]).unwrap();
        let err = weight_cloud(&m, c, &1.0, &theta(&[0.8, 0.1, 1.0])).unwrap_err();
        assert_eq!(err, Error::Collapsed { t: 4 });
    }

    #[test]
    fn categorical_edge_cases() {
        let mut rng = StreamSeed(5).sequential(Purpose::Auxiliary);
        let s = CategoricalSampler::new(&[1.0, 0.0, 0.0]).unwrap();
        assert!(sample_categorical(&s, &mut rng, 1000).iter().all(|&i| i == 0));
        assert_eq!(CategoricalSampler::new(&[0.0, 0.0]).unwrap_err(), Error::AllZeroWeights);
        let fair = CategoricalSampler::new(&[1.0, 1.0]).unwrap();
        let zeros = sample_categorical(&fair, &mut rng, 100_000).iter().filter(|&&i| i == 0).count();
        let freq = zeros as f64 / 1e5;
        assert!((0.49..=0.51).contains(&freq), "{freq}");
    }

    #[test]
    fn categorical_goodness_of_fit() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = StreamSeed(6).sequential(Purpose::Auxiliary);
        let s = CategoricalSampler::new(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let n = 100_000;
        let mut counts = [0usize; 4];
        for i in sample_categorical(&s, &mut rng, n) {
            counts[i] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let e = n as f64 * (i + 1) as f64 / 10.0;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn concentrated_kernel_moves_to_successor() {
        // Rows put all mass on `i + 1 mod 3` up to a sliver.
        let eps = 1e-12;
        let q = vec![
            vec![eps, 1.0 - 2.0 * eps, eps],
            vec![eps, eps, 1.0 - 2.0 * eps],
            vec![1.0 - 2.0 * eps, eps, eps],
        ];
        let m = HmmModel::parameter_free(q, vec![vec![1.0]; 3], vec![1.0 / 3.0; 3]).unwrap();
        let th = theta(&[0.0]);
        let c = init_cloud(&m, 500, StreamSeed(7)).unwrap();
        let c = weight_cloud(&m, c, &0, &th).unwrap();
        let next = propagate(&m, &c, &th, StreamSeed(7)).unwrap();
        for (child, &a) in next.particles().iter().zip(next.ancestors().unwrap()) {
            assert_eq!(*child, (c.particles()[a] + 1) % 3);
        }
    }

    #[test]
    fn lgssm_predictor_mean_matches_kalman() {
        let m = LgssmModel::new(0.8, 0.5, 1.0, LgssmParams::Phi).unwrap();
        let th = theta(&[0.8]);
        let y0 = 1.3;
        let n = 100_000;
        let c = init_cloud(&m, n, StreamSeed(8)).unwrap();
        let c = weight_cloud(&m, c, &y0, &th).unwrap();
        let next = propagate(&m, &c, &th, StreamSeed(8)).unwrap();
        let mean = estimate(&next, |x| *x, EstimateMode::Predictor).unwrap();
        let kf = kalman_filter(&m, &th, &[y0]).unwrap();
        let (pm, pv) = (kf[1].pred_mean, kf[1].pred_var);
        let se = (pv / n as f64).sqrt();
        assert!((mean - pm).abs() < 3.0 * se, "{mean} vs {pm} (se {se})");
    }

    #[test]
    fn hmm_predictor_indicator_matches_forward_recursion() {
        let m = HmmModel::test_chain();
        let th = theta(&[0.3]);
        let ys = [0usize, 1, 1, 0];
        let exact = hmm_forward(&m, &th, &ys).unwrap();
        let n = 20_000;
        let mut c = init_cloud(&m, n, StreamSeed(9)).unwrap();
        for y in &ys {
            let w = weight_cloud(&m, c, y, &th).unwrap();
            c = propagate(&m, &w, &th, StreamSeed(9)).unwrap();
        }
        let target = exact[ys.len()].predictor[2];
        let est = estimate(&c, |&x| (x == 2) as u8 as f64, EstimateMode::Predictor).unwrap();
        let se = (target * (1.0 - target) / n as f64).sqrt();
        assert!((est - target).abs() < 3.0 * se, "{est} vs {target}");
    }

    #[test]
    fn filter_pass_is_reproducible_across_thread_counts() {
        let m = SvModel::default();
        let th = theta(&[0.8, 0.1, 1.0]);
        let ys = [0.1, -0.5, 1.2, 0.3, -2.0];
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut c = init_cloud(&m, 3000, StreamSeed(10)).unwrap();
                for y in &ys {
                    let w = weight_cloud(&m, c, y, &th).unwrap();
                    c = propagate(&m, &w, &th, StreamSeed(10)).unwrap();
                }
                c
            })
        };
        assert_eq!(run(1), run(4));
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrajectoryFormat;
use crate::error::{Error, Result};
use crate::model::StateSpaceModel;

/// Declarative description of a finite-state HMM with an affine
/// parameterization
/// `Q(θ) = Q₀ + Σ_k θ_k A_k` and `G(θ) = G₀ + Σ_k θ_k B_k`.
///
/// Every direction matrix has rows summing to zero, so `Q(θ)` and `G(θ)`
/// stay row-stochastic for all θ; admissibility is positivity of `Q(θ)` and
/// non-negativity of `G(θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmSpec {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    /// `transition_dirs[k]` is `A_k`.
    pub transition_dirs: Vec<Vec<Vec<f64>>>,
    /// `emission_dirs[k]` is `B_k`.
    pub emission_dirs: Vec<Vec<Vec<f64>>>,
    /// Projection box, one `(lo, hi)` per parameter.
    pub bounds: Vec<(f64, f64)>,
}

/// Validated finite-state model with row-major flattened matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "HmmSpec", into = "HmmSpec")]
pub struct HmmModel {
    spec: HmmSpec,
    m: usize,
    symbols: usize,
    q0: Vec<f64>,
    g0: Vec<f64>,
    q_dirs: Vec<Vec<f64>>,
    g_dirs: Vec<Vec<f64>>,
}

impl TryFrom<HmmSpec> for HmmModel {
    type Error = Error;

    fn try_from(spec: HmmSpec) -> Result<Self> {
        HmmModel::new(spec)
    }
}

impl From<HmmModel> for HmmSpec {
    fn from(m: HmmModel) -> HmmSpec {
        m.spec
    }
}

fn flatten(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<Vec<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what}: ragged rows")));
    }
    Ok(rows.iter().flatten().copied().collect())
}

fn check_rows(rows: &[Vec<f64>], target: f64, what: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        let s: f64 = r.iter().sum();
        if (s - target).abs() > 1e-12 {
            return Err(Error::Config(format!("{what}: row {i} sums to {s}, expected {target}")));
        }
    }
    Ok(())
}

impl HmmModel {
    pub fn new(spec: HmmSpec) -> Result<Self> {
        let m = spec.initial.len();
        if m == 0 || spec.transition.len() != m || spec.emission.len() != m {
            return Err(Error::Dimension("state count mismatch".into()));
        }
        let symbols = spec.emission[0].len();
        if symbols == 0 {
            return Err(Error::Dimension("no observation symbols".into()));
        }
        let d = spec.bounds.len();
        if spec.transition_dirs.len() != d || spec.emission_dirs.len() != d {
            return Err(Error::Dimension(format!("expected {d} direction matrices")));
        }
        if (spec.initial.iter().sum::<f64>() - 1.0).abs() > 1e-12
            || spec.initial.iter().any(|p| *p < 0.0)
        {
            return Err(Error::Config("initial law is not a probability vector".into()));
        }
        check_rows(&spec.transition, 1.0, "transition")?;
        check_rows(&spec.emission, 1.0, "emission")?;
        for a in &spec.transition_dirs {
            if a.len() != m {
                return Err(Error::Dimension("transition direction".into()));
            }
            check_rows(a, 0.0, "transition direction")?;
        }
        for b in &spec.emission_dirs {
            if b.len() != m {
                return Err(Error::Dimension("emission direction".into()));
            }
            check_rows(b, 0.0, "emission direction")?;
        }
        let q0 = flatten(&spec.transition, m, "transition")?;
        let g0 = flatten(&spec.emission, symbols, "emission")?;
        let q_dirs = spec
            .transition_dirs
            .iter()
            .map(|a| flatten(a, m, "transition direction"))
            .collect::<Result<Vec<_>>>()?;
        let g_dirs = spec
            .emission_dirs
            .iter()
            .map(|b| flatten(b, symbols, "emission direction"))
            .collect::<Result<Vec<_>>>()?;
        Ok(HmmModel {
            spec,
            m,
            symbols,
            q0,
            g0,
            q_dirs,
            g_dirs,
        })
    }

    /// Three-state strongly mixing chain with one parameter `θ ∈ (0, 1)`
    /// blending both matrices towards uniform:
    /// `Q(θ) = (1 − θ) P + θ U₃`, `G(θ) = (1 − θ) E + θ U₂`.
    pub fn test_chain() -> Self {
        let p = [[0.8, 0.1, 0.1], [0.15, 0.7, 0.15], [0.1, 0.2, 0.7]];
        let e = [[0.9, 0.1], [0.5, 0.5], [0.15, 0.85]];
        let a: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| 1.0 / 3.0 - v).collect()).collect();
        let b: Vec<Vec<f64>> = e.iter().map(|r| r.iter().map(|v| 0.5 - v).collect()).collect();
        HmmModel::new(HmmSpec {
            initial: vec![1.0 / 3.0; 3],
            transition: p.iter().map(|r| r.to_vec()).collect(),
            emission: e.iter().map(|r| r.to_vec()).collect(),
            transition_dirs: vec![a],
            emission_dirs: vec![b],
            bounds: vec![(0.01, 0.99)],
        })
        .expect("test chain is valid")
    }

    /// Nominal parameter of [`HmmModel::test_chain`].
    pub const TEST_CHAIN_THETA: f64 = 0.3;

    /// A chain whose matrices do not depend on its single parameter.
    pub fn parameter_free(transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let m = initial.len();
        let symbols = emission.first().map_or(0, |r| r.len());
        HmmModel::new(HmmSpec {
            initial,
            transition_dirs: vec![vec![vec![0.0; m]; m]],
            emission_dirs: vec![vec![vec![0.0; symbols]; m]],
            transition,
            emission,
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY)],
        })
    }

    pub fn spec(&self) -> &HmmSpec {
        &self.spec
    }

    pub fn states(&self) -> usize {
        self.m
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn initial(&self) -> &[f64] {
        &self.spec.initial
    }

    #[inline]
    pub fn q(&self, theta: &[f64], i: usize, j: usize) -> f64 {
        let idx = i * self.m + j;
        let mut v = self.q0[idx];
        for (a, th) in self.q_dirs.iter().zip(theta) {
            v += th * a[idx];
        }
        v
    }

    #[inline]
    pub fn g(&self, theta: &[f64], i: usize, y: usize) -> f64 {
        let idx = i * self.symbols + y;
        let mut v = self.g0[idx];
        for (b, th) in self.g_dirs.iter().zip(theta) {
            v += th * b[idx];
        }
        v
    }

    /// `∂Q(i, j) / ∂θ_k`.
    #[inline]
    pub fn dq(&self, k: usize, i: usize, j: usize) -> f64 {
        self.q_dirs[k][i * self.m + j]
    }

    /// `∂G(i, y) / ∂θ_k`.
    #[inline]
    pub fn dg(&self, k: usize, i: usize, y: usize) -> f64 {
        self.g_dirs[k][i * self.symbols + y]
    }

    pub fn transition_matrix(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| (0..self.m).map(|j| self.q(theta, i, j)).collect()).collect()
    }

    pub fn emission_matrix(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| (0..self.symbols).map(|y| self.g(theta, i, y)).collect()).collect()
    }
}

fn sample_row<R: Rng + ?Sized>(n: usize, p: impl Fn(usize) -> f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for j in 0..n {
        acc += p(j);
        if u < acc {
            return j;
        }
    }
    // Rounding left `acc` just below 1: return the last state with mass.
    (0..n).rev().find(|&j| p(j) > 0.0).unwrap_or(n - 1)
}

impl StateSpaceModel for HmmModel {
    type State = usize;
    type Obs = usize;

    fn param_dim(&self) -> usize {
        self.spec.bounds.len()
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        for i in 0..self.m {
            for j in 0..self.m {
                let v = self.q(theta, i, j);
                if !(v > 0.0) {
                    return Err(Error::InadmissibleParameter(format!("Q[{i}][{j}] = {v} is not positive")));
                }
            }
            for y in 0..self.symbols {
                let v = self.g(theta, i, y);
                if !(v >= 0.0) {
                    return Err(Error::InadmissibleParameter(format!("G[{i}][{y}] = {v} is negative")));
                }
            }
        }
        Ok(())
    }

    fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.spec.bounds)
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_row(self.m, |j| self.spec.initial[j], rng)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, theta: &[f64], _t: usize, x: &usize, rng: &mut R) -> usize {
        sample_row(self.m, |j| self.q(theta, *x, j), rng)
    }

    fn transition_density(&self, theta: &[f64], _t: usize, x: &usize, x_next: &usize) -> f64 {
        self.q(theta, *x, *x_next)
    }

    fn density_bound(&self, theta: &[f64]) -> f64 {
        (0..self.m * self.m)
            .map(|idx| self.q(theta, idx / self.m, idx % self.m))
            .fold(0.0, f64::max)
    }

    fn emission_density(&self, theta: &[f64], x: &usize, y: &usize) -> f64 {
        self.g(theta, *x, *y)
    }

    fn sample_emission<R: Rng + ?Sized>(&self, theta: &[f64], x: &usize, rng: &mut R) -> usize {
        sample_row(self.symbols, |y| self.g(theta, *x, y), rng)
    }

    fn add_grad_log_emission(&self, theta: &[f64], x: &usize, y: &usize, out: &mut [f64]) -> Result<()> {
        let g = self.g(theta, *x, *y);
        if g <= 0.0 {
            return Err(Error::ZeroDensity("emission"));
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o += self.dg(k, *x, *y) / g;
        }
        Ok(())
    }

    fn add_grad_log_transition(
        &self,
        theta: &[f64],
        _t: usize,
        x: &usize,
        x_next: &usize,
        out: &mut [f64],
    ) -> Result<()> {
        let q = self.q(theta, *x, *x_next);
        if q <= 0.0 {
            return Err(Error::ZeroDensity("transition"));
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o += self.dq(k, *x, *x_next) / q;
        }
        Ok(())
    }

    fn state_coords(&self, x: &usize) -> Vec<f64> {
        vec![*x as f64]
    }
}

impl TrajectoryFormat for HmmModel {
    fn state_fields(&self) -> Vec<String> {
        vec!["state".into()]
    }

    fn observation_fields(&self) -> Vec<String> {
        vec!["symbol".into()]
    }

    fn observation_records(&self, y: &usize) -> Vec<Vec<f64>> {
        vec![vec![*y as f64]]
    }
}

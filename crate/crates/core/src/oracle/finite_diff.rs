/// Default step for central first differences in double precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function.
pub fn finite_diff<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64], step: f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            x[k] = theta[k] + step;
            let up = f(&x);
            x[k] = theta[k] - step;
            let down = f(&x);
            x[k] = theta[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Central-difference Jacobian; entry `[k][i]` is `∂f_i / ∂θ_k`.
pub fn finite_diff_vec<F: Fn(&[f64]) -> Vec<f64>>(f: F, theta: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            x[k] = theta[k] + step;
            let up = f(&x);
            x[k] = theta[k] - step;
            let down = f(&x);
            x[k] = theta[k];
            up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * step)).collect()
        })
        .collect()
}

//! Signed distance to volume density via the Laplace CDF:
//! `sigma(d) = (1/beta) * Psi_beta(-d)` where `Psi` is the CDF of a
//! zero-mean Laplace distribution with scale `beta`.

/// Density at signed distance `d` with scale `beta > 0`.
pub fn sdf_to_density(d: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    if d >= 0.0 {
        0.5 / beta * (-d / beta).exp()
    } else {
        (1.0 - 0.5 * (d / beta).exp()) / beta
    }
}

/// (sigma, d sigma / d d, d sigma / d beta).
pub fn sdf_to_density_grad(d: f64, beta: f64) -> (f64, f64, f64) {
    if d >= 0.0 {
        let e = (-d / beta).exp();
        let sigma = 0.5 / beta * e;
        let dsdd = -sigma / beta;
        let dsdb = sigma * (d / beta - 1.0) / beta;
        (sigma, dsdd, dsdb)
    } else {
        let e = (d / beta).exp();
        let sigma = (1.0 - 0.5 * e) / beta;
        let dsdd = -0.5 * e / (beta * beta);
        let dsdb = -sigma / beta + 0.5 * d * e / (beta * beta * beta);
        (sigma, dsdd, dsdb)
    }
}

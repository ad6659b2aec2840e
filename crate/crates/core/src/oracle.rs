//! Closed-form reference quantities for the quadratic model and generic
//! numerical cross-checks (finite-difference tangent oracle, Rao-Blackwell
//! checker, stationary-moment targets) used by tests and acceptance runs.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayView3};

use crate::dynamics::{euler_ips_step_with_noise, euler_tangent_step, RngStream};
use crate::error::{Error, Result};
use crate::estimators::{averaged_increment, particlewise_increment};
use crate::models::ModelSpec;

/// True parameters of the quadratic confinement + interaction model.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticTruth {
    pub theta1: f64,
    pub theta2: f64,
    pub sigma: f64,
}

impl QuadraticTruth {
    pub fn new(theta1: f64, theta2: f64, sigma: f64) -> Result<Self> {
        let alpha0 = theta1 + theta2;
        if theta1 <= 0.0 || alpha0 <= 0.0 {
            return Err(Error::Usage(
                "well-posedness requires theta1 > 0 and theta1 + theta2 > 0".into(),
            ));
        }
        Ok(QuadraticTruth { theta1, theta2, sigma })
    }

    pub fn alpha0(&self) -> f64 {
        self.theta1 + self.theta2
    }
}

/// Result of a numerical cross-check.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub computed: f64,
    pub reference: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

impl OracleReport {
    pub fn new(name: &str, computed: f64, reference: f64) -> Self {
        let abs_error = (computed - reference).abs();
        let scale = reference.abs().max(1e-300);
        OracleReport {
            name: name.to_string(),
            computed,
            reference,
            abs_error,
            rel_error: abs_error / scale,
        }
    }
}

/// Mean-field objective (alpha - alpha0)^2 / (4 alpha0); identifies only
/// the sum alpha = theta1 + theta2.
pub fn mf_objective_quadratic(theta: &[f64], truth: &QuadraticTruth) -> f64 {
    let alpha = theta[0] + theta[1];
    let alpha0 = truth.alpha0();
    (alpha - alpha0).powi(2) / (4.0 * alpha0)
}

/// Finite-N surrogate objective; exactly independent of M.
pub fn finite_n_objective_quadratic(theta: &[f64], truth: &QuadraticTruth, n: usize) -> f64 {
    assert!(n >= 1);
    let alpha = theta[0] + theta[1];
    let alpha0 = truth.alpha0();
    let nf = n as f64;
    let denom = nf * truth.theta1 + truth.theta2;
    let alpha_star = nf * truth.theta1 * alpha0 / denom;
    denom / (4.0 * nf * alpha0 * truth.theta1) * (alpha - alpha_star).powi(2)
        + (nf - 1.0) * truth.theta2.powi(2) / (4.0 * nf * denom)
}

/// Pseudo-true minimizers of the finite-N surrogate.
#[derive(Debug, Clone, Copy)]
pub struct PseudoTargets {
    pub alpha_star: f64,
    pub theta1_star: f64,
    pub theta2_star: f64,
}

pub fn pseudo_targets(truth: &QuadraticTruth, n: usize) -> PseudoTargets {
    assert!(n >= 1);
    let nf = n as f64;
    let alpha0 = truth.alpha0();
    let denom = nf * truth.theta1 + truth.theta2;
    let alpha_star = nf * truth.theta1 * alpha0 / denom;
    PseudoTargets {
        alpha_star,
        theta1_star: alpha_star - truth.theta2,
        theta2_star: alpha_star - truth.theta1,
    }
}

/// Continuous-time stationary moments of the finite-N system:
/// (Var(x^{i,N}), Cov(x^{i,N}, xbar^N)).
pub fn stationary_moments_quadratic(truth: &QuadraticTruth, n: usize) -> (f64, f64) {
    assert!(n >= 1);
    let nf = n as f64;
    let s2 = truth.sigma * truth.sigma;
    let c_n = s2 / (2.0 * nf * truth.theta1);
    let v_n = c_n + (nf - 1.0) / nf * s2 / (2.0 * truth.alpha0());
    (v_n, c_n)
}

/// Exact stationary variance of the Euler-discretized OU recursion
/// x' = (1 - a dt) x + noise, noise variance `noise_var * dt` per step.
pub fn discrete_ou_variance(a: f64, noise_var: f64, dt: f64) -> f64 {
    let rho = 1.0 - a * dt;
    assert!(rho.abs() < 1.0, "discretized OU recursion is unstable");
    noise_var * dt / (1.0 - rho * rho)
}

/// dt-corrected stationary moments of the Euler-discretized finite-N
/// quadratic system. The mean and the deviation-from-mean components are
/// driven by uncorrelated Gaussian increments, so the discrete variances add
/// just as the continuous ones do.
pub fn discrete_stationary_moments_quadratic(
    truth: &QuadraticTruth,
    n: usize,
    dt: f64,
) -> (f64, f64) {
    let nf = n as f64;
    let s2 = truth.sigma * truth.sigma;
    let var_mean = discrete_ou_variance(truth.theta1, s2 / nf, dt);
    let var_dev = discrete_ou_variance(truth.alpha0(), (nf - 1.0) / nf * s2, dt);
    (var_mean + var_dev, var_mean)
}

/// Integrate the tangent system alongside the virtual ensemble and compare
/// against central finite differences of position trajectories in theta,
/// using common random numbers. Reports the max relative error over
/// particles, parameters, and coordinates.
///
/// Torus wrap flags are disabled internally: the kernels are periodic, so
/// the unwrapped dynamics are identical, while finite differences of
/// wrapped positions would jump across the branch cut.
#[allow(clippy::too_many_arguments)]
pub fn fd_tangent_check(
    model: &ModelSpec,
    theta: ArrayView1<f64>,
    m: usize,
    dt: f64,
    steps: usize,
    epsilon: f64,
    seed: u64,
) -> Result<OracleReport> {
    if epsilon <= 0.0 || 1.0 + epsilon == 1.0 {
        return Err(Error::Usage("finite-difference step underflows".into()));
    }
    let mut flat = model.clone();
    flat.wrap = vec![false; model.d];

    let mut rng = RngStream::new(seed, 0);
    let x0 = rng.normal_matrix(m, model.d);
    let noises: Vec<Array2<f64>> = (0..steps).map(|_| rng.normal_matrix(m, model.d)).collect();

    let run = |th: ArrayView1<f64>| -> Array2<f64> {
        let mut ens = x0.clone();
        for noise in &noises {
            ens = euler_ips_step_with_noise(&flat, th, ens.view(), dt, noise.view());
        }
        ens
    };

    let mut ens = x0.clone();
    let mut tangent = Array3::zeros((m, model.p, model.d));
    for noise in &noises {
        let next_tangent = euler_tangent_step(&flat, theta, ens.view(), tangent.view(), dt);
        ens = euler_ips_step_with_noise(&flat, theta, ens.view(), dt, noise.view());
        tangent = next_tangent;
    }

    let mut max_rel = 0.0f64;
    for l in 0..model.p {
        let mut tp = theta.to_owned();
        let mut tm = theta.to_owned();
        tp[l] += epsilon;
        tm[l] -= epsilon;
        let xp = run(tp.view());
        let xm = run(tm.view());
        for i in 0..m {
            for c in 0..model.d {
                let fd = (xp[[i, c]] - xm[[i, c]]) / (2.0 * epsilon);
                let got = tangent[[i, l, c]];
                let scale = fd.abs().max(got.abs()).max(1e-8);
                max_rel = max_rel.max((got - fd).abs() / scale);
            }
        }
    }
    Ok(OracleReport::new(
        &format!("fd_tangent_max_rel_error[{}]", model.name),
        max_rel,
        0.0,
    ))
}

/// Relative discrepancy between the averaged increment and the exhaustive
/// (j, k)-mean of particlewise increments on the same state.
#[allow(clippy::too_many_arguments)]
pub fn rao_blackwell_check(
    model: &ModelSpec,
    theta: ArrayView1<f64>,
    x_obs: ArrayView1<f64>,
    dx_obs: ArrayView1<f64>,
    hat: ArrayView2<f64>,
    hat_tangent: ArrayView3<f64>,
    tilde: ArrayView2<f64>,
    dt: f64,
) -> Result<OracleReport> {
    let m = hat.nrows();
    let avg = averaged_increment(model, theta, x_obs, dx_obs, hat, hat_tangent, tilde, dt, 1.0)?;
    let mut mean = ndarray::Array1::<f64>::zeros(model.p);
    for j in 0..m {
        for k in 0..m {
            mean += &particlewise_increment(
                model, theta, x_obs, dx_obs, hat, hat_tangent, tilde, j, k, dt, 1.0,
            )?;
        }
    }
    mean /= (m * m) as f64;
    let num = (&avg - &mean).iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = avg.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    Ok(OracleReport::new(
        &format!("rao_blackwell_rel_discrepancy[{}]", model.name),
        num / den,
        0.0,
    ))
}

/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone, Default)]
pub struct OnlineMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl OnlineMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// (theta, x_obs, dx_obs, hat ensemble, hat tangent, tilde ensemble).
pub type CheckState = (
    ndarray::Array1<f64>,
    ndarray::Array1<f64>,
    ndarray::Array1<f64>,
    Array2<f64>,
    Array3<f64>,
    Array2<f64>,
);

/// Random state generator shared by Rao-Blackwell style checks.
pub fn random_check_state(model: &ModelSpec, m: usize, rng: &mut RngStream) -> CheckState {
    let theta = ndarray::Array1::from_shape_fn(model.p, |_| rng.uniform(0.1, 2.0));
    let x_obs = ndarray::Array1::from_shape_fn(model.d, |_| rng.uniform(-1.5, 1.5));
    let dx_obs = ndarray::Array1::from_shape_fn(model.d, |_| rng.uniform(-0.3, 0.3));
    let hat = Array2::from_shape_fn((m, model.d), |_| rng.uniform(-1.5, 1.5));
    let tangent = Array3::from_shape_fn((m, model.p, model.d), |_| rng.uniform(-1.0, 1.0));
    let tilde = Array2::from_shape_fn((m, model.d), |_| rng.uniform(-1.5, 1.5));
    (theta, x_obs, dx_obs, hat, tangent, tilde)
}

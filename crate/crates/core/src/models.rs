//! Drift kernels for the supported interacting-particle models.
//!
//! Each model is a pair-drift `b(theta, x, y)` together with its analytic
//! Jacobians in `theta`, `x`, and `y`, a constant diffusion matrix, and an
//! inner-product weight used by the parameter updates. The mean-field drift
//! is always the ensemble average of the pair drift.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// How the update's inner-product weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// W = (sigma sigma^T)^{-1}; requires an invertible diffusion matrix.
    Likelihood,
    /// W = I; used for degenerate diffusions where the likelihood weight
    /// does not exist.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    Quadratic,
    FitzHughNagumo,
    Kuramoto,
}

/// A model specification: dimensions, diffusion, update weight, state-space
/// geometry, and the pair-drift kernel with its derivatives.
///
/// Immutable after construction; all methods are pure.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    /// State dimension.
    pub d: usize,
    /// Parameter dimension.
    pub p: usize,
    /// Constant d x d diffusion matrix (may be singular).
    pub sigma: Array2<f64>,
    /// Symmetric PSD d x d weight W used in gradient updates.
    pub weight: Array2<f64>,
    /// Per-coordinate torus wrap flags (true = wrap into [-pi, pi)).
    pub wrap: Vec<bool>,
    kernel: Kernel,
}

impl ModelSpec {
    /// One-dimensional model with quadratic confinement and quadratic
    /// interaction: b = -theta_1 x - theta_2 (x - y).
    pub fn quadratic(sigma: f64, weight_mode: WeightMode) -> Result<Self> {
        let sigma_mat = Array2::from_elem((1, 1), sigma);
        let weight = weight_matrix(&sigma_mat, weight_mode)?;
        Ok(ModelSpec {
            name: "quadratic".into(),
            d: 1,
            p: 2,
            sigma: sigma_mat,
            weight,
            wrap: vec![false],
            kernel: Kernel::Quadratic,
        })
    }

    /// Stochastic FitzHugh-Nagumo model, state (voltage, recovery).
    /// Noise acts on the voltage only, so the diffusion is singular and the
    /// weight defaults to the identity.
    pub fn fitzhugh_nagumo(sigma: f64, weight_mode: WeightMode) -> Result<Self> {
        let mut sigma_mat = Array2::zeros((2, 2));
        sigma_mat[[0, 0]] = sigma;
        let weight = weight_matrix(&sigma_mat, weight_mode)?;
        Ok(ModelSpec {
            name: "fitzhugh-nagumo".into(),
            d: 2,
            p: 4,
            sigma: sigma_mat,
            weight,
            wrap: vec![false, false],
            kernel: Kernel::FitzHughNagumo,
        })
    }

    /// Stochastic Kuramoto model on the one-dimensional torus:
    /// b = -theta sin(x - y).
    pub fn kuramoto(sigma: f64, weight_mode: WeightMode) -> Result<Self> {
        let sigma_mat = Array2::from_elem((1, 1), sigma);
        let weight = weight_matrix(&sigma_mat, weight_mode)?;
        Ok(ModelSpec {
            name: "kuramoto".into(),
            d: 1,
            p: 1,
            sigma: sigma_mat,
            weight,
            wrap: vec![true],
            kernel: Kernel::Kuramoto,
        })
    }

    /// Model lookup by name, as used by configs and the CLI.
    pub fn by_name(name: &str, sigma: f64, weight_mode: WeightMode) -> Result<Self> {
        match name {
            "quadratic" => Self::quadratic(sigma, weight_mode),
            "fitzhugh-nagumo" => Self::fitzhugh_nagumo(sigma, weight_mode),
            "kuramoto" => Self::kuramoto(sigma, weight_mode),
            other => Err(Error::Usage(format!("unknown model \"{other}\""))),
        }
    }

    pub fn has_torus(&self) -> bool {
        self.wrap.iter().any(|&w| w)
    }

    fn check_args(&self, theta: ArrayView1<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>) {
        assert_eq!(theta.len(), self.p, "theta has length {}, model has p = {}", theta.len(), self.p);
        assert_eq!(x.len(), self.d, "x has length {}, model has d = {}", x.len(), self.d);
        assert_eq!(y.len(), self.d, "y has length {}, model has d = {}", y.len(), self.d);
    }

    /// Pair drift b(theta, x, y).
    pub fn drift_kernel(
        &self,
        theta: ArrayView1<f64>,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Array1<f64> {
        self.check_args(theta, x, y);
        match self.kernel {
            Kernel::Quadratic => {
                let b = -theta[0] * x[0] - theta[1] * (x[0] - y[0]);
                Array1::from_vec(vec![b])
            }
            Kernel::Kuramoto => {
                let b = -theta[0] * (x[0] - y[0]).sin();
                Array1::from_vec(vec![b])
            }
            Kernel::FitzHughNagumo => {
                let (v, r) = (x[0], x[1]);
                let b1 = theta[0] * (v - v.powi(3) / 3.0 - r) - theta[1] * (v - y[0]);
                let b2 = v + theta[2] - theta[3] * r;
                Array1::from_vec(vec![b1, b2])
            }
        }
    }

    /// Jacobian of b in theta, shape p x d: entry [l][c] = d b_c / d theta_l.
    pub fn drift_kernel_dtheta(
        &self,
        theta: ArrayView1<f64>,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Array2<f64> {
        self.check_args(theta, x, y);
        match self.kernel {
            Kernel::Quadratic => {
                Array2::from_shape_vec((2, 1), vec![-x[0], -(x[0] - y[0])]).unwrap()
            }
            Kernel::Kuramoto => Array2::from_elem((1, 1), -(x[0] - y[0]).sin()),
            Kernel::FitzHughNagumo => {
                let (v, r) = (x[0], x[1]);
                let mut g = Array2::zeros((4, 2));
                g[[0, 0]] = v - v.powi(3) / 3.0 - r;
                g[[1, 0]] = -(v - y[0]);
                g[[2, 1]] = 1.0;
                g[[3, 1]] = -r;
                g
            }
        }
    }

    /// Jacobian of b in x, shape d x d: entry [a][c] = d b_c / d x_a.
    /// Stored so that a p x d sensitivity right-multiplies it directly.
    pub fn drift_kernel_dx(
        &self,
        theta: ArrayView1<f64>,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Array2<f64> {
        self.check_args(theta, x, y);
        match self.kernel {
            Kernel::Quadratic => Array2::from_elem((1, 1), -(theta[0] + theta[1])),
            Kernel::Kuramoto => Array2::from_elem((1, 1), -theta[0] * (x[0] - y[0]).cos()),
            Kernel::FitzHughNagumo => {
                let v = x[0];
                let mut m = Array2::zeros((2, 2));
                m[[0, 0]] = theta[0] * (1.0 - v * v) - theta[1];
                m[[0, 1]] = 1.0;
                m[[1, 0]] = -theta[0];
                m[[1, 1]] = -theta[3];
                m
            }
        }
    }

    /// Jacobian of b in y, shape d x d: entry [a][c] = d b_c / d y_a.
    pub fn drift_kernel_dy(
        &self,
        theta: ArrayView1<f64>,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
    ) -> Array2<f64> {
        self.check_args(theta, x, y);
        match self.kernel {
            Kernel::Quadratic => Array2::from_elem((1, 1), theta[1]),
            Kernel::Kuramoto => Array2::from_elem((1, 1), theta[0] * (x[0] - y[0]).cos()),
            Kernel::FitzHughNagumo => {
                let mut m = Array2::zeros((2, 2));
                m[[0, 0]] = theta[1];
                m
            }
        }
    }

    /// Mean-field drift B(theta, x, mu) against the empirical measure of
    /// `ensemble` (rows are particles), as the explicit pairwise mean.
    pub fn mean_drift(
        &self,
        theta: ArrayView1<f64>,
        x: ArrayView1<f64>,
        ensemble: ArrayView2<f64>,
    ) -> Array1<f64> {
        assert!(ensemble.nrows() > 0, "mean_drift over an empty ensemble");
        let mut acc = Array1::zeros(self.d);
        for y in ensemble.rows() {
            acc += &self.drift_kernel(theta, x, y);
        }
        acc / ensemble.nrows() as f64
    }

    fn uses_trig_stats(&self) -> bool {
        matches!(self.kernel, Kernel::Kuramoto)
    }

    /// Empirical-measure moments sufficient to evaluate ensemble averages of
    /// the kernel and its Jacobians in O(1) per query point: every supported
    /// kernel couples to the measure through the mean position (flat models)
    /// or the mean of cos/sin (trigonometric models).
    pub fn measure_stats(&self, ensemble: ArrayView2<f64>) -> MeasureStats {
        assert!(ensemble.nrows() > 0, "measure_stats over an empty ensemble");
        assert_eq!(ensemble.ncols(), self.d, "ensemble dimension mismatch");
        let inv_n = 1.0 / ensemble.nrows() as f64;
        let mut mean = Array1::zeros(self.d);
        let mut mean_cos = Array1::zeros(self.d);
        let mut mean_sin = Array1::zeros(self.d);
        let trig = self.uses_trig_stats();
        for y in ensemble.rows() {
            for c in 0..self.d {
                mean[c] += y[c];
                if trig {
                    mean_cos[c] += y[c].cos();
                    mean_sin[c] += y[c].sin();
                }
            }
        }
        mean *= inv_n;
        mean_cos *= inv_n;
        mean_sin *= inv_n;
        MeasureStats {
            mean,
            mean_cos,
            mean_sin,
        }
    }

    /// Mean drift evaluated from precomputed measure statistics; agrees
    /// with `mean_drift` up to floating-point summation order.
    pub fn mean_drift_stats(
        &self,
        theta: ArrayView1<f64>,
        x: ArrayView1<f64>,
        stats: &MeasureStats,
    ) -> Array1<f64> {
        match self.kernel {
            Kernel::Quadratic => {
                let b = -theta[0] * x[0] - theta[1] * (x[0] - stats.mean[0]);
                Array1::from_vec(vec![b])
            }
            Kernel::Kuramoto => {
                // mean of sin(x - y) = sin x <cos y> - cos x <sin y>
                let b =
                    -theta[0] * (x[0].sin() * stats.mean_cos[0] - x[0].cos() * stats.mean_sin[0]);
                Array1::from_vec(vec![b])
            }
            Kernel::FitzHughNagumo => {
                let (v, r) = (x[0], x[1]);
                let b1 = theta[0] * (v - v.powi(3) / 3.0 - r) - theta[1] * (v - stats.mean[0]);
                let b2 = v + theta[2] - theta[3] * r;
                Array1::from_vec(vec![b1, b2])
            }
        }
    }

    /// Ensemble average of the theta-Jacobian, shape p x d.
    pub fn mean_dtheta_stats(
        &self,
        _theta: ArrayView1<f64>,
        x: ArrayView1<f64>,
        stats: &MeasureStats,
    ) -> Array2<f64> {
        match self.kernel {
            Kernel::Quadratic => {
                Array2::from_shape_vec((2, 1), vec![-x[0], -(x[0] - stats.mean[0])]).unwrap()
            }
            Kernel::Kuramoto => Array2::from_elem(
                (1, 1),
                -(x[0].sin() * stats.mean_cos[0] - x[0].cos() * stats.mean_sin[0]),
            ),
            Kernel::FitzHughNagumo => {
                let (v, r) = (x[0], x[1]);
                let mut g = Array2::zeros((4, 2));
                g[[0, 0]] = v - v.powi(3) / 3.0 - r;
                g[[1, 0]] = -(v - stats.mean[0]);
                g[[2, 1]] = 1.0;
                g[[3, 1]] = -r;
                g
            }
        }
    }

    /// Ensemble average of the x-Jacobian, shape d x d.
    pub fn mean_dx_stats(
        &self,
        theta: ArrayView1<f64>,
        x: ArrayView1<f64>,
        stats: &MeasureStats,
    ) -> Array2<f64> {
        match self.kernel {
            Kernel::Kuramoto => Array2::from_elem(
                (1, 1),
                // mean of cos(x - y) = cos x <cos y> + sin x <sin y>
                -theta[0] * (x[0].cos() * stats.mean_cos[0] + x[0].sin() * stats.mean_sin[0]),
            ),
            // the remaining x-Jacobians do not depend on the partner state
            _ => self.drift_kernel_dx(theta, x, x),
        }
    }

    /// Tangent-weighted measure moments, for the partner-sensitivity term of
    /// the tangent dynamics. `tangent` has shape M x p x d.
    pub fn tangent_stats(
        &self,
        ensemble: ArrayView2<f64>,
        tangent: ndarray::ArrayView3<f64>,
    ) -> TangentStats {
        let m = ensemble.nrows();
        assert!(m > 0, "tangent_stats over an empty ensemble");
        assert_eq!(tangent.dim(), (m, self.p, self.d), "tangent shape mismatch");
        let inv_m = 1.0 / m as f64;
        let mut mean = Array2::zeros((self.p, self.d));
        let mut mean_cos = Array2::zeros((self.p, self.d));
        let mut mean_sin = Array2::zeros((self.p, self.d));
        let trig = self.uses_trig_stats();
        for j in 0..m {
            for l in 0..self.p {
                for a in 0..self.d {
                    let y = tangent[[j, l, a]];
                    mean[[l, a]] += y;
                    if trig {
                        mean_cos[[l, a]] += y * ensemble[[j, a]].cos();
                        mean_sin[[l, a]] += y * ensemble[[j, a]].sin();
                    }
                }
            }
        }
        mean *= inv_m;
        mean_cos *= inv_m;
        mean_sin *= inv_m;
        TangentStats {
            mean,
            mean_cos,
            mean_sin,
        }
    }

    /// Ensemble-mean tangent rate at (x_i, y_i):
    /// (1/M) sum_j [dtheta b + y_i . dx b + y_j . dy b](theta, x_i, x_j).
    pub fn mean_tangent_rate(
        &self,
        theta: ArrayView1<f64>,
        x_i: ArrayView1<f64>,
        y_i: ArrayView2<f64>,
        stats: &MeasureStats,
        tstats: &TangentStats,
    ) -> Array2<f64> {
        let mut rate = self.mean_dtheta_stats(theta, x_i, stats);
        rate += &y_i.dot(&self.mean_dx_stats(theta, x_i, stats));
        match self.kernel {
            Kernel::Kuramoto => {
                // dy b = theta cos(x - y) = theta (cos x cos y + sin x sin y)
                let (c, s) = (x_i[0].cos(), x_i[0].sin());
                rate += &(&tstats.mean_cos * (theta[0] * c) + &tstats.mean_sin * (theta[0] * s));
            }
            // the remaining y-Jacobians do not depend on the partner state
            _ => rate += &tstats.mean.dot(&self.drift_kernel_dy(theta, x_i, x_i)),
        }
        rate
    }

    /// Map torus-flagged coordinates into [-pi, pi); flat coordinates pass
    /// through. Idempotent.
    pub fn wrap_state(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut out = x.to_owned();
        self.wrap_in_place(&mut out);
        out
    }

    pub fn wrap_in_place(&self, x: &mut Array1<f64>) {
        for (i, v) in x.iter_mut().enumerate() {
            if self.wrap[i] {
                *v = wrap_angle(*v);
            }
        }
    }

    /// Mean-square stability guard for the explicit Euler step. Returns a
    /// human-readable message when the step size is known to be unstable.
    pub fn stability_warning(&self, theta: ArrayView1<f64>, dt: f64) -> Option<String> {
        match self.kernel {
            Kernel::Quadratic => {
                let a = theta[0] + theta[1];
                if a * dt >= 2.0 {
                    Some(format!(
                        "explicit Euler step unstable for the quadratic model: (theta_1 + theta_2) * dt = {:.4} >= 2",
                        a * dt
                    ))
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

/// Empirical-measure moments of an ensemble; see
/// [`ModelSpec::measure_stats`]. Trigonometric moments are populated only
/// for kernels that use them.
#[derive(Debug, Clone)]
pub struct MeasureStats {
    pub mean: Array1<f64>,
    pub mean_cos: Array1<f64>,
    pub mean_sin: Array1<f64>,
}

/// Tangent-weighted measure moments, shape p x d each; see
/// [`ModelSpec::tangent_stats`].
#[derive(Debug, Clone)]
pub struct TangentStats {
    pub mean: Array2<f64>,
    pub mean_cos: Array2<f64>,
    pub mean_sin: Array2<f64>,
}

/// Wrap a scalar angle into [-pi, pi) (half-open: -pi maps to itself).
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut v = (x + PI).rem_euclid(two_pi) - PI;
    if v >= PI {
        v -= two_pi;
    }
    v
}

fn weight_matrix(sigma: &Array2<f64>, mode: WeightMode) -> Result<Array2<f64>> {
    match mode {
        WeightMode::Identity => Ok(Array2::eye(sigma.nrows())),
        WeightMode::Likelihood => {
            let cov = sigma.dot(&sigma.t());
            invert(&cov).ok_or_else(|| {
                Error::Usage(
                    "likelihood weight requires an invertible diffusion matrix".into(),
                )
            })
        }
    }
}

/// Gauss-Jordan inverse for the small (d <= 2 in practice) matrices here.
pub(crate) fn invert(m: &Array2<f64>) -> Option<Array2<f64>> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.clone();
    let mut inv = Array2::eye(n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap()
        })?;
        if a[[pivot, col]].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        let diag = a[[col, col]];
        for k in 0..n {
            a[[col, k]] /= diag;
            inv[[col, k]] /= diag;
        }
        for row in 0..n {
            if row != col {
                let f = a[[row, col]];
                for k in 0..n {
                    a[[row, k]] -= f * a[[col, k]];
                    inv[[row, k]] -= f * inv[[col, k]];
                }
            }
        }
    }
    Some(inv)
}

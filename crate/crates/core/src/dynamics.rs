//! Euler-Maruyama stepping for the observed and virtual particle systems,
//! the deterministic tangent system, and reproducible RNG streams.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::ModelSpec;

/// A reproducible Gaussian-increment source. Distinct (seed, stream) pairs
/// yield independent sequences; the same pair replays bitwise-identically.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        self.rng.gen_range(low..high)
    }

    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Standard-normal matrix filled row-major (particle-major,
    /// coordinate-minor); the sampling order is part of the
    /// reproducibility contract.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.standard_normal())
    }
}

/// Initial law for particle positions, applied i.i.d. per particle.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialLaw {
    /// Independent Gaussians with per-coordinate mean and standard deviation.
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    /// Explicit list of positions, cycled over particles.
    Explicit { positions: Vec<Vec<f64>> },
}

impl InitialLaw {
    pub fn standard_gaussian(d: usize) -> Self {
        InitialLaw::Gaussian {
            mean: vec![0.0; d],
            sd: vec![1.0; d],
        }
    }

    pub fn sample(&self, count: usize, d: usize, rng: &mut RngStream) -> Result<Array2<f64>> {
        match self {
            InitialLaw::Gaussian { mean, sd } => {
                if mean.len() != d || sd.len() != d {
                    return Err(Error::Usage(format!(
                        "initial law has dimension {} but model has d = {d}",
                        mean.len()
                    )));
                }
                let mut out = Array2::zeros((count, d));
                for i in 0..count {
                    for c in 0..d {
                        out[[i, c]] = mean[c] + sd[c] * rng.standard_normal();
                    }
                }
                Ok(out)
            }
            InitialLaw::Explicit { positions } => {
                if positions.is_empty() || positions.iter().any(|p| p.len() != d) {
                    return Err(Error::Usage("explicit initial positions have wrong shape".into()));
                }
                let mut out = Array2::zeros((count, d));
                for i in 0..count {
                    let src = &positions[i % positions.len()];
                    for c in 0..d {
                        out[[i, c]] = src[c];
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Piecewise-constant (in step index) specification of the data-generating
/// parameter: entries are (until_step, theta), half-open on the right.
#[derive(Debug, Clone)]
pub struct TruthSchedule {
    segments: Vec<(usize, Array1<f64>)>,
}

impl TruthSchedule {
    pub fn constant(theta: Array1<f64>, steps: usize) -> Self {
        TruthSchedule {
            segments: vec![(steps, theta)],
        }
    }

    pub fn new(segments: Vec<(usize, Array1<f64>)>, steps: usize) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Usage("truth schedule is empty".into()));
        }
        let mut prev = 0usize;
        for (until, _) in &segments {
            if *until <= prev {
                return Err(Error::Usage("truth schedule boundaries must be increasing".into()));
            }
            prev = *until;
        }
        if prev < steps {
            return Err(Error::Usage(format!(
                "truth schedule covers steps [0, {prev}) but the run has {steps} steps"
            )));
        }
        Ok(TruthSchedule { segments })
    }

    pub fn theta_at(&self, step: usize) -> ArrayView1<'_, f64> {
        for (until, theta) in &self.segments {
            if step < *until {
                return theta.view();
            }
        }
        // schedule validation guarantees coverage; final segment extends
        self.segments.last().unwrap().1.view()
    }

    pub fn segments(&self) -> &[(usize, Array1<f64>)] {
        &self.segments
    }
}

/// One synchronous Euler-Maruyama step of an interacting ensemble, with the
/// Gaussian increments supplied by the caller (rows match particles).
pub fn euler_ips_step_with_noise(
    model: &ModelSpec,
    theta: ArrayView1<f64>,
    ensemble: ArrayView2<f64>,
    dt: f64,
    noise: ArrayView2<f64>,
) -> Array2<f64> {
    assert!(dt > 0.0, "dt must be positive");
    assert_eq!(noise.dim(), ensemble.dim(), "noise shape mismatch");
    let sqrt_dt = dt.sqrt();
    let stats = model.measure_stats(ensemble);
    let mut next = Array2::zeros(ensemble.dim());
    for (i, x) in ensemble.rows().into_iter().enumerate() {
        let drift = model.mean_drift_stats(theta, x, &stats);
        for c in 0..model.d {
            let mut kick = 0.0;
            for a in 0..model.d {
                kick += model.sigma[[c, a]] * noise[[i, a]];
            }
            let mut v = x[c] + drift[c] * dt + kick * sqrt_dt;
            if model.wrap[c] {
                v = crate::models::wrap_angle(v);
            }
            next[[i, c]] = v;
        }
    }
    next
}

/// One synchronous Euler-Maruyama step, drawing fresh increments from `rng`
/// in particle-major, coordinate-minor order.
pub fn euler_ips_step(
    model: &ModelSpec,
    theta: ArrayView1<f64>,
    ensemble: ArrayView2<f64>,
    dt: f64,
    rng: &mut RngStream,
) -> Array2<f64> {
    let noise = rng.normal_matrix(ensemble.nrows(), ensemble.ncols());
    euler_ips_step_with_noise(model, theta, ensemble, dt, noise.view())
}

/// One deterministic Euler step of the tangent system attached to
/// `hat_ensemble`. `tangent` has shape M x p x d, with each sensitivity a
/// p x d matrix that right-multiplies the state Jacobians. Synchronous:
/// every pair term reads the pre-step tangents.
pub fn euler_tangent_step(
    model: &ModelSpec,
    theta: ArrayView1<f64>,
    hat_ensemble: ArrayView2<f64>,
    tangent: ArrayView3<f64>,
    dt: f64,
) -> Array3<f64> {
    let m = hat_ensemble.nrows();
    assert_eq!(
        tangent.dim(),
        (m, model.p, model.d),
        "tangent shape mismatch"
    );
    let stats = model.measure_stats(hat_ensemble);
    let tstats = model.tangent_stats(hat_ensemble, tangent);
    let mut next = tangent.to_owned();
    for i in 0..m {
        let rate = model.mean_tangent_rate(
            theta,
            hat_ensemble.row(i),
            tangent.slice(s![i, .., ..]),
            &stats,
            &tstats,
        );
        let mut slot = next.slice_mut(s![i, .., ..]);
        slot.scaled_add(dt, &rate);
    }
    next
}

/// Observed data from one particle of a simulated N-particle system:
/// wrapped positions, raw (pre-wrap) increments, and the per-step ensemble
/// mean for diagnostics.
#[derive(Debug, Clone)]
pub struct ObservedPath {
    /// (steps + 1) x d positions of the observed particle.
    pub positions: Array2<f64>,
    /// steps x d unwrapped increments dx of the observed particle.
    pub increments: Array2<f64>,
    /// (steps + 1) x d ensemble mean trajectory.
    pub ensemble_mean: Array2<f64>,
}

/// Integrate the full N-particle system at the scheduled true parameter and
/// record particle 0. Torus coordinates are wrapped in storage, but the
/// recorded increments are the raw drift + noise contributions.
pub fn simulate_observed(
    model: &ModelSpec,
    schedule: &TruthSchedule,
    n: usize,
    steps: usize,
    dt: f64,
    init: &InitialLaw,
    rng: &mut RngStream,
) -> Result<ObservedPath> {
    if n < 1 {
        return Err(Error::Usage("N must be at least 1".into()));
    }
    if dt <= 0.0 {
        return Err(Error::Usage("dt must be positive".into()));
    }
    if let Some(msg) = model.stability_warning(schedule.theta_at(0), dt) {
        eprintln!("warning: {msg}");
    }

    let mut ensemble = init.sample(n, model.d, rng)?;
    for mut row in ensemble.rows_mut() {
        let wrapped = model.wrap_state(row.view());
        row.assign(&wrapped);
    }

    let mut positions = Array2::zeros((steps + 1, model.d));
    let mut increments = Array2::zeros((steps, model.d));
    let mut mean_traj = Array2::zeros((steps + 1, model.d));
    positions.row_mut(0).assign(&ensemble.row(0));
    mean_traj
        .row_mut(0)
        .assign(&ensemble.mean_axis(ndarray::Axis(0)).unwrap());

    let sqrt_dt = dt.sqrt();
    for step in 0..steps {
        let theta = schedule.theta_at(step);
        let noise = rng.normal_matrix(n, model.d);
        // record the raw increment of the observed particle before wrapping
        let stats = model.measure_stats(ensemble.view());
        let drift0 = model.mean_drift_stats(theta, ensemble.row(0), &stats);
        let kick0 = model.sigma.dot(&noise.row(0));
        let dx = drift0 * dt + kick0 * sqrt_dt;
        increments.row_mut(step).assign(&dx);

        ensemble = euler_ips_step_with_noise(model, theta, ensemble.view(), dt, noise.view());
        positions.row_mut(step + 1).assign(&ensemble.row(0));
        mean_traj
            .row_mut(step + 1)
            .assign(&ensemble.mean_axis(ndarray::Axis(0)).unwrap());
    }

    Ok(ObservedPath {
        positions,
        increments,
        ensemble_mean: mean_traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::WeightMode;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn quad() -> ModelSpec {
        ModelSpec::quadratic(1.0, WeightMode::Likelihood).unwrap()
    }

    #[test]
    fn rng_streams_replay_and_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 0);
        let mut c = RngStream::new(42, 1);
        let xa: Vec<f64> = (0..16).map(|_| a.standard_normal()).collect();
        let xb: Vec<f64> = (0..16).map(|_| b.standard_normal()).collect();
        let xc: Vec<f64> = (0..16).map(|_| c.standard_normal()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn euler_step_zero_noise_single_particle() {
        let m = quad();
        let theta = array![1.2, 0.5];
        let ens = array![[1.0]];
        let noise = Array2::zeros((1, 1));
        let next = euler_ips_step_with_noise(&m, theta.view(), ens.view(), 0.1, noise.view());
        assert_relative_eq!(next[[0, 0]], 0.88, max_relative = 1e-14);
    }

    #[test]
    fn euler_step_zero_theta_is_identity() {
        let m = quad();
        let theta = array![0.0, 0.0];
        let ens = array![[1.0], [-0.3]];
        let noise = Array2::zeros((2, 1));
        let next = euler_ips_step_with_noise(&m, theta.view(), ens.view(), 0.1, noise.view());
        assert_eq!(next, ens);
    }

    #[test]
    fn euler_step_two_particle_hand_value() {
        let m = quad();
        let theta = array![1.2, 0.5];
        let ens = array![[1.0], [0.0]];
        let noise = Array2::zeros((2, 1));
        let next = euler_ips_step_with_noise(&m, theta.view(), ens.view(), 0.1, noise.view());
        assert_relative_eq!(next[[0, 0]], 0.855, max_relative = 1e-14);
    }

    #[test]
    fn euler_step_is_synchronous() {
        // particle 1's drift must read particle 0's pre-step position
        let m = quad();
        let theta = array![0.0, 1.0];
        let ens = array![[1.0], [0.0]];
        let noise = Array2::zeros((2, 1));
        let next = euler_ips_step_with_noise(&m, theta.view(), ens.view(), 0.5, noise.view());
        // drift_0 = -(1 - 0.5) = -0.5 -> 0.75; drift_1 = -(0 - 0.5) = 0.5 -> 0.25
        assert_relative_eq!(next[[0, 0]], 0.75, max_relative = 1e-14);
        assert_relative_eq!(next[[1, 0]], 0.25, max_relative = 1e-14);
    }

    #[test]
    #[should_panic(expected = "dt must be positive")]
    fn euler_step_rejects_nonpositive_dt() {
        let m = quad();
        let ens = array![[1.0]];
        let noise = Array2::zeros((1, 1));
        euler_ips_step_with_noise(&m, array![1.0, 0.0].view(), ens.view(), 0.0, noise.view());
    }

    #[test]
    fn tangent_step_single_particle_hand_value() {
        let m = quad();
        let theta = array![1.2, 0.5];
        let hat = array![[2.0]];
        let tangent = Array3::zeros((1, 2, 1));
        let next = euler_tangent_step(&m, theta.view(), hat.view(), tangent.view(), 0.1);
        // self-pair: dtheta b(theta, 2, 2) = (-2, 0)
        assert_relative_eq!(next[[0, 0, 0]], -0.2, max_relative = 1e-14);
        assert_eq!(next[[0, 1, 0]], 0.0);
    }

    #[test]
    fn tangent_stays_zero_without_theta_sensitivity() {
        // theta = 0 for Kuramoto makes dtheta b the only non-homogeneous
        // term; at x = y it vanishes, so a zero tangent stays zero.
        let m = ModelSpec::kuramoto(1.0, WeightMode::Likelihood).unwrap();
        let hat = array![[0.4], [0.4]];
        let tangent = Array3::zeros((2, 1, 1));
        let next = euler_tangent_step(&m, array![0.7].view(), hat.view(), tangent.view(), 0.1);
        assert_eq!(next, tangent);
    }

    /// Two integrated tangent steps match central finite differences of the
    /// position trajectories in theta under common random numbers.
    #[test]
    fn tangent_matches_trajectory_finite_differences() {
        let m = quad();
        let theta = array![1.2, 0.5];
        let dt = 0.1;
        let eps = 1e-6;
        let m_particles = 2;

        let mut noise_rng = RngStream::new(3, 0);
        let noises: Vec<Array2<f64>> = (0..2)
            .map(|_| noise_rng.normal_matrix(m_particles, 1))
            .collect();
        let x0 = array![[0.7], [-0.4]];

        let run = |th: &Array1<f64>| {
            let mut ens = x0.clone();
            for noise in &noises {
                ens = euler_ips_step_with_noise(&m, th.view(), ens.view(), dt, noise.view());
            }
            ens
        };

        let mut ens = x0.clone();
        let mut tangent = Array3::zeros((m_particles, 2, 1));
        for noise in &noises {
            let next_tangent =
                euler_tangent_step(&m, theta.view(), ens.view(), tangent.view(), dt);
            ens = euler_ips_step_with_noise(&m, theta.view(), ens.view(), dt, noise.view());
            tangent = next_tangent;
        }

        for l in 0..2 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[l] += eps;
            tm[l] -= eps;
            let xp = run(&tp);
            let xm = run(&tm);
            for i in 0..m_particles {
                let fd = (xp[[i, 0]] - xm[[i, 0]]) / (2.0 * eps);
                assert_relative_eq!(tangent[[i, l, 0]], fd, max_relative = 1e-5, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn simulate_observed_deterministic_decay() {
        let m = ModelSpec::quadratic(0.0, WeightMode::Identity).unwrap();
        let schedule = TruthSchedule::constant(array![1.0, 0.0], 2);
        let init = InitialLaw::Explicit {
            positions: vec![vec![1.0]],
        };
        let mut rng = RngStream::new(0, 0);
        let path = simulate_observed(&m, &schedule, 1, 2, 0.1, &init, &mut rng).unwrap();
        assert_relative_eq!(path.positions[[0, 0]], 1.0, max_relative = 1e-14);
        assert_relative_eq!(path.positions[[1, 0]], 0.9, max_relative = 1e-14);
        assert_relative_eq!(path.positions[[2, 0]], 0.81, max_relative = 1e-14);
    }

    #[test]
    fn constant_schedule_matches_manual_stepping() {
        let m = quad();
        let theta = array![1.2, 0.5];
        let schedule = TruthSchedule::constant(theta.clone(), 5);
        let init = InitialLaw::standard_gaussian(1);
        let mut rng = RngStream::new(9, 0);
        let path = simulate_observed(&m, &schedule, 4, 5, 0.1, &init, &mut rng).unwrap();

        let mut rng2 = RngStream::new(9, 0);
        let mut ens = init.sample(4, 1, &mut rng2).unwrap();
        for step in 0..5 {
            ens = euler_ips_step(&m, theta.view(), ens.view(), 0.1, &mut rng2);
            assert_eq!(path.positions[[step + 1, 0]], ens[[0, 0]]);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(TruthSchedule::new(vec![(100, array![1.0])], 200).is_err());
        assert!(TruthSchedule::new(vec![], 10).is_err());
        let s = TruthSchedule::new(
            vec![(5000, array![1.5]), (10000, array![0.2])],
            10000,
        )
        .unwrap();
        assert_eq!(s.theta_at(0)[0], 1.5);
        assert_eq!(s.theta_at(4999)[0], 1.5);
        assert_eq!(s.theta_at(5000)[0], 0.2);
        assert_eq!(s.theta_at(9999)[0], 0.2);
    }

    #[test]
    fn torus_increments_are_unwrapped() {
        // sigma = 0 so the increment is pure drift; position wraps but the
        // recorded increment must equal drift * dt
        let mut m = ModelSpec::kuramoto(0.0, WeightMode::Identity).unwrap();
        m.sigma[[0, 0]] = 0.0;
        let schedule = TruthSchedule::constant(array![2.0], 1);
        let init = InitialLaw::Explicit {
            positions: vec![vec![3.0], vec![-3.0]],
        };
        let mut rng = RngStream::new(1, 0);
        let path = simulate_observed(&m, &schedule, 2, 1, 0.5, &init, &mut rng).unwrap();
        // drift for particle 0: -2 * mean(sin(0), sin(6)) = -sin(6)
        let expect = -(6.0f64).sin() * 0.5;
        assert_relative_eq!(path.increments[[0, 0]], expect, max_relative = 1e-12);
        // stored position stays wrapped
        assert!(path.positions[[1, 0]] >= -std::f64::consts::PI);
        assert!(path.positions[[1, 0]] < std::f64::consts::PI);
    }

    #[test]
    fn bitwise_reproducibility() {
        let m = quad();
        let schedule = TruthSchedule::constant(array![1.2, 0.5], 50);
        let init = InitialLaw::standard_gaussian(1);
        let mut r1 = RngStream::new(123, 7);
        let mut r2 = RngStream::new(123, 7);
        let a = simulate_observed(&m, &schedule, 10, 50, 0.1, &init, &mut r1).unwrap();
        let b = simulate_observed(&m, &schedule, 10, 50, 0.1, &init, &mut r2).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.increments, b.increments);
    }
}

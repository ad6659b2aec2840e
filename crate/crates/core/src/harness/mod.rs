//! Experiment execution: single runs, seed sweeps, N/M sweeps, CSV traces,
//! and L2-error aggregation.

pub mod config;
pub mod presets;

use ndarray::Array1;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use crate::dynamics::{simulate_observed, RngStream};
use crate::error::{Error, Result};
use crate::estimators::{
    estimator_step, EstimatorSettings, EstimatorState, Variant,
};
use crate::oracle::{pseudo_targets, QuadraticTruth};

pub use config::{ExperimentConfig, TargetSpec, ThetaInit, TruthSegment};

/// Per-seed RNG stream ids. The observed path and the initial estimate are
/// shared by both variants; virtual-noise and index streams are per-variant.
mod stream_id {
    pub const OBSERVED: u64 = 0;
    pub const THETA_INIT: u64 = 1;
    pub fn hat(variant_slot: usize) -> u64 {
        2 + 3 * variant_slot as u64
    }
    pub fn tilde(variant_slot: usize) -> u64 {
        3 + 3 * variant_slot as u64
    }
    pub fn index(variant_slot: usize) -> u64 {
        4 + 3 * variant_slot as u64
    }
}

#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: usize,
    pub time: f64,
    /// One parameter vector per configured variant, in config order.
    pub thetas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub seed: u64,
    pub config_hash: String,
    pub variants: Vec<Variant>,
    pub p: usize,
    pub records: Vec<TraceRecord>,
    /// Set when any variant diverged; the trace is truncated at that step.
    pub diverged: bool,
}

impl RunTrace {
    pub fn final_theta(&self, variant_slot: usize) -> &[f64] {
        &self.records.last().expect("empty trace").thetas[variant_slot]
    }

    /// Time-average of the final `window` fraction of records (per
    /// coordinate). `window = None` means final iterate.
    pub fn windowed_mean(&self, variant_slot: usize, window: Option<f64>) -> Vec<f64> {
        match window {
            None => self.final_theta(variant_slot).to_vec(),
            Some(f) => {
                assert!(f > 0.0 && f <= 1.0, "window fraction must lie in (0, 1]");
                let len = self.records.len();
                let take = ((len as f64 * f).ceil() as usize).clamp(1, len);
                let start = len - take;
                let mut acc = vec![0.0; self.p];
                for rec in &self.records[start..] {
                    for (a, v) in acc.iter_mut().zip(&rec.thetas[variant_slot]) {
                        *a += v;
                    }
                }
                acc.iter().map(|a| a / take as f64).collect()
            }
        }
    }
}

fn run_one_seed(config: &ExperimentConfig, seed: u64) -> Result<RunTrace> {
    let model = config.build_model()?;
    let schedule = config.build_schedule()?;
    let init = config.initial_law(model.d);
    let hash = config.hash();

    let mut obs_rng = RngStream::new(seed, stream_id::OBSERVED);
    let path = simulate_observed(
        &model,
        &schedule,
        config.n,
        config.steps,
        config.dt,
        &init,
        &mut obs_rng,
    )?;

    let mut init_rng = RngStream::new(seed, stream_id::THETA_INIT);
    let theta_init = config.sample_theta_init(&mut init_rng);
    let mask = config.mask_or_default(model.p);

    let mut states: Vec<EstimatorState> = Vec::with_capacity(config.variants.len());
    for (slot, &variant) in config.variants.iter().enumerate() {
        let mut state = EstimatorState::new(
            &model,
            theta_init.clone(),
            config.m,
            variant,
            mask.clone(),
            &init,
            RngStream::new(seed, stream_id::hat(slot)),
            RngStream::new(seed, stream_id::tilde(slot)),
            RngStream::new(seed, stream_id::index(slot)),
        )?;
        if let crate::estimators::IndexPolicy::Fixed { j, k } = config.index_policy {
            state.j = j;
            state.k = k;
        }
        states.push(state);
    }

    let settings = EstimatorSettings {
        learning_rate: config.learning_rate,
        gamma_clock: config.gamma_clock,
        index_policy: config.index_policy,
        projection: config
            .projection
            .as_ref()
            .map(|p| (p.low.clone(), p.high.clone())),
    };

    let mut records = Vec::new();
    let record = |states: &[EstimatorState], step: usize| TraceRecord {
        step,
        time: step as f64 * config.dt,
        thetas: states.iter().map(|s| s.theta.to_vec()).collect(),
    };
    records.push(record(&states, 0));

    let mut diverged = false;
    'steps: for step in 0..config.steps {
        let x_obs = path.positions.row(step);
        let dx_obs = path.increments.row(step);
        for state in states.iter_mut() {
            if let Err(err) = estimator_step(&model, &settings, state, x_obs, dx_obs, config.dt) {
                eprintln!("warning: seed {seed}: {err}; trace truncated");
                diverged = true;
                break 'steps;
            }
        }
        let done = step + 1;
        if done % config.record_stride == 0 || done == config.steps {
            records.push(record(&states, done));
        }
    }

    Ok(RunTrace {
        seed,
        config_hash: hash,
        variants: config.variants.clone(),
        p: theta_init.len(),
        records,
        diverged,
    })
}

/// Run every configured seed (in parallel); both variants of a seed share
/// the observed path and initial estimate but use independent virtual
/// noise. Divergent runs are truncated and flagged, not fatal.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunTrace>> {
    config.validate()?;
    let mut traces: Vec<RunTrace> = config
        .seeds
        .par_iter()
        .map(|&seed| run_one_seed(config, seed))
        .collect::<Result<_>>()?;
    traces.sort_by_key(|t| t.seed);
    Ok(traces)
}

/// Root-mean-square over seeds of the (optionally windowed) deviation from
/// `target`, per coordinate.
pub fn l2_error(
    traces: &[RunTrace],
    variant_slot: usize,
    target: &Array1<f64>,
    window: Option<f64>,
) -> Result<Vec<f64>> {
    if traces.is_empty() {
        return Err(Error::Usage("l2_error needs at least one trace".into()));
    }
    let p = traces[0].p;
    let mut acc = vec![0.0; p];
    for trace in traces {
        let avg = trace.windowed_mean(variant_slot, window);
        for c in 0..p {
            let err = avg[c] - target[c];
            acc[c] += err * err;
        }
    }
    Ok(acc.iter().map(|v| (v / traces.len() as f64).sqrt()).collect())
}

/// Resolve the configured error target to a parameter vector.
///
/// "pseudo" uses the closed-form finite-N pseudo-true value and is defined
/// for the quadratic model with exactly one free coordinate.
pub fn resolve_target(config: &ExperimentConfig) -> Result<Array1<f64>> {
    match &config.target {
        TargetSpec::Explicit(values) => Ok(Array1::from_vec(values.clone())),
        TargetSpec::Named(name) if name == "truth" => Ok(config.final_truth()),
        TargetSpec::Named(name) if name == "pseudo" => {
            if config.model != "quadratic" {
                return Err(Error::Usage(
                    "pseudo targets exist only for the quadratic model".into(),
                ));
            }
            let truth = config.final_truth();
            let qt = QuadraticTruth::new(truth[0], truth[1], config.sigma)?;
            let ps = pseudo_targets(&qt, config.n);
            let mask = config.mask_or_default(2);
            match (mask[0], mask[1]) {
                (true, false) => Ok(Array1::from_vec(vec![ps.theta1_star, truth[1]])),
                (false, true) => Ok(Array1::from_vec(vec![truth[0], ps.theta2_star])),
                _ => Err(Error::Usage(
                    "pseudo target needs exactly one free quadratic parameter".into(),
                )),
            }
        }
        TargetSpec::Named(other) => Err(Error::Usage(format!("unknown target \"{other}\""))),
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis_value: usize,
    pub variant: Variant,
    pub errors: Vec<f64>,
    pub diverged_runs: usize,
}

/// Re-run the experiment for each value of N or M and aggregate L2 errors
/// against the configured target.
pub fn sweep(config: &ExperimentConfig, axis: &str, values: &[usize]) -> Result<Vec<SweepRow>> {
    if values.is_empty() || values.contains(&0) {
        return Err(Error::Usage("sweep values must be non-empty positive integers".into()));
    }
    let mut rows = Vec::new();
    for &value in values {
        let mut point = config.clone();
        match axis {
            "N" => point.n = value,
            "M" => point.m = value,
            other => return Err(Error::Usage(format!("unknown sweep axis \"{other}\""))),
        }
        let traces = run_experiment(&point)?;
        let target = resolve_target(&point)?;
        let diverged_runs = traces.iter().filter(|t| t.diverged).count();
        for (slot, &variant) in point.variants.iter().enumerate() {
            rows.push(SweepRow {
                axis_value: value,
                variant,
                errors: l2_error(&traces, slot, &target, None)?,
                diverged_runs,
            });
        }
    }
    Ok(rows)
}

/// Write one trace as CSV: '#' metadata comments, then
/// `step,time,theta_1..p[,vartheta_1..p]`. When two variants are present
/// the averaged block takes the theta_ prefix and the particlewise block
/// the vartheta_ prefix.
pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# config_hash={}", trace.config_hash)?;
    writeln!(out, "# seed={}", trace.seed)?;
    if trace.diverged {
        writeln!(out, "# diverged=true")?;
    }
    let mut header = String::from("step,time");
    for (slot, _) in trace.variants.iter().enumerate() {
        let prefix = column_prefix(&trace.variants, slot);
        for c in 1..=trace.p {
            header.push_str(&format!(",{prefix}_{c}"));
        }
    }
    writeln!(out, "{header}")?;
    for rec in &trace.records {
        let mut line = format!("{},{}", rec.step, rec.time);
        for theta in &rec.thetas {
            for v in theta {
                line.push_str(&format!(",{v}"));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn column_prefix(variants: &[Variant], slot: usize) -> &'static str {
    if variants.len() > 1 && variants[slot] == Variant::Particlewise {
        "vartheta"
    } else {
        "theta"
    }
}

/// Write a sweep summary CSV: axis value, variant, per-coordinate error.
pub fn write_sweep_csv(rows: &[SweepRow], axis: &str, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let p = rows.first().map(|r| r.errors.len()).unwrap_or(0);
    let mut header = format!("{axis},variant");
    for c in 1..=p {
        header.push_str(&format!(",l2_error_{c}"));
    }
    header.push_str(",diverged_runs");
    writeln!(out, "{header}")?;
    for row in rows {
        let mut line = format!("{},{}", row.axis_value, row.variant);
        for e in &row.errors {
            line.push_str(&format!(",{e}"));
        }
        line.push_str(&format!(",{}", row.diverged_runs));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Percentile bootstrap interval for the RMS of `errors` across seeds.
pub fn bootstrap_rms_ci(
    errors: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut RngStream,
) -> (f64, f64) {
    assert!(!errors.is_empty());
    assert!(level > 0.0 && level < 1.0);
    let n = errors.len();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let sum: f64 = (0..n)
                .map(|_| {
                    let e = errors[rng.uniform_index(n)];
                    e * e
                })
                .sum();
            (sum / n as f64).sqrt()
        })
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo_idx = ((1.0 - level) / 2.0 * resamples as f64) as usize;
    let hi_idx = ((1.0 - (1.0 - level) / 2.0) * resamples as f64) as usize;
    (
        stats[lo_idx.min(resamples - 1)],
        stats[hi_idx.min(resamples - 1)],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::LearningRate;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            model: "quadratic".into(),
            sigma: 1.0,
            weight: crate::models::WeightMode::Likelihood,
            n: 4,
            m: 3,
            dt: 0.1,
            steps: 10,
            seeds: vec![0, 1],
            record_stride: 1,
            variants: vec![Variant::Averaged, Variant::Particlewise],
            truth: vec![TruthSegment {
                until_step: 10,
                theta: vec![1.2, 0.5],
            }],
            learning_rate: LearningRate::Polynomial { c: 1.0, beta: 0.55 },
            gamma_clock: Default::default(),
            init: None,
            theta_init: ThetaInit::Explicit {
                values: vec![2.0, 1.0],
            },
            mask: None,
            projection: None,
            index_policy: Default::default(),
            target: Default::default(),
            output: None,
        }
    }

    #[test]
    fn zero_gamma_single_step_trace() {
        let mut config = tiny_config();
        config.steps = 1;
        config.truth[0].until_step = 1;
        config.learning_rate = LearningRate::Constant { c: 0.0 };
        let traces = run_experiment(&config).unwrap();
        for trace in &traces {
            assert_eq!(trace.records.len(), 2);
            for rec in &trace.records {
                assert_eq!(rec.thetas[0], vec![2.0, 1.0]);
                assert_eq!(rec.thetas[1], vec![2.0, 1.0]);
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let config = tiny_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!(ta.records.len(), tb.records.len());
            for (ra, rb) in ta.records.iter().zip(&tb.records) {
                assert_eq!(ra.thetas, rb.thetas);
            }
        }
    }

    #[test]
    fn trace_monotone_steps_and_masked_columns() {
        let mut config = tiny_config();
        config.mask = Some(vec![true, false]);
        config.record_stride = 3;
        let traces = run_experiment(&config).unwrap();
        for trace in &traces {
            let mut prev = None;
            for rec in &trace.records {
                if let Some(p) = prev {
                    assert!(rec.step > p);
                }
                prev = Some(rec.step);
                // frozen coordinate never moves
                assert_eq!(rec.thetas[0][1], 1.0);
                assert_eq!(rec.thetas[1][1], 1.0);
            }
            assert_eq!(trace.records.last().unwrap().step, config.steps);
        }
    }

    #[test]
    fn l2_error_values() {
        let config = tiny_config();
        let mut traces = run_experiment(&config).unwrap();
        let target = Array1::from_vec(vec![1.2, 0.5]);
        // constant-at-target traces give zero error
        for trace in traces.iter_mut() {
            for rec in trace.records.iter_mut() {
                rec.thetas = vec![vec![1.2, 0.5]; 2];
            }
        }
        let e = l2_error(&traces, 0, &target, None).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
        // single trace with final offset (0.1, 0)
        traces.truncate(1);
        traces[0].records.last_mut().unwrap().thetas[0] = vec![1.3, 0.5];
        let e = l2_error(&traces, 0, &target, None).unwrap();
        assert!((e[0] - 0.1).abs() < 1e-12 && e[1] == 0.0);
        // symmetric pair
        let mut pair = vec![traces[0].clone(), traces[0].clone()];
        pair[1].records.last_mut().unwrap().thetas[0] = vec![1.1, 0.5];
        let e = l2_error(&pair, 0, &target, None).unwrap();
        assert!((e[0] - 0.1).abs() < 1e-12);
        // empty input is a usage error
        assert!(l2_error(&[], 0, &target, None).is_err());
    }

    #[test]
    fn single_value_sweep_equals_run_plus_l2() {
        let mut config = tiny_config();
        config.variants = vec![Variant::Averaged];
        let rows = sweep(&config, "N", &[4]).unwrap();
        assert_eq!(rows.len(), 1);
        let traces = run_experiment(&config).unwrap();
        let target = resolve_target(&config).unwrap();
        let direct = l2_error(&traces, 0, &target, None).unwrap();
        assert_eq!(rows[0].errors, direct);
    }

    #[test]
    fn sweep_row_count_and_validation() {
        let config = tiny_config();
        let rows = sweep(&config, "M", &[2, 3]).unwrap();
        assert_eq!(rows.len(), 4); // 2 values x 2 variants
        assert!(sweep(&config, "Q", &[2]).is_err());
        assert!(sweep(&config, "N", &[]).is_err());
        assert!(sweep(&config, "N", &[0]).is_err());
    }

    #[test]
    fn pseudo_target_resolution() {
        let mut config = tiny_config();
        config.n = 2;
        config.mask = Some(vec![false, true]);
        config.target = TargetSpec::Named("pseudo".into());
        let t = resolve_target(&config).unwrap();
        assert!((t[0] - 1.2).abs() < 1e-14);
        assert!((t[1] - 0.6 / 2.9).abs() < 1e-12);
        // both parameters free: not identified
        config.mask = Some(vec![true, true]);
        assert!(resolve_target(&config).is_err());
    }

    #[test]
    fn trace_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config();
        config.variants = vec![Variant::Averaged];
        config.model = "kuramoto".into();
        config.truth = vec![TruthSegment {
            until_step: 10,
            theta: vec![1.5],
        }];
        config.theta_init = ThetaInit::Explicit { values: vec![2.0] };
        config.mask = None;
        let traces = run_experiment(&config).unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&traces[0], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash="));
        assert!(lines.next().unwrap().starts_with("# seed="));
        assert_eq!(lines.next().unwrap(), "step,time,theta_1");

        // both variants: vartheta block appears
        let config2 = tiny_config();
        let traces2 = run_experiment(&config2).unwrap();
        let path2 = dir.path().join("trace2.csv");
        write_trace_csv(&traces2[0], &path2).unwrap();
        let text2 = std::fs::read_to_string(&path2).unwrap();
        assert!(text2.contains("step,time,theta_1,theta_2,vartheta_1,vartheta_2"));
    }

    #[test]
    fn bootstrap_interval_brackets_the_rms() {
        let errors = vec![0.1, 0.12, 0.09, 0.11, 0.1, 0.13, 0.08, 0.1];
        let mut rng = RngStream::new(5, 0);
        let (lo, hi) = bootstrap_rms_ci(&errors, 2000, 0.95, &mut rng);
        let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
        assert!(lo <= rms && rms <= hi);
        assert!(lo > 0.05 && hi < 0.2);
    }
}

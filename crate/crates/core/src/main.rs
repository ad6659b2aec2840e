use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::array;

use sgdct::dynamics::RngStream;
use sgdct::error::Error;
use sgdct::harness::presets::{replicate_figure, FIGURE_IDS};
use sgdct::harness::{
    l2_error, resolve_target, run_experiment, sweep, write_sweep_csv, write_trace_csv,
    ExperimentConfig,
};
use sgdct::models::{ModelSpec, WeightMode};
use sgdct::oracle::{
    discrete_stationary_moments_quadratic, fd_tangent_check, finite_n_objective_quadratic,
    mf_objective_quadratic, pseudo_targets, random_check_state, rao_blackwell_check,
    stationary_moments_quadratic, QuadraticTruth,
};

#[derive(Parser)]
#[command(name = "sgdct", about = "Online parameter estimation for interacting particle systems", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write trace CSVs.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep N or M over a list of values and write a summary CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["N", "M"])]
        axis: String,
        /// Comma-separated positive integers.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print closed-form quadratic-model reference quantities.
    Oracle {
        #[arg(long, default_value = "quadratic")]
        model: String,
        #[arg(long)]
        theta01: f64,
        #[arg(long)]
        theta02: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, help = "also print Euler-discretized moment targets for this step size")]
        dt: Option<f64>,
    },
    /// Re-run a published figure protocol and write plot-ready CSV files.
    Replicate {
        #[arg(long)]
        figure: String,
        /// Shrink factor in (0, 1] applied to steps and seed counts.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the numerical self-check suite (tangent + Rao-Blackwell).
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(flagged) => {
            if flagged {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Divergence { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> sgdct::Result<bool> {
    match cli.command {
        Command::Estimate { config, seed, out } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            std::fs::create_dir_all(&out)?;
            let traces = run_experiment(&config)?;
            let mut flagged = false;
            for trace in &traces {
                write_trace_csv(trace, &out.join(format!("trace_seed{}.csv", trace.seed)))?;
                flagged |= trace.diverged;
            }
            let target = resolve_target(&config)?;
            for (slot, &variant) in config.variants.iter().enumerate() {
                let errs = l2_error(&traces, slot, &target, None)?;
                let joined: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
                println!("l2_error[{variant}]={}", joined.join(","));
            }
            println!("traces={}", traces.len());
            println!("out={}", out.display());
            Ok(flagged)
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let config = ExperimentConfig::load(&config)?;
            std::fs::create_dir_all(&out)?;
            let rows = sweep(&config, &axis, &values)?;
            let path = out.join(format!("sweep_{axis}.csv"));
            write_sweep_csv(&rows, &axis, &path)?;
            let flagged = rows.iter().any(|r| r.diverged_runs > 0);
            println!("rows={}", rows.len());
            println!("out={}", path.display());
            Ok(flagged)
        }
        Command::Oracle {
            model,
            theta01,
            theta02,
            sigma,
            n,
            dt,
        } => {
            if model != "quadratic" {
                return Err(Error::Usage(format!(
                    "closed forms are available only for the quadratic model, not \"{model}\""
                )));
            }
            let truth = QuadraticTruth::new(theta01, theta02, sigma)?;
            let ps = pseudo_targets(&truth, n);
            let (v_n, c_n) = stationary_moments_quadratic(&truth, n);
            println!("alpha0={}", truth.alpha0());
            println!("alpha_star={}", ps.alpha_star);
            println!("theta1_star={}", ps.theta1_star);
            println!("theta2_star={}", ps.theta2_star);
            println!("V_N={v_n}");
            println!("C_N={c_n}");
            println!(
                "mf_objective_at_truth={}",
                mf_objective_quadratic(&[theta01, theta02], &truth)
            );
            println!(
                "finite_n_objective_at_truth={}",
                finite_n_objective_quadratic(&[theta01, theta02], &truth, n)
            );
            if let Some(dt) = dt {
                let (v_disc, c_disc) = discrete_stationary_moments_quadratic(&truth, n, dt);
                println!("V_N_discrete={v_disc}");
                println!("Var_mean_discrete={c_disc}");
            }
            Ok(false)
        }
        Command::Replicate { figure, scale, out } => {
            if !FIGURE_IDS.contains(&figure.as_str()) {
                return Err(Error::Usage(format!(
                    "unknown figure \"{figure}\" (known: {})",
                    FIGURE_IDS.join(", ")
                )));
            }
            let flagged = replicate_figure(&figure, scale, &out)?;
            println!("figure={figure}");
            println!("out={}", out.display());
            Ok(flagged)
        }
        Command::Check => {
            let mut failures = 0usize;
            let quad = ModelSpec::quadratic(1.0, WeightMode::Likelihood)?;
            let kur = ModelSpec::kuramoto(1.0, WeightMode::Likelihood)?;
            let fhn = ModelSpec::fitzhugh_nagumo(0.5, WeightMode::Identity)?;

            for (model, theta) in [
                (&quad, array![1.2, 0.5]),
                (&kur, array![1.5]),
            ] {
                let report = fd_tangent_check(model, theta.view(), 3, 0.05, 200, 1e-5, 1)?;
                let pass = report.computed <= 1e-3;
                println!("{}={} pass={}", report.name, report.computed, pass);
                failures += usize::from(!pass);
            }

            let mut rng = RngStream::new(2024, 0);
            for model in [&quad, &fhn, &kur] {
                let mut worst = 0.0f64;
                for m in [1usize, 2, 5, 20] {
                    for _ in 0..25 {
                        let (theta, x, dx, hat, tan, tilde) = random_check_state(model, m, &mut rng);
                        let r = rao_blackwell_check(
                            model,
                            theta.view(),
                            x.view(),
                            dx.view(),
                            hat.view(),
                            tan.view(),
                            tilde.view(),
                            0.1,
                        )?;
                        worst = worst.max(r.computed);
                    }
                }
                let pass = worst <= 1e-12;
                println!(
                    "rao_blackwell_rel_discrepancy[{}]={} pass={}",
                    model.name, worst, pass
                );
                failures += usize::from(!pass);
            }

            if failures > 0 {
                return Err(Error::Usage(format!("{failures} check(s) failed")));
            }
            Ok(false)
        }
    }
}

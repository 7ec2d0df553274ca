use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rmtlab_core::distributions::{EntryKind, EntryLaw};
use rmtlab_core::harness::experiments::{experiment_id, Outcome};
use rmtlab_core::harness::{
    collect_fluctuations, load_config, read_sample_csv, run_experiment, write_fluctuation_csv, write_reference_csv,
    write_result, ExperimentConfig, ExperimentResult,
};
use rmtlab_core::matrix::FieldKind;
use rmtlab_core::stats::{ks_two_sample, qq_pairs};
use rmtlab_core::theory::TheoryValues;
use serde_json::json;

#[derive(Parser)]
#[command(name = "rmtlab", version, about = "Outlier eigenvalues of deformed Wigner matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the closed-form limits for one spike as JSON.
    Theory {
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value = "gaussian")]
        law: String,
        #[arg(long, default_value = "real")]
        field: String,
        /// Atom probability of the two-point law.
        #[arg(long)]
        p: Option<f64>,
        /// Ratio of the two atoms of the two-point law.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Run the experiment described by a TOML config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Result JSON path. CSV files are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-sample Kolmogorov–Smirnov test of two CSV samples.
    Ks {
        a: PathBuf,
        b: PathBuf,
        /// Also emit this many QQ points.
        #[arg(long)]
        qq: Option<usize>,
    },
    /// Dump the rescaled outliers of every replication as CSV.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Theory {
            theta,
            sigma,
            law,
            field,
            p,
            ratio,
        } => theory(theta, sigma, &law, &field, p, ratio),
        Command::Experiment {
            config,
            seed,
            workers,
            out,
        } => experiment(&config, seed, workers, out),
        Command::Ks { a, b, qq } => ks(&a, &b, qq),
        Command::Sample {
            config,
            out,
            seed,
            workers,
        } => sample(&config, &out, seed, workers),
    }
}

fn theory(theta: f64, sigma: f64, law: &str, field: &str, p: Option<f64>, ratio: Option<f64>) -> Result<()> {
    let two_point = match (p, ratio) {
        (Some(p), Some(r)) => Some((p, r)),
        (None, None) => None,
        _ => anyhow::bail!("--p and --ratio must be given together"),
    };
    let law = EntryLaw::new(EntryKind::from_name(law, two_point)?, sigma)?;
    let field = FieldKind::from_name(field)?;
    let values = TheoryValues::compute(theta, sigma, law.m4(), field.t())?;
    println!("{}", serde_json::to_string_pretty(&values)?);
    Ok(())
}

fn prepare(path: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    cfg.resolve_seed(seed)?;
    if workers.is_some() {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("result");
    out.with_file_name(format!("{stem}{suffix}"))
}

fn experiment(path: &Path, seed: Option<u64>, workers: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let cfg = prepare(path, seed, workers)?;
    let out = out.or_else(|| cfg.output.clone());
    let result = run_experiment(&cfg)?;
    match out {
        Some(out) => {
            write_result(&result, &out).with_context(|| format!("writing {}", out.display()))?;
            write_csvs(&result, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary(&result))?);
        }
        None => println!("{}", serde_json::to_string_pretty(&result)?),
    }
    Ok(())
}

fn write_csvs(result: &ExperimentResult, out: &Path) -> Result<()> {
    if let Outcome::FluctuationVsLimit(o) = &result.outcome {
        write_fluctuation_csv(&result.experiment_id, &o.records, sibling(out, ".csv"))?;
        for s in &o.spikes {
            for i in 0..s.multiplicity {
                let col: Vec<f64> = s.primary.reference.iter().map(|v| v[i]).collect();
                write_reference_csv(
                    &col,
                    sibling(out, &format!(".reference-spike{}-rank{}.csv", s.spike_index, i + 1)),
                )?;
            }
        }
    }
    Ok(())
}

fn summary(result: &ExperimentResult) -> serde_json::Value {
    let detail = match &result.outcome {
        Outcome::FluctuationVsLimit(o) => json!(o
            .spikes
            .iter()
            .map(|s| json!({
                "spike_index": s.spike_index,
                "limit": s.primary.limit.name(),
                "ks_p_values": s.primary.per_rank.iter().map(|r| r.ks.p_value).collect::<Vec<_>>(),
                "gap_p_value": s.primary.gap.map(|g| g.p_value),
                "alternate_p_values": s.alternate.as_ref().map(|a| a.comparison.per_rank.iter().map(|r| r.ks.p_value).collect::<Vec<_>>()),
                "gaussian_fit_d": s.gaussian_fit.iter().map(|k| k.d).collect::<Vec<_>>(),
            }))
            .collect::<Vec<_>>()),
        Outcome::AsConvergence(o) => json!({
            "count_frequency": o.count_frequency,
            "within_tolerance": o.spikes.iter().map(|s| &s.within_tolerance).collect::<Vec<_>>(),
        }),
        Outcome::ResolventLimits(o) => json!({
            "mean_tr1": o.mean_tr1, "limit_tr1": o.limit_tr1,
            "mean_tr2": o.mean_tr2, "limit_tr2": o.limit_tr2,
            "mean_diag2": o.mean_diag2, "limit_diag2": o.limit_diag2,
        }),
        Outcome::SesquilinearClt(o) => json!({
            "frobenius_relative": o.frobenius_relative,
            "variance_ratios": o.variance_ratios,
        }),
        Outcome::EmpiricalVConvergence(o) => json!({
            "max_rel_err_frame": o.max_rel_err_frame,
            "max_rel_err_guoe": o.max_rel_err_guoe,
        }),
    };
    json!({
        "experiment_id": result.experiment_id,
        "replications_used": result.replications_used,
        "discards": result.discards.len(),
        "wall_clock_seconds": result.wall_clock_seconds,
        "summary": detail,
    })
}

fn ks(a: &Path, b: &Path, qq: Option<usize>) -> Result<()> {
    let xa = read_sample_csv(a)?;
    let xb = read_sample_csv(b)?;
    let report = ks_two_sample(&xa, &xb)?;
    let value = match qq {
        Some(q) => json!({ "ks": report, "qq": qq_pairs(&xa, &xb, q)? }),
        None => serde_json::to_value(report)?,
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn sample(path: &Path, out: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<()> {
    let cfg = prepare(path, seed, workers)?;
    let records = collect_fluctuations(&cfg)?;
    write_fluctuation_csv(&experiment_id(&cfg), &records, out)?;
    eprintln!("wrote {} replications to {}", records.len(), out.display());
    Ok(())
}

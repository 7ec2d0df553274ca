//! Parallel Monte Carlo experiments.
//!
//! Replication `r` always draws from stream `r` of the configured seed, and
//! reference draw `i` of spike `j` from stream `REFERENCE_STREAM_BASE + (j << 32) + i`,
//! so results do not depend on the number of workers.

use std::time::Instant;

use faer::linalg::matmul::matmul_with_conj;
use faer::{c64, Accum, Conj, Mat, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind, LimitSelection};
use crate::distributions::RngStream;
use crate::ensembles::{sample_wigner, DeformedModel};
use crate::error::{Result, RmtError};
use crate::limits::{
    empirical_v_batch, frame_v_entry_variances, mat_to_rows, select_limit, shifted_cholesky, LimitLaw, LimitSampler,
    RealDiagConvention,
};
use crate::matrix::{FieldKind, HermitianMatrix, Scalar};
use crate::spectral::{
    count_outliers, eigenvalues_sorted, extreme_eigenvalues_of, rescale_top, resolvent_traces, FluctuationRecord,
    ResolventTraces,
};
use crate::stats::{
    empirical_covariance, frobenius_relative, ks_one_sample, ks_two_sample, normal_cdf, sample_moments, KsReport,
    Moments,
};
use crate::theory::{
    covariance_factor, guoe_tau, h_variance_profile, resolvent_limits, rho_theta, sesquilinear_covariance, FormMoments,
    SesquilinearCovariance, TheoryValues,
};

pub const REFERENCE_STREAM_BASE: u64 = 1 << 40;
pub const ALT_REFERENCE_STREAM_BASE: u64 = 3 << 40;
/// Largest tolerated fraction of discarded replications.
pub const MAX_DISCARD_FRACTION: f64 = 0.05;

pub fn version_string() -> String {
    format!(
        "{} ({})",
        env!("CARGO_PKG_VERSION"),
        option_env!("RMTLAB_GIT_DESCRIBE").unwrap_or("unknown")
    )
}

/// A replication dropped because `ρ` fell inside the spectrum of the minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub replication: u64,
    pub seed: u64,
    pub stream_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTheory {
    pub spike_index: usize,
    pub values: TheoryValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankComparison {
    /// 1-based position inside the spike's group of outliers.
    pub rank: usize,
    pub ks: KsReport,
    pub simulated: Moments,
    pub reference: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitComparison {
    pub limit: LimitLaw,
    pub reference: Vec<Vec<f64>>,
    pub per_rank: Vec<RankComparison>,
    /// KS of the spread `ξ_1 − ξ_k` when `k ≥ 2`.
    pub gap: Option<KsReport>,
}

impl LimitComparison {
    pub fn min_p_value(&self) -> f64 {
        self.per_rank
            .iter()
            .map(|r| r.ks.p_value)
            .chain(self.gap.map(|g| g.p_value))
            .fold(1.0, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternateComparison {
    pub convention: RealDiagConvention,
    pub comparison: LimitComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeComparison {
    pub spike_index: usize,
    pub theta: f64,
    pub multiplicity: usize,
    pub primary: LimitComparison,
    /// The other real-diagonal reading, when it changes the limit.
    pub alternate: Option<AlternateComparison>,
    /// One-sample KS of each rank against a normal law with the sample's own
    /// mean and variance.
    pub gaussian_fit: Vec<KsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationOutcome {
    pub records: Vec<FluctuationRecord>,
    pub spikes: Vec<SpikeComparison>,
}

impl FluctuationOutcome {
    pub fn spike(&self, j: usize) -> Option<&SpikeComparison> {
        self.spikes.iter().find(|s| s.spike_index == j)
    }

    /// Pooled `ξ` of rank `rank` (1-based) of spike `j`.
    pub fn pooled(&self, j: usize, rank: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.spike(j).map(|s| s.xi[rank - 1]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsReplication {
    pub replication: u64,
    pub above: usize,
    pub below: usize,
    /// Per supercritical spike, `|λ − ρ_θ|` for each of its outliers.
    pub deviations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsSpikeSummary {
    pub spike_index: usize,
    pub theta: f64,
    pub rho: f64,
    /// Fraction of replications with `|λ − ρ_θ| < as_tolerance`, per outlier.
    pub within_tolerance: Vec<f64>,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsOutcome {
    pub delta: f64,
    pub tolerance: f64,
    pub expected_above: usize,
    pub expected_below: usize,
    /// Fraction of replications whose outlier counts match on both sides.
    pub count_frequency: f64,
    pub spikes: Vec<AsSpikeSummary>,
    pub replications: Vec<AsReplication>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventOutcome {
    pub spike_index: usize,
    pub rho: f64,
    pub minor_dim: usize,
    pub limit_tr1: f64,
    pub limit_tr2: f64,
    pub limit_diag2: f64,
    pub mean_tr1: f64,
    pub mean_tr2: f64,
    pub mean_diag2: f64,
    /// Mean of `√N (tr1 − 1/θ)`.
    pub mean_scaled_tr1: f64,
    /// Mean of `|√N (tr1 − 1/θ)|`.
    pub mean_abs_scaled_tr1: f64,
    pub traces: Vec<(u64, ResolventTraces)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SesquilinearOutcome {
    pub spike_index: usize,
    pub minor_dim: usize,
    pub forms_per_minor: usize,
    pub theory: SesquilinearCovariance,
    pub empirical: Vec<Vec<f64>>,
    pub frobenius_relative: f64,
    /// Empirical over theoretical variance, per coordinate.
    pub variance_ratios: Vec<f64>,
    pub mean_omega_n: f64,
    pub mean_tr1_n: f64,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VDraw {
    pub replication: u64,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVOutcome {
    pub spike_index: usize,
    pub draws_per_minor: usize,
    /// Sample `E|V_pq − E V_pq|²`.
    pub entry_variances: Vec<Vec<f64>>,
    /// Limit of `E|V_pq|²` for the spike's own frame.
    pub frame_profile: Vec<Vec<f64>>,
    /// GU(O)E profile: `(t/2)τ` on the diagonal, `τ` off it.
    pub guoe_profile: Vec<Vec<f64>>,
    pub max_rel_err_frame: f64,
    pub max_rel_err_guoe: f64,
    pub eigenvalue_comparison: LimitComparison,
    pub draws: Vec<VDraw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    FluctuationVsLimit(FluctuationOutcome),
    AsConvergence(AsOutcome),
    ResolventLimits(ResolventOutcome),
    SesquilinearClt(SesquilinearOutcome),
    EmpiricalVConvergence(EmpiricalVOutcome),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub version: String,
    pub experiment_id: String,
    pub config: ExperimentConfig,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub replications_requested: usize,
    pub replications_used: usize,
    pub discards: Vec<Discard>,
    pub theory: Vec<SpikeTheory>,
    pub outcome: Outcome,
}

impl ExperimentResult {
    pub fn fluctuation(&self) -> Option<&FluctuationOutcome> {
        match &self.outcome {
            Outcome::FluctuationVsLimit(o) => Some(o),
            _ => None,
        }
    }
}

pub fn experiment_id(cfg: &ExperimentConfig) -> String {
    format!("{}-n{}-seed{}", cfg.experiment.name(), cfg.n, cfg.seed)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RmtError::Experiment(format!("thread pool: {e}")))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Kept results tagged with their replication index, and the discards.
type Replicated<T> = (Vec<(u64, T)>, Vec<Discard>);

struct Runner {
    pool: rayon::ThreadPool,
    workers: usize,
    seed: u64,
}

impl Runner {
    fn map<T: Send>(&self, count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        self.pool.install(|| (0..count).into_par_iter().map(f).collect())
    }

    /// Runs `count` replications, separating resolvent poles from real errors.
    fn replicate<T: Send>(
        &self,
        count: usize,
        f: impl Fn(usize, &mut RngStream) -> Result<T> + Sync + Send,
    ) -> Result<Replicated<T>> {
        let seed = self.seed;
        let results = self.map(count, |r| {
            let mut rng = RngStream::new(seed, r as u64);
            f(r, &mut rng)
        });
        let mut kept = Vec::with_capacity(count);
        let mut discards = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res {
                Ok(v) => kept.push((r as u64, v)),
                Err(e @ RmtError::Pole { .. }) => {
                    log::warn!("replication {r} (seed {seed}, stream {r}) discarded: {e}");
                    discards.push(Discard {
                        replication: r as u64,
                        seed,
                        stream_id: r as u64,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let frac = discards.len() as f64 / count as f64;
        if frac > MAX_DISCARD_FRACTION {
            return Err(RmtError::Experiment(format!(
                "{} of {count} replications discarded ({:.1}%), above the {:.0}% limit",
                discards.len(),
                100.0 * frac,
                100.0 * MAX_DISCARD_FRACTION
            )));
        }
        Ok((kept, discards))
    }
}

/// Runs one experiment with `cfg.workers` threads (all cores when unset).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    faer::set_global_parallelism(Par::Seq);
    let workers = cfg.workers.unwrap_or_else(default_workers);
    let runner = Runner {
        pool: thread_pool(workers)?,
        workers,
        seed: cfg.seed,
    };
    let model = cfg.model()?;
    let start = Instant::now();
    log::info!(
        "{}: {} replications on {workers} workers",
        experiment_id(cfg),
        cfg.replications
    );
    let (outcome, used, discards) = match (cfg.experiment, cfg.field) {
        (ExperimentKind::FluctuationVsLimit, FieldKind::Real) => fluctuation::<f64>(cfg, &model, &runner)?,
        (ExperimentKind::FluctuationVsLimit, FieldKind::Complex) => fluctuation::<c64>(cfg, &model, &runner)?,
        (ExperimentKind::AsConvergence, FieldKind::Real) => as_convergence::<f64>(cfg, &model, &runner)?,
        (ExperimentKind::AsConvergence, FieldKind::Complex) => as_convergence::<c64>(cfg, &model, &runner)?,
        (ExperimentKind::ResolventLimits, FieldKind::Real) => resolvent::<f64>(cfg, &model, &runner)?,
        (ExperimentKind::ResolventLimits, FieldKind::Complex) => resolvent::<c64>(cfg, &model, &runner)?,
        (ExperimentKind::SesquilinearClt, FieldKind::Real) => sesquilinear::<f64>(cfg, &model, &runner)?,
        (ExperimentKind::SesquilinearClt, FieldKind::Complex) => sesquilinear::<c64>(cfg, &model, &runner)?,
        (ExperimentKind::EmpiricalVConvergence, FieldKind::Real) => empirical_v::<f64>(cfg, &model, &runner)?,
        (ExperimentKind::EmpiricalVConvergence, FieldKind::Complex) => empirical_v::<c64>(cfg, &model, &runner)?,
    };
    let theory = model
        .spec
        .supercritical()
        .into_iter()
        .map(|j| {
            Ok(SpikeTheory {
                spike_index: j,
                values: TheoryValues::compute(model.spec.spikes[j].theta, cfg.sigma, model.law.m4(), cfg.field.t())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    log::info!(
        "{}: {used} used, {} discarded, {elapsed:.1} s",
        experiment_id(cfg),
        discards.len()
    );
    Ok(ExperimentResult {
        version: version_string(),
        experiment_id: experiment_id(cfg),
        config: cfg.clone(),
        workers: runner.workers,
        wall_clock_seconds: elapsed,
        replications_requested: cfg.replications,
        replications_used: used,
        discards,
        theory,
        outcome,
    })
}

type Run = (Outcome, usize, Vec<Discard>);

fn fluctuation_records<T: Scalar>(
    cfg: &ExperimentConfig,
    model: &DeformedModel,
    runner: &Runner,
) -> Result<Vec<FluctuationRecord>> {
    let k_plus = model.spec.k_plus();
    let n = cfg.n;
    let (kept, _) = runner.replicate(cfg.replications, |r, rng| {
        let m = model.sample::<T>(rng);
        let (top, _) = extreme_eigenvalues_of(&m, k_plus, 0, rng)?;
        rescale_top(&top, &model.spec, n, r as u64)
    })?;
    Ok(kept.into_iter().map(|(_, rec)| rec).collect())
}

/// Rescaled outliers of every replication, without the reference comparison.
pub fn collect_fluctuations(cfg: &ExperimentConfig) -> Result<Vec<FluctuationRecord>> {
    cfg.validate()?;
    faer::set_global_parallelism(Par::Seq);
    let workers = cfg.workers.unwrap_or_else(default_workers);
    let runner = Runner {
        pool: thread_pool(workers)?,
        workers,
        seed: cfg.seed,
    };
    let model = cfg.model()?;
    match cfg.field {
        FieldKind::Real => fluctuation_records::<f64>(cfg, &model, &runner),
        FieldKind::Complex => fluctuation_records::<c64>(cfg, &model, &runner),
    }
}

/// Limit law for spike `j`, honouring an explicit override.
pub fn limit_for(
    cfg: &ExperimentConfig,
    model: &DeformedModel,
    j: usize,
    convention: RealDiagConvention,
) -> Result<LimitLaw> {
    let spike = &model.spec.spikes[j];
    let sigma = cfg.sigma;
    match cfg.limit {
        LimitSelection::Auto => select_limit(model, j, cfg.field, convention),
        LimitSelection::Convolution => {
            if spike.multiplicity != 1 {
                return Err(RmtError::Config("the convolution limit needs multiplicity 1".into()));
            }
            Ok(LimitLaw::ConvolutionMuGauss {
                law: model.law,
                v: crate::theory::v_theta(spike.theta, sigma, model.law.m4(), cfg.field.t())?,
                mu_scale: convention.mu_scale(cfg.field),
            })
        }
        LimitSelection::Guoe => Ok(LimitLaw::GuoeEigenvalues {
            kdim: spike.multiplicity,
            tau: guoe_tau(spike.theta, sigma)?,
            field: cfg.field,
        }),
        LimitSelection::Frame => Ok(LimitLaw::FrameVEigenvalues {
            frame: mat_to_rows(model.frame.block(j).frame.as_ref()),
            law: model.law,
            theta: spike.theta,
            sigma,
            field: cfg.field,
        }),
    }
}

fn reference_draws(runner: &Runner, law: &LimitLaw, count: usize, base: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = LimitSampler::new(law.clone())?;
    let seed = runner.seed;
    runner
        .map(count, |i| {
            let mut rng = RngStream::new(seed, base + i as u64);
            sampler.sample(&mut rng)
        })
        .into_iter()
        .collect()
}

/// Rank-by-rank KS of simulated vectors against reference vectors.
pub fn compare_vectors(sim: &[Vec<f64>], reference: Vec<Vec<f64>>, limit: LimitLaw) -> Result<LimitComparison> {
    let k = limit.dim();
    if sim.iter().chain(&reference).any(|v| v.len() != k) {
        return Err(RmtError::Dimension(format!("expected vectors of length {k}")));
    }
    let column = |rows: &[Vec<f64>], i: usize| rows.iter().map(|v| v[i]).collect::<Vec<f64>>();
    let mut per_rank = Vec::with_capacity(k);
    for i in 0..k {
        let a = column(sim, i);
        let b = column(&reference, i);
        per_rank.push(RankComparison {
            rank: i + 1,
            ks: ks_two_sample(&a, &b)?,
            simulated: sample_moments(&a)?,
            reference: sample_moments(&b)?,
        });
    }
    let gap = if k >= 2 {
        let g = |rows: &[Vec<f64>]| rows.iter().map(|v| v[0] - v[k - 1]).collect::<Vec<f64>>();
        Some(ks_two_sample(&g(sim), &g(&reference))?)
    } else {
        None
    };
    Ok(LimitComparison {
        limit,
        reference,
        per_rank,
        gap,
    })
}

fn fluctuation<T: Scalar>(cfg: &ExperimentConfig, model: &DeformedModel, runner: &Runner) -> Result<Run> {
    let records = fluctuation_records::<T>(cfg, model, runner)?;
    let used = records.len();
    let discards = Vec::new();
    let ref_count = cfg.reference_factor * used;
    let mut spikes = Vec::new();
    for j in cfg.target_spikes()? {
        let spike = &model.spec.spikes[j];
        let sim: Vec<Vec<f64>> = records
            .iter()
            .map(|r| {
                r.spike(j)
                    .map(|s| s.xi.clone())
                    .ok_or_else(|| RmtError::Experiment(format!("spike {j} missing from record")))
            })
            .collect::<Result<_>>()?;
        let offset = (j as u64) << 32;
        let law = limit_for(cfg, model, j, cfg.real_diag_convention)?;
        let reference = reference_draws(runner, &law, ref_count, REFERENCE_STREAM_BASE + offset)?;
        let primary = compare_vectors(&sim, reference, law.clone())?;
        let alternate = match (&law, cfg.field) {
            (LimitLaw::ConvolutionMuGauss { .. }, FieldKind::Real) => {
                let other = match cfg.real_diag_convention {
                    RealDiagConvention::Plain => RealDiagConvention::ScaledDiagonal,
                    RealDiagConvention::ScaledDiagonal => RealDiagConvention::Plain,
                };
                let alt_law = limit_for(cfg, model, j, other)?;
                let reference = reference_draws(runner, &alt_law, ref_count, ALT_REFERENCE_STREAM_BASE + offset)?;
                Some(AlternateComparison {
                    convention: other,
                    comparison: compare_vectors(&sim, reference, alt_law)?,
                })
            }
            _ => None,
        };
        let gaussian_fit = (0..spike.multiplicity)
            .map(|i| {
                let x: Vec<f64> = sim.iter().map(|v| v[i]).collect();
                let m = sample_moments(&x)?;
                ks_one_sample(&x, |t| normal_cdf(t, m.mean, m.variance))
            })
            .collect::<Result<_>>()?;
        spikes.push(SpikeComparison {
            spike_index: j,
            theta: spike.theta,
            multiplicity: spike.multiplicity,
            primary,
            alternate,
            gaussian_fit,
        });
    }
    Ok((
        Outcome::FluctuationVsLimit(FluctuationOutcome { records, spikes }),
        used,
        discards,
    ))
}

fn as_convergence<T: Scalar>(cfg: &ExperimentConfig, model: &DeformedModel, runner: &Runner) -> Result<Run> {
    let spec = &model.spec;
    let sigma = cfg.sigma;
    let n = cfg.n;
    let delta = match cfg.delta.or_else(|| spec.default_delta()) {
        Some(d) => d,
        None => return Err(RmtError::Config("no supercritical spike: set delta explicitly".into())),
    };
    let k_plus = spec.k_plus();
    let k_minus = spec.k_minus();
    let n_top = (k_plus + 1).min(n);
    let n_bottom = (k_minus + 1).min(n - n_top);
    // supercritical spikes with the 0-based rank of their first outlier, counted from
    // the top for positive spikes and from the bottom for negative ones
    let mut groups: Vec<(usize, bool, usize)> = Vec::new();
    for j in spec.supercritical() {
        groups.push((j, true, spec.rank_offset(j)));
    }
    for j in spec.supercritical_negative() {
        let off: usize = spec
            .supercritical_negative()
            .into_iter()
            .filter(|&i| i > j)
            .map(|i| spec.spikes[i].multiplicity)
            .sum();
        groups.push((j, false, off));
    }
    let rhos: Vec<f64> = groups
        .iter()
        .map(|&(j, _, _)| rho_theta(spec.spikes[j].theta, sigma))
        .collect::<Result<_>>()?;

    let (kept, discards) = runner.replicate(cfg.replications, |r, rng| {
        let m = model.sample::<T>(rng);
        let (mut top, mut bottom) = extreme_eigenvalues_of(&m, n_top, n_bottom, rng)?;
        let mut extremes: Vec<f64> = top.iter().chain(&bottom).copied().collect();
        let mut count = count_outliers(&extremes, sigma, delta)?;
        if (count.above >= n_top && n_top < n) || (count.below >= n_bottom && n_bottom < n - n_top) {
            let e = eigenvalues_sorted(&m)?;
            count = count_outliers(e.eigenvalues(), sigma, delta)?;
            top = e.eigenvalues().to_vec();
            bottom = e.eigenvalues().iter().rev().copied().collect();
            extremes.clear();
        }
        let deviations = groups
            .iter()
            .zip(&rhos)
            .map(|(&(j, positive, off), rho)| {
                let mult = spec.spikes[j].multiplicity;
                let src = if positive { &top } else { &bottom };
                src[off..off + mult].iter().map(|l| (l - rho).abs()).collect()
            })
            .collect();
        Ok(AsReplication {
            replication: r as u64,
            above: count.above,
            below: count.below,
            deviations,
        })
    })?;
    let reps: Vec<AsReplication> = kept.into_iter().map(|(_, v)| v).collect();
    let used = reps.len();
    let count_ok = reps.iter().filter(|r| r.above == k_plus && r.below == k_minus).count();
    let spikes = groups
        .iter()
        .enumerate()
        .map(|(g, &(j, _, _))| {
            let mult = spec.spikes[j].multiplicity;
            let within = (0..mult)
                .map(|i| reps.iter().filter(|r| r.deviations[g][i] < cfg.as_tolerance).count() as f64 / used as f64)
                .collect();
            let max_deviation = reps
                .iter()
                .flat_map(|r| r.deviations[g].iter().copied())
                .fold(0.0, f64::max);
            AsSpikeSummary {
                spike_index: j,
                theta: spec.spikes[j].theta,
                rho: rhos[g],
                within_tolerance: within,
                max_deviation,
            }
        })
        .collect();
    Ok((
        Outcome::AsConvergence(AsOutcome {
            delta,
            tolerance: cfg.as_tolerance,
            expected_above: k_plus,
            expected_below: k_minus,
            count_frequency: count_ok as f64 / used as f64,
            spikes,
            replications: reps,
        }),
        used,
        discards,
    ))
}

fn resolvent<T: Scalar>(cfg: &ExperimentConfig, model: &DeformedModel, runner: &Runner) -> Result<Run> {
    let j = cfg.primary_spike()?;
    let theta = model.spec.spikes[j].theta;
    let rho = rho_theta(theta, cfg.sigma)?;
    let (l1, l2, l3) = resolvent_limits(theta, cfg.sigma)?;
    let n = cfg.n;
    let k = model.frame.k();
    let (kept, discards) = runner.replicate(cfg.replications, |_, rng| {
        let m = model.sample::<T>(rng);
        resolvent_traces(&m.principal(k, n - k), rho)
    })?;
    let used = kept.len();
    let uf = used as f64;
    let sqrt_n = (n as f64).sqrt();
    let mean = |f: &dyn Fn(&ResolventTraces) -> f64| kept.iter().map(|(_, t)| f(t)).sum::<f64>() / uf;
    Ok((
        Outcome::ResolventLimits(ResolventOutcome {
            spike_index: j,
            rho,
            minor_dim: n - k,
            limit_tr1: l1,
            limit_tr2: l2,
            limit_diag2: l3,
            mean_tr1: mean(&|t| t.tr1),
            mean_tr2: mean(&|t| t.tr2),
            mean_diag2: mean(&|t| t.diag2),
            mean_scaled_tr1: mean(&|t| sqrt_n * (t.tr1 - l1)),
            mean_abs_scaled_tr1: mean(&|t| (sqrt_n * (t.tr1 - l1)).abs()),
            traces: kept,
        }),
        used,
        discards,
    ))
}

struct MinorForms {
    forms: Vec<Vec<f64>>,
    omega_n: f64,
    tr1_n: f64,
}

fn sesquilinear<T: Scalar>(cfg: &ExperimentConfig, model: &DeformedModel, runner: &Runner) -> Result<Run> {
    let j = cfg.primary_spike()?;
    let theta = model.spec.spikes[j].theta;
    let sigma = cfg.sigma;
    let rho = rho_theta(theta, sigma)?;
    let n = cfg.n;
    let k = model.frame.k();
    let m = n - k;
    let cov = cfg.form_covariance.clone().unwrap_or_else(|| vec![vec![1.0]]);
    let kdim = cov.len();
    let lcov = covariance_factor(&cov)?;
    let law = model.law;
    let complex = cfg.field == FieldKind::Complex;
    let per = cfg.forms_per_minor;
    let minors = cfg.replications.div_ceil(per);
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let a = model.frame.minor_perturbation();

    let (kept, discards) = runner.replicate(minors, |r, rng| {
        let forms_here = per.min(cfg.replications - r * per);
        let w = sample_wigner::<T>(m, &law, rng);
        let llt = shifted_cholesky(w.as_ref(), inv_sqrt_n, a, rho, rng)?;
        // L⁻¹, so that Ĝ = L⁻* L⁻¹
        let mut linv = Mat::<T>::identity(m, m);
        llt.L().solve_lower_triangular_in_place(linv.as_mut());
        let gdiag: Vec<f64> = (0..m)
            .map(|i| (i..m).map(|row| linv[(row, i)].abs_sq()).sum())
            .collect();
        let tr = gdiag.iter().sum::<f64>();
        let omega_n = gdiag.iter().map(|g| g * g).sum::<f64>() / m as f64;
        let cols = kdim * forms_here;
        let std_draw = |rng: &mut RngStream| law.sample(rng) / sigma;
        let mut x = Mat::<T>::zeros(m, cols);
        for f in 0..forms_here {
            for i in 0..m {
                let e: Vec<f64> = (0..kdim).map(|_| std_draw(rng)).collect();
                let e2: Vec<f64> = if complex {
                    (0..kdim).map(|_| std_draw(rng)).collect()
                } else {
                    Vec::new()
                };
                for l in 0..kdim {
                    let re: f64 = (0..=l).map(|q| lcov[l][q] * e[q]).sum();
                    x[(i, f * kdim + l)] = if complex {
                        let im: f64 = (0..=l).map(|q| lcov[l][q] * e2[q]).sum();
                        T::from_parts(re, im).scale(std::f64::consts::FRAC_1_SQRT_2)
                    } else {
                        T::from_real(re)
                    };
                }
            }
        }
        let mut q = Mat::<T>::zeros(m, cols);
        matmul_with_conj(
            q.as_mut(),
            Accum::Replace,
            linv.as_ref(),
            Conj::No,
            x.as_ref(),
            Conj::No,
            T::from_real(1.0),
            Par::Seq,
        );
        let norm_m = 1.0 / (m as f64).sqrt();
        let forms = (0..forms_here)
            .map(|f| {
                (0..kdim)
                    .map(|l| {
                        let c = f * kdim + l;
                        let quad: f64 = (0..m).map(|i| q[(i, c)].abs_sq()).sum();
                        (quad - cov[l][l] * tr) * norm_m
                    })
                    .collect()
            })
            .collect();
        Ok(MinorForms {
            forms,
            omega_n,
            tr1_n: tr / m as f64,
        })
    })?;
    let used_minors = kept.len() as f64;
    let mean_omega_n = kept.iter().map(|(_, f)| f.omega_n).sum::<f64>() / used_minors;
    let mean_tr1_n = kept.iter().map(|(_, f)| f.tr1_n).sum::<f64>() / used_minors;
    let samples: Vec<Vec<f64>> = kept.into_iter().flat_map(|(_, f)| f.forms).collect();
    let discards = discards
        .into_iter()
        .map(|d| Discard {
            reason: format!("{} (minor {}, {} forms)", d.reason, d.replication, per),
            ..d
        })
        .collect();
    let (_, tr2n, omega) = resolvent_limits(theta, sigma)?;
    let moments = FormMoments::identical_linear(&cov, law.excess_kurtosis(), complex)?;
    let theory = sesquilinear_covariance(omega, tr2n, tr2n, moments)?;
    let empirical = empirical_covariance(&samples)?;
    let b = theory.b_real();
    let frob = frobenius_relative(&empirical, &b)?;
    let variance_ratios = (0..kdim).map(|l| empirical[l][l] / b[l][l]).collect();
    let used = samples.len();
    Ok((
        Outcome::SesquilinearClt(SesquilinearOutcome {
            spike_index: j,
            minor_dim: m,
            forms_per_minor: per,
            theory,
            empirical,
            frobenius_relative: frob,
            variance_ratios,
            mean_omega_n,
            mean_tr1_n,
            samples,
        }),
        used,
        discards,
    ))
}

fn empirical_v<T: Scalar>(cfg: &ExperimentConfig, model: &DeformedModel, runner: &Runner) -> Result<Run> {
    let j = cfg.primary_spike()?;
    let spike = &model.spec.spikes[j];
    let sigma = cfg.sigma;
    let per = cfg.draws_per_minor;
    let minors = cfg.replications.div_ceil(per);
    let (kept, discards) = runner.replicate(minors, |r, rng| {
        let here = per.min(cfg.replications - r * per);
        empirical_v_batch::<T>(model, j, here, rng)
    })?;
    let mut draws = Vec::new();
    for (r, batch) in kept {
        for v in batch {
            draws.push(v_draw(r, &v)?);
        }
    }
    let used = draws.len();
    let kj = spike.multiplicity;

    let mut entry_variances = vec![vec![0.0; kj]; kj];
    for p in 0..kj {
        for q in 0..kj {
            let mr = draws.iter().map(|d| d.re[p][q]).sum::<f64>() / used as f64;
            let mi = draws.iter().map(|d| d.im[p][q]).sum::<f64>() / used as f64;
            entry_variances[p][q] = draws
                .iter()
                .map(|d| (d.re[p][q] - mr).powi(2) + (d.im[p][q] - mi).powi(2))
                .sum::<f64>()
                / (used as f64 - 1.0);
        }
    }
    let (vpp, vpl) = h_variance_profile(spike.theta, sigma, model.law.m4(), cfg.field.t())?;
    let frame_profile =
        frame_v_entry_variances(model.frame.block(j).frame.as_ref(), sigma * sigma, vpp, vpl, cfg.field);
    let tau = guoe_tau(spike.theta, sigma)?;
    let guoe_profile: Vec<Vec<f64>> = (0..kj)
        .map(|p| {
            (0..kj)
                .map(|q| if p == q { cfg.field.t() as f64 / 2.0 * tau } else { tau })
                .collect()
        })
        .collect();
    let max_rel = |profile: &[Vec<f64>]| {
        let mut worst: f64 = 0.0;
        for p in 0..kj {
            for q in p..kj {
                worst = worst.max((entry_variances[p][q] - profile[p][q]).abs() / profile[p][q]);
            }
        }
        worst
    };
    let max_rel_err_frame = max_rel(&frame_profile);
    let max_rel_err_guoe = max_rel(&guoe_profile);
    let law = limit_for(cfg, model, j, cfg.real_diag_convention)?;
    let reference = reference_draws(
        runner,
        &law,
        cfg.reference_factor * used,
        REFERENCE_STREAM_BASE + ((j as u64) << 32),
    )?;
    let eigs: Vec<Vec<f64>> = draws.iter().map(|d| d.eigenvalues.clone()).collect();
    let eigenvalue_comparison = compare_vectors(&eigs, reference, law)?;
    Ok((
        Outcome::EmpiricalVConvergence(EmpiricalVOutcome {
            spike_index: j,
            draws_per_minor: per,
            entry_variances,
            frame_profile,
            guoe_profile,
            max_rel_err_frame,
            max_rel_err_guoe,
            eigenvalue_comparison,
            draws,
        }),
        used,
        discards,
    ))
}

fn v_draw<T: Scalar>(r: u64, v: &HermitianMatrix<T>) -> Result<VDraw> {
    let k = v.dim();
    Ok(VDraw {
        replication: r,
        re: (0..k).map(|p| (0..k).map(|q| v.get(p, q).re()).collect()).collect(),
        im: (0..k).map(|p| (0..k).map(|q| v.get(p, q).im()).collect()).collect(),
        eigenvalues: eigenvalues_sorted(v)?.eigenvalues().to_vec(),
    })
}

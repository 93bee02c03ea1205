//! Experiment orchestration: flat TOML configs with command-line overrides,
//! seeded multi-trial runs with byte-deterministic CSV output, power-law rate
//! fitting, the hard-stream scaling sweep, and initialization diagnostics.
//!
//! Determinism contract: a config plus a master seed fully determines every
//! output byte. Trials run concurrently but are aggregated in trial order, so
//! `--jobs` never changes the files.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rayon::prelude::*;
use toml::Value;

use crate::error::{Error, Result};
use crate::metrics::{self, EigenPartition, MetricEngine, MetricRecord};
use crate::oja::{self, ObserveCtx, SketchState};
use crate::oracle;
use crate::rng;
use crate::schedules::{
    gap_dep_schedule_opts, gap_free_schedule, ojapp_plan_opts, OjaPPPlan, Schedule,
    ScheduleConstants,
};
use crate::spectra::{self, SampleSource, Spectrum, SpectrumRecipe};

/// Version stamp written into every data file header.
pub const FORMAT_VERSION: u32 = 1;

/// Default number of recorded time points when no stride is configured.
const DEFAULT_RECORD_POINTS: u64 = 500;

// ---------------------------------------------------------------------------
// Config enums
// ---------------------------------------------------------------------------

/// Which estimator a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Plain streaming rank-k updates from a random start.
    Oja,
    /// The staged warm-start variant with halving column installments.
    OjaPP,
    /// Batch baseline: empirical covariance plus a dense eigensolver.
    Offline,
    /// Rank-k stream, evaluated on a random k′-column subset of the sketch.
    OjaTradeoff,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Oja => "oja",
            Algorithm::OjaPP => "ojapp",
            Algorithm::Offline => "offline",
            Algorithm::OjaTradeoff => "oja-tradeoff",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "oja" => Ok(Algorithm::Oja),
            "ojapp" => Ok(Algorithm::OjaPP),
            "offline" => Ok(Algorithm::Offline),
            "oja-tradeoff" => Ok(Algorithm::OjaTradeoff),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?}; expected oja, ojapp, offline, or oja-tradeoff"
            ))),
        }
    }
}

/// Which synthetic distribution feeds the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumKind {
    /// Top-k at `λ_top`, then a clean drop of `gap`, then a flat tail.
    FlatGap,
    /// Geometrically decaying eigenvalues.
    Geometric,
    /// A cluster of `m` eigenvalues packed within `ρ` below the top block.
    Clustered,
    /// Eigenvalues given verbatim.
    Explicit,
    /// The two-point block stream with a hidden bit vector (dimension `2k`).
    Hard,
    /// The hard stream padded with scaled copies to widen the near-top band.
    HardPadded,
}

impl SpectrumKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpectrumKind::FlatGap => "flat_gap",
            SpectrumKind::Geometric => "geometric",
            SpectrumKind::Clustered => "clustered",
            SpectrumKind::Explicit => "explicit",
            SpectrumKind::Hard => "hard",
            SpectrumKind::HardPadded => "hard_padded",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "flat_gap" => Ok(SpectrumKind::FlatGap),
            "geometric" => Ok(SpectrumKind::Geometric),
            "clustered" => Ok(SpectrumKind::Clustered),
            "explicit" => Ok(SpectrumKind::Explicit),
            "hard" => Ok(SpectrumKind::Hard),
            "hard_padded" => Ok(SpectrumKind::HardPadded),
            other => Err(Error::Config(format!(
                "unknown spectrum {other:?}; expected flat_gap, geometric, clustered, \
                 explicit, hard, or hard_padded"
            ))),
        }
    }

    fn is_hard(self) -> bool {
        matches!(self, SpectrumKind::Hard | SpectrumKind::HardPadded)
    }
}

/// Which learning-rate parametrization the run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Keyed to the eigengap at k.
    GapDep,
    /// Keyed to the band width ρ, tolerating eigenvalue crowds near the top.
    GapFree,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::GapDep => "gap_dep",
            ScheduleKind::GapFree => "gap_free",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "gap_dep" => Ok(ScheduleKind::GapDep),
            "gap_free" => Ok(ScheduleKind::GapFree),
            other => Err(Error::Config(format!(
                "unknown schedule {other:?}; expected gap_dep or gap_free"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

/// One experiment: problem instance, algorithm, schedule knobs, and run
/// bookkeeping. Parsed from a flat TOML table; every key can also be set from
/// the command line with `--set key=value`.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Experiment name; names the output files.
    pub name: String,
    /// Ambient dimension.
    pub d: usize,
    /// Sketch rank.
    pub k: usize,
    /// Estimator to run.
    pub algorithm: Algorithm,
    /// Evaluation rank for `oja-tradeoff` (columns kept), defaults to `k`.
    pub k_prime: usize,
    /// Stream distribution.
    pub spectrum: SpectrumKind,
    /// Largest eigenvalue; default saturates the unit trace budget.
    pub lambda_top: Option<f64>,
    /// Eigengap at k (flat_gap shape parameter and gap_dep schedule input).
    pub gap: Option<f64>,
    /// Near-top band width ρ (clustered shape parameter and gap_free input).
    pub rho: Option<f64>,
    /// Cluster size for the clustered spectrum; defaults to `k`.
    pub cluster_m: usize,
    /// Tail eigenvalue for the clustered spectrum; default `λ_top − ρ`.
    pub lambda_tail: Option<f64>,
    /// First eigenvalue of the geometric spectrum; default saturates trace.
    pub geo_first: Option<f64>,
    /// Decay ratio of the geometric spectrum.
    pub geo_ratio: f64,
    /// Explicit eigenvalue list (spectrum = "explicit").
    pub eigenvalues: Vec<f64>,
    /// Rotate the eigenbasis by a seeded orthogonal matrix instead of using
    /// coordinate axes.
    pub rotate_basis: bool,
    /// Hard stream: nominal top eigenvalue λ.
    pub hard_lambda: Option<f64>,
    /// Hard stream: eigengap budget δ.
    pub hard_delta: Option<f64>,
    /// Extra near-top multiplicity for `hard_padded` (a multiple of k).
    pub pad_m: usize,
    /// Learning-rate parametrization; default gap_dep for flat_gap/hard,
    /// gap_free otherwise.
    pub schedule: Option<ScheduleKind>,
    /// Failure-probability budget p of the schedule.
    pub p: f64,
    /// Tail probability q for the per-sample diagnostic bound.
    pub q: f64,
    /// Target accuracy ε of the schedule (sets the final-phase length).
    pub eps: f64,
    /// Schedule constants (c_t0, c_t1, c_eta, log_factor).
    pub constants: ScheduleConstants,
    /// Drop the plateau phase of the gap-keyed schedule.
    pub collapse_plateau: bool,
    /// Run every staged epoch's mid-phase at the flat warmup rate.
    pub flat_epoch_rates: bool,
    /// Override the stream length (default: the schedule's natural total).
    pub t_total: Option<u64>,
    /// Number of independent trials.
    pub trials: u64,
    /// Master seed; everything else derives from it.
    pub seed: u64,
    /// Record stride in steps; 0 means auto (≈500 points).
    pub stride: u64,
    /// Output directory; default `runs/<name>`.
    pub out: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "d",
    "k",
    "algorithm",
    "k_prime",
    "spectrum",
    "lambda_top",
    "gap",
    "rho",
    "cluster_m",
    "lambda_tail",
    "geo_first",
    "geo_ratio",
    "eigenvalues",
    "rotate_basis",
    "hard_lambda",
    "hard_delta",
    "pad_m",
    "schedule",
    "p",
    "q",
    "eps",
    "c_t0",
    "c_t1",
    "c_eta",
    "log_factor",
    "collapse_plateau",
    "flat_epoch_rates",
    "t_total",
    "trials",
    "seed",
    "stride",
    "out",
];

fn take_f64(t: &mut toml::Table, key: &str) -> Result<Option<f64>> {
    match t.remove(key) {
        None => Ok(None),
        Some(Value::Integer(i)) => Ok(Some(i as f64)),
        Some(Value::Float(f)) => Ok(Some(f)),
        Some(other) => Err(Error::Config(format!(
            "key {key:?} wants a number, got {}",
            other.type_str()
        ))),
    }
}

fn take_u64(t: &mut toml::Table, key: &str) -> Result<Option<u64>> {
    match t.remove(key) {
        None => Ok(None),
        Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
        Some(Value::Integer(i)) => Err(Error::Config(format!(
            "key {key:?} wants a nonnegative integer, got {i}"
        ))),
        Some(other) => Err(Error::Config(format!(
            "key {key:?} wants an integer, got {}",
            other.type_str()
        ))),
    }
}

fn take_usize(t: &mut toml::Table, key: &str) -> Result<Option<usize>> {
    Ok(take_u64(t, key)?.map(|v| v as usize))
}

fn take_bool(t: &mut toml::Table, key: &str) -> Result<Option<bool>> {
    match t.remove(key) {
        None => Ok(None),
        Some(Value::Boolean(b)) => Ok(Some(b)),
        Some(other) => Err(Error::Config(format!(
            "key {key:?} wants a boolean, got {}",
            other.type_str()
        ))),
    }
}

fn take_string(t: &mut toml::Table, key: &str) -> Result<Option<String>> {
    match t.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(Error::Config(format!(
            "key {key:?} wants a string, got {}",
            other.type_str()
        ))),
    }
}

fn take_f64_array(t: &mut toml::Table, key: &str) -> Result<Option<Vec<f64>>> {
    match t.remove(key) {
        None => Ok(None),
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::Integer(i) => out.push(i as f64),
                    Value::Float(f) => out.push(f),
                    other => {
                        return Err(Error::Config(format!(
                            "key {key:?} wants an array of numbers, found a {}",
                            other.type_str()
                        )))
                    }
                }
            }
            Ok(Some(out))
        }
        Some(other) => Err(Error::Config(format!(
            "key {key:?} wants an array, got {}",
            other.type_str()
        ))),
    }
}

impl ExperimentConfig {
    /// Parse a flat TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("TOML parse failure: {e}")))?;
        Self::from_table(table)
    }

    /// Consume a parsed table, rejecting unknown keys by name.
    pub fn from_table(mut t: toml::Table) -> Result<Self> {
        let name = take_string(&mut t, "name")?.unwrap_or_else(|| "experiment".to_string());
        let d = take_usize(&mut t, "d")?
            .ok_or_else(|| Error::Config("missing required key \"d\" (dimension)".into()))?;
        let k = take_usize(&mut t, "k")?
            .ok_or_else(|| Error::Config("missing required key \"k\" (sketch rank)".into()))?;
        let algorithm = match take_string(&mut t, "algorithm")? {
            Some(s) => Algorithm::parse(&s)?,
            None => Algorithm::Oja,
        };
        let spectrum = match take_string(&mut t, "spectrum")? {
            Some(s) => SpectrumKind::parse(&s)?,
            None => {
                return Err(Error::Config(
                    "missing required key \"spectrum\" (flat_gap, geometric, clustered, \
                     explicit, hard, or hard_padded)"
                        .into(),
                ))
            }
        };
        let k_prime = take_usize(&mut t, "k_prime")?.unwrap_or(k);
        let schedule = match take_string(&mut t, "schedule")? {
            Some(s) => Some(ScheduleKind::parse(&s)?),
            None => None,
        };
        let constants = ScheduleConstants {
            c_t0: take_f64(&mut t, "c_t0")?.unwrap_or(1.0),
            c_t1: take_f64(&mut t, "c_t1")?.unwrap_or(1.0),
            c_eta: take_f64(&mut t, "c_eta")?.unwrap_or(1.0),
            log_factor: take_f64(&mut t, "log_factor")?.unwrap_or(1.0),
        };
        let cfg = ExperimentConfig {
            name,
            d,
            k,
            algorithm,
            k_prime,
            spectrum,
            lambda_top: take_f64(&mut t, "lambda_top")?,
            gap: take_f64(&mut t, "gap")?,
            rho: take_f64(&mut t, "rho")?,
            cluster_m: take_usize(&mut t, "cluster_m")?.unwrap_or(k),
            lambda_tail: take_f64(&mut t, "lambda_tail")?,
            geo_first: take_f64(&mut t, "geo_first")?,
            geo_ratio: take_f64(&mut t, "geo_ratio")?.unwrap_or(0.9),
            eigenvalues: take_f64_array(&mut t, "eigenvalues")?.unwrap_or_default(),
            rotate_basis: take_bool(&mut t, "rotate_basis")?.unwrap_or(false),
            hard_lambda: take_f64(&mut t, "hard_lambda")?,
            hard_delta: take_f64(&mut t, "hard_delta")?,
            pad_m: take_usize(&mut t, "pad_m")?.unwrap_or(0),
            schedule,
            p: take_f64(&mut t, "p")?.unwrap_or(0.5),
            q: take_f64(&mut t, "q")?.unwrap_or(0.05),
            eps: take_f64(&mut t, "eps")?.unwrap_or(1.0),
            constants,
            collapse_plateau: take_bool(&mut t, "collapse_plateau")?.unwrap_or(false),
            flat_epoch_rates: take_bool(&mut t, "flat_epoch_rates")?.unwrap_or(false),
            t_total: take_u64(&mut t, "t_total")?,
            trials: take_u64(&mut t, "trials")?.unwrap_or(1),
            seed: take_u64(&mut t, "seed")?.unwrap_or(0),
            stride: take_u64(&mut t, "stride")?.unwrap_or(0),
            out: take_string(&mut t, "out")?.map(PathBuf::from),
        };
        if !t.is_empty() {
            let mut unknown: Vec<&str> = t.keys().map(String::as_str).collect();
            unknown.sort_unstable();
            return Err(Error::Config(format!(
                "unknown config keys: {}; known keys are {}",
                unknown.join(", "),
                KNOWN_KEYS.join(", ")
            )));
        }
        Ok(cfg)
    }

    /// Apply one `KEY=VALUE` override to a raw table: the value is parsed as a
    /// TOML fragment, falling back to a bare string.
    pub fn apply_set(table: &mut toml::Table, kv: &str) -> Result<()> {
        let (key, val) = kv.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {kv:?} is not of the form KEY=VALUE"))
        })?;
        let key = key.trim();
        let val = val.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("override {kv:?} has an empty key")));
        }
        match format!("{key} = {val}").parse::<toml::Table>() {
            Ok(frag) => {
                for (k, v) in frag {
                    table.insert(k, v);
                }
            }
            Err(_) => {
                table.insert(key.to_string(), Value::String(val.to_string()));
            }
        }
        Ok(())
    }

    /// The output directory, defaulting to `runs/<name>`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(&self.name))
    }

    /// Deterministic `(key, value)` listing of every field, for file headers.
    pub fn echo(&self) -> Vec<(String, String)> {
        fn opt(v: &Option<f64>) -> String {
            v.map_or_else(|| "auto".into(), |x| x.to_string())
        }
        let mut lines = vec![
            ("name".into(), self.name.clone()),
            ("d".into(), self.d.to_string()),
            ("k".into(), self.k.to_string()),
            ("algorithm".into(), self.algorithm.as_str().into()),
            ("k_prime".into(), self.k_prime.to_string()),
            ("spectrum".into(), self.spectrum.as_str().into()),
            ("lambda_top".into(), opt(&self.lambda_top)),
            ("gap".into(), opt(&self.gap)),
            ("rho".into(), opt(&self.rho)),
            ("cluster_m".into(), self.cluster_m.to_string()),
            ("lambda_tail".into(), opt(&self.lambda_tail)),
            ("geo_first".into(), opt(&self.geo_first)),
            ("geo_ratio".into(), self.geo_ratio.to_string()),
            ("rotate_basis".into(), self.rotate_basis.to_string()),
            ("hard_lambda".into(), opt(&self.hard_lambda)),
            ("hard_delta".into(), opt(&self.hard_delta)),
            ("pad_m".into(), self.pad_m.to_string()),
            (
                "schedule".into(),
                self.schedule.map_or("auto".into(), |s| s.as_str().to_string()),
            ),
            ("p".into(), self.p.to_string()),
            ("q".into(), self.q.to_string()),
            ("eps".into(), self.eps.to_string()),
            ("c_t0".into(), self.constants.c_t0.to_string()),
            ("c_t1".into(), self.constants.c_t1.to_string()),
            ("c_eta".into(), self.constants.c_eta.to_string()),
            ("log_factor".into(), self.constants.log_factor.to_string()),
            ("collapse_plateau".into(), self.collapse_plateau.to_string()),
            ("flat_epoch_rates".into(), self.flat_epoch_rates.to_string()),
            (
                "t_total".into(),
                self.t_total.map_or("auto".into(), |t| t.to_string()),
            ),
            ("trials".into(), self.trials.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("stride".into(), self.stride.to_string()),
            ("out".into(), self.out_dir().display().to_string()),
        ];
        if !self.eigenvalues.is_empty() {
            let vals: Vec<String> = self.eigenvalues.iter().map(|v| v.to_string()).collect();
            lines.push(("eigenvalues".into(), vals.join(" ")));
        }
        lines
    }
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

/// A validated, fully resolved experiment: spectra built, schedule lengths
/// fixed, record times laid out.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: ExperimentConfig,
    /// The stream's spectrum, `None` for the hard kinds (those are built per
    /// trial around the hidden bit vector).
    pub base_spectrum: Option<Spectrum>,
    /// Ground-truth partition for the metric engine, when the spectrum is
    /// trial-independent.
    pub base_partition: Option<EigenPartition>,
    pub sched_kind: ScheduleKind,
    pub schedule: Schedule,
    /// Staged plan, present exactly when the algorithm is the warm-start one.
    pub plan: Option<OjaPPPlan>,
    /// Stream length actually run.
    pub total: u64,
    /// Strictly increasing observation steps, always ending at `total`.
    pub record_times: Vec<u64>,
    /// Effective eigengap fed to the gap-keyed machinery.
    pub gap_eff: f64,
    /// Band width used for the metric partition.
    pub part_rho: f64,
    /// Resolved Λ1 (band mass) or Λ (top-k mass) for headers.
    pub lam1: f64,
    /// Resolved Λ2 (tail mass); 0 under the gap-keyed parametrization.
    pub lam2: f64,
    pub out_dir: PathBuf,
}

fn build_base_spectrum(cfg: &ExperimentConfig) -> Result<Option<Spectrum>> {
    let (d, k) = (cfg.d, cfg.k);
    let recipe = match cfg.spectrum {
        SpectrumKind::Hard | SpectrumKind::HardPadded => return Ok(None),
        SpectrumKind::FlatGap => {
            let gap = cfg.gap.ok_or_else(|| {
                Error::Config("spectrum = flat_gap needs \"gap\" (eigengap at k)".into())
            })?;
            let lambda_top = cfg
                .lambda_top
                .unwrap_or_else(|| (1.0 + (d - k) as f64 * gap) / d as f64);
            SpectrumRecipe::FlatGap { lambda_top, gap }
        }
        SpectrumKind::Geometric => {
            let ratio = cfg.geo_ratio;
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(Error::Config(format!(
                    "geo_ratio must be positive and finite, got {ratio}"
                )));
            }
            let first = cfg.geo_first.unwrap_or_else(|| {
                if (ratio - 1.0).abs() < 1e-12 {
                    1.0 / d as f64
                } else {
                    (1.0 - ratio) / (1.0 - ratio.powi(d as i32))
                }
            });
            SpectrumRecipe::Geometric { first, ratio }
        }
        SpectrumKind::Clustered => {
            let rho = cfg.rho.ok_or_else(|| {
                Error::Config("spectrum = clustered needs \"rho\" (band width)".into())
            })?;
            let m = cfg.cluster_m;
            if k + m > d {
                return Err(Error::Config(format!(
                    "cluster does not fit: k + cluster_m = {} exceeds d = {d}",
                    k + m
                )));
            }
            let tail_count = (d - k - m) as f64;
            let (lambda_top, lambda_tail) = match (cfg.lambda_top, cfg.lambda_tail) {
                (Some(top), Some(tail)) => (top, tail),
                (Some(top), None) => (top, top - rho),
                (None, Some(tail)) => {
                    let top = (1.0 + rho * m as f64 / 2.0 - tail_count * tail)
                        / (k + m) as f64;
                    (top, tail)
                }
                (None, None) => {
                    let top = (1.0 + rho * (m as f64 / 2.0 + tail_count)) / d as f64;
                    (top, top - rho)
                }
            };
            SpectrumRecipe::Clustered {
                lambda_top,
                rho,
                m,
                lambda_tail,
            }
        }
        SpectrumKind::Explicit => {
            if cfg.eigenvalues.is_empty() {
                return Err(Error::Config(
                    "spectrum = explicit needs \"eigenvalues\" (an array of d values)".into(),
                ));
            }
            SpectrumRecipe::Explicit {
                eigenvalues: cfg.eigenvalues.clone(),
            }
        }
    };
    let spec = spectra::make_spectrum(&recipe, d, k)?;
    if cfg.rotate_basis {
        let basis = spectra::haar_basis(d, rng::derive_seed(cfg.seed, rng::stream::BASIS))?;
        return Ok(Some(Spectrum::new(spec.eigenvalues().to_vec(), Some(basis))?));
    }
    Ok(Some(spec))
}

/// Reference spectrum for schedule sizing. Hard kinds use the all-balanced
/// bit vector: its spectrum is the least favorable admissible one (putting
/// every block's top eigenvalue at λ) and does not depend on the run length,
/// so schedule lengths stay independent of the hidden bits.
fn reference_spectrum(cfg: &ExperimentConfig, base: &Option<Spectrum>) -> Result<Spectrum> {
    if let Some(spec) = base {
        return Ok(spec.clone());
    }
    let (lambda, delta) = hard_params(cfg)?;
    let t_probe = (spectra::HARD_INSTANCE_C_FLOOR * lambda / (delta * delta)).ceil() as u64 + 1;
    let probe = spectra::lower_bound_source(cfg.k, lambda, delta, t_probe, &vec![false; cfg.k], 0)?;
    if cfg.spectrum == SpectrumKind::HardPadded {
        let padded = spectra::gapfree_pad(probe, cfg.pad_m, cfg.k, 0)?;
        return Ok(padded.true_sigma());
    }
    Ok(probe.true_sigma())
}

fn hard_params(cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let lambda = cfg.hard_lambda.ok_or_else(|| {
        Error::Config("hard spectra need \"hard_lambda\" (nominal top eigenvalue)".into())
    })?;
    let delta = cfg.hard_delta.ok_or_else(|| {
        Error::Config("hard spectra need \"hard_delta\" (eigengap budget)".into())
    })?;
    Ok((lambda, delta))
}

fn compute_record_times(
    total: u64,
    stride_cfg: u64,
    schedule: &Schedule,
    offline: bool,
) -> Vec<u64> {
    if offline {
        return vec![total];
    }
    let stride = if stride_cfg > 0 {
        stride_cfg
    } else {
        (total.div_ceil(DEFAULT_RECORD_POINTS)).max(1)
    };
    let mut times = vec![0];
    let mut t = stride;
    while t < total {
        times.push(t);
        t += stride;
    }
    times.push(total);
    for b in schedule.boundaries() {
        if b <= total {
            times.push(b);
        }
    }
    times.sort_unstable();
    times.dedup();
    times
}

/// Validate a config and fix every derived quantity.
pub fn resolve(cfg: ExperimentConfig) -> Result<Resolved> {
    if cfg.k == 0 || cfg.k >= cfg.d {
        return Err(Error::Config(format!(
            "need 1 ≤ k < d, got k = {}, d = {}",
            cfg.k, cfg.d
        )));
    }
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if cfg.algorithm == Algorithm::OjaTradeoff && (cfg.k_prime == 0 || cfg.k_prime > cfg.k) {
        return Err(Error::Config(format!(
            "oja-tradeoff needs 1 ≤ k_prime ≤ k, got k_prime = {}, k = {}",
            cfg.k_prime, cfg.k
        )));
    }
    if cfg.spectrum.is_hard() {
        if cfg.rotate_basis {
            return Err(Error::Config(
                "hard spectra fix their own eigenbasis; rotate_basis does not apply".into(),
            ));
        }
        let want_d = match cfg.spectrum {
            SpectrumKind::Hard => 2 * cfg.k,
            _ => {
                if cfg.pad_m == 0 || cfg.pad_m % cfg.k != 0 {
                    return Err(Error::Config(format!(
                        "hard_padded needs pad_m to be a positive multiple of k, got pad_m = {}",
                        cfg.pad_m
                    )));
                }
                2 * (cfg.k + cfg.pad_m)
            }
        };
        if cfg.d != want_d {
            return Err(Error::Config(format!(
                "spectrum = {} with k = {} and pad_m = {} lives in dimension {want_d}, \
                 got d = {}",
                cfg.spectrum.as_str(),
                cfg.k,
                cfg.pad_m,
                cfg.d
            )));
        }
    }

    let base_spectrum = build_base_spectrum(&cfg)?;
    let reference = reference_spectrum(&cfg, &base_spectrum)?;
    let sched_kind = cfg.schedule.unwrap_or(match cfg.spectrum {
        SpectrumKind::FlatGap | SpectrumKind::Hard => ScheduleKind::GapDep,
        _ => ScheduleKind::GapFree,
    });

    let evals = reference.eigenvalues();
    let (gap_eff, lam1, lam2, rho_for_plan) = match sched_kind {
        ScheduleKind::GapDep => {
            let gap = match cfg.gap {
                Some(g) => g,
                None => {
                    let g = evals[cfg.k - 1] - evals[cfg.k];
                    if !(g > 0.0) {
                        return Err(Error::Config(format!(
                            "the spectrum has no eigengap at k = {} (λ_k = λ_k+1 = {}); \
                             set \"gap\" explicitly or use schedule = \"gap_free\"",
                            cfg.k,
                            evals[cfg.k - 1]
                        )));
                    }
                    g
                }
            };
            let lam = reference.eigenvalue_sum(1, cfg.k);
            (gap, lam, 0.0, gap)
        }
        ScheduleKind::GapFree => {
            let rho = cfg.rho.ok_or_else(|| {
                Error::Config("the gap_free schedule needs \"rho\" (band width)".into())
            })?;
            let band = metrics::partition(&reference, cfg.k, rho)?;
            let lam1 = reference.eigenvalue_sum(1, cfg.k + band.m());
            let lam2 = (reference.trace() - lam1).max(0.0);
            (rho, lam1, lam2, rho)
        }
    };
    let part_rho = cfg.rho.unwrap_or(gap_eff);

    let (schedule, plan) = if cfg.algorithm == Algorithm::OjaPP {
        let mut plan = ojapp_plan_opts(
            cfg.k,
            lam1,
            lam2,
            rho_for_plan,
            cfg.eps,
            cfg.p,
            &cfg.constants,
            cfg.flat_epoch_rates,
        )?;
        if let Some(t) = cfg.t_total {
            plan = plan.with_total(t)?;
        }
        (plan.schedule.clone(), Some(plan))
    } else {
        let sched = match sched_kind {
            ScheduleKind::GapDep => gap_dep_schedule_opts(
                cfg.k,
                lam1,
                gap_eff,
                cfg.eps,
                cfg.p,
                &cfg.constants,
                cfg.collapse_plateau,
            )?,
            ScheduleKind::GapFree => gap_free_schedule(
                cfg.k,
                lam1,
                lam2,
                rho_for_plan,
                cfg.eps,
                cfg.p,
                &cfg.constants,
            )?,
        };
        let sched = match cfg.t_total {
            Some(t) => sched.with_total(t),
            None => sched,
        };
        (sched, None)
    };
    let total = schedule.total_steps();

    if cfg.algorithm == Algorithm::Offline && total == 0 {
        return Err(Error::Config(
            "the offline baseline needs a stream of at least 1 sample; raise t_total".into(),
        ));
    }
    if cfg.spectrum.is_hard() {
        // Confirm the resolved horizon satisfies the stream's admissibility
        // floor, with the hidden bits replaced by a placeholder.
        let (lambda, delta) = hard_params(&cfg)?;
        spectra::lower_bound_source(cfg.k, lambda, delta, total, &vec![false; cfg.k], 0)?;
    }

    let base_partition = match &base_spectrum {
        Some(spec) => Some(metrics::partition(spec, cfg.k, part_rho)?),
        None => None,
    };
    let record_times = compute_record_times(
        total,
        cfg.stride,
        &schedule,
        cfg.algorithm == Algorithm::Offline,
    );
    let out_dir = cfg.out_dir();
    Ok(Resolved {
        cfg,
        base_spectrum,
        base_partition,
        sched_kind,
        schedule,
        plan,
        total,
        record_times,
        gap_eff,
        part_rho,
        lam1,
        lam2,
        out_dir,
    })
}

// ---------------------------------------------------------------------------
// Trial execution
// ---------------------------------------------------------------------------

fn trial_source(res: &Resolved, trial: u64) -> Result<SampleSource> {
    let cfg = &res.cfg;
    let source_seed = rng::derive_seed3(cfg.seed, trial, rng::stream::SOURCE);
    match cfg.spectrum {
        SpectrumKind::Hard | SpectrumKind::HardPadded => {
            let (lambda, delta) = hard_params(cfg)?;
            let mut bit_gen =
                rng::rng_from_seed(rng::derive_seed3(cfg.seed, trial, rng::stream::HARD_BITS));
            let z: Vec<bool> = (0..cfg.k)
                .map(|_| rand::Rng::random_bool(&mut bit_gen, 0.5))
                .collect();
            let inner =
                spectra::lower_bound_source(cfg.k, lambda, delta, res.total, &z, source_seed)?;
            if cfg.spectrum == SpectrumKind::HardPadded {
                spectra::gapfree_pad(inner, cfg.pad_m, cfg.k, rng::derive_seed(source_seed, 1))
            } else {
                Ok(inner)
            }
        }
        _ => {
            let spec = res
                .base_spectrum
                .clone()
                .expect("non-hard spectra are resolved up front");
            Ok(spectra::discrete_sampler(spec, source_seed))
        }
    }
}

fn run_trial(res: &Resolved, trial: u64) -> Result<Vec<MetricRecord>> {
    let cfg = &res.cfg;
    let mut source = trial_source(res, trial)?;
    let engine = match &res.base_partition {
        Some(part) => MetricEngine::new(part.clone()),
        None => {
            let sigma = source.true_sigma();
            MetricEngine::new(metrics::partition(&sigma, cfg.k, res.part_rho)?)
        }
    };
    let mut records: Vec<MetricRecord> = Vec::with_capacity(res.record_times.len());
    match cfg.algorithm {
        Algorithm::Oja => {
            let q0 = oja::init_gaussian(
                cfg.d,
                cfg.k,
                rng::derive_seed3(cfg.seed, trial, rng::stream::INIT),
            )?;
            oja::run_oja(&mut source, &res.schedule, q0, &res.record_times, |ctx| {
                records.push(engine.record(&ctx));
            })?;
        }
        Algorithm::OjaPP => {
            let plan = res.plan.as_ref().expect("resolved staged plan");
            let epoch_base = rng::derive_seed3(cfg.seed, trial, rng::stream::EPOCH);
            let seeds: Vec<u64> = (0..plan.stages())
                .map(|i| rng::derive_seed(epoch_base, i as u64))
                .collect();
            oja::run_ojapp(&mut source, plan, &seeds, &res.record_times, |ctx| {
                records.push(engine.record(&ctx));
            })?;
        }
        Algorithm::Offline => {
            let q = oracle::offline_pca_stream(&mut source, res.total, cfg.k)?;
            let state = SketchState::new(q)?;
            let mut rec = engine.record(&ObserveCtx {
                state: &state,
                prev: None,
                x: None,
            });
            rec.t = res.total;
            records.push(rec);
        }
        Algorithm::OjaTradeoff => {
            let q0 = oja::init_gaussian(
                cfg.d,
                cfg.k,
                rng::derive_seed3(cfg.seed, trial, rng::stream::INIT),
            )?;
            let subset_seed = rng::derive_seed3(cfg.seed, trial, rng::stream::SUBSET);
            let (d, k, kp) = (cfg.d, cfg.k, cfg.k_prime);
            oja::run_oja(&mut source, &res.schedule, q0, &res.record_times, |ctx| {
                // Evaluate a fixed-per-trial random k′-column subset, padded
                // with zero columns so the engine sees its usual d×k shape.
                let sub = oja::pick_random_columns(ctx.state.q(), kp, subset_seed)
                    .expect("subset width validated at resolve time");
                let mut padded = Array2::zeros((d, k));
                padded.slice_mut(s![.., ..kp]).assign(&sub);
                let state = SketchState::new(padded).expect("subset stays orthonormal");
                let mut rec = engine.record(&ObserveCtx {
                    state: &state,
                    prev: None,
                    x: None,
                });
                rec.t = ctx.state.t();
                records.push(rec);
            })?;
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Output rendering
// ---------------------------------------------------------------------------

/// Names of the per-record scalar metrics, in column order.
pub const METRIC_NAMES: [&str; 7] = [
    "frob_w",
    "frob_z",
    "spec_w",
    "rayleigh_min_slack",
    "a_t",
    "s_t",
    "s_prime_t",
];

fn metric_value(rec: &MetricRecord, idx: usize) -> f64 {
    match idx {
        0 => rec.frob_w,
        1 => rec.frob_z,
        2 => rec.spec_w,
        3 => rec.rayleigh_min_slack,
        4 => rec.a_t,
        5 => rec.s_t,
        6 => rec.s_prime_t,
        _ => unreachable!("metric index"),
    }
}

fn metadata_lines(res: &Resolved) -> Vec<(String, String)> {
    let mut lines = vec![(
        "tool".to_string(),
        format!(
            "streampca {} data format {FORMAT_VERSION}",
            env!("CARGO_PKG_VERSION")
        ),
    )];
    lines.extend(res.cfg.echo());
    lines.push(("resolved_schedule_kind".into(), res.sched_kind.as_str().into()));
    lines.push(("resolved_t0".into(), res.schedule.t0().to_string()));
    lines.push(("resolved_t1".into(), res.schedule.t1().to_string()));
    lines.push(("resolved_total".into(), res.total.to_string()));
    lines.push((
        "resolved_stages".into(),
        res.plan.as_ref().map_or(1, OjaPPPlan::stages).to_string(),
    ));
    lines.push(("resolved_gap".into(), res.gap_eff.to_string()));
    lines.push(("resolved_partition_rho".into(), res.part_rho.to_string()));
    lines.push(("resolved_lambda1".into(), res.lam1.to_string()));
    lines.push(("resolved_lambda2".into(), res.lam2.to_string()));
    lines.push((
        "resolved_record_points".into(),
        res.record_times.len().to_string(),
    ));
    lines.push(("resolved_rates".into(), res.schedule.describe()));
    lines
}

fn render_csv(res: &Resolved, records: &[Vec<MetricRecord>]) -> String {
    let mut out = String::new();
    for (key, val) in metadata_lines(res) {
        out.push_str(&format!("# {key} = {val}\n"));
    }
    out.push_str("trial,t,");
    out.push_str(&METRIC_NAMES.join(","));
    out.push('\n');
    for (trial, recs) in records.iter().enumerate() {
        for rec in recs {
            out.push_str(&format!("{trial},{}", rec.t));
            for idx in 0..METRIC_NAMES.len() {
                out.push_str(&format!(",{}", metric_value(rec, idx)));
            }
            out.push('\n');
        }
    }
    out
}

/// Interpolating quantile of an ascending slice; `NaN` on empty input. Equal
/// or infinite bracketing values short-circuit to the lower one so quantile
/// rows never manufacture `NaN` out of `inf − inf`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn finite_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn render_summary(res: &Resolved, records: &[Vec<MetricRecord>]) -> String {
    let mut out = String::new();
    for (key, val) in metadata_lines(res) {
        out.push_str(&format!("# {key} = {val}\n"));
    }
    out.push_str("metric,t,q10,q50,q90\n");
    let rows = res.record_times.len();
    for (idx, name) in METRIC_NAMES.iter().enumerate() {
        for row in 0..rows {
            let t = res.record_times[row];
            let vals = finite_sorted(records.iter().map(|recs| metric_value(&recs[row], idx)));
            let (q10, q50, q90) = (
                quantile_sorted(&vals, 0.1),
                quantile_sorted(&vals, 0.5),
                quantile_sorted(&vals, 0.9),
            );
            out.push_str(&format!("{name},{t},{q10},{q50},{q90}\n"));
        }
    }
    out
}

fn plot_script(name: &str) -> String {
    format!(
        r##"#!/usr/bin/env python3
"""Render quantile fans for every metric in {name}_summary.csv.

The harness only emits data; run this by hand when plots are wanted:
    python3 plot.py [--linear] [--out DIR]
"""
import argparse
import collections
import csv
import os


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--summary", default="{name}_summary.csv")
    ap.add_argument("--out", default=".")
    ap.add_argument("--linear", action="store_true", help="linear axes instead of log-log")
    args = ap.parse_args()

    series = collections.defaultdict(list)
    with open(args.summary) as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        for row in reader:
            try:
                point = tuple(float(row[c]) for c in ("t", "q10", "q50", "q90"))
            except ValueError:
                continue  # NaN-only rows and similar
            series[row["metric"]].append(point)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(args.out, exist_ok=True)
    for metric, points in sorted(series.items()):
        points.sort()
        ts = [p[0] for p in points]
        lo = [p[1] for p in points]
        mid = [p[2] for p in points]
        hi = [p[3] for p in points]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(ts, mid, label="median")
        ax.fill_between(ts, lo, hi, alpha=0.25, label="q10-q90")
        if not args.linear:
            positive_t = [t for t in ts if t > 0]
            if positive_t:
                ax.set_xscale("log")
            if all(v > 0 for v in lo + mid + hi):
                ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel(metric)
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(args.out, "{name}_%s.png" % metric), dpi=150)
        plt.close(fig)
    print("wrote %d plot(s) to %s" % (len(series), args.out))


if __name__ == "__main__":
    main()
"##
    )
}

/// Everything a finished run hands back: the resolution, the per-trial record
/// series (trial-major, aligned with `resolved.record_times`), and the files
/// written.
#[derive(Debug)]
pub struct RunOutput {
    pub resolved: Resolved,
    pub records: Vec<Vec<MetricRecord>>,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

impl RunOutput {
    /// Quantiles of every metric at the final recorded step, as
    /// `(metric, t, q10, q50, q90)` rows.
    pub fn final_quantiles(&self) -> Vec<(&'static str, u64, f64, f64, f64)> {
        let row = self.resolved.record_times.len() - 1;
        let t = self.resolved.record_times[row];
        METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(idx, name)| {
                let vals =
                    finite_sorted(self.records.iter().map(|recs| metric_value(&recs[row], idx)));
                (
                    *name,
                    t,
                    quantile_sorted(&vals, 0.1),
                    quantile_sorted(&vals, 0.5),
                    quantile_sorted(&vals, 0.9),
                )
            })
            .collect()
    }
}

/// Run every trial (concurrently, deterministically) and write the data file,
/// the quantile summary, and a plotting script beside them.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<RunOutput> {
    run_resolved(resolve(cfg)?)
}

/// [`run_experiment`] for an already resolved config (lets callers separate
/// validation failures from execution failures).
pub fn run_resolved(res: Resolved) -> Result<RunOutput> {
    let records: Vec<Vec<MetricRecord>> = (0..res.cfg.trials)
        .into_par_iter()
        .map(|trial| run_trial(&res, trial))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(&res.out_dir)?;
    let csv_path = res.out_dir.join(format!("{}.csv", res.cfg.name));
    let summary_path = res.out_dir.join(format!("{}_summary.csv", res.cfg.name));
    std::fs::write(&csv_path, render_csv(&res, &records))?;
    std::fs::write(&summary_path, render_summary(&res, &records))?;
    std::fs::write(res.out_dir.join("plot.py"), plot_script(&res.cfg.name))?;
    Ok(RunOutput {
        resolved: res,
        records,
        csv_path,
        summary_path,
    })
}

/// Across-trial median of one metric at every recorded step, as `(t, value)`
/// pairs ready for [`fit_rate`]. `NaN` samples are dropped pointwise.
pub fn median_series(
    records: &[Vec<MetricRecord>],
    mut value: impl FnMut(&MetricRecord) -> f64,
) -> Vec<(u64, f64)> {
    if records.is_empty() {
        return Vec::new();
    }
    let rows = records[0].len();
    let mut out = Vec::with_capacity(rows);
    for row in 0..rows {
        let vals = finite_sorted(records.iter().map(|recs| value(&recs[row])));
        out.push((records[0][row].t, quantile_sorted(&vals, 0.5)));
    }
    out
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

/// Least-squares power-law fit of a decaying series on log-log axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// Fitted exponent: `value ≈ e^intercept · t^slope`.
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination in `[0, 1]`.
    pub r2: f64,
    /// The `(t_lo, t_hi)` window actually fitted (inclusive).
    pub window: (u64, u64),
}

/// Fit `ln value` against `ln t` over the inclusive window. Requires at least
/// 5 in-window points, all strictly positive (a zero or negative value has no
/// logarithm; the error names the offending step).
pub fn fit_rate(series: &[(u64, f64)], window: (u64, u64)) -> Result<RateFit> {
    let (t_lo, t_hi) = window;
    if t_lo < 1 {
        return Err(Error::invalid(
            "the fit window must start at t ≥ 1 (t = 0 has no logarithm)",
        ));
    }
    if t_hi < t_lo {
        return Err(Error::invalid(format!(
            "empty fit window: t_lo = {t_lo} exceeds t_hi = {t_hi}"
        )));
    }
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for &(t, v) in series {
        if t < t_lo || t > t_hi {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::invalid(format!(
                "rate fitting needs strictly positive values, got {v} at t = {t}"
            )));
        }
        pts.push(((t as f64).ln(), v.ln()));
    }
    if pts.len() < 5 {
        return Err(Error::invalid(format!(
            "rate fitting needs at least 5 points in [{t_lo}, {t_hi}], got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid(
            "rate fitting needs at least two distinct steps in the window",
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    // A (numerically) constant series is an exact fit with zero slope; the
    // ss_res/ss_tot ratio of two rounding residues would report noise.
    let degenerate = ss_tot <= 1e-20 * n * (1.0 + mean_y * mean_y);
    let r2 = if degenerate {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        window,
    })
}

// ---------------------------------------------------------------------------
// Hard-stream scaling sweep
// ---------------------------------------------------------------------------

/// One horizon of the scaling sweep: the residual mass on the complement of
/// the planted top-k space, averaged over trials, and its product with `T`.
#[derive(Debug, Clone, Copy)]
pub struct LowerBoundRow {
    pub t: u64,
    pub mean_error: f64,
    pub error_times_t: f64,
    pub oja_mean_error: Option<f64>,
    pub oja_error_times_t: Option<f64>,
}

/// Sweep the hard stream across a grid of horizons. Per trial a fresh hidden
/// bit vector is drawn, `T` samples are streamed into the batch baseline
/// (and, optionally, the streaming estimator under a gap-keyed schedule), and
/// the residual `‖WᵀQ_T‖²_F` against the instance's own top-k space is
/// averaged. A flat `error · T` profile across the grid is the signature of a
/// `1/T` floor.
pub fn lower_bound_sweep(
    k: usize,
    lambda: f64,
    delta: f64,
    t_grid: &[u64],
    trials: u64,
    seed: u64,
    with_oja: bool,
) -> Result<Vec<LowerBoundRow>> {
    if t_grid.is_empty() {
        return Err(Error::invalid("the sweep needs at least one horizon"));
    }
    if trials == 0 {
        return Err(Error::invalid("the sweep needs at least one trial"));
    }
    let mut rows = Vec::with_capacity(t_grid.len());
    for (grid_idx, &t) in t_grid.iter().enumerate() {
        let per_trial: Vec<(f64, Option<f64>)> = (0..trials)
            .into_par_iter()
            .map(|trial| -> Result<(f64, Option<f64>)> {
                // One tag per (horizon, trial) pair so horizons stay
                // independent even at equal trial indices.
                let tag = ((grid_idx as u64) << 32) | trial;
                let mut bit_gen =
                    rng::rng_from_seed(rng::derive_seed3(seed, tag, rng::stream::HARD_BITS));
                let z: Vec<bool> = (0..k)
                    .map(|_| rand::Rng::random_bool(&mut bit_gen, 0.5))
                    .collect();
                let source_seed = rng::derive_seed3(seed, tag, rng::stream::SOURCE);
                let mut source =
                    spectra::lower_bound_source(k, lambda, delta, t, &z, source_seed)?;
                let sigma = source.true_sigma();
                let part = metrics::partition(&sigma, k, delta / 2.0)?;
                let q = oracle::offline_pca_stream(&mut source, t, k)?;
                let err = metrics::frob_corr(&q.view(), &part.w())?;
                let oja_err = if with_oja {
                    let evals = sigma.eigenvalues();
                    let gap = evals[k - 1] - evals[k];
                    let lam_sum = sigma.eigenvalue_sum(1, k);
                    let sched = gap_dep_schedule_opts(
                        k,
                        lam_sum,
                        gap,
                        1.0,
                        0.5,
                        &ScheduleConstants::default(),
                        false,
                    )?
                    .with_total(t);
                    let mut stream = spectra::lower_bound_source(
                        k,
                        lambda,
                        delta,
                        t,
                        &z,
                        rng::derive_seed(source_seed, 1),
                    )?;
                    let q0 = oja::init_gaussian(
                        2 * k,
                        k,
                        rng::derive_seed3(seed, tag, rng::stream::INIT),
                    )?;
                    let state = oja::run_oja(&mut stream, &sched, q0, &[], |_| {})?;
                    Some(metrics::frob_corr(&state.q().view(), &part.w())?)
                } else {
                    None
                };
                Ok((err, oja_err))
            })
            .collect::<Result<_>>()?;
        let mean = per_trial.iter().map(|p| p.0).sum::<f64>() / trials as f64;
        let oja_mean = if with_oja {
            Some(per_trial.iter().filter_map(|p| p.1).sum::<f64>() / trials as f64)
        } else {
            None
        };
        rows.push(LowerBoundRow {
            t,
            mean_error: mean,
            error_times_t: mean * t as f64,
            oja_mean_error: oja_mean,
            oja_error_times_t: oja_mean.map(|m| m * t as f64),
        });
    }
    Ok(rows)
}

/// Render sweep rows as CSV.
pub fn lower_bound_csv(rows: &[LowerBoundRow]) -> String {
    let with_oja = rows.iter().any(|r| r.oja_mean_error.is_some());
    let mut out = String::from(if with_oja {
        "T,mean_error,error_times_t,oja_mean_error,oja_error_times_t\n"
    } else {
        "T,mean_error,error_times_t\n"
    });
    for r in rows {
        out.push_str(&format!("{},{},{}", r.t, r.mean_error, r.error_times_t));
        if with_oja {
            out.push_str(&format!(
                ",{},{}",
                r.oja_mean_error.unwrap_or(f64::NAN),
                r.oja_error_times_t.unwrap_or(f64::NAN)
            ));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Initialization diagnostics
// ---------------------------------------------------------------------------

/// Order statistics of one diagnostic across seeds.
#[derive(Debug, Clone, Copy)]
pub struct QuantileSummary {
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub max: f64,
}

impl QuantileSummary {
    fn from_samples(samples: &[f64]) -> Self {
        let sorted = finite_sorted(samples.iter().copied());
        QuantileSummary {
            q10: quantile_sorted(&sorted, 0.1),
            q50: quantile_sorted(&sorted, 0.5),
            q90: quantile_sorted(&sorted, 0.9),
            max: sorted.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// How random initializations behave against the high-probability bounds the
/// schedule sizing leans on.
#[derive(Debug, Clone)]
pub struct DiagnoseReport {
    pub n: u64,
    pub d: usize,
    pub k: usize,
    pub p: f64,
    pub q: f64,
    /// Horizon used inside the per-sample bound.
    pub t_bound: u64,
    pub xi_z: QuantileSummary,
    pub per_vec_max: QuantileSummary,
    pub a1: QuantileSummary,
    pub xi_z_bound: f64,
    pub per_vec_bound: f64,
    pub a1_bound: f64,
    pub xi_z_exceed: f64,
    pub per_vec_exceed: f64,
    pub a1_exceed: f64,
    /// Fraction of seeds where any of the three bounds failed.
    pub any_exceed: f64,
    /// The union probability budget `p + 2q` the bounds were sized for.
    pub budget: f64,
}

impl DiagnoseReport {
    /// Plain-text table for terminal output and `diagnose.txt`.
    pub fn render(&self) -> String {
        let mut out = format!(
            "initialization diagnostics over {} seed(s) (d = {}, k = {}, p = {}, q = {}, \
             T = {})\n",
            self.n, self.d, self.k, self.p, self.q, self.t_bound
        );
        out.push_str(&format!(
            "{:<14} {:>12} {:>12} {:>12} {:>12} {:>12} {:>8}\n",
            "metric", "q10", "q50", "q90", "max", "bound", "exceed"
        ));
        for (name, s, bound, exceed) in [
            ("xi_z", &self.xi_z, self.xi_z_bound, self.xi_z_exceed),
            (
                "per_vec_max",
                &self.per_vec_max,
                self.per_vec_bound,
                self.per_vec_exceed,
            ),
            ("a_1", &self.a1, self.a1_bound, self.a1_exceed),
        ] {
            out.push_str(&format!(
                "{:<14} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>8.4}\n",
                name, s.q10, s.q50, s.q90, s.max, bound, exceed
            ));
        }
        out.push_str(&format!(
            "any bound exceeded on a {:.4} fraction of seeds; union budget p + 2q = {:.4}\n",
            self.any_exceed, self.budget
        ));
        out
    }
}

/// Measure initialization quality over `cfg.trials` seeds: `xi_z`, the
/// per-eigenvector worst alignment, and the first sample's conditioned
/// alignment `a_1`, each against its high-probability bound at the configured
/// `p` and `q`. Uses the raw Gaussian initialization (the quantities are
/// invariant under the orthonormalization's right-multiplication).
pub fn diagnose(cfg: &ExperimentConfig) -> Result<DiagnoseReport> {
    let n = cfg.trials;
    let (d, k, p, q) = (cfg.d, cfg.k, cfg.p, cfg.q);
    if !(p > 0.0 && p <= 1.0) || !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!(
            "diagnostic probabilities must lie in (0, 1], got p = {p}, q = {q}"
        )));
    }
    let mut xi = Vec::with_capacity(n as usize);
    let mut pv = Vec::with_capacity(n as usize);
    let mut a1 = Vec::with_capacity(n as usize);
    let t_bound;
    if k == d {
        // Full-rank sketches have no unwanted space: both residual
        // diagnostics vanish identically and only a_1 is informative.
        let spec = build_base_spectrum(cfg)?.ok_or_else(|| {
            Error::Config("hard spectra live in dimension 2k, so k = d cannot happen".into())
        })?;
        t_bound = cfg.t_total.unwrap_or(1).max(1);
        let basis = spec.dense_basis();
        for i in 0..n {
            let q0 = oja::init_gaussian(d, k, rng::derive_seed3(cfg.seed, i, rng::stream::INIT))?;
            let mut source = spectra::discrete_sampler(
                spec.clone(),
                rng::derive_seed3(cfg.seed, i, rng::stream::SOURCE),
            );
            let x = source.next_sample();
            xi.push(0.0);
            pv.push(0.0);
            a1.push(metrics::sample_alignment(&x.view(), &q0.view(), &basis.view())?);
        }
    } else {
        let res = resolve(cfg.clone())?;
        t_bound = res.total.max(1);
        for i in 0..n {
            let q0 = oja::init_gaussian(d, k, rng::derive_seed3(cfg.seed, i, rng::stream::INIT))?;
            let mut source = trial_source(&res, i)?;
            let part = match &res.base_partition {
                Some(part) => part.clone(),
                None => metrics::partition(&source.true_sigma(), k, res.part_rho)?,
            };
            let diag = metrics::init_diagnostics(&q0.view(), &part)?;
            let x = source.next_sample();
            xi.push(diag.xi_z);
            pv.push(diag.per_vec.iter().copied().fold(0.0, f64::max));
            a1.push(metrics::sample_alignment(&x.view(), &q0.view(), &part.v())?);
        }
    }
    let xi_z_bound = 576.0 * d as f64 * k as f64 / (p * p) * (d as f64 / p).ln();
    let per_vec_bound = 18.0 / p * (2.0 * k as f64 * (t_bound as f64 / q).ln()).sqrt();
    let a1_bound = 1.0 + per_vec_bound;
    let frac = |vals: &[f64], bound: f64| {
        vals.iter().filter(|&&v| v > bound).count() as f64 / n as f64
    };
    let any = (0..n as usize)
        .filter(|&i| xi[i] > xi_z_bound || pv[i] > per_vec_bound || a1[i] > a1_bound)
        .count() as f64
        / n as f64;
    Ok(DiagnoseReport {
        n,
        d,
        k,
        p,
        q,
        t_bound,
        xi_z: QuantileSummary::from_samples(&xi),
        per_vec_max: QuantileSummary::from_samples(&pv),
        a1: QuantileSummary::from_samples(&a1),
        xi_z_bound,
        per_vec_bound,
        a1_bound,
        xi_z_exceed: frac(&xi, xi_z_bound),
        per_vec_exceed: frac(&pv, per_vec_bound),
        a1_exceed: frac(&a1, a1_bound),
        any_exceed: any,
        budget: p + 2.0 * q,
    })
}

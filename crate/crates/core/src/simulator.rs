//! Monte Carlo estimation of the detection success probability.
//!
//! Every trial draws its randomness from counter-based streams keyed by
//! `(master_seed, trial, purpose)`. The sweep point is deliberately not part
//! of the key: all points of a sweep see the same arrays, faults and noise
//! shapes (common random numbers), so differences between points come only
//! from the swept parameter. The results do not depend on scheduling or on
//! the number of worker threads.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array_model::{dft_codebook, ArrayConfig, DftCodebook};
use crate::combiner_design::combiner_random_phase;
use crate::diagnosis::{
    diagnose_difference, diagnose_proposed, measure, perturb_knowledge, proposed_combiner,
    KnowledgeErrors, NoiseModel, StoppingRule,
};
use crate::fault_channel::{
    apply_faults, sample_faults, sample_paths, synthesize_channel, FaultMode,
};
use crate::sparse_recovery::extract_support;

pub const DEFAULT_TRIALS: u64 = 500;
pub const DEFAULT_SNR_DB: f64 = 40.0;
pub const DEFAULT_MEASUREMENTS: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    /// Null-steering diagnosis from arrival angles only.
    Proposed,
    /// Difference against a synthesized full-channel reference.
    Difference,
}

impl Technique {
    pub fn as_str(&self) -> &'static str {
        match self {
            Technique::Proposed => "proposed",
            Technique::Difference => "difference",
        }
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Technique::Proposed),
            "difference" => Ok(Technique::Difference),
            other => Err(format!("unknown technique `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechniqueSelection {
    Proposed,
    Difference,
    Both,
}

impl TechniqueSelection {
    pub fn techniques(&self) -> Vec<Technique> {
        match self {
            TechniqueSelection::Proposed => vec![Technique::Proposed],
            TechniqueSelection::Difference => vec![Technique::Difference],
            TechniqueSelection::Both => vec![Technique::Proposed, Technique::Difference],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TechniqueSelection::Proposed => "proposed",
            TechniqueSelection::Difference => "difference",
            TechniqueSelection::Both => "both",
        }
    }

    fn includes(&self, t: Technique) -> bool {
        self.techniques().contains(&t)
    }
}

impl FromStr for TechniqueSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(TechniqueSelection::Proposed),
            "difference" => Ok(TechniqueSelection::Difference),
            "both" => Ok(TechniqueSelection::Both),
            other => Err(format!("unknown technique `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    #[serde(rename = "m_measurements")]
    Measurements,
    SnrDb,
    AoaOffsetDeg,
    GainErrorVar,
    AoaErrorVar,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [
        SweepParam::Measurements,
        SweepParam::SnrDb,
        SweepParam::AoaOffsetDeg,
        SweepParam::GainErrorVar,
        SweepParam::AoaErrorVar,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            SweepParam::Measurements => "m_measurements",
            SweepParam::SnrDb => "snr_db",
            SweepParam::AoaOffsetDeg => "aoa_offset_deg",
            SweepParam::GainErrorVar => "gain_error_var",
            SweepParam::AoaErrorVar => "aoa_error_var",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.key() == key)
    }
}

/// Where the receiver's channel-estimate errors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CsiErrorModel {
    /// Use `gain_error_var` and `aoa_error_var` as given.
    #[default]
    Explicit,
    /// Derive both from the operating SNR: gain error variance equals the
    /// noise variance, angle error variance is the broadside Cramer-Rao bound
    /// `6 sigma^2 L / (N (N^2 - 1) pi^2)`.
    SnrMatched,
}

impl CsiErrorModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CsiErrorModel::Explicit => "explicit",
            CsiErrorModel::SnrMatched => "snr_matched",
        }
    }
}

impl FromStr for CsiErrorModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(CsiErrorModel::Explicit),
            "snr_matched" => Ok(CsiErrorModel::SnrMatched),
            other => Err(format!("unknown csi error model `{other}`")),
        }
    }
}

/// Values of every sweepable parameter at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub m_measurements: usize,
    pub snr_db: f64,
    pub aoa_offset_deg: f64,
    pub gain_error_var: f64,
    pub aoa_error_var: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        Self {
            m_measurements: DEFAULT_MEASUREMENTS,
            snr_db: DEFAULT_SNR_DB,
            aoa_offset_deg: 0.0,
            gain_error_var: 0.0,
            aoa_error_var: 0.0,
        }
    }
}

impl OperatingPoint {
    pub fn get(&self, param: SweepParam) -> f64 {
        match param {
            SweepParam::Measurements => self.m_measurements as f64,
            SweepParam::SnrDb => self.snr_db,
            SweepParam::AoaOffsetDeg => self.aoa_offset_deg,
            SweepParam::GainErrorVar => self.gain_error_var,
            SweepParam::AoaErrorVar => self.aoa_error_var,
        }
    }

    pub fn with(mut self, param: SweepParam, value: f64) -> Self {
        match param {
            SweepParam::Measurements => self.m_measurements = value as usize,
            SweepParam::SnrDb => self.snr_db = value,
            SweepParam::AoaOffsetDeg => self.aoa_offset_deg = value,
            SweepParam::GainErrorVar => self.gain_error_var = value,
            SweepParam::AoaErrorVar => self.aoa_error_var = value,
        }
        self
    }

    pub fn knowledge_errors(&self) -> KnowledgeErrors {
        KnowledgeErrors {
            aoa_offset: self.aoa_offset_deg.to_radians(),
            aoa_variance: self.aoa_error_var,
            gain_variance: self.gain_error_var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    pub n_elements: usize,
    pub n_faults: usize,
    pub fault_mode: FaultMode,
    pub n_paths: usize,
    /// Paths on the DFT grid (codebook nulling) or anywhere (projector nulling).
    pub quantized: bool,
    pub technique: TechniqueSelection,
    pub sweep: Sweep,
    /// Values of the parameters that are not swept.
    pub fixed: OperatingPoint,
    pub csi_error: CsiErrorModel,
    pub trials: u64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {message}")]
pub struct InvalidSpec {
    pub field: String,
    pub message: String,
}

fn invalid(field: &str, message: impl Into<String>) -> InvalidSpec {
    InvalidSpec {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), InvalidSpec> {
        let n = self.n_elements;
        if n < 2 {
            return Err(invalid(
                "n_elements",
                format!("need at least 2 elements, got {n}"),
            ));
        }
        if self.n_faults >= n {
            return Err(invalid(
                "n_faults",
                format!("{} faults must be fewer than {n} elements", self.n_faults),
            ));
        }
        if self.n_paths == 0 || self.n_paths >= n {
            return Err(invalid(
                "n_paths",
                format!("need 1 <= n_paths < {n}, got {}", self.n_paths),
            ));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "at least one trial is required"));
        }
        if self.experiment_id.is_empty() {
            return Err(invalid("experiment_id", "must not be empty"));
        }
        if self.sweep.values.is_empty() {
            return Err(invalid(self.sweep.param.key(), "sweep has no values"));
        }
        if self.csi_error == CsiErrorModel::SnrMatched
            && matches!(
                self.sweep.param,
                SweepParam::GainErrorVar | SweepParam::AoaErrorVar
            )
        {
            return Err(invalid(
                "csi_error",
                "snr_matched derives the error variances, they cannot be swept",
            ));
        }
        let max_m = if self.technique.includes(Technique::Proposed) {
            n - self.n_paths
        } else {
            n
        };
        for &v in &self.sweep.values {
            self.check_point(&self.fixed.with(self.sweep.param, v), Some(v), max_m)?;
        }
        Ok(())
    }

    fn check_point(
        &self,
        p: &OperatingPoint,
        raw: Option<f64>,
        max_m: usize,
    ) -> Result<(), InvalidSpec> {
        if let (SweepParam::Measurements, Some(v)) = (self.sweep.param, raw) {
            if !(v.fract() == 0.0 && v >= 1.0) {
                return Err(invalid(
                    "m_measurements",
                    format!("{v} is not a positive integer"),
                ));
            }
        }
        if p.m_measurements == 0 || p.m_measurements > max_m {
            return Err(invalid(
                "m_measurements",
                format!("need 1 <= M <= {max_m}, got {}", p.m_measurements),
            ));
        }
        if !p.snr_db.is_finite() {
            return Err(invalid("snr_db", format!("{} is not finite", p.snr_db)));
        }
        if p.aoa_offset_deg.is_nan() || p.aoa_offset_deg.abs() > 90.0 {
            return Err(invalid(
                "aoa_offset_deg",
                format!("{} outside [-90, 90]", p.aoa_offset_deg),
            ));
        }
        for (field, v) in [
            ("gain_error_var", p.gain_error_var),
            ("aoa_error_var", p.aoa_error_var),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(
                    field,
                    format!("{v} is not a finite non-negative variance"),
                ));
            }
        }
        Ok(())
    }

    /// Fully resolved parameters at sweep value `value`.
    pub fn point(&self, value: f64) -> OperatingPoint {
        let mut p = self.fixed.with(self.sweep.param, value);
        if self.csi_error == CsiErrorModel::SnrMatched {
            let sigma2 = NoiseModel::new(p.snr_db).variance();
            let n = self.n_elements as f64;
            p.gain_error_var = sigma2;
            p.aoa_error_var = 6.0 * sigma2 * self.n_paths as f64 / (n * (n * n - 1.0) * PI * PI);
        }
        p
    }
}

/// Independent random stream roles within one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Scenario,
    Knowledge,
    Noise,
    Combiner(Technique),
    /// Free for callers that plug their own trial function into the engine.
    Custom(u32),
}

impl StreamPurpose {
    fn id(&self) -> u64 {
        match self {
            StreamPurpose::Scenario => 0,
            StreamPurpose::Knowledge => 1,
            StreamPurpose::Noise => 2,
            StreamPurpose::Combiner(Technique::Proposed) => 3,
            StreamPurpose::Combiner(Technique::Difference) => 4,
            StreamPurpose::Custom(k) => 1 << 32 | *k as u64,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream for one role of one trial.
pub fn trial_stream(master_seed: u64, trial: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(master_seed) ^ trial);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(purpose.id());
    rng
}

/// Per-sweep state shared read-only by all trials.
struct TrialContext {
    cfg: ArrayConfig,
    codebook: Option<DftCodebook>,
}

impl TrialContext {
    fn new(spec: &ExperimentSpec) -> crate::Result<Self> {
        let cfg = ArrayConfig::new(spec.n_elements)?;
        let codebook = spec.quantized.then(|| dft_codebook(&cfg));
        Ok(Self { cfg, codebook })
    }
}

/// One diagnosis attempt; `Ok(true)` iff the detected set equals the fault set.
pub fn run_trial(
    spec: &ExperimentSpec,
    point: &OperatingPoint,
    trial: u64,
    technique: Technique,
) -> crate::Result<bool> {
    run_trial_in(&TrialContext::new(spec)?, spec, point, trial, technique)
}

fn run_trial_in(
    ctx: &TrialContext,
    spec: &ExperimentSpec,
    point: &OperatingPoint,
    trial: u64,
    technique: Technique,
) -> crate::Result<bool> {
    let stream = |purpose| trial_stream(spec.master_seed, trial, purpose);
    let cfg = &ctx.cfg;

    let mut scenario = stream(StreamPurpose::Scenario);
    let paths = sample_paths(cfg, spec.n_paths, spec.quantized, &mut scenario)?;
    let faults = sample_faults(
        spec.n_elements,
        spec.n_faults,
        spec.fault_mode,
        &mut scenario,
    )?;
    let h = synthesize_channel(cfg, &paths)?;
    let channel = apply_faults(&h, &faults)?;

    let knowledge = perturb_knowledge(
        &paths,
        &point.knowledge_errors(),
        &mut stream(StreamPurpose::Knowledge),
    );
    let noise = NoiseModel::new(point.snr_db);
    let mut noise_rng = stream(StreamPurpose::Noise);
    let mut combiner_rng = stream(StreamPurpose::Combiner(technique));
    let stop = StoppingRule::sparsity(spec.n_faults);
    let m = point.m_measurements;

    let result = match technique {
        Technique::Proposed => {
            let w = proposed_combiner(
                cfg,
                ctx.codebook.as_ref(),
                &knowledge.aoa_estimates,
                m,
                &mut combiner_rng,
            )?;
            let y = measure(&w, &channel, &noise, &mut noise_rng)?;
            diagnose_proposed(cfg, &knowledge, &y, &w, stop)?
        }
        Technique::Difference => {
            let w = combiner_random_phase(cfg, m, &mut combiner_rng)?;
            let y = measure(&w, &channel, &noise, &mut noise_rng)?;
            diagnose_difference(cfg, &knowledge, &y, &w, stop)?
        }
    };
    Ok(extract_support(&result, spec.n_faults) == faults.indices())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub point: OperatingPoint,
    pub technique: Technique,
    pub successes: u64,
    pub trials: u64,
    pub p_success: f64,
    pub std_error: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Rows of one technique in sweep order.
    pub fn series(&self, technique: Technique) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.technique == technique)
            .collect()
    }
}

/// Binomial standard error of a success fraction.
pub fn std_error(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    InvalidSpec(#[from] InvalidSpec),
    #[error(transparent)]
    Setup(#[from] crate::Error),
    #[error("cannot start worker pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

pub fn run_sweep(
    spec: &ExperimentSpec,
    workers: Option<usize>,
) -> Result<SweepResult, SimulationError> {
    spec.validate()?;
    let ctx = TrialContext::new(spec)?;
    run_sweep_with(spec, workers, |point, trial, technique| {
        run_trial_in(&ctx, spec, point, trial, technique)
    })
}

/// Aggregation engine behind [`run_sweep`], generic over the trial function.
///
/// `trial_fn` errors count as failures and are logged.
pub fn run_sweep_with<F>(
    spec: &ExperimentSpec,
    workers: Option<usize>,
    trial_fn: F,
) -> Result<SweepResult, SimulationError>
where
    F: Fn(&OperatingPoint, u64, Technique) -> crate::Result<bool> + Sync,
{
    spec.validate()?;
    let techniques = spec.technique.techniques();
    let mut order: Vec<usize> = (0..spec.sweep.values.len()).collect();
    order.sort_by(|&a, &b| spec.sweep.values[a].total_cmp(&spec.sweep.values[b]));

    let tasks: Vec<(usize, Technique)> = order
        .iter()
        .flat_map(|&i| techniques.iter().map(move |&t| (i, t)))
        .collect();

    let evaluate = || -> Vec<SweepRow> {
        tasks
            .iter()
            .map(|&(i, technique)| {
                let value = spec.sweep.values[i];
                let point = spec.point(value);
                let successes: u64 = (0..spec.trials)
                    .into_par_iter()
                    .map(|trial| match trial_fn(&point, trial, technique) {
                        Ok(ok) => u64::from(ok),
                        Err(e) => {
                            log::warn!(
                                "{} {}={value} {} trial {trial}: {e}",
                                spec.experiment_id,
                                spec.sweep.param.key(),
                                technique.as_str()
                            );
                            0
                        }
                    })
                    .sum();
                let p = successes as f64 / spec.trials as f64;
                log::info!(
                    "{} {}={value} {}: p_success={p:.4} ({successes}/{})",
                    spec.experiment_id,
                    spec.sweep.param.key(),
                    technique.as_str(),
                    spec.trials
                );
                SweepRow {
                    sweep_value: value,
                    point,
                    technique,
                    successes,
                    trials: spec.trials,
                    p_success: p,
                    std_error: std_error(p, spec.trials),
                    seed: spec.master_seed,
                }
            })
            .collect()
    };

    let rows = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()?
            .install(evaluate),
        None => evaluate(),
    };
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetName {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

impl PresetName {
    pub const ALL: [PresetName; 4] = [
        PresetName::Fig1,
        PresetName::Fig2,
        PresetName::Fig3,
        PresetName::Fig4,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Fig1 => "fig1",
            PresetName::Fig2 => "fig2",
            PresetName::Fig3 => "fig3",
            PresetName::Fig4 => "fig4",
        }
    }
}

impl FromStr for PresetName {
    type Err = InvalidSpec;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                invalid(
                    "name",
                    format!("unknown preset `{s}` (expected fig1..fig4)"),
                )
            })
    }
}

/// A named group of experiments making up one figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: PresetName,
    pub specs: Vec<ExperimentSpec>,
}

impl Preset {
    pub fn with_seed(mut self, seed: u64) -> Self {
        for s in &mut self.specs {
            s.master_seed = seed;
        }
        self
    }

    pub fn with_trials(mut self, trials: u64) -> Self {
        for s in &mut self.specs {
            s.trials = trials;
        }
        self
    }
}

fn grid(count: usize, step: f64) -> Vec<f64> {
    (0..count).map(|k| k as f64 * step).collect()
}

pub fn preset(name: PresetName) -> Preset {
    let base = ExperimentSpec {
        experiment_id: String::new(),
        n_elements: 128,
        n_faults: 6,
        fault_mode: FaultMode::Complete,
        n_paths: 1,
        quantized: true,
        technique: TechniqueSelection::Both,
        sweep: Sweep {
            param: SweepParam::Measurements,
            values: Vec::new(),
        },
        fixed: OperatingPoint::default(),
        csi_error: CsiErrorModel::Explicit,
        trials: DEFAULT_TRIALS,
        master_seed: 0,
    };
    let variances = vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

    let specs = match name {
        PresetName::Fig1 => [1, 3, 6]
            .into_iter()
            .map(|s| ExperimentSpec {
                experiment_id: format!("fig1_s{s}"),
                n_faults: s,
                sweep: Sweep {
                    param: SweepParam::Measurements,
                    values: (1..=12).map(|k| 5.0 * k as f64).collect(),
                },
                ..base.clone()
            })
            .collect(),
        PresetName::Fig2 => [FaultMode::Complete, FaultMode::Partial]
            .into_iter()
            .map(|mode| ExperimentSpec {
                experiment_id: format!("fig2_{}", mode.as_str()),
                fault_mode: mode,
                sweep: Sweep {
                    param: SweepParam::AoaOffsetDeg,
                    // 0, 0.1, ..., 2.0 degrees
                    values: grid(21, 0.1)
                        .into_iter()
                        .map(|v| (v * 10.0).round() / 10.0)
                        .collect(),
                },
                ..base.clone()
            })
            .collect(),
        PresetName::Fig3 => [FaultMode::Complete, FaultMode::Partial]
            .into_iter()
            .map(|mode| ExperimentSpec {
                experiment_id: format!("fig3_{}", mode.as_str()),
                fault_mode: mode,
                n_paths: 3,
                quantized: false,
                csi_error: CsiErrorModel::SnrMatched,
                sweep: Sweep {
                    param: SweepParam::SnrDb,
                    values: grid(9, 5.0),
                },
                ..base.clone()
            })
            .collect(),
        PresetName::Fig4 => [SweepParam::GainErrorVar, SweepParam::AoaErrorVar]
            .into_iter()
            .map(|param| ExperimentSpec {
                experiment_id: format!(
                    "fig4_{}",
                    if param == SweepParam::GainErrorVar {
                        "gain"
                    } else {
                        "aoa"
                    }
                ),
                n_paths: 3,
                quantized: false,
                fixed: OperatingPoint {
                    m_measurements: 45,
                    snr_db: 30.0,
                    ..OperatingPoint::default()
                },
                sweep: Sweep {
                    param,
                    values: variances.clone(),
                },
                ..base.clone()
            })
            .collect(),
    };
    Preset { name, specs }
}

//! End-to-end diagnosis: measurement generation, channel-knowledge errors, the
//! null-steering pipeline and the full-channel difference baseline.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::array_model::{nearest_grid_index, ArrayConfig, DftCodebook};
use crate::combiner_design::{
    combiner_dft_null, combiner_projected_random, householder_projector, CombinerMatrix,
    CombinerStrategy,
};
use crate::fault_channel::{complex_normal, synthesize_channel, ChannelPair, Path, PathSet};
use crate::sparse_recovery::{omp_solve, DiagnosisResult, RecoveryProblem};
use crate::{CVector, Error, Result, C64};

/// Receiver noise. Variance is `10^(-snr_db/10)` relative to unit per-element
/// channel power and a unit diagnosis symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub snr_db: f64,
}

impl NoiseModel {
    pub fn new(snr_db: f64) -> Self {
        Self { snr_db }
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
        }
    }

    pub fn variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    /// `m` i.i.d. CN(0, variance) samples.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> CVector {
        let var = self.variance();
        CVector::from_fn(m, |_, _| complex_normal(rng, var))
    }
}

/// How the receiver's channel estimate deviates from the truth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KnowledgeErrors {
    /// Common signed offset added to every arrival angle, radians.
    pub aoa_offset: f64,
    /// Variance of an independent zero-mean Gaussian angle error per path, rad^2.
    pub aoa_variance: f64,
    /// Variance of an independent CN(0, v) gain error per path.
    pub gain_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelKnowledge {
    pub aoa_estimates: Vec<f64>,
    /// Only the difference baseline reads these.
    pub gain_estimates: Option<Vec<C64>>,
    pub errors: KnowledgeErrors,
}

impl ChannelKnowledge {
    pub fn exact(truth: &PathSet) -> Self {
        Self {
            aoa_estimates: truth.angles(),
            gain_estimates: Some(truth.gains()),
            errors: KnowledgeErrors::default(),
        }
    }

    /// Angles only, as available to the null-steering receiver.
    pub fn angles_only(aoa_estimates: Vec<f64>) -> Self {
        Self {
            aoa_estimates,
            gain_estimates: None,
            errors: KnowledgeErrors::default(),
        }
    }
}

/// Apply `errors` to the true paths.
///
/// All angle draws happen before any gain draw, so the angle estimates for a
/// given stream do not depend on the gain error variance.
pub fn perturb_knowledge<R: Rng + ?Sized>(
    truth: &PathSet,
    errors: &KnowledgeErrors,
    rng: &mut R,
) -> ChannelKnowledge {
    let aoa_sd = errors.aoa_variance.sqrt();
    let aoa_estimates = truth
        .paths()
        .iter()
        .map(|p| {
            let noise: f64 = rng.sample(StandardNormal);
            (p.angle + errors.aoa_offset + aoa_sd * noise).clamp(-FRAC_PI_2, FRAC_PI_2)
        })
        .collect();
    let gain_estimates = truth
        .paths()
        .iter()
        .map(|p| p.gain + complex_normal(rng, errors.gain_variance))
        .collect();
    ChannelKnowledge {
        aoa_estimates,
        gain_estimates: Some(gain_estimates),
        errors: *errors,
    }
}

/// `W* h_faulty + z`. Knows nothing about the fault pattern.
pub fn measure<R: Rng + ?Sized>(
    combiner: &CombinerMatrix,
    channel: &ChannelPair,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<CVector> {
    if combiner.n_elements() != channel.faulty.len() {
        return Err(Error::Domain(format!(
            "combiner built for {} elements, channel has {}",
            combiner.n_elements(),
            channel.faulty.len()
        )));
    }
    let clean = combiner.columns.ad_mul(&channel.faulty);
    Ok(clean + noise.sample(combiner.n_measurements(), rng))
}

/// Stopping rule handed to OMP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub sparsity: Option<usize>,
    pub residual_tolerance: Option<f64>,
}

impl StoppingRule {
    pub fn sparsity(s: usize) -> Self {
        Self {
            sparsity: Some(s),
            residual_tolerance: None,
        }
    }

    /// `eps = sqrt(M) * sigma`, the expected noise norm over `m` measurements.
    pub fn noise_matched(m: usize, noise: &NoiseModel) -> Self {
        Self {
            sparsity: None,
            residual_tolerance: Some((m as f64 * noise.variance()).sqrt()),
        }
    }
}

/// Null-steering combiner for the estimated angles.
///
/// With a codebook the estimates are snapped to grid indices and the remaining
/// codebook columns are used; otherwise random-phase weights are projected
/// onto the orthogonal complement of the estimated steering vectors.
pub fn proposed_combiner<R: Rng + ?Sized>(
    cfg: &ArrayConfig,
    codebook: Option<&DftCodebook>,
    aoa_estimates: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<CombinerMatrix> {
    match codebook {
        Some(book) => {
            let indices = aoa_estimates
                .iter()
                .map(|&theta| nearest_grid_index(book, theta))
                .collect::<Result<BTreeSet<usize>>>()?;
            combiner_dft_null(book, &indices, m, rng)
        }
        None => {
            let basis = householder_projector(cfg, aoa_estimates)?;
            combiner_projected_random(&basis, m, rng)
        }
    }
}

fn check_dims(cfg: &ArrayConfig, measurements: &CVector, combiner: &CombinerMatrix) -> Result<()> {
    if combiner.n_elements() != cfg.n_elements() {
        return Err(Error::Domain(format!(
            "combiner has {} rows for a {}-element array",
            combiner.n_elements(),
            cfg.n_elements()
        )));
    }
    if measurements.len() != combiner.n_measurements() {
        return Err(Error::Domain(format!(
            "{} measurements for a {}-column combiner",
            measurements.len(),
            combiner.n_measurements()
        )));
    }
    Ok(())
}

/// Recover the error channel from nulled measurements. Gains are never read.
pub fn diagnose_proposed(
    cfg: &ArrayConfig,
    knowledge: &ChannelKnowledge,
    measurements: &CVector,
    combiner: &CombinerMatrix,
    stop: StoppingRule,
) -> Result<DiagnosisResult> {
    check_dims(cfg, measurements, combiner)?;
    if !combiner.strategy.is_nulling() {
        return Err(Error::Domain(
            "null-steering diagnosis needs a nulling combiner".into(),
        ));
    }
    if knowledge.aoa_estimates.len() >= cfg.n_elements() {
        return Err(Error::Domain(
            "more arrival angles than array elements".into(),
        ));
    }
    let problem = RecoveryProblem::new(
        combiner.sensing(),
        measurements.clone(),
        stop.sparsity,
        stop.residual_tolerance,
    )?;
    omp_solve(&problem)
}

/// Fault-free response the receiver predicts from its channel estimate.
pub fn reference_channel(cfg: &ArrayConfig, knowledge: &ChannelKnowledge) -> Result<CVector> {
    let gains = knowledge
        .gain_estimates
        .as_ref()
        .ok_or_else(|| Error::Domain("difference diagnosis needs gain estimates".into()))?;
    if gains.len() != knowledge.aoa_estimates.len() {
        return Err(Error::Domain(format!(
            "{} gain estimates for {} angles",
            gains.len(),
            knowledge.aoa_estimates.len()
        )));
    }
    let paths = gains
        .iter()
        .zip(&knowledge.aoa_estimates)
        .map(|(&gain, &angle)| Path { gain, angle })
        .collect();
    synthesize_channel(cfg, &PathSet::new(cfg, paths)?)
}

/// Subtract the measured response from a noiseless synthesized reference and
/// recover `h - Bh`.
pub fn diagnose_difference(
    cfg: &ArrayConfig,
    knowledge: &ChannelKnowledge,
    faulty_measurements: &CVector,
    combiner: &CombinerMatrix,
    stop: StoppingRule,
) -> Result<DiagnosisResult> {
    check_dims(cfg, faulty_measurements, combiner)?;
    if combiner.strategy != CombinerStrategy::RandomPhase {
        return Err(Error::Domain(
            "difference diagnosis expects a random-phase combiner".into(),
        ));
    }
    let reference = combiner.columns.ad_mul(&reference_channel(cfg, knowledge)?);
    let difference = reference - faulty_measurements;
    let problem = RecoveryProblem::new(
        combiner.sensing(),
        difference,
        stop.sparsity,
        stop.residual_tolerance,
    )?;
    omp_solve(&problem)
}

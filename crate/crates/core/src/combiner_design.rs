//! Combining-matrix designs.
//!
//! * [`combiner_dft_null`]: codebook columns away from the known grid AoAs.
//! * [`householder_projector`] + [`combiner_from_projector`]: columns of the
//!   orthogonal-complement projector for off-grid AoAs.
//! * [`combiner_projected_random`]: random-phase combiners pushed through the
//!   same projector. This is what the diagnosis pipelines use off-grid, since
//!   projector columns are close to unit vectors and only observe the
//!   elements they happen to select.
//! * [`combiner_random_phase`]: unconstrained random phases for the
//!   difference baseline.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array_model::{steering_vector, ArrayConfig, DftCodebook};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Condition number of `D*D` above which the steering block counts as singular.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Projector columns shorter than this lie in the steering span and are skipped.
pub const MIN_COLUMN_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerStrategy {
    DftNull,
    Householder,
    ProjectedRandom,
    RandomPhase,
}

impl CombinerStrategy {
    /// Whether the design nulls the targeted arrival directions.
    pub fn is_nulling(&self) -> bool {
        !matches!(self, CombinerStrategy::RandomPhase)
    }
}

/// `N x M` combining matrix; column `m` is the weight vector of measurement `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerMatrix {
    pub columns: CMatrix,
    pub strategy: CombinerStrategy,
    /// Arrival angles the design nulls. Empty for random phases.
    pub nulled_angles: Vec<f64>,
    /// Codebook or projector column indices used, in column order. Empty for
    /// randomly mixed designs.
    pub selection: Vec<usize>,
}

impl CombinerMatrix {
    pub fn n_elements(&self) -> usize {
        self.columns.nrows()
    }

    pub fn n_measurements(&self) -> usize {
        self.columns.ncols()
    }

    /// `W*`, the `M x N` sensing matrix seen by sparse recovery.
    pub fn sensing(&self) -> CMatrix {
        self.columns.adjoint()
    }
}

/// Orthogonal-complement projector `Q = I - D (D*D)^-1 D*` of a steering block.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceBasis {
    pub projector: CMatrix,
    pub steering_block: CMatrix,
    pub angles: Vec<f64>,
}

impl NullSpaceBasis {
    pub fn n_elements(&self) -> usize {
        self.projector.nrows()
    }

    pub fn n_nulled(&self) -> usize {
        self.steering_block.ncols()
    }
}

pub fn householder_projector(cfg: &ArrayConfig, angles: &[f64]) -> Result<NullSpaceBasis> {
    let n = cfg.n_elements();
    let l = angles.len();
    if l >= n {
        return Err(Error::Domain(format!(
            "cannot null {l} directions with {n} elements"
        )));
    }
    let mut block = CMatrix::zeros(n, l);
    for (k, &theta) in angles.iter().enumerate() {
        block.set_column(k, &steering_vector(cfg, theta)?.entries);
    }
    if l == 0 {
        return Ok(NullSpaceBasis {
            projector: CMatrix::identity(n, n),
            steering_block: block,
            angles: Vec::new(),
        });
    }

    let gram = block.ad_mul(&block);
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond.is_nan() || cond > MAX_GRAM_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let chol = gram.cholesky().ok_or(Error::IllConditioned(cond))?;
    // (D*D)^-1 D*
    let pinv = chol.solve(&block.adjoint());
    let mut projector = CMatrix::identity(n, n) - &block * pinv;
    // Symmetrize away rounding so Q* = Q holds to machine precision.
    let adj = projector.adjoint();
    projector = (projector + adj) * C64::new(0.5, 0.0);
    Ok(NullSpaceBasis {
        projector,
        steering_block: block,
        angles: angles.to_vec(),
    })
}

fn check_capacity(m: usize, available: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Domain("at least one measurement is required".into()));
    }
    if m > available {
        return Err(Error::Capacity(format!(
            "{m} measurements requested but only {available} null-space directions"
        )));
    }
    Ok(())
}

/// `M` distinct projector columns drawn uniformly, each scaled to unit norm.
pub fn combiner_from_projector<R: Rng + ?Sized>(
    basis: &NullSpaceBasis,
    m: usize,
    rng: &mut R,
) -> Result<CombinerMatrix> {
    let n = basis.n_elements();
    check_capacity(m, n - basis.n_nulled())?;
    let mut selection = Vec::with_capacity(m);
    let mut columns = CMatrix::zeros(n, m);
    for idx in rand::seq::index::sample(rng, n, n) {
        let col = basis.projector.column(idx);
        let norm = col.norm();
        if norm < MIN_COLUMN_NORM {
            continue;
        }
        columns.set_column(selection.len(), &(col / C64::new(norm, 0.0)));
        selection.push(idx);
        if selection.len() == m {
            break;
        }
    }
    if selection.len() < m {
        return Err(Error::Capacity(format!(
            "only {} usable projector columns for {m} measurements",
            selection.len()
        )));
    }
    Ok(CombinerMatrix {
        columns,
        strategy: CombinerStrategy::Householder,
        nulled_angles: basis.angles.clone(),
        selection,
    })
}

fn random_phase_column<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    let scale = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |_, _| C64::from_polar(scale, rng.random_range(0.0..TAU)))
}

/// Random-phase weight vectors projected onto the null space, unit norm.
pub fn combiner_projected_random<R: Rng + ?Sized>(
    basis: &NullSpaceBasis,
    m: usize,
    rng: &mut R,
) -> Result<CombinerMatrix> {
    let n = basis.n_elements();
    check_capacity(m, n - basis.n_nulled())?;
    let mut columns = CMatrix::zeros(n, m);
    for k in 0..m {
        // The projected column can only vanish if the draw lies in span(D).
        let col = loop {
            let col = &basis.projector * random_phase_column(n, rng);
            let norm = col.norm();
            if norm >= MIN_COLUMN_NORM {
                break col / C64::new(norm, 0.0);
            }
        };
        columns.set_column(k, &col);
    }
    Ok(CombinerMatrix {
        columns,
        strategy: CombinerStrategy::ProjectedRandom,
        nulled_angles: basis.angles.clone(),
        selection: Vec::new(),
    })
}

/// `M` distinct codebook columns away from the grid AoAs, ascending index order.
pub fn combiner_dft_null<R: Rng + ?Sized>(
    codebook: &DftCodebook,
    aoa_indices: &BTreeSet<usize>,
    m: usize,
    rng: &mut R,
) -> Result<CombinerMatrix> {
    let n = codebook.len();
    if let Some(&bad) = aoa_indices.iter().find(|&&i| i >= n) {
        return Err(Error::Domain(format!(
            "grid index {bad} outside codebook of {n}"
        )));
    }
    let candidates: Vec<usize> = (0..n).filter(|i| !aoa_indices.contains(i)).collect();
    check_capacity(m, candidates.len())?;
    let mut selection: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), m)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    selection.sort_unstable();
    let columns = codebook.columns.select_columns(selection.iter());
    Ok(CombinerMatrix {
        columns,
        strategy: CombinerStrategy::DftNull,
        nulled_angles: aoa_indices
            .iter()
            .map(|&i| codebook.grid_angle(i))
            .collect(),
        selection,
    })
}

/// Entries `exp(j*phi) / sqrt(N)` with i.i.d. uniform phases.
pub fn combiner_random_phase<R: Rng + ?Sized>(
    cfg: &ArrayConfig,
    m: usize,
    rng: &mut R,
) -> Result<CombinerMatrix> {
    if m == 0 {
        return Err(Error::Domain("at least one measurement is required".into()));
    }
    let n = cfg.n_elements();
    let mut columns = CMatrix::zeros(n, m);
    for k in 0..m {
        columns.set_column(k, &random_phase_column(n, rng));
    }
    Ok(CombinerMatrix {
        columns,
        strategy: CombinerStrategy::RandomPhase,
        nulled_angles: Vec::new(),
        selection: Vec::new(),
    })
}

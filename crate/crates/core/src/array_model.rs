//! Half-wavelength uniform linear array: steering vectors and the DFT codebook.
//!
//! Element `n` of the response to a plane wave from angle `theta` (radians
//! from broadside) is `exp(j*pi*n*sin(theta)) / sqrt(N)`. Writing
//! `psi = pi*sin(theta)` for the spatial frequency, grid point `i` of the
//! codebook sits at `psi_i = 2*pi*i/N` wrapped into `[-pi, pi)`, which makes the
//! codebook exactly the unitary DFT matrix.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::{CMatrix, CVector, Error, Result, C64};

/// Geometry of the array under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayConfig {
    n_elements: usize,
}

impl ArrayConfig {
    /// Inter-element spacing in wavelengths. The only supported geometry.
    pub const SPACING_WAVELENGTHS: f64 = 0.5;

    pub fn new(n_elements: usize) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::Domain(format!(
                "array needs at least 2 elements, got {n_elements}"
            )));
        }
        Ok(Self { n_elements })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn spacing_wavelengths(&self) -> f64 {
        Self::SPACING_WAVELENGTHS
    }
}

/// Unit-norm array response towards a single direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: CVector,
    pub angle: f64,
}

pub(crate) fn check_angle(theta: f64) -> Result<()> {
    if !theta.is_finite() || !(-FRAC_PI_2..=FRAC_PI_2).contains(&theta) {
        return Err(Error::Domain(format!(
            "angle {theta} rad outside [-pi/2, pi/2]"
        )));
    }
    Ok(())
}

pub fn steering_vector(cfg: &ArrayConfig, theta: f64) -> Result<SteeringVector> {
    check_angle(theta)?;
    Ok(SteeringVector {
        entries: response(cfg.n_elements, PI * theta.sin()),
        angle: theta,
    })
}

/// Unit-norm response at spatial frequency `psi`.
pub(crate) fn response(n: usize, psi: f64) -> CVector {
    let scale = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |k, _| C64::from_polar(scale, psi * k as f64))
}

/// The quantized-AoA dictionary: column `i` is the response at grid point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DftCodebook {
    pub columns: CMatrix,
    /// Spatial frequency of each column, wrapped into `[-pi, pi)`.
    pub grid: Vec<f64>,
}

impl DftCodebook {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Physical arrival angle of grid point `index`.
    pub fn grid_angle(&self, index: usize) -> f64 {
        (self.grid[index] / PI).clamp(-1.0, 1.0).asin()
    }

    pub fn column(&self, index: usize) -> CVector {
        self.columns.column(index).into_owned()
    }
}

/// Spatial frequency of DFT bin `index` out of `n`, wrapped into `[-pi, pi)`.
pub fn grid_frequency(n: usize, index: usize) -> f64 {
    let psi = TAU * index as f64 / n as f64;
    if psi >= PI {
        psi - TAU
    } else {
        psi
    }
}

pub fn dft_codebook(cfg: &ArrayConfig) -> DftCodebook {
    let n = cfg.n_elements;
    let scale = 1.0 / (n as f64).sqrt();
    // Phases are reduced modulo N before scaling so exact grid entries stay
    // exact regardless of N.
    let columns = CMatrix::from_fn(n, n, |row, col| {
        let k = (row * col) % n;
        C64::from_polar(scale, TAU * k as f64 / n as f64)
    });
    let grid = (0..n).map(|i| grid_frequency(n, i)).collect();
    DftCodebook { columns, grid }
}

/// Codebook column best aligned with the response at `theta`.
///
/// Ties go to the smaller index.
pub fn nearest_grid_index(codebook: &DftCodebook, theta: f64) -> Result<usize> {
    check_angle(theta)?;
    let n = codebook.columns.nrows();
    let target = response(n, PI * theta.sin());
    let gains = codebook.columns.ad_mul(&target);
    let mut best = 0;
    let mut best_gain = f64::NEG_INFINITY;
    for (i, g) in gains.iter().enumerate() {
        let g = g.norm();
        if g > best_gain + 1e-12 {
            best = i;
            best_gain = g;
        }
    }
    Ok(best)
}

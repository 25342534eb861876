//! Geometric multipath channel, antenna fault injection and the error channel.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array_model::{check_angle, grid_frequency, steering_vector, ArrayConfig};
use crate::{CVector, Error, Result, C64};

/// One propagation path: complex gain and arrival angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: C64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(cfg: &ArrayConfig, paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Domain("a path set needs at least one path".into()));
        }
        if paths.len() > cfg.n_elements() {
            return Err(Error::Domain(format!(
                "{} paths exceed the {} array elements",
                paths.len(),
                cfg.n_elements()
            )));
        }
        for p in &paths {
            check_angle(p.angle)?;
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.angle).collect()
    }

    pub fn gains(&self) -> Vec<C64> {
        self.paths.iter().map(|p| p.gain).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// Element fully blocked or dead: coefficient 0.
    Complete,
    /// Random attenuation and phase shift.
    Partial,
}

impl FaultMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FaultMode::Complete => "complete",
            FaultMode::Partial => "partial",
        }
    }
}

impl std::str::FromStr for FaultMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "complete" => Ok(FaultMode::Complete),
            "partial" => Ok(FaultMode::Partial),
            other => Err(format!("unknown fault mode `{other}`")),
        }
    }
}

/// Sparse diagonal blockage matrix. Elements not listed have coefficient 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FaultPattern {
    faults: BTreeMap<usize, C64>,
}

impl FaultPattern {
    pub fn new(n_elements: usize, faults: BTreeMap<usize, C64>) -> Result<Self> {
        if faults.len() >= n_elements {
            return Err(Error::Domain(format!(
                "{} faults on a {n_elements}-element array",
                faults.len()
            )));
        }
        for (&n, c) in &faults {
            if n >= n_elements {
                return Err(Error::Domain(format!(
                    "fault index {n} outside array of {n_elements}"
                )));
            }
            if c.norm().is_nan() || c.norm() > 1.0 + 1e-12 {
                return Err(Error::Domain(format!(
                    "fault coefficient at {n} has magnitude {} > 1",
                    c.norm()
                )));
            }
        }
        Ok(Self { faults })
    }

    pub fn faults(&self) -> &BTreeMap<usize, C64> {
        &self.faults
    }

    pub fn len(&self) -> usize {
        self.faults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    pub fn indices(&self) -> BTreeSet<usize> {
        self.faults.keys().copied().collect()
    }

    pub fn coefficient(&self, n: usize) -> C64 {
        self.faults.get(&n).copied().unwrap_or(C64::new(1.0, 0.0))
    }
}

/// Nominal channel, channel seen through the faulty array, and their difference.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    pub nominal: CVector,
    pub faulty: CVector,
    pub error: CVector,
}

/// `h = sqrt(N/L) * sum_l gain_l * a(angle_l)`.
pub fn synthesize_channel(cfg: &ArrayConfig, paths: &PathSet) -> Result<CVector> {
    let n = cfg.n_elements();
    let scale = (n as f64 / paths.len() as f64).sqrt();
    let mut h = CVector::zeros(n);
    for p in paths.paths() {
        let a = steering_vector(cfg, p.angle)?;
        h.axpy(p.gain * scale, &a.entries, C64::new(1.0, 0.0));
    }
    Ok(h)
}

/// Standard circular complex Gaussian scaled to variance `variance`.
pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Draw `n_paths` paths with CN(0,1) gains and distinct arrival angles.
///
/// Quantized angles sit on the DFT grid; otherwise `sin(angle)` is uniform on
/// `[-1, 1)`.
pub fn sample_paths<R: Rng + ?Sized>(
    cfg: &ArrayConfig,
    n_paths: usize,
    quantized: bool,
    rng: &mut R,
) -> Result<PathSet> {
    let n = cfg.n_elements();
    if n_paths == 0 || n_paths > n {
        return Err(Error::Domain(format!(
            "need 1 <= L <= {n}, got L = {n_paths}"
        )));
    }
    let angles: Vec<f64> = if quantized {
        rand::seq::index::sample(rng, n, n_paths)
            .into_iter()
            .map(|i| (grid_frequency(n, i) / PI).clamp(-1.0, 1.0).asin())
            .collect()
    } else {
        let mut angles: Vec<f64> = Vec::with_capacity(n_paths);
        while angles.len() < n_paths {
            let s: f64 = rng.random_range(-1.0..1.0);
            let theta = s.asin();
            if !angles.contains(&theta) {
                angles.push(theta);
            }
        }
        angles
    };
    let paths = angles
        .into_iter()
        .map(|angle| Path {
            gain: complex_normal(rng, 1.0),
            angle,
        })
        .collect();
    PathSet::new(cfg, paths)
}

/// Pick `n_faults` distinct elements uniformly and assign fault coefficients.
pub fn sample_faults<R: Rng + ?Sized>(
    n_elements: usize,
    n_faults: usize,
    mode: FaultMode,
    rng: &mut R,
) -> Result<FaultPattern> {
    if n_faults >= n_elements {
        return Err(Error::Domain(format!(
            "S = {n_faults} must be below N = {n_elements}"
        )));
    }
    let mut indices = rand::seq::index::sample(rng, n_elements, n_faults).into_vec();
    indices.sort_unstable();
    let faults = indices
        .into_iter()
        .map(|n| {
            let coeff = match mode {
                FaultMode::Complete => C64::new(0.0, 0.0),
                FaultMode::Partial => {
                    let kappa: f64 = rng.sample(Open01);
                    let phi: f64 = rng.random_range(0.0..TAU);
                    C64::from_polar(kappa, phi)
                }
            };
            (n, coeff)
        })
        .collect();
    FaultPattern::new(n_elements, faults)
}

pub fn apply_faults(h: &CVector, faults: &FaultPattern) -> Result<ChannelPair> {
    let mut faulty = h.clone();
    let mut error = CVector::zeros(h.len());
    for (&n, &coeff) in faults.faults() {
        if n >= h.len() {
            return Err(Error::Domain(format!(
                "fault index {n} outside channel of length {}",
                h.len()
            )));
        }
        faulty[n] = coeff * h[n];
        error[n] = faulty[n] - h[n];
    }
    Ok(ChannelPair {
        nominal: h.clone(),
        faulty,
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(n: usize) -> ArrayConfig {
        ArrayConfig::new(n).unwrap()
    }

    #[test]
    fn single_broadside_path() {
        let c = cfg(4);
        let paths = PathSet::new(
            &c,
            vec![Path {
                gain: C64::new(1.0, 0.0),
                angle: 0.0,
            }],
        )
        .unwrap();
        let h = synthesize_channel(&c, &paths).unwrap();
        for e in h.iter() {
            assert_abs_diff_eq!(e.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(e.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn orthogonal_grid_paths_keep_energy() {
        let c = cfg(8);
        let book = crate::array_model::dft_codebook(&c);
        let paths = PathSet::new(
            &c,
            vec![
                Path {
                    gain: C64::new(1.0, 0.0),
                    angle: book.grid_angle(1),
                },
                Path {
                    gain: C64::new(1.0, 0.0),
                    angle: book.grid_angle(5),
                },
            ],
        )
        .unwrap();
        let h = synthesize_channel(&c, &paths).unwrap();
        // Direct evaluation of sqrt(N/L) * sum of two exponentials.
        let mut energy = 0.0;
        for n in 0..8 {
            let mut acc = C64::new(0.0, 0.0);
            for i in [1usize, 5] {
                acc += C64::from_polar(1.0 / 8f64.sqrt(), TAU * (n * i) as f64 / 8.0);
            }
            acc *= 2.0; // sqrt(N/L) = 2
            assert_abs_diff_eq!((acc - h[n]).norm(), 0.0, epsilon = 1e-12);
            energy += acc.norm_sqr();
        }
        assert_abs_diff_eq!(energy, 8.0, epsilon = 1e-10);
        assert_abs_diff_eq!(h.norm_squared(), 8.0, epsilon = 1e-10);
    }

    #[test]
    fn path_set_validation() {
        let c = cfg(4);
        assert!(PathSet::new(&c, vec![]).is_err());
        let p = Path {
            gain: C64::new(1.0, 0.0),
            angle: 2.0,
        };
        assert!(PathSet::new(&c, vec![p]).is_err());
        assert!(sample_paths(&c, 5, false, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(sample_paths(&c, 0, true, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn channel_energy_matches_array_size() {
        let c = cfg(16);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let paths = sample_paths(&c, 3, false, &mut rng).unwrap();
            total += synthesize_channel(&c, &paths).unwrap().norm_squared();
        }
        let mean = total / trials as f64;
        assert!((mean - 16.0).abs() < 0.05 * 16.0, "mean energy {mean}");
    }

    #[test]
    fn sampled_paths() {
        let c = cfg(128);
        let book = crate::array_model::dft_codebook(&c);
        let a = sample_paths(&c, 1, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_paths(&c, 1, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let idx = crate::array_model::nearest_grid_index(&book, a.paths()[0].angle).unwrap();
        assert!((book.grid_angle(idx) - a.paths()[0].angle).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for quantized in [true, false] {
            for _ in 0..200 {
                let p = sample_paths(&c, 3, quantized, &mut rng).unwrap();
                let angles = p.angles();
                assert_eq!(angles.len(), 3);
                assert!(angles[0] != angles[1] && angles[1] != angles[2] && angles[0] != angles[2]);
            }
        }

        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let g = sample_paths(&c, 1, false, &mut rng).unwrap().paths()[0].gain;
            sum += g.re + g.im;
            sum_sq += g.norm_sqr();
        }
        let var = sum_sq / draws as f64;
        assert!((var - 1.0).abs() < 0.05, "gain variance {var}");
        assert!((sum / draws as f64).abs() < 0.05);
    }

    #[test]
    fn fault_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let empty = sample_faults(128, 0, FaultMode::Complete, &mut rng).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.coefficient(5), C64::new(1.0, 0.0));

        let complete = sample_faults(128, 6, FaultMode::Complete, &mut rng).unwrap();
        assert_eq!(complete.len(), 6);
        assert!(complete.faults().values().all(|c| c.norm() == 0.0));

        assert!(sample_faults(8, 8, FaultMode::Complete, &mut rng).is_err());

        let mut kappa_sum = 0.0;
        let mut count = 0;
        for _ in 0..10_000 / 6 + 1 {
            let p = sample_faults(128, 6, FaultMode::Partial, &mut rng).unwrap();
            for c in p.faults().values() {
                let k = c.norm();
                assert!(k > 0.0 && k < 1.0);
                kappa_sum += k;
                count += 1;
            }
        }
        let mean = kappa_sum / count as f64;
        assert!((mean - 0.5).abs() < 0.025, "mean kappa {mean}");
    }

    #[test]
    fn fault_pattern_validation() {
        let mut m = BTreeMap::new();
        m.insert(9, C64::new(0.0, 0.0));
        assert!(FaultPattern::new(8, m).is_err());
        let mut m = BTreeMap::new();
        m.insert(1, C64::new(1.5, 0.0));
        assert!(FaultPattern::new(8, m).is_err());
    }

    #[test]
    fn applying_faults() {
        let h = CVector::from_vec(vec![
            C64::new(1.0, 2.0),
            C64::new(-0.5, 0.3),
            C64::new(0.2, -1.0),
        ]);
        let none = apply_faults(&h, &FaultPattern::default()).unwrap();
        assert_eq!(none.faulty, h);
        assert_eq!(none.error, CVector::zeros(3));

        let mut m = BTreeMap::new();
        m.insert(0, C64::new(0.0, 0.0));
        m.insert(2, C64::from_polar(0.5, PI));
        let pattern = FaultPattern::new(3, m).unwrap();
        let pair = apply_faults(&h, &pattern).unwrap();
        assert_eq!(pair.faulty[0], C64::new(0.0, 0.0));
        assert_eq!(pair.error[0], -h[0]);
        assert_abs_diff_eq!((pair.error[2] - h[2] * -1.5).norm(), 0.0, epsilon = 1e-15);
        assert_eq!(pair.error[1], C64::new(0.0, 0.0));

        let short = CVector::zeros(2);
        assert!(apply_faults(&short, &pattern).is_err());
    }

    /// Channel entries, fault indices, and fault (magnitude, phase) pairs.
    type ArbChannel = (Vec<(f64, f64)>, Vec<usize>, Vec<(f64, f64)>);

    fn arb_channel() -> impl Strategy<Value = ArbChannel> {
        (
            prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 16),
            prop::collection::btree_set(0usize..16, 0..6).prop_map(|s| s.into_iter().collect()),
            prop::collection::vec((0.0..1.0f64, 0.0..TAU), 6),
        )
    }

    proptest! {
        #[test]
        fn error_channel_properties((h, idx, coeffs) in arb_channel(), scale in (-2.0..2.0f64, -2.0..2.0f64)) {
            let h = CVector::from_iterator(16, h.into_iter().map(|(re, im)| C64::new(re, im)));
            let faults: BTreeMap<usize, C64> = idx
                .iter()
                .zip(&coeffs)
                .map(|(&n, &(k, p))| (n, C64::from_polar(k, p)))
                .collect();
            let pattern = FaultPattern::new(16, faults).unwrap();
            let pair = apply_faults(&h, &pattern).unwrap();

            let support: Vec<usize> = (0..16).filter(|&n| pair.error[n].norm() != 0.0).collect();
            prop_assert!(support.len() <= pattern.len());
            for n in &support {
                prop_assert!(pattern.faults().contains_key(n));
            }
            for n in 0..16 {
                prop_assert!((pair.faulty[n] - (pair.nominal[n] + pair.error[n])).norm() < 1e-12);
            }

            let c = C64::new(scale.0, scale.1);
            let scaled = apply_faults(&(&h * c), &pattern).unwrap();
            prop_assert!((scaled.error - &pair.error * c).norm() < 1e-10);
        }

        #[test]
        fn complete_faults_are_idempotent(h in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 12),
                                          idx in prop::collection::btree_set(0usize..12, 0..11)) {
            let h = CVector::from_iterator(12, h.into_iter().map(|(re, im)| C64::new(re, im)));
            let pattern = FaultPattern::new(
                12,
                idx.iter().map(|&n| (n, C64::new(0.0, 0.0))).collect(),
            ).unwrap();
            let once = apply_faults(&h, &pattern).unwrap().faulty;
            let twice = apply_faults(&once, &pattern).unwrap().faulty;
            prop_assert_eq!(once, twice);
        }
    }
}

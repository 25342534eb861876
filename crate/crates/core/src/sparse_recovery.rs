//! Sparse support recovery: orthogonal matching pursuit and an exhaustive
//! least-squares search used as ground truth on small instances.

use std::collections::BTreeSet;

use itertools::Itertools;

use crate::{CMatrix, CVector, Error, Result, C64};

/// Largest number of supports [`exhaustive_solve`] will enumerate.
pub const EXHAUSTIVE_BUDGET: u128 = 1_000_000;

/// Relative residual decrease below which OMP stops adding columns.
const MIN_RELATIVE_IMPROVEMENT: f64 = 1e-12;

/// Orthogonal component below this fraction of the column norm is a rank drop.
const RANK_TOLERANCE: f64 = 1e-10;

/// `observations ~ sensing * x` with `x` sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryProblem {
    /// `M x N`; row `m` is the conjugated weight vector of measurement `m`.
    pub sensing: CMatrix,
    pub observations: CVector,
    /// Stop after this many selected columns.
    pub sparsity: Option<usize>,
    /// Stop once the residual norm is at most this.
    pub residual_tolerance: Option<f64>,
}

impl RecoveryProblem {
    pub fn new(
        sensing: CMatrix,
        observations: CVector,
        sparsity: Option<usize>,
        residual_tolerance: Option<f64>,
    ) -> Result<Self> {
        if sparsity.is_none() && residual_tolerance.is_none() {
            return Err(Error::Domain(
                "set a sparsity level, a residual tolerance, or both".into(),
            ));
        }
        if let Some(eps) = residual_tolerance {
            if eps.is_nan() || eps < 0.0 {
                return Err(Error::Domain(format!(
                    "residual tolerance {eps} is negative"
                )));
            }
        }
        let (m, n) = sensing.shape();
        if observations.len() != m {
            return Err(Error::Domain(format!(
                "{} observations for a {m}-row sensing matrix",
                observations.len()
            )));
        }
        if m > n {
            return Err(Error::Domain(format!(
                "more measurements ({m}) than unknowns ({n})"
            )));
        }
        Ok(Self {
            sensing,
            observations,
            sparsity,
            residual_tolerance,
        })
    }

    /// Known-sparsity problem, the mode the experiments use.
    pub fn with_sparsity(sensing: CMatrix, observations: CVector, sparsity: usize) -> Result<Self> {
        Self::new(sensing, observations, Some(sparsity), None)
    }

    pub fn n_unknowns(&self) -> usize {
        self.sensing.ncols()
    }

    pub fn n_measurements(&self) -> usize {
        self.sensing.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisResult {
    /// Recovered sparse vector, zero off `support`.
    pub estimate: CVector,
    /// Selected indices in selection order.
    pub support: Vec<usize>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Residual norm before the first and after every accepted iteration.
    pub residual_history: Vec<f64>,
}

impl DiagnosisResult {
    pub fn empty(n: usize, residual_norm: f64) -> Self {
        Self {
            estimate: CVector::zeros(n),
            support: Vec::new(),
            residual_norm,
            iterations: 0,
            residual_history: vec![residual_norm],
        }
    }
}

/// Orthogonal matching pursuit.
///
/// Each iteration picks the column with the largest normalized correlation to
/// the residual (ties to the smallest index) and refits all selected
/// coefficients by least squares through an incrementally grown QR
/// factorization.
pub fn omp_solve(problem: &RecoveryProblem) -> Result<DiagnosisResult> {
    let a = &problem.sensing;
    let y = &problem.observations;
    let (m, n) = a.shape();

    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    if let Some(k) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Domain(format!("sensing column {k} is zero")));
    }

    let max_support = problem.sparsity.unwrap_or(n).min(m).min(n);
    let mut support: Vec<usize> = Vec::new();
    let mut selected = vec![false; n];
    let mut q_basis: Vec<CVector> = Vec::new();
    // Column k holds the coefficients of selected column k in the Q basis.
    let mut r_cols: Vec<Vec<C64>> = Vec::new();
    let mut qy: Vec<C64> = Vec::new();

    let mut residual = y.clone();
    let mut residual_norm = residual.norm();
    let mut history = vec![residual_norm];

    loop {
        if residual_norm == 0.0 || support.len() >= max_support {
            break;
        }
        if matches!(problem.residual_tolerance, Some(eps) if residual_norm <= eps) {
            break;
        }

        let corr = a.ad_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for k in 0..n {
            if selected[k] {
                continue;
            }
            let score = corr[k].norm() / norms[k];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        let Some((k, _)) = best else { break };

        // Modified Gram-Schmidt, applied twice.
        let col = a.column(k).into_owned();
        let mut v = col.clone();
        let mut coeffs = vec![C64::new(0.0, 0.0); q_basis.len()];
        for _ in 0..2 {
            for (c, q) in coeffs.iter_mut().zip(&q_basis) {
                let p = q.dotc(&v);
                v.axpy(-p, q, C64::new(1.0, 0.0));
                *c += p;
            }
        }
        let v_norm = v.norm();
        if v_norm <= RANK_TOLERANCE * norms[k] {
            return Err(Error::Degenerate(format!(
                "column {k} is linearly dependent on the {} already selected",
                support.len()
            )));
        }
        let q = v / C64::new(v_norm, 0.0);
        let proj = q.dotc(y);
        let next_residual = &residual - &q * q.dotc(&residual);
        let next_norm = next_residual.norm();
        if residual_norm - next_norm <= MIN_RELATIVE_IMPROVEMENT * residual_norm {
            break;
        }

        coeffs.push(C64::new(v_norm, 0.0));
        r_cols.push(coeffs);
        q_basis.push(q);
        qy.push(proj);
        support.push(k);
        selected[k] = true;
        residual = next_residual;
        residual_norm = next_norm;
        history.push(residual_norm);
    }

    // Back substitution R x = Q* y.
    let s = support.len();
    let mut x = vec![C64::new(0.0, 0.0); s];
    for i in (0..s).rev() {
        let mut acc = qy[i];
        for j in i + 1..s {
            acc -= r_cols[j][i] * x[j];
        }
        x[i] = acc / r_cols[i][i];
    }
    let mut estimate = CVector::zeros(n);
    for (&idx, &v) in support.iter().zip(&x) {
        estimate[idx] = v;
    }
    let residual_norm = (y - a * &estimate).norm();
    Ok(DiagnosisResult {
        estimate,
        iterations: s,
        support,
        residual_norm,
        residual_history: history,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Best size-`sparsity` support by enumerating every candidate.
///
/// Ties within `1e-12 * |observations|` go to the lexicographically smallest
/// support.
pub fn exhaustive_solve(problem: &RecoveryProblem, sparsity: usize) -> Result<DiagnosisResult> {
    let a = &problem.sensing;
    let y = &problem.observations;
    let (m, n) = a.shape();
    if sparsity > n {
        return Err(Error::Domain(format!(
            "support size {sparsity} exceeds {n} unknowns"
        )));
    }
    if sparsity > m {
        return Err(Error::Domain(format!(
            "support size {sparsity} exceeds {m} measurements"
        )));
    }
    let count = binomial(n, sparsity);
    if count > EXHAUSTIVE_BUDGET {
        return Err(Error::Capacity(format!(
            "C({n}, {sparsity}) = {count} supports exceed the budget of {EXHAUSTIVE_BUDGET}"
        )));
    }
    if sparsity == 0 {
        return Ok(DiagnosisResult::empty(n, y.norm()));
    }

    let tie = 1e-12 * y.norm();
    let mut best: Option<(f64, Vec<usize>, CVector)> = None;
    for cand in (0..n).combinations(sparsity) {
        let sub = a.select_columns(cand.iter());
        let svd = sub.clone().svd(true, true);
        let Ok(coef) = svd.solve(y, 1e-12) else {
            continue;
        };
        let res = (y - &sub * &coef).norm();
        if best.as_ref().is_none_or(|(b, _, _)| res < b - tie) {
            best = Some((res, cand, coef));
        }
    }
    let (residual_norm, support, coef) =
        best.ok_or_else(|| Error::Degenerate("no solvable support".into()))?;
    let mut estimate = CVector::zeros(n);
    for (&idx, &v) in support.iter().zip(coef.iter()) {
        estimate[idx] = v;
    }
    Ok(DiagnosisResult {
        estimate,
        support,
        residual_norm,
        iterations: sparsity,
        residual_history: vec![y.norm(), residual_norm],
    })
}

/// Indices of the `sparsity` largest-magnitude nonzero entries.
///
/// Fewer nonzeros than `sparsity` returns only those; callers compare sets, so
/// a short set is a failed detection.
pub fn extract_support(result: &DiagnosisResult, sparsity: usize) -> BTreeSet<usize> {
    let mut entries: Vec<(usize, f64)> = result
        .estimate
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm() > 0.0)
        .map(|(i, v)| (i, v.norm()))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.into_iter().take(sparsity).map(|(i, _)| i).collect()
}

//! Multivariate monomial expansion and minimum-norm least squares.
//!
//! Monomials are enumerated in graded order: total degree ascending, and
//! within one degree by exponent tuple in descending lexicographic order
//! (`x₁` outranks `x₂`). For `[T, R]` up to degree 2 that is
//! `[1, T, R, T², TR, R²]`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Descriptor recorded in model files for the ordering produced here.
pub const MONOMIAL_ORDER: &str = "graded-lex-desc";

/// Relative singular-value cutoff used by the pseudoinverse.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-12;

/// `C(n + m, n)`: number of monomials in `n` variables of degree ≤ `m`.
pub fn count_monomials(n_vars: usize, degree: usize) -> usize {
    let mut c: u128 = 1;
    // Multiplicative binomial; each partial product is itself a binomial.
    for i in 1..=n_vars as u128 {
        c = c * (degree as u128 + i) / i;
    }
    c as usize
}

/// Exponent tuples in canonical order.
pub fn exponents(n_vars: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(rest: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if rest == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(rest - 1, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(count_monomials(n_vars, degree));
    if n_vars == 0 {
        out.push(Vec::new());
        return out;
    }
    for d in 0..=degree as u32 {
        fill(n_vars, d, &mut Vec::with_capacity(n_vars), &mut out);
    }
    out
}

/// Human-readable monomial labels, e.g. `["1", "T", "R", "T^2", "T*R", "R^2"]`.
pub fn monomial_labels(var_names: &[String], degree: usize) -> Vec<String> {
    exponents(var_names.len(), degree)
        .into_iter()
        .map(|exp| {
            let parts: Vec<String> = exp
                .iter()
                .zip(var_names)
                .filter(|(e, _)| **e > 0)
                .map(|(e, name)| if *e == 1 { name.clone() } else { format!("{name}^{e}") })
                .collect();
            if parts.is_empty() {
                "1".to_string()
            } else {
                parts.join("*")
            }
        })
        .collect()
}

/// All monomials of `x` up to total degree `degree`. The first entry is 1.
pub fn expand_monomials(x: &[f64], degree: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(count_monomials(n, degree));
    // powers[i][p] = x_i^p
    let powers: Vec<Vec<f64>> = x
        .iter()
        .map(|&xi| {
            let mut p = Vec::with_capacity(degree + 1);
            let mut acc = 1.0;
            for _ in 0..=degree {
                p.push(acc);
                acc *= xi;
            }
            p
        })
        .collect();
    for exp in exponents(n, degree) {
        let mut v = 1.0;
        for (i, &e) in exp.iter().enumerate() {
            v *= powers[i][e as usize];
        }
        out.push(v);
    }
    out
}

/// Minimum-norm least-squares weights for `rows · W ≈ targets`.
///
/// Uses an SVD; singular values below `1e-12 · σ_max` are treated as zero.
pub fn fit_least_squares(rows: &[Vec<f64>], targets: &[f64]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(domain("least squares needs at least one row"));
    }
    if rows.len() != targets.len() {
        return Err(domain(format!(
            "{} rows but {} targets",
            rows.len(),
            targets.len()
        )));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(domain("design matrix rows must share a non-zero width"));
    }
    let a = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(targets);
    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !sigma_max.is_finite() {
        return Err(Error::Fit("design matrix contains non-finite values".into()));
    }
    if sigma_max == 0.0 {
        return Ok(vec![0.0; cols]);
    }
    let w = svd
        .solve(&b, SVD_RELATIVE_CUTOFF * sigma_max)
        .map_err(|e| Error::Fit(e.to_string()))?;
    Ok(w.iter().copied().collect())
}

/// A fitted polynomial in named variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    var_names: Vec<String>,
    degree: usize,
    monomial_order: String,
    weights: Vec<f64>,
}

impl PolyModel {
    pub fn new(var_names: Vec<String>, degree: usize, weights: Vec<f64>) -> Result<Self> {
        let model = PolyModel {
            var_names,
            degree,
            monomial_order: MONOMIAL_ORDER.to_string(),
            weights,
        };
        model.validate()?;
        Ok(model)
    }

    /// Check the structural invariants, e.g. after deserializing.
    pub fn validate(&self) -> Result<()> {
        if self.var_names.is_empty() {
            return Err(domain("polynomial model needs at least one variable"));
        }
        if self.monomial_order != MONOMIAL_ORDER {
            return Err(Error::Schema {
                found: self.monomial_order.clone(),
                expected: MONOMIAL_ORDER.to_string(),
            });
        }
        let expected = count_monomials(self.var_names.len(), self.degree);
        if self.weights.len() != expected {
            return Err(domain(format!(
                "{} weights for {} variables at degree {} (expected {expected})",
                self.weights.len(),
                self.var_names.len(),
                self.degree
            )));
        }
        Ok(())
    }

    /// Fit on raw samples; each `inputs[k]` has one value per variable.
    pub fn fit(
        var_names: Vec<String>,
        degree: usize,
        inputs: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<Self> {
        if inputs.iter().any(|x| x.len() != var_names.len()) {
            return Err(domain("input width does not match variable count"));
        }
        let rows: Vec<Vec<f64>> = inputs.iter().map(|x| expand_monomials(x, degree)).collect();
        let weights = fit_least_squares(&rows, targets)?;
        PolyModel::new(var_names, degree, weights)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.var_names.len() {
            return Err(domain(format!(
                "expected {} inputs ({}), got {}",
                self.var_names.len(),
                self.var_names.join(","),
                x.len()
            )));
        }
        Ok(expand_monomials(x, self.degree)
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| m * w)
            .sum())
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn monomial_order(&self) -> &str {
        &self.monomial_order
    }
}

/// How [`kfold_split`] assigns samples to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMode {
    /// Seeded shuffle, then contiguous chunks of the shuffled order.
    #[default]
    Shuffled,
    /// Contiguous blocks in the original (time) order; the seed is unused.
    Blocked,
}

/// One cross-validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition `0..k` into `folds` test sets whose sizes differ by at most one.
pub fn kfold_split(k: usize, folds: usize, seed: u64, mode: FoldMode) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(domain(format!("need at least 2 folds, got {folds}")));
    }
    if k < folds {
        return Err(domain(format!("{folds} folds requested for {k} samples")));
    }
    let mut order: Vec<usize> = (0..k).collect();
    if mode == FoldMode::Shuffled {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let base = k / folds;
    let extra = k % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut test = order[start..start + len].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + len..])
            .copied()
            .collect();
        train.sort_unstable();
        out.push(Fold { train, test });
        start += len;
    }
    Ok(out)
}

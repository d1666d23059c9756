//! High-dimensional input affinities: Gaussian conditionals calibrated to a
//! perplexity, then symmetrized into a joint distribution.

use serde::{Deserialize, Serialize};

use super::LayoutError;

/// Dense row-major N×N matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LayoutError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(LayoutError::InvalidInput(format!(
                "row {bad} has {} entries, expected {n}",
                rows[bad].len()
            )));
        }
        Ok(Self {
            n,
            data: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Pairwise squared Euclidean distances.
///
/// Per-coordinate terms are summed in ascending order, so the result does not
/// depend on the order of the feature columns.
pub fn squared_distances(points: &[Vec<f64>]) -> SquareMatrix {
    let n = points.len();
    let mut d = SquareMatrix::zeros(n);
    let mut terms = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            terms.clear();
            terms.extend(points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)));
            terms.sort_by(f64::total_cmp);
            let s: f64 = terms.iter().sum();
            d.set(i, j, s);
            d.set(j, i, s);
        }
    }
    d
}

/// Row-stochastic conditional affinities `P(j|i)` with the bandwidth found for each row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalAffinities {
    pub p: SquareMatrix,
    pub sigmas: Vec<f64>,
    /// Achieved Shannon entropy of each row, in bits.
    pub entropies: Vec<f64>,
    /// Rows where bisection hit the step limit; they hold the best bandwidth seen.
    pub unconverged_rows: Vec<usize>,
}

fn check_distances(distances: &SquareMatrix) -> Result<(), LayoutError> {
    let n = distances.n();
    if n < 2 {
        return Err(LayoutError::InvalidInput(
            "affinities need at least two points".into(),
        ));
    }
    for i in 0..n {
        if distances.get(i, i) != 0.0 {
            return Err(LayoutError::InvalidInput(format!("distance d[{i}][{i}] is not zero")));
        }
        for j in 0..n {
            let d = distances.get(i, j);
            if !d.is_finite() || d < 0.0 {
                return Err(LayoutError::InvalidInput(format!(
                    "distance d[{i}][{j}] = {d} is not a finite non-negative number"
                )));
            }
            if d != distances.get(j, i) {
                return Err(LayoutError::InvalidInput(format!(
                    "distances are not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if distances.as_slice().iter().all(|&d| d == 0.0) {
        return Err(LayoutError::Degenerate);
    }
    Ok(())
}

/// Fills `out` with the Gaussian row for precision `beta` and returns its entropy in bits.
fn gaussian_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let d_min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - d_min)).exp() };
        total += *o;
    }
    let mut entropy = 0.0;
    for o in out.iter_mut() {
        *o /= total;
        if *o > 0.0 {
            entropy -= *o * o.log2();
        }
    }
    entropy
}

/// Calibrates one Gaussian per row by bisection on the precision
/// `beta = 1 / (2 sigma^2)` until `|H_i - log2(perplexity)| < tolerance`.
pub fn conditional_affinities(
    distances: &SquareMatrix,
    perplexity: f64,
    tolerance: f64,
    max_steps: usize,
) -> Result<ConditionalAffinities, LayoutError> {
    check_distances(distances)?;
    if !(perplexity.is_finite() && perplexity > 0.0) {
        return Err(LayoutError::Config(format!("perplexity {perplexity} must be positive")));
    }
    let n = distances.n();
    let target = perplexity.log2();
    let mut p = SquareMatrix::zeros(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    let mut unconverged_rows = Vec::new();
    let mut row = vec![0.0; n];

    for i in 0..n {
        let dist = distances.row(i);
        let (mut beta, mut lo, mut hi) = (1.0_f64, 0.0_f64, f64::INFINITY);
        let mut best = (f64::INFINITY, beta);
        let mut converged = false;
        for _ in 0..max_steps {
            let h = gaussian_row(dist, i, beta, &mut row);
            let gap = h - target;
            if gap.abs() < best.0 {
                best = (gap.abs(), beta);
            }
            if gap.abs() < tolerance {
                converged = true;
                break;
            }
            if gap > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        if !converged {
            beta = best.1;
            unconverged_rows.push(i);
            tracing::warn!(row = i, gap = best.0, "perplexity bisection did not converge");
        }
        let h = gaussian_row(dist, i, beta, &mut row);
        for (j, v) in row.iter().enumerate() {
            p.set(i, j, *v);
        }
        sigmas.push((0.5 / beta).sqrt());
        entropies.push(h);
    }
    Ok(ConditionalAffinities {
        p,
        sigmas,
        entropies,
        unconverged_rows,
    })
}

/// Joint input affinities: symmetric, zero diagonal, non-negative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix(SquareMatrix);

impl AffinityMatrix {
    /// Wraps a matrix after checking the invariants (sum within 1e-9).
    pub fn new(m: SquareMatrix) -> Result<Self, LayoutError> {
        let n = m.n();
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(LayoutError::InvalidInput("affinity diagonal must be zero".into()));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !(v.is_finite() && v >= 0.0) || v != m.get(j, i) {
                    return Err(LayoutError::InvalidInput(format!(
                        "affinity ({i}, {j}) is negative, non-finite or asymmetric"
                    )));
                }
            }
        }
        if n > 0 && (m.sum() - 1.0).abs() > 1e-9 {
            return Err(LayoutError::InvalidInput(format!(
                "affinities sum to {}, expected 1",
                m.sum()
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

/// `P_ij = (P(j|i) + P(i|j)) / 2N`.
pub fn symmetrize(conditional: &SquareMatrix) -> AffinityMatrix {
    let n = conditional.n();
    let scale = 1.0 / (2.0 * n as f64);
    let mut p = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (conditional.get(i, j) + conditional.get(j, i)) * scale;
            p.set(i, j, v);
            p.set(j, i, v);
        }
    }
    AffinityMatrix(p)
}

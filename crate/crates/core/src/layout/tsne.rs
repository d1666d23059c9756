use serde::{Deserialize, Serialize};

use super::affinity::{conditional_affinities, squared_distances, symmetrize, AffinityMatrix, SquareMatrix};
use super::rng::LayoutRng;
use super::LayoutError;
use crate::embedding::EmbeddingMatrix;

/// Standard deviation of the initial Gaussian cloud.
pub const INIT_STD: f64 = 1e-4;

/// Standard deviation of the jitter added to distances between duplicate rows.
pub const DUPLICATE_JITTER_STD: f64 = 1e-8;

pub const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration_factor: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub seed: u64,
    pub entropy_tolerance: f64,
    pub max_bisection_steps: usize,
    /// Per-coordinate step gains (delta-bar-delta): +0.2 when the gradient
    /// sign disagrees with the current velocity, ×0.8 otherwise, floored at
    /// [`MIN_GAIN`]. Off means plain momentum descent.
    pub adaptive_gains: bool,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 10.0,
            iterations: 1000,
            early_exaggeration_factor: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            seed: 0,
            entropy_tolerance: 1e-5,
            max_bisection_steps: 50,
            adaptive_gains: true,
        }
    }
}

impl TsneConfig {
    /// Checks the configuration against an input of `n` points (`n >= 2`).
    pub fn validate(&self, n: usize) -> Result<(), LayoutError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(LayoutError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("perplexity", self.perplexity)?;
        positive("early_exaggeration_factor", self.early_exaggeration_factor)?;
        positive("learning_rate", self.learning_rate)?;
        positive("entropy_tolerance", self.entropy_tolerance)?;
        for (name, m) in [
            ("momentum_initial", self.momentum_initial),
            ("momentum_final", self.momentum_final),
        ] {
            if !(0.0..1.0).contains(&m) {
                return Err(LayoutError::Config(format!("{name} must be in [0, 1), got {m}")));
            }
        }
        if self.iterations == 0 || self.exaggeration_iters == 0 || self.max_bisection_steps == 0 {
            return Err(LayoutError::Config(
                "iterations, exaggeration_iters and max_bisection_steps must be positive".into(),
            ));
        }
        if self.exaggeration_iters >= self.iterations {
            return Err(LayoutError::Config(format!(
                "exaggeration_iters ({}) must be below iterations ({})",
                self.exaggeration_iters, self.iterations
            )));
        }
        if 3.0 * self.perplexity >= (n as f64) - 1.0 {
            return Err(LayoutError::Config(format!(
                "perplexity {} too large for {n} points (need 3 * perplexity < N - 1)",
                self.perplexity
            )));
        }
        Ok(())
    }
}

/// Final 2-D layout with every coordinate in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutResult {
    pub row_ids: Vec<String>,
    pub coordinates: Vec<[f64; 2]>,
    /// KL(P‖Q) against the unexaggerated P, one value per iteration.
    pub kl_trace: Vec<f64>,
    pub seed: u64,
    pub config: TsneConfig,
}

/// Per-iteration diagnostics handed to an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub kl: f64,
    /// Total mass of Q; 1 up to rounding.
    pub q_sum: f64,
    pub exaggeration: f64,
    pub momentum: f64,
}

/// Student-t output affinities: returns normalized Q and the kernel values
/// `(1 + ‖y_i − y_j‖²)⁻¹`.
pub fn student_t_affinities(y: &[[f64; 2]]) -> (SquareMatrix, SquareMatrix) {
    let n = y.len();
    let mut kernel = SquareMatrix::zeros(n);
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            kernel.set(i, j, k);
            kernel.set(j, i, k);
            z += 2.0 * k;
        }
    }
    let mut q = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                q.set(i, j, kernel.get(i, j) / z);
            }
        }
    }
    (q, kernel)
}

/// KL(P‖Q) in nats; pairs with `p_ij = 0` contribute nothing.
pub fn kl_divergence(p: &AffinityMatrix, q: &SquareMatrix) -> f64 {
    let n = p.n();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            if i != j && pij > 0.0 {
                kl += pij * (pij / q.get(i, j)).ln();
            }
        }
    }
    kl
}

/// `dC/dy_i = 4 Σ_j (e·p_ij − q_ij)(y_i − y_j)(1 + ‖y_i − y_j‖²)⁻¹`, where
/// `e` is the exaggeration factor. Sums run over `j` in ascending order.
pub fn kl_gradient_with(p: &AffinityMatrix, q: &SquareMatrix, kernel: &SquareMatrix, y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p.get(i, j) - q.get(i, j)) * kernel.get(i, j);
                g[0] += w * (y[i][0] - y[j][0]);
                g[1] += w * (y[i][1] - y[j][1]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        })
        .collect()
}

pub fn kl_gradient(p: &AffinityMatrix, y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let (q, kernel) = student_t_affinities(y);
    kl_gradient_with(p, &q, &kernel, y, exaggeration)
}

/// Replaces zero distances between distinct rows with seeded positive jitter.
/// Returns the number of jittered pairs.
fn jitter_duplicates(d: &mut SquareMatrix, rng: &mut LayoutRng) -> usize {
    let n = d.n();
    let mut count = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if d.get(i, j) == 0.0 {
                let v = (rng.next_normal() * DUPLICATE_JITTER_STD).abs();
                d.set(i, j, v);
                d.set(j, i, v);
                count += 1;
            }
        }
    }
    count
}

/// Joint affinities for a set of points under `config`, with duplicate jitter
/// drawn from `rng`.
fn input_affinities(points: &[Vec<f64>], config: &TsneConfig, rng: &mut LayoutRng) -> Result<AffinityMatrix, LayoutError> {
    let mut d = squared_distances(points);
    if d.as_slice().iter().all(|&v| v == 0.0) {
        return Err(LayoutError::Degenerate);
    }
    let jittered = jitter_duplicates(&mut d, rng);
    if jittered > 0 {
        tracing::warn!(pairs = jittered, "duplicate input rows; distances jittered");
    }
    let cond = conditional_affinities(&d, config.perplexity, config.entropy_tolerance, config.max_bisection_steps)?;
    Ok(symmetrize(&cond.p))
}

/// Joint input affinities exactly as [`run_tsne`] computes them for `points`.
pub fn affinities_for(points: &[Vec<f64>], config: &TsneConfig) -> Result<AffinityMatrix, LayoutError> {
    let mut rng = LayoutRng::seed_from_u64(config.seed);
    for _ in 0..2 * points.len() {
        rng.next_normal();
    }
    input_affinities(points, config, &mut rng)
}

pub fn run_tsne(embeddings: &EmbeddingMatrix, config: &TsneConfig) -> Result<LayoutResult, LayoutError> {
    run_tsne_observed(&embeddings.row_ids, &embeddings.vectors, config, |_| {})
}

/// Exact t-SNE over arbitrary points, reporting every iteration to `observer`.
///
/// Random draws, in order: two normals per point for the initial layout, then
/// one normal per duplicate pair (row-major over `i < j`).
pub fn run_tsne_observed(
    row_ids: &[String],
    points: &[Vec<f64>],
    config: &TsneConfig,
    mut observer: impl FnMut(&IterationStats),
) -> Result<LayoutResult, LayoutError> {
    let n = points.len();
    if row_ids.len() != n {
        return Err(LayoutError::InvalidInput(format!("{} ids for {n} points", row_ids.len())));
    }
    if n == 0 {
        return Err(LayoutError::InvalidInput("no points to lay out".into()));
    }
    if let Some(bad) = points.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(LayoutError::InvalidInput(format!("point {bad} has a non-finite coordinate")));
    }
    if n == 1 {
        return Ok(LayoutResult {
            row_ids: row_ids.to_vec(),
            coordinates: vec![[0.5, 0.5]],
            kl_trace: vec![],
            seed: config.seed,
            config: config.clone(),
        });
    }
    config.validate(n)?;

    let mut rng = LayoutRng::seed_from_u64(config.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.next_normal() * INIT_STD, rng.next_normal() * INIT_STD])
        .collect();
    let p = input_affinities(points, config, &mut rng)?;

    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let early = iteration < config.exaggeration_iters;
        let exaggeration = if early { config.early_exaggeration_factor } else { 1.0 };
        let momentum = if early { config.momentum_initial } else { config.momentum_final };

        let (q, kernel) = student_t_affinities(&y);
        let kl = kl_divergence(&p, &q);
        kl_trace.push(kl);
        observer(&IterationStats {
            iteration,
            kl,
            q_sum: q.sum(),
            exaggeration,
            momentum,
        });

        let grad = kl_gradient_with(&p, &q, &kernel, &y, exaggeration);
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(LayoutError::Numerical { iteration });
        }
        for (((yi, vi), gi), ki) in y.iter_mut().zip(&mut velocity).zip(&grad).zip(&mut gains) {
            for d in 0..2 {
                if config.adaptive_gains {
                    ki[d] = if (gi[d] > 0.0) != (vi[d] > 0.0) {
                        ki[d] + 0.2
                    } else {
                        (ki[d] * 0.8).max(MIN_GAIN)
                    };
                }
                vi[d] = momentum * vi[d] - config.learning_rate * ki[d] * gi[d];
                yi[d] += vi[d];
            }
        }
        let mean = [
            y.iter().map(|p| p[0]).sum::<f64>() / n as f64,
            y.iter().map(|p| p[1]).sum::<f64>() / n as f64,
        ];
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LayoutError::Numerical { iteration });
        }
    }

    Ok(LayoutResult {
        row_ids: row_ids.to_vec(),
        coordinates: normalize_unit_square(&y),
        kl_trace,
        seed: config.seed,
        config: config.clone(),
    })
}

/// Per-axis min-max scaling to `[0, 1]`; a constant axis maps to 0.5.
pub fn normalize_unit_square(y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in y {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    y.iter()
        .map(|p| {
            let mut out = [0.5; 2];
            for d in 0..2 {
                let range = hi[d] - lo[d];
                if range > 0.0 {
                    out[d] = (p[d] - lo[d]) / range;
                }
            }
            out
        })
        .collect()
}

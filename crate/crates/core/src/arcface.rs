//! Additive angular margin classification head.
//!
//! Logits are scaled cosines between the unit embedding and each class's unit
//! weight column. The target class angle is penalized by `margin` before
//! scaling:
//!
//! ```text
//! logit_j     = s * cos(theta_j)                 j != y
//! logit_y     = s * cos(theta_y + m)             theta_y + m <= pi
//!             = s * (cos(theta_y) - m * sin(m))  otherwise
//! ```
//!
//! The fallback past `pi` keeps the target logit monotone in the angle.
//! `cos(theta + m)` is evaluated without `acos`, as
//! `cos(theta) cos(m) - sin(theta) sin(m)` with `sin(theta) = sqrt(1 - cos^2)`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm};

pub const DEFAULT_MARGIN: f64 = 0.5;
pub const DEFAULT_SCALE: f64 = 64.0;

/// Class weight matrix `W` (d × C, one column per class) with margin and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceHead {
    dim: usize,
    num_classes: usize,
    /// Row-major d × C.
    weights: Vec<f64>,
    margin: f64,
    scale: f64,
}

/// Loss and gradients for one batch.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    /// d loss / d raw embedding, one per batch item.
    pub d_embeddings: Vec<Vec<f64>>,
    /// d loss / d W, row-major d × C.
    pub d_weights: Vec<f64>,
}

pub(crate) fn check_margin_scale(margin: f64, scale: f64) -> Result<()> {
    if !(0.0..PI).contains(&margin) {
        return Err(Error::Config(format!("margin must lie in [0, pi), got {margin}")));
    }
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    Ok(())
}

impl ArcFaceHead {
    /// Gaussian-initialized head with unit columns.
    pub fn new(dim: usize, num_classes: usize, margin: f64, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..dim * num_classes).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut head = Self::from_weights(dim, num_classes, weights, margin, scale)?;
        head.normalize_weights();
        head.snap_to_f32();
        Ok(head)
    }

    pub fn from_weights(dim: usize, num_classes: usize, weights: Vec<f64>, margin: f64, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("head dimension must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if weights.len() != dim * num_classes {
            return Err(Error::Shape(format!(
                "weight buffer has {} values, expected {dim}x{num_classes}",
                weights.len()
            )));
        }
        check_margin_scale(margin, scale)?;
        Ok(Self { dim, num_classes, weights, margin, scale })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn set_margin_scale(&mut self, margin: f64, scale: f64) -> Result<()> {
        check_margin_scale(margin, scale)?;
        self.margin = margin;
        self.scale = scale;
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn column(&self, class: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.weights[i * self.num_classes + class]).collect()
    }

    /// Rescales every class column to unit L2 norm. Zero columns are left as is.
    pub fn normalize_weights(&mut self) {
        for j in 0..self.num_classes {
            let n = l2_norm(&self.column(j));
            if n > 0.0 {
                for i in 0..self.dim {
                    self.weights[i * self.num_classes + j] /= n;
                }
            }
        }
    }

    pub(crate) fn snap_to_f32(&mut self) {
        for w in &mut self.weights {
            *w = *w as f32 as f64;
        }
    }

    fn unit_columns(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut cols = Vec::with_capacity(self.num_classes);
        let mut norms = Vec::with_capacity(self.num_classes);
        for j in 0..self.num_classes {
            let c = self.column(j);
            let n = l2_norm(&c);
            cols.push(if n > 0.0 { c.iter().map(|v| v / n).collect() } else { c });
            norms.push(n);
        }
        (cols, norms)
    }

    fn unit_embedding(&self, embedding: &[f64]) -> Result<(Vec<f64>, f64)> {
        if embedding.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding has length {}, head expects {}",
                embedding.len(),
                self.dim
            )));
        }
        let n = l2_norm(embedding);
        if !n.is_finite() || n <= 0.0 {
            return Err(Error::Degenerate(format!("embedding norm is {n}")));
        }
        Ok((embedding.iter().map(|v| v / n).collect(), n))
    }

    /// Cosine between the embedding and every class column, clamped to [-1, 1].
    pub fn cosine_logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        let (unit, _) = self.unit_embedding(embedding)?;
        let (cols, _) = self.unit_columns();
        Ok(cols.iter().map(|w| dot(&unit, w).clamp(-1.0, 1.0)).collect())
    }

    pub fn arcface_logits(&self, cosines: &[f64], label: usize) -> Result<Vec<f64>> {
        if cosines.len() != self.num_classes {
            return Err(Error::Shape(format!(
                "got {} cosines for {} classes",
                cosines.len(),
                self.num_classes
            )));
        }
        arcface_logits(cosines, label, self.margin, self.scale)
    }

    /// Mean cross-entropy of the margin logits over the batch.
    pub fn arcface_loss(&self, embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        self.loss_and_grad(embeddings, labels).map(|lg| lg.loss)
    }

    /// Mean loss plus analytic gradients with respect to the raw embeddings
    /// and the raw (un-normalized) weight matrix.
    pub fn loss_and_grad(&self, embeddings: &[Vec<f64>], labels: &[usize]) -> Result<LossGrad> {
        if embeddings.is_empty() {
            return Err(Error::Empty("arcface loss needs a non-empty batch".into()));
        }
        if embeddings.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} embeddings but {} labels",
                embeddings.len(),
                labels.len()
            )));
        }
        let c = self.num_classes;
        let (cols, col_norms) = self.unit_columns();
        if let Some(j) = col_norms.iter().position(|n| n.is_nan() || *n <= 0.0) {
            return Err(Error::Degenerate(format!("class column {j} has zero norm")));
        }
        let batch = embeddings.len() as f64;
        let (cos_m, sin_m) = (self.margin.cos(), self.margin.sin());
        let threshold = (PI - self.margin).cos();

        let mut loss = 0.0;
        let mut d_embeddings = Vec::with_capacity(embeddings.len());
        // d loss / d unit column, accumulated; projected onto raw W at the end.
        let mut d_unit_cols = vec![vec![0.0; self.dim]; c];
        let mut raw_cos = vec![0.0; c];

        for (emb, &label) in embeddings.iter().zip(labels) {
            if label >= c {
                return Err(Error::Index { index: label, len: c });
            }
            let (unit, norm) = self.unit_embedding(emb)?;
            for (j, w) in cols.iter().enumerate() {
                raw_cos[j] = dot(&unit, w);
            }
            let cosines: Vec<f64> = raw_cos.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            let logits = arcface_logits(&cosines, label, self.margin, self.scale)?;
            let (lse, probs) = log_softmax_parts(&logits);
            loss += lse - logits[label];

            // d loss / d cosine_j.
            let mut d_cos: Vec<f64> = probs.iter().map(|p| p * self.scale).collect();
            let cy = cosines[label];
            let target_slope = if cy >= threshold {
                let sin_theta = (1.0 - cy * cy).max(1e-12).sqrt();
                cos_m + cy * sin_m / sin_theta
            } else {
                1.0
            };
            d_cos[label] = (probs[label] - 1.0) * self.scale * target_slope;
            for (j, raw) in raw_cos.iter().enumerate() {
                if raw.abs() > 1.0 {
                    d_cos[j] = 0.0;
                }
            }

            // Through e_hat = e / |e|.
            let mut g_unit = vec![0.0; self.dim];
            for (j, w) in cols.iter().enumerate() {
                for (g, wv) in g_unit.iter_mut().zip(w) {
                    *g += d_cos[j] * wv;
                }
                for (g, ev) in d_unit_cols[j].iter_mut().zip(&unit) {
                    *g += d_cos[j] * ev / batch;
                }
            }
            let radial = dot(&unit, &g_unit);
            d_embeddings.push(
                g_unit
                    .iter()
                    .zip(&unit)
                    .map(|(g, u)| (g - u * radial) / (norm * batch))
                    .collect(),
            );
        }

        let mut d_weights = vec![0.0; self.dim * c];
        for j in 0..c {
            let radial = dot(&cols[j], &d_unit_cols[j]);
            for i in 0..self.dim {
                d_weights[i * c + j] = (d_unit_cols[j][i] - cols[j][i] * radial) / col_norms[j];
            }
        }
        Ok(LossGrad { loss: loss / batch, d_embeddings, d_weights })
    }
}

/// Margin logits from precomputed cosines.
pub fn arcface_logits(cosines: &[f64], label: usize, margin: f64, scale: f64) -> Result<Vec<f64>> {
    if label >= cosines.len() {
        return Err(Error::Index { index: label, len: cosines.len() });
    }
    check_margin_scale(margin, scale)?;
    let mut logits: Vec<f64> = cosines.iter().map(|c| scale * c.clamp(-1.0, 1.0)).collect();
    let cy = cosines[label].clamp(-1.0, 1.0);
    // theta + m > pi  <=>  cos(theta) < cos(pi - m)
    let target = if cy >= (PI - margin).cos() {
        let sin_theta = (1.0 - cy * cy).max(0.0).sqrt();
        cy * margin.cos() - sin_theta * margin.sin()
    } else {
        cy - margin * margin.sin()
    };
    logits[label] = scale * target;
    Ok(logits)
}

/// Returns `(logsumexp(z), softmax(z))`.
fn log_softmax_parts(z: &[f64]) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.iter().map(|e| e / sum).collect())
}

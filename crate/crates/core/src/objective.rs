//! Loss terms of the training criterion and their analytic gradients.
//!
//! The criterion over a batch of triplets is
//!
//! ```text
//! L = Σᵢ max(0, 1 − zᵢ(τ − S(xᵢ,yᵢ)²))          pair hinge
//!   + λ Σᵢ max(0, zᵢ) · ‖yᵢ − embed(xᵢ)‖²        attribute prediction
//!   + μ (‖w_x‖²_F + ‖b_x‖²₂ + ‖w_a‖²_F)          regularizer (τ exempt)
//! ```
//!
//! The regularizer enters once per evaluation, not once per sample.
//! Subgradient conventions at the kinks: the ReLU uses 0 at exactly zero
//! pre-activation, and the hinge uses 0 at the exact kink.

use ndarray::{Array1, Array2, CowArray, Ix1};

use crate::error::{Error, Result};
use crate::model::{Model, Triplet};

/// Training hyperparameters: criterion weights plus optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Weight of the attribute-prediction loss.
    pub lambda: f64,
    /// Weight of the quadratic regularizer.
    pub mu: f64,
    /// Metric-embedding dimension (columns of `w_a`).
    pub m: usize,
    pub learning_rate: f64,
    /// Classical momentum; 0 disables it.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl HyperParams {
    /// Defaults for an attribute space of dimension `p`. The metric
    /// dimension starts at 40% of `p`; grid search refines it.
    pub fn for_attribute_dim(p: usize) -> Self {
        HyperParams {
            lambda: 1.0,
            mu: 0.01,
            m: ((0.4 * p as f64).round() as usize).max(1),
            learning_rate: 1e-2,
            momentum: 0.0,
            batch_size: 100,
            epochs: 200,
            restarts: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            problems.push("lambda must be a finite value >= 0");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            problems.push("mu must be a finite value >= 0");
        }
        if self.m < 1 {
            problems.push("m must be >= 1");
        }
        // zero is allowed: it freezes the model, which is useful as a baseline
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be a finite value >= 0");
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            problems.push("momentum must be in [0, 1)");
        }
        if self.batch_size < 1 {
            problems.push("batch_size must be >= 1");
        }
        if self.epochs < 1 {
            problems.push("epochs must be >= 1");
        }
        if self.restarts < 1 {
            problems.push("restarts must be >= 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Gradient of the criterion with respect to every trainable quantity.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_w_x: Array2<f64>,
    pub d_b_x: Array1<f64>,
    pub d_w_a: Array2<f64>,
    pub d_tau: f64,
}

impl Gradients {
    pub fn zeros(d: usize, p: usize, m: usize) -> Self {
        Gradients {
            d_w_x: Array2::zeros((d, p)),
            d_b_x: Array1::zeros(p),
            d_w_a: Array2::zeros((p, m)),
            d_tau: 0.0,
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.d_w_x *= c;
        self.d_b_x *= c;
        self.d_w_a *= c;
        self.d_tau *= c;
    }
}

/// Pair hinge loss `max(0, 1 − z(τ − S²))`.
pub fn hinge_loss(triplet: &Triplet, model: &Model) -> Result<f64> {
    let s2 = model.score_squared(triplet.x.view(), triplet.y.view())?;
    Ok((1.0 - triplet.label.sign() * (model.tau() - s2)).max(0.0))
}

/// Attribute-prediction loss `max(0, z) · ‖y − embed(x)‖²`; zero for
/// dissimilar pairs.
pub fn attribute_loss(triplet: &Triplet, model: &Model) -> Result<f64> {
    if !triplet.label.is_similar() {
        // still validate dimensions so errors do not depend on the label
        model.embed_image(triplet.x.view())?;
        return Ok(0.0);
    }
    let embedded = model.embed_image(triplet.x.view())?;
    if triplet.y.len() != embedded.len() {
        return Err(Error::DimMismatch {
            what: "attribute vector",
            expected: embedded.len(),
            actual: triplet.y.len(),
        });
    }
    let diff = &triplet.y - &embedded;
    Ok(diff.dot(&diff))
}

/// Quadratic penalty on `w_x`, `b_x` and `w_a`. `tau` is not penalized.
pub fn regularizer(model: &Model) -> f64 {
    let sq = |acc: f64, v: &f64| acc + v * v;
    model.w_x().iter().fold(0.0, sq)
        + model.b_x().iter().fold(0.0, sq)
        + model.w_a().iter().fold(0.0, sq)
}

/// Combined criterion over a non-empty batch:
/// `Σ hinge + λ Σ attribute + μ regularizer`.
pub fn total_loss(batch: &[Triplet], model: &Model, hp: &HyperParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput { what: "batch" });
    }
    let mut sum = 0.0;
    for t in batch {
        sum += hinge_loss(t, model)?;
        if hp.lambda != 0.0 {
            sum += hp.lambda * attribute_loss(t, model)?;
        }
    }
    Ok(sum + hp.mu * regularizer(model))
}

/// Analytic subgradient of [`total_loss`] with respect to `w_x`, `b_x`,
/// `w_a` and `tau`. Matches central finite differences wherever the loss
/// is differentiable.
pub fn gradients(batch: &[Triplet], model: &Model, hp: &HyperParams) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptyInput { what: "batch" });
    }
    let (d, p, m) = (
        model.feature_dim(),
        model.attribute_dim(),
        model.metric_dim(),
    );
    let mut g = Gradients::zeros(d, p, m);

    for t in batch {
        if t.x.len() != d {
            return Err(Error::DimMismatch {
                what: "feature vector",
                expected: d,
                actual: t.x.len(),
            });
        }
        if t.y.len() != p {
            return Err(Error::DimMismatch {
                what: "attribute vector",
                expected: p,
                actual: t.y.len(),
            });
        }
        let xs: CowArray<f64, Ix1> = match model.standardizer() {
            Some(n) => n.apply(t.x.view()).into(),
            None => t.x.view().into(),
        };
        let mut pre = xs.dot(&model.w_x);
        pre += &model.b_x;
        let embedded = pre.mapv(|v| v.max(0.0));
        let e = &embedded - &t.y;
        let projected = e.dot(&model.w_a);
        let s2 = projected.dot(&projected);
        let z = t.label.sign();

        // gradient flowing into the embedding output
        let mut g_embed = Array1::<f64>::zeros(p);
        if 1.0 - z * (model.tau() - s2) > 0.0 {
            g.d_tau -= z;
            g_embed.scaled_add(2.0 * z, &model.w_a.dot(&projected));
            for (mut row, &ei) in g.d_w_a.rows_mut().into_iter().zip(e.iter()) {
                row.scaled_add(2.0 * z * ei, &projected);
            }
        }
        if hp.lambda != 0.0 && t.label.is_similar() {
            g_embed.scaled_add(2.0 * hp.lambda, &e);
        }

        // chain through the ReLU: zero where the pre-activation is <= 0
        for (gv, &u) in g_embed.iter_mut().zip(pre.iter()) {
            if u <= 0.0 {
                *gv = 0.0;
            }
        }
        g.d_b_x += &g_embed;
        for (mut row, &xi) in g.d_w_x.rows_mut().into_iter().zip(xs.iter()) {
            row.scaled_add(xi, &g_embed);
        }
    }

    g.d_w_x.scaled_add(2.0 * hp.mu, &model.w_x);
    g.d_b_x.scaled_add(2.0 * hp.mu, &model.b_x);
    g.d_w_a.scaled_add(2.0 * hp.mu, &model.w_a);
    Ok(g)
}

//! Learned parameters and the attribute-consistency score.
//!
//! An image feature vector `x` is embedded into attribute space with a
//! ReLU-clipped linear map, and compared to an attribute vector `y` through
//! a metric parametrized by a linear mapping `w_a`:
//!
//! ```text
//! embed(x) = max(0, x · w_x + b_x)
//! score(x, y) = ‖(embed(x) − y) · w_a‖₂
//! ```
//!
//! Smaller scores mean more consistent pairs. All arithmetic is `f64`.

use ndarray::{ArcArray1, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Per-dimension affine feature normalization fitted on a training split.
///
/// Dimensions with zero variance get a unit scale so that `apply` is total.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Fit per-column mean and standard deviation on a sample-per-row matrix.
    pub fn fit(features: ArrayView2<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mean = features.sum_axis(Axis(0)) / n;
        let mut var = Array1::zeros(features.ncols());
        for row in features.rows() {
            let centered = &row - &mean;
            var += &centered.mapv(|v| v * v);
        }
        var /= n;
        let std = var.mapv(|v| if v.sqrt() > 0.0 { v.sqrt() } else { 1.0 });
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (&x - &self.mean) / &self.std
    }

    /// Standardize every row of a sample-per-row matrix.
    pub fn apply_matrix(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let mut out = features.to_owned();
        for mut row in out.rows_mut() {
            row -= &self.mean;
            row /= &self.std;
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Consistency indicator of an (image, attributes) pair: z ∈ {+1, −1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    /// z = +1: the attributes describe the image.
    Similar,
    /// z = −1: they do not.
    Dissimilar,
}

impl PairLabel {
    pub fn sign(self) -> f64 {
        match self {
            PairLabel::Similar => 1.0,
            PairLabel::Dissimilar => -1.0,
        }
    }

    pub fn is_similar(self) -> bool {
        matches!(self, PairLabel::Similar)
    }
}

/// One training unit: an image feature vector, an attribute vector and a
/// consistency indicator. Vectors are shared so that pair generation does
/// not duplicate the underlying feature storage.
///
/// Deliberately carries no class label: training never sees class identity.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub x: ArcArray1<f64>,
    pub y: ArcArray1<f64>,
    pub label: PairLabel,
}

impl Triplet {
    pub fn new(x: Array1<f64>, y: Array1<f64>, label: PairLabel) -> Self {
        Triplet {
            x: x.into_shared(),
            y: y.into_shared(),
            label,
        }
    }

    pub fn shared(x: ArcArray1<f64>, y: ArcArray1<f64>, label: PairLabel) -> Self {
        Triplet { x, y, label }
    }
}

/// The learned triple (`w_x`, `b_x`, `w_a`) plus the similarity threshold
/// `tau`, and optionally the feature standardization fitted at training
/// time. Immutable once constructed; scoring is pure and thread-safe.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) w_x: Array2<f64>,
    pub(crate) b_x: Array1<f64>,
    pub(crate) w_a: Array2<f64>,
    pub(crate) tau: f64,
    pub(crate) norm: Option<Standardizer>,
}

impl Model {
    /// Build a model from raw parameters, validating shapes and finiteness.
    ///
    /// `w_x` is d×p, `b_x` has length p, `w_a` is p×m with m ≥ 1.
    pub fn new(w_x: Array2<f64>, b_x: Array1<f64>, w_a: Array2<f64>, tau: f64) -> Result<Self> {
        let p = w_x.ncols();
        if b_x.len() != p {
            return Err(Error::DimMismatch {
                what: "bias b_x",
                expected: p,
                actual: b_x.len(),
            });
        }
        if w_a.nrows() != p {
            return Err(Error::DimMismatch {
                what: "metric rows of w_a",
                expected: p,
                actual: w_a.nrows(),
            });
        }
        if w_a.ncols() < 1 {
            return Err(Error::DimMismatch {
                what: "metric dimension m",
                expected: 1,
                actual: w_a.ncols(),
            });
        }
        let finite = w_x.iter().all(|v| v.is_finite())
            && b_x.iter().all(|v| v.is_finite())
            && w_a.iter().all(|v| v.is_finite())
            && tau.is_finite();
        if !finite {
            return Err(Error::InvalidConfig(
                "model parameters must be finite".into(),
            ));
        }
        Ok(Model {
            w_x,
            b_x,
            w_a,
            tau,
            norm: None,
        })
    }

    /// Attach feature standardization; it is applied inside `embed_image`.
    pub fn with_standardizer(mut self, norm: Standardizer) -> Result<Self> {
        if norm.dim() != self.feature_dim() {
            return Err(Error::DimMismatch {
                what: "standardizer",
                expected: self.feature_dim(),
                actual: norm.dim(),
            });
        }
        self.norm = Some(norm);
        Ok(self)
    }

    pub fn feature_dim(&self) -> usize {
        self.w_x.nrows()
    }

    pub fn attribute_dim(&self) -> usize {
        self.w_x.ncols()
    }

    pub fn metric_dim(&self) -> usize {
        self.w_a.ncols()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn w_x(&self) -> ArrayView2<'_, f64> {
        self.w_x.view()
    }

    pub fn b_x(&self) -> ArrayView1<'_, f64> {
        self.b_x.view()
    }

    pub fn w_a(&self) -> ArrayView2<'_, f64> {
        self.w_a.view()
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.norm.as_ref()
    }

    fn check_feature(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimMismatch {
                what: "feature vector",
                expected: self.feature_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_attribute(&self, y: ArrayView1<f64>) -> Result<()> {
        if y.len() != self.attribute_dim() {
            return Err(Error::DimMismatch {
                what: "attribute vector",
                expected: self.attribute_dim(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// Map an image into attribute space: `max(0, x · w_x + b_x)`.
    ///
    /// Every output entry is ≥ 0 (ReLU contract). Standardization, when
    /// present, is applied to `x` first.
    pub fn embed_image(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_feature(x)?;
        let mut u = match &self.norm {
            Some(n) => n.apply(x).dot(&self.w_x),
            None => x.dot(&self.w_x),
        };
        u += &self.b_x;
        u.mapv_inplace(|v| v.max(0.0));
        Ok(u)
    }

    /// Consistency score `‖(embed(x) − y) · w_a‖₂`; smaller is more
    /// consistent. Used for reporting, ranking and retrieval thresholds.
    pub fn score(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        Ok(self.score_squared(x, y)?.sqrt())
    }

    /// Squared score, computed as a quadratic form without the square root.
    /// This is the training-time quantity: its gradient stays smooth where
    /// the score vanishes.
    pub fn score_squared(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        self.check_attribute(y)?;
        let embedded = self.embed_image(x)?;
        let diff = &embedded - &y;
        let projected = diff.dot(&self.w_a);
        Ok(projected.dot(&projected))
    }

    /// The induced attribute-space distance `d_A(a, b) = ‖(a − b) · w_a‖₂`,
    /// a seminorm-induced pseudometric (symmetric, triangle inequality).
    pub fn metric_distance(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
        self.check_attribute(a)?;
        self.check_attribute(b)?;
        let diff = &a - &b;
        let projected = diff.dot(&self.w_a);
        Ok(projected.dot(&projected).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_model(p: usize) -> Model {
        Model::new(
            Array2::eye(p),
            Array1::zeros(p),
            Array2::eye(p),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn embed_clips_negatives() {
        let m = identity_model(2);
        let out = m.embed_image(array![1.0, -2.0].view()).unwrap();
        assert_eq!(out, array![1.0, 0.0]);
    }

    #[test]
    fn embed_zero_input_keeps_bias() {
        let m = Model::new(
            array![[0.3, -0.7], [1.1, 0.2]],
            array![0.5, -0.5],
            Array2::eye(2),
            1.0,
        )
        .unwrap();
        let out = m.embed_image(array![0.0, 0.0].view()).unwrap();
        assert_eq!(out, array![0.5, 0.0]);
    }

    #[test]
    fn embed_hand_value() {
        // x·W = [1+3, 2−1] = [4, 1]; +b = [3, 1]; relu no-op
        let m = Model::new(
            array![[1.0, 2.0], [3.0, -1.0]],
            array![-1.0, 0.0],
            Array2::eye(2),
            1.0,
        )
        .unwrap();
        let out = m.embed_image(array![1.0, 1.0].view()).unwrap();
        assert_eq!(out, array![3.0, 1.0]);
    }

    #[test]
    fn embed_dimension_mismatch() {
        let m = identity_model(2);
        let err = m.embed_image(array![1.0, 2.0, 3.0].view()).unwrap_err();
        match err {
            Error::DimMismatch {
                expected, actual, ..
            } => {
                assert_eq!((expected, actual), (2, 3));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn score_zero_when_embedding_matches() {
        let m = identity_model(3);
        let x = array![0.2, 0.4, 0.9];
        assert_eq!(m.score(x.view(), x.view()).unwrap(), 0.0);
    }

    #[test]
    fn score_is_euclidean_with_identity_metric() {
        // embed(x) = x, embed(x) − y = [3, 4] → ‖·‖ = 5
        let m = identity_model(2);
        let s = m
            .score(array![7.0, 4.0].view(), array![4.0, 0.0].view())
            .unwrap();
        assert_eq!(s, 5.0);
    }

    #[test]
    fn score_scales_linearly_with_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w_a = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
        let base = Model::new(Array2::eye(3), Array1::zeros(3), w_a.clone(), 1.0).unwrap();
        let scaled = Model::new(Array2::eye(3), Array1::zeros(3), &w_a * 2.5, 1.0).unwrap();
        let x = array![0.7, 0.1, 0.5];
        let y = array![0.0, 1.0, 0.2];
        let s0 = base.score(x.view(), y.view()).unwrap();
        let s1 = scaled.score(x.view(), y.view()).unwrap();
        assert!((s1 - 2.5 * s0).abs() <= 1e-12 * s0.max(1.0));
    }

    #[test]
    fn score_squared_matches_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (d, p, m) = (5, 4, 3);
            let model = Model::new(
                Array2::from_shape_fn((d, p), |_| rng.gen_range(-1.0..1.0)),
                Array1::from_shape_fn(p, |_| rng.gen_range(-1.0..1.0)),
                Array2::from_shape_fn((p, m), |_| rng.gen_range(-1.0..1.0)),
                1.0,
            )
            .unwrap();
            let x = Array1::from_shape_fn(d, |_| rng.gen_range(-2.0..2.0));
            let y = Array1::from_shape_fn(p, |_| rng.gen_range(0.0..1.0));
            let s = model.score(x.view(), y.view()).unwrap();
            let s2 = model.score_squared(x.view(), y.view()).unwrap();
            assert!((s2 - s * s).abs() <= 1e-12 * s2.max(1e-12));
        }
    }

    #[test]
    fn metric_distance_is_symmetric_and_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = Model::new(
            Array2::eye(4),
            Array1::zeros(4),
            Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0)),
            1.0,
        )
        .unwrap();
        for _ in 0..200 {
            let a = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
            let b = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
            let c = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
            let ab = model.metric_distance(a.view(), b.view()).unwrap();
            let ba = model.metric_distance(b.view(), a.view()).unwrap();
            let bc = model.metric_distance(b.view(), c.view()).unwrap();
            let ac = model.metric_distance(a.view(), c.view()).unwrap();
            assert!((ab - ba).abs() <= 1e-12);
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn standardizer_fit_apply() {
        let feats = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(feats.view());
        assert_eq!(s.mean, array![2.0, 5.0]);
        // second column is constant: scale falls back to 1
        assert_eq!(s.std, array![1.0, 1.0]);
        let z = s.apply(array![3.0, 6.0].view());
        assert_eq!(z, array![1.0, 1.0]);
    }

    #[test]
    fn model_rejects_inconsistent_dims() {
        let err = Model::new(Array2::eye(2), Array1::zeros(3), Array2::eye(2), 1.0).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
        let err = Model::new(Array2::eye(2), Array1::zeros(2), Array2::eye(3), 1.0).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
    }
}

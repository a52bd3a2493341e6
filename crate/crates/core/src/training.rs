//! Pair generation, minibatch SGD with random restarts, and class-held-out
//! grid search over hyperparameters.
//!
//! Training consumes only (feature, attribute, indicator) triplets — class
//! labels never enter the optimization. Labels appear solely in validation
//! (restart selection, grid search) and evaluation.
//!
//! Everything is deterministic for a fixed master seed: per-restart and
//! per-stage RNG streams are derived with a splitmix-style mixer, and
//! parallel restarts/grid points are merged by index.

use std::time::{Duration, Instant};

use ndarray::{ArcArray1, Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, PairLabel, Standardizer, Triplet};
use crate::objective::{gradients, total_loss, Gradients, HyperParams};
use crate::tasks::{class_descriptors, pair_accuracy, zsl_accuracy, ClassDescriptor};

/// How consistency-labelled pairs are generated from (image, attribute)
/// rows: every image yields its own attribute vector as positives, and
/// attribute vectors of other images as negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub positives_per_image: usize,
    pub negatives_per_image: usize,
    /// Minimum Euclidean distance between a sampled negative attribute
    /// vector and the image's own attribute vector (strict).
    pub min_negative_distance: f64,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            positives_per_image: 1,
            negatives_per_image: 1,
            min_negative_distance: 0.0,
            seed: 0,
        }
    }
}

impl PairConfig {
    fn validate(&self) -> Result<()> {
        if self.positives_per_image < 1 || self.negatives_per_image < 1 {
            return Err(Error::InvalidConfig(
                "pair generation needs at least one positive and one negative per image".into(),
            ));
        }
        if !(self.min_negative_distance >= 0.0 && self.min_negative_distance.is_finite()) {
            return Err(Error::InvalidConfig(
                "min_negative_distance must be a finite value >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Hyperparameter grid; `m` candidates are fractions of the attribute
/// dimension. Defaults cover the standard search ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub m_fractions: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
    /// Fraction of training classes held out for validation.
    pub holdout_class_fraction: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            m_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.2],
            lambdas: vec![0.05, 0.2, 1.0],
            mus: vec![0.01, 0.1, 1.0, 10.0],
            holdout_class_fraction: 0.2,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.m_fractions.is_empty() || self.lambdas.is_empty() || self.mus.is_empty() {
            return Err(Error::InvalidConfig("grid lists must not be empty".into()));
        }
        if !(self.holdout_class_fraction > 0.0 && self.holdout_class_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "holdout_class_fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Candidate metric dimensions for attribute dimension `p`:
    /// `round(fraction · p)`, clamped to ≥ 1, deduplicated.
    pub fn m_candidates(&self, p: usize) -> Vec<usize> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for &f in &self.m_fractions {
            let m = ((f * p as f64).round() as usize).max(1);
            if seen.insert(m) {
                out.push(m);
            }
        }
        out
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub m: usize,
    pub lambda: f64,
    pub mu: f64,
    pub validation_accuracy: f64,
    pub wall_time_s: f64,
}

/// Outcome of a training run: loss trace of the run that produced the
/// returned model, plus restart bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub final_loss: f64,
    pub loss_per_epoch: Vec<f64>,
    pub selected_restart: usize,
    pub validation_accuracy_per_restart: Vec<f64>,
    pub wall_time: Duration,
}

/// Knobs of a single SGD run that are not part of [`HyperParams`].
#[derive(Debug, Clone, Default)]
pub struct SgdOptions {
    /// Fix `w_a` to the identity and skip its updates (pure Euclidean
    /// attribute-space metric).
    pub freeze_metric: bool,
    /// Stop a monitored run after this many epochs without validation
    /// improvement. Only effective where a validation set is available.
    pub early_stop_patience: Option<usize>,
}

/// Validation criterion used to pick among restarts.
#[derive(Debug, Clone)]
pub enum Validation {
    /// Pair-classification accuracy via `sign(τ − S²)` on held-out pairs.
    Pairs(Vec<Triplet>),
    /// ZSL accuracy on samples of held-out classes.
    Zsl {
        features: Array2<f64>,
        labels: Vec<u32>,
        descriptors: Vec<ClassDescriptor>,
    },
}

impl Validation {
    pub fn score(&self, model: &Model) -> Result<f64> {
        match self {
            Validation::Pairs(triplets) => pair_accuracy(triplets, model),
            Validation::Zsl {
                features,
                labels,
                descriptors,
            } => zsl_accuracy(features.view(), labels, descriptors, model),
        }
    }
}

/// splitmix64-style mixer deriving independent RNG streams from a master
/// seed and a stage/index salt.
pub fn mix_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SALT_INIT: u64 = 1;
const SALT_SHUFFLE: u64 = 2;
const SALT_FINETUNE: u64 = 3;
const SALT_HOLDOUT: u64 = 4;
const SALT_PAIRS_SEEN: u64 = 5;
const SALT_PAIRS_FULL: u64 = 6;
const SALT_GRID: u64 = 7;
const SALT_VALSPLIT: u64 = 8;

/// Turn the rows of a sample-per-row matrix into cheaply clonable shared
/// vectors.
pub fn shared_rows(matrix: ArrayView2<f64>) -> Vec<ArcArray1<f64>> {
    matrix
        .rows()
        .into_iter()
        .map(|r| r.to_owned().into_shared())
        .collect()
}

fn sq_dist(a: &ArcArray1<f64>, b: &ArcArray1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Generate `N·(positives+negatives)` triplets. Positives pair each image
/// with its own attribute vector; negatives draw another image's attribute
/// vector farther than `min_negative_distance` away. Deterministic for a
/// fixed seed.
pub fn make_pairs(
    features: &[ArcArray1<f64>],
    attributes: &[ArcArray1<f64>],
    cfg: &PairConfig,
) -> Result<Vec<Triplet>> {
    cfg.validate()?;
    if features.len() != attributes.len() {
        return Err(Error::LengthMismatch {
            what: "features vs attributes",
            left: features.len(),
            right: attributes.len(),
        });
    }
    let n = features.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "pair generation needs at least 2 samples".into(),
        ));
    }
    let min_sq = cfg.min_negative_distance * cfg.min_negative_distance;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(n * (cfg.positives_per_image + cfg.negatives_per_image));
    for i in 0..n {
        for _ in 0..cfg.positives_per_image {
            out.push(Triplet::shared(
                features[i].clone(),
                attributes[i].clone(),
                PairLabel::Similar,
            ));
        }
        for _ in 0..cfg.negatives_per_image {
            let j = sample_negative(i, attributes, min_sq, &mut rng)?;
            out.push(Triplet::shared(
                features[i].clone(),
                attributes[j].clone(),
                PairLabel::Dissimilar,
            ));
        }
    }
    Ok(out)
}

fn sample_negative(
    image: usize,
    attributes: &[ArcArray1<f64>],
    min_sq: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let n = attributes.len();
    let valid = |j: usize| j != image && sq_dist(&attributes[j], &attributes[image]) > min_sq;
    for _ in 0..100 {
        let j = rng.gen_range(0..n);
        if valid(j) {
            return Ok(j);
        }
    }
    // rejection sampling failed; fall back to an exhaustive scan so that a
    // rare unlucky streak cannot fail an image that has valid candidates
    let candidates: Vec<usize> = (0..n).filter(|&j| valid(j)).collect();
    if candidates.is_empty() {
        Err(Error::NoValidNegative { image })
    } else {
        Ok(candidates[rng.gen_range(0..candidates.len())])
    }
}

fn init_model(
    d: usize,
    p: usize,
    hp: &HyperParams,
    seed: u64,
    opts: &SgdOptions,
) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_INIT));
    let w_x_dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
    let w_x = Array2::from_shape_vec(
        (d, p),
        (0..d * p).map(|_| w_x_dist.sample(&mut rng)).collect(),
    )
    .expect("shape matches");
    let w_a = if opts.freeze_metric {
        Array2::eye(p)
    } else {
        let w_a_dist = Normal::new(0.0, 1.0 / (p as f64).sqrt()).expect("finite std");
        Array2::from_shape_vec(
            (p, hp.m),
            (0..p * hp.m).map(|_| w_a_dist.sample(&mut rng)).collect(),
        )
        .expect("shape matches")
    };
    Model::new(w_x, Array1::zeros(p), w_a, 1.0)
}

struct Velocity {
    w_x: Array2<f64>,
    b_x: Array1<f64>,
    w_a: Array2<f64>,
    tau: f64,
}

fn apply_step(
    model: &mut Model,
    g: &Gradients,
    hp: &HyperParams,
    opts: &SgdOptions,
    velocity: &mut Option<Velocity>,
) {
    let lr = hp.learning_rate;
    match velocity {
        Some(v) => {
            v.w_x *= hp.momentum;
            v.w_x += &g.d_w_x;
            v.b_x *= hp.momentum;
            v.b_x += &g.d_b_x;
            v.w_a *= hp.momentum;
            v.w_a += &g.d_w_a;
            v.tau = hp.momentum * v.tau + g.d_tau;
            model.w_x.scaled_add(-lr, &v.w_x);
            model.b_x.scaled_add(-lr, &v.b_x);
            if !opts.freeze_metric {
                model.w_a.scaled_add(-lr, &v.w_a);
            }
            model.tau -= lr * v.tau;
        }
        None => {
            model.w_x.scaled_add(-lr, &g.d_w_x);
            model.b_x.scaled_add(-lr, &g.d_b_x);
            if !opts.freeze_metric {
                model.w_a.scaled_add(-lr, &g.d_w_a);
            }
            model.tau -= lr * g.d_tau;
        }
    }
}

fn grads_finite(g: &Gradients) -> bool {
    g.d_tau.is_finite()
        && g.d_w_x.iter().all(|v| v.is_finite())
        && g.d_b_x.iter().all(|v| v.is_finite())
        && g.d_w_a.iter().all(|v| v.is_finite())
}

fn sgd_run(
    mut model: Model,
    triplets: &[Triplet],
    hp: &HyperParams,
    shuffle_seed: u64,
    opts: &SgdOptions,
    monitor: Option<&Validation>,
) -> Result<(Model, TrainReport)> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput { what: "triplets" });
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut velocity = (hp.momentum > 0.0).then(|| Velocity {
        w_x: Array2::zeros(model.w_x.raw_dim()),
        b_x: Array1::zeros(model.b_x.raw_dim()),
        w_a: Array2::zeros(model.w_a.raw_dim()),
        tau: 0.0,
    });
    let mut loss_per_epoch = Vec::with_capacity(hp.epochs);
    let mut best_val: Option<(f64, usize)> = None;

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut batch = Vec::with_capacity(hp.batch_size);
        for (step, chunk) in order.chunks(hp.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| triplets[i].clone()));
            let mut g = gradients(&batch, &model, hp)?;
            if !grads_finite(&g) {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            // step on the per-sample mean so the learning rate stays
            // meaningful across batch sizes
            g.scale(1.0 / batch.len() as f64);
            apply_step(&mut model, &g, hp, opts, &mut velocity);
        }
        let loss = total_loss(triplets, &model, hp)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: order.chunks(hp.batch_size).len().saturating_sub(1),
            });
        }
        loss_per_epoch.push(loss);

        if let (Some(validation), Some(patience)) = (monitor, opts.early_stop_patience) {
            let acc = validation.score(&model)?;
            let improved = best_val.map_or(true, |(b, _)| acc > b);
            if improved {
                best_val = Some((acc, epoch));
            } else if let Some((_, best_epoch)) = best_val {
                if epoch - best_epoch >= patience {
                    break;
                }
            }
        }
    }

    let report = TrainReport {
        final_loss: *loss_per_epoch.last().expect("epochs >= 1"),
        loss_per_epoch,
        selected_restart: 0,
        validation_accuracy_per_restart: Vec::new(),
        wall_time: start.elapsed(),
    };
    Ok((model, report))
}

/// Minibatch SGD from a fresh random initialization: `epochs × ⌈N/batch⌉`
/// steps with per-epoch reshuffling. Weights start from a normal
/// distribution scaled by 1/√fan-in, the bias at zero and `τ` at 1.
pub fn sgd_train(
    triplets: &[Triplet],
    hp: &HyperParams,
    init_seed: u64,
) -> Result<(Model, TrainReport)> {
    sgd_train_opts(triplets, hp, init_seed, &SgdOptions::default())
}

pub fn sgd_train_opts(
    triplets: &[Triplet],
    hp: &HyperParams,
    init_seed: u64,
    opts: &SgdOptions,
) -> Result<(Model, TrainReport)> {
    hp.validate()?;
    if triplets.is_empty() {
        return Err(Error::EmptyInput { what: "triplets" });
    }
    let d = triplets[0].x.len();
    let p = triplets[0].y.len();
    let model = init_model(d, p, hp, init_seed, opts)?;
    sgd_run(
        model,
        triplets,
        hp,
        mix_seed(init_seed, SALT_SHUFFLE),
        opts,
        None,
    )
}

/// Continue SGD from an existing model (fine-tuning). The model's
/// standardizer, when present, keeps being applied inside the loss.
pub fn sgd_continue(
    model: &Model,
    triplets: &[Triplet],
    hp: &HyperParams,
    seed: u64,
    opts: &SgdOptions,
) -> Result<(Model, TrainReport)> {
    hp.validate()?;
    sgd_run(
        model.clone(),
        triplets,
        hp,
        mix_seed(seed, SALT_SHUFFLE),
        opts,
        None,
    )
}

/// Train `hp.restarts` models from distinct derived seeds, keep the one
/// with the best validation score, then fine-tune it on the full training
/// set (`finetune`, defaulting to `triplets`).
pub fn multi_restart_train(
    triplets: &[Triplet],
    hp: &HyperParams,
    validation: &Validation,
    finetune: Option<&[Triplet]>,
    opts: &SgdOptions,
) -> Result<(Model, TrainReport)> {
    hp.validate()?;
    let start = Instant::now();
    let runs: Vec<Result<(Model, f64)>> = (0..hp.restarts)
        .into_par_iter()
        .map(|restart| {
            let seed = mix_seed(hp.seed, restart as u64);
            let d = triplets
                .first()
                .ok_or(Error::EmptyInput { what: "triplets" })?
                .x
                .len();
            let p = triplets[0].y.len();
            let model = init_model(d, p, hp, seed, opts)?;
            let (model, _) = sgd_run(
                model,
                triplets,
                hp,
                mix_seed(seed, SALT_SHUFFLE),
                opts,
                Some(validation),
            )?;
            let acc = validation.score(&model)?;
            Ok((model, acc))
        })
        .collect();

    let mut models = Vec::with_capacity(hp.restarts);
    let mut accuracies = Vec::with_capacity(hp.restarts);
    for run in runs {
        let (model, acc) = run?;
        models.push(model);
        accuracies.push(acc);
    }
    let selected = accuracies
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.total_cmp(b).then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .expect("restarts >= 1");

    let winner = models.swap_remove(selected);
    let full = finetune.unwrap_or(triplets);
    let (final_model, ft_report) = sgd_run(
        winner,
        full,
        hp,
        mix_seed(hp.seed, SALT_FINETUNE),
        opts,
        Some(validation),
    )?;

    Ok((
        final_model,
        TrainReport {
            final_loss: ft_report.final_loss,
            loss_per_epoch: ft_report.loss_per_epoch,
            selected_restart: selected,
            validation_accuracy_per_restart: accuracies,
            wall_time: start.elapsed(),
        },
    ))
}

/// Orchestration knobs for [`train_on_dataset`].
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub pair: PairConfig,
    /// Fit per-dimension feature standardization on the training split and
    /// store it with the model.
    pub standardize: bool,
    /// Force `w_a` to the identity and freeze it.
    pub no_metric: bool,
    /// Drop the attribute-prediction term (λ = 0).
    pub no_constraint: bool,
    /// Fraction of training classes held out for restart validation.
    pub holdout_class_fraction: f64,
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            pair: PairConfig::default(),
            standardize: true,
            no_metric: false,
            no_constraint: false,
            holdout_class_fraction: 0.2,
            early_stop_patience: None,
        }
    }
}

fn effective_hp(hp: &HyperParams, opts: &TrainOptions) -> HyperParams {
    let mut hp = hp.clone();
    if opts.no_constraint {
        hp.lambda = 0.0;
    }
    hp
}

fn sgd_options(opts: &TrainOptions) -> SgdOptions {
    SgdOptions {
        freeze_metric: opts.no_metric,
        early_stop_patience: opts.early_stop_patience,
    }
}

/// Split class ids into (kept, held-out) with at least one class on each
/// side. Deterministic for a fixed seed; `classes` must be ≥ 2.
pub fn class_holdout(classes: &[u32], fraction: f64, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut sorted: Vec<u32> = classes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n_hold = ((sorted.len() as f64 * fraction).round() as usize)
        .max(1)
        .min(sorted.len() - 1);
    let held: Vec<u32> = sorted[..n_hold].to_vec();
    let kept: Vec<u32> = sorted[n_hold..].to_vec();
    (kept, held)
}

/// The full training protocol on a dataset: standardize features on the
/// training split, generate pairs, run multi-restart SGD with restart
/// selection on held-out classes (falling back to held-out pairs when no
/// labels are available), and fine-tune the winner on the whole training
/// set.
pub fn train_on_dataset(
    ds: &Dataset,
    hp: &HyperParams,
    opts: &TrainOptions,
) -> Result<(Model, TrainReport)> {
    let hp = effective_hp(hp, opts);
    hp.validate()?;
    let sgd_opts = sgd_options(opts);

    let train_idx: Vec<usize> = if ds.has_split("train") {
        ds.split_indices("train")?
    } else {
        (0..ds.len()).collect()
    };
    if train_idx.len() < 2 {
        return Err(Error::InvalidConfig(
            "training needs at least 2 samples".into(),
        ));
    }

    let features = select_rows(ds.features.view(), &train_idx);
    let attributes = select_rows(ds.attributes.view(), &train_idx);
    let norm = opts.standardize.then(|| Standardizer::fit(features.view()));
    let features = match &norm {
        Some(n) => n.apply_matrix(features.view()),
        None => features,
    };

    let feature_rows = shared_rows(features.view());
    let attribute_rows = shared_rows(attributes.view());

    let labels: Option<Vec<u32>> = ds
        .labels
        .as_ref()
        .map(|all| train_idx.iter().map(|&i| all[i]).collect());
    let distinct_classes = labels.as_ref().map_or(0, |l| {
        let mut ids: Vec<u32> = l.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    });

    let mut full_pair_cfg = opts.pair.clone();
    full_pair_cfg.seed = mix_seed(hp.seed, SALT_PAIRS_FULL);
    let full_triplets = make_pairs(&feature_rows, &attribute_rows, &full_pair_cfg)?;

    let (restart_triplets, validation) = if let (Some(labels), true) =
        (&labels, distinct_classes >= 2)
    {
        // hold out classes: restart selection mirrors the zero-shot task
        let (kept, held) = class_holdout(
            labels,
            opts.holdout_class_fraction,
            mix_seed(hp.seed, SALT_HOLDOUT),
        );
        let keep_set: std::collections::BTreeSet<u32> = kept.into_iter().collect();
        let held_set: std::collections::BTreeSet<u32> = held.into_iter().collect();
        let seen_local: Vec<usize> = (0..train_idx.len())
            .filter(|&i| keep_set.contains(&labels[i]))
            .collect();
        let held_local: Vec<usize> = (0..train_idx.len())
            .filter(|&i| held_set.contains(&labels[i]))
            .collect();

        let seen_features: Vec<ArcArray1<f64>> =
            seen_local.iter().map(|&i| feature_rows[i].clone()).collect();
        let seen_attrs: Vec<ArcArray1<f64>> = seen_local
            .iter()
            .map(|&i| attribute_rows[i].clone())
            .collect();
        let mut seen_pair_cfg = opts.pair.clone();
        seen_pair_cfg.seed = mix_seed(hp.seed, SALT_PAIRS_SEEN);
        let seen_triplets = make_pairs(&seen_features, &seen_attrs, &seen_pair_cfg)?;

        let held_features = select_rows(features.view(), &held_local);
        let held_attrs = select_rows(attributes.view(), &held_local);
        let held_labels: Vec<u32> = held_local.iter().map(|&i| labels[i]).collect();
        let descriptors = class_descriptors(held_attrs.view(), &held_labels)?;
        (
            seen_triplets,
            Validation::Zsl {
                features: held_features,
                labels: held_labels,
                descriptors,
            },
        )
    } else {
        // no class information: hold out a slice of the pairs themselves
        let mut order: Vec<usize> = (0..full_triplets.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(hp.seed, SALT_VALSPLIT));
        order.shuffle(&mut rng);
        let n_val = (full_triplets.len() / 10).max(1);
        let val: Vec<Triplet> = order[..n_val]
            .iter()
            .map(|&i| full_triplets[i].clone())
            .collect();
        let train: Vec<Triplet> = order[n_val..]
            .iter()
            .map(|&i| full_triplets[i].clone())
            .collect();
        if train.is_empty() {
            return Err(Error::InvalidConfig(
                "too few pairs to hold out a validation slice".into(),
            ));
        }
        (train, Validation::Pairs(val))
    };

    let (model, report) = multi_restart_train(
        &restart_triplets,
        &hp,
        &validation,
        Some(&full_triplets),
        &sgd_opts,
    )?;
    let model = match norm {
        Some(n) => model.with_standardizer(n)?,
        None => model,
    };
    Ok((model, report))
}

fn select_rows(matrix: ArrayView2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), matrix.ncols()));
    for (mut row, &i) in out.rows_mut().into_iter().zip(indices) {
        row.assign(&matrix.row(i));
    }
    out
}

/// Class-held-out grid search: one shared holdout of training classes, one
/// single-restart training per grid point, ZSL accuracy on the held-out
/// classes as the selection criterion. Returns the best hyperparameters
/// (argmax accuracy, earliest point on ties) and the full table.
pub fn grid_search(
    ds: &Dataset,
    grid: &GridSpec,
    base: &HyperParams,
    opts: &TrainOptions,
) -> Result<(HyperParams, Vec<GridRow>)> {
    grid.validate()?;
    base.validate()?;
    let labels_all = ds.labels.as_ref().ok_or(Error::InvalidConfig(
        "grid search needs class labels for the training split".to_string(),
    ))?;
    let train_idx: Vec<usize> = if ds.has_split("train") {
        ds.split_indices("train")?
    } else {
        (0..ds.len()).collect()
    };
    let labels: Vec<u32> = train_idx.iter().map(|&i| labels_all[i]).collect();
    let mut distinct: Vec<u32> = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            got: distinct.len(),
        });
    }

    let (kept, held) = class_holdout(
        &labels,
        grid.holdout_class_fraction,
        mix_seed(base.seed, SALT_HOLDOUT),
    );
    let keep_set: std::collections::BTreeSet<u32> = kept.into_iter().collect();
    let held_set: std::collections::BTreeSet<u32> = held.into_iter().collect();
    let seen_local: Vec<usize> = (0..train_idx.len())
        .filter(|&i| keep_set.contains(&labels[i]))
        .collect();
    let held_local: Vec<usize> = (0..train_idx.len())
        .filter(|&i| held_set.contains(&labels[i]))
        .collect();

    let train_features = select_rows(ds.features.view(), &train_idx);
    let train_attrs = select_rows(ds.attributes.view(), &train_idx);
    let seen_features_raw = select_rows(train_features.view(), &seen_local);
    let norm = opts
        .standardize
        .then(|| Standardizer::fit(seen_features_raw.view()));
    let to_model_space = |m: Array2<f64>| match &norm {
        Some(n) => n.apply_matrix(m.view()),
        None => m,
    };
    let seen_features = to_model_space(seen_features_raw);
    let seen_attrs = select_rows(train_attrs.view(), &seen_local);
    let held_features = to_model_space(select_rows(train_features.view(), &held_local));
    let held_attrs = select_rows(train_attrs.view(), &held_local);
    let held_labels: Vec<u32> = held_local.iter().map(|&i| labels[i]).collect();
    let descriptors = class_descriptors(held_attrs.view(), &held_labels)?;

    let feature_rows = shared_rows(seen_features.view());
    let attribute_rows = shared_rows(seen_attrs.view());
    let mut pair_cfg = opts.pair.clone();
    pair_cfg.seed = mix_seed(base.seed, SALT_PAIRS_SEEN);
    let triplets = make_pairs(&feature_rows, &attribute_rows, &pair_cfg)?;

    let p = ds.attributes.ncols();
    let mut points = Vec::new();
    for &m in &grid.m_candidates(p) {
        for &lambda in &grid.lambdas {
            for &mu in &grid.mus {
                points.push((m, lambda, mu));
            }
        }
    }

    let sgd_opts = sgd_options(opts);
    let rows: Vec<Result<GridRow>> = points
        .par_iter()
        .map(|&(m, lambda, mu)| {
            let start = Instant::now();
            let hp = HyperParams {
                m,
                lambda: if opts.no_constraint { 0.0 } else { lambda },
                mu,
                restarts: 1,
                ..base.clone()
            };
            let (model, _) =
                sgd_train_opts(&triplets, &hp, mix_seed(base.seed, SALT_GRID), &sgd_opts)?;
            let accuracy = zsl_accuracy(held_features.view(), &held_labels, &descriptors, &model)?;
            Ok(GridRow {
                m,
                lambda,
                mu,
                validation_accuracy: accuracy,
                wall_time_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect();

    let mut table = Vec::with_capacity(rows.len());
    for row in rows {
        table.push(row?);
    }
    let best = table
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.validation_accuracy
                .total_cmp(&b.validation_accuracy)
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let best_hp = HyperParams {
        m: table[best].m,
        lambda: table[best].lambda,
        mu: table[best].mu,
        ..base.clone()
    };
    Ok((best_hp, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn shared(rows: Vec<Array1<f64>>) -> Vec<ArcArray1<f64>> {
        rows.into_iter().map(|r| r.into_shared()).collect()
    }

    fn small_hp() -> HyperParams {
        HyperParams {
            lambda: 0.3,
            mu: 0.01,
            m: 3,
            learning_rate: 0.05,
            momentum: 0.0,
            batch_size: 16,
            epochs: 120,
            restarts: 1,
            seed: 0,
        }
    }

    /// Features drawn i.i.d. normal, attributes from a planted ReLU-linear
    /// map, so a perfectly separating model exists.
    fn planted_instance(n: usize, d: usize, p: usize, seed: u64) -> (Vec<ArcArray1<f64>>, Vec<ArcArray1<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let w: Array2<f64> = Array2::from_shape_fn((d, p), |_| {
            Normal::new(0.0, scale).unwrap().sample(&mut rng)
        });
        let b = Array1::from_elem(p, 0.05);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = Array1::from_shape_fn(d, |_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng));
            let mut y = x.dot(&w) + &b;
            y.mapv_inplace(|v| v.max(0.0).min(1.0));
            xs.push(x.into_shared());
            ys.push(y.into_shared());
        }
        (xs, ys)
    }

    #[test]
    fn make_pairs_counts_and_labels() {
        let (xs, ys) = planted_instance(10, 4, 3, 1);
        let cfg = PairConfig::default();
        let triplets = make_pairs(&xs, &ys, &cfg).unwrap();
        assert_eq!(triplets.len(), 20);
        let positives = triplets.iter().filter(|t| t.label.is_similar()).count();
        assert_eq!(positives, 10);
        // every positive carries the image's own attribute vector
        for (i, t) in triplets.iter().enumerate() {
            if t.label.is_similar() {
                let img = i / 2;
                assert_eq!(t.y, ys[img]);
            }
        }
    }

    #[test]
    fn make_pairs_rejects_indistinguishable_negatives() {
        let xs = shared(vec![array![1.0, 0.0], array![0.0, 1.0]]);
        let same = array![0.5, 0.5];
        let ys = shared(vec![same.clone(), same]);
        let err = make_pairs(&xs, &ys, &PairConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoValidNegative { image: 0 }));
    }

    #[test]
    fn make_pairs_is_deterministic() {
        let (xs, ys) = planted_instance(30, 5, 4, 9);
        let cfg = PairConfig {
            seed: 42,
            ..PairConfig::default()
        };
        let a = make_pairs(&xs, &ys, &cfg).unwrap();
        let b = make_pairs(&xs, &ys, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!(ta.x, tb.x);
            assert_eq!(ta.y, tb.y);
            assert_eq!(ta.label, tb.label);
        }
    }

    #[test]
    fn make_pairs_respects_min_distance() {
        let (xs, ys) = planted_instance(40, 5, 4, 10);
        let cfg = PairConfig {
            min_negative_distance: 0.3,
            seed: 7,
            ..PairConfig::default()
        };
        let triplets = make_pairs(&xs, &ys, &cfg).unwrap();
        for (i, t) in triplets.iter().enumerate() {
            if !t.label.is_similar() {
                let img = i / 2;
                let dist = sq_dist(&t.y, &ys[img]).sqrt();
                assert!(dist > 0.3, "negative at distance {dist}");
            }
        }
    }

    #[test]
    fn zero_learning_rate_freezes_model() {
        let (xs, ys) = planted_instance(20, 4, 3, 2);
        let triplets = make_pairs(&xs, &ys, &PairConfig::default()).unwrap();
        let hp = HyperParams {
            learning_rate: 0.0,
            epochs: 5,
            ..small_hp()
        };
        let (model, report) = sgd_train(&triplets, &hp, 11).unwrap();
        let init = init_model(4, 3, &hp, 11, &SgdOptions::default()).unwrap();
        assert_eq!(model.w_x(), init.w_x());
        assert_eq!(model.b_x(), init.b_x());
        assert_eq!(model.w_a(), init.w_a());
        assert_eq!(model.tau(), init.tau());
        let first = report.loss_per_epoch[0];
        assert!(report.loss_per_epoch.iter().all(|&l| l == first));
    }

    #[test]
    fn sgd_is_bit_deterministic() {
        let (xs, ys) = planted_instance(30, 5, 4, 3);
        let triplets = make_pairs(&xs, &ys, &PairConfig::default()).unwrap();
        let hp = HyperParams {
            epochs: 10,
            ..small_hp()
        };
        let (a, ra) = sgd_train(&triplets, &hp, 5).unwrap();
        let (b, rb) = sgd_train(&triplets, &hp, 5).unwrap();
        assert_eq!(a.w_x(), b.w_x());
        assert_eq!(a.b_x(), b.b_x());
        assert_eq!(a.w_a(), b.w_a());
        assert_eq!(a.tau(), b.tau());
        assert_eq!(ra.loss_per_epoch, rb.loss_per_epoch);
    }

    #[test]
    fn planted_model_is_recovered() {
        let (xs, ys) = planted_instance(80, 8, 4, 4);
        let cfg = PairConfig {
            min_negative_distance: 0.5,
            seed: 1,
            ..PairConfig::default()
        };
        let triplets = make_pairs(&xs, &ys, &cfg).unwrap();
        let (model, report) = sgd_train(&triplets, &small_hp(), 6).unwrap();
        let acc = pair_accuracy(&triplets, &model).unwrap();
        assert!(acc >= 0.99, "pair accuracy {acc}");
        assert!(report.loss_per_epoch.last().unwrap() <= &report.loss_per_epoch[0]);
    }

    #[test]
    fn restart_selection_picks_argmax() {
        let (xs, ys) = planted_instance(40, 6, 4, 8);
        let triplets = make_pairs(&xs, &ys, &PairConfig::default()).unwrap();
        let hp = HyperParams {
            epochs: 15,
            restarts: 4,
            ..small_hp()
        };
        let validation = Validation::Pairs(triplets[..10].to_vec());
        let (_, report) =
            multi_restart_train(&triplets, &hp, &validation, None, &SgdOptions::default())
                .unwrap();
        assert_eq!(report.validation_accuracy_per_restart.len(), 4);
        let best = report
            .validation_accuracy_per_restart
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        assert_eq!(
            report.validation_accuracy_per_restart[report.selected_restart],
            best
        );
    }

    #[test]
    fn multi_restart_is_deterministic() {
        let (xs, ys) = planted_instance(30, 5, 3, 12);
        let triplets = make_pairs(&xs, &ys, &PairConfig::default()).unwrap();
        let hp = HyperParams {
            epochs: 8,
            restarts: 3,
            m: 2,
            ..small_hp()
        };
        let validation = Validation::Pairs(triplets[..8].to_vec());
        let (a, _) =
            multi_restart_train(&triplets, &hp, &validation, None, &SgdOptions::default())
                .unwrap();
        let (b, _) =
            multi_restart_train(&triplets, &hp, &validation, None, &SgdOptions::default())
                .unwrap();
        assert_eq!(a.w_x(), b.w_x());
        assert_eq!(a.w_a(), b.w_a());
        assert_eq!(a.tau(), b.tau());
    }

    #[test]
    fn frozen_metric_stays_identity() {
        let (xs, ys) = planted_instance(30, 5, 3, 13);
        let triplets = make_pairs(&xs, &ys, &PairConfig::default()).unwrap();
        let hp = HyperParams {
            epochs: 10,
            ..small_hp()
        };
        let opts = SgdOptions {
            freeze_metric: true,
            ..SgdOptions::default()
        };
        let (model, _) = sgd_train_opts(&triplets, &hp, 3, &opts).unwrap();
        assert_eq!(model.w_a(), Array2::eye(3).view());
    }

    #[test]
    fn divergent_learning_rate_is_reported() {
        let (xs, ys) = planted_instance(30, 5, 3, 14);
        let triplets = make_pairs(&xs, &ys, &PairConfig::default()).unwrap();
        let hp = HyperParams {
            learning_rate: 1e12,
            epochs: 50,
            ..small_hp()
        };
        match sgd_train(&triplets, &hp, 3) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn grid_m_candidates_round_and_dedupe() {
        let grid = GridSpec {
            m_fractions: vec![0.2, 1.2],
            ..GridSpec::default()
        };
        assert_eq!(grid.m_candidates(100), vec![20, 120]);
        let tiny = GridSpec {
            m_fractions: vec![0.01, 0.02, 1.0],
            ..GridSpec::default()
        };
        assert_eq!(tiny.m_candidates(10), vec![1, 10]);
    }

    #[test]
    fn mix_seed_streams_differ() {
        assert_ne!(mix_seed(0, 1), mix_seed(0, 2));
        assert_ne!(mix_seed(1, 1), mix_seed(2, 1));
        assert_eq!(mix_seed(7, 3), mix_seed(7, 3));
    }
}

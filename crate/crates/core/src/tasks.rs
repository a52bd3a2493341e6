//! Applications of the consistency score: zero-shot classification,
//! few-shot fine-tuning and attribute-based retrieval, with their
//! evaluation metrics.
//!
//! All functions here are pure given an immutable model. Ties in scores
//! are broken by ascending item index or class id so that every ranking
//! and decision is deterministic.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{Model, Triplet};
use crate::objective::HyperParams;
use crate::training::{sgd_continue, SgdOptions};

/// A class's attribute signature used as the zero-shot decision anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDescriptor {
    pub class_id: u32,
    pub signature: Array1<f64>,
}

/// One retrieval hit; results are sorted ascending by score, then index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub item_index: usize,
    pub score: f64,
}

/// Retrieval cut: everything strictly below a score threshold, or the k
/// best-scoring items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetrievalMode {
    Threshold(f64),
    TopK(usize),
}

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Build one descriptor per distinct class as the arithmetic mean of that
/// class's attribute vectors ("mean attribute frequencies"). Descriptors
/// come back sorted by class id.
pub fn class_descriptors(
    attributes: ArrayView2<f64>,
    labels: &[u32],
) -> Result<Vec<ClassDescriptor>> {
    if attributes.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "attributes vs labels",
            left: attributes.nrows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput {
            what: "labelled samples",
        });
    }
    let mut by_class: std::collections::BTreeMap<u32, (Array1<f64>, usize)> =
        std::collections::BTreeMap::new();
    for (row, &class_id) in attributes.rows().into_iter().zip(labels) {
        let entry = by_class
            .entry(class_id)
            .or_insert_with(|| (Array1::zeros(attributes.ncols()), 0));
        entry.0 += &row;
        entry.1 += 1;
    }
    Ok(by_class
        .into_iter()
        .map(|(class_id, (sum, count))| ClassDescriptor {
            class_id,
            signature: sum / count as f64,
        })
        .collect())
}

/// Zero-shot decision rule: the class whose signature minimizes the score.
/// Ties go to the smallest class id.
pub fn zsl_classify(
    x: ArrayView1<f64>,
    descriptors: &[ClassDescriptor],
    model: &Model,
) -> Result<u32> {
    if descriptors.is_empty() {
        return Err(Error::EmptyInput {
            what: "class descriptors",
        });
    }
    let mut best: Option<(f64, u32)> = None;
    for desc in descriptors {
        let s = model.score(x, desc.signature.view())?;
        let better = match best {
            None => true,
            Some((bs, bid)) => s < bs || (s == bs && desc.class_id < bid),
        };
        if better {
            best = Some((s, desc.class_id));
        }
    }
    Ok(best.expect("non-empty descriptor set").1)
}

/// Multi-class accuracy of [`zsl_classify`] over a labelled test set.
/// Every test label must have a descriptor.
pub fn zsl_accuracy(
    features: ArrayView2<f64>,
    labels: &[u32],
    descriptors: &[ClassDescriptor],
    model: &Model,
) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "features vs labels",
            left: features.nrows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput { what: "test set" });
    }
    for &label in labels {
        if !descriptors.iter().any(|d| d.class_id == label) {
            return Err(Error::UnknownClass { class_id: label });
        }
    }
    let mut correct = 0usize;
    for (row, &label) in features.rows().into_iter().zip(labels) {
        if zsl_classify(row, descriptors, model)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Pair-classification accuracy with the learned threshold: a pair is
/// predicted similar iff `S² < τ`.
pub fn pair_accuracy(triplets: &[Triplet], model: &Model) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput { what: "triplets" });
    }
    let mut correct = 0usize;
    for t in triplets {
        let s2 = model.score_squared(t.x.view(), t.y.view())?;
        if (s2 < model.tau()) == t.label.is_similar() {
            correct += 1;
        }
    }
    Ok(correct as f64 / triplets.len() as f64)
}

/// Continue SGD on triplets from unseen classes only, starting from the
/// given model. The decision rule afterwards is the same as zero-shot.
/// `hp.epochs == 0` returns the model unchanged.
pub fn few_shot_finetune(model: &Model, new_triplets: &[Triplet], hp: &HyperParams) -> Result<Model> {
    if hp.epochs == 0 {
        return Ok(model.clone());
    }
    let (tuned, _report) = sgd_continue(model, new_triplets, hp, hp.seed, &SgdOptions::default())?;
    Ok(tuned)
}

/// Rank a gallery of image features against an attribute query and cut
/// the ranking by threshold (strict `score < t`) or top-k.
pub fn retrieve(
    query: ArrayView1<f64>,
    gallery: ArrayView2<f64>,
    model: &Model,
    mode: RetrievalMode,
) -> Result<Vec<RankedResult>> {
    if gallery.nrows() == 0 {
        return Err(Error::EmptyInput { what: "gallery" });
    }
    match mode {
        RetrievalMode::Threshold(t) if t.is_nan() || t < 0.0 => {
            return Err(Error::InvalidConfig(format!(
                "retrieval threshold must be >= 0, got {t}"
            )));
        }
        RetrievalMode::TopK(0) => {
            return Err(Error::InvalidConfig("top-k must be >= 1".into()));
        }
        _ => {}
    }
    let mut ranked = Vec::with_capacity(gallery.nrows());
    for (idx, row) in gallery.rows().into_iter().enumerate() {
        ranked.push(RankedResult {
            item_index: idx,
            score: model.score(row, query)?,
        });
    }
    ranked.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.item_index.cmp(&b.item_index))
    });
    match mode {
        RetrievalMode::Threshold(t) => ranked.retain(|r| r.score < t),
        RetrievalMode::TopK(k) => ranked.truncate(k),
    }
    Ok(ranked)
}

/// Average precision of a ranked list of relevance flags: the mean of
/// precision-at-r over the relevant ranks r, computed on the full ranking.
pub fn average_precision(flags: &[bool]) -> Result<f64> {
    let relevant = flags.iter().filter(|&&f| f).count();
    if relevant == 0 {
        return Err(Error::NoRelevantItems);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &flag) in flags.iter().enumerate() {
        if flag {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / relevant as f64)
}

/// Precision-recall curve: one point per rank.
pub fn pr_curve(flags: &[bool]) -> Result<Vec<PrPoint>> {
    let relevant = flags.iter().filter(|&&f| f).count();
    if relevant == 0 {
        return Err(Error::NoRelevantItems);
    }
    let mut hits = 0usize;
    let mut points = Vec::with_capacity(flags.len());
    for (rank, &flag) in flags.iter().enumerate() {
        if flag {
            hits += 1;
        }
        points.push(PrPoint {
            recall: hits as f64 / relevant as f64,
            precision: hits as f64 / (rank + 1) as f64,
        });
    }
    Ok(points)
}

/// Average precision per query class: the gallery is ranked against each
/// descriptor, an item being relevant when its label equals the query
/// class. Every query class must be present in the gallery.
pub fn per_class_average_precision(
    descriptors: &[ClassDescriptor],
    gallery: ArrayView2<f64>,
    labels: &[u32],
    model: &Model,
) -> Result<Vec<(u32, f64)>> {
    if gallery.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "gallery vs labels",
            left: gallery.nrows(),
            right: labels.len(),
        });
    }
    if descriptors.is_empty() {
        return Err(Error::EmptyInput {
            what: "query descriptors",
        });
    }
    let mut out = Vec::with_capacity(descriptors.len());
    for desc in descriptors {
        if !labels.contains(&desc.class_id) {
            return Err(Error::UnknownClass {
                class_id: desc.class_id,
            });
        }
        let ranking = retrieve(
            desc.signature.view(),
            gallery,
            model,
            RetrievalMode::TopK(gallery.nrows()),
        )?;
        let flags: Vec<bool> = ranking
            .iter()
            .map(|r| labels[r.item_index] == desc.class_id)
            .collect();
        out.push((desc.class_id, average_precision(&flags)?));
    }
    Ok(out)
}

/// Mean over query classes of [`per_class_average_precision`].
pub fn mean_average_precision(
    descriptors: &[ClassDescriptor],
    gallery: ArrayView2<f64>,
    labels: &[u32],
    model: &Model,
) -> Result<f64> {
    let per_class = per_class_average_precision(descriptors, gallery, labels, model)?;
    Ok(per_class.iter().map(|(_, ap)| ap).sum::<f64>() / per_class.len() as f64)
}

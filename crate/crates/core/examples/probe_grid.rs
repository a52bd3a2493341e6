//! Scratch probe: grid-search landscape on the reference benchmarks.

use attrmetric::data::{reference_synth_a, reference_synth_b};
use attrmetric::objective::HyperParams;
use attrmetric::tasks::{class_descriptors, zsl_accuracy};
use attrmetric::training::{grid_search, train_on_dataset, GridSpec, TrainOptions};
use std::time::Instant;

fn eval_zsl(ds: &attrmetric::Dataset, model: &attrmetric::Model) -> f64 {
    let test_idx = ds.split_indices("test").unwrap();
    let labels: Vec<u32> = test_idx
        .iter()
        .map(|&i| ds.labels.as_ref().unwrap()[i])
        .collect();
    let mut feats = ndarray::Array2::zeros((test_idx.len(), ds.feature_dim()));
    let mut attrs = ndarray::Array2::zeros((test_idx.len(), ds.attribute_dim()));
    for (r, &i) in test_idx.iter().enumerate() {
        feats.row_mut(r).assign(&ds.features.row(i));
        attrs.row_mut(r).assign(&ds.attributes.row(i));
    }
    let descs = class_descriptors(attrs.view(), &labels).unwrap();
    zsl_accuracy(feats.view(), &labels, &descs, model).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("a");
    let ds = if which == "b" {
        reference_synth_b()
    } else {
        reference_synth_a()
    };
    let hp = HyperParams::for_attribute_dim(ds.attribute_dim());
    let grid = GridSpec::default();
    let opts = TrainOptions::default();

    let t0 = Instant::now();
    let (best, table) = grid_search(&ds, &grid, &hp, &opts).unwrap();
    println!("grid search over {} points in {:?}", table.len(), t0.elapsed());
    let mut sorted = table.clone();
    sorted.sort_by(|x, y| y.validation_accuracy.total_cmp(&x.validation_accuracy));
    for row in sorted.iter().take(12) {
        println!(
            "  m={:2} lambda={:5.2} mu={:5.2} val_acc={:.4} ({:.2}s)",
            row.m, row.lambda, row.mu, row.validation_accuracy, row.wall_time_s
        );
    }
    println!("best: m={} lambda={} mu={}", best.m, best.lambda, best.mu);

    let t0 = Instant::now();
    let (model, _) = train_on_dataset(&ds, &best, &opts).unwrap();
    println!(
        "final train ({:?}) test zsl accuracy {:.4}",
        t0.elapsed(),
        eval_zsl(&ds, &model)
    );

    // ablations at the same grid-searched hyperparameters
    for (name, topts) in [
        (
            "no-constraint",
            TrainOptions {
                no_constraint: true,
                ..TrainOptions::default()
            },
        ),
        (
            "no-metric",
            TrainOptions {
                no_metric: true,
                ..TrainOptions::default()
            },
        ),
    ] {
        let (m, _) = train_on_dataset(&ds, &best, &topts).unwrap();
        println!("{name}: test zsl accuracy {:.4}", eval_zsl(&ds, &m));
    }
}

//! Scratch probe: optimizer settings vs convergence on synth-A.

use attrmetric::data::reference_synth_a;
use attrmetric::objective::HyperParams;
use attrmetric::tasks::{class_descriptors, zsl_accuracy};
use attrmetric::training::{train_on_dataset, TrainOptions};
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
    let ds = reference_synth_a();
    let base = HyperParams::for_attribute_dim(ds.attribute_dim());
    let opts = TrainOptions::default();

    for (name, hp) in [
        ("default (lr .01, 200ep, mom 0)", base.clone()),
        (
            "lr .05",
            HyperParams {
                learning_rate: 0.05,
                ..base.clone()
            },
        ),
        (
            "lr .05 mom .9",
            HyperParams {
                learning_rate: 0.05,
                momentum: 0.9,
                ..base.clone()
            },
        ),
        (
            "lr .01 mom .9",
            HyperParams {
                momentum: 0.9,
                ..base.clone()
            },
        ),
        (
            "lr .01 600ep",
            HyperParams {
                epochs: 600,
                ..base.clone()
            },
        ),
        (
            "lr .02 mom .9 400ep",
            HyperParams {
                learning_rate: 0.02,
                momentum: 0.9,
                epochs: 400,
                ..base.clone()
            },
        ),
    ] {
        let t0 = Instant::now();
        match train_on_dataset(&ds, &hp, &opts) {
            Ok((model, report)) => println!(
                "{name:28} loss {:10.3} acc {:.4} ({:.1?})",
                report.final_loss,
                eval_zsl(&ds, &model),
                t0.elapsed()
            ),
            Err(e) => println!("{name:28} FAILED: {e}"),
        }
    }
}

//! Scratch probe for pipeline calibration (not part of the public API).

use attrmetric::data::{reference_synth_a, reference_synth_b, synth_generate, SynthSpec};
use attrmetric::objective::HyperParams;
use attrmetric::tasks::{class_descriptors, mean_average_precision, pair_accuracy, zsl_accuracy};
use attrmetric::training::{
    make_pairs, shared_rows, train_on_dataset, PairConfig, TrainOptions,
};
use std::time::Instant;

fn eval_zsl(ds: &attrmetric::Dataset, model: &attrmetric::Model) -> (f64, f64) {
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
    let acc = zsl_accuracy(feats.view(), &labels, &descs, model).unwrap();
    let map = mean_average_precision(&descs, feats.view(), &labels, model).unwrap();
    (acc, map)
}

fn main() {
    let t0 = Instant::now();
    let ds = reference_synth_a();
    println!("synth-A generated in {:?}", t0.elapsed());

    let hp = HyperParams::for_attribute_dim(ds.attribute_dim());
    let opts = TrainOptions::default();

    let t0 = Instant::now();
    let (model, report) = train_on_dataset(&ds, &hp, &opts).unwrap();
    println!(
        "train: {:?}, final_loss {:.4}, restarts {:?}, selected {}",
        t0.elapsed(),
        report.final_loss,
        report.validation_accuracy_per_restart,
        report.selected_restart
    );
    let (acc, map) = eval_zsl(&ds, &model);
    println!("synth-A default hp: zsl acc {acc:.4}, mAP {map:.4}");

    // planted (sigma = 0) pair accuracy
    let t0 = Instant::now();
    let spec0 = SynthSpec {
        noise_sigma: 0.0,
        ..SynthSpec::reference_a()
    };
    let ds0 = synth_generate(&spec0).unwrap();
    let (model0, _) = train_on_dataset(&ds0, &hp, &opts).unwrap();
    // recompute training pairs to measure pair accuracy on them
    let train_idx = ds0.split_indices("train").unwrap();
    let feats: Vec<_> = train_idx.iter().map(|&i| ds0.features.row(i).to_owned().into_shared()).collect();
    let attrs: Vec<_> = train_idx.iter().map(|&i| ds0.attributes.row(i).to_owned().into_shared()).collect();
    let cfg = PairConfig::default();
    let triplets = make_pairs(&feats, &attrs, &cfg).unwrap();
    let pacc = pair_accuracy(&triplets, &model0).unwrap();
    println!("sigma=0 pair accuracy {pacc:.4} in {:?}", t0.elapsed());
    let _ = shared_rows(ds0.features.view());

    // ablation ordering on synth-B
    let dsb = reference_synth_b();
    let t0 = Instant::now();
    let (full, _) = train_on_dataset(&dsb, &hp, &opts).unwrap();
    let (full_acc, _) = eval_zsl(&dsb, &full);
    let (noc, _) = train_on_dataset(
        &dsb,
        &hp,
        &TrainOptions {
            no_constraint: true,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let (noc_acc, _) = eval_zsl(&dsb, &noc);
    let (nom, _) = train_on_dataset(
        &dsb,
        &hp,
        &TrainOptions {
            no_metric: true,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let (nom_acc, _) = eval_zsl(&dsb, &nom);
    println!(
        "synth-B ablations in {:?}: full {full_acc:.4} >= no-constraint {noc_acc:.4} >= no-metric {nom_acc:.4}",
        t0.elapsed()
    );
}

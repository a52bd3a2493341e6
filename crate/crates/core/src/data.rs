//! Dataset container format, synthetic benchmark generation, and model
//! serialization.
//!
//! A dataset is a directory of plain text files: `features.csv` and
//! `attributes.csv` (one sample per row, comma-separated decimal values),
//! an optional `labels.csv` (one class id per row) and, when labels are
//! present, `splits.txt` with lines of the form `train: 3,7,12`. All text
//! is UTF-8 with LF line endings and `.` as the decimal separator.
//!
//! Model files are versioned text documents with every float written with
//! 17 significant digits, so a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Model, Standardizer};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &str = "attrmetric-model";

/// In-memory dataset: sample-per-row feature and attribute matrices,
/// optional class labels, and named class-level splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub attributes: Array2<f64>,
    pub labels: Option<Vec<u32>>,
    pub splits: BTreeMap<String, Vec<u32>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn attribute_dim(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn has_split(&self, name: &str) -> bool {
        self.splits.contains_key(name)
    }

    /// Class ids of a named split.
    pub fn split_class_ids(&self, name: &str) -> Result<&[u32]> {
        self.splits
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingSplit(name.to_string()))
    }

    /// Indices of the samples whose class belongs to the named split.
    pub fn split_indices(&self, name: &str) -> Result<Vec<usize>> {
        let ids = self.split_class_ids(name)?;
        let labels = self.labels.as_ref().ok_or_else(|| {
            Error::InvalidConfig("dataset has splits but no labels.csv".into())
        })?;
        let set: std::collections::BTreeSet<u32> = ids.iter().copied().collect();
        Ok((0..self.len())
            .filter(|&i| set.contains(&labels[i]))
            .collect())
    }

    /// Check every container invariant: matching row counts, attribute
    /// values in [0,1], finite entries, disjoint splits covering every
    /// labelled class.
    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.attributes.nrows() {
            return Err(Error::LengthMismatch {
                what: "features.csv vs attributes.csv rows",
                left: self.features.nrows(),
                right: self.attributes.nrows(),
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.features.nrows() {
                return Err(Error::LengthMismatch {
                    what: "features.csv vs labels.csv rows",
                    left: self.features.nrows(),
                    right: labels.len(),
                });
            }
        }
        for (row, r) in self.features.rows().into_iter().enumerate() {
            if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                return Err(Error::ParseValue {
                    file: "features.csv".into(),
                    row,
                    msg: format!("non-finite value {v}"),
                });
            }
        }
        for (row, r) in self.attributes.rows().into_iter().enumerate() {
            for &v in r {
                if !v.is_finite() {
                    return Err(Error::ParseValue {
                        file: "attributes.csv".into(),
                        row,
                        msg: format!("non-finite value {v}"),
                    });
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ValueOutOfRange {
                        file: "attributes.csv".into(),
                        row,
                        value: v,
                    });
                }
            }
        }
        // splits must be pairwise disjoint
        let names: Vec<&String> = self.splits.keys().collect();
        for (i, a) in names.iter().enumerate() {
            let set_a: std::collections::BTreeSet<u32> =
                self.splits[*a].iter().copied().collect();
            for b in &names[i + 1..] {
                if let Some(&shared) = self.splits[*b].iter().find(|id| set_a.contains(id)) {
                    return Err(Error::SplitOverlap {
                        class_id: shared,
                        a: (*a).clone(),
                        b: (*b).clone(),
                    });
                }
            }
        }
        if let Some(labels) = &self.labels {
            if self.splits.is_empty() {
                return Err(Error::InvalidConfig(
                    "dataset has labels but no splits.txt".into(),
                ));
            }
            let all: std::collections::BTreeSet<u32> =
                self.splits.values().flatten().copied().collect();
            if let Some(&missing) = labels.iter().find(|id| !all.contains(id)) {
                return Err(Error::UnsplitClass { class_id: missing });
            }
        } else if !self.splits.is_empty() {
            return Err(Error::InvalidConfig(
                "dataset has splits.txt but no labels.csv".into(),
            ));
        }
        Ok(())
    }

    /// Write the dataset directory, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix(&dir.join("features.csv"), &self.features)?;
        write_matrix(&dir.join("attributes.csv"), &self.attributes)?;
        if let Some(labels) = &self.labels {
            let mut text = String::new();
            for l in labels {
                writeln!(text, "{l}").expect("string write");
            }
            fs::write(dir.join("labels.csv"), text)
                .map_err(|e| Error::io(dir.join("labels.csv"), e))?;
        }
        if !self.splits.is_empty() {
            let mut text = String::new();
            for (name, ids) in &self.splits {
                let joined: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
                writeln!(text, "{name}: {}", joined.join(",")).expect("string write");
            }
            fs::write(dir.join("splits.txt"), text)
                .map_err(|e| Error::io(dir.join("splits.txt"), e))?;
        }
        Ok(())
    }

    /// Load and validate a dataset directory.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let features = read_matrix(&dir.join("features.csv"), "features.csv", false)?;
        let attributes = read_matrix(&dir.join("attributes.csv"), "attributes.csv", true)?;
        let labels_path = dir.join("labels.csv");
        let labels = if labels_path.exists() {
            Some(read_labels(&labels_path)?)
        } else {
            None
        };
        let splits_path = dir.join("splits.txt");
        let splits = if splits_path.exists() {
            read_splits(&splits_path)?
        } else {
            BTreeMap::new()
        };
        let ds = Dataset {
            features,
            attributes,
            labels,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn write_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut text = String::new();
    for row in matrix.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(text, "{}", fields.join(",")).expect("string write");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            Error::MissingFile { path: path.into() }
        } else {
            Error::io(path, e)
        }
    })
}

fn read_matrix(path: &Path, file: &str, unit_range: bool) -> Result<Array2<f64>> {
    let text = read_text(path)?;
    let mut values: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0usize;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::ParseValue {
                file: file.into(),
                row,
                msg: format!("cannot parse \"{}\" as a number", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::ParseValue {
                    file: file.into(),
                    row,
                    msg: format!("non-finite value {v}"),
                });
            }
            if unit_range && !(0.0..=1.0).contains(&v) {
                return Err(Error::ValueOutOfRange {
                    file: file.into(),
                    row,
                    value: v,
                });
            }
            values.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(Error::RaggedRow {
                    file: file.into(),
                    row,
                    expected: w,
                    actual: count,
                });
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or(Error::EmptyInput { what: "data file" })?;
    Ok(Array2::from_shape_vec((rows, width), values).expect("consistent row widths"))
}

fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let text = read_text(path)?;
    let mut labels = Vec::new();
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let id: u32 = line.trim().parse().map_err(|_| Error::ParseValue {
            file: "labels.csv".into(),
            row,
            msg: format!("cannot parse \"{}\" as a class id", line.trim()),
        })?;
        labels.push(id);
    }
    Ok(labels)
}

fn read_splits(path: &Path) -> Result<BTreeMap<String, Vec<u32>>> {
    let text = read_text(path)?;
    let mut splits = BTreeMap::new();
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, ids) = line.split_once(':').ok_or_else(|| Error::ParseValue {
            file: "splits.txt".into(),
            row,
            msg: "expected \"name: id,id,...\"".into(),
        })?;
        let name = name.trim().to_string();
        let mut parsed = Vec::new();
        for field in ids.split(',') {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            let id: u32 = field.parse().map_err(|_| Error::ParseValue {
                file: "splits.txt".into(),
                row,
                msg: format!("cannot parse \"{field}\" as a class id"),
            })?;
            parsed.push(id);
        }
        if splits.insert(name.clone(), parsed).is_some() {
            return Err(Error::ParseValue {
                file: "splits.txt".into(),
                row,
                msg: format!("duplicate split \"{name}\""),
            });
        }
    }
    Ok(splits)
}

/// Parameters of the synthetic benchmark generator: distinct binary class
/// signatures mixed into feature space by a random full-rank map, plus
/// Gaussian feature noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    /// Attribute dimension.
    pub p: usize,
    /// Feature dimension; `d >= p` recommended.
    pub d: usize,
    /// Probability that an attribute is on in a class signature.
    pub attribute_density: f64,
    /// Standard deviation of the additive feature noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// The frozen reference benchmark "synth-A": 15 classes (12 train,
    /// 3 test), 50 samples each, p=20, d=64, density 0.35, σ=0.05, seed 7.
    pub fn reference_a() -> Self {
        SynthSpec {
            n_classes: 15,
            samples_per_class: 50,
            p: 20,
            d: 64,
            attribute_density: 0.35,
            noise_sigma: 0.05,
            seed: 7,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("n_classes must be >= 2".into()));
        }
        if self.samples_per_class < 1 || self.p < 1 || self.d < 1 {
            return Err(Error::InvalidConfig(
                "samples_per_class, p and d must be >= 1".into(),
            ));
        }
        if !(self.attribute_density > 0.0 && self.attribute_density < 1.0) {
            return Err(Error::InvalidConfig(
                "attribute_density must be in (0, 1)".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(
                "noise_sigma must be a finite value >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Extra generator knobs beyond [`SynthSpec`].
#[derive(Debug, Clone, Default)]
pub struct SynthOptions {
    /// Replace the random mixing map with a fixed p×d matrix.
    pub mixing: Option<Array2<f64>>,
    /// Standard deviation of low-rank correlated noise added to per-image
    /// attribute vectors (clipped back to [0,1]). 0 disables it.
    pub attr_noise_sigma: f64,
    /// Rank of the correlated attribute noise.
    pub attr_noise_rank: usize,
}

/// Fraction of classes assigned to the "test" split by the generator.
const SYNTH_TEST_FRACTION: f64 = 0.2;

/// Generate a synthetic dataset: per-class binary attribute signatures
/// (pairwise distinct), features `x = y · M + noise`, labels, and a
/// class-level train/test split. Deterministic for a fixed seed.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    synth_generate_opts(spec, &SynthOptions::default())
}

pub fn synth_generate_opts(spec: &SynthSpec, opts: &SynthOptions) -> Result<Dataset> {
    spec.validate()?;
    if spec.d < spec.p {
        log::warn!(
            "synthetic generator: d = {} < p = {}; features may not determine attributes",
            spec.d,
            spec.p
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // pairwise distinct binary signatures
    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes);
    let mut draws = 0;
    while signatures.len() < spec.n_classes {
        if draws >= 1000 {
            return Err(Error::SynthFailed(format!(
                "could not draw {} distinct signatures in 1000 attempts",
                spec.n_classes
            )));
        }
        draws += 1;
        let candidate: Vec<f64> = (0..spec.p)
            .map(|_| {
                if rng.gen_range(0.0..1.0) < spec.attribute_density {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        if !signatures.contains(&candidate) {
            signatures.push(candidate);
        }
    }

    let mixing = match &opts.mixing {
        Some(m) => {
            if m.shape() != [spec.p, spec.d] {
                return Err(Error::InvalidConfig(format!(
                    "mixing override must be {}x{}, got {}x{}",
                    spec.p,
                    spec.d,
                    m.nrows(),
                    m.ncols()
                )));
            }
            m.clone()
        }
        None => {
            let normal = Normal::new(0.0, 1.0).expect("finite std");
            Array2::from_shape_vec(
                (spec.p, spec.d),
                (0..spec.p * spec.d)
                    .map(|_| normal.sample(&mut rng))
                    .collect(),
            )
            .expect("shape matches")
        }
    };

    let noise_basis = (opts.attr_noise_sigma > 0.0 && opts.attr_noise_rank > 0).then(|| {
        let normal = Normal::new(0.0, 1.0).expect("finite std");
        Array2::from_shape_vec(
            (spec.p, opts.attr_noise_rank),
            (0..spec.p * opts.attr_noise_rank)
                .map(|_| normal.sample(&mut rng))
                .collect(),
        )
        .expect("shape matches")
    });

    let n = spec.n_classes * spec.samples_per_class;
    let mut features = Array2::zeros((n, spec.d));
    let mut attributes = Array2::zeros((n, spec.p));
    let mut labels = Vec::with_capacity(n);
    let feature_noise = Normal::new(0.0, 1.0).expect("finite std");
    let mut row = 0usize;
    for (class, signature) in signatures.iter().enumerate() {
        let signature = Array1::from_vec(signature.clone());
        for _ in 0..spec.samples_per_class {
            let y = match &noise_basis {
                Some(basis) => {
                    let latent = Array1::from_shape_fn(opts.attr_noise_rank, |_| {
                        opts.attr_noise_sigma * feature_noise.sample(&mut rng)
                    });
                    let mut y = &signature + &basis.dot(&latent);
                    y.mapv_inplace(|v| v.clamp(0.0, 1.0));
                    y
                }
                None => signature.clone(),
            };
            let mut x = y.dot(&mixing);
            if spec.noise_sigma > 0.0 {
                for v in x.iter_mut() {
                    *v += spec.noise_sigma * feature_noise.sample(&mut rng);
                }
            }
            features.row_mut(row).assign(&x);
            attributes.row_mut(row).assign(&y);
            labels.push(class as u32);
            row += 1;
        }
    }

    // class-level train/test split
    let mut class_ids: Vec<u32> = (0..spec.n_classes as u32).collect();
    class_ids.shuffle(&mut rng);
    let n_test = ((spec.n_classes as f64 * SYNTH_TEST_FRACTION).round() as usize)
        .max(1)
        .min(spec.n_classes - 1);
    let mut test: Vec<u32> = class_ids[..n_test].to_vec();
    let mut train: Vec<u32> = class_ids[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    let mut splits = BTreeMap::new();
    splits.insert("train".to_string(), train);
    splits.insert("test".to_string(), test);

    let ds = Dataset {
        features,
        attributes,
        labels: Some(labels),
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

/// The frozen reference benchmark "synth-A".
pub fn reference_synth_a() -> Dataset {
    synth_generate(&SynthSpec::reference_a()).expect("reference spec is valid")
}

/// "synth-B": synth-A regenerated with correlated attribute noise and
/// seed 11, used for the ablation-ordering benchmark.
pub fn reference_synth_b() -> Dataset {
    let spec = SynthSpec {
        seed: 11,
        ..SynthSpec::reference_a()
    };
    let opts = SynthOptions {
        mixing: None,
        attr_noise_sigma: 0.12,
        attr_noise_rank: 3,
    };
    synth_generate_opts(&spec, &opts).expect("reference spec is valid")
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize a model with 17-significant-digit floats. `comments` are
/// written as `#`-prefixed lines after the header and ignored on load.
pub fn write_model(w: &mut impl Write, model: &Model, comments: &[&str]) -> io::Result<()> {
    writeln!(w, "{MODEL_MAGIC} {MODEL_FORMAT_VERSION}")?;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(
        w,
        "dims {} {} {}",
        model.feature_dim(),
        model.attribute_dim(),
        model.metric_dim()
    )?;
    writeln!(w, "tau {}", fmt17(model.tau()))?;
    match model.standardizer() {
        Some(norm) => {
            writeln!(w, "standardize 1")?;
            let mean: Vec<String> = norm.mean.iter().map(|&v| fmt17(v)).collect();
            writeln!(w, "mean {}", mean.join(" "))?;
            let std: Vec<String> = norm.std.iter().map(|&v| fmt17(v)).collect();
            writeln!(w, "std {}", std.join(" "))?;
        }
        None => writeln!(w, "standardize 0")?,
    }
    writeln!(w, "w_x")?;
    for row in model.w_x().rows() {
        let fields: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
        writeln!(w, "{}", fields.join(" "))?;
    }
    writeln!(w, "b_x")?;
    let fields: Vec<String> = model.b_x().iter().map(|&v| fmt17(v)).collect();
    writeln!(w, "{}", fields.join(" "))?;
    writeln!(w, "w_a")?;
    for row in model.w_a().rows() {
        let fields: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
        writeln!(w, "{}", fields.join(" "))?;
    }
    Ok(())
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    save_model_with_comments(model, path, &[])
}

pub fn save_model_with_comments(model: &Model, path: &Path, comments: &[&str]) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, model, comments).expect("in-memory write");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct ModelLines<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> ModelLines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        for (_, line) in self.lines.by_ref() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Ok(trimmed);
        }
        Err(Error::ModelFormat("unexpected end of file".into()))
    }

    fn expect_tag(&mut self, tag: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        match line.strip_prefix(tag) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok(rest.trim()),
            _ => Err(Error::ModelFormat(format!(
                "expected \"{tag}\", found \"{line}\""
            ))),
        }
    }
}

fn parse_floats(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let values: std::result::Result<Vec<f64>, _> =
        text.split_whitespace().map(str::parse).collect();
    let values =
        values.map_err(|_| Error::ModelFormat(format!("{what}: cannot parse \"{text}\"")))?;
    if values.len() != expected {
        return Err(Error::ModelFormat(format!(
            "{what}: expected {expected} values, got {}",
            values.len()
        )));
    }
    Ok(values)
}

/// Parse a model document produced by [`write_model`].
pub fn read_model(text: &str) -> Result<Model> {
    let mut lines = ModelLines {
        lines: text.lines().enumerate(),
    };
    let header = lines.next_line()?;
    match header.strip_prefix(MODEL_MAGIC) {
        Some(version) if version.trim() == MODEL_FORMAT_VERSION.to_string() => {}
        _ => {
            return Err(Error::ModelVersion {
                found: header.to_string(),
            });
        }
    }
    let dims = parse_floats(lines.expect_tag("dims")?, 3, "dims")?;
    let (d, p, m) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    if d < 1 || p < 1 || m < 1 {
        return Err(Error::ModelFormat(format!(
            "dims must be positive, got {d} {p} {m}"
        )));
    }
    let tau = parse_floats(lines.expect_tag("tau")?, 1, "tau")?[0];
    let standardize = lines.expect_tag("standardize")?;
    let norm = match standardize {
        "0" => None,
        "1" => {
            let mean = parse_floats(lines.expect_tag("mean")?, d, "mean")?;
            let std = parse_floats(lines.expect_tag("std")?, d, "std")?;
            Some(Standardizer {
                mean: Array1::from_vec(mean),
                std: Array1::from_vec(std),
            })
        }
        other => {
            return Err(Error::ModelFormat(format!(
                "standardize must be 0 or 1, got \"{other}\""
            )));
        }
    };
    lines.expect_tag("w_x")?;
    let mut w_x = Vec::with_capacity(d * p);
    for i in 0..d {
        w_x.extend(parse_floats(
            lines.next_line()?,
            p,
            &format!("w_x row {i}"),
        )?);
    }
    lines.expect_tag("b_x")?;
    let b_x = parse_floats(lines.next_line()?, p, "b_x")?;
    lines.expect_tag("w_a")?;
    let mut w_a = Vec::with_capacity(p * m);
    for i in 0..p {
        w_a.extend(parse_floats(
            lines.next_line()?,
            m,
            &format!("w_a row {i}"),
        )?);
    }

    let model = Model::new(
        Array2::from_shape_vec((d, p), w_x).expect("checked length"),
        Array1::from_vec(b_x),
        Array2::from_shape_vec((p, m), w_a).expect("checked length"),
        tau,
    )?;
    match norm {
        Some(n) => model.with_standardizer(n),
        None => Ok(model),
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    read_model(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_dataset() -> Dataset {
        let mut splits = BTreeMap::new();
        splits.insert("train".to_string(), vec![0]);
        splits.insert("test".to_string(), vec![1]);
        Dataset {
            features: array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.5], [0.25, -1.0, 2.0]],
            attributes: array![[0.0, 1.0], [1.0, 0.5], [0.25, 0.75], [1.0, 1.0]],
            labels: Some(vec![0, 0, 1, 1]),
            splits,
        }
    }

    #[test]
    fn dataset_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        ds.save(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn load_rejects_out_of_range_attribute() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        ds.save(dir.path()).unwrap();
        fs::write(
            dir.path().join("attributes.csv"),
            "0.0,1.0\n1.0,0.5\n0.25,1.5\n1.0,1.0\n",
        )
        .unwrap();
        match Dataset::load(dir.path()) {
            Err(Error::ValueOutOfRange { file, row, value }) => {
                assert_eq!(file, "attributes.csv");
                assert_eq!(row, 2);
                assert_eq!(value, 1.5);
            }
            other => panic!("expected out-of-range error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        tiny_dataset().save(dir.path()).unwrap();
        fs::write(dir.path().join("features.csv"), "1,2,3\n4,5\n7,8,9\n1,1,1\n").unwrap();
        match Dataset::load(dir.path()) {
            Err(Error::RaggedRow {
                file,
                row,
                expected,
                actual,
            }) => {
                assert_eq!(file, "features.csv");
                assert_eq!((row, expected, actual), (1, 3, 2));
            }
            other => panic!("expected ragged-row error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_overlapping_splits() {
        let dir = tempfile::tempdir().unwrap();
        tiny_dataset().save(dir.path()).unwrap();
        fs::write(dir.path().join("splits.txt"), "train: 0,1\ntest: 1\n").unwrap();
        match Dataset::load(dir.path()) {
            Err(Error::SplitOverlap { class_id, .. }) => assert_eq!(class_id, 1),
            other => panic!("expected split-overlap error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        tiny_dataset().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("attributes.csv")).unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(Error::MissingFile { .. })
        ));
    }

    #[test]
    fn load_rejects_unsplit_class() {
        let dir = tempfile::tempdir().unwrap();
        tiny_dataset().save(dir.path()).unwrap();
        fs::write(dir.path().join("splits.txt"), "train: 0\n").unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(Error::UnsplitClass { class_id: 1 })
        ));
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec {
            n_classes: 4,
            samples_per_class: 3,
            p: 6,
            d: 10,
            attribute_density: 0.4,
            noise_sigma: 0.1,
            seed: 21,
        };
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert_eq!(a.feature_dim(), 10);
        assert_eq!(a.attribute_dim(), 6);
    }

    #[test]
    fn synth_identity_mixing_reproduces_signatures() {
        let spec = SynthSpec {
            n_classes: 3,
            samples_per_class: 2,
            p: 5,
            d: 5,
            attribute_density: 0.5,
            noise_sigma: 0.0,
            seed: 3,
        };
        let opts = SynthOptions {
            mixing: Some(Array2::eye(5)),
            ..SynthOptions::default()
        };
        let ds = synth_generate_opts(&spec, &opts).unwrap();
        assert_eq!(ds.features, ds.attributes);
    }

    #[test]
    fn synth_signatures_distinct_per_class() {
        let ds = reference_synth_a();
        let labels = ds.labels.as_ref().unwrap();
        let mut per_class: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            per_class
                .entry(l)
                .or_insert_with(|| ds.attributes.row(i).to_vec());
            // every image of a class shares the signature in synth-A
            assert_eq!(ds.attributes.row(i).to_vec(), per_class[&l]);
        }
        let signatures: Vec<&Vec<f64>> = per_class.values().collect();
        for i in 0..signatures.len() {
            for j in i + 1..signatures.len() {
                assert_ne!(signatures[i], signatures[j]);
            }
        }
        assert_eq!(ds.split_class_ids("train").unwrap().len(), 12);
        assert_eq!(ds.split_class_ids("test").unwrap().len(), 3);
    }

    #[test]
    fn model_round_trip_is_field_exact() {
        let model = Model::new(
            array![[0.1, -0.2], [1.0 / 3.0, 2.0e-17], [5.0, 6.0]],
            array![std::f64::consts::PI, -0.0],
            array![[1.0], [2.0f64.sqrt()]],
            0.123456789012345678,
        )
        .unwrap()
        .with_standardizer(Standardizer {
            mean: array![1.5, -2.5, 1.0e-300],
            std: array![2.0, 1.0, 3.0],
        })
        .unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model, &["config deadbeef"]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let loaded = read_model(&text).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn model_file_version_checked() {
        let err = read_model("attrmetric-model 999\n").unwrap_err();
        assert!(matches!(err, Error::ModelVersion { .. }));
        let err = read_model("something-else 1\n").unwrap_err();
        assert!(matches!(err, Error::ModelVersion { .. }));
    }

    #[test]
    fn model_file_tamper_detected() {
        let model = Model::new(
            Array2::eye(2),
            Array1::zeros(2),
            Array2::eye(2),
            1.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // drop the last w_a row: row count no longer matches p
        let truncated: Vec<&str> = text.lines().collect();
        let tampered = truncated[..truncated.len() - 1].join("\n");
        assert!(matches!(read_model(&tampered), Err(Error::ModelFormat(_))));
    }
}

//! Synthetic multimodal datasets with planted fusion structure, and a
//! file-based dataset format.
//!
//! A planted task draws every raw feature as independent Gaussian noise.
//! Labels depend only on two planted features: each is projected to the
//! teacher width, the pair is combined by the planted primitive op, pooled
//! over `L` and read out by a fixed random linear map. Label noise then
//! replaces a label with a different class at the given rate.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Graph;
use crate::error::{FusionError, Result};
use crate::feature_adapter::{prepare_feature, FeatureSpec, RawFeature};
use crate::network::{Labels, TaskMode};
use crate::ops::{apply_op, ConcatFcParams, GluParams, OpVars, PrimitiveOpKind};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTaskSpec {
    /// Feature inventory, grouped by modality in sequence order.
    pub features: Vec<FeatureSpec>,
    /// Indices into `features`.
    pub planted_pair: (usize, usize),
    pub planted_op: PrimitiveOpKind,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub label_noise: f64,
    #[serde(default)]
    pub mode: TaskMode,
    /// Input scale applied to each planted feature before the teacher's
    /// projection; unequal gains make one feature more informative alone.
    #[serde(default = "unit_gains")]
    pub planted_gains: (f64, f64),
    /// Width and length of the teacher's fused representation.
    pub teacher_channels: usize,
    pub teacher_length: usize,
    pub seed: u64,
}

fn unit_gains() -> (f64, f64) {
    (1.0, 1.0)
}

impl Default for PlantedTaskSpec {
    /// Two modalities of three features each; the planted pair is `A_2`
    /// (a vector feature) with `B_3`.
    fn default() -> Self {
        let features = vec![
            FeatureSpec::sequence("A", 0, 8, Some(4)),
            FeatureSpec::sequence("A", 1, 16, None),
            FeatureSpec::sequence("A", 2, 8, Some(4)),
            FeatureSpec::sequence("B", 0, 16, Some(4)),
            FeatureSpec::sequence("B", 1, 8, None),
            FeatureSpec::sequence("B", 2, 16, Some(4)),
        ];
        Self {
            features,
            planted_pair: (1, 5),
            planted_op: PrimitiveOpKind::ConcatFc,
            n_classes: 4,
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            label_noise: 0.05,
            mode: TaskMode::Multiclass,
            planted_gains: (0.5, 1.0),
            teacher_channels: 8,
            teacher_length: 4,
            seed: 0,
        }
    }
}

impl PlantedTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FusionError::Dataset(m));
        if self.features.len() < 2 {
            return bad("a planted task needs at least two features".into());
        }
        for f in &self.features {
            f.validate()?;
        }
        let (a, b) = self.planted_pair;
        if a == b || a >= self.features.len() || b >= self.features.len() {
            return bad(format!("planted pair ({a}, {b}) is not two distinct feature indices"));
        }
        if self.planted_op == PrimitiveOpKind::Zero {
            return bad("the planted op cannot be Zero".into());
        }
        if self.n_classes < 2 {
            return bad(format!("need at least two classes, got {}", self.n_classes));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("every split needs at least one sample".into());
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label noise {} is outside [0, 1)", self.label_noise));
        }
        let (ga, gb) = self.planted_gains;
        if !(ga.is_finite() && gb.is_finite() && ga > 0.0 && gb > 0.0) {
            return bad(format!("planted gains ({ga}, {gb}) must be positive"));
        }
        if self.teacher_channels == 0 || self.teacher_length == 0 {
            return bad("teacher width and length must be positive".into());
        }
        Ok(())
    }

    pub fn modalities(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for f in &self.features {
            if !out.contains(&f.modality) {
                out.push(f.modality.clone());
            }
        }
        out
    }

    /// Index of the last feature of every modality.
    pub fn last_features(&self) -> Vec<usize> {
        self.modalities()
            .iter()
            .map(|m| {
                self.features
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| &f.modality == m)
                    .max_by_key(|(_, f)| f.index)
                    .map(|(i, _)| i)
                    .expect("modality has a feature")
            })
            .collect()
    }
}

/// Raw batched features of one split plus their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    /// One batch-first tensor per feature, shaped `[N, ..spec.shape]`.
    pub features: Vec<Tensor<T>>,
    pub labels: Labels,
}

impl<T: Scalar> Split<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.iter().map(|t| t.select_rows(rows)).collect(),
            labels: self.labels.select(rows),
        }
    }

    /// Pooled and interpolated `(N, C_raw, L)` inputs for the adapters.
    pub fn prepare(&self, specs: &[FeatureSpec], target_l: usize) -> Result<PreparedSplit<T>> {
        let features = self
            .features
            .iter()
            .zip(specs)
            .map(|(t, spec)| {
                let raw = RawFeature {
                    modality: spec.modality.clone(),
                    index: spec.index,
                    tensor: t.clone(),
                    axis_roles: spec.full_roles(),
                };
                prepare_feature(&raw, target_l)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSplit {
            features,
            labels: self.labels.clone(),
        })
    }
}

/// Adapter-ready inputs of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSplit<T> {
    pub features: Vec<Tensor<T>>,
    pub labels: Labels,
}

impl<T: Scalar> PreparedSplit<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.iter().map(|t| t.select_rows(rows)).collect(),
            labels: self.labels.select(rows),
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        let features = self
            .features
            .iter()
            .zip(&other.features)
            .map(|(a, b)| Tensor::concat_rows(&[a, b]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features,
            labels: self.labels.concat(&other.labels)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Datasets<T> {
    pub features: Vec<FeatureSpec>,
    pub n_classes: usize,
    pub mode: TaskMode,
    pub train: Split<T>,
    pub val: Split<T>,
    pub test: Split<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDatasets<T> {
    pub features: Vec<FeatureSpec>,
    pub n_classes: usize,
    pub mode: TaskMode,
    pub train: PreparedSplit<T>,
    pub val: PreparedSplit<T>,
    pub test: PreparedSplit<T>,
}

impl<T: Scalar> PreparedDatasets<T> {
    pub fn raw_channels(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.channels().expect("validated feature")).collect()
    }
}

impl<T: Scalar> Datasets<T> {
    pub fn prepare(&self, target_l: usize) -> Result<PreparedDatasets<T>> {
        if self.train.is_empty() || self.val.is_empty() || self.test.is_empty() {
            return Err(FusionError::Dataset("every split needs at least one sample".into()));
        }
        Ok(PreparedDatasets {
            features: self.features.clone(),
            n_classes: self.n_classes,
            mode: self.mode,
            train: self.train.prepare(&self.features, target_l)?,
            val: self.val.prepare(&self.features, target_l)?,
            test: self.test.prepare(&self.features, target_l)?,
        })
    }
}

/// The hidden label function of a planted task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Teacher<T> {
    pub pair: (usize, usize),
    pub op: PrimitiveOpKind,
    pub length: usize,
    pub mode: TaskMode,
    pub proj_a: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub glu: GluParams<T>,
    pub concat_fc: ConcatFcParams<T>,
    pub readout_w: Tensor<T>,
    pub readout_b: Tensor<T>,
}

fn gaussian<T: Scalar, R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z * scale)
    })
}

impl<T: Scalar> Teacher<T> {
    /// Class logits from the raw planted features of a batch.
    pub fn logits(&self, specs: &[FeatureSpec], split: &Split<T>) -> Result<Tensor<T>> {
        let prepared = |i: usize| {
            let raw = RawFeature {
                modality: specs[i].modality.clone(),
                index: specs[i].index,
                tensor: split.features[i].clone(),
                axis_roles: specs[i].full_roles(),
            };
            prepare_feature(&raw, self.length)
        };
        let a = prepared(self.pair.0)?;
        let b = prepared(self.pair.1)?;
        self.logits_prepared(a, b)
    }

    fn logits_prepared(&self, a: Tensor<T>, b: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let a = g.constant(a);
        let b = g.constant(b);
        let pa = g.constant(self.proj_a.clone());
        let pb = g.constant(self.proj_b.clone());
        let x = g.channel_linear(a, pa)?;
        let y = g.channel_linear(b, pb)?;
        let vars = OpVars {
            glu: Some((g.constant(self.glu.w1.clone()), g.constant(self.glu.w2.clone()))),
            concat_fc: Some((g.constant(self.concat_fc.w.clone()), g.constant(self.concat_fc.b.clone()))),
        };
        let fused = apply_op(&mut g, self.op, x, y, &vars)?;
        let pooled = g.mean_length(fused)?;
        let w = g.constant(self.readout_w.clone());
        let bias = g.constant(self.readout_b.clone());
        let out = g.linear(pooled, w, bias)?;
        Ok(g.value(out).clone())
    }

    /// Noise-free labels.
    pub fn predict(&self, specs: &[FeatureSpec], split: &Split<T>) -> Result<Labels> {
        let logits = self.logits(specs, split)?;
        Ok(match self.mode {
            TaskMode::Multiclass => Labels::Multiclass(crate::metrics::predict_classes(&logits)?),
            TaskMode::Multilabel => Labels::Multilabel(crate::metrics::predict_multilabel(&logits)?),
        })
    }
}

/// A generated task: the datasets and the teacher that labelled them.
#[derive(Clone, Debug)]
pub struct PlantedTask<T> {
    pub spec: PlantedTaskSpec,
    pub datasets: Datasets<T>,
    pub teacher: Teacher<T>,
}

const CALIBRATION_SAMPLES: usize = 4096;

fn sample_features<T: Scalar, R: Rng + ?Sized>(specs: &[FeatureSpec], n: usize, rng: &mut R) -> Vec<Tensor<T>> {
    specs.iter().map(|s| gaussian(&s.full_shape(n), 1.0, rng)).collect()
}

/// Shifts the readout bias so that classes are roughly balanced
/// (multiclass) or each label fires on about half the samples (multilabel).
fn calibrate_bias<T: Scalar>(logits: &Tensor<T>, mode: TaskMode, k: usize) -> Vec<f64> {
    let n = logits.shape()[0];
    let z: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    match mode {
        TaskMode::Multilabel => (0..k)
            .map(|c| {
                let mut col: Vec<f64> = (0..n).map(|i| z[i * k + c]).collect();
                col.sort_by(f64::total_cmp);
                -col[n / 2]
            })
            .collect(),
        TaskMode::Multiclass => {
            let spread = (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt().max(1e-6);
            let mut bias = vec![0.0; k];
            let target = 1.0 / k as f64;
            for it in 0..400 {
                let mut counts = vec![0usize; k];
                for i in 0..n {
                    let row = &z[i * k..(i + 1) * k];
                    let best = (0..k)
                        .max_by(|&a, &b| (row[a] + bias[a]).total_cmp(&(row[b] + bias[b])).then(b.cmp(&a)))
                        .expect("k > 0");
                    counts[best] += 1;
                }
                let step = spread * 0.5 / (1.0 + it as f64 / 50.0);
                for c in 0..k {
                    bias[c] += step * (target - counts[c] as f64 / n as f64);
                }
            }
            bias
        }
    }
}

fn corrupt<R: Rng + ?Sized>(labels: Labels, n_classes: usize, rate: f64, rng: &mut R) -> Labels {
    match labels {
        Labels::Multiclass(v) => Labels::Multiclass(
            v.into_iter()
                .map(|y| {
                    if rng.random::<f64>() < rate {
                        let other = rng.random_range(0..n_classes - 1);
                        if other >= y {
                            other + 1
                        } else {
                            other
                        }
                    } else {
                        y
                    }
                })
                .collect(),
        ),
        Labels::Multilabel(v) => Labels::Multilabel(
            v.into_iter()
                .map(|row| row.into_iter().map(|b| if rng.random::<f64>() < rate { !b } else { b }).collect())
                .collect(),
        ),
    }
}

/// Generates a planted task. Equal specs give bit-identical output.
pub fn generate<T: Scalar>(spec: &PlantedTaskSpec) -> Result<PlantedTask<T>> {
    spec.validate()?;
    let ct = spec.teacher_channels;
    let k = spec.n_classes;
    let (ia, ib) = spec.planted_pair;
    let ca = spec.features[ia].channels()?;
    let cb = spec.features[ib].channels()?;

    let mut teacher_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    teacher_rng.set_stream(1);
    let mut teacher = Teacher {
        pair: spec.planted_pair,
        op: spec.planted_op,
        length: spec.teacher_length,
        mode: spec.mode,
        proj_a: gaussian(&[ca, ct], spec.planted_gains.0 / (ca as f64).sqrt(), &mut teacher_rng),
        proj_b: gaussian(&[cb, ct], spec.planted_gains.1 / (cb as f64).sqrt(), &mut teacher_rng),
        glu: GluParams {
            w1: gaussian(&[ct, ct], 1.0 / (ct as f64).sqrt(), &mut teacher_rng),
            w2: gaussian(&[ct, ct], 1.0 / (ct as f64).sqrt(), &mut teacher_rng),
        },
        concat_fc: ConcatFcParams {
            w: gaussian(&[2 * ct, ct], 1.0 / ((2 * ct) as f64).sqrt(), &mut teacher_rng),
            b: Tensor::zeros(&[ct]),
        },
        readout_w: gaussian(&[ct, k], 1.0, &mut teacher_rng),
        readout_b: Tensor::zeros(&[k]),
    };

    let mut calib_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    calib_rng.set_stream(2);
    let calib = Split {
        features: sample_features(&spec.features, CALIBRATION_SAMPLES, &mut calib_rng),
        labels: Labels::Multiclass(vec![0; CALIBRATION_SAMPLES]),
    };
    let calib_logits = teacher.logits(&spec.features, &calib)?;
    let bias = calibrate_bias(&calib_logits, spec.mode, k);
    teacher.readout_b = Tensor::vector(bias.into_iter().map(T::of).collect());

    let mut data_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    data_rng.set_stream(3);
    let mut make_split = |n: usize| -> Result<Split<T>> {
        let features = sample_features(&spec.features, n, &mut data_rng);
        let mut split = Split {
            features,
            labels: Labels::Multiclass(Vec::new()),
        };
        let clean = teacher.predict(&spec.features, &split)?;
        split.labels = corrupt(clean, k, spec.label_noise, &mut data_rng);
        Ok(split)
    };
    let train = make_split(spec.n_train)?;
    let val = make_split(spec.n_val)?;
    let test = make_split(spec.n_test)?;
    Ok(PlantedTask {
        spec: spec.clone(),
        datasets: Datasets {
            features: spec.features.clone(),
            n_classes: k,
            mode: spec.mode,
            train,
            val,
            test,
        },
        teacher,
    })
}

/// Returns a copy of `split` with the rows of one feature permuted.
pub fn permute_feature<T: Scalar, R: Rng + ?Sized>(split: &Split<T>, feature: usize, rng: &mut R) -> Split<T> {
    let mut rows: Vec<usize> = (0..split.len()).collect();
    rows.shuffle(rng);
    let mut out = split.clone();
    out.features[feature] = split.features[feature].select_rows(&rows);
    out
}

// ---- binary feature files ----

const MAGIC: &[u8; 4] = b"FNSA";

/// Encodes one array: magic, dtype code, rank, `u32` LE dims, LE data.
pub fn encode_array<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + t.len() * T::DTYPE.width());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        match T::DTYPE {
            DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
    out
}

/// Decodes an array written by [`encode_array`], converting to `T`.
pub fn decode_array<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |m: &str| FusionError::Dataset(format!("malformed array file: {m}"));
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let dtype = DType::from_code(bytes[4]).ok_or_else(|| bad("unknown dtype"))?;
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let n: usize = shape.iter().product();
    let body = &bytes[header..];
    if body.len() != n * dtype.width() {
        return Err(bad("payload length does not match shape"));
    }
    let data = match dtype {
        DType::F32 => body
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        DType::F64 => body
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
    };
    Tensor::new(shape, data)
}

// ---- manifest ----

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleLabel {
    Class(usize),
    Multi(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub split: SplitName,
    pub label: SampleLabel,
    /// One file per feature, in inventory order.
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub n_classes: usize,
    pub mode: TaskMode,
    pub features: Vec<FeatureSpec>,
    pub samples: Vec<SampleEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every sample of `data` as per-feature array files under `dir`
/// plus `manifest.json`; returns the manifest path.
pub fn export_manifest<T: Scalar>(data: &Datasets<T>, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e))?;
    let mut samples = Vec::new();
    for (name, split) in [(SplitName::Train, &data.train), (SplitName::Val, &data.val), (SplitName::Test, &data.test)] {
        let tag = serde_json::to_value(name)?.as_str().expect("string tag").to_string();
        for row in 0..split.len() {
            let sample_dir = format!("{tag}/{row:06}");
            fs::create_dir_all(dir.join(&sample_dir)).map_err(|e| FusionError::io(dir.join(&sample_dir), e))?;
            let mut files = Vec::with_capacity(data.features.len());
            for (t, spec) in split.features.iter().zip(&data.features) {
                let one = t.select_rows(&[row]).reshape(&spec.shape)?;
                let bytes = encode_array(&one);
                let rel = format!("{sample_dir}/{}.bin", spec.label());
                let path = dir.join(&rel);
                fs::write(&path, &bytes).map_err(|e| FusionError::io(&path, e))?;
                files.push(FileEntry {
                    path: rel,
                    sha256: sha256_hex(&bytes),
                });
            }
            let label = match &split.labels {
                Labels::Multiclass(v) => SampleLabel::Class(v[row]),
                Labels::Multilabel(v) => SampleLabel::Multi(v[row].clone()),
            };
            samples.push(SampleEntry { split: name, label, files });
        }
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        n_classes: data.n_classes,
        mode: data.mode,
        features: data.features.clone(),
        samples,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| FusionError::io(&path, e))?;
    Ok(path)
}

type SplitParts<T> = (Vec<Vec<Tensor<T>>>, Vec<SampleLabel>);

/// Loads a manifest-described dataset, verifying checksums and shapes.
pub fn load_external<T: Scalar>(manifest_path: &Path) -> Result<Datasets<T>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| FusionError::io(manifest_path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let manifest: Manifest = serde_path_to_error::deserialize(de)
        .map_err(|e| FusionError::Dataset(format!("manifest field `{}`: {}", e.path(), e.inner())))?;
    if manifest.manifest_version != MANIFEST_VERSION {
        return Err(FusionError::Dataset(format!(
            "unsupported manifest version {}",
            manifest.manifest_version
        )));
    }
    for f in &manifest.features {
        f.validate()?;
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let nf = manifest.features.len();
    let mut parts: [SplitParts<T>; 3] = Default::default();
    for (s, sample) in manifest.samples.iter().enumerate() {
        if sample.files.len() != nf {
            return Err(FusionError::Dataset(format!(
                "sample {s} lists {} files for {nf} features",
                sample.files.len()
            )));
        }
        let slot = match sample.split {
            SplitName::Train => 0,
            SplitName::Val => 1,
            SplitName::Test => 2,
        };
        let mut row = Vec::with_capacity(nf);
        for (entry, spec) in sample.files.iter().zip(&manifest.features) {
            let path = root.join(&entry.path);
            let bytes = fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => FusionError::Dataset(format!("missing feature file {}", path.display())),
                _ => FusionError::io(&path, e),
            })?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(FusionError::Dataset(format!("checksum mismatch for {}", path.display())));
            }
            let t: Tensor<T> = decode_array(&bytes)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(FusionError::Dataset(format!(
                    "{} has shape {:?}, expected {:?} for {}",
                    path.display(),
                    t.shape(),
                    spec.shape,
                    spec.label()
                )));
            }
            row.push(t);
        }
        match (&sample.label, manifest.mode) {
            (SampleLabel::Class(c), TaskMode::Multiclass) if *c < manifest.n_classes => {}
            (SampleLabel::Multi(v), TaskMode::Multilabel) if v.len() == manifest.n_classes => {}
            _ => {
                return Err(FusionError::Dataset(format!(
                    "sample {s} has a label inconsistent with the task mode or class count"
                )))
            }
        }
        parts[slot].0.push(row);
        parts[slot].1.push(sample.label.clone());
    }
    let build = |rows: &Vec<Vec<Tensor<T>>>, labels: &Vec<SampleLabel>| -> Result<Split<T>> {
        let mut features = Vec::with_capacity(nf);
        for (i, spec) in manifest.features.iter().enumerate() {
            let mut data = Vec::new();
            for r in rows {
                data.extend_from_slice(r[i].data());
            }
            features.push(Tensor::new(spec.full_shape(rows.len()), data)?);
        }
        let labels = match manifest.mode {
            TaskMode::Multiclass => Labels::Multiclass(
                labels
                    .iter()
                    .map(|l| match l {
                        SampleLabel::Class(c) => *c,
                        SampleLabel::Multi(_) => unreachable!("checked above"),
                    })
                    .collect(),
            ),
            TaskMode::Multilabel => Labels::Multilabel(
                labels
                    .iter()
                    .map(|l| match l {
                        SampleLabel::Multi(v) => v.clone(),
                        SampleLabel::Class(_) => unreachable!("checked above"),
                    })
                    .collect(),
            ),
        };
        Ok(Split { features, labels })
    };
    Ok(Datasets {
        features: manifest.features.clone(),
        n_classes: manifest.n_classes,
        mode: manifest.mode,
        train: build(&parts[0].0, &parts[0].1)?,
        val: build(&parts[1].0, &parts[1].1)?,
        test: build(&parts[2].0, &parts[2].1)?,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, noise: f64) -> PlantedTaskSpec {
        PlantedTaskSpec {
            n_train: 200,
            n_val: 100,
            n_test: 100,
            label_noise: noise,
            seed,
            ..PlantedTaskSpec::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate::<f64>(&small(3, 0.05)).unwrap();
        let b = generate::<f64>(&small(3, 0.05)).unwrap();
        let c = generate::<f64>(&small(4, 0.05)).unwrap();
        assert_eq!(a.datasets, b.datasets);
        assert_ne!(a.datasets.train.features[0], c.datasets.train.features[0]);
    }

    #[test]
    fn noise_free_teacher_is_exact() {
        let t = generate::<f64>(&small(1, 0.0)).unwrap();
        let d = &t.datasets;
        assert_eq!(t.teacher.predict(&d.features, &d.val).unwrap(), d.val.labels);
    }

    #[test]
    fn classes_are_roughly_balanced() {
        let t = generate::<f64>(&PlantedTaskSpec { n_train: 2000, ..small(2, 0.0) }).unwrap();
        let Labels::Multiclass(y) = &t.datasets.train.labels else { panic!() };
        for c in 0..4 {
            let frac = y.iter().filter(|&&v| v == c).count() as f64 / y.len() as f64;
            assert!((0.15..0.35).contains(&frac), "class {c}: {frac}");
        }
    }

    #[test]
    fn non_planted_features_do_not_matter() {
        let t = generate::<f64>(&small(5, 0.0)).unwrap();
        let d = &t.datasets;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shuffled = permute_feature(&d.val, 0, &mut rng);
        assert_eq!(t.teacher.predict(&d.features, &shuffled).unwrap(), d.val.labels);
    }

    #[test]
    fn array_codec_round_trip() {
        let t = Tensor::from_f64(&[2, 3], &[1.0, -2.5, 3.25, 0.0, 1e-7, 9.0]).unwrap();
        assert_eq!(decode_array::<f64>(&encode_array(&t)).unwrap(), t);
        let f: Tensor<f32> = t.cast();
        assert_eq!(decode_array::<f32>(&encode_array(&f)).unwrap(), f);
        assert!(decode_array::<f64>(b"nope").is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(generate::<f64>(&PlantedTaskSpec { n_classes: 0, ..small(0, 0.0) }).is_err());
        assert!(generate::<f64>(&PlantedTaskSpec { n_val: 0, ..small(0, 0.0) }).is_err());
        assert!(generate::<f64>(&PlantedTaskSpec { planted_pair: (2, 2), ..small(0, 0.0) }).is_err());
    }

    #[test]
    fn last_features() {
        assert_eq!(PlantedTaskSpec::default().last_features(), vec![2, 5]);
    }
}

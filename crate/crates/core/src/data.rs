//! Dataset ingestion, synthetic generators, augmentation views and splits.
//!
//! Inputs are always stored flat as an `n x D` tensor; `sample_shape` records
//! the per-sample layout (`[D]` for vectors, `[C, H, W]` for images).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{rng_for, rng_from, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Vector,
    Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub sample_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub name: String,
    pub n_classes: usize,
    pub kind: DataKind,
}

impl Dataset {
    pub fn new(
        inputs: Tensor,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        name: impl Into<String>,
        n_classes: usize,
        kind: DataKind,
    ) -> Result<Self> {
        let d = Dataset {
            inputs,
            sample_shape,
            labels,
            name: name.into(),
            n_classes,
            kind,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::invalid(format!("dataset {:?} is empty", self.name)));
        }
        let dim: usize = self.sample_shape.iter().product();
        if self.inputs.shape() != [n, dim] {
            return Err(Error::shape(
                "dataset",
                format!("inputs {:?} for {n} samples of shape {:?}", self.inputs.shape(), self.sample_shape),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", self.n_classes)));
        }
        if self.kind == DataKind::Image && self.inputs.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image pixels must lie in [0, 1]"));
        }
        if self.kind == DataKind::Image && self.sample_shape.len() != 3 {
            return Err(Error::invalid("image samples need a [C, H, W] shape"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            sample_shape: self.sample_shape.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            name: self.name.clone(),
            n_classes: self.n_classes,
            kind: self.kind,
        }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Hex SHA-256 over shape, inputs and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for &s in &self.sample_shape {
            h.update((s as u64).to_le_bytes());
        }
        h.update((self.n_classes as u64).to_le_bytes());
        for v in self.inputs.data() {
            h.update(v.to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Default clamp box for attacks on this data.
    pub fn clamp_range(&self) -> Option<(f64, f64)> {
        match self.kind {
            DataKind::Image => Some((0.0, 1.0)),
            DataKind::Vector => None,
        }
    }
}

/// A minibatch with its optional views, labels and adversarial counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    pub x: Tensor,
    pub x_prime: Option<Tensor>,
    pub x_double_prime: Option<Tensor>,
    pub y: Option<Vec<usize>>,
    pub x_adv: Option<Tensor>,
}

impl ViewBatch {
    pub fn new(x: Tensor, y: Option<Vec<usize>>) -> Self {
        ViewBatch {
            x,
            x_prime: None,
            x_double_prime: None,
            y,
            x_adv: None,
        }
    }

    pub fn from_dataset(data: &Dataset, idx: &[usize]) -> Self {
        ViewBatch::new(data.inputs.select_rows(idx), Some(idx.iter().map(|&i| data.labels[i]).collect()))
    }

    pub fn with_views(mut self, a: Tensor, b: Tensor) -> Self {
        self.x_prime = Some(a);
        self.x_double_prime = Some(b);
        self
    }

    pub fn with_adv(mut self, adv: Tensor) -> Self {
        self.x_adv = Some(adv);
        self
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn views(&self) -> Result<(&Tensor, &Tensor)> {
        match (&self.x_prime, &self.x_double_prime) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Missing("augmented views x' and x''")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let tensors = [&self.x_prime, &self.x_double_prime, &self.x_adv];
        for t in tensors.into_iter().flatten() {
            if t.shape() != self.x.shape() {
                return Err(Error::shape("view_batch", format!("{:?} vs x {:?}", t.shape(), self.x.shape())));
            }
        }
        if let Some(y) = &self.y {
            if y.len() != n {
                return Err(Error::shape("view_batch", format!("{} labels for {n} rows", y.len())));
            }
        }
        Ok(())
    }
}

/// Augmentation strengths. Every component is disabled at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentSpec {
    Vector {
        gaussian_noise_sigma: f64,
        feature_dropout_prob: f64,
    },
    Image {
        crop_shift_max_pixels: usize,
        horizontal_flip_prob: f64,
        gaussian_noise_sigma: f64,
        erase_patch_prob: f64,
    },
}

impl AugmentSpec {
    pub fn default_for(kind: DataKind) -> Self {
        match kind {
            DataKind::Vector => AugmentSpec::Vector {
                gaussian_noise_sigma: 0.5,
                feature_dropout_prob: 0.1,
            },
            DataKind::Image => AugmentSpec::Image {
                crop_shift_max_pixels: 2,
                horizontal_flip_prob: 0.0,
                gaussian_noise_sigma: 0.05,
                erase_patch_prob: 0.25,
            },
        }
    }

    pub fn identity(kind: DataKind) -> Self {
        match kind {
            DataKind::Vector => AugmentSpec::Vector {
                gaussian_noise_sigma: 0.0,
                feature_dropout_prob: 0.0,
            },
            DataKind::Image => AugmentSpec::Image {
                crop_shift_max_pixels: 0,
                horizontal_flip_prob: 0.0,
                gaussian_noise_sigma: 0.0,
                erase_patch_prob: 0.0,
            },
        }
    }

    pub fn kind(&self) -> DataKind {
        match self {
            AugmentSpec::Vector { .. } => DataKind::Vector,
            AugmentSpec::Image { .. } => DataKind::Image,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (probs, sigma) = match *self {
            AugmentSpec::Vector {
                gaussian_noise_sigma,
                feature_dropout_prob,
            } => (vec![feature_dropout_prob], gaussian_noise_sigma),
            AugmentSpec::Image {
                horizontal_flip_prob,
                gaussian_noise_sigma,
                erase_patch_prob,
                ..
            } => (vec![horizontal_flip_prob, erase_patch_prob], gaussian_noise_sigma),
        };
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("augmentation probabilities must lie in [0, 1]"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("augmentation noise sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

fn augment_once(x: &Tensor, sample_shape: &[usize], spec: &AugmentSpec, rng: &mut Rng) -> Tensor {
    let d = x.cols();
    let mut out = x.data().to_vec();
    match *spec {
        AugmentSpec::Vector {
            gaussian_noise_sigma,
            feature_dropout_prob,
        } => {
            for v in out.iter_mut() {
                if feature_dropout_prob > 0.0 && rng.random::<f64>() < feature_dropout_prob {
                    *v = 0.0;
                }
                if gaussian_noise_sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += gaussian_noise_sigma * z;
                }
            }
        }
        AugmentSpec::Image {
            crop_shift_max_pixels,
            horizontal_flip_prob,
            gaussian_noise_sigma,
            erase_patch_prob,
        } => {
            let (c, h, w) = (sample_shape[0], sample_shape[1], sample_shape[2]);
            let m = crop_shift_max_pixels as i64;
            for sample in out.chunks_mut(d) {
                if m > 0 {
                    let dy = rng.random_range(-m..=m);
                    let dx = rng.random_range(-m..=m);
                    shift(sample, c, h, w, dy, dx);
                }
                if horizontal_flip_prob > 0.0 && rng.random::<f64>() < horizontal_flip_prob {
                    for plane in sample.chunks_mut(h * w) {
                        for row in plane.chunks_mut(w) {
                            row.reverse();
                        }
                    }
                }
                if erase_patch_prob > 0.0 && rng.random::<f64>() < erase_patch_prob {
                    let (ph, pw) = ((h / 4).max(1), (w / 4).max(1));
                    let y0 = rng.random_range(0..=h - ph);
                    let x0 = rng.random_range(0..=w - pw);
                    for ch in 0..c {
                        for yy in y0..y0 + ph {
                            let base = ch * h * w + yy * w;
                            sample[base + x0..base + x0 + pw].fill(0.0);
                        }
                    }
                }
                if gaussian_noise_sigma > 0.0 {
                    for v in sample.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = (*v + gaussian_noise_sigma * z).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Translates each channel by `(dy, dx)` with zero fill.
fn shift(sample: &mut [f64], c: usize, h: usize, w: usize, dy: i64, dx: i64) {
    if dy == 0 && dx == 0 {
        return;
    }
    let src = sample.to_vec();
    for ch in 0..c {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sy, sx) = (y - dy, x - dx);
                let v = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                    src[ch * h * w + sy as usize * w + sx as usize]
                } else {
                    0.0
                };
                sample[ch * h * w + y as usize * w + x as usize] = v;
            }
        }
    }
}

/// Two independent augmentation draws of the batch `x` (rows aligned with
/// `x`).
pub fn make_views(x: &Tensor, sample_shape: &[usize], spec: &AugmentSpec, seed: u64) -> Result<(Tensor, Tensor)> {
    spec.validate()?;
    let dim: usize = sample_shape.iter().product();
    if x.shape().len() != 2 || x.cols() != dim {
        return Err(Error::shape("make_views", format!("{:?} for samples {sample_shape:?}", x.shape())));
    }
    match (spec, sample_shape.len()) {
        (AugmentSpec::Vector { .. }, 1) | (AugmentSpec::Image { .. }, 3) => {}
        _ => {
            return Err(Error::invalid(format!(
                "{:?} augmentation does not apply to samples of shape {sample_shape:?}",
                spec.kind()
            )))
        }
    }
    let mut rng = rng_from(seed);
    let a = augment_once(x, sample_shape, spec, &mut rng);
    let b = augment_once(x, sample_shape, spec, &mut rng);
    Ok((a, b))
}

/// Shuffled minibatch index lists covering `0..n`.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated(format!("{}: header ends at byte {}", path.display(), bytes.len())))
}

/// Reads an IDX image file and its label file, scaling pixels by 1/255.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = read_file(ip)?;
    let lb = read_file(lp)?;
    let im = be_u32(&ib, 0, ip)?;
    if im != 0x803 {
        return Err(Error::BadMagic {
            path: ip.to_path_buf(),
            found: im,
            expected: 0x803,
        });
    }
    let lm = be_u32(&lb, 0, lp)?;
    if lm != 0x801 {
        return Err(Error::BadMagic {
            path: lp.to_path_buf(),
            found: lm,
            expected: 0x801,
        });
    }
    let n = be_u32(&ib, 4, ip)? as usize;
    let h = be_u32(&ib, 8, ip)? as usize;
    let w = be_u32(&ib, 12, ip)? as usize;
    let nl = be_u32(&lb, 4, lp)? as usize;
    if n != nl {
        return Err(Error::CountMismatch(format!(
            "{} holds {n} images but {} holds {nl} labels",
            ip.display(),
            lp.display()
        )));
    }
    let pixels = &ib[16..];
    if pixels.len() != n * h * w {
        return Err(Error::Truncated(format!(
            "{}: expected {} pixel bytes, found {}",
            ip.display(),
            n * h * w,
            pixels.len()
        )));
    }
    let raw_labels = &lb[8..];
    if raw_labels.len() != n {
        return Err(Error::Truncated(format!(
            "{}: expected {n} label bytes, found {}",
            lp.display(),
            raw_labels.len()
        )));
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&b| usize::from(b)).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let name = ip.file_name().map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(Tensor::new(vec![n, h * w], data)?, vec![1, h, w], labels, name, n_classes, DataKind::Image)
}

/// Writes a single-channel image dataset as IDX files. Pixels are rounded
/// to the nearest of the 256 levels.
pub fn save_idx(data: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    if data.kind != DataKind::Image || data.sample_shape[0] != 1 {
        return Err(Error::invalid("IDX export needs single-channel image data"));
    }
    if data.n_classes > 256 {
        return Err(Error::invalid("IDX labels are single bytes"));
    }
    let (h, w) = (data.sample_shape[1], data.sample_shape[2]);
    let mut ib = Vec::with_capacity(16 + data.inputs.len());
    for v in [0x803u32, data.len() as u32, h as u32, w as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend(data.inputs.data().iter().map(|&p| (p * 255.0).round() as u8));
    let mut lb = Vec::with_capacity(8 + data.len());
    for v in [0x801u32, data.len() as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    lb.extend(data.labels.iter().map(|&y| y as u8));
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    fs::write(ip, ib).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lb).map_err(|e| Error::io(lp, e))
}

/// Reads a `label,f0,f1,...` CSV of vector samples.
pub fn load_csv(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::Parse(format!("{}:1: header must start with label,f0", path.display())));
    }
    let dim = cols.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse(format!(
                "{}:{}: expected {} fields, found {}",
                path.display(),
                ln + 1,
                dim + 1,
                fields.len()
            )));
        }
        let y: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{}:{}: bad label {:?}", path.display(), ln + 1, fields[0])))?;
        labels.push(y);
        for f in &fields[1..] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{}:{}: bad value {f:?}", path.display(), ln + 1)))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("{}:{}: non-finite value {f:?}", path.display(), ln + 1)));
            }
            data.push(v);
        }
    }
    let n = labels.len();
    let c = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1).max(2));
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(Tensor::new(vec![n, dim], data)?, vec![dim], labels, name, c, DataKind::Vector)
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = data.input_dim();
    let mut s = String::from("label");
    for j in 0..d {
        let _ = write!(s, ",f{j}");
    }
    s.push('\n');
    for i in 0..data.len() {
        let _ = write!(s, "{}", data.labels[i]);
        for v in data.inputs.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    TwoGaussians,
    Rings,
    BlobsK,
}

/// Deterministic synthetic vector data with round-robin labels.
///
/// * `two_gaussians`: unit-variance clouds centred at `±(separation/2)·e1`.
/// * `rings`: class `k` lies near radius `(k+1)·separation/2` in the first
///   two coordinates; the remaining coordinates are unit noise.
/// * `blobs_k`: unit-variance clouds around random centres at distance
///   `separation` from the origin.
pub fn gen_synthetic(
    kind: SyntheticKind,
    n: usize,
    dim: usize,
    n_classes: usize,
    seed: u64,
    separation: f64,
) -> Result<Dataset> {
    if n_classes < 2 || n < n_classes || dim == 0 {
        return Err(Error::invalid(format!(
            "synthetic data needs n >= C >= 2 and dim >= 1 (n={n}, C={n_classes}, dim={dim})"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation must be positive"));
    }
    let mut rng = rng_for(seed, "synthetic", 0);
    let labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let mut data = vec![0.0; n * dim];
    let normal = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };
    let name = match kind {
        SyntheticKind::TwoGaussians => {
            if n_classes != 2 {
                return Err(Error::invalid("two_gaussians has exactly 2 classes"));
            }
            for (i, &y) in labels.iter().enumerate() {
                let row = &mut data[i * dim..(i + 1) * dim];
                for v in row.iter_mut() {
                    *v = normal(&mut rng);
                }
                row[0] += if y == 0 { -separation / 2.0 } else { separation / 2.0 };
            }
            "two_gaussians"
        }
        SyntheticKind::Rings => {
            if dim < 2 {
                return Err(Error::invalid("rings need dim >= 2"));
            }
            for (i, &y) in labels.iter().enumerate() {
                let row = &mut data[i * dim..(i + 1) * dim];
                let r = (y + 1) as f64 * separation / 2.0;
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                row[0] = r * t.cos() + 0.1 * normal(&mut rng);
                row[1] = r * t.sin() + 0.1 * normal(&mut rng);
                for v in row[2..].iter_mut() {
                    *v = normal(&mut rng);
                }
            }
            "rings"
        }
        SyntheticKind::BlobsK => {
            let centres: Vec<Vec<f64>> = (0..n_classes)
                .map(|_| {
                    let u: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    u.iter().map(|v| v / norm * separation).collect()
                })
                .collect();
            for (i, &y) in labels.iter().enumerate() {
                for j in 0..dim {
                    data[i * dim + j] = centres[y][j] + normal(&mut rng);
                }
            }
            "blobs_k"
        }
    };
    Dataset::new(Tensor::new(vec![n, dim], data)?, vec![dim], labels, name, n_classes, DataKind::Vector)
}

/// Label-stratified split into `fractions.len()` disjoint parts. Each
/// class is divided by largest remainder, so per-class part sizes are within
/// one sample of the exact proportion.
pub fn stratified_split(data: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Error::invalid("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, expected 1")));
    }
    let k = fractions.len();
    let mut rng = rng_for(seed, "split", 0);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in 0..data.n_classes {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {class} has {} samples, fewer than the {k} splits",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut left = n - sizes.iter().sum::<usize>();
        for &j in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[j] += 1;
            left -= 1;
        }
        let mut start = 0;
        for (j, &s) in sizes.iter().enumerate() {
            parts[j].extend_from_slice(&members[start..start + s]);
            start += s;
        }
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(j, mut idx)| {
            if idx.is_empty() {
                return Err(Error::invalid(format!("split part {j} would be empty")));
            }
            idx.sort_unstable();
            let mut d = data.subset(&idx);
            d.name = format!("{}[{j}]", data.name);
            Ok(d)
        })
        .collect()
}

/// Three-way split into (D_p, D_f, test).
pub fn split(data: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let mut parts = stratified_split(data, &fractions, seed)?.into_iter();
    let (a, b, c) = (parts.next(), parts.next(), parts.next());
    Ok((a.expect("three parts"), b.expect("three parts"), c.expect("three parts")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_round_robin_counts() {
        let d = gen_synthetic(SyntheticKind::BlobsK, 1000, 5, 10, 3, 4.0).unwrap();
        assert_eq!(d.class_counts(), vec![100; 10]);
    }

    #[test]
    fn two_gaussian_means() {
        let d = gen_synthetic(SyntheticKind::TwoGaussians, 4000, 3, 2, 1, 8.0).unwrap();
        let mut sums = [0.0f64; 2];
        for i in 0..d.len() {
            sums[d.labels[i]] += d.inputs.at(i, 0);
        }
        assert!((sums[0] / 2000.0 + 4.0).abs() < 0.1);
        assert!((sums[1] / 2000.0 - 4.0).abs() < 0.1);
        assert_eq!(d, gen_synthetic(SyntheticKind::TwoGaussians, 4000, 3, 2, 1, 8.0).unwrap());
    }

    #[test]
    fn synthetic_rejects_bad_counts() {
        assert!(gen_synthetic(SyntheticKind::BlobsK, 3, 2, 4, 0, 1.0).is_err());
        assert!(gen_synthetic(SyntheticKind::TwoGaussians, 10, 2, 2, 0, 0.0).is_err());
    }

    #[test]
    fn identity_views() {
        let d = gen_synthetic(SyntheticKind::TwoGaussians, 10, 4, 2, 0, 2.0).unwrap();
        let (a, b) = make_views(&d.inputs, &d.sample_shape, &AugmentSpec::identity(DataKind::Vector), 5).unwrap();
        assert!(a.bitwise_eq(&d.inputs) && b.bitwise_eq(&d.inputs));
        let img = AugmentSpec::identity(DataKind::Image);
        assert!(make_views(&d.inputs, &d.sample_shape, &img, 5).is_err());
    }

    #[test]
    fn shift_moves_pixels() {
        let mut s = vec![1.0, 2.0, 3.0, 4.0];
        shift(&mut s, 1, 2, 2, 0, 1);
        assert_eq!(s, vec![0.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn split_sizes() {
        let d = gen_synthetic(SyntheticKind::BlobsK, 1000, 2, 10, 0, 3.0).unwrap();
        let (a, b, c) = split(&d, [0.8, 0.1, 0.1], 4).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (800, 100, 100));
        assert!(split(&d, [0.5, 0.4, 0.2], 4).is_err());
    }
}

//! Base encoder, projection head and linear classifier.
//!
//! Parameters live in a [`ModelBundle`] as plain tensors. A forward pass binds
//! them onto a [`Tape`] through [`ModelBundle::bind`], choosing per part
//! whether the parameters are trainable (tracked), frozen (constants) or
//! absent. Batches are always `n x input_dim` matrices; the convolutional
//! encoder reshapes internally.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Dense,
    ConvSmall,
}

/// Encoder architecture. `layer_widths` holds hidden widths for `dense`, and
/// `[conv1_channels, conv2_channels, dense_width]` for `conv_small`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layer_widths: Vec<usize>,
    pub input_shape: Vec<usize>,
}

impl EncoderConfig {
    pub fn dense(input_dim: usize, layer_widths: &[usize]) -> Self {
        EncoderConfig {
            kind: EncoderKind::Dense,
            layer_widths: layer_widths.to_vec(),
            input_shape: vec![input_dim],
        }
    }

    pub fn conv_small(input_shape: [usize; 3], channels: [usize; 2], dense_width: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::ConvSmall,
            layer_widths: vec![channels[0], channels[1], dense_width],
            input_shape: input_shape.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::invalid("encoder needs at least 2 layers"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("encoder layer widths must be >= 1"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid(format!("invalid input shape {:?}", self.input_shape)));
        }
        if self.kind == EncoderKind::ConvSmall {
            if self.layer_widths.len() != 3 {
                return Err(Error::invalid(
                    "conv_small takes exactly [conv1_channels, conv2_channels, dense_width]",
                ));
            }
            match self.input_shape[..] {
                [_, h, w] if h >= 4 && w >= 4 => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "conv_small needs a (channels, height >= 4, width >= 4) input, got {:?}",
                        self.input_shape
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated config")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len()
    }

    pub fn layer_labels(&self) -> Vec<String> {
        match self.kind {
            EncoderKind::Dense => (1..=self.layer_widths.len()).map(|i| format!("dense{i}")).collect(),
            EncoderKind::ConvSmall => vec!["block1".into(), "block2".into(), "dense3".into()],
        }
    }

    /// Parameter shapes in storage order, `(weight, bias)` per layer.
    fn encoder_shapes(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            EncoderKind::Dense => {
                let mut prev = self.input_dim();
                self.layer_widths
                    .iter()
                    .map(|&w| {
                        let s = (vec![prev, w], vec![w]);
                        prev = w;
                        s
                    })
                    .collect()
            }
            EncoderKind::ConvSmall => {
                let (c, h, w) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
                let (c1, c2, d) = (self.layer_widths[0], self.layer_widths[1], self.layer_widths[2]);
                let flat = c2 * (h / 2 / 2) * (w / 2 / 2);
                vec![
                    (vec![c1, c, 3, 3], vec![c1]),
                    (vec![c2, c1, 3, 3], vec![c2]),
                    (vec![flat, d], vec![d]),
                ]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    fn init(w_shape: &[usize], b_shape: &[usize], rng: &mut crate::rng::Rng) -> Layer {
        // fan-in is everything but the output axis: rows for [in, out], the
        // trailing axes for [out, in, 3, 3]
        let fan_in = if w_shape.len() == 2 {
            w_shape[0]
        } else {
            w_shape[1..].iter().product()
        } as f64;
        let w_bound = (6.0 / fan_in).sqrt();
        let b_bound = 1.0 / fan_in.sqrt();
        let n: usize = w_shape.iter().product();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-w_bound..w_bound)).collect();
        let nb: usize = b_shape.iter().product();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(-b_bound..b_bound)).collect();
        Layer {
            weight: Tensor::from_parts(w_shape.to_vec(), w),
            bias: Tensor::from_parts(b_shape.to_vec(), b),
        }
    }

    fn scalars(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerId {
    pub ordinal: usize,
    pub label: String,
}

impl std::fmt::Display for LayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}_{}", self.ordinal, self.label)
    }
}

/// Post-activation output of one encoder layer, flattened to `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    pub layer: LayerId,
    pub matrix: Tensor,
}

/// Which parts of the model a forward pass needs, and whether they train.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bind {
    Skip,
    Frozen,
    Trainable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Parts {
    pub encoder: Bind,
    pub head: Bind,
    pub classifier: Bind,
}

impl Parts {
    pub const FROZEN_ALL: Parts = Parts {
        encoder: Bind::Frozen,
        head: Bind::Frozen,
        classifier: Bind::Frozen,
    };

    pub fn new(encoder: Bind, head: Bind, classifier: Bind) -> Parts {
        Parts {
            encoder,
            head,
            classifier,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: EncoderConfig,
    pub n_classes: usize,
    pub head_dim: usize,
    pub encoder: Vec<Layer>,
    pub head: Vec<Layer>,
    pub classifier: Layer,
    pub freeze_encoder: bool,
    pub rng_seed: u64,
}

/// Parameter groups, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Head,
    Classifier,
}

/// Initializes a model with He-uniform weights and fan-in scaled uniform
/// biases. Each part draws from its own stream derived from `seed`.
pub fn init_model(config: EncoderConfig, n_classes: usize, head_dim: usize, seed: u64) -> Result<ModelBundle> {
    config.validate()?;
    if n_classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {n_classes}")));
    }
    if head_dim == 0 {
        return Err(Error::invalid("head_dim must be >= 1"));
    }
    let mut enc_rng = rng_for(seed, "init/encoder", 0);
    let encoder = config
        .encoder_shapes()
        .iter()
        .map(|(w, b)| Layer::init(w, b, &mut enc_rng))
        .collect();
    let rep = config.output_dim();
    let mut head_rng = rng_for(seed, "init/head", 0);
    let head = vec![
        Layer::init(&[rep, rep], &[rep], &mut head_rng),
        Layer::init(&[rep, head_dim], &[head_dim], &mut head_rng),
    ];
    let mut model = ModelBundle {
        config,
        n_classes,
        head_dim,
        encoder,
        head,
        classifier: Layer {
            weight: Tensor::zeros(&[rep, n_classes]),
            bias: Tensor::zeros(&[n_classes]),
        },
        freeze_encoder: false,
        rng_seed: seed,
    };
    model.reinit_classifier(seed);
    Ok(model)
}

impl ModelBundle {
    /// Draws a fresh classifier from a stream keyed by `seed`.
    pub fn reinit_classifier(&mut self, seed: u64) {
        let mut rng = rng_for(seed, "init/classifier", 0);
        self.classifier = Layer::init(&[self.config.output_dim(), self.n_classes], &[self.n_classes], &mut rng);
    }

    pub fn representation_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn param_count(&self, group: Group) -> usize {
        match group {
            Group::Encoder => self.encoder.iter().map(Layer::scalars).sum(),
            Group::Head => self.head.iter().map(Layer::scalars).sum(),
            Group::Classifier => self.classifier.scalars(),
        }
    }

    /// All parameter tensors with their group, in storage order.
    pub fn params(&self) -> Vec<(Group, &Tensor)> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push((Group::Encoder, &l.weight));
            out.push((Group::Encoder, &l.bias));
        }
        for l in &self.head {
            out.push((Group::Head, &l.weight));
            out.push((Group::Head, &l.bias));
        }
        out.push((Group::Classifier, &self.classifier.weight));
        out.push((Group::Classifier, &self.classifier.bias));
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self.encoder.iter_mut().chain(self.head.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    /// Encoder parameters concatenated, for freeze checks.
    pub fn encoder_snapshot(&self) -> Vec<f64> {
        self.encoder
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
            .collect()
    }

    /// Places the requested parts on `tape`.
    pub fn bind<'m>(&'m self, tape: &mut Tape, parts: Parts) -> Result<BoundModel<'m>> {
        let mut put = |layer: &Layer, bind: Bind| {
            let tracked = bind == Bind::Trainable;
            (
                tape.leaf(layer.weight.clone(), tracked),
                tape.leaf(layer.bias.clone(), tracked),
            )
        };
        if parts.encoder == Bind::Skip {
            return Err(Error::invalid("every forward pass needs the encoder"));
        }
        if parts.encoder == Bind::Trainable && self.freeze_encoder {
            return Err(Error::invalid("encoder is frozen but was bound as trainable"));
        }
        let encoder = self.encoder.iter().map(|l| put(l, parts.encoder)).collect();
        let head = (parts.head != Bind::Skip).then(|| self.head.iter().map(|l| put(l, parts.head)).collect());
        let classifier = (parts.classifier != Bind::Skip).then(|| put(&self.classifier, parts.classifier));
        Ok(BoundModel {
            model: self,
            encoder,
            head,
            classifier,
        })
    }

    /// Untracked encoder forward pass.
    pub fn encode(&self, x: &Tensor, capture: bool) -> Result<(Tensor, Vec<ActivationRecord>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Parts::new(Bind::Frozen, Bind::Skip, Bind::Skip))?;
        let xv = tape.constant(x.clone());
        let (rep, acts) = bound.encode(&mut tape, xv, capture)?;
        let labels = self.config.layer_labels();
        let records = acts
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let v = tape.value(a);
                Ok(ActivationRecord {
                    layer: LayerId {
                        ordinal: i + 1,
                        label: labels[i].clone(),
                    },
                    matrix: v.reshape(&[v.rows(), v.cols()])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((tape.value(rep).clone(), records))
    }

    /// Projection-head output for a batch of representations (not normalized).
    pub fn project(&self, rep: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Parts::new(Bind::Frozen, Bind::Frozen, Bind::Skip))?;
        let r = tape.constant(rep.clone());
        let z = bound.project(&mut tape, r)?;
        Ok(tape.value(z).clone())
    }

    pub fn classify(&self, rep: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Parts::new(Bind::Frozen, Bind::Skip, Bind::Frozen))?;
        let r = tape.constant(rep.clone());
        let z = bound.classify(&mut tape, r)?;
        Ok(tape.value(z).clone())
    }

    /// Top-1 predictions.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let (rep, _) = self.encode(x, false)?;
        let logits = self.classify(&rep)?;
        Ok(argmax_rows(&logits))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = crate::checkpoint::encode(self);
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        crate::checkpoint::decode(&bytes)
    }
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// A model's parameters placed on one tape.
pub struct BoundModel<'m> {
    model: &'m ModelBundle,
    encoder: Vec<(Var, Var)>,
    head: Option<Vec<(Var, Var)>>,
    classifier: Option<(Var, Var)>,
}

fn affine(tape: &mut Tape, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row_bias(xw, b)
}

impl BoundModel<'_> {
    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    pub fn has_classifier(&self) -> bool {
        self.classifier.is_some()
    }

    /// Encoder forward. Returns the representation and, when `capture` is
    /// set, one post-activation output per layer (the last one is the
    /// representation itself).
    pub fn encode(&self, tape: &mut Tape, x: Var, capture: bool) -> Result<(Var, Vec<Var>)> {
        let cfg = &self.model.config;
        let xs = tape.value(x).shape().to_vec();
        if xs.len() != 2 || xs[1] != cfg.input_dim() {
            return Err(Error::shape(
                "encode",
                format!("batch {xs:?} for input dimension {}", cfg.input_dim()),
            ));
        }
        let n = xs[0];
        let mut acts = Vec::new();
        let mut h = x;
        match cfg.kind {
            EncoderKind::Dense => {
                for &layer in &self.encoder {
                    let a = affine(tape, h, layer)?;
                    h = tape.relu(a)?;
                    acts.push(h);
                }
            }
            EncoderKind::ConvSmall => {
                let mut img = tape.reshape(h, &[n, cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]])?;
                for &(w, b) in &self.encoder[..2] {
                    let c = tape.conv2d_3x3(img, w, b)?;
                    let r = tape.relu(c)?;
                    img = tape.max_pool_2x2(r)?;
                    acts.push(img);
                }
                let flat_dim: usize = tape.value(img).shape()[1..].iter().product();
                let flat = tape.reshape(img, &[n, flat_dim])?;
                let a = affine(tape, flat, self.encoder[2])?;
                h = tape.relu(a)?;
                acts.push(h);
            }
        }
        if !capture {
            acts.clear();
        }
        Ok((h, acts))
    }

    /// Two affine layers with a relu in between.
    pub fn project(&self, tape: &mut Tape, rep: Var) -> Result<Var> {
        let head = self.head.as_ref().ok_or(Error::Missing("projection head"))?;
        self.check_rep("project", tape, rep)?;
        let a = affine(tape, rep, head[0])?;
        let r = tape.relu(a)?;
        affine(tape, r, head[1])
    }

    pub fn classify(&self, tape: &mut Tape, rep: Var) -> Result<Var> {
        let c = self.classifier.ok_or(Error::Missing("classifier"))?;
        self.check_rep("classify", tape, rep)?;
        affine(tape, rep, c)
    }

    fn check_rep(&self, op: &'static str, tape: &Tape, rep: Var) -> Result<()> {
        let s = tape.value(rep).shape();
        if s.len() != 2 || s[1] != self.model.config.output_dim() {
            return Err(Error::shape(
                op,
                format!("representation {s:?}, expected width {}", self.model.config.output_dim()),
            ));
        }
        Ok(())
    }

    /// Vars in [`ModelBundle::params`] order, `None` for skipped parts.
    pub fn param_vars(&self) -> Vec<Option<Var>> {
        let mut out = Vec::new();
        for &(w, b) in &self.encoder {
            out.push(Some(w));
            out.push(Some(b));
        }
        match &self.head {
            Some(h) => {
                for &(w, b) in h {
                    out.push(Some(w));
                    out.push(Some(b));
                }
            }
            None => out.extend([None; 4]),
        }
        match self.classifier {
            Some((w, b)) => out.extend([Some(w), Some(b)]),
            None => out.extend([None; 2]),
        }
        out
    }

    /// Gradients aligned with [`ModelBundle::params`]; `None` where a
    /// parameter was frozen, skipped or unreached.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.param_vars()
            .into_iter()
            .map(|v| v.and_then(|v| grads.get(v).cloned()))
            .collect()
    }
}

/// Writes one CSV per layer: a `layer_id,d` line, then one row per sample.
pub fn write_activation_csvs(records: &[ActivationRecord], dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for rec in records {
        let path = dir.join(format!("activations_{}.csv", rec.layer));
        let mut s = format!("{},{}\n", rec.layer, rec.matrix.cols());
        for i in 0..rec.matrix.rows() {
            let row: Vec<String> = rec.matrix.row(i).iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(widths: &[usize]) -> ModelBundle {
        init_model(EncoderConfig::dense(16, widths), 3, 2, 11).unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = dense(&[8, 4]);
        let b = dense(&[8, 4]);
        assert!(a.params().iter().zip(b.params()).all(|((_, x), (_, y))| x.bitwise_eq(y)));
    }

    #[test]
    fn parameter_counts() {
        let m = dense(&[8, 4]);
        assert_eq!(m.param_count(Group::Encoder), 16 * 8 + 8 + 8 * 4 + 4);
        assert_eq!(m.head.len(), 2);
        assert_eq!(m.head[0].weight.shape(), &[4, 4]);
        assert_eq!(m.head[1].weight.shape(), &[4, 2]);
        assert_eq!(m.classifier.weight.shape(), &[4, 3]);
    }

    #[test]
    fn invalid_configs() {
        assert!(init_model(EncoderConfig::dense(16, &[8]), 3, 2, 0).is_err());
        assert!(init_model(EncoderConfig::dense(16, &[8, 0]), 3, 2, 0).is_err());
        assert!(init_model(EncoderConfig::dense(16, &[8, 4]), 1, 2, 0).is_err());
        let conv = EncoderConfig {
            kind: EncoderKind::ConvSmall,
            layer_widths: vec![2, 2],
            input_shape: vec![1, 8, 8],
        };
        assert!(conv.validate().is_err());
    }

    #[test]
    fn capture_layers() {
        let m = dense(&[8, 6, 4]);
        let x = Tensor::filled(&[5, 16], 0.3);
        let (rep, none) = m.encode(&x, false).unwrap();
        assert!(none.is_empty());
        let (rep2, acts) = m.encode(&x, true).unwrap();
        assert_eq!(acts.len(), 3);
        let widths: Vec<usize> = acts.iter().map(|a| a.matrix.cols()).collect();
        assert_eq!(widths, vec![8, 6, 4]);
        assert!(acts[2].matrix.bitwise_eq(&rep));
        assert!(rep.bitwise_eq(&rep2));
    }

    #[test]
    fn zero_weights_give_relu_of_bias() {
        let mut m = dense(&[3, 2]);
        for l in &mut m.encoder {
            l.weight = Tensor::zeros(l.weight.shape());
        }
        m.encoder[0].bias = Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap();
        m.encoder[1].bias = Tensor::vector(vec![-0.25, 0.75]).unwrap();
        let x = Tensor::filled(&[2, 16], 3.0);
        let (rep, acts) = m.encode(&x, true).unwrap();
        assert_eq!(acts[0].matrix.data(), &[0.5, 0.0, 2.0, 0.5, 0.0, 2.0]);
        assert_eq!(rep.data(), &[0.0, 0.75, 0.0, 0.75]);
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let mut m = dense(&[8, 4]);
        m.classifier.weight = Tensor::zeros(m.classifier.weight.shape());
        m.classifier.bias = Tensor::zeros(m.classifier.bias.shape());
        let x = Tensor::filled(&[2, 16], 0.1);
        let (rep, _) = m.encode(&x, false).unwrap();
        assert!(m.classify(&rep).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_encoder_gradients_touch_classifier_only() {
        let mut m = dense(&[8, 4]);
        m.freeze_encoder = true;
        let mut tape = Tape::new();
        assert!(m
            .bind(&mut tape, Parts::new(Bind::Trainable, Bind::Skip, Bind::Trainable))
            .is_err());
        let bound = m
            .bind(&mut tape, Parts::new(Bind::Frozen, Bind::Skip, Bind::Trainable))
            .unwrap();
        let x = tape.constant(Tensor::filled(&[2, 16], 0.2));
        let (rep, _) = bound.encode(&mut tape, x, false).unwrap();
        let logits = bound.classify(&mut tape, rep).unwrap();
        let s = tape.sum(logits).unwrap();
        let grads = tape.backward(s).unwrap();
        let pg = bound.param_grads(&grads);
        for ((group, _), g) in m.params().iter().zip(&pg) {
            assert_eq!(*group == Group::Classifier, g.is_some());
        }
    }

    #[test]
    fn conv_encoder_shapes() {
        let cfg = EncoderConfig::conv_small([1, 8, 8], [3, 4], 5);
        let m = init_model(cfg, 10, 4, 0).unwrap();
        let x = Tensor::filled(&[2, 64], 0.5);
        let (rep, acts) = m.encode(&x, true).unwrap();
        assert_eq!(rep.shape(), &[2, 5]);
        let widths: Vec<usize> = acts.iter().map(|a| a.matrix.cols()).collect();
        assert_eq!(widths, vec![3 * 16, 4 * 4, 5]);
    }
}

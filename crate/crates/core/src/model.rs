//! Answer comparison classifiers.
//!
//! [`AttentionModel`] scores every question against the claim with additive
//! attention (`w3 · tanh(W1 F_C + W2 F_Q_j)`), softmaxes the scores across
//! questions, pools the answer-pair vectors with those weights and feeds the
//! pooled vector to a two-way linear classifier. [`ConcatModel`] is the
//! no-attention ablation: a linear classifier over a fixed concatenation of
//! (mean-pooled or sequence-level) input vectors.
//!
//! Gradients are implemented by hand; `tests` checks them against central
//! finite differences.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Dims;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::types::{ExperimentConfig, FeatureBundle, Label, Variant};

/// `-log softmax(logits)[label]`, stabilized with log-sum-exp.
pub fn cross_entropy(class_logits: &[f64; 2], label: Label) -> f64 {
    let m = class_logits[0].max(class_logits[1]);
    let lse = m + class_logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - class_logits[label.index()]
}

fn softmax2(l: &[f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Softmax over the unmasked entries; masked entries get weight 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = logits
        .iter()
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, &keep)| if keep { (l - m).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn predicted(class_logits: &[f64; 2]) -> Label {
    if class_logits[0] >= class_logits[1] {
        Label::Supports
    } else {
        Label::Refutes
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let eps = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-eps..=eps))
}

fn uniform1(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Array1<f64> {
    let eps = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array1::from_shape_simple_fn(len, || rng.gen_range(-eps..=eps))
}

fn add_outer(m: &mut Array2<f64>, col: &[f64; 2], row: &[f64]) {
    let row = ArrayView1::from(row);
    for (r, &c) in col.iter().enumerate() {
        m.row_mut(r).scaled_add(c, &row);
    }
}

fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn linear2(w: &Array2<f64>, b: &Array1<f64>, x: &[f64]) -> [f64; 2] {
    let y = w.dot(&ArrayView1::from(x));
    [y[0] + b[0], y[1] + b[1]]
}

/// Everything the attention forward pass produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub logits_att: Vec<f64>,
    pub weights: Vec<f64>,
    pub pooled: Vec<f64>,
    pub class_logits: [f64; 2],
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    /// `d_att x d_C`, projects the claim (query).
    pub w1: Array2<f64>,
    /// `d_att x d_Q`, projects each question (key).
    pub w2: Array2<f64>,
    /// `d_att`, reduces the hidden activation to a scalar score.
    pub w3: Array1<f64>,
    /// `2 x d_A`, classifier over the pooled answer-pair vector.
    pub w_cls: Array2<f64>,
    pub b_cls: Array1<f64>,
    /// Exclude repeated (question, answer) positions from the softmax.
    pub dedup_padded: bool,
}

impl AttentionModel {
    pub fn zeros(dims: Dims, d_att: usize) -> Self {
        AttentionModel {
            w1: Array2::zeros((d_att, dims.dim_claim)),
            w2: Array2::zeros((d_att, dims.dim_question)),
            w3: Array1::zeros(d_att),
            w_cls: Array2::zeros((2, dims.dim_answer_pair)),
            b_cls: Array1::zeros(2),
            dedup_padded: false,
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init(dims: Dims, d_att: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionModel {
            w1: uniform(rng, (d_att, dims.dim_claim), dims.dim_claim),
            w2: uniform(rng, (d_att, dims.dim_question), dims.dim_question),
            w3: uniform1(rng, d_att, d_att),
            w_cls: uniform(rng, (2, dims.dim_answer_pair), dims.dim_answer_pair),
            b_cls: uniform1(rng, 2, dims.dim_answer_pair),
            dedup_padded: false,
        }
    }

    pub fn d_att(&self) -> usize {
        self.w3.len()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            dim_claim: self.w1.ncols(),
            dim_question: self.w2.ncols(),
            dim_answer_pair: self.w_cls.ncols(),
        }
    }

    fn check(&self, b: &FeatureBundle) -> Result<()> {
        b.validate()?;
        let d = self.dims();
        if b.dim_claim() != d.dim_claim {
            return Err(Error::dims("claim vector", d.dim_claim, b.dim_claim()));
        }
        if b.dim_question() != d.dim_question {
            return Err(Error::dims("question vector", d.dim_question, b.dim_question()));
        }
        if b.dim_answer() != d.dim_answer_pair {
            return Err(Error::dims("answer-pair vector", d.dim_answer_pair, b.dim_answer()));
        }
        Ok(())
    }

    fn mask(&self, b: &FeatureBundle) -> Vec<bool> {
        (0..b.n())
            .map(|j| {
                !self.dedup_padded
                    || !(0..j).any(|k| {
                        b.question_vecs[k] == b.question_vecs[j] && b.answer_vecs[k] == b.answer_vecs[j]
                    })
            })
            .collect()
    }

    fn forward_full(&self, b: &FeatureBundle) -> Result<(ForwardTrace, Vec<Array1<f64>>)> {
        self.check(b)?;
        let query = self.w1.dot(&ArrayView1::from(&b.claim_vec));
        let hidden: Vec<Array1<f64>> = b
            .question_vecs
            .iter()
            .map(|q| (&query + &self.w2.dot(&ArrayView1::from(q))).mapv(f64::tanh))
            .collect();
        let logits_att: Vec<f64> = hidden.iter().map(|h| self.w3.dot(h)).collect();
        let weights = masked_softmax(&logits_att, &self.mask(b));
        let mut pooled = Array1::zeros(b.dim_answer());
        for (a, v) in weights.iter().zip(&b.answer_vecs) {
            pooled.scaled_add(*a, &ArrayView1::from(v));
        }
        let pooled = pooled.to_vec();
        let class_logits = linear2(&self.w_cls, &self.b_cls, &pooled);
        let trace = ForwardTrace {
            logits_att,
            weights,
            pooled,
            class_logits,
            predicted: predicted(&class_logits),
        };
        Ok((trace, hidden))
    }

    pub fn forward(&self, b: &FeatureBundle) -> Result<ForwardTrace> {
        Ok(self.forward_full(b)?.0)
    }

    /// Adds the loss gradient for one example into `grad`; returns the loss.
    pub fn backward(&self, b: &FeatureBundle, label: Label, grad: &mut Self) -> Result<f64> {
        let (trace, hidden) = self.forward_full(b)?;
        let loss = cross_entropy(&trace.class_logits, label);

        let mut d_logits = softmax2(&trace.class_logits);
        d_logits[label.index()] -= 1.0;
        add_outer(&mut grad.w_cls, &d_logits, &trace.pooled);
        grad.b_cls[0] += d_logits[0];
        grad.b_cls[1] += d_logits[1];

        // dL/dpooled = W_cls^T dlogits; dL/da_j = dpooled . F_A_j
        let d_pooled = &self.w_cls.row(0) * d_logits[0] + &self.w_cls.row(1) * d_logits[1];
        let d_weights: Vec<f64> = b
            .answer_vecs
            .iter()
            .map(|v| d_pooled.dot(&ArrayView1::from(v)))
            .collect();
        let mean: f64 = trace.weights.iter().zip(&d_weights).map(|(a, d)| a * d).sum();

        let mut d_query = Array1::<f64>::zeros(self.d_att());
        for (j, h) in hidden.iter().enumerate() {
            let d_score = trace.weights[j] * (d_weights[j] - mean);
            if d_score == 0.0 {
                continue;
            }
            grad.w3.scaled_add(d_score, h);
            let d_pre = h.mapv(|x| 1.0 - x * x) * &self.w3 * d_score;
            let q = ArrayView1::from(&b.question_vecs[j]);
            for (r, &g) in d_pre.iter().enumerate() {
                grad.w2.row_mut(r).scaled_add(g, &q);
            }
            d_query += &d_pre;
        }
        let c = ArrayView1::from(&b.claim_vec);
        for (r, &g) in d_query.iter().enumerate() {
            grad.w1.row_mut(r).scaled_add(g, &c);
        }
        Ok(loss)
    }
}

/// Which vectors a [`ConcatModel`] reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcatInput {
    /// Mean of the per-question vectors within each group.
    #[default]
    Pooled,
    /// Encoder vectors of the concatenated sequences.
    Sequence,
}

/// Classifier input size for a no-attention variant.
pub fn concat_input_dim(variant: Variant, input: ConcatInput, dims: Dims) -> Result<usize> {
    let Dims {
        dim_claim: c,
        dim_question: q,
        dim_answer_pair: a,
    } = dims;
    Ok(match (variant, input) {
        (Variant::C, _) => c,
        (Variant::Q, _) => q,
        (Variant::AA, _) => a,
        (Variant::QAa, _) => q + a,
        (Variant::CqAa, ConcatInput::Pooled) => c + q + a,
        (Variant::CqAa, ConcatInput::Sequence) => c + a,
        (Variant::AttentionCQAa, _) => {
            return Err(Error::InvalidConfig("attention variant has no concat input".into()))
        }
    })
}

fn mean_of(vecs: &[Vec<f64>], what: &str) -> Result<Vec<f64>> {
    let first = vecs.first().ok_or_else(|| Error::MissingInput(what.to_string()))?;
    let mut out = vec![0.0; first.len()];
    for v in vecs {
        if v.len() != out.len() {
            return Err(Error::dims(what, out.len(), v.len()));
        }
        out.iter_mut().zip(v).for_each(|(o, x)| *o += x);
    }
    let n = vecs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Builds the mean-pooled classifier input for a no-attention variant.
pub fn concat_features(
    variant: Variant,
    claim_vec: &[f64],
    question_vecs: &[Vec<f64>],
    answer_vecs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let claim = || {
        if claim_vec.is_empty() {
            Err(Error::MissingInput("claim vector".into()))
        } else {
            Ok(claim_vec.to_vec())
        }
    };
    let questions = || mean_of(question_vecs, "question vectors");
    let answers = || mean_of(answer_vecs, "answer-pair vectors");
    Ok(match variant {
        Variant::C => claim()?,
        Variant::Q => questions()?,
        Variant::AA => answers()?,
        Variant::QAa => [questions()?, answers()?].concat(),
        Variant::CqAa => [claim()?, questions()?, answers()?].concat(),
        Variant::AttentionCQAa => {
            return Err(Error::InvalidConfig("attention variant has no concat input".into()))
        }
    })
}

/// Sequence-level classifier input for a no-attention variant.
pub fn sequence_features(variant: Variant, b: &FeatureBundle) -> Result<Vec<f64>> {
    let seq = b
        .sequence
        .as_ref()
        .ok_or_else(|| Error::MissingInput("sequence vectors".into()))?;
    Ok(match variant {
        Variant::C => b.claim_vec.clone(),
        Variant::Q => seq.questions.clone(),
        Variant::AA => seq.answer_pairs.clone(),
        Variant::QAa => [seq.questions.clone(), seq.answer_pairs.clone()].concat(),
        Variant::CqAa => [seq.claim_questions.clone(), seq.answer_pairs.clone()].concat(),
        Variant::AttentionCQAa => {
            return Err(Error::InvalidConfig("attention variant has no concat input".into()))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcatModel {
    pub variant: Variant,
    pub input: ConcatInput,
    pub w_cls: Array2<f64>,
    pub b_cls: Array1<f64>,
}

impl ConcatModel {
    pub fn zeros(variant: Variant, input: ConcatInput, dims: Dims) -> Result<Self> {
        let d_in = concat_input_dim(variant, input, dims)?;
        Ok(ConcatModel {
            variant,
            input,
            w_cls: Array2::zeros((2, d_in)),
            b_cls: Array1::zeros(2),
        })
    }

    pub fn init(variant: Variant, input: ConcatInput, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d_in = concat_input_dim(variant, input, dims)?;
        Ok(ConcatModel {
            variant,
            input,
            w_cls: uniform(rng, (2, d_in), d_in),
            b_cls: uniform1(rng, 2, d_in),
        })
    }

    pub fn d_in(&self) -> usize {
        self.w_cls.ncols()
    }

    pub fn features(&self, b: &FeatureBundle) -> Result<Vec<f64>> {
        let x = match self.input {
            ConcatInput::Pooled => concat_features(self.variant, &b.claim_vec, &b.question_vecs, &b.answer_vecs)?,
            ConcatInput::Sequence => sequence_features(self.variant, b)?,
        };
        if x.len() != self.d_in() {
            return Err(Error::dims(format!("{} classifier input", self.variant), self.d_in(), x.len()));
        }
        Ok(x)
    }

    pub fn forward(&self, b: &FeatureBundle) -> Result<[f64; 2]> {
        Ok(linear2(&self.w_cls, &self.b_cls, &self.features(b)?))
    }

    pub fn backward(&self, b: &FeatureBundle, label: Label, grad: &mut Self) -> Result<f64> {
        let x = self.features(b)?;
        let logits = linear2(&self.w_cls, &self.b_cls, &x);
        let mut d = softmax2(&logits);
        d[label.index()] -= 1.0;
        add_outer(&mut grad.w_cls, &d, &x);
        grad.b_cls[0] += d[0];
        grad.b_cls[1] += d[1];
        Ok(cross_entropy(&logits, label))
    }
}

/// Prediction with its explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub predicted: Label,
    pub class_logits: [f64; 2],
    /// Attention weights in QA-set order; `None` for no-attention variants.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Attention(AttentionModel),
    Concat(ConcatModel),
}

impl Model {
    /// Fresh parameters for `config.variant`, drawn from `rng`.
    pub fn init(config: &ExperimentConfig, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(match config.variant {
            Variant::AttentionCQAa => {
                let d_att = config.d_att.unwrap_or(dims.dim_claim.min(dims.dim_question));
                let mut m = AttentionModel::init(dims, d_att, rng);
                m.dedup_padded = config.dedup_padded;
                Model::Attention(m)
            }
            v => {
                let input = if config.sequence_inputs {
                    ConcatInput::Sequence
                } else {
                    ConcatInput::Pooled
                };
                Model::Concat(ConcatModel::init(v, input, dims, rng)?)
            }
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            Model::Attention(_) => Variant::AttentionCQAa,
            Model::Concat(m) => m.variant,
        }
    }

    pub fn class_logits(&self, b: &FeatureBundle) -> Result<[f64; 2]> {
        match self {
            Model::Attention(m) => Ok(m.forward(b)?.class_logits),
            Model::Concat(m) => m.forward(b),
        }
    }

    pub fn predict(&self, b: &FeatureBundle) -> Result<VerdictReport> {
        match self {
            Model::Attention(m) => {
                let t = m.forward(b)?;
                Ok(VerdictReport {
                    predicted: t.predicted,
                    class_logits: t.class_logits,
                    weights: Some(t.weights),
                })
            }
            Model::Concat(m) => {
                let class_logits = m.forward(b)?;
                Ok(VerdictReport {
                    predicted: predicted(&class_logits),
                    class_logits,
                    weights: None,
                })
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Model::Attention(m) => Model::Attention(AttentionModel {
                dedup_padded: m.dedup_padded,
                ..AttentionModel::zeros(m.dims(), m.d_att())
            }),
            Model::Concat(m) => Model::Concat(ConcatModel {
                w_cls: Array2::zeros(m.w_cls.raw_dim()),
                b_cls: Array1::zeros(2),
                ..m.clone()
            }),
        }
    }

    /// Per-example loss; adds the gradient into `grad` (same shape).
    pub fn backward(&self, b: &FeatureBundle, label: Label, grad: &mut Model) -> Result<f64> {
        match (self, grad) {
            (Model::Attention(m), Model::Attention(g)) => m.backward(b, label, g),
            (Model::Concat(m), Model::Concat(g)) => m.backward(b, label, g),
            _ => Err(Error::InvalidConfig("gradient buffer has a different model kind".into())),
        }
    }

    /// Parameter tensors in a fixed order: name and row-major data.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            Model::Attention(m) => vec![
                ("w1", flat(&m.w1)),
                ("w2", flat(&m.w2)),
                ("w3", flat(&m.w3)),
                ("w_cls", flat(&m.w_cls)),
                ("b_cls", flat(&m.b_cls)),
            ],
            Model::Concat(m) => vec![("w_cls", flat(&m.w_cls)), ("b_cls", flat(&m.b_cls))],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Attention(m) => vec![
                m.w1.as_slice_mut().expect("standard layout"),
                m.w2.as_slice_mut().expect("standard layout"),
                m.w3.as_slice_mut().expect("standard layout"),
                m.w_cls.as_slice_mut().expect("standard layout"),
                m.b_cls.as_slice_mut().expect("standard layout"),
            ],
            Model::Concat(m) => vec![
                m.w_cls.as_slice_mut().expect("standard layout"),
                m.b_cls.as_slice_mut().expect("standard layout"),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn add_assign(&mut self, other: &Model) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn update(&mut self, params: &mut Model, grad: &Model) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let grads = grad.tensors();
        let mut k = 0;
        for (p, (_, g)) in params.tensors_mut().into_iter().zip(grads) {
            for (x, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                k += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Mean loss and gradient over `batch`. Per-example gradients are summed in
/// index order whatever `exec` is, so results do not depend on threading.
pub fn batch_gradient(model: &Model, batch: &[(&FeatureBundle, Label)], exec: Exec) -> Result<(f64, Model)> {
    let per_example = exec.try_map(batch, |(b, label)| {
        let mut g = model.zeros_like();
        let loss = model.backward(b, *label, &mut g)?;
        Ok::<_, Error>((loss, g))
    })?;
    let mut total = model.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_example {
        loss += l;
        total.add_assign(g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

fn common_dims(examples: &[(&FeatureBundle, Label)]) -> Result<Dims> {
    let first = examples.first().ok_or(Error::EmptyTrainSplit)?.0;
    let dims = Dims {
        dim_claim: first.dim_claim(),
        dim_question: first.dim_question(),
        dim_answer_pair: first.dim_answer(),
    };
    for (b, _) in examples {
        b.validate()?;
        let got = (b.dim_claim(), b.dim_question(), b.dim_answer());
        if got != (dims.dim_claim, dims.dim_question, dims.dim_answer_pair) {
            return Err(Error::dims("training bundle dims", dims.dim_claim, b.dim_claim()));
        }
    }
    Ok(dims)
}

/// Mini-batch Adam training, deterministic in `seed`.
pub fn train(
    examples: &[(&FeatureBundle, Label)],
    config: &ExperimentConfig,
    seed: u64,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = common_dims(examples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(config, dims, &mut rng)?;
    let mut adam = Adam::new(config.learning_rate, model.param_count());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&FeatureBundle, Label)> = chunk.iter().map(|&i| examples[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch, exec)?;
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut model, &grad);
        }
        loss_history.push(epoch_loss / examples.len() as f64);
    }
    Ok(TrainOutcome { model, loss_history })
}

// ---------------------------------------------------------------------------
// Checkpoints

const CHECKPOINT_FORMAT: &str = "qaproxy-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub seed: u64,
    pub dims: Dims,
    pub d_att: Option<usize>,
    pub dedup_padded: bool,
    pub concat_input: Option<ConcatInput>,
    pub loss_history: Vec<f64>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, dims: Dims, seed: u64, loss_history: Vec<f64>) -> Self {
        let shapes: Vec<Vec<usize>> = match model {
            Model::Attention(m) => vec![
                m.w1.shape().to_vec(),
                m.w2.shape().to_vec(),
                m.w3.shape().to_vec(),
                m.w_cls.shape().to_vec(),
                m.b_cls.shape().to_vec(),
            ],
            Model::Concat(m) => vec![m.w_cls.shape().to_vec(), m.b_cls.shape().to_vec()],
        };
        let tensors = model
            .tensors()
            .into_iter()
            .zip(shapes)
            .map(|((name, data), shape)| Tensor {
                name: name.to_string(),
                shape,
                data: data.to_vec(),
            })
            .collect();
        let (d_att, dedup_padded, concat_input) = match model {
            Model::Attention(m) => (Some(m.d_att()), m.dedup_padded, None),
            Model::Concat(m) => (None, false, Some(m.input)),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            variant: model.variant(),
            seed,
            dims,
            d_att,
            dedup_padded,
            concat_input,
            loss_history,
            tensors,
        }
    }

    /// Rebuilds the model, rejecting malformed or inconsistent tensors.
    pub fn to_model(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` v{}",
                self.format, self.version
            )));
        }
        let mut model = match self.variant {
            Variant::AttentionCQAa => {
                let d_att = self
                    .d_att
                    .ok_or_else(|| Error::Checkpoint("attention checkpoint without d_att".into()))?;
                let mut m = AttentionModel::zeros(self.dims, d_att);
                m.dedup_padded = self.dedup_padded;
                Model::Attention(m)
            }
            v => Model::Concat(ConcatModel::zeros(v, self.concat_input.unwrap_or_default(), self.dims)?),
        };
        let expected: Vec<(String, usize)> = model
            .tensors()
            .iter()
            .map(|(n, t)| (n.to_string(), t.len()))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((dst, (name, len)), t) in model.tensors_mut().into_iter().zip(expected).zip(&self.tensors) {
            if t.name != name || t.data.len() != len || t.shape.iter().product::<usize>() != len {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` ({} values) does not match `{name}` ({len} values)",
                    t.name,
                    t.data.len()
                )));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint tensor `{name}`")));
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(model)
    }

    /// Errors unless the checkpoint was trained on vectors of `dims`.
    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Checkpoint(format!(
                "checkpoint dims {:?} do not match bundle dims {:?}",
                self.dims, dims
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bundle(fc: Vec<f64>, fq: Vec<Vec<f64>>, fa: Vec<Vec<f64>>) -> FeatureBundle {
        FeatureBundle {
            claim_vec: fc,
            question_vecs: fq,
            answer_vecs: fa,
            sequence: None,
        }
    }

    fn random_bundle(rng: &mut ChaCha8Rng, n: usize, dims: Dims) -> FeatureBundle {
        let mut v = |d: usize| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        bundle(
            v(dims.dim_claim),
            (0..n).map(|_| v(dims.dim_question)).collect(),
            (0..n).map(|_| v(dims.dim_answer_pair)).collect(),
        )
    }

    fn dims(c: usize, q: usize, a: usize) -> Dims {
        Dims {
            dim_claim: c,
            dim_question: q,
            dim_answer_pair: a,
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(cross_entropy(&[0.0, 0.0], Label::Supports), 0.6931471805599453, epsilon = 1e-12);
        assert!(cross_entropy(&[30.0, -30.0], Label::Supports) < 1e-9);
        assert_abs_diff_eq!(cross_entropy(&[1.0, 0.0], Label::Refutes), 1.3132616875182228, epsilon = 1e-5);
        assert!(cross_entropy(&[800.0, -800.0], Label::Refutes).is_finite());
    }

    #[test]
    fn singleton_question_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = dims(3, 3, 4);
        let m = AttentionModel::init(d, 2, &mut rng);
        let b = random_bundle(&mut rng, 1, d);
        let t = m.forward(&b).unwrap();
        assert_eq!(t.weights, vec![1.0]);
        assert_eq!(t.pooled, b.answer_vecs[0]);
    }

    #[test]
    fn zero_w3_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = dims(3, 4, 5);
        let mut m = AttentionModel::init(d, 3, &mut rng);
        m.w3.fill(0.0);
        let b = random_bundle(&mut rng, 4, d);
        for w in m.forward(&b).unwrap().weights {
            assert_abs_diff_eq!(w, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn worked_example_matches_closed_form() {
        let mut m = AttentionModel::zeros(dims(2, 2, 2), 2);
        m.w1 = Array2::eye(2);
        m.w2 = Array2::eye(2);
        m.w3 = Array1::from(vec![1.0, 0.0]);
        let b = bundle(
            vec![0.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        let t = m.forward(&b).unwrap();
        // tanh(1), 1/(1+exp(-tanh(1))), computed independently.
        assert_abs_diff_eq!(t.logits_att[0], 0.7615941559557649, epsilon = 1e-15);
        assert_eq!(t.logits_att[1], 0.0);
        assert_abs_diff_eq!(t.weights[0], 0.6816997421945262, epsilon = 1e-15);
        assert_abs_diff_eq!(t.weights[1], 0.3183002578054738, epsilon = 1e-15);
        assert_abs_diff_eq!(t.pooled[0], 0.6816997421945262, epsilon = 1e-15);
        assert_abs_diff_eq!(t.pooled[1], 0.3183002578054738, epsilon = 1e-15);
        // Zero classifier: tie resolves to SUPPORTS.
        assert_eq!(t.predicted, Label::Supports);
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let m = AttentionModel::zeros(dims(2, 2, 2), 2);
        let b = bundle(vec![0.0; 3], vec![vec![0.0; 2]], vec![vec![0.0; 2]]);
        assert!(matches!(m.forward(&b), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn concat_variants() {
        let d = dims(2, 3, 4);
        let b = bundle(
            vec![1.0, 2.0],
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![vec![0.5; 4], vec![0.5; 4]],
        );
        let mut c = ConcatModel::zeros(Variant::C, ConcatInput::Pooled, d).unwrap();
        c.b_cls = Array1::from(vec![0.3, -0.2]);
        assert_eq!(c.forward(&b).unwrap(), [0.3, -0.2]);
        assert_eq!(concat_features(Variant::AA, &b.claim_vec, &b.question_vecs, &b.answer_vecs).unwrap(), vec![0.5; 4]);
        assert_eq!(concat_input_dim(Variant::CqAa, ConcatInput::Pooled, d).unwrap(), 9);
        assert_eq!(
            concat_features(Variant::Q, &b.claim_vec, &b.question_vecs, &b.answer_vecs).unwrap(),
            vec![0.5, 0.0, 0.5]
        );
        assert!(matches!(
            concat_features(Variant::Q, &b.claim_vec, &[], &b.answer_vecs),
            Err(Error::MissingInput(_))
        ));
        let s = ConcatModel::zeros(Variant::AA, ConcatInput::Sequence, d).unwrap();
        assert!(matches!(s.forward(&b), Err(Error::MissingInput(_))));
    }

    fn numeric_grad(model: &Model, b: &FeatureBundle, label: Label, h: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let sizes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        for (ti, len) in sizes.into_iter().enumerate() {
            for k in 0..len {
                let mut plus = model.clone();
                plus.tensors_mut()[ti][k] += h;
                let mut minus = model.clone();
                minus.tensors_mut()[ti][k] -= h;
                let lp = cross_entropy(&plus.class_logits(b).unwrap(), label);
                let lm = cross_entropy(&minus.class_logits(b).unwrap(), label);
                out.push((lp - lm) / (2.0 * h));
            }
        }
        out
    }

    fn flat_params(m: &Model) -> Vec<f64> {
        m.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, d) in &[(1, 2), (3, 4), (10, 3)] {
            let ds = dims(d, d + 1, d + 2);
            let model = Model::Attention(AttentionModel::init(ds, d, &mut rng));
            let b = random_bundle(&mut rng, n, ds);
            for label in Label::ALL {
                let mut g = model.zeros_like();
                model.backward(&b, label, &mut g).unwrap();
                let num = numeric_grad(&model, &b, label, 1e-5);
                for (a, e) in flat_params(&g).iter().zip(&num) {
                    assert!((a - e).abs() <= 1e-4 * a.abs().max(e.abs()).max(1e-3), "{a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn concat_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = dims(3, 2, 4);
        for v in [Variant::C, Variant::Q, Variant::AA, Variant::QAa, Variant::CqAa] {
            let model = Model::Concat(ConcatModel::init(v, ConcatInput::Pooled, ds, &mut rng).unwrap());
            let b = random_bundle(&mut rng, 3, ds);
            let mut g = model.zeros_like();
            model.backward(&b, Label::Refutes, &mut g).unwrap();
            for (a, e) in flat_params(&g).iter().zip(numeric_grad(&model, &b, Label::Refutes, 1e-5)) {
                assert!((a - e).abs() < 1e-8, "{v}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn symmetric_point_matches_uniform_pooling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = dims(3, 3, 4);
        let mut att = AttentionModel::init(ds, 3, &mut rng);
        att.w3.fill(0.0);
        let mut aa = ConcatModel::zeros(Variant::AA, ConcatInput::Pooled, ds).unwrap();
        aa.w_cls = att.w_cls.clone();
        aa.b_cls = att.b_cls.clone();
        let b = random_bundle(&mut rng, 5, ds);
        let mut ga = AttentionModel::zeros(ds, 3);
        att.backward(&b, Label::Supports, &mut ga).unwrap();
        let mut gc = ConcatModel::zeros(Variant::AA, ConcatInput::Pooled, ds).unwrap();
        aa.backward(&b, Label::Supports, &mut gc).unwrap();
        for (x, y) in ga.w_cls.iter().zip(gc.w_cls.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn duplicate_questions_contribute_equally() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ds = dims(3, 3, 3);
        let m = AttentionModel::init(ds, 3, &mut rng);
        let mut b = random_bundle(&mut rng, 3, ds);
        b.question_vecs[2] = b.question_vecs[0].clone();
        b.answer_vecs[2] = b.answer_vecs[0].clone();
        let t = m.forward(&b).unwrap();
        assert_eq!(t.weights[0], t.weights[2]);
        // Gradient w.r.t. W2 from position j is d_pre_j (x) F_Q_j; identical
        // inputs give identical contributions, so moving the duplicate pair
        // to another position leaves the total unchanged.
        let mut g1 = AttentionModel::zeros(ds, 3);
        m.backward(&b, Label::Refutes, &mut g1).unwrap();
        let mut swapped = b.clone();
        swapped.question_vecs.swap(1, 2);
        swapped.answer_vecs.swap(1, 2);
        let mut g2 = AttentionModel::zeros(ds, 3);
        m.backward(&swapped, Label::Refutes, &mut g2).unwrap();
        for (x, y) in g1.w2.iter().zip(g2.w2.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn dedup_mask_drops_padded_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ds = dims(2, 2, 2);
        let mut m = AttentionModel::init(ds, 2, &mut rng);
        let mut b = random_bundle(&mut rng, 2, ds);
        for _ in 0..3 {
            b.question_vecs.push(b.question_vecs[0].clone());
            b.answer_vecs.push(b.answer_vecs[0].clone());
        }
        let plain = m.forward(&b).unwrap();
        assert!(plain.weights.iter().all(|&w| w > 0.0));
        m.dedup_padded = true;
        let t = m.forward(&b).unwrap();
        assert_eq!(&t.weights[2..], &[0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(t.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let model = Model::Attention(m);
        let mut g = model.zeros_like();
        model.backward(&b, Label::Supports, &mut g).unwrap();
        for (a, e) in flat_params(&g).iter().zip(numeric_grad(&model, &b, Label::Supports, 1e-5)) {
            assert!((a - e).abs() <= 1e-4 * a.abs().max(e.abs()).max(1e-3));
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_dim_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ds = dims(3, 2, 4);
        let model = Model::Attention(AttentionModel::init(ds, 2, &mut rng));
        let ck = Checkpoint::from_model(&model, ds, 10, vec![0.5]);
        let bytes = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&bytes).unwrap();
        assert_eq!(back.to_model().unwrap(), model);
        assert_eq!(back.to_json().unwrap(), bytes);
        assert!(back.check_dims(dims(3, 2, 5)).is_err());
        let mut broken = back.clone();
        broken.tensors[0].data.pop();
        assert!(matches!(broken.to_model(), Err(Error::Checkpoint(_))));
    }
}

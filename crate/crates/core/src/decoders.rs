//! Answer decoders and losses, each with a regular and a warm-up
//! variant. The warm-up variants never read the question embedding.
//!
//! Open-ended answering is a classification over the answer vocabulary
//! (cross-entropy); repetition counting is a scalar regression trained on
//! the unrounded readout (MSE, rounding is evaluation-only); multiple
//! choice scores each candidate independently and trains with a margin
//! (hinge) loss against the ground-truth candidate's score.
//!
//! Unlike the network modules, every affine layer here carries a bias.
//! Hidden widths are fixed to d.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnnm::Activation;
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tape::{SoftmaxAxis, Tape, ValueId};

/// Loss family, matched to the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
    Hinge,
}

/// A materialized loss: nonnegative and finite by construction.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub value: f64,
    pub kind: LossKind,
}

impl LossValue {
    pub fn from_tape<T: Scalar>(tape: &Tape<T>, id: ValueId, kind: LossKind) -> Self {
        LossValue {
            value: tape.scalar_value(id).to_f64(),
            kind,
        }
    }
}

fn init_weight<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<T> {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| {
        T::from_f64((2.0 * rng.gen::<f64>() - 1.0) * bound)
    })
}

/// Decoder for tasks whose prediction is a single vector readout of the
/// embedding: open-ended classification (`vocab` = answer-space size) and
/// counting (`vocab` = 1, the raw regression output).
///
/// Regular path:  y = act(W_trunk [Y; W_q q + b_q] + b_trunk),
///                y' = act(W_hidden y + b_hidden),
///                head = W_head y' + b_head.
/// Warm-up path:  y~ = act(W_trunk_warm Y + b_trunk_warm),
///                head = W_head_warm y~ + b_head_warm.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDecoder<T> {
    pub d: usize,
    pub vocab: usize,
    pub activation: Activation,
    pub w_q: Matrix<T>,
    pub b_q: Matrix<T>,
    pub w_trunk: Matrix<T>,
    pub b_trunk: Matrix<T>,
    pub w_hidden: Matrix<T>,
    pub b_hidden: Matrix<T>,
    pub w_head: Matrix<T>,
    pub b_head: Matrix<T>,
    pub w_trunk_warm: Matrix<T>,
    pub b_trunk_warm: Matrix<T>,
    pub w_head_warm: Matrix<T>,
    pub b_head_warm: Matrix<T>,
}

impl<T: Scalar> VectorDecoder<T> {
    pub fn init(d: usize, vocab: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if d == 0 || vocab == 0 {
            return Err(Error::Config(format!(
                "decoder needs positive dimensions, got d={d} vocab={vocab}"
            )));
        }
        Ok(VectorDecoder {
            d,
            vocab,
            activation,
            w_q: init_weight(d, d, rng),
            b_q: Matrix::zeros(d, 1),
            w_trunk: init_weight(d, 2 * d, rng),
            b_trunk: Matrix::zeros(d, 1),
            w_hidden: init_weight(d, d, rng),
            b_hidden: Matrix::zeros(d, 1),
            w_head: init_weight(vocab, d, rng),
            b_head: Matrix::zeros(vocab, 1),
            w_trunk_warm: init_weight(d, d, rng),
            b_trunk_warm: Matrix::zeros(d, 1),
            w_head_warm: init_weight(vocab, d, rng),
            b_head_warm: Matrix::zeros(vocab, 1),
        })
    }

    pub fn zeros(d: usize, vocab: usize, activation: Activation) -> Self {
        VectorDecoder {
            d,
            vocab,
            activation,
            w_q: Matrix::zeros(d, d),
            b_q: Matrix::zeros(d, 1),
            w_trunk: Matrix::zeros(d, 2 * d),
            b_trunk: Matrix::zeros(d, 1),
            w_hidden: Matrix::zeros(d, d),
            b_hidden: Matrix::zeros(d, 1),
            w_head: Matrix::zeros(vocab, d),
            b_head: Matrix::zeros(vocab, 1),
            w_trunk_warm: Matrix::zeros(d, d),
            b_trunk_warm: Matrix::zeros(d, 1),
            w_head_warm: Matrix::zeros(vocab, d),
            b_head_warm: Matrix::zeros(vocab, 1),
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix<T>)> {
        vec![
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_trunk", &self.w_trunk),
            ("b_trunk", &self.b_trunk),
            ("w_hidden", &self.w_hidden),
            ("b_hidden", &self.b_hidden),
            ("w_head", &self.w_head),
            ("b_head", &self.b_head),
            ("w_trunk_warm", &self.w_trunk_warm),
            ("b_trunk_warm", &self.b_trunk_warm),
            ("w_head_warm", &self.w_head_warm),
            ("b_head_warm", &self.b_head_warm),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix<T>)> {
        vec![
            ("w_q", &mut self.w_q),
            ("b_q", &mut self.b_q),
            ("w_trunk", &mut self.w_trunk),
            ("b_trunk", &mut self.b_trunk),
            ("w_hidden", &mut self.w_hidden),
            ("b_hidden", &mut self.b_hidden),
            ("w_head", &mut self.w_head),
            ("b_head", &mut self.b_head),
            ("w_trunk_warm", &mut self.w_trunk_warm),
            ("b_trunk_warm", &mut self.b_trunk_warm),
            ("w_head_warm", &mut self.w_head_warm),
            ("b_head_warm", &mut self.b_head_warm),
        ]
    }

    pub fn convert<U: Scalar>(&self) -> VectorDecoder<U> {
        VectorDecoder {
            d: self.d,
            vocab: self.vocab,
            activation: self.activation,
            w_q: self.w_q.convert(),
            b_q: self.b_q.convert(),
            w_trunk: self.w_trunk.convert(),
            b_trunk: self.b_trunk.convert(),
            w_hidden: self.w_hidden.convert(),
            b_hidden: self.b_hidden.convert(),
            w_head: self.w_head.convert(),
            b_head: self.b_head.convert(),
            w_trunk_warm: self.w_trunk_warm.convert(),
            b_trunk_warm: self.b_trunk_warm.convert(),
            w_head_warm: self.w_head_warm.convert(),
            b_head_warm: self.b_head_warm.convert(),
        }
    }

    pub fn insert(&self, tape: &mut Tape<T>) -> TapedVectorDecoder {
        TapedVectorDecoder {
            activation: self.activation,
            w_q: tape.leaf(self.w_q.clone()),
            b_q: tape.leaf(self.b_q.clone()),
            w_trunk: tape.leaf(self.w_trunk.clone()),
            b_trunk: tape.leaf(self.b_trunk.clone()),
            w_hidden: tape.leaf(self.w_hidden.clone()),
            b_hidden: tape.leaf(self.b_hidden.clone()),
            w_head: tape.leaf(self.w_head.clone()),
            b_head: tape.leaf(self.b_head.clone()),
            w_trunk_warm: tape.leaf(self.w_trunk_warm.clone()),
            b_trunk_warm: tape.leaf(self.b_trunk_warm.clone()),
            w_head_warm: tape.leaf(self.w_head_warm.clone()),
            b_head_warm: tape.leaf(self.b_head_warm.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TapedVectorDecoder {
    activation: Activation,
    pub w_q: ValueId,
    pub b_q: ValueId,
    pub w_trunk: ValueId,
    pub b_trunk: ValueId,
    pub w_hidden: ValueId,
    pub b_hidden: ValueId,
    pub w_head: ValueId,
    pub b_head: ValueId,
    pub w_trunk_warm: ValueId,
    pub b_trunk_warm: ValueId,
    pub w_head_warm: ValueId,
    pub b_head_warm: ValueId,
}

impl TapedVectorDecoder {
    pub fn ids(&self) -> Vec<ValueId> {
        vec![
            self.w_q,
            self.b_q,
            self.w_trunk,
            self.b_trunk,
            self.w_hidden,
            self.b_hidden,
            self.w_head,
            self.b_head,
            self.w_trunk_warm,
            self.b_trunk_warm,
            self.w_head_warm,
            self.b_head_warm,
        ]
    }
}

/// Decoder for multiple choice: three projected inputs concatenated, one
/// hidden layer, scalar score per candidate. The embedding and candidate
/// projections are shared between the regular and warm-up paths (their
/// shapes coincide); the hidden layer differs (3d vs 2d fan-in).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChoiceDecoder<T> {
    pub d: usize,
    pub activation: Activation,
    pub w_embed: Matrix<T>,
    pub b_embed: Matrix<T>,
    pub w_q: Matrix<T>,
    pub b_q: Matrix<T>,
    pub w_a: Matrix<T>,
    pub b_a: Matrix<T>,
    pub w_hidden: Matrix<T>,
    pub b_hidden: Matrix<T>,
    pub w_head: Matrix<T>,
    pub b_head: Matrix<T>,
    pub w_hidden_warm: Matrix<T>,
    pub b_hidden_warm: Matrix<T>,
    pub w_head_warm: Matrix<T>,
    pub b_head_warm: Matrix<T>,
}

impl<T: Scalar> MultiChoiceDecoder<T> {
    pub fn init(d: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("decoder needs d >= 1".into()));
        }
        Ok(MultiChoiceDecoder {
            d,
            activation,
            w_embed: init_weight(d, d, rng),
            b_embed: Matrix::zeros(d, 1),
            w_q: init_weight(d, d, rng),
            b_q: Matrix::zeros(d, 1),
            w_a: init_weight(d, d, rng),
            b_a: Matrix::zeros(d, 1),
            w_hidden: init_weight(d, 3 * d, rng),
            b_hidden: Matrix::zeros(d, 1),
            w_head: init_weight(1, d, rng),
            b_head: Matrix::zeros(1, 1),
            w_hidden_warm: init_weight(d, 2 * d, rng),
            b_hidden_warm: Matrix::zeros(d, 1),
            w_head_warm: init_weight(1, d, rng),
            b_head_warm: Matrix::zeros(1, 1),
        })
    }

    pub fn zeros(d: usize, activation: Activation) -> Self {
        MultiChoiceDecoder {
            d,
            activation,
            w_embed: Matrix::zeros(d, d),
            b_embed: Matrix::zeros(d, 1),
            w_q: Matrix::zeros(d, d),
            b_q: Matrix::zeros(d, 1),
            w_a: Matrix::zeros(d, d),
            b_a: Matrix::zeros(d, 1),
            w_hidden: Matrix::zeros(d, 3 * d),
            b_hidden: Matrix::zeros(d, 1),
            w_head: Matrix::zeros(1, d),
            b_head: Matrix::zeros(1, 1),
            w_hidden_warm: Matrix::zeros(d, 2 * d),
            b_hidden_warm: Matrix::zeros(d, 1),
            w_head_warm: Matrix::zeros(1, d),
            b_head_warm: Matrix::zeros(1, 1),
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix<T>)> {
        vec![
            ("w_embed", &self.w_embed),
            ("b_embed", &self.b_embed),
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_a", &self.w_a),
            ("b_a", &self.b_a),
            ("w_hidden", &self.w_hidden),
            ("b_hidden", &self.b_hidden),
            ("w_head", &self.w_head),
            ("b_head", &self.b_head),
            ("w_hidden_warm", &self.w_hidden_warm),
            ("b_hidden_warm", &self.b_hidden_warm),
            ("w_head_warm", &self.w_head_warm),
            ("b_head_warm", &self.b_head_warm),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix<T>)> {
        vec![
            ("w_embed", &mut self.w_embed),
            ("b_embed", &mut self.b_embed),
            ("w_q", &mut self.w_q),
            ("b_q", &mut self.b_q),
            ("w_a", &mut self.w_a),
            ("b_a", &mut self.b_a),
            ("w_hidden", &mut self.w_hidden),
            ("b_hidden", &mut self.b_hidden),
            ("w_head", &mut self.w_head),
            ("b_head", &mut self.b_head),
            ("w_hidden_warm", &mut self.w_hidden_warm),
            ("b_hidden_warm", &mut self.b_hidden_warm),
            ("w_head_warm", &mut self.w_head_warm),
            ("b_head_warm", &mut self.b_head_warm),
        ]
    }

    pub fn convert<U: Scalar>(&self) -> MultiChoiceDecoder<U> {
        MultiChoiceDecoder {
            d: self.d,
            activation: self.activation,
            w_embed: self.w_embed.convert(),
            b_embed: self.b_embed.convert(),
            w_q: self.w_q.convert(),
            b_q: self.b_q.convert(),
            w_a: self.w_a.convert(),
            b_a: self.b_a.convert(),
            w_hidden: self.w_hidden.convert(),
            b_hidden: self.b_hidden.convert(),
            w_head: self.w_head.convert(),
            b_head: self.b_head.convert(),
            w_hidden_warm: self.w_hidden_warm.convert(),
            b_hidden_warm: self.b_hidden_warm.convert(),
            w_head_warm: self.w_head_warm.convert(),
            b_head_warm: self.b_head_warm.convert(),
        }
    }

    pub fn insert(&self, tape: &mut Tape<T>) -> TapedMultiChoiceDecoder {
        TapedMultiChoiceDecoder {
            activation: self.activation,
            w_embed: tape.leaf(self.w_embed.clone()),
            b_embed: tape.leaf(self.b_embed.clone()),
            w_q: tape.leaf(self.w_q.clone()),
            b_q: tape.leaf(self.b_q.clone()),
            w_a: tape.leaf(self.w_a.clone()),
            b_a: tape.leaf(self.b_a.clone()),
            w_hidden: tape.leaf(self.w_hidden.clone()),
            b_hidden: tape.leaf(self.b_hidden.clone()),
            w_head: tape.leaf(self.w_head.clone()),
            b_head: tape.leaf(self.b_head.clone()),
            w_hidden_warm: tape.leaf(self.w_hidden_warm.clone()),
            b_hidden_warm: tape.leaf(self.b_hidden_warm.clone()),
            w_head_warm: tape.leaf(self.w_head_warm.clone()),
            b_head_warm: tape.leaf(self.b_head_warm.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TapedMultiChoiceDecoder {
    activation: Activation,
    pub w_embed: ValueId,
    pub b_embed: ValueId,
    pub w_q: ValueId,
    pub b_q: ValueId,
    pub w_a: ValueId,
    pub b_a: ValueId,
    pub w_hidden: ValueId,
    pub b_hidden: ValueId,
    pub w_head: ValueId,
    pub b_head: ValueId,
    pub w_hidden_warm: ValueId,
    pub b_hidden_warm: ValueId,
    pub w_head_warm: ValueId,
    pub b_head_warm: ValueId,
}

impl TapedMultiChoiceDecoder {
    pub fn ids(&self) -> Vec<ValueId> {
        vec![
            self.w_embed,
            self.b_embed,
            self.w_q,
            self.b_q,
            self.w_a,
            self.b_a,
            self.w_hidden,
            self.b_hidden,
            self.w_head,
            self.b_head,
            self.w_hidden_warm,
            self.b_hidden_warm,
            self.w_head_warm,
            self.b_head_warm,
        ]
    }
}

/// Task-specific decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DecoderParameters<T> {
    OpenEnded(VectorDecoder<T>),
    Count(VectorDecoder<T>),
    MultiChoice(MultiChoiceDecoder<T>),
}

impl<T: Scalar> DecoderParameters<T> {
    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix<T>)> {
        match self {
            DecoderParameters::OpenEnded(d) | DecoderParameters::Count(d) => d.named_tensors(),
            DecoderParameters::MultiChoice(d) => d.named_tensors(),
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix<T>)> {
        match self {
            DecoderParameters::OpenEnded(d) | DecoderParameters::Count(d) => d.named_tensors_mut(),
            DecoderParameters::MultiChoice(d) => d.named_tensors_mut(),
        }
    }

    pub fn num_scalars(&self) -> u64 {
        self.named_tensors().iter().map(|(_, m)| m.len() as u64).sum()
    }

    pub fn convert<U: Scalar>(&self) -> DecoderParameters<U> {
        match self {
            DecoderParameters::OpenEnded(d) => DecoderParameters::OpenEnded(d.convert()),
            DecoderParameters::Count(d) => DecoderParameters::Count(d.convert()),
            DecoderParameters::MultiChoice(d) => DecoderParameters::MultiChoice(d.convert()),
        }
    }
}

fn act<T: Scalar>(tape: &mut Tape<T>, x: ValueId, activation: Activation) -> ValueId {
    match activation {
        Activation::Elu => tape.elu(x),
        Activation::Relu => tape.relu(x),
    }
}

fn affine<T: Scalar>(tape: &mut Tape<T>, w: ValueId, x: ValueId, b: ValueId) -> Result<ValueId> {
    let wx = tape.matmul(w, x)?;
    tape.add(wx, b)
}

/// Shared trunk of the vector decoder: returns the hidden d-vector the
/// head consumes (y' on the regular path, y~ on the warm-up path).
pub fn vector_trunk<T: Scalar>(
    tape: &mut Tape<T>,
    embedding: ValueId,
    question: ValueId,
    dec: &TapedVectorDecoder,
    warm_up: bool,
) -> Result<ValueId> {
    if warm_up {
        let pre = affine(tape, dec.w_trunk_warm, embedding, dec.b_trunk_warm)?;
        Ok(act(tape, pre, dec.activation))
    } else {
        let q_proj = affine(tape, dec.w_q, question, dec.b_q)?;
        let joined = tape.vconcat(embedding, q_proj)?;
        let pre = affine(tape, dec.w_trunk, joined, dec.b_trunk)?;
        let y = act(tape, pre, dec.activation);
        let pre2 = affine(tape, dec.w_hidden, y, dec.b_hidden)?;
        Ok(act(tape, pre2, dec.activation))
    }
}

/// Probability vector over the answer vocabulary.
pub fn decode_open_ended<T: Scalar>(
    tape: &mut Tape<T>,
    embedding: ValueId,
    question: ValueId,
    dec: &TapedVectorDecoder,
    warm_up: bool,
) -> Result<ValueId> {
    let trunk = vector_trunk(tape, embedding, question, dec, warm_up)?;
    let logits = if warm_up {
        affine(tape, dec.w_head_warm, trunk, dec.b_head_warm)?
    } else {
        affine(tape, dec.w_head, trunk, dec.b_head)?
    };
    Ok(tape.softmax(logits, SoftmaxAxis::PerColumn))
}

/// Raw (unrounded) count readout of a trunk output. Training consumes the
/// raw value; rounding happens only at evaluation time.
pub fn decode_count<T: Scalar>(
    tape: &mut Tape<T>,
    trunk: ValueId,
    dec: &TapedVectorDecoder,
    warm_up: bool,
) -> Result<ValueId> {
    if warm_up {
        affine(tape, dec.w_head_warm, trunk, dec.b_head_warm)
    } else {
        affine(tape, dec.w_head, trunk, dec.b_head)
    }
}

/// Round half away from zero; the convention for count evaluation.
pub fn round_count(raw: f64) -> i64 {
    raw.round() as i64
}

/// Scalar relevance score of one candidate. Scoring is per-candidate:
/// other candidates never enter.
pub fn decode_multi_choice<T: Scalar>(
    tape: &mut Tape<T>,
    embedding: ValueId,
    question: ValueId,
    candidate: ValueId,
    dec: &TapedMultiChoiceDecoder,
    warm_up: bool,
) -> Result<ValueId> {
    let e = affine(tape, dec.w_embed, embedding, dec.b_embed)?;
    let a = affine(tape, dec.w_a, candidate, dec.b_a)?;
    let (joined, w_hidden, b_hidden, w_head, b_head) = if warm_up {
        let joined = tape.vconcat(e, a)?;
        (
            joined,
            dec.w_hidden_warm,
            dec.b_hidden_warm,
            dec.w_head_warm,
            dec.b_head_warm,
        )
    } else {
        let q = affine(tape, dec.w_q, question, dec.b_q)?;
        let eq = tape.vconcat(e, q)?;
        let joined = tape.vconcat(eq, a)?;
        (joined, dec.w_hidden, dec.b_hidden, dec.w_head, dec.b_head)
    };
    let pre = affine(tape, w_hidden, joined, b_hidden)?;
    let hidden = act(tape, pre, dec.activation);
    affine(tape, w_head, hidden, b_head)
}

/// Cross-entropy against a vocabulary index: -log p[label].
pub fn cross_entropy_loss<T: Scalar>(
    tape: &mut Tape<T>,
    probs: ValueId,
    label: usize,
) -> Result<ValueId> {
    let k = tape.value(probs).rows();
    if label >= k {
        return Err(Error::Usage(format!(
            "label {label} out of range for {k} answers"
        )));
    }
    let p = tape.pick(probs, label, 0)?;
    let logp = tape.ln(p);
    Ok(tape.scale(logp, -1.0))
}

/// Squared error of the raw count readout against the integer label.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, raw: ValueId, target: f64) -> Result<ValueId> {
    let diff = tape.add_const(raw, -target);
    tape.hadamard(diff, diff)
}

/// Margin loss over candidate scores: sum over non-ground-truth
/// candidates of max(0, 1 + score_k - score_gt).
pub fn hinge_loss<T: Scalar>(
    tape: &mut Tape<T>,
    scores: &[ValueId],
    ground_truth: usize,
) -> Result<ValueId> {
    if ground_truth >= scores.len() {
        return Err(Error::Usage(format!(
            "ground-truth index {ground_truth} out of range for {} candidates",
            scores.len()
        )));
    }
    let gt = scores[ground_truth];
    // Keeps the loss attached to the graph even with a single candidate.
    let mut total = tape.scale(gt, 0.0);
    for (k, &score) in scores.iter().enumerate() {
        if k == ground_truth {
            continue;
        }
        let margin = tape.sub(score, gt)?;
        let shifted = tape.add_const(margin, 1.0);
        let term = tape.relu(shifted);
        total = tape.add(total, term)?;
    }
    Ok(total)
}

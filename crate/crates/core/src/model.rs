//! The trainable unit: hierarchy parameters plus a task-matched decoder,
//! with a single canonical tensor enumeration shared by the optimizer,
//! gradient clipping, checkpoints, and audits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoders::{
    cross_entropy_loss, decode_count, decode_multi_choice, decode_open_ended, hinge_loss,
    mse_loss, round_count, vector_trunk, DecoderParameters, LossKind, MultiChoiceDecoder,
    TapedMultiChoiceDecoder, TapedVectorDecoder, VectorDecoder,
};
use crate::error::{Error, Result};
use crate::hierarchy::{
    build_network, network_forward, HierarchyConfig, Label, NetworkPlan, SharingRegistry,
    TapedRegistry, Task, VideoSample,
};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};

/// Which part of the model a tensor belongs to; learning-rate multipliers
/// resolve against these groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Physical parameter set index in the sharing registry.
    Gnnm(usize),
    Decoder,
}

/// Complete model for one task.
#[derive(Debug, Clone)]
pub struct QaModel<T> {
    pub plan: NetworkPlan,
    pub registry: SharingRegistry<T>,
    pub decoder: DecoderParameters<T>,
    /// Answer-vocabulary size; meaningful for the open-ended task.
    pub answer_vocab: usize,
}

/// Tape handles for every parameter tensor, same order as
/// [`QaModel::named_tensors`].
#[derive(Debug, Clone)]
pub struct TapedModel {
    pub registry: TapedRegistry,
    decoder_vector: Option<TapedVectorDecoder>,
    decoder_multi: Option<TapedMultiChoiceDecoder>,
}

impl TapedModel {
    /// Parameter handles in canonical order.
    pub fn param_ids(&self) -> Vec<ValueId> {
        let mut ids: Vec<ValueId> = self
            .registry
            .physical
            .iter()
            .flat_map(|p| p.ids())
            .collect();
        if let Some(d) = &self.decoder_vector {
            ids.extend(d.ids());
        }
        if let Some(d) = &self.decoder_multi {
            ids.extend(d.ids());
        }
        ids
    }
}

/// Prediction nodes still on the tape; materialize with
/// [`QaModel::materialize`].
#[derive(Debug, Clone)]
pub enum PredictionNodes {
    /// Probability vector over the answer vocabulary.
    OpenEnded(ValueId),
    /// Raw (unrounded) count readout.
    Count(ValueId),
    /// One score per candidate.
    MultiChoice(Vec<ValueId>),
}

/// Materialized prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    OpenEnded { probs: Vec<f64> },
    Count { raw: f64, rounded: i64 },
    MultiChoice { scores: Vec<f64> },
}

impl Prediction {
    /// Argmax class / candidate, when the task has one.
    pub fn predicted_index(&self) -> Option<usize> {
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
        };
        match self {
            Prediction::OpenEnded { probs } => argmax(probs),
            Prediction::MultiChoice { scores } => argmax(scores),
            Prediction::Count { .. } => None,
        }
    }

    /// Count prediction clamped below at zero (counts are nonnegative).
    pub fn clamped_count(&self) -> Option<i64> {
        match self {
            Prediction::Count { rounded, .. } => Some((*rounded).max(0)),
            _ => None,
        }
    }
}

impl<T: Scalar> QaModel<T> {
    /// Build a freshly initialized model. All randomness flows from the
    /// seed: hierarchy sets first (physical order), then the decoder.
    pub fn new(config: HierarchyConfig, answer_vocab: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (plan, registry) = build_network(config, &mut rng)?;
        let decoder = match config.task {
            Task::OpenEnded => {
                if answer_vocab < 2 {
                    return Err(Error::Config(format!(
                        "open-ended task needs an answer vocabulary of at least 2, got {answer_vocab}"
                    )));
                }
                DecoderParameters::OpenEnded(VectorDecoder::init(
                    config.d,
                    answer_vocab,
                    config.activation,
                    &mut rng,
                )?)
            }
            Task::Count => DecoderParameters::Count(VectorDecoder::init(
                config.d,
                1,
                config.activation,
                &mut rng,
            )?),
            Task::MultiChoice => DecoderParameters::MultiChoice(MultiChoiceDecoder::init(
                config.d,
                config.activation,
                &mut rng,
            )?),
        };
        Ok(QaModel {
            plan,
            registry,
            decoder,
            answer_vocab,
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.plan.config
    }

    pub fn task(&self) -> Task {
        self.plan.config.task
    }

    /// Flip warm-up mode (zeroed question contexts + warm decoder paths).
    pub fn set_warm_up(&mut self, on: bool) {
        self.plan.config.warm_up_mode = on;
    }

    pub fn warm_up(&self) -> bool {
        self.plan.config.warm_up_mode
    }

    /// Canonical tensor enumeration: physical sets in registry order
    /// (each `gnnm<i>.<tensor>`), then the decoder (`decoder.<tensor>`).
    pub fn named_tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        for (i, set) in self.registry.physical_sets.iter().enumerate() {
            for (name, m) in set.named_tensors() {
                out.push((format!("gnnm{i}.{name}"), m));
            }
        }
        for (name, m) in self.decoder.named_tensors() {
            out.push((format!("decoder.{name}"), m));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = Vec::new();
        for (i, set) in self.registry.physical_sets.iter_mut().enumerate() {
            for (name, m) in set.named_tensors_mut() {
                out.push((format!("gnnm{i}.{name}"), m));
            }
        }
        for (name, m) in self.decoder.named_tensors_mut() {
            out.push((format!("decoder.{name}"), m));
        }
        out
    }

    /// Group of each tensor, parallel to [`Self::named_tensors`].
    pub fn tensor_groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::new();
        for (i, set) in self.registry.physical_sets.iter().enumerate() {
            out.extend(std::iter::repeat(ParamGroup::Gnnm(i)).take(set.named_tensors().len()));
        }
        out.extend(
            std::iter::repeat(ParamGroup::Decoder).take(self.decoder.named_tensors().len()),
        );
        out
    }

    pub fn num_scalars(&self) -> u64 {
        self.named_tensors().iter().map(|(_, m)| m.len() as u64).sum()
    }

    /// Record every parameter tensor once on a fresh tape.
    pub fn insert(&self, tape: &mut Tape<T>) -> TapedModel {
        let registry = self.registry.insert(tape);
        let (decoder_vector, decoder_multi) = match &self.decoder {
            DecoderParameters::OpenEnded(d) | DecoderParameters::Count(d) => {
                (Some(d.insert(tape)), None)
            }
            DecoderParameters::MultiChoice(d) => (None, Some(d.insert(tape))),
        };
        TapedModel {
            registry,
            decoder_vector,
            decoder_multi,
        }
    }

    /// Run the hierarchy and decoder for one sample, leaving prediction
    /// nodes on the tape.
    pub fn forward_sample(
        &self,
        tape: &mut Tape<T>,
        taped: &TapedModel,
        sample: &VideoSample<T>,
    ) -> Result<PredictionNodes> {
        let warm = self.plan.config.warm_up_mode;
        let forward = network_forward(tape, sample, &self.plan, &taped.registry)?;
        match self.task() {
            Task::OpenEnded => {
                let dec = taped.decoder_vector.as_ref().expect("open-ended decoder");
                let probs = decode_open_ended(
                    tape,
                    forward.runs[0].embedding,
                    forward.sample.question,
                    dec,
                    warm,
                )?;
                Ok(PredictionNodes::OpenEnded(probs))
            }
            Task::Count => {
                let dec = taped.decoder_vector.as_ref().expect("count decoder");
                let trunk = vector_trunk(
                    tape,
                    forward.runs[0].embedding,
                    forward.sample.question,
                    dec,
                    warm,
                )?;
                let raw = decode_count(tape, trunk, dec, warm)?;
                Ok(PredictionNodes::Count(raw))
            }
            Task::MultiChoice => {
                let dec = taped.decoder_multi.as_ref().expect("multi-choice decoder");
                let mut scores = Vec::with_capacity(forward.runs.len());
                for (k, run) in forward.runs.iter().enumerate() {
                    let score = decode_multi_choice(
                        tape,
                        run.embedding,
                        forward.sample.question,
                        forward.sample.candidates[k],
                        dec,
                        warm,
                    )?;
                    scores.push(score);
                }
                Ok(PredictionNodes::MultiChoice(scores))
            }
        }
    }

    /// Loss node for a prediction against its label.
    pub fn loss_node(
        &self,
        tape: &mut Tape<T>,
        prediction: &PredictionNodes,
        label: Label,
    ) -> Result<ValueId> {
        match (prediction, label) {
            (PredictionNodes::OpenEnded(probs), Label::Answer(idx)) => {
                cross_entropy_loss(tape, *probs, idx)
            }
            (PredictionNodes::Count(raw), Label::Count(c)) => mse_loss(tape, *raw, c as f64),
            (PredictionNodes::MultiChoice(scores), Label::Candidate(idx)) => {
                hinge_loss(tape, scores, idx)
            }
            _ => Err(Error::Usage(
                "label kind does not match the model task".into(),
            )),
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.task() {
            Task::OpenEnded => LossKind::CrossEntropy,
            Task::Count => LossKind::Mse,
            Task::MultiChoice => LossKind::Hinge,
        }
    }

    /// Read prediction nodes off the tape.
    pub fn materialize(&self, tape: &Tape<T>, prediction: &PredictionNodes) -> Prediction {
        match prediction {
            PredictionNodes::OpenEnded(p) => Prediction::OpenEnded {
                probs: tape
                    .value(*p)
                    .as_slice()
                    .iter()
                    .map(|&v| Scalar::to_f64(v))
                    .collect(),
            },
            PredictionNodes::Count(raw) => {
                let r = tape.scalar_value(*raw).to_f64();
                Prediction::Count {
                    raw: r,
                    rounded: round_count(r),
                }
            }
            PredictionNodes::MultiChoice(scores) => Prediction::MultiChoice {
                scores: scores
                    .iter()
                    .map(|&s| tape.scalar_value(s).to_f64())
                    .collect(),
            },
        }
    }

    /// Forward a single sample on a private tape and materialize.
    pub fn predict(&self, sample: &VideoSample<T>) -> Result<Prediction> {
        let mut tape = Tape::new();
        let taped = self.insert(&mut tape);
        let nodes = self.forward_sample(&mut tape, &taped, sample)?;
        Ok(self.materialize(&tape, &nodes))
    }

    pub fn convert<U: Scalar>(&self) -> QaModel<U> {
        QaModel {
            plan: self.plan.clone(),
            registry: self.registry.convert(),
            decoder: self.decoder.convert(),
            answer_vocab: self.answer_vocab,
        }
    }
}

//! Two-level assembly of generic network modules for video QA.
//!
//! The clip level runs a chain of modules over every clip's frame
//! features; the last module of the chain aggregates, producing one
//! embedding per clip. Those embeddings, stacked side by side, feed an
//! identically shaped video-level chain whose aggregating tail yields the
//! final d-vector. Chains are conditioned per position: dynamic (motion)
//! context first, answer-candidate context second when present, question
//! context on the aggregating tail.
//!
//! Parameter sharing binds several logical slots to one physical
//! parameter set. Sharing a set means inserting its tensors on the tape
//! once and reusing the handles, so call-site gradients accumulate into
//! the shared slots automatically.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnnm::{
    gnnm_forward, Activation, AttentionVariant, GnnmConfig, GnnmForward, GnnmParameters, TapedGnnm,
};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};

/// Hierarchy tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Clip,
    Video,
}

/// What conditions a module at its position in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Motion,
    Candidate,
    Question,
}

/// Question type the network answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    OpenEnded,
    Count,
    MultiChoice,
}

/// How logical slots bind to physical parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One physical set per logical slot.
    PerModule,
    /// One physical set per level: two sets for the whole network.
    PerLevel,
}

/// Static description of the whole network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// Feature dimension d.
    pub d: usize,
    pub num_clips: usize,
    pub frames_per_clip: usize,
    pub task: Task,
    pub sharing: Sharing,
    /// Replace question contexts with zero vectors (first training stage).
    pub warm_up_mode: bool,
    pub attention_variant: AttentionVariant,
    pub activation: Activation,
    pub epsilon: f64,
}

impl HierarchyConfig {
    pub fn new(d: usize, num_clips: usize, frames_per_clip: usize, task: Task) -> Self {
        HierarchyConfig {
            d,
            num_clips,
            frames_per_clip,
            task,
            sharing: Sharing::PerModule,
            warm_up_mode: false,
            attention_variant: AttentionVariant::Component,
            activation: Activation::Elu,
            epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clips == 0 || self.frames_per_clip == 0 {
            return Err(Error::Config(format!(
                "hierarchy needs at least one clip and one frame, got {} clips x {} frames",
                self.num_clips, self.frames_per_clip
            )));
        }
        // Both levels must instantiate valid modules.
        self.gnnm_config(Level::Clip, false).validate()?;
        self.gnnm_config(Level::Video, false).validate()?;
        Ok(())
    }

    /// Module configuration for one slot of a level.
    pub fn gnnm_config(&self, level: Level, aggregate: bool) -> GnnmConfig {
        let n = match level {
            Level::Clip => self.frames_per_clip,
            Level::Video => self.num_clips,
        };
        GnnmConfig {
            d: self.d,
            n,
            attention_variant: self.attention_variant,
            aggregate_output: aggregate,
            activation: self.activation,
            epsilon: self.epsilon,
        }
    }

    /// Context sequence of one level's chain; the aggregating
    /// question-conditioned module is always last.
    pub fn level_contexts(&self) -> Vec<ContextKind> {
        match self.task {
            Task::MultiChoice => vec![
                ContextKind::Motion,
                ContextKind::Candidate,
                ContextKind::Question,
            ],
            _ => vec![ContextKind::Motion, ContextKind::Question],
        }
    }
}

/// One logical module slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotSpec {
    pub level: Level,
    /// Position within the level's chain, starting at 0.
    pub position: usize,
    pub context: ContextKind,
    pub config: GnnmConfig,
}

impl SlotSpec {
    /// Stable identifier used in logs, learning-rate maps, and reports.
    pub fn key(&self) -> String {
        let level = match self.level {
            Level::Clip => "clip",
            Level::Video => "video",
        };
        format!("{level}.{}", self.position)
    }
}

/// Logical layout of the network: clip-level slots first, then
/// video-level slots.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPlan {
    pub config: HierarchyConfig,
    pub slots: Vec<SlotSpec>,
}

impl NetworkPlan {
    pub fn new(config: HierarchyConfig) -> Result<Self> {
        config.validate()?;
        let contexts = config.level_contexts();
        let mut slots = Vec::new();
        for level in [Level::Clip, Level::Video] {
            for (position, &context) in contexts.iter().enumerate() {
                let aggregate = position == contexts.len() - 1;
                slots.push(SlotSpec {
                    level,
                    position,
                    context,
                    config: config.gnnm_config(level, aggregate),
                });
            }
        }
        Ok(NetworkPlan { config, slots })
    }

    pub fn slots_of(&self, level: Level) -> impl Iterator<Item = (usize, &SlotSpec)> {
        self.slots
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.level == level)
    }

    pub fn slot_index(&self, level: Level, position: usize) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| s.level == level && s.position == position)
    }
}

/// Binding of logical slots to physical parameter sets.
#[derive(Debug, Clone)]
pub struct SharingRegistry<T> {
    /// Physical set index for each logical slot, parallel to
    /// `NetworkPlan::slots`.
    pub slot_to_physical: Vec<usize>,
    pub physical_sets: Vec<GnnmParameters<T>>,
}

impl<T: Scalar> SharingRegistry<T> {
    pub fn num_physical(&self) -> usize {
        self.physical_sets.len()
    }

    pub fn params_for_slot(&self, slot: usize) -> &GnnmParameters<T> {
        &self.physical_sets[self.slot_to_physical[slot]]
    }

    /// Insert every physical set on the tape once.
    pub fn insert(&self, tape: &mut Tape<T>) -> TapedRegistry {
        TapedRegistry {
            physical: self.physical_sets.iter().map(|p| p.insert(tape)).collect(),
            slot_to_physical: self.slot_to_physical.clone(),
        }
    }

    pub fn convert<U: Scalar>(&self) -> SharingRegistry<U> {
        SharingRegistry {
            slot_to_physical: self.slot_to_physical.clone(),
            physical_sets: self.physical_sets.iter().map(|p| p.convert()).collect(),
        }
    }

    /// Expand into a per-module registry with identical weights: every
    /// slot receives its own copy of the set it currently shares.
    pub fn unshared_clone(&self) -> SharingRegistry<T> {
        SharingRegistry {
            slot_to_physical: (0..self.slot_to_physical.len()).collect(),
            physical_sets: self
                .slot_to_physical
                .iter()
                .map(|&p| self.physical_sets[p].clone())
                .collect(),
        }
    }
}

/// Tape handles of all physical sets.
#[derive(Debug, Clone)]
pub struct TapedRegistry {
    pub physical: Vec<TapedGnnm>,
    slot_to_physical: Vec<usize>,
}

impl TapedRegistry {
    pub fn for_slot(&self, slot: usize) -> &TapedGnnm {
        &self.physical[self.slot_to_physical[slot]]
    }
}

/// Build the hierarchy: plan plus freshly initialized parameter sets.
///
/// Per-level sharing yields exactly two physical sets (clip, video); per
/// module sharing yields one per logical slot. Initialization order is
/// the physical-set order, so a fixed seed fixes every weight.
pub fn build_network<T: Scalar>(
    config: HierarchyConfig,
    rng: &mut impl Rng,
) -> Result<(NetworkPlan, SharingRegistry<T>)> {
    let plan = NetworkPlan::new(config)?;
    let registry = match config.sharing {
        Sharing::PerModule => {
            let mut sets = Vec::with_capacity(plan.slots.len());
            for slot in &plan.slots {
                sets.push(GnnmParameters::init(&slot.config, rng)?);
            }
            SharingRegistry {
                slot_to_physical: (0..plan.slots.len()).collect(),
                physical_sets: sets,
            }
        }
        Sharing::PerLevel => {
            // Aggregation does not change parameter shapes, so one set per
            // level covers every slot of that level.
            let clip = GnnmParameters::init(&config.gnnm_config(Level::Clip, false), rng)?;
            let video = GnnmParameters::init(&config.gnnm_config(Level::Video, false), rng)?;
            let mapping = plan
                .slots
                .iter()
                .map(|s| match s.level {
                    Level::Clip => 0,
                    Level::Video => 1,
                })
                .collect();
            SharingRegistry {
                slot_to_physical: mapping,
                physical_sets: vec![clip, video],
            }
        }
    };
    Ok((plan, registry))
}

/// Ground-truth annotation of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    /// Answer-vocabulary index for open-ended questions.
    Answer(usize),
    /// Repetition count.
    Count(u32),
    /// Index of the correct candidate.
    Candidate(usize),
}

impl Label {
    pub fn as_i64(&self) -> i64 {
        match *self {
            Label::Answer(i) => i as i64,
            Label::Count(c) => c as i64,
            Label::Candidate(i) => i as i64,
        }
    }
}

/// One QA item: per-clip appearance features, motion vectors, question
/// embedding, and (for multiple choice) candidate embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample<T> {
    /// One d x frames_per_clip matrix per clip.
    pub clip_frames: Vec<Matrix<T>>,
    /// One d x 1 motion vector per clip.
    pub clip_motion: Vec<Matrix<T>>,
    pub video_motion: Matrix<T>,
    pub question: Matrix<T>,
    /// Present exactly for multiple-choice samples.
    pub candidates: Option<Vec<Matrix<T>>>,
    pub label: Label,
}

impl<T: Scalar> VideoSample<T> {
    pub fn validate(&self, config: &HierarchyConfig) -> Result<()> {
        let check = |name: &'static str, m: &Matrix<T>, rows: usize, cols: usize| {
            if m.rows() != rows || m.cols() != cols {
                Err(Error::shape(name, format!("{rows}x{cols}"), m.shape_string()))
            } else {
                Ok(())
            }
        };
        if self.clip_frames.len() != config.num_clips || self.clip_motion.len() != config.num_clips
        {
            return Err(Error::Config(format!(
                "sample has {} clips / {} motion vectors, config wants {}",
                self.clip_frames.len(),
                self.clip_motion.len(),
                config.num_clips
            )));
        }
        for frames in &self.clip_frames {
            check("clip_frames", frames, config.d, config.frames_per_clip)?;
        }
        for motion in &self.clip_motion {
            check("clip_motion", motion, config.d, 1)?;
        }
        check("video_motion", &self.video_motion, config.d, 1)?;
        check("question", &self.question, config.d, 1)?;
        match (config.task, &self.candidates) {
            (Task::MultiChoice, Some(cands)) => {
                if cands.is_empty() {
                    return Err(Error::Config("multi-choice sample with no candidates".into()));
                }
                for c in cands {
                    check("candidate", c, config.d, 1)?;
                }
            }
            (Task::MultiChoice, None) => {
                return Err(Error::Config(
                    "multi-choice task requires candidate embeddings".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(Error::Config(
                    "candidates are only valid for the multi-choice task".into(),
                ))
            }
            (_, None) => {}
        }
        Ok(())
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.as_ref().map_or(0, |c| c.len())
    }

    pub fn convert<U: Scalar>(&self) -> VideoSample<U> {
        VideoSample {
            clip_frames: self.clip_frames.iter().map(|m| m.convert()).collect(),
            clip_motion: self.clip_motion.iter().map(|m| m.convert()).collect(),
            video_motion: self.video_motion.convert(),
            question: self.question.convert(),
            candidates: self
                .candidates
                .as_ref()
                .map(|cs| cs.iter().map(|m| m.convert()).collect()),
            label: self.label,
        }
    }
}

/// Leaf handles of one sample's tensors.
#[derive(Debug, Clone)]
pub struct SampleNodes {
    pub clip_frames: Vec<ValueId>,
    pub clip_motion: Vec<ValueId>,
    pub video_motion: ValueId,
    pub question: ValueId,
    pub candidates: Vec<ValueId>,
    /// What the chains actually read as the question context: the
    /// question itself, or a zero vector in warm-up mode.
    pub effective_question: ValueId,
}

impl<T: Scalar> VideoSample<T> {
    pub fn insert(&self, tape: &mut Tape<T>, warm_up: bool) -> SampleNodes {
        let clip_frames = self
            .clip_frames
            .iter()
            .map(|m| tape.leaf(m.clone()))
            .collect();
        let clip_motion = self
            .clip_motion
            .iter()
            .map(|m| tape.leaf(m.clone()))
            .collect();
        let video_motion = tape.leaf(self.video_motion.clone());
        let question = tape.leaf(self.question.clone());
        let effective_question = if warm_up {
            tape.leaf(Matrix::zeros(self.question.rows(), 1))
        } else {
            question
        };
        let candidates = self
            .candidates
            .iter()
            .flatten()
            .map(|m| tape.leaf(m.clone()))
            .collect();
        SampleNodes {
            clip_frames,
            clip_motion,
            video_motion,
            question,
            candidates,
            effective_question,
        }
    }
}

/// Every node produced by one end-to-end pass (for one candidate, when
/// the task has candidates).
#[derive(Debug, Clone)]
pub struct ChainOutputs {
    /// Aggregated clip embeddings r_1 ... r_N, each d x 1.
    pub clip_embeddings: Vec<ValueId>,
    /// Final d x 1 video embedding.
    pub embedding: ValueId,
    /// Module outputs in slot order: clip-level slots repeated per clip,
    /// then video-level slots.
    pub module_outputs: Vec<GnnmForward>,
}

/// Forward results for a whole sample.
#[derive(Debug, Clone)]
pub struct NetworkForward {
    /// One run per candidate for multi-choice, exactly one otherwise.
    pub runs: Vec<ChainOutputs>,
    pub sample: SampleNodes,
}

impl NetworkForward {
    pub fn embeddings(&self) -> Vec<ValueId> {
        self.runs.iter().map(|r| r.embedding).collect()
    }
}

fn chain_context(
    kind: ContextKind,
    motion: ValueId,
    candidate: Option<ValueId>,
    question: ValueId,
) -> Result<ValueId> {
    match kind {
        ContextKind::Motion => Ok(motion),
        ContextKind::Question => Ok(question),
        ContextKind::Candidate => candidate.ok_or_else(|| {
            Error::Config("candidate-conditioned slot without a candidate".into())
        }),
    }
}

/// Run the full hierarchy over one sample. For multi-choice, the whole
/// network runs once per candidate with that candidate as the context of
/// the candidate-conditioned slots.
pub fn network_forward<T: Scalar>(
    tape: &mut Tape<T>,
    sample: &VideoSample<T>,
    plan: &NetworkPlan,
    registry: &TapedRegistry,
) -> Result<NetworkForward> {
    sample.validate(&plan.config)?;
    let nodes = sample.insert(tape, plan.config.warm_up_mode);
    let candidate_nodes: Vec<Option<ValueId>> = if plan.config.task == Task::MultiChoice {
        nodes.candidates.iter().map(|&c| Some(c)).collect()
    } else {
        vec![None]
    };

    let mut runs = Vec::with_capacity(candidate_nodes.len());
    for candidate in candidate_nodes {
        let mut module_outputs = Vec::new();

        // Clip level: each clip through the clip chain.
        let mut clip_embeddings = Vec::with_capacity(plan.config.num_clips);
        for clip in 0..plan.config.num_clips {
            let mut current = nodes.clip_frames[clip];
            for (slot_idx, slot) in plan.slots_of(Level::Clip) {
                let context = chain_context(
                    slot.context,
                    nodes.clip_motion[clip],
                    candidate,
                    nodes.effective_question,
                )?;
                let fwd = gnnm_forward(
                    tape,
                    current,
                    context,
                    registry.for_slot(slot_idx),
                    &slot.config,
                )?;
                current = fwd.output;
                module_outputs.push(fwd);
            }
            clip_embeddings.push(current);
        }

        // Video level: the sequence of clip embeddings through the video
        // chain.
        let mut current = tape.hconcat(&clip_embeddings)?;
        for (slot_idx, slot) in plan.slots_of(Level::Video) {
            let context = chain_context(
                slot.context,
                nodes.video_motion,
                candidate,
                nodes.effective_question,
            )?;
            let fwd = gnnm_forward(
                tape,
                current,
                context,
                registry.for_slot(slot_idx),
                &slot.config,
            )?;
            current = fwd.output;
            module_outputs.push(fwd);
        }

        runs.push(ChainOutputs {
            clip_embeddings,
            embedding: current,
            module_outputs,
        });
    }

    Ok(NetworkForward {
        runs,
        sample: nodes,
    })
}

/// Result of comparing shared-set gradients against an unshared clone.
#[derive(Debug, Clone)]
pub struct SharingCheckReport {
    /// (physical set key, tensor name, |shared - summed unshared|max).
    pub per_tensor: Vec<(String, String, f64)>,
    pub tolerance: f64,
}

impl SharingCheckReport {
    pub fn max_abs_diff(&self) -> f64 {
        self.per_tensor.iter().map(|e| e.2).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_abs_diff() <= self.tolerance
    }
}

/// Deterministic scalar readout: fixed pseudo-random coefficients against
/// every embedding entry, summed over runs.
fn readout_loss<T: Scalar>(tape: &mut Tape<T>, forward: &NetworkForward, d: usize) -> Result<ValueId> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xC0EF);
    let coeffs = Matrix::from_fn(1, d, |_, _| T::from_f64(rng.gen::<f64>() * 2.0 - 1.0));
    let w = tape.leaf(coeffs);
    let mut total: Option<ValueId> = None;
    for run in &forward.runs {
        let scored = tape.matmul(w, run.embedding)?;
        total = Some(match total {
            None => scored,
            Some(t) => tape.add(t, scored)?,
        });
    }
    Ok(total.expect("at least one run"))
}

/// Verify that the gradient of each shared physical set equals the sum of
/// the per-call-site gradients of an identically initialized unshared
/// clone. Exact in double precision up to `tolerance`.
pub fn shared_gradient_check(
    plan: &NetworkPlan,
    registry: &SharingRegistry<f64>,
    sample: &VideoSample<f64>,
    tolerance: f64,
) -> Result<SharingCheckReport> {
    if plan.config.sharing != Sharing::PerLevel {
        return Err(Error::Usage(
            "shared_gradient_check requires per-level sharing".into(),
        ));
    }

    // Shared pass.
    let mut tape = Tape::new();
    let taped = registry.insert(&mut tape);
    let forward = network_forward(&mut tape, sample, plan, &taped)?;
    let loss = readout_loss(&mut tape, &forward, plan.config.d)?;
    tape.backward(loss)?;
    let shared_grads: Vec<Vec<Matrix<f64>>> = taped
        .physical
        .iter()
        .map(|p| p.ids().iter().map(|&id| tape.grad(id).unwrap().clone()).collect())
        .collect();

    // Unshared clone with identical weights, same readout.
    let unshared = registry.unshared_clone();
    let mut plan2 = plan.clone();
    plan2.config.sharing = Sharing::PerModule;
    let mut tape2 = Tape::new();
    let taped2 = unshared.insert(&mut tape2);
    let forward2 = network_forward(&mut tape2, sample, &plan2, &taped2)?;
    let loss2 = readout_loss(&mut tape2, &forward2, plan.config.d)?;
    tape2.backward(loss2)?;

    // Sum call-site gradients per original physical set.
    let tensor_names: Vec<&'static str> = registry.physical_sets[0]
        .named_tensors()
        .iter()
        .map(|(n, _)| *n)
        .collect();
    let mut report = Vec::new();
    for (phys_idx, set_grads) in shared_grads.iter().enumerate() {
        let key = if phys_idx == 0 { "clip" } else { "video" };
        for (tensor_idx, name) in tensor_names.iter().enumerate() {
            let mut summed: Option<Matrix<f64>> = None;
            for (slot, &mapped) in registry.slot_to_physical.iter().enumerate() {
                if mapped != phys_idx {
                    continue;
                }
                let clone_grad = tape2
                    .grad(taped2.physical[slot].ids()[tensor_idx])
                    .unwrap()
                    .clone();
                match &mut summed {
                    None => summed = Some(clone_grad),
                    Some(s) => s.add_assign(&clone_grad),
                }
            }
            let summed = summed.expect("every physical set has slots");
            let shared = &set_grads[tensor_idx];
            let mut max_diff = 0.0f64;
            for (a, b) in shared.as_slice().iter().zip(summed.as_slice()) {
                max_diff = max_diff.max((a - b).abs());
            }
            report.push((key.to_string(), name.to_string(), max_diff));
        }
    }

    Ok(SharingCheckReport {
        per_tensor: report,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_for(config: &HierarchyConfig, seed: u64, num_candidates: usize) -> VideoSample<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vec_of = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
        };
        let clip_frames = (0..config.num_clips)
            .map(|_| vec_of(config.d, config.frames_per_clip))
            .collect();
        let clip_motion = (0..config.num_clips).map(|_| vec_of(config.d, 1)).collect();
        let video_motion = vec_of(config.d, 1);
        let question = vec_of(config.d, 1);
        let candidates = if config.task == Task::MultiChoice {
            Some((0..num_candidates).map(|_| vec_of(config.d, 1)).collect())
        } else {
            None
        };
        VideoSample {
            clip_frames,
            clip_motion,
            video_motion,
            question,
            candidates,
            label: Label::Answer(0),
        }
    }

    #[test]
    fn slot_counts_and_physical_sets() {
        // open-ended, per-level: 4 logical slots, 2 physical sets.
        let mut config = HierarchyConfig::new(4, 2, 4, Task::OpenEnded);
        config.sharing = Sharing::PerLevel;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        assert_eq!(plan.slots.len(), 4);
        assert_eq!(registry.num_physical(), 2);

        // multi-choice, per-module: 6 logical slots, 6 physical sets.
        let config = HierarchyConfig::new(4, 2, 4, Task::MultiChoice);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        assert_eq!(plan.slots.len(), 6);
        assert_eq!(registry.num_physical(), 6);

        // open-ended, per-module: 4 physical sets.
        let config = HierarchyConfig::new(4, 2, 4, Task::OpenEnded);
        let (_, registry) = build_network::<f64>(config, &mut rng).unwrap();
        assert_eq!(registry.num_physical(), 4);
    }

    #[test]
    fn aggregating_slot_is_last_and_question_conditioned() {
        let config = HierarchyConfig::new(4, 2, 4, Task::MultiChoice);
        let plan = NetworkPlan::new(config).unwrap();
        for level in [Level::Clip, Level::Video] {
            let slots: Vec<&SlotSpec> = plan.slots_of(level).map(|(_, s)| s).collect();
            assert_eq!(slots.len(), 3);
            assert_eq!(slots[0].context, ContextKind::Motion);
            assert_eq!(slots[1].context, ContextKind::Candidate);
            assert_eq!(slots[2].context, ContextKind::Question);
            assert!(slots[2].config.aggregate_output);
            assert!(!slots[0].config.aggregate_output);
            assert!(!slots[1].config.aggregate_output);
        }
    }

    #[test]
    fn forward_embedding_has_length_d() {
        let config = HierarchyConfig::new(6, 2, 4, Task::OpenEnded);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        let sample = sample_for(&config, 9, 0);
        let mut tape = Tape::new();
        let taped = registry.insert(&mut tape);
        let fwd = network_forward(&mut tape, &sample, &plan, &taped).unwrap();
        assert_eq!(fwd.runs.len(), 1);
        assert_eq!(tape.value(fwd.runs[0].embedding).shape_string(), "6x1");
    }

    #[test]
    fn multi_choice_runs_once_per_candidate() {
        let config = HierarchyConfig::new(4, 2, 4, Task::MultiChoice);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        let sample = sample_for(&config, 5, 5);
        let mut tape = Tape::new();
        let taped = registry.insert(&mut tape);
        let fwd = network_forward(&mut tape, &sample, &plan, &taped).unwrap();
        assert_eq!(fwd.runs.len(), 5);
        for run in &fwd.runs {
            assert_eq!(tape.value(run.embedding).shape_string(), "4x1");
        }
    }

    #[test]
    fn sharing_mode_does_not_change_forward_values() {
        // Same physical weights bound per-level vs per-module must agree
        // exactly on the first forward.
        let mut config = HierarchyConfig::new(4, 2, 4, Task::OpenEnded);
        config.sharing = Sharing::PerLevel;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        let sample = sample_for(&config, 17, 0);

        let mut tape = Tape::new();
        let taped = registry.insert(&mut tape);
        let fwd = network_forward(&mut tape, &sample, &plan, &taped).unwrap();
        let shared_out = tape.value(fwd.runs[0].embedding).clone();

        let unshared = registry.unshared_clone();
        let mut plan2 = plan.clone();
        plan2.config.sharing = Sharing::PerModule;
        let mut tape2 = Tape::new();
        let taped2 = unshared.insert(&mut tape2);
        let fwd2 = network_forward(&mut tape2, &sample, &plan2, &taped2).unwrap();
        let unshared_out = tape2.value(fwd2.runs[0].embedding).clone();

        assert_eq!(shared_out, unshared_out);
    }

    #[test]
    fn clips_are_independent_below_the_video_level() {
        let config = HierarchyConfig::new(4, 4, 4, Task::OpenEnded);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        let base = sample_for(&config, 21, 0);
        let mut perturbed = base.clone();
        perturbed.clip_frames[1][(2, 1)] += 0.5;

        let run = |s: &VideoSample<f64>| {
            let mut tape = Tape::new();
            let taped = registry.insert(&mut tape);
            let fwd = network_forward(&mut tape, s, &plan, &taped).unwrap();
            fwd.runs[0]
                .clip_embeddings
                .iter()
                .map(|&id| tape.value(id).clone())
                .collect::<Vec<_>>()
        };
        let a = run(&base);
        let b = run(&perturbed);
        assert_eq!(a[0], b[0]);
        assert_eq!(a[2], b[2]);
        assert_eq!(a[3], b[3]);
        assert_ne!(a[1], b[1]);
    }

    #[test]
    fn candidate_edits_do_not_leak_across_runs() {
        let config = HierarchyConfig::new(4, 2, 4, Task::MultiChoice);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        let base = sample_for(&config, 30, 3);
        let mut perturbed = base.clone();
        perturbed.candidates.as_mut().unwrap()[2][(1, 0)] += 1.0;

        let run = |s: &VideoSample<f64>| {
            let mut tape = Tape::new();
            let taped = registry.insert(&mut tape);
            let fwd = network_forward(&mut tape, s, &plan, &taped).unwrap();
            fwd.runs
                .iter()
                .map(|r| tape.value(r.embedding).clone())
                .collect::<Vec<_>>()
        };
        let a = run(&base);
        let b = run(&perturbed);
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert_ne!(a[2], b[2]);
    }

    #[test]
    fn warm_up_ignores_the_question() {
        let mut config = HierarchyConfig::new(4, 2, 4, Task::OpenEnded);
        config.warm_up_mode = true;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        let base = sample_for(&config, 40, 0);
        let mut perturbed = base.clone();
        perturbed.question = Matrix::from_fn(4, 1, |i, _| 100.0 + i as f64);

        let run = |s: &VideoSample<f64>| {
            let mut tape = Tape::new();
            let taped = registry.insert(&mut tape);
            let fwd = network_forward(&mut tape, s, &plan, &taped).unwrap();
            tape.value(fwd.runs[0].embedding).clone()
        };
        assert_eq!(run(&base), run(&perturbed));
    }

    #[test]
    fn sample_validation_catches_inconsistencies() {
        let config = HierarchyConfig::new(4, 2, 4, Task::OpenEnded);
        let mut sample = sample_for(&config, 50, 0);
        sample.candidates = Some(vec![Matrix::zeros(4, 1)]);
        assert!(matches!(
            sample.validate(&config),
            Err(Error::Config(_))
        ));

        let mut sample = sample_for(&config, 50, 0);
        sample.question = Matrix::zeros(3, 1);
        assert!(matches!(sample.validate(&config), Err(Error::Shape { .. })));
    }

    #[test]
    fn shared_gradients_match_unshared_sums() {
        let mut config = HierarchyConfig::new(4, 2, 4, Task::OpenEnded);
        config.sharing = Sharing::PerLevel;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        let sample = sample_for(&config, 60, 0);
        let report = shared_gradient_check(&plan, &registry, &sample, 1e-10).unwrap();
        assert!(
            report.passed(),
            "max abs diff {}",
            report.max_abs_diff()
        );
    }

    #[test]
    fn shared_gradient_check_requires_per_level() {
        let config = HierarchyConfig::new(4, 2, 4, Task::OpenEnded);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (plan, registry) = build_network::<f64>(config, &mut rng).unwrap();
        let sample = sample_for(&config, 61, 0);
        assert!(matches!(
            shared_gradient_check(&plan, &registry, &sample, 1e-10),
            Err(Error::Usage(_))
        ));
    }
}

//! Procedural toy video-QA generator.
//!
//! Stands in for pre-trained feature extractors and real datasets: every
//! sample is built from a small set of orthonormal event signatures so
//! that each label is recoverable from the features by construction. At
//! zero noise a closed-form classifier scores 100% on every task.
//!
//! Construction per sample:
//! - each frame is the signature of its active event plus isotropic
//!   Gaussian noise (noise is relative to the unit signature norm);
//! - clip motion is the mean frame-to-frame difference within the clip,
//!   the video motion is the mean of clip motions;
//! - the question embedding is a fixed per-task query vector; counting
//!   questions add the queried event's signature on top ("which event"
//!   information lives in the question, so the label is identifiable);
//! - open-ended and multiple-choice videos carry a strict-majority
//!   dominant event; counting videos draw every frame independently.
//!
//! Multiple-choice candidates are signatures of other event types, so
//! distractors are maximally relevant; the question itself carries no
//! event information.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Label, Task, VideoSample};
use crate::matrix::Matrix;

/// Generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub d: usize,
    pub num_clips: usize,
    pub frames_per_clip: usize,
    /// Number of event types E.
    pub num_event_types: usize,
    pub task: Task,
    pub num_samples: usize,
    /// Answer-vocabulary size; labels for open-ended questions live in
    /// [0, answer_vocab_size).
    pub answer_vocab_size: usize,
    /// Candidates per multiple-choice question.
    pub num_candidates: usize,
    /// Standard deviation of per-component frame noise, relative to the
    /// unit signature norm.
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(task: Task) -> Self {
        // Candidates are signatures of distinct events, so five candidates
        // need at least five event types.
        let events = if task == Task::MultiChoice { 5 } else { 4 };
        SynthSpec {
            d: 32,
            num_clips: 2,
            frames_per_clip: 4,
            num_event_types: events,
            task,
            num_samples: 200,
            answer_vocab_size: events,
            num_candidates: 5,
            noise_std: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0
            || self.num_clips == 0
            || self.frames_per_clip == 0
            || self.num_event_types == 0
            || self.num_samples == 0
        {
            return Err(Error::Usage(
                "synthetic spec requires positive dimensions and counts".into(),
            ));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Usage(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        if self.num_event_types > self.answer_vocab_size {
            return Err(Error::Usage(format!(
                "event types ({}) exceed the answer vocabulary ({})",
                self.num_event_types, self.answer_vocab_size
            )));
        }
        if self.num_event_types > self.d {
            return Err(Error::Usage(format!(
                "cannot build {} orthonormal signatures in dimension {}",
                self.num_event_types, self.d
            )));
        }
        if self.task == Task::MultiChoice {
            if self.num_candidates < 2 {
                return Err(Error::Usage(
                    "multi-choice needs at least two candidates".into(),
                ));
            }
            if self.num_candidates > self.num_event_types {
                return Err(Error::Usage(format!(
                    "num_candidates ({}) exceeds available event types ({})",
                    self.num_candidates, self.num_event_types
                )));
            }
        }
        Ok(())
    }

    pub fn frames_total(&self) -> usize {
        self.num_clips * self.frames_per_clip
    }
}

/// Generated samples plus the ground-truth geometry the analytic oracle
/// needs. Only the samples are persisted to disk.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub samples: Vec<VideoSample<f32>>,
    /// Orthonormal event signatures, one d-vector per event type.
    pub signatures: Vec<Vec<f64>>,
    /// Per-task query base vector.
    pub query_base: Vec<f64>,
    /// Active event of every frame, flattened clip-major; used by tests.
    pub frame_events: Vec<Vec<usize>>,
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Gaussian draws orthonormalized by Gram-Schmidt. Requires count <= d;
/// orthonormality makes nearest-signature decoding exact at zero noise.
fn orthonormal_signatures(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(count);
    while signatures.len() < count {
        let mut v = standard_normal_vec(rng, d);
        for prev in &signatures {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // degenerate draw, resample
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        signatures.push(v);
    }
    signatures
}

fn sample_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Strict-majority dominant frame count: at least 60% of frames and
/// always more than half.
fn dominant_frames(total: usize) -> usize {
    ((total * 3).div_ceil(5)).max(total / 2 + 1).min(total)
}

/// Generate the full dataset. Same spec, same bytes.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut setup_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let signatures = orthonormal_signatures(&mut setup_rng, spec.num_event_types, spec.d);
    let mut query_base = standard_normal_vec(&mut setup_rng, spec.d);
    normalize(&mut query_base);

    let total_frames = spec.frames_total();
    let mut samples = Vec::with_capacity(spec.num_samples);
    let mut frame_events = Vec::with_capacity(spec.num_samples);

    for index in 0..spec.num_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, index));

        // Event script for every frame, plus the sample's key event.
        let key_event = rng.gen_range(0..spec.num_event_types);
        let events: Vec<usize> = match spec.task {
            Task::Count => (0..total_frames)
                .map(|_| rng.gen_range(0..spec.num_event_types))
                .collect(),
            _ => {
                let k = dominant_frames(total_frames);
                let mut order: Vec<usize> = (0..total_frames).collect();
                for i in (1..order.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    order.swap(i, j);
                }
                let mut events = vec![0usize; total_frames];
                for (rank, &frame) in order.iter().enumerate() {
                    events[frame] = if rank < k {
                        key_event
                    } else if spec.num_event_types == 1 {
                        key_event
                    } else {
                        // Uniform over the other event types.
                        let mut other = rng.gen_range(0..spec.num_event_types - 1);
                        if other >= key_event {
                            other += 1;
                        }
                        other
                    };
                }
                events
            }
        };

        // Frames in f64, cast to f32 at the end.
        let mut clip_frames_f64: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.num_clips);
        for clip in 0..spec.num_clips {
            let mut frames = Vec::with_capacity(spec.frames_per_clip);
            for t in 0..spec.frames_per_clip {
                let event = events[clip * spec.frames_per_clip + t];
                let mut frame = signatures[event].clone();
                if spec.noise_std > 0.0 {
                    for x in frame.iter_mut() {
                        let noise: f64 = rng.sample(StandardNormal);
                        *x += spec.noise_std * noise;
                    }
                }
                frames.push(frame);
            }
            clip_frames_f64.push(frames);
        }

        // Motion: mean frame-to-frame difference per clip, then the mean
        // of clip motions.
        let clip_motion_f64: Vec<Vec<f64>> = clip_frames_f64
            .iter()
            .map(|frames| {
                let mut motion = vec![0.0; spec.d];
                if frames.len() > 1 {
                    let steps = (frames.len() - 1) as f64;
                    for w in frames.windows(2) {
                        for i in 0..spec.d {
                            motion[i] += (w[1][i] - w[0][i]) / steps;
                        }
                    }
                }
                motion
            })
            .collect();
        let mut video_motion_f64 = vec![0.0; spec.d];
        for motion in &clip_motion_f64 {
            for i in 0..spec.d {
                video_motion_f64[i] += motion[i] / spec.num_clips as f64;
            }
        }

        // Question embedding and label.
        let (question_f64, label) = match spec.task {
            Task::OpenEnded => (query_base.clone(), Label::Answer(key_event)),
            Task::Count => {
                let mut q = query_base.clone();
                for i in 0..spec.d {
                    q[i] += signatures[key_event][i];
                }
                let count = events.iter().filter(|&&e| e == key_event).count();
                (q, Label::Count(count as u32))
            }
            Task::MultiChoice => (query_base.clone(), Label::Answer(key_event)),
        };

        // Candidates: the key event's signature among distractor
        // signatures of other events, in shuffled order.
        let (candidates, label) = if spec.task == Task::MultiChoice {
            let mut others: Vec<usize> =
                (0..spec.num_event_types).filter(|&e| e != key_event).collect();
            for i in (1..others.len()).rev() {
                let j = rng.gen_range(0..=i);
                others.swap(i, j);
            }
            let mut chosen: Vec<usize> = others
                .into_iter()
                .take(spec.num_candidates - 1)
                .collect();
            let correct_pos = rng.gen_range(0..=chosen.len());
            chosen.insert(correct_pos, key_event);
            let cands: Vec<Matrix<f32>> = chosen
                .iter()
                .map(|&e| {
                    Matrix::from_vec(
                        spec.d,
                        1,
                        signatures[e].iter().map(|&v| v as f32).collect(),
                    )
                })
                .collect();
            (Some(cands), Label::Candidate(correct_pos))
        } else {
            (None, label)
        };

        let to_f32_col = |v: &[f64]| Matrix::from_vec(spec.d, 1, v.iter().map(|&x| x as f32).collect());
        let sample = VideoSample {
            clip_frames: clip_frames_f64
                .iter()
                .map(|frames| {
                    Matrix::from_fn(spec.d, spec.frames_per_clip, |i, t| frames[t][i] as f32)
                })
                .collect(),
            clip_motion: clip_motion_f64.iter().map(|m| to_f32_col(m)).collect(),
            video_motion: to_f32_col(&video_motion_f64),
            question: to_f32_col(&question_f64),
            candidates,
            label,
        };
        samples.push(sample);
        frame_events.push(events);
    }

    Ok(SynthData {
        spec: *spec,
        samples,
        signatures,
        query_base,
        frame_events,
    })
}

/// Closed-form (non-learned) prediction from the generative geometry:
/// nearest signature on the mean frame for classification-style tasks,
/// nearest-signature frame counting for the count task.
pub fn analytic_predict(data: &SynthData, sample: &VideoSample<f32>) -> Label {
    let spec = &data.spec;
    let d = spec.d;

    let mean_frame: Vec<f64> = {
        let mut acc = vec![0.0f64; d];
        let mut frames = 0usize;
        for clip in &sample.clip_frames {
            for t in 0..clip.cols() {
                for i in 0..d {
                    acc[i] += clip[(i, t)] as f64;
                }
                frames += 1;
            }
        }
        acc.iter_mut().for_each(|v| *v /= frames as f64);
        acc
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let nearest_signature = |v: &[f64]| {
        (0..spec.num_event_types)
            .max_by(|&a, &b| dot(v, &data.signatures[a]).total_cmp(&dot(v, &data.signatures[b])))
            .unwrap()
    };

    match spec.task {
        Task::OpenEnded => Label::Answer(nearest_signature(&mean_frame)),
        Task::Count => {
            // Recover the queried event from the question, then count
            // frames whose nearest signature matches it.
            let residual: Vec<f64> = (0..d)
                .map(|i| sample.question[(i, 0)] as f64 - data.query_base[i])
                .collect();
            let queried = nearest_signature(&residual);
            let mut count = 0u32;
            for clip in &sample.clip_frames {
                for t in 0..clip.cols() {
                    let frame: Vec<f64> = (0..d).map(|i| clip[(i, t)] as f64).collect();
                    if nearest_signature(&frame) == queried {
                        count += 1;
                    }
                }
            }
            Label::Count(count)
        }
        Task::MultiChoice => {
            let candidates = sample.candidates.as_ref().expect("multi-choice sample");
            let best = candidates
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    let va: Vec<f64> = (0..d).map(|i| a[(i, 0)] as f64).collect();
                    let vb: Vec<f64> = (0..d).map(|i| b[(i, 0)] as f64).collect();
                    dot(&mean_frame, &va).total_cmp(&dot(&mean_frame, &vb))
                })
                .map(|(k, _)| k)
                .unwrap();
            Label::Candidate(best)
        }
    }
}

/// Fraction of samples the analytic oracle labels exactly right.
pub fn analytic_accuracy(data: &SynthData) -> f64 {
    let correct = data
        .samples
        .iter()
        .filter(|s| analytic_predict(data, s) == s.label)
        .count();
    correct as f64 / data.samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sigs = orthonormal_signatures(&mut rng, 4, 16);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = sigs[i].iter().zip(&sigs[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "({i},{j}) -> {dot}");
            }
        }
    }

    #[test]
    fn zero_noise_oracle_is_perfect_on_every_task() {
        for task in [Task::OpenEnded, Task::Count, Task::MultiChoice] {
            let mut spec = SynthSpec::new(task);
            spec.noise_std = 0.0;
            spec.num_samples = 100;
            let data = generate(&spec).unwrap();
            assert_eq!(analytic_accuracy(&data), 1.0, "task {task:?}");
        }
    }

    #[test]
    fn moderate_noise_keeps_oracle_above_95_percent() {
        for task in [Task::OpenEnded, Task::Count, Task::MultiChoice] {
            let mut spec = SynthSpec::new(task);
            spec.noise_std = 0.1; // 0.1 of the unit signature norm
            spec.num_samples = 1000;
            let data = generate(&spec).unwrap();
            let acc = analytic_accuracy(&data);
            assert!(acc >= 0.95, "task {task:?}: oracle accuracy {acc}");
        }
    }

    #[test]
    fn count_labels_stay_within_bounds() {
        let mut spec = SynthSpec::new(Task::Count);
        spec.num_samples = 500;
        let data = generate(&spec).unwrap();
        let bound = spec.frames_total() as u32;
        for sample in &data.samples {
            match sample.label {
                Label::Count(c) => assert!(c <= bound),
                other => panic!("count task produced {other:?}"),
            }
        }
    }

    #[test]
    fn open_ended_labels_are_roughly_uniform() {
        let mut spec = SynthSpec::new(Task::OpenEnded);
        spec.num_samples = 10_000;
        let data = generate(&spec).unwrap();
        let mut counts = vec![0usize; spec.num_event_types];
        for sample in &data.samples {
            if let Label::Answer(a) = sample.label {
                counts[a] += 1;
            }
        }
        let expected = spec.num_samples as f64 / spec.num_event_types as f64;
        for (event, &count) in counts.iter().enumerate() {
            let deviation = (count as f64 - expected).abs() / spec.num_samples as f64;
            assert!(
                deviation <= 0.02,
                "event {event}: count {count}, deviation {deviation}"
            );
        }
    }

    #[test]
    fn dominant_event_has_strict_majority() {
        let mut spec = SynthSpec::new(Task::OpenEnded);
        spec.num_samples = 50;
        let data = generate(&spec).unwrap();
        for (sample, events) in data.samples.iter().zip(&data.frame_events) {
            let label = match sample.label {
                Label::Answer(a) => a,
                _ => unreachable!(),
            };
            let mut counts = vec![0usize; spec.num_event_types];
            for &e in events {
                counts[e] += 1;
            }
            let dominant = counts[label];
            for (e, &c) in counts.iter().enumerate() {
                if e != label {
                    assert!(dominant > c, "event {e} count {c} >= dominant {dominant}");
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::new(Task::MultiChoice);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn impossible_specs_are_usage_errors() {
        let mut spec = SynthSpec::new(Task::MultiChoice);
        spec.num_candidates = 10; // > num_event_types
        assert!(matches!(generate(&spec), Err(Error::Usage(_))));

        let mut spec = SynthSpec::new(Task::OpenEnded);
        spec.num_event_types = 6;
        spec.answer_vocab_size = 4;
        assert!(matches!(generate(&spec), Err(Error::Usage(_))));

        let mut spec = SynthSpec::new(Task::OpenEnded);
        spec.noise_std = -0.5;
        assert!(matches!(generate(&spec), Err(Error::Usage(_))));
    }

    #[test]
    fn multi_choice_candidates_contain_exactly_one_signature_match() {
        let mut spec = SynthSpec::new(Task::MultiChoice);
        spec.noise_std = 0.0;
        spec.num_samples = 40;
        let data = generate(&spec).unwrap();
        for (sample, events) in data.samples.iter().zip(&data.frame_events) {
            let label = match sample.label {
                Label::Candidate(k) => k,
                other => panic!("multi-choice produced {other:?}"),
            };
            // Majority event of the script must equal the labeled candidate.
            let mut counts = vec![0usize; spec.num_event_types];
            for &e in events {
                counts[e] += 1;
            }
            let dominant = counts
                .iter()
                .enumerate()
                .max_by_key(|(_, &c)| c)
                .map(|(e, _)| e)
                .unwrap();
            let cand = &sample.candidates.as_ref().unwrap()[label];
            for i in 0..spec.d {
                assert!((cand[(i, 0)] as f64 - data.signatures[dominant][i]).abs() < 1e-6);
            }
        }
    }
}

//! Fixed-capacity episode buffer feeding both training loops.
//!
//! Episodes are immutable once stored; samplers hand out shared pointers,
//! so a single writer can interleave with readers between updates. When the
//! buffer is full the oldest episode is evicted first.

use crate::rng;
use crate::trace::{EpisodeTrace, TraceError};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("episode has {got} steps, buffer expects {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("episode observation chain is broken at step {step}")]
    BrokenChain { step: usize },
    #[error("episode has {states} true states for {steps} steps")]
    StateCount { states: usize, steps: usize },
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
}

/// One training tuple: the observation and target the controller saw, the
/// control it issued, and the observation that followed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTuple {
    pub y: [f64; 4],
    pub target: [f64; 4],
    pub u: [f64; 2],
    pub y_next: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub iteration: u64,
    pub variant: String,
}

/// A fixed-length episode as the training loops consume it, plus the true
/// state trajectory for diagnostics and persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub meta: EpisodeMeta,
    pub steps: Vec<StepTuple>,
    /// True exposed states `x_0 ..= x_T`.
    pub true_states: Vec<[f64; 4]>,
    /// Observation at reset, before the first step.
    pub y0: [f64; 4],
}

impl EpisodeRecord {
    /// Builds the training view from a recorded trace.
    pub fn from_trace(meta: EpisodeMeta, trace: &EpisodeTrace) -> Self {
        let mut steps = Vec::with_capacity(trace.len());
        let mut prev_y = trace.y0;
        let mut true_states = Vec::with_capacity(trace.len() + 1);
        true_states.push(trace.x0);
        for s in &trace.steps {
            steps.push(StepTuple {
                y: prev_y,
                target: s.target,
                u: s.u,
                y_next: s.y,
            });
            prev_y = s.y;
            true_states.push(s.x);
        }
        EpisodeRecord {
            meta,
            steps,
            true_states,
            y0: trace.y0,
        }
    }

    pub fn to_trace(&self) -> EpisodeTrace {
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(t, s)| crate::trace::TraceStep {
                x: self.true_states[t + 1],
                u: s.u,
                y: s.y_next,
                target: s.target,
            })
            .collect();
        EpisodeTrace {
            x0: self.true_states[0],
            y0: self.y0,
            steps,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, expected_len: usize) -> Result<(), MemoryError> {
        if self.steps.len() != expected_len {
            return Err(MemoryError::WrongLength {
                expected: expected_len,
                got: self.steps.len(),
            });
        }
        if self.true_states.len() != self.steps.len() + 1 {
            return Err(MemoryError::StateCount {
                states: self.true_states.len(),
                steps: self.steps.len(),
            });
        }
        if !self.steps.is_empty() && self.steps[0].y != self.y0 {
            return Err(MemoryError::BrokenChain { step: 0 });
        }
        for (t, pair) in self.steps.windows(2).enumerate() {
            if pair[0].y_next != pair[1].y {
                return Err(MemoryError::BrokenChain { step: t + 1 });
            }
        }
        Ok(())
    }
}

/// Ring of up to `capacity` episodes of a fixed length.
pub struct MemoryBuffer {
    capacity: usize,
    episode_len: usize,
    episodes: VecDeque<Arc<EpisodeRecord>>,
    /// Insertion counters of the stored episodes, aligned with `episodes`.
    counters: VecDeque<u64>,
    inserted: u64,
}

impl MemoryBuffer {
    pub fn new(capacity: usize, episode_len: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        MemoryBuffer {
            capacity,
            episode_len,
            episodes: VecDeque::new(),
            counters: VecDeque::new(),
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<EpisodeRecord>> {
        self.episodes.iter()
    }

    /// Validates and stores an episode, evicting the oldest when full.
    pub fn push(&mut self, episode: EpisodeRecord) -> Result<(), MemoryError> {
        episode.validate(self.episode_len)?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
            self.counters.pop_front();
        }
        self.episodes.push_back(Arc::new(episode));
        self.counters.push_back(self.inserted);
        self.inserted += 1;
        Ok(())
    }

    /// Uniform sample of `n` episodes: without replacement while `n` fits,
    /// with replacement once `n` exceeds the current size.
    pub fn sample(
        &self,
        n: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<Arc<EpisodeRecord>>, MemoryError> {
        if self.episodes.is_empty() {
            return Err(MemoryError::Empty);
        }
        let size = self.episodes.len();
        let mut out = Vec::with_capacity(n);
        if n <= size {
            // Partial Fisher-Yates over the index range.
            let mut idx: Vec<usize> = (0..size).collect();
            for i in 0..n {
                let j = i + rng.random_range(0..size - i);
                idx.swap(i, j);
                out.push(Arc::clone(&self.episodes[idx[i]]));
            }
        } else {
            for _ in 0..n {
                let j = rng.random_range(0..size);
                out.push(Arc::clone(&self.episodes[j]));
            }
        }
        Ok(out)
    }

    /// Writes every episode as a trace CSV plus a manifest index.
    pub fn save_dir(&self, dir: &Path) -> Result<(), MemoryError> {
        let io_err = |path: &Path, source| MemoryError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut manifest = String::from(
            "file,counter,seed,iteration,variant,x01,x02,x03,x04,y01,y02,y03,y04\n",
        );
        for (ep, counter) in self.episodes.iter().zip(self.counters.iter()) {
            let name = format!("episode_{counter:08}.csv");
            // Episode files are immutable once written; only the manifest
            // needs refreshing on later saves.
            let path = dir.join(&name);
            if !path.exists() {
                ep.to_trace().write_csv(&path)?;
            }
            manifest.push_str(&format!(
                "{name},{counter},{},{},{}",
                ep.meta.seed, ep.meta.iteration, ep.meta.variant
            ));
            for v in ep.true_states[0].iter().chain(ep.y0.iter()) {
                manifest.push_str(&format!(",{v}"));
            }
            manifest.push('\n');
        }
        let mpath = dir.join("manifest.csv");
        fs::write(&mpath, manifest).map_err(|e| io_err(&mpath, e))
    }

    /// Rebuilds a buffer from [`save_dir`] output.
    pub fn load_dir(dir: &Path, capacity: usize, episode_len: usize) -> Result<Self, MemoryError> {
        let mpath = dir.join("manifest.csv");
        let content = fs::read_to_string(&mpath).map_err(|source| MemoryError::Io {
            path: mpath.display().to_string(),
            source,
        })?;
        let mut buffer = MemoryBuffer::new(capacity, episode_len);
        let mut max_counter = 0u64;
        for (lineno, line) in content.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 13 {
                return Err(MemoryError::Manifest {
                    line: lineno + 1,
                    detail: format!("expected 13 fields, got {}", fields.len()),
                });
            }
            let bad = |what: &str| MemoryError::Manifest {
                line: lineno + 1,
                detail: format!("cannot parse {what}"),
            };
            let counter: u64 = fields[1].parse().map_err(|_| bad("counter"))?;
            let seed: u64 = fields[2].parse().map_err(|_| bad("seed"))?;
            let iteration: u64 = fields[3].parse().map_err(|_| bad("iteration"))?;
            let variant = fields[4].to_string();
            let mut vals = [0.0f64; 8];
            for (i, f) in fields[5..].iter().enumerate() {
                vals[i] = f.parse().map_err(|_| bad("state"))?;
            }
            let x0 = [vals[0], vals[1], vals[2], vals[3]];
            let y0 = [vals[4], vals[5], vals[6], vals[7]];
            let trace = EpisodeTrace::read_csv(&dir.join(fields[0]), x0, y0)?;
            let record = EpisodeRecord::from_trace(
                EpisodeMeta {
                    seed,
                    iteration,
                    variant,
                },
                &trace,
            );
            max_counter = max_counter.max(counter);
            buffer.push(record)?;
            *buffer.counters.back_mut().expect("just pushed") = counter;
        }
        if !buffer.is_empty() {
            buffer.inserted = max_counter + 1;
        }
        Ok(buffer)
    }
}

/// Stream for sampling batches at a given (iteration, update) position.
pub fn sampling_stream(seed: u64, iteration: u64, update: u64) -> ChaCha12Rng {
    rng::stream(seed, rng::Purpose::MemorySampling, &[iteration, update])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn episode(tag: u64, len: usize) -> EpisodeRecord {
        let mut trace = EpisodeTrace::new([0.0; 4], [0.0; 4]);
        let mut y = [0.0; 4];
        for t in 0..len {
            let y_next = [tag as f64, t as f64, 0.1, -0.1];
            trace.steps.push(crate::trace::TraceStep {
                x: y_next,
                u: [0.5, -0.5],
                y: y_next,
                target: [0.7, 0.0, 0.0, 0.0],
            });
            y = y_next;
        }
        let _ = y;
        EpisodeRecord::from_trace(
            EpisodeMeta {
                seed: tag,
                iteration: 0,
                variant: "stationary".to_string(),
            },
            &trace,
        )
    }

    #[test]
    fn push_grows_until_capacity_then_evicts_oldest() {
        let mut buf = MemoryBuffer::new(3, 5);
        buf.push(episode(0, 5)).unwrap();
        assert_eq!(buf.len(), 1);
        for tag in 1..4 {
            buf.push(episode(tag, 5)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 4);
        // Episode 0 must be gone.
        assert!(buf.iter().all(|e| e.meta.seed != 0));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let mut buf = MemoryBuffer::new(3, 5);
        let err = buf.push(episode(0, 4)).unwrap_err();
        assert!(matches!(err, MemoryError::WrongLength { expected: 5, got: 4 }));
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut buf = MemoryBuffer::new(3, 5);
        let mut ep = episode(0, 5);
        // steps[2].y_next no longer matches steps[3].y, so the chain is
        // broken entering step 3.
        ep.steps[2].y_next[1] += 1.0;
        let err = buf.push(ep).unwrap_err();
        assert!(matches!(err, MemoryError::BrokenChain { step: 3 }));
    }

    #[test]
    fn sampling_empty_buffer_errors() {
        let buf = MemoryBuffer::new(3, 5);
        let mut rng = stream(1, Purpose::MemorySampling, &[0]);
        assert!(matches!(buf.sample(1, &mut rng), Err(MemoryError::Empty)));
    }

    #[test]
    fn oversampling_falls_back_to_replacement() {
        let mut buf = MemoryBuffer::new(4, 5);
        buf.push(episode(7, 5)).unwrap();
        let mut rng = stream(1, Purpose::MemorySampling, &[1]);
        let got = buf.sample(3, &mut rng).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|e| e.meta.seed == 7));
    }

    #[test]
    fn full_sample_is_a_permutation() {
        let mut buf = MemoryBuffer::new(8, 5);
        for tag in 0..8 {
            buf.push(episode(tag, 5)).unwrap();
        }
        let mut rng = stream(2, Purpose::MemorySampling, &[2]);
        let got = buf.sample(8, &mut rng).unwrap();
        let mut seeds: Vec<u64> = got.iter().map(|e| e.meta.seed).collect();
        seeds.sort_unstable();
        assert_eq!(seeds, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn single_draws_are_uniform_within_three_sigma() {
        let k = 10usize;
        let mut buf = MemoryBuffer::new(k, 5);
        for tag in 0..k as u64 {
            buf.push(episode(tag, 5)).unwrap();
        }
        let draws = 20_000usize;
        let mut counts = vec![0usize; k];
        let mut rng = stream(3, Purpose::MemorySampling, &[3]);
        for _ in 0..draws {
            let e = &buf.sample(1, &mut rng).unwrap()[0];
            counts[e.meta.seed as usize] += 1;
        }
        let p = 1.0 / k as f64;
        let expect = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (tag, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() <= 3.0 * sigma,
                "episode {tag} drawn {c} times, expected {expect:.0} +/- {:.0}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn sampling_does_not_mutate_contents() {
        let mut buf = MemoryBuffer::new(4, 5);
        for tag in 0..4 {
            buf.push(episode(tag, 5)).unwrap();
        }
        let before: Vec<EpisodeRecord> = buf.iter().map(|e| (**e).clone()).collect();
        let mut rng = stream(4, Purpose::MemorySampling, &[4]);
        for _ in 0..10 {
            buf.sample(4, &mut rng).unwrap();
        }
        let after: Vec<EpisodeRecord> = buf.iter().map(|e| (**e).clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut buf = MemoryBuffer::new(5, 5);
        for tag in 0..7 {
            buf.push(episode(tag, 5)).unwrap();
        }
        buf.save_dir(dir.path()).unwrap();
        let back = MemoryBuffer::load_dir(dir.path(), 5, 5).unwrap();
        assert_eq!(back.len(), buf.len());
        assert_eq!(back.inserted(), buf.inserted());
        for (a, b) in buf.iter().zip(back.iter()) {
            assert_eq!(**a, **b);
        }
    }
}

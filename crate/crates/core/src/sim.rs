//! Episode simulator for the action-triggered observation protocol.
//!
//! Every round the simulator
//!
//! 1. executes the next action of the committed sequence, collects its reward
//!    and samples the hidden successor state,
//! 2. ends the episode with probability `1 - gamma`, revealing `(∅, G)`,
//! 3. otherwise triggers a data-burst with probability `beta(a)`, revealing
//!    the current state and the reward accumulated since the last burst.
//!
//! After a burst the agent is asked for a fresh sequence.

use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::LinearAtstMdp;
use crate::sequence::ActionSequence;

/// Deterministic random stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

/// Stream purposes, packed into bits 32..40 of a stream id.
pub mod purpose {
    pub const EPISODE: u64 = 1;
    pub const DATASET: u64 = 2;
    pub const ROLLOUT: u64 = 3;
    pub const MODEL: u64 = 4;
    pub const SAMPLES: u64 = 5;
}

/// Packs `(run, purpose, index)` into one stream id so that streams used for
/// different things never overlap.
pub fn stream_id(run: u64, purpose: u64, index: u64) -> u64 {
    debug_assert!(index < 1 << 32 && purpose < 1 << 8);
    (run << 40) | (purpose << 32) | index
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A sibling stream with the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }
}

/// Top-level seed plus a run index. Every stream of one run derives from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeed {
    pub seed: u64,
    pub run: u64,
}

impl RunSeed {
    pub fn new(seed: u64, run: u64) -> Self {
        Self { seed, run }
    }

    pub fn rng(&self, purpose: u64, index: u64) -> SeededRng {
        SeededRng::new(self.seed, stream_id(self.run, purpose, index))
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Episode length `H ~ Geom(1 - gamma)` on `{1, 2, ...}`.
pub fn sample_geometric_horizon<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> u64 {
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    let failures = Geometric::new(1.0 - gamma)
        .expect("1 - gamma is a valid probability")
        .sample(rng);
    failures.saturating_add(1)
}

/// What the agent sees at one data-burst, plus the segment length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstTuple {
    pub observed_state: usize,
    pub action_seq: ActionSequence,
    pub aggregated_reward: f64,
    /// `None` when the episode ended during this segment.
    pub next_observed: Option<usize>,
    /// Number of actions of `action_seq` that were executed.
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub initial_state: usize,
    pub bursts: Vec<BurstTuple>,
    pub total_reward: f64,
    pub rounds: usize,
}

/// Plays one episode. `agent(state, u)` is asked for a sequence whenever a
/// state is revealed; `u` counts bursts from zero.
///
/// Each round draws exactly three uniforms (transition, termination, burst),
/// so a fixed stream always produces the same episode.
pub fn run_episode<F, R>(
    mdp: &LinearAtstMdp,
    initial_state: usize,
    mut agent: F,
    rng: &mut R,
) -> EpisodeTranscript
where
    F: FnMut(usize, usize) -> ActionSequence,
    R: Rng + ?Sized,
{
    assert!(initial_state < mdp.num_states(), "initial state out of range");
    let gamma = mdp.gamma();
    let mut bursts = Vec::new();
    let mut observed = initial_state;
    let mut hidden = initial_state;
    let mut seq = agent(observed, 0);
    let mut pos = 0usize;
    let mut accumulated = 0.0;
    let mut total = 0.0;
    let mut rounds = 0usize;
    loop {
        let action = seq.action_at(pos);
        let reward = mdp.reward(hidden, action);
        accumulated += reward;
        total += reward;
        hidden = mdp.sample_next(hidden, action, rng.random());
        pos += 1;
        rounds += 1;
        let terminate = rng.random::<f64>() >= gamma;
        let burst = rng.random::<f64>() < mdp.beta(action);
        if terminate {
            bursts.push(BurstTuple {
                observed_state: observed,
                action_seq: seq,
                aggregated_reward: accumulated,
                next_observed: None,
                rounds: pos,
            });
            break;
        }
        if burst {
            bursts.push(BurstTuple {
                observed_state: observed,
                action_seq: seq,
                aggregated_reward: accumulated,
                next_observed: Some(hidden),
                rounds: pos,
            });
            observed = hidden;
            accumulated = 0.0;
            pos = 0;
            seq = agent(observed, bursts.len());
        }
    }
    EpisodeTranscript {
        initial_state,
        bursts,
        total_reward: total,
        rounds,
    }
}

#[derive(Serialize)]
struct TranscriptRow<'a> {
    episode: usize,
    burst_index: usize,
    observed_state: &'a str,
    actions_executed: String,
    aggregated_reward: f64,
    next_observed: &'a str,
    rounds_in_segment: usize,
}

/// Writes transcripts as CSV, one row per burst.
pub fn write_transcripts<W: Write>(
    mdp: &LinearAtstMdp,
    episodes: &[EpisodeTranscript],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (k, ep) in episodes.iter().enumerate() {
        for (u, b) in ep.bursts.iter().enumerate() {
            let actions: Vec<&str> = (0..b.rounds)
                .map(|i| mdp.action_names()[b.action_seq.action_at(i)].as_str())
                .collect();
            w.serialize(TranscriptRow {
                episode: k,
                burst_index: u,
                observed_state: &mdp.state_names()[b.observed_state],
                actions_executed: actions.join(" "),
                aggregated_reward: b.aggregated_reward,
                next_observed: b
                    .next_observed
                    .map_or("∅", |s| mdp.state_names()[s].as_str()),
                rounds_in_segment: b.rounds,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_transcripts(
    mdp: &LinearAtstMdp,
    episodes: &[EpisodeTranscript],
    path: impl AsRef<Path>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_transcripts(mdp, episodes, std::io::BufWriter::new(file))
}

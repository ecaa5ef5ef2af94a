//! Background baby behavior: random cry and movement episodes.

use cradlewatch_core::exec::{self, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Cry,
    Move,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub at_ms: u64,
    pub kind: EpisodeKind,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BabyParams {
    /// Mean quiet time between the end of one episode and the next.
    pub mean_interval_ms: f64,
    pub episode_ms: u64,
    /// Probability that an episode is crying rather than moving.
    pub cry_fraction: f64,
}

impl Default for BabyParams {
    fn default() -> Self {
        BabyParams {
            mean_interval_ms: 600_000.0,
            episode_ms: 20_000,
            cry_fraction: 0.5,
        }
    }
}

impl BabyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mean_interval_ms.is_finite() && self.mean_interval_ms > 0.0) {
            return Err(format!("mean_interval_ms must be positive, got {}", self.mean_interval_ms));
        }
        if !(0.0..=1.0).contains(&self.cry_fraction) {
            return Err(format!("cry_fraction must lie in [0, 1], got {}", self.cry_fraction));
        }
        Ok(())
    }
}

/// Episodes starting in `[0, duration_ms)`. Quiet gaps are exponential with
/// the configured mean; episodes never overlap.
pub fn gen_baby(seed: u64, duration_ms: u64, params: &BabyParams) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(1.0 / params.mean_interval_ms).expect("validated mean is positive");
    let mut out = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += gap.sample(&mut rng);
        if t >= duration_ms as f64 {
            return out;
        }
        let kind = if rng.gen_bool(params.cry_fraction) {
            EpisodeKind::Cry
        } else {
            EpisodeKind::Move
        };
        let at_ms = t.floor() as u64;
        out.push(Episode {
            at_ms,
            kind,
            duration_ms: params.episode_ms,
        });
        t = (at_ms + params.episode_ms) as f64;
    }
}

/// Episode counts for `seeds`, computed with the given execution strategy.
pub fn episode_counts(exec: Execution, seeds: &[u64], duration_ms: u64, params: &BabyParams) -> Vec<usize> {
    exec::map(exec, seeds, |&s| gen_baby(s, duration_ms, params).len())
}

//! Seeded network impairment: latency, jitter and loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NetProfile {
    fn default() -> Self {
        Self::ideal()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BadProfile {
    #[error("latency and jitter must be finite and non-negative")]
    Negative,
    #[error("drop probability must be in [0, 1], got {0}")]
    DropOutOfRange(f64),
    #[error("expected latency,jitter,drop,seed: {0}")]
    Syntax(String),
}

impl NetProfile {
    /// Immediate, lossless delivery.
    pub const fn ideal() -> Self {
        Self {
            latency_ms: 0.0,
            jitter_ms: 0.0,
            drop_prob: 0.0,
            seed: 0,
        }
    }

    /// `drop_prob = 1` is accepted as well, for runs where nothing may arrive.
    pub fn new(latency_ms: f64, jitter_ms: f64, drop_prob: f64, seed: u64) -> Result<Self, BadProfile> {
        let p = Self {
            latency_ms,
            jitter_ms,
            drop_prob,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), BadProfile> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.latency_ms) || !ok(self.jitter_ms) {
            return Err(BadProfile::Negative);
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(BadProfile::DropOutOfRange(self.drop_prob));
        }
        Ok(())
    }

    /// Parses the `latency,jitter,drop,seed` command-line form.
    pub fn parse_cli(s: &str) -> Result<Self, BadProfile> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [lat, jit, drop, seed] = parts[..] else {
            return Err(BadProfile::Syntax(s.into()));
        };
        let num = |x: &str| x.parse::<f64>().map_err(|_| BadProfile::Syntax(s.into()));
        let seed = seed.parse::<u64>().map_err(|_| BadProfile::Syntax(s.into()))?;
        Self::new(num(lat)?, num(jit)?, num(drop)?, seed)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Generator for one direction of one link, so links do not share draws.
    pub fn link_rng(&self, link: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ link.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

impl std::fmt::Display for NetProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.latency_ms, self.jitter_ms, self.drop_prob, self.seed
        )
    }
}

/// Decides the fate of one message sent at `now_ms`: `None` if dropped,
/// otherwise its delivery time.
///
/// Draw order per call: one uniform in [0, 1) for loss; if kept and
/// `jitter_ms > 0`, one uniform in [-jitter, jitter] for delay.
pub fn impaired_send(now_ms: u64, profile: &NetProfile, rng: &mut impl Rng) -> Option<u64> {
    if profile.drop_prob > 0.0 && rng.gen::<f64>() < profile.drop_prob {
        return None;
    }
    let jitter = if profile.jitter_ms > 0.0 {
        rng.gen_range(-profile.jitter_ms..=profile.jitter_ms)
    } else {
        0.0
    };
    let delay = (profile.latency_ms + jitter).max(0.0).round() as u64;
    Some(now_ms + delay)
}

/// One direction of a connection. Deliveries keep send order, as a byte
/// stream would: a message never overtakes an earlier one.
#[derive(Debug, Clone)]
pub struct Link {
    profile: NetProfile,
    rng: ChaCha8Rng,
    last_delivery: u64,
    pub sent: u64,
    pub dropped: u64,
}

impl Link {
    pub fn new(profile: NetProfile, link: u64) -> Self {
        Self {
            profile,
            rng: profile.link_rng(link),
            last_delivery: 0,
            sent: 0,
            dropped: 0,
        }
    }

    pub fn send(&mut self, now_ms: u64) -> Option<u64> {
        self.sent += 1;
        match impaired_send(now_ms, &self.profile, &mut self.rng) {
            Some(at) => {
                let at = at.max(self.last_delivery);
                self.last_delivery = at;
                Some(at)
            }
            None => {
                self.dropped += 1;
                None
            }
        }
    }
}

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::netcore::Micros;

/// Additive delay jitter, in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Jitter {
    #[default]
    None,
    Uniform {
        lo: i64,
        hi: i64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub base_delay_us: Micros,
    #[serde(default)]
    pub jitter: Jitter,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            base_delay_us: 1_000,
            jitter: Jitter::None,
        }
    }
}

impl LinkModel {
    pub fn fixed(base_delay_us: Micros) -> Self {
        LinkModel {
            base_delay_us,
            jitter: Jitter::None,
        }
    }

    /// Draw one delay. Never negative.
    pub fn sample_delay(&self, rng: &mut ChaCha8Rng) -> Micros {
        let offset: f64 = match self.jitter {
            Jitter::None => return self.base_delay_us,
            Jitter::Uniform { lo, hi } if lo >= hi => lo as f64,
            Jitter::Uniform { lo, hi } => rng.random_range(lo..=hi) as f64,
            Jitter::Normal { mean, sd } => match Normal::new(mean, sd) {
                Ok(n) => n.sample(rng).round(),
                Err(_) => mean,
            },
        };
        (self.base_delay_us as f64 + offset).max(0.0) as Micros
    }
}

/// One direction of a point-to-point link. Delivery is FIFO: a segment never
/// overtakes an earlier one even when jitter would allow it.
pub struct Link {
    model: LinkModel,
    rng: ChaCha8Rng,
    last_delivery: Micros,
}

impl Link {
    pub fn new(model: LinkModel, rng: ChaCha8Rng) -> Self {
        Link {
            model,
            rng,
            last_delivery: 0,
        }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    pub fn delivery_time(&mut self, sent: Micros) -> Micros {
        let t = sent + self.model.sample_delay(&mut self.rng);
        let t = t.max(self.last_delivery);
        self.last_delivery = t;
        t
    }
}

//! Seeded fault injector standing in for the wireless link.
//!
//! Every datagram gets a fate drawn from its channel's [`Faults`]: dropped,
//! or delivered once or twice after a sampled delay. Reordering is modelled
//! as extra delay on a fraction of datagrams so later ones overtake them.

use std::collections::BTreeMap;

use ivvdr_core::protocol::ChannelId;
use ivvdr_core::Millis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Delay {
    Fixed { ms: Millis },
    Uniform { min: Millis, max: Millis },
}

impl Default for Delay {
    fn default() -> Self {
        Delay::Fixed { ms: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Faults {
    pub loss_rate: f64,
    pub delay: Delay,
    pub reorder_rate: f64,
    /// Upper bound of the extra delay given to a reordered datagram.
    pub reorder_extra_ms: Millis,
    pub duplicate_rate: f64,
}

impl Default for Faults {
    fn default() -> Self {
        Self {
            loss_rate: 0.0,
            delay: Delay::default(),
            reorder_rate: 0.0,
            reorder_extra_ms: 50,
            duplicate_rate: 0.0,
        }
    }
}

impl Faults {
    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn with_loss(loss_rate: f64) -> Self {
        Self {
            loss_rate,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), String> {
        for (name, r) in [
            ("loss_rate", self.loss_rate),
            ("reorder_rate", self.reorder_rate),
            ("duplicate_rate", self.duplicate_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{name} must be in [0,1], got {r}"));
            }
        }
        if let Delay::Uniform { min, max } = self.delay {
            if min > max {
                return Err(format!("delay range {min}..{max} is empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub seed: u64,
    /// Applies to channels without an override.
    pub default: Faults,
    pub channels: BTreeMap<ChannelId, Faults>,
}

impl NetConfig {
    pub fn lossless(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// The same loss on the two vehicle stream channels, none elsewhere.
    pub fn stream_loss(seed: u64, loss_rate: f64) -> Self {
        let mut cfg = Self::lossless(seed);
        for ch in [ChannelId::VehicleVideoIn, ChannelId::VehicleDataIn] {
            cfg.channels.insert(ch, Faults::with_loss(loss_rate));
        }
        cfg
    }

    pub fn faults(&self, channel: ChannelId) -> &Faults {
        self.channels.get(&channel).unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.default.validate()?;
        for (ch, f) in &self.channels {
            f.validate().map_err(|e| format!("{ch}: {e}"))?;
        }
        Ok(())
    }
}

/// What happens to one datagram: the delay of each delivered copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fate {
    Dropped,
    Delivered(Vec<Millis>),
}

impl Fate {
    pub fn label(&self) -> String {
        match self {
            Fate::Dropped => "drop".into(),
            Fate::Delivered(d) => d
                .iter()
                .map(|d| format!("+{d}"))
                .collect::<Vec<_>>()
                .join(","),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub duplicated: u64,
    pub reordered: u64,
}

#[derive(Debug)]
pub struct FaultInjector {
    cfg: NetConfig,
    rng: ChaCha8Rng,
    stats: NetStats,
    per_channel: BTreeMap<ChannelId, NetStats>,
}

impl FaultInjector {
    pub fn new(cfg: NetConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            stats: NetStats::default(),
            per_channel: BTreeMap::new(),
        }
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn channel_stats(&self, channel: ChannelId) -> NetStats {
        self.per_channel.get(&channel).copied().unwrap_or_default()
    }

    fn delay(&mut self, f: &Faults) -> Millis {
        match f.delay {
            Delay::Fixed { ms } => ms,
            Delay::Uniform { min, max } => self.rng.random_range(min..=max),
        }
    }

    pub fn fate(&mut self, channel: ChannelId) -> Fate {
        let f = *self.cfg.faults(channel);
        let mut st = NetStats {
            sent: 1,
            ..NetStats::default()
        };
        let fate = if f.loss_rate > 0.0 && self.rng.random_bool(f.loss_rate) {
            st.dropped = 1;
            Fate::Dropped
        } else {
            let mut first = self.delay(&f);
            if f.reorder_rate > 0.0 && self.rng.random_bool(f.reorder_rate) {
                st.reordered = 1;
                first += self.rng.random_range(1..=f.reorder_extra_ms.max(1));
            }
            let mut copies = vec![first];
            if f.duplicate_rate > 0.0 && self.rng.random_bool(f.duplicate_rate) {
                st.duplicated = 1;
                let second = self.delay(&f);
                copies.push(second);
            }
            st.delivered = copies.len() as u64;
            Fate::Delivered(copies)
        };
        for s in [
            &mut self.stats,
            self.per_channel.entry(channel).or_default(),
        ] {
            s.sent += st.sent;
            s.dropped += st.dropped;
            s.delivered += st.delivered;
            s.duplicated += st.duplicated;
            s.reordered += st.reordered;
        }
        fate
    }
}

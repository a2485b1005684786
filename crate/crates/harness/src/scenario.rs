//! Scenario files: who drives, who watches, and how bad the network is.

use std::collections::BTreeSet;
use std::path::Path;

use ivvdr_core::server::ServerConfig;
use ivvdr_core::vehicle::AgentConfig;
use ivvdr_core::Millis;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::NetConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleSpec {
    pub agent: AgentConfig,
    /// Users allowed to watch this vehicle.
    pub owners: Vec<u32>,
    /// Whether the server knows this vehicle at start.
    pub register: bool,
    pub start_at: Millis,
    /// Normal stop; `None` keeps driving until the scenario ends.
    pub stop_at: Option<Millis>,
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            owners: Vec::new(),
            register: true,
            start_at: 0,
            stop_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum UserAction {
    Enable { t: Millis, vehicle: u32 },
    Disable { t: Millis },
}

impl UserAction {
    pub fn t(&self) -> Millis {
        match *self {
            UserAction::Enable { t, .. } | UserAction::Disable { t } => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserSpec {
    pub id: u32,
    pub credentials: String,
    pub vehicles: Vec<u32>,
    pub register: bool,
    pub actions: Vec<UserAction>,
}

impl Default for UserSpec {
    fn default() -> Self {
        Self {
            id: 1,
            credentials: "user".into(),
            vehicles: Vec::new(),
            register: true,
            actions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    /// Simulated length of the run.
    pub duration_ms: Millis,
    pub net: NetConfig,
    pub server: ServerConfig,
    /// `false` models an unreachable server: datagrams to it vanish.
    pub server_enabled: bool,
    pub vehicles: Vec<VehicleSpec>,
    pub users: Vec<UserSpec>,
    /// Golden trace hash (hex); checked when present.
    pub expected: Option<String>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            duration_ms: 60_000,
            net: NetConfig::default(),
            server: ServerConfig::default(),
            server_enabled: true,
            vehicles: Vec::new(),
            users: Vec::new(),
            expected: None,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Reseeds the network and every vehicle simulator from one seed.
    /// Vehicle `id` gets `seed + id` so vehicles differ from each other.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.net.seed = seed;
        for v in &mut self.vehicles {
            v.agent.sim.seed = seed.wrapping_add(u64::from(v.agent.vehicle_id));
        }
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.duration_ms == 0 {
            return bad("duration_ms must be > 0".into());
        }
        self.net.validate().map_err(ScenarioError::Invalid)?;
        let mut ids = BTreeSet::new();
        for v in &self.vehicles {
            let id = v.agent.vehicle_id;
            if !ids.insert(id) {
                return bad(format!("vehicle {id} listed twice"));
            }
            v.agent
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("vehicle {id}: {e}")))?;
            if v.stop_at.is_some_and(|s| s < v.start_at) {
                return bad(format!("vehicle {id} stops before it starts"));
            }
        }
        let mut uids = BTreeSet::new();
        for u in &self.users {
            if u.id == 0 || !uids.insert(u.id) {
                return bad(format!("user id {} is zero or repeated", u.id));
            }
            if u.actions.windows(2).any(|w| w[1].t() < w[0].t()) {
                return bad(format!("user {} actions are not in time order", u.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "accident"
duration_ms = 720000

[net]
seed = 4
[net.default]
loss_rate = 0.0
[net.channels.vehicle_video_in]
loss_rate = 0.05
delay = { kind = "uniform", min = 1, max = 5 }

[[vehicles]]
owners = [1]
stop_at = 700000
[vehicles.agent]
vehicle_id = 7
credentials = "pw"
[vehicles.agent.recorder]
segment_ms = 300000
variant = "stop_on_accident"
[vehicles.agent.sim]
accident = "turnover@432000"

[[users]]
id = 1
credentials = "u"
actions = [
  { action = "enable", t = 1000, vehicle = 7 },
  { action = "disable", t = 60000 },
]
"#;

    #[test]
    fn parses_and_round_trips() {
        let sc = Scenario::from_toml(SAMPLE).unwrap();
        assert_eq!(sc.vehicles[0].agent.vehicle_id, 7);
        assert_eq!(sc.vehicles[0].agent.sim.accident.unwrap().at, 432_000);
        assert_eq!(
            sc.net
                .faults(ivvdr_core::protocol::ChannelId::VehicleVideoIn)
                .loss_rate,
            0.05
        );
        assert_eq!(sc.users[0].actions[1], UserAction::Disable { t: 60_000 });
        assert_eq!(Scenario::from_toml(&sc.to_toml()).unwrap(), sc);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut sc = Scenario::from_toml(SAMPLE).unwrap();
        sc.duration_ms = 0;
        assert!(sc.validate().is_err());
        let mut sc = Scenario::from_toml(SAMPLE).unwrap();
        sc.vehicles.push(sc.vehicles[0].clone());
        assert!(sc.validate().is_err());
        let mut sc = Scenario::from_toml(SAMPLE).unwrap();
        sc.vehicles[0].agent.video_send_period = 0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn seeding_reaches_every_vehicle() {
        let sc = Scenario::from_toml(SAMPLE).unwrap().with_seed(100);
        assert_eq!(sc.net.seed, 100);
        assert_eq!(sc.vehicles[0].agent.sim.seed, 107);
    }
}

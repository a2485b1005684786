//! Deterministic test bed for the recorder, the vehicle/server/user parties
//! and the wire protocol: a seeded fault-injecting network, a scenario runner
//! on a logical clock, storage reports and a record-level container diff.

pub mod diff;
pub mod netsim;
pub mod report;
pub mod runner;
pub mod scenario;

pub use diff::{container_diff, DiffReport};
pub use netsim::{Delay, Faults, NetConfig};
pub use report::{storage_report, ReportConfig, Scheme, StorageReport};
pub use runner::{run_scenario, RunResult};
pub use scenario::{Scenario, UserAction, UserSpec, VehicleSpec};

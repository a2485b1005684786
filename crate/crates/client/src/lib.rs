//! Client side of the ITS centre: a typed HTTP client for the admin API and
//! UDP runtimes for the vehicle and user parties.

pub mod api;
pub mod party;

pub use api::{ApiClient, ClientError};
pub use party::{run_user, run_vehicle, Clock, UserRun, VehicleRun};

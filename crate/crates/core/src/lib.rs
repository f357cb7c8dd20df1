//! Simulation and accounting library for in-situ energy measurement on
//! constrained IoT nodes: shunt-monitor emulation, I²C read cost, per-thread
//! energy attribution, task tracing and harvesting duty-cycle control, checked
//! against a fine-grained ground-truth integrator.

pub mod bus;
pub mod error;
pub mod exec;
pub mod harvest;
pub mod monitor;
pub mod oracle;
pub mod profile;
pub mod scenario;
pub mod sched;
pub mod time;
pub mod units;

pub use error::{Error, Result};
pub use time::SimTime;

//! Control- and user-plane load injection against service-based mobile
//! cores, with per-function resource telemetry.
//!
//! A [`scenario::Scenario`] describes the experiment. [`orchestrator::run_experiment`]
//! prepares the target (the bundled [`emulator`] or an external core), drives
//! [`cpli`] signaling and [`upli`] traffic from seeded [`arrival`] schedules,
//! samples [`telemetry`] on one clock and exports an aligned dataset that
//! [`report`] summarizes.

pub mod arrival;
pub mod clock;
pub mod cpli;
pub mod dataset;
pub mod emulator;
pub mod fixtures;
pub mod net;
pub mod orchestrator;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod target;
pub mod telemetry;
pub mod upli;

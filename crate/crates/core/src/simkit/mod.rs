//! Simulator for the cell-free uplink: deployment geometry, large-scale
//! gains with power control, Rayleigh/Rician fading, pilots, activity and
//! received signals, plus knowledge perturbation.

mod channels;
mod config;
mod perturb;
mod scenario;
mod seed;
mod signals;

pub use channels::{complex_gaussian, draw_channels, rician_mix, steering_vector, ChannelRealization};
pub use config::{db_to_linear, dbm_to_watts, SystemConfig};
pub use perturb::{perturb_knowledge, PerturbationSpec};
pub use scenario::{
    build_scenario, draw_activity, grid_ap_positions, pathloss_db, Scenario, MIN_DISTANCE_KM, SHADOWING_STD_DB,
};
pub use seed::derive_seed;
pub use signals::{generate_pilots, synthesize, PilotMatrix, ReceivedSignals};

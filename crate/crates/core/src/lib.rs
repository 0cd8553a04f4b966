//! Closed-loop control of discretely actuated systems through influence
//! vectors: plant simulation, calibration, switch-vector search, and static
//! and dynamic controllers.

pub mod analysis;
pub mod calibration;
pub mod cost;
pub mod dynamic_control;
pub mod error;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod plant;
pub mod rng;
pub mod schedule;
pub mod static_control;
pub mod stats;
pub mod svg;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{
    apply_switch, residual, state_error, superpose, update_influence, updated_jacobian,
    DispersionModel, IdentityLinearizer, InfluenceKind, InfluenceMatrix, InputVector, Linearizer,
    StateVector, SwitchVector, TargetSpec,
};
pub use plant::{effective_input, make_reference_plant, FaultState, LoadState, PlantModel};

//! Kinematics, control, suspension and quasi-static simulation for a
//! four-wheel independently steered and suspended planetary rover.

pub mod contact;
pub mod control;
pub mod kinematics;
pub mod manager;
pub mod math;
pub mod model;
pub mod sim;
pub mod suspension;
pub mod telemetry;
pub mod terrain;

//! Finite-horizon system level synthesis: impulse-response parametrization of
//! the closed loop, localized H2 synthesis, and the controller realization
//! that drives the plant from those responses.

mod realization;
mod response;
mod synthesis;

pub use realization::{runtime_init, runtime_step, DistributedRealization, SlsController, SlsRuntimeState};
pub use response::{validate_achievability, SystemResponse};
pub use synthesis::{synthesize_h2, synthesize_h2_with, SynthesisOptions, SynthesisReport};

pub(crate) use synthesis::{project_column, support_groups, ColumnStructure, Terminal};

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod likelihood;
pub mod link;
pub mod ons;
pub mod plot;
pub mod policies;
pub mod verify;

pub use error::{PricingError, Result};
pub use likelihood::{Observation, ParamPair};
pub use link::{derive_constants, LinkKind, LinkModel, PricingConstants};
pub use ons::{ons_init, OnsHyper, OnsState};

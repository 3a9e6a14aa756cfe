pub mod error;
pub mod gait_opt;
pub mod hybrid_sim;
pub mod linalg;
pub mod robustness;
pub mod rigid_body;
pub mod saltation;
pub mod virtual_constraints;

#[cfg(test)]
mod test_fixtures;

pub use error::{Error, Result};
pub use rigid_body::{RobotModel, State};
pub use virtual_constraints::Gait;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/gaits.md")]
    mod gaits {}
    #[doc = include_str!("../../../book/src/saltation.md")]
    mod saltation {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/robustness.md")]
    mod robustness {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}

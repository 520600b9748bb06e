//! Numerical building blocks shared by the fitting modules.

pub mod optim;
pub mod pchip;
pub mod stats;

pub use optim::{brent_bounded, nelder_mead, NelderMeadOptions};
pub use pchip::Pchip;

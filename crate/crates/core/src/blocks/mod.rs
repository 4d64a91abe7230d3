//! The two fusion blocks at the heart of the network: shorted pyramid
//! fusion (global context injection) and selective-resolution fusion
//! (channel attention across adjacent resolutions).

pub mod spfm;
pub mod srm;

pub use spfm::{Spfm, SPFM_GRIDS};
pub use srm::Srm;

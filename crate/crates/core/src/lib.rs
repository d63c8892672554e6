pub mod empirical_bayes;
pub mod error;
pub mod fastpath;
pub mod forward;
pub mod harness;
pub mod io;
pub mod inference;
pub mod interval;
pub mod nnls;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod splines;
pub mod uncertainty;

pub use error::{Result, UnfoldError};
pub use interval::Interval;

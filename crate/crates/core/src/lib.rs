//! Linear-model-based unrolled network (LMN) for 2D TM electromagnetic
//! inverse scattering: method-of-moments forward modelling, Born-approximation
//! baselines, and an unrolled CNN-denoiser + conjugate-gradient reconstruction
//! network trained with hand-derived gradients.

// `if !(x > 0.0)` is used deliberately throughout argument validation: unlike
// `x <= 0.0` it also rejects NaN. Index-based loops are kept where they mirror
// the matrix algebra being implemented.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fft2;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod linop;
pub mod lmn;
pub mod scene;
pub mod specfun;
pub mod train;

pub use error::{Error, Result};

//! Parameterized layers and the architectural blocks built from them.
//!
//! Every block offers an eval-mode `forward` over a shared [`ParamStore`](crate::params::ParamStore),
//! a `forward_train` that also returns the intermediates its `backward` needs,
//! and a per-sample multiply-accumulate count.

mod layers;
mod ld;
mod mlia;
mod sppf;
mod xfuse;

pub use layers::{BatchNorm, Conv};
pub use ld::{LdBlock, LdCache, SharpnessBranch, EXPANSION, LAPLACIAN, SN_GAIN_INIT};
pub use mlia::{Mlia, MliaCache};
pub use sppf::{Sppf, SppfCache};
pub use xfuse::{XFuse, XFuseCache, XFuseGrads, IMAGE_CHANNELS, XFUSE_GROUPS};

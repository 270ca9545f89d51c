//! Loss-function meta-learning for small gradient-trained models.
//!
//! The crate is organised bottom-up: [`autodiff`] is a reverse-mode engine
//! with second-order support, [`symbolic`] and [`lossnet`] represent learned
//! losses, [`losses`] holds the handcrafted families, [`harness`] trains
//! models, and [`evomal`] and [`adalfl`] are the two meta-learners.

pub mod adalfl;
pub mod artifact;
pub mod autodiff;
pub mod evomal;
pub mod harness;
pub mod losses;
pub mod lossnet;
pub mod presets;
pub mod rng;
pub mod symbolic;

pub use artifact::LossArtifact;
pub use autodiff::{Shape, Tape, Tensor, Var};
pub use harness::{LossFn, Task, TaskKind};
pub use losses::LossSpec;

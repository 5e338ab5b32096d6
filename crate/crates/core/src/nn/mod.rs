//! Minimal reverse-mode autodiff over dense 5-D tensors, plus the two
//! network architectures built on it.
//!
//! One cross-correlation kernel family (`kernels::xcorr3d` and its two
//! backward forms) serves forward conv, transposed conv, and every gradient
//! of both — which is what lets the gradient penalty express ∇_x D(x) as
//! ordinary forward ops and differentiate it again with the same machinery.

pub mod adam;
pub mod checkpoint;
pub mod kernels;
pub mod model;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use model::{BnState, Critic, CriticSpec, GenForward, Generator, GeneratorSpec, Param};
pub use tape::{BnMode, NodeId, Tape};
pub use tensor::{Shape5, Tensor};

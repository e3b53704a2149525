//! Dense tensor math: tensors, a reverse-mode tape, convolution, bicubic
//! resampling, small-matrix LU and seeded random streams.

pub mod conv;
pub mod linalg;
pub mod resize;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use conv::Padding;
pub use linalg::SquareMatrix;
pub use resize::{bicubic_resize, downscale, Scale};
pub use rng::{Rng, RngState};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};

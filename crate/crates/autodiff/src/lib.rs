//! Dense `f64` reverse-mode automatic differentiation.
//!
//! Tensors are immutable, reference-counted arrays. A tensor either belongs
//! to a [`Tape`] (it was created as a leaf with [`Tensor::leaf`] or derived
//! from one) or is a plain constant. Operations on constants record nothing,
//! so inference and detached rollout hops run without tape overhead.
//!
//! ```
//! use autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = Tensor::leaf(&tape, vec![1], vec![3.0]).unwrap();
//! let loss = x.square().unwrap().sum().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&x).unwrap(), &[6.0]);
//! ```

mod checkpoint;
mod error;
mod gradcheck;
mod linalg;
mod ops;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{AutodiffError, Result};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use ops::Padding;
pub use optim::{clip_global_norm, AdamW, OptimizerState};
pub use params::{BoundParams, Param, ParamStore};
pub use tensor::{Gradients, Tape, Tensor};

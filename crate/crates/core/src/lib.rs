//! Edge-guided, cross-scale multi-contrast MRI super-resolution on the CPU.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a single-use reverse-mode [`Tape`], and
//!   finite-difference gradient checking.
//! - [`operators`]: Sobel edges, deformable convolution, channel alignment,
//!   dual cross-attention, texture transfer and structure fusion.
//! - [`model`]: the full encoder / cross-scale fusion / decoder network and its loss.
//! - [`data`]: synthetic two-contrast phantoms, k-space truncation and image I/O.
//! - [`metrics`]: PSNR, SSIM and error maps.
//! - [`trainkit`]: Adam, the training loop, checkpoints and the ablation harness.
//! - [`config`]: the run configuration file shared by the command-line tool.
//!
//! ```
//! use ecfnet::tensor::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.param(&Tensor::from_fn(&[3], |i| i as f64));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 2.0, 4.0]);
//! ```

pub mod config;
pub mod data;
pub mod gradsuite;
mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod operators;
pub mod rng;
pub mod tensor;
pub mod trainkit;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};

#[cfg(doctest)]
mod book;

// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_std]
// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod error;
pub mod matrix;
pub mod rng;
pub mod tape;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::Rng;
pub use tape::{Tape, Var};
pub mod align;
pub mod corpus;
pub mod editor;
pub mod encoder;
pub mod manifold;
pub mod nn;
pub mod probes;

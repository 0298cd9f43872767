//! Orientation recognition for 2D cardiac MR slices.
//!
//! A slice can be stored in any of the 8 orientations generated by flips,
//! quarter turns and transpositions of the image square. This crate
//! recognizes which one it is and maps it back to the canonical pose:
//!
//! - [`d4`]: the orientation labels and their composition algebra,
//! - [`imgops`]: slices, orientation transforms, resizing and normalization,
//! - [`nn`]: a small convolutional classifier trained from scratch,
//! - [`dataio`]: synthetic phantoms, file formats, patient-level splits,
//! - [`pipeline`]: training, transfer, direct and voting prediction, sweeps,
//! - [`cli`]: the `orient8` command-line front end.

pub mod cli;
pub mod d4;
pub mod dataio;
pub mod error;
pub mod imgops;
pub mod nn;
pub mod pipeline;

pub use d4::{OrientationLabel, TransformTables};
pub use error::{Error, Result};
pub use imgops::{Modality, NormalizedSlice, Slice};

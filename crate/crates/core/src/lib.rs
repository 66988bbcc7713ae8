//! Desk-scale toolkit for myocardial-infarction segmentation: unpaired style
//! transfer with a mask-preserving segmentor, super-resolution segmentation
//! with a windowed-attention encoder, and multi-task self-supervised
//! pretraining.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod sseg;
pub mod ssl;
pub mod style;

pub use error::{Error, Result};

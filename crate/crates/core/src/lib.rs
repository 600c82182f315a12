//! Learning compact clothing deformation models from 4D mesh sequences.
//!
//! The pipeline registers a clothing template to every scan frame
//! ([`registration`]), pose-normalizes the registrations with inverse
//! skinning ([`skinning`]), learns a PCA blend-shape subspace
//! ([`subspace`]), regresses shape coefficients from pose
//! ([`regression`]), and bakes low/high resolution normal maps in the
//! template's UV space ([`normalmaps`]). [`synth`] produces sequences with
//! known ground truth for every stage, and [`pipeline`] chains the stages
//! over files on disk.

pub mod error;
pub mod io;
mod linalg;
pub mod mesh;
pub mod normalmaps;
pub mod pipeline;
pub mod registration;
pub mod regression;
pub mod skinning;
pub mod spatial;
pub mod subspace;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};

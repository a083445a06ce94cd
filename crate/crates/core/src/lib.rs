//! Impact-based manuscript assessment.
//!
//! The crate covers the whole pipeline: bibliometric impact metrics and
//! labels ([`bibliometrics`]), the article corpus and its featurizations
//! ([`corpus`]), the IMAC network ([`encoder`], [`fusion`]) trained with a
//! combined cross-entropy and supervised-contrastive objective ([`losses`],
//! [`training`]), and the classical comparison classifiers ([`baselines`]).

pub mod baselines;
pub mod bibliometrics;
pub mod config;
pub mod corpus;
pub mod encoder;
mod error;
pub mod fusion;
pub mod losses;
pub mod nn;
pub mod training;

pub use error::{Error, Result};

//! Additive and semiparametric additive regression with discrete or
//! categorical predictors, fitted by backfitting, with generalized
//! likelihood ratio tests whose null distributions are weighted chi-square
//! mixtures.

pub mod backfit;
pub mod data;
pub mod dist;
pub mod error;
pub mod glr;
pub mod sim;
pub mod smooth;

pub use error::{Error, Result};

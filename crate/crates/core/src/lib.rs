//! Desk-scale structural pre-training laboratory.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod corruptor;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};

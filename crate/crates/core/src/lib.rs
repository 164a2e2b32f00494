//! Concept-bottleneck image classification over vision-language embeddings.
//!
//! Feature maps and concept text embeddings come in through [`tensor_io`]; [`concept_space`]
//! turns them into normalized concept scores; [`linear_head`] trains a bias-free softmax
//! layer on those scores; [`interpret`] and [`intervene`] read and steer the trained head;
//! [`synth`] builds confounded synthetic datasets for robustness experiments.

pub mod concept_space;
pub mod error;
pub mod interpret;
pub mod intervene;
pub mod linear_head;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};

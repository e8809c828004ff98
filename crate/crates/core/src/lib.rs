//! Recurrent-VAE melody generation with transfer learning across genres, and
//! the pianoroll feature / overlapping-area evaluation used to score it.

pub mod corpus;
pub mod features;
pub mod oa;
pub mod tensor;
pub mod model;
pub mod gradcheck;
pub mod train;
pub mod report;
pub mod experiment;
pub mod cli;

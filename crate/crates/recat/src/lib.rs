//! File formats, the parallel training driver and the command-line surface
//! for [`recat_core`].

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod pretrain;
pub mod run;
pub mod sexpr;
pub mod synth;
pub mod tools;
pub mod vocab;

pub use error::{IoError, IoResult};

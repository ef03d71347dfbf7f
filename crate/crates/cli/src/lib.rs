//! Front end for the transflow solvers: configuration, image input, problem
//! set-up, runs, sweeps and output files.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod output;
pub mod pgm;
pub mod runner;
pub mod sweep;
pub mod synth;

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error("image is {}x{} but the grid is {}x{}", image.0, image.1, grid.0, grid.1)]
    DimensionMismatch { image: (usize, usize), grid: (usize, usize) },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        }
    }
}

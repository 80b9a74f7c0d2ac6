//! Heating-based noise spectroscopy for a trapped harmonic oscillator.

pub mod cli;
pub mod config;
pub mod csl;
pub mod environment;
pub mod experiment;
pub mod kernel;
pub mod oracles;
pub mod quad;
pub mod reconstruct;
pub mod scenario;
pub mod spectra;
pub mod trap;
pub mod units;

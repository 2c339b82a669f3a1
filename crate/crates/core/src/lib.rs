//! Simulated piezo-lever tactile display.

pub mod analysis;
pub mod config;
pub mod control;
pub mod engine;
pub mod plant;
pub mod scene;
pub mod shore;
pub mod teletouch;
pub mod unit;

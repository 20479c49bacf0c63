//! Pipeline driver, corpus simulator and SVG figures for codelex.

pub mod config;
pub mod pipeline;
pub mod render;
pub mod simulate;

pub mod analysis;
pub mod dataset;
pub mod inference;
pub mod nn;
pub mod raster;
pub mod synth;

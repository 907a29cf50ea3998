pub mod dataset;
pub mod error;
pub mod evalmetrics;
pub mod export;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod semvote;
pub mod synthdata;
pub mod tracker;

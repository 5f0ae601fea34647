//! Top-view map rasters and the map channel of the predictor.

mod cnn;
mod raster;

pub use cnn::{encode_calls, encode_map, gate_select, CnnParams, GateParams, MAP_ATTR_WIDTH};
pub use raster::{load_raster, meta_path, MapRaster};

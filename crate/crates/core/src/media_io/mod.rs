//! On-disk artifacts and the coordinate conventions shared by every stage.
//!
//! All network inputs live in `[-1,1]`: pixel index `0` maps to `-1` and the
//! last index to `+1`, for x, y and the frame index alike. Flow fields stay in
//! pixel units until correspondences are built.

mod atlas;
mod coords;
mod flo;
mod raster;
mod video;

pub use atlas::{load_atlas, save_atlas, AtlasImage, ATLAS_RESOLUTION};
pub(crate) use atlas::nearest_cell;
pub use coords::{PixelCoord, VideoGeometry};
pub(crate) use flo::bilinear_corners;
pub use flo::{read_flo, write_flo, FlowField, FLO_MAGIC, UNKNOWN_FLOW};
pub use raster::{BinaryMask, GrayRaster};
pub use video::{load_frames, save_frames, Frame, RoiSpec, VideoClip};

//! Soft masks from trimaps and matting, and edit propagation through the atlas.

mod edit;
mod matting;
mod trimap;

pub use edit::{
    atlas_mask, edit_pixel, hard_masks, occluder_color, reconstruct_edit, soft_masks, EditBundle,
    DEFAULT_EDIT_EPSILON, OPAQUE_THRESHOLD,
};
pub use matting::{alpha_file_name, BuiltinMatting, ExternalMatting, MattingBackend, SoftMaskStack};
pub use trimap::{default_radius, make_trimap, Trimap, TrimapLabel, REFERENCE_RADIUS_PX};

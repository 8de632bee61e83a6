//! Raw pairwise flow to filtered, reference-anchored correspondences.
//!
//! Flows are in pixel units throughout; endpoints are normalized only when a
//! [`CorrPair`] is turned into network input.

mod compose;
mod descriptor;
mod filters;
mod pairs;
mod provider;

pub use compose::{
    compose_from_reference, compose_to_reference, neighborhood, processing_order, ChainDirection,
    FlowFilters, HopCache, RefFlowSet, DEFAULT_WINDOW,
};
pub use descriptor::{AppearanceDescriptor, DescriptorMap, FileDescriptor, PatchDescriptor};
pub use filters::{appearance_filter, cosine, cycle_filter};
pub use pairs::{bootstrap_masks, build_pairs, CorrPair, CorrespondenceSets};
pub use provider::{BlockMatchProvider, FileFlowProvider, FlowProvider, MemoryFlowProvider};

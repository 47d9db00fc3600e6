//! Sliding-window consensus over posterior samples: a sparse same-object
//! graph on pixels, partitioned by community detection.

mod communities;
mod edges;
mod leiden;
mod pipeline;
mod tiling;

pub use communities::{
    auto_resolution, detect_communities, point_estimate, sample_agreement, CommunityLabels, ResolutionChoice,
    ResolutionConfig, SparseLabels,
};
pub use edges::{half_disk, merge_edges, window_edges, EdgeAccumulator, EdgeList};
pub use leiden::{leiden, Graph, Objective};
pub use pipeline::{
    consensus_graph, consensus_segment, disjoint_point_estimate, mask_background, with_pool, ConsensusConfig, ConsensusGraph,
    ConsensusResult,
    ResolutionMode, SimulatedSampler, WindowSampler, THREADS_ENV,
};
pub use tiling::{reflect_pad, tile_plan, IndexMatrix, WindowPlan};

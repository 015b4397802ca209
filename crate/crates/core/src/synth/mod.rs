//! Synthetic graphs and exact oracles for the experiments.

mod ba;
mod tasks;
mod triangles;
mod wl;

pub use ba::{generate_ba, BaParams};
pub use tasks::{
    build_istriangle_dataset, build_wlhard_pairs, pair_indices, IsTriangleConfig, IsTriangleData, WlHardConfig,
};
pub use triangles::{label_triangles, triangle_labels_bruteforce};
pub use wl::{wl_distinguishable, wl_refine, WlColoring};

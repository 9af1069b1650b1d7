//! Quasi-isometric metric learning between object depths and feature descriptors.
//!
//! The crate is organized bottom-up:
//!
//! - [`metric`]: Minkowski distances, pairwise matrices and metric-axiom checks.
//! - [`quasi_iso`]: descriptor sets, ε-neighborhoods and violating-pair audits.
//! - [`losses`]: the quasi-isometric contrastive loss with analytical gradients,
//!   the Laplacian aleatoric depth-map loss, pooling and descriptor extraction.
//! - [`geodesic`]: depth-sorted pseudo-geodesic paths and the local-to-global check.
//! - [`synth`]: seeded synthetic datasets.
//! - [`trainer`]: a small MLP encoder trained with the combined loss.
//! - [`cli`]: the `qimetric` command-line surface and its file formats.
//!
//! With the default `parallel` feature, data-parallel loops run on rayon.
//! Disabling it gives a sequential build with identical numerical output.

pub mod cli;
pub mod error;
pub mod geodesic;
pub mod losses;
pub mod metric;
mod par;
pub mod quasi_iso;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use geodesic::{build_path, pseudo_geodesic, verify_theorem, GeodesicPath, TheoremReport};
pub use losses::{
    avg_pool_5x5, build_object_depth_map, extract_descriptors, obj_depth_loss, qi_loss,
    qi_loss_grad_check, total_loss, DepthMapSample, FeatureMap, LossMode, LossOutput,
    ObjectAnnotation,
};
pub use metric::{minkowski_dist, pairwise_matrix, validate_metric_axioms, DistanceMatrix, Norm};
pub use quasi_iso::{
    check_global_qi, check_local_qi, epsilon_neighborhood, find_violating_pairs, DescriptorSet,
    QiParams, ViolationReport,
};

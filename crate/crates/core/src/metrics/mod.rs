//! Exact evaluation: confusion matrices, grouped mIoU, class prototypes,
//! prototype/weight cosine matrices and moving distance.

pub mod confusion;
pub mod cosine;
pub mod md;
pub mod miou;
pub mod prototypes;

pub use confusion::{accumulate_confusion, ConfusionMatrix};
pub use cosine::{cos_matrix, CosMatrix};
pub use md::{md_trajectory, moving_distance, MdMode, MdRecord, MdSource, RunArtifacts};
pub use miou::{miou_groups, MetricsReport};
pub use prototypes::{class_prototypes, PrototypeSet};

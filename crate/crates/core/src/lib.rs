//! Hierarchical semantic segmentation for bridge inspection imagery.
//!
//! A component stage labels structural parts, then a damage stage looks only at the parts
//! that can carry damage. Both stages ensemble pluggable [`SegmenterBackend`]s with
//! multi-scale sliding-window inference and per-pixel voting.

pub mod backends;
pub mod corpus;
pub mod error;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod sampling;
pub mod scenegen;
pub mod taxonomy;
pub mod tta;

pub use backends::{BackendKind, BackendSpec, Concurrency, SegmenterBackend};
pub use corpus::{split_by_group, CorpusEntry, CorpusIndex, GroupSplit};
pub use error::{Error, Result};
pub use masking::{apply_semantic_mask, mask_labels, MaskSpec};
pub use metrics::{accumulate_confusion, iou_from_confusion, ConfusionMatrix, IouReport};
pub use pipeline::{evaluate_corpus, Ablation, EvalOptions, EvalScope, Evaluation, Pipeline, RunConfig, Variant};
pub use raster::{ClassHistogram, Image, LabelMap, ScoreMap};
pub use sampling::{build_sampling_plan, ImageStats, SamplingPlan, SamplingPolicy};
pub use scenegen::{generate_corpus, generate_scene, SceneParams, ScenePalette};
pub use taxonomy::{ClassTaxonomy, Task};
pub use tta::{argmax_labels, infer_multiscale, majority_vote, plan_tiles, ScaleSet};

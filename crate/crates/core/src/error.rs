//! Error types shared across the pipeline.

use std::path::PathBuf;
use thiserror::Error;

/// Top-level error for every pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("render: {0}")]
    Render(#[from] RenderError),
    #[error("train: {0}")]
    Train(#[from] TrainError),
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unsupported camera model `{model}` (camera id {camera_id})")]
    UnsupportedCameraModel { camera_id: u32, model: String },
    #[error("image {image} references undeclared camera id {camera_id}")]
    UndeclaredCamera { image: String, camera_id: u32 },
    #[error("malformed {what} at {path}:{line}: {detail}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("splat file format error at byte {offset}: {detail}")]
    SplatFormat { offset: u64, detail: String },
    #[error("view {index}: dimension mismatch ({detail})")]
    DimensionMismatch { index: usize, detail: String },
    #[error("mask for image `{stem}` not found in {dir}")]
    MissingMask { stem: String, dir: PathBuf },
    #[error("cannot initialize splats from an empty point cloud")]
    EmptyPointCloud,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("splat {index} has a non-finite parameter ({what})")]
    CorruptParameter { index: usize, what: &'static str },
    #[error("buffer shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training views supplied")]
    NoViews,
    #[error("every training mask is empty; object-centric training needs mask pixels")]
    AllMasksEmpty,
    #[error("non-finite loss at iteration {iteration} ({breakdown})")]
    NonFiniteLoss { iteration: usize, breakdown: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot mesh an empty splat set")]
    EmptySplatSet,
    #[error("TSDF grid of {requested} voxels exceeds the budget of {budget}; increase voxel_size")]
    VoxelBudget { requested: usize, budget: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mesh file format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined for an empty mask")]
    EmptyMask,
    #[error("metric undefined for an empty point set")]
    EmptyPointSet,
    #[error("buffer shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
}

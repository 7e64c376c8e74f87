//! Click-seeded LIDAR annotation: instance segmentation from a single 3D
//! click, amodal box estimation, annotator quality assurance and evaluation.

pub mod boxfit;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod pointcloud;
pub mod scalar;
pub mod seed;
pub mod segmentation;
pub mod workflow;

pub use error::{Error, Result};
pub use scalar::Real;
pub use seed::derive_seed;

pub type Point3F32 = pointcloud::Point3<f32>;
pub type Point3F64 = pointcloud::Point3<f64>;
pub type PointCloudF32 = pointcloud::PointCloud<f32>;
pub type PointCloudF64 = pointcloud::PointCloud<f64>;
pub type SceneF64 = pointcloud::Scene<f64>;
pub type Box3DF32 = geometry::Box3D<f32>;
pub type Box3DF64 = geometry::Box3D<f64>;
pub type ModelParamsF32 = nn::ModelParams<f32>;
pub type ModelParamsF64 = nn::ModelParams<f64>;
pub type SegModelF64 = segmentation::SegModel<f64>;
pub type BoxfitModelF64 = boxfit::BoxfitModel<f64>;
pub type ClickF64 = segmentation::Click<f64>;
pub type SessionF64 = workflow::AnnotatorSession<f64>;
pub type DetectionF64 = eval::DetectionResult<f64>;

//! Star-shaped surfaces: point clouds, radial fields, reconstruction and deviation metrics.

pub mod cloud;
pub mod deviation;
pub mod mesh;
pub mod stability;
pub mod star;

pub use cloud::{check_rotation, quarter_turn_z, random_rotation, rotate_cloud, PointCloud};
pub use deviation::{surface_deviation, DeviationReport, MeshDistance};
pub use mesh::{
    coefficient_volume, enclosed_volume_mesh, enclosed_volume_radial, reconstruct_surface, Reconstruction,
    SurfaceMesh,
};
pub use stability::{
    bandwidth_sweep, rotation_stability_report, CloudSampling, GridSetup, PipelineConfig, ShapeMetrics, ShapeRow,
    StabilityReport,
};
pub use star::{radial_from_pointcloud, synth_star_corpus, ShapeFamily, StarParams, StarShape};

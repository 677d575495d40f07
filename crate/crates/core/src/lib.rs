//! Deterministic numerics for turning labeled 3D heart point clouds into
//! synthetic echocardiogram views, labeling deformation between meshes with
//! robust optimal transport, fusing deformation grids, and evaluating the
//! results with voxel-overlap and clinical cardiac metrics.
//!
//! The pipeline, end to end:
//!
//! 1. [`transform`] poses a [`cloud::LabeledCloud`] inside the body context
//!    with similarity transforms.
//! 2. [`view`] slices the posed cloud along the six standard scan sectors
//!    and [`mask`] rasterizes the slices to binary masks.
//! 3. [`echo`] turns masks into pseudo-ultrasound images and provides the
//!    translation objective terms as pure numerics.
//! 4. [`ot`] solves the unbalanced optimal-transport assignment between a
//!    reference mesh and a target and extracts per-vertex displacements;
//!    [`rbf`] fits the Gaussian-kernel spline field over them.
//! 5. [`grid`] upsamples, fuses, and applies deformation-vector grids.
//! 6. [`metrics`], [`volume`], and [`clinical`] evaluate reconstructions:
//!    voxel IoU, coordinate MSE, ventricular volumes, ejection fraction,
//!    and the correlation against a clinical strain reference.
//!
//! Everything is deterministic given its inputs and seeds; batch runs derive
//! per-item seeds through [`seed::derive_seed`].

pub mod cloud;
pub mod clinical;
pub mod echo;
pub mod error;
pub mod grid;
pub mod mask;
pub mod metrics;
pub mod ot;
pub mod rbf;
pub mod seed;
pub mod transform;
pub mod view;
pub mod volume;

pub use cloud::{joint_bbox, LabeledCloud, MAX_TISSUE_LABEL};
pub use clinical::{
    ef, pcc_summary, pearson, read_patients_csv, region_volume, ClinicalRow, PatientRecord,
    PccSummary, VolumeReport,
};
pub use echo::{
    cycle_loss, full_objective, gan_loss, pseudo_image, CycleBatch, GanBatch, GrayImage,
    LossReport, NoiseParams,
};
pub use error::{Error, Result};
pub use grid::{
    apply_grid, fuse, fuse_node_weighted, normalize_weights, sample_grid, trilinear_upsample,
    VectorGrid, WeightVector,
};
pub use mask::{overlay_coverage, rasterize, rasterize_with_stats, BinaryMask, RasterStats};
pub use metrics::{
    extract_region, iou, mse, mse_vectors, subsample, voxelize, voxelize_pair, VoxelGrid,
    DEFAULT_EVAL_RESOLUTION,
};
pub use ot::{
    displacement, independence_objective, solve_assignment, solve_assignment_with_weights,
    AssignmentMatrix, DeformationSamples, OtParams, SolverDiagnostics,
};
pub use rbf::{
    deform_template, eval_field, fit_rbf_field, suggested_bandwidth, RbfField, DEFAULT_RIDGE,
};
pub use transform::{
    apply_transform, rotate, rotation_matrix, scale, translate, RotationMatrix,
    SimilarityTransform,
};
pub use view::{builtin_views, slice_cloud, PlanarSlice, ViewDefinition, ViewName};
pub use volume::{delaunay_volume, hull_contains};

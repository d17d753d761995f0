//! Parametric head model: affine geometry, reflectance and expression bases
//! over a procedural closed mesh, plus the per-frame parameter vector.

mod basis;
mod io;
mod mesh;
mod params;

pub use basis::{
    synthesize_basis, to_points, EyeAnnotation, FaceBasis, ModelDims, Reflectance, EXPRESSION_SIGMA0, EYE_CLOSURE,
    GEOMETRY_SIGMA0, JAW_OPEN, REFLECTANCE_SIGMA0, SINGULAR_DECAY,
};
pub use io::{read_basis, read_basis_from, write_basis, write_basis_to, BASIS_MAGIC, BASIS_VERSION};
pub use mesh::{EYE_RADIUS, HEAD_SEMI_AXES};
pub use params::{
    apply_rigid_pose, default_illumination, unit_quaternion, FaceParameters, DEFAULT_DEPTH, GAZE_LIMIT,
    QUATERNION_TOLERANCE, SH_COEFFS,
};

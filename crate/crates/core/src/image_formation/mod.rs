//! Perspective projection, spherical-harmonics shading and the software
//! rasterizer behind the color, correspondence and gaze renders.

mod camera;
mod image;
pub mod raster;
mod render;
pub mod sh;

pub use camera::CameraIntrinsics;
pub use image::{write_png_rgb8, ColorSpace, RasterImage};
pub use render::{
    compute_vertex_normals, correspondence_codes, eye_layouts, eye_socket_center, rasterize_color,
    rasterize_correspondence, rasterize_gaze, render_conditioning, render_fragments, ConditioningFrame, EyeLayout,
    PosedMesh, PUPIL_COLOR, PUPIL_SCALE, SCLERA_COLOR,
};
pub use sh::{irradiance, sh_basis, shade_vertex, Y00};

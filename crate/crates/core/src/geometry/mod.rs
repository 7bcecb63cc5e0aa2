//! Perspective projection of scene annotations and rasterization of the
//! road and box masking maps.

mod boxes;
mod camera;
mod fourier;
mod mask;
mod perl;
mod raster;

pub use boxes::{box_corners, Box3D, BOX_EDGES, FRONT_FACE};
pub use camera::{
    normalize_angle, project_points, CameraModel, Mat3, Mat4, Projection, Vec3, DEFAULT_NEAR_PLANE,
};

pub use fourier::{corner_pixels, fourier_embed, fourier_width, FOURIER_BANDS};
pub use mask::{downsample_mask, Mask};
pub use perl::PerLMaskSet;
pub use raster::{
    clipped_box_vertices, convex_hull, fill_convex, projected_box_hull, rasterize_box_mask,
    rasterize_road_mask, Point2, Polygon,
};

pub(crate) use camera::mat3_t_vec;

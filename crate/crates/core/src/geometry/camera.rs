use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
pub type Mat4 = [[f64; 4]; 4];

pub const DEFAULT_NEAR_PLANE: f64 = 0.05;

pub(crate) fn mat3_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat3_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Pinhole camera with zero skew. Camera frame: +x right, +y down, +z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub name: String,
    pub intrinsics: Mat3,
    /// World-to-camera rigid transform.
    pub extrinsics: Mat4,
    pub width: usize,
    pub height: usize,
    pub near_plane: f64,
}

/// Result of projecting one world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// `None` when the point is at or behind the near plane.
    pub pixel: Option<[f64; 2]>,
    /// Camera-space z.
    pub depth: f64,
}

impl CameraModel {
    pub fn new(name: &str, intrinsics: Mat3, extrinsics: Mat4, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            name: name.to_string(),
            intrinsics,
            extrinsics,
            width,
            height,
            near_plane: DEFAULT_NEAR_PLANE,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` looking along heading `yaw` (about world +z, 0 = +x)
    /// tilted down by `pitch`, with horizontal field of view `hfov`.
    pub fn looking(
        name: &str,
        position: Vec3,
        yaw: f64,
        pitch: f64,
        hfov: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let f = width as f64 / 2.0 / (hfov / 2.0).tan();
        let k = [[f, 0.0, width as f64 / 2.0], [0.0, f, height as f64 / 2.0], [0.0, 0.0, 1.0]];
        let fwd = [yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), -pitch.sin()];
        let right = [yaw.sin(), -yaw.cos(), 0.0];
        let down = cross(fwd, right);
        let r = [right, down, fwd];
        let t = mat3_vec(&r, position);
        let mut e = [[0.0; 4]; 4];
        for i in 0..3 {
            e[i][..3].copy_from_slice(&r[i]);
            e[i][3] = -t[i];
        }
        e[3][3] = 1.0;
        Self::new(name, k, e, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("camera `{}`: {m}", self.name)));
        let k = &self.intrinsics;
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return bad("focal lengths must be positive");
        }
        if k[0][1] != 0.0 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
            return bad("intrinsics must be a zero-skew pinhole matrix");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(self.near_plane > 0.0) {
            return bad("near plane must be positive");
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|c| r[i][c] * r[j][c]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return bad("extrinsic rotation is not orthonormal");
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-6 {
            return bad("extrinsic rotation must have determinant +1");
        }
        if self.extrinsics[3] != [0.0, 0.0, 0.0, 1.0] {
            return bad("extrinsics bottom row must be [0, 0, 0, 1]");
        }
        Ok(())
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[0][0]
    }
    pub fn fy(&self) -> f64 {
        self.intrinsics[1][1]
    }
    pub fn cx(&self) -> f64 {
        self.intrinsics[0][2]
    }
    pub fn cy(&self) -> f64 {
        self.intrinsics[1][2]
    }

    pub fn rotation(&self) -> Mat3 {
        let e = &self.extrinsics;
        [[e[0][0], e[0][1], e[0][2]], [e[1][0], e[1][1], e[1][2]], [e[2][0], e[2][1], e[2][2]]]
    }

    pub fn translation(&self) -> Vec3 {
        [self.extrinsics[0][3], self.extrinsics[1][3], self.extrinsics[2][3]]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        let t = self.translation();
        let c = mat3_t_vec(&self.rotation(), t);
        [-c[0], -c[1], -c[2]]
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let r = mat3_vec(&self.rotation(), p);
        let t = self.translation();
        [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
    }

    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        let t = self.translation();
        mat3_t_vec(&self.rotation(), [p[0] - t[0], p[1] - t[1], p[2] - t[2]])
    }

    /// Pinhole division of a camera-space point (no validity check).
    pub fn camera_to_pixel(&self, p: Vec3) -> [f64; 2] {
        [self.fx() * p[0] / p[2] + self.cx(), self.fy() * p[1] / p[2] + self.cy()]
    }

    pub fn project(&self, p: Vec3) -> Projection {
        let c = self.world_to_camera(p);
        let pixel = (c[2] > self.near_plane).then(|| self.camera_to_pixel(c));
        Projection { pixel, depth: c[2] }
    }

    /// World point seen at `pixel` with camera-space depth `depth`.
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Vec3 {
        let c = [
            (pixel[0] - self.cx()) / self.fx() * depth,
            (pixel[1] - self.cy()) / self.fy() * depth,
            depth,
        ];
        self.camera_to_world(c)
    }

    /// Camera-space direction (z = 1) through a pixel position.
    pub fn pixel_ray(&self, pixel: [f64; 2]) -> Vec3 {
        [(pixel[0] - self.cx()) / self.fx(), (pixel[1] - self.cy()) / self.fy(), 1.0]
    }
}

/// Projects world points; points at or behind the near plane get no pixel.
pub fn project_points(points: &[Vec3], cam: &CameraModel) -> Vec<Projection> {
    points.iter().map(|&p| cam.project(p)).collect()
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r - 2.0 * PI
    } else {
        r
    }
}

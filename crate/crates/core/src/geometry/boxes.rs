use super::camera::{normalize_angle, Vec3};
use crate::error::{Error, Result};

/// Oriented 3D box on the ground. `size` is (length along heading, width, height).
#[derive(Clone, Debug, PartialEq)]
pub struct Box3D {
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
    pub category: String,
}

impl Box3D {
    pub fn new(center: Vec3, size: Vec3, yaw: f64, category: &str) -> Result<Self> {
        if !size.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("box size must be positive, got {size:?}")));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidArgument("box pose must be finite".into()));
        }
        Ok(Self { center, size, yaw: normalize_angle(yaw), category: category.to_string() })
    }

    /// Rotates a box-local offset into world orientation.
    pub fn local_to_world(&self, local: Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * local[0] - s * local[1],
            self.center[1] + s * local[0] + c * local[1],
            self.center[2] + local[2],
        ]
    }

    pub fn world_to_local(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]]
    }

    /// Footprint corners on the ground plane, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (self.size[0] / 2.0, self.size[1] / 2.0);
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]].map(|[x, y]| {
            let p = self.local_to_world([x, y, 0.0]);
            [p[0], p[1]]
        })
    }
}

/// Index pairs of the 12 cuboid edges under the [`box_corners`] ordering.
pub const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1), (2, 3), (4, 5), (6, 7), // along height
    (0, 2), (1, 3), (4, 6), (5, 7), // along width
    (0, 4), (1, 5), (2, 6), (3, 7), // along length
];

/// Corner indices of the face at `+l/2` (the heading side).
pub const FRONT_FACE: [usize; 4] = [4, 5, 6, 7];

/// The eight cuboid vertices. Corner `i` uses signs from the bits of `i`
/// over (length, width, height), most significant first, `0` meaning `-`:
/// corner 0 is `(-l/2, -w/2, -h/2)`, corner 1 is `(-l/2, -w/2, +h/2)`, ...,
/// corner 7 is `(+l/2, +w/2, +h/2)`, all rotated by yaw and offset by the center.
pub fn box_corners(b: &Box3D) -> [Vec3; 8] {
    let half = [b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0];
    std::array::from_fn(|i| {
        let sign = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
        b.local_to_world([sign(2) * half[0], sign(1) * half[1], sign(0) * half[2]])
    })
}

use crate::error::{Error, Result};

/// Scene description tokens understood by the renderer, with background shades.
pub const DESCRIPTION_TOKENS: [(&str, [f64; 3]); 3] =
    [("day", [0.4, 0.4, 1.0]), ("night", [1.0, 0.4, 0.4]), ("rain", [0.4, 1.0, 0.4])];

/// Category colors sit on the corners of `[0, CUBE_EDGE]^3`, leaving headroom
/// for the brightened front-edge shade.
pub const CUBE_EDGE: f64 = 0.7;

/// Road fill, the center of the category cube.
pub const ROAD_GRAY: [f64; 3] = [CUBE_EDGE / 2.0; 3];

/// Category colors in `[0, 1]` RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Palette {
    pub entries: Vec<(String, [f64; 3])>,
}

impl Default for Palette {
    /// Eight categories on the cube corners.
    fn default() -> Self {
        let corners = [
            ("car", [1.0, 0.0, 0.0]),
            ("truck", [0.0, 0.0, 1.0]),
            ("bus", [1.0, 1.0, 0.0]),
            ("pedestrian", [0.0, 1.0, 0.0]),
            ("bicycle", [1.0, 0.0, 1.0]),
            ("motorcycle", [0.0, 1.0, 1.0]),
            ("barrier", [1.0, 1.0, 1.0]),
            ("traffic_cone", [0.0, 0.0, 0.0]),
        ];
        Self { entries: corners.iter().map(|(n, c)| (n.to_string(), c.map(|v: f64| v * CUBE_EDGE))).collect() }
    }
}

/// `[0, 1]` color to the `[-1, 1]` image range.
pub fn to_signed(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| 2.0 * v - 1.0)
}

/// Scales a `[0, 1]` color by 1.4, saturating at 1.
pub fn brighten(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| (1.4 * v).min(1.0))
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Palette {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, category: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == category)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn color(&self, category: &str) -> Result<[f64; 3]> {
        self.index_of(category)
            .map(|i| self.entries[i].1)
            .ok_or_else(|| Error::UnknownToken(category.to_string()))
    }

    /// Category color in image range.
    pub fn signed(&self, idx: usize) -> [f64; 3] {
        to_signed(self.entries[idx].1)
    }

    pub fn signed_bright(&self, idx: usize) -> [f64; 3] {
        to_signed(brighten(self.entries[idx].1))
    }

    /// Nearest category to an image-range pixel.
    pub fn nearest(&self, px: [f64; 3]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.entries.len() {
            let d = dist(px, self.signed(i));
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Segmentation radius in image range: a quarter of the closest pair distance.
    pub fn threshold(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.entries.len() {
            for j in i + 1..self.entries.len() {
                min = min.min(dist(self.signed(i), self.signed(j)));
            }
        }
        0.25 * min
    }

    /// Whether `px` belongs to category `idx` (plain or bright edge shade).
    pub fn matches(&self, idx: usize, px: [f64; 3]) -> bool {
        let t = self.threshold();
        dist(px, self.signed(idx)) < t || dist(px, self.signed_bright(idx)) < t
    }
}

/// Background shade for a description: first recognized token wins, default "day".
pub fn background_for(tokens: &[String]) -> [f64; 3] {
    tokens
        .iter()
        .find_map(|t| DESCRIPTION_TOKENS.iter().find(|(n, _)| n == t).map(|(_, c)| *c))
        .unwrap_or(DESCRIPTION_TOKENS[0].1)
}

use crate::error::{Error, Result};

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![1.0; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Area average over `factor x factor` blocks.
pub fn downsample_mask(mask: &Mask, factor: usize) -> Result<Mask> {
    if factor == 0 || mask.height % factor != 0 || mask.width % factor != 0 {
        return Err(Error::Shape(format!(
            "downsample factor {factor} does not divide {}x{}",
            mask.height, mask.width
        )));
    }
    if factor == 1 {
        return Ok(mask.clone());
    }
    let (h, w) = (mask.height / factor, mask.width / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Mask::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    sum += mask.get(r * factor + dr, c * factor + dc);
                }
            }
            out.set(r, c, sum * inv);
        }
    }
    Ok(out)
}

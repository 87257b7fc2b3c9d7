use num_traits::Float;

use super::{GridParams, PillarError};

/// Dense `(C, H, W)` image, row-major, with `H = y_n` and `W = x_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage<T = f64> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Float> PseudoImage<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> T {
        self.data[(c * self.height + row) * self.width + col]
    }
}

/// Place each pillar's `C`-vector at its cell; every other cell stays zero.
///
/// `features` is row-major `[P][C]`.
pub fn scatter<T: Float>(
    features: &[T],
    channels: usize,
    indices: &[(u32, u32)],
    grid: &GridParams,
) -> Result<PseudoImage<T>, PillarError> {
    if features.len() != indices.len() * channels {
        return Err(PillarError::Contract(format!(
            "{} feature values for {} pillars of {channels} channels",
            features.len(),
            indices.len()
        )));
    }
    let (h, w) = (grid.y_n, grid.x_n);
    let mut img = PseudoImage::zeros(channels, h, w);
    let mut seen = vec![false; h * w];
    for (p, &(row, col)) in indices.iter().enumerate() {
        let (row, col) = (row as usize, col as usize);
        if row >= h || col >= w {
            return Err(PillarError::Contract(format!(
                "pillar {p} cell ({row}, {col}) outside {h} x {w}"
            )));
        }
        let cell = row * w + col;
        if std::mem::replace(&mut seen[cell], true) {
            return Err(PillarError::Contract(format!("duplicate pillar cell ({row}, {col})")));
        }
        for c in 0..channels {
            img.data[c * h * w + cell] = features[p * channels + c];
        }
    }
    Ok(img)
}

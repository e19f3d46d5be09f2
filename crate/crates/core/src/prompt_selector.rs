//! Point prompts from a belief plane: box smoothing, then one argmax per
//! top-scoring `p x p` patch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One class's belief mass over a grid, row-major.
#[derive(Clone, PartialEq, Debug)]
pub struct BeliefPlane<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> BeliefPlane<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::domain("belief plane buffer does not match dimensions"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::domain("belief values must be finite and non-negative"));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.values[y * self.width + x]
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| v * factor).collect(),
        }
    }

    /// Value below which half of the entries fall (upper median for even counts).
    pub fn median(&self) -> T {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        v[v.len() / 2]
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLabel {
    Positive,
    Negative,
}

impl PointLabel {
    /// SAM convention: 1 foreground, 0 background.
    pub fn as_wire(self) -> i64 {
        match self {
            PointLabel::Positive => 1,
            PointLabel::Negative => 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct PromptPoint {
    pub x: f64,
    pub y: f64,
    pub label: PointLabel,
    /// Belief at the selected cell; 1.0 for points not derived from a plane.
    pub belief: f64,
}

impl PromptPoint {
    pub fn positive(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            label: PointLabel::Positive,
            belief: 1.0,
        }
    }

    pub fn negative(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            label: PointLabel::Negative,
            belief: 1.0,
        }
    }

    /// Integer pixel containing the point.
    pub fn pixel(&self) -> (usize, usize) {
        (self.x.max(0.0).floor() as usize, self.y.max(0.0).floor() as usize)
    }
}

/// Box (mean) filter with edge replication; `kernel_size` must be odd.
pub fn smooth_belief<T: Scalar>(plane: &BeliefPlane<T>, kernel_size: usize) -> Result<BeliefPlane<T>> {
    if kernel_size == 0 || kernel_size % 2 == 0 {
        return Err(Error::domain(format!("smoothing kernel must be odd, got {kernel_size}")));
    }
    if kernel_size == 1 {
        return Ok(plane.clone());
    }
    let (h, w) = (plane.height, plane.width);
    let r = (kernel_size / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let norm = T::of_usize(kernel_size * kernel_size);
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for dy in -r..=r {
                let yy = clamp(y as isize + dy, h);
                for dx in -r..=r {
                    acc += plane.values[yy * w + clamp(x as isize + dx, w)];
                }
            }
            values.push(acc / norm);
        }
    }
    Ok(BeliefPlane {
        height: h,
        width: w,
        values,
    })
}

/// Picks `n_points` cells, each the argmax of a distinct `p x p` patch,
/// taking patches in decreasing order of summed belief.
///
/// Ties on either score go to the smaller row-major index. Returned
/// coordinates are feature-grid cell indices.
pub fn select_points<T: Scalar>(
    plane: &BeliefPlane<T>,
    n_points: usize,
    patch_size: usize,
    label: PointLabel,
) -> Result<Vec<PromptPoint>> {
    if n_points == 0 {
        return Err(Error::domain("at least one point must be requested"));
    }
    if patch_size == 0 {
        return Err(Error::domain("patch size must be positive"));
    }
    let (h, w) = (plane.height, plane.width);
    let (ph, pw) = (h.div_ceil(patch_size), w.div_ceil(patch_size));
    if ph * pw < n_points {
        return Err(Error::domain(format!(
            "{n_points} points requested but only {} patches of size {patch_size} fit a {h}x{w} grid",
            ph * pw
        )));
    }

    // (sum, argmax index) per patch in row-major patch order
    let mut patches: Vec<(usize, T, usize)> = Vec::with_capacity(ph * pw);
    for py in 0..ph {
        for px in 0..pw {
            let mut sum = T::zero();
            let mut best = (T::neg_infinity(), 0usize);
            for y in py * patch_size..((py + 1) * patch_size).min(h) {
                for x in px * patch_size..((px + 1) * patch_size).min(w) {
                    let i = y * w + x;
                    let v = plane.values[i];
                    sum += v;
                    if v > best.0 {
                        best = (v, i);
                    }
                }
            }
            patches.push((py * pw + px, sum, best.1));
        }
    }
    patches.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));

    Ok(patches
        .into_iter()
        .take(n_points)
        .map(|(_, _, i)| PromptPoint {
            x: (i % w) as f64,
            y: (i / w) as f64,
            label,
            belief: plane.values[i].as_f64(),
        })
        .collect())
}

/// Feature cell `(x_f, y_f)` to image coordinates at the cell center,
/// clamped to `[0, dim - 1]`.
pub fn map_points_to_image(
    points: &[PromptPoint],
    feature_dims: (usize, usize),
    image_dims: (usize, usize),
) -> Vec<PromptPoint> {
    let sx = image_dims.0 as f64 / feature_dims.0 as f64;
    let sy = image_dims.1 as f64 / feature_dims.1 as f64;
    points
        .iter()
        .map(|p| PromptPoint {
            x: ((p.x + 0.5) * sx).clamp(0.0, (image_dims.0 - 1) as f64),
            y: ((p.y + 0.5) * sy).clamp(0.0, (image_dims.1 - 1) as f64),
            ..*p
        })
        .collect()
}

/// Image coordinates back to the containing feature cell.
pub fn map_points_to_features(
    points: &[PromptPoint],
    image_dims: (usize, usize),
    feature_dims: (usize, usize),
) -> Vec<PromptPoint> {
    let sx = feature_dims.0 as f64 / image_dims.0 as f64;
    let sy = feature_dims.1 as f64 / image_dims.1 as f64;
    points
        .iter()
        .map(|p| PromptPoint {
            x: (p.x * sx).floor().clamp(0.0, (feature_dims.0 - 1) as f64),
            y: (p.y * sy).floor().clamp(0.0, (feature_dims.1 - 1) as f64),
            ..*p
        })
        .collect()
}

//! Promptable segmentation model interface.
//!
//! [`MockBackend`] is a deterministic stand-in for desk-scale runs;
//! [`BridgeBackend`] talks the HTTP protocol in [`wire`] to an external
//! process that hosts real weights.

mod bridge;
mod mock;
pub mod wire;

pub use bridge::BridgeBackend;
pub use mock::{MockBackend, MockConfig};

use serde::{Deserialize, Serialize};

use crate::anchor_bank::FeatureMap;
use crate::error::Result;
use crate::prompt_selector::PromptPoint;
use crate::raster::{Image, Mask};

/// Session constants reported by `/v1/describe`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BackendInfo {
    pub feature_dim: usize,
    pub feature_height: usize,
    pub feature_width: usize,
    pub input_size: usize,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_hook: Option<String>,
}

/// Session-scoped id of a cached image embedding.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingHandle(pub String);

/// Inclusive pixel box `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }
}

/// Labeled points plus an optional box, in image pixel coordinates.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct PromptSet {
    pub points: Vec<PromptPoint>,
    #[serde(rename = "box")]
    pub bbox: Option<BoundingBox>,
}

impl PromptSet {
    pub fn from_points(points: Vec<PromptPoint>) -> Self {
        Self { points, bbox: None }
    }

    pub fn with_box(mut self, bbox: BoundingBox) -> Self {
        self.bbox = Some(bbox);
        self
    }

    /// Usable when there is a positive point or a box.
    pub fn is_usable(&self) -> bool {
        self.bbox.is_some()
            || self
                .points
                .iter()
                .any(|p| p.label == crate::prompt_selector::PointLabel::Positive)
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct MaskResult {
    pub mask: Mask,
    pub score: f64,
    pub handle: EmbeddingHandle,
    /// Encoder invocations so far in the session, as reported with this result.
    pub encoder_runs: u64,
}

/// What to segment: a fresh image, or one already encoded.
#[derive(Clone, Copy, Debug)]
pub enum MaskInput<'a> {
    Image(&'a Image),
    Handle(&'a EmbeddingHandle),
}

/// A promptable segmenter. Implementations are safe to share across threads.
pub trait SegmenterBackend: Send + Sync {
    fn describe(&self) -> Result<BackendInfo>;

    /// Dense features from the mask decoder's pre-classification layer,
    /// with the image prompted by `grid_points`.
    fn extract_features(&self, image: &Image, grid_points: &[PromptPoint]) -> Result<FeatureMap<f32>>;

    /// Predicts a binary mask at the input image's resolution. Passing a
    /// handle skips the image encoder.
    fn predict_mask(&self, input: MaskInput<'_>, prompts: &PromptSet) -> Result<MaskResult>;

    /// Encoder invocations so far, if the backend tracks them.
    fn encoder_runs(&self) -> Option<u64>;
}

/// A `n x n` grid of positive points at cell centers of a `width x height` image.
pub fn point_grid(n: usize, width: usize, height: usize) -> Vec<PromptPoint> {
    let (sx, sy) = (width as f64 / n as f64, height as f64 / n as f64);
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            pts.push(PromptPoint::positive((i as f64 + 0.5) * sx, (j as f64 + 0.5) * sy));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_image_evenly() {
        let g = point_grid(32, 1024, 1024);
        assert_eq!(g.len(), 1024);
        assert_eq!((g[0].x, g[0].y), (16.0, 16.0));
        assert_eq!((g[1023].x, g[1023].y), (1008.0, 1008.0));
    }

    #[test]
    fn prompt_usability() {
        assert!(!PromptSet::default().is_usable());
        assert!(!PromptSet::from_points(vec![PromptPoint::negative(1.0, 1.0)]).is_usable());
        assert!(PromptSet::from_points(vec![PromptPoint::positive(1.0, 1.0)]).is_usable());
        let b = BoundingBox { x0: 0, y0: 0, x1: 1, y1: 1 };
        assert!(PromptSet::default().with_box(b).is_usable());
        assert_eq!(b.area(), 4);
    }
}

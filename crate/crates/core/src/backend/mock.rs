use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use crate::anchor_bank::{FeatureMap, FeatureSource};
use crate::backend::{BackendInfo, EmbeddingHandle, MaskInput, MaskResult, PromptSet, SegmenterBackend};
use crate::error::{Error, Result};
use crate::prompt_selector::{PointLabel, PromptPoint};
use crate::raster::{Image, Mask};

#[derive(Clone, PartialEq, Debug)]
pub struct MockConfig {
    /// Side of the square image accepted by `extract_features`.
    pub input_size: usize,
    /// Pixels per feature cell along each axis.
    pub stride: usize,
    /// One-hot width; luma is quantized into this many bins.
    pub feature_dim: usize,
    pub seed: u64,
    pub noise: f32,
    pub ramp: f32,
    /// L2 RGB distance (8-bit scale) for the region-grow mask predictor.
    pub color_tolerance: f64,
    pub cache_capacity: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            input_size: 1024,
            stride: 8,
            feature_dim: 16,
            seed: 42,
            noise: 0.1,
            ramp: 0.05,
            color_tolerance: 30.0,
            cache_capacity: 16,
        }
    }
}

#[derive(Default)]
struct Session {
    cache: HashMap<String, Image>,
    order: VecDeque<String>,
    encoder_runs: u64,
    next_id: u64,
}

/// Deterministic backend.
///
/// Features: one-hot of the luma bin at each cell center, plus hashed noise
/// in `[-noise, noise]` and a diagonal ramp of height `ramp`. Masks: region
/// grow from positive points over pixels within `color_tolerance` of the
/// seed color, minus the regions grown from negative points, inside the box
/// when one is given.
pub struct MockBackend {
    config: MockConfig,
    session: Mutex<Session>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [-1, 1], a pure function of its arguments.
fn hashed_unit(seed: u64, y: usize, x: usize, d: usize) -> f32 {
    let h = splitmix(seed ^ splitmix((y as u64) << 40 ^ (x as u64) << 20 ^ d as u64));
    ((h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32
}

fn luma(px: [u8; 3]) -> f64 {
    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
}

fn color_dist(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        Self {
            config,
            session: Mutex::new(Session::default()),
        }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// Luma bin used as the class id of a pixel.
    pub fn quantize(&self, px: [u8; 3]) -> usize {
        let bins = self.config.feature_dim;
        ((luma(px) * bins as f64 / 256.0) as usize).min(bins - 1)
    }

    fn feature_side(&self) -> usize {
        self.config.input_size / self.config.stride
    }

    fn encode(&self, image: &Image) -> EmbeddingHandle {
        let mut s = self.session.lock().expect("mock session poisoned");
        s.encoder_runs += 1;
        let id = format!("mock-{}", s.next_id);
        s.next_id += 1;
        s.cache.insert(id.clone(), image.clone());
        s.order.push_back(id.clone());
        while s.order.len() > self.config.cache_capacity {
            if let Some(old) = s.order.pop_front() {
                s.cache.remove(&old);
            }
        }
        EmbeddingHandle(id)
    }

    fn lookup(&self, handle: &EmbeddingHandle) -> Result<Image> {
        let s = self.session.lock().expect("mock session poisoned");
        s.cache
            .get(&handle.0)
            .cloned()
            .ok_or_else(|| Error::Session(format!("unknown embedding id `{}`", handle.0)))
    }

    fn grow(&self, image: &Image, seed: (usize, usize), bbox: Option<&crate::backend::BoundingBox>) -> Mask {
        let (w, h) = image.dims();
        let mut mask = Mask::new(w, h);
        let inside = |x: usize, y: usize| bbox.is_none_or(|b| b.contains(x, y));
        if !inside(seed.0, seed.1) {
            return mask;
        }
        let reference = image.get(seed.0, seed.1);
        let mut stack = vec![seed];
        mask.set(seed.0, seed.1, true);
        while let Some((x, y)) = stack.pop() {
            let mut visit = |nx: usize, ny: usize| {
                if !mask.get(nx, ny)
                    && inside(nx, ny)
                    && color_dist(image.get(nx, ny), reference) < self.config.color_tolerance
                {
                    mask.set(nx, ny, true);
                    stack.push((nx, ny));
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
        mask
    }

    fn segment(&self, image: &Image, prompts: &PromptSet) -> (Mask, f64) {
        let (w, h) = image.dims();
        let clamp = |p: &PromptPoint| {
            let (x, y) = p.pixel();
            (x.min(w - 1), y.min(h - 1))
        };
        let bbox = prompts.bbox.as_ref();
        let mut positives: Vec<(usize, usize)> = prompts
            .points
            .iter()
            .filter(|p| p.label == PointLabel::Positive)
            .map(clamp)
            .collect();
        if positives.is_empty() {
            if let Some(b) = bbox {
                positives.push(((b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2));
            }
        }
        let mut mask = Mask::new(w, h);
        for &seed in &positives {
            if mask.get(seed.0, seed.1) {
                continue;
            }
            let region = self.grow(image, seed, bbox);
            for (i, &v) in region.as_slice().iter().enumerate() {
                if v {
                    mask.set(i % w, i / w, true);
                }
            }
        }
        for p in prompts.points.iter().filter(|p| p.label == PointLabel::Negative) {
            let seed = clamp(p);
            if mask.get(seed.0, seed.1) {
                let region = self.grow(image, seed, bbox);
                for (i, &v) in region.as_slice().iter().enumerate() {
                    if v {
                        mask.set(i % w, i / w, false);
                    }
                }
            }
        }
        let hits = positives.iter().filter(|s| mask.get(s.0, s.1)).count();
        let score = if positives.is_empty() {
            0.0
        } else {
            hits as f64 / positives.len() as f64
        };
        (mask, score)
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(MockConfig::default())
    }
}

impl SegmenterBackend for MockBackend {
    fn describe(&self) -> Result<BackendInfo> {
        let side = self.feature_side();
        Ok(BackendInfo {
            feature_dim: self.config.feature_dim,
            feature_height: side,
            feature_width: side,
            input_size: self.config.input_size,
            model_name: "mock-luma-onehot".to_owned(),
            feature_hook: Some("luma_bin_onehot".to_owned()),
        })
    }

    fn extract_features(&self, image: &Image, _grid_points: &[PromptPoint]) -> Result<FeatureMap<f32>> {
        let size = self.config.input_size;
        if image.dims() != (size, size) {
            return Err(Error::domain(format!(
                "mock backend expects {size}x{size} input, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        {
            self.session.lock().expect("mock session poisoned").encoder_runs += 1;
        }
        let side = self.feature_side();
        let stride = self.config.stride;
        let span = (2 * side - 2).max(1) as f32;
        let cfg = &self.config;
        let map = FeatureMap::from_fn(side, side, cfg.feature_dim, FeatureSource::Board, |y, x, d| {
            let px = image.get(x * stride + stride / 2, y * stride + stride / 2);
            let onehot = if d == self.quantize(px) { 1.0 } else { 0.0 };
            onehot + cfg.noise * hashed_unit(cfg.seed, y, x, d) + cfg.ramp * (x + y) as f32 / span
        });
        Ok(map)
    }

    fn predict_mask(&self, input: MaskInput<'_>, prompts: &PromptSet) -> Result<MaskResult> {
        if !prompts.is_usable() {
            return Err(Error::domain("prompt set needs a positive point or a box"));
        }
        let (image, handle) = match input {
            MaskInput::Image(img) => (img.clone(), self.encode(img)),
            MaskInput::Handle(h) => (self.lookup(h)?, h.clone()),
        };
        if let Some(b) = &prompts.bbox {
            if b.x0 > b.x1 || b.y0 > b.y1 || b.x1 >= image.width() || b.y1 >= image.height() {
                return Err(Error::domain("box lies outside the image"));
            }
        }
        let (mask, score) = self.segment(&image, prompts);
        Ok(MaskResult {
            mask,
            score,
            handle,
            encoder_runs: self.encoder_runs().unwrap_or(0),
        })
    }

    fn encoder_runs(&self) -> Option<u64> {
        Some(self.session.lock().expect("mock session poisoned").encoder_runs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BoundingBox;

    fn small() -> MockBackend {
        MockBackend::new(MockConfig {
            input_size: 32,
            ..MockConfig::default()
        })
    }

    #[test]
    fn features_are_deterministic_and_match_describe() {
        let b = small();
        let img = Image::from_fn(32, 32, |x, _| if x < 16 { [200; 3] } else { [40; 3] });
        let f1 = b.extract_features(&img, &[]).unwrap();
        let f2 = b.extract_features(&img, &[]).unwrap();
        assert_eq!(f1, f2);
        let info = b.describe().unwrap();
        assert_eq!((f1.height(), f1.width(), f1.dim()), (info.feature_height, info.feature_width, info.feature_dim));
        // prototype plus bounded perturbation
        let bin = b.quantize([200; 3]);
        let px = f1.pixel(0, 0);
        assert!((px[bin] - 1.0).abs() <= 0.1 + 0.05 + 1e-6);
        assert!(px.iter().enumerate().all(|(d, v)| d == bin || v.abs() <= 0.15 + 1e-6));
        assert!(b.extract_features(&Image::new(16, 16), &[]).is_err());
    }

    #[test]
    fn region_grow_and_box_clip() {
        let b = small();
        let img = Image::from_fn(20, 10, |x, _| if (4..12).contains(&x) { [180, 60, 60] } else { [20; 3] });
        let prompts = PromptSet::from_points(vec![PromptPoint::positive(6.5, 5.5)]);
        let r = b.predict_mask(MaskInput::Image(&img), &prompts).unwrap();
        assert_eq!(r.mask, Mask::from_fn(20, 10, |x, _| (4..12).contains(&x)));
        assert_eq!(r.score, 1.0);

        let boxed = prompts.clone().with_box(BoundingBox { x0: 0, y0: 0, x1: 8, y1: 9 });
        let clipped = b.predict_mask(MaskInput::Handle(&r.handle), &boxed).unwrap();
        assert_eq!(clipped.mask, Mask::from_fn(20, 10, |x, _| (4..=8).contains(&x)));

        let again = b.predict_mask(MaskInput::Handle(&r.handle), &prompts).unwrap();
        assert_eq!(again.mask, r.mask);
        assert_eq!(again.encoder_runs, r.encoder_runs);
    }

    #[test]
    fn negatives_remove_their_component() {
        let b = small();
        let img = Image::from_fn(20, 4, |x, _| if x < 10 { [200; 3] } else { [100; 3] });
        let prompts = PromptSet::from_points(vec![
            PromptPoint::positive(2.0, 1.0),
            PromptPoint::positive(15.0, 1.0),
            PromptPoint::negative(14.0, 2.0),
        ]);
        let r = b.predict_mask(MaskInput::Image(&img), &prompts).unwrap();
        assert_eq!(r.mask, Mask::from_fn(20, 4, |x, _| x < 10));
    }

    #[test]
    fn errors() {
        let b = small();
        let img = Image::new(4, 4);
        assert!(matches!(
            b.predict_mask(MaskInput::Image(&img), &PromptSet::default()),
            Err(Error::Domain(_))
        ));
        let stale = EmbeddingHandle("nope".into());
        let p = PromptSet::from_points(vec![PromptPoint::positive(0.0, 0.0)]);
        assert!(matches!(b.predict_mask(MaskInput::Handle(&stale), &p), Err(Error::Session(_))));
    }

    #[test]
    fn cache_evicts_oldest() {
        let b = MockBackend::new(MockConfig {
            cache_capacity: 2,
            ..MockConfig::default()
        });
        let img = Image::new(4, 4);
        let p = PromptSet::from_points(vec![PromptPoint::positive(0.0, 0.0)]);
        let first = b.predict_mask(MaskInput::Image(&img), &p).unwrap().handle;
        b.predict_mask(MaskInput::Image(&img), &p).unwrap();
        b.predict_mask(MaskInput::Image(&img), &p).unwrap();
        assert!(b.predict_mask(MaskInput::Handle(&first), &p).is_err());
        assert_eq!(b.encoder_runs(), Some(3));
    }
}

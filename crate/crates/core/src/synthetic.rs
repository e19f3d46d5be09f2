//! Deterministic synthetic images with exact masks.
//!
//! Each case is a dark frame holding a body ellipse, a small bright-ish
//! structure below the center and two bright disjoint foreground ellipses
//! with seeded jitter and mild grayscale noise. Intensity levels sit at the
//! centers of 16-level luma bins so noise never changes a pixel's bin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::{Image, Mask};

pub const LEVEL_OUTSIDE: u8 = 24;
pub const LEVEL_BODY: u8 = 72;
pub const LEVEL_STRUCTURE: u8 = 104;
pub const LEVEL_FOREGROUND: u8 = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCase {
    pub image: Image,
    pub mask: Mask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixtureParams {
    pub size: usize,
    /// Per-pixel grayscale noise amplitude.
    pub noise: i32,
    /// Maximum center offset of each foreground ellipse, as a fraction of `size`.
    pub jitter: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            size: 512,
            noise: 4,
            jitter: 8.0 / 512.0,
        }
    }
}

fn inside(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    let (dx, dy) = ((x - cx) / a, (y - cy) / b);
    dx * dx + dy * dy <= 1.0
}

/// Case `index` of the family seeded by `seed`.
pub fn case(seed: u64, index: u64, params: &FixtureParams) -> SyntheticCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let s = params.size as f64;
    let mut lobe = |cx: f64| {
        (
            (cx + rng.random_range(-1.0..=1.0) * params.jitter) * s,
            (0.5 + rng.random_range(-1.0..=1.0) * params.jitter) * s,
            (56.0 + rng.random_range(-6.0..=6.0)) / 512.0 * s,
            (100.0 + rng.random_range(-6.0..=6.0)) / 512.0 * s,
        )
    };
    let left = lobe(176.0 / 512.0);
    let right = lobe(336.0 / 512.0);
    let lobes = [left, right];

    let mut mask = Mask::new(params.size, params.size);
    let image = Image::from_fn(params.size, params.size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let level = if lobes.iter().any(|&(cx, cy, a, b)| inside(px, py, cx, cy, a, b)) {
            mask.set(x, y, true);
            LEVEL_FOREGROUND
        } else if inside(px, py, 0.5 * s, 420.0 / 512.0 * s, 24.0 / 512.0 * s, 30.0 / 512.0 * s) {
            LEVEL_STRUCTURE
        } else if inside(px, py, 0.5 * s, 0.5 * s, 230.0 / 512.0 * s, 200.0 / 512.0 * s) {
            LEVEL_BODY
        } else {
            LEVEL_OUTSIDE
        };
        let v = (level as i32 + rng.random_range(-params.noise..=params.noise)).clamp(0, 255) as u8;
        [v, v, v]
    });
    SyntheticCase { image, mask }
}

/// A reference case followed by `n_targets` target cases.
pub fn dataset(seed: u64, n_targets: usize, params: &FixtureParams) -> (SyntheticCase, Vec<SyntheticCase>) {
    let reference = case(seed, 0, params);
    let targets = (1..=n_targets as u64).map(|i| case(seed, i, params)).collect();
    (reference, targets)
}

/// Luma levels of the band target, left to right.
pub const BAND_LEVELS: [u8; 3] = [194, 136, 78];

/// A reference with foreground at the first band level over background at
/// the last, and a target of three equal vertical bands. The middle band
/// matches neither class.
pub fn band_case(size: usize) -> (SyntheticCase, Image) {
    let [fg, _, bg] = BAND_LEVELS;
    let mask = Mask::from_fn(size, size, |x, y| {
        let c = size as f64 / 2.0;
        let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
        dx * dx + dy * dy <= (size as f64 / 4.0).powi(2)
    });
    let image = Image::from_fn(size, size, |x, y| if mask.get(x, y) { [fg; 3] } else { [bg; 3] });
    let target = Image::from_fn(size, size, |x, _| [BAND_LEVELS[(x * 3 / size).min(2)]; 3]);
    (SyntheticCase { image, mask }, target)
}

/// Column ranges of the band target's bands, shrunk by `margin` on each side.
pub fn band_interiors(width: usize, margin: usize) -> [std::ops::Range<usize>; 3] {
    let edge = |k: usize| k * width / 3;
    [0, 1, 2].map(|k| edge(k) + margin..edge(k + 1) - margin)
}

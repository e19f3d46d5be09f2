//! Target perturbations, the 2x2 comparison board, and warping of the
//! geometric branch back into the original frame.
//!
//! Coordinates follow the pixel-center convention: pixel `(x, y)` sits at
//! integer coordinates and the frame center is `((w - 1) / 2, (h - 1) / 2)`.

use serde::{Deserialize, Serialize};

use crate::anchor_bank::{FeatureMap, FeatureSource};
use crate::error::{Error, Result};
use crate::evidential::EvidenceMap;
use crate::raster::{to_u8, Image};
use crate::scalar::Scalar;

type Affine = [[f64; 3]; 2];

const IDENTITY: Affine = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
const SNAP_EPS: f64 = 1e-9;

fn compose(a: &Affine, b: &Affine) -> Affine {
    // a after b
    let mut out = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + if c == 2 { a[r][2] } else { 0.0 };
        }
    }
    out
}

fn invert(m: &Affine) -> Option<Affine> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !det.is_finite() || det.abs() < 1e-12 {
        return None;
    }
    let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
    Some([
        [a, b, -(a * m[0][2] + b * m[1][2])],
        [c, d, -(c * m[0][2] + d * m[1][2])],
    ])
}

#[inline]
fn apply(m: &Affine, x: f64, y: f64) -> (f64, f64) {
    (
        m[0][0] * x + m[0][1] * y + m[0][2],
        m[1][0] * x + m[1][1] * y + m[1][2],
    )
}

/// Scale, skew and rotation magnitudes for the geometric branch.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub skew: f64,
}

impl Default for GeometricParams {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            scale: 0.9,
            skew: 0.05,
        }
    }
}

impl GeometricParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            skew: 0.0,
        }
    }
}

/// Forward affine map in the coordinates of a `frame` (width, height), with
/// its cached inverse.
#[derive(Clone, PartialEq, Debug)]
pub struct GeometricTransform {
    forward: Affine,
    inverse: Affine,
    frame: (usize, usize),
}

impl GeometricTransform {
    pub fn new(forward: Affine, frame: (usize, usize)) -> Result<Self> {
        let inverse = invert(&forward).ok_or_else(|| Error::domain("geometric transform is singular"))?;
        Ok(Self {
            forward,
            inverse,
            frame,
        })
    }

    pub fn identity(frame: (usize, usize)) -> Self {
        Self {
            forward: IDENTITY,
            inverse: IDENTITY,
            frame,
        }
    }

    /// `rotate . skew . scale` about the frame center.
    pub fn about_center(params: &GeometricParams, frame: (usize, usize)) -> Result<Self> {
        if !(params.scale > 0.0) || !params.scale.is_finite() {
            return Err(Error::domain(format!("scale must be positive, got {}", params.scale)));
        }
        let (cx, cy) = ((frame.0 as f64 - 1.0) / 2.0, (frame.1 as f64 - 1.0) / 2.0);
        let (s, c) = params.rotation_deg.to_radians().sin_cos();
        let to_origin = [[1.0, 0.0, -cx], [0.0, 1.0, -cy]];
        let scale = [[params.scale, 0.0, 0.0], [0.0, params.scale, 0.0]];
        let skew = [[1.0, params.skew, 0.0], [0.0, 1.0, 0.0]];
        let rotate = [[c, -s, 0.0], [s, c, 0.0]];
        let back = [[1.0, 0.0, cx], [0.0, 1.0, cy]];
        let m = compose(&back, &compose(&rotate, &compose(&skew, &compose(&scale, &to_origin))));
        Self::new(m, frame)
    }

    pub fn forward(&self) -> &Affine {
        &self.forward
    }

    pub fn inverse(&self) -> &Affine {
        &self.inverse
    }

    pub fn frame(&self) -> (usize, usize) {
        self.frame
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        apply(&self.forward, x, y)
    }

    pub fn unmap(&self, x: f64, y: f64) -> (f64, f64) {
        apply(&self.inverse, x, y)
    }

    /// The same geometric motion expressed on a `grid` (width, height) that
    /// covers the frame at a different resolution.
    pub fn for_grid(&self, grid: (usize, usize)) -> Self {
        if grid == self.frame {
            return self.clone();
        }
        // grid cell i is centered at frame coordinate s * i + (s - 1) / 2
        let sx = self.frame.0 as f64 / grid.0 as f64;
        let sy = self.frame.1 as f64 / grid.1 as f64;
        let to_frame = [[sx, 0.0, (sx - 1.0) / 2.0], [0.0, sy, (sy - 1.0) / 2.0]];
        let to_grid = invert(&to_frame).expect("positive scale");
        let forward = compose(&to_grid, &compose(&self.forward, &to_frame));
        let inverse = compose(&to_grid, &compose(&self.inverse, &to_frame));
        Self {
            forward,
            inverse,
            frame: grid,
        }
    }

    /// Largest entry of `|forward . inverse - I|`.
    pub fn inverse_residual(&self) -> f64 {
        let p = compose(&self.forward, &self.inverse);
        let mut worst = 0.0f64;
        for r in 0..2 {
            for c in 0..3 {
                worst = worst.max((p[r][c] - IDENTITY[r][c]).abs());
            }
        }
        worst
    }
}

/// Bilinear sampling position, or `None` outside `[0, n-1]`.
#[inline]
fn sample_axis(v: f64, n: usize) -> Option<(usize, usize, f64)> {
    let r = v.round();
    let v = if (v - r).abs() < SNAP_EPS { r } else { v };
    if v < 0.0 || v > (n - 1) as f64 {
        return None;
    }
    let i0 = v.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    Some((i0, i1, v - i0 as f64))
}

/// Resamples `planes` (each `h * w`, row-major) at `source(x, y)` for every
/// output pixel. Returns the out-of-support flags.
fn resample_planes<T: Scalar>(
    planes: &[&[T]],
    w: usize,
    h: usize,
    source: impl Fn(f64, f64) -> (f64, f64),
    out: &mut [Vec<T>],
) -> Vec<bool> {
    let mut outside = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (sx, sy) = source(x as f64, y as f64);
            match (sample_axis(sx, w), sample_axis(sy, h)) {
                (Some((x0, x1, wx)), Some((y0, y1, wy))) => {
                    let (wx, wy) = (T::of(wx), T::of(wy));
                    let (one_x, one_y) = (T::one() - wx, T::one() - wy);
                    for (plane, dst) in planes.iter().zip(out.iter_mut()) {
                        let top = plane[y0 * w + x0] * one_x + plane[y0 * w + x1] * wx;
                        let bot = plane[y1 * w + x0] * one_x + plane[y1 * w + x1] * wx;
                        dst[i] = top * one_y + bot * wy;
                    }
                }
                _ => {
                    outside[i] = true;
                    for dst in out.iter_mut() {
                        dst[i] = T::zero();
                    }
                }
            }
        }
    }
    outside
}

/// `x^g(p) = x(T^-1 p)`, bilinear, zero outside the source.
pub fn apply_geometric(img: &Image, t: &GeometricTransform) -> Image {
    let (w, h) = img.dims();
    let t = t.for_grid((w, h));
    let mut channels: Vec<Vec<f64>> = vec![vec![0.0; w * h]; 3];
    for (i, px) in img.as_bytes().chunks_exact(3).enumerate() {
        for c in 0..3 {
            channels[c][i] = px[c] as f64;
        }
    }
    let refs: Vec<&[f64]> = channels.iter().map(Vec::as_slice).collect();
    let mut out = vec![vec![0.0; w * h]; 3];
    resample_planes(&refs, w, h, |x, y| t.unmap(x, y), &mut out);
    let mut data = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        for ch in &out {
            data.push(to_u8(ch[i]));
        }
    }
    Image::from_raw(w, h, data).expect("dimensions preserved")
}

fn warp_evidence<T: Scalar>(
    e: &EvidenceMap<T>,
    source: impl Fn(f64, f64) -> (f64, f64),
) -> (EvidenceMap<T>, Vec<bool>) {
    let (h, w, k) = (e.height(), e.width(), e.num_classes());
    let planes: Vec<&[T]> = (0..k).map(|c| e.plane(c)).collect();
    let mut out = vec![vec![T::zero(); w * h]; k];
    let outside = resample_planes(&planes, w, h, source, &mut out);
    let mut warped = EvidenceMap::zeros(h, w, k);
    for (c, plane) in out.into_iter().enumerate() {
        warped.plane_mut(c).copy_from_slice(&plane);
    }
    (warped, outside)
}

/// Brings geometric-branch evidence back to the original frame:
/// `e'(p) = e^g(T p)`. The second value flags pixels whose source lies
/// outside the grid.
pub fn inverse_warp_evidence<T: Scalar>(e: &EvidenceMap<T>, t: &GeometricTransform) -> (EvidenceMap<T>, Vec<bool>) {
    let t = t.for_grid((e.width(), e.height()));
    warp_evidence(e, |x, y| t.map(x, y))
}

/// Pushes evidence through the transform the way [`apply_geometric`] moves
/// image content: `e'(p) = e(T^-1 p)`.
pub fn forward_warp_evidence<T: Scalar>(e: &EvidenceMap<T>, t: &GeometricTransform) -> (EvidenceMap<T>, Vec<bool>) {
    let t = t.for_grid((e.width(), e.height()));
    warp_evidence(e, |x, y| t.unmap(x, y))
}

/// Contrast and saturation factors of the photometric branch.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotometricTransform {
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for PhotometricTransform {
    fn default() -> Self {
        Self {
            contrast: 1.2,
            saturation: 0.8,
        }
    }
}

impl PhotometricTransform {
    pub fn identity() -> Self {
        Self {
            contrast: 1.0,
            saturation: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast > 0.0) || !self.contrast.is_finite() {
            return Err(Error::domain(format!("contrast factor must be positive, got {}", self.contrast)));
        }
        // saturation 0 is full desaturation
        if !(self.saturation >= 0.0) || !self.saturation.is_finite() {
            return Err(Error::domain(format!(
                "saturation factor must be non-negative, got {}",
                self.saturation
            )));
        }
        Ok(())
    }
}

#[inline]
fn luma(px: [f64; 3]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Contrast about the mean luma, then a blend toward per-pixel gray.
pub fn apply_photometric(img: &Image, t: &PhotometricTransform) -> Result<Image> {
    t.validate()?;
    let n = img.width() * img.height();
    let pixels: Vec<[f64; 3]> = img
        .as_bytes()
        .chunks_exact(3)
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let mean = if n == 0 {
        0.0
    } else {
        pixels.iter().map(|&p| luma(p)).sum::<f64>() / n as f64
    };
    let mut data = Vec::with_capacity(n * 3);
    for p in pixels {
        let contrasted = p.map(|v| (mean + t.contrast * (v - mean)).clamp(0.0, 255.0));
        let gray = luma(contrasted);
        for v in contrasted {
            data.push(to_u8(gray + t.saturation * (v - gray)));
        }
    }
    Image::from_raw(img.width(), img.height(), data)
}

/// Role of a board quadrant.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tile {
    Reference,
    Original,
    Geometric,
    Photometric,
}

impl Tile {
    pub const ALL: [Tile; 4] = [Tile::Reference, Tile::Original, Tile::Geometric, Tile::Photometric];

    pub fn source(self) -> FeatureSource {
        match self {
            Tile::Reference => FeatureSource::Reference,
            Tile::Original => FeatureSource::TargetOriginal,
            Tile::Geometric => FeatureSource::TargetGeometric,
            Tile::Photometric => FeatureSource::TargetPhotometric,
        }
    }
}

/// Quadrant `(row, col)` of each tile on the 2x2 board.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridLayout {
    pub tile_size: usize,
    pub reference: (usize, usize),
    pub original: (usize, usize),
    pub geometric: (usize, usize),
    pub photometric: (usize, usize),
}

impl GridLayout {
    pub fn new(tile_size: usize) -> Self {
        Self {
            tile_size,
            reference: (0, 0),
            original: (0, 1),
            geometric: (1, 0),
            photometric: (1, 1),
        }
    }

    pub fn quadrant(&self, tile: Tile) -> (usize, usize) {
        match tile {
            Tile::Reference => self.reference,
            Tile::Original => self.original,
            Tile::Geometric => self.geometric,
            Tile::Photometric => self.photometric,
        }
    }

    pub fn board_size(&self) -> usize {
        2 * self.tile_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::domain("tile size must be positive"));
        }
        let mut seen = [false; 4];
        for tile in Tile::ALL {
            let (r, c) = self.quadrant(tile);
            if r > 1 || c > 1 {
                return Err(Error::domain(format!("{tile:?} quadrant ({r}, {c}) is off the 2x2 board")));
            }
            if std::mem::replace(&mut seen[r * 2 + c], true) {
                return Err(Error::domain(format!("quadrant ({r}, {c}) is used twice")));
            }
        }
        Ok(())
    }
}

impl Default for GridLayout {
    fn default() -> Self {
        Self::new(512)
    }
}

/// Places the reference and the three target variants on one board.
pub fn assemble_grid(
    reference: &Image,
    original: &Image,
    geometric: &Image,
    photometric: &Image,
    layout: &GridLayout,
) -> Result<Image> {
    layout.validate()?;
    let t = layout.tile_size;
    let tiles = [reference, original, geometric, photometric];
    if let Some((tile, img)) = Tile::ALL.iter().zip(tiles).find(|(_, img)| img.dims() != (t, t)) {
        return Err(Error::domain(format!(
            "{tile:?} tile is {}x{}, expected {t}x{t}",
            img.width(),
            img.height()
        )));
    }
    let mut board = Image::new(2 * t, 2 * t);
    for (tile, img) in Tile::ALL.iter().zip(tiles) {
        let (r, c) = layout.quadrant(*tile);
        board.blit(img, c * t, r * t)?;
    }
    Ok(board)
}

/// Splits a board back into `[reference, original, geometric, photometric]`.
pub fn disassemble_grid(board: &Image, layout: &GridLayout) -> Result<[Image; 4]> {
    layout.validate()?;
    let t = layout.tile_size;
    if board.dims() != (2 * t, 2 * t) {
        return Err(Error::domain("board size does not match layout"));
    }
    let cut = |tile: Tile| {
        let (r, c) = layout.quadrant(tile);
        board.crop(c * t, r * t, t, t)
    };
    Ok([
        cut(Tile::Reference)?,
        cut(Tile::Original)?,
        cut(Tile::Geometric)?,
        cut(Tile::Photometric)?,
    ])
}

/// Per-tile feature maps cut from a board feature map.
#[derive(Clone, PartialEq, Debug)]
pub struct TileFeatures<T> {
    pub reference: FeatureMap<T>,
    pub original: FeatureMap<T>,
    pub geometric: FeatureMap<T>,
    pub photometric: FeatureMap<T>,
}

impl<T> TileFeatures<T> {
    pub fn get(&self, tile: Tile) -> &FeatureMap<T> {
        match tile {
            Tile::Reference => &self.reference,
            Tile::Original => &self.original,
            Tile::Geometric => &self.geometric,
            Tile::Photometric => &self.photometric,
        }
    }
}

pub fn disassemble_features<T: Scalar>(fm: &FeatureMap<T>, layout: &GridLayout) -> Result<TileFeatures<T>> {
    layout.validate()?;
    if fm.height() % 2 != 0 || fm.width() % 2 != 0 {
        return Err(Error::domain(format!(
            "feature map {}x{} cannot be split into quadrants",
            fm.height(),
            fm.width()
        )));
    }
    let (h, w) = (fm.height() / 2, fm.width() / 2);
    let mut parts: Vec<FeatureMap<T>> = Vec::with_capacity(4);
    for tile in Tile::ALL {
        let (r, c) = layout.quadrant(tile);
        parts.push(fm.crop(r * h, c * w, h, w)?.with_source(tile.source()));
    }
    let mut it = parts.into_iter();
    let mut next = || it.next().expect("four tiles");
    Ok(TileFeatures {
        reference: next(),
        original: next(),
        geometric: next(),
        photometric: next(),
    })
}

/// Inverse of [`disassemble_features`].
pub fn assemble_features<T: Scalar>(parts: &TileFeatures<T>, layout: &GridLayout) -> Result<FeatureMap<T>> {
    layout.validate()?;
    let first = &parts.reference;
    let (h, w, d) = (first.height(), first.width(), first.dim());
    let mut board = FeatureMap::from_fn(2 * h, 2 * w, d, FeatureSource::Board, |_, _, _| T::zero());
    for tile in Tile::ALL {
        let part = parts.get(tile);
        if (part.height(), part.width(), part.dim()) != (h, w, d) {
            return Err(Error::domain("tile feature maps differ in shape"));
        }
        let (r, c) = layout.quadrant(tile);
        board.blit(part, r * h, c * w);
    }
    Ok(board)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_inverse_is_tight() {
        let t = GeometricTransform::about_center(&GeometricParams::default(), (512, 512)).unwrap();
        assert!(t.inverse_residual() < 1e-9);
        assert!(t.for_grid((64, 64)).inverse_residual() < 1e-9);
        let singular = [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]];
        assert!(GeometricTransform::new(singular, (4, 4)).is_err());
        let bad = GeometricParams {
            scale: 0.0,
            ..GeometricParams::default()
        };
        assert!(GeometricTransform::about_center(&bad, (4, 4)).is_err());
    }

    #[test]
    fn center_is_fixed_and_grid_rescale_keeps_it() {
        let t = GeometricTransform::about_center(&GeometricParams::default(), (512, 512)).unwrap();
        let (x, y) = t.map(255.5, 255.5);
        assert!((x - 255.5).abs() < 1e-9 && (y - 255.5).abs() < 1e-9);
        let g = t.for_grid((64, 64));
        let (x, y) = g.map(31.5, 31.5);
        assert!((x - 31.5).abs() < 1e-9 && (y - 31.5).abs() < 1e-9);
    }

    #[test]
    fn identity_warp_is_bitwise() {
        let img = Image::from_fn(9, 7, |x, y| [(x * 27) as u8, (y * 31) as u8, ((x + y) * 5) as u8]);
        let out = apply_geometric(&img, &GeometricTransform::identity((9, 7)));
        assert_eq!(out, img);
    }

    #[test]
    fn quarter_turn_moves_square() {
        let img = Image::from_fn(8, 8, |x, y| if x < 3 && y < 3 { [255; 3] } else { [0; 3] });
        let rot = GeometricParams {
            rotation_deg: 90.0,
            scale: 1.0,
            skew: 0.0,
        };
        let t = GeometricTransform::about_center(&rot, (8, 8)).unwrap();
        let out = apply_geometric(&img, &t);
        // (x, y) -> (7 - y, x): top-left block lands top-right
        let expected = Image::from_fn(8, 8, |x, y| if x >= 5 && y < 3 { [255; 3] } else { [0; 3] });
        assert_eq!(out, expected);
    }

    #[test]
    fn scale_up_then_down_recovers_ramp() {
        let img = Image::from_fn(64, 64, |x, y| {
            let v = (x * 2 + y) as u8;
            [v, v, v]
        });
        let up = GeometricTransform::about_center(
            &GeometricParams {
                rotation_deg: 0.0,
                scale: 2.0,
                skew: 0.0,
            },
            (64, 64),
        )
        .unwrap();
        let down = GeometricTransform::about_center(
            &GeometricParams {
                rotation_deg: 0.0,
                scale: 0.5,
                skew: 0.0,
            },
            (64, 64),
        )
        .unwrap();
        let back = apply_geometric(&apply_geometric(&img, &up), &down);
        let mut total = 0.0;
        let mut n = 0;
        for y in 20..44 {
            for x in 20..44 {
                total += (back.get(x, y)[0] as f64 - img.get(x, y)[0] as f64).abs();
                n += 1;
            }
        }
        assert!(total / (n as f64) < 2.0);
    }

    #[test]
    fn photometric_examples() {
        let img = Image::from_fn(5, 4, |x, y| [(x * 50) as u8, (y * 60) as u8, 100]);
        assert_eq!(apply_photometric(&img, &PhotometricTransform::identity()).unwrap(), img);

        let gray = apply_photometric(
            &img,
            &PhotometricTransform {
                contrast: 1.0,
                saturation: 0.0,
            },
        )
        .unwrap();
        for px in gray.as_bytes().chunks_exact(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }

        let flat = Image::filled(6, 6, [90, 90, 90]);
        let t = PhotometricTransform {
            contrast: 1.2,
            saturation: 1.0,
        };
        assert_eq!(apply_photometric(&flat, &t).unwrap(), flat);

        for bad in [(0.0, 1.0), (-1.0, 1.0), (1.0, -0.1)] {
            let t = PhotometricTransform {
                contrast: bad.0,
                saturation: bad.1,
            };
            assert!(apply_photometric(&img, &t).is_err());
        }
    }

    #[test]
    fn board_round_trip() {
        let layout = GridLayout::new(4);
        let tiles: Vec<Image> = (0..4).map(|i| Image::filled(4, 4, [i * 60, 10, 200 - i * 40])).collect();
        let board = assemble_grid(&tiles[0], &tiles[1], &tiles[2], &tiles[3], &layout).unwrap();
        assert_eq!(board.get(0, 0), tiles[0].get(0, 0));
        assert_eq!(board.get(5, 0), tiles[1].get(0, 0));
        assert_eq!(board.get(0, 5), tiles[2].get(0, 0));
        assert_eq!(board.get(7, 7), tiles[3].get(0, 0));
        let back = disassemble_grid(&board, &layout).unwrap();
        assert_eq!(back.to_vec(), tiles);

        let small = Image::filled(3, 3, [0; 3]);
        assert!(assemble_grid(&small, &tiles[1], &tiles[2], &tiles[3], &layout).is_err());
    }

    #[test]
    fn layout_validation() {
        let mut l = GridLayout::new(8);
        l.validate().unwrap();
        l.photometric = l.original;
        assert!(l.validate().is_err());
        let mut l = GridLayout::new(8);
        l.geometric = (2, 0);
        assert!(l.validate().is_err());
    }

    #[test]
    fn feature_quadrants_follow_layout() {
        let fm = FeatureMap::from_fn(4, 4, 1, FeatureSource::Board, |y, x, _| ((y / 2) * 2 + x / 2) as f64);
        let layout = GridLayout::new(16);
        let parts = disassemble_features(&fm, &layout).unwrap();
        assert!(parts.reference.as_slice().iter().all(|&v| v == 0.0));
        assert!(parts.original.as_slice().iter().all(|&v| v == 1.0));
        assert!(parts.geometric.as_slice().iter().all(|&v| v == 2.0));
        assert!(parts.photometric.as_slice().iter().all(|&v| v == 3.0));
        assert_eq!(parts.geometric.source(), FeatureSource::TargetGeometric);
        assert_eq!(assemble_features(&parts, &layout).unwrap(), fm);

        let swapped = GridLayout {
            reference: (1, 1),
            photometric: (0, 0),
            ..GridLayout::new(16)
        };
        let parts = disassemble_features(&fm, &swapped).unwrap();
        assert!(parts.reference.as_slice().iter().all(|&v| v == 3.0));
        assert_eq!(parts.reference.source(), FeatureSource::Reference);
        assert!(parts.photometric.as_slice().iter().all(|&v| v == 0.0));

        let odd = FeatureMap::from_fn(3, 4, 1, FeatureSource::Board, |_, _, _| 0.0);
        assert!(disassemble_features(&odd, &layout).is_err());
    }

    #[test]
    fn identity_evidence_warp_is_exact() {
        let data: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).sin().abs()).collect();
        let e = EvidenceMap::from_planes(4, 4, 2, data).unwrap();
        let (w, outside) = inverse_warp_evidence(&e, &GeometricTransform::identity((16, 16)));
        assert_eq!(w, e);
        assert!(outside.iter().all(|&o| !o));
    }

    #[test]
    fn quarter_turn_on_one_hot_evidence() {
        // hot cell at (x=0, y=0) of a 2x2 grid
        let e = EvidenceMap::<f64>::from_planes(2, 2, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let rot = GeometricParams {
            rotation_deg: 90.0,
            scale: 1.0,
            skew: 0.0,
        };
        let t = GeometricTransform::about_center(&rot, (16, 16)).unwrap();
        let (fwd, outside) = forward_warp_evidence(&e, &t);
        assert!(outside.iter().all(|&o| !o));
        // forward motion (x, y) -> (1 - y, x) sends (0, 0) to (1, 0)
        assert!((fwd.get(0, 0, 1) - 1.0).abs() < 1e-9);
        let (back, _) = inverse_warp_evidence(&fwd, &t);
        assert!((back.get(0, 0, 0) - 1.0).abs() < 1e-9);
        assert!(back.plane(0)[1..].iter().all(|v| v.abs() < 1e-9));
    }
}

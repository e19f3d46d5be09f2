//! Per-class anchor sets clustered from reference features, and the
//! max-similarity evidence they induce on target features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::EvidenceMap;
use crate::kmeans::{kmeans, KMeansParams};
use crate::raster::Mask;
use crate::scalar::{softplus, Scalar};

/// Which image a feature map was computed from.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Board,
    Reference,
    TargetOriginal,
    TargetGeometric,
    TargetPhotometric,
}

/// Dense `height x width x dim` features, pixel-major.
#[derive(Clone, PartialEq, Debug)]
pub struct FeatureMap<T> {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<T>,
    source: FeatureSource,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<T>, source: FeatureSource) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("feature dimension must be positive"));
        }
        if data.len() != height * width * dim {
            return Err(Error::domain(format!(
                "feature buffer of {} values does not match {height}x{width}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("feature map contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
            source,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        dim: usize,
        source: FeatureSource,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * dim);
        for y in 0..height {
            for x in 0..width {
                for d in 0..dim {
                    data.push(f(y, x, d));
                }
            }
        }
        Self {
            height,
            width,
            dim,
            data,
            source,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn with_source(mut self, source: FeatureSource) -> Self {
        self.source = source;
        self
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    #[inline]
    pub fn pixel_at(&self, index: usize) -> &[T] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            height: self.height,
            width: self.width,
            dim: self.dim,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            source: self.source,
        }
    }

    /// Copy with every pixel vector scaled to unit L2 norm (zero vectors kept).
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        for px in out.data.chunks_mut(self.dim) {
            let norm = px.iter().map(|v| *v * *v).sum::<T>().sqrt();
            if norm > T::zero() {
                px.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out
    }

    /// Window of `h x w` pixels starting at row `y0`, column `x0`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::domain("feature crop exceeds map bounds"));
        }
        let mut data = Vec::with_capacity(h * w * self.dim);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.dim;
            data.extend_from_slice(&self.data[start..start + w * self.dim]);
        }
        Ok(Self {
            height: h,
            width: w,
            dim: self.dim,
            data,
            source: self.source,
        })
    }

    pub(crate) fn blit(&mut self, tile: &Self, y0: usize, x0: usize) {
        for y in 0..tile.height {
            let src = y * tile.width * self.dim;
            let dst = ((y0 + y) * self.width + x0) * self.dim;
            self.data[dst..dst + tile.width * self.dim]
                .copy_from_slice(&tile.data[src..src + tile.width * self.dim]);
        }
    }
}

/// Integer class labels aligned to a feature grid.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::domain("label buffer does not match dimensions"));
        }
        Ok(Self { height, width, labels })
    }

    /// Nearest-neighbour downsampling of a binary mask: foreground is class 1.
    pub fn from_mask(mask: &Mask, height: usize, width: usize) -> Self {
        let small = mask.resize_nearest(width, height);
        Self {
            height,
            width,
            labels: small.as_slice().iter().map(|&v| v as usize).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

/// Centroids per class; class 0 is background.
#[derive(Clone, PartialEq, Debug)]
pub struct AnchorBank<T> {
    dim: usize,
    anchors: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> AnchorBank<T> {
    pub fn new(dim: usize, anchors: Vec<Vec<Vec<T>>>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::domain("an anchor bank needs at least 2 classes"));
        }
        for (k, set) in anchors.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::domain(format!("class {k} has no anchors")));
            }
            if set.iter().any(|a| a.len() != dim || a.iter().any(|v| !v.is_finite())) {
                return Err(Error::domain(format!("class {k} has a malformed anchor")));
            }
        }
        Ok(Self { dim, anchors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchors(&self, class: usize) -> &[Vec<T>] {
        &self.anchors[class]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.anchors.iter().map(Vec::len).collect()
    }

    pub fn push_anchor(&mut self, class: usize, anchor: Vec<T>) -> Result<()> {
        if anchor.len() != self.dim {
            return Err(Error::domain("anchor dimension mismatch"));
        }
        self.anchors[class].push(anchor);
        Ok(())
    }
}

/// Clusters each class's reference features into `counts[k]` anchors.
///
/// A class with fewer pixels than requested keeps one anchor per pixel.
pub fn build_anchors<T: Scalar>(
    features: &FeatureMap<T>,
    labels: &LabelGrid,
    counts: &[usize],
    seed: u64,
) -> Result<AnchorBank<T>> {
    if (labels.height, labels.width) != (features.height, features.width) {
        return Err(Error::domain(format!(
            "label grid {}x{} is not aligned with features {}x{}",
            labels.height, labels.width, features.height, features.width
        )));
    }
    if counts.len() < 2 {
        return Err(Error::domain("anchor counts are needed for at least 2 classes"));
    }
    let mut anchors = Vec::with_capacity(counts.len());
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::domain(format!("anchor count for class {class} must be at least 1")));
        }
        let points: Vec<&[T]> = labels
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| features.pixel_at(i))
            .collect();
        if points.is_empty() {
            return Err(Error::domain(format!("class {class} is absent from the reference labels")));
        }
        let params = KMeansParams {
            seed: seed.wrapping_add((class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..KMeansParams::default()
        };
        anchors.push(kmeans(&points, count, &params));
    }
    AnchorBank::new(features.dim, anchors)
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// `e_k[i] = max_n softplus(F[i] . g_{k,n})`.
pub fn evidence_map<T: Scalar>(features: &FeatureMap<T>, bank: &AnchorBank<T>) -> Result<EvidenceMap<T>> {
    if features.dim != bank.dim {
        return Err(Error::domain(format!(
            "feature dim {} does not match anchor dim {}",
            features.dim, bank.dim
        )));
    }
    let (h, w, k) = (features.height, features.width, bank.num_classes());
    let n = h * w;
    let per_pixel: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let f = features.pixel_at(i);
            bank.anchors
                .iter()
                .map(|set| {
                    set.iter()
                        .map(|g| softplus(dot(f, g)))
                        .fold(T::neg_infinity(), |m, v| if v > m { v } else { m })
                })
                .collect()
        })
        .collect();
    let mut data = vec![T::zero(); n * k];
    for (i, ev) in per_pixel.into_iter().enumerate() {
        for (c, v) in ev.into_iter().enumerate() {
            data[c * n + i] = v;
        }
    }
    EvidenceMap::from_planes(h, w, k, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(h: usize, w: usize, d: usize, seed: u64) -> FeatureMap<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(h, w, d, FeatureSource::TargetOriginal, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn orthogonal_anchor_gives_ln2() {
        let f = FeatureMap::new(1, 1, 2, vec![1.0, 0.0], FeatureSource::TargetOriginal).unwrap();
        let bank = AnchorBank::new(2, vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]]).unwrap();
        let e = evidence_map(&f, &bank).unwrap();
        assert_abs_diff_eq!(e.get(0, 0, 0), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn max_over_anchors() {
        let f = FeatureMap::new(1, 1, 1, vec![1.0], FeatureSource::TargetOriginal).unwrap();
        let bank = AnchorBank::new(1, vec![vec![vec![-1.0], vec![3.0]], vec![vec![0.0]]]).unwrap();
        let e = evidence_map(&f, &bank).unwrap();
        assert_abs_diff_eq!(e.get(0, 0, 0), 3.048_587_351_573_742, epsilon = 1e-12);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let f = random_map(2, 2, 3, 1);
        let bank = AnchorBank::new(2, vec![vec![vec![0.0; 2]], vec![vec![0.0; 2]]]).unwrap();
        assert!(evidence_map(&f, &bank).is_err());
    }

    #[test]
    fn build_anchors_edge_cases() {
        let f = random_map(3, 3, 4, 7);
        let labels = LabelGrid::new(3, 3, vec![0, 0, 0, 0, 1, 1, 0, 0, 0]).unwrap();

        // exactly N_k pixels: anchors are the pixel features themselves
        let bank = build_anchors(&f, &labels, &[1, 2], 42).unwrap();
        assert_eq!(bank.anchors(1), &[f.pixel(1, 1).to_vec(), f.pixel(1, 2).to_vec()]);

        // N_k = 1: the class mean
        let bg: Vec<usize> = labels.labels().iter().enumerate().filter(|(_, &l)| l == 0).map(|(i, _)| i).collect();
        let bank = build_anchors(&f, &labels, &[1, 5], 42).unwrap();
        for d in 0..4 {
            let mut m = 0.0;
            for &i in &bg {
                m += f.pixel_at(i)[d];
            }
            assert_abs_diff_eq!(bank.anchors(0)[0][d], m / bg.len() as f64, epsilon = 1e-12);
        }
        assert_eq!(bank.counts(), vec![1, 2]);

        let only_bg = LabelGrid::new(3, 3, vec![0; 9]).unwrap();
        let err = build_anchors(&f, &only_bg, &[1, 1], 42).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }

    #[test]
    fn adding_anchor_never_lowers_evidence() {
        let f = random_map(4, 4, 3, 3);
        let mut bank = AnchorBank::new(3, vec![vec![vec![0.2, -0.1, 0.4]], vec![vec![-0.3, 0.3, 0.0]]]).unwrap();
        let before = evidence_map(&f, &bank).unwrap();
        bank.push_anchor(1, vec![0.5, 0.5, 0.5]).unwrap();
        let after = evidence_map(&f, &bank).unwrap();
        for (a, b) in before.plane(1).iter().zip(after.plane(1)) {
            assert!(b >= a);
        }
        assert_eq!(before.plane(0), after.plane(0));
    }

    #[test]
    fn anchor_order_is_irrelevant() {
        let f = random_map(4, 4, 3, 5);
        let a = vec![vec![0.2, -0.1, 0.4], vec![0.9, 0.0, -0.5], vec![0.1, 0.1, 0.1]];
        let mut b = a.clone();
        b.reverse();
        let bank_a = AnchorBank::new(3, vec![a.clone(), b.clone()]).unwrap();
        let bank_b = AnchorBank::new(3, vec![b, a]).unwrap();
        let ea = evidence_map(&f, &bank_a).unwrap();
        let eb = evidence_map(&f, &bank_b).unwrap();
        assert_eq!(ea.plane(0), eb.plane(0));
        assert_eq!(ea.plane(1), eb.plane(1));
    }

    #[test]
    fn label_grid_from_mask_is_nearest() {
        let m = Mask::from_fn(8, 8, |x, y| x >= 4 && y < 4);
        let g = LabelGrid::from_mask(&m, 2, 2);
        assert_eq!(g.labels(), &[0, 1, 0, 0]);
    }

    #[test]
    fn normalization_gives_unit_vectors() {
        let f = random_map(2, 3, 4, 9).l2_normalized();
        for i in 0..6 {
            let n: f64 = f.pixel_at(i).iter().map(|v| v * v).sum();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        }
    }
}

//! Overlap and boundary metrics, the oracle baseline and dataset evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::backend::{MaskInput, PromptSet, SegmenterBackend};
use crate::error::{Error, Result};
use crate::pipeline::{preprocess, refine_mask, segment_target, PipelineConfig, ReferencePair};
use crate::prompt_selector::PromptPoint;
use crate::raster::{Mask, RawImage};

fn same_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::domain(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Dice similarity. Two empty masks score 1, one empty mask scores 0.
pub fn dsc(pred: &Mask, gt: &Mask) -> Result<f64> {
    same_dims(pred, gt)?;
    let (a, b) = (pred.count(), gt.count());
    if a + b == 0 {
        return Ok(1.0);
    }
    let both = pred.as_slice().iter().zip(gt.as_slice()).filter(|(&p, &g)| p && g).count();
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Foreground pixels with a 4-neighbor outside the mask or the frame.
pub fn boundary(mask: &Mask) -> Vec<bool> {
    let (w, h) = mask.dims();
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            out[y * w + x] = edge;
        }
    }
    out
}

/// Exact 1-D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            if f[p].is_infinite() {
                // an infinite parabola is dominated everywhere
                v[k] = q;
                z[k + 1] = f64::INFINITY;
                break;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Squared Euclidean distance from every pixel to the nearest `true` site;
/// infinite when there are none.
pub fn squared_distance_transform(sites: &[bool], width: usize, height: usize) -> Vec<f64> {
    let n = width.max(height);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut col = vec![0.0; height];
    let mut tmp = vec![0.0; n];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        edt_1d(&col, &mut tmp[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = tmp[y];
        }
    }
    for y in 0..height {
        let row = grid[y * width..(y + 1) * width].to_vec();
        edt_1d(&row, &mut grid[y * width..(y + 1) * width], &mut v, &mut z);
    }
    grid
}

/// Normalized surface distance at tolerance `tau` pixels.
///
/// Fraction of boundary pixels of either mask lying within `tau` of the
/// other mask's boundary. Two empty masks score 1, one empty mask scores 0.
pub fn nsd(pred: &Mask, gt: &Mask, tau: f64) -> Result<f64> {
    same_dims(pred, gt)?;
    if !(tau >= 0.0) {
        return Err(Error::domain(format!("tolerance must be non-negative, got {tau}")));
    }
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (w, h) = pred.dims();
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (dp, dg) = (squared_distance_transform(&bp, w, h), squared_distance_transform(&bg, w, h));
    let tau2 = tau * tau;
    let hits = |b: &[bool], d: &[f64]| b.iter().zip(d).filter(|(&on, &d2)| on && d2 <= tau2).count();
    let total = bp.iter().filter(|&&b| b).count() + bg.iter().filter(|&&b| b).count();
    Ok((hits(&bp, &dg) + hits(&bg, &dp)) as f64 / total as f64)
}

/// `n` distinct ground-truth foreground pixels drawn uniformly, at pixel
/// centers. Fewer are returned when the mask is smaller than `n`.
pub fn oracle_points(gt: &Mask, n: usize, seed: u64) -> Result<Vec<PromptPoint>> {
    let fg = gt.foreground();
    if fg.is_empty() {
        return Err(Error::domain("ground truth has no foreground"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, fg.len(), n.min(fg.len()))
        .into_iter()
        .map(|i| {
            let (x, y) = fg[i];
            PromptPoint::positive(x as f64 + 0.5, y as f64 + 0.5)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Evaluation set. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub reference: ManifestEntry,
    pub targets: Vec<ManifestEntry>,
    /// Mask value treated as foreground (255 always counts).
    #[serde(default = "default_class_id")]
    pub class_id: u8,
}

fn default_class_id() -> u8 {
    1
}

impl Manifest {
    /// Reads the manifest, resolves paths and checks that every file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.reference.image);
        resolve(&mut m.reference.mask);
        for t in &mut m.targets {
            resolve(&mut t.image);
            resolve(&mut t.mask);
        }
        let missing: Vec<PathBuf> = m.files().filter(|p| !p.exists()).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })
    }

    fn files(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.reference.image, &self.reference.mask]
            .into_iter()
            .chain(self.targets.iter().flat_map(|t| [&t.image, &t.mask]))
    }

    /// Targets excluding the reference itself.
    pub fn target_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.targets.iter().filter(move |t| t.image != self.reference.image)
    }

    pub fn load_reference(&self, cfg: &PipelineConfig) -> Result<ReferencePair> {
        let raw = RawImage::load_png(&self.reference.image)?;
        let mask = Mask::load_png(&self.reference.mask, self.class_id)?;
        if mask.dims() != (raw.width, raw.height) {
            return Err(Error::Format {
                path: self.reference.mask.clone(),
                message: "mask size differs from its image".into(),
            });
        }
        ReferencePair::from_raw(&raw, &mask, cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Eviprompt,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Eviprompt => "eviprompt",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image: PathBuf,
    pub dsc: Option<f64>,
    pub nsd: Option<f64>,
    /// Prompt points that fell on ground-truth foreground.
    pub points_in_gt: Option<usize>,
    pub n_points: Option<usize>,
    pub refined: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self { n, mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub nsd_tolerance: f64,
    pub dsc: Summary,
    pub nsd: Summary,
    pub failures: usize,
    pub images: Vec<ImageResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table; percentages as `mean ± std`.
    pub fn to_table(&self) -> String {
        let pct = |s: &Summary| format!("{:6.2} ± {:5.2}", 100.0 * s.mean, 100.0 * s.std);
        let nsd_head = format!("NSD@{} (%)", self.nsd_tolerance);
        let mut out = String::new();
        writeln!(out, "{:<10} {:>6} {:>8}  {:<15}  {:<15}", "method", "images", "failures", "DSC (%)", nsd_head).unwrap();
        writeln!(
            out,
            "{:<10} {:>6} {:>8}  {:<15}  {:<15}",
            self.method.name(),
            self.dsc.n,
            self.failures,
            pct(&self.dsc),
            pct(&self.nsd)
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(out, "{:<40} {:>8} {:>8} {:>7}", "image", "DSC", "NSD", "in_gt").unwrap();
        for r in &self.images {
            let name = r.image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            match (&r.error, r.dsc, r.nsd) {
                (Some(e), _, _) => writeln!(out, "{name:<40} error: {e}").unwrap(),
                (None, Some(d), Some(n)) => {
                    let pts = match (r.points_in_gt, r.n_points) {
                        (Some(a), Some(b)) => format!("{a}/{b}"),
                        _ => "-".into(),
                    };
                    writeln!(out, "{name:<40} {:>8.4} {:>8.4} {pts:>7}", d, n).unwrap()
                }
                _ => writeln!(out, "{name:<40} -").unwrap(),
            }
        }
        writeln!(out, "config_hash {}", self.config_hash).unwrap();
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub nsd_tolerance: f64,
    pub config_hash: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            nsd_tolerance: 2.0,
            config_hash: String::new(),
        }
    }
}

/// Predicted mask and prompt points in raw target pixels.
pub fn predict_target(
    method: Method,
    reference: &ReferencePair,
    target: &RawImage,
    gt: &Mask,
    index: u64,
    cfg: &PipelineConfig,
    backend: &dyn SegmenterBackend,
) -> Result<(Mask, Vec<PromptPoint>, bool)> {
    let tile = cfg.tile_size();
    let (rw, rh) = (target.width, target.height);
    let to_raw = |p: &PromptPoint| PromptPoint {
        x: p.x * rw as f64 / tile as f64,
        y: p.y * rh as f64 / tile as f64,
        ..*p
    };
    match method {
        Method::Eviprompt => {
            let out = segment_target::<f64>(reference, target, cfg, backend)?;
            let points = out.points().iter().map(to_raw).collect();
            let refined = out.diagnostics().refined;
            Ok((out.mask, points, refined))
        }
        Method::Oracle => {
            let image = preprocess(target, cfg.modality, tile)?;
            let gt_tile = gt.resize_nearest(tile, tile);
            let points = oracle_points(&gt_tile, cfg.n_points, cfg.seed.wrapping_add(index))?;
            let first = backend.predict_mask(MaskInput::Image(&image), &PromptSet::from_points(points.clone()))?;
            let refined = cfg.refine && !first.mask.is_empty();
            let mask = if refined {
                refine_mask(&first, &points, &image, backend)?.mask
            } else {
                first.mask
            };
            Ok((mask.resize_nearest(rw, rh), points.iter().map(to_raw).collect(), refined))
        }
    }
}

/// Runs `method` on every target of the manifest in parallel.
///
/// Per-image failures are recorded in the report; a transport failure
/// aborts the whole evaluation.
pub fn evaluate(
    manifest: &Manifest,
    method: Method,
    cfg: &PipelineConfig,
    backend: &dyn SegmenterBackend,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    let reference = manifest.load_reference(cfg)?;
    let targets: Vec<&ManifestEntry> = manifest.target_entries().collect();
    info!(method = method.name(), targets = targets.len(), "evaluating");

    let results: Vec<Result<ImageResult>> = targets
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let run = || -> Result<(f64, f64, usize, usize, bool)> {
                let raw = RawImage::load_png(&entry.image)?;
                let gt = Mask::load_png(&entry.mask, manifest.class_id)?;
                if gt.dims() != (raw.width, raw.height) {
                    return Err(Error::Format {
                        path: entry.mask.clone(),
                        message: "mask size differs from its image".into(),
                    });
                }
                let (pred, points, refined) = predict_target(method, &reference, &raw, &gt, i as u64, cfg, backend)?;
                let inside = points
                    .iter()
                    .filter(|p| {
                        let (x, y) = p.pixel();
                        x < gt.width() && y < gt.height() && gt.get(x, y)
                    })
                    .count();
                Ok((dsc(&pred, &gt)?, nsd(&pred, &gt, opts.nsd_tolerance)?, inside, points.len(), refined))
            };
            match run() {
                Ok((d, n, inside, np, refined)) => Ok(ImageResult {
                    image: entry.image.clone(),
                    dsc: Some(d),
                    nsd: Some(n),
                    points_in_gt: Some(inside),
                    n_points: Some(np),
                    refined: Some(refined),
                    error: None,
                }),
                Err(e) if e.is_transport() => Err(e),
                Err(e) => {
                    warn!(image = %entry.image.display(), error = %e, "target failed");
                    Ok(ImageResult {
                        image: entry.image.clone(),
                        dsc: None,
                        nsd: None,
                        points_in_gt: None,
                        n_points: None,
                        refined: None,
                        error: Some(e.to_string()),
                    })
                }
            }
        })
        .collect();
    let images = results.into_iter().collect::<Result<Vec<_>>>()?;
    let dscs: Vec<f64> = images.iter().filter_map(|r| r.dsc).collect();
    let nsds: Vec<f64> = images.iter().filter_map(|r| r.nsd).collect();
    Ok(EvalReport {
        method,
        config_hash: opts.config_hash.clone(),
        config: cfg.clone(),
        nsd_tolerance: opts.nsd_tolerance,
        dsc: Summary::of(&dscs),
        nsd: Summary::of(&nsds),
        failures: images.iter().filter(|r| r.error.is_some()).count(),
        images,
    })
}

/// Writes a synthetic dataset as PNGs plus a manifest; returns the manifest path.
pub fn write_synthetic_dataset(
    dir: &Path,
    seed: u64,
    n_targets: usize,
    params: &crate::synthetic::FixtureParams,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_owned(),
        source,
    })?;
    let (reference, targets) = crate::synthetic::dataset(seed, n_targets, params);
    let write = |name: &str, c: &crate::synthetic::SyntheticCase| -> Result<ManifestEntry> {
        let image = PathBuf::from(format!("{name}.png"));
        let mask = PathBuf::from(format!("{name}_mask.png"));
        c.image.save_png(&dir.join(&image))?;
        c.mask.save_png(&dir.join(&mask))?;
        Ok(ManifestEntry { image, mask })
    };
    let manifest = Manifest {
        reference: write("reference", &reference)?,
        targets: targets
            .iter()
            .enumerate()
            .map(|(i, c)| write(&format!("target_{i:03}"), c))
            .collect::<Result<_>>()?,
        class_id: 255,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nsd(a: &Mask, b: &Mask, tau: f64) -> f64 {
        let (ba, bb) = (boundary(a), boundary(b));
        let w = a.width();
        let pts = |m: &[bool]| -> Vec<(i64, i64)> {
            m.iter()
                .enumerate()
                .filter(|(_, &v)| v)
                .map(|(i, _)| ((i % w) as i64, (i / w) as i64))
                .collect()
        };
        let (pa, pb) = (pts(&ba), pts(&bb));
        let near = |p: &(i64, i64), set: &[(i64, i64)]| {
            set.iter()
                .any(|q| (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64) <= tau * tau)
        };
        let hits = pa.iter().filter(|p| near(p, &pb)).count() + pb.iter().filter(|p| near(p, &pa)).count();
        hits as f64 / (pa.len() + pb.len()) as f64
    }

    fn mask_strategy(w: usize, h: usize) -> impl Strategy<Value = Mask> {
        proptest::collection::vec(prop::bool::weighted(0.4), w * h)
            .prop_filter("non-empty", |v| v.iter().any(|&b| b))
            .prop_map(move |v| Mask::from_vec(w, h, v).unwrap())
    }

    #[test]
    fn dsc_examples() {
        let a = Mask::from_fn(4, 1, |x, _| x < 2);
        let b = Mask::from_fn(4, 1, |x, _| x >= 1 && x < 3);
        assert!((dsc(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        let e = Mask::new(4, 1);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
        assert_eq!(dsc(&a, &e).unwrap(), 0.0);
        assert!(dsc(&a, &Mask::new(3, 1)).is_err());
    }

    #[test]
    fn boundary_of_block() {
        let m = Mask::from_fn(5, 5, |x, y| (1..4).contains(&x) && (1..4).contains(&y));
        let b = boundary(&m);
        assert_eq!(b.iter().filter(|&&v| v).count(), 8);
        assert!(!b[2 * 5 + 2]);
        let full = Mask::from_fn(3, 3, |_, _| true);
        assert_eq!(boundary(&full).iter().filter(|&&v| v).count(), 8);
    }

    #[test]
    fn edt_matches_brute_force() {
        let sites: Vec<bool> = (0..63).map(|i| i % 17 == 3 || i == 40).collect();
        let (w, h) = (9, 7);
        let d = squared_distance_transform(&sites, w, h);
        for y in 0..h {
            for x in 0..w {
                let best = (0..w * h)
                    .filter(|&i| sites[i])
                    .map(|i| ((i % w) as f64 - x as f64).powi(2) + ((i / w) as f64 - y as f64).powi(2))
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(d[y * w + x], best);
            }
        }
        assert!(squared_distance_transform(&[false; 4], 2, 2).iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn nsd_examples() {
        let a = Mask::from_fn(10, 10, |x, y| x < 5 && y < 5);
        assert_eq!(nsd(&a, &a, 0.0).unwrap(), 1.0);
        let shifted = Mask::from_fn(10, 10, |x, y| (3..8).contains(&x) && y < 5);
        let n0 = nsd(&a, &shifted, 0.0).unwrap();
        let n3 = nsd(&a, &shifted, 3.0).unwrap();
        assert!(n0 < 1.0 && n3 == 1.0);
        let e = Mask::new(10, 10);
        assert_eq!(nsd(&e, &e, 2.0).unwrap(), 1.0);
        assert_eq!(nsd(&a, &e, 2.0).unwrap(), 0.0);
        assert!(nsd(&a, &a, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn nsd_matches_brute_force(a in mask_strategy(12, 9), b in mask_strategy(12, 9), tau in 0.0f64..4.0) {
            prop_assert!((nsd(&a, &b, tau).unwrap() - brute_nsd(&a, &b, tau)).abs() < 1e-12);
        }

        #[test]
        fn nsd_monotone_in_tau(a in mask_strategy(10, 10), b in mask_strategy(10, 10), t1 in 0.0f64..3.0, dt in 0.0f64..3.0) {
            prop_assert!(nsd(&a, &b, t1).unwrap() <= nsd(&a, &b, t1 + dt).unwrap());
        }

        #[test]
        fn dsc_is_symmetric(a in mask_strategy(8, 8), b in mask_strategy(8, 8)) {
            prop_assert_eq!(dsc(&a, &b).unwrap(), dsc(&b, &a).unwrap());
            prop_assert_eq!(nsd(&a, &b, 1.5).unwrap(), nsd(&b, &a, 1.5).unwrap());
        }
    }

    #[test]
    fn oracle_points_are_distinct_foreground() {
        let gt = Mask::from_fn(20, 20, |x, y| (x + y) % 3 == 0);
        let pts = oracle_points(&gt, 5, 9).unwrap();
        assert_eq!(pts.len(), 5);
        let mut seen = std::collections::HashSet::new();
        for p in &pts {
            let (x, y) = p.pixel();
            assert!(gt.get(x, y));
            assert_eq!((p.x.fract(), p.y.fract()), (0.5, 0.5));
            assert!(seen.insert((x, y)));
        }
        assert_eq!(pts, oracle_points(&gt, 5, 9).unwrap());
        let tiny = Mask::from_fn(3, 3, |x, y| x == 1 && y == 1);
        assert_eq!(oracle_points(&tiny, 3, 0).unwrap().len(), 1);
        assert!(oracle_points(&Mask::new(3, 3), 1, 0).is_err());
    }

    #[test]
    fn oracle_points_are_uniform() {
        // three foreground pixels; chi-square with 2 dof at alpha 0.001 is 13.82
        let gt = Mask::from_fn(5, 1, |x, _| x % 2 == 0);
        let draws = 30_000u64;
        let mut counts = [0f64; 3];
        for s in 0..draws {
            let p = oracle_points(&gt, 1, s).unwrap()[0];
            counts[p.pixel().0 / 2] += 1.0;
        }
        let e = draws as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        assert!(chi2 < 13.82, "{chi2} {counts:?}");
    }

    #[test]
    fn summary_and_manifest_round_trip() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!((s.n, s.mean, s.std), (2, 2.0, 1.0));
        assert!(Summary::of(&[]).mean.is_nan());

        let dir = tempfile::tempdir().unwrap();
        let params = crate::synthetic::FixtureParams {
            size: 32,
            ..Default::default()
        };
        let path = write_synthetic_dataset(dir.path(), 1, 2, &params).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.targets.len(), 2);
        assert!(m.reference.image.is_absolute() || m.reference.image.starts_with(dir.path()));

        std::fs::remove_file(dir.path().join("target_001.png")).unwrap();
        match Manifest::load(&path) {
            Err(Error::MissingFiles(files)) => {
                assert_eq!(files.len(), 1);
                assert!(files[0].ends_with("target_001.png"));
            }
            other => panic!("{other:?}"),
        }
    }
}

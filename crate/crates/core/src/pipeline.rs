//! End-to-end prompt generation and mask prediction for one target image.

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::anchor_bank::{build_anchors, evidence_map, LabelGrid};
use crate::backend::{point_grid, BoundingBox, MaskInput, MaskResult, PromptSet, SegmenterBackend};
use crate::error::{Error, Result, StageExt};
use crate::evidential::{combine_opinion_maps, OpinionMap};
use crate::perturbation::{
    apply_geometric, apply_photometric, assemble_grid, disassemble_features, inverse_warp_evidence,
    GeometricParams, GeometricTransform, GridLayout, PhotometricTransform,
};
use crate::prompt_selector::{map_points_to_image, select_points, smooth_belief, BeliefPlane, PointLabel, PromptPoint};
use crate::raster::{to_u8, Image, Mask, Modality, RawImage};
use crate::scalar::Scalar;

/// How the three branch opinions become one foreground plane.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Dempster fusion of opinions; select on belief mass.
    #[default]
    Evidential,
    /// Arithmetic mean of expected probabilities.
    MeanProbability,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub n_points: usize,
    pub patch_size: usize,
    pub kernel_size: usize,
    /// Anchors per class: `[background, foreground]`.
    pub anchor_counts: Vec<usize>,
    pub geometric: GeometricParams,
    pub photometric: PhotometricTransform,
    /// When false the geometric and photometric tiles are copies of the target.
    pub use_transforms: bool,
    pub fusion: FusionMode,
    pub layout: GridLayout,
    pub seed: u64,
    pub negative_points: bool,
    pub refine: bool,
    pub vertical_split: bool,
    pub grid_density: usize,
    pub normalize_features: bool,
    pub modality: Modality,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_points: 3,
            patch_size: 16,
            kernel_size: 3,
            anchor_counts: vec![10, 10],
            geometric: GeometricParams::default(),
            photometric: PhotometricTransform::default(),
            use_transforms: true,
            fusion: FusionMode::Evidential,
            layout: GridLayout::default(),
            seed: 42,
            negative_points: false,
            refine: true,
            vertical_split: false,
            grid_density: 32,
            normalize_features: false,
            modality: Modality::Rgb,
        }
    }
}

/// Inclusive bounds accepted for the photometric factors.
pub const PHOTOMETRIC_RANGE: (f64, f64) = (0.7, 1.3);

impl PipelineConfig {
    pub fn tile_size(&self) -> usize {
        self.layout.tile_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.n_points == 0 {
            return bad("n_points must be at least 1".into());
        }
        if self.patch_size == 0 {
            return bad("patch_size must be at least 1".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.anchor_counts.len() != 2 || self.anchor_counts.contains(&0) {
            return bad(format!(
                "anchor_counts must be two positive values [background, foreground], got {:?}",
                self.anchor_counts
            ));
        }
        if self.grid_density == 0 {
            return bad("grid_density must be at least 1".into());
        }
        self.layout.validate()?;
        self.photometric.validate()?;
        let (lo, hi) = PHOTOMETRIC_RANGE;
        for (name, v) in [("contrast", self.photometric.contrast), ("saturation", self.photometric.saturation)] {
            if !(lo..=hi).contains(&v) {
                return bad(format!("photometric {name} {v} outside [{lo}, {hi}]"));
            }
        }
        GeometricTransform::about_center(&self.geometric, (self.tile_size(), self.tile_size()))?;
        Ok(())
    }
}

/// Rescales intensities to 8 bits and resizes to `tile_size x tile_size x 3`.
///
/// CT and MR are min-max rescaled; a constant image becomes all zeros.
/// Other modalities are clamped to `[0, 255]`.
pub fn preprocess(raw: &RawImage, modality: Modality, tile_size: usize) -> Result<Image> {
    if raw.data.is_empty() {
        return Err(Error::domain("empty raw image"));
    }
    let scaled: Vec<f64> = match modality {
        Modality::Ct | Modality::Mr => {
            let (lo, hi) = raw
                .data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if !(hi > lo) {
                warn!("constant image has no dynamic range; mapping to zeros");
                vec![0.0; raw.data.len()]
            } else {
                raw.data.iter().map(|&v| (v - lo) / (hi - lo) * 255.0).collect()
            }
        }
        Modality::Rgb => raw.data.clone(),
    };
    let mut rgb = Vec::with_capacity(raw.width * raw.height * 3);
    for px in scaled.chunks_exact(raw.channels) {
        if raw.channels == 1 {
            let v = to_u8(px[0]);
            rgb.extend_from_slice(&[v, v, v]);
        } else {
            rgb.extend(px.iter().map(|&v| to_u8(v)));
        }
    }
    Ok(Image::from_raw(raw.width, raw.height, rgb)?.resize_bilinear(tile_size, tile_size))
}

/// The single annotated example, already preprocessed to tile size.
#[derive(Clone, PartialEq, Debug)]
pub struct ReferencePair {
    pub image: Image,
    pub mask: Mask,
}

impl ReferencePair {
    pub fn new(image: Image, mask: Mask) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::domain("reference mask does not match the reference image"));
        }
        if mask.is_empty() {
            return Err(Error::domain("reference mask has no foreground"));
        }
        if mask.count() == mask.width() * mask.height() {
            return Err(Error::domain("reference mask has no background"));
        }
        Ok(Self { image, mask })
    }

    pub fn from_raw(raw: &RawImage, mask: &Mask, cfg: &PipelineConfig) -> Result<Self> {
        let t = cfg.tile_size();
        Self::new(preprocess(raw, cfg.modality, t)?, mask.resize_nearest(t, t))
    }
}

/// Tight box over foreground pixels; `None` for an empty mask.
pub fn mask_to_bbox(mask: &Mask) -> Option<BoundingBox> {
    let mut b: Option<BoundingBox> = None;
    for (x, y) in mask.foreground() {
        b = Some(match b {
            None => BoundingBox { x0: x, y0: y, x1: x, y1: y },
            Some(b) => BoundingBox {
                x0: b.x0.min(x),
                y0: b.y0.min(y),
                x1: b.x1.max(x),
                y1: b.y1.max(y),
            },
        });
    }
    b
}

/// Decodes on the cached embedding, re-encoding `image` if the backend has
/// dropped it.
pub fn predict_cached(
    handle: &crate::backend::EmbeddingHandle,
    image: &Image,
    prompts: &PromptSet,
    backend: &dyn SegmenterBackend,
) -> Result<MaskResult> {
    match backend.predict_mask(MaskInput::Handle(handle), prompts) {
        Err(Error::Session(msg)) => {
            warn!(%msg, "embedding expired; re-encoding");
            backend.predict_mask(MaskInput::Image(image), prompts)
        }
        other => other,
    }
}

/// Second decode with the first mask's box and the same points, on the
/// cached embedding of `image`. An empty first mask is returned unchanged.
pub fn refine_mask(
    first: &MaskResult,
    points: &[PromptPoint],
    image: &Image,
    backend: &dyn SegmenterBackend,
) -> Result<MaskResult> {
    let Some(bbox) = mask_to_bbox(&first.mask) else {
        return Ok(first.clone());
    };
    let prompts = PromptSet::from_points(points.to_vec()).with_box(bbox);
    predict_cached(&first.handle, image, &prompts, backend)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub refined: bool,
    /// The first decode was empty and was retried with the top point only.
    pub retried: bool,
    pub empty_prediction: bool,
}

/// Result for one board run (one target, or one half in split mode).
#[derive(Clone, PartialEq, Debug)]
pub struct RegionOutput<T> {
    /// `(x, y, width, height)` of the region in preprocessed target pixels.
    pub rect: (usize, usize, usize, usize),
    /// Prompt points in preprocessed target pixels.
    pub points: Vec<PromptPoint>,
    /// Refinement box in the region's tile pixels.
    pub bbox: Option<BoundingBox>,
    pub fused: OpinionMap<T>,
    /// `[original, photometric, geometric]`, geometric already warped back.
    pub branches: Vec<OpinionMap<T>>,
    /// Smoothed foreground plane that points were chosen from.
    pub selection_plane: BeliefPlane<T>,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, PartialEq, Debug)]
pub struct SegmentationOutput<T> {
    /// Final mask at the raw target resolution.
    pub mask: Mask,
    /// Final mask at tile resolution.
    pub tile_mask: Mask,
    pub regions: Vec<RegionOutput<T>>,
}

impl<T: Scalar> SegmentationOutput<T> {
    pub fn points(&self) -> Vec<PromptPoint> {
        self.regions.iter().flat_map(|r| r.points.iter().copied()).collect()
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        self.regions.first().and_then(|r| r.bbox)
    }

    pub fn uncertainty_plane(&self) -> &[T] {
        self.regions[0].fused.uncertainty_plane()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.regions.iter().fold(Diagnostics::default(), |acc, r| Diagnostics {
            refined: acc.refined || r.diagnostics.refined,
            retried: acc.retried || r.diagnostics.retried,
            empty_prediction: acc.empty_prediction || r.diagnostics.empty_prediction,
        })
    }
}

struct TileRun<T> {
    mask: Mask,
    points: Vec<PromptPoint>,
    bbox: Option<BoundingBox>,
    fused: OpinionMap<T>,
    branches: Vec<OpinionMap<T>>,
    plane: BeliefPlane<T>,
    diagnostics: Diagnostics,
}

/// Runs the full flow on an already preprocessed `tile x tile` target.
fn run_tile<T: Scalar>(
    reference: &ReferencePair,
    target: &Image,
    cfg: &PipelineConfig,
    backend: &dyn SegmenterBackend,
) -> Result<TileRun<T>> {
    let tile = cfg.tile_size();
    let frame = (tile, tile);
    let (geometric, original_g, photometric) = if cfg.use_transforms {
        let t = GeometricTransform::about_center(&cfg.geometric, frame).stage("perturb")?;
        let g = apply_geometric(target, &t);
        let p = apply_photometric(target, &cfg.photometric).stage("perturb")?;
        (t, g, p)
    } else {
        (GeometricTransform::identity(frame), target.clone(), target.clone())
    };

    let board = assemble_grid(&reference.image, target, &original_g, &photometric, &cfg.layout).stage("assemble")?;
    let grid = point_grid(cfg.grid_density, board.width(), board.height());
    let raw_features = backend.extract_features(&board, &grid).stage("extract_features")?;
    let mut features = raw_features.cast::<T>();
    if cfg.normalize_features {
        features = features.l2_normalized();
    }
    let parts = disassemble_features(&features, &cfg.layout).stage("disassemble")?;

    let (fh, fw) = (parts.reference.height(), parts.reference.width());
    let labels = LabelGrid::from_mask(&reference.mask, fh, fw);
    let bank = build_anchors(&parts.reference, &labels, &cfg.anchor_counts, cfg.seed).stage("build_anchors")?;

    let e_o = evidence_map(&parts.original, &bank).stage("evidence")?;
    let e_p = evidence_map(&parts.photometric, &bank).stage("evidence")?;
    let e_g = evidence_map(&parts.geometric, &bank).stage("evidence")?;
    let (e_g, outside) = inverse_warp_evidence(&e_g, &geometric);
    debug!(outside = outside.iter().filter(|&&o| o).count(), "geometric branch out-of-support cells");

    let m_o = OpinionMap::from_evidence(&e_o, None).stage("opinions")?;
    let m_p = OpinionMap::from_evidence(&e_p, None).stage("opinions")?;
    let m_g = OpinionMap::from_evidence(&e_g, Some(&outside)).stage("opinions")?;
    let branches = vec![m_o, m_p, m_g];
    let fused = combine_opinion_maps(&branches).stage("fuse")?;

    let class_plane = |class: usize| -> Result<BeliefPlane<T>> {
        let values = match cfg.fusion {
            FusionMode::Evidential => fused.belief_plane(class).to_vec(),
            FusionMode::MeanProbability => {
                let third = T::one() / T::of(3.0);
                let prior = T::one() / T::of_usize(bank.num_classes());
                let mut acc = vec![T::zero(); fh * fw];
                for (e, support) in [(&e_o, None), (&e_p, None), (&e_g, Some(&outside))] {
                    let p = e.expected_probability_planes();
                    for (i, a) in acc.iter_mut().enumerate() {
                        let v = if support.is_some_and(|s: &Vec<bool>| s[i]) { prior } else { p[class][i] };
                        *a += v * third;
                    }
                }
                acc
            }
        };
        smooth_belief(&BeliefPlane::new(fh, fw, values)?, cfg.kernel_size)
    };
    let plane = class_plane(1).stage("smooth")?;

    let patches = fh.div_ceil(cfg.patch_size) * fw.div_ceil(cfg.patch_size);
    let n_points = cfg.n_points.min(patches);
    if n_points < cfg.n_points {
        warn!(patches, requested = cfg.n_points, "fewer patches than points; selecting one per patch");
    }
    let mut cells = select_points(&plane, n_points, cfg.patch_size, PointLabel::Positive).stage("select")?;
    if cfg.negative_points {
        let background = class_plane(0).stage("smooth")?;
        cells.extend(select_points(&background, n_points, cfg.patch_size, PointLabel::Negative).stage("select")?);
    }
    let points = map_points_to_image(&cells, (fw, fh), frame);

    let mut diagnostics = Diagnostics::default();
    let mut first = backend
        .predict_mask(MaskInput::Image(target), &PromptSet::from_points(points.clone()))
        .stage("predict_mask")?;
    let mut used_points = points;
    if first.mask.is_empty() {
        diagnostics.retried = true;
        let top = select_points(&plane, 1, 1, PointLabel::Positive).stage("select")?;
        let top = map_points_to_image(&top, (fw, fh), frame);
        first = predict_cached(&first.handle, target, &PromptSet::from_points(top.clone()), backend)
            .stage("predict_mask")?;
        used_points = top;
        if first.mask.is_empty() {
            warn!("backend returned an empty mask twice");
            diagnostics.empty_prediction = true;
        }
    }

    let (mask, bbox) = if cfg.refine && !first.mask.is_empty() {
        let bbox = mask_to_bbox(&first.mask);
        let refined = refine_mask(&first, &used_points, target, backend).stage("refine")?;
        diagnostics.refined = true;
        (refined.mask, bbox)
    } else {
        (first.mask, None)
    };

    Ok(TileRun {
        mask,
        points: used_points,
        bbox,
        fused,
        branches,
        plane,
        diagnostics,
    })
}

/// Segments one target image given the reference pair.
pub fn segment_target<T: Scalar>(
    reference: &ReferencePair,
    target: &RawImage,
    cfg: &PipelineConfig,
    backend: &dyn SegmenterBackend,
) -> Result<SegmentationOutput<T>> {
    cfg.validate().stage("config")?;
    let tile = cfg.tile_size();
    let image = preprocess(target, cfg.modality, tile).stage("preprocess")?;
    let rects = if cfg.vertical_split {
        let left = tile / 2;
        vec![(0, 0, left, tile), (left, 0, tile - left, tile)]
    } else {
        vec![(0, 0, tile, tile)]
    };

    let mut tile_mask = Mask::new(tile, tile);
    let mut regions = Vec::with_capacity(rects.len());
    for rect in rects {
        let (x0, y0, w, h) = rect;
        let region_img = if (w, h) == (tile, tile) {
            image.clone()
        } else {
            image.crop(x0, y0, w, h).stage("split")?.resize_bilinear(tile, tile)
        };
        let run = run_tile::<T>(reference, &region_img, cfg, backend)?;
        let back = run.mask.resize_nearest(w, h);
        for (x, y) in back.foreground() {
            tile_mask.set(x0 + x, y0 + y, true);
        }
        let (sx, sy) = (w as f64 / tile as f64, h as f64 / tile as f64);
        let points = run
            .points
            .iter()
            .map(|p| PromptPoint {
                x: x0 as f64 + p.x * sx,
                y: y0 as f64 + p.y * sy,
                ..*p
            })
            .collect();
        regions.push(RegionOutput {
            rect,
            points,
            bbox: run.bbox,
            fused: run.fused,
            branches: run.branches,
            selection_plane: run.plane,
            diagnostics: run.diagnostics,
        });
    }
    Ok(SegmentationOutput {
        mask: tile_mask.resize_nearest(target.width, target.height),
        tile_mask,
        regions,
    })
}

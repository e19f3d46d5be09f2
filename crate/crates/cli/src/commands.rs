use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use eviprompt::backend::{BoundingBox, BridgeBackend, MockBackend, SegmenterBackend};
use eviprompt::metrics::{
    evaluate, predict_target, write_synthetic_dataset, EvalOptions, EvalReport, Manifest, Method,
};
use eviprompt::pipeline::{segment_target, Diagnostics, FusionMode, ReferencePair};
use eviprompt::prompt_selector::PromptPoint;
use eviprompt::raster::{Mask, RawImage};
use eviprompt::synthetic::FixtureParams;
use rayon::prelude::*;
use serde::Serialize;
use tracing::{info, warn};

use crate::config::{RunConfig, BRIDGE_URL_ENV};
use crate::server::BridgeServer;
use crate::{CliError, Common, SweepAxis};

pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(std::env::var(BRIDGE_URL_ENV).ok(), &common.overrides());
    cfg.validate()?;
    Ok(cfg)
}

/// Builds the configured backend; a bridge must answer `describe` first.
pub fn make_backend(cfg: &RunConfig) -> Result<Arc<dyn SegmenterBackend>, CliError> {
    if cfg.backend == "mock" {
        return Ok(Arc::new(MockBackend::default()));
    }
    let secs = |s: f64| Duration::from_secs_f64(s.max(0.001));
    let bridge = BridgeBackend::new(
        cfg.backend.clone(),
        secs(cfg.bridge.connect_timeout_secs),
        secs(cfg.bridge.request_timeout_secs),
    );
    let info = bridge.describe().map_err(|e| CliError::Backend(e.to_string()))?;
    info!(model = %info.model_name, "bridge connected");
    if info.input_size != cfg.pipeline.layout.board_size() {
        return Err(CliError::Config(format!(
            "bridge expects {}px input but the board is {}px; adjust pipeline.layout.tile_size",
            info.input_size,
            cfg.pipeline.layout.board_size()
        )));
    }
    Ok(Arc::new(bridge))
}

fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

struct Target {
    image: PathBuf,
    mask: Option<PathBuf>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reference pair and targets from the manifest, or from `input_dir`.
fn resolve_inputs(cfg: &RunConfig) -> Result<(ReferencePair, Vec<Target>, u8), CliError> {
    if let Some(path) = &cfg.io.manifest {
        let m = Manifest::load(path)?;
        let reference = m.load_reference(&cfg.pipeline)?;
        let targets = m
            .target_entries()
            .map(|t| Target {
                image: t.image.clone(),
                mask: Some(t.mask.clone()),
            })
            .collect();
        return Ok((reference, targets, m.class_id));
    }
    let (Some(dir), Some(ref_image), Some(ref_mask)) = (&cfg.io.input_dir, &cfg.io.reference_image, &cfg.io.reference_mask)
    else {
        return Err(CliError::Config(
            "io.manifest, or io.input_dir with io.reference_image and io.reference_mask, is required".into(),
        ));
    };
    let missing: Vec<PathBuf> = [dir, ref_image, ref_mask].into_iter().filter(|p| !p.exists()).cloned().collect();
    if !missing.is_empty() {
        return Err(eviprompt::Error::MissingFiles(missing).into());
    }
    let raw = RawImage::load_png(ref_image)?;
    let mask = Mask::load_png(ref_mask, cfg.io.class_id)?;
    let reference = ReferencePair::from_raw(&raw, &mask, &cfg.pipeline)?;
    let mut images: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png"))
                && !stem(p).ends_with("_mask")
                && p.canonicalize().ok() != ref_image.canonicalize().ok()
        })
        .collect();
    images.sort();
    let targets = images.into_iter().map(|image| Target { image, mask: None }).collect();
    Ok((reference, targets, cfg.io.class_id))
}

#[derive(Serialize)]
struct UncertaintyStats {
    mean: f64,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct Sidecar {
    image: PathBuf,
    mask: PathBuf,
    config_hash: String,
    method: Method,
    /// Prompt points in target image pixels.
    points: Vec<PromptPoint>,
    /// Refinement boxes in target image pixels, one per region.
    boxes: Vec<BoundingBox>,
    uncertainty: Option<UncertaintyStats>,
    diagnostics: Option<Diagnostics>,
}

#[derive(Serialize)]
struct RunEntry {
    image: PathBuf,
    mask: Option<PathBuf>,
    error: Option<String>,
}

#[derive(Serialize)]
struct RunSummary {
    config_hash: String,
    method: Method,
    entries: Vec<RunEntry>,
}

fn scale_box(b: &BoundingBox, rect: (usize, usize, usize, usize), tile: usize, raw: (usize, usize)) -> BoundingBox {
    let map = |v: usize, offset: usize, span: usize, dim: usize| {
        let t = offset as f64 + (v as f64 + 0.5) * span as f64 / tile as f64;
        ((t * dim as f64 / tile as f64) as usize).min(dim - 1)
    };
    BoundingBox {
        x0: map(b.x0, rect.0, rect.2, raw.0),
        y0: map(b.y0, rect.1, rect.3, raw.1),
        x1: map(b.x1, rect.0, rect.2, raw.0),
        y1: map(b.y1, rect.1, rect.3, raw.1),
    }
}

fn segment_one(
    cfg: &RunConfig,
    hash: &str,
    reference: &ReferencePair,
    target: &Target,
    index: usize,
    class_id: u8,
    backend: &dyn SegmenterBackend,
) -> Result<PathBuf, eviprompt::Error> {
    let raw = RawImage::load_png(&target.image)?;
    let tile = cfg.pipeline.tile_size();
    let raw_dims = (raw.width, raw.height);
    let name = stem(&target.image);
    let mask_path = cfg.io.output_dir.join(format!("{name}_mask.png"));
    let sidecar = match cfg.method {
        Method::Eviprompt => {
            let out = segment_target::<f64>(reference, &raw, &cfg.pipeline, backend)?;
            out.mask.save_png(&mask_path)?;
            let u: Vec<f64> = out.regions.iter().flat_map(|r| r.fused.uncertainty_plane().iter().copied()).collect();
            Sidecar {
                image: target.image.clone(),
                mask: mask_path.clone(),
                config_hash: hash.to_owned(),
                method: cfg.method,
                points: out
                    .points()
                    .iter()
                    .map(|p| PromptPoint {
                        x: p.x * raw.width as f64 / tile as f64,
                        y: p.y * raw.height as f64 / tile as f64,
                        ..*p
                    })
                    .collect(),
                boxes: out
                    .regions
                    .iter()
                    .filter_map(|r| r.bbox.map(|b| scale_box(&b, r.rect, tile, raw_dims)))
                    .collect(),
                uncertainty: Some(UncertaintyStats {
                    mean: u.iter().sum::<f64>() / u.len() as f64,
                    min: u.iter().copied().fold(f64::INFINITY, f64::min),
                    max: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }),
                diagnostics: Some(out.diagnostics()),
            }
        }
        Method::Oracle => {
            let gt_path = target
                .mask
                .as_ref()
                .ok_or_else(|| eviprompt::Error::domain("the oracle method needs ground-truth masks (use io.manifest)"))?;
            let gt = Mask::load_png(gt_path, class_id)?;
            let (mask, points, _) = predict_target(Method::Oracle, reference, &raw, &gt, index as u64, &cfg.pipeline, backend)?;
            mask.save_png(&mask_path)?;
            Sidecar {
                image: target.image.clone(),
                mask: mask_path.clone(),
                config_hash: hash.to_owned(),
                method: cfg.method,
                points,
                boxes: Vec::new(),
                uncertainty: None,
                diagnostics: None,
            }
        }
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    let path = cfg.io.output_dir.join(format!("{name}.json"));
    std::fs::write(&path, json).map_err(|source| eviprompt::Error::Io { path, source })?;
    Ok(mask_path)
}

pub fn cmd_run(cfg: &RunConfig) -> Result<(), CliError> {
    let (reference, targets, class_id) = resolve_inputs(cfg)?;
    let backend = make_backend(cfg)?;
    create_dir(&cfg.io.output_dir)?;
    let hash = cfg.hash();
    info!(targets = targets.len(), "segmenting");
    let results: Vec<Result<PathBuf, eviprompt::Error>> = with_pool(cfg.jobs, || {
        targets
            .par_iter()
            .enumerate()
            .map(|(i, t)| segment_one(cfg, &hash, &reference, t, i, class_id, backend.as_ref()))
            .collect()
    })?;

    let mut entries = Vec::with_capacity(targets.len());
    let mut failed = 0;
    for (t, r) in targets.iter().zip(results) {
        match r {
            Ok(mask) => entries.push(RunEntry {
                image: t.image.clone(),
                mask: Some(mask),
                error: None,
            }),
            Err(e) if e.is_transport() => return Err(e.into()),
            Err(e) => {
                warn!(image = %t.image.display(), error = %e, "target failed");
                failed += 1;
                entries.push(RunEntry {
                    image: t.image.clone(),
                    mask: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let summary = RunSummary {
        config_hash: hash,
        method: cfg.method,
        entries,
    };
    write_file(
        &cfg.io.output_dir.join("run_summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: targets.len(),
        });
    }
    Ok(())
}

fn manifest_of(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let path = cfg
        .io
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Config("io.manifest is required".into()))?;
    Ok(Manifest::load(path)?)
}

fn eval_with(cfg: &RunConfig, manifest: &Manifest, backend: &dyn SegmenterBackend) -> Result<EvalReport, CliError> {
    let opts = EvalOptions {
        nsd_tolerance: cfg.eval.nsd_tolerance,
        config_hash: cfg.hash(),
    };
    with_pool(cfg.jobs, || evaluate(manifest, cfg.method, &cfg.pipeline, backend, &opts))?.map_err(CliError::from)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let manifest = manifest_of(cfg)?;
    let backend = make_backend(cfg)?;
    let report = eval_with(cfg, &manifest, backend.as_ref())?;
    create_dir(&cfg.io.output_dir)?;
    let base = cfg.io.output_dir.join(format!("eval_{}", cfg.method.name()));
    write_file(&base.with_extension("json"), report.to_json())?;
    let table = report.to_table();
    write_file(&base.with_extension("txt"), &table)?;
    print!("{table}");
    if report.failures > 0 {
        return Err(CliError::Partial {
            failed: report.failures,
            total: report.images.len(),
        });
    }
    Ok(report)
}

fn parse_list<T>(values: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, CliError> {
    values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).ok_or_else(|| CliError::Config(format!("bad sweep value {s:?}"))))
        .collect()
}

/// `(label, config)` for every setting of the axis.
pub fn sweep_settings(cfg: &RunConfig, axis: SweepAxis, values: Option<&str>) -> Result<Vec<(String, RunConfig)>, CliError> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c
    };
    let settings = match axis {
        SweepAxis::PatchSize => {
            let sizes = match values {
                Some(v) => parse_list(v, |s| s.parse::<usize>().ok())?,
                None => vec![1, 4, 8, 16, 32, 64],
            };
            sizes
                .into_iter()
                .map(|p| (p.to_string(), with(&|c| c.pipeline.patch_size = p)))
                .collect::<Vec<_>>()
        }
        SweepAxis::Anchors => {
            let pairs = match values {
                Some(v) => parse_list(v, |s| {
                    let (a, b) = s.split_once(['x', 'X'])?;
                    Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?))
                })?,
                None => vec![(1, 1), (5, 1), (5, 5), (10, 5), (10, 10)],
            };
            pairs
                .into_iter()
                .map(|(n0, n1)| (format!("{n0}x{n1}"), with(&|c| c.pipeline.anchor_counts = vec![n0, n1])))
                .collect()
        }
        SweepAxis::Component => {
            let names = match values {
                Some(v) => parse_list(v, |s| Some(s.to_owned()))?,
                None => ["full", "no_transforms", "no_evidential", "no_refinement"].map(String::from).to_vec(),
            };
            names
                .into_iter()
                .map(|name| {
                    let c = match name.as_str() {
                        "full" => with(&|_| {}),
                        "no_transforms" => with(&|c| c.pipeline.use_transforms = false),
                        "no_evidential" => with(&|c| c.pipeline.fusion = FusionMode::MeanProbability),
                        "no_refinement" => with(&|c| c.pipeline.refine = false),
                        other => return Err(CliError::Config(format!("unknown component ablation {other:?}"))),
                    };
                    Ok((name, c))
                })
                .collect::<Result<_, _>>()?
        }
    };
    for (label, c) in &settings {
        c.validate()
            .map_err(|e| CliError::Config(format!("setting {label}: {e}")))?;
    }
    Ok(settings)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: &'static str,
    pub setting: String,
    pub images: usize,
    pub failures: usize,
    pub dsc_mean: f64,
    pub dsc_std: f64,
    pub nsd_mean: f64,
    pub nsd_std: f64,
    pub config_hash: String,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("axis,setting,images,failures,dsc_mean,dsc_std,nsd_mean,nsd_std,config_hash\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.axis, r.setting, r.images, r.failures, r.dsc_mean, r.dsc_std, r.nsd_mean, r.nsd_std, r.config_hash
        )
        .unwrap();
    }
    out
}

pub fn cmd_ablate(cfg: &RunConfig, axis: SweepAxis, values: Option<&str>) -> Result<Vec<AblationRow>, CliError> {
    let rows = ablate(cfg, axis, values)?;
    print!("{}", ablation_csv(&rows));
    let failed: usize = rows.iter().map(|r| r.failures).sum();
    if failed > 0 {
        return Err(CliError::Partial {
            failed,
            total: rows.iter().map(|r| r.images + r.failures).sum(),
        });
    }
    Ok(rows)
}

/// Evaluates every setting and writes `ablate_<axis>.csv`.
pub fn ablate(cfg: &RunConfig, axis: SweepAxis, values: Option<&str>) -> Result<Vec<AblationRow>, CliError> {
    let settings = sweep_settings(cfg, axis, values)?;
    let manifest = manifest_of(cfg)?;
    let backend = make_backend(cfg)?;
    let mut rows = Vec::with_capacity(settings.len());
    for (label, c) in &settings {
        info!(axis = axis.name(), setting = %label, "ablation setting");
        let report = eval_with(c, &manifest, backend.as_ref())?;
        rows.push(AblationRow {
            axis: axis.name(),
            setting: label.clone(),
            images: report.dsc.n,
            failures: report.failures,
            dsc_mean: report.dsc.mean,
            dsc_std: report.dsc.std,
            nsd_mean: report.nsd.mean,
            nsd_std: report.nsd.std,
            config_hash: report.config_hash,
        });
    }
    create_dir(&cfg.io.output_dir)?;
    write_file(&cfg.io.output_dir.join(format!("ablate_{}.csv", axis.name())), ablation_csv(&rows))?;
    Ok(rows)
}

pub const SYNTH_CONFIG: &str = r#"schema_version = 1
backend = "mock"
method = "eviprompt"
jobs = 1

[io]
manifest = "manifest.json"
output_dir = "out"
"#;

pub fn cmd_synth(out: &Path, n: usize, seed: u64) -> Result<(), CliError> {
    let manifest = write_synthetic_dataset(out, seed, n, &FixtureParams::default())?;
    write_file(&out.join("config.toml"), SYNTH_CONFIG)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn cmd_serve_mock(addr: &str) -> Result<(), CliError> {
    let server = BridgeServer::start(Arc::new(MockBackend::default()), addr)?;
    println!("listening on {}", server.url());
    server.wait();
    Ok(())
}

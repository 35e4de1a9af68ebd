//! Validation metrics, the bicubic baseline, ablation runs and reports.
//!
//! Protocol: RGB in `[0, 1]`, outputs clamped, PSNR with a border crop,
//! SSIM over valid 11x11 Gaussian windows averaged across channels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{EvalPair, UnpairedSplit};
use crate::degradation::{clean_lr, Manifest};
use crate::error::{Error, Result};
use crate::imaging::io::{load_png, save_png, side_by_side, write_atomic};
use crate::imaging::metrics::evaluate_pair;
use crate::imaging::{bicubic_resize, from_model_range, to_model_range, Image, MetricReport, Scale};
use crate::networks::{Network, NetworkParams};
use crate::tensor::Tensor;
use crate::training::{train_phase2, NetId, Networks, RunHooks, Structure, TrainState};

pub const REPORT_SCHEMA: &str = "cincgan.eval-report";
pub const REPORT_VERSION: u32 = 1;
pub const REPORT_COLUMNS: [&str; 3] = ["method", "psnr", "ssim"];

/// Evaluation-mode `SR(G1(x))`, or `SR(x)` without G1.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub g1: Option<(&'a Network, &'a NetworkParams<f32>)>,
    pub sr: (&'a Network, &'a NetworkParams<f32>),
}

impl<'a> Pipeline<'a> {
    pub fn from_state(nets: &'a Networks, state: &'a TrainState) -> Result<Self> {
        let sr = state
            .params(NetId::Sr)
            .ok_or_else(|| Error::InvalidArgument("state has no SR network".into()))?;
        let g1 = if state.structure.uses_g1() {
            let p = state
                .params(NetId::G1)
                .ok_or_else(|| Error::InvalidArgument("state has no G1 network".into()))?;
            Some((nets.get(NetId::G1), p))
        } else {
            None
        };
        Ok(Pipeline {
            g1,
            sr: (nets.get(NetId::Sr), sr),
        })
    }

    pub fn scale(&self) -> usize {
        self.sr.0.spec().scale
    }

    /// LR pixels of context each output pixel depends on.
    pub fn context_radius(&self) -> usize {
        self.g1.map_or(0, |(n, _)| n.graph().context_radius()) + self.sr.0.graph().context_radius()
    }

    fn run_tensor(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let x = match self.g1 {
            Some((net, p)) => net.infer(p, x)?,
            None => x,
        };
        self.sr.0.infer(self.sr.1, x)
    }

    /// Whole-image inference.
    pub fn run(&self, lr: &Image) -> Result<Image> {
        from_model_range(&self.run_tensor(to_model_range(lr))?, 0)
    }

    /// Tiled inference: `tile`-pixel LR tiles stepping by `tile - overlap`,
    /// each padded with enough context to be exact, blended linearly.
    pub fn run_tiled(&self, lr: &Image, tile: usize, overlap: usize) -> Result<Image> {
        let (h, w) = lr.dims();
        if h <= tile && w <= tile {
            return self.run(lr);
        }
        let s = self.scale();
        let margin = self.context_radius();
        let x = to_model_range::<f32>(lr);
        let mut acc = vec![0f64; 3 * h * s * w * s];
        let mut wsum = vec![0f64; h * s * w * s];
        let ys = tile_starts(h, tile, overlap);
        let xs = tile_starts(w, tile, overlap);
        let ramp = (overlap * s) as f64;
        let axis_weight = |i: usize, len: usize, lo_open: bool, hi_open: bool| -> f64 {
            let mut v: f64 = 1.0;
            if ramp > 0.0 {
                if lo_open {
                    v = v.min((i as f64 + 0.5) / ramp);
                }
                if hi_open {
                    v = v.min((len as f64 - i as f64 - 0.5) / ramp);
                }
            }
            v
        };
        for &y0 in &ys {
            let th = tile.min(h - y0);
            let iy0 = y0.saturating_sub(margin);
            let iy1 = (y0 + th + margin).min(h);
            for &x0 in &xs {
                let tw = tile.min(w - x0);
                let ix0 = x0.saturating_sub(margin);
                let ix1 = (x0 + tw + margin).min(w);
                let crop = x.crop(iy0, ix0, iy1 - iy0, ix1 - ix0)?;
                let out = self.run_tensor(crop)?;
                let (oh, ow) = (th * s, tw * s);
                let (oy, ox) = ((y0 - iy0) * s, (x0 - ix0) * s);
                let plane = out.height() * out.width();
                for yy in 0..oh {
                    let wy = axis_weight(yy, oh, y0 > 0, y0 + th < h);
                    for xx in 0..ow {
                        let wt = wy * axis_weight(xx, ow, x0 > 0, x0 + tw < w);
                        let gy = y0 * s + yy;
                        let gx = x0 * s + xx;
                        let gi = gy * w * s + gx;
                        wsum[gi] += wt;
                        let src = (oy + yy) * out.width() + ox + xx;
                        for c in 0..3 {
                            acc[gi * 3 + c] += wt * out.data()[c * plane + src] as f64;
                        }
                    }
                }
            }
        }
        let data = acc
            .chunks_exact(3)
            .zip(&wsum)
            .flat_map(|(px, &ws)| px.iter().map(move |v| (v / ws + 1.0) * 0.5).collect::<Vec<_>>())
            .collect();
        Image::from_vec(h * s, w * s, data)
    }
}

fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    let step = (tile - overlap).max(1);
    let mut out = Vec::new();
    let mut p = 0;
    loop {
        if p + tile >= len {
            out.push(len.saturating_sub(tile));
            break;
        }
        out.push(p);
        p += step;
    }
    out.dedup();
    out
}

/// How HR predictions are produced.
pub enum Method<'a> {
    Bicubic { scale: u32 },
    Model { pipeline: Pipeline<'a>, tile: usize, overlap: usize },
}

impl Method<'_> {
    pub fn predict(&self, lr: &Image) -> Result<Image> {
        match self {
            Method::Bicubic { scale } => bicubic_resize(lr, Scale::up(*scale)),
            Method::Model { pipeline, tile, overlap } => pipeline.run_tiled(lr, *tile, *overlap),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub protocol: String,
    pub config_fingerprint: String,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub per_image: Vec<ImageMetrics>,
}

impl EvalReport {
    /// Aggregates per-image rows; an empty list aggregates to NaN.
    pub fn from_rows(method: &str, protocol: String, fingerprint: &str, per_image: Vec<ImageMetrics>) -> Self {
        let n = per_image.len() as f64;
        EvalReport {
            method: method.into(),
            protocol,
            config_fingerprint: fingerprint.into(),
            mean_psnr: per_image.iter().map(|m| m.psnr).sum::<f64>() / n,
            mean_ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
            per_image,
        }
    }
}

pub fn protocol(border: usize) -> String {
    format!("RGB [0,1], clamped; PSNR peak 1 with {border}px border crop, capped at 100 dB; SSIM 11x11 Gaussian (sigma 1.5) valid windows, channel mean")
}

/// Scores `(name, prediction, truth)` triples.
pub fn score(
    method: &str,
    fingerprint: &str,
    border: usize,
    items: impl IntoIterator<Item = Result<(String, Image, Image)>>,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for item in items {
        let (name, pred, truth) = item?;
        if pred.dims() != truth.dims() {
            return Err(Error::Shape(format!(
                "{name}: prediction is {}x{} but ground truth is {}x{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            )));
        }
        let MetricReport { psnr, ssim } = evaluate_pair(&pred, &truth, border)?;
        rows.push(ImageMetrics { name, psnr, ssim });
    }
    Ok(EvalReport::from_rows(method, protocol(border), fingerprint, rows))
}

fn load_pair(p: &EvalPair) -> Result<(Image, Image)> {
    let gt = p
        .gt
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no ground truth available", p.name)))?;
    Ok((load_png(&p.lr)?, load_png(gt)?))
}

/// HR evaluation of `method` over `pairs`.
pub fn evaluate(method: &Method<'_>, label: &str, pairs: &[EvalPair], border: usize, fingerprint: &str) -> Result<EvalReport> {
    if let Some(p) = pairs.iter().find(|p| p.gt.is_none()) {
        return Err(Error::InvalidArgument(format!("{}: no ground truth available", p.name)));
    }
    score(
        label,
        fingerprint,
        border,
        pairs.iter().map(|p| {
            let (lr, gt) = load_pair(p)?;
            Ok((p.name.clone(), method.predict(&lr)?, gt))
        }),
    )
}

/// LR-resolution evaluation of `G1(x)`, or of `x` itself without `g1`.
///
/// With a manifest the reference is the shift-aligned clean LR rebuilt from
/// each image's record; without one it is the plain bicubic downsample of
/// the ground truth.
pub fn evaluate_lr_cleaning(
    g1: Option<(&Network, &NetworkParams<f32>)>,
    label: &str,
    pairs: &[EvalPair],
    manifest: Option<&Manifest>,
    scale: u32,
    border: usize,
    fingerprint: &str,
) -> Result<EvalReport> {
    score(
        label,
        fingerprint,
        border,
        pairs.iter().map(|p| {
            let (lr, gt) = load_pair(p)?;
            let clean = match manifest {
                Some(m) => {
                    let entry = m
                        .records
                        .iter()
                        .find(|e| e.file == p.name)
                        .ok_or_else(|| Error::InvalidArgument(format!("{}: not in the degradation manifest", p.name)))?;
                    clean_lr(&gt, &m.config, &entry.record)?
                }
                None => bicubic_resize(&gt, Scale::down(scale))?,
            };
            let pred = match g1 {
                Some((net, params)) => from_model_range(&net.infer(params, to_model_range(&lr))?, 0)?,
                None => lr,
            };
            Ok((p.name.clone(), pred, clean))
        }),
    )
}

/// Writes `input (bicubic) | output | ground truth` panels for the first
/// `count` pairs.
pub fn write_panels(method: &Method<'_>, pairs: &[EvalPair], scale: u32, dir: &Path, count: usize) -> Result<()> {
    for p in pairs.iter().take(count) {
        let (lr, gt) = load_pair(p)?;
        let up = bicubic_resize(&lr, Scale::up(scale))?;
        let out = method.predict(&lr)?;
        save_png(&side_by_side(&[&up, &out, &gt])?, &dir.join(&p.name))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    schema: String,
    version: u32,
    columns: Vec<String>,
    rows: Vec<(String, f64, f64)>,
    reports: Vec<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

/// Writes `report.txt` and `report.json` into `dir`, echoing `config` into
/// the latter when given.
pub fn emit_report(reports: &[EvalReport], config: Option<&RunConfig>, dir: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to emit".into()));
    }
    let mut text = String::new();
    text.push_str(&format!("{:<24} {:>10} {:>8}\n", "method", "PSNR (dB)", "SSIM"));
    for r in reports {
        text.push_str(&format!("{:<24} {:>10.4} {:>8.4}\n", r.method, r.mean_psnr, r.mean_ssim));
    }
    text.push_str(&format!("\nprotocol: {}\nconfig: {}\n", reports[0].protocol, reports[0].config_fingerprint));
    for r in reports {
        text.push_str(&format!("\n[{}]\n", r.method));
        for m in &r.per_image {
            text.push_str(&format!("  {:<20} {:>10.4} {:>8.4}\n", m.name, m.psnr, m.ssim));
        }
    }
    let file = ReportFile {
        schema: REPORT_SCHEMA.into(),
        version: REPORT_VERSION,
        columns: REPORT_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows: reports
            .iter()
            .map(|r| (r.method.clone(), r.mean_psnr, r.mean_ssim))
            .collect(),
        reports: reports.to_vec(),
        config: config.map(RunConfig::to_json),
    };
    write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    write_atomic(
        &dir.join("report.json"),
        serde_json::to_string_pretty(&file)?.as_bytes(),
    )
}

/// Reads the reports back from a `report.json`.
pub fn load_report(path: &Path) -> Result<Vec<EvalReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ReportFile = serde_json::from_str(&text)?;
    if file.schema != REPORT_SCHEMA || file.version != REPORT_VERSION {
        return Err(Error::Serde(format!("{} is not a version {REPORT_VERSION} report", path.display())));
    }
    Ok(file.reports)
}

/// Outcome of one ablation run.
pub struct AblationRun {
    pub structure: Structure,
    pub report: EvalReport,
    pub state: TrainState,
}

/// Trains `structure` for `steps` joint iterations from the shared phase-1
/// state and pretrained SR, then evaluates it.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    structure: Structure,
    cfg: &RunConfig,
    nets: &Networks,
    split: &UnpairedSplit,
    phase1: &TrainState,
    sr: &NetworkParams<f32>,
    steps: u64,
    pairs: &[EvalPair],
    hooks: &mut RunHooks<'_>,
) -> Result<AblationRun> {
    let mut state = phase1.clone();
    state.begin_phase2(cfg, nets, sr.clone(), structure)?;
    train_phase2(&mut state, cfg, nets, split, steps, hooks)?;
    let pipeline = Pipeline::from_state(nets, &state)?;
    let method = Method::Model {
        pipeline,
        tile: cfg.eval.tile,
        overlap: cfg.eval.overlap,
    };
    let report = evaluate(&method, structure.label(), pairs, cfg.eval.border_crop, &cfg.fingerprint())?;
    Ok(AblationRun {
        structure,
        report,
        state,
    })
}

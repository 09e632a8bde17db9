//! Whole-cloud inference and evaluation.

use crate::cloud::{DenseCloud, Normalization};
use crate::error::{range_err, Result};
use crate::metrics::{evaluate, EvalOptions, Metric, MetricReport};
use crate::net::Upsampler;
use crate::patch::{default_coverage, extract_patches, merge_patches};
use crate::synth::{SurfaceSpec, IDENTITY};
use crate::Point3;

/// Upsamples `points` by `r`: normalize, cut FPS-anchored patches, upsample
/// each patch in its own unit sphere, merge to exactly `M R` points by FPS
/// and map back. `coverage` defaults to `ceil(2M / N)` anchors.
pub fn upsample_cloud(
    model: &Upsampler,
    points: &[Point3],
    r: usize,
    patch_size: usize,
    coverage: Option<usize>,
) -> Result<DenseCloud> {
    let r_max = model.config().r_max;
    if r < 1 || r > r_max {
        return range_err(format!("factor {r} outside [1, {r_max}] supported by this checkpoint (R_max = {r_max})"));
    }
    let m = points.len();
    let global = Normalization::fit(points)?;
    let normalized = global.apply_all(points);
    let coverage = coverage.unwrap_or_else(|| default_coverage(m, patch_size));
    let set = extract_patches(&normalized, patch_size, coverage)?;
    let mut outputs = Vec::with_capacity(set.len());
    for idx in &set.patches {
        let patch: Vec<Point3> = idx.iter().map(|&i| normalized[i]).collect();
        let local = Normalization::fit(&patch)?;
        let up = model.upsample_patch(&local.apply_all(&patch), r)?;
        outputs.push(local.invert_all(&up));
    }
    let merged = merge_patches(&outputs, m * r)?;
    Ok(DenseCloud {
        points: global.invert_all(&merged.points),
        provenance: merged.provenance,
    })
}

/// Evaluates `pred` against `gt` after mapping both with the unit-sphere
/// transform of `gt`. P2F is measured against `surface` in the same frame.
pub fn evaluate_clouds(
    pred: &[Point3],
    gt: &[Point3],
    surface: Option<&SurfaceSpec>,
    metrics: &[Metric],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let norm = Normalization::fit(gt)?;
    let p = norm.apply_all(pred);
    let g = norm.apply_all(gt);
    let s = 1.0 / norm.scale;
    let c = norm.centroid;
    let surface = surface.map(|sp| sp.transformed(&IDENTITY, s, &[-c[0] * s, -c[1] * s, -c[2] * s]));
    evaluate(&p, &g, surface.as_ref(), metrics, opts)
}

/// Parses a comma-separated metric list, keeping request order and dropping repeats.
pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = Metric::parse(name).ok_or_else(|| crate::Error::Config(format!("unknown metric {name:?}")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(crate::Error::Config("no metrics requested".into()));
    }
    Ok(out)
}

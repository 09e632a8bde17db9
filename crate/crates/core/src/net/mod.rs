//! The upsampling network.
//!
//! Per patch of `N` points:
//!
//! 1. dynamic edge convolution embeds every point into `U` features `c_i`;
//! 2. a distance encoder embeds each of the K nearest neighbors' relative
//!    position into `r_i^k`, concatenated with the neighbor's `c` to `c~_i^k`;
//! 3. a shared MLP maps each `c~_i^k` to `R_max` raw weights; factor `R` uses
//!    the first `R` of them, softmax-normalized over the K neighbors;
//! 4. coarse points `p~_i^r = sum_k w_i^{k,r} x_i^k` and their features
//!    `d_i^r = sum_k w_i^{k,r} c~_i^k` use the same weights;
//! 5. one self-attention layer over all `N R` features predicts offsets `e`,
//!    giving refined points `p = p~ + e`.
//!
//! Output rows are ordered `(i, r)` with `r` fastest: row `i * R + r`.

mod config;
mod params;

pub use config::NetConfig;
pub use params::{layer_specs, Bound, LayerSpec, ParamStore};

use crate::autodiff::{Selections, Tape, Tensor, Var};
use crate::error::{range_err, Error, Result};
use crate::spatial::{knn, knn_features, NeighborIndex};
use crate::Point3;

/// Tolerance on the weight simplex when interpolating.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// `x W + b` for `x: [n, in]`.
pub fn linear(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"));
    let b = p.get(&format!("{name}.bias"));
    let xw = tape.matmul(x, w)?;
    let shape = tape.shape(xw).to_vec();
    let bb = tape.broadcast(b, &shape)?;
    tape.add(xw, bb)
}

/// Stacked `prefix.0 .. prefix.{layers-1}` with relu between layers, and
/// after the last one when `final_relu`.
pub fn mlp(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    layers: usize,
    x: Var,
    final_relu: bool,
) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        h = linear(tape, p, &format!("{prefix}.{l}"), h)?;
        if l + 1 < layers || final_relu {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Dynamic-graph point features `c: [N, U]` for `points: [N, 3]`.
///
/// Layer `l` links each point to its `graph_k` nearest neighbors in the
/// features of layer `l - 1` (coordinates for the first layer), applies a
/// shared layer to `[f_i, f_j - f_i]` and max-pools over the neighbors. All
/// layer outputs are concatenated and projected to `U`.
pub fn embed_features(
    tape: &mut Tape,
    p: &Bound,
    cfg: &NetConfig,
    points: Var,
    sel: &mut Selections,
) -> Result<Var> {
    let n = tape.shape(points)[0];
    if n < cfg.graph_k {
        return range_err(format!(
            "patch of {n} points is smaller than graph K = {}",
            cfg.graph_k
        ));
    }
    let g = cfg.graph_k;
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, g)).collect();
    let mut feat = points;
    let mut outputs = Vec::with_capacity(cfg.edge_widths.len());
    for (l, &width) in cfg.edge_widths.iter().enumerate() {
        let graph = if l == 0 {
            knn(&tape.value(points).to_points(), g)?.flat().to_vec()
        } else {
            let f = tape.value(feat);
            let w = f.shape()[1];
            let data = f.data().to_vec();
            sel.choose(|| {
                knn_features(&data, w, g)
                    .expect("graph K checked above")
                    .flat()
                    .to_vec()
            })
        };
        let fi = tape.gather(feat, &centers, 0)?;
        let fj = tape.gather(feat, &graph, 0)?;
        let diff = tape.sub(fj, fi)?;
        let edge = tape.concat(&[fi, diff], 1)?;
        let h = linear(tape, p, &format!("edgeconv.{l}"), edge)?;
        let h = tape.relu(h);
        let h = tape.reshape(h, &[n, g, width])?;
        feat = tape.max(h, 1)?;
        outputs.push(feat);
    }
    let all = tape.concat(&outputs, 1)?;
    let c = linear(tape, p, "embed", all)?;
    Ok(tape.relu(c))
}

/// Rows `x_i, x_i^k, x_i - x_i^k, |x_i - x_i^k|` for every `(i, k)`,
/// shaped `[N * K, 10]`.
pub fn distance_inputs(points: &[Point3], nbrs: &NeighborIndex) -> Tensor {
    let k = nbrs.k();
    let mut data = Vec::with_capacity(points.len() * k * 10);
    for (i, xi) in points.iter().enumerate() {
        for &j in nbrs.row(i) {
            let xk = points[j];
            let rel = [xi[0] - xk[0], xi[1] - xk[1], xi[2] - xk[2]];
            let dist = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
            data.extend_from_slice(xi);
            data.extend_from_slice(&xk);
            data.extend_from_slice(&rel);
            data.push(dist);
        }
    }
    Tensor::from_parts(vec![points.len() * k, 10], data)
}

/// Relative-position features `r: [N * K, U]`.
pub fn distance_encode(tape: &mut Tape, p: &Bound, inputs: Var) -> Result<Var> {
    mlp(tape, p, "distenc", 2, inputs, true)
}

/// Raw unified weights `[N * K, R_max]` from `c~: [N * K, 2U]`.
pub fn predict_weights(tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
    mlp(tape, p, "weights", 3, features, false)
}

/// Keeps the first `r` of the `R_max` weight groups of `raw: [N, K, R_max]`
/// and softmax-normalizes each group over the K neighbors.
///
/// Returns `[N, R, K]`: row `(i, r)` is the simplex weight vector of replica
/// `r` of point `i`.
pub fn select_and_normalize(tape: &mut Tape, raw: Var, r: usize) -> Result<Var> {
    let shape = tape.shape(raw).to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("raw weights must be [N, K, R_max], got {shape:?}")));
    }
    let r_max = shape[2];
    if r == 0 || r > r_max {
        return range_err(format!("factor {r} outside [1, {r_max}]"));
    }
    let head: Vec<usize> = (0..r).collect();
    let sel = tape.gather(raw, &head, 2)?;
    let t = tape.transpose(sel)?;
    tape.softmax(t)
}

/// Coarse points `[N, R, 3]` and interpolated features `[N, R, F]` from
/// simplex weights `[N, R, K]`, neighbor coordinates `[N, K, 3]` and neighbor
/// features `[N, K, F]`.
pub fn interpolate_coarse(
    tape: &mut Tape,
    weights: Var,
    neighbor_points: Var,
    neighbor_features: Var,
) -> Result<(Var, Var)> {
    let w = tape.value(weights);
    let k = *w.shape().last().unwrap_or(&0);
    if k == 0 {
        return Err(Error::Shape("weights have no neighbor axis".into()));
    }
    for (row, ws) in w.data().chunks_exact(k).enumerate() {
        let sum: f64 = ws.iter().sum();
        if ws.iter().any(|&x| x < -SIMPLEX_TOLERANCE) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Contract(format!(
                "weight row {row} is not on the simplex (sum {sum})"
            )));
        }
    }
    let coarse = tape.bmm(weights, neighbor_points)?;
    let d = tape.bmm(weights, neighbor_features)?;
    Ok((coarse, d))
}

/// Self-attention refinement: `q = MLP(d)`, `v = MLP(d)`, keys equal queries,
/// `d~ = softmax(q q^T / sqrt(u_q)) v`, `e = MLP(d~)`. Returns
/// `(offsets, refined)`, both `[NR, 3]`.
pub fn refine(tape: &mut Tape, p: &Bound, features: Var, coarse: Var) -> Result<(Var, Var)> {
    let q = mlp(tape, p, "refine.query", 2, features, false)?;
    let v = mlp(tape, p, "refine.value", 2, features, false)?;
    let uq = tape.shape(q)[1] as f64;
    let qt = tape.transpose(q)?;
    let scores = tape.matmul(q, qt)?;
    let scores = tape.scale(scores, 1.0 / uq.sqrt());
    let att = tape.softmax(scores)?;
    let pooled = tape.matmul(att, v)?;
    let offsets = mlp(tape, p, "refine.offset", 2, pooled, false)?;
    let refined = tape.add(coarse, offsets)?;
    Ok((offsets, refined))
}

/// Intermediate values of one patch forward pass.
#[derive(Debug, Clone)]
pub struct PatchForward {
    pub factor: usize,
    pub neighbors: NeighborIndex,
    /// `[N, U]`
    pub features: Var,
    /// `[N * K, U]`
    pub relative: Var,
    /// `[N * K, 2U]`
    pub combined: Var,
    /// `[N, K, R_max]`
    pub raw_weights: Var,
    /// `[N, R, K]`
    pub weights: Var,
    /// `[N * R, 3]`
    pub coarse: Var,
    /// `[N * R, 2U]`
    pub interpolated: Var,
    /// `[N * R, 3]`; `None` when refinement is disabled.
    pub offsets: Option<Var>,
    /// `[N * R, 3]`; equals `coarse` when refinement is disabled.
    pub refined: Var,
}

/// Full forward pass on one patch at factor `r`.
pub fn forward_patch(
    tape: &mut Tape,
    p: &Bound,
    cfg: &NetConfig,
    patch: &[Point3],
    r: usize,
    use_refinement: bool,
    sel: &mut Selections,
) -> Result<PatchForward> {
    let n = patch.len();
    cfg.check_patch(n)?;
    if r == 0 || r > cfg.r_max {
        return range_err(format!("factor {r} outside [1, {}]", cfg.r_max));
    }
    let k = cfg.neighbors;
    let u = cfg.feature_width;
    let nbrs = knn(patch, k)?;
    let x = tape.constant(Tensor::from_points(patch));
    let features = embed_features(tape, p, cfg, x, sel)?;
    let dist_in = tape.constant(distance_inputs(patch, &nbrs));
    let relative = distance_encode(tape, p, dist_in)?;
    let neighbor_c = tape.gather(features, nbrs.flat(), 0)?;
    let combined = tape.concat(&[neighbor_c, relative], 1)?;
    let raw = predict_weights(tape, p, combined)?;
    let raw_weights = tape.reshape(raw, &[n, k, cfg.r_max])?;
    let weights = select_and_normalize(tape, raw_weights, r)?;
    let nbr_pts: Vec<Point3> = nbrs.flat().iter().map(|&j| patch[j]).collect();
    let nbr_pts = tape.constant(Tensor::from_points(&nbr_pts).reshaped(vec![n, k, 3])?);
    let nbr_feat = tape.reshape(combined, &[n, k, 2 * u])?;
    let (coarse, d) = interpolate_coarse(tape, weights, nbr_pts, nbr_feat)?;
    let coarse = tape.reshape(coarse, &[n * r, 3])?;
    let interpolated = tape.reshape(d, &[n * r, 2 * u])?;
    let (offsets, refined) = if use_refinement {
        let (e, p) = refine(tape, p, interpolated, coarse)?;
        (Some(e), p)
    } else {
        (None, coarse)
    };
    Ok(PatchForward {
        factor: r,
        neighbors: nbrs,
        features,
        relative,
        combined,
        raw_weights,
        weights,
        coarse,
        interpolated,
        offsets,
        refined,
    })
}

/// A network configuration with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Upsampler {
    pub params: ParamStore,
    /// When false the offsets are skipped and refined points equal coarse ones.
    pub use_refinement: bool,
}

/// Coarse and refined points of one upsampled patch.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampledPatch {
    pub coarse: Vec<Point3>,
    pub refined: Vec<Point3>,
}

impl Upsampler {
    pub fn new(params: ParamStore) -> Self {
        Self {
            params,
            use_refinement: true,
        }
    }

    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        Ok(Self::new(ParamStore::init(config, seed)?))
    }

    pub fn config(&self) -> &NetConfig {
        self.params.config()
    }

    /// Upsamples a (normalized) patch by `r`, returning `N * R` refined points.
    pub fn upsample_patch(&self, patch: &[Point3], r: usize) -> Result<Vec<Point3>> {
        Ok(self.run(patch, r)?.refined)
    }

    pub fn run(&self, patch: &[Point3], r: usize) -> Result<UpsampledPatch> {
        let mut tape = Tape::no_record();
        let bound = self.params.bind(&mut tape);
        let out = forward_patch(
            &mut tape,
            &bound,
            self.config(),
            patch,
            r,
            self.use_refinement,
            &mut Selections::live(),
        )?;
        Ok(UpsampledPatch {
            coarse: tape.value(out.coarse).to_points(),
            refined: tape.value(out.refined).to_points(),
        })
    }
}

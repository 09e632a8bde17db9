//! Training losses: Chamfer, projection and uniform terms and their weighted sum.
//!
//! Each loss has a plain value form and a tape form. Tape forms take the
//! discrete parts of the loss (nearest-neighbor assignments, FPS seeds, ball
//! memberships) through [`Selections`], so the gradient treats them as
//! constants and gradcheck can replay them.

use crate::autodiff::{Selections, Tape, Tensor, Var};
use crate::error::{range_err, Error, Result};
use crate::spatial::{ball_query, farthest_point_sample, nearest_in};
use crate::Point3;

/// Weights of the refine, coarse, projection and uniform terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 30.0,
            gamma: 100.0,
            zeta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Ball fraction `p` (radius `sqrt(p)`) and the FPS seed cap of the uniform loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformConfig {
    pub p: f64,
    pub max_seeds: usize,
}

impl Default for UniformConfig {
    fn default() -> Self {
        Self {
            p: 0.01,
            max_seeds: 64,
        }
    }
}

impl UniformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("uniform p = {} must lie in (0, 1)", self.p)));
        }
        if self.max_seeds == 0 {
            return Err(Error::Config("uniform seed count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        self.p.sqrt()
    }
}

/// Values of the four loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub refine: f64,
    pub coarse: f64,
    pub pro: f64,
    pub uni: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        total_loss(self.refine, self.coarse, self.pro, self.uni, w)
    }
}

pub fn total_loss(refine: f64, coarse: f64, pro: f64, uni: f64, w: &LossWeights) -> f64 {
    w.alpha * refine + w.beta * coarse + w.gamma * pro + w.zeta * uni
}

fn check_nonempty(x: &[Point3], y: &[Point3]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return range_err(format!("distance between clouds of {} and {} points", x.len(), y.len()));
    }
    Ok(())
}

/// Mean nearest-neighbor distance in both directions, each normalized by its
/// own set size.
pub fn chamfer(x: &[Point3], y: &[Point3]) -> Result<f64> {
    check_nonempty(x, y)?;
    let forward: f64 = nearest_in(x, y).iter().map(|e| e.1.sqrt()).sum();
    let backward: f64 = nearest_in(y, x).iter().map(|e| e.1.sqrt()).sum();
    Ok(forward / x.len() as f64 + backward / y.len() as f64)
}

/// Mean `|n_l . (y_l - nearest predicted point)|` over the ground truth.
pub fn projection_loss(pred: &[Point3], gt: &[Point3], normals: &[Point3]) -> Result<f64> {
    check_nonempty(pred, gt)?;
    check_normals(gt, normals)?;
    let sum: f64 = nearest_in(gt, pred)
        .iter()
        .zip(gt.iter().zip(normals))
        .map(|(&(j, _), (y, n))| {
            let p = pred[j];
            (n[0] * (y[0] - p[0]) + n[1] * (y[1] - p[1]) + n[2] * (y[2] - p[2])).abs()
        })
        .sum();
    Ok(sum / gt.len() as f64)
}

fn check_normals(gt: &[Point3], normals: &[Point3]) -> Result<()> {
    if normals.len() != gt.len() {
        return Err(Error::Contract(format!(
            "projection loss needs one normal per ground-truth point ({} for {})",
            normals.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Ball subsets of the uniform loss with in-ball nearest neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSubsets {
    /// Member count of each seed's ball.
    pub sizes: Vec<usize>,
    /// `(subset, member, nearest other member)` for subsets of size >= 2.
    pub pairs: Vec<(usize, usize, usize)>,
}

impl UniformSubsets {
    pub fn build(points: &[Point3], cfg: &UniformConfig) -> Result<Self> {
        if points.is_empty() {
            return range_err("uniform loss of an empty cloud");
        }
        let seeds = farthest_point_sample(points, cfg.max_seeds.min(points.len()), 0)?;
        let centers: Vec<Point3> = seeds.iter().map(|&s| points[s]).collect();
        let balls = ball_query(points, &centers, cfg.radius());
        let mut sizes = Vec::with_capacity(balls.len());
        let mut pairs = Vec::new();
        for (s, ball) in balls.iter().enumerate() {
            sizes.push(ball.len());
            if ball.len() < 2 {
                continue;
            }
            let members: Vec<Point3> = ball.iter().map(|&j| points[j]).collect();
            for (a, &ia) in ball.iter().enumerate() {
                let mut best = (f64::INFINITY, usize::MAX);
                for (b, m) in members.iter().enumerate() {
                    if b != a {
                        let d = crate::dist2(&members[a], m);
                        if d < best.0 {
                            best = (d, ball[b]);
                        }
                    }
                }
                pairs.push((s, ia, best.1));
            }
        }
        Ok(Self { sizes, pairs })
    }

    fn encode(&self) -> Vec<usize> {
        let mut out = vec![self.sizes.len()];
        out.extend(&self.sizes);
        for &(s, a, b) in &self.pairs {
            out.extend([s, a, b]);
        }
        out
    }

    fn decode(raw: &[usize]) -> Self {
        let n = raw[0];
        let sizes = raw[1..=n].to_vec();
        let pairs = raw[n + 1..].chunks_exact(3).map(|c| (c[0], c[1], c[2])).collect();
        Self { sizes, pairs }
    }

    /// `(imbalance, d_hat)` of subset `s` for a cloud of `n` points.
    fn stats(&self, s: usize, n: usize, cfg: &UniformConfig) -> (f64, f64) {
        let n_hat = n as f64 * cfg.p;
        let size = self.sizes[s] as f64;
        let imbalance = (size - n_hat).powi(2) / n_hat;
        let d_hat = (2.0 * std::f64::consts::PI * cfg.p / (size * 3f64.sqrt())).sqrt();
        (imbalance, d_hat)
    }

    /// Summed imbalance of subsets too small to have a clutter term.
    fn small_subset_total(&self, n: usize, cfg: &UniformConfig) -> f64 {
        (0..self.sizes.len())
            .filter(|&s| self.sizes[s] < 2)
            .map(|s| self.stats(s, n, cfg).0)
            .sum()
    }
}

/// Sum over FPS seed balls of imbalance times clutter.
pub fn uniform_loss(points: &[Point3], cfg: &UniformConfig) -> Result<f64> {
    let sub = UniformSubsets::build(points, cfg)?;
    let n = points.len();
    let mut total = sub.small_subset_total(n, cfg);
    for &(s, a, b) in &sub.pairs {
        let (imbalance, d_hat) = sub.stats(s, n, cfg);
        let d = crate::dist2(&points[a], &points[b]).sqrt();
        total += imbalance * (d - d_hat).powi(2) / d_hat;
    }
    Ok(total)
}

fn points_of(tape: &Tape, v: Var) -> Result<Vec<Point3>> {
    let shape = tape.shape(v);
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::Shape(format!("expected a [n, 3] point tensor, got {shape:?}")));
    }
    Ok(tape.value(v).to_points())
}

/// Row norms of `a - b` for two `[n, 3]` tensors.
fn row_distances(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq, 1)?;
    Ok(tape.sqrt(s))
}

/// [`chamfer`] between a tape cloud `x` and a constant cloud `y`.
pub fn chamfer_on_tape(tape: &mut Tape, x: Var, y: &[Point3], sel: &mut Selections) -> Result<Var> {
    let xs = points_of(tape, x)?;
    check_nonempty(&xs, y)?;
    let assignment = sel.choose(|| {
        nearest_in(&xs, y)
            .iter()
            .map(|e| e.0)
            .chain(nearest_in(y, &xs).iter().map(|e| e.0))
            .collect()
    });
    let (to_y, to_x) = assignment.split_at(xs.len());
    let matched_y: Vec<Point3> = to_y.iter().map(|&j| y[j]).collect();
    let matched_y = tape.constant(Tensor::from_points(&matched_y));
    let d_xy = row_distances(tape, x, matched_y)?;
    let forward = tape.mean_all(d_xy)?;
    let matched_x = tape.gather(x, to_x, 0)?;
    let yc = tape.constant(Tensor::from_points(y));
    let d_yx = row_distances(tape, matched_x, yc)?;
    let backward = tape.mean_all(d_yx)?;
    tape.add(forward, backward)
}

/// [`projection_loss`] with the prediction on the tape.
pub fn projection_on_tape(
    tape: &mut Tape,
    pred: Var,
    gt: &[Point3],
    normals: Option<&[Point3]>,
    sel: &mut Selections,
) -> Result<Var> {
    let normals = normals.ok_or_else(|| Error::Contract("projection loss needs ground-truth normals".into()))?;
    let ps = points_of(tape, pred)?;
    check_nonempty(&ps, gt)?;
    check_normals(gt, normals)?;
    let assignment = sel.choose(|| nearest_in(gt, &ps).iter().map(|e| e.0).collect());
    let nearest = tape.gather(pred, &assignment, 0)?;
    let g = tape.constant(Tensor::from_points(gt));
    let diff = tape.sub(g, nearest)?;
    let n = tape.constant(Tensor::from_points(normals));
    let prod = tape.mul(diff, n)?;
    let dots = tape.sum(prod, 1)?;
    let abs = tape.abs(dots);
    tape.mean_all(abs)
}

/// [`uniform_loss`] with the prediction on the tape.
pub fn uniform_on_tape(
    tape: &mut Tape,
    pred: Var,
    cfg: &UniformConfig,
    sel: &mut Selections,
) -> Result<Var> {
    let ps = points_of(tape, pred)?;
    let n = ps.len();
    let mut built = None;
    let raw = sel.choose(|| match UniformSubsets::build(&ps, cfg) {
        Ok(s) => s.encode(),
        Err(e) => {
            built = Some(e);
            Vec::new()
        }
    });
    if let Some(e) = built {
        return Err(e);
    }
    let sub = UniformSubsets::decode(&raw);
    let constant = tape.constant(Tensor::scalar(sub.small_subset_total(n, cfg)));
    if sub.pairs.is_empty() {
        return Ok(constant);
    }
    let a: Vec<usize> = sub.pairs.iter().map(|p| p.1).collect();
    let b: Vec<usize> = sub.pairs.iter().map(|p| p.2).collect();
    let mut d_hat = Vec::with_capacity(a.len());
    let mut coef = Vec::with_capacity(a.len());
    for &(s, _, _) in &sub.pairs {
        let (imbalance, dh) = sub.stats(s, n, cfg);
        d_hat.push(dh);
        coef.push(imbalance / dh);
    }
    let pa = tape.gather(pred, &a, 0)?;
    let pb = tape.gather(pred, &b, 0)?;
    let d = row_distances(tape, pa, pb)?;
    let dh = tape.constant(Tensor::vector(d_hat));
    let dev = tape.sub(d, dh)?;
    let sq = tape.mul(dev, dev)?;
    let c = tape.constant(Tensor::vector(coef));
    let weighted = tape.mul(sq, c)?;
    let clutter = tape.sum_all(weighted)?;
    tape.add(clutter, constant)
}

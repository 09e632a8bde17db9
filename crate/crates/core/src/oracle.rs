//! Brute-force reference implementations.
//!
//! Everything here is deliberately naive: quadratic scans, hash-map
//! histograms and exhaustive searches. They exist to check the accelerated
//! paths and are compiled only for tests or with the `oracle` feature.

use std::collections::HashMap;

use crate::Point3;

fn d2(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(q: &Point3, set: &[Point3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (j, p) in set.iter().enumerate() {
        let d = d2(q, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Indices of the `k` nearest points to `points[i]`, ties by index.
pub fn knn_row(points: &[Point3], i: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(j, p)| (d2(&points[i], p), j)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Farthest point sampling by repeated full scans.
pub fn fps(points: &[Point3], m: usize, seed: usize) -> Vec<usize> {
    let mut chosen = vec![seed];
    while chosen.len() < m {
        let mut best = (usize::MAX, -1.0);
        for (j, p) in points.iter().enumerate() {
            if chosen.contains(&j) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| d2(p, &points[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (j, d);
            }
        }
        chosen.push(best.0);
    }
    chosen
}

pub fn chamfer(x: &[Point3], y: &[Point3]) -> f64 {
    let a: f64 = x.iter().map(|p| nearest(p, y).1.sqrt()).sum::<f64>() / x.len() as f64;
    let b: f64 = y.iter().map(|p| nearest(p, x).1.sqrt()).sum::<f64>() / y.len() as f64;
    a + b
}

pub fn hausdorff(x: &[Point3], y: &[Point3]) -> f64 {
    let a = x.iter().map(|p| nearest(p, y).1).fold(0.0, f64::max);
    let b = y.iter().map(|p| nearest(p, x).1).fold(0.0, f64::max);
    a.max(b).sqrt()
}

fn voxel(p: &Point3, g: usize) -> (usize, usize, usize) {
    let cell = |v: f64| {
        let c = ((v + 1.0) / 2.0 * g as f64).floor();
        if c < 0.0 {
            0
        } else if c >= g as f64 {
            g - 1
        } else {
            c as usize
        }
    };
    (cell(p[0]), cell(p[1]), cell(p[2]))
}

/// Jensen-Shannon divergence between voxel occupancy histograms.
pub fn jsd(x: &[Point3], y: &[Point3], g: usize) -> f64 {
    let mut hx: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut hy: HashMap<(usize, usize, usize), f64> = HashMap::new();
    for p in x {
        *hx.entry(voxel(p, g)).or_default() += 1.0 / x.len() as f64;
    }
    for p in y {
        *hy.entry(voxel(p, g)).or_default() += 1.0 / y.len() as f64;
    }
    let mut keys: Vec<_> = hx.keys().chain(hy.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let mut total = 0.0;
    for key in keys {
        let p = hx.get(&key).copied().unwrap_or(0.0);
        let q = hy.get(&key).copied().unwrap_or(0.0);
        let m = 0.5 * (p + q);
        if p > 0.0 {
            total += 0.5 * p * (p / m).ln();
        }
        if q > 0.0 {
            total += 0.5 * q * (q / m).ln();
        }
    }
    total
}

/// Normalized uniformity coefficient over `seeds` FPS balls of radius `sqrt(p)`.
pub fn nuc(points: &[Point3], p: f64, seeds: usize) -> f64 {
    let centers = fps(points, seeds.min(points.len()), 0);
    let r2 = p.sqrt() * p.sqrt();
    let q: Vec<f64> = centers
        .iter()
        .map(|&c| {
            let n = points.iter().filter(|x| d2(x, &points[c]) <= r2).count();
            n as f64 / (points.len() as f64 * p)
        })
        .collect();
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    (q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / q.len() as f64).sqrt()
}

/// Uniform loss with `min(64, n)` FPS seeds and ball radius `sqrt(p)`.
pub fn uniform_loss(points: &[Point3], p: f64, max_seeds: usize) -> f64 {
    let n = points.len();
    let seeds = fps(points, max_seeds.min(n), 0);
    let n_hat = n as f64 * p;
    let r2 = p.sqrt() * p.sqrt();
    let mut total = 0.0;
    for s in seeds {
        let ball: Vec<Point3> = points.iter().copied().filter(|x| d2(x, &points[s]) <= r2).collect();
        let size = ball.len() as f64;
        let imbalance = (size - n_hat).powi(2) / n_hat;
        if ball.len() < 2 {
            total += imbalance;
            continue;
        }
        let d_hat = (2.0 * std::f64::consts::PI * p / (size * 3f64.sqrt())).sqrt();
        let mut clutter = 0.0;
        for (a, x) in ball.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (b, y) in ball.iter().enumerate() {
                if a != b {
                    best = best.min(d2(x, y));
                }
            }
            clutter += (best.sqrt() - d_hat).powi(2) / d_hat;
        }
        total += imbalance * clutter;
    }
    total
}

fn solve3(m: [[f64; 3]; 3], b: Point3) -> Option<Point3> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-14 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = b[r];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

/// Convex-hull membership by Caratheodory: `p` lies in the hull of `pts`
/// iff it lies in some simplex spanned by at most four of them.
pub fn in_convex_hull(p: &Point3, pts: &[Point3], tol: f64) -> bool {
    let n = pts.len();
    let sub = |a: &Point3, b: &Point3| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    for a in 0..n {
        if d2(p, &pts[a]).sqrt() <= tol {
            return true;
        }
        for b in a + 1..n {
            let u = sub(&pts[b], &pts[a]);
            let w = sub(p, &pts[a]);
            let uu = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
            if uu > 0.0 {
                let t = (w[0] * u[0] + w[1] * u[1] + w[2] * u[2]) / uu;
                let foot = [pts[a][0] + t * u[0], pts[a][1] + t * u[1], pts[a][2] + t * u[2]];
                if t >= -tol && t <= 1.0 + tol && d2(&foot, p).sqrt() <= tol {
                    return true;
                }
            }
            for c in b + 1..n {
                let v = sub(&pts[c], &pts[a]);
                let normal = [
                    u[1] * v[2] - u[2] * v[1],
                    u[2] * v[0] - u[0] * v[2],
                    u[0] * v[1] - u[1] * v[0],
                ];
                let nn = normal[0].powi(2) + normal[1].powi(2) + normal[2].powi(2);
                if nn > 1e-24 {
                    let m = [
                        [u[0], v[0], normal[0]],
                        [u[1], v[1], normal[1]],
                        [u[2], v[2], normal[2]],
                    ];
                    if let Some([s, t, h]) = solve3(m, w) {
                        let off = h.abs() * nn.sqrt();
                        if off <= tol && s >= -tol && t >= -tol && s + t <= 1.0 + tol {
                            return true;
                        }
                    }
                }
                for d in c + 1..n {
                    let z = sub(&pts[d], &pts[a]);
                    let m = [
                        [u[0], v[0], z[0]],
                        [u[1], v[1], z[1]],
                        [u[2], v[2], z[2]],
                    ];
                    if let Some([s, t, r]) = solve3(m, w) {
                        if s >= -tol && t >= -tol && r >= -tol && s + t + r <= 1.0 + tol {
                            return true;
                        }
                    }
                }
            }
        }
    }
    false
}

/// Distance from `q` to the height field `z = h(x, y)` by successively
/// refined 2-D grid search around the vertical projection.
pub fn height_field_distance(q: &Point3, h: impl Fn(f64, f64) -> f64) -> f64 {
    let mut radius = (q[2] - h(q[0], q[1])).abs();
    if radius == 0.0 {
        return 0.0;
    }
    let mut center = (q[0], q[1]);
    let steps = 60;
    let mut best = radius * radius;
    for _ in 0..40 {
        let mut arg = center;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = center.0 - radius + 2.0 * radius * i as f64 / steps as f64;
                let y = center.1 - radius + 2.0 * radius * j as f64 / steps as f64;
                let d = (x - q[0]).powi(2) + (y - q[1]).powi(2) + (h(x, y) - q[2]).powi(2);
                if d < best {
                    best = d;
                    arg = (x, y);
                }
            }
        }
        center = arg;
        radius *= 0.25;
    }
    best.sqrt()
}

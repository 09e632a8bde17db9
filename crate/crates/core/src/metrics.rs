//! Evaluation metrics on unit-sphere normalized clouds.

use std::collections::BTreeMap;

use crate::error::{range_err, Result};
use crate::spatial::{ball_query, farthest_point_sample, nearest_in};
use crate::synth::SurfaceSpec;
use crate::Point3;

pub const DEFAULT_JSD_RESOLUTION: usize = 32;
pub const DEFAULT_NUC_SEEDS: usize = 100;
pub const DEFAULT_NUC_FRACTIONS: [f64; 5] = [0.004, 0.006, 0.008, 0.010, 0.012];

/// Chamfer distance, shared with the training loss.
pub fn cd(p: &[Point3], g: &[Point3]) -> Result<f64> {
    crate::losses::chamfer(p, g)
}

/// Symmetric Hausdorff distance.
pub fn hd(p: &[Point3], g: &[Point3]) -> Result<f64> {
    if p.is_empty() || g.is_empty() {
        return range_err("Hausdorff distance of an empty cloud");
    }
    let a = nearest_in(p, g).iter().map(|e| e.1).fold(0.0, f64::max);
    let b = nearest_in(g, p).iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(a.max(b).sqrt())
}

fn occupancy(points: &[Point3], g: usize) -> Vec<f64> {
    let mut hist = vec![0.0; g * g * g];
    let w = 1.0 / points.len() as f64;
    let cell = |v: f64| (((v + 1.0) * 0.5 * g as f64).floor().max(0.0) as usize).min(g - 1);
    for p in points {
        hist[(cell(p[0]) * g + cell(p[1])) * g + cell(p[2])] += w;
    }
    hist
}

/// Jensen-Shannon divergence of voxel occupancy on `[-1, 1]^3` at `g^3` cells.
/// Points outside the cube count toward the nearest boundary cell.
pub fn jsd(p: &[Point3], q: &[Point3], g: usize) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return range_err("JSD of an empty cloud");
    }
    if g == 0 {
        return range_err("JSD grid resolution must be at least 1");
    }
    let hp = occupancy(p, g);
    let hq = occupancy(q, g);
    let mut total = 0.0;
    for (&a, &b) in hp.iter().zip(&hq) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    Ok(total.max(0.0))
}

/// Mean and population standard deviation of exact point-to-surface distances.
pub fn p2f(points: &[Point3], surface: &SurfaceSpec) -> Result<(f64, f64)> {
    if points.is_empty() {
        return range_err("P2F of an empty cloud");
    }
    surface.validate()?;
    let d: Vec<f64> = points.iter().map(|x| surface.distance(x)).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Standard deviation of normalized ball counts `n_k / (|P| p)` over
/// `seeds` FPS centers with radius `sqrt(p)`.
pub fn nuc(points: &[Point3], p: f64, seeds: usize) -> Result<f64> {
    if points.is_empty() {
        return range_err("NUC of an empty cloud");
    }
    if !(p > 0.0 && p < 1.0) {
        return range_err(format!("disk fraction {p} outside (0, 1)"));
    }
    let seeds = farthest_point_sample(points, seeds.clamp(1, points.len()), 0)?;
    let centers: Vec<Point3> = seeds.iter().map(|&s| points[s]).collect();
    let expected = points.len() as f64 * p;
    let q: Vec<f64> = ball_query(points, &centers, p.sqrt())
        .iter()
        .map(|b| b.len() as f64 / expected)
        .collect();
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / q.len() as f64;
    Ok(var.sqrt())
}

/// Metrics an evaluation can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Cd,
    Hd,
    Jsd,
    P2f,
    Nuc,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Cd => "cd",
            Metric::Hd => "hd",
            Metric::Jsd => "jsd",
            Metric::P2f => "p2f",
            Metric::Nuc => "nuc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim() {
            "cd" => Metric::Cd,
            "hd" => Metric::Hd,
            "jsd" => Metric::Jsd,
            "p2f" => Metric::P2f,
            "nuc" => Metric::Nuc,
            _ => return None,
        })
    }
}

/// Requested metrics only; absent fields were not requested.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub cd: Option<f64>,
    pub hd: Option<f64>,
    pub jsd: Option<f64>,
    pub p2f: Option<(f64, f64)>,
    /// Keyed by the disk fraction's decimal text.
    pub nuc: Option<BTreeMap<String, f64>>,
}

impl MetricReport {
    /// `metric=value` lines in request order.
    pub fn to_text(&self, order: &[Metric]) -> String {
        let mut out = String::new();
        for m in order {
            match m {
                Metric::Cd => push_line(&mut out, "cd", self.cd),
                Metric::Hd => push_line(&mut out, "hd", self.hd),
                Metric::Jsd => push_line(&mut out, "jsd", self.jsd),
                Metric::P2f => {
                    if let Some((mean, std)) = self.p2f {
                        push_line(&mut out, "p2f_mean", Some(mean));
                        push_line(&mut out, "p2f_std", Some(std));
                    }
                }
                Metric::Nuc => {
                    for (p, v) in self.nuc.iter().flatten() {
                        push_line(&mut out, &format!("nuc_{p}"), Some(*v));
                    }
                }
            }
        }
        out
    }

    /// JSON object with one top-level key per requested metric, in request order.
    pub fn to_json(&self, order: &[Metric]) -> String {
        let mut obj = serde_json::Map::new();
        for m in order {
            let v = match m {
                Metric::Cd => self.cd.map(serde_json::Value::from),
                Metric::Hd => self.hd.map(serde_json::Value::from),
                Metric::Jsd => self.jsd.map(serde_json::Value::from),
                Metric::P2f => self.p2f.map(|(mean, std)| serde_json::json!({"mean": mean, "std": std})),
                Metric::Nuc => self.nuc.as_ref().map(|n| {
                    serde_json::Value::Object(n.iter().map(|(k, v)| (k.clone(), serde_json::Value::from(*v))).collect())
                }),
            };
            if let Some(v) = v {
                obj.insert(m.name().to_string(), v);
            }
        }
        let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("finite report");
        s.push('\n');
        s
    }
}

fn push_line(out: &mut String, key: &str, v: Option<f64>) {
    if let Some(v) = v {
        out.push_str(&format!("{key}={v}\n"));
    }
}

/// Evaluation settings beyond the metric list.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub jsd_resolution: usize,
    pub nuc_fractions: Vec<f64>,
    pub nuc_seeds: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            jsd_resolution: DEFAULT_JSD_RESOLUTION,
            nuc_fractions: DEFAULT_NUC_FRACTIONS.to_vec(),
            nuc_seeds: DEFAULT_NUC_SEEDS,
        }
    }
}

/// Computes `metrics` for normalized clouds. `surface`, already expressed in
/// the normalized frame, is required for P2F.
pub fn evaluate(
    pred: &[Point3],
    gt: &[Point3],
    surface: Option<&SurfaceSpec>,
    metrics: &[Metric],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let mut r = MetricReport::default();
    for m in metrics {
        match m {
            Metric::Cd => r.cd = Some(cd(pred, gt)?),
            Metric::Hd => r.hd = Some(hd(pred, gt)?),
            Metric::Jsd => r.jsd = Some(jsd(pred, gt, opts.jsd_resolution)?),
            Metric::P2f => {
                let s = surface.ok_or_else(|| {
                    crate::Error::Contract("p2f requires a surface specification".into())
                })?;
                r.p2f = Some(p2f(pred, s)?);
            }
            Metric::Nuc => {
                let mut map = BTreeMap::new();
                for &p in &opts.nuc_fractions {
                    map.insert(format!("{p}"), nuc(pred, p, opts.nuc_seeds)?);
                }
                r.nuc = Some(map);
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::synth::{SurfaceKind, SurfaceSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                let mut p = [0.0; 3];
                loop {
                    for c in p.iter_mut() {
                        *c = rng.random_range(-1.0..1.0);
                    }
                    if p.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                        return p;
                    }
                }
            })
            .collect()
    }

    #[test]
    fn hd_examples() {
        let g = [[1.0, 0.0, 0.0]];
        let p = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(hd(&p, &g).unwrap(), 1.0);
        assert_eq!(hd(&p, &p).unwrap(), 0.0);
        let mut q = p.to_vec();
        q.push([1.0, 5.0, 0.0]);
        assert_eq!(hd(&q, &g).unwrap(), 5.0);
        assert!(hd(&[], &g).is_err());
        assert_eq!(cd(&[[0.0; 3]], &g).unwrap(), 2.0);
    }

    #[test]
    fn jsd_examples() {
        let a = [[0.5, 0.5, 0.5], [-0.5, 0.1, 0.0]];
        assert_eq!(jsd(&a, &a, 32).unwrap(), 0.0);
        let b = [[-0.9, -0.9, -0.9]];
        assert!((jsd(&a, &b, 32).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn p2f_examples() {
        let unit = SurfaceSpec::canonical(SurfaceKind::Sphere { radius: 1.0 }).unwrap();
        let (m, s) = p2f(&[[0.0, 1.5, 0.0]], &unit).unwrap();
        assert!((m - 0.5).abs() < 1e-15 && s == 0.0);
        let (pts, _) = unit.sample(400, 3).unwrap();
        let (m, s) = p2f(&pts, &unit).unwrap();
        assert!(m < 1e-9 && s < 1e-9);
    }

    #[test]
    fn nuc_examples() {
        // A square grid whose FPS balls all hold the same count.
        let pts: Vec<Point3> = (0..4).map(|i| [i as f64 * 10.0, 0.0, 0.0]).collect();
        assert_eq!(nuc(&pts, 0.01, 4).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut clustered = cloud(&mut rng, 200);
        for p in clustered.iter_mut().take(150) {
            *p = [p[0] * 0.05, p[1] * 0.05, p[2] * 0.05];
        }
        let v = nuc(&clustered, 0.01, 20).unwrap();
        assert!(v > 0.0);
        assert!((v - oracle::nuc(&clustered, 0.01, 20)).abs() < 1e-12);
        for p in DEFAULT_NUC_FRACTIONS {
            assert!(nuc(&clustered, p, 20).is_ok());
        }
        assert!(nuc(&clustered, 1.0, 20).is_err());
    }

    #[test]
    fn report_keys_follow_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cloud(&mut rng, 50);
        let b = cloud(&mut rng, 60);
        let order = [Metric::Hd, Metric::Cd, Metric::Nuc];
        let r = evaluate(&a, &b, None, &order, &EvalOptions::default()).unwrap();
        let json: serde_json::Value = serde_json::from_str(&r.to_json(&order)).unwrap();
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        let mut want = vec!["cd", "hd", "nuc"];
        want.sort();
        let mut got: Vec<&str> = keys.iter().map(|s| s.as_str()).collect();
        got.sort();
        assert_eq!(got, want);
        assert_eq!(json["nuc"].as_object().unwrap().len(), 5);
        let text = r.to_text(&order);
        assert!(text.starts_with("hd="));
        assert!(evaluate(&a, &b, None, &[Metric::P2f], &EvalOptions::default()).is_err());
    }

    fn rotate_z90(p: &Point3) -> Point3 {
        [-p[1], p[0], p[2]]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn metrics_match_oracles(seed in 0u64..10_000, n in 1usize..300, m in 1usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, n);
            let b = cloud(&mut rng, m);
            prop_assert!((cd(&a, &b).unwrap() - oracle::chamfer(&a, &b)).abs() < 1e-12);
            prop_assert!((hd(&a, &b).unwrap() - oracle::hausdorff(&a, &b)).abs() < 1e-12);
            prop_assert!((jsd(&a, &b, 32).unwrap() - oracle::jsd(&a, &b, 32)).abs() < 1e-12);
            let seeds = rng.random_range(1..40);
            prop_assert!((nuc(&a, 0.01, seeds).unwrap() - oracle::nuc(&a, 0.01, seeds)).abs() < 1e-12);
        }

        #[test]
        fn metric_properties(seed in 0u64..10_000, n in 1usize..200, m in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, n);
            let b = cloud(&mut rng, m);
            let j = jsd(&a, &b, 32).unwrap();
            prop_assert!((0.0..=2f64.ln() + 1e-12).contains(&j));
            prop_assert!((j - jsd(&b, &a, 32).unwrap()).abs() < 1e-15);
            prop_assert_eq!(hd(&a, &b).unwrap(), hd(&b, &a).unwrap());
            prop_assert!((cd(&a, &b).unwrap() - cd(&b, &a).unwrap()).abs() < 1e-15);

            let ra: Vec<Point3> = a.iter().map(rotate_z90).collect();
            let rb: Vec<Point3> = b.iter().map(rotate_z90).collect();
            prop_assert!((jsd(&ra, &rb, 32).unwrap() - j).abs() < 1e-12);

            let rot = crate::synth::random_rotation(&mut rng);
            let t = [0.3, -0.2, 0.1];
            let mv = |p: &Point3| {
                let r = crate::synth::mat_vec(&rot, p);
                [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
            };
            let ta: Vec<Point3> = a.iter().map(mv).collect();
            let tb: Vec<Point3> = b.iter().map(mv).collect();
            prop_assert!((cd(&ta, &tb).unwrap() - cd(&a, &b).unwrap()).abs() < 1e-9);
            prop_assert!((hd(&ta, &tb).unwrap() - hd(&a, &b).unwrap()).abs() < 1e-9);
        }
    }
}

//! Analytic surfaces, exact sampling and training-pair generation.
//!
//! A [`SurfaceSpec`] is a canonical surface placed by a similarity transform
//! `x = s R y + t`. Canonical surfaces:
//!
//! - `plane`: `z = 0` over `[-1, 1]^2`
//! - `sphere`: `|y| = radius`
//! - `torus`: tube of radius `minor` around a circle of radius `major` in `z = 0`
//! - `bump`: `z = a exp(-(x^2 + y^2) / sigma^2)` over `[-1, 1]^2`
//!
//! Distances to the plane and bump treat them as unbounded height fields.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cloud::SparseCloud;
use crate::error::{range_err, Error, Result};
use crate::xyz;
use crate::Point3;

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_vec(m: &Mat3, v: &Point3) -> Point3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_t_vec(m: &Mat3, v: &Point3) -> Point3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Uniformly distributed rotation from a random unit quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    let mut q = [0.0f64; 4];
    loop {
        for c in q.iter_mut() {
            *c = StandardNormal.sample(rng);
        }
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-9 {
            q.iter_mut().for_each(|c| *c /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceKind {
    Plane,
    Sphere { radius: f64 },
    Torus { major: f64, minor: f64 },
    Bump { amplitude: f64, width: f64 },
}

impl SurfaceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SurfaceKind::Plane => "plane",
            SurfaceKind::Sphere { .. } => "sphere",
            SurfaceKind::Torus { .. } => "torus",
            SurfaceKind::Bump { .. } => "bump",
        }
    }
}

/// An analytic surface under a similarity transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSpec {
    pub kind: SurfaceKind,
    pub rotation: Mat3,
    pub translation: Point3,
    pub scale: f64,
}

impl SurfaceSpec {
    pub fn canonical(kind: SurfaceKind) -> Result<Self> {
        let spec = Self {
            kind,
            rotation: IDENTITY,
            translation: [0.0; 3],
            scale: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            SurfaceKind::Plane => true,
            SurfaceKind::Sphere { radius } => radius > 0.0 && radius.is_finite(),
            SurfaceKind::Torus { major, minor } => {
                minor > 0.0 && major > minor && major.is_finite()
            }
            SurfaceKind::Bump { amplitude, width } => {
                amplitude.is_finite() && width > 0.0 && width.is_finite()
            }
        };
        if !ok || !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Contract(format!("invalid surface parameters {self:?}")));
        }
        Ok(())
    }

    /// The same surface after `x -> s R x + t`.
    pub fn transformed(&self, rotation: &Mat3, scale: f64, translation: &Point3) -> Self {
        let r = mat_mul(rotation, &self.rotation);
        let t = mat_vec(rotation, &self.translation);
        Self {
            kind: self.kind,
            rotation: r,
            translation: [
                scale * t[0] + translation[0],
                scale * t[1] + translation[1],
                scale * t[2] + translation[2],
            ],
            scale: scale * self.scale,
        }
    }

    fn to_local(&self, x: &Point3) -> Point3 {
        let d = [
            x[0] - self.translation[0],
            x[1] - self.translation[1],
            x[2] - self.translation[2],
        ];
        let y = mat_t_vec(&self.rotation, &d);
        [y[0] / self.scale, y[1] / self.scale, y[2] / self.scale]
    }

    fn to_world(&self, y: &Point3) -> Point3 {
        let r = mat_vec(&self.rotation, y);
        [
            self.scale * r[0] + self.translation[0],
            self.scale * r[1] + self.translation[1],
            self.scale * r[2] + self.translation[2],
        ]
    }

    /// Exact unsigned distance from `x` to the surface.
    pub fn distance(&self, x: &Point3) -> f64 {
        let y = self.to_local(x);
        self.scale * local_distance(&self.kind, &y)
    }

    /// Samples `count` points with exact unit normals, stratified in the
    /// parameter domain and uniform in area.
    pub fn sample(&self, count: usize, seed: u64) -> Result<(Vec<Point3>, Vec<Point3>)> {
        self.validate()?;
        if count == 0 {
            return range_err("cannot sample zero points");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        let mut normals = Vec::with_capacity(count);
        while points.len() < count {
            for (u, v) in stratified(count - points.len(), &mut rng) {
                if let Some((p, n)) = local_sample(&self.kind, u, v, &mut rng) {
                    points.push(self.to_world(&p));
                    normals.push(mat_vec(&self.rotation, &n));
                    if points.len() == count {
                        break;
                    }
                }
            }
        }
        Ok((points, normals))
    }
}

impl fmt::Display for SurfaceSpec {
    /// One `key value...` line per field; parsed back by [`FromStr`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SurfaceKind::Plane => writeln!(f, "kind plane")?,
            SurfaceKind::Sphere { radius } => writeln!(f, "kind sphere {radius}")?,
            SurfaceKind::Torus { major, minor } => writeln!(f, "kind torus {major} {minor}")?,
            SurfaceKind::Bump { amplitude, width } => writeln!(f, "kind bump {amplitude} {width}")?,
        }
        for row in &self.rotation {
            writeln!(f, "rotation {} {} {}", row[0], row[1], row[2])?;
        }
        let t = self.translation;
        writeln!(f, "translation {} {} {}", t[0], t[1], t[2])?;
        writeln!(f, "scale {}", self.scale)
    }
}

impl FromStr for SurfaceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kind = None;
        let mut rotation = Vec::new();
        let mut translation = [0.0; 3];
        let mut scale = 1.0;
        for (i, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            let nums = |from: usize| -> Result<Vec<f64>> {
                rest[from..]
                    .iter()
                    .map(|w| w.parse::<f64>().map_err(|e| err(format!("bad number {w:?}: {e}"))))
                    .collect()
            };
            match key {
                "kind" => {
                    let name = rest.first().copied().unwrap_or_default();
                    let v = nums(1.min(rest.len()))?;
                    let need = |n: usize| {
                        if v.len() == n {
                            Ok(())
                        } else {
                            Err(err(format!("{name} takes {n} parameters, got {}", v.len())))
                        }
                    };
                    kind = Some(match name {
                        "plane" => {
                            need(0)?;
                            SurfaceKind::Plane
                        }
                        "sphere" => {
                            need(1)?;
                            SurfaceKind::Sphere { radius: v[0] }
                        }
                        "torus" => {
                            need(2)?;
                            SurfaceKind::Torus { major: v[0], minor: v[1] }
                        }
                        "bump" => {
                            need(2)?;
                            SurfaceKind::Bump { amplitude: v[0], width: v[1] }
                        }
                        other => return Err(err(format!("unknown surface kind {other:?}"))),
                    });
                }
                "rotation" => {
                    let v = nums(0)?;
                    if v.len() != 3 {
                        return Err(err("rotation rows take 3 numbers".into()));
                    }
                    rotation.push([v[0], v[1], v[2]]);
                }
                "translation" => {
                    let v = nums(0)?;
                    if v.len() != 3 {
                        return Err(err("translation takes 3 numbers".into()));
                    }
                    translation = [v[0], v[1], v[2]];
                }
                "scale" => {
                    let v = nums(0)?;
                    if v.len() != 1 {
                        return Err(err("scale takes 1 number".into()));
                    }
                    scale = v[0];
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing kind line".into(),
        })?;
        let rotation = match rotation.len() {
            0 => IDENTITY,
            3 => [rotation[0], rotation[1], rotation[2]],
            n => {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("rotation needs 3 rows, got {n}"),
                })
            }
        };
        let spec = Self {
            kind,
            rotation,
            translation,
            scale,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Jittered samples in `[0, 1)^2`: one per cell of the smallest square grid
/// holding `count` cells, shuffled and truncated.
fn stratified(count: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let g = (count as f64).sqrt().ceil() as usize;
    let mut cells: Vec<(f64, f64)> = (0..g * g)
        .map(|c| {
            let (i, j) = (c / g, c % g);
            (
                (i as f64 + rng.random::<f64>()) / g as f64,
                (j as f64 + rng.random::<f64>()) / g as f64,
            )
        })
        .collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    cells.truncate(count);
    cells
}

fn bump_height(a: f64, s: f64, rho2: f64) -> f64 {
    a * (-rho2 / (s * s)).exp()
}

fn normalize(v: Point3) -> Point3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Maps a stratified parameter pair to a canonical surface point and normal.
/// Returns `None` when an area-correcting rejection step discards it.
fn local_sample(kind: &SurfaceKind, u: f64, v: f64, rng: &mut ChaCha8Rng) -> Option<(Point3, Point3)> {
    match *kind {
        SurfaceKind::Plane => Some(([2.0 * u - 1.0, 2.0 * v - 1.0, 0.0], [0.0, 0.0, 1.0])),
        SurfaceKind::Sphere { radius } => {
            let z = 2.0 * u - 1.0;
            let phi = 2.0 * PI * v;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let n = [rho * phi.cos(), rho * phi.sin(), z];
            Some(([radius * n[0], radius * n[1], radius * n[2]], n))
        }
        SurfaceKind::Torus { major, minor } => {
            let phi = 2.0 * PI * u;
            let theta = torus_inverse_cdf(v, major, minor);
            let n = [theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin()];
            let ring = major + minor * theta.cos();
            Some(([ring * phi.cos(), ring * phi.sin(), minor * theta.sin()], n))
        }
        SurfaceKind::Bump { amplitude: a, width: s } => {
            let x = 2.0 * u - 1.0;
            let y = 2.0 * v - 1.0;
            let z = bump_height(a, s, x * x + y * y);
            let gx = -2.0 * x / (s * s) * z;
            let gy = -2.0 * y / (s * s) * z;
            let area = (1.0 + gx * gx + gy * gy).sqrt();
            let max_grad = a.abs() * 2f64.sqrt() / s * (-0.5f64).exp();
            let max_area = (1.0 + max_grad * max_grad).sqrt();
            if rng.random::<f64>() * max_area > area {
                return None;
            }
            Some(([x, y, z], normalize([-gx, -gy, 1.0])))
        }
    }
}

/// Tube angle with density proportional to `major + minor cos(theta)`.
fn torus_inverse_cdf(v: f64, major: f64, minor: f64) -> f64 {
    let target = 2.0 * PI * major * v;
    let mut t = 2.0 * PI * v;
    for _ in 0..50 {
        let f = major * t + minor * t.sin() - target;
        let df = major + minor * t.cos();
        let step = f / df;
        t -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    t
}

fn local_distance(kind: &SurfaceKind, y: &Point3) -> f64 {
    match *kind {
        SurfaceKind::Plane => y[2].abs(),
        SurfaceKind::Sphere { radius } => ((y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt() - radius).abs(),
        SurfaceKind::Torus { major, minor } => {
            let q = (y[0] * y[0] + y[1] * y[1]).sqrt() - major;
            ((q * q + y[2] * y[2]).sqrt() - minor).abs()
        }
        SurfaceKind::Bump { amplitude, width } => bump_distance(amplitude, width, y),
    }
}

/// Distance to a radially symmetric height field: the nearest point lies in
/// the vertical half-plane through the query, so a 1-D search over the
/// signed radius suffices.
fn bump_distance(a: f64, s: f64, y: &Point3) -> f64 {
    let rho = (y[0] * y[0] + y[1] * y[1]).sqrt();
    let h = |t: f64| bump_height(a, s, t * t);
    let d0 = (y[2] - h(rho)).abs();
    if d0 == 0.0 {
        return 0.0;
    }
    let g = |t: f64| (t - rho).powi(2) + (h(t) - y[2]).powi(2);
    let (lo, hi) = (rho - d0, rho + d0);
    let steps = 400;
    let width = (hi - lo) / steps as f64;
    let mut best = (g(rho), rho);
    for i in 0..=steps {
        let t = lo + width * i as f64;
        let v = g(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    let (mut a0, mut b0) = (best.1 - width, best.1 + width);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b0 - phi * (b0 - a0);
    let mut d = a0 + phi * (b0 - a0);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if (b0 - a0).abs() < 1e-15 {
            break;
        }
        if gc < gd {
            b0 = d;
            d = c;
            gd = gc;
            c = b0 - phi * (b0 - a0);
            gc = g(c);
        } else {
            a0 = c;
            c = d;
            gc = gd;
            d = a0 + phi * (b0 - a0);
            gd = g(d);
        }
    }
    best.0.min(gc).min(gd).sqrt()
}

/// Randomized surface parameters and placement for one dataset shape.
pub fn random_surface(name: &str, seed: u64) -> Result<SurfaceSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a7f);
    let kind = match name {
        "plane" => SurfaceKind::Plane,
        "sphere" => SurfaceKind::Sphere {
            radius: rng.random_range(0.6..1.2),
        },
        "torus" => SurfaceKind::Torus {
            major: rng.random_range(0.8..1.1),
            minor: rng.random_range(0.25..0.45),
        },
        "bump" => SurfaceKind::Bump {
            amplitude: rng.random_range(0.3..0.8),
            width: rng.random_range(0.3..0.6),
        },
        other => return Err(Error::Config(format!("unknown surface {other:?}"))),
    };
    let spec = SurfaceSpec {
        kind,
        rotation: random_rotation(&mut rng),
        translation: [0.0; 3],
        scale: 1.0,
    };
    spec.validate()?;
    Ok(spec)
}

pub const SURFACE_NAMES: [&str; 4] = ["plane", "sphere", "torus", "bump"];

/// A sparse input with independently sampled dense ground truths per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub surface: SurfaceSpec,
    pub sparse: Vec<Point3>,
    /// `(R, points, normals)` ascending in `R`.
    pub dense: Vec<(usize, Vec<Point3>, Vec<Point3>)>,
}

impl TrainingPair {
    pub fn generate(surface: SurfaceSpec, sparse_count: usize, factors: &[usize], seed: u64) -> Result<Self> {
        let (sparse, _) = surface.sample(sparse_count, seed)?;
        let mut fs = factors.to_vec();
        fs.sort_unstable();
        fs.dedup();
        let mut dense = Vec::with_capacity(fs.len());
        for (i, &r) in fs.iter().enumerate() {
            let (p, n) = surface.sample(sparse_count * r, seed.wrapping_add(1 + i as u64).wrapping_mul(0x9e37_79b9))?;
            dense.push((r, p, n));
        }
        Ok(Self { surface, sparse, dense })
    }

    pub fn dense_for(&self, r: usize) -> Option<(&[Point3], &[Point3])> {
        self.dense
            .iter()
            .find(|d| d.0 == r)
            .map(|d| (d.1.as_slice(), d.2.as_slice()))
    }
}

/// Random similarity applied identically to input and ground truth, plus
/// clipped Gaussian jitter on the input alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub rotation: Mat3,
    pub scale: f64,
    pub jitter: f64,
}

impl Augmentation {
    pub fn identity() -> Self {
        Self {
            rotation: IDENTITY,
            scale: 1.0,
            jitter: 0.0,
        }
    }

    /// Uniform rotation, scale in `[0.8, 1.25]`.
    pub fn random<R: Rng>(rng: &mut R, jitter: f64) -> Self {
        Self {
            rotation: random_rotation(rng),
            scale: rng.random_range(0.8..=1.25),
            jitter,
        }
    }

    pub fn apply_points(&self, pts: &[Point3]) -> Vec<Point3> {
        pts.iter()
            .map(|p| {
                let r = mat_vec(&self.rotation, p);
                [self.scale * r[0], self.scale * r[1], self.scale * r[2]]
            })
            .collect()
    }

    pub fn apply_normals(&self, normals: &[Point3]) -> Vec<Point3> {
        normals.iter().map(|n| mat_vec(&self.rotation, n)).collect()
    }

    /// Transforms `sparse` and jitters it, each offset component clipped at 3 sigma.
    pub fn apply_input<R: Rng>(&self, sparse: &[Point3], rng: &mut R) -> Vec<Point3> {
        let mut out = self.apply_points(sparse);
        if self.jitter > 0.0 {
            let normal = Normal::new(0.0, self.jitter).expect("positive jitter");
            let clip = 3.0 * self.jitter;
            for p in out.iter_mut() {
                for c in p.iter_mut() {
                    let e: f64 = normal.sample(rng);
                    *c += e.clamp(-clip, clip);
                }
            }
        }
        out
    }
}

/// Applies `aug` to a whole pair; the surface spec follows the transform.
pub fn augment(pair: &TrainingPair, aug: &Augmentation, seed: u64) -> TrainingPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrainingPair {
        surface: pair.surface.transformed(&aug.rotation, aug.scale, &[0.0; 3]),
        sparse: aug.apply_input(&pair.sparse, &mut rng),
        dense: pair
            .dense
            .iter()
            .map(|(r, p, n)| (*r, aug.apply_points(p), aug.apply_normals(n)))
            .collect(),
    }
}

/// Adds isotropic Gaussian noise with standard deviation `level`.
pub fn add_noise(points: &[Point3], level: f64, seed: u64) -> Result<Vec<Point3>> {
    if !(level >= 0.0 && level.is_finite()) {
        return range_err(format!("noise level {level} must be >= 0"));
    }
    if level == 0.0 {
        return Ok(points.to_vec());
    }
    let normal = Normal::new(0.0, level).expect("positive level");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(points
        .iter()
        .map(|p| {
            [
                p[0] + normal.sample(&mut rng),
                p[1] + normal.sample(&mut rng),
                p[2] + normal.sample(&mut rng),
            ]
        })
        .collect())
}

/// Biased subsample of `count` points, inclusion weight `exp(b u)` where `u`
/// is the first coordinate rescaled to `[0, 1]`.
pub fn nonuniform_subsample(points: &[Point3], count: usize, bias: f64, seed: u64) -> Result<Vec<Point3>> {
    if count == 0 || count > points.len() {
        return range_err(format!("cannot draw {count} of {} points", points.len()));
    }
    let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Weighted sampling without replacement via exponential keys.
    let mut keys: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let w = (bias * (p[0] - lo) / span).exp();
            let e: f64 = rng.random::<f64>();
            (-(1.0 - e).ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keys[..count].iter().map(|k| k.1).collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| points[i]).collect())
}

/// Where a shape instance lives under a dataset root.
pub fn shape_dir(root: &Path, surface: &str, seed: u64) -> PathBuf {
    root.join(surface).join(seed.to_string())
}

/// Options of [`write_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub surfaces: Vec<String>,
    pub shapes_per_surface: usize,
    pub sparse_count: usize,
    pub factors: Vec<usize>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            surfaces: vec!["bump".into(), "sphere".into(), "torus".into()],
            shapes_per_surface: 4,
            sparse_count: 512,
            factors: vec![2, 4, 8],
            seed: 0,
        }
    }
}

/// Writes `<root>/<surface>/<seed>/{sparse.xyz, dense_R<k>.xyz, surface.txt}`
/// and returns the shape directories in order.
pub fn write_dataset(root: &Path, spec: &DatasetSpec) -> Result<Vec<PathBuf>> {
    if spec.factors.is_empty() || spec.factors.contains(&0) {
        return Err(Error::Config("dataset factors must be non-empty and positive".into()));
    }
    let mut dirs = Vec::new();
    for (si, name) in spec.surfaces.iter().enumerate() {
        for k in 0..spec.shapes_per_surface {
            let shape_seed = spec.seed.wrapping_mul(1000).wrapping_add((si * 100 + k) as u64);
            let surface = random_surface(name, shape_seed)?;
            let pair = TrainingPair::generate(surface, spec.sparse_count, &spec.factors, shape_seed)?;
            let dir = shape_dir(root, name, shape_seed);
            fs::create_dir_all(&dir)?;
            xyz::write(dir.join("sparse.xyz"), &pair.sparse, None)?;
            for (r, p, n) in &pair.dense {
                xyz::write(dir.join(format!("dense_R{r}.xyz")), p, Some(n))?;
            }
            let mut f = fs::File::create(dir.join("surface.txt"))?;
            write!(f, "{surface}")?;
            dirs.push(dir);
        }
    }
    Ok(dirs)
}

/// Reads every shape directory under `root` (sorted), with all dense factors present.
pub fn read_dataset(root: &Path) -> Result<Vec<TrainingPair>> {
    let mut dirs = Vec::new();
    let mut surfaces: Vec<_> = fs::read_dir(root)?.collect::<std::io::Result<Vec<_>>>()?;
    surfaces.sort_by_key(|e| e.file_name());
    for s in surfaces {
        if !s.file_type()?.is_dir() {
            continue;
        }
        let mut shapes: Vec<_> = fs::read_dir(s.path())?.collect::<std::io::Result<Vec<_>>>()?;
        shapes.sort_by_key(|e| e.file_name());
        for d in shapes {
            if d.path().join("sparse.xyz").is_file() {
                dirs.push(d.path());
            }
        }
    }
    if dirs.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no shapes found under {}", root.display()),
        )));
    }
    dirs.iter().map(|d| read_shape(d)).collect()
}

pub fn read_shape(dir: &Path) -> Result<TrainingPair> {
    let surface: SurfaceSpec = fs::read_to_string(dir.join("surface.txt"))?.parse()?;
    let sparse = SparseCloud::new(xyz::read(dir.join("sparse.xyz"))?.points)?.into_parts().0;
    let mut dense = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        let Some(r) = name
            .strip_prefix("dense_R")
            .and_then(|s| s.strip_suffix(".xyz"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        let data = xyz::read(e.path())?;
        let normals = data.normals.ok_or_else(|| {
            Error::Contract(format!("{} has no normals", e.path().display()))
        })?;
        let cloud = SparseCloud::with_normals(data.points, normals)?;
        let (p, n) = cloud.into_parts();
        dense.push((r, p, n.unwrap_or_default()));
    }
    dense.sort_by_key(|d| d.0);
    Ok(TrainingPair { surface, sparse, dense })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn all_specs() -> Vec<SurfaceSpec> {
        ["plane", "sphere", "torus", "bump"]
            .iter()
            .map(|n| random_surface(n, 7).unwrap())
            .collect()
    }

    fn canonical_bump() -> SurfaceSpec {
        SurfaceSpec::canonical(SurfaceKind::Bump { amplitude: 0.6, width: 0.45 }).unwrap()
    }

    #[test]
    fn sampled_points_lie_on_surfaces() {
        for spec in all_specs() {
            let (p, n) = spec.sample(500, 3).unwrap();
            assert_eq!(p.len(), 500);
            for (x, nn) in p.iter().zip(&n) {
                assert!(spec.distance(x) < 1e-9, "{spec:?}");
                let len = (nn[0] * nn[0] + nn[1] * nn[1] + nn[2] * nn[2]).sqrt();
                assert!((len - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn canonical_examples() {
        let s = SurfaceSpec::canonical(SurfaceKind::Sphere { radius: 0.7 }).unwrap();
        for p in s.sample(300, 1).unwrap().0 {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 0.7).abs() < 1e-12);
        }
        let plane = SurfaceSpec::canonical(SurfaceKind::Plane).unwrap();
        assert!(plane.sample(50, 1).unwrap().1.iter().all(|n| *n == [0.0, 0.0, 1.0]));
        let b = canonical_bump();
        for p in b.sample(300, 1).unwrap().0 {
            let z = 0.6 * (-(p[0] * p[0] + p[1] * p[1]) / (0.45 * 0.45)).exp();
            assert!((p[2] - z).abs() < 1e-12);
        }
        let unit = SurfaceSpec::canonical(SurfaceKind::Sphere { radius: 1.0 }).unwrap();
        assert!((unit.distance(&[1.5, 0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!(SurfaceSpec::canonical(SurfaceKind::Torus { major: 0.2, minor: 0.5 }).is_err());
    }

    #[test]
    fn bump_distance_matches_grid_oracle() {
        let b = canonical_bump();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let q = [
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-0.5..1.0),
            ];
            let fast = b.distance(&q);
            let slow = oracle::height_field_distance(&q, |x, y| 0.6 * (-(x * x + y * y) / 0.2025).exp());
            assert!((fast - slow).abs() < 1e-6, "{q:?}: {fast} vs {slow}");
        }
    }

    #[test]
    fn torus_sampling_is_area_uniform() {
        // Fraction of samples on the outer half (cos theta > 0) equals
        // (pi R + 2 r) / (2 pi R).
        let (major, minor) = (1.0, 0.4);
        let s = SurfaceSpec::canonical(SurfaceKind::Torus { major, minor }).unwrap();
        let (p, _) = s.sample(40_000, 2).unwrap();
        let outer = p.iter().filter(|x| (x[0] * x[0] + x[1] * x[1]).sqrt() > major).count();
        let want = (PI * major + 2.0 * minor) / (2.0 * PI * major);
        assert!((outer as f64 / p.len() as f64 - want).abs() < 0.01);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = random_surface("torus", 3).unwrap();
        assert_eq!(s.sample(100, 9).unwrap(), s.sample(100, 9).unwrap());
        assert_ne!(s.sample(100, 9).unwrap(), s.sample(100, 10).unwrap());
    }

    #[test]
    fn spec_text_round_trip() {
        for spec in all_specs() {
            let text = spec.to_string();
            let back: SurfaceSpec = text.parse().unwrap();
            assert_eq!(spec, back);
        }
        assert!("kind cube".parse::<SurfaceSpec>().is_err());
        assert!(matches!(
            "kind sphere 1\nscale x".parse::<SurfaceSpec>(),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn augmentation_identity_and_consistency() {
        let spec = random_surface("bump", 1).unwrap();
        let pair = TrainingPair::generate(spec, 64, &[2, 4], 5).unwrap();
        assert_eq!(augment(&pair, &Augmentation::identity(), 3), pair);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let aug = Augmentation::random(&mut rng, 0.0);
        let out = augment(&pair, &aug, 3);
        for (_, p, n) in &out.dense {
            for (x, nn) in p.iter().zip(n) {
                assert!(out.surface.distance(x) < 1e-9);
                let len = (nn[0] * nn[0] + nn[1] * nn[1] + nn[2] * nn[2]).sqrt();
                assert!((len - 1.0).abs() < 1e-12);
            }
        }
        let (gt, _) = pair.dense_for(4).unwrap();
        let (gt2, _) = out.dense_for(4).unwrap();
        let before = crate::losses::chamfer(&pair.sparse, gt).unwrap();
        let after = crate::losses::chamfer(&out.sparse, gt2).unwrap();
        assert!((after - aug.scale * before).abs() < 1e-9);

        let rigid = Augmentation { scale: 1.0, ..aug };
        let moved = augment(&pair, &rigid, 3);
        let after = crate::losses::chamfer(&moved.sparse, moved.dense_for(4).unwrap().0).unwrap();
        assert!((after - before).abs() < 1e-9);
    }

    #[test]
    fn jitter_is_clipped_and_input_only() {
        let spec = random_surface("sphere", 2).unwrap();
        let pair = TrainingPair::generate(spec, 200, &[2], 1).unwrap();
        let aug = Augmentation { jitter: 0.005, ..Augmentation::identity() };
        let out = augment(&pair, &aug, 8);
        assert_eq!(out.dense, pair.dense);
        let mut moved = false;
        for (a, b) in pair.sparse.iter().zip(&out.sparse) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() <= 0.015 + 1e-15);
                moved |= a[d] != b[d];
            }
        }
        assert!(moved);
    }

    #[test]
    fn rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let rtr = mat_mul(&[[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]], &r);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((rtr[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noise_examples() {
        let pts: Vec<Point3> = vec![[0.1, 0.2, 0.3]; 10];
        assert_eq!(add_noise(&pts, 0.0, 1).unwrap(), pts);
        assert!(matches!(add_noise(&pts, -0.1, 1), Err(Error::Range(_))));
    }

    #[test]
    fn noise_displacement_matches_monte_carlo() {
        // The norm of an isotropic 3-D Gaussian offset is Maxwell distributed;
        // compare against an independent Box-Muller simulation.
        let sigma = 0.025;
        let n = 1_000_000;
        let zeros = vec![[0.0; 3]; n];
        let noisy = add_noise(&zeros, sigma, 42).unwrap();
        let mean = noisy.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).sum::<f64>() / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut box_muller = || {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos() * sigma
        };
        let sim = (0..n)
            .map(|_| {
                let v = [box_muller(), box_muller(), box_muller()];
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - sim).abs() / sim < 0.01, "{mean} vs {sim}");
    }

    #[test]
    fn nonuniform_subsample_prefers_high_u() {
        let pts: Vec<Point3> = (0..2000).map(|i| [i as f64 / 1999.0, 0.0, 0.0]).collect();
        let sub = nonuniform_subsample(&pts, 400, 3.0, 1).unwrap();
        assert_eq!(sub.len(), 400);
        let right = sub.iter().filter(|p| p[0] > 0.5).count();
        assert!(right > 280, "{right}");
        assert!(nonuniform_subsample(&pts, 2001, 1.0, 1).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            surfaces: vec!["bump".into(), "sphere".into()],
            shapes_per_surface: 2,
            sparse_count: 40,
            factors: vec![2, 3],
            seed: 5,
        };
        let dirs = write_dataset(dir.path(), &spec).unwrap();
        assert_eq!(dirs.len(), 4);
        assert!(dirs[0].join("dense_R3.xyz").is_file());
        let pairs = read_dataset(dir.path()).unwrap();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            assert_eq!(p.sparse.len(), 40);
            assert_eq!(p.dense_for(3).unwrap().0.len(), 120);
            for x in p.dense_for(2).unwrap().0 {
                assert!(p.surface.distance(x) < 1e-9);
            }
        }
        let again = tempfile::tempdir().unwrap();
        write_dataset(again.path(), &spec).unwrap();
        for d in &dirs {
            let rel = d.strip_prefix(dir.path()).unwrap();
            for f in ["sparse.xyz", "dense_R2.xyz", "surface.txt"] {
                assert_eq!(fs::read(d.join(f)).unwrap(), fs::read(again.path().join(rel).join(f)).unwrap());
            }
        }
    }
}

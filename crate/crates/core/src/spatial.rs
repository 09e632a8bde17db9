//! Spatial queries: farthest point sampling, K nearest neighbors, nearest
//! point and fixed-radius ball queries.
//!
//! All queries order candidates by `(squared distance, index)`, so results
//! are deterministic and the grid-accelerated paths select exactly the same
//! index sets as a brute-force scan.

use crate::error::{range_err, Result};
use crate::{dist2, Point3};

/// Clouds at or below this size are scanned directly.
const BRUTE_FORCE_LIMIT: usize = 48;

/// Per-point neighbor lists: row `i` starts with `i` itself, followed by the
/// `k - 1` nearest other points in ascending `(distance, index)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    k: usize,
}

impl NeighborIndex {
    pub fn from_rows(indices: Vec<usize>, k: usize) -> Self {
        debug_assert!(k > 0 && indices.len().is_multiple_of(k));
        Self { indices, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Row-major flattened `rows x k` indices.
    pub fn flat(&self) -> &[usize] {
        &self.indices
    }
}

/// Uniform bucket grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct SpatialGrid<'a> {
    points: &'a [Point3],
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    /// `starts[c]..starts[c + 1]` indexes `order` for cell `c`.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> SpatialGrid<'a> {
    /// Builds a grid with roughly `per_cell` points per occupied cell.
    pub fn new(points: &'a [Point3]) -> Self {
        Self::with_density(points, 2.0)
    }

    pub fn with_density(points: &'a [Point3], per_cell: f64) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let extent: Vec<f64> = (0..3).map(|d| hi[d] - lo[d]).collect();
        let max_extent = extent.iter().cloned().fold(0.0, f64::max);
        let n = points.len().max(1) as f64;
        // Use the two largest extents as a surface-area proxy: most clouds here
        // sample 2-manifolds, so points per cell scales with area, not volume.
        let mut sorted = extent.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let area = (sorted[0] * sorted[1]).max(max_extent * max_extent * 1e-6);
        let mut cell = (area * per_cell / n).sqrt();
        if !(cell > 0.0) || !cell.is_finite() {
            cell = if max_extent > 0.0 { max_extent } else { 1.0 };
        }
        let mut dims = [1usize; 3];
        for d in 0..3 {
            dims[d] = ((extent[d] / cell).floor() as usize + 1).min(1 << 10);
        }
        // Guard against pathological cell counts.
        while dims.iter().product::<usize>() > 8 * points.len().max(8) {
            cell *= 1.5;
            for d in 0..3 {
                dims[d] = ((extent[d] / cell).floor() as usize + 1).min(1 << 10);
            }
        }
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let ncells = dims.iter().product::<usize>();
        let mut counts = vec![0usize; ncells + 1];
        let cell_of: Vec<usize> = points.iter().map(|p| grid.cell_index(p)).collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for c in 0..ncells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    fn coord(&self, p: &Point3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for d in 0..3 {
            let v = ((p[d] - self.origin[d]) / self.cell).floor();
            c[d] = if v <= 0.0 {
                0
            } else {
                (v as usize).min(self.dims[d] - 1)
            };
        }
        c
    }

    fn cell_index(&self, p: &Point3) -> usize {
        let c = self.coord(p);
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    fn cell_points(&self, c: [usize; 3]) -> &[usize] {
        let idx = (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2];
        &self.order[self.starts[idx]..self.starts[idx + 1]]
    }

    /// Visits every cell at Chebyshev ring distance exactly `ring` from `center`.
    fn for_ring(&self, center: [usize; 3], ring: usize, mut f: impl FnMut(&[usize])) {
        let r = ring as isize;
        let c = [center[0] as isize, center[1] as isize, center[2] as isize];
        let dims = [self.dims[0] as isize, self.dims[1] as isize, self.dims[2] as isize];
        for x in (c[0] - r).max(0)..=(c[0] + r).min(dims[0] - 1) {
            let edge_x = (x - c[0]).abs() == r;
            for y in (c[1] - r).max(0)..=(c[1] + r).min(dims[1] - 1) {
                let edge_y = edge_x || (y - c[1]).abs() == r;
                if edge_y {
                    for z in (c[2] - r).max(0)..=(c[2] + r).min(dims[2] - 1) {
                        f(self.cell_points([x as usize, y as usize, z as usize]));
                    }
                } else {
                    for z in [c[2] - r, c[2] + r] {
                        if z >= 0 && z < dims[2] {
                            f(self.cell_points([x as usize, y as usize, z as usize]));
                        }
                    }
                }
            }
        }
    }

    fn max_ring(&self) -> usize {
        *self.dims.iter().max().unwrap()
    }

    /// Lower bound on the distance from `q` to any point in a cell at ring
    /// `ring + 1` or beyond.
    fn ring_bound(&self, q: &Point3, center: [usize; 3], ring: usize) -> f64 {
        let mut bound = f64::INFINITY;
        for d in 0..3 {
            let lo = self.origin[d] + (center[d] as f64 - ring as f64) * self.cell;
            let hi = self.origin[d] + (center[d] as f64 + ring as f64 + 1.0) * self.cell;
            // Cells beyond the grid edge are empty and do not bound anything.
            if center[d] > ring {
                bound = bound.min(q[d] - lo);
            }
            if center[d] + ring + 1 < self.dims[d] {
                bound = bound.min(hi - q[d]);
            }
        }
        bound.max(0.0)
    }

    /// The `k` smallest `(squared distance, index)` pairs to `q`, excluding
    /// `skip` when given.
    pub fn k_nearest(&self, q: &Point3, k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return best;
        }
        let center = self.coord(q);
        for ring in 0..=self.max_ring() {
            self.for_ring(center, ring, |ids| {
                for &j in ids {
                    if Some(j) == skip {
                        continue;
                    }
                    let cand = (dist2(q, &self.points[j]), j);
                    insert_bounded(&mut best, cand, k);
                }
            });
            if best.len() == k {
                let b = self.ring_bound(q, center, ring);
                if best[k - 1].0 < b * b {
                    break;
                }
            }
        }
        best
    }

    /// Indices of all points with squared distance `<= radius^2`, ascending.
    pub fn within(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let center = self.coord(q);
        let mut out = Vec::new();
        for ring in 0..=self.max_ring() {
            self.for_ring(center, ring, |ids| {
                for &j in ids {
                    if dist2(q, &self.points[j]) <= r2 {
                        out.push(j);
                    }
                }
            });
            if self.ring_bound(q, center, ring) > radius {
                break;
            }
        }
        out.sort_unstable();
        out
    }
}

fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn insert_bounded(best: &mut Vec<(f64, usize)>, cand: (f64, usize), k: usize) {
    if k == 0 {
        return;
    }
    if best.len() == k && !lex_less(cand, best[k - 1]) {
        return;
    }
    let pos = best.partition_point(|&e| lex_less(e, cand));
    best.insert(pos, cand);
    if best.len() > k {
        best.pop();
    }
}

/// Greedy max-min subset selection starting at `seed`. Ties go to the
/// smallest index.
pub fn farthest_point_sample(points: &[Point3], m: usize, seed: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return range_err(format!("cannot sample {m} of {n} points"));
    }
    if seed >= n {
        return range_err(format!("seed index {seed} out of range for {n} points"));
    }
    let mut selected = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(m);
    let mut current = seed;
    loop {
        out.push(current);
        selected[current] = true;
        if out.len() == m {
            break;
        }
        let c = points[current];
        let mut next = usize::MAX;
        let mut next_d = f64::NEG_INFINITY;
        for j in 0..n {
            if selected[j] {
                continue;
            }
            let d = dist2(&points[j], &c);
            if d < min_d2[j] {
                min_d2[j] = d;
            }
            if min_d2[j] > next_d {
                next_d = min_d2[j];
                next = j;
            }
        }
        current = next;
    }
    Ok(out)
}

/// K nearest neighbors of every point, self first.
pub fn knn(points: &[Point3], k: usize) -> Result<NeighborIndex> {
    let n = points.len();
    if k == 0 || k > n {
        return range_err(format!("K = {k} neighbors requested from {n} points"));
    }
    let mut indices = Vec::with_capacity(n * k);
    if n <= BRUTE_FORCE_LIMIT {
        for i in 0..n {
            indices.extend(knn_row_scan(points, i, k));
        }
    } else {
        let grid = SpatialGrid::new(points);
        for i in 0..n {
            indices.push(i);
            indices.extend(grid.k_nearest(&points[i], k - 1, Some(i)).iter().map(|e| e.1));
        }
    }
    Ok(NeighborIndex::from_rows(indices, k))
}

/// The `k` nearest points to `points[i]` (self first) by direct scan.
pub fn knn_row_scan(points: &[Point3], i: usize, k: usize) -> Vec<usize> {
    let mut best = Vec::with_capacity(k);
    for (j, p) in points.iter().enumerate() {
        if j != i {
            insert_bounded(&mut best, (dist2(&points[i], p), j), k - 1);
        }
    }
    std::iter::once(i).chain(best.into_iter().map(|e| e.1)).collect()
}

/// K nearest neighbors in an arbitrary-width feature space, self first.
/// `features` is row-major `n x width`.
pub fn knn_features(features: &[f64], width: usize, k: usize) -> Result<NeighborIndex> {
    let n = if width == 0 { 0 } else { features.len() / width };
    if k == 0 || k > n {
        return range_err(format!("K = {k} neighbors requested from {n} feature rows"));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut best = Vec::with_capacity(k);
    for i in 0..n {
        best.clear();
        let fi = &features[i * width..(i + 1) * width];
        for j in 0..n {
            if j == i {
                continue;
            }
            let fj = &features[j * width..(j + 1) * width];
            let d: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
            insert_bounded(&mut best, (d, j), k - 1);
        }
        indices.push(i);
        indices.extend(best.iter().map(|e| e.1));
    }
    Ok(NeighborIndex::from_rows(indices, k))
}

/// For each query, the index of and squared distance to its nearest target.
pub fn nearest_in(queries: &[Point3], targets: &[Point3]) -> Vec<(usize, f64)> {
    if targets.len() <= BRUTE_FORCE_LIMIT {
        return queries
            .iter()
            .map(|q| {
                let mut best = (f64::INFINITY, usize::MAX);
                for (j, t) in targets.iter().enumerate() {
                    let d = dist2(q, t);
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                (best.1, best.0)
            })
            .collect();
    }
    let grid = SpatialGrid::new(targets);
    queries
        .iter()
        .map(|q| {
            let b = grid.k_nearest(q, 1, None)[0];
            (b.1, b.0)
        })
        .collect()
}

/// Indices of `points` inside the closed ball of `radius` around each center.
pub fn ball_query(points: &[Point3], centers: &[Point3], radius: f64) -> Vec<Vec<usize>> {
    let grid = SpatialGrid::new(points);
    centers.iter().map(|c| grid.within(c, radius)).collect()
}

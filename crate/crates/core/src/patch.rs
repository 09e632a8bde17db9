//! Patch extraction for patch-wise upsampling and the FPS-based merge back to
//! a cloud of exactly `M * R` points.

use crate::cloud::DenseCloud;
use crate::error::{range_err, Result};
use crate::spatial::{farthest_point_sample, SpatialGrid};
use crate::Point3;

/// Overlapping `N`-point patches covering a cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    pub anchors: Vec<usize>,
    pub patches: Vec<Vec<usize>>,
    pub patch_size: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Default number of FPS anchors for a cloud of `m` points: `ceil(2M / N)`.
pub fn default_coverage(m: usize, patch_size: usize) -> usize {
    (2 * m).div_ceil(patch_size.max(1)).max(1)
}

/// FPS anchors (seed 0), each expanded to its `patch_size` nearest points.
/// Points left uncovered get extra anchors, smallest index first.
pub fn extract_patches(points: &[Point3], patch_size: usize, coverage: usize) -> Result<PatchSet> {
    let m = points.len();
    if patch_size == 0 || patch_size > m {
        return range_err(format!("patch size {patch_size} for a cloud of {m} points"));
    }
    let coverage = coverage.clamp(1, m);
    let mut anchors = farthest_point_sample(points, coverage, 0)?;
    let grid = SpatialGrid::new(points);
    let patch_of = |a: usize| -> Vec<usize> {
        std::iter::once(a)
            .chain(grid.k_nearest(&points[a], patch_size - 1, Some(a)).into_iter().map(|e| e.1))
            .collect()
    };
    let mut covered = vec![false; m];
    let mut patches = Vec::with_capacity(anchors.len());
    for &a in &anchors {
        let p = patch_of(a);
        for &j in &p {
            covered[j] = true;
        }
        patches.push(p);
    }
    let mut next = 0;
    while let Some(u) = (next..m).find(|&j| !covered[j]) {
        let p = patch_of(u);
        for &j in &p {
            covered[j] = true;
        }
        anchors.push(u);
        patches.push(p);
        next = u + 1;
    }
    Ok(PatchSet {
        anchors,
        patches,
        patch_size,
    })
}

/// Concatenates upsampled patches (already mapped back to cloud coordinates)
/// and reduces them to exactly `target` points by FPS from index 0.
pub fn merge_patches(patches: &[Vec<Point3>], target: usize) -> Result<DenseCloud> {
    let all: Vec<Point3> = patches.iter().flatten().copied().collect();
    if target == 0 || all.len() < target {
        return range_err(format!(
            "merging {} points into {target}: not enough points",
            all.len()
        ));
    }
    let keep = farthest_point_sample(&all, target, 0)?;
    let mut owner = Vec::with_capacity(all.len());
    for (p, patch) in patches.iter().enumerate() {
        owner.extend((0..patch.len()).map(|j| (p, j)));
    }
    Ok(DenseCloud {
        points: keep.iter().map(|&i| all[i]).collect(),
        provenance: Some(keep.iter().map(|&i| owner[i]).collect()),
    })
}

//! Rigid-motion segmentation of point trajectories and mask utilities.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::geom::{kabsch_fit, PointCloud, RigidTransform, Vec3};
use crate::rng::SplitMix64;

/// Integer part label per point; labels are `0..count`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardLabels {
    pub labels: Vec<usize>,
    pub count: usize,
}

impl HardLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        let count = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
        Self { labels, count }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn members(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Soft part masks, one row per part, with one root point per part.
#[derive(Clone, Debug, PartialEq)]
pub struct PartMasks {
    pub masks: Vec<Vec<f64>>,
    pub roots: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub max_parts: usize,
    pub inlier_eps: f64,
    pub hypotheses: usize,
    pub min_size: usize,
    /// Inlier re-fits after a winning hypothesis.
    pub refine_rounds: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_parts: 8,
            inlier_eps: 0.02,
            hypotheses: 256,
            min_size: 20,
            refine_rounds: 2,
        }
    }
}

/// Group points whose trajectories share a rigid motion (sequential RANSAC).
/// `trajectories[i][t]` is point `i` in frame `t`; frame 0 must equal `cloud`.
pub fn cluster_rigid_motions(
    cloud: &PointCloud,
    trajectories: &[Vec<Vec3>],
    params: &RansacParams,
    seed: u64,
) -> Result<HardLabels> {
    let n = cloud.len();
    if trajectories.len() != n {
        return Err(Error::Size(format!("{} trajectories for {n} points", trajectories.len())));
    }
    let frames = trajectories.first().map_or(0, |t| t.len());
    if frames == 0 || trajectories.iter().any(|t| t.len() != frames) {
        return Err(Error::Size("trajectories must share a non-zero length".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut motions: Vec<Vec<RigidTransform>> = Vec::new();

    while motions.len() < params.max_parts {
        let free: Vec<usize> = (0..n).filter(|&i| assigned[i].is_none()).collect();
        if free.len() < 3 {
            break;
        }
        let mut best: Option<(Vec<usize>, Vec<RigidTransform>)> = None;
        for _ in 0..params.hypotheses {
            let a = free[rng.below(free.len())];
            let b = free[rng.below(free.len())];
            let c = free[rng.below(free.len())];
            if a == b || b == c || a == c {
                continue;
            }
            let Some(motion) = fit_motion(trajectories, &[a, b, c], frames) else {
                continue;
            };
            let inliers: Vec<usize> = free
                .iter()
                .copied()
                .filter(|&i| residual(&motion, &trajectories[i]) <= params.inlier_eps)
                .collect();
            if best.as_ref().map_or(true, |b| inliers.len() > b.0.len()) {
                let done = inliers.len() == free.len();
                best = Some((inliers, motion));
                if done {
                    break;
                }
            }
        }
        let Some((mut inliers, mut motion)) = best else { break };
        for _ in 0..params.refine_rounds {
            let Some(m) = fit_motion(trajectories, &inliers, frames) else { break };
            let refit: Vec<usize> = free
                .iter()
                .copied()
                .filter(|&i| residual(&m, &trajectories[i]) <= params.inlier_eps)
                .collect();
            if refit.len() < inliers.len() {
                break;
            }
            inliers = refit;
            motion = m;
        }
        if inliers.len() < params.min_size.max(1) {
            break;
        }
        let label = motions.len();
        for &i in &inliers {
            assigned[i] = Some(label);
        }
        motions.push(motion);
    }

    if motions.is_empty() {
        return Ok(HardLabels::new(vec![0; n]));
    }
    let labels = (0..n)
        .map(|i| {
            assigned[i].unwrap_or_else(|| {
                let mut best = 0;
                let mut best_r = f64::INFINITY;
                for (k, m) in motions.iter().enumerate() {
                    let r = residual(m, &trajectories[i]);
                    if r < best_r {
                        best_r = r;
                        best = k;
                    }
                }
                best
            })
        })
        .collect();
    Ok(HardLabels {
        labels,
        count: motions.len(),
    })
}

fn fit_motion(traj: &[Vec<Vec3>], idx: &[usize], frames: usize) -> Option<Vec<RigidTransform>> {
    let src: Vec<Vec3> = idx.iter().map(|&i| traj[i][0]).collect();
    let mut out = Vec::with_capacity(frames);
    out.push(RigidTransform::identity());
    for t in 1..frames {
        let dst: Vec<Vec3> = idx.iter().map(|&i| traj[i][t]).collect();
        out.push(kabsch_fit(&src, &dst).ok()?);
    }
    Some(out)
}

/// RMS distance between a trajectory and the motion applied to its first point.
fn residual(motion: &[RigidTransform], traj: &[Vec3]) -> f64 {
    let p0 = traj[0];
    let mut s = 0.0;
    for (m, p) in motion.iter().zip(traj).skip(1) {
        s += (m.apply(&p0) - p).norm_squared();
    }
    (s / (traj.len().max(2) - 1) as f64).sqrt()
}

/// One-hot masks from hard labels. `roots[l]` must carry label `l`.
pub fn to_soft_masks(labels: &HardLabels, roots: &[usize]) -> Result<PartMasks> {
    let l = labels.count;
    if roots.len() != l {
        return Err(Error::RootConsistency(format!("{} roots for {l} parts", roots.len())));
    }
    for (part, &r) in roots.iter().enumerate() {
        match labels.labels.get(r) {
            Some(&got) if got == part => {}
            Some(&got) => {
                return Err(Error::RootConsistency(format!(
                    "root {r} of part {part} carries label {got}"
                )))
            }
            None => return Err(Error::RootConsistency(format!("root {r} out of range"))),
        }
    }
    let n = labels.len();
    let mut masks = vec![vec![0.0; n]; l];
    for (i, &lab) in labels.labels.iter().enumerate() {
        masks[lab][i] = 1.0;
    }
    Ok(PartMasks {
        masks,
        roots: roots.to_vec(),
    })
}

/// Soft IoU `<a,b> / (|a|_1 + |b|_1 - <a,b>)`, with 0/0 taken as 1.
pub fn relaxed_iou(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Size(format!("mask lengths {} and {}", a.len(), b.len())));
    }
    let mut inter = 0.0;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("mask entry outside [0,1]: {x}, {y}")));
        }
        inter += x * y;
        sa += x;
        sb += y;
    }
    let union = sa + sb - inter;
    if union <= 0.0 {
        return Ok(1.0);
    }
    Ok(inter / union)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatching {
    /// Truth index matched to each predicted mask, if any.
    pub mapping: Vec<Option<usize>>,
    /// Mean IoU over pairs of real (non-padding) masks.
    pub mean_iou: f64,
}

/// Maximum-IoU one-to-one matching; the smaller side is padded with empty masks.
pub fn match_masks(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<MaskMatching> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::EmptySet("no masks to match".into()));
    }
    let n = pred[0].len();
    let size = pred.len().max(truth.len());
    let empty = vec![0.0; n];
    let get = |v: &[Vec<f64>], i: usize| -> Vec<f64> { v.get(i).cloned().unwrap_or_else(|| empty.clone()) };
    let mut iou = vec![vec![0.0; size]; size];
    for (i, row) in iou.iter_mut().enumerate() {
        let a = get(pred, i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = relaxed_iou(&a, &get(truth, j))?;
        }
    }
    let cost = CostMatrix::from_fn(size, |i, j| 1.0 - iou[i][j])?;
    let a = solve_assignment(&cost)?;
    let mut mapping = vec![None; pred.len()];
    let mut sum = 0.0;
    let mut count = 0;
    for (i, m) in mapping.iter_mut().enumerate() {
        let j = a.row_to_col[i];
        if j < truth.len() {
            *m = Some(j);
            sum += iou[i][j];
            count += 1;
        }
    }
    Ok(MaskMatching {
        mapping,
        mean_iou: sum / count.max(1) as f64,
    })
}

/// Indices sharing the label of `root`.
pub fn part_of_root(labels: &HardLabels, root: usize) -> Result<Vec<usize>> {
    let Some(&l) = labels.labels.get(root) else {
        return Err(Error::Reference(format!("root {root} out of range for {} points", labels.len())));
    };
    Ok(labels.members(l))
}

/// Label file rows: `idx,label`.
pub fn write_labels_csv(path: &Path, labels: &HardLabels) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    w.write_record(["idx", "label"]).map_err(|e| Error::format(path, e))?;
    for (i, l) in labels.labels.iter().enumerate() {
        w.write_record(&[i.to_string(), l.to_string()])
            .map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<HardLabels> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let p = |k: usize| {
            rec.get(k)
                .ok_or_else(|| Error::format(path, "missing column"))?
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::format(path, e))
        };
        rows.push((p(0)?, p(1)?));
    }
    rows.sort_unstable();
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::format(path, "label indices must cover 0..n exactly once"));
    }
    Ok(HardLabels::new(rows.into_iter().map(|r| r.1).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rotation_about;
    use proptest::prelude::*;

    fn two_part_scene(seed: u64, n_each: usize) -> (PointCloud, Vec<Vec<Vec3>>, Vec<usize>) {
        let mut rng = SplitMix64::new(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for part in 0..2 {
            for _ in 0..n_each {
                pts.push(Vec3::new(
                    rng.uniform(0.0, 0.5) + part as f64,
                    rng.uniform(0.0, 0.5),
                    rng.uniform(0.0, 0.5),
                ));
                truth.push(part);
            }
        }
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let traj = pts
            .iter()
            .zip(&truth)
            .map(|(p, &part)| {
                (0..6)
                    .map(|t| {
                        if part == 0 {
                            *p
                        } else {
                            let r = rotation_about(Vec3::z(), 0.15 * t as f64);
                            r * (p - Vec3::new(1.0, 0.0, 0.0)) + Vec3::new(1.0, 0.0, 0.0)
                        }
                    })
                    .collect()
            })
            .collect();
        (cloud, traj, truth)
    }

    #[test]
    fn separates_static_and_hinged_parts() {
        let (cloud, traj, truth) = two_part_scene(3, 60);
        let labels = cluster_rigid_motions(&cloud, &traj, &RansacParams::default(), 1).unwrap();
        assert_eq!(labels.count, 2);
        let masks = |l: &[usize], k: usize| -> Vec<Vec<f64>> {
            (0..k).map(|p| l.iter().map(|&x| (x == p) as u8 as f64).collect()).collect()
        };
        let m = match_masks(&masks(&labels.labels, 2), &masks(&truth, 2)).unwrap();
        assert!(m.mean_iou > 0.99);
    }

    #[test]
    fn static_scene_is_one_cluster() {
        let (cloud, traj, _) = two_part_scene(4, 40);
        let still: Vec<Vec<Vec3>> = traj.iter().map(|t| vec![t[0]; t.len()]).collect();
        let labels = cluster_rigid_motions(&cloud, &still, &RansacParams::default(), 9).unwrap();
        assert_eq!(labels.count, 1);
        assert!(labels.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn same_seed_same_labels() {
        let (cloud, traj, _) = two_part_scene(5, 50);
        let p = RansacParams::default();
        assert_eq!(
            cluster_rigid_motions(&cloud, &traj, &p, 42).unwrap(),
            cluster_rigid_motions(&cloud, &traj, &p, 42).unwrap()
        );
    }

    #[test]
    fn soft_masks_check_roots() {
        let l = HardLabels::new(vec![0, 0, 1, 1]);
        let m = to_soft_masks(&l, &[0, 2]).unwrap();
        assert_eq!(m.masks[1], vec![0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(to_soft_masks(&l, &[2, 0]), Err(Error::RootConsistency(_))));
        assert!(matches!(to_soft_masks(&l, &[0]), Err(Error::RootConsistency(_))));
    }

    #[test]
    fn iou_examples() {
        assert_eq!(relaxed_iou(&[1.0, 1.0, 0.0, 0.0], &[0.0, 1.0, 1.0, 0.0]).unwrap(), 1.0 / 3.0);
        assert_eq!(relaxed_iou(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(relaxed_iou(&[1.5], &[1.0]), Err(Error::Domain(_))));
        assert!(matches!(relaxed_iou(&[-0.1], &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn part_of_root_reference_error() {
        let l = HardLabels::new(vec![0, 1, 1]);
        assert_eq!(part_of_root(&l, 2).unwrap(), vec![1, 2]);
        assert!(matches!(part_of_root(&l, 3), Err(Error::Reference(_))));
    }

    #[test]
    fn padding_handles_unequal_counts() {
        let pred = vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]];
        let truth = vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]];
        let m = match_masks(&pred, &truth).unwrap();
        assert_eq!(m.mapping[0], Some(0));
        assert_eq!(m.mapping.iter().filter(|x| x.is_none()).count(), 1);
        assert!((m.mean_iou - 0.75).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(v in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..30)) {
            let a: Vec<f64> = v.iter().map(|x| x.0).collect();
            let b: Vec<f64> = v.iter().map(|x| x.1).collect();
            let ab = relaxed_iou(&a, &b).unwrap();
            let ba = relaxed_iou(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab));
            let bin: Vec<f64> = a.iter().map(|&x| (x > 0.5) as u8 as f64).collect();
            prop_assert_eq!(relaxed_iou(&bin, &bin).unwrap(), 1.0);
        }

        #[test]
        fn masks_partition_points(labels in proptest::collection::vec(0usize..4, 1..40)) {
            let l = HardLabels::new(labels.clone());
            // first occurrence of each label as its root, relabelled densely
            let mut remap = vec![usize::MAX; 4];
            let mut next = 0;
            let dense: Vec<usize> = labels.iter().map(|&x| {
                if remap[x] == usize::MAX { remap[x] = next; next += 1; }
                remap[x]
            }).collect();
            let _ = l;
            let l = HardLabels::new(dense.clone());
            let roots: Vec<usize> = (0..l.count).map(|p| dense.iter().position(|&x| x == p).unwrap()).collect();
            let m = to_soft_masks(&l, &roots).unwrap();
            for i in 0..dense.len() {
                let s: f64 = m.masks.iter().map(|r| r[i]).sum();
                prop_assert_eq!(s, 1.0);
            }
        }
    }
}

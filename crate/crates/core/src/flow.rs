//! Scene flow between consecutive frames: nearest-neighbour estimates,
//! one-to-one rectification, accumulation over a video and endpoint error.

use std::path::Path;

use crate::assignment::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, PointCloudVideo, Vec3};

/// Per-point displacement guess, possibly many-to-one.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatedFlow {
    pub deltas: Vec<Vec3>,
}

/// One-to-one flow: `src[i] + deltas[i] == dst[permutation[i]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RectifiedFlow {
    pub deltas: Vec<Vec3>,
    pub permutation: Vec<usize>,
}

/// Displacement of every first-frame point to the last frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumulatedFlow {
    pub deltas: Vec<Vec3>,
}

/// Flow to the nearest target point (ties to the lowest index).
pub fn estimate_flow_nn(src: &PointCloud, dst: &PointCloud) -> EstimatedFlow {
    let d = dst.points();
    let deltas = src
        .points()
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, q) in d.iter().enumerate() {
                let dd = (q - p).norm_squared();
                if dd < best_d {
                    best_d = dd;
                    best = k;
                }
            }
            d[best] - p
        })
        .collect();
    EstimatedFlow { deltas }
}

/// Project an estimated flow onto the closest bijection between the frames.
pub fn rectify_flow(src: &PointCloud, dst: &PointCloud, est: &EstimatedFlow) -> Result<RectifiedFlow> {
    let n = src.len();
    if dst.len() != n || est.deltas.len() != n {
        return Err(Error::Size(format!(
            "rectify: {n} source points, {} target points, {} flow vectors",
            dst.len(),
            est.deltas.len()
        )));
    }
    let s = src.points();
    let d = dst.points();
    let cost = CostMatrix::from_fn(n, |j, k| (est.deltas[j] - (d[k] - s[j])).norm_squared())?;
    let a = solve_assignment(&cost)?;
    Ok(flow_from_permutation(src, dst, a.row_to_col))
}

/// Deltas realising `src[i] -> dst[perm[i]]`. Each component is nudged by a
/// few ulps when needed so that `src[i] + deltas[i]` reproduces the target bit
/// for bit; this always succeeds when source and target coordinates are
/// within a factor of two of each other.
pub fn flow_from_permutation(src: &PointCloud, dst: &PointCloud, permutation: Vec<usize>) -> RectifiedFlow {
    let deltas = permutation
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let a = src[i];
            let b = dst[k];
            Vec3::new(exact_delta(a.x, b.x), exact_delta(a.y, b.y), exact_delta(a.z, b.z))
        })
        .collect();
    RectifiedFlow { deltas, permutation }
}

fn exact_delta(from: f64, to: f64) -> f64 {
    let d = to - from;
    if from + d == to {
        return d;
    }
    let (mut lo, mut hi) = (d, d);
    for _ in 0..16 {
        lo = lo.next_down();
        if from + lo == to {
            return lo;
        }
        hi = hi.next_up();
        if from + hi == to {
            return hi;
        }
    }
    d
}

/// Follow the per-pair permutations from the first frame and sum the deltas.
pub fn accumulate_flow(video: &PointCloudVideo, flows: &[RectifiedFlow]) -> Result<AccumulatedFlow> {
    check_chain(video, flows)?;
    let n = video.frames[0].len();
    let mut deltas = vec![Vec3::zeros(); n];
    for (i, acc) in deltas.iter_mut().enumerate() {
        let mut idx = i;
        for f in flows {
            *acc += f.deltas[idx];
            idx = f.permutation[idx];
        }
    }
    Ok(AccumulatedFlow { deltas })
}

/// Per-point positions in every frame, following the chained permutations.
pub fn chain_trajectories(video: &PointCloudVideo, flows: &[RectifiedFlow]) -> Result<Vec<Vec<Vec3>>> {
    check_chain(video, flows)?;
    let n = video.frames[0].len();
    Ok((0..n)
        .map(|i| {
            let mut idx = i;
            let mut traj = Vec::with_capacity(video.len());
            traj.push(video.frames[0][i]);
            for (t, f) in flows.iter().enumerate() {
                idx = f.permutation[idx];
                traj.push(video.frames[t + 1][idx]);
            }
            traj
        })
        .collect())
}

fn check_chain(video: &PointCloudVideo, flows: &[RectifiedFlow]) -> Result<()> {
    if flows.len() + 1 != video.len() {
        return Err(Error::Size(format!(
            "{} flows for a video of {} frames",
            flows.len(),
            video.len()
        )));
    }
    let n = video.frames[0].len();
    if flows.iter().any(|f| f.permutation.len() != n || f.deltas.len() != n) {
        return Err(Error::Size("flow length differs from frame size".into()));
    }
    Ok(())
}

/// Mean endpoint error.
pub fn epe(pred: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Size(format!("{} predicted vs {} true vectors", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Size("empty flow".into()));
    }
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).norm()).sum::<f64>() / pred.len() as f64)
}

/// Flow file rows: `idx,dx,dy,dz,match_idx`.
pub fn write_flow_csv(path: &Path, flow: &RectifiedFlow) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    w.write_record(["idx", "dx", "dy", "dz", "match_idx"])
        .map_err(|e| Error::format(path, e))?;
    for (i, (d, m)) in flow.deltas.iter().zip(&flow.permutation).enumerate() {
        w.write_record(&[
            i.to_string(),
            d.x.to_string(),
            d.y.to_string(),
            d.z.to_string(),
            m.to_string(),
        ])
        .map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_flow_csv(path: &Path) -> Result<RectifiedFlow> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut rows: Vec<(usize, Vec3, usize)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        if rec.len() != 5 {
            return Err(Error::format(path, format!("expected 5 columns, got {}", rec.len())));
        }
        let f = |k: usize| rec[k].trim().parse::<f64>().map_err(|e| Error::format(path, e));
        let u = |k: usize| rec[k].trim().parse::<usize>().map_err(|e| Error::format(path, e));
        rows.push((u(0)?, Vec3::new(f(1)?, f(2)?, f(3)?), u(4)?));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::format(path, "flow indices must cover 0..n exactly once"));
    }
    let n = rows.len();
    let permutation: Vec<usize> = rows.iter().map(|r| r.2).collect();
    let mut seen = vec![false; n];
    for &m in &permutation {
        if m >= n || std::mem::replace(&mut seen[m], true) {
            return Err(Error::format(path, "match_idx is not a permutation"));
        }
    }
    Ok(RectifiedFlow {
        deltas: rows.iter().map(|r| r.1).collect(),
        permutation,
    })
}

/// Point file rows: `x,y,z` under a header.
pub fn write_points_csv(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    w.write_record(["x", "y", "z"]).map_err(|e| Error::format(path, e))?;
    for p in points {
        w.write_record(&[p.x.to_string(), p.y.to_string(), p.z.to_string()])
            .map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_points_csv(path: &Path) -> Result<PointCloud> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut pts = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        if rec.len() != 3 {
            return Err(Error::format(path, format!("expected 3 columns, got {}", rec.len())));
        }
        let f = |k: usize| rec[k].trim().parse::<f64>().map_err(|e| Error::format(path, e));
        pts.push(Vec3::new(f(0)?, f(1)?, f(2)?));
    }
    PointCloud::new(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn cloud(rng: &mut SplitMix64, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.0, 2.0)))
                .collect(),
        )
        .unwrap()
    }

    fn sorted(mut v: Vec<Vec3>) -> Vec<[u64; 3]> {
        let mut b: Vec<[u64; 3]> = v.drain(..).map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
        b.sort_unstable();
        b
    }

    #[test]
    fn nn_flow_is_many_to_one() {
        let src = PointCloud::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0)]).unwrap();
        let dst = PointCloud::new(vec![Vec3::new(0.05, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)]).unwrap();
        let est = estimate_flow_nn(&src, &dst);
        // equidistant: lowest index wins for both
        assert_eq!(est.deltas[0], Vec3::new(0.05, 0.0, 0.0));
        let r = rectify_flow(&src, &dst, &est).unwrap();
        let mut p = r.permutation.clone();
        p.sort();
        assert_eq!(p, vec![0, 1]);
    }

    #[test]
    fn rectify_size_mismatch() {
        let mut rng = SplitMix64::new(1);
        let a = cloud(&mut rng, 4);
        let b = cloud(&mut rng, 5);
        let est = EstimatedFlow { deltas: vec![Vec3::zeros(); 4] };
        assert!(matches!(rectify_flow(&a, &b, &est), Err(Error::Size(_))));
    }

    #[test]
    fn exact_delta_round_trips() {
        let mut rng = SplitMix64::new(77);
        // Exact whenever b/a lies in [1/2, 2] (the subtraction is then exact).
        for _ in 0..100_000 {
            let a = rng.uniform(0.25, 4.0) * if rng.chance(0.5) { -1.0 } else { 1.0 };
            let b = a * rng.uniform(0.5, 2.0);
            assert_eq!(a + exact_delta(a, b), b, "{a} {b}");
        }
        // Outside that range most pairs are still reachable by nudging.
        let mut hit = 0;
        for _ in 0..10_000 {
            let a = rng.uniform(-3.0, 3.0);
            let b = rng.uniform(-3.0, 3.0);
            hit += (a + exact_delta(a, b) == b) as usize;
        }
        assert!(hit > 9_000, "{hit}");
    }

    #[test]
    fn epe_examples() {
        let t = vec![Vec3::new(1.0, 0.0, 0.0); 3];
        assert_eq!(epe(&t, &t).unwrap(), 0.0);
        let p: Vec<Vec3> = t.iter().map(|v| v + Vec3::new(0.0, 0.3, 0.4)).collect();
        assert!((epe(&p, &t).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = SplitMix64::new(4);
        let a = cloud(&mut rng, 20);
        let mut perm: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut perm);
        let b = PointCloud::new(perm.iter().map(|&i| a[i] * 1.5).collect()).unwrap();
        let est = estimate_flow_nn(&a, &b);
        let r = rectify_flow(&a, &b, &est).unwrap();
        let dir = std::env::temp_dir().join(format!("fixit-flow-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.csv");
        write_flow_csv(&path, &r).unwrap();
        assert_eq!(read_flow_csv(&path).unwrap(), r);
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rectified_flow_hits_every_target_once(n in 1usize..40, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let src = cloud(&mut rng, n);
            let dst = cloud(&mut rng, n);
            let est = estimate_flow_nn(&src, &dst);
            let r = rectify_flow(&src, &dst, &est).unwrap();
            let moved: Vec<Vec3> = (0..n).map(|i| src[i] + r.deltas[i]).collect();
            prop_assert_eq!(sorted(moved), sorted(dst.points().to_vec()));
        }

        #[test]
        fn exact_flow_is_a_fixed_point(n in 1usize..40, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let src = cloud(&mut rng, n);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let shift = Vec3::new(0.01, -0.02, 0.005);
            let mut dst_pts = vec![Vec3::zeros(); n];
            for i in 0..n {
                dst_pts[perm[i]] = src[i] + shift;
            }
            let dst = PointCloud::new(dst_pts).unwrap();
            let truth = flow_from_permutation(&src, &dst, perm.clone());
            let est = EstimatedFlow { deltas: truth.deltas.clone() };
            let r = rectify_flow(&src, &dst, &est).unwrap();
            prop_assert_eq!(r.permutation, perm);
        }

        #[test]
        fn accumulation_matches_direct_hop(n in 1usize..30, frames in 2usize..6, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let base = cloud(&mut rng, n);
            // per-frame shuffled copies with a drift
            let mut order: Vec<Vec<usize>> = Vec::new();
            let mut fr = Vec::new();
            for t in 0..frames {
                let mut perm: Vec<usize> = (0..n).collect();
                if t > 0 { rng.shuffle(&mut perm); }
                let mut pts = vec![Vec3::zeros(); n];
                for i in 0..n {
                    pts[perm[i]] = base[i] + Vec3::new(0.1 * t as f64, rng.uniform(-0.01, 0.01), 0.0);
                }
                order.push(perm);
                fr.push(PointCloud::new(pts).unwrap());
            }
            let video = PointCloudVideo::new(fr.clone(), vec![]).unwrap();
            let flows: Vec<RectifiedFlow> = (0..frames - 1)
                .map(|t| {
                    let mut p = vec![0; n];
                    for i in 0..n {
                        p[order[t][i]] = order[t + 1][i];
                    }
                    flow_from_permutation(&fr[t], &fr[t + 1], p)
                })
                .collect();
            let acc = accumulate_flow(&video, &flows).unwrap();
            for i in 0..n {
                let direct = fr[frames - 1][order[frames - 1][i]] - fr[0][order[0][i]];
                prop_assert!((acc.deltas[order[0][i]] - direct).norm() < 1e-9);
            }
        }
    }
}

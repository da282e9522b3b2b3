//! Point clouds, rigid and affine transforms, sampling and neighbor queries.

use std::collections::HashMap;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// An ordered set of finite 3-D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Size("point cloud must contain at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Domain(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Vec3] {
        &mut self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn get(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.points)
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<Vec3> {
        idx.iter().map(|&i| self.points[i]).collect()
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Vec3;
    fn index(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }
}

/// T frames of the same N particles (in arbitrary per-frame order) plus the
/// per-frame interacting points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudVideo {
    pub frames: Vec<PointCloud>,
    pub interacting: Vec<Vec<Vec3>>,
}

impl PointCloudVideo {
    pub fn new(frames: Vec<PointCloud>, interacting: Vec<Vec<Vec3>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Size("video has no frames".into()));
        }
        let n = frames[0].len();
        if frames.iter().any(|f| f.len() != n) {
            return Err(Error::Size("frames differ in point count".into()));
        }
        if !interacting.is_empty() {
            if interacting.len() != frames.len() {
                return Err(Error::Size("interacting points must be given for every frame".into()));
            }
            let k = interacting[0].len();
            if interacting.iter().any(|ip| ip.len() != k) {
                return Err(Error::Size("interacting point count varies across frames".into()));
            }
        }
        Ok(Self { frames, interacting })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let mut c = Vec3::zeros();
    for p in points {
        c += p;
    }
    c / points.len().max(1) as f64
}

/// Axis-aligned bounding box of a non-empty slice.
pub fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Rotation with det = +1 and a translation: `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the line through `pivot` along `axis`.
    pub fn about_axis(pivot: Vec3, axis: Vec3, angle: f64) -> Self {
        let r = rotation_about(axis, angle);
        Self {
            rotation: r,
            translation: pivot - r * pivot,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).amax() <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    pub fn to_affine(&self) -> Affine {
        Affine {
            linear: self.rotation,
            translation: self.translation,
        }
    }
}

/// General affine map `p -> A p + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub linear: Matrix3<f64>,
    pub translation: Vec3,
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// `p -> L (p - pivot) + pivot + t`.
    pub fn about_pivot(linear: Matrix3<f64>, pivot: Vec3, t: Vec3) -> Self {
        Self {
            linear,
            translation: pivot - linear * pivot + t,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.linear * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.linear * v
    }
}

pub fn rotation_about(axis: Vec3, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

/// Rotation vector (axis * angle) of a rotation matrix.
pub fn rotation_vector(r: &Matrix3<f64>) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Greedy max-min sampling of `m` distinct indices starting from `seed_index`.
/// Ties go to the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::Size(format!("cannot sample {m} points from {n}")));
    }
    if seed_index >= n {
        return Err(Error::Size(format!("seed index {seed_index} out of range for {n} points")));
    }
    let pts = cloud.points();
    let mut dist = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(m);
    let mut current = seed_index;
    for _ in 0..m {
        out.push(current);
        dist[current] = f64::NEG_INFINITY;
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if dist[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best_d {
                best_d = dist[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(out)
}

/// Uniform grid keyed by integer cell coordinates.
#[derive(Clone, Debug)]
pub struct SpatialHash {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl SpatialHash {
    pub fn new(points: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_of(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key_of(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Calls `f` with every index stored in the 27 cells around `p`.
    pub fn for_each_near(&self, p: &Vec3, mut f: impl FnMut(usize)) {
        let (x, y, z) = Self::key_of(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.cells.get(&(x + dx, y + dy, z + dz)) {
                        for &j in v {
                            f(j);
                        }
                    }
                }
            }
        }
    }
}

/// All pairs `(i, j)`, `i < j`, with `|p_i - p_j| <= r`, sorted.
pub fn radius_neighbors(cloud: &PointCloud, r: f64) -> Vec<(usize, usize)> {
    let pts = cloud.points();
    if !(r > 0.0) {
        // Zero radius only pairs coincident points.
        let mut out = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if (pts[i] - pts[j]).norm() <= r {
                    out.push((i, j));
                }
            }
        }
        return out;
    }
    let hash = SpatialHash::new(pts, r);
    let mut out = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        hash.for_each_near(p, |j| {
            if j > i && (p - pts[j]).norm() <= r {
                out.push((i, j));
            }
        });
    }
    out.sort_unstable();
    out
}

/// Least-squares rigid motion mapping `src` onto `dst` (no reflection).
pub fn kabsch_fit(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    kabsch_fit_weighted(src, dst, None)
}

pub fn kabsch_fit_weighted(src: &[Vec3], dst: &[Vec3], weights: Option<&[f64]>) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::Size(format!(
            "kabsch: {} source points vs {} target points",
            src.len(),
            dst.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != src.len() {
            return Err(Error::Size("kabsch: weight count mismatch".into()));
        }
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("kabsch needs 3 points, got {}", src.len())));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut total = 0.0;
    let mut cs = Vec3::zeros();
    let mut cd = Vec3::zeros();
    for i in 0..src.len() {
        total += w(i);
        cs += w(i) * src[i];
        cd += w(i) * dst[i];
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("kabsch: weights sum to zero".into()));
    }
    cs /= total;
    cd /= total;
    let mut spread = Matrix3::zeros();
    let mut h = Matrix3::zeros();
    for i in 0..src.len() {
        let a = src[i] - cs;
        let b = dst[i] - cd;
        spread += w(i) * a * a.transpose();
        h += w(i) * a * b.transpose();
    }
    let eig = spread.symmetric_eigenvalues();
    let mut ev = [eig[0], eig[1], eig[2]];
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(ev[0] > 1e-24) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("kabsch: source points are coincident or collinear".into()));
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v = svd.v_t.unwrap().transpose();
    let d = (v * u.transpose()).determinant().signum();
    let corr = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * corr * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

/// `p -> R (p - pivot) + pivot + t` for every point.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform, pivot: &Vec3) -> PointCloud {
    let pts = cloud
        .points()
        .iter()
        .map(|p| t.rotation * (p - pivot) + pivot + t.translation)
        .collect();
    PointCloud { points: pts }
}

/// Half of the median nearest-neighbor spacing.
pub fn half_median_spacing(points: &[Vec3]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut nn: Vec<f64> = (0..n)
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in 0..n {
                if i != j {
                    best = best.min((points[i] - points[j]).norm_squared());
                }
            }
            best.sqrt()
        })
        .collect();
    nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
    0.5 * nn[n / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_cloud(rng: &mut SplitMix64, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fps_rejects_oversampling() {
        let c = PointCloud::new(vec![Vec3::zeros(); 3]).unwrap();
        assert!(matches!(farthest_point_sample(&c, 4, 0), Err(Error::Size(_))));
    }

    #[test]
    fn fps_on_line_picks_extremes_first() {
        let c = PointCloud::new((0..11).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        let s = farthest_point_sample(&c, 3, 0).unwrap();
        assert_eq!(s, vec![0, 10, 5]);
    }

    #[test]
    fn fps_ties_lowest_index() {
        let c = PointCloud::new(vec![
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::zeros(),
        ])
        .unwrap();
        assert_eq!(farthest_point_sample(&c, 4, 0).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn neighbors_match_brute_force() {
        let mut rng = SplitMix64::new(11);
        for n in [1, 2, 50, 300] {
            let c = random_cloud(&mut rng, n);
            for r in [0.05, 0.2, 0.7] {
                let mut brute = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if (c[i] - c[j]).norm() <= r {
                            brute.push((i, j));
                        }
                    }
                }
                assert_eq!(radius_neighbors(&c, r), brute);
            }
        }
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let mut rng = SplitMix64::new(5);
        let src = random_cloud(&mut rng, 40);
        let t = RigidTransform {
            rotation: rotation_about(Vec3::new(0.3, -1.0, 0.4), 2.1),
            translation: Vec3::new(0.5, -2.0, 3.0),
        };
        let dst: Vec<Vec3> = src.points().iter().map(|p| t.apply(p)).collect();
        let fit = kabsch_fit(src.points(), &dst).unwrap();
        assert!((fit.rotation - t.rotation).amax() < 1e-9);
        assert!((fit.translation - t.translation).amax() < 1e-9);
        assert!(fit.is_proper(1e-9));
    }

    #[test]
    fn kabsch_planar_input_has_no_reflection() {
        let src: Vec<Vec3> = (0..4)
            .map(|i| Vec3::new((i % 2) as f64, (i / 2) as f64, 0.0))
            .collect();
        let r = rotation_about(Vec3::x(), std::f64::consts::PI);
        let dst: Vec<Vec3> = src.iter().map(|p| r * p).collect();
        let fit = kabsch_fit(&src, &dst).unwrap();
        assert!((fit.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!((fit.rotation - r).amax() < 1e-9);
    }

    #[test]
    fn kabsch_rejects_collinear() {
        let src: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(kabsch_fit(&src, &src), Err(Error::Degenerate(_))));
        let same = vec![Vec3::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(kabsch_fit(&same, &same), Err(Error::Degenerate(_))));
    }

    #[test]
    fn apply_transform_fixes_pivot() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)]).unwrap();
        let t = RigidTransform {
            rotation: rotation_about(Vec3::z(), std::f64::consts::FRAC_PI_2),
            translation: Vec3::zeros(),
        };
        let out = apply_transform(&c, &t, &Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(out[0], Vec3::new(1.0, 0.0, 0.0));
        assert!((out[1] - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
    }
}

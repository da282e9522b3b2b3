//! Per-category functionality checks on simulated rollouts.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::category::{Category, Functionality};
use crate::dynamics::Rollout;
use crate::error::{Error, Result};
use crate::geom::{bounds, centroid, kabsch_fit, Affine, RigidTransform, Vec3};
use crate::seg::{part_of_root, HardLabels};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub close_angle_deg: f64,
    pub close_coverage: f64,
    pub close_grid: f64,
    /// Max distance from the opening plane for a closer point to count.
    pub close_plane_tol: f64,
    pub max_penetration: f64,
    pub lift_rise: f64,
    pub lift_keep: f64,
    /// Dilation of the container's bounding volume.
    pub lift_margin: f64,
    pub shield_inside: f64,
    pub shield_margin: f64,
    pub pour_crossing: f64,
    /// Slack added to the spout aperture radius.
    pub pour_margin: f64,
    pub move_forward: f64,
    pub move_yaw_deg: f64,
    pub pass_score: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            close_angle_deg: 5.0,
            close_coverage: 0.9,
            close_grid: 0.02,
            close_plane_tol: 0.08,
            max_penetration: 0.01,
            lift_rise: 0.3,
            lift_keep: 0.95,
            lift_margin: 0.03,
            shield_inside: 0.95,
            shield_margin: 0.01,
            pour_crossing: 0.10,
            pour_margin: 0.02,
            move_forward: 0.5,
            move_yaw_deg: 10.0,
            pass_score: 0.5,
        }
    }
}

/// Planar opening as a parallelogram with an outward normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Opening {
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub normal: Vec3,
}

impl Opening {
    fn mapped(&self, t: &dyn Fn(&Vec3) -> Vec3, v: &dyn Fn(&Vec3) -> Vec3) -> Opening {
        let n = v(&self.normal);
        Opening {
            corner: t(&self.corner),
            edge_u: v(&self.edge_u),
            edge_v: v(&self.edge_v),
            normal: if n.norm() > 0.0 { n.normalize() } else { self.normal },
        }
    }
}

/// Disc where liquid leaves the spout; `direction` points outward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpoutExit {
    pub center: Vec3,
    pub direction: Vec3,
    pub radius: f64,
}

/// Part indices playing each role.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub body: Option<usize>,
    /// Door or lid.
    pub closer: Option<usize>,
    pub chip: Option<usize>,
    pub shell: Option<usize>,
    pub spout: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRules {
    pub category: Category,
    pub roles: Roles,
    /// Liquid particle indices.
    #[serde(default)]
    pub water: Vec<usize>,
    #[serde(default)]
    pub opening: Option<Opening>,
    #[serde(default)]
    pub spout: Option<SpoutExit>,
    #[serde(default = "default_forward")]
    pub forward: Vec3,
}

fn default_forward() -> Vec3 {
    Vec3::y()
}

impl CategoryRules {
    /// Rules after an affine edit of `part`: geometry attached to that part
    /// moves with it.
    pub fn transformed(&self, part: usize, map: &Affine) -> CategoryRules {
        let mut out = self.clone();
        let t = |p: &Vec3| map.apply(p);
        let v = |d: &Vec3| map.apply_vector(d);
        if self.roles.body == Some(part) {
            if let Some(o) = &self.opening {
                // normals transform with the inverse transpose
                let inv_t = map.linear.try_inverse().map(|m| m.transpose()).unwrap_or(map.linear);
                let nv = move |d: &Vec3| inv_t * d;
                let mut o2 = o.mapped(&t, &v);
                let n = nv(&o.normal);
                if n.norm() > 0.0 {
                    o2.normal = n.normalize();
                }
                out.opening = Some(o2);
            }
        }
        if self.roles.spout == Some(part) {
            if let Some(s) = &self.spout {
                let d = v(&s.direction);
                out.spout = Some(SpoutExit {
                    center: t(&s.center),
                    direction: if d.norm() > 0.0 { d.normalize() } else { s.direction },
                    radius: s.radius,
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalityResult {
    pub pass: bool,
    pub score: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

/// A thresholded quantity: `margin >= 0` means satisfied.
struct SubCheck {
    name: &'static str,
    value: f64,
    margin: f64,
    slack: f64,
}

fn at_least(name: &'static str, value: f64, threshold: f64) -> SubCheck {
    SubCheck {
        name,
        value,
        margin: value - threshold,
        slack: threshold.abs().max(1e-12),
    }
}

fn at_most(name: &'static str, value: f64, threshold: f64) -> SubCheck {
    SubCheck {
        name,
        value,
        margin: threshold - value,
        slack: threshold.abs().max(1e-12),
    }
}

/// Combine sub-checks into a score in [0, 1]. When every margin is
/// non-negative the score is `0.5 + 0.5 * prod(m / (m + slack))`; otherwise it
/// is `0.5 * prod over failed checks of slack / (slack + |m|)`. Hence the
/// score reaches `pass_score = 0.5` exactly when all sub-checks hold.
fn aggregate(checks: &[SubCheck], pass_score: f64) -> FunctionalityResult {
    let all_ok = checks.iter().all(|c| c.margin >= 0.0);
    let score = if all_ok {
        0.5 + 0.5
            * checks
                .iter()
                .map(|c| (c.margin / (c.margin + c.slack)).clamp(0.0, 1.0))
                .product::<f64>()
    } else {
        0.5 * checks
            .iter()
            .filter(|c| c.margin < 0.0)
            .map(|c| (c.slack / (c.slack - c.margin)).clamp(0.0, 1.0))
            .product::<f64>()
    };
    let mut diagnostics = BTreeMap::new();
    for c in checks {
        diagnostics.insert(c.name.to_string(), c.value);
        diagnostics.insert(format!("{}_margin", c.name), c.margin);
    }
    let score = score.clamp(0.0, 1.0);
    FunctionalityResult {
        pass: score >= pass_score && all_ok,
        score,
        diagnostics,
    }
}

fn role_points(labels: &HardLabels, roots: &[usize], role: Option<usize>, name: &str, water: &[usize]) -> Result<Vec<usize>> {
    let part = role.ok_or_else(|| Error::Config(format!("no part bound to role `{name}`")))?;
    let root = *roots
        .get(part)
        .ok_or_else(|| Error::Config(format!("role `{name}` refers to missing part {part}")))?;
    let mut idx = part_of_root(labels, root)?;
    if !water.is_empty() {
        idx.retain(|i| water.binary_search(i).is_err());
    }
    if idx.len() < 3 {
        return Err(Error::Config(format!("role `{name}` resolves to {} points", idx.len())));
    }
    Ok(idx)
}

fn motion(rollout: &Rollout, idx: &[usize], frame: usize) -> Result<RigidTransform> {
    let a: Vec<Vec3> = idx.iter().map(|&i| rollout.frames[0][i]).collect();
    let b: Vec<Vec3> = idx.iter().map(|&i| rollout.frames[frame][i]).collect();
    kabsch_fit(&a, &b)
}

/// Evaluate the category's functionality on a rollout. `labels` and `roots`
/// resolve the role bindings of `rules` to particles.
pub fn check_functionality(
    rules: &CategoryRules,
    thresholds: &Thresholds,
    rollout: &Rollout,
    labels: &HardLabels,
    roots: &[usize],
) -> Result<FunctionalityResult> {
    if rollout.frames.len() < 2 {
        return Err(Error::Size("rollout needs at least two frames".into()));
    }
    if labels.len() != rollout.frames[0].len() {
        return Err(Error::Size("labels do not match the rollout".into()));
    }
    let mut water = rules.water.clone();
    water.sort_unstable();
    let last = rollout.frames.len() - 1;
    let fin = &rollout.frames[last];
    let th = thresholds;
    let checks = match rules.category.functionality() {
        Functionality::Close => {
            let body = role_points(labels, roots, rules.roles.body, "body", &water)?;
            let closer = role_points(labels, roots, rules.roles.closer, "closer", &water)?;
            let opening = rules
                .opening
                .as_ref()
                .ok_or_else(|| Error::Config("close check needs an opening".into()))?;
            let tb = motion(rollout, &body, last)?;
            let o = opening.mapped(&|p| tb.apply(p), &|v| tb.apply_vector(v));
            let pts: Vec<Vec3> = closer.iter().map(|&i| fin[i]).collect();
            let angle = plate_normal(&pts).dot(&o.normal).abs().clamp(0.0, 1.0).acos().to_degrees();
            let coverage = opening_coverage(&o, &pts, th.close_grid, th.close_plane_tol);
            let mut pen: f64 = 0.0;
            for &i in &closer {
                for &j in &body {
                    let d = (fin[i] - fin[j]).norm();
                    pen = pen.max(rollout.radii[i] + rollout.radii[j] - d);
                }
            }
            vec![
                at_most("angle_deg", angle, th.close_angle_deg),
                at_least("coverage", coverage, th.close_coverage),
                at_most("penetration", pen.max(0.0), th.max_penetration),
            ]
        }
        Functionality::Lift => {
            let body = role_points(labels, roots, rules.roles.body, "body", &water)?;
            if water.is_empty() {
                return Err(Error::Config("lift check needs liquid particles".into()));
            }
            let c0 = centroid(&body.iter().map(|&i| rollout.frames[0][i]).collect::<Vec<_>>());
            let c1 = centroid(&body.iter().map(|&i| fin[i]).collect::<Vec<_>>());
            let tb = motion(rollout, &body, last)?.inverse();
            let (lo, hi) = bounds(&body.iter().map(|&i| rollout.frames[0][i]).collect::<Vec<_>>());
            let kept = inside_fraction(&water, fin, &tb, lo, hi, th.lift_margin);
            vec![
                at_least("rise", c1.z - c0.z, th.lift_rise),
                at_least("water_kept", kept, th.lift_keep),
            ]
        }
        Functionality::Shield => {
            let shell = role_points(labels, roots, rules.roles.shell, "shell", &water)?;
            let chip = role_points(labels, roots, rules.roles.chip, "chip", &water)?;
            let ts = motion(rollout, &shell, last)?.inverse();
            let (lo, hi) = bounds(&shell.iter().map(|&i| rollout.frames[0][i]).collect::<Vec<_>>());
            let inside = inside_fraction(&chip, fin, &ts, lo, hi, th.shield_margin);
            vec![at_least("chip_covered", inside, th.shield_inside)]
        }
        Functionality::Pour => {
            let spout = role_points(labels, roots, rules.roles.spout, "spout", &water)?;
            let exit = rules
                .spout
                .as_ref()
                .ok_or_else(|| Error::Config("pour check needs a spout exit".into()))?;
            if water.is_empty() {
                return Err(Error::Config("pour check needs liquid particles".into()));
            }
            let frames: Vec<RigidTransform> = (0..=last)
                .map(|t| motion(rollout, &spout, t).map(|m| m.inverse()))
                .collect::<Result<_>>()?;
            let dir = exit.direction.normalize();
            let aperture = exit.radius + th.pour_margin;
            let mut crossed = 0usize;
            for &i in &water {
                let local: Vec<Vec3> = (0..=last).map(|t| frames[t].apply(&rollout.frames[t][i])).collect();
                let hit = local.windows(2).any(|w| {
                    let s0 = (w[0] - exit.center).dot(&dir);
                    let s1 = (w[1] - exit.center).dot(&dir);
                    if !(s0 < 0.0 && s1 >= 0.0) {
                        return false;
                    }
                    let p = w[0] + (w[1] - w[0]) * (s0 / (s0 - s1));
                    let r = p - exit.center;
                    (r - dir * r.dot(&dir)).norm() <= aperture
                });
                crossed += hit as usize;
            }
            vec![at_least("poured", crossed as f64 / water.len() as f64, th.pour_crossing)]
        }
        Functionality::Move => {
            let body = role_points(labels, roots, rules.roles.body, "body", &water)?;
            let c0 = centroid(&body.iter().map(|&i| rollout.frames[0][i]).collect::<Vec<_>>());
            let c1 = centroid(&body.iter().map(|&i| fin[i]).collect::<Vec<_>>());
            let r = motion(rollout, &body, last)?.rotation;
            let yaw = (r[(1, 0)] - r[(0, 1)]).atan2(r[(0, 0)] + r[(1, 1)]).abs().to_degrees();
            vec![
                at_least("forward", (c1 - c0).dot(&rules.forward.normalize()), th.move_forward),
                at_most("yaw_deg", yaw, th.move_yaw_deg),
            ]
        }
    };
    Ok(aggregate(&checks, th.pass_score))
}

fn inside_fraction(idx: &[usize], pts: &[Vec3], to_ref: &RigidTransform, lo: Vec3, hi: Vec3, margin: f64) -> f64 {
    let m = Vec3::repeat(margin);
    let (lo, hi) = (lo - m, hi + m);
    let inside = idx
        .iter()
        .filter(|&&i| {
            let p = to_ref.apply(&pts[i]);
            (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k])
        })
        .count();
    inside as f64 / idx.len().max(1) as f64
}

/// Direction of least spread.
fn plate_normal(pts: &[Vec3]) -> Vec3 {
    let c = centroid(pts);
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let e = SymmetricEigen::new(cov);
    let k = e.eigenvalues.imin();
    e.eigenvectors.column(k).into_owned()
}

/// Fraction of the opening's grid cells covered by the convex hull of the
/// closer points that lie near the opening plane.
fn opening_coverage(o: &Opening, pts: &[Vec3], pitch: f64, plane_tol: f64) -> f64 {
    let n = o.normal;
    let u = o.edge_u.normalize();
    let w = n.cross(&u).normalize();
    let to2 = |p: &Vec3| {
        let d = p - o.corner;
        [d.dot(&u), d.dot(&w)]
    };
    let near: Vec<[f64; 2]> = pts
        .iter()
        .filter(|p| (*p - o.corner).dot(&n).abs() <= plane_tol)
        .map(to2)
        .collect();
    let hull = convex_hull(near);
    if hull.len() < 3 {
        return 0.0;
    }
    let nu = (o.edge_u.norm() / pitch).ceil().max(1.0) as usize;
    let nv = (o.edge_v.norm() / pitch).ceil().max(1.0) as usize;
    let mut covered = 0usize;
    for a in 0..nu {
        for b in 0..nv {
            let p = o.corner + o.edge_u * ((a as f64 + 0.5) / nu as f64) + o.edge_v * ((b as f64 + 0.5) / nv as f64);
            if in_convex(&hull, to2(&p)) {
                covered += 1;
            }
        }
    }
    covered as f64 / (nu * nv) as f64
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise hull (monotone chain).
fn convex_hull(mut p: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross2(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross2(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn in_convex(hull: &[[f64; 2]], q: [f64; 2]) -> bool {
    (0..hull.len()).all(|i| cross2(hull[i], hull[(i + 1) % hull.len()], q) >= 0.0)
}

/// Index of the highest score; ties go to the lowest index.
pub fn select_choice(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plate(z: f64, extent: f64, k: usize) -> Vec<Vec3> {
        let mut v = Vec::new();
        for a in 0..k {
            for b in 0..k {
                v.push(Vec3::new(extent * a as f64 / (k - 1) as f64, extent * b as f64 / (k - 1) as f64, z));
            }
        }
        v
    }

    #[test]
    fn select_ties_lowest() {
        assert_eq!(select_choice(&[0.2, 0.7, 0.7, 0.1]), Some(1));
        assert_eq!(select_choice(&[]), None);
    }

    #[test]
    fn aggregate_threshold_is_exact() {
        let ok = aggregate(&[at_least("a", 1.0, 1.0), at_most("b", 0.0, 0.5)], 0.5);
        assert!(ok.pass);
        assert_eq!(ok.score, 0.5);
        let bad = aggregate(&[at_least("a", 0.999, 1.0), at_most("b", 0.0, 0.5)], 0.5);
        assert!(!bad.pass);
        assert!(bad.score < 0.5 && bad.score > 0.49);
        let great = aggregate(&[at_least("a", 3.0, 1.0)], 0.5);
        assert!(great.score > 0.8 && great.score <= 1.0);
    }

    #[test]
    fn full_coverage_of_a_square_opening() {
        let o = Opening {
            corner: Vec3::zeros(),
            edge_u: Vec3::new(1.0, 0.0, 0.0),
            edge_v: Vec3::new(0.0, 1.0, 0.0),
            normal: Vec3::z(),
        };
        let pts = plate(0.03, 1.0, 6);
        assert_eq!(opening_coverage(&o, &pts, 0.02, 0.08), 1.0);
        let half: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p.x * 0.5, p.y, p.z)).collect();
        assert!((opening_coverage(&o, &half, 0.02, 0.08) - 0.5).abs() < 1e-9);
        let far = plate(0.5, 1.0, 6);
        assert_eq!(opening_coverage(&o, &far, 0.02, 0.08), 0.0);
    }

    #[test]
    fn plate_normal_of_tilted_plate() {
        let r = crate::geom::rotation_about(Vec3::x(), 0.3);
        let pts: Vec<Vec3> = plate(0.0, 1.0, 5).iter().map(|p| r * p).collect();
        let n = plate_normal(&pts);
        assert!((n.dot(&(r * Vec3::z())).abs() - 1.0).abs() < 1e-9);
    }

    fn still_rollout(pts: Vec<Vec3>, last: Vec<Vec3>) -> Rollout {
        let n = pts.len();
        Rollout {
            frames: vec![pts, last],
            interacting: vec![],
            radii: vec![0.01; n],
            steps: 1,
        }
    }

    #[test]
    fn missing_role_is_config_error() {
        let pts = plate(0.0, 1.0, 4);
        let r = still_rollout(pts.clone(), pts);
        let rules = CategoryRules {
            category: Category::Cart,
            roles: Roles::default(),
            water: vec![],
            opening: None,
            spout: None,
            forward: Vec3::y(),
        };
        let labels = HardLabels::new(vec![0; 16]);
        assert!(matches!(
            check_functionality(&rules, &Thresholds::default(), &r, &labels, &[0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cart_forward_and_yaw() {
        let mut pts = plate(0.1, 0.5, 4);
        pts.push(Vec3::new(0.2, 0.2, 0.3));
        let labels = HardLabels::new(vec![0; pts.len()]);
        let rules = CategoryRules {
            category: Category::Cart,
            roles: Roles {
                body: Some(0),
                ..Roles::default()
            },
            water: vec![],
            opening: None,
            spout: None,
            forward: Vec3::y(),
        };
        let moved: Vec<Vec3> = pts.iter().map(|p| p + Vec3::new(0.0, 0.8, 0.0)).collect();
        let res = check_functionality(&rules, &Thresholds::default(), &still_rollout(pts.clone(), moved), &labels, &[0]).unwrap();
        assert!(res.pass, "{res:?}");
        let rot = crate::geom::rotation_about(Vec3::z(), 0.5);
        let turned: Vec<Vec3> = pts.iter().map(|p| rot * p + Vec3::new(0.0, 0.8, 0.0)).collect();
        let res = check_functionality(&rules, &Thresholds::default(), &still_rollout(pts, turned), &labels, &[0]).unwrap();
        assert!(!res.pass);
        assert!((res.diagnostics["yaw_deg"] - 0.5f64.to_degrees()).abs() < 1e-6);
    }
}

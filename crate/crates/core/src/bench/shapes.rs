//! Procedural articulated objects: dense surface sampling, per-category
//! layouts, interaction scripts and the break templates used to damage them.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::category::Category;
use crate::dsl::{Axis, Fix, FixKind};
use crate::dynamics::{JointKind, JointSpec};
use crate::error::Result;
use crate::func::{CategoryRules, Opening, Roles, SpoutExit};
use crate::geom::{farthest_point_sample, half_median_spacing, rotation_about, Affine, PointCloud, RigidTransform, Vec3};
use crate::rng::SplitMix64;
use crate::seg::HardLabels;

const DENSE: f64 = 0.012;
const WATER_SPACING: f64 = 0.042;

/// Dense labelled surface samples.
#[derive(Clone, Debug, Default)]
pub(crate) struct Builder {
    pub pts: Vec<Vec3>,
    pub part: Vec<usize>,
}

impl Builder {
    fn push(&mut self, part: usize, p: Vec3) {
        self.pts.push(p);
        self.part.push(part);
    }

    fn rect(&mut self, part: usize, o: Vec3, e1: Vec3, e2: Vec3) {
        let nu = (e1.norm() / DENSE).ceil().max(1.0) as usize;
        let nv = (e2.norm() / DENSE).ceil().max(1.0) as usize;
        for a in 0..=nu {
            for b in 0..=nv {
                self.push(part, o + e1 * (a as f64 / nu as f64) + e2 * (b as f64 / nv as f64));
            }
        }
    }

    /// Faces of an axis-aligned box, ordered -x, +x, -y, +y, -z, +z.
    fn box_faces(&mut self, part: usize, lo: Vec3, hi: Vec3, faces: [bool; 6]) {
        let d = hi - lo;
        let (ex, ey, ez) = (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, d.z));
        if faces[0] {
            self.rect(part, lo, ey, ez);
        }
        if faces[1] {
            self.rect(part, lo + ex, ey, ez);
        }
        if faces[2] {
            self.rect(part, lo, ex, ez);
        }
        if faces[3] {
            self.rect(part, lo + ey, ex, ez);
        }
        if faces[4] {
            self.rect(part, lo, ex, ey);
        }
        if faces[5] {
            self.rect(part, lo + ez, ex, ey);
        }
    }

    fn block(&mut self, part: usize, center: Vec3, half: Vec3) {
        self.box_faces(part, center - half, center + half, [true; 6]);
    }

    /// Vertical cylinder wall, optionally with a round hole.
    fn cylinder(&mut self, part: usize, base: Vec3, radius: f64, height: f64, hole: Option<(Vec3, f64)>) {
        let na = ((2.0 * PI * radius) / DENSE).ceil() as usize;
        let nz = (height / DENSE).ceil().max(1.0) as usize;
        for a in 0..na {
            let phi = 2.0 * PI * a as f64 / na as f64;
            for k in 0..=nz {
                let p = base + Vec3::new(radius * phi.cos(), radius * phi.sin(), height * k as f64 / nz as f64);
                if let Some((c, r)) = hole {
                    if (p - c).norm() < r {
                        continue;
                    }
                }
                self.push(part, p);
            }
        }
    }

    /// Horizontal disc.
    fn disc(&mut self, part: usize, center: Vec3, radius: f64) {
        self.push(part, center);
        let nr = (radius / DENSE).ceil().max(1.0) as usize;
        for k in 1..=nr {
            let r = radius * k as f64 / nr as f64;
            let na = ((2.0 * PI * r) / DENSE).ceil().max(6.0) as usize;
            for a in 0..na {
                let phi = 2.0 * PI * a as f64 / na as f64;
                self.push(part, center + Vec3::new(r * phi.cos(), r * phi.sin(), 0.0));
            }
        }
    }

    /// Disc with arbitrary normal.
    fn disc_oriented(&mut self, part: usize, center: Vec3, normal: Vec3, radius: f64) {
        let (u, v) = basis(normal);
        self.push(part, center);
        let nr = (radius / DENSE).ceil().max(1.0) as usize;
        for k in 1..=nr {
            let r = radius * k as f64 / nr as f64;
            let na = ((2.0 * PI * r) / DENSE).ceil().max(6.0) as usize;
            for a in 0..na {
                let phi = 2.0 * PI * a as f64 / na as f64;
                self.push(part, center + (u * phi.cos() + v * phi.sin()) * r);
            }
        }
    }

    /// Open tube along `dir`.
    fn tube(&mut self, part: usize, start: Vec3, dir: Vec3, length: f64, radius: f64) {
        let d = dir.normalize();
        let (u, v) = basis(d);
        let na = ((2.0 * PI * radius) / DENSE).ceil().max(6.0) as usize;
        let nl = (length / DENSE).ceil().max(1.0) as usize;
        for k in 0..=nl {
            let c = start + d * (length * k as f64 / nl as f64);
            for a in 0..na {
                let phi = 2.0 * PI * a as f64 / na as f64;
                self.push(part, c + (u * phi.cos() + v * phi.sin()) * radius);
            }
        }
    }

    /// Thin tube following a circular arc in the plane spanned by `u`, `v`.
    #[allow(clippy::too_many_arguments)]
    fn arc_tube(&mut self, part: usize, center: Vec3, arc_r: f64, u: Vec3, v: Vec3, a0: f64, a1: f64, tube_r: f64) {
        let n = u.cross(&v).normalize();
        let na = ((arc_r * (a1 - a0)).abs() / DENSE).ceil().max(2.0) as usize;
        let nt = ((2.0 * PI * tube_r) / DENSE).ceil().max(6.0) as usize;
        for k in 0..=na {
            let a = a0 + (a1 - a0) * k as f64 / na as f64;
            let radial = u * a.cos() + v * a.sin();
            let c = center + radial * arc_r;
            for t in 0..nt {
                let phi = 2.0 * PI * t as f64 / nt as f64;
                self.push(part, c + (radial * phi.cos() + n * phi.sin()) * tube_r);
            }
        }
    }
}

fn basis(d: Vec3) -> (Vec3, Vec3) {
    let a = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = d.cross(&a).normalize();
    (u, d.cross(&u).normalize())
}

/// Scripted end-effector motion, eased with a smoothstep over the first
/// `duration` fraction of the rollout and held afterwards.
#[derive(Clone, Debug, PartialEq)]
pub enum Script {
    Move { offset: Vec3, duration: f64 },
    Turn { pivot: Vec3, axis: Vec3, angle: f64, lift: Vec3, duration: f64 },
}

impl Script {
    pub fn pose(&self, s: f64) -> RigidTransform {
        let ease = |d: f64| {
            let x = (s / d).clamp(0.0, 1.0);
            x * x * (3.0 - 2.0 * x)
        };
        match self {
            Script::Move { offset, duration } => RigidTransform::from_translation(offset * ease(*duration)),
            Script::Turn { pivot, axis, angle, lift, duration } => {
                let e = ease(*duration);
                let turn = RigidTransform::about_axis(*pivot, *axis, angle * e);
                RigidTransform::from_translation(lift * e).compose(&turn)
            }
        }
    }

    fn shifted(&self, v: Vec3) -> Script {
        match self {
            Script::Turn { pivot, axis, angle, lift, duration } => Script::Turn {
                pivot: pivot + v,
                axis: *axis,
                angle: *angle,
                lift: *lift,
                duration: *duration,
            },
            other => other.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Values {
    /// Integer degrees.
    Degrees(i64, i64),
    /// Fractions of the part extent (rounded to centimetres).
    Extent(f64, f64),
    Factors(Vec<f64>),
}

/// A family of breaks; every member has an exact inverse in the fix language.
#[derive(Clone, Debug, PartialEq)]
pub struct BreakTemplate {
    pub part: usize,
    pub kind: FixKind,
    pub axes: Vec<Axis>,
    pub values: Values,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grasp {
    pub part: usize,
    pub site: Vec3,
}

struct Design {
    category: Category,
    part_names: Vec<&'static str>,
    dense: Builder,
    water: Vec<Vec3>,
    water_part: Option<usize>,
    pivots: Vec<Vec3>,
    joints: Vec<JointSpec>,
    rules: CategoryRules,
    grasps: Vec<Grasp>,
    script: Script,
    total_time: f64,
    templates: Vec<BreakTemplate>,
    /// Dense samples that must survive subsampling (ground contacts).
    contacts: Vec<usize>,
}

/// A sampled object ready to simulate.
#[derive(Clone, Debug)]
pub struct Object {
    pub category: Category,
    pub part_names: Vec<String>,
    pub cloud: PointCloud,
    pub labels: HardLabels,
    pub roots: Vec<usize>,
    pub pivots: Vec<Vec3>,
    pub joints: Vec<JointSpec>,
    pub rules: CategoryRules,
    pub fluid_parts: Vec<usize>,
    pub grasps: Vec<Grasp>,
    pub script: Script,
    pub total_time: f64,
    pub templates: Vec<BreakTemplate>,
}

impl Object {
    /// Largest bounding-box side of a part.
    pub fn part_extent(&self, part: usize) -> f64 {
        let pts: Vec<Vec3> = self.labels.members(part).iter().map(|&i| self.cloud[i]).collect();
        let (lo, hi) = crate::geom::bounds(&pts);
        (hi - lo).max()
    }

    pub fn solid_parts(&self) -> Vec<usize> {
        (0..self.roots.len()).filter(|p| !self.fluid_parts.contains(p)).collect()
    }

    /// The object after editing one part; joints, rule geometry and grasp
    /// sites attached to the part move with it.
    pub fn edited(&self, fix: &Fix) -> Result<Object> {
        let choice = crate::dsl::FixChoice::Fix(*fix);
        let (cloud, _) = crate::dsl::apply_fix(&self.cloud, &self.labels, &self.roots, &choice, Some(&self.pivots))?;
        let map = fix.affine(self.pivots[fix.part]);
        let mut out = self.clone();
        out.cloud = cloud;
        out.joints = self
            .joints
            .iter()
            .map(|j| if j.part_b == fix.part { j.transformed(&map) } else { j.clone() })
            .collect();
        out.rules = self.rules.transformed(fix.part, &map);
        for g in &mut out.grasps {
            if g.part == fix.part {
                g.site = map.apply(&g.site);
            }
        }
        Ok(out)
    }

    /// `k` interacting points split across the grasps: the points of each
    /// grasped part closest to its site.
    pub fn interacting_points(&self, k: usize) -> Vec<Vec3> {
        let e = self.grasps.len().max(1);
        let mut out = Vec::with_capacity(k);
        for (gi, g) in self.grasps.iter().enumerate() {
            let take = k / e + usize::from(gi < k % e);
            let mut idx = self.labels.members(g.part);
            idx.sort_by(|&a, &b| {
                let da = (self.cloud[a] - g.site).norm_squared();
                let db = (self.cloud[b] - g.site).norm_squared();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            out.extend(idx.iter().take(take).map(|&i| self.cloud[i]));
        }
        out
    }

    /// Interacting points in every frame under the script.
    pub fn script_trajectory(&self, ip: &[Vec3], frames: usize) -> Vec<Vec<Vec3>> {
        (0..frames)
            .map(|t| {
                let pose = self.script.pose(t as f64 / (frames - 1).max(1) as f64);
                ip.iter().map(|p| pose.apply(p)).collect()
            })
            .collect()
    }
}

/// Sample a fresh functional object of the category with `n` points.
pub fn build_object(category: Category, rng: &mut SplitMix64, n: usize) -> Result<Object> {
    let design = match category {
        Category::Fridge => fridge(rng),
        Category::Box => storage_box(rng),
        Category::Bucket => bucket(rng),
        Category::KitchenPot => kitchen_pot(rng),
        Category::Kettle => kettle(rng),
        Category::Usb => usb(rng),
        Category::Cart => cart(rng),
    };
    realize(design, n)
}

fn realize(d: Design, n: usize) -> Result<Object> {
    let n_water = d.water.len();
    if n <= n_water + 16 {
        return Err(crate::Error::Size(format!("{n} points cannot hold {n_water} liquid particles")));
    }
    let dense = PointCloud::new(d.dense.pts.clone())?;
    let mut pick = farthest_point_sample(&dense, n - n_water, 0)?;
    for &c in &d.contacts {
        if pick.contains(&c) {
            continue;
        }
        let part = d.dense.part[c];
        let slot = (0..pick.len())
            .filter(|&k| d.dense.part[pick[k]] == part && !d.contacts.contains(&pick[k]))
            .min_by(|&a, &b| {
                let da = (dense[pick[a]] - dense[c]).norm_squared();
                let db = (dense[pick[b]] - dense[c]).norm_squared();
                da.partial_cmp(&db).unwrap()
            });
        if let Some(k) = slot {
            pick[k] = c;
        }
    }
    let mut pts: Vec<Vec3> = pick.iter().map(|&i| dense[i]).collect();
    let mut labels: Vec<usize> = pick.iter().map(|&i| d.dense.part[i]).collect();
    let r = half_median_spacing(&pts);
    let shift = Vec3::new(0.0, 0.0, r + 0.002 - pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min));
    let mut water_idx = Vec::new();
    for w in &d.water {
        water_idx.push(pts.len());
        pts.push(*w);
        labels.push(d.water_part.expect("water without a part"));
    }
    for p in &mut pts {
        *p += shift;
    }
    let count = d.part_names.len();
    let labels = HardLabels { labels, count };
    let roots: Vec<usize> = (0..count)
        .map(|part| {
            let m = labels.members(part);
            let c = crate::geom::centroid(&m.iter().map(|&i| pts[i]).collect::<Vec<_>>());
            let mut best = m[0];
            for &i in &m {
                if (pts[i] - c).norm_squared() < (pts[best] - c).norm_squared() {
                    best = i;
                }
            }
            best
        })
        .collect();
    let moved = Affine::about_pivot(nalgebra::Matrix3::identity(), Vec3::zeros(), shift);
    let mut rules = d.rules.clone();
    rules.water = water_idx;
    if let Some(o) = &mut rules.opening {
        o.corner += shift;
    }
    if let Some(s) = &mut rules.spout {
        s.center += shift;
    }
    Ok(Object {
        category: d.category,
        part_names: d.part_names.iter().map(|s| s.to_string()).collect(),
        cloud: PointCloud::new(pts)?,
        labels,
        roots,
        pivots: d.pivots.iter().map(|p| p + shift).collect(),
        joints: d.joints.iter().map(|j| j.transformed(&moved)).collect(),
        rules,
        fluid_parts: d.water_part.into_iter().collect(),
        grasps: d
            .grasps
            .iter()
            .map(|g| Grasp {
                part: g.part,
                site: g.site + shift,
            })
            .collect(),
        script: d.script.shifted(shift),
        total_time: d.total_time,
        templates: d.templates,
    })
}

/// Lattice of liquid particles inside a vertical cylinder.
fn water_column(center: Vec3, radius: f64, z0: f64, count: usize) -> Vec<Vec3> {
    let mut layer = Vec::new();
    let k = (radius / WATER_SPACING).floor() as i64;
    for a in -k..=k {
        for b in -k..=k {
            let (x, y) = (a as f64 * WATER_SPACING, b as f64 * WATER_SPACING);
            if x * x + y * y <= radius * radius {
                layer.push((x, y));
            }
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut z = z0;
    while out.len() < count && !layer.is_empty() {
        for &(x, y) in &layer {
            if out.len() == count {
                break;
            }
            out.push(center + Vec3::new(x, y, z));
        }
        z += WATER_SPACING;
    }
    out
}

fn rot(axis: Vec3, deg: f64) -> nalgebra::Matrix3<f64> {
    rotation_about(axis, deg.to_radians())
}

fn rotate_part(b: &mut Builder, part: usize, pivot: Vec3, r: &nalgebra::Matrix3<f64>) {
    for (p, &l) in b.pts.iter_mut().zip(&b.part) {
        if l == part {
            *p = r * (*p - pivot) + pivot;
        }
    }
}

fn fridge(rng: &mut SplitMix64) -> Design {
    let (w, d, h) = (rng.uniform(0.40, 0.50), rng.uniform(0.35, 0.45), rng.uniform(0.60, 0.80));
    let gap = 0.07;
    let m = 0.03;
    let mut b = Builder::default();
    b.box_faces(0, Vec3::zeros(), Vec3::new(w, d, h), [true, true, false, true, true, true]);
    // door, closed pose
    b.rect(1, Vec3::new(-m, -gap, -0.02), Vec3::new(w + 2.0 * m, 0.0, 0.0), Vec3::new(0.0, 0.0, h + 0.02 + m));
    let grip_z = 0.55 * h;
    let grip = Vec3::new(w - 0.03, -gap - 0.05, grip_z);
    b.block(1, grip, Vec3::new(0.025, 0.025, 0.07));
    let hinge = Vec3::new(-m, -gap, grip_z);
    let open = rot(Vec3::z(), -90.0);
    rotate_part(&mut b, 1, hinge, &open);
    let grip_open = open * (grip - hinge) + hinge;
    let joints = vec![JointSpec {
        kind: JointKind::Revolute,
        part_a: 0,
        part_b: 1,
        anchor: hinge,
        axis: Vec3::z(),
        limits: Some((-10f64.to_radians(), 100f64.to_radians())),
    }];
    let ext = |lo: f64, hi: f64| Values::Extent(lo, hi);
    Design {
        category: Category::Fridge,
        part_names: vec!["body", "door"],
        dense: b,
        water: vec![],
        water_part: None,
        pivots: vec![Vec3::new(w / 2.0, d / 2.0, 0.0), hinge],
        joints,
        rules: CategoryRules {
            category: Category::Fridge,
            roles: Roles {
                body: Some(0),
                closer: Some(1),
                ..Roles::default()
            },
            water: vec![],
            opening: Some(Opening {
                corner: Vec3::zeros(),
                edge_u: Vec3::new(w, 0.0, 0.0),
                edge_v: Vec3::new(0.0, 0.0, h),
                normal: -Vec3::y(),
            }),
            spout: None,
            forward: Vec3::y(),
        },
        grasps: vec![Grasp { part: 1, site: grip_open }],
        script: Script::Turn {
            pivot: hinge,
            axis: Vec3::z(),
            angle: FRAC_PI_2,
            lift: Vec3::zeros(),
            duration: 0.85,
        },
        total_time: 2.0,
        contacts: vec![],
        templates: vec![
            BreakTemplate {
                part: 1,
                kind: FixKind::Translate,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: ext(0.15, 0.30),
            },
            BreakTemplate {
                part: 1,
                kind: FixKind::Scale,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: Values::Factors(vec![0.5, 0.625, 0.8]),
            },
            BreakTemplate {
                part: 1,
                kind: FixKind::Rotate,
                axes: vec![Axis::PosY, Axis::NegY],
                values: Values::Degrees(12, 60),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Translate,
                axes: vec![Axis::PosX, Axis::NegX, Axis::PosY, Axis::NegY],
                values: ext(0.15, 0.30),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Scale,
                axes: vec![Axis::PosX, Axis::NegX, Axis::PosZ, Axis::NegZ],
                values: Values::Factors(vec![1.25, 1.6, 2.0]),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Rotate,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: Values::Degrees(12, 60),
            },
        ],
    }
}

fn storage_box(rng: &mut SplitMix64) -> Design {
    let (w, d, h) = (rng.uniform(0.35, 0.50), rng.uniform(0.25, 0.35), rng.uniform(0.20, 0.30));
    let gap = 0.06;
    let m = 0.03;
    let mut b = Builder::default();
    b.box_faces(0, Vec3::zeros(), Vec3::new(w, d, h), [true, true, true, true, true, false]);
    let top = h + gap;
    b.rect(1, Vec3::new(-m, -m, top), Vec3::new(w + 2.0 * m, 0.0, 0.0), Vec3::new(0.0, d + 2.0 * m, 0.0));
    let grip = Vec3::new(w / 2.0, 0.0, top + 0.035);
    b.block(1, grip, Vec3::new(0.07, 0.03, 0.025));
    let hinge = Vec3::new(w / 2.0, d + m, top);
    let open = rot(Vec3::x(), -90.0);
    rotate_part(&mut b, 1, hinge, &open);
    let grip_open = open * (grip - hinge) + hinge;
    Design {
        category: Category::Box,
        part_names: vec!["body", "lid"],
        dense: b,
        water: vec![],
        water_part: None,
        pivots: vec![Vec3::new(w / 2.0, d / 2.0, 0.0), hinge],
        joints: vec![JointSpec {
            kind: JointKind::Revolute,
            part_a: 0,
            part_b: 1,
            anchor: hinge,
            axis: Vec3::x(),
            limits: Some((-10f64.to_radians(), 100f64.to_radians())),
        }],
        rules: CategoryRules {
            category: Category::Box,
            roles: Roles {
                body: Some(0),
                closer: Some(1),
                ..Roles::default()
            },
            water: vec![],
            opening: Some(Opening {
                corner: Vec3::new(0.0, 0.0, h),
                edge_u: Vec3::new(w, 0.0, 0.0),
                edge_v: Vec3::new(0.0, d, 0.0),
                normal: Vec3::z(),
            }),
            spout: None,
            forward: Vec3::y(),
        },
        grasps: vec![Grasp { part: 1, site: grip_open }],
        script: Script::Turn {
            pivot: hinge,
            axis: Vec3::x(),
            angle: FRAC_PI_2,
            lift: Vec3::zeros(),
            duration: 0.85,
        },
        total_time: 2.0,
        contacts: vec![],
        templates: vec![
            BreakTemplate {
                part: 1,
                kind: FixKind::Scale,
                axes: vec![Axis::PosX, Axis::NegX],
                values: Values::Factors(vec![0.5, 0.625]),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Scale,
                axes: vec![Axis::PosX, Axis::NegX, Axis::PosY, Axis::NegY],
                values: Values::Factors(vec![1.6, 2.0]),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Scale,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: Values::Factors(vec![0.5, 0.625, 1.25, 1.6]),
            },
        ],
    }
}

fn bucket(rng: &mut SplitMix64) -> Design {
    let (r, h) = (rng.uniform(0.14, 0.17), rng.uniform(0.25, 0.30));
    let mut b = Builder::default();
    b.cylinder(0, Vec3::zeros(), r, h, None);
    b.disc(0, Vec3::zeros(), r);
    let ha = 0.85 * h;
    let rh = r + 0.03;
    b.arc_tube(1, Vec3::new(0.0, 0.0, ha), rh, Vec3::x(), Vec3::z(), 0.0, PI, 0.012);
    let grip = Vec3::new(0.0, 0.0, ha + rh + 0.02);
    b.block(1, grip, Vec3::new(0.05, 0.025, 0.02));
    let water = water_column(Vec3::zeros(), r - 0.045, 0.05, 48);
    let anchor = Vec3::new(0.0, 0.0, ha);
    let ext = |lo: f64, hi: f64| Values::Extent(lo, hi);
    Design {
        category: Category::Bucket,
        part_names: vec!["body", "handle", "water"],
        dense: b,
        water,
        water_part: Some(2),
        pivots: vec![Vec3::new(0.0, 0.0, h / 2.0), anchor, Vec3::new(0.0, 0.0, 0.1)],
        joints: vec![JointSpec {
            kind: JointKind::Revolute,
            part_a: 0,
            part_b: 1,
            anchor,
            axis: Vec3::x(),
            limits: Some((-100f64.to_radians(), 100f64.to_radians())),
        }],
        rules: CategoryRules {
            category: Category::Bucket,
            roles: Roles {
                body: Some(0),
                ..Roles::default()
            },
            water: vec![],
            opening: None,
            spout: None,
            forward: Vec3::y(),
        },
        grasps: vec![Grasp { part: 1, site: grip }],
        script: Script::Move {
            offset: Vec3::new(0.0, 0.0, 0.5),
            duration: 0.9,
        },
        total_time: 2.0,
        contacts: vec![],
        templates: vec![
            BreakTemplate {
                part: 0,
                kind: FixKind::Scale,
                axes: vec![Axis::PosX, Axis::NegX, Axis::PosY, Axis::NegY],
                values: Values::Factors(vec![0.5]),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Scale,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: Values::Factors(vec![0.5, 0.625]),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Translate,
                axes: vec![Axis::PosX, Axis::NegX, Axis::PosY, Axis::NegY, Axis::PosZ],
                values: ext(0.2, 0.30),
            },
        ],
    }
}

fn kitchen_pot(rng: &mut SplitMix64) -> Design {
    let (r, h) = (rng.uniform(0.14, 0.17), rng.uniform(0.16, 0.19));
    let mut b = Builder::default();
    b.cylinder(0, Vec3::zeros(), r, h, None);
    b.disc(0, Vec3::zeros(), r);
    let hz = 0.8 * h;
    let mut grasps = Vec::new();
    let mut joints = Vec::new();
    let mut pivots = vec![Vec3::new(0.0, 0.0, h / 2.0)];
    for (k, s) in [1.0, -1.0].into_iter().enumerate() {
        let part = k + 1;
        b.block(part, Vec3::new(s * (r + 0.055), 0.0, hz), Vec3::new(0.035, 0.012, 0.008));
        let grip = Vec3::new(s * (r + 0.11), 0.0, hz);
        b.block(part, grip, Vec3::new(0.025, 0.035, 0.02));
        grasps.push(Grasp { part, site: grip });
        joints.push(JointSpec {
            kind: JointKind::Spherical,
            part_a: 0,
            part_b: part,
            anchor: Vec3::new(s * (r + 0.02), 0.0, hz),
            axis: Vec3::x(),
            limits: None,
        });
        pivots.push(Vec3::new(0.0, 0.0, hz));
    }
    pivots.push(Vec3::new(0.0, 0.0, 0.1));
    let water = water_column(Vec3::zeros(), r - 0.045, 0.05, 64);
    Design {
        category: Category::KitchenPot,
        part_names: vec!["body", "handle_left", "handle_right", "water"],
        dense: b,
        water,
        water_part: Some(3),
        pivots,
        joints,
        rules: CategoryRules {
            category: Category::KitchenPot,
            roles: Roles {
                body: Some(0),
                ..Roles::default()
            },
            water: vec![],
            opening: None,
            spout: None,
            forward: Vec3::y(),
        },
        grasps,
        script: Script::Move {
            offset: Vec3::new(0.0, 0.0, 0.5),
            duration: 2.0 / 3.0,
        },
        total_time: 3.0,
        contacts: vec![],
        templates: vec![
            BreakTemplate {
                part: 1,
                kind: FixKind::Rotate,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: Values::Degrees(70, 90),
            },
            BreakTemplate {
                part: 2,
                kind: FixKind::Rotate,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: Values::Degrees(70, 90),
            },
        ],
    }
}

fn kettle(rng: &mut SplitMix64) -> Design {
    let (r, h) = (rng.uniform(0.12, 0.14), rng.uniform(0.20, 0.24));
    let zh = 0.35 * h;
    let hole_r = 0.065;
    let mut b = Builder::default();
    let hole_c = Vec3::new(0.0, r, zh);
    b.cylinder(0, Vec3::zeros(), r, h, Some((hole_c, hole_r)));
    b.disc(0, Vec3::zeros(), r);
    b.disc(0, Vec3::new(0.0, 0.0, h), r);
    let elev = 35f64.to_radians();
    let dir = Vec3::new(0.0, elev.cos(), elev.sin());
    let len = 0.17;
    let tube_r = 0.05;
    let start = Vec3::new(0.0, r - 0.01, zh);
    b.tube(1, start, dir, len, tube_r);
    let grip = Vec3::new(0.0, -r - 0.09, 0.6 * h);
    b.block(2, Vec3::new(0.0, -r - 0.04, 0.6 * h), Vec3::new(0.012, 0.04, 0.01));
    b.block(2, grip, Vec3::new(0.025, 0.025, 0.05));
    let water = water_column(Vec3::zeros(), r - 0.045, 0.05, 30);
    let center = Vec3::new(0.0, 0.0, h / 2.0);
    Design {
        category: Category::Kettle,
        part_names: vec!["body", "spout", "handle", "water"],
        dense: b,
        water,
        water_part: Some(3),
        pivots: vec![Vec3::new(0.0, 0.0, zh), hole_c, center, Vec3::new(0.0, 0.0, 0.1)],
        joints: vec![
            JointSpec {
                kind: JointKind::Fixed,
                part_a: 0,
                part_b: 1,
                anchor: hole_c,
                axis: dir,
                limits: None,
            },
            JointSpec {
                kind: JointKind::Fixed,
                part_a: 0,
                part_b: 2,
                anchor: Vec3::new(0.0, -r, 0.6 * h),
                axis: Vec3::y(),
                limits: None,
            },
        ],
        rules: CategoryRules {
            category: Category::Kettle,
            roles: Roles {
                body: Some(0),
                spout: Some(1),
                ..Roles::default()
            },
            water: vec![],
            opening: None,
            spout: Some(SpoutExit {
                center: start + dir * len,
                direction: dir,
                radius: tube_r,
            }),
            forward: Vec3::y(),
        },
        grasps: vec![Grasp { part: 2, site: grip }],
        script: Script::Turn {
            pivot: center,
            axis: Vec3::x(),
            angle: -75f64.to_radians(),
            lift: Vec3::new(0.0, 0.0, 0.35),
            duration: 0.6,
        },
        total_time: 3.0,
        contacts: vec![],
        templates: vec![
            BreakTemplate {
                part: 1,
                kind: FixKind::Rotate,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: Values::Degrees(70, 90),
            },
            BreakTemplate {
                part: 1,
                kind: FixKind::Rotate,
                axes: vec![Axis::PosX],
                values: Values::Degrees(30, 60),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Rotate,
                axes: vec![Axis::PosZ, Axis::NegZ],
                values: Values::Degrees(45, 90),
            },
        ],
    }
}

fn usb(rng: &mut SplitMix64) -> Design {
    let (w, l, t) = (rng.uniform(0.12, 0.16), rng.uniform(0.26, 0.32), rng.uniform(0.05, 0.07));
    let chip_l = rng.uniform(0.10, 0.13);
    let mut b = Builder::default();
    b.box_faces(0, Vec3::new(-w / 2.0, 0.0, 0.0), Vec3::new(w / 2.0, l, t), [true; 6]);
    b.box_faces(
        1,
        Vec3::new(-0.045, l + 0.005, t / 2.0 - 0.01),
        Vec3::new(0.045, l + chip_l, t / 2.0 + 0.01),
        [true; 6],
    );
    let c = 0.025;
    let shell_len = l * 0.55 + chip_l;
    let front = l + chip_l - 0.1 + 0.04;
    let back = front - shell_len;
    let (x0, x1, z1) = (-w / 2.0 - c, w / 2.0 + c, t + c);
    b.rect(2, Vec3::new(x0, back, z1), Vec3::new(x1 - x0, 0.0, 0.0), Vec3::new(0.0, shell_len, 0.0));
    b.rect(2, Vec3::new(x0, back, 0.0), Vec3::new(0.0, shell_len, 0.0), Vec3::new(0.0, 0.0, z1));
    b.rect(2, Vec3::new(x1, back, 0.0), Vec3::new(0.0, shell_len, 0.0), Vec3::new(0.0, 0.0, z1));
    let grip = Vec3::new(0.0, (front + back) / 2.0, z1 + 0.075);
    b.block(2, Vec3::new(0.0, grip.y, z1 + 0.03), Vec3::new(0.01, 0.01, 0.03));
    b.block(2, grip, Vec3::new(0.03, 0.04, 0.02));
    let anchor = Vec3::new(0.0, (front + back) / 2.0, t / 2.0);
    let ext = |lo: f64, hi: f64| Values::Extent(lo, hi);
    Design {
        category: Category::Usb,
        part_names: vec!["body", "chip", "shell"],
        dense: b,
        water: vec![],
        water_part: None,
        pivots: vec![
            Vec3::new(0.0, l / 2.0, t / 2.0),
            Vec3::new(0.0, l, t / 2.0),
            Vec3::new(0.0, (front + back) / 2.0, z1 / 2.0),
        ],
        joints: vec![
            JointSpec {
                kind: JointKind::Fixed,
                part_a: 0,
                part_b: 1,
                anchor: Vec3::new(0.0, l, t / 2.0),
                axis: Vec3::y(),
                limits: None,
            },
            JointSpec {
                kind: JointKind::Prismatic,
                part_a: 0,
                part_b: 2,
                anchor,
                axis: Vec3::y(),
                limits: Some((-0.05, 0.2)),
            },
        ],
        rules: CategoryRules {
            category: Category::Usb,
            roles: Roles {
                body: Some(0),
                chip: Some(1),
                shell: Some(2),
                ..Roles::default()
            },
            water: vec![],
            opening: None,
            spout: None,
            forward: Vec3::y(),
        },
        grasps: vec![Grasp { part: 2, site: grip }],
        script: Script::Move {
            offset: Vec3::new(0.0, 0.1, 0.0),
            duration: 0.9,
        },
        total_time: 1.5,
        contacts: vec![],
        templates: vec![
            BreakTemplate {
                part: 2,
                kind: FixKind::Translate,
                axes: vec![Axis::NegY],
                values: ext(0.2, 0.30),
            },
            BreakTemplate {
                part: 2,
                kind: FixKind::Translate,
                axes: vec![Axis::PosX, Axis::NegX, Axis::PosZ],
                values: ext(0.2, 0.30),
            },
            BreakTemplate {
                part: 2,
                kind: FixKind::Scale,
                axes: vec![Axis::PosY, Axis::NegY],
                values: Values::Factors(vec![0.5, 0.625]),
            },
            BreakTemplate {
                part: 1,
                kind: FixKind::Scale,
                axes: vec![Axis::PosY, Axis::NegY],
                values: Values::Factors(vec![1.6, 2.0]),
            },
            BreakTemplate {
                part: 0,
                kind: FixKind::Translate,
                axes: vec![Axis::PosY],
                values: ext(0.2, 0.30),
            },
        ],
    }
}

fn cart(rng: &mut SplitMix64) -> Design {
    let (w, l) = (rng.uniform(0.40, 0.50), rng.uniform(0.55, 0.70));
    let rw = 0.07;
    let zb = 2.0 * rw + 0.03;
    let mut b = Builder::default();
    b.box_faces(
        0,
        Vec3::new(-w / 2.0, -l / 2.0, zb),
        Vec3::new(w / 2.0, l / 2.0, zb + 0.18),
        [true, true, true, true, true, false],
    );
    let mut joints = Vec::new();
    let mut pivots = vec![Vec3::new(0.0, 0.0, zb)];
    let mut part = 1;
    let mut contacts = Vec::new();
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            let c = Vec3::new(sx * (w / 2.0 + 0.04), sy * (l / 2.0 - 0.1), rw);
            b.disc_oriented(part, c - Vec3::new(0.02, 0.0, 0.0), Vec3::x(), rw);
            b.disc_oriented(part, c + Vec3::new(0.02, 0.0, 0.0), Vec3::x(), rw);
            b.tube(part, c - Vec3::new(0.02, 0.0, 0.0), Vec3::x(), 0.04, rw);
            for dx in [-0.02, 0.02] {
                contacts.push(b.pts.len());
                b.push(part, c + Vec3::new(dx, 0.0, -rw));
            }
            joints.push(JointSpec {
                kind: JointKind::Revolute,
                part_a: 0,
                part_b: part,
                anchor: c,
                axis: Vec3::x(),
                limits: None,
            });
            pivots.push(c);
            part += 1;
        }
    }
    let handle = part;
    let base = Vec3::new(0.0, l / 2.0 + 0.03, zb + 0.09);
    let reach = Vec3::new(0.0, 0.32, 0.12);
    b.tube(handle, base, reach, reach.norm(), 0.012);
    let grip = base + reach + Vec3::new(0.0, 0.03, 0.0);
    b.block(handle, grip, Vec3::new(0.06, 0.025, 0.025));
    joints.push(JointSpec {
        kind: JointKind::Revolute,
        part_a: 0,
        part_b: handle,
        anchor: base,
        axis: Vec3::z(),
        limits: Some((-80f64.to_radians(), 80f64.to_radians())),
    });
    pivots.push(base);
    let wheel_templates = [1, 3].into_iter().map(|p| BreakTemplate {
        part: p,
        kind: FixKind::Rotate,
        axes: vec![Axis::PosZ, Axis::NegZ],
        values: Values::Degrees(40, 90),
    });
    Design {
        category: Category::Cart,
        part_names: vec!["body", "wheel_0", "wheel_1", "wheel_2", "wheel_3", "handle"],
        dense: b,
        water: vec![],
        water_part: None,
        pivots,
        joints,
        rules: CategoryRules {
            category: Category::Cart,
            roles: Roles {
                body: Some(0),
                ..Roles::default()
            },
            water: vec![],
            opening: None,
            spout: None,
            forward: Vec3::y(),
        },
        grasps: vec![Grasp { part: handle, site: grip }],
        script: Script::Move {
            offset: Vec3::new(0.0, 1.0, 0.0),
            duration: 0.9,
        },
        total_time: 2.5,
        contacts,
        templates: wheel_templates.collect(),
    }
}

/// Draw a concrete break from one of the object's templates.
pub fn sample_break(obj: &Object, rng: &mut SplitMix64) -> Option<Fix> {
    if obj.templates.is_empty() {
        return None;
    }
    let t = rng.pick(&obj.templates).clone();
    let axis = *rng.pick(&t.axes);
    let value = match &t.values {
        Values::Degrees(lo, hi) => (*lo + rng.below((hi - lo + 1) as usize) as i64) as f64,
        Values::Factors(v) => *rng.pick(v),
        Values::Extent(lo, hi) => {
            let ext = obj.part_extent(t.part);
            let (a, b) = ((lo.max(0.05) * ext * 100.0).ceil() as i64, (hi.min(0.30) * ext * 100.0).floor() as i64);
            if a > b {
                return None;
            }
            (a + rng.below((b - a + 1) as usize) as i64) as f64 / 100.0
        }
    };
    Fix::new(t.kind, t.part, axis, value).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objects_have_requested_size_and_valid_roots() {
        for (k, c) in Category::ALL.into_iter().enumerate() {
            let mut rng = SplitMix64::new(k as u64 + 1);
            let o = build_object(c, &mut rng, 512).unwrap();
            assert_eq!(o.cloud.len(), 512);
            for (p, &r) in o.roots.iter().enumerate() {
                assert_eq!(o.labels.labels[r], p);
            }
            assert!(o.labels.labels.iter().all(|&l| l < o.part_names.len()));
            for p in 0..o.part_names.len() {
                assert!(o.labels.members(p).len() >= 3, "{c} part {p} too small");
            }
            let ip = o.interacting_points(16);
            assert_eq!(ip.len(), 16);
            let r = half_median_spacing(o.cloud.points());
            assert!(o.cloud.points().iter().all(|p| p.z > 0.0), "{c} {r}");
        }
    }

    #[test]
    fn script_endpoints() {
        let s = Script::Move {
            offset: Vec3::new(0.0, 0.0, 0.5),
            duration: 0.9,
        };
        assert_eq!(s.pose(0.0).translation, Vec3::zeros());
        assert_eq!(s.pose(1.0).translation, Vec3::new(0.0, 0.0, 0.5));
        let t = Script::Turn {
            pivot: Vec3::new(1.0, 0.0, 0.0),
            axis: Vec3::z(),
            angle: FRAC_PI_2,
            lift: Vec3::zeros(),
            duration: 1.0,
        };
        let p = t.pose(1.0).apply(&Vec3::new(2.0, 0.0, 0.0));
        assert!((p - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn break_inverses_are_valid_fixes() {
        for (k, c) in Category::ALL.into_iter().enumerate() {
            let mut rng = SplitMix64::new(100 + k as u64);
            let o = build_object(c, &mut rng, 512).unwrap();
            for _ in 0..20 {
                if let Some(f) = sample_break(&o, &mut rng) {
                    let inv = f.inverse();
                    assert!(Fix::new(inv.kind, inv.part, inv.axis, inv.value).is_ok(), "{f:?}");
                    assert!(c.allowed_kinds().contains(&f.kind));
                }
            }
        }
    }
}

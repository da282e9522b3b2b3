//! Particle dynamics: rigid clusters via shape matching, free fluid particles,
//! pairwise contacts, a ground plane, joints between clusters and kinematic
//! control from interacting points.

use std::collections::HashSet;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    centroid, half_median_spacing, kabsch_fit, kabsch_fit_weighted, radius_neighbors, rotation_about,
    rotation_vector, skew, Affine, PointCloud, RigidTransform, SpatialHash, Vec3,
};
use crate::seg::HardLabels;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub gravity: f64,
    pub substeps: usize,
    pub solver_iters: usize,
    pub neighbor_radius: f64,
    pub control_radius: f64,
    /// Object particle radius; half the median nearest-neighbour spacing when unset.
    pub particle_radius: Option<f64>,
    pub fluid_radius: f64,
    pub ground_z: f64,
    /// Fraction of tangential motion removed per contact projection.
    pub ground_friction: f64,
    /// Weight of pinned particles when shape matching a partially pinned cluster.
    pub pin_weight: f64,
    /// Half distance between the two coincidence points of a revolute joint.
    pub joint_lever: f64,
    /// Speed above which a rollout is declared divergent.
    pub max_speed: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            substeps: 24,
            solver_iters: 4,
            neighbor_radius: 0.08,
            control_radius: 0.05,
            particle_radius: None,
            fluid_radius: 0.02,
            ground_z: 0.0,
            ground_friction: 1.0,
            pin_weight: 1e6,
            joint_lever: 0.1,
            max_speed: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    /// Rotation about `axis` through `anchor`. Without limits the child is a
    /// freely spinning wheel: it rides rigidly with the parent and only resists
    /// ground sliding along its axle.
    Revolute,
    /// Translation along `axis`, rotation locked.
    Prismatic,
    /// Rigid attachment.
    Fixed,
    /// Ball joint at `anchor`.
    Spherical,
}

/// A joint between two parts (or clusters, once mapped), described in the
/// frame-0 configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub kind: JointKind,
    pub part_a: usize,
    pub part_b: usize,
    pub anchor: Vec3,
    pub axis: Vec3,
    /// Radians for revolute, metres for prismatic, relative to frame 0.
    pub limits: Option<(f64, f64)>,
}

impl JointSpec {
    /// The joint after an affine edit of its child part.
    pub fn transformed(&self, map: &Affine) -> JointSpec {
        let axis = map.apply_vector(&self.axis);
        JointSpec {
            anchor: map.apply(&self.anchor),
            axis: if axis.norm() > 0.0 { axis.normalize() } else { self.axis },
            ..self.clone()
        }
    }
}

/// Particles grouped into clusters with one root each, plus the edge sets used
/// by the simulator.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    pub clusters: HardLabels,
    pub roots: Vec<usize>,
    pub fluid: Vec<bool>,
    pub neighbor_edges: Vec<(usize, usize)>,
    pub leaf_to_root: Vec<(usize, usize)>,
    pub root_to_leaf: Vec<(usize, usize)>,
    pub root_to_root: Vec<(usize, usize)>,
    /// `(interacting point, particle)`.
    pub control_edges: Vec<(usize, usize)>,
}

impl InteractionGraph {
    pub fn with_fluid(mut self, cluster: usize) -> Self {
        if cluster < self.fluid.len() {
            self.fluid[cluster] = true;
        }
        self
    }

    pub fn controlled(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.control_edges.iter().map(|e| e.1).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

pub fn build_interaction_graph(
    cloud: &PointCloud,
    clusters: &HardLabels,
    roots: &[usize],
    interacting: &[Vec3],
    params: &SimParams,
) -> Result<InteractionGraph> {
    let n = cloud.len();
    if clusters.len() != n {
        return Err(Error::Size(format!("{} labels for {n} particles", clusters.len())));
    }
    if roots.len() != clusters.count {
        return Err(Error::RootConsistency(format!(
            "{} roots for {} clusters",
            roots.len(),
            clusters.count
        )));
    }
    for (c, &r) in roots.iter().enumerate() {
        if clusters.labels.get(r) != Some(&c) {
            return Err(Error::RootConsistency(format!("cluster {c} does not contain its root {r}")));
        }
    }
    let mut neighbor_edges = Vec::new();
    for (i, j) in radius_neighbors(cloud, params.neighbor_radius) {
        neighbor_edges.push((i, j));
        neighbor_edges.push((j, i));
    }
    let is_root: HashSet<usize> = roots.iter().copied().collect();
    let mut leaf_to_root = Vec::new();
    let mut root_to_leaf = Vec::new();
    for i in 0..n {
        if !is_root.contains(&i) {
            let r = roots[clusters.labels[i]];
            leaf_to_root.push((i, r));
            root_to_leaf.push((r, i));
        }
    }
    let mut root_to_root = Vec::new();
    for &a in roots {
        for &b in roots {
            if a != b {
                root_to_root.push((a, b));
            }
        }
    }
    let mut control_edges = Vec::new();
    for (k, ip) in interacting.iter().enumerate() {
        for (i, p) in cloud.points().iter().enumerate() {
            if (p - ip).norm() <= params.control_radius {
                control_edges.push((k, i));
            }
        }
    }
    Ok(InteractionGraph {
        clusters: clusters.clone(),
        roots: roots.to_vec(),
        fluid: vec![false; clusters.count],
        neighbor_edges,
        leaf_to_root,
        root_to_leaf,
        root_to_root,
        control_edges,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    /// Rest configuration defining each cluster's shape.
    pub rest: Vec<Vec3>,
}

impl SimState {
    pub fn at_rest(cloud: &PointCloud) -> Self {
        Self {
            positions: cloud.points().to_vec(),
            velocities: vec![Vec3::zeros(); cloud.len()],
            rest: cloud.points().to_vec(),
        }
    }
}

/// Particle positions at every frame plus the interacting points used.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub frames: Vec<Vec<Vec3>>,
    pub interacting: Vec<Vec<Vec3>>,
    pub radii: Vec<f64>,
    pub steps: usize,
}

/// Goal positions of the best rigid fit of `rest` to `current`; `None` for
/// fewer than three or degenerate points.
pub fn shape_match_project(current: &[Vec3], rest: &[Vec3]) -> Option<Vec<Vec3>> {
    if current.len() < 3 || current.len() != rest.len() {
        return None;
    }
    let t = kabsch_fit(rest, current).ok()?;
    Some(rest.iter().map(|p| t.apply(p)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Free,
    /// Fully determined by pinned particles.
    Kinematic,
    /// Pinned but not fully determined (fewer than three or collinear pins).
    Anchored,
}

#[derive(Clone, Debug)]
struct Body {
    members: Vec<usize>,
    local: Vec<Vec3>,
    rest_centroid: Vec3,
    pins: Vec<usize>,
    mode: Mode,
    rot: Matrix3<f64>,
    com: Vec3,
    inv_mass: f64,
    inv_inertia_local: Matrix3<f64>,
}

impl Body {
    fn inv_inertia(&self) -> Matrix3<f64> {
        if self.mode == Mode::Free {
            self.rot * self.inv_inertia_local * self.rot.transpose()
        } else {
            Matrix3::zeros()
        }
    }

    fn w(&self) -> f64 {
        if self.mode == Mode::Free {
            self.inv_mass
        } else {
            0.0
        }
    }

    fn to_world(&self, local: &Vec3) -> Vec3 {
        self.rot * local + self.com
    }

    fn write(&self, x: &mut [Vec3]) {
        for (k, &i) in self.members.iter().enumerate() {
            x[i] = self.rot * self.local[k] + self.com;
        }
    }

    fn nudge(&mut self, dc: Vec3, dw: Vec3, x: &mut [Vec3]) {
        let a = dw.norm();
        if a > 0.0 {
            self.rot = rotation_about(dw, a) * self.rot;
        }
        self.com += dc;
        self.write(x);
    }
}

#[derive(Clone, Debug)]
struct ActiveJoint {
    kind: JointKind,
    a: usize,
    b: usize,
    anchor_a: Vec3,
    anchor_b: Vec3,
    axis_a: Vec3,
    axis_b: Vec3,
    ref_a: Vec3,
    ref_b: Vec3,
    limits: Option<(f64, f64)>,
}

/// Precomputed simulation structure for one rollout.
pub struct Simulator {
    params: SimParams,
    radius: Vec<f64>,
    pinned: Vec<bool>,
    body_of: Vec<Option<usize>>,
    bodies: Vec<Body>,
    joints: Vec<ActiveJoint>,
    no_collide: HashSet<(usize, usize)>,
    axle: Vec<Option<Vec3>>,
    controlled: Vec<usize>,
    control_ref: Vec<Vec3>,
    control_ips: Vec<Vec<usize>>,
    ip_ref: Vec<Vec3>,
    max_radius: f64,
}

impl Simulator {
    /// `joints` refer to cluster indices of `graph`.
    pub fn new(
        state: &SimState,
        graph: &InteractionGraph,
        joints: &[JointSpec],
        ip_reference: &[Vec3],
        params: &SimParams,
    ) -> Result<Self> {
        let n = state.positions.len();
        if graph.clusters.len() != n || state.rest.len() != n || state.velocities.len() != n {
            return Err(Error::Size("state and graph disagree on particle count".into()));
        }
        let nc = graph.clusters.count;
        for j in joints {
            if j.part_a >= nc || j.part_b >= nc {
                return Err(Error::Reference(format!(
                    "joint between clusters {} and {} but only {nc} clusters",
                    j.part_a, j.part_b
                )));
            }
        }
        let fluid_particle = |i: usize| graph.fluid[graph.clusters.labels[i]];
        let solid: Vec<Vec3> = (0..n).filter(|&i| !fluid_particle(i)).map(|i| state.rest[i]).collect();
        let r_obj = params
            .particle_radius
            .unwrap_or_else(|| half_median_spacing(&solid).max(1e-4));
        let radius: Vec<f64> = (0..n)
            .map(|i| if fluid_particle(i) { params.fluid_radius } else { r_obj })
            .collect();

        // Merge clusters joined rigidly or by free wheels.
        let mut parent: Vec<usize> = (0..nc).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        let merges = |j: &JointSpec| {
            j.kind == JointKind::Fixed || (j.kind == JointKind::Revolute && j.limits.is_none())
        };
        for j in joints {
            if merges(j) && !graph.fluid[j.part_a] && !graph.fluid[j.part_b] {
                let (ra, rb) = (find(&mut parent, j.part_a), find(&mut parent, j.part_b));
                if ra != rb {
                    parent[rb.max(ra)] = ra.min(rb);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); nc];
        for i in 0..n {
            let c = graph.clusters.labels[i];
            if !graph.fluid[c] {
                groups[find(&mut parent, c)].push(i);
            }
        }

        let mut pinned = vec![false; n];
        let mut controlled = Vec::new();
        let mut control_ips: Vec<Vec<usize>> = Vec::new();
        {
            let mut by_particle: Vec<Vec<usize>> = vec![Vec::new(); n];
            for &(k, i) in &graph.control_edges {
                if k >= ip_reference.len() || i >= n {
                    return Err(Error::Reference(format!("control edge ({k}, {i}) out of range")));
                }
                by_particle[i].push(k);
            }
            for (i, ks) in by_particle.into_iter().enumerate() {
                if !ks.is_empty() {
                    pinned[i] = true;
                    controlled.push(i);
                    control_ips.push(ks);
                }
            }
        }

        let mut body_of = vec![None; n];
        let mut bodies = Vec::new();
        let mut cluster_body = vec![None; nc];
        for (g, members) in groups.into_iter().enumerate() {
            if members.len() < 3 {
                continue;
            }
            let rest: Vec<Vec3> = members.iter().map(|&i| state.rest[i]).collect();
            let c = centroid(&rest);
            let local: Vec<Vec3> = rest.iter().map(|p| p - c).collect();
            if kabsch_fit(&local, &local).is_err() {
                continue;
            }
            let mut inertia = Matrix3::zeros();
            for r in &local {
                inertia += Matrix3::identity() * r.norm_squared() - r * r.transpose();
            }
            let m = members.len() as f64;
            inertia += Matrix3::identity() * (1e-6 * m);
            let pins: Vec<usize> = (0..members.len()).filter(|&k| pinned[members[k]]).collect();
            let mode = if pins.is_empty() {
                Mode::Free
            } else {
                let pin_pts: Vec<Vec3> = pins.iter().map(|&k| local[k]).collect();
                if kabsch_fit(&pin_pts, &pin_pts).is_ok() {
                    Mode::Kinematic
                } else {
                    Mode::Anchored
                }
            };
            let id = bodies.len();
            for &i in &members {
                body_of[i] = Some(id);
            }
            for cl in 0..nc {
                if find(&mut parent, cl) == g && !graph.fluid[cl] {
                    cluster_body[cl] = Some(id);
                }
            }
            bodies.push(Body {
                members,
                local,
                rest_centroid: c,
                pins,
                mode,
                rot: Matrix3::identity(),
                com: c,
                inv_mass: 1.0 / m,
                inv_inertia_local: inertia.try_inverse().unwrap_or_else(Matrix3::zeros),
            });
        }

        // Bodies start at their rest pose; carry over any initial offset.
        for b in &mut bodies {
            let cur: Vec<Vec3> = b.members.iter().map(|&i| state.positions[i]).collect();
            if let Ok(t) = kabsch_fit(&b.local, &cur) {
                b.rot = t.rotation;
                b.com = t.translation;
            }
        }

        let mut axle = vec![None; n];
        let mut active = Vec::new();
        let mut no_collide = HashSet::new();
        for j in joints {
            let (Some(a), Some(b)) = (cluster_body[j.part_a], cluster_body[j.part_b]) else {
                continue;
            };
            let axis = if j.axis.norm() > 0.0 { j.axis.normalize() } else { Vec3::z() };
            if j.kind == JointKind::Revolute && j.limits.is_none() {
                let body = &bodies[a];
                for i in graph.clusters.members(j.part_b) {
                    axle[i] = Some(body.rot.transpose() * axis);
                }
                continue;
            }
            if a == b {
                continue;
            }
            let (ba, bb) = (&bodies[a], &bodies[b]);
            let reference = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let reference = (reference - axis * axis.dot(&reference)).normalize();
            active.push(ActiveJoint {
                kind: j.kind,
                a,
                b,
                anchor_a: ba.rot.transpose() * (j.anchor - ba.com),
                anchor_b: bb.rot.transpose() * (j.anchor - bb.com),
                axis_a: ba.rot.transpose() * axis,
                axis_b: bb.rot.transpose() * axis,
                ref_a: ba.rot.transpose() * reference,
                ref_b: bb.rot.transpose() * reference,
                limits: j.limits,
            });
            no_collide.insert((a.min(b), a.max(b)));
        }

        let control_ref = controlled.iter().map(|&i| state.positions[i]).collect();
        let max_radius = radius.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            params: params.clone(),
            radius,
            pinned,
            body_of,
            bodies,
            joints: active,
            no_collide,
            axle,
            controlled,
            control_ref,
            control_ips,
            ip_ref: ip_reference.to_vec(),
            max_radius,
        })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radius
    }

    fn control_targets(&self, ip: &[Vec3]) -> Vec<Vec3> {
        let d: Vec<Vec3> = ip.iter().zip(&self.ip_ref).map(|(a, b)| a - b).collect();
        if d.is_empty() {
            return self.control_ref.clone();
        }
        if d.iter().all(|v| (v - d[0]).amax() == 0.0) {
            return self.control_ref.iter().map(|p| p + d[0]).collect();
        }
        if let Ok(t) = kabsch_fit(&self.ip_ref, ip) {
            return self.control_ref.iter().map(|p| t.apply(p)).collect();
        }
        self.control_ref
            .iter()
            .zip(&self.control_ips)
            .map(|(p, ks)| p + ks.iter().map(|&k| d[k]).sum::<Vec3>() / ks.len() as f64)
            .collect()
    }

    fn particle_w(&self, i: usize) -> f64 {
        if self.pinned[i] {
            return 0.0;
        }
        match self.body_of[i] {
            Some(b) if self.bodies[b].mode == Mode::Kinematic => 0.0,
            _ => 1.0,
        }
    }

    /// Advance one substep towards interacting points `ip` (at the end time).
    pub fn step(&mut self, state: &mut SimState, ip: &[Vec3], dt: f64, step_index: usize) -> Result<()> {
        let n = state.positions.len();
        let x_old = state.positions.clone();
        let targets = self.control_targets(ip);
        let mut is_target = vec![None; n];
        for (k, &i) in self.controlled.iter().enumerate() {
            is_target[i] = Some(targets[k]);
        }
        let g = Vec3::new(0.0, 0.0, -self.params.gravity);
        let x = &mut state.positions;
        for i in 0..n {
            if let Some(t) = is_target[i] {
                x[i] = t;
            } else {
                state.velocities[i] += g * dt;
                x[i] += state.velocities[i] * dt;
            }
        }
        for b in &mut self.bodies {
            if b.mode == Mode::Kinematic {
                let src: Vec<Vec3> = b.pins.iter().map(|&k| b.local[k]).collect();
                let dst: Vec<Vec3> = b.pins.iter().map(|&k| x[b.members[k]]).collect();
                if let Ok(t) = kabsch_fit(&src, &dst) {
                    b.rot = t.rotation;
                    b.com = t.translation;
                }
                b.write(x);
            }
        }

        let contacts = self.contact_pairs(x);
        for _ in 0..self.params.solver_iters {
            self.project_contacts(x, &contacts);
            self.project_ground(x, &x_old);
            self.shape_match(x);
            self.project_joints(x);
        }
        self.final_ground(x);

        for i in 0..n {
            let v = (x[i] - x_old[i]) / dt;
            if !v.iter().all(|c| c.is_finite()) || v.norm() > self.params.max_speed {
                return Err(Error::Divergence { step: step_index });
            }
            state.velocities[i] = v;
        }
        Ok(())
    }

    fn contact_pairs(&self, x: &[Vec3]) -> Vec<(usize, usize)> {
        let cell = 2.0 * self.max_radius * 1.5;
        let hash = SpatialHash::new(x, cell);
        let mut out = Vec::new();
        for i in 0..x.len() {
            let wi = self.particle_w(i);
            let bi = self.body_of[i];
            hash.for_each_near(&x[i], |j| {
                if j <= i {
                    return;
                }
                if wi == 0.0 && self.particle_w(j) == 0.0 {
                    return;
                }
                if let (Some(a), Some(b)) = (bi, self.body_of[j]) {
                    if a == b || self.no_collide.contains(&(a.min(b), a.max(b))) {
                        return;
                    }
                }
                let reach = (self.radius[i] + self.radius[j]) * 1.5;
                if (x[i] - x[j]).norm_squared() <= reach * reach {
                    out.push((i, j));
                }
            });
        }
        out
    }

    fn project_contacts(&self, x: &mut [Vec3], pairs: &[(usize, usize)]) {
        for &(i, j) in pairs {
            let d = x[i] - x[j];
            let dist = d.norm();
            let pen = self.radius[i] + self.radius[j] - dist;
            if pen <= 0.0 || dist == 0.0 {
                continue;
            }
            let (wi, wj) = (self.particle_w(i), self.particle_w(j));
            let w = wi + wj;
            if w == 0.0 {
                continue;
            }
            let corr = d * (pen / (dist * w));
            x[i] += corr * wi;
            x[j] -= corr * wj;
        }
    }

    fn project_ground(&self, x: &mut [Vec3], x_old: &[Vec3]) {
        let z0 = self.params.ground_z;
        let mu = self.params.ground_friction;
        for i in 0..x.len() {
            if self.particle_w(i) == 0.0 {
                continue;
            }
            let floor = z0 + self.radius[i];
            if x[i].z >= floor {
                continue;
            }
            x[i].z = floor;
            let slide = Vec3::new(x[i].x - x_old[i].x, x[i].y - x_old[i].y, 0.0);
            match (self.axle[i], self.body_of[i]) {
                (Some(local), Some(b)) => {
                    let a = self.bodies[b].rot * local;
                    let a = Vec3::new(a.x, a.y, 0.0);
                    if a.norm() > 1e-9 {
                        let a = a.normalize();
                        x[i] -= a * (mu * slide.dot(&a));
                    }
                }
                _ => x[i] -= slide * mu,
            }
        }
    }

    fn shape_match(&mut self, x: &mut [Vec3]) {
        let pin_w = self.params.pin_weight;
        for b in &mut self.bodies {
            let fit = match b.mode {
                Mode::Kinematic => continue,
                Mode::Free => {
                    let cur: Vec<Vec3> = b.members.iter().map(|&i| x[i]).collect();
                    kabsch_fit(&b.local, &cur)
                }
                Mode::Anchored => {
                    let cur: Vec<Vec3> = b.members.iter().map(|&i| x[i]).collect();
                    let mut w = vec![1.0; b.members.len()];
                    for &k in &b.pins {
                        w[k] = pin_w;
                    }
                    kabsch_fit_weighted(&b.local, &cur, Some(&w))
                }
            };
            if let Ok(t) = fit {
                b.rot = t.rotation;
                b.com = t.translation;
                b.write(x);
            }
        }
    }

    fn project_joints(&mut self, x: &mut [Vec3]) {
        for k in 0..self.joints.len() {
            let j = self.joints[k].clone();
            if self.bodies[j.a].w() == 0.0 && self.bodies[j.b].w() == 0.0 {
                continue;
            }
            match j.kind {
                JointKind::Spherical => {
                    let pa = self.bodies[j.a].to_world(&j.anchor_a);
                    let pb = self.bodies[j.b].to_world(&j.anchor_b);
                    self.point_constraint(j.a, j.b, pa, pb, x);
                }
                JointKind::Revolute => {
                    let h = self.params.joint_lever;
                    for s in [-1.0, 1.0] {
                        let pa = self.bodies[j.a].to_world(&(j.anchor_a + j.axis_a * (s * h)));
                        let pb = self.bodies[j.b].to_world(&(j.anchor_b + j.axis_b * (s * h)));
                        self.point_constraint(j.a, j.b, pa, pb, x);
                    }
                    if let Some((lo, hi)) = j.limits {
                        let (ba, bb) = (&self.bodies[j.a], &self.bodies[j.b]);
                        let n = ba.rot * j.axis_a;
                        let ua = ba.rot * j.ref_a;
                        let ub = bb.rot * j.ref_b;
                        let ub = ub - n * n.dot(&ub);
                        let angle = n.dot(&ua.cross(&ub)).atan2(ua.dot(&ub));
                        let excess = if angle > hi {
                            angle - hi
                        } else if angle < lo {
                            angle - lo
                        } else {
                            0.0
                        };
                        if excess != 0.0 {
                            self.angular_constraint(j.a, j.b, -n * excess, x);
                        }
                    }
                }
                JointKind::Prismatic => {
                    let e = self.bodies[j.a].rot * self.bodies[j.b].rot.transpose();
                    self.angular_constraint(j.a, j.b, rotation_vector(&e), x);
                    let pa = self.bodies[j.a].to_world(&j.anchor_a);
                    let pb = self.bodies[j.b].to_world(&j.anchor_b);
                    let n = self.bodies[j.a].rot * j.axis_a;
                    let s = (pb - pa).dot(&n);
                    let s = match j.limits {
                        Some((lo, hi)) => s.clamp(lo, hi),
                        None => s,
                    };
                    self.linear_constraint(j.a, j.b, pa + n * s - pb, x);
                }
                JointKind::Fixed => {}
            }
        }
    }

    /// Move body `b`'s point `pb` and body `a`'s point `pa` together.
    fn point_constraint(&mut self, a: usize, b: usize, pa: Vec3, pb: Vec3, x: &mut [Vec3]) {
        let delta = pa - pb;
        if delta.norm_squared() == 0.0 {
            return;
        }
        let (ba, bb) = (&self.bodies[a], &self.bodies[b]);
        let ra = pa - ba.com;
        let rb = pb - bb.com;
        let (ia, ib) = (ba.inv_inertia(), bb.inv_inertia());
        let k = Matrix3::identity() * (ba.w() + bb.w()) - skew(&ra) * ia * skew(&ra) - skew(&rb) * ib * skew(&rb);
        let Some(kinv) = k.try_inverse() else { return };
        let lambda = kinv * delta;
        let (wa, wb) = (ba.w(), bb.w());
        let dwa = -(ia * ra.cross(&lambda));
        let dwb = ib * rb.cross(&lambda);
        if wb > 0.0 {
            self.bodies[b].nudge(lambda * wb, dwb, x);
        }
        if wa > 0.0 {
            self.bodies[a].nudge(-lambda * wa, dwa, x);
        }
    }

    /// Translate body `b` by `delta` relative to body `a`, split by mass.
    fn linear_constraint(&mut self, a: usize, b: usize, delta: Vec3, x: &mut [Vec3]) {
        let (wa, wb) = (self.bodies[a].w(), self.bodies[b].w());
        let w = wa + wb;
        if w == 0.0 || delta.norm_squared() == 0.0 {
            return;
        }
        if wb > 0.0 {
            self.bodies[b].nudge(delta * (wb / w), Vec3::zeros(), x);
        }
        if wa > 0.0 {
            self.bodies[a].nudge(-delta * (wa / w), Vec3::zeros(), x);
        }
    }

    /// Rotate body `b` by `omega` relative to body `a`, split by inertia.
    fn angular_constraint(&mut self, a: usize, b: usize, omega: Vec3, x: &mut [Vec3]) {
        let (ia, ib) = (self.bodies[a].inv_inertia(), self.bodies[b].inv_inertia());
        let Some(kinv) = (ia + ib).try_inverse() else { return };
        let l = kinv * omega;
        if self.bodies[b].w() > 0.0 {
            let dw = ib * l;
            self.bodies[b].nudge(Vec3::zeros(), dw, x);
        }
        if self.bodies[a].w() > 0.0 {
            let dw = -(ia * l);
            self.bodies[a].nudge(Vec3::zeros(), dw, x);
        }
    }

    fn final_ground(&mut self, x: &mut [Vec3]) {
        let z0 = self.params.ground_z;
        for b in &mut self.bodies {
            if b.mode == Mode::Kinematic {
                continue;
            }
            let lift = b
                .members
                .iter()
                .map(|&i| z0 + self.radius[i] - x[i].z)
                .fold(0.0, f64::max);
            if lift > 0.0 && b.mode == Mode::Free {
                b.com.z += lift;
                b.write(x);
            }
        }
        for i in 0..x.len() {
            if self.body_of[i].is_none() && !self.pinned[i] {
                x[i].z = x[i].z.max(z0 + self.radius[i]);
            }
        }
    }

    /// Current rigid pose of the body holding particle `i`, if any.
    pub fn pose_of(&self, i: usize) -> Option<RigidTransform> {
        self.body_of[i].map(|b| {
            let body = &self.bodies[b];
            RigidTransform {
                rotation: body.rot,
                translation: body.com - body.rot * body.rest_centroid,
            }
        })
    }
}

/// Interacting points at time `t` by linear interpolation between frames.
pub fn interpolate_ip(ip_trajectory: &[Vec<Vec3>], frame_dt: f64, t: f64) -> Vec<Vec3> {
    let last = ip_trajectory.len() - 1;
    let f = (t / frame_dt).clamp(0.0, last as f64);
    let k = (f.floor() as usize).min(last.saturating_sub(1));
    let a = f - k as f64;
    if last == 0 {
        return ip_trajectory[0].clone();
    }
    if a == 0.0 {
        return ip_trajectory[k].clone();
    }
    if a == 1.0 {
        return ip_trajectory[k + 1].clone();
    }
    ip_trajectory[k]
        .iter()
        .zip(&ip_trajectory[k + 1])
        .map(|(p, q)| p + (q - p) * a)
        .collect()
}

/// Simulate `total_time` seconds, recording one frame per interacting-point
/// frame (frame 0 is the initial state).
pub fn rollout(
    initial: &SimState,
    graph: &InteractionGraph,
    ip_trajectory: &[Vec<Vec3>],
    joints: &[JointSpec],
    params: &SimParams,
    total_time: f64,
) -> Result<Rollout> {
    if ip_trajectory.len() < 2 {
        return Err(Error::Size("need at least two interacting-point frames".into()));
    }
    if !(total_time > 0.0) || params.substeps == 0 {
        return Err(Error::Config("total time and substeps must be positive".into()));
    }
    let mut sim = Simulator::new(initial, graph, joints, &ip_trajectory[0], params)?;
    let intervals = ip_trajectory.len() - 1;
    let steps = intervals * params.substeps;
    let dt = total_time / steps as f64;
    let frame_dt = total_time / intervals as f64;
    let mut state = initial.clone();
    let mut frames = Vec::with_capacity(ip_trajectory.len());
    frames.push(state.positions.clone());
    for s in 0..steps {
        let t = (s + 1) as f64 * dt;
        let ip = if (s + 1) % params.substeps == 0 {
            ip_trajectory[(s + 1) / params.substeps].clone()
        } else {
            interpolate_ip(ip_trajectory, frame_dt, t)
        };
        sim.step(&mut state, &ip, dt, s)?;
        if (s + 1) % params.substeps == 0 {
            frames.push(state.positions.clone());
        }
    }
    Ok(Rollout {
        frames,
        interacting: ip_trajectory.to_vec(),
        radii: sim.radii().to_vec(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(center: Vec3, half: f64, k: usize) -> Vec<Vec3> {
        let mut v = Vec::new();
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    let f = |i: usize| -half + 2.0 * half * i as f64 / (k - 1) as f64;
                    v.push(center + Vec3::new(f(a), f(b), f(c)));
                }
            }
        }
        v
    }

    fn single_body(points: Vec<Vec3>) -> (SimState, InteractionGraph) {
        let cloud = PointCloud::new(points).unwrap();
        let labels = HardLabels::new(vec![0; cloud.len()]);
        let g = build_interaction_graph(&cloud, &labels, &[0], &[], &SimParams::default()).unwrap();
        (SimState::at_rest(&cloud), g)
    }

    fn still_ip(frames: usize) -> Vec<Vec<Vec3>> {
        vec![Vec::new(); frames]
    }

    #[test]
    fn graph_edge_counts() {
        let pts = cube(Vec3::new(0.0, 0.0, 1.0), 0.1, 3);
        let n = pts.len();
        let cloud = PointCloud::new(pts).unwrap();
        let labels = HardLabels::new((0..n).map(|i| (i >= 9) as usize + (i >= 18) as usize).collect());
        let p = SimParams::default();
        let g = build_interaction_graph(&cloud, &labels, &[0, 9, 18], &[cloud[0]], &p).unwrap();
        assert_eq!(g.leaf_to_root.len(), n - 3);
        assert_eq!(g.root_to_leaf.len(), n - 3);
        assert_eq!(g.root_to_root.len(), 6);
        assert_eq!(g.neighbor_edges.len(), 2 * radius_neighbors(&cloud, p.neighbor_radius).len());
        assert!(g.control_edges.iter().all(|&(_, i)| (cloud[i] - cloud[0]).norm() <= p.control_radius));
        assert!(matches!(
            build_interaction_graph(&cloud, &labels, &[0, 1, 18], &[], &p),
            Err(Error::RootConsistency(_))
        ));
    }

    #[test]
    fn free_fall_is_ballistic() {
        let (s, g) = single_body(cube(Vec3::new(0.0, 0.0, 20.0), 0.1, 3));
        let p = SimParams::default();
        let r = rollout(&s, &g, &still_ip(10), &[], &p, 1.0).unwrap();
        let drop = s.positions[0].z - r.frames[9][0].z;
        let expect = 0.5 * 9.81;
        assert!((drop - expect).abs() / expect < 0.02, "{drop}");
    }

    #[test]
    fn rests_on_ground_and_stays_rigid() {
        let pts = cube(Vec3::new(0.0, 0.0, 0.3), 0.1, 4);
        let (s, g) = single_body(pts.clone());
        let r = rollout(&s, &g, &still_ip(10), &[], &SimParams::default(), 2.0).unwrap();
        let radius = r.radii[0];
        for f in &r.frames {
            assert!(f.iter().all(|p| p.z >= radius - 1e-6));
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let d0 = (pts[i] - pts[j]).norm();
                    assert!(((f[i] - f[j]).norm() - d0).abs() < 1e-4);
                }
            }
        }
        let lowest = r.frames[9].iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        assert!((lowest - radius).abs() < 1e-3);
    }

    #[test]
    fn deterministic() {
        let (s, g) = single_body(cube(Vec3::new(0.0, 0.0, 0.5), 0.1, 3));
        let p = SimParams::default();
        let a = rollout(&s, &g, &still_ip(10), &[], &p, 1.0).unwrap();
        let b = rollout(&s, &g, &still_ip(10), &[], &p, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kinematic_control_tracks_targets() {
        let pts = cube(Vec3::new(0.0, 0.0, 1.0), 0.1, 3);
        let cloud = PointCloud::new(pts).unwrap();
        let labels = HardLabels::new(vec![0; cloud.len()]);
        let ip0: Vec<Vec3> = (0..4).map(|i| cloud[i * 3]).collect();
        let g = build_interaction_graph(&cloud, &labels, &[0], &ip0, &SimParams::default()).unwrap();
        let traj: Vec<Vec<Vec3>> = (0..10)
            .map(|t| ip0.iter().map(|p| p + Vec3::new(0.0, 0.0, 0.05 * t as f64)).collect())
            .collect();
        let r = rollout(&SimState::at_rest(&cloud), &g, &traj, &[], &SimParams::default(), 2.0).unwrap();
        for (t, f) in r.frames.iter().enumerate() {
            for &(_, i) in &g.control_edges {
                let want = cloud[i] + Vec3::new(0.0, 0.0, 0.05 * t as f64);
                assert!((f[i] - want).norm() < 1e-3);
            }
        }
    }

    #[test]
    fn pendulum_swings_about_hinge() {
        // fixed frame block (pinned) and a hanging plate on a horizontal hinge
        let mut pts = cube(Vec3::new(0.0, 0.0, 1.0), 0.05, 3);
        let n0 = pts.len();
        for a in 0..5 {
            for b in 0..5 {
                pts.push(Vec3::new(-0.1 + 0.05 * a as f64, 0.1 + 0.05 * b as f64, 1.0));
            }
        }
        let labels = HardLabels::new((0..pts.len()).map(|i| (i >= n0) as usize).collect());
        let cloud = PointCloud::new(pts).unwrap();
        let ip0: Vec<Vec3> = (0..n0).map(|i| cloud[i]).collect();
        let p = SimParams::default();
        let g = build_interaction_graph(&cloud, &labels, &[13, n0 + 12], &ip0, &p).unwrap();
        let joint = JointSpec {
            kind: JointKind::Revolute,
            part_a: 0,
            part_b: 1,
            anchor: Vec3::new(0.0, 0.1, 1.0),
            axis: Vec3::x(),
            limits: Some((-3.0, 3.0)),
        };
        let traj = vec![ip0.clone(); 10];
        let r = rollout(&SimState::at_rest(&cloud), &g, &traj, &[joint], &p, 1.5).unwrap();
        let far = n0 + 24;
        let off = |p: Vec3| ((p.y - 0.1).powi(2) + (p.z - 1.0).powi(2)).sqrt();
        let d0 = off(cloud[far]);
        for f in &r.frames {
            assert!((off(f[far]) - d0).abs() < 5e-3);
            assert!((f[far].x - cloud[far].x).abs() < 5e-3);
        }
        assert!(r.frames[9][far].z < 0.9, "plate should have swung down");
    }

    #[test]
    fn too_small_clusters_are_free_particles() {
        assert!(shape_match_project(&[Vec3::zeros(); 2], &[Vec3::zeros(); 2]).is_none());
        let rest = cube(Vec3::zeros(), 0.1, 2);
        let cur: Vec<Vec3> = rest.iter().map(|p| p + Vec3::new(1.0, 0.0, 0.0)).collect();
        let goal = shape_match_project(&cur, &rest).unwrap();
        assert!((goal[3] - cur[3]).norm() < 1e-12);
    }
}

//! Scoring candidate fixes by simulation, and the perception front end that
//! turns a video into clusters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::dsl::{apply_fix, offset_interacting_points, FixChoice};
use crate::dynamics::{build_interaction_graph, rollout, JointSpec, Rollout, SimParams, SimState};
use crate::error::{Error, Result};
use crate::flow::{chain_trajectories, estimate_flow_nn, rectify_flow, RectifiedFlow};
use crate::func::{check_functionality, select_choice, CategoryRules, FunctionalityResult, Thresholds};
use crate::geom::{PointCloud, PointCloudVideo, Vec3};
use crate::seg::{cluster_rigid_motions, HardLabels, RansacParams};

/// Everything needed to simulate a candidate fix on frame 0.
#[derive(Clone, Debug)]
pub struct Task {
    pub category: Category,
    pub cloud: PointCloud,
    pub labels: HardLabels,
    pub roots: Vec<usize>,
    pub pivots: Vec<Vec3>,
    pub joints: Vec<JointSpec>,
    pub rules: CategoryRules,
    pub fluid_parts: Vec<usize>,
    pub ip_trajectory: Vec<Vec<Vec3>>,
    pub total_time: f64,
}

/// Which perception stages use ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    GtFlow,
    GtSeg,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::GtFlow, Mode::GtSeg];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::GtFlow => "gt_flow",
            Mode::GtSeg => "gt_seg",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}' (full, gt_flow, gt_seg)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointSource {
    /// Joints recorded with the scenario.
    Gt,
    /// Clusters move independently.
    None,
}

impl std::str::FromStr for JointSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(JointSource::Gt),
            "none" => Ok(JointSource::None),
            _ => Err(Error::Config(format!("unknown joint source '{s}' (gt, none)"))),
        }
    }
}

/// Clusters the simulator treats as rigid groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Perception {
    pub clusters: HardLabels,
    pub cluster_roots: Vec<usize>,
    pub fluid: Vec<bool>,
}

impl Perception {
    pub fn ground_truth(task: &Task) -> Perception {
        Perception {
            clusters: task.labels.clone(),
            cluster_roots: task.roots.clone(),
            fluid: (0..task.labels.count).map(|p| task.fluid_parts.contains(&p)).collect(),
        }
    }

    /// Clusters from trajectories of the solid points; liquid particles form
    /// one extra fluid cluster.
    pub fn from_trajectories(
        task: &Task,
        trajectories: &[Vec<Vec3>],
        params: &RansacParams,
        seed: u64,
    ) -> Result<Perception> {
        let water: Vec<bool> = task
            .labels
            .labels
            .iter()
            .map(|l| task.fluid_parts.contains(l))
            .collect();
        let solid: Vec<usize> = (0..task.cloud.len()).filter(|&i| !water[i]).collect();
        let sub_cloud = PointCloud::new(task.cloud.subset(&solid))?;
        let sub_traj: Vec<Vec<Vec3>> = solid.iter().map(|&i| trajectories[i].clone()).collect();
        let sub = cluster_rigid_motions(&sub_cloud, &sub_traj, params, seed)?;
        let mut labels = vec![0usize; task.cloud.len()];
        for (k, &i) in solid.iter().enumerate() {
            labels[i] = sub.labels[k];
        }
        let mut count = sub.count;
        if water.iter().any(|&w| w) {
            for (i, &w) in water.iter().enumerate() {
                if w {
                    labels[i] = count;
                }
            }
            count += 1;
        }
        let clusters = HardLabels { labels, count };
        let cluster_roots = cluster_roots(&task.cloud, &clusters)?;
        let fluid = (0..count).map(|c| c >= sub.count).collect();
        Ok(Perception {
            clusters,
            cluster_roots,
            fluid,
        })
    }
}

/// Per cluster, the member closest to the cluster centroid.
pub fn cluster_roots(cloud: &PointCloud, clusters: &HardLabels) -> Result<Vec<usize>> {
    (0..clusters.count)
        .map(|c| {
            let m = clusters.members(c);
            if m.is_empty() {
                return Err(Error::EmptySet(format!("cluster {c} is empty")));
            }
            let centre = crate::geom::centroid(&cloud.subset(&m));
            Ok(*m
                .iter()
                .min_by(|&&a, &&b| {
                    (cloud[a] - centre)
                        .norm_squared()
                        .partial_cmp(&(cloud[b] - centre).norm_squared())
                        .unwrap()
                })
                .unwrap())
        })
        .collect()
}

/// Outcome of simulating one candidate.
#[derive(Clone, Debug)]
pub struct ChoiceOutcome {
    pub result: FunctionalityResult,
    pub diverged: bool,
    pub rollout: Option<Rollout>,
}

/// Apply `choice`, re-target the interaction, simulate and check.
/// Divergent rollouts score zero.
pub fn score_choice(
    task: &Task,
    choice: &FixChoice,
    perception: &Perception,
    joints: JointSource,
    sim: &SimParams,
    thresholds: &Thresholds,
) -> Result<ChoiceOutcome> {
    let (fixed, _) = apply_fix(&task.cloud, &perception.clusters, &task.roots, choice, Some(&task.pivots))?;
    let mut control = Vec::new();
    for (k, ip) in task.ip_trajectory[0].iter().enumerate() {
        for (i, p) in task.cloud.points().iter().enumerate() {
            if (p - ip).norm() <= sim.control_radius {
                control.push((k, i));
            }
        }
    }
    let mut controlled: Vec<usize> = control.iter().map(|e| e.1).collect();
    controlled.sort_unstable();
    controlled.dedup();
    let ip = offset_interacting_points(&task.cloud, &fixed, &controlled, &task.ip_trajectory)?;

    let part = choice.part();
    let map = match choice {
        FixChoice::Fix(f) => Some(f.affine(task.pivots[f.part])),
        FixChoice::Functional => None,
    };
    let rules = match (part, &map) {
        (Some(p), Some(m)) => task.rules.transformed(p, m),
        _ => task.rules.clone(),
    };
    let cluster_joints: Vec<JointSpec> = match joints {
        JointSource::None => Vec::new(),
        JointSource::Gt => task
            .joints
            .iter()
            .filter_map(|j| {
                let j = match (&map, part) {
                    (Some(m), Some(p)) if j.part_b == p => j.transformed(m),
                    _ => j.clone(),
                };
                let ca = perception.clusters.labels[task.roots[j.part_a]];
                let cb = perception.clusters.labels[task.roots[j.part_b]];
                (ca != cb).then(|| JointSpec {
                    part_a: ca,
                    part_b: cb,
                    ..j
                })
            })
            .collect(),
    };

    let mut graph = build_interaction_graph(
        &fixed,
        &perception.clusters,
        &perception.cluster_roots,
        &[],
        sim,
    )?;
    graph.control_edges = control;
    for (c, &f) in perception.fluid.iter().enumerate() {
        if f {
            graph = graph.with_fluid(c);
        }
    }
    let state = SimState::at_rest(&fixed);
    match rollout(&state, &graph, &ip, &cluster_joints, sim, task.total_time) {
        Ok(r) => {
            let result = check_functionality(&rules, thresholds, &r, &task.labels, &task.roots)?;
            Ok(ChoiceOutcome {
                result,
                diverged: false,
                rollout: Some(r),
            })
        }
        Err(Error::Divergence { step }) => {
            let mut diagnostics = std::collections::BTreeMap::new();
            diagnostics.insert("diverged_step".to_string(), step as f64);
            Ok(ChoiceOutcome {
                result: FunctionalityResult {
                    pass: false,
                    score: 0.0,
                    diagnostics,
                },
                diverged: true,
                rollout: None,
            })
        }
        Err(e) => Err(e),
    }
}

/// Score every choice and pick the best.
pub fn select_fix(
    task: &Task,
    choices: &[FixChoice],
    perception: &Perception,
    joints: JointSource,
    sim: &SimParams,
    thresholds: &Thresholds,
) -> Result<(Option<usize>, Vec<f64>)> {
    let mut scores = Vec::with_capacity(choices.len());
    for c in choices {
        scores.push(score_choice(task, c, perception, joints, sim, thresholds)?.result.score);
    }
    Ok((select_choice(&scores), scores))
}

/// Estimated then rectified flow between consecutive frames.
pub fn estimate_video_flow(video: &PointCloudVideo) -> Result<Vec<RectifiedFlow>> {
    video
        .frames
        .windows(2)
        .map(|w| rectify_flow(&w[0], &w[1], &estimate_flow_nn(&w[0], &w[1])))
        .collect()
}

/// Trajectories of frame-0 points through the video.
pub fn trajectories(video: &PointCloudVideo, flows: &[RectifiedFlow]) -> Result<Vec<Vec<Vec3>>> {
    chain_trajectories(video, flows)
}

/// Rollout file rows: `frame,idx,x,y,z`.
pub fn write_rollout_csv(path: &Path, rollout: &Rollout) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    w.write_record(["frame", "idx", "x", "y", "z"])
        .map_err(|e| Error::format(path, e))?;
    for (t, frame) in rollout.frames.iter().enumerate() {
        for (i, p) in frame.iter().enumerate() {
            w.write_record(&[t.to_string(), i.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])
                .map_err(|e| Error::format(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

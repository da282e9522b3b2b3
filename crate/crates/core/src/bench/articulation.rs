//! Labelled videos for checking segmentation on its own: a door swinging on
//! its hinge in front of a static body, and a static object.

use crate::category::Category;
use crate::error::{Error, Result};
use crate::geom::{PointCloud, PointCloudVideo, RigidTransform, Vec3};
use crate::rng::SplitMix64;
use crate::seg::{cluster_rigid_motions, match_masks, HardLabels, RansacParams};

use super::pipeline::{estimate_video_flow, trajectories};
use super::shapes::{build_object, Script};

/// A video with generator labels on frame 0.
#[derive(Clone, Debug)]
pub struct LabeledVideo {
    pub video: PointCloudVideo,
    pub labels: HardLabels,
}

fn shuffled_video(rng: &mut SplitMix64, frames: Vec<Vec<Vec3>>, interacting: Vec<Vec<Vec3>>) -> Result<PointCloudVideo> {
    let n = frames[0].len();
    let mut out = Vec::with_capacity(frames.len());
    for (t, f) in frames.into_iter().enumerate() {
        let mut rows: Vec<usize> = (0..n).collect();
        if t > 0 {
            rng.shuffle(&mut rows);
        }
        let mut s = f.clone();
        for (i, &r) in rows.iter().enumerate() {
            s[r] = f[i];
        }
        out.push(PointCloud::new(s)?);
    }
    PointCloudVideo::new(out, interacting)
}

/// Fridge body with its door swinging `degrees` about the hinge; frames after
/// the first are shuffled.
pub fn door_video(seed: u64, points: usize, frames: usize, degrees: f64) -> Result<LabeledVideo> {
    let mut rng = SplitMix64::new(seed);
    let obj = build_object(Category::Fridge, &mut rng, points)?;
    let door = obj.grasps[0].part;
    let Script::Turn { pivot, axis, .. } = obj.script else {
        return Err(Error::Config("fridge script is not a hinge turn".into()));
    };
    let ip = obj.interacting_points(16);
    let mut pos = Vec::with_capacity(frames);
    let mut inter = Vec::with_capacity(frames);
    for t in 0..frames {
        let s = t as f64 / (frames - 1).max(1) as f64;
        let pose = RigidTransform::about_axis(pivot, axis, degrees.to_radians() * s);
        pos.push(
            obj.cloud
                .points()
                .iter()
                .zip(&obj.labels.labels)
                .map(|(p, &l)| if l == door { pose.apply(p) } else { *p })
                .collect(),
        );
        inter.push(ip.iter().map(|p| pose.apply(p)).collect());
    }
    Ok(LabeledVideo {
        video: shuffled_video(&mut rng, pos, inter)?,
        labels: obj.labels,
    })
}

/// A single rigid object that never moves.
pub fn static_video(seed: u64, points: usize, frames: usize) -> Result<LabeledVideo> {
    let mut rng = SplitMix64::new(seed);
    let category = *rng.pick(&[Category::Box, Category::Fridge, Category::Cart]);
    let obj = build_object(category, &mut rng, points)?;
    let pos = vec![obj.cloud.points().to_vec(); frames];
    Ok(LabeledVideo {
        video: shuffled_video(&mut rng, pos, Vec::new())?,
        labels: HardLabels {
            labels: vec![0; obj.cloud.len()],
            count: 1,
        },
    })
}

/// Segment a video from estimated, rectified flow.
pub fn segment_video(video: &PointCloudVideo, params: &RansacParams, seed: u64) -> Result<HardLabels> {
    let flows = estimate_video_flow(video)?;
    let traj = trajectories(video, &flows)?;
    cluster_rigid_motions(&video.frames[0], &traj, params, seed)
}

fn one_hot(labels: &HardLabels) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; labels.len()]; labels.count];
    for (i, &l) in labels.labels.iter().enumerate() {
        m[l][i] = 1.0;
    }
    m
}

/// Mean relaxed IoU of the best one-to-one matching between two labellings.
pub fn segmentation_iou(pred: &HardLabels, truth: &HardLabels) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Size(format!("{} vs {} labels", pred.len(), truth.len())));
    }
    Ok(match_masks(&one_hot(pred), &one_hot(truth))?.mean_iou)
}

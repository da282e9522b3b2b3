//! Scenario files and the dataset manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::dsl::{ChoiceSet, FixChoice};
use crate::dynamics::{JointSpec, SimParams};
use crate::error::{Error, Result};
use crate::flow::{flow_from_permutation, RectifiedFlow};
use crate::func::CategoryRules;
use crate::geom::{PointCloud, PointCloudVideo, Vec3};
use crate::seg::HardLabels;

use super::pipeline::Task;

pub const FORMAT_VERSION: u32 = 1;

/// One benchmark item. Frames after the first are stored shuffled;
/// `correspondence[frame][i]` is the row of particle `i` in that frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format: u32,
    pub id: String,
    pub category: Category,
    pub seed: u64,
    pub points: usize,
    pub frame_count: usize,
    pub interacting_count: usize,
    pub total_time: f64,
    pub part_names: Vec<String>,
    pub labels: Vec<usize>,
    pub roots: Vec<usize>,
    pub pivots: Vec<Vec3>,
    pub joints: Vec<JointSpec>,
    pub fluid_parts: Vec<usize>,
    pub rules: CategoryRules,
    pub choices: ChoiceSet,
    /// The edit that broke the object, if any.
    pub break_fix: Option<FixChoice>,
    pub sim: SimParams,
    pub frames: BTreeMap<String, Vec<f64>>,
    pub interacting: BTreeMap<String, Vec<f64>>,
    pub correspondence: BTreeMap<String, Vec<usize>>,
}

pub fn frame_key(t: usize) -> String {
    format!("frame_{t:02}")
}

pub(crate) fn flatten(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten(v: &[f64], what: &str) -> Result<Vec<Vec3>> {
    if v.len() % 3 != 0 {
        return Err(Error::Shape(format!("{what}: {} numbers is not a multiple of 3", v.len())));
    }
    Ok(v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

impl Scenario {
    fn lookup<'a, T>(map: &'a BTreeMap<String, T>, t: usize, what: &str) -> Result<&'a T> {
        map.get(&frame_key(t))
            .ok_or_else(|| Error::Shape(format!("missing {what} {}", frame_key(t))))
    }

    pub fn frame(&self, t: usize) -> Result<PointCloud> {
        PointCloud::new(unflatten(Self::lookup(&self.frames, t, "frame")?, "frame")?)
    }

    pub fn interacting_frame(&self, t: usize) -> Result<Vec<Vec3>> {
        unflatten(Self::lookup(&self.interacting, t, "interacting frame")?, "interacting frame")
    }

    pub fn ip_trajectory(&self) -> Result<Vec<Vec<Vec3>>> {
        (0..self.frame_count).map(|t| self.interacting_frame(t)).collect()
    }

    pub fn video(&self) -> Result<PointCloudVideo> {
        let frames = (0..self.frame_count).map(|t| self.frame(t)).collect::<Result<Vec<_>>>()?;
        PointCloudVideo::new(frames, self.ip_trajectory()?)
    }

    pub fn hard_labels(&self) -> HardLabels {
        HardLabels {
            labels: self.labels.clone(),
            count: self.part_names.len(),
        }
    }

    /// Generator flow between frames `t` and `t + 1`.
    pub fn gt_flow(&self, t: usize) -> Result<RectifiedFlow> {
        let a = Self::lookup(&self.correspondence, t, "correspondence")?;
        let b = Self::lookup(&self.correspondence, t + 1, "correspondence")?;
        let mut inv_a = vec![0usize; a.len()];
        for (i, &row) in a.iter().enumerate() {
            inv_a[row] = i;
        }
        let perm: Vec<usize> = (0..a.len()).map(|row| b[inv_a[row]]).collect();
        Ok(flow_from_permutation(&self.frame(t)?, &self.frame(t + 1)?, perm))
    }

    pub fn gt_flows(&self) -> Result<Vec<RectifiedFlow>> {
        (0..self.frame_count - 1).map(|t| self.gt_flow(t)).collect()
    }

    pub fn task(&self) -> Result<Task> {
        Ok(Task {
            category: self.category,
            cloud: self.frame(0)?,
            labels: self.hard_labels(),
            roots: self.roots.clone(),
            pivots: self.pivots.clone(),
            joints: self.joints.clone(),
            rules: self.rules.clone(),
            fluid_parts: self.fluid_parts.clone(),
            ip_trajectory: self.ip_trajectory()?,
            total_time: self.total_time,
        })
    }

    /// Structural checks run on load.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported scenario format {}", self.format)));
        }
        if self.choices.choices.len() != 5 {
            return Err(Error::Size(format!("{} choices, expected 5", self.choices.choices.len())));
        }
        if let Some(a) = self.choices.answer {
            if a >= 5 {
                return Err(Error::Reference(format!("answer {a} out of range")));
            }
        }
        if self.labels.len() != self.points {
            return Err(Error::Size(format!("{} labels for {} points", self.labels.len(), self.points)));
        }
        for t in 0..self.frame_count {
            if self.frame(t)?.len() != self.points {
                return Err(Error::Size(format!("{} has the wrong size", frame_key(t))));
            }
            if self.interacting_frame(t)?.len() != self.interacting_count {
                return Err(Error::Size(format!("interacting {} has the wrong size", frame_key(t))));
            }
            let c = Self::lookup(&self.correspondence, t, "correspondence")?;
            let mut seen = vec![false; self.points];
            for &r in c {
                if r >= self.points || std::mem::replace(&mut seen[r], true) {
                    return Err(Error::Shape(format!("correspondence {} is not a permutation", frame_key(t))));
                }
            }
        }
        for (p, &r) in self.roots.iter().enumerate() {
            if self.labels.get(r) != Some(&p) {
                return Err(Error::RootConsistency(format!("root {r} is not in part {p}")));
            }
        }
        for c in &self.choices.choices {
            if let Some(p) = c.part() {
                if p >= self.roots.len() {
                    return Err(Error::Reference(format!("choice {c} references missing part {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize {}: {e}", self.id)))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split '{s}'"))),
        }
    }
}

/// Split of `count` items in the ratio 6:1:3, rounding val and test.
pub fn split_counts(count: usize) -> (usize, usize, usize) {
    let val = (count as f64 / 10.0).round() as usize;
    let test = (count as f64 * 3.0 / 10.0).round() as usize;
    (count - val - test, val, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: Category,
    pub split: Split,
    pub seed: u64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub category: Category,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub master_seed: u64,
    pub points: usize,
    pub frames: usize,
    pub interacting: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub skipped: Vec<SkippedEntry>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_split() {
        assert_eq!(split_counts(40), (24, 4, 12));
        assert_eq!(split_counts(10), (6, 1, 3));
        let (a, b, c) = split_counts(1290);
        assert_eq!(a + b + c, 1290);
        assert_eq!((b, c), (129, 387));
    }

    #[test]
    fn frame_keys() {
        assert_eq!(frame_key(0), "frame_00");
        assert_eq!(frame_key(9), "frame_09");
    }

    #[test]
    fn flatten_roundtrip() {
        let p = vec![Vec3::new(0.1, -2.0, 1e-17), Vec3::new(3.0, 0.3, 0.7)];
        assert_eq!(unflatten(&flatten(&p), "x").unwrap(), p);
        assert!(unflatten(&[1.0, 2.0], "x").is_err());
    }
}

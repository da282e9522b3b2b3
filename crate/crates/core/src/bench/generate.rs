//! Scenario generation: break an object, script the interaction, simulate the
//! ground-truth video and draw five verified choices.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::dsl::{Axis, ChoiceSet, Fix, FixChoice, FixKind};
use crate::dynamics::SimParams;
use crate::error::{Error, Result};
use crate::func::Thresholds;
use crate::rng::{combine, SplitMix64};

use super::pipeline::{score_choice, JointSource, Perception, Task};
use super::scenario::{flatten, frame_key, split_counts, Manifest, ManifestEntry, Scenario, SkippedEntry, FORMAT_VERSION};
use super::shapes::{build_object, sample_break, Object};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub points: usize,
    pub frames: usize,
    pub interacting: usize,
    pub per_category: usize,
    /// Probability that the object is left intact ("functional" is the answer).
    pub functional_rate: f64,
    pub max_rounds: usize,
    /// Distractor draws per round before the round is abandoned.
    pub distractor_draws: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            points: 512,
            frames: 10,
            interacting: 16,
            per_category: 40,
            functional_rate: 0.15,
            max_rounds: 100,
            distractor_draws: 24,
        }
    }
}

const SCALES: [f64; 10] = [0.5, 0.6, 0.7, 0.75, 0.8, 1.25, 1.4, 1.5, 1.75, 2.0];

/// A random category-legal choice with values in the usual ranges.
pub fn random_fix(obj: &Object, rng: &mut SplitMix64) -> Fix {
    let kinds = obj.category.allowed_kinds();
    let kind = *rng.pick(kinds);
    let parts = obj.solid_parts();
    let part = *rng.pick(&parts);
    let axis = *rng.pick(&Axis::ALL);
    let value = match kind {
        FixKind::Rotate => (10 + rng.below(81)) as f64,
        FixKind::Scale => *rng.pick(&SCALES),
        FixKind::Translate => {
            let ext = obj.part_extent(part);
            ((rng.uniform(0.05, 0.30) * ext * 100.0).round() / 100.0).max(0.01)
        }
    };
    Fix { kind, part, axis, value }
}

struct Broken {
    object: Object,
    break_fix: Option<Fix>,
    task: Task,
}

fn controlled_parts(task: &Task, control_radius: f64) -> Vec<usize> {
    let mut parts = Vec::new();
    for ip in &task.ip_trajectory[0] {
        for (i, p) in task.cloud.points().iter().enumerate() {
            if (p - ip).norm() <= control_radius {
                parts.push(task.labels.labels[i]);
            }
        }
    }
    parts.sort_unstable();
    parts.dedup();
    parts
}

fn make_task(obj: &Object, gen: &GenConfig) -> Task {
    let ip0 = obj.interacting_points(gen.interacting);
    Task {
        category: obj.category,
        cloud: obj.cloud.clone(),
        labels: obj.labels.clone(),
        roots: obj.roots.clone(),
        pivots: obj.pivots.clone(),
        joints: obj.joints.clone(),
        rules: obj.rules.clone(),
        fluid_parts: obj.fluid_parts.clone(),
        ip_trajectory: obj.script_trajectory(&ip0, gen.frames),
        total_time: obj.total_time,
    }
}

fn draw_broken(category: Category, functional: bool, rng: &mut SplitMix64, gen: &GenConfig, sim: &SimParams) -> Result<Option<Broken>> {
    let object = build_object(category, rng, gen.points)?;
    let (broken, break_fix) = if functional {
        (object, None)
    } else {
        let Some(f) = sample_break(&object, rng) else {
            return Ok(None);
        };
        (object.edited(&f)?, Some(f))
    };
    let task = make_task(&broken, gen);
    let grasped: Vec<usize> = broken.grasps.iter().map(|g| g.part).collect();
    if controlled_parts(&task, sim.control_radius).iter().any(|p| !grasped.contains(p)) {
        return Ok(None);
    }
    Ok(Some(Broken {
        object: broken,
        break_fix,
        task,
    }))
}

/// Generate one scenario; deterministic in `seed`.
pub fn generate_scenario(
    category: Category,
    seed: u64,
    id: &str,
    gen: &GenConfig,
    sim: &SimParams,
    thresholds: &Thresholds,
) -> Result<Scenario> {
    let mut rng = SplitMix64::new(seed);
    let mut last = String::from("no round completed");
    let functional = rng.chance(gen.functional_rate);
    for _round in 0..gen.max_rounds {
        let Some(b) = draw_broken(category, functional, &mut rng, gen, sim)? else {
            last = "break or grasp rejected".into();
            continue;
        };
        let perception = Perception::ground_truth(&b.task);
        let score = |c: &FixChoice| score_choice(&b.task, c, &perception, JointSource::Gt, sim, thresholds);
        let base = score(&FixChoice::Functional)?;
        if base.diverged || base.result.pass != functional {
            last = format!("unmodified object pass={} (wanted {functional})", base.result.pass);
            continue;
        }
        let answer = match b.break_fix {
            None => FixChoice::Functional,
            Some(f) => FixChoice::Fix(f.inverse()),
        };
        if !functional && !score(&answer)?.result.pass {
            last = "inverse break does not restore function".into();
            continue;
        }
        let mut wrong: Vec<FixChoice> = Vec::new();
        if !functional && rng.chance(0.5) {
            wrong.push(FixChoice::Functional);
        }
        let mut draws = 0;
        while wrong.len() < 4 && draws < gen.distractor_draws {
            draws += 1;
            let template = if rng.chance(0.5) { sample_break(&b.object, &mut rng) } else { None };
            let c = FixChoice::Fix(template.unwrap_or_else(|| random_fix(&b.object, &mut rng)));
            if c == answer || wrong.contains(&c) {
                continue;
            }
            if !score(&c)?.result.pass {
                wrong.push(c);
            }
        }
        if wrong.len() < 4 {
            last = "distractors kept passing".into();
            continue;
        }
        let mut choices = wrong;
        let slot = rng.below(5);
        choices.insert(slot, answer);

        let rollout = base.rollout.expect("non-divergent rollout");
        let n = b.task.cloud.len();
        let mut frames = BTreeMap::new();
        let mut correspondence = BTreeMap::new();
        let mut interacting = BTreeMap::new();
        for (t, pos) in rollout.frames.iter().enumerate() {
            let mut rows: Vec<usize> = (0..n).collect();
            if t > 0 {
                rng.shuffle(&mut rows);
            }
            let mut shuffled = vec![pos[0]; n];
            for (i, &r) in rows.iter().enumerate() {
                shuffled[r] = pos[i];
            }
            frames.insert(frame_key(t), flatten(&shuffled));
            correspondence.insert(frame_key(t), rows);
            interacting.insert(frame_key(t), flatten(&b.task.ip_trajectory[t]));
        }
        return Ok(Scenario {
            format: FORMAT_VERSION,
            id: id.to_string(),
            category,
            seed,
            points: n,
            frame_count: gen.frames,
            interacting_count: gen.interacting,
            total_time: b.task.total_time,
            part_names: b.object.part_names.clone(),
            labels: b.task.labels.labels.clone(),
            roots: b.task.roots.clone(),
            pivots: b.task.pivots.clone(),
            joints: b.task.joints.clone(),
            fluid_parts: b.task.fluid_parts.clone(),
            rules: b.task.rules.clone(),
            choices: ChoiceSet {
                choices,
                answer: Some(slot),
            },
            break_fix: b.break_fix.map(FixChoice::Fix),
            sim: sim.clone(),
            frames,
            interacting,
            correspondence,
        });
    }
    Err(Error::Generation(format!(
        "{category} seed {seed}: no verified scenario in {} rounds ({last})",
        gen.max_rounds
    )))
}

/// Seed of the `index`-th scenario of a category.
pub fn scenario_seed(master: u64, category: Category, index: usize) -> u64 {
    combine(combine(master, category.index() as u64), index as u64)
}

pub fn scenario_id(category: Category, index: usize) -> String {
    format!("{}_{index:04}", category.name())
}

/// Generate every scenario in memory; failures are returned as skips.
pub fn generate_all(
    master_seed: u64,
    categories: &[Category],
    gen: &GenConfig,
    sim: &SimParams,
    thresholds: &Thresholds,
) -> (Vec<(Scenario, crate::bench::scenario::Split)>, Vec<SkippedEntry>) {
    let jobs: Vec<(Category, usize)> = categories
        .iter()
        .flat_map(|&c| (0..gen.per_category).map(move |i| (c, i)))
        .collect();
    let results: Vec<(Category, u64, Result<Scenario>)> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let seed = scenario_seed(master_seed, c, i);
            (c, seed, generate_scenario(c, seed, &scenario_id(c, i), gen, sim, thresholds))
        })
        .collect();
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for &c in categories {
        let done: Vec<Scenario> = results
            .iter()
            .filter(|r| r.0 == c)
            .filter_map(|r| r.2.as_ref().ok().cloned())
            .collect();
        for r in results.iter().filter(|r| r.0 == c) {
            if let Err(e) = &r.2 {
                skipped.push(SkippedEntry {
                    category: c,
                    seed: r.1,
                    reason: e.to_string(),
                });
            }
        }
        let (train, val, _) = split_counts(done.len());
        for (k, s) in done.into_iter().enumerate() {
            use crate::bench::scenario::Split;
            let split = if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            };
            ok.push((s, split));
        }
    }
    (ok, skipped)
}

/// Generate the dataset into `dir` and write its manifest.
pub fn generate_dataset(
    dir: &Path,
    master_seed: u64,
    categories: &[Category],
    gen: &GenConfig,
    sim: &SimParams,
    thresholds: &Thresholds,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (done, skipped) = generate_all(master_seed, categories, gen, sim, thresholds);
    let mut entries = Vec::with_capacity(done.len());
    for (s, split) in &done {
        let file = format!("{}.json", s.id);
        s.write(&dir.join(&file))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            category: s.category,
            split: *split,
            seed: s.seed,
            file,
        });
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        master_seed,
        points: gen.points,
        frames: gen.frames,
        interacting: gen.interacting,
        entries,
        skipped,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

//! Policies, accuracy tables and flow metrics over a dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};
use crate::flow::{epe, RectifiedFlow};
use crate::func::select_choice;
use crate::geom::Vec3;
use crate::rng::{combine, SplitMix64};

use super::config::Config;
use super::pipeline::{estimate_video_flow, score_choice, trajectories, JointSource, Mode, Perception};
use super::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Pipeline,
    Random,
    Oracle,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Pipeline => "pipeline",
            Policy::Random => "random",
            Policy::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pipeline" => Ok(Policy::Pipeline),
            "random" => Ok(Policy::Random),
            "oracle" => Ok(Policy::Oracle),
            _ => Err(Error::Config(format!("unknown policy '{s}' (pipeline, random, oracle)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub chosen: Option<usize>,
    pub scores: Vec<f64>,
    pub clusters: usize,
}

/// Perception for a scenario under a mode.
pub fn perceive(s: &Scenario, mode: Mode, cfg: &Config) -> Result<Perception> {
    let task = s.task()?;
    let flows = match mode {
        Mode::GtSeg => return Ok(Perception::ground_truth(&task)),
        Mode::GtFlow => s.gt_flows()?,
        Mode::Full => estimate_video_flow(&s.video()?)?,
    };
    let traj = trajectories(&s.video()?, &flows)?;
    Perception::from_trajectories(&task, &traj, &cfg.ransac, s.seed)
}

/// Perceive, score the five choices and pick the best.
pub fn run_pipeline(s: &Scenario, mode: Mode, joints: JointSource, cfg: &Config) -> Result<PipelineRun> {
    let task = s.task()?;
    let perception = perceive(s, mode, cfg)?;
    let scores = s
        .choices
        .choices
        .par_iter()
        .map(|c| score_choice(&task, c, &perception, joints, &s.sim, &cfg.thresholds).map(|o| o.result.score))
        .collect::<Result<Vec<f64>>>()?;
    Ok(PipelineRun {
        chosen: select_choice(&scores),
        scores,
        clusters: perception.clusters.count,
    })
}

/// Pass/fail of every choice under ground-truth perception and joints.
pub fn verify_scenario(s: &Scenario, cfg: &Config) -> Result<Vec<bool>> {
    let task = s.task()?;
    let perception = Perception::ground_truth(&task);
    s.choices
        .choices
        .par_iter()
        .map(|c| score_choice(&task, c, &perception, JointSource::Gt, &s.sim, &cfg.thresholds).map(|o| o.result.pass))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub id: String,
    pub category: Category,
    pub answer: usize,
    pub chosen: Option<usize>,
    pub correct: bool,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub results: Vec<ScenarioResult>,
}

impl EvalReport {
    /// Per-category accuracy in percent, in table order; `None` for
    /// categories without scenarios.
    pub fn accuracy(&self) -> BTreeMap<Category, f64> {
        let mut out = BTreeMap::new();
        for c in Category::ALL {
            let rows: Vec<&ScenarioResult> = self.results.iter().filter(|r| r.category == c).collect();
            if !rows.is_empty() {
                out.insert(c, 100.0 * rows.iter().filter(|r| r.correct).count() as f64 / rows.len() as f64);
            }
        }
        out
    }

    pub fn overall(&self) -> f64 {
        if self.results.is_empty() {
            return 0.0;
        }
        100.0 * self.results.iter().filter(|r| r.correct).count() as f64 / self.results.len() as f64
    }

    /// One row of the accuracy table.
    pub fn table_row(&self) -> String {
        let acc = self.accuracy();
        let mut row = self.label.clone();
        for c in Category::ALL {
            match acc.get(&c) {
                Some(a) => write!(row, ",{a:.1}").unwrap(),
                None => row.push(','),
            }
        }
        write!(row, ",{:.1}", self.overall()).unwrap();
        row
    }

    /// Per-scenario score table.
    pub fn score_table(&self) -> String {
        let mut out = String::from("id,category,answer,chosen,correct,score_0,score_1,score_2,score_3,score_4\n");
        for r in &self.results {
            let chosen = r.chosen.map(|c| c.to_string()).unwrap_or_default();
            write!(out, "{},{},{},{},{}", r.id, r.category, r.answer, chosen, r.correct as u8).unwrap();
            for s in &r.scores {
                write!(out, ",{s:.6}").unwrap();
            }
            for _ in r.scores.len()..5 {
                out.push(',');
            }
            out.push('\n');
        }
        out
    }
}

pub fn accuracy_header() -> String {
    let mut h = String::from("Method");
    for c in Category::ALL {
        h.push(',');
        h.push_str(c.accuracy_header());
    }
    h.push_str(",All");
    h
}

/// Accuracy table with one row per report.
pub fn accuracy_table(reports: &[EvalReport]) -> String {
    let mut out = accuracy_header();
    out.push('\n');
    for r in reports {
        out.push_str(&r.table_row());
        out.push('\n');
    }
    out
}

/// Evaluate a policy. Results are sorted by scenario id.
pub fn evaluate(
    scenarios: &[Scenario],
    policy: Policy,
    mode: Mode,
    joints: JointSource,
    cfg: &Config,
) -> Result<EvalReport> {
    let mut results = scenarios
        .par_iter()
        .map(|s| -> Result<ScenarioResult> {
            let answer = s
                .choices
                .answer
                .ok_or_else(|| Error::Reference(format!("{} has no answer", s.id)))?;
            let (chosen, scores) = match policy {
                Policy::Oracle => (Some(answer), Vec::new()),
                Policy::Random => {
                    let mut rng = SplitMix64::new(combine(cfg.seed, s.seed));
                    (Some(rng.below(s.choices.choices.len())), Vec::new())
                }
                Policy::Pipeline => {
                    let run = run_pipeline(s, mode, joints, cfg)?;
                    (run.chosen, run.scores)
                }
            };
            Ok(ScenarioResult {
                id: s.id.clone(),
                category: s.category,
                answer,
                chosen,
                correct: chosen == Some(answer),
                scores,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.id.cmp(&b.id));
    let label = match policy {
        Policy::Pipeline => format!("pipeline/{}", mode.name()),
        p => p.name().to_string(),
    };
    Ok(EvalReport { label, results })
}

/// Which flow to score against the generator correspondences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowSource {
    /// Nearest-neighbour estimate followed by rectification.
    Rectified,
    /// The generator's own flow.
    Generator,
    /// The generator's flow with a constant offset added to every vector.
    Biased(Vec3),
}

impl FlowSource {
    pub fn name(self) -> &'static str {
        match self {
            FlowSource::Rectified => "rectified",
            FlowSource::Generator => "generator",
            FlowSource::Biased(_) => "biased",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowMetrics {
    pub label: String,
    /// Mean endpoint error per category.
    pub per_category: BTreeMap<Category, f64>,
    pub overall: f64,
    pub per_scenario: Vec<(String, Category, f64)>,
}

fn scenario_epe(s: &Scenario, source: FlowSource) -> Result<f64> {
    let truth = s.gt_flows()?;
    let pred: Vec<RectifiedFlow> = match source {
        FlowSource::Generator => truth.clone(),
        FlowSource::Biased(b) => truth
            .iter()
            .map(|f| RectifiedFlow {
                deltas: f.deltas.iter().map(|d| d + b).collect(),
                permutation: f.permutation.clone(),
            })
            .collect(),
        FlowSource::Rectified => estimate_video_flow(&s.video()?)?,
    };
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(&truth) {
        total += epe(&p.deltas, &t.deltas)?;
    }
    Ok(total / truth.len() as f64)
}

/// Endpoint error of a flow source against generator flows.
pub fn compute_flow_metrics(scenarios: &[Scenario], source: FlowSource) -> Result<FlowMetrics> {
    let mut per_scenario = scenarios
        .par_iter()
        .map(|s| scenario_epe(s, source).map(|e| (s.id.clone(), s.category, e)))
        .collect::<Result<Vec<_>>>()?;
    per_scenario.sort_by(|a, b| a.0.cmp(&b.0));
    let mut per_category = BTreeMap::new();
    for c in Category::FLOW_ORDER {
        let v: Vec<f64> = per_scenario.iter().filter(|r| r.1 == c).map(|r| r.2).collect();
        if !v.is_empty() {
            per_category.insert(c, v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    let overall = if per_scenario.is_empty() {
        0.0
    } else {
        per_scenario.iter().map(|r| r.2).sum::<f64>() / per_scenario.len() as f64
    };
    Ok(FlowMetrics {
        label: source.name().to_string(),
        per_category,
        overall,
        per_scenario,
    })
}

pub fn flow_header() -> String {
    let mut h = String::from("Method");
    for c in Category::FLOW_ORDER {
        h.push(',');
        h.push_str(c.flow_header());
    }
    h.push_str(",All");
    h
}

/// EPE table with one row per metrics set.
pub fn flow_table(rows: &[FlowMetrics]) -> String {
    let mut out = flow_header();
    out.push('\n');
    for m in rows {
        out.push_str(&m.label);
        for c in Category::FLOW_ORDER {
            match m.per_category.get(&c) {
                Some(v) => write!(out, ",{v:.6}").unwrap(),
                None => out.push(','),
            }
        }
        writeln!(out, ",{:.6}", m.overall).unwrap();
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

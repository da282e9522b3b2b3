use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use fixit_core::bench::articulation::segment_video;
use fixit_core::bench::config::Config;
use fixit_core::bench::eval::{
    accuracy_table, compute_flow_metrics, evaluate, flow_table, run_pipeline, write_text, FlowSource, Policy,
};
use fixit_core::bench::generate::generate_dataset;
use fixit_core::bench::pipeline::{score_choice, trajectories, write_rollout_csv, JointSource, Mode, Perception};
use fixit_core::bench::scenario::{Manifest, Scenario, Split};
use fixit_core::dsl::{parse_choice, FixChoice};
use fixit_core::flow::{estimate_flow_nn, read_flow_csv, read_points_csv, rectify_flow, write_flow_csv};
use fixit_core::seg::{cluster_rigid_motions, write_labels_csv};
use fixit_core::{Category, Error, PointCloud};

#[derive(Parser)]
#[command(name = "fixit", version, about = "Generate, solve and score broken-object repair scenarios")]
struct Cli {
    /// Config file (TOML, or JSON by extension); falls back to $FIXIT_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override a functionality threshold, e.g. `--threshold lift_rise=0.25`.
    #[arg(long = "threshold", global = true, value_name = "NAME=VALUE")]
    thresholds: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of verified scenarios plus a manifest.
    Generate(GenerateArgs),
    /// Estimate and rectify flow between two frames, or for every pair of a scenario video.
    Flow(FlowArgs),
    /// Segment a scenario video into rigidly moving parts.
    Segment(SegmentArgs),
    /// Run the pipeline on one scenario and report the choice scores.
    Fix(FixArgs),
    /// Simulate one choice of a scenario.
    Simulate(SimulateArgs),
    /// Evaluate a policy on a dataset split.
    Evaluate(EvaluateArgs),
    /// Flow endpoint error against generator correspondences.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    per_category: Option<usize>,
    /// Comma-separated categories; all by default.
    #[arg(long, value_delimiter = ',')]
    categories: Vec<Category>,
}

#[derive(Args)]
struct FlowArgs {
    /// Source frame (CSV x,y,z, or `scenario.json:frame_03`).
    #[arg(long, requires = "dst", conflicts_with = "video")]
    src: Option<String>,
    #[arg(long)]
    dst: Option<String>,
    /// Scenario file; writes flow_00.csv.. into `--out`.
    #[arg(long)]
    video: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    video: PathBuf,
    /// Directory of flow_XX.csv files; estimated when omitted.
    #[arg(long)]
    flows: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FixArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    joints: Option<JointSource>,
    /// CSV of per-choice scores.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Choice index, or a choice written in the fix language.
    #[arg(long)]
    choice: String,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    joints: Option<JointSource>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset directory holding the manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "pipeline")]
    policy: Policy,
    /// Pipeline mode; repeat for several rows.
    #[arg(long)]
    mode: Vec<Mode>,
    #[arg(long)]
    joints: Option<JointSource>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "val")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

/// Failures split by exit code.
enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_) | Error::Parse { .. }) => Failure::Usage(e),
            _ => Failure::Run(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::Usage(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Run(e.into()))?;
    }
    let mut cfg = Config::resolve(cli.config.as_deref()).map_err(|e| Failure::Usage(e.into()))?;
    for t in &cli.thresholds {
        let (name, value) = t
            .split_once('=')
            .ok_or_else(|| Failure::Usage(anyhow!("--threshold expects NAME=VALUE, got `{t}`")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Failure::Usage(anyhow!("threshold `{name}` needs a number, got `{value}`")))?;
        cfg.set_threshold(name, value)?;
    }
    match cli.command {
        Command::Generate(a) => generate(a, cfg),
        Command::Flow(a) => flow(a),
        Command::Segment(a) => segment(a, &cfg),
        Command::Fix(a) => fix(a, &cfg),
        Command::Simulate(a) => simulate(a, &cfg),
        Command::Evaluate(a) => evaluate_cmd(a, cfg),
        Command::Metrics(a) => metrics(a),
    }
}

fn generate(a: GenerateArgs, mut cfg: Config) -> Result<(), Failure> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.points {
        cfg.generation.points = n;
    }
    if let Some(n) = a.per_category {
        cfg.generation.per_category = n;
    }
    let cats = if a.categories.is_empty() { Category::ALL.to_vec() } else { a.categories };
    let m = generate_dataset(&a.out, cfg.seed, &cats, &cfg.generation, &cfg.sim, &cfg.thresholds)?;
    println!("wrote {} scenarios to {}", m.entries.len(), a.out.display());
    for s in &m.skipped {
        eprintln!("skipped {} seed {}: {}", s.category, s.seed, s.reason);
    }
    Ok(())
}

/// A frame given as a CSV file or as `scenario.json:frame_NN`.
fn load_frame(spec: &str) -> anyhow::Result<PointCloud> {
    if let Some((file, key)) = spec.rsplit_once(".json:") {
        let s = Scenario::read(Path::new(&format!("{file}.json")))?;
        let t: usize = key
            .strip_prefix("frame_")
            .and_then(|k| k.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad frame key `{key}`")))?;
        return Ok(s.frame(t)?);
    }
    Ok(read_points_csv(Path::new(spec))?)
}

fn flow(a: FlowArgs) -> Result<(), Failure> {
    if let Some(video) = a.video {
        let s = Scenario::read(&video)?;
        let v = s.video()?;
        std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        for (t, w) in v.frames.windows(2).enumerate() {
            let f = rectify_flow(&w[0], &w[1], &estimate_flow_nn(&w[0], &w[1]))?;
            write_flow_csv(&a.out.join(format!("flow_{t:02}.csv")), &f)?;
        }
        println!("wrote {} flows to {}", v.len() - 1, a.out.display());
        return Ok(());
    }
    let (Some(src), Some(dst)) = (a.src, a.dst) else {
        return Err(Failure::Usage(anyhow!("give --src and --dst, or --video")));
    };
    let src = load_frame(&src)?;
    let dst = load_frame(&dst)?;
    let f = rectify_flow(&src, &dst, &estimate_flow_nn(&src, &dst))?;
    write_flow_csv(&a.out, &f)?;
    Ok(())
}

fn segment(a: SegmentArgs, cfg: &Config) -> Result<(), Failure> {
    let s = Scenario::read(&a.video)?;
    let video = s.video()?;
    let seed = a.seed.unwrap_or(s.seed);
    let labels = match a.flows {
        None => segment_video(&video, &cfg.ransac, seed)?,
        Some(dir) => {
            let flows = (0..video.len() - 1)
                .map(|t| read_flow_csv(&dir.join(format!("flow_{t:02}.csv"))))
                .collect::<fixit_core::Result<Vec<_>>>()?;
            let traj = trajectories(&video, &flows)?;
            cluster_rigid_motions(&video.frames[0], &traj, &cfg.ransac, seed)?
        }
    };
    write_labels_csv(&a.out, &labels)?;
    println!("{} parts", labels.count);
    Ok(())
}

fn fix(a: FixArgs, cfg: &Config) -> Result<(), Failure> {
    let s = Scenario::read(&a.scenario)?;
    let run = run_pipeline(&s, a.mode.unwrap_or(cfg.mode), a.joints.unwrap_or(cfg.joints), cfg)?;
    let mut csv = String::from("idx,choice,score,chosen\n");
    for (i, (c, sc)) in s.choices.choices.iter().zip(&run.scores).enumerate() {
        let mark = u8::from(run.chosen == Some(i));
        csv.push_str(&format!("{i},{c},{sc:.6},{mark}\n"));
        println!("{}{i}: {c:<24} {sc:.4}", if mark == 1 { '*' } else { ' ' });
    }
    if let Some(out) = a.out {
        write_text(&out, &csv)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs, cfg: &Config) -> Result<(), Failure> {
    let s = Scenario::read(&a.scenario)?;
    let choice: FixChoice = match a.choice.parse::<usize>() {
        Ok(i) => s
            .choices
            .choices
            .get(i)
            .copied()
            .ok_or_else(|| Failure::Usage(anyhow!("choice {i} out of range (0..{})", s.choices.choices.len())))?,
        Err(_) => parse_choice(&a.choice)?,
    };
    let task = s.task()?;
    let perception = match a.mode.unwrap_or(Mode::GtSeg) {
        Mode::GtSeg => Perception::ground_truth(&task),
        mode => fixit_core::bench::eval::perceive(&s, mode, cfg)?,
    };
    let out = score_choice(&task, &choice, &perception, a.joints.unwrap_or(cfg.joints), &s.sim, &cfg.thresholds)?;
    let Some(rollout) = out.rollout else {
        return Err(Failure::Run(anyhow!("simulation of `{choice}` diverged")));
    };
    write_rollout_csv(&a.out, &rollout)?;
    println!("{choice}: pass={} score={:.4}", out.result.pass, out.result.score);
    for (k, v) in &out.result.diagnostics {
        println!("  {k} = {v:.6}");
    }
    Ok(())
}

fn load_split(dir: &Path, split: Split) -> anyhow::Result<Vec<Scenario>> {
    let m = Manifest::read(dir)?;
    let out = m
        .in_split(split)
        .map(|e| Scenario::read(&dir.join(&e.file)).with_context(|| format!("scenario {}", e.id)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if out.is_empty() {
        bail!("no {} scenarios in {}", split.name(), dir.display());
    }
    Ok(out)
}

fn evaluate_cmd(a: EvaluateArgs, mut cfg: Config) -> Result<(), Failure> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let scenarios = load_split(&a.data, a.split)?;
    let joints = a.joints.unwrap_or(cfg.joints);
    let modes = if a.policy != Policy::Pipeline {
        vec![cfg.mode]
    } else if a.mode.is_empty() {
        vec![cfg.mode]
    } else {
        a.mode
    };
    let mut reports = Vec::new();
    let mut scores = String::new();
    for mode in modes {
        let r = evaluate(&scenarios, a.policy, mode, joints, &cfg)?;
        let table = r.score_table();
        if scores.is_empty() {
            scores.push_str("method,");
            scores.push_str(table.lines().next().unwrap_or_default());
            scores.push('\n');
        }
        for line in table.lines().skip(1) {
            scores.push_str(&format!("{},{line}\n", r.label));
        }
        reports.push(r);
    }
    let acc = accuracy_table(&reports);
    write_text(&a.out.join("accuracy.csv"), &acc)?;
    write_text(&a.out.join("scores.csv"), &scores)?;
    print!("{acc}");
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<(), Failure> {
    let scenarios = load_split(&a.data, a.split)?;
    let m = compute_flow_metrics(&scenarios, FlowSource::Rectified)?;
    let table = flow_table(&[m]);
    write_text(&a.out.join("flow_epe.csv"), &table)?;
    print!("{table}");
    Ok(())
}

use std::path::PathBuf;
use std::sync::OnceLock;

use fixit_core::bench::config::Config;
use fixit_core::bench::eval::{
    accuracy_table, compute_flow_metrics, evaluate, run_pipeline, verify_scenario, EvalReport, FlowSource, Policy,
    ScenarioResult,
};
use fixit_core::bench::generate::{generate_dataset, generate_scenario, scenario_id, scenario_seed};
use fixit_core::bench::pipeline::{JointSource, Mode};
use fixit_core::bench::scenario::{Manifest, Scenario};
use fixit_core::dsl::FixChoice;
use fixit_core::{Category, Error, Vec3};
use proptest::prelude::*;

fn scratch(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("bench-{name}"));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// One scenario per category.
fn samples() -> &'static [Scenario] {
    static S: OnceLock<Vec<Scenario>> = OnceLock::new();
    S.get_or_init(|| {
        let cfg = Config::default();
        Category::ALL
            .iter()
            .map(|&c| {
                let seed = scenario_seed(11, c, 0);
                generate_scenario(c, seed, &scenario_id(c, 0), &cfg.generation, &cfg.sim, &cfg.thresholds).unwrap()
            })
            .collect()
    })
}

#[test]
fn exactly_the_answer_passes() {
    let cfg = Config::default();
    for s in samples() {
        let pass = verify_scenario(s, &cfg).unwrap();
        let answer = s.choices.answer.unwrap();
        assert_eq!(pass.iter().filter(|&&p| p).count(), 1, "{}", s.id);
        assert!(pass[answer], "{}", s.id);
    }
}

#[test]
fn choices_respect_category_kinds() {
    for s in samples() {
        assert_eq!(s.choices.choices.len(), 5);
        for c in &s.choices.choices {
            if let Some(k) = c.kind() {
                assert!(s.category.allowed_kinds().contains(&k), "{} offers {c}", s.id);
            }
        }
        assert_eq!((s.points, s.frame_count, s.interacting_count), (512, 10, 16));
        assert!(s.validate().is_ok());
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let cfg = Config::default();
    let s = &samples()[0];
    let again =
        generate_scenario(s.category, s.seed, &s.id, &cfg.generation, &cfg.sim, &cfg.thresholds).unwrap();
    assert_eq!(again.to_json().unwrap(), s.to_json().unwrap());
}

#[test]
fn manifest_seeds_reproduce_files() {
    let cfg = Config::default();
    let mut gen = cfg.generation.clone();
    gen.per_category = 2;
    let dir = scratch("manifest");
    let m = generate_dataset(&dir, 3, &[Category::Box, Category::Usb], &gen, &cfg.sim, &cfg.thresholds).unwrap();
    assert_eq!(m.entries.len(), 4);
    assert_eq!(Manifest::read(&dir).unwrap(), m);
    for e in &m.entries {
        let s = generate_scenario(e.category, e.seed, &e.id, &gen, &cfg.sim, &cfg.thresholds).unwrap();
        let on_disk = std::fs::read_to_string(dir.join(&e.file)).unwrap();
        assert_eq!(s.to_json().unwrap(), on_disk, "{}", e.id);
    }
}

#[test]
fn file_round_trip_is_exact() {
    let dir = scratch("roundtrip");
    for s in samples() {
        let p = dir.join(format!("{}.json", s.id));
        s.write(&p).unwrap();
        assert_eq!(&Scenario::read(&p).unwrap(), s);
    }
}

#[test]
fn choices_are_stored_as_dsl_strings() {
    let s = &samples()[0];
    let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
    let stored = v["choices"]["choices"].as_array().unwrap();
    for (c, j) in s.choices.choices.iter().zip(stored) {
        assert_eq!(j.as_str().unwrap(), c.to_string());
    }
    assert!(v["frames"]["frame_00"].as_array().unwrap().len() == 512 * 3);
    assert!(v["frames"]["frame_09"].is_array());
}

#[test]
fn tampered_files_are_rejected() {
    let dir = scratch("tampered");
    let mut s = samples()[0].clone();
    s.choices.choices.pop();
    let p = dir.join("short.json");
    s.write(&p).unwrap();
    assert!(matches!(Scenario::read(&p), Err(Error::Size(_))));

    let mut s = samples()[0].clone();
    s.roots.swap(0, 1);
    let p = dir.join("roots.json");
    s.write(&p).unwrap();
    assert!(matches!(Scenario::read(&p), Err(Error::RootConsistency(_))));

    let p = dir.join("missing.json");
    assert!(matches!(Scenario::read(&p), Err(Error::Io { .. })));
}

#[test]
fn gt_flow_maps_frames_onto_each_other() {
    let s = &samples()[2];
    for t in 0..s.frame_count - 1 {
        let f = s.gt_flow(t).unwrap();
        let a = s.frame(t).unwrap();
        let b = s.frame(t + 1).unwrap();
        for i in 0..a.len() {
            assert_eq!(a[i] + f.deltas[i], b[f.permutation[i]]);
        }
    }
}

#[test]
fn gt_seg_fridge_picks_the_answer() {
    let cfg = Config::default();
    let s = samples().iter().find(|s| s.category == Category::Fridge).unwrap();
    let run = run_pipeline(s, Mode::GtSeg, JointSource::Gt, &cfg).unwrap();
    assert_eq!(run.chosen, s.choices.answer);
    assert_eq!(run.scores.len(), 5);
}

#[test]
fn full_pipeline_is_deterministic() {
    let cfg = Config::default();
    let s = samples().iter().find(|s| s.category == Category::Box).unwrap();
    let a = run_pipeline(s, Mode::Full, JointSource::Gt, &cfg).unwrap();
    let b = run_pipeline(s, Mode::Full, JointSource::Gt, &cfg).unwrap();
    assert_eq!(a, b);
    let c = run_pipeline(s, Mode::Full, JointSource::None, &cfg).unwrap();
    assert_eq!(c.scores.len(), 5);
}

#[test]
fn oracle_and_report_layout() {
    let cfg = Config::default();
    let r = evaluate(samples(), Policy::Oracle, Mode::Full, JointSource::Gt, &cfg).unwrap();
    assert_eq!(r.overall(), 100.0);
    let ids: Vec<&str> = r.results.iter().map(|x| x.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(ids, sorted);
    let table = accuracy_table(&[r]);
    assert_eq!(table.lines().nth(1).unwrap(), "oracle,100.0,100.0,100.0,100.0,100.0,100.0,100.0,100.0");
}

#[test]
fn flow_metrics_on_generator_and_biased_flows() {
    let g = compute_flow_metrics(samples(), FlowSource::Generator).unwrap();
    assert!(g.per_category.values().all(|&v| v == 0.0));
    assert_eq!(g.per_category.len(), 7);
    let b = Vec3::new(0.0, 0.03, -0.04);
    let m = compute_flow_metrics(samples(), FlowSource::Biased(b)).unwrap();
    for v in m.per_category.values() {
        assert!((v - 0.05).abs() < 1e-12);
    }
}

#[test]
fn functional_choice_is_only_offered_once() {
    for s in samples() {
        let n = s.choices.choices.iter().filter(|c| **c == FixChoice::Functional).count();
        assert!(n <= 1);
    }
}

fn result(cat: usize, correct: bool) -> ScenarioResult {
    ScenarioResult {
        id: String::new(),
        category: Category::ALL[cat],
        answer: 0,
        chosen: Some(usize::from(!correct)),
        correct,
        scores: Vec::new(),
    }
}

proptest! {
    #[test]
    fn overall_is_count_weighted_mean(rows in prop::collection::vec((0usize..7, any::<bool>()), 1..60)) {
        let r = EvalReport {
            label: "p".into(),
            results: rows.iter().map(|&(c, k)| result(c, k)).collect(),
        };
        let acc = r.accuracy();
        let mut weighted = 0.0;
        for (c, a) in &acc {
            let n = rows.iter().filter(|x| Category::ALL[x.0] == *c).count();
            weighted += a * n as f64;
        }
        let correct = rows.iter().filter(|x| x.1).count();
        prop_assert!((r.overall() - 100.0 * correct as f64 / rows.len() as f64).abs() < 1e-12);
        prop_assert!((weighted / rows.len() as f64 - r.overall()).abs() < 1e-9);
    }
}

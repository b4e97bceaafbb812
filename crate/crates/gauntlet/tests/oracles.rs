//! Corpus validation and the frozen oracle expectations.
//!
//! Set `SLICEFUZZ_BLESS=1` to rewrite `expect/` from the oracles.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use serde::{Deserialize, Serialize};
use slicefuzz_core::ast_index::{AstIndex, CondId, StmtKey};
use slicefuzz_gauntlet::{
    gauntlet_root, interpret_trace, load_cases, reference_slice, validate_corpus, Class,
    GauntletCase,
};

/// Brute-force cap per validation step. The solvable steps need at most a
/// few thousand trials.
const TRIALS: u64 = 5_000;

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct ArmsExpect {
    seeds: BTreeMap<String, BTreeSet<String>>,
    union: BTreeSet<String>,
    reached: BTreeSet<String>,
}

fn cond_label(index: &AstIndex, c: CondId) -> String {
    let cond = index.conditional(c).expect("known conditional");
    format!("{}:{}", index.file(c.file).name, cond.line())
}

fn key_label(index: &AstIndex, k: StmtKey) -> String {
    format!("{}:{}:{}", index.file(k.file).name, k.line, k.ordinal)
}

fn blessing() -> bool {
    std::env::var_os("SLICEFUZZ_BLESS").is_some()
}

fn check_or_bless(path: &std::path::Path, actual: &str) {
    if blessing() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, actual).unwrap();
        return;
    }
    let frozen = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with SLICEFUZZ_BLESS=1)", path.display()));
    assert_eq!(frozen, actual, "{} drifted from the oracle", path.display());
}

fn arms_of(case: &GauntletCase, work: &std::path::Path) -> ArmsExpect {
    let built = case.build(work).unwrap();
    let ix = &built.index;
    let mut e = ArmsExpect {
        seeds: BTreeMap::new(),
        union: BTreeSet::new(),
        reached: BTreeSet::new(),
    };
    for (name, bytes) in case.seed_bytes().unwrap() {
        let obs = interpret_trace(ix, &built.run(&bytes).unwrap());
        let arms: BTreeSet<String> = obs
            .taken
            .iter()
            .map(|(c, a)| format!("{}#{a}", cond_label(ix, *c)))
            .collect();
        e.union.extend(arms.iter().cloned());
        e.reached.extend(obs.reached.iter().map(|c| cond_label(ix, *c)));
        e.seeds.insert(name, arms);
    }
    e
}

#[test]
fn corpus_covers_every_class() {
    let cases = load_cases(&gauntlet_root()).unwrap();
    assert!(cases.len() >= 12, "only {} cases", cases.len());
    for class in Class::ALL {
        let n = cases.iter().filter(|c| c.class == class).count();
        assert!(n >= 2, "class {} has {n} cases", class.as_str());
    }
}

#[test]
fn corpus_validates() {
    let work = tempfile::tempdir().unwrap();
    let report = validate_corpus(&gauntlet_root(), work.path(), TRIALS).unwrap();
    for c in &report.cases {
        for s in &c.steps {
            eprintln!(
                "{}: {} {:?} solved={} trials={}",
                c.name, s.arm, s.solver, s.solved, s.trials
            );
        }
    }
    let rejected: Vec<String> = report
        .rejected()
        .iter()
        .map(|c| format!("{}: {}", c.name, c.problems.join("; ")))
        .collect();
    assert!(rejected.is_empty(), "rejected cases:\n{}", rejected.join("\n"));
}

#[test]
fn seed_arms_match_frozen_oracle() {
    let work = tempfile::tempdir().unwrap();
    for case in load_cases(&gauntlet_root()).unwrap() {
        let e = arms_of(&case, &work.path().join(&case.name));
        let goal = case.goal.to_string();
        assert!(!e.union.contains(&goal), "{}: seeds cover the goal", case.name);
        let text = serde_json::to_string_pretty(&e).unwrap() + "\n";
        check_or_bless(&case.arms_expect_path(), &text);
    }
}

#[test]
fn reference_slices_match_frozen_oracle() {
    let work = tempfile::tempdir().unwrap();
    for case in load_cases(&gauntlet_root()).unwrap() {
        let built = case.build(&work.path().join(&case.name)).unwrap();
        for c in &case.criteria {
            let cond = c.arm.resolve(&built.index).unwrap();
            let witness = fs::read(&c.witness).unwrap();
            let trace = built.run_until(&witness, cond).unwrap();
            let s = reference_slice(&built.index, &trace, cond).unwrap();
            assert!(!s.statements.is_empty(), "{} {}: empty slice", case.name, c.arm);
            let mut text = String::new();
            for k in &s.statements {
                text.push_str(&key_label(&built.index, *k));
                text.push('\n');
            }
            check_or_bless(&case.slice_expect_path(&c.arm), &text);
        }
    }
}

#[test]
fn loop_accumulator_keeps_every_iteration() {
    let root = gauntlet_root();
    let case = GauntletCase::load(&root.join("token_gate")).unwrap();
    let work = tempfile::tempdir().unwrap();
    let built = case.build(work.path()).unwrap();
    let cond = case.goal.resolve(&built.index).unwrap();
    let witness = fs::read(&case.criteria[0].witness).unwrap();
    let trace = built.run_until(&witness, cond).unwrap();
    let s = reference_slice(&built.index, &trace, cond).unwrap();
    let hash_steps = s
        .positions
        .iter()
        .filter(|p| matches!(trace.events[**p], slicefuzz_core::tracer::TraceEvent::Stmt(k) if k.line == 18))
        .count();
    // "hello" has five characters.
    assert_eq!(hash_steps, 5);
}

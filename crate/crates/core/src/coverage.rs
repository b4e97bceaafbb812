//! Arm coverage, interestingness and roadblock selection.
//!
//! Coverage is computed from execution traces, never from an edge bitmap.
//! Every guard record in a seed's trace marks the arm it took as covered with
//! that seed as witness. Conditionals that are reached but not fully covered
//! carry an interestingness score; roadblocks are drawn from the highest
//! scores and each draw lowers the score so equal peers take turns.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ast_index::{AstIndex, CondId, Conditional, StmtKey};
use crate::tracer::{ExecutionTrace, TraceEvent};
use crate::util::atomic_write;
use crate::Result;

/// Added to a conditional's score when solving it produced new coverage.
pub const REWARD_DELTA: i64 = 2;
/// Subtracted from a conditional's score each time it is selected.
pub const SELECTION_PENALTY: i64 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmStatus {
    pub covered: bool,
    /// Seeds that took this arm, most recent last.
    pub witness_seeds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondCoverage {
    pub file: String,
    pub line: u32,
    pub arms: BTreeMap<u16, ArmStatus>,
    /// Seeds whose trace evaluated the guard at all, most recent last.
    pub reach_witnesses: Vec<String>,
}

impl CondCoverage {
    pub fn fully_covered(&self) -> bool {
        self.arms.values().all(|a| a.covered)
    }

    pub fn uncovered_arms(&self) -> Vec<u16> {
        self.arms
            .iter()
            .filter(|(_, a)| !a.covered)
            .map(|(id, _)| *id)
            .collect()
    }
}

/// An uncovered arm of a reached conditional plus a seed that reaches it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roadblock {
    pub conditional: CondId,
    pub target_arm: u16,
    pub seed: String,
}

/// One input as seen by the analyzer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRef {
    pub id: String,
    pub path: PathBuf,
}

/// Something that can turn an input into a trace.
pub trait TraceProvider {
    fn trace(&mut self, input: &[u8]) -> Result<ExecutionTrace>;
}

impl<F> TraceProvider for F
where
    F: FnMut(&[u8]) -> Result<ExecutionTrace>,
{
    fn trace(&mut self, input: &[u8]) -> Result<ExecutionTrace> {
        self(input)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CoverageReport {
    pub conds: BTreeMap<CondId, CondCoverage>,
    pub seed_lengths: HashMap<String, usize>,
    analyzed: HashMap<String, (u64, u128)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InterestMap {
    pub scores: BTreeMap<CondId, i64>,
}

impl InterestMap {
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, cond: CondId) -> Option<i64> {
        self.scores.get(&cond).copied()
    }
}

/// (conditional, arm) pairs taken in one trace, plus every conditional the
/// trace reached, including those whose arm could not be decided.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArmHits {
    pub taken: BTreeSet<(CondId, u16)>,
    pub reached: BTreeSet<CondId>,
    /// Arm per guard evaluation in trace order, `None` for reach-only.
    pub sequence: Vec<(CondId, Option<u16>)>,
}

/// Decides the arm taken at every guard evaluation in `trace`.
///
/// The arm mark emitted by the instrumented guard is authoritative. When it
/// is missing (trace cut right after the guard, crash inside the guard) the
/// next statement at the same call depth decides: the arm whose body holds
/// it, else the single synthetic arm, else reach-only.
pub fn arm_hits(trace: &ExecutionTrace, index: &AstIndex) -> ArmHits {
    let events = &trace.events;
    let mut depth_at = Vec::with_capacity(events.len());
    let mut depth: i64 = 0;
    for e in events {
        match e {
            TraceEvent::Enter { .. } => depth += 1,
            TraceEvent::Exit { .. } => depth -= 1,
            _ => {}
        }
        depth_at.push(depth);
    }

    let mut decided: Vec<Option<u16>> = vec![None; events.len()];
    let mut pending: HashMap<StmtKey, Vec<usize>> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        match e {
            TraceEvent::Stmt(k) => {
                if index.cond_of_unit(*k).is_some() {
                    pending.entry(*k).or_default().push(i);
                }
            }
            TraceEvent::Arm { guard, arm } => {
                if let Some(pos) = pending.get_mut(guard).and_then(|v| v.pop()) {
                    decided[pos] = Some(*arm);
                }
            }
            _ => {}
        }
    }

    let mut hits = ArmHits::default();
    for (i, e) in events.iter().enumerate() {
        let TraceEvent::Stmt(k) = e else { continue };
        let Some(cond) = index.cond_of_unit(*k) else {
            continue;
        };
        let arm = decided[i]
            .filter(|a| (*a as usize) < cond.arms.len())
            .or_else(|| successor_arm(cond, events, &depth_at, i, index));
        hits.reached.insert(cond.cond_id);
        if let Some(a) = arm {
            hits.taken.insert((cond.cond_id, a));
        }
        hits.sequence.push((cond.cond_id, arm));
    }
    hits
}

fn successor_arm(
    cond: &Conditional,
    events: &[TraceEvent],
    depth_at: &[i64],
    at: usize,
    index: &AstIndex,
) -> Option<u16> {
    let depth = depth_at[at];
    let mut next = None;
    for (j, e) in events.iter().enumerate().skip(at + 1) {
        if depth_at[j] < depth {
            break;
        }
        if let TraceEvent::Stmt(k) = e {
            if depth_at[j] == depth {
                next = Some(*k);
                break;
            }
        }
    }
    let unit = index.unit(next?)?;
    // Innermost arm body containing the successor.
    let inside = cond
        .arms
        .iter()
        .filter(|a| !a.synthetic && a.body_range.contains(&unit.range))
        .min_by_key(|a| a.body_range.end_byte - a.body_range.start_byte);
    if let Some(a) = inside {
        return Some(a.arm_id);
    }
    let synthetic: Vec<_> = cond.arms.iter().filter(|a| a.synthetic).collect();
    if synthetic.len() == 1 && !cond.stmt_range.contains(&unit.range) {
        return Some(synthetic[0].arm_id);
    }
    None
}

/// The arm taken at the first evaluation of `cond` in `trace`.
pub fn covered_arm(cond: &Conditional, trace: &ExecutionTrace, index: &AstIndex) -> Option<u16> {
    arm_hits(trace, index)
        .sequence
        .into_iter()
        .find(|(c, _)| *c == cond.cond_id)
        .and_then(|(_, a)| a)
}

impl CoverageReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one seed's trace into the report.
    pub fn record_trace(&mut self, seed_id: &str, seed_len: usize, trace: &ExecutionTrace, index: &AstIndex) {
        let hits = arm_hits(trace, index);
        self.record_hits(seed_id, seed_len, &hits, index);
    }

    pub fn record_hits(&mut self, seed_id: &str, seed_len: usize, hits: &ArmHits, index: &AstIndex) {
        self.seed_lengths.insert(seed_id.to_string(), seed_len);
        for cid in &hits.reached {
            let Some(cond) = index.conditional(*cid) else {
                continue;
            };
            let entry = self.conds.entry(*cid).or_insert_with(|| CondCoverage {
                file: index.file(cid.file).name.clone(),
                line: cond.line(),
                arms: cond
                    .arms
                    .iter()
                    .map(|a| (a.arm_id, ArmStatus::default()))
                    .collect(),
                reach_witnesses: Vec::new(),
            });
            push_witness(&mut entry.reach_witnesses, seed_id);
        }
        for (cid, arm) in &hits.taken {
            if let Some(status) = self.conds.get_mut(cid).and_then(|c| c.arms.get_mut(arm)) {
                status.covered = true;
                push_witness(&mut status.witness_seeds, seed_id);
            }
        }
    }

    pub fn is_analyzed(&self, seed_id: &str) -> bool {
        self.analyzed.contains_key(seed_id)
    }

    pub fn covered_pairs(&self) -> BTreeSet<(CondId, u16)> {
        self.conds
            .iter()
            .flat_map(|(c, cc)| {
                cc.arms
                    .iter()
                    .filter(|(_, a)| a.covered)
                    .map(move |(id, _)| (*c, *id))
            })
            .collect()
    }

    pub fn arms_covered(&self) -> usize {
        self.conds
            .values()
            .map(|c| c.arms.values().filter(|a| a.covered).count())
            .sum()
    }

    pub fn reached(&self) -> BTreeSet<CondId> {
        self.conds.keys().copied().collect()
    }

    pub fn fully_covered(&self) -> BTreeSet<CondId> {
        self.conds
            .iter()
            .filter(|(_, c)| c.fully_covered())
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn is_covered(&self, cond: CondId, arm: u16) -> bool {
        self.conds
            .get(&cond)
            .and_then(|c| c.arms.get(&arm))
            .map(|a| a.covered)
            .unwrap_or(false)
    }

    /// Shortest seed that reached `cond`, ties going to the most recent.
    pub fn witness_for(&self, cond: CondId) -> Option<&str> {
        let c = self.conds.get(&cond)?;
        let mut best: Option<(&str, usize)> = None;
        for s in &c.reach_witnesses {
            let len = self.seed_lengths.get(s).copied().unwrap_or(usize::MAX);
            if best.map(|(_, l)| len <= l).unwrap_or(true) {
                best = Some((s, len));
            }
        }
        best.map(|(s, _)| s)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (id, c) in &self.conds {
            let arms: serde_json::Map<String, serde_json::Value> = c
                .arms
                .iter()
                .map(|(a, s)| {
                    (
                        a.to_string(),
                        serde_json::json!({"covered": s.covered, "witnesses": s.witness_seeds}),
                    )
                })
                .collect();
            out.insert(
                id.to_string(),
                serde_json::json!({"file": c.file, "line": c.line, "arms": arms}),
            );
        }
        serde_json::Value::Object(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &serde_json::to_vec_pretty(&self.to_json())?)
    }
}

fn push_witness(list: &mut Vec<String>, seed: &str) {
    if let Some(pos) = list.iter().position(|s| s == seed) {
        list.remove(pos);
    }
    list.push(seed.to_string());
}

fn file_key(path: &Path) -> Option<(u64, u128)> {
    let md = std::fs::metadata(path).ok()?;
    let mtime = md
        .modified()
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    Some((md.len(), mtime))
}

/// Brings the report and interest map up to date with `corpus`.
///
/// Seeds already analyzed with the same size and mtime are skipped. Seeds
/// that cannot be read or traced are skipped with a warning and retried on
/// the next call. Returns the number of seeds analyzed.
pub fn analyze_corpus(
    corpus: &[SeedRef],
    index: &AstIndex,
    traces: &mut dyn TraceProvider,
    report: &mut CoverageReport,
    interest: &mut InterestMap,
) -> usize {
    let mut analyzed = 0;
    for seed in corpus {
        let Some(key) = file_key(&seed.path) else {
            log::warn!("seed {} vanished before analysis", seed.id);
            continue;
        };
        if report.analyzed.get(&seed.id) == Some(&key) {
            continue;
        }
        let bytes = match std::fs::read(&seed.path) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("skipping seed {}: {e}", seed.id);
                continue;
            }
        };
        match traces.trace(&bytes) {
            Ok(trace) => {
                report.record_trace(&seed.id, bytes.len(), &trace, index);
                report.analyzed.insert(seed.id.clone(), key);
                analyzed += 1;
            }
            Err(e) => log::warn!("skipping seed {}: trace failed: {e}", seed.id),
        }
    }
    update_interest(report, interest);
    analyzed
}

/// Drops fully covered conditionals and enters newly reached, partially
/// covered ones with score 0.
pub fn update_interest(report: &CoverageReport, interest: &mut InterestMap) {
    for (id, c) in &report.conds {
        if c.fully_covered() {
            interest.scores.remove(id);
        } else {
            interest.scores.entry(*id).or_insert(0);
        }
    }
}

/// Picks a roadblock: a random conditional among those with the highest
/// score, a random uncovered arm of it, and its preferred witness seed. The
/// chosen conditional's score drops by [`SELECTION_PENALTY`].
pub fn retrieve_roadblock(
    report: &CoverageReport,
    interest: &mut InterestMap,
    rng: &mut impl Rng,
) -> Option<Roadblock> {
    let max = *interest.scores.values().max()?;
    let candidates: Vec<CondId> = interest
        .scores
        .iter()
        .filter(|(_, s)| **s == max)
        .map(|(c, _)| *c)
        .collect();
    let cond = candidates[rng.gen_range(0..candidates.len())];
    if let Some(s) = interest.scores.get_mut(&cond) {
        *s -= SELECTION_PENALTY;
    }
    let cov = report.conds.get(&cond)?;
    let uncovered = cov.uncovered_arms();
    if uncovered.is_empty() {
        return None;
    }
    let target_arm = uncovered[rng.gen_range(0..uncovered.len())];
    let seed = report.witness_for(cond)?.to_string();
    Some(Roadblock {
        conditional: cond,
        target_arm,
        seed,
    })
}

pub fn reward(interest: &mut InterestMap, cond: CondId) {
    if let Some(s) = interest.scores.get_mut(&cond) {
        *s += REWARD_DELTA;
    }
}

pub fn save_interest(interest: &InterestMap, path: &Path) -> Result<()> {
    let map: BTreeMap<String, i64> = interest
        .scores
        .iter()
        .map(|(c, s)| (c.to_string(), *s))
        .collect();
    atomic_write(path, &serde_json::to_vec_pretty(&map)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast_index::FileId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cid(b: u32) -> CondId {
        CondId {
            file: FileId(0),
            byte: b,
        }
    }

    fn report_with(conds: &[u32]) -> CoverageReport {
        let mut r = CoverageReport::new();
        for &b in conds {
            r.conds.insert(
                cid(b),
                CondCoverage {
                    file: "t.c".into(),
                    line: b,
                    arms: [(0, ArmStatus { covered: true, witness_seeds: vec!["s".into()] }), (1, ArmStatus::default())]
                        .into_iter()
                        .collect(),
                    reach_witnesses: vec!["s".into()],
                },
            );
        }
        r.seed_lengths.insert("s".into(), 3);
        r
    }

    #[test]
    fn single_candidate_is_selected_and_penalized() {
        let r = report_with(&[1]);
        let mut i = InterestMap::default();
        update_interest(&r, &mut i);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pick = retrieve_roadblock(&r, &mut i, &mut rng).unwrap();
        assert_eq!(pick.conditional, cid(1));
        assert_eq!(pick.target_arm, 1);
        assert_eq!(i.get(cid(1)), Some(-1));
    }

    #[test]
    fn three_peers_each_selected_once() {
        let r = report_with(&[1, 2, 3]);
        let mut i = InterestMap::default();
        update_interest(&r, &mut i);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut got: Vec<u32> = (0..3)
            .map(|_| retrieve_roadblock(&r, &mut i, &mut rng).unwrap().conditional.byte)
            .collect();
        got.sort();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn reward_then_select() {
        let r = report_with(&[1, 2, 3]);
        let mut i = InterestMap::default();
        update_interest(&r, &mut i);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        reward(&mut i, cid(2));
        let pick = retrieve_roadblock(&r, &mut i, &mut rng).unwrap();
        assert_eq!(pick.conditional, cid(2));
    }

    #[test]
    fn reward_arithmetic() {
        let mut i = InterestMap::default();
        i.scores.insert(cid(1), -1);
        reward(&mut i, cid(1));
        assert_eq!(i.get(cid(1)), Some(1));
        reward(&mut i, cid(1));
        assert_eq!(i.get(cid(1)), Some(-1 + 2 * REWARD_DELTA));
        reward(&mut i, cid(9));
        assert_eq!(i.get(cid(9)), None);
    }

    #[test]
    fn fully_covered_leaves_interest() {
        let mut r = report_with(&[1]);
        let mut i = InterestMap::default();
        update_interest(&r, &mut i);
        reward(&mut i, cid(1));
        r.conds.get_mut(&cid(1)).unwrap().arms.get_mut(&1).unwrap().covered = true;
        update_interest(&r, &mut i);
        assert!(i.is_empty());
    }

    #[test]
    fn witness_prefers_short_then_recent() {
        let mut r = report_with(&[1]);
        let c = r.conds.get_mut(&cid(1)).unwrap();
        c.reach_witnesses = vec!["a".into(), "b".into(), "c".into()];
        r.seed_lengths.insert("a".into(), 2);
        r.seed_lengths.insert("b".into(), 5);
        r.seed_lengths.insert("c".into(), 2);
        assert_eq!(r.witness_for(cid(1)), Some("c"));
    }

    #[test]
    fn empty_interest_gives_no_roadblock() {
        let r = CoverageReport::new();
        let mut i = InterestMap::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(retrieve_roadblock(&r, &mut i, &mut rng).is_none());
    }

    #[test]
    fn successor_rule_and_marks_on_real_trace() {
        let src = "int f(int x) {\n  int r = 0;\n  if (x > 1) {\n    r = 1;\n  }\n  if (x) {\n  }\n  r += 2;\n  return r;\n}\n";
        let idx = AstIndex::from_sources(vec![("t.c".into(), src.as_bytes().to_vec())]).unwrap();
        let key = |line: u32| StmtKey { file: FileId(0), line, ordinal: 0 };
        let c1 = idx.conditional_at(FileId(0), 3).unwrap().clone();
        let c2 = idx.conditional_at(FileId(0), 6).unwrap().clone();
        // No marks: the successor decides the first guard; the second has an
        // empty then-body, so the successor points at the synthetic else.
        let t = ExecutionTrace {
            seed_id: None,
            events: vec![
                TraceEvent::Stmt(key(2)),
                TraceEvent::Stmt(key(3)),
                TraceEvent::Stmt(key(4)),
                TraceEvent::Stmt(key(6)),
                TraceEvent::Stmt(key(8)),
            ],
            truncated_at: None,
            exit_status: crate::tracer::TraceExit::Normal,
        };
        assert_eq!(covered_arm(&c1, &t, &idx), Some(0));
        assert_eq!(covered_arm(&c2, &t, &idx), Some(1));
        // With a mark the guard value wins.
        let mut marked = t.clone();
        marked.events.insert(4, TraceEvent::Arm { guard: key(6), arm: 0 });
        assert_eq!(covered_arm(&c2, &marked, &idx), Some(0));
    }
}

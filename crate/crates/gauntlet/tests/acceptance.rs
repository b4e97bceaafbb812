//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p slicefuzz-gauntlet --test acceptance`. The
//! process exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicefuzz_core::ast_index::{AstIndex, CondId};
use slicefuzz_core::config::{CampaignConfig, CampaignSection, Mode, SubjectConfig};
use slicefuzz_core::coverage::{
    analyze_corpus, reward, retrieve_roadblock, update_interest, ArmHits, CoverageReport,
    InterestMap, SeedRef,
};
use slicefuzz_core::orchestrator::{run_campaign, CampaignMetrics, Summary};
use slicefuzz_core::slicer::build_slice;
use slicefuzz_core::solver::{decode_input, decode_response, encode_input, fence, BackendKind, SolverConfig};
use slicefuzz_gauntlet::{
    gauntlet_root, interpret_trace, load_cases, reference_slice, ArmSpec, Class, GauntletCase,
    StepSolver, CASE_TIMEOUT,
};

const SLICER_SECS: f64 = 30.0;
const COVERAGE_SECS: f64 = 10.0;
const FAIRNESS_K: usize = 5;
const FAIRNESS_M: usize = 50;
const REWARD_TRIALS: usize = 100;
const E2E_MIN_CASES: usize = 8;
const E2E_CASES: usize = 10;
const E2E_MAX_ROADBLOCKS: u64 = 3;
const E2E_WALL_SECS: f64 = 120.0;
const CONTROL_EXECS: u64 = 10_000;
const LATENCY_MEDIAN_SECS: f64 = 1.0;
const RATIO_INJECTIONS: u64 = 10;
const RATIO_EXPECTED: f64 = 0.30;
const QUERY_BUDGET: u64 = 5;
const ROUNDTRIPS: usize = 10_000;
/// Logical seconds without new coverage before a roadblock attempt.
const PLATEAU_SECS: f64 = 0.2;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, result: Result<String, String>) -> Verdict {
    match result {
        Ok(detail) => Verdict {
            name,
            pass: true,
            detail,
        },
        Err(detail) => Verdict {
            name,
            pass: false,
            detail,
        },
    }
}

type Check = Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn slicer_soundness(cases: &[GauntletCase], work: &Path) -> Check {
    let t0 = Instant::now();
    let mut checked = 0;
    let mut failures = Vec::new();
    for case in cases {
        let built = case.build(&work.join(&case.name)).map_err(err)?;
        for c in &case.criteria {
            let cond = c.arm.resolve(&built.index).map_err(err)?;
            let witness = fs::read(&c.witness).map_err(err)?;
            let trace = built.run_until(&witness, cond).map_err(err)?;
            let reference = reference_slice(&built.index, &trace, cond).map_err(err)?;
            let slice = build_slice(&built.index, &trace, cond, c.arm.arm).map_err(err)?;
            let missing: Vec<_> = reference.statements.difference(&slice.statements).collect();
            if !missing.is_empty() {
                failures.push(format!("{} {}: missing {missing:?}", case.name, c.arm));
            }
            if !reparses(&slice.flattened) {
                failures.push(format!("{} {}: flattened slice does not parse", case.name, c.arm));
            }
            checked += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= SLICER_SECS {
        failures.push(format!("took {secs:.1}s"));
    }
    if failures.is_empty() {
        Ok(format!("{checked} criteria over {} cases in {secs:.1}s", cases.len()))
    } else {
        Err(failures.join("; "))
    }
}

fn reparses(text: &str) -> bool {
    let mut parser = tree_sitter::Parser::new();
    parser
        .set_language(&tree_sitter_c::LANGUAGE.into())
        .expect("C grammar loads");
    parser
        .parse(text, None)
        .map(|t| !t.root_node().has_error())
        .unwrap_or(false)
}

fn coverage_equivalence(cases: &[GauntletCase], work: &Path) -> Check {
    let mut builds = Vec::new();
    for case in cases {
        builds.push(case.build(&work.join(&case.name)).map_err(err)?);
    }
    let t0 = Instant::now();
    let mut failures = Vec::new();
    for (case, built) in cases.iter().zip(&builds) {
        let corpus: Vec<SeedRef> = case
            .seeds
            .iter()
            .map(|p| SeedRef {
                id: p.file_name().unwrap().to_string_lossy().into_owned(),
                path: p.clone(),
            })
            .collect();
        let mut traces = Vec::new();
        let mut provider = |b: &[u8]| {
            let t = built.program.run_traced(b, None, CASE_TIMEOUT);
            if let Ok(t) = &t {
                traces.push(t.clone());
            }
            t
        };
        let mut report = CoverageReport::new();
        let mut interest = InterestMap::default();
        analyze_corpus(&corpus, &built.index, &mut provider, &mut report, &mut interest);
        let mut expected = BTreeSet::new();
        for t in &traces {
            expected.extend(interpret_trace(&built.index, t).taken);
        }
        let actual = report.covered_pairs();
        if expected.is_empty() {
            failures.push(format!("{}: seeds cover nothing", case.name));
        } else if actual != expected {
            failures.push(format!(
                "{}: analyzer and oracle disagree on {:?}",
                case.name,
                actual.symmetric_difference(&expected).collect::<Vec<_>>()
            ));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= COVERAGE_SECS {
        failures.push(format!("took {secs:.1}s"));
    }
    if failures.is_empty() {
        Ok(format!("{} cases match exactly in {secs:.1}s", cases.len()))
    } else {
        Err(failures.join("; "))
    }
}

/// Index with `k` conditionals, each reached with only its else arm taken.
fn selection_fixture(k: usize) -> (AstIndex, CoverageReport, InterestMap, Vec<CondId>) {
    let mut src = String::from("int f(int x) {\n");
    for i in 0..k {
        src.push_str(&format!("  if (x == {i})\n    return {i};\n"));
    }
    src.push_str("  return -1;\n}\n");
    let index = AstIndex::from_sources(vec![("sel.c".into(), src.into_bytes())]).unwrap();
    let conds: Vec<CondId> = index.conditionals.keys().copied().collect();
    let mut hits = ArmHits::default();
    for c in &conds {
        hits.reached.insert(*c);
        hits.taken.insert((*c, 1));
        hits.sequence.push((*c, Some(1)));
    }
    let mut report = CoverageReport::new();
    report.record_hits("seed", 1, &hits, &index);
    let mut interest = InterestMap::default();
    update_interest(&report, &mut interest);
    (index, report, interest, conds)
}

fn fairness() -> Check {
    let (_, report, mut interest, conds) = selection_fixture(FAIRNESS_K);
    if conds.len() != FAIRNESS_K {
        return Err(format!("fixture has {} conditionals", conds.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts: BTreeMap<CondId, usize> = BTreeMap::new();
    for _ in 0..FAIRNESS_M {
        let rb = retrieve_roadblock(&report, &mut interest, &mut rng).ok_or("no roadblock")?;
        *counts.entry(rb.conditional).or_default() += 1;
    }
    let per = FAIRNESS_M / FAIRNESS_K;
    let got: Vec<usize> = conds.iter().map(|c| counts.get(c).copied().unwrap_or(0)).collect();
    if got.iter().all(|n| *n == per) {
        Ok(format!("k={FAIRNESS_K} M={FAIRNESS_M}: each selected {per} times"))
    } else {
        Err(format!("selection counts {got:?}"))
    }
}

fn reward_precedence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..REWARD_TRIALS {
        let k = rng.gen_range(2..8);
        let (_, report, mut interest, _) = selection_fixture(k);
        for _ in 0..rng.gen_range(0..20) {
            let rb = retrieve_roadblock(&report, &mut interest, &mut rng).ok_or("no roadblock")?;
            if rng.gen_bool(0.3) {
                reward(&mut interest, rb.conditional);
            }
        }
        let c = retrieve_roadblock(&report, &mut interest, &mut rng)
            .ok_or("no roadblock")?
            .conditional;
        reward(&mut interest, c);
        let next = retrieve_roadblock(&report, &mut interest, &mut rng)
            .ok_or("no roadblock")?
            .conditional;
        if next != c {
            return Err(format!("trial {trial}: rewarded {c}, next was {next}"));
        }
    }
    Ok(format!("{REWARD_TRIALS} seeded trials"))
}

fn campaign_config(case_dir: &Path, sources: Vec<PathBuf>, out: &Path) -> CampaignConfig {
    CampaignConfig {
        subject: SubjectConfig {
            sources,
            cc: "cc".into(),
            cflags: vec!["-O1".into(), "-w".into()],
            args: Vec::new(),
        },
        campaign: CampaignSection {
            seeds: case_dir.join("seeds"),
            out: out.to_path_buf(),
            plateau_secs: PLATEAU_SECS,
            rng_seed: 1,
            wall_secs: E2E_WALL_SECS,
            mode: Mode::Deterministic,
            ..CampaignSection::default()
        },
        solver: SolverConfig::default(),
    }
}

fn case_config(case: &GauntletCase, out: &Path) -> CampaignConfig {
    let mut cfg = campaign_config(&case.dir, case.sources.clone(), out);
    cfg.subject.args = case.args.clone();
    cfg.campaign.stop_on_arms = vec![case.goal.to_string()];
    cfg
}

/// Whether any input in the campaign's queue takes `goal`, by the oracle.
fn queue_covers(case: &GauntletCase, out: &Path, goal: &ArmSpec) -> Result<bool, String> {
    let built = case.build(&out.join("oracle-build")).map_err(err)?;
    let cond = goal.resolve(&built.index).map_err(err)?;
    let queue = out.join("main").join("queue");
    for entry in fs::read_dir(&queue).map_err(err)? {
        let path = entry.map_err(err)?.path();
        if !path.is_file() {
            continue;
        }
        let input = fs::read(&path).map_err(err)?;
        let obs = interpret_trace(&built.index, &built.run(&input).map_err(err)?);
        if obs.taken.contains(&(cond, goal.arm)) {
            return Ok(true);
        }
    }
    Ok(false)
}

struct E2eResult {
    pass: bool,
    line: String,
    latencies: Vec<f64>,
}

fn e2e_case(case: &GauntletCase, work: &Path) -> Result<E2eResult, String> {
    let out = work.join(&case.name).join("solve");
    let mut cfg = case_config(case, &out);
    cfg.campaign.max_roadblocks = Some(E2E_MAX_ROADBLOCKS);
    cfg.solver.query_budget = 100;
    cfg.solver.bruteforce_trials = 20_000;
    match case.campaign_solver {
        StepSolver::Bruteforce => cfg.solver.backend = BackendKind::Bruteforce,
        StepSolver::Scripted => {
            cfg.solver.backend = BackendKind::Scripted;
            cfg.solver.replay = case.replay.clone();
        }
    }
    let t0 = Instant::now();
    let metrics = run_campaign(cfg).map_err(err)?;
    let secs = t0.elapsed().as_secs_f64();
    let covered = queue_covers(case, &out, &case.goal)?;
    let attempts = metrics.roadblocks.len() as u64;
    let latencies = metrics
        .roadblocks
        .iter()
        .filter_map(|r| r.pipeline_latency_s)
        .collect();

    let control_out = work.join(&case.name).join("control");
    let mut control = case_config(case, &control_out);
    control.campaign.max_execs = Some(CONTROL_EXECS);
    control.campaign.wall_secs = 3600.0;
    let control_metrics = run_campaign(control).map_err(err)?;
    let control_covered = queue_covers(case, &control_out, &case.goal)?;

    let pass = covered
        && attempts <= E2E_MAX_ROADBLOCKS
        && secs <= E2E_WALL_SECS
        && !control_covered;
    Ok(E2eResult {
        pass,
        line: format!(
            "{}: covered={covered} attempts={attempts} {secs:.1}s; control covered={control_covered} after {} execs",
            case.name, control_metrics.execs
        ),
        latencies,
    })
}

fn end_to_end(cases: &[GauntletCase], work: &Path, latencies: &mut Vec<f64>) -> Check {
    let chosen: Vec<&GauntletCase> = cases.iter().filter(|c| c.class != Class::HashGated).collect();
    if chosen.len() != E2E_CASES {
        return Err(format!("expected {E2E_CASES} non-hash cases, found {}", chosen.len()));
    }
    let mut passed = 0;
    let mut lines = Vec::new();
    for case in chosen {
        match e2e_case(case, work) {
            Ok(r) => {
                passed += r.pass as usize;
                latencies.extend(r.latencies);
                eprintln!("  {}", r.line);
                lines.push(r.line);
            }
            Err(e) => {
                eprintln!("  {}: error {e}", case.name);
                lines.push(format!("{}: {e}", case.name));
            }
        }
    }
    let detail = format!("{passed}/{E2E_CASES} cases broken and uncovered by the control");
    if passed >= E2E_MIN_CASES {
        Ok(detail)
    } else {
        Err(format!("{detail}: {}", lines.join("; ")))
    }
}

fn pipeline_latency(latencies: &mut [f64]) -> Check {
    if latencies.is_empty() {
        return Err("no roadblock attempts recorded".into());
    }
    latencies.sort_by(|a, b| a.total_cmp(b));
    let n = latencies.len();
    let median = if n % 2 == 1 {
        latencies[n / 2]
    } else {
        (latencies[n / 2 - 1] + latencies[n / 2]) / 2.0
    };
    let detail = format!("median {median:.3}s over {n} roadblocks");
    if median <= LATENCY_MEDIAN_SECS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ratio_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ratio")
}

fn ratio_config(out: &Path) -> CampaignConfig {
    let dir = ratio_fixture();
    let mut cfg = campaign_config(&dir, vec![dir.join("src/ratio.c")], out);
    cfg.campaign.max_roadblocks = Some(RATIO_INJECTIONS);
    cfg.solver.backend = BackendKind::Scripted;
    cfg.solver.replay = Some(dir.join("replay.json"));
    cfg
}

fn read_summary(out: &Path) -> Result<Summary, String> {
    let text = fs::read_to_string(out.join("summary.json")).map_err(err)?;
    serde_json::from_str(&text).map_err(err)
}

fn effective_ratio(work: &Path) -> Check {
    let out = work.join("ratio");
    run_campaign(ratio_config(&out)).map_err(err)?;
    let s = read_summary(&out)?;
    let ratio = s.effective_ratio.ok_or("summary has no effective ratio")?;
    let detail = format!("{} of {} injections kept, ratio {ratio:.2}", s.injected_kept, s.injected);
    if s.injected == RATIO_INJECTIONS && ratio == RATIO_EXPECTED {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Minimal chat-completion endpoint that counts requests.
fn mock_endpoint(count: Arc<AtomicU64>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock endpoint");
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; len];
            let _ = reader.read_exact(&mut body);
            count.fetch_add(1, Ordering::SeqCst);
            let reply = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": fence(b"zzzzzzzz")}}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

fn budget_conservation(work: &Path) -> Check {
    let count = Arc::new(AtomicU64::new(0));
    let endpoint = mock_endpoint(count.clone());
    std::env::set_var("SOLVER_ENDPOINT", &endpoint);
    let out = work.join("budget");
    let mut cfg = ratio_config(&out);
    cfg.campaign.max_roadblocks = None;
    cfg.campaign.max_execs = Some(3_000);
    cfg.solver.backend = BackendKind::Remote;
    cfg.solver.replay = None;
    cfg.solver.query_budget = QUERY_BUDGET;
    cfg.solver.timeout_secs = 5.0;
    let metrics: CampaignMetrics = run_campaign(cfg).map_err(err)?;
    let requests = count.load(Ordering::SeqCst);
    let last_attempt = metrics
        .roadblocks
        .last()
        .map(|r| r.elapsed_s)
        .ok_or("no roadblock attempts")?;
    let detail = format!(
        "{requests} requests for budget {QUERY_BUDGET}, {} attempts, {} execs, last attempt at {last_attempt:.2}s",
        metrics.roadblocks.len(),
        metrics.execs
    );
    if requests == QUERY_BUDGET
        && metrics.solver_requests == QUERY_BUDGET
        && metrics.solver_exhausted
        && metrics.execs >= 3_000
        && metrics.roadblocks.len() as u64 == QUERY_BUDGET
    {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn encoding_roundtrip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..ROUNDTRIPS {
        let len = rng.gen_range(0..=256);
        let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let text = encode_input(&bytes);
        if decode_input(&text).as_deref() != Some(&bytes[..]) {
            return Err(format!("string {i} ({len} bytes) does not survive encoding"));
        }
        if decode_response(&fence(&bytes)).as_deref() != Some(&bytes[..]) {
            return Err(format!("string {i} ({len} bytes) does not survive fencing"));
        }
    }
    Ok(format!("{ROUNDTRIPS} random strings"))
}

/// `roadblocks.csv` without the timing columns.
fn untimed_roadblocks(out: &Path) -> Result<Vec<Vec<String>>, String> {
    let mut reader = csv::Reader::from_path(out.join("roadblocks.csv")).map_err(err)?;
    let header = reader.headers().map_err(err)?.clone();
    let keep: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| !(h.contains("elapsed") || h.contains("latency")))
        .map(|(i, _)| i)
        .collect();
    let mut rows = vec![keep.iter().map(|i| header[*i].to_string()).collect()];
    for rec in reader.records() {
        let rec = rec.map_err(err)?;
        rows.push(keep.iter().map(|i| rec.get(*i).unwrap_or("").to_string()).collect());
    }
    Ok(rows)
}

fn determinism(work: &Path) -> Check {
    let a = work.join("det-a");
    let b = work.join("det-b");
    run_campaign(ratio_config(&a)).map_err(err)?;
    run_campaign(ratio_config(&b)).map_err(err)?;
    let (ra, rb) = (untimed_roadblocks(&a)?, untimed_roadblocks(&b)?);
    let rows = ra.len().saturating_sub(1);
    if ra == rb && rows > 0 {
        Ok(format!("{rows} roadblock rows identical"))
    } else {
        Err(format!("runs differ:\n{ra:?}\n---\n{rb:?}"))
    }
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let work = work.path();
    let cases = load_cases(&gauntlet_root()).expect("gauntlet loads");
    let mut latencies = Vec::new();

    let mut verdicts = vec![
        verdict("slicer-oracle-soundness", slicer_soundness(&cases, &work.join("slice"))),
        verdict("coverage-oracle-equivalence", coverage_equivalence(&cases, &work.join("cov"))),
        verdict("round-robin-fairness", fairness()),
        verdict("reward-precedence", reward_precedence()),
        verdict("end-to-end-roadblocks", end_to_end(&cases, &work.join("e2e"), &mut latencies)),
    ];
    verdicts.push(verdict("pipeline-latency", pipeline_latency(&mut latencies)));
    verdicts.push(verdict("effective-ratio", effective_ratio(work)));
    verdicts.push(verdict("budget-conservation", budget_conservation(work)));
    verdicts.push(verdict("encoding-roundtrip", encoding_roundtrip()));
    verdicts.push(verdict("determinism", determinism(work)));

    let mut failed = 0;
    for v in &verdicts {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
        failed += !v.pass as usize;
    }
    println!("{} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! The campaign loop: fuzz until coverage stalls, then take one roadblock
//! through trace, slice, prompt and solve, inject the answer, and go back to
//! fuzzing.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast_index::{build_ast_index, AstIndex, CondId};
use crate::config::{CampaignConfig, Mode};
use crate::coverage::{
    analyze_corpus, retrieve_roadblock, reward, save_interest, CoverageReport, InterestMap, SeedRef,
};
use crate::fuzzer::{
    detect_plateau, list_queue, ArmPair, Clock, CorpusDirs, Executor, Fuzzer, ImportResult,
    PlateauState, SyncPeer,
};
use crate::slicer::{build_slice, build_slice_within, MAX_SLICE_CHARS};
use crate::solver::{
    build_prompt, roadblock_key, BackendKind, BruteforceBackend, Prompt, Recorder, RemoteBackend,
    ScriptedBackend, SolveRequest, Solver, TracedProbe, PROMPT_TOKEN_LIMIT,
};
use crate::tracer::{instrument, BuildOptions, TracedProgram};
use crate::util::{atomic_write, mean, median};
use crate::{Error, Result};

/// Real time between metric flushes.
pub const FLUSH_INTERVAL: Duration = Duration::from_secs(10);
/// How long the orchestrator waits for the fuzzer thread to import an
/// injected input.
pub const IMPORT_WAIT: Duration = Duration::from_secs(30);
/// Fuzz steps between sync passes on the fuzzer thread.
pub const SYNC_EVERY: u64 = 64;
const ROADBLOCK_RNG_SALT: u64 = 0x5eed_0f_b10c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Kept,
    Discarded,
    DecodeFailed,
    Skipped,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Kept => "kept",
            Outcome::Discarded => "discarded",
            Outcome::DecodeFailed => "decode-failed",
            Outcome::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadblockRecord {
    pub attempt: u64,
    pub elapsed_s: f64,
    pub cond_id: String,
    /// `file:line#arm`
    pub key: String,
    pub arm: u16,
    pub seed: String,
    pub slice_bytes: usize,
    pub solve_latency_s: Option<f64>,
    pub pipeline_latency_s: Option<f64>,
    pub outcome: Outcome,
    /// Arm pairs first covered by the injected input.
    pub new_pairs: usize,
    /// Whether the injected input took the targeted arm.
    pub target_hit: bool,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSample {
    pub elapsed_s: f64,
    pub arms: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignMetrics {
    pub rng_seed: u64,
    pub coverage: Vec<CoverageSample>,
    pub roadblocks: Vec<RoadblockRecord>,
    pub injected: u64,
    pub kept: u64,
    pub execs: u64,
    pub arms_covered: usize,
    pub total_arms: usize,
    pub solver_requests: u64,
    pub solver_exhausted: bool,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub attempts: usize,
    pub kept: usize,
    pub discarded: usize,
    pub decode_failed: usize,
    pub skipped: usize,
    pub injected: u64,
    pub injected_kept: u64,
    /// kept / injected; absent with no injections.
    pub effective_ratio: Option<f64>,
    pub median_solve_latency_s: Option<f64>,
    pub median_pipeline_latency_s: Option<f64>,
    pub mean_pipeline_latency_s: Option<f64>,
    pub execs: u64,
    pub arms_covered: usize,
    pub total_arms: usize,
    pub solver_requests: u64,
    pub solver_exhausted: bool,
    pub rng_seed: u64,
    pub elapsed_s: f64,
}

impl CampaignMetrics {
    pub fn count(&self, outcome: Outcome) -> usize {
        self.roadblocks.iter().filter(|r| r.outcome == outcome).count()
    }

    pub fn summary(&self) -> Summary {
        let mut solve: Vec<f64> = self
            .roadblocks
            .iter()
            .filter(|r| r.outcome != Outcome::Skipped)
            .filter_map(|r| r.solve_latency_s)
            .collect();
        let mut pipeline: Vec<f64> = self
            .roadblocks
            .iter()
            .filter_map(|r| r.pipeline_latency_s)
            .collect();
        Summary {
            attempts: self.roadblocks.len(),
            kept: self.count(Outcome::Kept),
            discarded: self.count(Outcome::Discarded),
            decode_failed: self.count(Outcome::DecodeFailed),
            skipped: self.count(Outcome::Skipped),
            injected: self.injected,
            injected_kept: self.kept,
            effective_ratio: (self.injected > 0).then(|| self.kept as f64 / self.injected as f64),
            median_solve_latency_s: median(&mut solve),
            median_pipeline_latency_s: median(&mut pipeline),
            mean_pipeline_latency_s: mean(&pipeline),
            execs: self.execs,
            arms_covered: self.arms_covered,
            total_arms: self.total_arms,
            solver_requests: self.solver_requests,
            solver_exhausted: self.solver_exhausted,
            rng_seed: self.rng_seed,
            elapsed_s: self.elapsed_s,
        }
    }
}

pub const ROADBLOCKS_HEADER: &str = "attempt,elapsed_s,cond_id,key,arm,seed,slice_bytes,solve_latency_s,pipeline_latency_s,outcome,new_pairs,target_hit";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes `coverage_over_time.csv`, `roadblocks.csv`, `summary.json` and
/// the full `metrics.json` into `out`.
pub fn emit_report(metrics: &CampaignMetrics, out: &Path) -> Result<Summary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut cov = String::from("elapsed_s,arms\n");
    for s in &metrics.coverage {
        cov.push_str(&format!("{:.3},{}\n", s.elapsed_s, s.arms));
    }
    atomic_write(&out.join("coverage_over_time.csv"), cov.as_bytes())?;
    let mut rb = format!("{ROADBLOCKS_HEADER}\n");
    for r in &metrics.roadblocks {
        rb.push_str(&format!(
            "{},{:.3},{},{},{},{},{},{},{},{},{},{}\n",
            r.attempt,
            r.elapsed_s,
            r.cond_id,
            csv_field(&r.key),
            r.arm,
            csv_field(&r.seed),
            r.slice_bytes,
            opt(r.solve_latency_s),
            opt(r.pipeline_latency_s),
            r.outcome.as_str(),
            r.new_pairs,
            r.target_hit
        ));
    }
    atomic_write(&out.join("roadblocks.csv"), rb.as_bytes())?;
    let summary = metrics.summary();
    atomic_write(&out.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    atomic_write(&out.join("metrics.json"), &serde_json::to_vec_pretty(metrics)?)?;
    Ok(summary)
}

pub fn load_metrics(out: &Path) -> Result<CampaignMetrics> {
    let p = out.join("metrics.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Parses `file:line#arm` into an arm pair.
pub fn parse_arm_key(index: &AstIndex, key: &str) -> Option<ArmPair> {
    let (loc, arm) = key.rsplit_once('#')?;
    let cond = index.find_conditional(loc)?;
    let arm: u16 = arm.parse().ok()?;
    cond.arm(arm)?;
    Some((cond.cond_id, arm))
}

/// Everything built once per campaign.
pub struct Campaign {
    pub config: CampaignConfig,
    pub index: Arc<AstIndex>,
    pub program: TracedProgram,
    pub dirs: CorpusDirs,
    report: CoverageReport,
    interest: InterestMap,
    rng: ChaCha8Rng,
    solver: Option<Solver>,
    peer: SyncPeer,
    pub metrics: CampaignMetrics,
    stop_arms: BTreeSet<ArmPair>,
    started: Instant,
    last_flush: Instant,
}

impl Campaign {
    /// Indexes and instruments the subject and sets up the output tree.
    pub fn prepare(config: CampaignConfig) -> Result<Self> {
        let out = config.campaign.out.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let index = build_ast_index(&config.subject.sources).map_err(|e| match e {
            Error::SourceRead { path, source } => {
                Error::Config(format!("cannot read source {}: {source}", path.display()))
            }
            other => other,
        })?;
        for w in &index.warnings {
            log::warn!("{w}");
        }
        let mut opts = BuildOptions::new(out.join("build"));
        opts.cc = config.subject.cc.clone();
        opts.cflags = config.subject.cflags.clone();
        let mut program = instrument(&index, &opts)?;
        program.args = config.subject.args.clone();
        program.trace_cap = config.campaign.trace_cap;
        let index = Arc::new(index);

        let stop_arms = config
            .campaign
            .stop_on_arms
            .iter()
            .map(|k| {
                parse_arm_key(&index, k)
                    .ok_or_else(|| Error::Config(format!("stop_on_arms: no arm {k}")))
            })
            .collect::<Result<BTreeSet<_>>>()?;

        let solver = make_solver(&config, &program, &index, &out)?;
        let dirs = CorpusDirs::new(&out);
        let peer = SyncPeer::open(dirs.clone())?;
        let mut metrics = match load_metrics(&out) {
            Ok(m) if m.rng_seed == config.campaign.rng_seed => m,
            _ => CampaignMetrics::default(),
        };
        metrics.rng_seed = config.campaign.rng_seed;
        metrics.total_arms = index.conditionals.values().map(|c| c.total_arms()).sum();
        let manifest = serde_json::json!({
            "rng_seed": config.campaign.rng_seed,
            "config": config,
            "binary": program.binary,
        });
        atomic_write(&out.join("run.json"), &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(Campaign {
            rng: ChaCha8Rng::seed_from_u64(config.campaign.rng_seed ^ ROADBLOCK_RNG_SALT),
            config,
            index,
            program,
            dirs,
            report: CoverageReport::new(),
            interest: InterestMap::default(),
            solver,
            peer,
            metrics,
            stop_arms,
            started: Instant::now(),
            last_flush: Instant::now(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.campaign.out
    }

    fn executor(&self) -> Executor {
        let program = self.program.clone();
        let timeout = self.config.timeout();
        Box::new(move |input: &[u8]| program.run_traced(input, None, timeout))
    }

    fn solver_active(&self) -> bool {
        self.solver.as_ref().map(|s| !s.exhausted()).unwrap_or(false)
    }

    fn out_of_time(&self) -> bool {
        self.started.elapsed() >= self.config.wall()
    }

    fn roadblock_limit_hit(&self) -> bool {
        self.config
            .campaign
            .max_roadblocks
            .map(|m| self.metrics.roadblocks.len() as u64 >= m)
            .unwrap_or(false)
    }

    fn stop_arms_covered(&self, covered: &BTreeSet<ArmPair>) -> bool {
        !self.stop_arms.is_empty() && self.stop_arms.is_subset(covered)
    }

    fn sample(&mut self, elapsed: Duration, arms: usize) {
        if self.metrics.coverage.last().map(|s| s.arms) != Some(arms) {
            self.metrics.coverage.push(CoverageSample {
                elapsed_s: elapsed.as_secs_f64(),
                arms,
            });
        }
        self.metrics.arms_covered = arms;
    }

    fn maybe_flush(&mut self) -> Result<()> {
        if self.last_flush.elapsed() >= FLUSH_INTERVAL {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.last_flush = Instant::now();
        if let Some(s) = &self.solver {
            self.metrics.solver_requests = s.budget.used;
        }
        emit_report(&self.metrics, &self.config.campaign.out)?;
        save_interest(&self.interest, &self.config.campaign.out.join("interest.json"))?;
        self.report.save(&self.config.campaign.out.join("coverage.json"))
    }

    /// Runs the campaign until the wall-clock budget or another configured
    /// limit is reached.
    pub fn run(mut self) -> Result<CampaignMetrics> {
        match self.config.campaign.mode {
            Mode::Deterministic => self.run_deterministic()?,
            Mode::Parallel => self.run_parallel()?,
        }
        self.metrics.elapsed_s = self.started.elapsed().as_secs_f64();
        self.flush()?;
        Ok(self.metrics)
    }

    fn run_deterministic(&mut self) -> Result<()> {
        let mut fuzzer = Fuzzer::open(
            self.dirs.clone(),
            &self.config.campaign.seeds,
            self.index.clone(),
            self.executor(),
            self.config.campaign.rng_seed,
            Clock::logical(),
            self.config.plateau(),
        )?;
        self.sample(fuzzer.clock.now(), fuzzer.covered.len());
        let mut last_attempt = Duration::ZERO;
        let max_execs = self.config.campaign.max_execs.unwrap_or(u64::MAX);
        loop {
            self.metrics.execs = fuzzer.execs;
            if self.out_of_time()
                || fuzzer.execs >= max_execs
                || self.roadblock_limit_hit()
                || self.stop_arms_covered(&fuzzer.covered)
            {
                break;
            }
            if fuzzer.fuzz_step()?.is_some() {
                self.sample(fuzzer.clock.now(), fuzzer.covered.len());
            }
            let now = fuzzer.clock.now();
            if self.solver_active() && stalled(&fuzzer.plateau, last_attempt, now) {
                last_attempt = now;
                let mut import = |sync_id: u32| -> Result<Option<ImportResult>> {
                    Ok(fuzzer
                        .sync_import()?
                        .into_iter()
                        .find(|r| r.sync_id == sync_id))
                };
                self.attempt(now, &mut import)?;
                self.sample(fuzzer.clock.now(), fuzzer.covered.len());
            }
            self.maybe_flush()?;
        }
        fuzzer.write_stats()?;
        self.metrics.execs = fuzzer.execs;
        Ok(())
    }

    fn run_parallel(&mut self) -> Result<()> {
        let fuzzer = Fuzzer::open(
            self.dirs.clone(),
            &self.config.campaign.seeds,
            self.index.clone(),
            self.executor(),
            self.config.campaign.rng_seed,
            Clock::real(),
            self.config.plateau(),
        )?;
        let mut covered = fuzzer.covered.clone();
        let clock = Instant::now();
        self.sample(Duration::ZERO, covered.len());
        let stop = Arc::new(AtomicBool::new(false));
        let (events_tx, events) = mpsc::channel::<FuzzEvent>();
        let (nudge, nudges) = mpsc::channel::<()>();
        let max_execs = self.config.campaign.max_execs.unwrap_or(u64::MAX);
        let worker = {
            let stop = stop.clone();
            std::thread::spawn(move || fuzz_worker(fuzzer, stop, events_tx, nudges, max_execs))
        };

        let mut plateau = PlateauState::new(self.config.plateau());
        let mut last_attempt = Duration::ZERO;
        let mut pending_imports: Vec<ImportResult> = Vec::new();
        let mut worker_done = false;
        let mut execs = 0u64;
        let mut fuzz_error = None;
        while !worker_done {
            match events.recv_timeout(Duration::from_millis(50)) {
                Ok(FuzzEvent::Execs(n)) => execs = n,
                Ok(FuzzEvent::Done(err)) => {
                    fuzz_error = err;
                    worker_done = true;
                }
                Ok(ev) => apply_event(ev, &mut covered, &mut plateau, &mut pending_imports, clock.elapsed()),
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => worker_done = true,
            }
            let now = clock.elapsed();
            self.sample(now, covered.len());
            self.metrics.execs = execs;
            if self.out_of_time() || self.roadblock_limit_hit() || self.stop_arms_covered(&covered) {
                stop.store(true, Ordering::Relaxed);
            }
            if !stop.load(Ordering::Relaxed)
                && !worker_done
                && self.solver_active()
                && stalled(&plateau, last_attempt, now)
            {
                last_attempt = now;
                let mut import = |sync_id: u32| -> Result<Option<ImportResult>> {
                    let _ = nudge.send(());
                    let deadline = Instant::now() + IMPORT_WAIT;
                    loop {
                        if let Some(pos) = pending_imports.iter().position(|r| r.sync_id == sync_id) {
                            return Ok(Some(pending_imports.remove(pos)));
                        }
                        let left = deadline.saturating_duration_since(Instant::now());
                        if left.is_zero() {
                            return Ok(None);
                        }
                        match events.recv_timeout(left) {
                            Ok(FuzzEvent::Execs(n)) => execs = n,
                            Ok(FuzzEvent::Done(err)) => {
                                fuzz_error = err;
                                worker_done = true;
                                return Ok(None);
                            }
                            Ok(ev) => apply_event(
                                ev,
                                &mut covered,
                                &mut plateau,
                                &mut pending_imports,
                                clock.elapsed(),
                            ),
                            Err(_) => return Ok(None),
                        }
                    }
                };
                self.attempt(now, &mut import)?;
                self.sample(clock.elapsed(), covered.len());
            }
            self.maybe_flush()?;
        }
        stop.store(true, Ordering::Relaxed);
        let fuzzer = worker
            .join()
            .map_err(|_| Error::Exec("fuzzer thread panicked".into()))?;
        self.metrics.execs = fuzzer.execs;
        self.sample(clock.elapsed(), fuzzer.covered.len());
        match fuzz_error {
            Some(e) => Err(Error::Exec(e)),
            None => Ok(()),
        }
    }

    /// Attempts one roadblock. Records the attempt in the metrics unless no
    /// roadblock was available.
    pub fn attempt(
        &mut self,
        now: Duration,
        import: &mut dyn FnMut(u32) -> Result<Option<ImportResult>>,
    ) -> Result<Option<RoadblockRecord>> {
        let corpus: Vec<SeedRef> = list_queue(&self.dirs.queue)?
            .into_iter()
            .map(|(_, path)| SeedRef {
                id: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                path,
            })
            .collect();
        let program = &self.program;
        let timeout = self.config.timeout();
        let mut provider = |b: &[u8]| program.run_traced(b, None, timeout);
        analyze_corpus(&corpus, &self.index, &mut provider, &mut self.report, &mut self.interest);
        let Some(rb) = retrieve_roadblock(&self.report, &mut self.interest, &mut self.rng) else {
            return Ok(None);
        };
        let attempt_no = self.metrics.roadblocks.len() as u64 + 1;
        let key = roadblock_key(&self.index, rb.conditional, rb.target_arm);
        let mut record = RoadblockRecord {
            attempt: attempt_no,
            elapsed_s: now.as_secs_f64(),
            cond_id: rb.conditional.to_string(),
            key: key.clone(),
            arm: rb.target_arm,
            seed: rb.seed.clone(),
            slice_bytes: 0,
            solve_latency_s: None,
            pipeline_latency_s: None,
            outcome: Outcome::Skipped,
            new_pairs: 0,
            target_hit: false,
            note: String::new(),
        };
        let art = self
            .config
            .campaign
            .out
            .join("artifacts")
            .join("roadblocks")
            .join(format!("{attempt_no:04}"));

        let started = Instant::now();
        let prepared = self.prepare_prompt(rb.conditional, rb.target_arm, &rb.seed, &key);
        record.pipeline_latency_s = Some(started.elapsed().as_secs_f64());
        let (witness, slice, prompt) = match prepared {
            Ok(p) => p,
            Err(e) => {
                log::warn!("roadblock {key} skipped: {e}");
                record.note = e.to_string();
                return self.finish(record);
            }
        };
        record.slice_bytes = slice.flattened.len();
        fs::create_dir_all(&art).map_err(|e| Error::io(&art, e))?;
        atomic_write(&art.join("slice.c.txt"), slice.flattened.as_bytes())?;
        atomic_write(
            &art.join("prompt.txt"),
            format!("{}\n\n{}", prompt.system_text, prompt.user_text).as_bytes(),
        )?;

        let Some(solver) = self.solver.as_mut() else {
            return self.finish(record);
        };
        let request = SolveRequest {
            prompt: &prompt,
            slice: &slice,
            witness: &witness,
            cond: rb.conditional,
            target_arm: rb.target_arm,
        };
        let response = solver.solve(&request);
        self.metrics.solver_requests = solver.budget.used;
        let response = match response {
            Ok(r) => r,
            Err(e) => {
                if matches!(e, Error::BudgetExhausted) || solver.exhausted() {
                    self.metrics.solver_exhausted = true;
                }
                log::warn!("roadblock {key}: solver failed: {e}");
                record.note = e.to_string();
                return self.finish(record);
            }
        };
        if solver.exhausted() {
            self.metrics.solver_exhausted = true;
        }
        record.solve_latency_s = Some(response.latency.as_secs_f64());
        atomic_write(&art.join("response.txt"), response.raw_text.as_bytes())?;
        let Some(bytes) = response.extracted_input else {
            record.outcome = Outcome::DecodeFailed;
            return self.finish(record);
        };
        let sync_id = self.peer.inject_input(&bytes, &key)?;
        let sync_id = crate::fuzzer::parse_seed_id(
            &sync_id.file_name().unwrap_or_default().to_string_lossy(),
        )
        .unwrap_or(0);
        self.metrics.injected += 1;
        match import(sync_id)? {
            Some(r) if r.kept.is_some() => {
                record.outcome = Outcome::Kept;
                record.new_pairs = r.new_pairs.len();
                record.target_hit = r
                    .kept
                    .as_ref()
                    .map(|k| k.fingerprint.contains(&(rb.conditional, rb.target_arm)))
                    .unwrap_or(false);
                self.metrics.kept += 1;
                reward(&mut self.interest, rb.conditional);
            }
            Some(_) => record.outcome = Outcome::Discarded,
            None => {
                record.outcome = Outcome::Discarded;
                record.note = "import not observed".into();
            }
        }
        self.finish(record)
    }

    fn finish(&mut self, record: RoadblockRecord) -> Result<Option<RoadblockRecord>> {
        log::info!(
            "roadblock #{} {} -> {}",
            record.attempt,
            record.key,
            record.outcome.as_str()
        );
        self.metrics.roadblocks.push(record.clone());
        Ok(Some(record))
    }

    /// Trace, slice and prompt for one roadblock.
    fn prepare_prompt(
        &self,
        cond: CondId,
        arm: u16,
        seed: &str,
        key: &str,
    ) -> Result<(Vec<u8>, crate::slicer::Slice, Prompt)> {
        let path = self.dirs.queue.join(seed);
        let witness = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let trace = self
            .program
            .run_traced(&witness, Some(cond), self.config.timeout())?;
        if trace.truncated_at != Some(cond) {
            return Err(Error::Slice(format!("witness {seed} no longer reaches {cond}")));
        }
        let slice = build_slice(&self.index, &trace, cond, arm)?;
        let prompt = build_prompt(&slice.flattened, &witness, key);
        if prompt.estimated_tokens() <= PROMPT_TOKEN_LIMIT {
            return Ok((witness, slice, prompt));
        }
        let slice = build_slice_within(&self.index, &trace, cond, arm, MAX_SLICE_CHARS / 2)?;
        let prompt = build_prompt(&slice.flattened, &witness, key);
        let tokens = prompt.estimated_tokens();
        if tokens > PROMPT_TOKEN_LIMIT {
            return Err(Error::PromptTooLarge {
                tokens,
                limit: PROMPT_TOKEN_LIMIT,
            });
        }
        Ok((witness, slice, prompt))
    }
}

fn apply_event(
    ev: FuzzEvent,
    covered: &mut BTreeSet<ArmPair>,
    plateau: &mut PlateauState,
    pending: &mut Vec<ImportResult>,
    now: Duration,
) {
    match ev {
        FuzzEvent::Kept(pairs) => {
            covered.extend(pairs);
            plateau.mark_new(now);
        }
        FuzzEvent::Imported(results) => {
            for r in results {
                if let Some(k) = &r.kept {
                    covered.extend(k.fingerprint.iter().copied());
                    plateau.mark_new(now);
                }
                pending.push(r);
            }
        }
        FuzzEvent::Execs(_) | FuzzEvent::Done(_) => {}
    }
}

/// Plateau, counted from the later of the last new coverage and the last
/// attempt, so each plateau yields one attempt.
fn stalled(plateau: &PlateauState, last_attempt: Duration, now: Duration) -> bool {
    let mut p = *plateau;
    p.last_new_coverage = p.last_new_coverage.max(last_attempt);
    detect_plateau(&p, now)
}

enum FuzzEvent {
    Kept(BTreeSet<ArmPair>),
    Imported(Vec<ImportResult>),
    Execs(u64),
    Done(Option<String>),
}

fn fuzz_worker(
    mut fuzzer: Fuzzer,
    stop: Arc<AtomicBool>,
    events: mpsc::Sender<FuzzEvent>,
    nudges: mpsc::Receiver<()>,
    max_execs: u64,
) -> Fuzzer {
    let mut steps = 0u64;
    let mut err = None;
    while !stop.load(Ordering::Relaxed) && fuzzer.execs < max_execs {
        match fuzzer.fuzz_step() {
            Ok(Some(e)) => {
                let _ = events.send(FuzzEvent::Kept(e.fingerprint));
            }
            Ok(None) => {}
            Err(e) => {
                err = Some(e.to_string());
                break;
            }
        }
        steps += 1;
        let nudged = nudges.try_recv().is_ok();
        if nudged || steps % SYNC_EVERY == 0 {
            match fuzzer.sync_import() {
                Ok(r) if !r.is_empty() => {
                    let _ = events.send(FuzzEvent::Imported(r));
                }
                Ok(_) => {}
                Err(e) => log::warn!("sync import failed: {e}"),
            }
            let _ = events.send(FuzzEvent::Execs(fuzzer.execs));
        }
    }
    let _ = fuzzer.write_stats();
    let _ = events.send(FuzzEvent::Execs(fuzzer.execs));
    let _ = events.send(FuzzEvent::Done(err));
    fuzzer
}

fn make_solver(
    config: &CampaignConfig,
    program: &TracedProgram,
    index: &Arc<AstIndex>,
    out: &Path,
) -> Result<Option<Solver>> {
    let sc = &config.solver;
    let solver = match sc.backend {
        BackendKind::None => return Ok(None),
        BackendKind::Remote => {
            let backend = RemoteBackend::from_env(sc)?;
            Solver::new(Box::new(backend), sc.query_budget)
                .with_recorder(Recorder::new(out.join("solver"))?)
        }
        BackendKind::Scripted => {
            let replay: &PathBuf = sc
                .replay
                .as_ref()
                .ok_or_else(|| Error::Config("scripted backend needs solver.replay".into()))?;
            Solver::new(Box::new(ScriptedBackend::load(replay)?), sc.test_budget)
        }
        BackendKind::Bruteforce => {
            let probe = TracedProbe {
                program: program.clone(),
                index: index.clone(),
                timeout: config.timeout(),
            };
            Solver::new(
                Box::new(BruteforceBackend::new(Box::new(probe), sc.bruteforce_trials)),
                sc.test_budget,
            )
        }
    };
    Ok(Some(solver))
}

/// Loads, prepares and runs a campaign, then writes its reports.
pub fn run_campaign(config: CampaignConfig) -> Result<CampaignMetrics> {
    Campaign::prepare(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(outcome: Outcome, solve: Option<f64>, pipeline: f64) -> RoadblockRecord {
        RoadblockRecord {
            attempt: 1,
            elapsed_s: 0.0,
            cond_id: "0@1".into(),
            key: "a.c:1#0".into(),
            arm: 0,
            seed: "id:000000".into(),
            slice_bytes: 10,
            solve_latency_s: solve,
            pipeline_latency_s: Some(pipeline),
            outcome,
            new_pairs: 0,
            target_hit: false,
            note: String::new(),
        }
    }

    #[test]
    fn median_solve_latency_ignores_skipped() {
        let m = CampaignMetrics {
            roadblocks: vec![
                record(Outcome::Kept, Some(0.5), 0.1),
                record(Outcome::Discarded, Some(2.0), 0.2),
                record(Outcome::Skipped, Some(100.0), 0.3),
                record(Outcome::DecodeFailed, Some(1.0), 0.4),
                record(Outcome::Kept, Some(4.0), 0.5),
            ],
            ..Default::default()
        };
        let s = m.summary();
        assert_eq!(s.median_solve_latency_s, Some(1.5));
        assert_eq!(s.median_pipeline_latency_s, Some(0.3));
        assert!((s.mean_pipeline_latency_s.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(s.kept + s.discarded + s.decode_failed + s.skipped, s.attempts);
    }

    #[test]
    fn effective_ratio_needs_injections() {
        let mut m = CampaignMetrics::default();
        assert_eq!(m.summary().effective_ratio, None);
        m.injected = 10;
        m.kept = 3;
        assert_eq!(m.summary().effective_ratio, Some(0.3));
    }

    #[test]
    fn empty_campaign_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&CampaignMetrics::default(), dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("roadblocks.csv")).unwrap();
        assert_eq!(csv, format!("{ROADBLOCKS_HEADER}\n"));
        let back = load_metrics(dir.path()).unwrap();
        assert_eq!(back, CampaignMetrics::default());
    }

    #[test]
    fn stalled_counts_from_last_attempt() {
        let p = PlateauState {
            last_new_coverage: Duration::from_secs(1),
            threshold: Duration::from_secs(2),
        };
        assert!(stalled(&p, Duration::ZERO, Duration::from_secs(4)));
        assert!(!stalled(&p, Duration::from_secs(3), Duration::from_secs(4)));
    }
}

//! Coverage-guided mutational fuzzer over a sync-compatible corpus.
//!
//! Layout under the output directory:
//!
//! ```text
//! main/queue/id:000000,orig:seed.txt
//! main/queue/id:000007,src:000002,op:havoc
//! main/queue/id:000009,sync:llm,src:000001
//! main/crashes/id:000000,src:000003,op:insert
//! main/stats.tsv
//! llm/queue/id:000001
//! llm/provenance.tsv
//! ```
//!
//! A child is kept iff its trace takes a (conditional, arm) pair no earlier
//! seed took. Injected inputs land in `llm/queue` and go through the same
//! test when imported.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ast_index::{AstIndex, CondId};
use crate::coverage::arm_hits;
use crate::tracer::{ExecutionTrace, TraceExit};
use crate::util::atomic_write;
use crate::{Error, Result};

pub const MAX_INPUT_LEN: usize = 1 << 14;
pub const MAX_STACK: u32 = 8;
/// Chance of picking among the most recent finds instead of round-robin.
pub const RECENT_FAVOR: f64 = 0.25;
pub const RECENT_WINDOW: usize = 4;
/// Logical time per execution in deterministic mode.
pub const LOGICAL_EXEC_COST: Duration = Duration::from_millis(1);

pub type ArmPair = (CondId, u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Initial,
    Mutation,
    Injected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedEntry {
    pub seed_id: u32,
    pub path: PathBuf,
    pub origin: Origin,
    pub discovery_time: Duration,
    pub fingerprint: BTreeSet<ArmPair>,
}

impl SeedEntry {
    pub fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Wall clock, or a logical one that advances only per execution.
#[derive(Debug, Clone)]
pub enum Clock {
    Real(Instant),
    Logical(Duration),
}

impl Clock {
    pub fn real() -> Self {
        Clock::Real(Instant::now())
    }

    pub fn logical() -> Self {
        Clock::Logical(Duration::ZERO)
    }

    pub fn now(&self) -> Duration {
        match self {
            Clock::Real(start) => start.elapsed(),
            Clock::Logical(t) => *t,
        }
    }

    pub fn tick(&mut self) {
        if let Clock::Logical(t) = self {
            *t += LOGICAL_EXEC_COST;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauState {
    pub last_new_coverage: Duration,
    pub threshold: Duration,
}

impl PlateauState {
    pub fn new(threshold: Duration) -> Self {
        PlateauState {
            last_new_coverage: Duration::ZERO,
            threshold,
        }
    }

    pub fn mark_new(&mut self, now: Duration) {
        self.last_new_coverage = now;
    }
}

pub fn detect_plateau(state: &PlateauState, now: Duration) -> bool {
    now.saturating_sub(state.last_new_coverage) > state.threshold
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDirs {
    pub out: PathBuf,
    pub queue: PathBuf,
    pub crashes: PathBuf,
    pub llm_queue: PathBuf,
}

impl CorpusDirs {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        let out = out.into();
        CorpusDirs {
            queue: out.join("main").join("queue"),
            crashes: out.join("main").join("crashes"),
            llm_queue: out.join("llm").join("queue"),
            out,
        }
    }

    pub fn create(&self) -> Result<()> {
        for d in [&self.queue, &self.crashes, &self.llm_queue] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(())
    }

    pub fn stats_path(&self) -> PathBuf {
        self.out.join("main").join("stats.tsv")
    }

    pub fn sync_log_path(&self) -> PathBuf {
        self.out.join("main").join("sync_log.tsv")
    }

    pub fn provenance_path(&self) -> PathBuf {
        self.out.join("llm").join("provenance.tsv")
    }
}

/// Numeric id in a corpus file name (`id:000042,...`).
pub fn parse_seed_id(name: &str) -> Option<u32> {
    let rest = name.strip_prefix("id:")?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Corpus files in a queue directory, ordered by id.
pub fn list_queue(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let mut out = Vec::new();
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = parse_seed_id(&name) {
            out.push((id, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn ascii_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    }
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Writer side of the solver sync directory.
#[derive(Debug)]
pub struct SyncPeer {
    dirs: CorpusDirs,
    next_id: u32,
}

impl SyncPeer {
    pub fn open(dirs: CorpusDirs) -> Result<Self> {
        dirs.create()?;
        let next_id = list_queue(&dirs.llm_queue)?
            .last()
            .map(|(id, _)| id + 1)
            .unwrap_or(1);
        Ok(SyncPeer { dirs, next_id })
    }

    /// Drops `bytes` into the sync queue and logs where they came from.
    pub fn inject_input(&mut self, bytes: &[u8], provenance: &str) -> Result<PathBuf> {
        let id = self.next_id;
        let path = self.dirs.llm_queue.join(format!("id:{id:06}"));
        if let Err(first) = atomic_write(&path, bytes) {
            log::warn!("injecting {}: {first}; retrying", path.display());
            atomic_write(&path, bytes)?;
        }
        self.next_id += 1;
        append_line(
            &self.dirs.provenance_path(),
            "id\troadblock",
            &format!("{id:06}\t{provenance}"),
        )?;
        Ok(path)
    }
}

/// Outcome of importing one injected input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportResult {
    pub sync_id: u32,
    pub kept: Option<SeedEntry>,
    pub new_pairs: BTreeSet<ArmPair>,
}

pub type Executor = Box<dyn FnMut(&[u8]) -> Result<ExecutionTrace> + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutator {
    BitFlip,
    Substitute,
    Insert,
    Delete,
    Duplicate,
    Splice,
}

impl Mutator {
    pub const ALL: [Mutator; 6] = [
        Mutator::BitFlip,
        Mutator::Substitute,
        Mutator::Insert,
        Mutator::Delete,
        Mutator::Duplicate,
        Mutator::Splice,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mutator::BitFlip => "flip",
            Mutator::Substitute => "subst",
            Mutator::Insert => "insert",
            Mutator::Delete => "delete",
            Mutator::Duplicate => "dup",
            Mutator::Splice => "splice",
        }
    }

    fn apply(&self, data: &mut Vec<u8>, other: Option<&[u8]>, rng: &mut impl Rng) {
        let n = data.len();
        match self {
            Mutator::BitFlip => {
                if n > 0 {
                    let i = rng.gen_range(0..n);
                    data[i] ^= 1 << rng.gen_range(0..8);
                }
            }
            Mutator::Substitute => {
                if n > 0 {
                    let i = rng.gen_range(0..n);
                    data[i] = rng.gen();
                }
            }
            Mutator::Insert => {
                let at = rng.gen_range(0..=n);
                let len = rng.gen_range(1..=4);
                let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                data.splice(at..at, bytes);
            }
            Mutator::Delete => {
                if n > 1 {
                    let at = rng.gen_range(0..n);
                    let len = rng.gen_range(1..=(n - at).min(8));
                    data.drain(at..at + len);
                }
            }
            Mutator::Duplicate => {
                if n > 0 {
                    let at = rng.gen_range(0..n);
                    let len = rng.gen_range(1..=(n - at).min(16));
                    let block = data[at..at + len].to_vec();
                    let to = rng.gen_range(0..=n);
                    data.splice(to..to, block);
                }
            }
            Mutator::Splice => {
                if let Some(o) = other.filter(|o| !o.is_empty()) {
                    let cut = rng.gen_range(0..=n);
                    let from = rng.gen_range(0..o.len());
                    data.truncate(cut);
                    data.extend_from_slice(&o[from..]);
                }
            }
        }
        data.truncate(MAX_INPUT_LEN);
    }
}

/// Applies a stack of 1..=8 mutations (geometric). Returns the mutator name
/// used in file names: the single operator, or `havoc` for a stack.
pub fn mutate(data: &mut Vec<u8>, other: Option<&[u8]>, rng: &mut impl Rng) -> &'static str {
    let mut depth = 1;
    while depth < MAX_STACK && rng.gen_bool(0.5) {
        depth += 1;
    }
    let mut last = Mutator::BitFlip;
    for _ in 0..depth {
        last = Mutator::ALL[rng.gen_range(0..Mutator::ALL.len())];
        last.apply(data, other, rng);
    }
    if depth == 1 {
        last.as_str()
    } else {
        "havoc"
    }
}

pub struct Fuzzer {
    pub dirs: CorpusDirs,
    index: Arc<AstIndex>,
    exec: Executor,
    rng: ChaCha8Rng,
    pub queue: Vec<SeedEntry>,
    /// Union of all kept fingerprints.
    pub covered: BTreeSet<ArmPair>,
    pub execs: u64,
    pub crashes: u64,
    next_id: u32,
    cursor: usize,
    imported: HashSet<u32>,
    pub clock: Clock,
    pub plateau: PlateauState,
    last_stats: Option<Duration>,
}

impl Fuzzer {
    /// Opens the corpus under `dirs`. An existing queue is re-executed to
    /// rebuild coverage; otherwise the initial seeds are copied in, all of
    /// them kept.
    pub fn open(
        dirs: CorpusDirs,
        seeds_dir: &Path,
        index: Arc<AstIndex>,
        exec: Executor,
        rng_seed: u64,
        clock: Clock,
        plateau_threshold: Duration,
    ) -> Result<Self> {
        dirs.create()?;
        let mut f = Fuzzer {
            dirs,
            index,
            exec,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            queue: Vec::new(),
            covered: BTreeSet::new(),
            execs: 0,
            crashes: 0,
            next_id: 0,
            cursor: 0,
            imported: HashSet::new(),
            clock,
            plateau: PlateauState::new(plateau_threshold),
            last_stats: None,
        };
        let existing = list_queue(&f.dirs.queue)?;
        if existing.is_empty() {
            f.import_initial(seeds_dir)?;
        } else {
            f.resume(existing)?;
        }
        if f.queue.is_empty() {
            return Err(Error::Config(format!(
                "no initial seeds in {}",
                seeds_dir.display()
            )));
        }
        let now = f.clock.now();
        f.plateau.mark_new(now);
        f.write_stats()?;
        Ok(f)
    }

    fn import_initial(&mut self, seeds_dir: &Path) -> Result<()> {
        let mut seeds: Vec<PathBuf> = fs::read_dir(seeds_dir)
            .map_err(|e| Error::io(seeds_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        seeds.sort();
        for p in seeds {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let name = ascii_name(&p.file_name().unwrap_or_default().to_string_lossy());
            let fingerprint = self.run(&bytes)?.1;
            let id = self.next_id;
            let path = self.dirs.queue.join(format!("id:{id:06},orig:{name}"));
            atomic_write(&path, &bytes)?;
            self.add(id, path, Origin::Initial, fingerprint);
        }
        Ok(())
    }

    fn resume(&mut self, existing: Vec<(u32, PathBuf)>) -> Result<()> {
        for (id, path) in existing {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let fingerprint = self.run(&bytes)?.1;
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let origin = if name.contains(",orig:") {
                Origin::Initial
            } else if name.contains(",sync:") {
                if let Some(src) = name.split(",src:").nth(1).and_then(|s| s.parse().ok()) {
                    self.imported.insert(src);
                }
                Origin::Injected
            } else {
                Origin::Mutation
            };
            self.next_id = self.next_id.max(id);
            self.add(id, path, origin, fingerprint);
        }
        // Injected inputs seen before but discarded are in the sync log.
        if let Ok(text) = fs::read_to_string(self.dirs.sync_log_path()) {
            for line in text.lines().skip(1) {
                if let Some(id) = line.split('\t').nth(1).and_then(|s| s.parse().ok()) {
                    self.imported.insert(id);
                }
            }
        }
        Ok(())
    }

    fn add(&mut self, id: u32, path: PathBuf, origin: Origin, fingerprint: BTreeSet<ArmPair>) -> SeedEntry {
        self.covered.extend(fingerprint.iter().copied());
        let entry = SeedEntry {
            seed_id: id,
            path,
            origin,
            discovery_time: self.clock.now(),
            fingerprint,
        };
        self.next_id = self.next_id.max(id + 1);
        self.queue.push(entry.clone());
        entry
    }

    /// Executes one input; returns the trace and the arm pairs it took.
    fn run(&mut self, input: &[u8]) -> Result<(ExecutionTrace, BTreeSet<ArmPair>)> {
        let trace = (self.exec)(input)?;
        self.execs += 1;
        self.clock.tick();
        let taken = arm_hits(&trace, &self.index).taken;
        Ok((trace, taken))
    }

    fn pick_seed(&mut self) -> usize {
        let n = self.queue.len();
        if n > 1 && self.rng.gen_bool(RECENT_FAVOR) {
            let window = n.min(RECENT_WINDOW);
            return n - 1 - self.rng.gen_range(0..window);
        }
        let i = self.cursor % n;
        self.cursor = (self.cursor + 1) % n;
        i
    }

    /// One mutate-execute-evaluate round. Returns the child if it was kept.
    pub fn fuzz_step(&mut self) -> Result<Option<SeedEntry>> {
        if self.queue.is_empty() {
            return Err(Error::Exec("empty corpus".into()));
        }
        let src = self.pick_seed();
        let parent = fs::read(&self.queue[src].path).map_err(|e| Error::io(&self.queue[src].path, e))?;
        let other = if self.queue.len() > 1 {
            let j = self.rng.gen_range(0..self.queue.len());
            fs::read(&self.queue[j].path).ok()
        } else {
            None
        };
        let mut child = parent;
        let op = mutate(&mut child, other.as_deref(), &mut self.rng);
        let (trace, taken) = self.run(&child)?;
        let src_id = self.queue[src].seed_id;
        if trace.exit_status == TraceExit::Crash {
            let path = self
                .dirs
                .crashes
                .join(format!("id:{:06},src:{src_id:06},op:{op}", self.crashes));
            atomic_write(&path, &child)?;
            self.crashes += 1;
            log::info!("crash saved to {}", path.display());
        }
        let kept = if taken.is_subset(&self.covered) {
            None
        } else {
            let id = self.next_id;
            let path = self.dirs.queue.join(format!("id:{id:06},src:{src_id:06},op:{op}"));
            atomic_write(&path, &child)?;
            let now = self.clock.now();
            self.plateau.mark_new(now);
            let e = self.add(id, path, Origin::Mutation, taken);
            self.write_stats()?;
            Some(e)
        };
        self.maybe_write_stats()?;
        Ok(kept)
    }

    /// Imports every not yet seen input from the solver sync queue.
    pub fn sync_import(&mut self) -> Result<Vec<ImportResult>> {
        let mut results = Vec::new();
        for (sync_id, path) in list_queue(&self.dirs.llm_queue)? {
            if self.imported.contains(&sync_id) {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            self.imported.insert(sync_id);
            let (_, taken) = self.run(&bytes)?;
            let new_pairs: BTreeSet<ArmPair> = taken.difference(&self.covered).copied().collect();
            let kept = if new_pairs.is_empty() {
                None
            } else {
                let id = self.next_id;
                let qpath = self.dirs.queue.join(format!("id:{id:06},sync:llm,src:{sync_id:06}"));
                atomic_write(&qpath, &bytes)?;
                let now = self.clock.now();
                self.plateau.mark_new(now);
                Some(self.add(id, qpath, Origin::Injected, taken))
            };
            append_line(
                &self.dirs.sync_log_path(),
                "elapsed_s\tsync_id\tkept\tnew_pairs",
                &format!(
                    "{:.3}\t{sync_id:06}\t{}\t{}",
                    self.clock.now().as_secs_f64(),
                    kept.is_some(),
                    new_pairs.len()
                ),
            )?;
            results.push(ImportResult {
                sync_id,
                kept,
                new_pairs,
            });
        }
        if !results.is_empty() {
            self.write_stats()?;
        }
        Ok(results)
    }

    pub fn is_plateau(&self) -> bool {
        detect_plateau(&self.plateau, self.clock.now())
    }

    fn maybe_write_stats(&mut self) -> Result<()> {
        let now = self.clock.now();
        match self.last_stats {
            Some(t) if now.saturating_sub(t) < Duration::from_secs(1) => Ok(()),
            _ => self.write_stats(),
        }
    }

    /// Appends one row to `stats.tsv`.
    pub fn write_stats(&mut self) -> Result<()> {
        let now = self.clock.now();
        self.last_stats = Some(now);
        append_line(
            &self.dirs.stats_path(),
            "timestamp\texecs\tkept\tarms_covered",
            &format!(
                "{:.3}\t{}\t{}\t{}",
                now.as_secs_f64(),
                self.execs,
                self.queue.len(),
                self.covered.len()
            ),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_threshold_is_strict() {
        let mut p = PlateauState::new(Duration::from_secs(1));
        p.mark_new(Duration::from_secs(5));
        assert!(!detect_plateau(&p, Duration::from_secs(5)));
        assert!(!detect_plateau(&p, Duration::from_secs(6)));
        assert!(detect_plateau(&p, Duration::from_millis(6500)));
    }

    #[test]
    fn logical_clock_advances_per_tick() {
        let mut c = Clock::logical();
        for _ in 0..1500 {
            c.tick();
        }
        assert_eq!(c.now(), Duration::from_millis(1500));
    }

    #[test]
    fn seed_ids_parse_from_names() {
        assert_eq!(parse_seed_id("id:000042,src:000017,op:havoc"), Some(42));
        assert_eq!(parse_seed_id("id:000003"), Some(3));
        assert_eq!(parse_seed_id("README"), None);
    }

    #[test]
    fn mutation_is_deterministic_and_bounded() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut data = b"hello world".to_vec();
            let mut names = Vec::new();
            for _ in 0..200 {
                names.push(mutate(&mut data, Some(b"other"), &mut rng));
                assert!(data.len() <= MAX_INPUT_LEN);
            }
            (data, names)
        };
        assert_eq!(run(7), run(7));
        let (_, names) = run(7);
        assert!(names.contains(&"havoc"));
        assert!(names.iter().any(|n| *n != "havoc"));
    }

    #[test]
    fn injected_ids_continue_after_restart() {
        let dir = tempfile::tempdir().unwrap();
        let dirs = CorpusDirs::new(dir.path());
        let mut peer = SyncPeer::open(dirs.clone()).unwrap();
        let a = peer.inject_input(b"one", "a.c:3#1").unwrap();
        assert!(a.ends_with("id:000001"));
        let mut peer = SyncPeer::open(dirs.clone()).unwrap();
        let b = peer.inject_input(b"", "a.c:3#1").unwrap();
        assert!(b.ends_with("id:000002"));
        let prov = fs::read_to_string(dirs.provenance_path()).unwrap();
        assert_eq!(prov.lines().count(), 3);
    }
}

//! Source-level statement tracing.
//!
//! [`instrument`] rewrites each indexed file so that every statement unit
//! calls into a small C runtime before it executes, then compiles the result.
//! [`TracedProgram::run_traced`] runs the binary on one input with the trace
//! path in `TRACE_OUT` and decodes the records it left behind.
//!
//! Besides plain statement records the runtime emits marks: the arm a guard
//! evaluated to, and function entry and exit. Marks share the record layout
//! and set the top bit of the file word.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ast_index::{
    for_condition_slot, label_end, AstIndex, CondId, CondKind, FileId, StmtKey, UnitKind,
};
use crate::util::{atomic_write, unique_suffix};
use crate::{Error, Result};

pub const TRACE_OUT_ENV: &str = "TRACE_OUT";
pub const TRACE_CAP_ENV: &str = "TRACE_CAP";
pub const DEFAULT_TRACE_CAP: u64 = 1_000_000;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const RECORD_SIZE: usize = 10;

const RUNTIME_C: &str = include_str!("runtime/slicefuzz_rt.c");
const RUNTIME_H: &str = include_str!("runtime/slicefuzz_rt.h");

const MARK_BIT: u32 = 0x8000_0000;
const MARK_ENTER: u16 = 0x7FFE;
const MARK_EXIT: u16 = 0x7FFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceExit {
    Normal,
    Crash,
    Timeout,
    TraceCap,
}

impl TraceExit {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceExit::Normal => "normal",
            TraceExit::Crash => "crash",
            TraceExit::Timeout => "timeout",
            TraceExit::TraceCap => "trace-cap",
        }
    }
}

impl fmt::Display for TraceExit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceEvent {
    Stmt(StmtKey),
    /// Arm taken by the guard whose statement record is `guard`.
    Arm { guard: StmtKey, arm: u16 },
    Enter { file: FileId, line: u32 },
    Exit { file: FileId, line: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub seed_id: Option<String>,
    pub events: Vec<TraceEvent>,
    pub truncated_at: Option<CondId>,
    pub exit_status: TraceExit,
}

impl ExecutionTrace {
    /// Statement records in execution order.
    pub fn records(&self) -> impl Iterator<Item = StmtKey> + '_ {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Stmt(k) => Some(*k),
            _ => None,
        })
    }

    pub fn record_count(&self) -> usize {
        self.records().count()
    }

    /// Applies the statement cap: keeps at most `cap` statement records and
    /// flags the trace when more were produced.
    pub fn apply_cap(&mut self, cap: u64) {
        let mut seen = 0u64;
        for (i, e) in self.events.iter().enumerate() {
            if let TraceEvent::Stmt(_) = e {
                seen += 1;
                if seen > cap {
                    self.events.truncate(i);
                    self.exit_status = TraceExit::TraceCap;
                    return;
                }
            }
        }
    }

    /// Cuts the trace right after the first statement record of `guard`.
    pub fn truncate_at(&mut self, cond: CondId, guard: StmtKey) -> bool {
        let pos = self
            .events
            .iter()
            .position(|e| matches!(e, TraceEvent::Stmt(k) if *k == guard));
        match pos {
            Some(p) => {
                self.events.truncate(p + 1);
                self.truncated_at = Some(cond);
                true
            }
            None => false,
        }
    }
}

/// Decodes the binary trace format. A trailing partial record (subject
/// killed mid-write) is dropped.
pub fn decode_binary_trace(bytes: &[u8]) -> Vec<TraceEvent> {
    let mut events = Vec::with_capacity(bytes.len() / RECORD_SIZE);
    for rec in bytes.chunks_exact(RECORD_SIZE) {
        let word = u32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]);
        let line = u32::from_le_bytes([rec[4], rec[5], rec[6], rec[7]]);
        let ordinal = u16::from_le_bytes([rec[8], rec[9]]);
        push_event(&mut events, word, line, ordinal);
    }
    events
}

/// Decodes the text fallback format: `file:line:ordinal` per statement and
/// `!payload:file:line:ordinal` per mark.
pub fn decode_text_trace(text: &str) -> Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Trace(format!("line {}: `{line}`", n + 1));
        let (mark, body) = match line.strip_prefix('!') {
            Some(rest) => (true, rest),
            None => (false, line),
        };
        let nums: Vec<u32> = body
            .split(':')
            .map(|p| p.parse::<u32>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let word = match (mark, nums.len()) {
            (false, 3) => nums[0],
            (true, 4) => MARK_BIT | ((nums[0] & 0x7FFF) << 16) | (nums[1] & 0xFFFF),
            _ => return Err(bad()),
        };
        let (l, o) = (nums[nums.len() - 2], nums[nums.len() - 1]);
        push_event(&mut events, word, l, o as u16);
    }
    Ok(events)
}

fn push_event(events: &mut Vec<TraceEvent>, word: u32, line: u32, ordinal: u16) {
    if word & MARK_BIT == 0 {
        events.push(TraceEvent::Stmt(StmtKey {
            file: FileId(word),
            line,
            ordinal,
        }));
        return;
    }
    let payload = ((word >> 16) & 0x7FFF) as u16;
    let file = FileId(word & 0xFFFF);
    events.push(match payload {
        MARK_ENTER => TraceEvent::Enter { file, line },
        MARK_EXIT => TraceEvent::Exit { file, line },
        arm => TraceEvent::Arm {
            guard: StmtKey {
                file,
                line,
                ordinal,
            },
            arm,
        },
    });
}

/// Toolchain settings for building the traced subject.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub cc: String,
    pub cflags: Vec<String>,
    pub out_dir: PathBuf,
    /// Build the text-format runtime instead of the binary one.
    pub text_trace: bool,
}

impl BuildOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        BuildOptions {
            cc: "cc".to_string(),
            cflags: vec!["-O1".to_string(), "-w".to_string()],
            out_dir: out_dir.into(),
            text_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestGuard {
    pub cond: String,
    pub file: u32,
    pub line: u32,
    pub ordinal: u16,
}

/// Sidecar written next to the traced binary so it can be run without the
/// sources: file names and where each guard's record lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub files: Vec<ManifestFile>,
    pub guards: Vec<ManifestGuard>,
    pub text_trace: bool,
}

impl TraceManifest {
    pub fn path_for(binary: &Path) -> PathBuf {
        let mut s = binary.as_os_str().to_owned();
        s.push(".sfmap.json");
        PathBuf::from(s)
    }

    pub fn guard_key(&self, cond: CondId) -> Option<StmtKey> {
        let id = cond.to_string();
        self.guards.iter().find(|g| g.cond == id).map(|g| StmtKey {
            file: FileId(g.file),
            line: g.line,
            ordinal: g.ordinal,
        })
    }

    /// Resolves `file@byte` or `name.c:LINE` to a guard.
    pub fn find_guard(&self, spec: &str) -> Option<(CondId, StmtKey)> {
        if let Ok(id) = spec.parse::<CondId>() {
            return self.guard_key(id).map(|k| (id, k));
        }
        let (name, line) = spec.rsplit_once(':')?;
        let line: u32 = line.parse().ok()?;
        let file = self.files.iter().position(|f| f.name == name)? as u32;
        self.guards
            .iter()
            .find(|g| g.file == file && g.line == line)
            .and_then(|g| {
                let id = g.cond.parse().ok()?;
                Some((
                    id,
                    StmtKey {
                        file: FileId(g.file),
                        line: g.line,
                        ordinal: g.ordinal,
                    },
                ))
            })
    }
}

/// A built, runnable traced subject.
#[derive(Debug, Clone)]
pub struct TracedProgram {
    pub binary: PathBuf,
    /// Subject arguments; `@@` is replaced by the input path, otherwise the
    /// input arrives on stdin.
    pub args: Vec<String>,
    pub trace_cap: u64,
    pub work_dir: PathBuf,
    pub manifest: TraceManifest,
}

impl TracedProgram {
    pub fn load(binary: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> Result<Self> {
        let binary = binary.into();
        let mpath = TraceManifest::path_for(&binary);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest = serde_json::from_str(&text)?;
        let work_dir = work_dir.into();
        fs::create_dir_all(&work_dir).map_err(|e| Error::io(&work_dir, e))?;
        Ok(TracedProgram {
            binary,
            args: Vec::new(),
            trace_cap: DEFAULT_TRACE_CAP,
            work_dir,
            manifest,
        })
    }

    /// Runs the subject once on `input`.
    ///
    /// With `stop_at`, the trace is cut right after the first evaluation of
    /// that guard. Crashes and timeouts keep the partial trace.
    pub fn run_traced(
        &self,
        input: &[u8],
        stop_at: Option<CondId>,
        timeout: Duration,
    ) -> Result<ExecutionTrace> {
        let stop = match stop_at {
            Some(c) => Some((
                c,
                self.manifest
                    .guard_key(c)
                    .ok_or_else(|| Error::UnknownConditional(c.to_string()))?,
            )),
            None => None,
        };
        let tag = format!("{}-{}", std::process::id(), unique_suffix());
        let input_path = self.work_dir.join(format!(".input-{tag}"));
        let trace_path = self.work_dir.join(format!(".trace-{tag}"));
        fs::write(&input_path, input).map_err(|e| Error::io(&input_path, e))?;
        fs::write(&trace_path, b"").map_err(|e| Error::io(&trace_path, e))?;
        let result = self.execute(&input_path, &trace_path, timeout);
        let _ = fs::remove_file(&input_path);
        let bytes = fs::read(&trace_path);
        let _ = fs::remove_file(&trace_path);
        let status = result?;
        let bytes = bytes.map_err(|e| Error::io(&trace_path, e))?;
        let events = if self.manifest.text_trace {
            decode_text_trace(&String::from_utf8_lossy(&bytes))?
        } else {
            decode_binary_trace(&bytes)
        };
        let mut trace = ExecutionTrace {
            seed_id: None,
            events,
            truncated_at: None,
            exit_status: status,
        };
        trace.apply_cap(self.trace_cap);
        if let Some((cond, key)) = stop {
            trace.truncate_at(cond, key);
        }
        Ok(trace)
    }

    fn execute(&self, input_path: &Path, trace_path: &Path, timeout: Duration) -> Result<TraceExit> {
        let mut uses_file = false;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                if a.contains("@@") {
                    uses_file = true;
                    a.replace("@@", &input_path.to_string_lossy())
                } else {
                    a.clone()
                }
            })
            .collect();
        let stdin = if uses_file {
            Stdio::null()
        } else {
            let f = fs::File::open(input_path).map_err(|e| Error::io(input_path, e))?;
            Stdio::from(f)
        };
        let mut child = Command::new(&self.binary)
            .args(&args)
            .current_dir(&self.work_dir)
            .env(TRACE_OUT_ENV, trace_path)
            .env(TRACE_CAP_ENV, self.trace_cap.to_string())
            .stdin(stdin)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Exec(format!("{}: {e}", self.binary.display())))?;
        let start = Instant::now();
        let mut nap = Duration::from_micros(20);
        let status = loop {
            match child.try_wait() {
                Ok(Some(s)) => break Some(s),
                Ok(None) => {}
                Err(e) => return Err(Error::Exec(e.to_string())),
            }
            if start.elapsed() >= timeout {
                break None;
            }
            thread::sleep(nap);
            nap = (nap * 2).min(Duration::from_millis(2));
        };
        let status = match status {
            Some(s) => s,
            None => {
                // SIGTERM lets the runtime flush its buffer before dying.
                unsafe {
                    libc::kill(child.id() as libc::pid_t, libc::SIGTERM);
                }
                let grace = Instant::now();
                while grace.elapsed() < Duration::from_millis(20) {
                    if let Ok(Some(_)) = child.try_wait() {
                        return Ok(TraceExit::Timeout);
                    }
                    thread::sleep(Duration::from_millis(1));
                }
                let _ = child.kill();
                let _ = child.wait();
                return Ok(TraceExit::Timeout);
            }
        };
        use std::os::unix::process::ExitStatusExt;
        Ok(if status.signal().is_some() {
            TraceExit::Crash
        } else {
            TraceExit::Normal
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Rank {
    Close = 0,
    Enter = 1,
    Label = 2,
    Open = 3,
}

struct Insertion {
    at: u32,
    rank: Rank,
    text: String,
}

fn rec(k: StmtKey) -> String {
    format!("__sf_s({},{},{})", k.file.0, k.line, k.ordinal)
}

fn is_block_parent(kind: &str) -> bool {
    matches!(
        kind,
        "compound_statement"
            | "case_statement"
            | "translation_unit"
            | "preproc_if"
            | "preproc_ifdef"
            | "preproc_else"
            | "preproc_elif"
            | "preproc_elifdef"
    )
}

/// Produces the instrumented text of every indexed file, in file order.
pub fn instrumented_sources(index: &AstIndex) -> Vec<(String, String)> {
    index
        .files
        .iter()
        .map(|f| (f.name.clone(), instrument_file(index, f.file_id)))
        .collect()
}

fn instrument_file(index: &AstIndex, file: FileId) -> String {
    let src = index.file(file);
    let mut ins: Vec<Insertion> = Vec::new();
    let mut push = |at: u32, rank: Rank, text: String| ins.push(Insertion { at, rank, text });

    for f in index.functions.values().filter(|f| f.range.file == file) {
        push(
            f.body_range.start_byte + 1,
            Rank::Enter,
            format!(
                " long long __sf_frame __attribute__((cleanup(__sf_leave), unused)) = __sf_enter({}, {});",
                file.0, f.range.start_line
            ),
        );
    }

    for ((ufile, _), units) in index.statements.iter() {
        if *ufile != file {
            continue;
        }
        for u in units {
            let Some(node) = index.node(&u.node) else {
                continue;
            };
            let r = rec(u.key);
            match u.kind {
                UnitKind::Expr | UnitKind::Decl | UnitKind::Return | UnitKind::Jump => {
                    let mut parent = node.parent();
                    while let Some(p) = parent {
                        if p.kind() == "labeled_statement" {
                            parent = p.parent();
                        } else {
                            break;
                        }
                    }
                    let wrap = parent.map(|p| !is_block_parent(p.kind())).unwrap_or(false);
                    let start = node.start_byte() as u32;
                    if wrap {
                        push(start, Rank::Open, format!("{{ {r}; "));
                        push(node.end_byte() as u32, Rank::Close, " }".to_string());
                    } else {
                        push(start, Rank::Open, format!("{r}; "));
                    }
                }
                UnitKind::CaseLabel => {
                    push(label_end(node), Rank::Label, format!(" {r};"));
                }
                UnitKind::ForInit => {
                    if let Some(for_node) = node.parent() {
                        push(for_node.start_byte() as u32, Rank::Open, format!("{{ {r}; "));
                        push(for_node.end_byte() as u32, Rank::Close, " }".to_string());
                    }
                }
                UnitKind::ForUpdate => {
                    push(node.start_byte() as u32, Rank::Open, format!("({r}, ("));
                    push(node.end_byte() as u32, Rank::Close, "))".to_string());
                }
                UnitKind::Guard(cid) => {
                    let Some(cond) = index.conditional(cid) else {
                        continue;
                    };
                    let k = u.key;
                    let mark = format!("{},{},{}", k.file.0, k.line, k.ordinal);
                    let g = cond.guard_range;
                    match cond.kind {
                        CondKind::Switch => {
                            let mut chain = String::new();
                            let mut default_id = cond.arms.len() as u16 - 1;
                            for a in &cond.arms {
                                match &a.guard_value {
                                    Some(v) => chain.push_str(&format!(
                                        "__sf_v == ({v}) ? {} : ",
                                        a.arm_id
                                    )),
                                    None => default_id = a.arm_id,
                                }
                            }
                            push(
                                g.start_byte,
                                Rank::Open,
                                format!("({{ {r}; __auto_type __sf_v = +("),
                            );
                            push(
                                g.end_byte,
                                Rank::Close,
                                format!("); __sf_b({mark}, {chain}{default_id}); __sf_v; }})"),
                            );
                        }
                        _ if g.is_empty() => {
                            if let Some(slot) = for_condition_slot(node) {
                                push(
                                    slot,
                                    Rank::Open,
                                    format!("({r}, __sf_b({mark}, 0) == 0)"),
                                );
                            }
                        }
                        _ => {
                            push(g.start_byte, Rank::Open, format!("({r}, __sf_b({mark}, ("));
                            push(g.end_byte, Rank::Close, ") ? 0 : 1) == 0)".to_string());
                        }
                    }
                }
            }
        }
    }

    ins.sort_by_key(|i| (i.at, i.rank));
    let bytes = &src.bytes;
    let mut out: Vec<u8> = Vec::with_capacity(bytes.len() + ins.len() * 24 + 64);
    out.extend_from_slice(b"#include \"slicefuzz_rt.h\"\n");
    out.extend_from_slice(format!("#line 1 \"{}\"\n", src.name).as_bytes());
    let mut pos = 0usize;
    for i in &ins {
        let at = i.at as usize;
        out.extend_from_slice(&bytes[pos..at]);
        out.extend_from_slice(i.text.as_bytes());
        pos = at;
    }
    out.extend_from_slice(&bytes[pos..]);
    // Sources are bytes; the instrumented copy keeps them byte-exact.
    bytes_to_text(out)
}

fn bytes_to_text(bytes: Vec<u8>) -> String {
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    }
}

/// Writes the instrumented sources plus the runtime under
/// `<out_dir>/instrumented/` and compiles them into
/// `<out_dir>/subject.traced`.
pub fn instrument(index: &AstIndex, opts: &BuildOptions) -> Result<TracedProgram> {
    let inst_dir = opts.out_dir.join("instrumented");
    fs::create_dir_all(&inst_dir).map_err(|e| Error::io(&inst_dir, e))?;
    let mut seen = BTreeMap::new();
    for f in &index.files {
        if let Some(prev) = seen.insert(f.name.clone(), f.path.clone()) {
            return Err(Error::Config(format!(
                "two sources share the file name {}: {} and {}",
                f.name,
                prev.display(),
                f.path.display()
            )));
        }
    }
    let mut c_files = Vec::new();
    for (f, (name, text)) in index.files.iter().zip(instrumented_sources(index)) {
        let path = inst_dir.join(&name);
        // Keep raw bytes for files that were not UTF-8 to begin with.
        let data = if std::str::from_utf8(&f.bytes).is_ok() {
            text.into_bytes()
        } else {
            text.chars().map(|c| c as u32 as u8).collect()
        };
        atomic_write(&path, &data)?;
        if name.ends_with(".c") {
            c_files.push(name);
        }
    }
    atomic_write(&inst_dir.join("slicefuzz_rt.c"), RUNTIME_C.as_bytes())?;
    atomic_write(&inst_dir.join("slicefuzz_rt.h"), RUNTIME_H.as_bytes())?;
    let binary = opts.out_dir.join("subject.traced");
    let binary = if binary.is_absolute() {
        binary
    } else {
        std::env::current_dir()
            .map_err(|e| Error::io(".", e))?
            .join(binary)
    };
    let mut cmd = Command::new(&opts.cc);
    cmd.current_dir(&inst_dir).args(&opts.cflags);
    if opts.text_trace {
        cmd.arg("-DSLICEFUZZ_TRACE_TEXT");
    }
    let mut include_dirs: Vec<PathBuf> = Vec::new();
    for f in &index.files {
        if let Some(parent) = f.path.parent() {
            let dir = fs::canonicalize(parent).unwrap_or_else(|_| parent.to_path_buf());
            if !include_dirs.contains(&dir) {
                include_dirs.push(dir);
            }
        }
    }
    for d in &include_dirs {
        cmd.arg("-I").arg(d);
    }
    cmd.args(&c_files).arg("slicefuzz_rt.c").arg("-o").arg(&binary);
    let output = cmd
        .output()
        .map_err(|e| Error::Build {
            diagnostics: format!("cannot run {}: {e}", opts.cc),
        })?;
    if !output.status.success() {
        return Err(Error::Build {
            diagnostics: String::from_utf8_lossy(&output.stderr).into_owned(),
        });
    }
    let manifest = TraceManifest {
        files: index
            .files
            .iter()
            .map(|f| ManifestFile {
                name: f.name.clone(),
                sha256: f.content_hash.clone(),
            })
            .collect(),
        guards: index
            .conditionals
            .values()
            .map(|c| ManifestGuard {
                cond: c.cond_id.to_string(),
                file: c.unit.file.0,
                line: c.unit.line,
                ordinal: c.unit.ordinal,
            })
            .collect(),
        text_trace: opts.text_trace,
    };
    atomic_write(
        &TraceManifest::path_for(&binary),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    let work_dir = opts.out_dir.join("run");
    fs::create_dir_all(&work_dir).map_err(|e| Error::io(&work_dir, e))?;
    Ok(TracedProgram {
        binary,
        args: Vec::new(),
        trace_cap: DEFAULT_TRACE_CAP,
        work_dir,
        manifest,
    })
}

/// Renders a trace as `name:line:ordinal` lines, marks prefixed with `!`.
pub fn render_trace(trace: &ExecutionTrace, manifest: &TraceManifest, out: &mut impl Write) -> std::io::Result<()> {
    let name = |f: FileId| {
        manifest
            .files
            .get(f.0 as usize)
            .map(|m| m.name.clone())
            .unwrap_or_else(|| f.0.to_string())
    };
    for e in &trace.events {
        match e {
            TraceEvent::Stmt(k) => writeln!(out, "{}:{}:{}", name(k.file), k.line, k.ordinal)?,
            TraceEvent::Arm { guard, arm } => {
                writeln!(out, "!arm {} {}:{}:{}", arm, name(guard.file), guard.line, guard.ordinal)?
            }
            TraceEvent::Enter { file, line } => writeln!(out, "!enter {}:{}", name(*file), line)?,
            TraceEvent::Exit { file, line } => writeln!(out, "!exit {}:{}", name(*file), line)?,
        }
    }
    writeln!(
        out,
        "# exit={} records={}{}",
        trace.exit_status,
        trace.record_count(),
        trace
            .truncated_at
            .map(|c| format!(" truncated_at={c}"))
            .unwrap_or_default()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast_index::AstIndex;

    fn build(src: &str, dir: &Path) -> (AstIndex, TracedProgram) {
        let path = dir.join("t.c");
        fs::write(&path, src).unwrap();
        let index = crate::ast_index::build_ast_index(&[&path]).unwrap();
        let prog = instrument(&index, &BuildOptions::new(dir.join("build"))).unwrap();
        (index, prog)
    }

    #[test]
    fn straight_line_yields_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let (_, prog) = build("int main(void) {\n  int a = 1;\n  a += 2;\n  return a - 3;\n}\n", dir.path());
        let t = prog.run_traced(b"", None, DEFAULT_TIMEOUT).unwrap();
        let lines: Vec<u32> = t.records().map(|k| k.line).collect();
        assert_eq!(lines, vec![2, 3, 4]);
        assert_eq!(t.exit_status, TraceExit::Normal);
    }

    #[test]
    fn cap_stops_long_loops() {
        let dir = tempfile::tempdir().unwrap();
        let (_, mut prog) = build(
            "int main(void) {\n  int s = 0;\n  for (int i = 0; i < 1000; i++)\n    s += i;\n  return s & 1;\n}\n",
            dir.path(),
        );
        prog.trace_cap = 100;
        let t = prog.run_traced(b"", None, DEFAULT_TIMEOUT).unwrap();
        assert_eq!(t.exit_status, TraceExit::TraceCap);
        assert_eq!(t.record_count(), 100);
    }

    #[test]
    fn timeout_is_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let (_, prog) = build(
            "#include <unistd.h>\nint main(void) {\n  while (1)\n    usleep(1000);\n}\n",
            dir.path(),
        );
        let start = Instant::now();
        let t = prog.run_traced(b"", None, Duration::from_millis(50)).unwrap();
        assert_eq!(t.exit_status, TraceExit::Timeout);
        let took = start.elapsed();
        assert!(took < Duration::from_millis(100), "took {took:?}");
    }

    #[test]
    fn stop_at_truncates_to_a_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let src = "#include <stdio.h>\nint main(void) {\n  int c = getchar();\n  int n = 0;\n  if (c == 'A')\n    n = 1;\n  else\n    n = 2;\n  if (n > 1) n = 3;\n  return n;\n}\n";
        let (index, prog) = build(src, dir.path());
        let cond = index.conditional_at(FileId(0), 9).unwrap().cond_id;
        let full = prog.run_traced(b"B", None, DEFAULT_TIMEOUT).unwrap();
        let cut = prog.run_traced(b"B", Some(cond), DEFAULT_TIMEOUT).unwrap();
        assert_eq!(cut.truncated_at, Some(cond));
        let full_recs: Vec<_> = full.records().collect();
        let cut_recs: Vec<_> = cut.records().collect();
        assert!(full_recs.starts_with(&cut_recs));
        assert_eq!(cut_recs.last().unwrap().line, 9);
        let arms: Vec<u16> = full
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Arm { arm, .. } => Some(*arm),
                _ => None,
            })
            .collect();
        assert_eq!(arms, vec![1, 0]);
    }

    #[test]
    fn crash_keeps_partial_trace() {
        let dir = tempfile::tempdir().unwrap();
        let (_, prog) = build(
            "#include <stdlib.h>\nint main(void) {\n  int a = 1;\n  abort();\n  return a;\n}\n",
            dir.path(),
        );
        let t = prog.run_traced(b"", None, DEFAULT_TIMEOUT).unwrap();
        assert_eq!(t.exit_status, TraceExit::Crash);
        assert_eq!(t.record_count(), 2);
    }

    #[test]
    fn binary_and_text_formats_agree() {
        let dir = tempfile::tempdir().unwrap();
        let src = "#include <stdio.h>\nstatic int sq(int x) { return x * x; }\nint main(void) {\n  int c = getchar();\n  switch (c) { case 'a': c = sq(c); break; default: break; }\n  return c & 1;\n}\n";
        let path = dir.path().join("t.c");
        fs::write(&path, src).unwrap();
        let index = crate::ast_index::build_ast_index(&[&path]).unwrap();
        let bin = instrument(&index, &BuildOptions::new(dir.path().join("b"))).unwrap();
        let mut opts = BuildOptions::new(dir.path().join("t"));
        opts.text_trace = true;
        let txt = instrument(&index, &opts).unwrap();
        for input in [&b"a"[..], b"z", b""] {
            let a = bin.run_traced(input, None, DEFAULT_TIMEOUT).unwrap();
            let b = txt.run_traced(input, None, DEFAULT_TIMEOUT).unwrap();
            assert_eq!(a.events, b.events);
        }
        let a = bin.run_traced(b"a", None, DEFAULT_TIMEOUT).unwrap();
        assert!(a.events.iter().any(|e| matches!(e, TraceEvent::Enter { line: 2, .. })));
        assert!(a.events.iter().any(|e| matches!(e, TraceEvent::Arm { arm: 0, .. })));
    }

    #[test]
    fn decode_drops_partial_record() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&7u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        let ev = decode_binary_trace(&bytes);
        assert_eq!(
            ev,
            vec![TraceEvent::Stmt(StmtKey {
                file: FileId(3),
                line: 7,
                ordinal: 1
            })]
        );
    }
}

//! Prompting a solver for an input that takes a roadblock's uncovered arm.
//!
//! A prompt wraps the flattened slice and the witness input. Backends return
//! raw response text; the input is recovered from the single fenced block in
//! it. Inputs travel through prompts in an escaped form that is lossless for
//! arbitrary bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ast_index::{parse_c, AstIndex, CondId};
use crate::coverage::arm_hits;
use crate::slicer::Slice;
use crate::tracer::TracedProgram;
use crate::util::atomic_write;
use crate::{Error, Result};

pub const SLICE_BEGIN: &str = "=== BEGIN SLICE ===";
pub const SLICE_END: &str = "=== END SLICE ===";
pub const INPUT_BEGIN: &str = "=== BEGIN INPUT ===";
pub const INPUT_END: &str = "=== END INPUT ===";

/// Prompts longer than this many estimated tokens are not sent.
pub const PROMPT_TOKEN_LIMIT: usize = 4096;
pub const ENDPOINT_ENV: &str = "SOLVER_ENDPOINT";
pub const API_KEY_ENV: &str = "SOLVER_API_KEY";
/// Extra attempts after a failed remote request.
pub const MAX_RETRIES: u32 = 2;

const PERSONA: &str = "You are an expert in concolic testing of C programs. \
You reason about how concrete program inputs flow through code to decide branch conditions.";

const TASK: &str = "You will be given a slice of a C program and an input that the program \
was run on. The slice keeps only the statements that affect one branch condition, with \
unrelated code replaced by `/* ... */`. The slice ends in an `assert(...)`. Your task is to \
produce a new input for the program that makes this assertion hold when execution reaches it.";

const STEPS: &str = "Work through the task in steps:
1. Find where the input enters the program and which variables hold parts of it.
2. Follow those variables through the slice to the assertion and write down what the \
assertion requires of them.
3. Decide which bytes of the given input must change to meet those requirements.
4. Produce the new input. Keep the rest of the given input as it is where you can; you may \
slightly modify or havoc it if that helps.";

const CONCRETE: &str = "Answer with one concrete input, not a script, a grammar, a regular \
expression or a description. Disregard format issues in the given input; it does not need to \
be well formed as long as execution reaches the assertion.";

const FORMAT: &str = "Output format: put the new input, and nothing else, inside exactly one \
fenced block delimited by lines of three backticks. Printable ASCII characters stand for \
themselves. Write every other byte as `\\xNN` with two hex digits, a backslash as `\\\\`, and a \
backtick as `\\x60`. You may also use `\\n` and `\\t`. Do not put any other fenced block in \
your answer.";

/// Escapes bytes for inclusion in a prompt.
pub fn encode_input(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'`' => out.push_str("\\x60"),
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
    }
    out
}

/// Inverse of [`encode_input`], also accepting `\n` and `\t`.
///
/// Raw newlines and tabs are taken as themselves. Returns `None` on a
/// malformed escape.
pub fn decode_input(text: &str) -> Option<Vec<u8>> {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b != b'\\' {
            out.push(b);
            i += 1;
            continue;
        }
        match bytes.get(i + 1)? {
            b'\\' => out.push(b'\\'),
            b'n' => out.push(b'\n'),
            b't' => out.push(b'\t'),
            b'x' => {
                let hex = text.get(i + 2..i + 4)?;
                if !hex.bytes().all(|c| c.is_ascii_hexdigit()) {
                    return None;
                }
                out.push(u8::from_str_radix(hex, 16).ok()?);
                i += 4;
                continue;
            }
            _ => return None,
        }
        i += 2;
    }
    Some(out)
}

/// Extracts the input from a response: the content of its only fenced
/// block, unescaped.
pub fn decode_response(raw: &str) -> Option<Vec<u8>> {
    let fences: Vec<usize> = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with("```"))
        .map(|(i, _)| i)
        .collect();
    if fences.len() != 2 {
        return None;
    }
    let lines: Vec<&str> = raw.lines().collect();
    let body = lines[fences[0] + 1..fences[1]].join("\n");
    decode_input(&body)
}

/// Wraps `bytes` the way a well-behaved solver would answer.
pub fn fence(bytes: &[u8]) -> String {
    format!("```\n{}\n```\n", encode_input(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Prompt {
    pub system_text: String,
    pub user_text: String,
    pub roadblock_key: String,
    pub slice_hash: String,
}

impl Prompt {
    /// Rough token count: four characters per token.
    pub fn estimated_tokens(&self) -> usize {
        (self.system_text.chars().count() + self.user_text.chars().count()).div_ceil(4)
    }
}

/// Key identifying a roadblock in replay files: `file:line#arm`.
pub fn roadblock_key(index: &AstIndex, cond: CondId, arm: u16) -> String {
    let name = &index.file(cond.file).name;
    let line = index.conditional(cond).map(|c| c.line()).unwrap_or(0);
    format!("{name}:{line}#{arm}")
}

pub fn build_prompt(slice_text: &str, witness: &[u8], roadblock_key: &str) -> Prompt {
    let system_text = format!("{PERSONA}\n\n{TASK}\n\n{STEPS}");
    let slice_body = slice_text.trim_end_matches('\n');
    let user_text = format!(
        "{CONCRETE}\n\n{FORMAT}\n\nProgram slice:\n{SLICE_BEGIN}\n{slice_body}\n{SLICE_END}\n\n\
         Given input:\n{INPUT_BEGIN}\n{}\n{INPUT_END}\n",
        encode_input(witness)
    );
    let slice_hash = format!("{:x}", Sha256::digest(slice_text.as_bytes()));
    Prompt {
        system_text,
        user_text,
        roadblock_key: roadblock_key.to_string(),
        slice_hash,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
    Bruteforce,
    /// No solver stage at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub backend: BackendKind,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Remote requests allowed over the campaign.
    pub query_budget: u64,
    /// Queries allowed for the scripted and brute-force backends.
    pub test_budget: u64,
    pub timeout_secs: f64,
    /// Replay file for the scripted backend.
    pub replay: Option<PathBuf>,
    pub bruteforce_trials: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: BackendKind::None,
            model: "gpt-4o".into(),
            max_tokens: 4096,
            temperature: 0.5,
            query_budget: 3000,
            test_budget: 100_000,
            timeout_secs: 60.0,
            replay: None,
            bruteforce_trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverResponse {
    pub raw_text: String,
    pub extracted_input: Option<Vec<u8>>,
    pub latency: Duration,
}

/// Everything a backend may look at for one query.
pub struct SolveRequest<'a> {
    pub prompt: &'a Prompt,
    pub slice: &'a Slice,
    pub witness: &'a [u8],
    pub cond: CondId,
    pub target_arm: u16,
}

/// Remaining query allowance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub remaining: u64,
    pub used: u64,
}

impl Budget {
    pub fn new(limit: u64) -> Self {
        Budget {
            remaining: limit,
            used: 0,
        }
    }

    pub fn take(&mut self) -> Result<()> {
        if self.remaining == 0 {
            return Err(Error::BudgetExhausted);
        }
        self.remaining -= 1;
        self.used += 1;
        Ok(())
    }
}

pub trait Backend: Send {
    /// Returns the raw response text. Every request actually issued must be
    /// paid for with `budget.take()` first.
    fn query(&mut self, request: &SolveRequest<'_>, budget: &mut Budget) -> Result<String>;
}

/// Chat-completion client.
pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    max_tokens: u32,
    temperature: f64,
    retry_delay: Duration,
}

impl RemoteBackend {
    /// Endpoint and key come from the environment.
    pub fn from_env(config: &SolverConfig) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set")))?;
        let api_key = std::env::var(API_KEY_ENV).ok();
        Ok(Self::new(endpoint, api_key, config))
    }

    pub fn new(endpoint: String, api_key: Option<String>, config: &SolverConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .build();
        RemoteBackend {
            agent: ureq::Agent::new_with_config(agent_config),
            endpoint,
            api_key,
            model: config.model.clone(),
            max_tokens: config.max_tokens,
            temperature: config.temperature,
            retry_delay: Duration::from_millis(500),
        }
    }

    pub fn with_retry_delay(mut self, delay: Duration) -> Self {
        self.retry_delay = delay;
        self
    }

    fn request_once(&self, prompt: &Prompt) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req
            .send_json(&body)
            .map_err(|e| Error::Solver(format!("request failed: {e}")))?;
        let value: serde_json::Value = resp
            .into_body()
            .read_json()
            .map_err(|e| Error::Solver(format!("bad response body: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Solver("response has no message content".into()))
    }
}

impl Backend for RemoteBackend {
    fn query(&mut self, request: &SolveRequest<'_>, budget: &mut Budget) -> Result<String> {
        let mut last = None;
        for attempt in 0..=MAX_RETRIES {
            if attempt > 0 {
                std::thread::sleep(self.retry_delay * attempt);
            }
            budget.take()?;
            match self.request_once(request.prompt) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("solver request {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Solver("no request made".into())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub roadblock_key: String,
    pub response_text: String,
}

/// Canned responses keyed by roadblock; each entry answers once. Entries
/// keyed `*` answer any roadblock that has no entry of its own left.
pub struct ScriptedBackend {
    entries: Vec<(ReplayEntry, bool)>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        ScriptedBackend {
            entries: entries.into_iter().map(|e| (e, false)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(serde_json::from_str(&text)?))
    }

    fn take_entry(&mut self, key: &str) -> Option<String> {
        let pos = self
            .entries
            .iter()
            .position(|(e, used)| !used && e.roadblock_key == key)
            .or_else(|| {
                self.entries
                    .iter()
                    .position(|(e, used)| !used && e.roadblock_key == "*")
            })?;
        self.entries[pos].1 = true;
        Some(self.entries[pos].0.response_text.clone())
    }
}

impl Backend for ScriptedBackend {
    fn query(&mut self, request: &SolveRequest<'_>, budget: &mut Budget) -> Result<String> {
        budget.take()?;
        Ok(self
            .take_entry(&request.prompt.roadblock_key)
            .unwrap_or_default())
    }
}

/// Decides whether an input drives `cond` into `arm`.
pub trait ArmProbe: Send {
    fn takes_arm(&mut self, input: &[u8], cond: CondId, arm: u16) -> Result<bool>;
}

/// Runs the traced subject to completion and checks the arms it took.
pub struct TracedProbe {
    pub program: TracedProgram,
    pub index: Arc<AstIndex>,
    pub timeout: Duration,
}

impl ArmProbe for TracedProbe {
    fn takes_arm(&mut self, input: &[u8], cond: CondId, arm: u16) -> Result<bool> {
        let trace = self.program.run_traced(input, None, self.timeout)?;
        Ok(arm_hits(&trace, &self.index).taken.contains(&(cond, arm)))
    }
}

/// Searches mutants of the witness by re-execution. Ignores the prompt
/// text; constants in the slice seed a small dictionary.
pub struct BruteforceBackend {
    probe: Box<dyn ArmProbe>,
    trials: u64,
    /// Trials spent by the last query.
    pub last_trials: u64,
}

impl BruteforceBackend {
    pub fn new(probe: Box<dyn ArmProbe>, trials: u64) -> Self {
        BruteforceBackend {
            probe,
            trials,
            last_trials: 0,
        }
    }

    /// Runs the search; returns the first mutant taking the arm.
    pub fn search(
        &mut self,
        slice_text: &str,
        witness: &[u8],
        cond: CondId,
        arm: u16,
    ) -> Result<Option<Vec<u8>>> {
        let dict = slice_dictionary(slice_text);
        let mut tried: BTreeSet<Vec<u8>> = BTreeSet::new();
        tried.insert(witness.to_vec());
        self.last_trials = 0;
        for candidate in candidates(witness, &dict) {
            if self.last_trials >= self.trials {
                break;
            }
            if !tried.insert(candidate.clone()) {
                continue;
            }
            self.last_trials += 1;
            if self.probe.takes_arm(&candidate, cond, arm)? {
                return Ok(Some(candidate));
            }
        }
        Ok(None)
    }
}

impl Backend for BruteforceBackend {
    fn query(&mut self, request: &SolveRequest<'_>, budget: &mut Budget) -> Result<String> {
        budget.take()?;
        let found = self.search(
            &request.slice.flattened,
            request.witness,
            request.cond,
            request.target_arm,
        )?;
        Ok(match found {
            Some(bytes) => fence(&bytes),
            None => format!("no input found after {} trials\n", self.last_trials),
        })
    }
}

/// Byte strings worth trying: literals in the slice, and for integer
/// literals in the assertion, values derived from pairs of them in several
/// encodings.
pub fn slice_dictionary(slice_text: &str) -> Vec<Vec<u8>> {
    let tree = parse_c(slice_text.as_bytes());
    let src = slice_text.as_bytes();
    let mut strings: Vec<Vec<u8>> = Vec::new();
    let mut numbers: Vec<i64> = Vec::new();
    let mut assertion_numbers: Vec<i64> = Vec::new();
    let mut stack = vec![(tree.root_node(), false)];
    while let Some((n, in_assert)) = stack.pop() {
        let text = n.utf8_text(src).unwrap_or("");
        match n.kind() {
            "string_literal" => {
                strings.push(c_literal_bytes(text.trim_start_matches(['L', 'u', 'U', '8'])));
                continue;
            }
            "char_literal" => {
                strings.push(c_literal_bytes(text.trim_start_matches(['L', 'u', 'U', '8'])));
                continue;
            }
            "number_literal" => {
                if let Some(v) = parse_c_int(text) {
                    numbers.push(v);
                    if in_assert {
                        assertion_numbers.push(v);
                    }
                }
                continue;
            }
            _ => {}
        }
        let is_assert = n.kind() == "call_expression"
            && n.child_by_field_name("function")
                .and_then(|f| f.utf8_text(src).ok())
                == Some("assert");
        let mut cursor = n.walk();
        for c in n.children(&mut cursor) {
            stack.push((c, in_assert || is_assert));
        }
    }
    let mut values: Vec<i64> = numbers.clone();
    for &a in &assertion_numbers {
        for &b in &numbers {
            if a == b {
                continue;
            }
            values.push(a ^ b);
            values.push(a.wrapping_sub(b));
            values.push(a.wrapping_add(b));
            if b != 0 && a % b == 0 {
                values.push(a / b);
            }
        }
    }
    let mut dict: Vec<Vec<u8>> = Vec::new();
    let push = |d: &mut Vec<Vec<u8>>, v: Vec<u8>| {
        if !v.is_empty() && !d.contains(&v) {
            d.push(v);
        }
    };
    for s in strings {
        push(&mut dict, s);
    }
    // Derived values first among numbers: they are the likely solutions.
    values.reverse();
    for v in values {
        push(&mut dict, v.to_string().into_bytes());
        push(&mut dict, format!("{v:x}").into_bytes());
        push(&mut dict, format!("{v:X}").into_bytes());
        if (0..=0xff).contains(&v) {
            push(&mut dict, vec![v as u8]);
        }
        if (0..=0xffff).contains(&v) {
            push(&mut dict, (v as u16).to_le_bytes().to_vec());
            push(&mut dict, (v as u16).to_be_bytes().to_vec());
        }
        if (0..=0xffff_ffff).contains(&v) {
            push(&mut dict, (v as u32).to_le_bytes().to_vec());
            push(&mut dict, (v as u32).to_be_bytes().to_vec());
        }
    }
    dict
}

/// Value bytes of a C string or character literal, without the quotes.
fn c_literal_bytes(lit: &str) -> Vec<u8> {
    let inner = lit
        .strip_prefix(['"', '\''])
        .and_then(|s| s.strip_suffix(['"', '\'']))
        .unwrap_or(lit)
        .as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < inner.len() {
        if inner[i] != b'\\' || i + 1 == inner.len() {
            out.push(inner[i]);
            i += 1;
            continue;
        }
        i += 1;
        let c = inner[i];
        i += 1;
        match c {
            b'n' => out.push(b'\n'),
            b't' => out.push(b'\t'),
            b'r' => out.push(b'\r'),
            b'0'..=b'7' => {
                let mut v = (c - b'0') as u32;
                let mut k = 0;
                while k < 2 && i < inner.len() && (b'0'..=b'7').contains(&inner[i]) {
                    v = v * 8 + (inner[i] - b'0') as u32;
                    i += 1;
                    k += 1;
                }
                out.push(v as u8);
            }
            b'x' => {
                let start = i;
                while i < inner.len() && inner[i].is_ascii_hexdigit() {
                    i += 1;
                }
                let hex = std::str::from_utf8(&inner[start..i]).unwrap_or("0");
                out.push(u32::from_str_radix(hex, 16).unwrap_or(0) as u8);
            }
            other => out.push(other),
        }
    }
    out
}

fn parse_c_int(text: &str) -> Option<i64> {
    let t = text.trim_end_matches(['u', 'U', 'l', 'L']);
    if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()
    } else if t.len() > 1 && t.starts_with('0') {
        i64::from_str_radix(&t[1..], 8).ok()
    } else {
        t.parse().ok()
    }
}

/// Mutants of `witness` in the order they are tried: dictionary overwrites,
/// inserts and digit-run replacements, then every single-byte substitution.
fn candidates<'a>(witness: &'a [u8], dict: &'a [Vec<u8>]) -> impl Iterator<Item = Vec<u8>> + 'a {
    let n = witness.len();
    let digit_runs: Vec<(usize, usize)> = {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < n {
            if witness[i].is_ascii_digit() {
                let s = i;
                while i < n && witness[i].is_ascii_digit() {
                    i += 1;
                }
                runs.push((s, i));
            } else {
                i += 1;
            }
        }
        runs
    };
    let dict_stage = dict.iter().flat_map(move |tok| {
        let runs = digit_runs.clone();
        let replace = runs.into_iter().map(move |(s, e)| {
            let mut v = witness[..s].to_vec();
            v.extend_from_slice(tok);
            v.extend_from_slice(&witness[e..]);
            v
        });
        let overwrite = (0..=n).map(move |at| {
            let mut v = witness.to_vec();
            let end = (at + tok.len()).min(n);
            v.splice(at..end, tok.iter().copied());
            v
        });
        let insert = (0..=n).map(move |at| {
            let mut v = witness.to_vec();
            v.splice(at..at, tok.iter().copied());
            v
        });
        replace.chain(overwrite).chain(insert)
    });
    let byte_stage = (0..n).flat_map(move |at| {
        (0..=255u8).filter(move |&b| b != witness[at]).map(move |b| {
            let mut v = witness.to_vec();
            v[at] = b;
            v
        })
    });
    dict_stage.chain(byte_stage)
}

/// Writes every remote exchange to disk so the scripted backend can replay
/// a campaign.
pub struct Recorder {
    dir: PathBuf,
    entries: Vec<ReplayEntry>,
}

impl Recorder {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Recorder {
            dir,
            entries: Vec::new(),
        })
    }

    pub fn record(&mut self, prompt: &Prompt, raw: &str) -> Result<()> {
        let n = self.entries.len() + 1;
        let exchange = serde_json::json!({
            "roadblock_key": prompt.roadblock_key,
            "slice_hash": prompt.slice_hash,
            "system": prompt.system_text,
            "user": prompt.user_text,
            "response_text": raw,
        });
        atomic_write(
            &self.dir.join(format!("query-{n:06}.json")),
            &serde_json::to_vec_pretty(&exchange)?,
        )?;
        self.entries.push(ReplayEntry {
            roadblock_key: prompt.roadblock_key.clone(),
            response_text: raw.to_string(),
        });
        atomic_write(
            &self.dir.join("replay.json"),
            &serde_json::to_vec_pretty(&self.entries)?,
        )
    }
}

/// A backend plus its budget and optional recording.
pub struct Solver {
    backend: Box<dyn Backend>,
    pub budget: Budget,
    recorder: Option<Recorder>,
}

impl Solver {
    pub fn new(backend: Box<dyn Backend>, budget: u64) -> Self {
        Solver {
            backend,
            budget: Budget::new(budget),
            recorder: None,
        }
    }

    pub fn with_recorder(mut self, recorder: Recorder) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn exhausted(&self) -> bool {
        self.budget.remaining == 0
    }

    /// Sends one query. Fails with [`Error::BudgetExhausted`] without
    /// contacting the backend once the budget is spent.
    pub fn solve(&mut self, request: &SolveRequest<'_>) -> Result<SolverResponse> {
        if self.exhausted() {
            return Err(Error::BudgetExhausted);
        }
        let started = Instant::now();
        let raw_text = self.backend.query(request, &mut self.budget)?;
        let latency = started.elapsed();
        if let Some(r) = self.recorder.as_mut() {
            r.record(request.prompt, &raw_text)?;
        }
        Ok(SolverResponse {
            extracted_input: decode_response(&raw_text),
            raw_text,
            latency,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn escapes_are_lossless_and_printable() {
        let bytes = b"ab\x00c`\\\n\xff";
        let enc = encode_input(bytes);
        assert_eq!(enc, "ab\\x00c\\x60\\\\\\x0a\\xff");
        assert!(enc.bytes().all(|b| (0x20..0x7f).contains(&b) && b != b'`'));
        assert_eq!(decode_input(&enc).unwrap(), bytes);
    }

    #[test]
    fn response_needs_exactly_one_block() {
        assert_eq!(
            decode_response("Here:\n```\nab\\x00c\n```\n").unwrap(),
            vec![0x61, 0x62, 0x00, 0x63]
        );
        assert_eq!(decode_response("no block here"), None);
        assert_eq!(decode_response("```\na\n```\n```\nb\n```\n"), None);
        assert_eq!(decode_response("```\nbad \\q escape\n```"), None);
        assert_eq!(decode_response("```\ntrunc \\x4\n```"), None);
        assert_eq!(decode_response("```text\n\n```").unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn prompt_holds_slice_and_input_once() {
        let slice = "// file: a.c\nint main(void) {\n  assert(x == 1);\n}\n";
        let p = build_prompt(slice, b"A\x00", "a.c:3#0");
        let all = format!("{}{}", p.system_text, p.user_text);
        assert_eq!(all.matches(SLICE_BEGIN).count(), 1);
        assert_eq!(all.matches(INPUT_BEGIN).count(), 1);
        assert_eq!(all.matches("assert(x == 1);").count(), 1);
        assert!(p.user_text.contains(&format!("{INPUT_BEGIN}\nA\\x00\n{INPUT_END}")));
        let empty = build_prompt(slice, b"", "a.c:3#0");
        assert!(empty.user_text.contains(&format!("{INPUT_BEGIN}\n\n{INPUT_END}")));
    }

    #[test]
    fn budget_zero_stops_before_any_request() {
        struct Counting(u32);
        impl Backend for Counting {
            fn query(&mut self, _: &SolveRequest<'_>, budget: &mut Budget) -> Result<String> {
                budget.take()?;
                self.0 += 1;
                Ok(String::new())
            }
        }
        let mut solver = Solver::new(Box::new(Counting(0)), 0);
        let slice = dummy_slice();
        let prompt = build_prompt("x", b"", "k");
        let req = SolveRequest {
            prompt: &prompt,
            slice: &slice,
            witness: b"",
            cond: slice.cond,
            target_arm: 0,
        };
        assert!(matches!(solver.solve(&req), Err(Error::BudgetExhausted)));
        assert_eq!(solver.budget.used, 0);
    }

    fn dummy_slice() -> Slice {
        Slice {
            cond: CondId {
                file: crate::ast_index::FileId(0),
                byte: 0,
            },
            target_arm: 0,
            sliced_trace: Vec::new(),
            statements: BTreeSet::new(),
            ranges: Vec::new(),
            assertion_text: String::new(),
            flattened: String::new(),
            vars_growth: Vec::new(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn scripted_entries_answer_once_with_wildcard_fallback() {
        let mut b = ScriptedBackend::new(vec![
            ReplayEntry {
                roadblock_key: "a.c:3#1".into(),
                response_text: "first".into(),
            },
            ReplayEntry {
                roadblock_key: "*".into(),
                response_text: "any".into(),
            },
        ]);
        assert_eq!(b.take_entry("a.c:3#1").as_deref(), Some("first"));
        assert_eq!(b.take_entry("a.c:3#1").as_deref(), Some("any"));
        assert_eq!(b.take_entry("a.c:3#1"), None);
    }

    struct ThirdByte(u8);
    impl ArmProbe for ThirdByte {
        fn takes_arm(&mut self, input: &[u8], _: CondId, _: u16) -> Result<bool> {
            Ok(input.get(2) == Some(&self.0))
        }
    }

    #[test]
    fn bruteforce_finds_single_byte_substitution() {
        let mut b = BruteforceBackend::new(Box::new(ThirdByte(b'K')), 100_000);
        let slice = "int main(void) {\n  char buf[4];\n  assert(buf[2]=='K');\n}\n";
        let cond = dummy_slice().cond;
        assert_eq!(b.search(slice, b"AAAA", cond, 0).unwrap().unwrap(), b"AAKA");
    }

    #[test]
    fn bruteforce_respects_trial_budget() {
        let mut b = BruteforceBackend::new(Box::new(ThirdByte(b'K')), 10);
        let cond = dummy_slice().cond;
        assert_eq!(b.search("", b"AAAA", cond, 0).unwrap(), None);
        assert_eq!(b.last_trials, 10);
    }

    #[test]
    fn dictionary_derives_arithmetic_solutions() {
        let dict = slice_dictionary("int f(int n) {\n  assert(n * 3 == 1371);\n}\n");
        assert!(dict.contains(&b"457".to_vec()));
        let dict = slice_dictionary("int f(const char *b) {\n  assert(memcmp(b, \"F\\x55ZZ\", 4) == 0);\n}\n");
        assert!(dict.contains(&b"FUZZ".to_vec()));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            prop_assert_eq!(decode_input(&encode_input(&bytes)).unwrap(), bytes.clone());
            prop_assert_eq!(decode_response(&fence(&bytes)).unwrap(), bytes);
        }
    }
}

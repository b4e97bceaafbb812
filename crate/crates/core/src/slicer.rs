//! Dynamic backward slicing over execution traces.
//!
//! The trace is replayed forward once to turn records into steps (statement
//! completions and parameter bindings, each with its write and read sets
//! qualified by call frame). The backward pass then walks the steps in
//! reverse, keeping any step that writes a variable of interest or any guard
//! that reads one; the set of interesting variables only ever grows.
//!
//! Kept statements are widened with the syntax needed to read them in
//! context (enclosing control headers, function signature, declarations)
//! and flattened into one C fragment that ends in an assertion for the arm
//! the solver should reach.

mod effects;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::rc::Rc;

use tree_sitter::Node;

pub use effects::{expression_reads, unit_effects, CallSite, Name, UnitEffects, WriteEffect};

use crate::ast_index::{
    inner_expression, parse_c, ArmKind, AstIndex, CondId, CondKind, Conditional, DeclKind,
    FileId, FileRange, StmtKey, UnitKind,
};
use crate::tracer::{ExecutionTrace, TraceEvent};
use crate::{Error, Result};

/// Upper bound on the flattened slice, in characters.
pub const MAX_SLICE_CHARS: usize = 12_000;
pub const ELISION: &str = "/* ... */";

/// A variable instance at run time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Local { frame: u32, decl: usize },
    Global(usize),
    Free(String),
    /// Value returned by the call running in `frame`.
    Ret(u32),
    /// Memory written through pointer parameters of the call in `frame`.
    Out(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub cond: CondId,
    pub target_arm: u16,
    /// Retained statement records, as positions into the trace's events.
    pub sliced_trace: Vec<usize>,
    /// Distinct statements behind the retained positions.
    pub statements: BTreeSet<StmtKey>,
    /// Source ranges making up the slice, ordered and merged per file.
    pub ranges: Vec<FileRange>,
    pub assertion_text: String,
    pub flattened: String,
    /// Size of the variable set after each retained step.
    pub vars_growth: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Assertion that holds exactly when `cond` takes `target_arm`.
pub fn negate_condition(index: &AstIndex, cond: &Conditional, target_arm: u16) -> Result<String> {
    let arm = cond
        .arm(target_arm)
        .ok_or_else(|| Error::Slice(format!("conditional {} has no arm {target_arm}", cond.cond_id)))?;
    let guard = index.guard_text(cond);
    if guard.trim().is_empty() {
        let holds = matches!(arm.kind, ArmKind::LoopBody);
        return Ok(format!("assert({});", if holds { 1 } else { 0 }));
    }
    Ok(match arm.kind {
        ArmKind::Then | ArmKind::LoopBody => format!("assert({guard});"),
        ArmKind::Else | ArmKind::LoopExit => format!("assert(!(({guard})));"),
        ArmKind::Case => {
            let lit = arm.guard_value.clone().unwrap_or_default();
            format!("assert(({guard}) == {lit});")
        }
        ArmKind::Default => {
            let subject = if is_identifier(&guard) {
                guard.clone()
            } else {
                format!("({guard})")
            };
            let terms: Vec<String> = cond
                .arms
                .iter()
                .filter_map(|a| a.guard_value.as_ref())
                .map(|v| format!("{subject} != {v}"))
                .collect();
            if terms.is_empty() {
                "assert(1);".to_string()
            } else {
                format!("assert({});", terms.join(" && "))
            }
        }
    })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

/// Variable names read by the guard of `cond`.
pub fn get_vars(index: &AstIndex, cond: &Conditional) -> BTreeSet<String> {
    guard_names(index, cond)
        .into_iter()
        .map(|n| name_text(index, &n))
        .collect()
}

fn guard_names(index: &AstIndex, cond: &Conditional) -> BTreeSet<Name> {
    let unit = index.unit(cond.unit);
    match unit {
        Some(u) => unit_effects(index, u).reads,
        None => BTreeSet::new(),
    }
}

fn name_text(index: &AstIndex, n: &Name) -> String {
    match n {
        Name::Decl(i) => index.declarations[*i].name.clone(),
        Name::Free(s) => s.clone(),
    }
}

#[derive(Debug, Clone)]
struct Step {
    /// Event position of the statement record (or of the call entry for
    /// bindings).
    pos: usize,
    key: Option<StmtKey>,
    /// For bindings: the calling statement.
    caller: Option<(usize, StmtKey)>,
    writes: Vec<(Var, Vec<Var>)>,
    guard_reads: Option<Vec<Var>>,
    /// Record with no statement in the index; kept unconditionally.
    unknown: bool,
}

struct Pending {
    pos: usize,
    key: StmtKey,
    frame: u32,
    effects: Option<Rc<UnitEffects>>,
    is_guard: bool,
    /// Call frames entered while this statement ran, with the matched call
    /// site when the callee name lined up.
    callees: Vec<(u32, Option<usize>)>,
    matched: Vec<bool>,
}

struct Frame {
    id: u32,
    pending: Option<Pending>,
}

fn to_var(index: &AstIndex, n: &Name, frame: u32) -> Var {
    match n {
        Name::Decl(d) if index.is_global(*d) => Var::Global(*d),
        Name::Decl(d) => Var::Local { frame, decl: *d },
        Name::Free(s) => Var::Free(s.clone()),
    }
}

struct Replay<'a> {
    index: &'a AstIndex,
    cache: HashMap<StmtKey, Option<Rc<UnitEffects>>>,
    steps: Vec<Step>,
    frames: Vec<Frame>,
    next_frame: u32,
    warnings: Vec<String>,
}

impl<'a> Replay<'a> {
    fn effects(&mut self, key: StmtKey) -> Option<Rc<UnitEffects>> {
        let index = self.index;
        self.cache
            .entry(key)
            .or_insert_with(|| index.unit(key).map(|u| Rc::new(unit_effects(index, u))))
            .clone()
    }

    fn complete(&mut self, p: Pending) {
        let Some(eff) = p.effects else {
            self.warnings
                .push(format!("record {} has no statement in the index; kept whole", p.key));
            self.steps.push(Step {
                pos: p.pos,
                key: Some(p.key),
                caller: None,
                writes: Vec::new(),
                guard_reads: None,
                unknown: true,
            });
            return;
        };
        let index = self.index;
        let rets: Vec<Var> = p.callees.iter().map(|(f, _)| Var::Ret(*f)).collect();
        let mut writes = Vec::new();
        for w in &eff.writes {
            let mut deps: Vec<Var> = w.deps.iter().map(|n| to_var(index, n, p.frame)).collect();
            deps.extend(rets.iter().cloned());
            if let Some(ci) = w.from_call {
                for (f, site) in &p.callees {
                    if *site == Some(ci) || site.is_none() {
                        deps.push(Var::Out(*f));
                    }
                }
            }
            if w.through_param {
                writes.push((Var::Out(p.frame), deps.clone()));
            }
            writes.push((to_var(index, &w.target, p.frame), deps));
        }
        if let Some(r) = &eff.returns {
            let mut deps: Vec<Var> = r.iter().map(|n| to_var(index, n, p.frame)).collect();
            deps.extend(rets.iter().cloned());
            writes.push((Var::Ret(p.frame), deps));
        }
        let guard_reads = if p.is_guard {
            Some(eff.reads.iter().map(|n| to_var(index, n, p.frame)).collect())
        } else {
            None
        };
        self.steps.push(Step {
            pos: p.pos,
            key: Some(p.key),
            caller: None,
            writes,
            guard_reads,
            unknown: false,
        });
    }

    fn on_stmt(&mut self, pos: usize, key: StmtKey) {
        if self.frames.is_empty() {
            self.push_frame();
        }
        let top = self.frames.len() - 1;
        if let Some(prev) = self.frames[top].pending.take() {
            self.complete(prev);
        }
        let effects = self.effects(key);
        let is_guard = matches!(self.index.unit(key).map(|u| u.kind), Some(UnitKind::Guard(_)));
        let ncalls = effects.as_ref().map(|e| e.calls.len()).unwrap_or(0);
        let frame = self.frames[top].id;
        self.frames[top].pending = Some(Pending {
            pos,
            key,
            frame,
            effects,
            is_guard,
            callees: Vec::new(),
            matched: vec![false; ncalls],
        });
    }

    fn push_frame(&mut self) -> u32 {
        let id = self.next_frame;
        self.next_frame += 1;
        self.frames.push(Frame { id, pending: None });
        id
    }

    fn on_enter(&mut self, pos: usize, file: FileId, line: u32) {
        let index = self.index;
        let callee = index.function_by_line(file, line);
        let caller_frame = self.frames.last().map(|f| f.id);
        let new_id = self.next_frame;
        let mut binds: Vec<(usize, BTreeSet<Name>)> = Vec::new();
        let mut caller_stmt = None;
        if let Some(top) = self.frames.last_mut() {
            if let Some(p) = top.pending.as_mut() {
                caller_stmt = Some((p.pos, p.key));
                let mut site = None;
                if let (Some(eff), Some(cf)) = (p.effects.as_ref(), callee) {
                    for (i, c) in eff.calls.iter().enumerate() {
                        if !p.matched[i] && c.callee.as_deref() == Some(cf.name.as_str()) {
                            p.matched[i] = true;
                            site = Some(i);
                            binds = c.args.iter().cloned().enumerate().collect();
                            break;
                        }
                    }
                }
                p.callees.push((new_id, site));
            }
        }
        self.push_frame();
        let (Some(cf), Some(caller_frame), Some(caller)) = (callee, caller_frame, caller_stmt) else {
            return;
        };
        for (i, reads) in binds {
            let Some(pname) = cf.params.get(i) else {
                continue;
            };
            let at = cf.body_range;
            let Some(decl) = index.resolve_id(pname, &at) else {
                continue;
            };
            let deps = reads.iter().map(|n| to_var(index, n, caller_frame)).collect();
            self.steps.push(Step {
                pos,
                key: None,
                caller: Some(caller),
                writes: vec![(Var::Local { frame: new_id, decl }, deps)],
                guard_reads: None,
                unknown: false,
            });
        }
    }

    fn on_exit(&mut self) {
        if let Some(mut f) = self.frames.pop() {
            if let Some(p) = f.pending.take() {
                self.complete(p);
            }
        }
    }
}

/// Result of the backward pass alone.
#[derive(Debug, Clone, Default)]
struct Backward {
    positions: BTreeSet<usize>,
    statements: BTreeSet<StmtKey>,
    vars: HashSet<Var>,
    growth: Vec<usize>,
}

fn backward(steps: &[Step], init: HashSet<Var>) -> Backward {
    let mut out = Backward {
        vars: init,
        ..Backward::default()
    };
    for s in steps.iter().rev() {
        let writes_hit = s.writes.iter().any(|(t, _)| out.vars.contains(t));
        let guard_hit = s
            .guard_reads
            .as_ref()
            .map(|r| r.iter().any(|v| out.vars.contains(v)))
            .unwrap_or(false);
        if !(writes_hit || guard_hit || s.unknown) {
            continue;
        }
        let mut add: Vec<Var> = Vec::new();
        for (t, deps) in &s.writes {
            if out.vars.contains(t) {
                add.extend(deps.iter().cloned());
            }
        }
        if guard_hit {
            add.extend(s.guard_reads.iter().flatten().cloned());
        }
        out.vars.extend(add);
        out.growth.push(out.vars.len());
        match (s.key, s.caller) {
            (Some(k), _) => {
                out.positions.insert(s.pos);
                out.statements.insert(k);
            }
            (None, Some((cpos, ck))) => {
                out.positions.insert(cpos);
                out.statements.insert(ck);
            }
            _ => {}
        }
    }
    out
}

/// Computes the slice of `trace` for reaching `target_arm` of `cond`.
///
/// The trace must be truncated at `cond`.
pub fn build_slice(
    index: &AstIndex,
    trace: &ExecutionTrace,
    cond: CondId,
    target_arm: u16,
) -> Result<Slice> {
    build_slice_within(index, trace, cond, target_arm, MAX_SLICE_CHARS)
}

/// [`build_slice`] with an explicit character budget for the flattened text.
pub fn build_slice_within(
    index: &AstIndex,
    trace: &ExecutionTrace,
    cond_id: CondId,
    target_arm: u16,
    max_chars: usize,
) -> Result<Slice> {
    if trace.truncated_at != Some(cond_id) {
        return Err(Error::Slice(format!("trace is not truncated at {cond_id}")));
    }
    let cond = index
        .conditional(cond_id)
        .ok_or_else(|| Error::UnknownConditional(cond_id.to_string()))?;
    let assertion_text = negate_condition(index, cond, target_arm)?;

    let last = trace.events.len().checked_sub(1).ok_or_else(|| Error::Slice("empty trace".into()))?;
    let mut replay = Replay {
        index,
        cache: HashMap::new(),
        steps: Vec::new(),
        frames: Vec::new(),
        next_frame: 0,
        warnings: Vec::new(),
    };
    for (i, e) in trace.events.iter().enumerate() {
        if i == last {
            break;
        }
        match *e {
            TraceEvent::Stmt(k) => replay.on_stmt(i, k),
            TraceEvent::Enter { file, line } => replay.on_enter(i, file, line),
            TraceEvent::Exit { .. } => replay.on_exit(),
            TraceEvent::Arm { .. } => {}
        }
    }
    if replay.frames.is_empty() {
        replay.push_frame();
    }
    // The target's own frame: its pending statement completed before the
    // guard ran; callers further up are still mid-statement and excluded.
    let top = replay.frames.len() - 1;
    if let Some(p) = replay.frames[top].pending.take() {
        replay.complete(p);
    }
    let target_frame = replay.frames[top].id;
    let init: HashSet<Var> = guard_names(index, cond)
        .iter()
        .map(|n| to_var(index, n, target_frame))
        .collect();
    let back = backward(&replay.steps, init);
    let mut warnings = std::mem::take(&mut replay.warnings);

    let ctx = SliceContext::collect(index, cond, &back.statements);
    let (flattened, ranges) = render_with_fallbacks(index, cond, &ctx, &assertion_text, max_chars, &mut warnings)?;
    Ok(Slice {
        cond: cond_id,
        target_arm,
        sliced_trace: back.positions.into_iter().collect(),
        statements: back.statements,
        ranges,
        assertion_text,
        flattened,
        vars_growth: back.growth,
        warnings,
    })
}

/// Source ranges gathered for one slice, split by why they are there so the
/// size fallbacks can drop whole categories.
#[derive(Debug, Default, Clone)]
struct SliceContext {
    statements: Vec<FileRange>,
    skeleton: Vec<FileRange>,
    declarations: Vec<FileRange>,
    callees: Vec<FileRange>,
    functions: Vec<FileRange>,
}

impl SliceContext {
    fn collect(index: &AstIndex, cond: &Conditional, stmts: &BTreeSet<StmtKey>) -> SliceContext {
        let mut ctx = SliceContext::default();
        let mut names: BTreeSet<Name> = BTreeSet::new();
        let mut symbols: BTreeSet<usize> = BTreeSet::new();
        for k in stmts {
            let Some(unit) = index.unit(*k) else {
                if let Some(f) = index.files.get(k.file.0 as usize) {
                    if k.line >= 1 && k.line <= f.line_count() {
                        let start = f.line_start(k.line);
                        let end = if k.line < f.line_count() {
                            f.line_start(k.line + 1)
                        } else {
                            f.bytes.len() as u32
                        };
                        ctx.statements.push(index.range_between(k.file, start, end));
                    }
                }
                continue;
            };
            let eff = unit_effects(index, unit);
            names.extend(eff.reads.iter().cloned());
            names.extend(eff.writes.iter().map(|w| w.target.clone()));
            symbols.extend(eff.symbols.iter().copied());
            let Some(node) = index.node(&unit.node) else {
                continue;
            };
            let stmt_node = match unit.kind {
                UnitKind::Guard(c) => {
                    // A kept guard contributes its header, not its arms.
                    if let Some(c) = index.conditional(c) {
                        ctx.skeleton.extend(header_ranges(index, k.file, node, c));
                    }
                    node
                }
                UnitKind::ForInit | UnitKind::ForUpdate => {
                    let for_node = node.parent().unwrap_or(node);
                    if let Some(c) = index.conditionals.values().find(|c| {
                        c.kind == CondKind::For && c.stmt_range.start_byte == for_node.start_byte() as u32
                    }) {
                        ctx.skeleton.extend(header_ranges(index, k.file, for_node, c));
                    }
                    for_node
                }
                UnitKind::CaseLabel => {
                    ctx.statements.push(index.range_between(
                        k.file,
                        node.start_byte() as u32,
                        crate::ast_index::label_end(node),
                    ));
                    node
                }
                _ => {
                    ctx.statements.push(index.range_of(k.file, node));
                    node
                }
            };
            ctx.skeleton.extend(enclosing_ranges(index, k.file, stmt_node));
            ctx.functions.extend(index.function_containing(&unit.range).map(|f| f.range));
        }

        // The target statement itself: its surroundings and what its guard
        // mentions.
        let file = cond.cond_id.file;
        if let Some(node) = index.node(&index.unit(cond.unit).map(|u| u.node.clone()).unwrap_or_else(|| {
            crate::ast_index::NodeRef {
                file,
                start_byte: cond.stmt_range.start_byte,
                end_byte: cond.stmt_range.end_byte,
                kind: String::new(),
            }
        })) {
            ctx.skeleton.extend(enclosing_ranges(index, file, node));
        }
        ctx.functions.push(cond.enclosing_function.range);
        if let Some(u) = index.unit(cond.unit) {
            let eff = unit_effects(index, u);
            names.extend(eff.reads.iter().cloned());
            symbols.extend(eff.symbols.iter().copied());
            for call in &eff.calls {
                if let Some(f) = call.callee.as_ref().and_then(|c| index.functions.get(c)) {
                    ctx.callees.push(f.range);
                }
            }
        }

        let mut decls: BTreeSet<usize> = symbols;
        for n in &names {
            if let Name::Decl(d) = n {
                decls.insert(*d);
            }
        }
        let mut seen_typedefs = BTreeSet::new();
        for d in decls {
            let decl = &index.declarations[d];
            match decl.kind {
                DeclKind::Parameter | DeclKind::Function => continue,
                DeclKind::Enumerator => {
                    if let Some(r) = enclosing_top_level(index, &decl.range) {
                        ctx.declarations.push(r);
                    }
                }
                _ => {
                    ctx.declarations.push(decl.range);
                    for t in typedefs_in(index, &decl.range) {
                        if seen_typedefs.insert(t) {
                            ctx.declarations.push(index.declarations[t].range);
                        }
                    }
                }
            }
        }
        ctx
    }

    fn all(&self, with_callees: bool, widen: bool) -> Vec<FileRange> {
        let mut v = Vec::new();
        v.extend(self.statements.iter().copied());
        v.extend(self.skeleton.iter().copied());
        v.extend(self.declarations.iter().copied());
        if with_callees {
            v.extend(self.callees.iter().copied());
        }
        if widen {
            v.extend(self.functions.iter().copied());
        }
        v
    }
}

/// Header of a conditional statement (through the closing parenthesis of the
/// guard), or the `while (...);` tail of a do-while.
fn header_ranges(index: &AstIndex, file: FileId, node: Node<'_>, cond: &Conditional) -> Vec<FileRange> {
    let mut out = Vec::new();
    let start = node.start_byte() as u32;
    match cond.kind {
        CondKind::DoWhile => {
            let mut cursor = node.walk();
            let children: Vec<Node<'_>> = node.children(&mut cursor).collect();
            if let Some(kw) = children.iter().find(|c| c.kind() == "do") {
                out.push(index.range_of(file, *kw));
            }
            if let Some(w) = children.iter().rev().find(|c| c.kind() == "while") {
                out.push(index.range_between(file, w.start_byte() as u32, node.end_byte() as u32));
            }
            if let Some(body) = node.child_by_field_name("body") {
                out.extend(brace_ranges(index, file, body));
            }
        }
        CondKind::For => {
            let body_start = node
                .child_by_field_name("body")
                .map(|b| b.start_byte() as u32)
                .unwrap_or(node.end_byte() as u32);
            let mut cursor = node.walk();
            let close = node
                .children(&mut cursor)
                .filter(|c| c.kind() == ")" && (c.end_byte() as u32) <= body_start)
                .last()
                .map(|c| c.end_byte() as u32)
                .unwrap_or(body_start);
            out.push(index.range_between(file, start, close));
            if let Some(body) = node.child_by_field_name("body") {
                out.extend(brace_ranges(index, file, body));
            }
        }
        _ => {
            let end = node
                .child_by_field_name("condition")
                .map(|c| c.end_byte() as u32)
                .unwrap_or(start);
            out.push(index.range_between(file, start, end));
            let body_field = if cond.kind == CondKind::If { "consequence" } else { "body" };
            if let Some(body) = node.child_by_field_name(body_field) {
                out.extend(brace_ranges(index, file, body));
            }
        }
    }
    out
}

/// `{` and `}` of a compound statement, nothing otherwise.
fn brace_ranges(index: &AstIndex, file: FileId, node: Node<'_>) -> Vec<FileRange> {
    if node.kind() != "compound_statement" {
        return Vec::new();
    }
    let s = node.start_byte() as u32;
    let e = node.end_byte() as u32;
    vec![
        index.range_between(file, s, s + 1),
        index.range_between(file, e.saturating_sub(1), e),
    ]
}

/// Syntax enclosing `node` up to and including its function: control
/// headers, braces, labels, `else`, and the function signature.
fn enclosing_ranges(index: &AstIndex, file: FileId, node: Node<'_>) -> Vec<FileRange> {
    let mut out = Vec::new();
    let mut child = node;
    let mut parent = node.parent();
    while let Some(p) = parent {
        match p.kind() {
            "compound_statement" => {
                if p.parent().map(|g| g.kind()) != Some("function_definition") {
                    out.extend(brace_ranges(index, file, p));
                }
            }
            "if_statement" | "while_statement" | "for_statement" | "switch_statement"
            | "do_statement" => {
                let cond = index.conditionals.values().find(|c| {
                    c.cond_id.file == file && c.stmt_range.start_byte == p.start_byte() as u32
                });
                match cond {
                    Some(c) => out.extend(header_ranges(index, file, p, c)),
                    None => out.push(index.range_of(file, p)),
                }
                if p.kind() == "if_statement" {
                    let in_else = p
                        .child_by_field_name("alternative")
                        .map(|a| a.id() == child.id())
                        .unwrap_or(false);
                    if in_else {
                        if let Some(cons) = p.child_by_field_name("consequence") {
                            if cons.kind() != "compound_statement" {
                                out.push(index.range_of(file, cons));
                            }
                        }
                    }
                }
            }
            "else_clause" => {
                if let Some(kw) = p.child(0) {
                    out.push(index.range_of(file, kw));
                }
            }
            "case_statement" => {
                out.push(index.range_between(
                    file,
                    p.start_byte() as u32,
                    crate::ast_index::label_end(p),
                ));
            }
            "labeled_statement" => {
                if let Some(l) = p.child_by_field_name("label") {
                    out.push(index.range_between(file, l.start_byte() as u32, l.end_byte() as u32 + 1));
                }
            }
            "preproc_if" | "preproc_ifdef" | "preproc_elif" | "preproc_else" | "preproc_elifdef" => {
                let src = &index.file(file).bytes;
                let s = p.start_byte();
                let eol = src[s..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map(|n| s + n + 1)
                    .unwrap_or(src.len());
                out.push(index.range_between(file, s as u32, eol as u32));
                let mut cursor = p.walk();
                let endif = p.children(&mut cursor).find(|c| c.kind() == "#endif");
                if let Some(e) = endif {
                    out.push(index.range_of(file, e));
                }
            }
            "function_definition" => {
                if let Some(body) = p.child_by_field_name("body") {
                    let e = body.end_byte() as u32;
                    out.push(index.range_between(file, p.start_byte() as u32, body.start_byte() as u32 + 1));
                    out.push(index.range_between(file, e - 1, e));
                }
                break;
            }
            _ => {}
        }
        child = p;
        parent = p.parent();
    }
    out
}

fn enclosing_top_level(index: &AstIndex, r: &FileRange) -> Option<FileRange> {
    let tree = index.file(r.file).tree();
    let mut n = tree
        .root_node()
        .descendant_for_byte_range(r.start_byte as usize, r.end_byte as usize)?;
    while let Some(p) = n.parent() {
        if p.kind() == "translation_unit" {
            return Some(index.range_of(r.file, n));
        }
        n = p;
    }
    None
}

fn typedefs_in(index: &AstIndex, r: &FileRange) -> Vec<usize> {
    let tree = index.file(r.file).tree();
    let Some(node) = tree
        .root_node()
        .descendant_for_byte_range(r.start_byte as usize, r.end_byte as usize)
    else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        if n.kind() == "type_identifier" {
            if let Ok(t) = n.utf8_text(&index.file(r.file).bytes) {
                let at = index.range_of(r.file, n);
                if let Some(id) = index.resolve_id(t, &at) {
                    if index.declarations[id].kind == DeclKind::Typedef {
                        out.push(id);
                    }
                }
            }
        }
        let mut cursor = n.walk();
        stack.extend(n.children(&mut cursor));
    }
    out
}

fn render_with_fallbacks(
    index: &AstIndex,
    cond: &Conditional,
    ctx: &SliceContext,
    assertion: &str,
    max_chars: usize,
    warnings: &mut Vec<String>,
) -> Result<(String, Vec<FileRange>)> {
    let anchor = (cond.cond_id.file, cond.stmt_range.start_byte);
    let mut ranges = normalize(index, ctx.all(true, false));
    let mut text = flatten_slice(index, &ranges, assertion, anchor);
    if !parses(&text) {
        warnings.push("flattened slice did not re-parse; widened to whole functions".into());
        ranges = normalize(index, ctx.all(true, true));
        text = flatten_slice(index, &ranges, assertion, anchor);
        if !parses(&text) {
            return Err(Error::Slice("flattened slice does not parse".into()));
        }
    }
    if text.chars().count() > max_chars {
        let stripped = strip_comments(&text);
        warnings.push("slice over size limit; comments dropped".into());
        text = stripped;
    }
    if text.chars().count() > max_chars {
        warnings.push("slice over size limit; callee definitions dropped".into());
        ranges = normalize(index, ctx.all(false, false));
        text = strip_comments(&flatten_slice(index, &ranges, assertion, anchor));
    }
    let n = text.chars().count();
    if n > max_chars {
        return Err(Error::SliceTooLarge {
            limit: max_chars,
            actual: n,
        });
    }
    Ok((text, ranges))
}

fn parses(text: &str) -> bool {
    !parse_c(text.as_bytes()).root_node().has_error()
}

/// Removes comments other than file headers and elision markers.
fn strip_comments(text: &str) -> String {
    let tree = parse_c(text.as_bytes());
    let mut cuts = Vec::new();
    let mut stack = vec![tree.root_node()];
    while let Some(n) = stack.pop() {
        if n.kind() == "comment" {
            let t = &text[n.start_byte()..n.end_byte()];
            if t != ELISION && !t.starts_with("// file: ") {
                cuts.push((n.start_byte(), n.end_byte()));
            }
            continue;
        }
        let mut cursor = n.walk();
        stack.extend(n.children(&mut cursor));
    }
    cuts.sort();
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for (s, e) in cuts {
        if s < pos {
            continue;
        }
        out.push_str(&text[pos..s]);
        pos = e;
    }
    out.push_str(&text[pos..]);
    out.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim_end())
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Widens ranges to whole lines where only whitespace surrounds them, then
/// sorts and merges overlapping or touching ranges per file.
fn normalize(index: &AstIndex, ranges: Vec<FileRange>) -> Vec<FileRange> {
    let mut by_file: BTreeMap<FileId, Vec<(u32, u32)>> = BTreeMap::new();
    for r in ranges {
        if r.is_empty() {
            continue;
        }
        let src = &index.file(r.file).bytes;
        let mut s = r.start_byte as usize;
        while s > 0 && matches!(src[s - 1], b' ' | b'\t') {
            s -= 1;
        }
        let start = if s == 0 || src[s - 1] == b'\n' { s } else { r.start_byte as usize };
        let mut e = r.end_byte as usize;
        while e < src.len() && matches!(src[e], b' ' | b'\t' | b'\r') {
            e += 1;
        }
        let end = if e < src.len() && src[e] == b'\n' {
            e + 1
        } else if e == src.len() {
            e
        } else {
            r.end_byte as usize
        };
        by_file.entry(r.file).or_default().push((start as u32, end as u32));
    }
    let mut out = Vec::new();
    for (file, mut v) in by_file {
        v.sort();
        let src = &index.file(file).bytes;
        let mut merged: Vec<(u32, u32)> = Vec::new();
        for (s, e) in v {
            if let Some(last) = merged.last_mut() {
                let gap_blank = s > last.1
                    && src[last.1 as usize..s as usize]
                        .iter()
                        .all(|b| b.is_ascii_whitespace());
                if s <= last.1 || gap_blank {
                    last.1 = last.1.max(e);
                    continue;
                }
            }
            merged.push((s, e));
        }
        out.extend(merged.into_iter().map(|(s, e)| index.range_between(file, s, e)));
    }
    out
}

/// Renders merged ranges file by file, with an elision marker for every
/// non-blank gap and the assertion at `anchor`.
pub fn flatten_slice(index: &AstIndex, ranges: &[FileRange], assertion: &str, anchor: (FileId, u32)) -> String {
    let mut out = String::new();
    let mut files: Vec<FileId> = ranges.iter().map(|r| r.file).collect();
    files.push(anchor.0);
    files.sort();
    files.dedup();
    for file in files {
        let src = index.file(file);
        out.push_str(&format!("// file: {}\n", src.name));
        let mut pieces: Vec<(u32, u32)> = ranges
            .iter()
            .filter(|r| r.file == file)
            .map(|r| (r.start_byte, r.end_byte))
            .collect();
        pieces.sort();
        let mut prev_end: Option<u32> = None;
        let mut asserted = anchor.0 != file;
        for (s, e) in pieces {
            if !asserted && anchor.1 < e {
                let a = anchor.1.max(prev_end.unwrap_or(0));
                if a <= s {
                    emit_gap(&mut out, src.bytes.as_slice(), prev_end, a);
                    emit_assertion(&mut out, src.bytes.as_slice(), anchor.1, assertion);
                    prev_end = Some(a);
                    asserted = true;
                } else {
                    // The anchor falls inside this piece: split it.
                    emit_gap(&mut out, src.bytes.as_slice(), prev_end, s);
                    out.push_str(&src.text(s, a));
                    emit_assertion(&mut out, src.bytes.as_slice(), anchor.1, assertion);
                    asserted = true;
                    out.push_str(&src.text(a, e));
                    prev_end = Some(e);
                    continue;
                }
            }
            emit_gap(&mut out, src.bytes.as_slice(), prev_end, s);
            out.push_str(&src.text(s, e));
            prev_end = Some(e);
        }
        if !asserted {
            emit_gap(&mut out, src.bytes.as_slice(), prev_end, anchor.1);
            emit_assertion(&mut out, src.bytes.as_slice(), anchor.1, assertion);
        }
        if !out.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

fn indent_at(src: &[u8], pos: u32) -> String {
    let mut s = pos as usize;
    while s > 0 && src[s - 1] != b'\n' {
        s -= 1;
    }
    src[s..]
        .iter()
        .take_while(|b| matches!(b, b' ' | b'\t'))
        .map(|&b| b as char)
        .collect()
}

fn emit_gap(out: &mut String, src: &[u8], prev_end: Option<u32>, next: u32) {
    let Some(p) = prev_end else { return };
    if next <= p {
        return;
    }
    let gap = &src[p as usize..next as usize];
    if gap.iter().all(|b| b.is_ascii_whitespace()) {
        out.push_str(&String::from_utf8_lossy(gap));
        return;
    }
    let first_code = gap
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .map(|i| p + i as u32)
        .unwrap_or(p);
    if out.ends_with('\n') {
        out.push_str(&indent_at(src, first_code));
        out.push_str(ELISION);
        out.push('\n');
    } else {
        out.push(' ');
        out.push_str(ELISION);
        let next_at_line_start = next as usize == 0
            || src[..next as usize]
                .iter()
                .rev()
                .take_while(|&&b| b != b'\n')
                .all(|b| matches!(b, b' ' | b'\t'));
        out.push(if next_at_line_start { '\n' } else { ' ' });
    }
}

fn emit_assertion(out: &mut String, src: &[u8], at: u32, assertion: &str) {
    let trimmed = out.trim_end_matches([' ', '\t']).len();
    if out[..trimmed].ends_with('\n') {
        out.truncate(trimmed);
    }
    if out.ends_with('\n') || out.is_empty() {
        out.push_str(&indent_at(src, at));
    } else {
        out.push(' ');
    }
    out.push_str(assertion);
    out.push('\n');
}

/// Guard text of `cond` as an expression node.
pub fn guard_node<'a>(index: &'a AstIndex, cond: &Conditional) -> Option<Node<'a>> {
    let unit = index.unit(cond.unit)?;
    let node = index.node(&unit.node)?;
    node.child_by_field_name("condition").map(inner_expression)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracer::TraceExit;

    fn idx(src: &str) -> AstIndex {
        AstIndex::from_sources(vec![("t.c".into(), src.as_bytes().to_vec())]).unwrap()
    }

    fn stmt(line: u32, ordinal: u16) -> TraceEvent {
        TraceEvent::Stmt(StmtKey {
            file: FileId(0),
            line,
            ordinal,
        })
    }

    fn trace(events: Vec<TraceEvent>, cond: CondId) -> ExecutionTrace {
        ExecutionTrace {
            seed_id: None,
            events,
            truncated_at: Some(cond),
            exit_status: TraceExit::Normal,
        }
    }

    #[test]
    fn negation_forms() {
        let src = "int f(int x, char ch) {\n  if (x>0) return 1;\n  if ((x >= 0xD800)&&(x <= 0xDBFF)) return 2;\n  switch (ch) { case 'a': return 3; case 'b': return 4; }\n  return 0;\n}\n";
        let index = idx(src);
        let c2 = index.conditional_at(FileId(0), 2).unwrap();
        let c3 = index.conditional_at(FileId(0), 3).unwrap();
        let c4 = index.conditional_at(FileId(0), 4).unwrap();
        assert_eq!(negate_condition(&index, c2, 0).unwrap(), "assert(x>0);");
        assert_eq!(
            negate_condition(&index, c3, 1).unwrap(),
            "assert(!(((x >= 0xD800)&&(x <= 0xDBFF))));"
        );
        assert_eq!(negate_condition(&index, c4, 1).unwrap(), "assert((ch) == 'b');");
        assert_eq!(
            negate_condition(&index, c4, 2).unwrap(),
            "assert(ch != 'a' && ch != 'b');"
        );
        assert!(negate_condition(&index, c4, 3).is_err());
    }

    #[test]
    fn get_vars_excludes_functions_and_constants() {
        let src = "#include <string.h>\n#define LIMIT 4\nenum { K = 2 };\nint f(const char *first_seq, int first) {\n  if (memcmp(first_seq, \"\\\\uDB16\", 6)) return 1;\n  if (first + K > LIMIT) return 2;\n  if (1) return 3;\n  return 0;\n}\n";
        let index = idx(src);
        let v = |l| get_vars(&index, index.conditional_at(FileId(0), l).unwrap());
        assert_eq!(v(5), BTreeSet::from(["first_seq".to_string()]));
        assert_eq!(v(6), BTreeSet::from(["first".to_string()]));
        assert!(v(7).is_empty());
    }

    #[test]
    fn independent_statement_is_excluded() {
        let src = "int main(void) {\n  int x = 0;\n  int y = 0;\n  x = 1;\n  y = 2;\n  if (x > 0) return 1;\n  return y;\n}\n";
        let index = idx(src);
        let cond = index.conditional_at(FileId(0), 6).unwrap().cond_id;
        let t = trace(
            vec![stmt(2, 0), stmt(3, 0), stmt(4, 0), stmt(5, 0), stmt(6, 0)],
            cond,
        );
        let s = build_slice(&index, &t, cond, 0).unwrap();
        let lines: Vec<u32> = s.statements.iter().map(|k| k.line).collect();
        assert_eq!(lines, vec![2, 4]);
        assert!(s.flattened.contains("x = 1;"));
        assert!(!s.flattened.contains("y = 2;"));
        assert_eq!(s.flattened.matches(&s.assertion_text).count(), 1);
        assert!(parses(&s.flattened));
    }

    #[test]
    fn loop_positions_dedupe_to_one_range() {
        let src = "int main(void) {\n  int in[5] = {1, 2, 3, 4, 5};\n  int sum = 0;\n  for (int i = 0; i < 5; i++)\n    sum += in[i];\n  if (sum == 99) return 1;\n  return 0;\n}\n";
        let index = idx(src);
        let cond = index.conditional_at(FileId(0), 6).unwrap().cond_id;
        let mut ev = vec![stmt(2, 0), stmt(3, 0), stmt(4, 0)];
        for _ in 0..5 {
            ev.push(stmt(4, 1));
            ev.push(stmt(5, 0));
            ev.push(stmt(4, 2));
        }
        ev.push(stmt(4, 1));
        ev.push(stmt(6, 0));
        let t = trace(ev, cond);
        let s = build_slice(&index, &t, cond, 0).unwrap();
        let sum_positions = s
            .sliced_trace
            .iter()
            .filter(|&&p| matches!(t.events[p], TraceEvent::Stmt(k) if k.line == 5))
            .count();
        assert_eq!(sum_positions, 5);
        assert_eq!(s.flattened.matches("sum += in[i];").count(), 1);
        assert!(s.vars_growth.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn disjoint_ranges_get_one_elision() {
        let src = "int main(void) {\n  int a = 1;\n  int b = 2;\n  b = b * 2;\n  a = a + 1;\n  if (a == 7) return 1;\n  return b;\n}\n";
        let index = idx(src);
        let cond = index.conditional_at(FileId(0), 6).unwrap().cond_id;
        let t = trace(
            vec![stmt(2, 0), stmt(3, 0), stmt(4, 0), stmt(5, 0), stmt(6, 0)],
            cond,
        );
        let s = build_slice(&index, &t, cond, 0).unwrap();
        let expected = "// file: t.c\nint main(void) {\n  int a = 1;\n  /* ... */\n  a = a + 1;\n  assert(a == 7);\n  /* ... */\n}\n";
        assert_eq!(s.flattened, expected);
    }

    #[test]
    fn untruncated_trace_is_rejected() {
        let src = "int main(void) {\n  int a = 1;\n  if (a) return 1;\n  return 0;\n}\n";
        let index = idx(src);
        let cond = index.conditional_at(FileId(0), 3).unwrap().cond_id;
        let mut t = trace(vec![stmt(2, 0), stmt(3, 0)], cond);
        t.truncated_at = None;
        assert!(build_slice(&index, &t, cond, 0).is_err());
    }

    #[test]
    fn slicing_is_idempotent() {
        let src = "int main(void) {\n  int a = 1;\n  if (a) return 1;\n  return 0;\n}\n";
        let index = idx(src);
        let cond = index.conditional_at(FileId(0), 3).unwrap().cond_id;
        let t = trace(vec![stmt(2, 0), stmt(3, 0)], cond);
        let a = build_slice(&index, &t, cond, 1).unwrap();
        let b = build_slice(&index, &t, cond, 1).unwrap();
        assert_eq!(a.flattened, b.flattened);
    }
}

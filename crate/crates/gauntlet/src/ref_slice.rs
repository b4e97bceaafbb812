//! Reference dynamic slice.
//!
//! A forward interpreter over the trace that keeps, for every memory cell,
//! the set of trace positions its current value was computed from. Scalar
//! assignments replace the set; stores through subscripts, fields and
//! pointers add to it. The slice of a guard is the union of the sets of the
//! cells it reads when it is evaluated.
//!
//! Read and write sets are derived from the syntax tree here, separately
//! from the slicer. Anything outside the small expression language below is
//! reported as unsupported so the fixture can be rejected.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use slicefuzz_core::ast_index::{AstIndex, CondId, DeclKind, FileId, StmtKey, UnitKind};
use slicefuzz_core::tracer::{ExecutionTrace, TraceEvent};
use tree_sitter::Node;

use crate::{GauntletError, Result};

/// Library functions that store through some of their arguments, with the
/// argument positions they store through. `usize::MAX` means "this one and
/// every later argument".
const STORING_CALLS: &[(&str, &[usize])] = &[
    ("fread", &[0]),
    ("fgets", &[0]),
    ("read", &[1]),
    ("memcpy", &[0]),
    ("memmove", &[0]),
    ("memset", &[0]),
    ("strcpy", &[0]),
    ("strncpy", &[0]),
    ("strcat", &[0]),
    ("strncat", &[0]),
    ("sprintf", &[0]),
    ("snprintf", &[0]),
    ("sscanf", &[2, usize::MAX]),
    ("scanf", &[1, usize::MAX]),
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RefSlice {
    /// Trace positions (event indices) of retained statement records.
    pub positions: BTreeSet<usize>,
    pub statements: BTreeSet<StmtKey>,
}

type Deps = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Name {
    Decl(usize),
    Free(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Cell {
    Local(u32, usize),
    Static(usize),
    Free(String),
}

#[derive(Debug, Clone)]
enum Src {
    Var(Name),
    /// Value returned by the call site with this number.
    Call(usize),
}

#[derive(Debug, Clone)]
enum Effect {
    Store { target: Name, direct: bool, srcs: Vec<Src> },
    Kill(Name),
    Return(Vec<Src>),
}

#[derive(Debug, Clone)]
struct Site {
    callee: String,
    args: Vec<Vec<Src>>,
    bases: Vec<Option<Name>>,
}

#[derive(Debug, Default)]
struct Analysis {
    effects: Vec<Effect>,
    sites: Vec<Site>,
    /// Every variable read anywhere in the unit.
    reads: Vec<Name>,
}

struct Analyzer<'a> {
    index: &'a AstIndex,
    file: FileId,
    out: Analysis,
}

fn unsupported(index: &AstIndex, file: FileId, n: Node<'_>, what: &str) -> GauntletError {
    GauntletError::Unsupported {
        location: format!("{}:{}", index.file(file).name, n.start_position().row + 1),
        construct: what.to_string(),
    }
}

fn strip_parens(mut n: Node<'_>) -> Node<'_> {
    while n.kind() == "parenthesized_expression" {
        match n.named_child(0) {
            Some(c) => n = c,
            None => break,
        }
    }
    n
}

impl<'a> Analyzer<'a> {
    fn text(&self, n: Node<'_>) -> &'a str {
        n.utf8_text(&self.index.file(self.file).bytes).unwrap_or("")
    }

    fn fail(&self, n: Node<'_>, what: &str) -> GauntletError {
        unsupported(self.index, self.file, n, what)
    }

    fn name(&self, n: Node<'_>) -> Option<Name> {
        let text = self.text(n);
        let at = self.index.range_of(self.file, n);
        match self.index.resolve_id(text, &at) {
            Some(id) => matches!(
                self.index.declarations[id].kind,
                DeclKind::Variable | DeclKind::Parameter
            )
            .then_some(Name::Decl(id)),
            None if self.index.functions.contains_key(text) => None,
            None => Some(Name::Free(text.to_string())),
        }
    }

    fn read(&mut self, name: Name, srcs: &mut Vec<Src>) {
        self.out.reads.push(name.clone());
        srcs.push(Src::Var(name));
    }

    /// Value sources of an expression; records stores and calls on the way.
    fn expr(&mut self, n: Node<'_>) -> Result<Vec<Src>> {
        let mut srcs = Vec::new();
        match n.kind() {
            "identifier" => {
                if let Some(name) = self.name(n) {
                    self.read(name, &mut srcs);
                }
            }
            "number_literal" | "string_literal" | "char_literal" | "concatenated_string" | "true"
            | "false" | "null" | "sizeof_expression" | "alignof_expression" | "offsetof_expression"
            | "comment" => {}
            "parenthesized_expression" | "binary_expression" | "unary_expression"
            | "conditional_expression" | "comma_expression" | "initializer_list"
            | "subscript_expression" | "pointer_expression" => {
                let mut cursor = n.walk();
                let kids: Vec<Node<'_>> = n.named_children(&mut cursor).collect();
                for c in kids {
                    srcs.extend(self.expr(c)?);
                }
            }
            "field_expression" => {
                if let Some(a) = n.child_by_field_name("argument") {
                    srcs = self.expr(a)?;
                }
            }
            "cast_expression" | "initializer_pair" | "compound_literal_expression" => {
                if let Some(v) = n.child_by_field_name("value") {
                    srcs = self.expr(v)?;
                }
            }
            "assignment_expression" => {
                let left = n
                    .child_by_field_name("left")
                    .ok_or_else(|| self.fail(n, "assignment without target"))?;
                let right = n
                    .child_by_field_name("right")
                    .ok_or_else(|| self.fail(n, "assignment without value"))?;
                let op = n
                    .child_by_field_name("operator")
                    .map(|o| self.text(o))
                    .unwrap_or("=");
                let mut value = self.expr(right)?;
                let (target, direct, extra) = self.lvalue(left)?;
                value.extend(extra);
                if let Some(t) = target {
                    if op != "=" {
                        self.read(t.clone(), &mut value);
                    }
                    self.out.effects.push(Effect::Store {
                        target: t.clone(),
                        direct,
                        srcs: value.clone(),
                    });
                    self.read(t, &mut srcs);
                }
                srcs.extend(value);
            }
            "update_expression" => {
                let arg = n
                    .child_by_field_name("argument")
                    .ok_or_else(|| self.fail(n, "update without operand"))?;
                let (target, direct, mut value) = self.lvalue(arg)?;
                if let Some(t) = target {
                    self.read(t.clone(), &mut value);
                    self.out.effects.push(Effect::Store {
                        target: t,
                        direct,
                        srcs: value.clone(),
                    });
                }
                srcs = value;
            }
            "call_expression" => srcs = self.call(n)?,
            other => return Err(self.fail(n, other)),
        }
        Ok(srcs)
    }

    /// Storage named by an assignment target: the variable, whether the
    /// store replaces its whole value, and what the address depends on.
    fn lvalue(&mut self, n: Node<'_>) -> Result<(Option<Name>, bool, Vec<Src>)> {
        let n = strip_parens(n);
        match n.kind() {
            "identifier" => Ok((self.name(n), true, Vec::new())),
            "subscript_expression" => {
                let arg = n
                    .child_by_field_name("argument")
                    .ok_or_else(|| self.fail(n, "subscript without array"))?;
                let (base, _, mut extra) = self.lvalue_or_pointer(arg)?;
                if let Some(i) = n.child_by_field_name("index") {
                    extra.extend(self.expr(i)?);
                }
                Ok((base, false, extra))
            }
            "field_expression" => {
                let arg = n
                    .child_by_field_name("argument")
                    .ok_or_else(|| self.fail(n, "field without object"))?;
                let (base, _, extra) = self.lvalue_or_pointer(arg)?;
                Ok((base, false, extra))
            }
            "pointer_expression" => {
                let arg = n
                    .child_by_field_name("argument")
                    .ok_or_else(|| self.fail(n, "dereference without operand"))?;
                let (base, _, extra) = self.lvalue_or_pointer(arg)?;
                Ok((base, false, extra))
            }
            other => Err(self.fail(n, &format!("assignment to {other}"))),
        }
    }

    /// Like [`Analyzer::lvalue`], also accepting pointer arithmetic such as
    /// `*(p + 1)`: the pointer operand is the base, the rest feeds the
    /// address.
    fn lvalue_or_pointer(&mut self, n: Node<'_>) -> Result<(Option<Name>, bool, Vec<Src>)> {
        let n = strip_parens(n);
        if n.kind() == "binary_expression" || n.kind() == "cast_expression" {
            let base = self.pointer_base(n);
            let srcs = self.expr(n)?;
            return Ok((base, false, srcs));
        }
        self.lvalue(n)
    }

    fn is_pointer(&self, name: &Name) -> bool {
        match name {
            Name::Decl(id) => self.index.declarations[*id].pointer_like,
            Name::Free(_) => false,
        }
    }

    /// Variable whose storage a pointer-valued argument points into.
    fn pointer_base(&self, n: Node<'_>) -> Option<Name> {
        let n = strip_parens(n);
        match n.kind() {
            "identifier" => self.name(n),
            "cast_expression" => n.child_by_field_name("value").and_then(|v| self.pointer_base(v)),
            "pointer_expression" | "field_expression" | "subscript_expression" => n
                .child_by_field_name("argument")
                .and_then(|a| self.pointer_base(a)),
            "binary_expression" => {
                let l = n.child_by_field_name("left").and_then(|c| self.pointer_base(c));
                let r = n.child_by_field_name("right").and_then(|c| self.pointer_base(c));
                match (l, r) {
                    (Some(l), _) if self.is_pointer(&l) => Some(l),
                    (_, Some(r)) if self.is_pointer(&r) => Some(r),
                    (l, r) => l.or(r),
                }
            }
            _ => None,
        }
    }

    fn call(&mut self, n: Node<'_>) -> Result<Vec<Src>> {
        let func = n
            .child_by_field_name("function")
            .ok_or_else(|| self.fail(n, "call without callee"))?;
        if func.kind() != "identifier" {
            return Err(self.fail(n, "indirect call"));
        }
        let callee = self.text(func).to_string();
        let at = self.index.range_of(self.file, func);
        if let Some(id) = self.index.resolve_id(&callee, &at) {
            let d = &self.index.declarations[id];
            if matches!(d.kind, DeclKind::Variable | DeclKind::Parameter) || !self.index.is_global(id) {
                return Err(self.fail(n, "call through a variable"));
            }
        }
        let mut args = Vec::new();
        let mut bases = Vec::new();
        if let Some(list) = n.child_by_field_name("arguments") {
            let mut cursor = list.walk();
            let kids: Vec<Node<'_>> = list
                .named_children(&mut cursor)
                .filter(|c| c.kind() != "comment")
                .collect();
            for a in kids {
                args.push(self.expr(a)?);
                bases.push(self.pointer_base(a));
            }
        }
        let all: Vec<Src> = args.iter().flatten().cloned().collect();
        if self.index.functions.contains_key(&callee) {
            let id = self.out.sites.len();
            self.out.sites.push(Site {
                callee,
                args,
                bases,
            });
            return Ok(vec![Src::Call(id)]);
        }
        if let Some((_, stored)) = STORING_CALLS.iter().find(|(c, _)| *c == callee) {
            let open_from = stored
                .windows(2)
                .find(|w| w[1] == usize::MAX)
                .map(|w| w[0]);
            for (i, base) in bases.iter().enumerate() {
                let hit = stored.contains(&i) || open_from.map(|f| i >= f).unwrap_or(false);
                if let (true, Some(b)) = (hit, base) {
                    self.out.effects.push(Effect::Store {
                        target: b.clone(),
                        direct: false,
                        srcs: all.clone(),
                    });
                }
            }
        }
        Ok(all)
    }

    fn declaration(&mut self, n: Node<'_>) -> Result<()> {
        let mut cursor = n.walk();
        let decls: Vec<Node<'_>> = n.children_by_field_name("declarator", &mut cursor).collect();
        for d in decls {
            let (declarator, value) = if d.kind() == "init_declarator" {
                (d.child_by_field_name("declarator"), d.child_by_field_name("value"))
            } else {
                (Some(d), None)
            };
            let Some(target) = declarator.and_then(|x| self.declared_name(x)) else {
                return Err(self.fail(d, "declarator without a name"));
            };
            match value {
                Some(v) => {
                    let srcs = self.expr(v)?;
                    self.out.effects.push(Effect::Store {
                        target,
                        direct: true,
                        srcs,
                    });
                }
                None => self.out.effects.push(Effect::Kill(target)),
            }
        }
        Ok(())
    }

    fn declared_name(&self, mut d: Node<'_>) -> Option<Name> {
        loop {
            match d.kind() {
                "identifier" => {
                    // The declaration itself, not whatever the name shadows.
                    let at = self.index.range_of(self.file, d);
                    let text = self.text(d);
                    return self
                        .index
                        .declarations
                        .iter()
                        .position(|x| x.name == text && x.range.file == self.file && x.name_byte == at.start_byte)
                        .map(Name::Decl);
                }
                "pointer_declarator" | "array_declarator" | "parenthesized_declarator"
                | "function_declarator" | "attributed_declarator" => {
                    d = d.child_by_field_name("declarator").or_else(|| d.named_child(0))?;
                }
                _ => return None,
            }
        }
    }
}

fn analyze(index: &AstIndex, key: StmtKey) -> Result<Analysis> {
    let unit = index
        .unit(key)
        .ok_or_else(|| GauntletError::Oracle(format!("trace record {key} names no statement")))?;
    let node = index
        .node(&unit.node)
        .ok_or_else(|| GauntletError::Oracle(format!("statement {key} not found in its tree")))?;
    let mut a = Analyzer {
        index,
        file: key.file,
        out: Analysis::default(),
    };
    match unit.kind {
        UnitKind::Guard(_) => {
            if let Some(c) = node.child_by_field_name("condition") {
                a.expr(strip_parens(c))?;
            }
        }
        UnitKind::Expr | UnitKind::ForUpdate | UnitKind::ForInit | UnitKind::Decl => match node.kind() {
            "declaration" => a.declaration(node)?,
            "expression_statement" => {
                if let Some(e) = node.named_child(0) {
                    a.expr(e)?;
                }
            }
            _ => {
                a.expr(node)?;
            }
        },
        UnitKind::Return => {
            let srcs = match node.named_child(0) {
                Some(e) => a.expr(e)?,
                None => Vec::new(),
            };
            a.out.effects.push(Effect::Return(srcs));
        }
        UnitKind::Jump | UnitKind::CaseLabel => {}
    }
    Ok(a.out)
}

struct Pending {
    pos: usize,
    analysis: Rc<Analysis>,
    used: Vec<bool>,
    results: HashMap<usize, Deps>,
}

struct Frame {
    act: u32,
    /// Parameter declarations in order, with whether each is a pointer.
    params: Vec<(usize, bool)>,
    pending: Option<Pending>,
    ret: Deps,
    /// Stores made through pointer parameters, by parameter position.
    out: HashMap<usize, Deps>,
    /// Call site in the caller's pending statement this frame answers.
    site: Option<usize>,
}

struct Interp<'a> {
    index: &'a AstIndex,
    cache: HashMap<StmtKey, Rc<Analysis>>,
    def: HashMap<Cell, Deps>,
    frames: Vec<Frame>,
    next_act: u32,
}

impl<'a> Interp<'a> {
    fn analysis(&mut self, key: StmtKey) -> Result<Rc<Analysis>> {
        if let Some(a) = self.cache.get(&key) {
            return Ok(a.clone());
        }
        let a = Rc::new(analyze(self.index, key)?);
        self.cache.insert(key, a.clone());
        Ok(a)
    }

    fn cell(&self, name: &Name, act: u32) -> Cell {
        match name {
            Name::Decl(d) if self.index.is_global(*d) => Cell::Static(*d),
            Name::Decl(d) => Cell::Local(act, *d),
            Name::Free(s) => Cell::Free(s.clone()),
        }
    }

    fn value(&self, srcs: &[Src], act: u32, results: &HashMap<usize, Deps>) -> Deps {
        let mut d = Deps::new();
        for s in srcs {
            match s {
                Src::Var(n) => {
                    if let Some(x) = self.def.get(&self.cell(n, act)) {
                        d.extend(x.iter().copied());
                    }
                }
                Src::Call(i) => {
                    if let Some(x) = results.get(i) {
                        d.extend(x.iter().copied());
                    }
                }
            }
        }
        d
    }

    fn push_frame(&mut self, params: Vec<(usize, bool)>, site: Option<usize>) -> u32 {
        let act = self.next_act;
        self.next_act += 1;
        self.frames.push(Frame {
            act,
            params,
            pending: None,
            ret: Deps::new(),
            out: HashMap::new(),
            site,
        });
        act
    }

    /// Stores `deps` into `target` from frame `f`; stores through a pointer
    /// parameter are remembered for the caller.
    fn store(&mut self, f: usize, target: &Name, direct: bool, deps: Deps) {
        let cell = self.cell(target, self.frames[f].act);
        if direct {
            self.def.insert(cell, deps);
            return;
        }
        if let Name::Decl(d) = target {
            if let Some(p) = self.frames[f].params.iter().position(|(x, ptr)| x == d && *ptr) {
                self.frames[f].out.entry(p).or_default().extend(deps.iter().copied());
            }
        }
        self.def.entry(cell).or_default().extend(deps);
    }

    fn complete(&mut self, f: usize) {
        let Some(p) = self.frames[f].pending.take() else {
            return;
        };
        let act = self.frames[f].act;
        for e in &p.analysis.effects {
            match e {
                Effect::Store { target, direct, srcs } => {
                    let mut deps = self.value(srcs, act, &p.results);
                    deps.insert(p.pos);
                    self.store(f, target, *direct, deps);
                }
                Effect::Kill(target) => {
                    let cell = self.cell(target, act);
                    self.def.remove(&cell);
                }
                Effect::Return(srcs) => {
                    let mut deps = self.value(srcs, act, &p.results);
                    deps.insert(p.pos);
                    self.frames[f].ret = deps;
                }
            }
        }
    }

    fn on_stmt(&mut self, pos: usize, key: StmtKey) -> Result<()> {
        if self.frames.is_empty() {
            self.push_frame(Vec::new(), None);
        }
        let top = self.frames.len() - 1;
        self.complete(top);
        let analysis = self.analysis(key)?;
        self.frames[top].pending = Some(Pending {
            pos,
            used: vec![false; analysis.sites.len()],
            analysis,
            results: HashMap::new(),
        });
        Ok(())
    }

    fn on_enter(&mut self, file: FileId, line: u32) {
        let index = self.index;
        let func = index.function_by_line(file, line);
        let params: Vec<(usize, bool)> = func
            .map(|f| {
                f.params
                    .iter()
                    .filter_map(|p| index.resolve_id(p, &f.body_range))
                    .map(|d| (d, index.declarations[d].pointer_like))
                    .collect()
            })
            .unwrap_or_default();
        let mut binding: Option<(usize, Vec<Deps>)> = None;
        if let (Some(top), Some(func)) = (self.frames.len().checked_sub(1), func) {
            let act = self.frames[top].act;
            if let Some(p) = self.frames[top].pending.as_mut() {
                let site = p
                    .analysis
                    .sites
                    .iter()
                    .enumerate()
                    .position(|(i, s)| !p.used[i] && s.callee == func.name);
                if let Some(i) = site {
                    p.used[i] = true;
                    let pos = p.pos;
                    let analysis = p.analysis.clone();
                    let results = p.results.clone();
                    let args = analysis.sites[i]
                        .args
                        .iter()
                        .map(|a| {
                            let mut d = self.value(a, act, &results);
                            d.insert(pos);
                            d
                        })
                        .collect();
                    binding = Some((i, args));
                }
            }
        }
        let site = binding.as_ref().map(|(i, _)| *i);
        let act = self.push_frame(params.clone(), site);
        if let Some((_, args)) = binding {
            for ((decl, _), deps) in params.iter().zip(args) {
                self.def.insert(Cell::Local(act, *decl), deps);
            }
        }
    }

    fn on_exit(&mut self) {
        let Some(top) = self.frames.len().checked_sub(1) else {
            return;
        };
        self.complete(top);
        let frame = self.frames.pop().expect("frame present");
        let (Some(site), Some(caller)) = (frame.site, self.frames.len().checked_sub(1)) else {
            return;
        };
        let Some(p) = self.frames[caller].pending.as_mut() else {
            return;
        };
        p.results.insert(site, frame.ret);
        let pos = p.pos;
        let bases = p.analysis.sites[site].bases.clone();
        for (i, mut deps) in frame.out {
            if let Some(Some(base)) = bases.get(i) {
                deps.insert(pos);
                self.store(caller, base, false, deps);
            }
        }
    }
}

/// Computes the reference slice of `trace`, which must be truncated at
/// `cond`, for the guard's evaluation at the end of the trace.
pub fn reference_slice(index: &AstIndex, trace: &ExecutionTrace, cond: CondId) -> Result<RefSlice> {
    if trace.truncated_at != Some(cond) {
        return Err(GauntletError::Oracle(format!("trace not truncated at {cond}")));
    }
    let Some(TraceEvent::Stmt(guard)) = trace.events.last().copied() else {
        return Err(GauntletError::Oracle("trace does not end at a guard".into()));
    };
    let mut it = Interp {
        index,
        cache: HashMap::new(),
        def: HashMap::new(),
        frames: Vec::new(),
        next_act: 0,
    };
    let last = trace.events.len() - 1;
    for (pos, e) in trace.events[..last].iter().enumerate() {
        match *e {
            TraceEvent::Stmt(k) => it.on_stmt(pos, k)?,
            TraceEvent::Enter { file, line } => it.on_enter(file, line),
            TraceEvent::Exit { .. } => it.on_exit(),
            TraceEvent::Arm { .. } => {}
        }
    }
    if it.frames.is_empty() {
        it.push_frame(Vec::new(), None);
    }
    let top = it.frames.len() - 1;
    it.complete(top);
    let act = it.frames[top].act;
    let analysis = it.analysis(guard)?;
    let srcs: Vec<Src> = analysis.reads.iter().cloned().map(Src::Var).collect();
    let positions = it.value(&srcs, act, &HashMap::new());
    let statements = positions
        .iter()
        .filter_map(|p| match trace.events[*p] {
            TraceEvent::Stmt(k) => Some(k),
            _ => None,
        })
        .collect();
    Ok(RefSlice {
        positions,
        statements,
    })
}

/// Checks that every statement in the source files is within the oracle's
/// expression language.
pub fn check_supported(index: &AstIndex) -> Result<()> {
    for u in index.units() {
        analyze(index, u.key)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use slicefuzz_core::tracer::TraceExit;

    fn index(src: &str) -> AstIndex {
        AstIndex::from_sources(vec![("t.c".into(), src.as_bytes().to_vec())]).unwrap()
    }

    /// Straight-line trace: one record per listed line, `main` frame only.
    fn straight(ix: &AstIndex, lines: &[u32], cond: CondId) -> ExecutionTrace {
        let mut events = vec![TraceEvent::Enter { file: FileId(0), line: 1 }];
        for l in lines {
            let u = ix.units().find(|u| u.key.line == *l).unwrap();
            events.push(TraceEvent::Stmt(u.key));
        }
        ExecutionTrace {
            seed_id: None,
            events,
            truncated_at: Some(cond),
            exit_status: TraceExit::Normal,
        }
    }

    fn lines(s: &RefSlice) -> Vec<u32> {
        s.statements.iter().map(|k| k.line).collect()
    }

    #[test]
    fn independent_statement_left_out() {
        let src = "int main(void) {\n  int x = 1;\n  int y = 2;\n  if (x == 3)\n    return 1;\n  return y;\n}\n";
        let ix = index(src);
        let c = ix.find_conditional("t.c:4").unwrap().cond_id;
        let s = reference_slice(&ix, &straight(&ix, &[2, 3, 4], c), c).unwrap();
        assert_eq!(lines(&s), vec![2]);
    }

    #[test]
    fn scalar_overwrite_cuts_history() {
        let src = "int main(void) {\n  int x = 1;\n  x = 5;\n  if (x == 3)\n    return 1;\n  return 0;\n}\n";
        let ix = index(src);
        let c = ix.find_conditional("t.c:4").unwrap().cond_id;
        let s = reference_slice(&ix, &straight(&ix, &[2, 3, 4], c), c).unwrap();
        assert_eq!(lines(&s), vec![3]);
    }

    #[test]
    fn array_stores_accumulate() {
        let src = "int main(void) {\n  char b[4] = {0};\n  b[0] = 1;\n  b[1] = 2;\n  if (b[0] == 3)\n    return 1;\n  return 0;\n}\n";
        let ix = index(src);
        let c = ix.find_conditional("t.c:5").unwrap().cond_id;
        let s = reference_slice(&ix, &straight(&ix, &[2, 3, 4, 5], c), c).unwrap();
        assert_eq!(lines(&s), vec![2, 3, 4]);
    }

    #[test]
    fn indirect_calls_are_unsupported() {
        let ix = index("int main(void) {\n  int (*f)(void) = 0;\n  return f();\n}\n");
        assert!(matches!(
            check_supported(&ix),
            Err(GauntletError::Unsupported { .. })
        ));
    }
}

//! Syntax index over the subject's C sources.
//!
//! Every conditional (`if`, `switch`, `while`, `for`, `do`-`while`), its arms,
//! the declarations in each scope and every traceable statement unit are
//! recorded with exact byte and line ranges. Sources are indexed as written:
//! macros are not expanded, and regions the parser cannot make sense of are
//! skipped with a warning.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tree_sitter::{Node, Parser, Tree};

use crate::util::decode_text;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FileId(pub u32);

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FileRange {
    pub file: FileId,
    pub start_byte: u32,
    pub end_byte: u32,
    pub start_line: u32,
    pub end_line: u32,
}

impl FileRange {
    pub fn is_empty(&self) -> bool {
        self.start_byte == self.end_byte
    }

    /// Byte-wise containment within the same file.
    pub fn contains(&self, other: &FileRange) -> bool {
        self.file == other.file
            && self.start_byte <= other.start_byte
            && other.end_byte <= self.end_byte
    }

    pub fn contains_byte(&self, byte: u32) -> bool {
        self.start_byte <= byte && byte < self.end_byte
    }
}

/// Identity of a conditional: the file plus the start byte of its guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CondId {
    pub file: FileId,
    pub byte: u32,
}

impl fmt::Display for CondId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.file.0, self.byte)
    }
}

impl FromStr for CondId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (file, byte) = s
            .split_once('@')
            .ok_or_else(|| Error::UnknownConditional(s.to_string()))?;
        let file = file
            .trim()
            .parse()
            .map_err(|_| Error::UnknownConditional(s.to_string()))?;
        let byte = byte
            .trim()
            .parse()
            .map_err(|_| Error::UnknownConditional(s.to_string()))?;
        Ok(CondId {
            file: FileId(file),
            byte,
        })
    }
}

/// Key of one traceable statement: what a trace record names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StmtKey {
    pub file: FileId,
    pub line: u32,
    pub ordinal: u16,
}

impl fmt::Display for StmtKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file.0, self.line, self.ordinal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmKind {
    Then,
    Else,
    Case,
    Default,
    LoopBody,
    LoopExit,
}

impl ArmKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArmKind::Then => "then",
            ArmKind::Else => "else",
            ArmKind::Case => "case",
            ArmKind::Default => "default",
            ArmKind::LoopBody => "loop-body",
            ArmKind::LoopExit => "loop-exit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub arm_id: u16,
    pub kind: ArmKind,
    /// Case label text for `case` arms.
    pub guard_value: Option<String>,
    pub body_range: FileRange,
    /// True for arms with no source text of their own (missing `else`,
    /// loop exit, fall-past of a switch without `default`).
    pub synthetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CondKind {
    If,
    Switch,
    While,
    For,
    DoWhile,
}

impl CondKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CondKind::If => "if",
            CondKind::Switch => "switch",
            CondKind::While => "while",
            CondKind::For => "for",
            CondKind::DoWhile => "do-while",
        }
    }

    pub fn is_loop(&self) -> bool {
        matches!(self, CondKind::While | CondKind::For | CondKind::DoWhile)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRef {
    pub name: String,
    pub range: FileRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditional {
    pub cond_id: CondId,
    pub kind: CondKind,
    /// The guard expression without the surrounding parentheses. Empty for
    /// `for (;;)`.
    pub guard_range: FileRange,
    /// The whole statement, header through the last arm.
    pub stmt_range: FileRange,
    pub arms: Vec<Arm>,
    pub enclosing_function: FunctionRef,
    /// Statement unit emitted when the guard is evaluated.
    pub unit: StmtKey,
}

impl Conditional {
    pub fn total_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn line(&self) -> u32 {
        self.unit.line
    }

    pub fn arm(&self, arm_id: u16) -> Option<&Arm> {
        self.arms.get(arm_id as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitKind {
    Expr,
    Decl,
    Return,
    Jump,
    Guard(CondId),
    ForInit,
    ForUpdate,
    CaseLabel,
}

/// Location of a syntax node, enough to find it again in the stored tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub file: FileId,
    pub start_byte: u32,
    pub end_byte: u32,
    pub kind: String,
}

/// One traceable statement: the thing a trace record points at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub key: StmtKey,
    pub kind: UnitKind,
    /// Source text the unit stands for. For guards this is the guard
    /// expression; for for-loop parts the initializer or update.
    pub range: FileRange,
    /// The statement node (the conditional statement for guards, the
    /// `case_statement` for labels, the init/update expression for loops).
    pub node: NodeRef,
    pub function: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeclKind {
    Variable,
    Parameter,
    Function,
    Macro,
    Enumerator,
    Typedef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub name: String,
    pub kind: DeclKind,
    /// The declaring construct: whole declaration statement, parameter,
    /// `#define` line, enumerator.
    pub range: FileRange,
    pub name_byte: u32,
    /// Declared with `*` or `[]` somewhere in its declarator.
    pub pointer_like: bool,
    pub scope: usize,
    /// Declared with `static` storage.
    pub is_static: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScopeKind {
    File,
    Function,
    Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    pub kind: ScopeKind,
    pub range: FileRange,
    pub parent: Option<usize>,
    pub decls: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInfo {
    pub name: String,
    pub range: FileRange,
    /// From the start of the definition through the opening brace.
    pub signature_range: FileRange,
    pub body_range: FileRange,
    pub params: Vec<String>,
    pub scope: usize,
}

pub struct SourceFile {
    pub file_id: FileId,
    pub path: PathBuf,
    pub name: String,
    pub bytes: Vec<u8>,
    pub content_hash: String,
    line_starts: Vec<u32>,
    tree: Tree,
}

impl SourceFile {
    pub fn text(&self, start: u32, end: u32) -> std::borrow::Cow<'_, str> {
        decode_text(&self.bytes[start as usize..end as usize])
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    /// 1-based line of a byte offset.
    pub fn line_of(&self, byte: u32) -> u32 {
        match self.line_starts.binary_search(&byte) {
            Ok(i) => i as u32 + 1,
            Err(i) => i as u32,
        }
    }

    pub fn line_start(&self, line: u32) -> u32 {
        self.line_starts[(line.max(1) - 1) as usize]
    }

    pub fn line_count(&self) -> u32 {
        self.line_starts.len() as u32
    }

    fn empty_range_at(&self, byte: u32) -> FileRange {
        let line = self.line_of(byte);
        FileRange {
            file: self.file_id,
            start_byte: byte,
            end_byte: byte,
            start_line: line,
            end_line: line,
        }
    }

    fn range_of(&self, node: Node<'_>) -> FileRange {
        self.range_between(node.start_byte() as u32, node.end_byte() as u32)
    }

    fn range_between(&self, start: u32, end: u32) -> FileRange {
        let end_line = if end > start {
            self.line_of(end - 1)
        } else {
            self.line_of(start)
        };
        FileRange {
            file: self.file_id,
            start_byte: start,
            end_byte: end,
            start_line: self.line_of(start),
            end_line,
        }
    }
}

impl fmt::Debug for SourceFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceFile")
            .field("file_id", &self.file_id)
            .field("path", &self.path)
            .field("content_hash", &self.content_hash)
            .finish()
    }
}

#[derive(Debug)]
pub struct AstIndex {
    pub files: Vec<SourceFile>,
    pub conditionals: BTreeMap<CondId, Conditional>,
    pub functions: BTreeMap<String, FunctionInfo>,
    pub statements: BTreeMap<(FileId, u32), Vec<Unit>>,
    pub scopes: Vec<Scope>,
    pub declarations: Vec<Declaration>,
    pub warnings: Vec<String>,
}

/// Parses the given C files into an index.
///
/// Unreadable files are fatal; regions the grammar cannot parse are skipped
/// and reported in [`AstIndex::warnings`].
pub fn build_ast_index<P: AsRef<Path>>(source_paths: &[P]) -> Result<AstIndex> {
    let mut sources = Vec::with_capacity(source_paths.len());
    for p in source_paths {
        let path = p.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::SourceRead {
            path: path.to_path_buf(),
            source: e,
        })?;
        sources.push((path.to_path_buf(), bytes));
    }
    AstIndex::from_sources(sources)
}

pub fn parse_c(bytes: &[u8]) -> Tree {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_c::LANGUAGE.into())
        .expect("tree-sitter-c grammar is ABI compatible");
    parser
        .parse(bytes, None)
        .expect("parser has a language and no timeout")
}

/// True when `text` parses as a C expression.
pub fn parses_as_expression(text: &str) -> bool {
    let src = format!("void __probe(void) {{ (void)({text}); }}\n");
    !parse_c(src.as_bytes()).root_node().has_error()
}

impl AstIndex {
    pub fn from_sources(sources: Vec<(PathBuf, Vec<u8>)>) -> Result<AstIndex> {
        let mut index = AstIndex {
            files: Vec::new(),
            conditionals: BTreeMap::new(),
            functions: BTreeMap::new(),
            statements: BTreeMap::new(),
            scopes: Vec::new(),
            declarations: Vec::new(),
            warnings: Vec::new(),
        };
        for (i, (path, bytes)) in sources.into_iter().enumerate() {
            let tree = parse_c(&bytes);
            let mut line_starts = vec![0u32];
            for (pos, b) in bytes.iter().enumerate() {
                if *b == b'\n' {
                    line_starts.push(pos as u32 + 1);
                }
            }
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let content_hash = hex(&Sha256::digest(&bytes));
            index.files.push(SourceFile {
                file_id: FileId(i as u32),
                path,
                name,
                bytes,
                content_hash,
                line_starts,
                tree,
            });
        }
        for i in 0..index.files.len() {
            let mut w = Walker {
                file: &index.files[i],
                scopes: &mut index.scopes,
                declarations: &mut index.declarations,
                conditionals: &mut index.conditionals,
                functions: &mut index.functions,
                units: Vec::new(),
                warnings: &mut index.warnings,
                function: None,
            };
            w.run();
            let units = std::mem::take(&mut w.units);
            index.add_units(FileId(i as u32), units);
        }
        Ok(index)
    }

    fn add_units(&mut self, file: FileId, mut units: Vec<PendingUnit>) {
        units.sort_by_key(|u| (u.line, u.sort_byte));
        let mut guard_units = Vec::new();
        for u in units {
            let list = self.statements.entry((file, u.line)).or_default();
            let key = StmtKey {
                file,
                line: u.line,
                ordinal: list.len() as u16,
            };
            if let UnitKind::Guard(cond) = u.kind {
                guard_units.push((cond, key));
            }
            list.push(Unit {
                key,
                kind: u.kind,
                range: u.range,
                node: u.node,
                function: u.function,
            });
        }
        for (cond, key) in guard_units {
            if let Some(c) = self.conditionals.get_mut(&cond) {
                c.unit = key;
            }
        }
    }

    pub fn file(&self, id: FileId) -> &SourceFile {
        &self.files[id.0 as usize]
    }

    pub fn file_by_name(&self, name: &str) -> Option<&SourceFile> {
        self.files.iter().find(|f| f.name == name)
    }

    pub fn text(&self, range: &FileRange) -> String {
        self.file(range.file)
            .text(range.start_byte, range.end_byte)
            .into_owned()
    }

    pub fn guard_text(&self, cond: &Conditional) -> String {
        self.text(&cond.guard_range)
    }

    pub fn conditional(&self, id: CondId) -> Option<&Conditional> {
        self.conditionals.get(&id)
    }

    /// The conditional whose guard spans the given line, if any. When several
    /// guards touch the line, the one starting first wins.
    pub fn conditional_at(&self, file: FileId, line: u32) -> Option<&Conditional> {
        self.conditionals
            .range(CondId { file, byte: 0 }..=CondId { file, byte: u32::MAX })
            .map(|(_, c)| c)
            .find(|c| c.guard_range.start_line <= line && line <= c.guard_range.end_line)
    }

    /// Looks up a conditional by `name.c:LINE` or by its `file@byte` id.
    pub fn find_conditional(&self, spec: &str) -> Option<&Conditional> {
        if let Ok(id) = spec.parse::<CondId>() {
            return self.conditional(id);
        }
        let (name, line) = spec.rsplit_once(':')?;
        let line: u32 = line.parse().ok()?;
        let file = self.file_by_name(name)?;
        self.conditional_at(file.file_id, line)
    }

    pub fn unit(&self, key: StmtKey) -> Option<&Unit> {
        self.statements
            .get(&(key.file, key.line))
            .and_then(|v| v.get(key.ordinal as usize))
    }

    pub fn units(&self) -> impl Iterator<Item = &Unit> {
        self.statements.values().flatten()
    }

    /// Conditional evaluated by the unit, when the unit is a guard.
    pub fn cond_of_unit(&self, key: StmtKey) -> Option<&Conditional> {
        match self.unit(key)?.kind {
            UnitKind::Guard(c) => self.conditionals.get(&c),
            _ => None,
        }
    }

    pub fn function_by_line(&self, file: FileId, line: u32) -> Option<&FunctionInfo> {
        self.functions
            .values()
            .find(|f| f.range.file == file && f.range.start_line == line)
    }

    pub fn function_containing(&self, range: &FileRange) -> Option<&FunctionInfo> {
        self.functions.values().find(|f| f.range.contains(range))
    }

    pub fn node<'a>(&'a self, r: &NodeRef) -> Option<Node<'a>> {
        let tree = self.file(r.file).tree();
        let mut n = tree
            .root_node()
            .descendant_for_byte_range(r.start_byte as usize, r.end_byte as usize)?;
        loop {
            if n.start_byte() == r.start_byte as usize
                && n.end_byte() == r.end_byte as usize
                && n.kind() == r.kind
            {
                return Some(n);
            }
            n = n.parent()?;
        }
    }

    pub fn node_ref(&self, file: FileId, node: Node<'_>) -> NodeRef {
        NodeRef {
            file,
            start_byte: node.start_byte() as u32,
            end_byte: node.end_byte() as u32,
            kind: node.kind().to_string(),
        }
    }

    pub fn range_of(&self, file: FileId, node: Node<'_>) -> FileRange {
        self.file(file).range_of(node)
    }

    pub fn range_between(&self, file: FileId, start: u32, end: u32) -> FileRange {
        self.file(file).range_between(start, end)
    }

    /// Innermost scope of `file` containing `at`.
    fn innermost_scope(&self, at: &FileRange) -> Option<usize> {
        self.scopes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.range.contains(at))
            .min_by_key(|(_, s)| s.range.end_byte - s.range.start_byte)
            .map(|(i, _)| i)
    }

    /// Declaration that `name` refers to at `at`: innermost enclosing scope
    /// first, then file scope, then file-scope declarations of other files.
    pub fn resolve(&self, name: &str, at: &FileRange) -> Option<&Declaration> {
        self.resolve_id(name, at).map(|i| &self.declarations[i])
    }

    /// Like [`AstIndex::resolve`], returning the position in
    /// [`AstIndex::declarations`].
    pub fn resolve_id(&self, name: &str, at: &FileRange) -> Option<usize> {
        let mut scope = self.innermost_scope(at);
        while let Some(s) = scope {
            let sc = &self.scopes[s];
            if let Some(ids) = sc.decls.get(name) {
                let found = if sc.kind == ScopeKind::File {
                    ids.iter()
                        .copied()
                        .max_by_key(|&i| decl_rank(&self.declarations[i]))
                } else {
                    ids.iter()
                        .copied()
                        .filter(|&i| self.declarations[i].name_byte <= at.start_byte)
                        .last()
                };
                if found.is_some() {
                    return found;
                }
            }
            scope = sc.parent;
        }
        self.scopes
            .iter()
            .filter(|s| s.kind == ScopeKind::File && s.range.file != at.file)
            .filter_map(|s| s.decls.get(name))
            .flatten()
            .copied()
            .filter(|&i| !self.declarations[i].is_static)
            .max_by_key(|&i| decl_rank(&self.declarations[i]))
    }

    /// True for declarations with static storage duration: file scope or
    /// `static` locals.
    pub fn is_global(&self, decl: usize) -> bool {
        let d = &self.declarations[decl];
        d.is_static || self.scopes[d.scope].kind == ScopeKind::File
    }

    pub fn resolve_declaration(&self, name: &str, at: &FileRange) -> Option<FileRange> {
        self.resolve(name, at).map(|d| d.range)
    }

    /// True when `name` at `at` denotes something other than a variable:
    /// a function, macro constant, enumerator or type name.
    pub fn is_non_variable(&self, name: &str, at: &FileRange) -> bool {
        match self.resolve(name, at) {
            Some(d) => !matches!(d.kind, DeclKind::Variable | DeclKind::Parameter),
            None => self.functions.contains_key(name),
        }
    }

    pub fn dump_json(&self) -> serde_json::Value {
        let items: Vec<_> = self
            .conditionals
            .values()
            .map(|c| {
                serde_json::json!({
                    "cond_id": c.cond_id.to_string(),
                    "file": self.file(c.cond_id.file).name,
                    "line": c.line(),
                    "kind": c.kind.as_str(),
                    "arms": c.arms.iter().map(|a| serde_json::json!({
                        "id": a.arm_id,
                        "kind": a.kind.as_str(),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::Value::Array(items)
    }
}

/// Prefer definitions with storage over prototypes and externs.
fn decl_rank(d: &Declaration) -> u8 {
    match d.kind {
        DeclKind::Variable => 3,
        DeclKind::Parameter => 3,
        DeclKind::Macro | DeclKind::Enumerator => 2,
        DeclKind::Function => 1,
        DeclKind::Typedef => 0,
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct PendingUnit {
    line: u32,
    sort_byte: u32,
    kind: UnitKind,
    range: FileRange,
    node: NodeRef,
    function: String,
}

struct Walker<'a> {
    file: &'a SourceFile,
    scopes: &'a mut Vec<Scope>,
    declarations: &'a mut Vec<Declaration>,
    conditionals: &'a mut BTreeMap<CondId, Conditional>,
    functions: &'a mut BTreeMap<String, FunctionInfo>,
    units: Vec<PendingUnit>,
    warnings: &'a mut Vec<String>,
    function: Option<FunctionRef>,
}

impl<'a> Walker<'a> {
    fn run(&mut self) {
        let tree = &self.file.tree;
        let root = tree.root_node();
        let scope = self.push_scope(ScopeKind::File, self.file.range_of(root), None);
        self.walk(root, scope);
    }

    fn push_scope(&mut self, kind: ScopeKind, range: FileRange, parent: Option<usize>) -> usize {
        self.scopes.push(Scope {
            kind,
            range,
            parent,
            decls: BTreeMap::new(),
        });
        self.scopes.len() - 1
    }

    fn declare(&mut self, scope: usize, decl: Declaration) {
        let id = self.declarations.len();
        self.scopes[scope]
            .decls
            .entry(decl.name.clone())
            .or_default()
            .push(id);
        self.declarations.push(decl);
    }

    fn text(&self, node: Node<'_>) -> String {
        self.file
            .text(node.start_byte() as u32, node.end_byte() as u32)
            .into_owned()
    }

    fn warn(&mut self, node: Node<'_>, what: &str) {
        self.warnings.push(format!(
            "{}:{}: {what}",
            self.file.name,
            node.start_position().row + 1
        ));
    }

    fn node_ref(&self, node: Node<'_>) -> NodeRef {
        NodeRef {
            file: self.file.file_id,
            start_byte: node.start_byte() as u32,
            end_byte: node.end_byte() as u32,
            kind: node.kind().to_string(),
        }
    }

    fn add_unit(&mut self, kind: UnitKind, range: FileRange, node: Node<'_>) {
        let Some(function) = self.function.as_ref().map(|f| f.name.clone()) else {
            return;
        };
        self.units.push(PendingUnit {
            line: range.start_line,
            sort_byte: range.start_byte,
            kind,
            range,
            node: self.node_ref(node),
            function,
        });
    }

    fn walk(&mut self, node: Node<'_>, scope: usize) {
        if node.is_error() || node.is_missing() {
            self.warn(node, "unparseable region skipped");
            return;
        }
        match node.kind() {
            "function_definition" => self.function_definition(node, scope),
            "declaration" => {
                self.declaration(node, scope);
                if self.function.is_some()
                    && node.parent().map(|p| p.kind()) != Some("for_statement")
                    && has_child_kind(node, "init_declarator")
                    && !has_storage_class(node, "static", &self.file.bytes)
                {
                    self.add_unit(UnitKind::Decl, self.file.range_of(node), node);
                }
                self.walk_children(node, scope);
            }
            "type_definition" => {
                for d in field_children(node, "declarator") {
                    if let Some(name) = declarator_name(d) {
                        self.declare(
                            scope,
                            Declaration {
                                name: self.text(name),
                                kind: DeclKind::Typedef,
                                range: self.file.range_of(node),
                                name_byte: name.start_byte() as u32,
                                pointer_like: false,
                                scope,
                                is_static: false,
                            },
                        );
                    }
                }
                self.walk_children(node, scope);
            }
            "preproc_def" | "preproc_function_def" => {
                if let Some(name) = node.child_by_field_name("name") {
                    self.declare(
                        scope,
                        Declaration {
                            name: self.text(name),
                            kind: DeclKind::Macro,
                            range: self.file.range_of(node),
                            name_byte: name.start_byte() as u32,
                            pointer_like: false,
                            scope,
                            is_static: false,
                        },
                    );
                }
            }
            "enumerator" => {
                if let Some(name) = node.child_by_field_name("name") {
                    self.declare(
                        scope,
                        Declaration {
                            name: self.text(name),
                            kind: DeclKind::Enumerator,
                            range: self.file.range_of(node),
                            name_byte: name.start_byte() as u32,
                            pointer_like: false,
                            scope,
                            is_static: false,
                        },
                    );
                }
            }
            "compound_statement" => {
                let parent_is_fn = node.parent().map(|p| p.kind()) == Some("function_definition");
                let inner = if parent_is_fn {
                    scope
                } else {
                    self.push_scope(ScopeKind::Block, self.file.range_of(node), Some(scope))
                };
                self.walk_children(node, inner);
            }
            "expression_statement" => {
                if node.named_child_count() > 0 && self.function.is_some() {
                    self.add_unit(UnitKind::Expr, self.file.range_of(node), node);
                }
                self.walk_children(node, scope);
            }
            "return_statement" => {
                self.add_unit(UnitKind::Return, self.file.range_of(node), node);
                self.walk_children(node, scope);
            }
            "break_statement" | "continue_statement" | "goto_statement" => {
                self.add_unit(UnitKind::Jump, self.file.range_of(node), node);
            }
            "if_statement" | "while_statement" | "do_statement" | "switch_statement" => {
                self.conditional(node, scope);
                self.walk_children(node, scope);
            }
            "for_statement" => {
                let inner = self.push_scope(ScopeKind::Block, self.file.range_of(node), Some(scope));
                self.for_statement(node, inner);
                self.walk_children(node, inner);
            }
            "case_statement" => {
                if self.function.is_some() {
                    let label_end = label_end(node);
                    let range = self
                        .file
                        .range_between(node.start_byte() as u32, label_end);
                    self.add_unit(UnitKind::CaseLabel, range, node);
                }
                self.walk_children(node, scope);
            }
            _ => self.walk_children(node, scope),
        }
    }

    fn walk_children(&mut self, node: Node<'_>, scope: usize) {
        let mut cursor = node.walk();
        let children: Vec<Node<'_>> = node.children(&mut cursor).collect();
        for c in children {
            self.walk(c, scope);
        }
    }

    fn function_definition(&mut self, node: Node<'_>, scope: usize) {
        let Some(declarator) = node.child_by_field_name("declarator") else {
            return;
        };
        let Some(body) = node.child_by_field_name("body") else {
            return;
        };
        let Some(fdecl) = find_function_declarator(declarator) else {
            self.warn(node, "function definition without a declarator");
            return;
        };
        let Some(name_node) = declarator_name(fdecl) else {
            return;
        };
        let name = self.text(name_node);
        let range = self.file.range_of(node);
        let is_static = has_storage_class(node, "static", &self.file.bytes);
        self.declare(
            scope,
            Declaration {
                name: name.clone(),
                kind: DeclKind::Function,
                range,
                name_byte: name_node.start_byte() as u32,
                pointer_like: false,
                scope,
                is_static,
            },
        );
        let fscope = self.push_scope(ScopeKind::Function, range, Some(scope));
        let mut params = Vec::new();
        if let Some(plist) = fdecl.child_by_field_name("parameters") {
            let mut cursor = plist.walk();
            for p in plist.named_children(&mut cursor) {
                if p.kind() != "parameter_declaration" {
                    continue;
                }
                if let Some(d) = p.child_by_field_name("declarator") {
                    if let Some(n) = declarator_name(d) {
                        let pname = self.text(n);
                        params.push(pname.clone());
                        self.declare(
                            fscope,
                            Declaration {
                                name: pname,
                                kind: DeclKind::Parameter,
                                range: self.file.range_of(p),
                                name_byte: n.start_byte() as u32,
                                pointer_like: is_pointer_like(d),
                                scope: fscope,
                                is_static: false,
                            },
                        );
                    }
                }
            }
        }
        let body_start = body.start_byte() as u32;
        let info = FunctionInfo {
            name: name.clone(),
            range,
            signature_range: self.file.range_between(range.start_byte, body_start + 1),
            body_range: self.file.range_of(body),
            params,
            scope: fscope,
        };
        if self.functions.contains_key(&name) {
            self.warn(node, &format!("duplicate function `{name}`; keeping the first"));
        } else {
            self.functions.insert(name.clone(), info);
        }
        let saved = self.function.replace(FunctionRef { name, range });
        self.walk(body, fscope);
        self.function = saved;
    }

    fn declaration(&mut self, node: Node<'_>, scope: usize) {
        let is_static = has_storage_class(node, "static", &self.file.bytes);
        for d in field_children(node, "declarator") {
            let inner = if d.kind() == "init_declarator" {
                d.child_by_field_name("declarator").unwrap_or(d)
            } else {
                d
            };
            let is_fn = find_function_declarator(inner).is_some() && !is_pointer_like(inner);
            if let Some(n) = declarator_name(inner) {
                self.declare(
                    scope,
                    Declaration {
                        name: self.text(n),
                        kind: if is_fn {
                            DeclKind::Function
                        } else {
                            DeclKind::Variable
                        },
                        range: self.file.range_of(node),
                        name_byte: n.start_byte() as u32,
                        pointer_like: is_pointer_like(inner),
                        scope,
                        is_static,
                    },
                );
            }
        }
    }

    fn current_function(&self) -> Option<FunctionRef> {
        self.function.clone()
    }

    fn conditional(&mut self, node: Node<'_>, _scope: usize) {
        let Some(function) = self.current_function() else {
            return;
        };
        let Some(cond) = node.child_by_field_name("condition") else {
            self.warn(node, "conditional without a guard skipped");
            return;
        };
        if cond.has_error() {
            self.warn(node, "conditional with unparseable guard skipped");
            return;
        }
        let guard = inner_expression(cond);
        let guard_range = self.file.range_of(guard);
        let stmt_range = self.file.range_of(node);
        let end = self.file.empty_range_at(stmt_range.end_byte);
        let (kind, arms) = match node.kind() {
            "if_statement" => {
                let mut arms = Vec::new();
                if let Some(c) = node.child_by_field_name("consequence") {
                    arms.push(self.arm(0, ArmKind::Then, None, self.file.range_of(c), false));
                }
                match node.child_by_field_name("alternative") {
                    Some(alt) => {
                        let body = alt.named_child(0).unwrap_or(alt);
                        arms.push(self.arm(1, ArmKind::Else, None, self.file.range_of(body), false));
                    }
                    None => arms.push(self.arm(1, ArmKind::Else, None, end, true)),
                }
                (CondKind::If, arms)
            }
            "while_statement" | "do_statement" => {
                let body = node
                    .child_by_field_name("body")
                    .map(|b| self.file.range_of(b))
                    .unwrap_or(end);
                let kind = if node.kind() == "while_statement" {
                    CondKind::While
                } else {
                    CondKind::DoWhile
                };
                (
                    kind,
                    vec![
                        self.arm(0, ArmKind::LoopBody, None, body, false),
                        self.arm(1, ArmKind::LoopExit, None, end, true),
                    ],
                )
            }
            "switch_statement" => {
                let mut arms = Vec::new();
                let mut has_default = false;
                if let Some(body) = node.child_by_field_name("body") {
                    let mut cursor = body.walk();
                    for c in body.named_children(&mut cursor) {
                        if c.kind() != "case_statement" {
                            continue;
                        }
                        let id = arms.len() as u16;
                        match c.child_by_field_name("value") {
                            Some(v) => arms.push(self.arm(
                                id,
                                ArmKind::Case,
                                Some(self.text(v)),
                                self.file.range_of(c),
                                false,
                            )),
                            None => {
                                if has_default {
                                    self.warn(c, "second default label ignored");
                                    continue;
                                }
                                has_default = true;
                                arms.push(self.arm(id, ArmKind::Default, None, self.file.range_of(c), false));
                            }
                        }
                    }
                }
                if !has_default {
                    let id = arms.len() as u16;
                    arms.push(self.arm(id, ArmKind::Default, None, end, true));
                }
                (CondKind::Switch, arms)
            }
            _ => return,
        };
        let cond_id = CondId {
            file: self.file.file_id,
            byte: guard_range.start_byte,
        };
        self.conditionals.insert(
            cond_id,
            Conditional {
                cond_id,
                kind,
                guard_range,
                stmt_range,
                arms,
                enclosing_function: function,
                unit: StmtKey {
                    file: self.file.file_id,
                    line: guard_range.start_line,
                    ordinal: 0,
                },
            },
        );
        self.add_unit(UnitKind::Guard(cond_id), guard_range, node);
    }

    fn arm(
        &self,
        arm_id: u16,
        kind: ArmKind,
        guard_value: Option<String>,
        body_range: FileRange,
        synthetic: bool,
    ) -> Arm {
        Arm {
            arm_id,
            kind,
            guard_value,
            body_range,
            synthetic,
        }
    }

    fn for_statement(&mut self, node: Node<'_>, _scope: usize) {
        let Some(function) = self.current_function() else {
            return;
        };
        if let Some(init) = node.child_by_field_name("initializer") {
            if init.kind() == "declaration" {
                self.declaration(init, _scope);
            }
            self.add_unit(UnitKind::ForInit, self.file.range_of(init), init);
        }
        let guard_range = match node.child_by_field_name("condition") {
            Some(c) if c.has_error() => {
                self.warn(node, "for loop with unparseable guard skipped");
                None
            }
            Some(c) => Some(self.file.range_of(c)),
            None => for_condition_slot(node).map(|b| self.file.empty_range_at(b)),
        };
        if let Some(guard_range) = guard_range {
            let stmt_range = self.file.range_of(node);
            let end = self.file.empty_range_at(stmt_range.end_byte);
            let body = node
                .child_by_field_name("body")
                .map(|b| self.file.range_of(b))
                .unwrap_or(end);
            let cond_id = CondId {
                file: self.file.file_id,
                byte: guard_range.start_byte,
            };
            self.conditionals.insert(
                cond_id,
                Conditional {
                    cond_id,
                    kind: CondKind::For,
                    guard_range,
                    stmt_range,
                    arms: vec![
                        self.arm(0, ArmKind::LoopBody, None, body, false),
                        self.arm(1, ArmKind::LoopExit, None, end, true),
                    ],
                    enclosing_function: function,
                    unit: StmtKey {
                        file: self.file.file_id,
                        line: guard_range.start_line,
                        ordinal: 0,
                    },
                },
            );
            self.add_unit(UnitKind::Guard(cond_id), guard_range, node);
        }
        if let Some(update) = node.child_by_field_name("update") {
            self.add_unit(UnitKind::ForUpdate, self.file.range_of(update), update);
        }
    }
}

/// Strips the parentheses of a `parenthesized_expression` guard.
pub(crate) fn inner_expression(node: Node<'_>) -> Node<'_> {
    if node.kind() == "parenthesized_expression" {
        if let Some(inner) = node.named_child(0) {
            return inner;
        }
    }
    node
}

/// Byte offset where the condition of `for (init; ; update)` would go: the
/// start of the `;` that ends the condition slot.
pub(crate) fn for_condition_slot(node: Node<'_>) -> Option<u32> {
    let mut cursor = node.walk();
    let semis: Vec<u32> = node
        .children(&mut cursor)
        .filter(|c| c.kind() == ";")
        .map(|c| c.start_byte() as u32)
        .collect();
    semis.last().copied()
}

/// End byte of a `case X:` / `default:` label.
pub(crate) fn label_end(case: Node<'_>) -> u32 {
    let mut cursor = case.walk();
    let colon = case
        .children(&mut cursor)
        .find(|c| c.kind() == ":")
        .map(|c| c.end_byte() as u32);
    colon.unwrap_or(case.start_byte() as u32)
}

fn field_children<'t>(node: Node<'t>, field: &str) -> Vec<Node<'t>> {
    let mut cursor = node.walk();
    node.children_by_field_name(field, &mut cursor).collect()
}

fn has_child_kind(node: Node<'_>, kind: &str) -> bool {
    let mut cursor = node.walk();
    let found = node.children(&mut cursor).any(|c| c.kind() == kind);
    found
}

fn has_storage_class(node: Node<'_>, class: &str, src: &[u8]) -> bool {
    let mut cursor = node.walk();
    let found = node
        .children(&mut cursor)
        .any(|c| c.kind() == "storage_class_specifier" && c.utf8_text(src).ok() == Some(class));
    found
}

pub(crate) fn declarator_name(node: Node<'_>) -> Option<Node<'_>> {
    match node.kind() {
        "identifier" | "field_identifier" | "type_identifier" => Some(node),
        _ => {
            if let Some(d) = node.child_by_field_name("declarator") {
                return declarator_name(d);
            }
            let mut cursor = node.walk();
            let children: Vec<Node<'_>> = node.named_children(&mut cursor).collect();
            children.into_iter().find_map(declarator_name)
        }
    }
}

fn find_function_declarator(node: Node<'_>) -> Option<Node<'_>> {
    if node.kind() == "function_declarator" {
        return Some(node);
    }
    node.child_by_field_name("declarator")
        .and_then(find_function_declarator)
}

fn is_pointer_like(node: Node<'_>) -> bool {
    match node.kind() {
        "pointer_declarator" | "array_declarator" | "abstract_pointer_declarator"
        | "abstract_array_declarator" => true,
        _ => node
            .child_by_field_name("declarator")
            .map(is_pointer_like)
            .unwrap_or(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index_of(src: &str) -> AstIndex {
        AstIndex::from_sources(vec![(PathBuf::from("t.c"), src.as_bytes().to_vec())]).unwrap()
    }

    const GAUNTLET_30: &str = r#"#include <stdio.h>
int main(void) {
    char buf[16];
    size_t n = fread(buf, 1, sizeof buf, stdin);
    int score = 0;
    if (n < 4)
        return 0;
    if (buf[0] == 'F')
        score += 1;
    else
        score -= 1;
    if (buf[1] == 'U') {
        score *= 2;
    }
    switch (buf[2]) {
    case 'Z':
        score += 10;
        break;
    case 'Q':
        score += 20;
        break;
    case 'X':
        score += 30;
        break;
    case 'Y':
        score += 40;
        break;
    }
    return score;
}
"#;

    #[test]
    fn counts_conditionals_and_arms() {
        let idx = index_of(GAUNTLET_30);
        let arms: Vec<usize> = idx.conditionals.values().map(|c| c.total_arms()).collect();
        assert_eq!(arms, vec![2, 2, 2, 5]);
        let sw = idx.conditionals.values().last().unwrap();
        assert_eq!(sw.kind, CondKind::Switch);
        assert!(sw.arms[4].synthetic);
        assert_eq!(sw.arms[4].kind, ArmKind::Default);
        assert_eq!(sw.arms[1].guard_value.as_deref(), Some("'Q'"));
    }

    #[test]
    fn empty_file_has_no_conditionals() {
        let idx = index_of("");
        assert!(idx.conditionals.is_empty());
        assert!(idx.warnings.is_empty());
    }

    #[test]
    fn multi_line_guard_maps_both_lines() {
        let src = "int f(int a, int b) {\n  if ((a > 1) &&\n      (b < 2))\n    return 1;\n  return 0;\n}\n";
        let idx = index_of(src);
        let c2 = idx.conditional_at(FileId(0), 2).unwrap().cond_id;
        let c3 = idx.conditional_at(FileId(0), 3).unwrap().cond_id;
        assert_eq!(c2, c3);
        assert!(idx.conditional_at(FileId(0), 5).is_none());
        assert_eq!(idx.guard_text(idx.conditional(c2).unwrap()), "(a > 1) &&\n      (b < 2)");
    }

    #[test]
    fn loops_have_body_and_exit_arms() {
        let src = "void f(int n) {\n  int i;\n  for (i = 0; i < n; i++) { }\n  while (n--) ;\n  do { n++; } while (n < 3);\n  for (;;) break;\n}\n";
        let idx = index_of(src);
        let kinds: Vec<_> = idx.conditionals.values().map(|c| c.kind).collect();
        assert_eq!(
            kinds,
            vec![CondKind::For, CondKind::While, CondKind::DoWhile, CondKind::For]
        );
        for c in idx.conditionals.values() {
            assert_eq!(c.arms[0].kind, ArmKind::LoopBody);
            assert_eq!(c.arms[1].kind, ArmKind::LoopExit);
        }
        let forever = idx.conditionals.values().last().unwrap();
        assert!(forever.guard_range.is_empty());
    }

    #[test]
    fn resolves_innermost_declaration() {
        let src = "int g = 1;\nint first;\nint f(void) {\n  int first = 2;\n  return first + g;\n}\n";
        let idx = index_of(src);
        let ret = idx.statements[&(FileId(0), 5)][0].range;
        let d = idx.resolve_declaration("first", &ret).unwrap();
        assert_eq!(d.start_line, 4);
        let g = idx.resolve_declaration("g", &ret).unwrap();
        assert_eq!(g.start_line, 1);
        assert!(idx.resolve_declaration("nope", &ret).is_none());
    }

    #[test]
    fn parse_errors_are_skipped_not_fatal() {
        let src = "int f(int x) {\n  if (x > 0) { return 1; }\n  @@@ garbage ((( ;\n  return 0;\n}\n";
        let idx = index_of(src);
        assert!(!idx.warnings.is_empty());
        assert!(idx.conditional_at(FileId(0), 2).is_some());
    }

    #[test]
    fn statement_ordinals_follow_source_order() {
        let src = "void f(void) {\n  int a = 1; int b = 2; a = b;\n}\n";
        let idx = index_of(src);
        let units = &idx.statements[&(FileId(0), 2)];
        assert_eq!(units.len(), 3);
        assert_eq!(units[2].key.ordinal, 2);
        assert_eq!(idx.text(&units[2].range), "a = b;");
    }

    #[test]
    fn guard_text_reparses_and_ranges_nest() {
        let idx = index_of(GAUNTLET_30);
        for c in idx.conditionals.values() {
            assert!(parses_as_expression(&idx.guard_text(c)));
            assert!(c.enclosing_function.range.contains(&c.stmt_range));
            for a in &c.arms {
                assert!(c.stmt_range.contains(&a.body_range) || a.synthetic);
            }
        }
    }

    #[test]
    fn cond_ids_are_stable_across_reparses() {
        let a = index_of(GAUNTLET_30);
        let b = index_of(GAUNTLET_30);
        assert_eq!(
            a.conditionals.values().collect::<Vec<_>>(),
            b.conditionals.values().collect::<Vec<_>>()
        );
        let id: CondId = a.conditionals.keys().next().unwrap().to_string().parse().unwrap();
        assert!(a.conditional(id).is_some());
    }
}

//! Per-statement read and write sets.
//!
//! Everything here is syntactic: names are resolved against the index but no
//! values are tracked. Writes to `a[i]`, `*p`, `p->f` and `s.f` are weak and
//! land on the base identifier. Calls to functions outside the index are
//! assumed to write through every pointer-like argument.

use std::collections::BTreeSet;

use tree_sitter::Node;

use crate::ast_index::{inner_expression, AstIndex, DeclKind, FileId, Unit, UnitKind};

/// Library functions known not to write through their arguments.
const READ_ONLY_CALLS: &[&str] = &[
    "memcmp", "strcmp", "strncmp", "strcasecmp", "strncasecmp", "strlen", "strnlen", "strchr",
    "strrchr", "strstr", "memchr", "strspn", "strcspn", "printf", "puts", "putchar", "fprintf",
    "fputs", "fputc", "atoi", "atol", "atoll", "abs", "labs", "isdigit", "isalpha", "isalnum",
    "isspace", "isupper", "islower", "isxdigit", "isprint", "toupper", "tolower", "exit", "abort",
    "assert", "free", "malloc", "calloc",
];

/// A variable as written in the source: a resolved declaration or a free
/// identifier with no visible declaration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Name {
    Decl(usize),
    Free(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallSite {
    /// Callee identifier when the call is direct.
    pub callee: Option<String>,
    /// Variables read by each argument.
    pub args: Vec<BTreeSet<Name>>,
    /// Variables the callee may write through pointer-like arguments.
    pub pointer_args: Vec<Name>,
    /// The callee is defined in an indexed file.
    pub traced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteEffect {
    pub target: Name,
    pub deps: BTreeSet<Name>,
    /// Write through a pointer parameter: visible to the caller.
    pub through_param: bool,
    /// Index into [`UnitEffects::calls`] when the write is a call's side
    /// effect on a pointer argument.
    pub from_call: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnitEffects {
    /// Every variable read anywhere in the unit.
    pub reads: BTreeSet<Name>,
    pub writes: Vec<WriteEffect>,
    /// Calls in evaluation (post) order.
    pub calls: Vec<CallSite>,
    /// Set for `return`: variables the returned value depends on.
    pub returns: Option<BTreeSet<Name>>,
    /// Non-variable symbols used: macros, enumerators, typedefs.
    pub symbols: BTreeSet<usize>,
}

struct Analyzer<'a> {
    index: &'a AstIndex,
    file: FileId,
    out: UnitEffects,
}

/// Computes the effects of one statement unit.
pub fn unit_effects(index: &AstIndex, unit: &Unit) -> UnitEffects {
    let Some(node) = index.node(&unit.node) else {
        return UnitEffects::default();
    };
    let mut a = Analyzer {
        index,
        file: unit.key.file,
        out: UnitEffects::default(),
    };
    match unit.kind {
        UnitKind::Guard(_) => {
            if let Some(c) = node.child_by_field_name("condition") {
                let reads = a.visit(inner_expression(c));
                a.out.reads.extend(reads);
            }
        }
        UnitKind::Expr | UnitKind::ForUpdate => {
            let reads = a.visit(node);
            a.out.reads.extend(reads);
        }
        UnitKind::Decl | UnitKind::ForInit => {
            if node.kind() == "declaration" {
                a.declaration(node);
            } else {
                let reads = a.visit(node);
                a.out.reads.extend(reads);
            }
        }
        UnitKind::Return => {
            let mut deps = BTreeSet::new();
            if let Some(e) = node.named_child(0) {
                deps = a.visit(e);
            }
            a.out.reads.extend(deps.iter().cloned());
            a.out.returns = Some(deps);
        }
        UnitKind::Jump | UnitKind::CaseLabel => {}
    }
    a.out
}

/// Variables read by the expression in `node`.
pub fn expression_reads(index: &AstIndex, file: FileId, node: Node<'_>) -> BTreeSet<Name> {
    let mut a = Analyzer {
        index,
        file,
        out: UnitEffects::default(),
    };
    a.visit(node)
}

impl<'a> Analyzer<'a> {
    fn name(&mut self, n: Node<'_>) -> Option<Name> {
        let text = n.utf8_text(&self.index.file(self.file).bytes).ok()?;
        let at = self.index.range_of(self.file, n);
        match self.index.resolve_id(text, &at) {
            Some(id) => match self.index.declarations[id].kind {
                DeclKind::Variable | DeclKind::Parameter => Some(Name::Decl(id)),
                _ => {
                    self.out.symbols.insert(id);
                    None
                }
            },
            None if self.index.functions.contains_key(text) => None,
            None => Some(Name::Free(text.to_string())),
        }
    }

    fn declaration(&mut self, node: Node<'_>) {
        let mut cursor = node.walk();
        let decls: Vec<Node<'_>> = node
            .children_by_field_name("declarator", &mut cursor)
            .collect();
        self.type_symbols(node);
        for d in decls {
            if d.kind() != "init_declarator" {
                continue;
            }
            let Some(value) = d.child_by_field_name("value") else {
                continue;
            };
            let deps = self.visit(value);
            self.out.reads.extend(deps.iter().cloned());
            let target = d
                .child_by_field_name("declarator")
                .and_then(crate::ast_index::declarator_name)
                .and_then(|n| self.name(n));
            if let Some(target) = target {
                self.out.writes.push(WriteEffect {
                    target,
                    deps,
                    through_param: false,
                    from_call: None,
                });
            }
        }
    }

    fn type_symbols(&mut self, node: Node<'_>) {
        if let Some(t) = node.child_by_field_name("type") {
            if t.kind() == "type_identifier" {
                self.name(t);
            }
        }
    }

    /// Visits an expression, recording writes and calls, and returns the
    /// variables its value depends on.
    fn visit(&mut self, n: Node<'_>) -> BTreeSet<Name> {
        let mut reads = BTreeSet::new();
        match n.kind() {
            "identifier" => {
                if let Some(name) = self.name(n) {
                    reads.insert(name);
                }
            }
            "sizeof_expression" | "alignof_expression" | "offsetof_expression" => {
                if let Some(t) = n.child_by_field_name("type") {
                    self.type_descriptor(t);
                }
            }
            "string_literal" | "char_literal" | "number_literal" | "true" | "false" | "null"
            | "concatenated_string" | "field_identifier" | "primitive_type" => {}
            "type_descriptor" => self.type_descriptor(n),
            "field_expression" => {
                if let Some(arg) = n.child_by_field_name("argument") {
                    reads = self.visit(arg);
                }
            }
            "cast_expression" => {
                if let Some(t) = n.child_by_field_name("type") {
                    self.type_descriptor(t);
                }
                if let Some(v) = n.child_by_field_name("value") {
                    reads = self.visit(v);
                }
            }
            "assignment_expression" => {
                let rhs = n
                    .child_by_field_name("right")
                    .map(|r| self.visit(r))
                    .unwrap_or_default();
                let op = n
                    .child_by_field_name("operator")
                    .and_then(|o| o.utf8_text(&self.index.file(self.file).bytes).ok())
                    .unwrap_or("=")
                    .to_string();
                let mut deps = rhs;
                if let Some(l) = n.child_by_field_name("left") {
                    let lv = self.lvalue(l);
                    deps.extend(lv.reads.iter().cloned());
                    if let Some(base) = lv.base {
                        if op != "=" || lv.indirect {
                            deps.insert(base.clone());
                        }
                        self.write(base.clone(), deps.clone(), lv.indirect, None);
                        reads.insert(base);
                    }
                }
                reads.extend(deps);
            }
            "update_expression" => {
                if let Some(arg) = n.child_by_field_name("argument") {
                    let lv = self.lvalue(arg);
                    let mut deps = lv.reads.clone();
                    if let Some(base) = lv.base {
                        deps.insert(base.clone());
                        self.write(base, deps.clone(), lv.indirect, None);
                    }
                    reads.extend(deps);
                }
            }
            "call_expression" => reads = self.call(n),
            _ => {
                let mut cursor = n.walk();
                let children: Vec<Node<'_>> = n.named_children(&mut cursor).collect();
                for c in children {
                    if c.kind() == "comment" {
                        continue;
                    }
                    reads.extend(self.visit(c));
                }
            }
        }
        reads
    }

    fn type_descriptor(&mut self, t: Node<'_>) {
        if let Some(ty) = t.child_by_field_name("type") {
            if ty.kind() == "type_identifier" {
                self.name(ty);
            }
        }
    }

    fn write(&mut self, target: Name, deps: BTreeSet<Name>, indirect: bool, from_call: Option<usize>) {
        let through_param = indirect
            && matches!(&target, Name::Decl(id)
                if self.index.declarations[*id].kind == DeclKind::Parameter
                    && self.index.declarations[*id].pointer_like);
        self.out.writes.push(WriteEffect {
            target,
            deps,
            through_param,
            from_call,
        });
    }

    fn call(&mut self, n: Node<'_>) -> BTreeSet<Name> {
        let mut reads = BTreeSet::new();
        let func = n.child_by_field_name("function");
        let callee = func
            .filter(|f| f.kind() == "identifier")
            .and_then(|f| f.utf8_text(&self.index.file(self.file).bytes).ok())
            .map(str::to_string);
        if let Some(f) = func {
            // A call through a variable reads that variable; an unresolved
            // plain name is an external function.
            let r = self.visit(f);
            if f.kind() == "identifier" {
                reads.extend(r.into_iter().filter(|n| matches!(n, Name::Decl(_))));
            } else {
                reads.extend(r);
            }
        }
        let mut site = CallSite {
            traced: callee
                .as_ref()
                .map(|c| self.index.functions.contains_key(c))
                .unwrap_or(false),
            callee,
            ..CallSite::default()
        };
        if let Some(args) = n.child_by_field_name("arguments") {
            let mut cursor = args.walk();
            let list: Vec<Node<'_>> = args
                .named_children(&mut cursor)
                .filter(|c| c.kind() != "comment")
                .collect();
            for arg in list {
                let r = self.visit(arg);
                reads.extend(r.iter().cloned());
                site.args.push(r);
                if let Some(p) = self.pointer_base(arg) {
                    site.pointer_args.push(p);
                }
            }
        }
        let read_only = site
            .callee
            .as_deref()
            .map(|c| !site.traced && READ_ONLY_CALLS.contains(&c))
            .unwrap_or(false);
        let idx = self.out.calls.len();
        if !read_only {
            for p in site.pointer_args.clone() {
                let mut deps = reads.clone();
                deps.insert(p.clone());
                self.write(p, deps, true, Some(idx));
            }
        }
        self.out.calls.push(site);
        reads
    }

    /// The variable whose storage an argument points into, if any.
    fn pointer_base(&mut self, n: Node<'_>) -> Option<Name> {
        match n.kind() {
            "pointer_expression" => {
                let op = n.child_by_field_name("operator")?;
                if op.kind() == "&" {
                    let arg = n.child_by_field_name("argument")?;
                    self.lvalue(arg).base
                } else {
                    None
                }
            }
            "identifier" => {
                let name = self.name(n)?;
                match &name {
                    Name::Decl(id) if self.index.declarations[*id].pointer_like => Some(name),
                    Name::Decl(_) => None,
                    Name::Free(_) => None,
                }
            }
            "binary_expression" => {
                let l = n.child_by_field_name("left")?;
                let r = n.child_by_field_name("right")?;
                self.pointer_base(l).or_else(|| self.pointer_base(r))
            }
            "parenthesized_expression" => self.pointer_base(n.named_child(0)?),
            "cast_expression" => self.pointer_base(n.child_by_field_name("value")?),
            "field_expression" => {
                let arg = n.child_by_field_name("argument")?;
                self.lvalue(arg).base
            }
            "subscript_expression" => None,
            _ => None,
        }
    }

    fn lvalue(&mut self, n: Node<'_>) -> Lvalue {
        match n.kind() {
            "identifier" => Lvalue {
                base: self.name(n),
                reads: BTreeSet::new(),
                indirect: false,
            },
            "parenthesized_expression" => match n.named_child(0) {
                Some(c) => self.lvalue(c),
                None => Lvalue::default(),
            },
            "cast_expression" => match n.child_by_field_name("value") {
                Some(v) => self.lvalue(v),
                None => Lvalue::default(),
            },
            "subscript_expression" => {
                let mut lv = n
                    .child_by_field_name("argument")
                    .map(|a| self.lvalue(a))
                    .unwrap_or_default();
                if let Some(i) = n.child_by_field_name("index") {
                    lv.reads.extend(self.visit(i));
                }
                lv.indirect = true;
                lv
            }
            "field_expression" | "pointer_expression" => {
                let mut lv = n
                    .child_by_field_name("argument")
                    .map(|a| self.lvalue(a))
                    .unwrap_or_default();
                lv.indirect = true;
                lv
            }
            _ => {
                // `*(p + i)` and friends: the pointer operand is the base.
                let base = self.pointer_base(n);
                let reads = self.visit(n);
                Lvalue {
                    base,
                    reads,
                    indirect: true,
                }
            }
        }
    }
}

#[derive(Debug, Default)]
struct Lvalue {
    base: Option<Name>,
    reads: BTreeSet<Name>,
    indirect: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast_index::AstIndex;

    fn idx(src: &str) -> AstIndex {
        AstIndex::from_sources(vec![("t.c".into(), src.as_bytes().to_vec())]).unwrap()
    }

    fn names(index: &AstIndex, set: &BTreeSet<Name>) -> Vec<String> {
        set.iter()
            .map(|n| match n {
                Name::Decl(i) => index.declarations[*i].name.clone(),
                Name::Free(s) => s.clone(),
            })
            .collect()
    }

    fn line_effects(index: &AstIndex, line: u32) -> UnitEffects {
        let u = &index.statements[&(FileId(0), line)][0];
        unit_effects(index, u)
    }

    #[test]
    fn assignment_through_subscript_is_weak() {
        let src = "void f(int i, int v) {\n  int a[4];\n  a[i] = v;\n}\n";
        let index = idx(src);
        let e = line_effects(&index, 3);
        assert_eq!(e.writes.len(), 1);
        assert_eq!(names(&index, &e.writes[0].deps), vec!["i", "v", "a"]);
    }

    #[test]
    fn library_call_writes_pointer_args() {
        let src = "#include <stdio.h>\n#define S 16\nint main(void) {\n  char input[S];\n  FILE *f = stdin;\n  fread(input, sizeof(char), S, f);\n  return 0;\n}\n";
        let index = idx(src);
        let e = line_effects(&index, 6);
        let targets: BTreeSet<Name> = e.writes.iter().map(|w| w.target.clone()).collect();
        assert_eq!(names(&index, &targets), vec!["input", "f"]);
        assert!(e.symbols.iter().any(|&s| index.declarations[s].name == "S"));
    }

    #[test]
    fn read_only_calls_write_nothing() {
        let src = "#include <string.h>\nint f(const char *p) {\n  return memcmp(p, \"ab\", 2);\n}\n";
        let index = idx(src);
        let e = line_effects(&index, 3);
        assert!(e.writes.is_empty());
        assert_eq!(names(&index, e.returns.as_ref().unwrap()), vec!["p"]);
    }

    #[test]
    fn sizeof_and_functions_are_not_reads() {
        let src = "int g(int);\nint f(int x) {\n  int y = g(x) + sizeof x;\n  return y;\n}\n";
        let index = idx(src);
        let e = line_effects(&index, 3);
        assert_eq!(names(&index, &e.writes[0].deps), vec!["x"]);
    }

    #[test]
    fn pointer_param_write_is_visible_to_caller() {
        let src = "void f(int *out, int v) {\n  *out = v;\n}\n";
        let index = idx(src);
        let e = line_effects(&index, 2);
        assert!(e.writes[0].through_param);
    }
}

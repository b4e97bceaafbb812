//! Brute-force trace interpreter: which arm did each guard evaluation take?
//!
//! Arm bodies are recomputed from the syntax tree here rather than taken
//! from the index's arm table. The statement that runs next in the same
//! frame decides the arm; the instrumented arm mark is consulted only when
//! that is ambiguous (empty arm, guard as the last statement of a frame).

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use slicefuzz_core::ast_index::{AstIndex, CondId, StmtKey, UnitKind};
use slicefuzz_core::tracer::{ExecutionTrace, TraceEvent};
use tree_sitter::Node;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArmObservation {
    pub taken: BTreeSet<(CondId, u16)>,
    pub reached: BTreeSet<CondId>,
}

impl ArmObservation {
    pub fn merge(&mut self, other: ArmObservation) {
        self.taken.extend(other.taken);
        self.reached.extend(other.reached);
    }
}

/// Byte span of one arm's body; `None` for arms without text.
type Body = Option<(usize, usize)>;

struct Shape {
    stmt: (usize, usize),
    arms: Vec<Body>,
    /// Arm holds no traceable statement: no text, or only `{}`.
    empty: Vec<bool>,
}

fn span(n: Node<'_>) -> (usize, usize) {
    (n.start_byte(), n.end_byte())
}

fn shape_of(stmt: Node<'_>) -> Option<Shape> {
    let arms = match stmt.kind() {
        "if_statement" => {
            let then = stmt.child_by_field_name("consequence").map(span);
            let other = stmt
                .child_by_field_name("alternative")
                .map(|alt| alt.named_child(0).unwrap_or(alt))
                .map(span);
            vec![then, other]
        }
        "while_statement" | "for_statement" | "do_statement" => {
            vec![stmt.child_by_field_name("body").map(span), None]
        }
        "switch_statement" => {
            let mut arms = Vec::new();
            let mut has_default = false;
            if let Some(body) = stmt.child_by_field_name("body") {
                let mut cursor = body.walk();
                for c in body.named_children(&mut cursor) {
                    if c.kind() != "case_statement" {
                        continue;
                    }
                    if c.child_by_field_name("value").is_none() {
                        if has_default {
                            continue;
                        }
                        has_default = true;
                    }
                    arms.push(Some(span(c)));
                }
            }
            if !has_default {
                arms.push(None);
            }
            arms
        }
        _ => return None,
    };
    Some(Shape {
        stmt: span(stmt),
        empty: vec![true; arms.len()],
        arms,
    })
}

fn guard_of(index: &AstIndex, key: StmtKey) -> Option<(CondId, Shape)> {
    let unit = index.unit(key)?;
    let UnitKind::Guard(cond) = unit.kind else {
        return None;
    };
    let node = index.node(&unit.node)?;
    let mut shape = shape_of(node)?;
    for u in index.units().filter(|u| u.key.file == key.file) {
        let (s, e) = (u.range.start_byte as usize, u.range.end_byte as usize);
        for (i, b) in shape.arms.iter().enumerate() {
            if let Some((bs, be)) = b {
                if *bs <= s && e <= *be {
                    shape.empty[i] = false;
                }
            }
        }
    }
    Some((cond, shape))
}

fn decide(shape: &Shape, next: Option<(usize, usize)>) -> Option<u16> {
    let (s, e) = next?;
    let inside = shape
        .arms
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|b| (i, b)))
        .filter(|(_, (bs, be))| *bs <= s && e <= *be)
        .min_by_key(|(_, (bs, be))| be - bs);
    if let Some((i, _)) = inside {
        return Some(i as u16);
    }
    let outside = e <= shape.stmt.0 || s >= shape.stmt.1;
    let textless: Vec<usize> = (0..shape.arms.len()).filter(|i| shape.empty[*i]).collect();
    (outside && textless.len() == 1).then(|| textless[0] as u16)
}

/// Interprets one trace.
pub fn interpret_trace(index: &AstIndex, trace: &ExecutionTrace) -> ArmObservation {
    let events = &trace.events;
    let mut depth = vec![0i64; events.len()];
    let mut d = 0i64;
    for (i, e) in events.iter().enumerate() {
        match e {
            TraceEvent::Enter { .. } => d += 1,
            TraceEvent::Exit { .. } => d -= 1,
            _ => {}
        }
        depth[i] = d;
    }
    let mut shapes: HashMap<StmtKey, Option<(CondId, Rc<Shape>)>> = HashMap::new();
    let mut out = ArmObservation::default();
    for (i, e) in events.iter().enumerate() {
        let TraceEvent::Stmt(key) = e else { continue };
        let entry = shapes
            .entry(*key)
            .or_insert_with(|| guard_of(index, *key).map(|(c, s)| (c, Rc::new(s))));
        let Some((cond, shape)) = entry.clone() else {
            continue;
        };
        out.reached.insert(cond);
        let mut next = None;
        let mut mark = None;
        for j in i + 1..events.len() {
            if depth[j] < depth[i] {
                break;
            }
            if depth[j] > depth[i] {
                continue;
            }
            match events[j] {
                TraceEvent::Arm { guard, arm } if guard == *key && mark.is_none() => mark = Some(arm),
                TraceEvent::Stmt(k) => {
                    next = index.unit(k).map(|u| {
                        (u.range.start_byte as usize, u.range.end_byte as usize)
                    });
                    break;
                }
                _ => {}
            }
        }
        let arm = decide(&shape, next).or(mark.filter(|a| (*a as usize) < shape.arms.len()));
        if let Some(a) = arm {
            out.taken.insert((cond, a));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(src: &str) -> AstIndex {
        AstIndex::from_sources(vec![("t.c".into(), src.as_bytes().to_vec())]).unwrap()
    }

    fn stmt(index: &AstIndex, line: u32) -> TraceEvent {
        let u = index
            .units()
            .find(|u| u.key.line == line)
            .unwrap_or_else(|| panic!("no unit on line {line}"));
        TraceEvent::Stmt(u.key)
    }

    fn trace(events: Vec<TraceEvent>) -> ExecutionTrace {
        ExecutionTrace {
            seed_id: None,
            events,
            truncated_at: None,
            exit_status: slicefuzz_core::tracer::TraceExit::Normal,
        }
    }

    const SRC: &str = "int f(int x) {\n  if (x) {\n  }\n  switch (x) {\n  case 1:\n    x = 2;\n  }\n  return x;\n}\n";

    #[test]
    fn successor_decides_before_marks() {
        let ix = index(SRC);
        let sw = ix.find_conditional("t.c:4").unwrap().cond_id;
        // Next statement is `return`, past the switch: the missing default.
        let t = trace(vec![stmt(&ix, 4), stmt(&ix, 8)]);
        let obs = interpret_trace(&ix, &t);
        assert_eq!(obs.taken, BTreeSet::from([(sw, 1)]));
        // Into the case body.
        let t = trace(vec![stmt(&ix, 4), stmt(&ix, 6), stmt(&ix, 8)]);
        assert_eq!(interpret_trace(&ix, &t).taken, BTreeSet::from([(sw, 0)]));
    }

    #[test]
    fn empty_then_falls_back_to_mark() {
        let ix = index(SRC);
        let cond = ix.find_conditional("t.c:2").unwrap().cond_id;
        let g = stmt(&ix, 2);
        let TraceEvent::Stmt(key) = g else { unreachable!() };
        // `{}` and the missing else both hold no statement: only the mark
        // can tell them apart.
        for arm in [0, 1] {
            let t = trace(vec![g, TraceEvent::Arm { guard: key, arm }, stmt(&ix, 4)]);
            assert_eq!(interpret_trace(&ix, &t).taken, BTreeSet::from([(cond, arm)]));
        }
        let t = trace(vec![g, stmt(&ix, 4)]);
        let obs = interpret_trace(&ix, &t);
        assert!(obs.taken.iter().all(|(c, _)| *c != cond));
        assert!(obs.reached.contains(&cond));
    }
}

//! Corpus validation.
//!
//! A case is accepted when it builds, its seeds run cleanly, its goal starts
//! uncovered, every statement is within the reference slicer's language,
//! its criteria are reachable from their witnesses, and its solving chain
//! behaves as declared: solvable steps are solved, the others are not.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use slicefuzz_core::ast_index::{AstIndex, CondId};
use slicefuzz_core::slicer::build_slice;
use slicefuzz_core::solver::{
    build_prompt, decode_response, roadblock_key, ArmProbe, Backend, BruteforceBackend, Budget,
    ScriptedBackend, SolveRequest,
};
use slicefuzz_core::tracer::{TraceExit, TracedProgram};

use crate::case::{ArmSpec, BuiltCase, Class, GauntletCase, StepSolver, CASE_TIMEOUT};
use crate::ref_slice::{check_supported, reference_slice};
use crate::trace_oracle::{interpret_trace, ArmObservation};
use crate::{io_err, load_cases, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub arm: ArmSpec,
    pub solver: StepSolver,
    pub expected: bool,
    pub solved: bool,
    pub trials: u64,
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    pub class: Class,
    pub steps: Vec<StepOutcome>,
    pub problems: Vec<String>,
}

impl CaseReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub cases: Vec<CaseReport>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.cases.iter().all(CaseReport::ok)
    }

    pub fn rejected(&self) -> Vec<&CaseReport> {
        self.cases.iter().filter(|c| !c.ok()).collect()
    }
}

/// Probe backed by the trace oracle rather than the fuzzer's own coverage.
struct OracleProbe {
    program: TracedProgram,
    index: Arc<AstIndex>,
}

impl ArmProbe for OracleProbe {
    fn takes_arm(&mut self, input: &[u8], cond: CondId, arm: u16) -> slicefuzz_core::Result<bool> {
        let trace = self.program.run_traced(input, None, CASE_TIMEOUT)?;
        Ok(interpret_trace(&self.index, &trace).taken.contains(&(cond, arm)))
    }
}

fn observe(built: &BuiltCase, input: &[u8]) -> Result<ArmObservation> {
    Ok(interpret_trace(&built.index, &built.run(input)?))
}

/// Validates every case under `root`, building into `work`. `trials` caps
/// each brute-force search.
pub fn validate_corpus(root: &Path, work: &Path, trials: u64) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    for case in load_cases(root)? {
        let out = work.join(&case.name);
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        let r = match validate_case(&case, &out, trials) {
            Ok(r) => r,
            Err(e) => CaseReport {
                name: case.name.clone(),
                class: case.class,
                steps: Vec::new(),
                problems: vec![e.to_string()],
            },
        };
        report.cases.push(r);
    }
    Ok(report)
}

pub fn validate_case(case: &GauntletCase, out: &Path, trials: u64) -> Result<CaseReport> {
    let mut r = CaseReport {
        name: case.name.clone(),
        class: case.class,
        steps: Vec::new(),
        problems: Vec::new(),
    };
    let built = case.build(out)?;
    let index = built.index.clone();
    if let Err(e) = check_supported(&index) {
        r.problems.push(e.to_string());
    }
    let goal = case.goal.resolve(&index)?;

    let mut pool: Vec<(Vec<u8>, ArmObservation)> = Vec::new();
    for (name, bytes) in case.seed_bytes()? {
        let trace = built.run(&bytes)?;
        if trace.exit_status != TraceExit::Normal {
            r.problems
                .push(format!("seed {name} ends with {}", trace.exit_status.as_str()));
        }
        let obs = interpret_trace(&index, &trace);
        if obs.taken.contains(&(goal, case.goal.arm)) {
            r.problems.push(format!("seed {name} already covers the goal"));
        }
        pool.push((bytes, obs));
    }

    for c in &case.criteria {
        let cond = c.arm.resolve(&index)?;
        let witness = fs::read(&c.witness).map_err(io_err(&c.witness))?;
        let trace = built.run_until(&witness, cond)?;
        if trace.truncated_at != Some(cond) {
            r.problems.push(format!("criterion {} not reached by its witness", c.arm));
            continue;
        }
        if let Err(e) = reference_slice(&index, &trace, cond) {
            r.problems.push(format!("criterion {}: {e}", c.arm));
        }
    }

    let mut scripted = match &case.replay {
        Some(p) => Some(ScriptedBackend::load(p)?),
        None => None,
    };
    for step in &case.steps {
        let cond = step.arm.resolve(&index)?;
        let Some(witness) = pool
            .iter()
            .find(|(_, o)| o.reached.contains(&cond))
            .map(|(b, _)| b.clone())
        else {
            r.problems.push(format!("step {}: no input reaches it", step.arm));
            continue;
        };
        if pool.iter().any(|(_, o)| o.taken.contains(&(cond, step.arm.arm))) {
            r.problems.push(format!("step {}: already covered", step.arm));
        }
        let trace = built.run_until(&witness, cond)?;
        let slice = build_slice(&index, &trace, cond, step.arm.arm)?;
        let mut trials_used = 0;
        let answer = match step.solver {
            StepSolver::Bruteforce => {
                let probe = OracleProbe {
                    program: built.program.clone(),
                    index: index.clone(),
                };
                let mut bf = BruteforceBackend::new(Box::new(probe), trials);
                let found = bf.search(&slice.flattened, &witness, cond, step.arm.arm)?;
                trials_used = bf.last_trials;
                found
            }
            StepSolver::Scripted => {
                let Some(backend) = scripted.as_mut() else {
                    r.problems.push(format!("step {}: scripted without replay", step.arm));
                    continue;
                };
                let key = roadblock_key(&index, cond, step.arm.arm);
                let prompt = build_prompt(&slice.flattened, &witness, &key);
                let request = SolveRequest {
                    prompt: &prompt,
                    slice: &slice,
                    witness: &witness,
                    cond,
                    target_arm: step.arm.arm,
                };
                let raw = backend.query(&request, &mut Budget::new(1))?;
                decode_response(&raw)
            }
        };
        let mut solved = false;
        if let Some(input) = answer {
            let obs = observe(&built, &input)?;
            solved = obs.taken.contains(&(cond, step.arm.arm));
            if solved {
                pool.push((input, obs));
            }
        }
        if solved != step.solvable {
            r.problems.push(format!(
                "step {}: expected {}, got {}",
                step.arm,
                if step.solvable { "solved" } else { "unsolved" },
                if solved { "solved" } else { "unsolved" },
            ));
        }
        r.steps.push(StepOutcome {
            arm: step.arm.clone(),
            solver: step.solver,
            expected: step.solvable,
            solved,
            trials: trials_used,
        });
    }

    let chain_complete = !case.steps.is_empty() && case.steps.iter().all(|s| s.solvable);
    let goal_reached = pool.iter().any(|(_, o)| o.taken.contains(&(goal, case.goal.arm)));
    if chain_complete && !goal_reached {
        r.problems.push("solving chain does not reach the goal".into());
    }
    Ok(r)
}

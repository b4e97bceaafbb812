//! Loading and building gauntlet cases.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use slicefuzz_core::ast_index::{build_ast_index, AstIndex, CondId};
use slicefuzz_core::tracer::{instrument, BuildOptions, ExecutionTrace, TracedProgram};

use crate::{io_err, GauntletError, Result};

/// Per-run timeout used by every gauntlet execution.
pub const CASE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Class {
    MagicBytes,
    Arithmetic,
    MultiPart,
    SurrogatePair,
    HashGated,
}

impl Class {
    pub const ALL: [Class; 5] = [
        Class::MagicBytes,
        Class::Arithmetic,
        Class::MultiPart,
        Class::SurrogatePair,
        Class::HashGated,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Class::MagicBytes => "magic-bytes",
            Class::Arithmetic => "arithmetic",
            Class::MultiPart => "multi-part",
            Class::SurrogatePair => "surrogate-pair",
            Class::HashGated => "hash-gated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSolver {
    Bruteforce,
    Scripted,
}

/// One arm named as `file.c:LINE#ARM`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArmSpec {
    /// `file.c:LINE`
    pub cond: String,
    pub arm: u16,
}

impl ArmSpec {
    pub fn new(cond: impl Into<String>, arm: u16) -> Self {
        ArmSpec {
            cond: cond.into(),
            arm,
        }
    }

    pub fn resolve(&self, index: &AstIndex) -> Result<CondId> {
        index
            .find_conditional(&self.cond)
            .map(|c| c.cond_id)
            .ok_or_else(|| GauntletError::Oracle(format!("no conditional at {}", self.cond)))
    }
}

impl fmt::Display for ArmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.cond, self.arm)
    }
}

impl FromStr for ArmSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (cond, arm) = s.rsplit_once('#').ok_or_else(|| format!("{s}: expected file:line#arm"))?;
        let arm = arm.parse().map_err(|_| format!("{s}: bad arm number"))?;
        Ok(ArmSpec::new(cond, arm))
    }
}

/// A link in the chain that leads from the seeds to the goal: solving each
/// step from a witness found so far yields the witness for the next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub arm: ArmSpec,
    pub solver: StepSolver,
    /// False for steps the brute-force search is expected to fail.
    pub solvable: bool,
}

/// A slicing criterion with the input that reaches it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Criterion {
    pub arm: ArmSpec,
    pub witness: PathBuf,
}

#[derive(Debug, Clone)]
pub struct GauntletCase {
    pub name: String,
    pub dir: PathBuf,
    pub class: Class,
    pub sources: Vec<PathBuf>,
    pub args: Vec<String>,
    pub seeds: Vec<PathBuf>,
    pub campaign_solver: StepSolver,
    pub replay: Option<PathBuf>,
    pub goal: ArmSpec,
    pub steps: Vec<Step>,
    pub criteria: Vec<Criterion>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    name: String,
    class: Class,
    sources: Vec<PathBuf>,
    #[serde(default)]
    args: Vec<String>,
    campaign_solver: StepSolver,
    replay: Option<PathBuf>,
    goal: String,
    #[serde(default, rename = "step")]
    steps: Vec<StepEntry>,
    #[serde(default, rename = "criterion")]
    criteria: Vec<CriterionEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepEntry {
    cond: String,
    arm: u16,
    solver: StepSolver,
    #[serde(default = "yes")]
    solvable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CriterionEntry {
    cond: String,
    arm: u16,
    witness: PathBuf,
}

/// `gauntlet/` at the workspace root.
pub fn gauntlet_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../gauntlet")
}

/// Loads every case under `root`, sorted by name.
pub fn load_cases(root: &Path) -> Result<Vec<GauntletCase>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("case.toml").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| GauntletCase::load(d)).collect()
}

impl GauntletCase {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("case.toml");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let bad = |message: String| GauntletError::CaseFile {
            path: path.clone(),
            message,
        };
        let file: CaseFile = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let seeds_dir = dir.join("seeds");
        let mut seeds: Vec<PathBuf> = fs::read_dir(&seeds_dir)
            .map_err(io_err(&seeds_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        seeds.sort();
        if seeds.is_empty() {
            return Err(bad("no seeds".into()));
        }
        if file.campaign_solver == StepSolver::Scripted && file.replay.is_none() {
            return Err(bad("scripted case without a replay file".into()));
        }
        Ok(GauntletCase {
            name: file.name,
            class: file.class,
            sources: file.sources.iter().map(|s| dir.join(s)).collect(),
            args: file.args,
            seeds,
            campaign_solver: file.campaign_solver,
            replay: file.replay.map(|r| dir.join(r)),
            goal: file.goal.parse().map_err(bad)?,
            steps: file
                .steps
                .into_iter()
                .map(|s| Step {
                    arm: ArmSpec::new(s.cond, s.arm),
                    solver: s.solver,
                    solvable: s.solvable,
                })
                .collect(),
            criteria: file
                .criteria
                .into_iter()
                .map(|c| Criterion {
                    arm: ArmSpec::new(c.cond, c.arm),
                    witness: dir.join(c.witness),
                })
                .collect(),
            dir: dir.to_path_buf(),
        })
    }

    pub fn index(&self) -> Result<AstIndex> {
        Ok(build_ast_index(&self.sources)?)
    }

    /// Indexes and instruments the case into `out`.
    pub fn build(&self, out: &Path) -> Result<BuiltCase> {
        let index = self.index()?;
        let mut program = instrument(&index, &BuildOptions::new(out))?;
        program.args = self.args.clone();
        Ok(BuiltCase {
            index: Arc::new(index),
            program,
        })
    }

    pub fn expect_dir(&self) -> PathBuf {
        self.dir.join("expect")
    }

    pub fn arms_expect_path(&self) -> PathBuf {
        self.expect_dir().join("arms.json")
    }

    /// `expect/slice.<file>_<line>.txt` for a criterion on `file:line`.
    pub fn slice_expect_path(&self, arm: &ArmSpec) -> PathBuf {
        let stem = arm.cond.replace(':', "_");
        self.expect_dir().join(format!("slice.{stem}.txt"))
    }

    pub fn seed_bytes(&self) -> Result<Vec<(String, Vec<u8>)>> {
        self.seeds
            .iter()
            .map(|p| {
                let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
                fs::read(p).map(|b| (name, b)).map_err(io_err(p))
            })
            .collect()
    }
}

pub struct BuiltCase {
    pub index: Arc<AstIndex>,
    pub program: TracedProgram,
}

impl BuiltCase {
    pub fn run(&self, input: &[u8]) -> Result<ExecutionTrace> {
        Ok(self.program.run_traced(input, None, CASE_TIMEOUT)?)
    }

    pub fn run_until(&self, input: &[u8], cond: CondId) -> Result<ExecutionTrace> {
        Ok(self.program.run_traced(input, Some(cond), CASE_TIMEOUT)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn arm_spec_parse_inverts_display(file in "[a-z_]{1,12}\\.c", line in 1u32..100_000, arm in 0u16..64) {
            let spec = ArmSpec::new(format!("{file}:{line}"), arm);
            prop_assert_eq!(spec.to_string().parse::<ArmSpec>(), Ok(spec));
        }
    }

    #[test]
    fn arm_spec_round_trips() {
        let a: ArmSpec = "cjson_mini.c:42#0".parse().unwrap();
        assert_eq!(a, ArmSpec::new("cjson_mini.c:42", 0));
        assert_eq!(a.to_string(), "cjson_mini.c:42#0");
        assert!("cjson_mini.c:42".parse::<ArmSpec>().is_err());
    }

    #[test]
    fn expectation_file_names_avoid_colons() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        fs::create_dir_all(d.join("seeds")).unwrap();
        fs::write(d.join("seeds/a"), "x").unwrap();
        fs::write(
            d.join("case.toml"),
            "name = \"t\"\nclass = \"arithmetic\"\nsources = [\"t.c\"]\n\
             campaign_solver = \"bruteforce\"\ngoal = \"t.c:3#1\"\n",
        )
        .unwrap();
        let c = GauntletCase::load(d).unwrap();
        assert_eq!(c.goal, ArmSpec::new("t.c:3", 1));
        assert!(c
            .slice_expect_path(&c.goal)
            .ends_with("expect/slice.t.c_3.txt"));
    }

    #[test]
    fn scripted_case_needs_replay() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        fs::create_dir_all(d.join("seeds")).unwrap();
        fs::write(d.join("seeds/a"), "x").unwrap();
        fs::write(
            d.join("case.toml"),
            "name = \"t\"\nclass = \"arithmetic\"\nsources = [\"t.c\"]\n\
             campaign_solver = \"scripted\"\ngoal = \"t.c:3#1\"\n",
        )
        .unwrap();
        assert!(matches!(
            GauntletCase::load(d),
            Err(GauntletError::CaseFile { .. })
        ));
    }
}

//! Campaign configuration file.
//!
//! ```toml
//! [subject]
//! sources = ["src/main.c", "src/util.c"]
//! cc = "cc"
//! cflags = ["-O1", "-w"]
//! args = ["@@"]            # empty: input on stdin
//!
//! [campaign]
//! seeds = "seeds"
//! out = "out"
//! plateau_secs = 90
//! trace_cap = 1000000
//! timeout_ms = 1000
//! rng_seed = 0
//! wall_secs = 600
//! mode = "parallel"        # or "deterministic"
//!
//! [solver]
//! backend = "remote"       # remote | scripted | bruteforce | none
//! model = "gpt-4o"
//! max_tokens = 4096
//! temperature = 0.5
//! query_budget = 3000
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::solver::{BackendKind, SolverConfig};
use crate::tracer::DEFAULT_TRACE_CAP;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectConfig {
    pub sources: Vec<PathBuf>,
    #[serde(default = "default_cc")]
    pub cc: String,
    #[serde(default = "default_cflags")]
    pub cflags: Vec<String>,
    #[serde(default)]
    pub args: Vec<String>,
}

fn default_cc() -> String {
    "cc".into()
}

fn default_cflags() -> Vec<String> {
    vec!["-O1".into(), "-w".into()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fuzzer on its own thread, wall-clock plateau detection.
    Parallel,
    /// One thread, logical clock; reproducible under a fixed seed.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub seeds: PathBuf,
    pub out: PathBuf,
    pub plateau_secs: f64,
    pub trace_cap: u64,
    pub timeout_ms: u64,
    pub rng_seed: u64,
    pub wall_secs: f64,
    pub mode: Mode,
    /// Stop after this many subject executions by the fuzzer.
    pub max_execs: Option<u64>,
    /// Stop after this many roadblock attempts.
    pub max_roadblocks: Option<u64>,
    /// Stop once these arms (`file:line#arm`) are all covered.
    pub stop_on_arms: Vec<String>,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            seeds: "seeds".into(),
            out: "out".into(),
            plateau_secs: 90.0,
            trace_cap: DEFAULT_TRACE_CAP,
            timeout_ms: 1000,
            rng_seed: 0,
            wall_secs: 600.0,
            mode: Mode::Parallel,
            max_execs: None,
            max_roadblocks: None,
            stop_on_arms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub subject: SubjectConfig,
    #[serde(default)]
    pub campaign: CampaignSection,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl CampaignConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut c: CampaignConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.resolve_paths(base);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let c = Self::from_toml(&text, base)?;
        c.validate()?;
        Ok(c)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.subject.sources.iter_mut().for_each(fix);
        fix(&mut self.campaign.seeds);
        fix(&mut self.campaign.out);
        if let Some(r) = self.solver.replay.as_mut() {
            fix(r);
        }
    }

    /// Checks that referenced paths exist and values are in range.
    pub fn validate(&self) -> Result<()> {
        if self.subject.sources.is_empty() {
            return Err(Error::Config("subject.sources is empty".into()));
        }
        for s in &self.subject.sources {
            if !s.is_file() {
                return Err(Error::Config(format!("source {} not found", s.display())));
            }
        }
        if !self.campaign.seeds.is_dir() {
            return Err(Error::Config(format!(
                "seed directory {} not found",
                self.campaign.seeds.display()
            )));
        }
        if !(self.campaign.plateau_secs >= 0.0) || !(self.campaign.wall_secs > 0.0) {
            return Err(Error::Config("plateau_secs and wall_secs must be positive".into()));
        }
        if self.campaign.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be positive".into()));
        }
        if self.solver.backend == BackendKind::Scripted {
            match &self.solver.replay {
                Some(r) if r.is_file() => {}
                Some(r) => {
                    return Err(Error::Config(format!("replay file {} not found", r.display())))
                }
                None => return Err(Error::Config("scripted backend needs solver.replay".into())),
            }
        }
        Ok(())
    }

    pub fn plateau(&self) -> Duration {
        Duration::from_secs_f64(self.campaign.plateau_secs)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.campaign.timeout_ms)
    }

    pub fn wall(&self) -> Duration {
        Duration::from_secs_f64(self.campaign.wall_secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = CampaignConfig::from_toml("[subject]\nsources = [\"a.c\"]\n", Path::new("/w")).unwrap();
        assert_eq!(c.subject.sources, vec![PathBuf::from("/w/a.c")]);
        assert_eq!(c.campaign.plateau_secs, 90.0);
        assert_eq!(c.campaign.seeds, PathBuf::from("/w/seeds"));
        assert_eq!(c.solver.max_tokens, 4096);
        assert_eq!(c.solver.temperature, 0.5);
        assert_eq!(c.solver.query_budget, 3000);
        assert_eq!(c.campaign.wall_secs, 600.0);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = CampaignConfig::from_toml(
            "[subject]\nsources = [\"a.c\"]\n[campaign]\nplateau = 3\n",
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn missing_paths_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.c"), "int main(void){return 0;}\n").unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "[subject]\nsources = [\"a.c\"]\n").unwrap();
        assert!(matches!(CampaignConfig::load(&cfg), Err(Error::Config(_))));
        std::fs::create_dir(dir.path().join("seeds")).unwrap();
        assert!(CampaignConfig::load(&cfg).is_ok());
    }
}

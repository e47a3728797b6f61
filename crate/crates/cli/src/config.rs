use std::fs;
use std::path::{Path, PathBuf};

use flexneeds::fna::{Penalties, SolveOptions};
use flexneeds::grid::{load_network, ForecastErrors, ProfileSet};
use flexneeds::scenario::ScenarioConfig;
use flexneeds::studies::{ALPHA_E_CAP, ALPHA_P_CAP};
use flexneeds::Network;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub network: PathBuf,
    pub profiles: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub count: usize,
    pub seed: u64,
    pub fe_load: f64,
    pub fe_pv: f64,
    pub rho: f64,
    pub jitter: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let d = ScenarioConfig::default();
        Self {
            count: d.count,
            seed: d.seed,
            fe_load: d.forecast.load,
            fe_pv: d.forecast.pv,
            rho: d.rho,
            jitter: d.jitter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoningSection {
    pub k_min: usize,
    /// Defaults to the smaller of 15 and the node count.
    pub k_max: Option<usize>,
}

impl Default for ZoningSection {
    fn default() -> Self {
        Self { k_min: 2, k_max: None }
    }
}

impl ZoningSection {
    pub fn range(&self, nodes: usize) -> std::ops::RangeInclusive<usize> {
        self.k_min..=self.k_max.unwrap_or(15.min(nodes))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub ramp_down_penalty: f64,
    pub ramp_up_penalty: f64,
    pub margin_step: f64,
    pub max_rounds: usize,
    pub max_iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self {
            ramp_down_penalty: 1.0,
            ramp_up_penalty: 1.0,
            margin_step: o.margin_step,
            max_rounds: o.max_rounds,
            max_iterations: o.max_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// Level used by `assess`.
    pub eps: f64,
    pub eps_list: Vec<f64>,
    pub cc_scenarios: usize,
    pub tightening_scenarios: usize,
    pub alpha_p: Vec<f64>,
    pub alpha_e: Vec<f64>,
}

fn tenths(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / 10.0).collect()
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            eps: 0.05,
            eps_list: vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.4],
            cc_scenarios: 1000,
            tightening_scenarios: 100,
            alpha_p: tenths(6),
            alpha_e: tenths(8),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub scenarios: ScenarioSection,
    #[serde(default)]
    pub zoning: ZoningSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn fail<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Validated configuration together with the parsed inputs.
pub struct Loaded {
    pub config: RunConfig,
    pub network: Network,
    pub profiles: ProfileSet,
    pub network_bytes: Vec<u8>,
    pub profiles_bytes: Vec<u8>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    /// Reads the config and makes relative paths relative to its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.network, &mut cfg.paths.profiles, &mut cfg.paths.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn scenario_config(&self, count: usize) -> ScenarioConfig {
        let s = &self.scenarios;
        ScenarioConfig {
            count,
            seed: s.seed,
            forecast: ForecastErrors { load: s.fe_load, pv: s.fe_pv },
            rho: s.rho,
            jitter: s.jitter,
        }
    }

    pub fn penalties(&self) -> Penalties {
        Penalties {
            ramp_down: self.solver.ramp_down_penalty,
            ramp_up: self.solver.ramp_up_penalty,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            margin_step: self.solver.margin_step,
            max_rounds: self.solver.max_rounds,
            max_iterations: self.solver.max_iterations,
        }
    }

    fn check_numbers(&self) -> Result<(), ConfigError> {
        let s = &self.scenarios;
        for (name, count) in [
            ("scenarios.count", s.count),
            ("study.cc_scenarios", self.study.cc_scenarios),
            ("study.tightening_scenarios", self.study.tightening_scenarios),
        ] {
            if count == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if !(s.fe_load >= 0.0 && s.fe_pv >= 0.0 && s.fe_load.is_finite() && s.fe_pv.is_finite()) {
            return fail("forecast errors must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&s.rho) {
            return fail("scenarios.rho must lie in [0, 1]");
        }
        if !(s.jitter >= 0.0 && s.jitter.is_finite()) {
            return fail("scenarios.jitter must be finite and non-negative");
        }
        if self.penalties().validate().is_err() {
            return fail("penalties must be positive and finite");
        }
        if !(self.solver.margin_step > 0.0 && self.solver.margin_step.is_finite()) || self.solver.max_iterations == 0 {
            return fail("solver.margin_step and solver.max_iterations must be positive");
        }
        let st = &self.study;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(st.eps) {
            return fail("study.eps must lie in [0, 1]");
        }
        if st.eps_list.is_empty() || !st.eps_list.iter().all(|&e| unit(e)) {
            return fail("study.eps_list must be non-empty within [0, 1]");
        }
        for (name, grid, cap) in [("study.alpha_p", &st.alpha_p, ALPHA_P_CAP), ("study.alpha_e", &st.alpha_e, ALPHA_E_CAP)] {
            if grid.is_empty() || !grid.iter().all(|a| (0.0..=cap).contains(a)) {
                return fail(format!("{name} must be non-empty within [0, {cap}]"));
            }
        }
        Ok(())
    }

    /// Checks every parameter and reads the input files; nothing is written.
    pub fn load(self) -> Result<Loaded, ConfigError> {
        self.check_numbers()?;
        let read = |p: &Path| fs::read(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())));
        let network_bytes = read(&self.paths.network)?;
        let profiles_bytes = read(&self.paths.profiles)?;
        let text = |b: &[u8], p: &Path| String::from_utf8(b.to_vec()).map_err(|_| ConfigError(format!("{} is not UTF-8", p.display())));
        let network = load_network(&text(&network_bytes, &self.paths.network)?)
            .map_err(|e| ConfigError(format!("{}: {e}", self.paths.network.display())))?;
        let profiles = ProfileSet::from_csv(&text(&profiles_bytes, &self.paths.profiles)?)
            .map_err(|e| ConfigError(format!("{}: {e}", self.paths.profiles.display())))?;
        network
            .nodal_load(&profiles)
            .map_err(|e| ConfigError(format!("profiles do not match the network: {e}")))?;
        let (lo, hi) = self.zoning.range(network.node_count()).into_inner();
        if lo < 2 || lo > hi || hi > network.node_count() {
            return fail(format!("zoning k range must satisfy 2 <= k_min <= k_max <= {}", network.node_count()));
        }
        Ok(Loaded {
            config: self,
            network,
            profiles,
            network_bytes,
            profiles_bytes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse("[paths]\nnetwork = \"n.json\"\nprofiles = \"p.csv\"\n").unwrap();
        assert_eq!(c.scenarios.count, 1000);
        assert_eq!(c.study.alpha_p.len(), 7);
        assert_eq!(c.study.alpha_e.len(), 9);
        assert_eq!(c.paths.output, PathBuf::from("out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[paths]\nnetwork = \"n\"\nprofiles = \"p\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn out_of_cap_grid_is_rejected() {
        let mut c = RunConfig::parse("[paths]\nnetwork = \"n\"\nprofiles = \"p\"\n").unwrap();
        c.study.alpha_p.push(0.7);
        assert!(c.check_numbers().is_err());
    }

    #[test]
    fn zero_scenarios_are_rejected() {
        let mut c = RunConfig::parse("[paths]\nnetwork = \"n\"\nprofiles = \"p\"\n").unwrap();
        c.scenarios.count = 0;
        assert!(c.check_numbers().is_err());
    }
}

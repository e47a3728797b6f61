use std::fs;
use std::path::{Path, PathBuf};

use flexneeds::fna::{batch_solve, BatchManifest, FlexBounds};
use flexneeds::io::atomic_write;
use flexneeds::needs::{normal_fit_report, robust_needs, variance_report, Granularity, NeedsSummary, NormalFitReport, VarianceReport};
use flexneeds::powerflow::{reduction_percent, CongestionStats};
use flexneeds::scenario::{generate_scenarios, ScenarioSet};
use flexneeds::studies::{cc_sweep, pareto_knee, tightening_sweep, CcSweep};
use flexneeds::zoning::{read_partition, select_zones, PartitionDocument, ZonePartition};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Loaded;

const MARKER: &str = "stage.json";

#[derive(Debug)]
pub enum Failure {
    Numerical(flexneeds::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Numerical(e) => write!(f, "numerical failure: {e}"),
            Failure::Io(e) => write!(f, "i/o failure: {e}"),
        }
    }
}

impl From<flexneeds::Error> for Failure {
    fn from(e: flexneeds::Error) -> Self {
        match e {
            flexneeds::Error::Io(io) => Failure::Io(io),
            other => Failure::Numerical(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Numerical(e.into())
    }
}

pub type Outcome<T> = Result<T, Failure>;

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Whether a stage was recomputed or served from its directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cache {
    Hit,
    Miss,
}

pub struct Pipeline {
    pub loaded: Loaded,
    network_hash: String,
    profiles_hash: String,
}

#[derive(Serialize)]
struct ScenarioKey<'a> {
    network: &'a str,
    profiles: &'a str,
    scenarios: flexneeds::ScenarioConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssessSummary {
    pub scenarios: usize,
    pub eps: f64,
    pub feasible_fraction: f64,
    pub flagged: Vec<usize>,
    pub zones: usize,
    pub nodal: NeedsSummary,
    pub zonal: NeedsSummary,
    pub variance: VarianceReport,
    pub normal_fit: NormalFitReport,
    pub baseline: CongestionStats,
    pub dispatched: CongestionStats,
    pub hours_reduction_pct: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CcSummary {
    pub scenarios: usize,
    pub eps_list: Vec<f64>,
    pub baseline_hours_pct: f64,
    pub knee_eps: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TightenSummary {
    pub scenarios: usize,
    pub reference_feasible_pct: f64,
    pub max_power_increase_pct: Option<f64>,
    pub max_energy_increase_pct: Option<f64>,
}

impl Pipeline {
    pub fn new(loaded: Loaded) -> Self {
        let network_hash = sha256_hex(&loaded.network_bytes);
        let profiles_hash = sha256_hex(&loaded.profiles_bytes);
        Self {
            loaded,
            network_hash,
            profiles_hash,
        }
    }

    fn output(&self) -> &Path {
        &self.loaded.config.paths.output
    }

    /// `<output>/<name>-<hash>` where the hash covers every input of the stage.
    fn stage_dir(&self, name: &str, key: &impl Serialize) -> Outcome<PathBuf> {
        let digest = sha256_hex(&serde_json::to_vec(key)?);
        Ok(self.output().join(format!("{name}-{}", &digest[..16])))
    }

    fn cached<T: DeserializeOwned>(dir: &Path) -> Option<T> {
        let text = fs::read_to_string(dir.join(MARKER)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn seal<T: Serialize>(dir: &Path, summary: &T) -> Outcome<()> {
        atomic_write(&dir.join(MARKER), serde_json::to_string_pretty(summary)?.as_bytes())?;
        Ok(())
    }

    fn scenario_key(&self, count: usize) -> ScenarioKey<'_> {
        ScenarioKey {
            network: &self.network_hash,
            profiles: &self.profiles_hash,
            scenarios: self.loaded.config.scenario_config(count),
        }
    }

    pub fn scenarios(&self, count: usize) -> Outcome<(ScenarioSet, PathBuf, Cache)> {
        let dir = self.stage_dir("scenarios", &self.scenario_key(count))?;
        let (net, profiles) = (&self.loaded.network, &self.loaded.profiles);
        if Self::cached::<serde_json::Value>(&dir).is_some() {
            return Ok((ScenarioSet::read_cache(net, profiles, &dir)?, dir, Cache::Hit));
        }
        let set = generate_scenarios(net, profiles, &self.loaded.config.scenario_config(count))?;
        set.write_cache(net, &dir)?;
        Self::seal(&dir, &set.manifest)?;
        Ok((set, dir, Cache::Miss))
    }

    fn zone_key(&self) -> serde_json::Value {
        let (lo, hi) = self.loaded.config.zoning.range(self.loaded.network.node_count()).into_inner();
        serde_json::json!({
            "network": self.network_hash,
            "k_min": lo,
            "k_max": hi,
            "seed": self.loaded.config.scenarios.seed,
        })
    }

    pub fn zone(&self) -> Outcome<(ZonePartition, PathBuf, Cache)> {
        let dir = self.stage_dir("zones", &self.zone_key())?;
        let net = &self.loaded.network;
        if Self::cached::<PartitionDocument>(&dir).is_some() {
            return Ok((read_partition(net, &dir.join("partition.json"))?, dir, Cache::Hit));
        }
        let range = self.loaded.config.zoning.range(net.node_count());
        let sel = select_zones(net, range, self.loaded.config.scenarios.seed)?;
        sel.write(net, &dir)?;
        Self::seal(&dir, &sel.document(net))?;
        Ok((sel.partition, dir, Cache::Miss))
    }

    fn solver_key(&self) -> serde_json::Value {
        serde_json::to_value(&self.loaded.config.solver).expect("plain config")
    }

    pub fn assess(&self) -> Outcome<(AssessSummary, PathBuf, Cache)> {
        let cfg = &self.loaded.config;
        let key = serde_json::json!({
            "scenarios": self.scenario_key(cfg.scenarios.count),
            "zones": self.zone_key(),
            "solver": self.solver_key(),
            "eps": cfg.study.eps,
        });
        let dir = self.stage_dir("assess", &key)?;
        if let Some(s) = Self::cached(&dir) {
            return Ok((s, dir, Cache::Hit));
        }
        let (scen, _, _) = self.scenarios(cfg.scenarios.count)?;
        let (partition, _, _) = self.zone()?;
        let net = &self.loaded.network;
        let bounds = FlexBounds::unbounded(net.node_count(), scen.steps());
        let batch = batch_solve(net, &scen, &bounds, cfg.penalties(), &cfg.solve_options())?;
        batch.write(&dir.join("dispatch"))?;
        let manifest: BatchManifest = batch.manifest();
        let feasible = batch.feasible();
        if feasible.is_empty() {
            return Err(flexneeds::Error::Precondition("no scenario admits a feasible dispatch".into()).into());
        }
        let eps = cfg.study.eps;
        let nodal = robust_needs(&feasible, eps, &Granularity::nodal(net))?;
        let zonal = robust_needs(&feasible, eps, &Granularity::zonal(&partition))?;
        nodal.write(&dir, "needs_nodal")?;
        zonal.write(&dir, "needs_zonal")?;
        let variance = variance_report(&feasible, &partition)?;
        atomic_write(&dir.join("variance.csv"), variance.csv().as_bytes())?;
        let normal_fit = normal_fit_report(&feasible, eps)?;
        let sweep = cc_sweep(net, &scen, &batch, &[eps])?;
        atomic_write(&dir.join("congestion.csv"), sweep.csv().as_bytes())?;
        let dispatched = sweep.rows[0].congestion;
        let mut flagged: Vec<usize> = [&manifest.infeasible, &manifest.unreliable, &manifest.ac_flagged]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        flagged.sort_unstable();
        let summary = AssessSummary {
            scenarios: scen.count(),
            eps,
            feasible_fraction: manifest.feasible_fraction,
            flagged,
            zones: partition.k,
            nodal: nodal.summary(),
            zonal: zonal.summary(),
            variance,
            normal_fit,
            baseline: sweep.baseline,
            dispatched,
            hours_reduction_pct: reduction_percent(sweep.baseline.hours, dispatched.hours).ok(),
        };
        Self::seal(&dir, &summary)?;
        Ok((summary, dir, Cache::Miss))
    }

    pub fn study_cc(&self) -> Outcome<(CcSummary, PathBuf, Cache)> {
        let cfg = &self.loaded.config;
        let count = cfg.study.cc_scenarios;
        let key = serde_json::json!({
            "scenarios": self.scenario_key(count),
            "solver": self.solver_key(),
            "eps_list": cfg.study.eps_list,
        });
        let dir = self.stage_dir("study-cc", &key)?;
        if let Some(s) = Self::cached(&dir) {
            return Ok((s, dir, Cache::Hit));
        }
        let (scen, _, _) = self.scenarios(count)?;
        let net = &self.loaded.network;
        let bounds = FlexBounds::unbounded(net.node_count(), scen.steps());
        let batch = batch_solve(net, &scen, &bounds, cfg.penalties(), &cfg.solve_options())?;
        let sweep: CcSweep = cc_sweep(net, &scen, &batch, &cfg.study.eps_list)?;
        fs::create_dir_all(&dir)?;
        atomic_write(&dir.join("cc_sweep.csv"), sweep.csv().as_bytes())?;
        let knee_eps = if sweep.rows.len() >= 3 {
            let pareto = pareto_knee(&sweep.rows)?;
            atomic_write(&dir.join("pareto.csv"), pareto.csv().as_bytes())?;
            Some(pareto.knee_eps)
        } else {
            None
        };
        let summary = CcSummary {
            scenarios: count,
            eps_list: cfg.study.eps_list.clone(),
            baseline_hours_pct: 100.0 * sweep.baseline.hours,
            knee_eps,
        };
        Self::seal(&dir, &summary)?;
        Ok((summary, dir, Cache::Miss))
    }

    pub fn study_tighten(&self) -> Outcome<(TightenSummary, PathBuf, Cache)> {
        let cfg = &self.loaded.config;
        let count = cfg.study.tightening_scenarios;
        let key = serde_json::json!({
            "scenarios": self.scenario_key(count),
            "solver": self.solver_key(),
            "alpha_p": cfg.study.alpha_p,
            "alpha_e": cfg.study.alpha_e,
        });
        let dir = self.stage_dir("study-tighten", &key)?;
        if let Some(s) = Self::cached(&dir) {
            return Ok((s, dir, Cache::Hit));
        }
        let (scen, _, _) = self.scenarios(count)?;
        let net = &self.loaded.network;
        let t = tightening_sweep(net, &scen, &cfg.study.alpha_p, &cfg.study.alpha_e, cfg.penalties(), &cfg.solve_options())?;
        t.write(&dir)?;
        let last_p = t.grid_p.len() - 1;
        let last_e = t.grid_e.len() - 1;
        let summary = TightenSummary {
            scenarios: count,
            reference_feasible_pct: t.reference_feasible_pct,
            max_power_increase_pct: t.cell(last_p, 0).objective_increase_pct,
            max_energy_increase_pct: t.cell(0, last_e).objective_increase_pct,
        };
        Self::seal(&dir, &summary)?;
        Ok((summary, dir, Cache::Miss))
    }

    /// Runs every stage (reusing cached ones), copies their CSVs into
    /// `<output>/report` and writes `summary.md` there.
    pub fn report(&self) -> Outcome<(PathBuf, AssessSummary)> {
        let (_, zone_dir, _) = self.zone()?;
        let (assess, assess_dir, _) = self.assess()?;
        let (cc, cc_dir, _) = self.study_cc()?;
        let (tighten, tighten_dir, _) = self.study_tighten()?;
        let zones: PartitionDocument = serde_json::from_str(&fs::read_to_string(zone_dir.join(MARKER))?)?;
        let out = self.output().join("report");
        fs::create_dir_all(&out)?;
        for dir in [&zone_dir, &assess_dir, &cc_dir, &tighten_dir] {
            let mut names: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            names.sort();
            for p in names {
                let name = p.file_name().expect("file entry");
                atomic_write(&out.join(name), &fs::read(&p)?)?;
            }
        }
        let md = summary_markdown(&zones, &assess, &cc, &tighten);
        atomic_write(&out.join("summary.md"), md.as_bytes())?;
        Ok((out, assess))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

fn summary_markdown(zones: &PartitionDocument, a: &AssessSummary, cc: &CcSummary, t: &TightenSummary) -> String {
    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    let mut s = String::from("# Flexibility needs report\n\n");
    s.push_str(&format!(
        "## Zones\n\n{} zones, mean silhouette {:.4}. Per-k scores in `silhouette.csv`.\n\n",
        zones.k, zones.score
    ));
    s.push_str(&format!(
        "## Needs at eps_cc = {}\n\n{} scenarios, {}% with a validated dispatch, {} flagged.\n\n",
        a.eps,
        a.scenarios,
        pct(a.feasible_fraction),
        a.flagged.len()
    ));
    s.push_str("| granularity | ramp-up energy (kWh) | ramp-down energy (kWh) | peak ramp-up (kW) | peak ramp-down (kW) |\n");
    s.push_str("|---|---|---|---|---|\n");
    for (name, n) in [("nodal", &a.nodal), ("zonal", &a.zonal)] {
        s.push_str(&format!(
            "| {name} | {:.2} | {:.2} | {:.2} | {:.2} |\n",
            n.total_energy_up_kwh, n.total_energy_down_kwh, n.peak_power_up_kw, n.peak_power_down_kw
        ));
    }
    s.push_str(&format!(
        "\nZonal aggregation lowers the scenario STD of needed energy by {:.2}% (ramp-up) and {:.2}% (ramp-down). \
         A fitted normal misses the empirical quantile by a median {:.2}%.\n\n",
        a.variance.reduction_up_pct,
        a.variance.reduction_down_pct,
        100.0 * a.normal_fit.median_rel_error
    ));
    s.push_str(&format!(
        "## Congestion\n\nCongested hours drop from {}% without flexibility to {}% with the procured needs (reduction {}%).\n\n",
        pct(a.baseline.hours),
        pct(a.dispatched.hours),
        opt(a.hours_reduction_pct)
    ));
    s.push_str(&format!(
        "## Chance-constraint sweep\n\n{} scenarios over eps_cc in {:?}; baseline congested hours {:.2}%. Selected eps_cc: {}.\n\n",
        cc.scenarios,
        cc.eps_list,
        cc.baseline_hours_pct,
        cc.knee_eps.map_or_else(|| "n/a".to_string(), |e| e.to_string())
    ));
    s.push_str(&format!(
        "## Tightening\n\n{} scenarios, {:.2}% feasible unconstrained. Objective increase at the largest power tightening: {}%; at the largest energy tightening: {}%.\n",
        t.scenarios,
        t.reference_feasible_pct,
        opt(t.max_power_increase_pct),
        opt(t.max_energy_increase_pct)
    ));
    s
}

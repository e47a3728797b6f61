//! Chance-constrained flexibility needs from per-scenario dispatches.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fna::FlexDispatch;
use crate::grid::Network;
use crate::io::{atomic_write, fsum};
use crate::zoning::ZonePartition;

/// Guards `p * n` against representation error when picking order statistics.
const INDEX_TOL: f64 = 1e-9;

/// Step ECDF `F(z) = #{samples <= z} / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Precondition("empty sample set".into()));
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::Precondition("NaN sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= z) as f64 / self.sorted.len() as f64
    }

    /// `min { z : F(z) >= p }`; `p = 0` gives the sample minimum.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let k = (p * n as f64 - INDEX_TOL).ceil();
        let idx = if k < 1.0 { 0 } else { (k as usize - 1).min(n - 1) };
        self.sorted[idx]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Ramp-up, `dP- <= 0`: lower tail.
    Up,
    /// Ramp-down, `dP+ >= 0`: upper tail.
    Down,
}

pub fn cc_quantile(f: &EmpiricalCdf, eps: f64, dir: Direction) -> Result<f64> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Precondition(format!("chance-constraint level {eps} outside [0, 1]")));
    }
    Ok(match dir {
        Direction::Down => f.quantile(1.0 - eps),
        Direction::Up => f.quantile(eps),
    })
}

/// Groups of node indices over which needs are aggregated.
#[derive(Clone, Debug, PartialEq)]
pub struct Granularity {
    pub labels: Vec<String>,
    pub groups: Vec<Vec<usize>>,
}

impl Granularity {
    pub fn nodal(net: &Network) -> Self {
        Self {
            labels: net.nodes.iter().map(|n| n.id.to_string()).collect(),
            groups: (0..net.node_count()).map(|i| vec![i]).collect(),
        }
    }

    pub fn zonal(p: &ZonePartition) -> Self {
        Self {
            labels: (1..=p.k).map(|z| format!("zone_{z}")).collect(),
            groups: (1..=p.k).map(|z| p.members(z)).collect(),
        }
    }

    fn check(&self, nodes: usize) -> Result<()> {
        let mut seen = vec![false; nodes];
        for &i in self.groups.iter().flatten() {
            if i >= nodes || seen[i] {
                return Err(Error::Dimension(format!("grouping does not partition {nodes} nodes")));
            }
            seen[i] = true;
        }
        if seen.iter().all(|s| *s) {
            Ok(())
        } else {
            Err(Error::Dimension(format!("grouping does not cover {nodes} nodes")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustNeeds {
    pub eps: f64,
    pub labels: Vec<String>,
    /// `R^P_up <= 0` (kW), entities x steps.
    pub p_up: DMatrix<f64>,
    /// `R^P_down >= 0` (kW), entities x steps.
    pub p_down: DMatrix<f64>,
    /// `R^E_up <= 0` (kWh).
    pub e_up: Vec<f64>,
    /// `R^E_down >= 0` (kWh).
    pub e_down: Vec<f64>,
}

fn group_sum(d: &DMatrix<f64>, g: &[usize], t: usize) -> f64 {
    g.iter().map(|&i| d[(i, t)]).sum()
}

fn check_dispatches(dispatches: &[&FlexDispatch]) -> Result<(usize, usize)> {
    let first = dispatches.first().ok_or_else(|| Error::Precondition("no dispatches".into()))?;
    let shape = first.up.shape();
    if dispatches.iter().any(|d| d.up.shape() != shape || d.down.shape() != shape) {
        return Err(Error::Dimension("dispatches differ in shape".into()));
    }
    Ok(shape)
}

/// ECDF quantiles at level `eps` over the given dispatches, per entity of
/// `gran`; per-scenario values are summed within an entity first.
pub fn robust_needs(dispatches: &[&FlexDispatch], eps: f64, gran: &Granularity) -> Result<RobustNeeds> {
    let (n, steps) = check_dispatches(dispatches)?;
    gran.check(n)?;
    let k = gran.groups.len();
    let mut p_up = DMatrix::zeros(k, steps);
    let mut p_down = DMatrix::zeros(k, steps);
    let mut e_up = vec![0.0; k];
    let mut e_down = vec![0.0; k];
    for (g, members) in gran.groups.iter().enumerate() {
        for t in 0..steps {
            let up: Vec<f64> = dispatches.iter().map(|d| group_sum(&d.up, members, t)).collect();
            let down: Vec<f64> = dispatches.iter().map(|d| group_sum(&d.down, members, t)).collect();
            p_down[(g, t)] = cc_quantile(&EmpiricalCdf::new(&up)?, eps, Direction::Down)?;
            p_up[(g, t)] = cc_quantile(&EmpiricalCdf::new(&down)?, eps, Direction::Up)?;
        }
        let ep: Vec<f64> = dispatches.iter().map(|d| members.iter().map(|&i| d.e_plus[i]).sum()).collect();
        let em: Vec<f64> = dispatches.iter().map(|d| members.iter().map(|&i| d.e_minus[i]).sum()).collect();
        e_down[g] = cc_quantile(&EmpiricalCdf::new(&ep)?, eps, Direction::Down)?;
        e_up[g] = cc_quantile(&EmpiricalCdf::new(&em)?, eps, Direction::Up)?;
    }
    Ok(RobustNeeds {
        eps,
        labels: gran.labels.clone(),
        p_up,
        p_down,
        e_up,
        e_down,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeedsSummary {
    pub eps: f64,
    pub entities: usize,
    pub total_energy_up_kwh: f64,
    pub total_energy_down_kwh: f64,
    pub peak_power_up_kw: f64,
    pub peak_power_down_kw: f64,
}

impl RobustNeeds {
    pub fn total_energy_up(&self) -> f64 {
        fsum(self.e_up.iter().copied())
    }

    pub fn total_energy_down(&self) -> f64 {
        fsum(self.e_down.iter().copied())
    }

    /// `|R^E_up| + R^E_down` summed over entities.
    pub fn total_energy(&self) -> f64 {
        self.total_energy_down() - self.total_energy_up()
    }

    pub fn summary(&self) -> NeedsSummary {
        NeedsSummary {
            eps: self.eps,
            entities: self.labels.len(),
            total_energy_up_kwh: self.total_energy_up(),
            total_energy_down_kwh: self.total_energy_down(),
            peak_power_up_kw: self.p_up.iter().copied().fold(0.0, f64::min),
            peak_power_down_kw: self.p_down.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn power_csv(&self) -> String {
        let mut out = String::from("entity,t,r_p_up,r_p_down\n");
        for (g, label) in self.labels.iter().enumerate() {
            for t in 0..self.p_up.ncols() {
                out.push_str(&format!("{label},{t},{},{}\n", self.p_up[(g, t)], self.p_down[(g, t)]));
            }
        }
        out
    }

    pub fn energy_csv(&self) -> String {
        let mut out = String::from("entity,r_e_up,r_e_down\n");
        for (g, label) in self.labels.iter().enumerate() {
            out.push_str(&format!("{label},{},{}\n", self.e_up[g], self.e_down[g]));
        }
        out
    }

    /// Writes `<prefix>_power.csv`, `<prefix>_energy.csv` and `<prefix>_summary.json`.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        atomic_write(&dir.join(format!("{prefix}_power.csv")), self.power_csv().as_bytes())?;
        atomic_write(&dir.join(format!("{prefix}_energy.csv")), self.energy_csv().as_bytes())?;
        atomic_write(
            &dir.join(format!("{prefix}_summary.json")),
            serde_json::to_string_pretty(&self.summary())?.as_bytes(),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean_up: f64,
    pub mean_down: f64,
    pub std_up: f64,
    pub std_down: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub nodal: Spread,
    pub zonal: Spread,
    /// `1 - zonal / nodal` STD, percent.
    pub reduction_up_pct: f64,
    pub reduction_down_pct: f64,
}

/// Sample standard deviation (`n - 1`); zero for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = fsum(v.iter().copied()) / n as f64;
    (fsum(v.iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64).sqrt()
}

fn spread(dispatches: &[&FlexDispatch], groups: &[Vec<usize>]) -> Spread {
    let j = dispatches.len() as f64;
    let energies = |f: &dyn Fn(&FlexDispatch, usize) -> f64| {
        let mean = fsum(groups.iter().flatten().flat_map(|&i| dispatches.iter().map(move |d| f(d, i)))) / j;
        let std = fsum(groups.iter().map(|g| {
            let per: Vec<f64> = dispatches.iter().map(|d| g.iter().map(|&i| f(d, i)).sum()).collect();
            sample_std(&per)
        }));
        (mean, std)
    };
    let (mean_up, std_up) = energies(&|d, i| d.e_minus[i]);
    let (mean_down, std_down) = energies(&|d, i| d.e_plus[i]);
    Spread {
        mean_up,
        mean_down,
        std_up,
        std_down,
    }
}

fn reduction(nodal: f64, zonal: f64) -> f64 {
    if nodal > 0.0 {
        100.0 * (1.0 - zonal / nodal)
    } else {
        0.0
    }
}

/// Mean and summed per-entity STD of the per-scenario ramp-up and ramp-down
/// energies, at nodal and zonal granularity.
pub fn variance_report(dispatches: &[&FlexDispatch], partition: &ZonePartition) -> Result<VarianceReport> {
    let (n, _) = check_dispatches(dispatches)?;
    if partition.labels.len() != n {
        return Err(Error::Dimension(format!("partition of {} nodes for {n}-node dispatches", partition.labels.len())));
    }
    let nodal = spread(dispatches, &(0..n).map(|i| vec![i]).collect::<Vec<_>>());
    let zonal = spread(dispatches, &(1..=partition.k).map(|z| partition.members(z)).collect::<Vec<_>>());
    Ok(VarianceReport {
        nodal,
        zonal,
        reduction_up_pct: reduction(nodal.std_up, zonal.std_up),
        reduction_down_pct: reduction(nodal.std_down, zonal.std_down),
    })
}

impl VarianceReport {
    pub fn csv(&self) -> String {
        format!(
            "granularity,mean_up_kwh,mean_down_kwh,std_up_kwh,std_down_kwh\nnodal,{},{},{},{}\nzonal,{},{},{},{}\nreduction_pct,,,{},{}\n",
            self.nodal.mean_up,
            self.nodal.mean_down,
            self.nodal.std_up,
            self.nodal.std_down,
            self.zonal.mean_up,
            self.zonal.mean_down,
            self.zonal.std_up,
            self.zonal.std_down,
            self.reduction_up_pct,
            self.reduction_down_pct
        )
    }
}

/// Relative error of a fitted normal quantile against the ECDF quantile at
/// `p`; `None` when the samples are constant or the ECDF quantile is zero.
pub fn normal_fit_error(f: &EmpiricalCdf, p: f64) -> Option<f64> {
    let s = f.samples();
    let mean = fsum(s.iter().copied()) / s.len() as f64;
    let sd = sample_std(s);
    let emp = f.quantile(p);
    if sd <= 0.0 || emp == 0.0 {
        return None;
    }
    let fit = Normal::new(mean, sd).ok()?.inverse_cdf(p.clamp(1e-12, 1.0 - 1e-12));
    Some(((fit - emp) / emp).abs())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalFitReport {
    pub points: usize,
    pub median_rel_error: f64,
    /// Share of points with relative error under one percent.
    pub share_within_1pct: f64,
}

/// Normal-fit diagnostic over every (node, step) ramp-down and ramp-up
/// sample set at level `eps`.
pub fn normal_fit_report(dispatches: &[&FlexDispatch], eps: f64) -> Result<NormalFitReport> {
    let (n, steps) = check_dispatches(dispatches)?;
    let mut errs = Vec::new();
    for i in 0..n {
        for t in 0..steps {
            let up: Vec<f64> = dispatches.iter().map(|d| d.up[(i, t)]).collect();
            let down: Vec<f64> = dispatches.iter().map(|d| d.down[(i, t)]).collect();
            errs.extend(normal_fit_error(&EmpiricalCdf::new(&up)?, 1.0 - eps));
            errs.extend(normal_fit_error(&EmpiricalCdf::new(&down)?, eps));
        }
    }
    if errs.is_empty() {
        return Ok(NormalFitReport::default());
    }
    errs.sort_by(f64::total_cmp);
    Ok(NormalFitReport {
        points: errs.len(),
        median_rel_error: errs[errs.len() / 2],
        share_within_1pct: errs.iter().filter(|e| **e < 0.01).count() as f64 / errs.len() as f64,
    })
}

/// `value,F` pairs of the step function, one per distinct sample.
pub fn ecdf_csv(f: &EmpiricalCdf) -> String {
    let mut out = String::from("value,cdf\n");
    let s = f.samples();
    for (i, v) in s.iter().enumerate() {
        if i + 1 == s.len() || s[i + 1] != *v {
            out.push_str(&format!("{v},{}\n", (i + 1) as f64 / s.len() as f64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_examples() {
        let f = EmpiricalCdf::new(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(-0.1), 0.0);
        let f = EmpiricalCdf::new(&[4.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(f.eval(2.5), 0.5);
        assert!(EmpiricalCdf::new(&[]).is_err());
    }

    #[test]
    fn quantile_examples() {
        let f = EmpiricalCdf::new(&[0.0, 1.0, 5.0]).unwrap();
        assert_eq!(cc_quantile(&f, 0.0, Direction::Down).unwrap(), 5.0);
        assert_eq!(cc_quantile(&f, 0.0, Direction::Up).unwrap(), 0.0);
        let f = EmpiricalCdf::new(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cc_quantile(&f, 0.5, Direction::Down).unwrap(), 2.0);
        let c = EmpiricalCdf::new(&[3.5; 7]).unwrap();
        for eps in [0.0, 0.1, 0.5, 1.0] {
            assert_eq!(cc_quantile(&c, eps, Direction::Up).unwrap(), 3.5);
            assert_eq!(cc_quantile(&c, eps, Direction::Down).unwrap(), 3.5);
        }
        assert!(cc_quantile(&c, 1.5, Direction::Up).is_err());
    }

    #[test]
    fn quantile_at_representation_edges() {
        let v: Vec<f64> = (1..=200).map(f64::from).collect();
        let f = EmpiricalCdf::new(&v).unwrap();
        assert_eq!(cc_quantile(&f, 0.05, Direction::Down).unwrap(), 190.0);
        assert_eq!(cc_quantile(&f, 0.05, Direction::Up).unwrap(), 10.0);
    }

    #[test]
    fn ecdf_close_to_normal() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let s: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = EmpiricalCdf::new(&s).unwrap();
        let phi = Normal::new(0.0, 1.0).unwrap();
        let n = f.len() as f64;
        let d = f
            .samples()
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let c = phi.cdf(*z);
                ((i + 1) as f64 / n - c).abs().max((c - i as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(d <= 0.06, "KS distance {d}");
    }

    #[test]
    fn sample_std_known() {
        assert_eq!(sample_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), (32.0f64 / 7.0).sqrt());
        assert_eq!(sample_std(&[1.0]), 0.0);
    }

    #[test]
    fn ecdf_csv_steps() {
        let f = EmpiricalCdf::new(&[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ecdf_csv(&f), "value,cdf\n1,0.5\n2,0.75\n3,1\n");
    }
}

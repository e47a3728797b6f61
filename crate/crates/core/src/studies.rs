//! Case studies: chance-constraint sweep with congestion projection and
//! Pareto knee, and power/energy bound tightening.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fna::{batch_solve_with, scenario_bases, Batch, BoundReference, FlexBounds, FlexDispatch, FnaModel, Penalties, ScenarioBase, SolveOptions, SolveStatus};
use crate::grid::Network;
use crate::io::{atomic_write, fsum};
use crate::needs::{robust_needs, Granularity, RobustNeeds};
use crate::powerflow::{congestion_scan, CongestionStats, PowerFlow};
use crate::scenario::ScenarioSet;

pub const ALPHA_P_CAP: f64 = 0.6;
pub const ALPHA_E_CAP: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcSweepRow {
    pub eps: f64,
    pub congestion: CongestionStats,
    /// Network total `R^E_up` (kWh, `<= 0`).
    pub energy_up: f64,
    /// Network total `R^E_down` (kWh, `>= 0`).
    pub energy_down: f64,
}

impl CcSweepRow {
    /// `|R^E_up| + R^E_down`.
    pub fn total_energy(&self) -> f64 {
        self.energy_down - self.energy_up
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcSweep {
    pub baseline: CongestionStats,
    pub rows: Vec<CcSweepRow>,
}

/// Dispatch of `d` limited to the procured needs: ramp-down to
/// `[0, R_down]`, ramp-up to `[R_up, 0]`, per node and step.
pub fn clamp_to_needs(d: &FlexDispatch, needs: &RobustNeeds) -> DMatrix<f64> {
    DMatrix::from_fn(d.up.nrows(), d.up.ncols(), |i, t| {
        d.up[(i, t)].clamp(0.0, needs.p_down[(i, t)]) + d.down[(i, t)].clamp(needs.p_up[(i, t)], 0.0)
    })
}

/// For each level in `eps_list`: nodal robust needs over the feasible
/// dispatches, every scenario's own dispatch limited to those needs, and
/// the resulting AC congestion.
pub fn cc_sweep(net: &Network, scen: &ScenarioSet, batch: &Batch, eps_list: &[f64]) -> Result<CcSweep> {
    if batch.dispatches.len() != scen.count() {
        return Err(Error::Dimension(format!("{} dispatches for {} scenarios", batch.dispatches.len(), scen.count())));
    }
    let feasible = batch.feasible();
    if feasible.is_empty() {
        return Err(Error::Precondition("no feasible dispatch to derive needs from".into()));
    }
    let gran = Granularity::nodal(net);
    let baseline = congestion_scan(net, scen, None)?.stats();
    let rows = eps_list
        .iter()
        .map(|&eps| {
            let needs = robust_needs(&feasible, eps, &gran)?;
            let applied: Vec<DMatrix<f64>> = batch
                .dispatches
                .iter()
                .map(|d| {
                    if d.is_feasible() {
                        clamp_to_needs(d, &needs)
                    } else {
                        DMatrix::zeros(d.up.nrows(), d.up.ncols())
                    }
                })
                .collect();
            let congestion = congestion_scan(net, scen, Some(&applied))?.stats();
            Ok(CcSweepRow {
                eps,
                congestion,
                energy_up: needs.total_energy_up(),
                energy_down: needs.total_energy_down(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CcSweep { baseline, rows })
}

impl CcSweep {
    pub const CSV_HEADER: &'static str =
        "eps_cc,under_voltage_pct,over_voltage_pct,thermal_pct,hours_pct,unresolved_pct,energy_up_kwh,energy_down_kwh,total_energy_kwh";

    pub fn csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        out.push_str(&self.baseline.csv_row(f64::NAN).replacen("NaN", "none", 1));
        out.push_str(",,,\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.congestion.csv_row(r.eps), r.energy_up, r.energy_down, r.total_energy()));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub eps: f64,
    pub energy: f64,
    pub hours_pct: f64,
    pub energy_norm: f64,
    pub hours_norm: f64,
    pub dominated: bool,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pareto {
    pub points: Vec<ParetoPoint>,
    pub knee_eps: f64,
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
}

/// Non-dominated row closest to the utopia point on min-max normalized
/// (needs energy, congested hours); ties go to the smaller level.
pub fn pareto_knee(rows: &[CcSweepRow]) -> Result<Pareto> {
    if rows.len() < 3 {
        return Err(Error::Precondition(format!("knee selection needs at least 3 rows, got {}", rows.len())));
    }
    let energy: Vec<f64> = rows.iter().map(|r| r.total_energy()).collect();
    let hours: Vec<f64> = rows.iter().map(|r| 100.0 * r.congestion.hours).collect();
    let en = normalize(&energy);
    let hn = normalize(&hours);
    let points: Vec<ParetoPoint> = rows
        .iter()
        .enumerate()
        .map(|(a, r)| {
            let dominated = (0..rows.len()).any(|b| {
                energy[b] <= energy[a] && hours[b] <= hours[a] && (energy[b] < energy[a] || hours[b] < hours[a])
            });
            ParetoPoint {
                eps: r.eps,
                energy: energy[a],
                hours_pct: hours[a],
                energy_norm: en[a],
                hours_norm: hn[a],
                dominated,
                distance: en[a].hypot(hn[a]),
            }
        })
        .collect();
    let knee = points
        .iter()
        .filter(|p| !p.dominated)
        .min_by(|a, b| a.distance.total_cmp(&b.distance).then(a.eps.total_cmp(&b.eps)))
        .expect("a finite set has a non-dominated point");
    Ok(Pareto {
        knee_eps: knee.eps,
        points,
    })
}

impl Pareto {
    pub fn csv(&self) -> String {
        let mut out = String::from("eps_cc,total_energy_kwh,hours_pct,energy_norm,hours_norm,dominated,distance\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.eps, p.energy, p.hours_pct, p.energy_norm, p.hours_norm, p.dominated, p.distance
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TighteningCell {
    pub alpha_p: f64,
    pub alpha_e: f64,
    /// Increase of the summed objective over the cell's feasible scenarios
    /// against the same scenarios unconstrained, percent; `None` without
    /// feasible scenarios.
    pub objective_increase_pct: Option<f64>,
    pub feasible_pct: f64,
    /// Scenarios that hit the LP iteration cap.
    pub unreliable: usize,
    /// Network ramp-up energy (kWh, `<= 0`), mean over feasible scenarios.
    pub ramp_up_kwh: f64,
    /// Network ramp-down energy (kWh), mean over feasible scenarios.
    pub ramp_down_kwh: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tightening {
    pub grid_p: Vec<f64>,
    pub grid_e: Vec<f64>,
    /// Row-major over `grid_p` then `grid_e`.
    pub cells: Vec<TighteningCell>,
    pub reference_feasible_pct: f64,
}

fn check_grid(g: &[f64], cap: f64, name: &str) -> Result<()> {
    if g.is_empty() || g.iter().any(|a| !(0.0..=cap + 1e-12).contains(a)) {
        return Err(Error::Precondition(format!("{name} grid must be non-empty within [0, {cap}]")));
    }
    Ok(())
}

/// Tightening reference from the level-0 nodal needs: power per node and
/// step, energy per node.
pub fn tightening_reference(needs: &RobustNeeds) -> BoundReference {
    BoundReference {
        p_plus: needs.p_down.clone(),
        p_minus: needs.p_up.clone(),
        e_plus: needs.e_down.clone(),
        e_minus: needs.e_up.clone(),
    }
}

fn cell_metrics(alpha_p: f64, alpha_e: f64, cell: &Batch, reference: &Batch) -> TighteningCell {
    let j = cell.dispatches.len();
    let feasible: Vec<usize> = (0..j).filter(|&s| cell.dispatches[s].is_feasible() && reference.dispatches[s].is_feasible()).collect();
    let sum = |b: &Batch| fsum(feasible.iter().map(|&s| b.dispatches[s].objective));
    let objective_increase_pct = if feasible.is_empty() {
        None
    } else {
        let (c, r) = (sum(cell), sum(reference));
        Some(if r > 0.0 { 100.0 * (c / r - 1.0) } else { 0.0 })
    };
    let mean = |f: &dyn Fn(&FlexDispatch) -> f64| {
        if feasible.is_empty() {
            0.0
        } else {
            fsum(feasible.iter().map(|&s| f(&cell.dispatches[s]))) / feasible.len() as f64
        }
    };
    TighteningCell {
        alpha_p,
        alpha_e,
        objective_increase_pct,
        feasible_pct: 100.0 * cell.dispatches.iter().filter(|d| d.is_feasible()).count() as f64 / j.max(1) as f64,
        unreliable: cell.dispatches.iter().filter(|d| d.status == SolveStatus::IterationLimit).count(),
        ramp_up_kwh: mean(&|d| fsum(d.e_minus.iter().copied())),
        ramp_down_kwh: mean(&|d| fsum(d.e_plus.iter().copied())),
    }
}

/// Solves every scenario unconstrained, derives level-0 needs, then
/// re-solves each (alpha_P, alpha_E) cell with bounds at `(1 - alpha)`
/// times those needs.
pub fn tightening_sweep(
    net: &Network,
    scen: &ScenarioSet,
    grid_p: &[f64],
    grid_e: &[f64],
    penalties: Penalties,
    opts: &SolveOptions,
) -> Result<Tightening> {
    check_grid(grid_p, ALPHA_P_CAP, "power tightening")?;
    check_grid(grid_e, ALPHA_E_CAP, "energy tightening")?;
    let model = FnaModel::new(net);
    let pf = PowerFlow::new(net);
    let bases: Vec<ScenarioBase> = scenario_bases(&model, &pf, scen)?;
    let (n, t) = (net.node_count(), scen.steps());
    let reference = batch_solve_with(net, scen, &bases, &FlexBounds::unbounded(n, t), penalties, opts)?;
    let feasible = reference.feasible();
    if feasible.is_empty() {
        return Err(Error::Precondition("no feasible unconstrained dispatch".into()));
    }
    let needs = robust_needs(&feasible, 0.0, &Granularity::nodal(net))?;
    let reference_bounds = tightening_reference(&needs);
    let mut cells = Vec::with_capacity(grid_p.len() * grid_e.len());
    for &ap in grid_p {
        for &ae in grid_e {
            let bounds = FlexBounds::tightened(&reference_bounds, ap, ae)?;
            let batch = batch_solve_with(net, scen, &bases, &bounds, penalties, opts)?;
            cells.push(cell_metrics(ap, ae, &batch, &reference));
        }
    }
    Ok(Tightening {
        grid_p: grid_p.to_vec(),
        grid_e: grid_e.to_vec(),
        cells,
        reference_feasible_pct: 100.0 * reference.feasible_fraction(),
    })
}

impl Tightening {
    pub fn cell(&self, p: usize, e: usize) -> &TighteningCell {
        &self.cells[p * self.grid_e.len() + e]
    }

    fn matrix_csv(&self, f: impl Fn(&TighteningCell) -> String) -> String {
        let mut out = String::from("alpha_p");
        for e in &self.grid_e {
            out.push_str(&format!(",{e}"));
        }
        out.push('\n');
        for (pi, p) in self.grid_p.iter().enumerate() {
            out.push_str(&p.to_string());
            for ei in 0..self.grid_e.len() {
                out.push(',');
                out.push_str(&f(self.cell(pi, ei)));
            }
            out.push('\n');
        }
        out
    }

    pub fn objective_csv(&self) -> String {
        self.matrix_csv(|c| c.objective_increase_pct.map_or(String::new(), |v| v.to_string()))
    }

    pub fn feasibility_csv(&self) -> String {
        self.matrix_csv(|c| c.feasible_pct.to_string())
    }

    pub fn rampup_csv(&self) -> String {
        self.matrix_csv(|c| c.ramp_up_kwh.to_string())
    }

    pub fn rampdown_csv(&self) -> String {
        self.matrix_csv(|c| c.ramp_down_kwh.to_string())
    }

    /// Writes the four `tightening_*.csv` matrices into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, body) in [
            ("objective", self.objective_csv()),
            ("feasibility", self.feasibility_csv()),
            ("rampup", self.rampup_csv()),
            ("rampdown", self.rampdown_csv()),
        ] {
            atomic_write(&dir.join(format!("tightening_{name}.csv")), body.as_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eps: f64, energy: f64, hours: f64) -> CcSweepRow {
        CcSweepRow {
            eps,
            congestion: CongestionStats {
                hours: hours / 100.0,
                ..Default::default()
            },
            energy_up: 0.0,
            energy_down: energy,
        }
    }

    #[test]
    fn knee_on_l_shape() {
        let rows = [
            row(0.0, 100.0, 0.0),
            row(0.01, 60.0, 0.5),
            row(0.05, 20.0, 1.0),
            row(0.1, 15.0, 20.0),
            row(0.2, 10.0, 40.0),
        ];
        assert_eq!(pareto_knee(&rows).unwrap().knee_eps, 0.05);
    }

    #[test]
    fn knee_on_line_is_midpoint() {
        let rows = [row(0.0, 2.0, 0.0), row(0.1, 1.0, 1.0), row(0.2, 0.0, 2.0)];
        assert_eq!(pareto_knee(&rows).unwrap().knee_eps, 0.1);
    }

    #[test]
    fn dominated_row_is_ignored() {
        let mut rows = vec![
            row(0.0, 100.0, 0.0),
            row(0.01, 60.0, 0.5),
            row(0.05, 20.0, 1.0),
            row(0.1, 15.0, 20.0),
        ];
        let before = pareto_knee(&rows).unwrap().knee_eps;
        rows.push(row(0.2, 30.0, 25.0));
        let p = pareto_knee(&rows).unwrap();
        assert_eq!(p.knee_eps, before);
        assert!(p.points[4].dominated);
    }

    #[test]
    fn knee_degenerate_front() {
        let rows = [row(0.3, 5.0, 1.0), row(0.1, 5.0, 1.0), row(0.2, 5.0, 1.0)];
        assert_eq!(pareto_knee(&rows).unwrap().knee_eps, 0.1);
        assert!(pareto_knee(&rows[..2]).is_err());
    }

    #[test]
    fn grid_caps_enforced() {
        assert!(check_grid(&[0.0, 0.6], ALPHA_P_CAP, "p").is_ok());
        assert!(check_grid(&[0.7], ALPHA_P_CAP, "p").is_err());
        assert!(check_grid(&[], ALPHA_E_CAP, "e").is_err());
    }
}

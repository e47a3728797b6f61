//! Balanced AC power flow by Newton-Raphson in polar coordinates, and
//! congestion statistics over scenario sets.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::scenario::ScenarioSet;

pub const PF_TOL: f64 = 1e-8;
pub const PF_MAX_ITER: usize = 50;
/// Voltage violations smaller than this (pu) are not counted.
pub const VOLTAGE_TOL: f64 = 1e-6;
/// Thermal violations smaller than this fraction of the rating are not counted.
pub const THERMAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct PfSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Apparent power entering each branch at its `from` end (kVA).
    pub s_from: Vec<Complex64>,
    /// Apparent power entering each branch at its `to` end (kVA).
    pub s_to: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the final nodal mismatch (pu).
    pub mismatch: f64,
}

impl PfSolution {
    pub fn voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.vm[i], self.va[i])
    }

    /// Larger of the two end magnitudes, kVA.
    pub fn branch_loading(&self, b: usize) -> f64 {
        self.s_from[b].norm().max(self.s_to[b].norm())
    }
}

pub fn admittance_matrix(net: &Network) -> DMatrix<Complex64> {
    let n = net.node_count();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in &net.branches {
        let ys = Complex64::new(br.r_pu, br.x_pu).inv();
        y[(br.from, br.from)] += ys;
        y[(br.to, br.to)] += ys;
        y[(br.from, br.to)] -= ys;
        y[(br.to, br.from)] -= ys;
    }
    y
}

/// Reusable power-flow context for one network.
#[derive(Clone, Debug)]
pub struct PowerFlow<'a> {
    net: &'a Network,
    y: DMatrix<Complex64>,
    /// Non-slack node indices in Jacobian order.
    pq: Vec<usize>,
}

impl<'a> PowerFlow<'a> {
    pub fn new(net: &'a Network) -> Self {
        let pq = (0..net.node_count()).filter(|&i| i != net.slack).collect();
        Self {
            net,
            y: admittance_matrix(net),
            pq,
        }
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    fn injections(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let mut cur = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    let y = self.y[(i, k)];
                    if y.re != 0.0 || y.im != 0.0 {
                        cur += y * v[k];
                    }
                }
                v[i] * cur.conj()
            })
            .collect()
    }

    /// Solves for net consumption `p_kw`, `q_kvar` per node (negative values
    /// export). The slack node's own consumption is carried by the slack.
    pub fn solve(&self, p_kw: &[f64], q_kvar: &[f64]) -> Result<PfSolution> {
        let net = self.net;
        let n = net.node_count();
        if p_kw.len() != n || q_kvar.len() != n {
            return Err(Error::Dimension(format!("{} / {} injections for {n} nodes", p_kw.len(), q_kvar.len())));
        }
        if p_kw.iter().chain(q_kvar).any(|v| !v.is_finite()) {
            return Err(Error::Precondition("injections must be finite".into()));
        }
        let sb = net.base.s_kva;
        let spec: Vec<Complex64> = p_kw.iter().zip(q_kvar).map(|(p, q)| Complex64::new(-p / sb, -q / sb)).collect();
        let mut vm = vec![net.slack_v_pu; n];
        let mut va = vec![0.0; n];
        let m = self.pq.len();
        let mut iterations = 0;
        let mut mismatch;
        let mut converged = false;
        loop {
            let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
            let s = self.injections(&v);
            let mut f = DVector::zeros(2 * m);
            for (r, &i) in self.pq.iter().enumerate() {
                let d = spec[i] - s[i];
                f[r] = d.re;
                f[m + r] = d.im;
            }
            mismatch = f.amax();
            if !mismatch.is_finite() {
                break;
            }
            if mismatch <= PF_TOL {
                converged = true;
                break;
            }
            if iterations >= PF_MAX_ITER || mismatch > 1e6 {
                break;
            }
            let jac = self.jacobian(&v);
            let Some(dx) = jac.lu().solve(&f) else {
                break;
            };
            for (r, &i) in self.pq.iter().enumerate() {
                va[i] += dx[r];
                vm[i] += dx[m + r];
            }
            iterations += 1;
        }
        let (s_from, s_to) = self.flows(&vm, &va);
        Ok(PfSolution {
            vm,
            va,
            s_from,
            s_to,
            converged,
            iterations,
            mismatch,
        })
    }

    /// Jacobian of (P, Q) with respect to (angle, magnitude) over the non-slack nodes.
    fn jacobian(&self, v: &[Complex64]) -> DMatrix<f64> {
        let n = v.len();
        let m = self.pq.len();
        let cur: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|k| self.y[(i, k)] * v[k]).sum())
            .collect();
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        let j = Complex64::new(0.0, 1.0);
        for (r, &i) in self.pq.iter().enumerate() {
            for (c, &k) in self.pq.iter().enumerate() {
                let yik = self.y[(i, k)];
                let unit = v[k] / v[k].norm();
                // dS_i/dtheta_k and dS_i/d|V_k|
                let mut ds_da = -j * v[i] * (yik * v[k]).conj();
                let mut ds_dm = v[i] * (yik * unit).conj();
                if i == k {
                    ds_da += j * v[i] * cur[i].conj();
                    ds_dm += cur[i].conj() * unit;
                }
                jac[(r, c)] = ds_da.re;
                jac[(r, m + c)] = ds_dm.re;
                jac[(m + r, c)] = ds_da.im;
                jac[(m + r, m + c)] = ds_dm.im;
            }
        }
        jac
    }

    fn flows(&self, vm: &[f64], va: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let sb = self.net.base.s_kva;
        self.net
            .branches
            .iter()
            .map(|br| {
                let ys = Complex64::new(br.r_pu, br.x_pu).inv();
                let vi = Complex64::from_polar(vm[br.from], va[br.from]);
                let vj = Complex64::from_polar(vm[br.to], va[br.to]);
                let sij = vi * (ys * (vi - vj)).conj() * sb;
                let sji = vj * (ys * (vj - vi)).conj() * sb;
                (sij, sji)
            })
            .unzip()
    }

    /// Infinity norm of the nodal mismatch of `sol` against the given consumption (pu).
    pub fn residual(&self, sol: &PfSolution, p_kw: &[f64], q_kvar: &[f64]) -> f64 {
        let n = sol.vm.len();
        let v: Vec<Complex64> = (0..n).map(|i| sol.voltage(i)).collect();
        let s = self.injections(&v);
        let sb = self.net.base.s_kva;
        self.pq
            .iter()
            .map(|&i| {
                let d = Complex64::new(-p_kw[i] / sb, -q_kvar[i] / sb) - s[i];
                d.re.abs().max(d.im.abs())
            })
            .fold(0.0, f64::max)
    }

    /// Violations of the network limits at one solution.
    pub fn check(&self, sol: &PfSolution) -> StepCheck {
        let net = self.net;
        let mut out = StepCheck {
            converged: sol.converged,
            violations: Vec::new(),
        };
        if !sol.converged {
            return out;
        }
        for (i, node) in net.nodes.iter().enumerate() {
            let v = sol.vm[i];
            if v < node.vmin - VOLTAGE_TOL {
                out.violations.push(Violation::UnderVoltage { node: i, excess: node.vmin - v });
            } else if v > node.vmax + VOLTAGE_TOL {
                out.violations.push(Violation::OverVoltage { node: i, excess: v - node.vmax });
            }
        }
        for (b, br) in net.branches.iter().enumerate() {
            let s = sol.branch_loading(b);
            if s > br.smax_kva * (1.0 + THERMAL_TOL) {
                out.violations.push(Violation::Thermal {
                    branch: b,
                    excess: s / br.smax_kva - 1.0,
                });
            }
            let d = sol.va[br.from] - sol.va[br.to];
            if d < br.theta_min || d > br.theta_max {
                out.violations.push(Violation::Angle { branch: b });
            }
        }
        out
    }
}

/// One-shot solve; see [`PowerFlow::solve`].
pub fn solve_pf(net: &Network, p_kw: &[f64], q_kvar: &[f64]) -> Result<PfSolution> {
    PowerFlow::new(net).solve(p_kw, q_kvar)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Violation {
    /// `excess` in pu below the lower limit.
    UnderVoltage { node: usize, excess: f64 },
    /// `excess` in pu above the upper limit.
    OverVoltage { node: usize, excess: f64 },
    /// `excess` as a fraction of the branch rating.
    Thermal { branch: usize, excess: f64 },
    Angle { branch: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepCheck {
    pub converged: bool,
    pub violations: Vec<Violation>,
}

impl StepCheck {
    pub fn is_clean(&self) -> bool {
        self.converged && self.violations.is_empty()
    }

    fn count(&self, f: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| f(v)).count()
    }

    pub fn under_voltage(&self) -> usize {
        self.count(|v| matches!(v, Violation::UnderVoltage { .. }))
    }

    pub fn over_voltage(&self) -> usize {
        self.count(|v| matches!(v, Violation::OverVoltage { .. }))
    }

    pub fn thermal(&self) -> usize {
        self.count(|v| matches!(v, Violation::Thermal { .. }))
    }

    /// Any voltage or thermal violation.
    pub fn congested(&self) -> bool {
        self.under_voltage() + self.over_voltage() + self.thermal() > 0
    }
}

/// Sample counts behind [`CongestionStats`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CongestionCounts {
    pub scenarios: usize,
    pub steps: usize,
    pub nodes: usize,
    pub branches: usize,
    pub under_voltage: usize,
    pub over_voltage: usize,
    pub thermal: usize,
    pub congested_hours: usize,
    pub unresolved: usize,
}

impl CongestionCounts {
    fn add(&mut self, c: &StepCheck) {
        if !c.converged {
            self.unresolved += 1;
            return;
        }
        self.under_voltage += c.under_voltage();
        self.over_voltage += c.over_voltage();
        self.thermal += c.thermal();
        self.congested_hours += usize::from(c.congested());
    }

    fn merge(&mut self, o: &CongestionCounts) {
        self.under_voltage += o.under_voltage;
        self.over_voltage += o.over_voltage;
        self.thermal += o.thermal;
        self.congested_hours += o.congested_hours;
        self.unresolved += o.unresolved;
    }

    pub fn stats(&self) -> CongestionStats {
        let samples = (self.scenarios * self.steps) as f64;
        let frac = |c: usize, per: usize| {
            let d = samples * per as f64;
            if d > 0.0 {
                c as f64 / d
            } else {
                0.0
            }
        };
        CongestionStats {
            under_voltage: frac(self.under_voltage, self.nodes),
            over_voltage: frac(self.over_voltage, self.nodes),
            thermal: frac(self.thermal, self.branches),
            hours: frac(self.congested_hours, 1),
            unresolved: frac(self.unresolved, 1),
        }
    }
}

/// Sample fractions in `[0, 1]`. Voltage fractions are over
/// scenarios x nodes x steps, thermal over scenarios x branches x steps,
/// hours and unresolved over scenarios x steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CongestionStats {
    pub under_voltage: f64,
    pub over_voltage: f64,
    pub thermal: f64,
    pub hours: f64,
    pub unresolved: f64,
}

impl CongestionStats {
    pub const CSV_HEADER: &'static str = "eps_cc,under_voltage_pct,over_voltage_pct,thermal_pct,hours_pct,unresolved_pct";

    pub fn csv_row(&self, eps: f64) -> String {
        format!(
            "{eps},{},{},{},{},{}",
            100.0 * self.under_voltage,
            100.0 * self.over_voltage,
            100.0 * self.thermal,
            100.0 * self.hours,
            100.0 * self.unresolved
        )
    }
}

/// Relative reduction `1 - after / before`, in percent.
pub fn reduction_percent(before: f64, after: f64) -> Result<f64> {
    if !(before > 0.0) || after < 0.0 {
        return Err(Error::Precondition(format!("reduction from {before} to {after}")));
    }
    Ok(100.0 * (1.0 - after / before))
}

/// Checks of scenario `j` at every step; `adjust` (kW, N x T) is subtracted
/// from the net active consumption.
pub fn scenario_checks(pf: &PowerFlow, scen: &ScenarioSet, j: usize, adjust: Option<&DMatrix<f64>>) -> Result<Vec<StepCheck>> {
    let n = scen.node_count();
    (0..scen.steps())
        .map(|t| {
            let (p, q) = step_injections(scen, j, t, adjust.map(|a| a.column(t).iter().copied().collect::<Vec<_>>()).as_deref(), n);
            Ok(pf.check(&pf.solve(&p, &q)?))
        })
        .collect()
}

pub fn step_injections(scen: &ScenarioSet, j: usize, t: usize, adjust: Option<&[f64]>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let p = (0..n)
        .map(|i| scen.p(i, j, t) - adjust.map_or(0.0, |a| a[i]))
        .collect();
    let q = (0..n).map(|i| scen.q(i, j, t)).collect();
    (p, q)
}

/// Solves every (scenario, step) with the optional per-scenario adjustment
/// and counts limit violations. Non-converged samples land in `unresolved`.
pub fn congestion_scan(net: &Network, scen: &ScenarioSet, adjust: Option<&[DMatrix<f64>]>) -> Result<CongestionCounts> {
    if scen.node_count() != net.node_count() {
        return Err(Error::Dimension(format!("{} scenario nodes for {} network nodes", scen.node_count(), net.node_count())));
    }
    if let Some(a) = adjust {
        if a.len() != scen.count() || a.iter().any(|m| m.shape() != (net.node_count(), scen.steps())) {
            return Err(Error::Dimension("dispatch does not match the scenario set".into()));
        }
    }
    let pf = PowerFlow::new(net);
    let per: Vec<CongestionCounts> = (0..scen.count())
        .into_par_iter()
        .map(|j| {
            let mut c = CongestionCounts::default();
            for chk in scenario_checks(&pf, scen, j, adjust.map(|a| &a[j]))? {
                c.add(&chk);
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut total = CongestionCounts {
        scenarios: scen.count(),
        steps: scen.steps(),
        nodes: net.node_count(),
        branches: net.branch_count(),
        ..Default::default()
    };
    for c in &per {
        total.merge(c);
    }
    Ok(total)
}

//! Flexibility-dispatch optimal power flow.
//!
//! Each scenario is an LP over ramp-down `u+ = dP+ >= 0` and ramp-up
//! `u- = -dP- >= 0` per node and step. Network physics is the linearized
//! branch-flow model around the scenario's zero-flexibility AC operating
//! point: squared voltages move by `2 R_ik (u+_k - u-_k) / S_base` and branch
//! active flow by the flexibility in the branch's downstream subtree.
//! Branch apparent power uses an octagonal outer approximation with the
//! reactive flow held at its operating value. Only rows violated by the
//! current point are added (cutting planes), and steps are solved
//! independently unless the daily energy caps bind.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::io::atomic_write;
use crate::lp::{LpStatus, Simplex, SparseRow};
use crate::powerflow::{step_injections, PfSolution, PowerFlow, StepCheck, Violation};
use crate::scenario::ScenarioSet;

pub const DEFAULT_MARGIN_STEP: f64 = 0.005;
pub const DEFAULT_MAX_ROUNDS: usize = 5;
pub const DEFAULT_MAX_ITERATIONS: usize = 50_000;
/// Required relative duality gap at an optimum.
pub const GAP_TOL: f64 = 1e-7;
/// Scaled row violation that triggers a cut.
const CUT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    /// Cost per kWh of ramp-down (`dP+`).
    pub ramp_down: f64,
    /// Cost per kWh of ramp-up (`dP-`).
    pub ramp_up: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Self {
            ramp_down: 1.0,
            ramp_up: 1.0,
        }
    }
}

impl Penalties {
    pub fn validate(&self) -> Result<()> {
        if self.ramp_down > 0.0 && self.ramp_up > 0.0 && self.ramp_down.is_finite() && self.ramp_up.is_finite() {
            Ok(())
        } else {
            Err(Error::Precondition("penalties must be positive and finite".into()))
        }
    }
}

/// Per node and step power (kW) and per node energy (kWh) amounts that
/// tightened bounds are scaled from.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReference {
    pub p_plus: DMatrix<f64>,
    pub p_minus: DMatrix<f64>,
    pub e_plus: Vec<f64>,
    pub e_minus: Vec<f64>,
}

/// Power (kW) and daily energy (kWh) limits on flexibility.
#[derive(Clone, Debug, PartialEq)]
pub struct FlexBounds {
    /// `dP+` upper limit per node and step, `>= 0`.
    pub p_plus_max: DMatrix<f64>,
    /// `dP-` lower limit per node and step, `<= 0`.
    pub p_minus_min: DMatrix<f64>,
    pub e_plus_max: Vec<f64>,
    pub e_minus_min: Vec<f64>,
    pub alpha_p: f64,
    pub alpha_e: f64,
}

impl FlexBounds {
    pub fn unbounded(nodes: usize, steps: usize) -> Self {
        Self {
            p_plus_max: DMatrix::from_element(nodes, steps, f64::INFINITY),
            p_minus_min: DMatrix::from_element(nodes, steps, f64::NEG_INFINITY),
            e_plus_max: vec![f64::INFINITY; nodes],
            e_minus_min: vec![f64::NEG_INFINITY; nodes],
            alpha_p: 0.0,
            alpha_e: 0.0,
        }
    }

    /// Limits at `(1 - alpha)` times `reference`. `alpha = 0` leaves that
    /// axis unbounded. A zero reference entry leaves that range open, so
    /// flexibility can move to nodes and steps that needed none before.
    pub fn tightened(reference: &BoundReference, alpha_p: f64, alpha_e: f64) -> Result<Self> {
        let (n, steps) = reference.p_plus.shape();
        if reference.p_minus.shape() != (n, steps) || reference.e_plus.len() != n || reference.e_minus.len() != n {
            return Err(Error::Dimension("bound reference parts differ in shape".into()));
        }
        for a in [alpha_p, alpha_e] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Precondition(format!("tightening factor {a} outside [0, 1]")));
            }
        }
        let scale = |r: f64, a: f64, open: f64| if r == 0.0 || a == 0.0 { open } else { (1.0 - a) * r };
        let b = Self {
            p_plus_max: reference.p_plus.map(|r| scale(r, alpha_p, f64::INFINITY)),
            p_minus_min: reference.p_minus.map(|r| scale(r, alpha_p, f64::NEG_INFINITY)),
            e_plus_max: reference.e_plus.iter().map(|e| scale(*e, alpha_e, f64::INFINITY)).collect(),
            e_minus_min: reference.e_minus.iter().map(|e| scale(*e, alpha_e, f64::NEG_INFINITY)).collect(),
            alpha_p,
            alpha_e,
        };
        b.validate(n, steps)?;
        Ok(b)
    }

    pub fn validate(&self, nodes: usize, steps: usize) -> Result<()> {
        if self.p_plus_max.shape() != (nodes, steps)
            || self.p_minus_min.shape() != (nodes, steps)
            || self.e_plus_max.len() != nodes
            || self.e_minus_min.len() != nodes
        {
            return Err(Error::Dimension(format!("flexibility bounds do not cover {nodes} nodes x {steps} steps")));
        }
        let ok = self.p_plus_max.iter().all(|v| *v >= 0.0)
            && self.p_minus_min.iter().all(|v| *v <= 0.0)
            && self.e_plus_max.iter().all(|v| *v >= 0.0)
            && self.e_minus_min.iter().all(|v| *v <= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition("flexibility bounds have the wrong sign".into()))
        }
    }
}

/// Network data shared by every scenario's LP.
#[derive(Clone, Debug)]
pub struct FnaModel {
    pub nodes: usize,
    pub branches: usize,
    pub s_base: f64,
    /// `2 R_ik / S_base`: change of squared voltage at i per kW of
    /// consumption relief at k.
    pub sensitivity: DMatrix<f64>,
    /// Nodes downstream of each branch.
    pub subtree: Vec<Vec<usize>>,
    pub vmin: Vec<f64>,
    pub vmax: Vec<f64>,
    /// Branch ratings in pu.
    pub smax: Vec<f64>,
    pub slack: usize,
    slack_v2: f64,
    r_pu: Vec<f64>,
    x_pu: Vec<f64>,
}

impl FnaModel {
    pub fn new(net: &Network) -> Self {
        let n = net.node_count();
        let topo = net.topology();
        let paths: Vec<BTreeSet<usize>> = (0..n).map(|i| topo.path(i).into_iter().collect()).collect();
        let sb = net.base.s_kva;
        let sensitivity = DMatrix::from_fn(n, n, |i, k| {
            let r: f64 = paths[i].intersection(&paths[k]).map(|&b| net.branches[b].r_pu).sum();
            2.0 * r / sb
        });
        Self {
            nodes: n,
            branches: net.branch_count(),
            s_base: sb,
            sensitivity,
            subtree: net.branches.iter().map(|b| topo.subtree(b.to)).collect(),
            vmin: net.nodes.iter().map(|x| x.vmin).collect(),
            vmax: net.nodes.iter().map(|x| x.vmax).collect(),
            smax: net.branches.iter().map(|b| b.smax_kva / sb).collect(),
            slack: net.slack,
            slack_v2: net.slack_v_pu * net.slack_v_pu,
            r_pu: net.branches.iter().map(|b| b.r_pu).collect(),
            x_pu: net.branches.iter().map(|b| b.x_pu).collect(),
        }
    }
}

/// Linearization point of one step.
#[derive(Clone, Debug)]
pub struct StepBase {
    /// Squared voltage magnitudes.
    pub v2: Vec<f64>,
    /// Branch active and reactive flow (pu), `from -> to` direction, taken
    /// at the more heavily loaded end.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// AC check without flexibility; `converged == false` means the point
    /// comes from the linear model instead.
    pub check: StepCheck,
}

/// Zero-flexibility operating points of one scenario, one per step.
#[derive(Clone, Debug)]
pub struct ScenarioBase {
    pub scenario: usize,
    pub steps: Vec<StepBase>,
}

impl ScenarioBase {
    pub fn compute(model: &FnaModel, pf: &PowerFlow, scen: &ScenarioSet, j: usize) -> Result<Self> {
        let n = scen.node_count();
        let steps = (0..scen.steps())
            .map(|t| {
                let (p, q) = step_injections(scen, j, t, None, n);
                let sol = pf.solve(&p, &q)?;
                let check = pf.check(&sol);
                Ok(if sol.converged {
                    ac_base(model, &sol, check)
                } else {
                    linear_base(model, pf.network(), &p, &q, check)
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { scenario: j, steps })
    }
}

fn ac_base(model: &FnaModel, sol: &PfSolution, check: StepCheck) -> StepBase {
    let sb = model.s_base;
    let (p, q) = sol
        .s_from
        .iter()
        .zip(&sol.s_to)
        .map(|(f, t)| if t.norm() > f.norm() { (-t.re / sb, -t.im / sb) } else { (f.re / sb, f.im / sb) })
        .unzip();
    StepBase {
        v2: sol.vm.iter().map(|v| v * v).collect(),
        p,
        q,
        check,
    }
}

/// Lossless linear branch-flow point, used when the AC solve fails.
fn linear_base(model: &FnaModel, net: &Network, p_kw: &[f64], q_kvar: &[f64], check: StepCheck) -> StepBase {
    let sb = model.s_base;
    let p: Vec<f64> = model.subtree.iter().map(|s| s.iter().map(|&k| p_kw[k]).sum::<f64>() / sb).collect();
    let q: Vec<f64> = model.subtree.iter().map(|s| s.iter().map(|&k| q_kvar[k]).sum::<f64>() / sb).collect();
    let mut v2 = vec![model.slack_v2; model.nodes];
    for &i in &net.topology().order {
        if let Some((parent, b)) = net.topology().parent[i] {
            v2[i] = v2[parent] - 2.0 * (model.r_pu[b] * p[b] + model.x_pu[b] * q[b]);
        }
    }
    StepBase { v2, p, q, check }
}

/// Per-(element, step) tightening of the network limits.
#[derive(Clone, Debug, PartialEq)]
pub struct Margins {
    /// Raise of the lower voltage limit (pu), nodes x steps.
    pub v_low: DMatrix<f64>,
    /// Cut of the upper voltage limit (pu), nodes x steps.
    pub v_high: DMatrix<f64>,
    /// Cut of the thermal rating as a fraction, branches x steps.
    pub thermal: DMatrix<f64>,
}

impl Margins {
    pub fn zero(nodes: usize, branches: usize, steps: usize) -> Self {
        Self {
            v_low: DMatrix::zeros(nodes, steps),
            v_high: DMatrix::zeros(nodes, steps),
            thermal: DMatrix::zeros(branches, steps),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum RowKey {
    VHigh(usize),
    VLow(usize),
    FlowPos(usize),
    FlowNeg(usize),
    EnergyPlus(usize),
    EnergyMinus(usize),
}

/// One scenario's FNA-OPF.
#[derive(Clone, Debug)]
pub struct OptimizationInstance<'a> {
    pub model: &'a FnaModel,
    pub base: &'a ScenarioBase,
    pub bounds: &'a FlexBounds,
    pub penalties: Penalties,
    pub dt_hours: f64,
    pub margins: Margins,
    pub max_iterations: usize,
}

pub fn build_fna<'a>(
    model: &'a FnaModel,
    base: &'a ScenarioBase,
    bounds: &'a FlexBounds,
    penalties: Penalties,
    dt_hours: f64,
) -> Result<OptimizationInstance<'a>> {
    penalties.validate()?;
    let t = base.steps.len();
    bounds.validate(model.nodes, t)?;
    if base.steps.iter().any(|s| s.v2.len() != model.nodes || s.p.len() != model.branches) {
        return Err(Error::Dimension("operating point does not match the network".into()));
    }
    if !(dt_hours > 0.0) {
        return Err(Error::Precondition("step length must be positive".into()));
    }
    Ok(OptimizationInstance {
        model,
        base,
        bounds,
        penalties,
        dt_hours,
        margins: Margins::zero(model.nodes, model.branches, t),
        max_iterations: DEFAULT_MAX_ITERATIONS,
    })
}

impl OptimizationInstance<'_> {
    pub fn steps(&self) -> usize {
        self.base.steps.len()
    }

    /// `2 N T`: ramp-down and ramp-up power per node and step.
    pub fn flex_var_count(&self) -> usize {
        2 * self.model.nodes * self.steps()
    }

    /// Network variables are eliminated by substitution.
    pub fn network_var_count(&self) -> usize {
        0
    }

    fn step_cost(&self) -> Vec<f64> {
        (0..self.model.nodes)
            .flat_map(|_| [self.penalties.ramp_down * self.dt_hours, self.penalties.ramp_up * self.dt_hours])
            .collect()
    }

    fn step_upper(&self, t: usize) -> Vec<f64> {
        (0..self.model.nodes)
            .flat_map(|i| [self.bounds.p_plus_max[(i, t)], -self.bounds.p_minus_min[(i, t)]])
            .collect()
    }

    /// Every network row of step `t` in local variables `2k` (`u+`) and
    /// `2k + 1` (`u-`), scaled to unit largest coefficient.
    fn step_rows(&self, t: usize) -> Vec<(RowKey, SparseRow, f64)> {
        let m = self.model;
        let base = &self.base.steps[t];
        let mut out = Vec::with_capacity(2 * (m.nodes + m.branches));
        for i in 0..m.nodes {
            if i == m.slack {
                continue;
            }
            let scale = (0..m.nodes).map(|k| m.sensitivity[(i, k)]).fold(0.0, f64::max);
            if scale <= 0.0 {
                continue;
            }
            let mut hi = SparseRow::new();
            let mut lo = SparseRow::new();
            for k in 0..m.nodes {
                let s = m.sensitivity[(i, k)] / scale;
                hi.push(2 * k, s);
                hi.push(2 * k + 1, -s);
                lo.push(2 * k, -s);
                lo.push(2 * k + 1, s);
            }
            let vmax = m.vmax[i] - self.margins.v_high[(i, t)];
            let vmin = m.vmin[i] + self.margins.v_low[(i, t)];
            out.push((RowKey::VHigh(i), hi, (vmax * vmax - base.v2[i]) / scale));
            out.push((RowKey::VLow(i), lo, (base.v2[i] - vmin * vmin) / scale));
        }
        for b in 0..m.branches {
            let s = m.smax[b] * (1.0 - self.margins.thermal[(b, t)]);
            let limit = s.min(std::f64::consts::SQRT_2 * s - base.q[b].abs());
            let mut pos = SparseRow::new();
            let mut neg = SparseRow::new();
            for &k in &m.subtree[b] {
                pos.push(2 * k, -1.0);
                pos.push(2 * k + 1, 1.0);
                neg.push(2 * k, 1.0);
                neg.push(2 * k + 1, -1.0);
            }
            out.push((RowKey::FlowPos(b), pos, m.s_base * (limit - base.p[b])));
            out.push((RowKey::FlowNeg(b), neg, m.s_base * (limit + base.p[b])));
        }
        out
    }

    fn energy_rows(&self, steps: &[usize]) -> Vec<(RowKey, SparseRow, f64)> {
        let n = self.model.nodes;
        let mut out = Vec::new();
        for i in 0..n {
            for (key, cap, dir) in [
                (RowKey::EnergyPlus(i), self.bounds.e_plus_max[i], 0),
                (RowKey::EnergyMinus(i), -self.bounds.e_minus_min[i], 1),
            ] {
                if cap.is_finite() {
                    let mut r = SparseRow::new();
                    for (pos, _) in steps.iter().enumerate() {
                        r.push(pos * 2 * n + 2 * i + dir, 1.0);
                    }
                    out.push((key, r, cap / self.dt_hours));
                }
            }
        }
        out
    }

    /// Cost per variable over the whole horizon; variable `t 2N + 2k` is
    /// `dP+` of node k at step t and `t 2N + 2k + 1` is `-dP-`.
    pub fn cost_vector(&self) -> Vec<f64> {
        (0..self.steps()).flat_map(|_| self.step_cost()).collect()
    }

    /// Upper bounds of the variables of [`Self::cost_vector`].
    pub fn variable_upper(&self) -> Vec<f64> {
        (0..self.steps()).flat_map(|t| self.step_upper(t)).collect()
    }

    /// Every network and energy row (`a x <= b`) over the whole horizon.
    pub fn constraint_rows(&self) -> Vec<(SparseRow, f64)> {
        let width = 2 * self.model.nodes;
        let mut out = Vec::new();
        for t in 0..self.steps() {
            for (_, row, rhs) in self.step_rows(t) {
                let mut g = SparseRow::new();
                for (j, v) in row.idx.iter().zip(&row.val) {
                    g.push(t * width + j, *v);
                }
                out.push((g, rhs));
            }
        }
        let all: Vec<usize> = (0..self.steps()).collect();
        out.extend(self.energy_rows(&all).into_iter().map(|(_, r, b)| (r, b)));
        out
    }

    /// Steps whose zero-flexibility point violates a row.
    fn active_steps(&self) -> Vec<usize> {
        (0..self.steps())
            .filter(|&t| self.step_rows(t).iter().any(|(_, _, rhs)| *rhs < -CUT_TOL))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Iteration cap reached; treated as infeasible and unreliable.
    IterationLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    /// Re-solves with tightened limits after the first dispatch.
    pub rounds: usize,
    /// Dispatch passes the AC check.
    pub clean: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlexDispatch {
    pub scenario: usize,
    /// `dP+ >= 0` (kW), nodes x steps.
    pub up: DMatrix<f64>,
    /// `dP- <= 0` (kW), nodes x steps.
    pub down: DMatrix<f64>,
    /// `E+ = sum_t dP+ dt` per node (kWh).
    pub e_plus: Vec<f64>,
    /// `E- = sum_t dP- dt` per node (kWh).
    pub e_minus: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub gap: f64,
    pub validation: Validation,
}

impl FlexDispatch {
    fn new(scenario: usize, up: DMatrix<f64>, down: DMatrix<f64>, dt: f64, pen: &Penalties, status: SolveStatus, gap: f64) -> Self {
        let e_plus: Vec<f64> = (0..up.nrows()).map(|i| up.row(i).iter().map(|p| p * dt).sum()).collect();
        let e_minus: Vec<f64> = (0..down.nrows()).map(|i| down.row(i).iter().map(|p| p * dt).sum()).collect();
        let objective = e_plus
            .iter()
            .zip(&e_minus)
            .map(|(ep, em)| pen.ramp_down * ep - pen.ramp_up * em)
            .sum();
        Self {
            scenario,
            up,
            down,
            e_plus,
            e_minus,
            objective,
            status,
            gap,
            validation: Validation { rounds: 0, clean: false },
        }
    }

    pub fn zero(scenario: usize, nodes: usize, steps: usize) -> Self {
        Self::new(
            scenario,
            DMatrix::zeros(nodes, steps),
            DMatrix::zeros(nodes, steps),
            1.0,
            &Penalties::default(),
            SolveStatus::Optimal,
            0.0,
        )
    }

    /// Consumption relief `dP+ + dP-` (kW), nodes x steps.
    pub fn net(&self) -> DMatrix<f64> {
        &self.up + &self.down
    }

    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Optimal && self.validation.clean
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("node,t,dp_plus,dp_minus\n");
        for i in 0..self.up.nrows() {
            for t in 0..self.up.ncols() {
                out.push_str(&format!("{i},{t},{},{}\n", self.up[(i, t)], self.down[(i, t)]));
            }
        }
        out
    }
}

struct StepLp {
    lp: Simplex,
    keys: Vec<RowKey>,
}

struct CoupledLp {
    lp: Simplex,
    /// Step of every row; `None` for energy rows.
    keys: Vec<(Option<usize>, RowKey)>,
}

/// Incremental solver state for one instance, kept across validation rounds.
struct Session<'i, 'a> {
    inst: &'i mut OptimizationInstance<'a>,
    active: Vec<usize>,
    steps: BTreeMap<usize, StepLp>,
    coupled: Option<CoupledLp>,
}

fn lp_status(s: LpStatus) -> Result<SolveStatus> {
    match s {
        LpStatus::Optimal => Ok(SolveStatus::Optimal),
        LpStatus::Infeasible => Ok(SolveStatus::Infeasible),
        LpStatus::IterationLimit => Ok(SolveStatus::IterationLimit),
        LpStatus::Unbounded => Err(Error::Unbounded),
    }
}

impl<'i, 'a> Session<'i, 'a> {
    fn new(inst: &'i mut OptimizationInstance<'a>) -> Self {
        let active = inst.active_steps();
        Self {
            inst,
            active,
            steps: BTreeMap::new(),
            coupled: None,
        }
    }

    fn solve_step(&mut self, t: usize) -> Result<SolveStatus> {
        let inst = &*self.inst;
        let entry = self.steps.entry(t).or_insert_with(|| {
            let mut lp = Simplex::new(inst.step_cost(), inst.step_upper(t));
            lp.max_iterations = inst.max_iterations;
            StepLp { lp, keys: Vec::new() }
        });
        loop {
            let status = entry.lp.solve();
            if status != LpStatus::Optimal {
                return lp_status(status);
            }
            let x = entry.lp.x();
            let mut added = false;
            for (key, row, rhs) in inst.step_rows(t) {
                if !entry.keys.contains(&key) && row.dot(&x) > rhs + CUT_TOL {
                    entry.lp.add_row(&row, rhs);
                    entry.keys.push(key);
                    added = true;
                }
            }
            if !added {
                return Ok(SolveStatus::Optimal);
            }
        }
    }

    fn solve_coupled(&mut self) -> Result<SolveStatus> {
        let inst = &*self.inst;
        let n2 = 2 * inst.model.nodes;
        if self.coupled.is_none() {
            let blocks: Vec<&Simplex> = self.active.iter().map(|t| &self.steps[t].lp).collect();
            let keys = self
                .active
                .iter()
                .flat_map(|t| self.steps[t].keys.iter().map(move |k| (Some(*t), *k)))
                .collect();
            let mut lp = Simplex::stack(&blocks);
            lp.max_iterations = inst.max_iterations;
            self.coupled = Some(CoupledLp { lp, keys });
        }
        let c = self.coupled.as_mut().expect("coupled LP");
        loop {
            let status = c.lp.solve();
            if status != LpStatus::Optimal {
                return lp_status(status);
            }
            let x = c.lp.x();
            let mut added = false;
            for (pos, &t) in self.active.iter().enumerate() {
                let xt = &x[pos * n2..(pos + 1) * n2];
                for (key, row, rhs) in inst.step_rows(t) {
                    if row.dot(xt) > rhs + CUT_TOL && !c.keys.contains(&(Some(t), key)) {
                        let shifted = SparseRow {
                            idx: row.idx.iter().map(|j| j + pos * n2).collect(),
                            val: row.val,
                        };
                        c.lp.add_row(&shifted, rhs);
                        c.keys.push((Some(t), key));
                        added = true;
                    }
                }
            }
            for (key, row, rhs) in inst.energy_rows(&self.active) {
                if row.dot(&x) > rhs + CUT_TOL && !c.keys.contains(&(None, key)) {
                    c.lp.add_row(&row, rhs);
                    c.keys.push((None, key));
                    added = true;
                }
            }
            if !added {
                return Ok(SolveStatus::Optimal);
            }
        }
    }

    fn energy_ok(&self, up: &DMatrix<f64>, down: &DMatrix<f64>) -> bool {
        let dt = self.inst.dt_hours;
        let b = self.inst.bounds;
        (0..up.nrows()).all(|i| {
            let ep: f64 = up.row(i).iter().sum::<f64>() * dt;
            let em: f64 = down.row(i).iter().sum::<f64>() * dt;
            ep <= b.e_plus_max[i] + 1e-9 * (1.0 + b.e_plus_max[i].abs()) && em >= b.e_minus_min[i] - 1e-9 * (1.0 + b.e_minus_min[i].abs())
        })
    }

    /// Writes the step solution `x` (local layout) into the dispatch matrices.
    fn unpack(&self, t: usize, x: &[f64], up: &mut DMatrix<f64>, down: &mut DMatrix<f64>) {
        for i in 0..self.inst.model.nodes {
            let (mut p, mut m) = (x[2 * i].max(0.0), x[2 * i + 1].max(0.0));
            let both = p.min(m);
            p -= both;
            m -= both;
            up[(i, t)] = p.min(self.inst.bounds.p_plus_max[(i, t)]);
            down[(i, t)] = -m.min(-self.inst.bounds.p_minus_min[(i, t)]);
        }
    }

    fn solve(&mut self) -> Result<FlexDispatch> {
        let n = self.inst.model.nodes;
        let steps = self.inst.steps();
        let mut up = DMatrix::zeros(n, steps);
        let mut down = DMatrix::zeros(n, steps);
        let mut gap: f64 = 0.0;
        let fail = |s: SolveStatus, inst: &OptimizationInstance| {
            FlexDispatch::new(inst.base.scenario, DMatrix::zeros(n, steps), DMatrix::zeros(n, steps), inst.dt_hours, &inst.penalties, s, f64::NAN)
        };
        if self.coupled.is_none() {
            for t in self.active.clone() {
                let s = self.solve_step(t)?;
                if s != SolveStatus::Optimal {
                    return Ok(fail(s, self.inst));
                }
                let lp = &self.steps[&t].lp;
                gap = gap.max(lp.relative_gap());
                self.unpack(t, &lp.x(), &mut up, &mut down);
            }
            if self.energy_ok(&up, &down) {
                return Ok(FlexDispatch::new(self.inst.base.scenario, up, down, self.inst.dt_hours, &self.inst.penalties, SolveStatus::Optimal, gap));
            }
        }
        let s = self.solve_coupled()?;
        if s != SolveStatus::Optimal {
            return Ok(fail(s, self.inst));
        }
        let lp = &self.coupled.as_ref().expect("coupled LP").lp;
        let x = lp.x();
        let gap = lp.relative_gap();
        let n2 = 2 * n;
        for (pos, &t) in self.active.iter().enumerate() {
            self.unpack(t, &x[pos * n2..(pos + 1) * n2], &mut up, &mut down);
        }
        Ok(FlexDispatch::new(self.inst.base.scenario, up, down, self.inst.dt_hours, &self.inst.penalties, SolveStatus::Optimal, gap))
    }

    /// Pushes the current margins of step `t` into the existing rows.
    fn refresh_rhs(&mut self, t: usize) {
        let rows: BTreeMap<RowKey, f64> = self.inst.step_rows(t).into_iter().map(|(k, _, r)| (k, r)).collect();
        if let Some(s) = self.steps.get_mut(&t) {
            for (r, key) in s.keys.iter().enumerate() {
                s.lp.set_rhs(r, rows[key]);
            }
        }
        if let Some(c) = self.coupled.as_mut() {
            for (r, (step, key)) in c.keys.iter().enumerate() {
                if *step == Some(t) {
                    c.lp.set_rhs(r, rows[key]);
                }
            }
        }
    }
}

/// AC check of every step where the dispatch or the base point could
/// violate a limit.
fn ac_check(pf: &PowerFlow, scen: &ScenarioSet, base: &ScenarioBase, d: &FlexDispatch) -> Result<Vec<(usize, StepCheck)>> {
    let n = scen.node_count();
    let net = d.net();
    let mut out = Vec::new();
    for t in 0..scen.steps() {
        let col: Vec<f64> = net.column(t).iter().copied().collect();
        if col.iter().all(|v| *v == 0.0) {
            if !base.steps[t].check.is_clean() {
                out.push((t, base.steps[t].check.clone()));
            }
            continue;
        }
        let (p, q) = step_injections(scen, base.scenario, t, Some(&col), n);
        let chk = pf.check(&pf.solve(&p, &q)?);
        if !chk.is_clean() {
            out.push((t, chk));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub margin_step: f64,
    pub max_rounds: usize,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            margin_step: DEFAULT_MARGIN_STEP,
            max_rounds: DEFAULT_MAX_ROUNDS,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Solves the LP without AC validation.
pub fn solve_fna(inst: &mut OptimizationInstance) -> Result<FlexDispatch> {
    Session::new(inst).solve()
}

fn validate_in_session(session: &mut Session, pf: &PowerFlow, scen: &ScenarioSet, mut d: FlexDispatch, opts: &SolveOptions) -> Result<FlexDispatch> {
    let mut rounds = 0;
    loop {
        if d.status != SolveStatus::Optimal {
            d.validation = Validation { rounds, clean: false };
            return Ok(d);
        }
        let bad = ac_check(pf, scen, session.inst.base, &d)?;
        if bad.is_empty() {
            d.validation = Validation { rounds, clean: true };
            return Ok(d);
        }
        if rounds >= opts.max_rounds {
            d.validation = Validation { rounds, clean: false };
            return Ok(d);
        }
        let mut touched = BTreeSet::new();
        for (t, chk) in &bad {
            for v in &chk.violations {
                let m = &mut session.inst.margins;
                match *v {
                    Violation::UnderVoltage { node, .. } => m.v_low[(node, *t)] += opts.margin_step,
                    Violation::OverVoltage { node, .. } => m.v_high[(node, *t)] += opts.margin_step,
                    Violation::Thermal { branch, .. } => m.thermal[(branch, *t)] += opts.margin_step,
                    Violation::Angle { .. } => continue,
                }
                touched.insert(*t);
            }
        }
        if touched.is_empty() {
            d.validation = Validation { rounds, clean: false };
            return Ok(d);
        }
        for t in &touched {
            session.refresh_rhs(*t);
        }
        rounds += 1;
        d = session.solve()?;
    }
}

/// Checks `dispatch` with AC power flow. Violations tighten the affected
/// limits by `margin_step` and the instance is re-solved, up to
/// `max_rounds` times; the last attempt is returned flagged if none is clean.
pub fn ac_validate(
    pf: &PowerFlow,
    scen: &ScenarioSet,
    inst: &mut OptimizationInstance,
    dispatch: FlexDispatch,
    opts: &SolveOptions,
) -> Result<FlexDispatch> {
    let mut session = Session::new(inst);
    validate_in_session(&mut session, pf, scen, dispatch, opts)
}

/// Solve followed by AC validation, sharing one warm-started LP.
pub fn solve_validated(pf: &PowerFlow, scen: &ScenarioSet, inst: &mut OptimizationInstance, opts: &SolveOptions) -> Result<FlexDispatch> {
    inst.max_iterations = opts.max_iterations;
    let mut session = Session::new(inst);
    let d = session.solve()?;
    validate_in_session(&mut session, pf, scen, d, opts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub scenarios: usize,
    pub feasible_fraction: f64,
    pub objective_stats: ObjectiveStats,
    pub infeasible: Vec<usize>,
    pub unreliable: Vec<usize>,
    pub ac_flagged: Vec<usize>,
    pub validation_rounds: usize,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub dispatches: Vec<FlexDispatch>,
}

impl Batch {
    pub fn feasible_fraction(&self) -> f64 {
        if self.dispatches.is_empty() {
            return 0.0;
        }
        self.dispatches.iter().filter(|d| d.is_feasible()).count() as f64 / self.dispatches.len() as f64
    }

    pub fn feasible(&self) -> Vec<&FlexDispatch> {
        self.dispatches.iter().filter(|d| d.is_feasible()).collect()
    }

    pub fn manifest(&self) -> BatchManifest {
        let objs: Vec<f64> = self.feasible().iter().map(|d| d.objective).collect();
        let objective_stats = if objs.is_empty() {
            ObjectiveStats::default()
        } else {
            ObjectiveStats {
                mean: crate::io::fsum(objs.iter().copied()) / objs.len() as f64,
                min: objs.iter().copied().fold(f64::INFINITY, f64::min),
                max: objs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        };
        let pick = |f: &dyn Fn(&FlexDispatch) -> bool| self.dispatches.iter().filter(|d| f(d)).map(|d| d.scenario).collect();
        BatchManifest {
            scenarios: self.dispatches.len(),
            feasible_fraction: self.feasible_fraction(),
            objective_stats,
            infeasible: pick(&|d| d.status == SolveStatus::Infeasible),
            unreliable: pick(&|d| d.status == SolveStatus::IterationLimit),
            ac_flagged: pick(&|d| d.status == SolveStatus::Optimal && !d.validation.clean),
            validation_rounds: self.dispatches.iter().map(|d| d.validation.rounds).sum(),
        }
    }

    /// Writes `scenario_<j>.csv` per dispatch and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for d in &self.dispatches {
            atomic_write(&dir.join(format!("scenario_{:05}.csv", d.scenario)), d.csv().as_bytes())?;
        }
        atomic_write(&dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest())?.as_bytes())
    }
}

/// Zero-flexibility operating points of every scenario.
pub fn scenario_bases(model: &FnaModel, pf: &PowerFlow, scen: &ScenarioSet) -> Result<Vec<ScenarioBase>> {
    (0..scen.count())
        .into_par_iter()
        .map(|j| ScenarioBase::compute(model, pf, scen, j))
        .collect()
}

/// Independent validated solves for every scenario, in scenario order.
pub fn batch_solve_with(
    net: &Network,
    scen: &ScenarioSet,
    bases: &[ScenarioBase],
    bounds: &FlexBounds,
    penalties: Penalties,
    opts: &SolveOptions,
) -> Result<Batch> {
    let model = FnaModel::new(net);
    let pf = PowerFlow::new(net);
    let dispatches = bases
        .par_iter()
        .map(|base| {
            let mut inst = build_fna(&model, base, bounds, penalties, scen.dt_hours())?;
            solve_validated(&pf, scen, &mut inst, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch { dispatches })
}

pub fn batch_solve(net: &Network, scen: &ScenarioSet, bounds: &FlexBounds, penalties: Penalties, opts: &SolveOptions) -> Result<Batch> {
    if scen.node_count() != net.node_count() {
        return Err(Error::Dimension(format!("{} scenario nodes for {} network nodes", scen.node_count(), net.node_count())));
    }
    let model = FnaModel::new(net);
    let pf = PowerFlow::new(net);
    let bases = scenario_bases(&model, &pf, scen)?;
    batch_solve_with(net, scen, &bases, bounds, penalties, opts)
}

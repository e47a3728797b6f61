//! Feeder data model.
//!
//! A [`Network`] is a radial low-voltage feeder: one slack node, `N - 1`
//! branches, loads and PV generators attached to nodes. The JSON document
//! keeps ohmic/kW units; the model also carries per-unit branch impedances on
//! the document's base.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default branch phase-angle bound (30 degrees).
pub const DEFAULT_THETA_BOUND: f64 = 0.5236;
/// Load power factor used when a load entry does not carry one.
pub const DEFAULT_POWER_FACTOR: f64 = 0.97;
/// Column name of the normalized PV series in a profile file.
pub const PV_COLUMN: &str = "pv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Base {
    pub s_kva: f64,
    pub v_volt: f64,
}

impl Default for Base {
    fn default() -> Self {
        Self {
            s_kva: 100.0,
            v_volt: 400.0,
        }
    }
}

impl Base {
    pub fn z_ohm(&self) -> f64 {
        self.v_volt * self.v_volt / (self.s_kva * 1000.0)
    }

    pub fn ohm_to_pu(&self, z: f64) -> f64 {
        z / self.z_ohm()
    }

    pub fn pu_to_ohm(&self, z: f64) -> f64 {
        z * self.z_ohm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub vmin: f64,
    pub vmax: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    /// Index of the `from` node in [`Network::nodes`].
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub r_pu: f64,
    pub x_pu: f64,
    pub smax_kva: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Load {
    pub node: usize,
    pub profile: String,
    pub power_factor: f64,
}

impl Load {
    pub fn tan_phi(&self) -> f64 {
        self.power_factor.acos().tan()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub node: usize,
    pub pmin_kw: f64,
    /// Installed PV capacity (kWp).
    pub pmax_kw: f64,
}

/// Radial feeder. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    pub generators: Vec<Generator>,
    pub slack: usize,
    pub slack_v_pu: f64,
    pub base: Base,
    topology: Topology,
}

/// Tree rooted at the slack node.
#[derive(Clone, Debug)]
pub struct Topology {
    /// For every node: `(parent node, branch index)`; `None` at the slack.
    pub parent: Vec<Option<(usize, usize)>>,
    /// Nodes in breadth-first order starting at the slack.
    pub order: Vec<usize>,
    pub children: Vec<Vec<usize>>,
}

impl Topology {
    /// Branches on the path from the slack to `node`.
    pub fn path(&self, mut node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while let Some((p, b)) = self.parent[node] {
            out.push(b);
            node = p;
        }
        out.reverse();
        out
    }

    /// Nodes in the subtree hanging below `node` (inclusive).
    pub fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.children[out[i]]);
            i += 1;
        }
        out
    }
}

// ---- document -------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NetworkDocument {
    pub nodes: Vec<NodeDoc>,
    pub branches: Vec<BranchDoc>,
    #[serde(default)]
    pub loads: Vec<LoadDoc>,
    #[serde(default)]
    pub generators: Vec<GeneratorDoc>,
    pub slack: SlackDoc,
    #[serde(default)]
    pub base: Base,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NodeDoc {
    pub id: NodeId,
    pub vmin: f64,
    pub vmax: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BranchDoc {
    pub from: NodeId,
    pub to: NodeId,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub smax_kva: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LoadDoc {
    pub node: NodeId,
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pf: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeneratorDoc {
    pub node: NodeId,
    pub pmin_kw: f64,
    pub pmax_kw: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SlackDoc {
    pub node: NodeId,
    pub v_pu: f64,
}

/// Parses and validates a network JSON document.
pub fn load_network(text: &str) -> Result<Network> {
    let doc: NetworkDocument =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    Network::from_document(&doc)
}

impl Network {
    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if doc.nodes.is_empty() {
            return Err(invalid("network", "no nodes"));
        }
        let mut index: HashMap<NodeId, usize> = HashMap::new();
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (i, n) in doc.nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(invalid(format!("node {}", n.id), "duplicate id"));
            }
            if !(n.vmin.is_finite() && n.vmax.is_finite() && 0.0 < n.vmin && n.vmin < n.vmax) {
                return Err(invalid(
                    format!("node {}", n.id),
                    "voltage bounds must satisfy 0 < vmin < vmax",
                ));
            }
            nodes.push(Node {
                id: n.id,
                vmin: n.vmin,
                vmax: n.vmax,
            });
        }
        let lookup = |element: String, id: NodeId| -> Result<usize> {
            index
                .get(&id)
                .copied()
                .ok_or(Error::DanglingReference { element, node: id.0 })
        };

        let base = doc.base;
        if !(base.s_kva > 0.0 && base.v_volt > 0.0) {
            return Err(invalid("base", "base power and voltage must be positive"));
        }

        let mut branches = Vec::with_capacity(doc.branches.len());
        for (k, b) in doc.branches.iter().enumerate() {
            let name = format!("branch {k} ({}-{})", b.from, b.to);
            let from = lookup(name.clone(), b.from)?;
            let to = lookup(name.clone(), b.to)?;
            if from == to {
                return Err(invalid(name, "self loop"));
            }
            if !(b.r_ohm >= 0.0 && b.r_ohm.is_finite()) {
                return Err(invalid(name, "resistance must be finite and non-negative"));
            }
            if !b.x_ohm.is_finite() {
                return Err(invalid(name, "reactance must be finite"));
            }
            if !(b.smax_kva > 0.0) {
                return Err(invalid(name, "smax_kva must be positive"));
            }
            let theta_min = b.theta_min.unwrap_or(-DEFAULT_THETA_BOUND);
            let theta_max = b.theta_max.unwrap_or(DEFAULT_THETA_BOUND);
            if !(theta_min < theta_max) {
                return Err(invalid(name, "theta_min must be below theta_max"));
            }
            branches.push(Branch {
                from,
                to,
                r_ohm: b.r_ohm,
                x_ohm: b.x_ohm,
                r_pu: base.ohm_to_pu(b.r_ohm),
                x_pu: base.ohm_to_pu(b.x_ohm),
                smax_kva: b.smax_kva,
                theta_min,
                theta_max,
            });
        }

        let loads = doc
            .loads
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let node = lookup(format!("load {k} ({})", l.profile), l.node)?;
                let pf = l.pf.unwrap_or(DEFAULT_POWER_FACTOR);
                if !(pf > 0.0 && pf <= 1.0) {
                    return Err(invalid(format!("load {k}"), "power factor must be in (0, 1]"));
                }
                Ok(Load {
                    node,
                    profile: l.profile.clone(),
                    power_factor: pf,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let generators = doc
            .generators
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let node = lookup(format!("generator {k}"), g.node)?;
                if !(g.pmin_kw >= 0.0 && g.pmin_kw <= g.pmax_kw) {
                    return Err(invalid(format!("generator {k}"), "need 0 <= pmin_kw <= pmax_kw"));
                }
                Ok(Generator {
                    node,
                    pmin_kw: g.pmin_kw,
                    pmax_kw: g.pmax_kw,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let slack = lookup("slack".into(), doc.slack.node)?;
        if !(doc.slack.v_pu > 0.0 && doc.slack.v_pu.is_finite()) {
            return Err(invalid("slack", "set-point must be positive"));
        }

        let topology = build_topology(nodes.len(), &branches, slack, &nodes)?;
        Ok(Self {
            nodes,
            branches,
            loads,
            generators,
            slack,
            slack_v_pu: doc.slack.v_pu,
            base,
            topology,
        })
    }

    pub fn to_document(&self) -> NetworkDocument {
        let id = |i: usize| self.nodes[i].id;
        NetworkDocument {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id,
                    vmin: n.vmin,
                    vmax: n.vmax,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|b| BranchDoc {
                    from: id(b.from),
                    to: id(b.to),
                    r_ohm: b.r_ohm,
                    x_ohm: b.x_ohm,
                    smax_kva: b.smax_kva,
                    theta_min: Some(b.theta_min),
                    theta_max: Some(b.theta_max),
                })
                .collect(),
            loads: self
                .loads
                .iter()
                .map(|l| LoadDoc {
                    node: id(l.node),
                    profile: l.profile.clone(),
                    pf: Some(l.power_factor),
                })
                .collect(),
            generators: self
                .generators
                .iter()
                .map(|g| GeneratorDoc {
                    node: id(g.node),
                    pmin_kw: g.pmin_kw,
                    pmax_kw: g.pmax_kw,
                })
                .collect(),
            slack: SlackDoc {
                node: id(self.slack),
                v_pu: self.slack_v_pu,
            },
            base: self.base,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("network document serializes")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Installed PV capacity per node (kWp), summed over co-located generators.
    pub fn pv_capacity(&self) -> Vec<f64> {
        let mut caps = vec![0.0; self.nodes.len()];
        for g in &self.generators {
            caps[g.node] += g.pmax_kw;
        }
        caps
    }

    /// Aggregates co-located loads: nominal active power per node (N x T, kW).
    pub fn nodal_load(&self, profiles: &ProfileSet) -> Result<Vec<Vec<f64>>> {
        let t = profiles.steps();
        let mut out = vec![vec![0.0; t]; self.nodes.len()];
        for l in &self.loads {
            let series = profiles.load(&l.profile).ok_or_else(|| {
                invalid(format!("load at node {}", self.nodes[l.node].id), format!("profile column '{}' missing", l.profile))
            })?;
            for (o, v) in out[l.node].iter_mut().zip(series) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Reactive-to-active ratio per node, energy-weighted over co-located loads.
    pub fn nodal_tan_phi(&self, profiles: &ProfileSet) -> Vec<f64> {
        let mut num = vec![0.0; self.nodes.len()];
        let mut den = vec![0.0; self.nodes.len()];
        for l in &self.loads {
            let e: f64 = profiles.load(&l.profile).map(|s| s.iter().sum()).unwrap_or(0.0);
            num[l.node] += e * l.tan_phi();
            den[l.node] += e;
        }
        num.iter()
            .zip(&den)
            .map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 })
            .collect()
    }
}

fn build_topology(n: usize, branches: &[Branch], slack: usize, nodes: &[Node]) -> Result<Topology> {
    if branches.len() != n - 1 {
        return Err(Error::NonRadial(format!(
            "{} branches for {} nodes (expected {})",
            branches.len(),
            n,
            n - 1
        )));
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, b) in branches.iter().enumerate() {
        adj[b.from].push((b.to, k));
        adj[b.to].push((b.from, k));
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut children = vec![Vec::new(); n];
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, k) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some((u, k));
                children[u].push(v);
                queue.push_back(v);
            } else if parent[u].map(|(_, pk)| pk) != Some(k) {
                return Err(Error::NonRadial(format!(
                    "cycle through branch {k} ({}-{})",
                    nodes[branches[k].from].id, nodes[branches[k].to].id
                )));
            }
        }
    }
    if order.len() != n {
        let missing = (0..n).find(|&i| !seen[i]).unwrap_or(0);
        return Err(Error::NonRadial(format!(
            "node {} is not connected to the slack",
            nodes[missing].id
        )));
    }
    Ok(Topology {
        parent,
        order,
        children,
    })
}

/// Symmetric edge-weight matrix `w_ij = 1 / |R_ij + j X_ij|` (ohms), zero off
/// the edge set and on the diagonal.
pub fn admittance_weights(net: &Network) -> Result<DMatrix<f64>> {
    let n = net.node_count();
    let mut w = DMatrix::zeros(n, n);
    for (k, b) in net.branches.iter().enumerate() {
        let z = b.r_ohm.hypot(b.x_ohm);
        if z == 0.0 {
            return Err(Error::ZeroImpedance(format!(
                "{k} ({}-{})",
                net.nodes[b.from].id, net.nodes[b.to].id
            )));
        }
        w[(b.from, b.to)] += 1.0 / z;
        w[(b.to, b.from)] += 1.0 / z;
    }
    Ok(w)
}

// ---- profiles ---------------------------------------------------------------

/// Forecast-error fractions (dimensionless, 1.96 sigma over the mean).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastErrors {
    pub load: f64,
    pub pv: f64,
}

impl Default for ForecastErrors {
    fn default() -> Self {
        Self { load: 0.30, pv: 0.40 }
    }
}

/// Nominal day-ahead profiles.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSet {
    loads: BTreeMap<String, Vec<f64>>,
    /// Normalized PV output per kW installed, in `[0, 1]`.
    pub pv: Vec<f64>,
    pub dt_hours: f64,
    pub forecast: ForecastErrors,
}

impl ProfileSet {
    pub fn new(loads: BTreeMap<String, Vec<f64>>, pv: Vec<f64>, dt_hours: f64) -> Result<Self> {
        let t = pv.len();
        if t == 0 {
            return Err(invalid("profiles", "empty PV series"));
        }
        if !(dt_hours > 0.0) {
            return Err(invalid("profiles", "step length must be positive"));
        }
        for (name, s) in &loads {
            if s.len() != t {
                return Err(Error::Dimension(format!(
                    "profile '{name}' has {} steps, PV has {t}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid(format!("profile '{name}'"), "nominal loads must be >= 0"));
            }
        }
        if pv.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("profile 'pv'", "normalized PV must lie in [0, 1]"));
        }
        Ok(Self {
            loads,
            pv,
            dt_hours,
            forecast: ForecastErrors::default(),
        })
    }

    pub fn with_forecast(mut self, forecast: ForecastErrors) -> Self {
        self.forecast = forecast;
        self
    }

    /// Parses a profile CSV: header of column ids, `T` data rows, one column
    /// per load plus the [`PV_COLUMN`]. The step length is `24 / T` hours.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let pv_col = headers
            .iter()
            .position(|h| h == PV_COLUMN)
            .ok_or_else(|| Error::Parse(format!("profile file lacks a '{PV_COLUMN}' column")))?;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(Error::Parse(format!("row {} has {} fields", row + 2, rec.len())));
            }
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}, column '{}': '{field}'", row + 2, headers[c])))?;
                cols[c].push(v);
            }
        }
        let pv = std::mem::take(&mut cols[pv_col]);
        let t = pv.len();
        let loads = headers
            .into_iter()
            .zip(cols)
            .enumerate()
            .filter(|(c, _)| *c != pv_col)
            .map(|(_, kv)| kv)
            .collect();
        Self::new(loads, pv, 24.0 / t.max(1) as f64)
    }

    pub fn steps(&self) -> usize {
        self.pv.len()
    }

    pub fn load(&self, id: &str) -> Option<&[f64]> {
        self.loads.get(id).map(Vec::as_slice)
    }

    pub fn load_ids(&self) -> impl Iterator<Item = &str> {
        self.loads.keys().map(String::as_str)
    }

    pub fn total_load_energy(&self) -> f64 {
        self.loads.values().flatten().sum::<f64>() * self.dt_hours
    }

    pub fn pv_energy_per_kw(&self) -> f64 {
        self.pv.iter().sum::<f64>() * self.dt_hours
    }
}

/// Daily PV energy over daily load energy.
pub fn self_sufficiency(profiles: &ProfileSet, pv_caps: &[f64]) -> Result<f64> {
    let cap: f64 = pv_caps.iter().sum();
    energy_ratio(cap * profiles.pv_energy_per_kw(), profiles.total_load_energy())
}

pub fn energy_ratio(pv_energy: f64, load_energy: f64) -> Result<f64> {
    if !(load_energy > 0.0) {
        return Err(Error::Precondition("total load energy must be positive".into()));
    }
    Ok(pv_energy / load_energy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node(r: f64, x: f64) -> String {
        format!(
            r#"{{"nodes":[{{"id":1,"vmin":0.95,"vmax":1.05}},{{"id":2,"vmin":0.95,"vmax":1.05}}],
               "branches":[{{"from":1,"to":2,"r_ohm":{r},"x_ohm":{x},"smax_kva":100}}],
               "loads":[{{"node":2,"profile":"a"}}],
               "generators":[],
               "slack":{{"node":1,"v_pu":1.01}},
               "base":{{"s_kva":100,"v_volt":400}}}}"#
        )
    }

    #[test]
    fn smallest_feeder() {
        let net = load_network(&two_node(0.1, 0.05)).unwrap();
        assert_eq!(net.node_count(), 2);
        assert_eq!(net.branch_count(), 1);
        assert_eq!(net.branches[0].theta_max, DEFAULT_THETA_BOUND);
        assert_eq!(net.topology().parent[1], Some((0, 0)));
    }

    #[test]
    fn cycle_is_rejected() {
        let doc = r#"{"nodes":[{"id":1,"vmin":0.9,"vmax":1.1},{"id":2,"vmin":0.9,"vmax":1.1},{"id":3,"vmin":0.9,"vmax":1.1}],
            "branches":[{"from":1,"to":2,"r_ohm":1,"x_ohm":0,"smax_kva":1},
                        {"from":2,"to":3,"r_ohm":1,"x_ohm":0,"smax_kva":1},
                        {"from":3,"to":1,"r_ohm":1,"x_ohm":0,"smax_kva":1}],
            "slack":{"node":1,"v_pu":1.0}}"#;
        assert!(matches!(load_network(doc), Err(Error::NonRadial(_))));
    }

    #[test]
    fn disconnected_with_right_branch_count_is_rejected() {
        // 4 nodes, 3 branches, but 1-2-3 cycle leaves node 4 orphaned
        let doc = r#"{"nodes":[{"id":1,"vmin":0.9,"vmax":1.1},{"id":2,"vmin":0.9,"vmax":1.1},{"id":3,"vmin":0.9,"vmax":1.1},{"id":4,"vmin":0.9,"vmax":1.1}],
            "branches":[{"from":1,"to":2,"r_ohm":1,"x_ohm":0,"smax_kva":1},
                        {"from":2,"to":3,"r_ohm":1,"x_ohm":0,"smax_kva":1},
                        {"from":3,"to":1,"r_ohm":1,"x_ohm":0,"smax_kva":1}],
            "slack":{"node":1,"v_pu":1.0}}"#;
        assert!(matches!(load_network(doc), Err(Error::NonRadial(_))));
    }

    #[test]
    fn dangling_reference_names_element() {
        let doc = two_node(0.1, 0.0).replace(r#""node":2,"profile""#, r#""node":7,"profile""#);
        match load_network(&doc) {
            Err(Error::DanglingReference { node, element }) => {
                assert_eq!(node, 7);
                assert!(element.contains("load"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(load_network("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn weights_examples() {
        let net = load_network(&two_node(3.0, 4.0)).unwrap();
        let w = admittance_weights(&net).unwrap();
        assert!((w[(0, 1)] - 0.2).abs() < 1e-15);
        assert_eq!(w[(0, 1)], w[(1, 0)]);
        assert_eq!(w[(0, 0)], 0.0);

        let net = load_network(&two_node(0.1, 0.0)).unwrap();
        let w = admittance_weights(&net).unwrap();
        assert!((w[(0, 1)] - 10.0).abs() < 1e-12);

        let net = load_network(&two_node(0.0, 0.0)).unwrap();
        assert!(matches!(admittance_weights(&net), Err(Error::ZeroImpedance(_))));
    }

    #[test]
    fn per_unit_round_trip() {
        let base = Base::default();
        assert!((base.z_ohm() - 1.6).abs() < 1e-15);
        for z in [1e-4, 0.0317, 2.5, 1234.5] {
            let back = base.pu_to_ohm(base.ohm_to_pu(z));
            assert!(((back - z) / z).abs() <= 1e-12);
        }
    }

    #[test]
    fn self_sufficiency_examples() {
        assert!((energy_ratio(1709.0, 2719.0).unwrap() - 0.6285).abs() < 1e-4);
        let mut loads = BTreeMap::new();
        loads.insert("a".to_string(), vec![2.0; 4]);
        let p = ProfileSet::new(loads.clone(), vec![0.0; 4], 6.0).unwrap();
        assert_eq!(self_sufficiency(&p, &[5.0]).unwrap(), 0.0);
        let p = ProfileSet::new(loads, vec![0.5; 4], 6.0).unwrap();
        assert!((self_sufficiency(&p, &[4.0]).unwrap() - 1.0).abs() < 1e-15);
        let empty = ProfileSet::new(BTreeMap::new(), vec![0.5; 4], 6.0).unwrap();
        assert!(self_sufficiency(&empty, &[4.0]).is_err());
    }

    #[test]
    fn profiles_csv() {
        let p = ProfileSet::from_csv("a,b,pv\n1,2,0\n3,4,0.5\n").unwrap();
        assert_eq!(p.steps(), 2);
        assert_eq!(p.dt_hours, 12.0);
        assert_eq!(p.load("b").unwrap(), &[2.0, 4.0]);
        assert!(ProfileSet::from_csv("a,pv\n1,1.5\n").is_err());
        assert!(ProfileSet::from_csv("a,pv\n-1,0.5\n").is_err());
        assert!(ProfileSet::from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn co_located_loads_aggregate() {
        let doc = two_node(0.1, 0.0).replace(
            r#""loads":[{"node":2,"profile":"a"}]"#,
            r#""loads":[{"node":2,"profile":"a"},{"node":2,"profile":"b","pf":1.0}]"#,
        );
        let net = load_network(&doc).unwrap();
        let p = ProfileSet::from_csv("a,b,pv\n1,2,0\n3,4,0.5\n").unwrap();
        let nodal = net.nodal_load(&p).unwrap();
        assert_eq!(nodal[1], vec![3.0, 7.0]);
        assert_eq!(nodal[0], vec![0.0, 0.0]);
        let tan = net.nodal_tan_phi(&p);
        let expected = 4.0 * DEFAULT_POWER_FACTOR.acos().tan() / 10.0;
        assert!((tan[1] - expected).abs() < 1e-15);
    }
}

#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use flexneeds::grid::{load_network, ProfileSet};
use flexneeds::scenario::{compose_net_load, ScenarioManifest, ScenarioSet};
use flexneeds::Network;
use nalgebra::DMatrix;

pub fn feeder_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/feeder30")
}

pub fn feeder() -> (Network, ProfileSet) {
    let dir = feeder_dir();
    let net = load_network(&fs::read_to_string(dir.join("network.json")).unwrap()).unwrap();
    let profiles = ProfileSet::from_csv(&fs::read_to_string(dir.join("profiles.csv")).unwrap()).unwrap();
    (net, profiles)
}

/// Radial network from `(parent, child)` pairs over nodes `0..n`, node 0 as
/// slack at 1.0 pu, 100 kVA / 400 V base.
pub fn network(n: usize, edges: &[(usize, usize)], r_ohm: f64, x_ohm: f64, smax_kva: f64, vmin: f64, vmax: f64) -> Network {
    let nodes: Vec<String> = (0..n).map(|i| format!(r#"{{"id":{i},"vmin":{vmin},"vmax":{vmax}}}"#)).collect();
    let branches: Vec<String> = edges
        .iter()
        .map(|(f, t)| format!(r#"{{"from":{f},"to":{t},"r_ohm":{r_ohm},"x_ohm":{x_ohm},"smax_kva":{smax_kva}}}"#))
        .collect();
    load_network(&format!(
        r#"{{"nodes":[{}],"branches":[{}],"slack":{{"node":0,"v_pu":1.0}},"base":{{"s_kva":100,"v_volt":400}}}}"#,
        nodes.join(","),
        branches.join(",")
    ))
    .unwrap()
}

pub fn chain(n: usize, r_ohm: f64, smax_kva: f64) -> Network {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    network(n, &edges, r_ohm, r_ohm, smax_kva, 0.95, 1.05)
}

/// One scenario with the given per-node load rows (kW) and per-node PV
/// generation rows (kW), unit power factor. PV rows must be multiples of
/// one shared shape.
pub fn single_scenario(load: &[Vec<f64>], pv: &[Vec<f64>]) -> ScenarioSet {
    let t = load[0].len();
    let n = load.len();
    let manifest = ScenarioManifest {
        seed: 0,
        count: 1,
        steps: t,
        fe_l: 0.0,
        fe_pv: 0.0,
        rho: 0.0,
        eps: 0.0,
        dt_hours: 1.0,
    };
    let shape: Vec<f64> = {
        let peak = pv.iter().flat_map(|r| r.iter().copied()).fold(0.0, f64::max);
        if peak > 0.0 {
            let lead = pv.iter().find(|r| r.iter().any(|v| *v > 0.0)).unwrap();
            let m = lead.iter().copied().fold(0.0, f64::max);
            lead.iter().map(|v| v / m).collect()
        } else {
            vec![0.0; t]
        }
    };
    let caps: Vec<f64> = pv
        .iter()
        .map(|r| {
            let m = r.iter().copied().fold(0.0, f64::max);
            for (v, s) in r.iter().zip(&shape) {
                assert!((v - m * s).abs() < 1e-12, "PV rows must share one shape");
            }
            m
        })
        .collect();
    compose_net_load(
        load.iter().map(|r| DMatrix::from_row_slice(1, t, r)).collect(),
        DMatrix::from_row_slice(1, t, &shape),
        &caps,
        &vec![0.0; n],
        manifest,
    )
    .unwrap()
}

//! Correlated day-ahead scenarios of nodal net load.
//!
//! Each node's load and the shared normalized PV series are sampled from a
//! multivariate Gaussian whose mean is the point forecast and whose standard
//! deviation is `fe * mu / 1.96`, with an exponential temporal correlation
//! kernel. Samples are drawn as `mu + L z` with `L` the Cholesky factor.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{ForecastErrors, Network, ProfileSet};
use crate::io::{atomic_write, format_matrix_csv, parse_matrix_csv};

/// z-score of the two-sided 95 % interval.
pub const Z95: f64 = 1.96;

/// Seed-stream tag for the shared PV scenarios (node ids are 32-bit).
const PV_STREAM: u64 = 1 << 63;

#[derive(Clone, Debug)]
pub struct CovarianceSpec {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: f64,
    pub jitter: f64,
    pub matrix: DMatrix<f64>,
}

/// `Sigma_ij = sigma_i sigma_j rho^|i-j| + eps 1{i=j}` with `sigma = fe mu / 1.96`.
pub fn build_covariance(mu: &[f64], fe: f64, rho: f64, eps: f64) -> Result<CovarianceSpec> {
    if mu.iter().any(|m| !m.is_finite()) {
        return Err(invalid("covariance", "mean vector has non-finite entries"));
    }
    if !(fe >= 0.0) {
        return Err(Error::Precondition(format!("forecast error must be >= 0, got {fe}")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Precondition(format!("rho must lie in [0, 1), got {rho}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("jitter must be > 0, got {eps}")));
    }
    let sigma: Vec<f64> = mu.iter().map(|m| fe * m / Z95).collect();
    let s = mu.len();
    let matrix = DMatrix::from_fn(s, s, |i, j| {
        let lag = i.abs_diff(j) as i32;
        let c = sigma[i] * sigma[j] * rho.powi(lag);
        if i == j {
            c + eps
        } else {
            c
        }
    });
    Ok(CovarianceSpec {
        mean: mu.to_vec(),
        sigma,
        rho,
        jitter: eps,
        matrix,
    })
}

/// Lower-triangular `L` with `L L^T = sigma` (Cholesky-Banachiewicz).
pub fn cholesky(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} is not square", n, sigma.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = sigma[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::NotPositiveDefinite { index: i, value: sum });
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Eigen-based square root `V Lambda^{1/2}`; also satisfies `L L^T = sigma`
/// but is not triangular.
pub fn eigen_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(sigma.clone());
    if let Some((i, &v)) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, v)| **v < -1e-12 * sigma.amax())
    {
        return Err(Error::NotPositiveDefinite { index: i, value: v });
    }
    let mut f = eig.eigenvectors;
    for (c, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        f.column_mut(c).scale_mut(s);
    }
    Ok(f)
}

/// `J x S` matrix whose row `j` is `mu + L z_j`, `z_j` standard normal drawn
/// sequentially from a ChaCha8 stream seeded with `seed`.
pub fn generate(mu: &[f64], l: &DMatrix<f64>, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let s = mu.len();
    if l.nrows() != s || l.ncols() != s {
        return Err(Error::Dimension(format!(
            "factor is {}x{}, mean has {s} entries",
            l.nrows(),
            l.ncols()
        )));
    }
    if count == 0 {
        return Err(Error::Precondition("scenario count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, s);
    let mut z = vec![0.0; s];
    for j in 0..count {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..s {
            let mut x = mu[i];
            for (k, zk) in z.iter().enumerate() {
                x += l[(i, k)] * zk;
            }
            out[(j, i)] = x;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub count: usize,
    pub seed: u64,
    pub forecast: ForecastErrors,
    pub rho: f64,
    /// Diagonal jitter relative to the mean diagonal of the covariance.
    pub jitter: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            seed: 42,
            forecast: ForecastErrors::default(),
            rho: 0.9,
            jitter: 1e-8,
        }
    }
}

/// Sampling factor for one series: `None` when the covariance vanishes
/// (zero forecast error or zero mean), in which case every scenario equals
/// the mean.
fn series_factor(mu: &[f64], fe: f64, rho: f64, jitter_rel: f64) -> Result<Option<DMatrix<f64>>> {
    let mean_diag = mu.iter().map(|m| (fe * m / Z95).powi(2)).sum::<f64>() / mu.len() as f64;
    if mean_diag == 0.0 {
        return Ok(None);
    }
    let cov = build_covariance(mu, fe, rho, jitter_rel * mean_diag)?;
    cholesky(&cov.matrix).map(Some)
}

fn sample_series(mu: &[f64], fe: f64, cfg: &ScenarioConfig, seed: u64) -> Result<DMatrix<f64>> {
    match series_factor(mu, fe, cfg.rho, cfg.jitter)? {
        Some(l) => generate(mu, &l, cfg.count, seed),
        None => Ok(DMatrix::from_fn(cfg.count, mu.len(), |_, t| mu[t])),
    }
}

/// Per-node scenario seed (`seed XOR node id`).
pub fn node_seed(seed: u64, id: u32) -> u64 {
    seed ^ id as u64
}

pub fn pv_seed(seed: u64) -> u64 {
    seed ^ PV_STREAM
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub seed: u64,
    #[serde(rename = "J")]
    pub count: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub fe_l: f64,
    pub fe_pv: f64,
    pub rho: f64,
    pub eps: f64,
    pub dt_hours: f64,
}

/// J scenarios of per-node load, shared normalized PV and derived net load.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    pub manifest: ScenarioManifest,
    /// Per node, `J x T` kW, clamped at zero.
    pub load: Vec<DMatrix<f64>>,
    /// `J x T`, clamped to `[0, 1]`, identical for every node.
    pub pv: DMatrix<f64>,
    pub pv_caps: Vec<f64>,
    pub tan_phi: Vec<f64>,
    /// Per node, `J x T` kW: `load - cap * pv`.
    pub net: Vec<DMatrix<f64>>,
}

/// Clamps the raw samples and composes `net = max(load, 0) - cap * clamp(pv, 0, 1)`.
pub fn compose_net_load(
    loads: Vec<DMatrix<f64>>,
    pv_norm: DMatrix<f64>,
    pv_caps: &[f64],
    tan_phi: &[f64],
    manifest: ScenarioManifest,
) -> Result<ScenarioSet> {
    if loads.len() != pv_caps.len() || tan_phi.len() != pv_caps.len() {
        return Err(Error::Dimension(format!(
            "{} load series, {} capacities, {} power factors",
            loads.len(),
            pv_caps.len(),
            tan_phi.len()
        )));
    }
    let (j, t) = pv_norm.shape();
    if let Some(bad) = loads.iter().position(|m| m.shape() != (j, t)) {
        return Err(Error::Dimension(format!(
            "load scenarios of node {bad} are {:?}, PV scenarios are {:?}",
            loads[bad].shape(),
            (j, t)
        )));
    }
    let pv = pv_norm.map(|v| v.clamp(0.0, 1.0));
    let load: Vec<_> = loads.into_iter().map(|m| m.map(|v| v.max(0.0))).collect();
    let net = load
        .iter()
        .zip(pv_caps)
        .map(|(l, cap)| l - &pv * *cap)
        .collect();
    Ok(ScenarioSet {
        manifest: ScenarioManifest {
            count: j,
            steps: t,
            ..manifest
        },
        load,
        pv,
        pv_caps: pv_caps.to_vec(),
        tan_phi: tan_phi.to_vec(),
        net,
    })
}

/// Full scenario pipeline: per-node load sampling and one shared PV draw.
pub fn generate_scenarios(net: &Network, profiles: &ProfileSet, cfg: &ScenarioConfig) -> Result<ScenarioSet> {
    use rayon::prelude::*;
    let nominal = net.nodal_load(profiles)?;
    let loads = nominal
        .par_iter()
        .zip(&net.nodes)
        .map(|(mu, node)| sample_series(mu, cfg.forecast.load, cfg, node_seed(cfg.seed, node.id.0)))
        .collect::<Result<Vec<_>>>()?;
    let pv = sample_series(&profiles.pv, cfg.forecast.pv, cfg, pv_seed(cfg.seed))?;
    let manifest = ScenarioManifest {
        seed: cfg.seed,
        count: cfg.count,
        steps: profiles.steps(),
        fe_l: cfg.forecast.load,
        fe_pv: cfg.forecast.pv,
        rho: cfg.rho,
        eps: cfg.jitter,
        dt_hours: profiles.dt_hours,
    };
    compose_net_load(loads, pv, &net.pv_capacity(), &net.nodal_tan_phi(profiles), manifest)
}

impl ScenarioSet {
    pub fn count(&self) -> usize {
        self.manifest.count
    }

    pub fn steps(&self) -> usize {
        self.manifest.steps
    }

    pub fn dt_hours(&self) -> f64 {
        self.manifest.dt_hours
    }

    pub fn node_count(&self) -> usize {
        self.net.len()
    }

    /// Net active load (kW) of node `i` in scenario `j` at step `t`.
    pub fn p(&self, i: usize, j: usize, t: usize) -> f64 {
        self.net[i][(j, t)]
    }

    /// Reactive load (kVAr); PV runs at unity power factor.
    pub fn q(&self, i: usize, j: usize, t: usize) -> f64 {
        self.load[i][(j, t)] * self.tan_phi[i]
    }

    /// Extracts scenarios `range` into a smaller set.
    pub fn subset(&self, count: usize) -> ScenarioSet {
        let count = count.min(self.count());
        let cut = |m: &DMatrix<f64>| m.rows(0, count).into_owned();
        ScenarioSet {
            manifest: ScenarioManifest {
                count,
                ..self.manifest
            },
            load: self.load.iter().map(cut).collect(),
            pv: cut(&self.pv),
            pv_caps: self.pv_caps.clone(),
            tan_phi: self.tan_phi.clone(),
            net: self.net.iter().map(cut).collect(),
        }
    }

    /// Writes the scenario cache: `node_<id>.csv` per node, `pv.csv`, `manifest.json`.
    pub fn write_cache(&self, net: &Network, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (node, m) in net.nodes.iter().zip(&self.load) {
            atomic_write(&dir.join(format!("node_{}.csv", node.id)), format_matrix_csv(m).as_bytes())?;
        }
        atomic_write(&dir.join("pv.csv"), format_matrix_csv(&self.pv).as_bytes())?;
        atomic_write(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest)?.as_bytes(),
        )?;
        Ok(())
    }

    pub fn read_cache(net: &Network, profiles: &ProfileSet, dir: &Path) -> Result<ScenarioSet> {
        let manifest: ScenarioManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let loads = net
            .nodes
            .iter()
            .map(|n| parse_matrix_csv(&fs::read_to_string(dir.join(format!("node_{}.csv", n.id)))?))
            .collect::<Result<Vec<_>>>()?;
        let pv = parse_matrix_csv(&fs::read_to_string(dir.join("pv.csv"))?)?;
        compose_net_load(loads, pv, &net.pv_capacity(), &net.nodal_tan_phi(profiles), manifest)
    }
}

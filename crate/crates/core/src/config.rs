//! TOML pipeline configuration.
//!
//! Relative paths resolve against the directory holding the config file.
//! Every section except `[inputs]` is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::ingest::LanduseMap;
use crate::marginals::{validate_bins, validate_blocks, Bin, Block, DEFAULT_OPEN_BIN_MIDPOINT};
use crate::network::SpeedDefaults;
use crate::vrpbench::{Algorithm, CostMode, VrpParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub units: PathBuf,
    pub buildings_osm: PathBuf,
    pub buildings_msbf: PathBuf,
    pub network_nodes: PathBuf,
    pub network_edges: PathBuf,
    pub flows: PathBuf,
    pub departures: PathBuf,
    pub travel_times: PathBuf,
}

impl Inputs {
    fn paths_mut(&mut self) -> [&mut PathBuf; 8] {
        [
            &mut self.units,
            &mut self.buildings_osm,
            &mut self.buildings_msbf,
            &mut self.network_nodes,
            &mut self.network_edges,
            &mut self.flows,
            &mut self.departures,
            &mut self.travel_times,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalsConfig {
    /// Block boundaries in minutes of day; consecutive pairs form blocks.
    pub block_edges: Vec<u32>,
    /// Bin boundaries in minutes; a final open bin starts at the last edge.
    pub bin_edges: Vec<f64>,
    pub open_bin_midpoint: f64,
}

impl Default for MarginalsConfig {
    fn default() -> Self {
        Self {
            block_edges: vec![0, 300, 330, 360, 390, 420, 450, 480, 510, 540, 600, 660, 720, 960, 1440],
            bin_edges: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 60.0, 90.0],
            open_bin_midpoint: DEFAULT_OPEN_BIN_MIDPOINT,
        }
    }
}

impl MarginalsConfig {
    pub fn blocks(&self) -> Vec<Block> {
        self.block_edges.windows(2).map(|w| Block::new(w[0], w[1])).collect()
    }

    pub fn bins(&self) -> Vec<Bin> {
        let mut bins: Vec<Bin> = self.bin_edges.windows(2).map(|w| Bin::new(w[0], Some(w[1]))).collect();
        if let Some(&last) = self.bin_edges.last() {
            bins.push(Bin::new(last, None));
        }
        bins
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub fallback_speed_kmh: f64,
    /// Speed for edges with no hourly values, no maxspeed and an unknown
    /// highway class.
    pub default_speed_kmh: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            fallback_speed_kmh: 30.0,
            default_speed_kmh: 40.0,
        }
    }
}

impl NetworkConfig {
    pub fn speed_defaults(&self) -> SpeedDefaults {
        SpeedDefaults {
            other_kmh: self.default_speed_kmh,
            ..SpeedDefaults::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Branch-and-bound node limit per origin.
    pub node_limit: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            node_limit: crate::calibrate::DEFAULT_NODE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VrpConfig {
    /// Whether `run` includes the benchmark stage.
    pub enabled: bool,
    pub k: usize,
    pub instances: usize,
    pub fleet: usize,
    pub capacity: u32,
    pub window_min: f64,
    pub speed_kmh: f64,
    pub cost_mode: CostMode,
    pub algorithms: Vec<Algorithm>,
    pub budget_s: f64,
    pub max_iters: usize,
    /// `[lon, lat]`; defaults to the centroid of unit centroids.
    pub depot: Option<[f64; 2]>,
}

impl Default for VrpConfig {
    fn default() -> Self {
        let p = VrpParams::default();
        Self {
            enabled: true,
            k: 100,
            instances: 1,
            fleet: p.fleet,
            capacity: p.capacity,
            window_min: p.window_min,
            speed_kmh: p.speed_kmh,
            cost_mode: p.cost_mode,
            algorithms: Algorithm::ALL.to_vec(),
            budget_s: 10.0,
            max_iters: 2_000,
            depot: None,
        }
    }
}

impl VrpConfig {
    pub fn params(&self) -> VrpParams {
        VrpParams {
            fleet: self.fleet,
            capacity: self.capacity,
            window_min: self.window_min,
            speed_kmh: self.speed_kmh,
            cost_mode: self.cost_mode,
        }
    }

    pub fn depot_point(&self) -> Option<LonLat> {
        self.depot.map(|[lon, lat]| LonLat::new(lon, lat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    #[serde(default)]
    pub landuse: LanduseMap,
    #[serde(default)]
    pub marginals: MarginalsConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
    #[serde(default)]
    pub vrp: VrpConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(base_dir);
        Ok(cfg)
    }

    /// Read and resolve a config file. Call [`validate`](Self::validate)
    /// after applying any overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve(&mut self, base: &Path) {
        for p in self.inputs.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut inputs = self.inputs.clone();
        if let Some(p) = inputs.paths_mut().into_iter().find(|p| !p.exists()) {
            return Err(Error::Config(format!("input file {} does not exist", p.display())));
        }
        let c = &self.calibrate;
        if !(c.alpha >= 0.0 && c.beta >= 0.0 && c.alpha.is_finite() && c.beta.is_finite()) {
            return Err(Error::Config("alpha and beta must be finite and non-negative".into()));
        }
        if c.node_limit == 0 {
            return Err(Error::Config("calibrate node_limit must be at least 1".into()));
        }
        validate_blocks(&self.marginals.blocks()).map_err(|e| Error::Config(e.to_string()))?;
        validate_bins(&self.marginals.bins()).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.network.fallback_speed_kmh > 0.0 && self.network.default_speed_kmh > 0.0) {
            return Err(Error::Config("network speeds must be positive".into()));
        }
        let v = &self.vrp;
        if v.fleet == 0 || v.capacity == 0 || v.instances == 0 {
            return Err(Error::Config("vrp fleet, capacity and instances must be at least 1".into()));
        }
        if !(v.budget_s > 0.0) {
            return Err(Error::Config("vrp budget_s must be positive".into()));
        }
        Ok(())
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

//! Stage orchestration over an output directory.
//!
//! Each stage reads earlier artifacts from disk, so `run` and the
//! stage-by-stage chain produce the same files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{self, CalibrationInputs};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::ingest::{load_region, tiered_candidates, CandidateSets, Region};
use crate::marginals::{read_departures, read_flows, read_travel_times, scale_flows, DepartureMarginal, ODFlowTable, TravelTimeMarginal};
use crate::network::{kmh_to_mps, load_graph, mean_speed_shift, RoadGraph};
use crate::rng::derive_seed;
use crate::synthesize::{build_cell_grid, read_trips, trips_from_grid, write_trips, CellGrid};
use crate::validate::{self, ValidationInputs, ValidationReport};
use crate::vrpbench::{self, centroid_depot, sample_instance, CostMode, Metrics, SolveOptions};

pub const BUILDINGS: &str = "buildings.csv";
pub const LOAD_REPORT: &str = "load_report.txt";
pub const INITIAL_TRIPS: &str = "initial_trips.csv";
pub const SHIFT: &str = "shift.json";
pub const CALIBRATED_TRIPS: &str = "calibrated_trips.csv";
pub const SOLVER_LOG: &str = "solver_log.csv";
pub const CALIBRATION_SUMMARY: &str = "calibration_summary.json";
pub const VALIDATION_TEXT: &str = "validation_report.txt";
pub const VALIDATION_CSV: &str = "validation.csv";
pub const FIG1: &str = "fig1_destinations.csv";
pub const FIG2: &str = "fig2_departures.csv";
pub const FIG3: &str = "fig3_travel_times.csv";
pub const BENCH_RESULTS: &str = "bench_results.csv";
pub const MANIFEST: &str = "manifest.json";

/// Artifacts whose contents depend on wall-clock time.
const VOLATILE: &[&str] = &[SOLVER_LOG];

/// Marginals scaled to the departure totals.
pub struct Marginals {
    pub flows: ODFlowTable,
    pub dep: DepartureMarginal,
    pub tt: TravelTimeMarginal,
    pub dropped_flows: usize,
}

pub fn load_marginals(cfg: &PipelineConfig, unit_ids: Option<&[String]>) -> Result<Marginals> {
    let mut raw = read_flows(&cfg.inputs.flows)?;
    let dropped_flows = match unit_ids {
        Some(ids) => raw.restrict_to(&ids.iter().cloned().collect()),
        None => 0,
    };
    let dep = read_departures(&cfg.inputs.departures, &cfg.marginals.blocks())?;
    let tt = read_travel_times(&cfg.inputs.travel_times, &cfg.marginals.bins(), cfg.marginals.open_bin_midpoint)?;
    let flows = scale_flows(&raw, &dep)?;
    Ok(Marginals {
        flows,
        dep,
        tt,
        dropped_flows,
    })
}

/// Region, candidates, marginals and the unshifted road graph.
pub struct Study {
    pub region: Region,
    pub cands: CandidateSets,
    pub marginals: Marginals,
    pub graph: RoadGraph,
}

pub fn load_study(cfg: &PipelineConfig) -> Result<Study> {
    cfg.validate()?;
    let region = load_region(
        &cfg.inputs.units,
        &cfg.inputs.buildings_osm,
        &cfg.inputs.buildings_msbf,
        &cfg.landuse,
    )?;
    let cands = tiered_candidates(&region.units, &region.buildings);
    let ids: Vec<String> = region.units.iter().map(|u| u.id.clone()).collect();
    let marginals = load_marginals(cfg, Some(&ids))?;
    let mut graph = load_graph(
        &cfg.inputs.network_nodes,
        &cfg.inputs.network_edges,
        &cfg.network.speed_defaults(),
    )?;
    graph.fallback_speed_mps = kmh_to_mps(cfg.network.fallback_speed_kmh);
    Ok(Study {
        region,
        cands,
        marginals,
        graph,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub psi: f64,
    pub synthetic_mean_min: f64,
    pub acs_mean_min: f64,
    pub trips: usize,
    pub fallback_legs: usize,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare_output(cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))
}

fn buildings_csv(cands: &CandidateSets) -> String {
    let mut out = String::from("building_id,geoid,lon,lat,source,landuse\n");
    for b in cands.buildings.values() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            b.id, b.unit_id, b.location.lon, b.location.lat, b.source, b.landuse
        );
    }
    out
}

/// Initial trips, mean-speed shift factor and load diagnostics.
pub fn synthesize(cfg: &PipelineConfig) -> Result<Shift> {
    let mut study = load_study(cfg)?;
    prepare_output(cfg)?;
    let m = &study.marginals;
    let grid = build_cell_grid(&m.flows, &m.dep, cfg.seed)?;
    let (trips, fallback_legs) = trips_from_grid(&grid, &study.cands, &m.dep.blocks, &study.graph, cfg.seed)?;
    log::info!("synthesize: {} initial trips, {fallback_legs} fallback legs", trips.len());

    let durations: Vec<f64> = trips.iter().map(|t| t.duration_min).collect();
    let psi = mean_speed_shift(&durations, &m.tt, &m.dep, &mut study.graph)?;
    let shift = Shift {
        psi,
        synthetic_mean_min: durations.iter().sum::<f64>() / durations.len() as f64,
        acs_mean_min: m.tt.mean_minutes(&m.dep)?,
        trips: trips.len(),
        fallback_legs,
    };
    log::info!("synthesize: psi = {psi:.6}");

    let mut report = study.region.report.render();
    let _ = writeln!(report, "flows dropped (unknown units): {}", m.dropped_flows);
    write_file(&cfg.output(LOAD_REPORT), &report)?;
    write_file(&cfg.output(BUILDINGS), &buildings_csv(&study.cands))?;
    write_trips(&cfg.output(INITIAL_TRIPS), &trips, false)?;
    write_json(&cfg.output(SHIFT), &shift)?;
    write_manifest(cfg)?;
    Ok(shift)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginSlack {
    pub geoid: String,
    pub eps_initial: u64,
    pub eps_calibrated: u64,
    pub zeta: u64,
    pub objective_initial: f64,
    pub objective: f64,
    /// Whether the solver proved the grid optimal within its node limit.
    pub optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub alpha: f64,
    pub beta: f64,
    pub eps_initial: u64,
    pub eps_calibrated: u64,
    pub origins: Vec<OriginSlack>,
    pub fallback_legs: usize,
}

/// Per-origin ILP on the shifted graph, then resampled trips.
pub fn calibrate(cfg: &PipelineConfig) -> Result<CalibrationSummary> {
    let mut study = load_study(cfg)?;
    let m = &study.marginals;
    let blocks = &m.dep.blocks;
    let initial = read_trips(&cfg.output(INITIAL_TRIPS), blocks)?;
    let shift: Shift = read_json(&cfg.output(SHIFT))?;
    study.graph.scale_speeds(shift.psi);

    let grid = CellGrid::from_trips(&initial, &m.flows, blocks.len())?;
    let centroids: BTreeMap<String, LonLat> =
        study.region.units.iter().map(|u| (u.id.clone(), u.centroid)).collect();
    let inputs = CalibrationInputs {
        grid: &grid,
        flows: &m.flows,
        dep: &m.dep,
        tt: &m.tt,
        centroids: &centroids,
        graph: &study.graph,
        alpha: cfg.calibrate.alpha,
        beta: cfg.calibrate.beta,
        node_limit: cfg.calibrate.node_limit,
    };
    let results = calibrate::calibrate_all(&inputs)?;
    let calibrated_grid = calibrate::calibrated_grid(&results, blocks.len(), &grid);
    let (trips, fallback_legs) = calibrate::resample(&calibrated_grid, &study.cands, blocks, &study.graph, cfg.seed)?;
    log::info!("calibrate: {} origins solved, {} calibrated trips", results.len(), trips.len());

    let origins: Vec<OriginSlack> = results
        .iter()
        .map(|r| {
            let at_m = r.problem.evaluate(&r.problem.initial);
            let at_a = r.problem.evaluate(&r.solution.counts);
            OriginSlack {
                geoid: r.problem.origin.clone(),
                eps_initial: at_m.eps_total,
                eps_calibrated: at_a.eps_total,
                zeta: at_a.zeta_total,
                objective_initial: at_m.objective,
                objective: at_a.objective,
                optimal: r.solution.optimal,
            }
        })
        .collect();
    let summary = CalibrationSummary {
        alpha: cfg.calibrate.alpha,
        beta: cfg.calibrate.beta,
        eps_initial: origins.iter().map(|o| o.eps_initial).sum(),
        eps_calibrated: origins.iter().map(|o| o.eps_calibrated).sum(),
        origins,
        fallback_legs,
    };
    calibrate::write_solver_log(&cfg.output(SOLVER_LOG), &results)?;
    write_trips(&cfg.output(CALIBRATED_TRIPS), &trips, true)?;
    write_json(&cfg.output(CALIBRATION_SUMMARY), &summary)?;
    write_manifest(cfg)?;
    Ok(summary)
}

/// Fidelity report over whatever trip sets exist.
pub fn validate(cfg: &PipelineConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let m = load_marginals(cfg, None)?;
    let blocks = &m.dep.blocks;
    let initial = read_trips(&cfg.output(INITIAL_TRIPS), blocks)?;
    let cal_path = cfg.output(CALIBRATED_TRIPS);
    let calibrated = if cal_path.exists() {
        Some(read_trips(&cal_path, blocks)?)
    } else {
        log::warn!("validate: no calibrated trips; calibrated metrics reported as absent");
        None
    };
    // The summary only describes the current calibrated trips.
    let summary: Option<CalibrationSummary> = match (&calibrated, cfg.output(CALIBRATION_SUMMARY)) {
        (Some(_), p) if p.exists() => Some(read_json(&p)?),
        _ => None,
    };
    let report = validate::validate(&ValidationInputs {
        flows: &m.flows,
        dep: &m.dep,
        tt: &m.tt,
        initial: &initial,
        calibrated: calibrated.as_deref(),
        slack_initial: summary.as_ref().map(|s| s.eps_initial),
        slack_calibrated: summary.as_ref().map(|s| s.eps_calibrated),
    })?;
    let final_trips = calibrated.as_deref().unwrap_or(&initial);
    write_file(&cfg.output(VALIDATION_TEXT), &report.to_text())?;
    write_file(&cfg.output(VALIDATION_CSV), &report.to_csv())?;
    write_file(&cfg.output(FIG1), &ValidationReport::fig1_csv(&m.flows, final_trips))?;
    write_file(&cfg.output(FIG2), &report.fig2_csv())?;
    write_file(&cfg.output(FIG3), &report.fig3_csv())?;
    write_manifest(cfg)?;
    if !report.passed() {
        log::warn!("validate: some checks failed; see {VALIDATION_TEXT}");
    }
    Ok(report)
}

/// Per-run overrides for the benchmark stage.
#[derive(Debug, Clone, Default)]
pub struct BenchOverrides {
    pub algorithms: Option<Vec<vrpbench::Algorithm>>,
    pub k: Option<usize>,
    pub budget_s: Option<f64>,
    pub capacity: Option<u32>,
    pub fleet: Option<usize>,
}

impl BenchOverrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let v = &mut cfg.vrp;
        if let Some(a) = &self.algorithms {
            v.algorithms = a.clone();
        }
        if let Some(k) = self.k {
            v.k = k;
        }
        if let Some(b) = self.budget_s {
            v.budget_s = b;
        }
        if let Some(c) = self.capacity {
            v.capacity = c;
        }
        if let Some(f) = self.fleet {
            v.fleet = f;
        }
    }
}

/// Sample instances from the calibrated trips and run every configured
/// algorithm. Returns metrics per instance.
pub fn bench(cfg: &PipelineConfig) -> Result<Vec<Vec<Metrics>>> {
    let cal_path = cfg.output(CALIBRATED_TRIPS);
    if !cal_path.exists() {
        return Err(Error::MissingArtifact(cal_path));
    }
    let mut study = load_study(cfg)?;
    let trips = read_trips(&cal_path, &study.marginals.dep.blocks)?;
    let v = &cfg.vrp;
    let depot = match v.depot_point() {
        Some(p) => p,
        None => centroid_depot(&study.region.units.iter().map(|u| u.centroid).collect::<Vec<_>>())?,
    };
    if v.cost_mode == CostMode::Network {
        let shift: Shift = read_json(&cfg.output(SHIFT))?;
        study.graph.scale_speeds(shift.psi);
    }
    let locations: BTreeMap<String, LonLat> =
        study.cands.buildings.iter().map(|(id, b)| (id.clone(), b.location)).collect();
    let bench_dir = cfg.output("bench");
    std::fs::create_dir_all(&bench_dir).map_err(|e| Error::io(&bench_dir, e))?;

    let mut all = Vec::with_capacity(v.instances);
    for i in 0..v.instances {
        let inst_seed = derive_seed(cfg.seed, &format!("vrp-instance-{i}"));
        let mut inst = sample_instance(&trips, &locations, v.k, depot, &v.params(), inst_seed)?;
        if v.cost_mode == CostMode::Network {
            inst.use_network(&study.graph)?;
        }
        inst.to_json(&bench_dir.join(format!("instance_{i}.json")))?;
        let opts = SolveOptions {
            time_budget_s: v.budget_s,
            max_iters: v.max_iters,
            seed: derive_seed(cfg.seed, &format!("vrp-solve-{i}")),
        };
        let rows: Vec<Metrics> = vrpbench::run_benchmark(&inst, &v.algorithms, &opts)?
            .into_iter()
            .map(|(_, m)| m)
            .collect();
        write_file(&bench_dir.join(format!("results_{i}.csv")), &vrpbench::results_csv(&rows))?;
        all.push(rows);
    }
    write_file(&cfg.output(BENCH_RESULTS), &vrpbench::results_csv(&mean_metrics(&all)))?;
    write_manifest(cfg)?;
    Ok(all)
}

/// Per-algorithm mean over instances.
fn mean_metrics(runs: &[Vec<Metrics>]) -> Vec<Metrics> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let n = runs.len() as f64;
    let mean_opt = |vals: Vec<Option<f64>>| -> Option<f64> {
        let vals: Option<Vec<f64>> = vals.into_iter().collect();
        vals.map(|v| v.iter().sum::<f64>() / n)
    };
    (0..first.len())
        .map(|a| {
            let col = |f: &dyn Fn(&Metrics) -> f64| runs.iter().map(|r| f(&r[a])).sum::<f64>() / n;
            Metrics {
                algorithm: first[a].algorithm.clone(),
                vmt: col(&|m| m.vmt),
                pmt: col(&|m| m.pmt),
                vmt_pmt: mean_opt(runs.iter().map(|r| r[a].vmt_pmt).collect()),
                empty_pct: mean_opt(runs.iter().map(|r| r[a].empty_pct).collect()),
                coverage_pct: col(&|m| m.coverage_pct),
                utilization_pct: col(&|m| m.utilization_pct),
                routes: (runs.iter().map(|r| r[a].routes).sum::<usize>() as f64 / n).round() as usize,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Contents vary between identical runs (timings).
    pub volatile: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    /// Hashes of the deterministic artifacts.
    pub fn stable_hashes(&self) -> BTreeMap<&str, &str> {
        self.files
            .iter()
            .filter(|f| !f.volatile)
            .map(|f| (f.path.as_str(), f.sha256.as_str()))
            .collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn collect_files(dir: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = rel.join(e.file_name());
        if e.path().is_dir() {
            collect_files(&e.path(), &name, out)?;
        } else if name != Path::new(MANIFEST) {
            out.push(name);
        }
    }
    Ok(())
}

/// Hash every file in the output directory into `manifest.json`.
pub fn write_manifest(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(&cfg.output_dir, Path::new(""), &mut files)?;
    let files = files
        .into_iter()
        .map(|rel| {
            let full = cfg.output_dir.join(&rel);
            let path = rel.to_string_lossy().replace('\\', "/");
            Ok(ManifestEntry {
                sha256: sha256_file(&full)?,
                bytes: std::fs::metadata(&full).map_err(|e| Error::io(&full, e))?.len(),
                volatile: VOLATILE.contains(&path.as_str()),
                path,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { seed: cfg.seed, files };
    write_json(&cfg.output(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(cfg: &PipelineConfig) -> Result<Manifest> {
    read_json(&cfg.output(MANIFEST))
}

/// All stages in order; the benchmark runs when enabled in the config.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    synthesize(cfg)?;
    calibrate(cfg)?;
    let report = validate(cfg)?;
    let failed = report.hard_failures();
    if !failed.is_empty() {
        return Err(Error::Validate(format!("checks failed: {}", failed.join(", "))));
    }
    if cfg.vrp.enabled {
        bench(cfg)?;
    }
    read_manifest(cfg)
}

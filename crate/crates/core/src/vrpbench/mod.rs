//! Capacitated pickup–delivery benchmarks sampled from synthetic trips.
//!
//! Node numbering inside an instance: 0 is the depot, `2i + 1` the pickup
//! and `2i + 2` the delivery of request `i`. Vehicles leave the depot at
//! minute 0 and may wait; a pickup must start within
//! `[earliest, earliest + window]`. Deliveries have no deadline.

mod heuristics;
mod route;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, LonLat};
use crate::network::RoadGraph;
use crate::rng::substream;
use crate::synthesize::TripRecord;

pub const METERS_PER_MILE: f64 = 1609.344;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    #[default]
    GreatCircle,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub pickup: LonLat,
    pub delivery: LonLat,
    /// Earliest pickup minute.
    pub earliest: f64,
    /// Pickup window width in minutes.
    pub window: f64,
    pub demand: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PDInstance {
    pub depot: LonLat,
    pub requests: Vec<Request>,
    pub fleet: usize,
    pub capacity: u32,
    pub speed_kmh: f64,
    pub cost_mode: CostMode,
    /// Explicit cost matrix in meters; required for network mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    matrix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrpParams {
    pub fleet: usize,
    pub capacity: u32,
    pub window_min: f64,
    pub speed_kmh: f64,
    pub cost_mode: CostMode,
}

impl Default for VrpParams {
    fn default() -> Self {
        Self {
            fleet: 30,
            capacity: 5,
            window_min: 30.0,
            speed_kmh: 30.0,
            cost_mode: CostMode::GreatCircle,
        }
    }
}

impl PDInstance {
    /// Great-circle instance.
    pub fn new(depot: LonLat, requests: Vec<Request>, fleet: usize, capacity: u32, speed_kmh: f64) -> Result<Self> {
        let mut inst = Self {
            depot,
            requests,
            fleet,
            capacity,
            speed_kmh,
            cost_mode: CostMode::GreatCircle,
            costs: None,
            matrix: Vec::new(),
        };
        inst.prepare()?;
        Ok(inst)
    }

    /// Switch to network distances: shortest-path length at minute 0
    /// between snapped points.
    pub fn use_network(&mut self, graph: &RoadGraph) -> Result<()> {
        let n = self.nodes();
        let points: Vec<LonLat> = (0..n).map(|i| self.point(i)).collect();
        let queries: Vec<(LonLat, LonLat, u32)> = points
            .iter()
            .flat_map(|&a| points.iter().map(move |&b| (a, b, 0)))
            .collect();
        let legs = graph.travel_many(&queries)?;
        let costs = legs
            .chunks(n)
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, l)| if i == j { 0.0 } else { l.route.distance_m })
                    .collect()
            })
            .collect();
        self.cost_mode = CostMode::Network;
        self.costs = Some(costs);
        self.prepare()
    }

    fn prepare(&mut self) -> Result<()> {
        if self.requests.iter().any(|r| r.demand != 1) {
            return Err(Error::Vrp("every request must carry exactly one passenger".into()));
        }
        if self.requests.iter().any(|r| !(r.window >= 0.0 && r.earliest.is_finite())) {
            return Err(Error::Vrp("request windows must be finite and non-negative".into()));
        }
        if !(self.speed_kmh > 0.0) {
            return Err(Error::Vrp("vehicle speed must be positive".into()));
        }
        let n = self.nodes();
        self.matrix = match (self.cost_mode, &self.costs) {
            (_, Some(c)) => {
                if c.len() != n || c.iter().any(|r| r.len() != n) {
                    return Err(Error::Vrp(format!("cost matrix must be {n}x{n}")));
                }
                c.iter().flatten().copied().collect()
            }
            (CostMode::Network, None) => {
                return Err(Error::Vrp("network cost mode needs an explicit cost matrix".into()));
            }
            (CostMode::GreatCircle, None) => {
                let pts: Vec<LonLat> = (0..n).map(|i| self.point(i)).collect();
                pts.iter().flat_map(|&a| pts.iter().map(move |&b| haversine_m(a, b))).collect()
            }
        };
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        2 * self.requests.len() + 1
    }

    pub fn point(&self, node: usize) -> LonLat {
        match node {
            0 => self.depot,
            n if n % 2 == 1 => self.requests[(n - 1) / 2].pickup,
            n => self.requests[(n - 2) / 2].delivery,
        }
    }

    pub fn cost(&self, a: usize, b: usize) -> f64 {
        self.matrix[a * self.nodes() + b]
    }

    /// Travel minutes between nodes at the vehicle speed.
    pub fn minutes(&self, a: usize, b: usize) -> f64 {
        self.cost(a, b) / (self.speed_kmh * 1000.0 / 60.0)
    }

    pub fn from_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut inst: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        inst.prepare()?;
        Ok(inst)
    }

    pub fn to_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Cost charged per unserved request; exceeds the largest possible
    /// detour of inserting one request.
    pub(crate) fn penalty(&self) -> f64 {
        4.0 * self.matrix.iter().fold(0.0, |m: f64, &c| m.max(c)) + 1.0
    }
}

pub fn pickup(r: usize) -> usize {
    2 * r + 1
}

pub fn delivery(r: usize) -> usize {
    2 * r + 2
}

pub fn request_of(node: usize) -> usize {
    (node - 1) / 2
}

/// Arithmetic mean of points, used as the default depot.
pub fn centroid_depot(points: &[LonLat]) -> Result<LonLat> {
    if points.is_empty() {
        return Err(Error::Vrp("no census units to place a depot".into()));
    }
    let n = points.len() as f64;
    Ok(LonLat::new(
        points.iter().map(|p| p.lon).sum::<f64>() / n,
        points.iter().map(|p| p.lat).sum::<f64>() / n,
    ))
}

/// `k` trips drawn uniformly without replacement, kept in trip order.
pub fn sample_instance(
    trips: &[TripRecord],
    locations: &BTreeMap<String, LonLat>,
    k: usize,
    depot: LonLat,
    params: &VrpParams,
    seed: u64,
) -> Result<PDInstance> {
    if k == 0 {
        return Err(Error::Vrp("sample size k must be positive".into()));
    }
    if k > trips.len() {
        return Err(Error::Vrp(format!("sample size {k} exceeds {} trips", trips.len())));
    }
    let mut rng = substream(seed, "vrp-sample", &k.to_string());
    let mut picked = index::sample(&mut rng, trips.len(), k).into_vec();
    picked.sort_unstable();
    let locate = |id: &str| {
        locations
            .get(id)
            .copied()
            .ok_or_else(|| Error::Vrp(format!("unknown building {id}")))
    };
    let requests = picked
        .into_iter()
        .map(|i| {
            let t = &trips[i];
            Ok(Request {
                pickup: locate(&t.origin_building)?,
                delivery: locate(&t.dest_building)?,
                earliest: t.depart_minute as f64,
                window: params.window_min,
                demand: 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PDInstance::new(depot, requests, params.fleet, params.capacity, params.speed_kmh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Insertion,
    ClarkeWright,
    SimulatedAnnealing,
    Lns,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Insertion,
        Algorithm::ClarkeWright,
        Algorithm::SimulatedAnnealing,
        Algorithm::Lns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Insertion => "insertion",
            Algorithm::ClarkeWright => "clarke-wright",
            Algorithm::SimulatedAnnealing => "simulated-annealing",
            Algorithm::Lns => "lns",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "insertion" => Ok(Algorithm::Insertion),
            "clarke-wright" | "cw" => Ok(Algorithm::ClarkeWright),
            "simulated-annealing" | "sa" => Ok(Algorithm::SimulatedAnnealing),
            "lns" => Ok(Algorithm::Lns),
            other => Err(Error::Vrp(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub time_budget_s: f64,
    /// Deterministic cap on improvement iterations.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_budget_s: 10.0,
            max_iters: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PDSolution {
    pub algorithm: Algorithm,
    /// Non-empty routes as node sequences, depot omitted at both ends.
    pub routes: Vec<Vec<usize>>,
    pub unserved: Vec<usize>,
    pub iterations: usize,
}

impl PDSolution {
    /// Total route distance in meters.
    pub fn distance_m(&self, inst: &PDInstance) -> f64 {
        self.routes.iter().map(|r| route::route_cost(inst, r)).sum()
    }
}

pub fn solve(inst: &PDInstance, algorithm: Algorithm, opts: &SolveOptions) -> Result<PDSolution> {
    if inst.fleet == 0 || inst.capacity == 0 {
        return Err(Error::Vrp("fleet and capacity must be at least 1".into()));
    }
    if !(opts.time_budget_s > 0.0) {
        return Err(Error::Vrp("time budget must be positive".into()));
    }
    let state = match algorithm {
        Algorithm::Insertion => heuristics::insertion(inst),
        Algorithm::ClarkeWright => heuristics::clarke_wright(inst),
        Algorithm::SimulatedAnnealing => heuristics::simulated_annealing(inst, opts),
        Algorithm::Lns => heuristics::lns(inst, opts),
    };
    let sol = state.into_solution(algorithm);
    verify(inst, &sol).map_err(|e| Error::Vrp(format!("{algorithm} produced an infeasible solution: {e}")))?;
    Ok(sol)
}

/// Check precedence, capacity, pickup windows, fleet size and that every
/// request is either served exactly once or listed as unserved.
pub fn verify(inst: &PDInstance, sol: &PDSolution) -> std::result::Result<(), String> {
    let k = inst.requests.len();
    if sol.routes.len() > inst.fleet {
        return Err(format!("{} routes for {} vehicles", sol.routes.len(), inst.fleet));
    }
    let mut seen = vec![0u8; k];
    for (ri, r) in sol.routes.iter().enumerate() {
        if r.is_empty() {
            return Err(format!("route {ri} is empty"));
        }
        let mut picked = vec![false; k];
        let (mut time, mut load, mut at) = (0.0f64, 0u32, 0usize);
        for &node in r {
            if node == 0 || node >= inst.nodes() {
                return Err(format!("route {ri}: invalid node {node}"));
            }
            time += inst.minutes(at, node);
            let q = request_of(node);
            let req = &inst.requests[q];
            if node % 2 == 1 {
                if picked[q] {
                    return Err(format!("request {q} picked up twice"));
                }
                if time > req.earliest + req.window + 1e-9 {
                    return Err(format!("request {q} picked up at {time:.3} after its window"));
                }
                time = time.max(req.earliest);
                picked[q] = true;
                seen[q] += 1;
                load += req.demand;
                if load > inst.capacity {
                    return Err(format!("route {ri}: load {load} exceeds capacity"));
                }
            } else {
                if !picked[q] {
                    return Err(format!("request {q} delivered before pickup"));
                }
                picked[q] = false;
                load -= req.demand;
            }
            at = node;
        }
        if load != 0 {
            return Err(format!("route {ri} ends with passengers on board"));
        }
    }
    for &u in &sol.unserved {
        if u >= k {
            return Err(format!("unserved request {u} out of range"));
        }
        seen[u] += 1;
    }
    if let Some(q) = seen.iter().position(|&c| c != 1) {
        return Err(format!("request {q} accounted for {} times", seen[q]));
    }
    Ok(())
}

/// Table II metrics. Distances are in miles; ratios are `None` when
/// undefined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub algorithm: String,
    pub vmt: f64,
    pub pmt: f64,
    pub vmt_pmt: Option<f64>,
    pub empty_pct: Option<f64>,
    pub coverage_pct: f64,
    pub utilization_pct: f64,
    pub routes: usize,
}

pub fn metrics(inst: &PDInstance, sol: &PDSolution) -> Metrics {
    let (mut vmt, mut empty) = (0.0, 0.0);
    for r in &sol.routes {
        let mut load = 0u32;
        let mut at = 0;
        for &node in r.iter().chain(std::iter::once(&0)) {
            let leg = inst.cost(at, node);
            vmt += leg;
            if load == 0 {
                empty += leg;
            }
            if node != 0 {
                let req = &inst.requests[request_of(node)];
                if node % 2 == 1 {
                    load += req.demand;
                } else {
                    load -= req.demand;
                }
            }
            at = node;
        }
    }
    let k = inst.requests.len();
    let served = k - sol.unserved.len();
    // Summed in request order so equal coverage gives bit-identical PMT.
    let pmt: f64 = (0..k)
        .filter(|r| !sol.unserved.contains(r))
        .map(|r| inst.cost(pickup(r), delivery(r)))
        .sum();
    Metrics {
        algorithm: sol.algorithm.to_string(),
        vmt: vmt / METERS_PER_MILE,
        pmt: pmt / METERS_PER_MILE,
        vmt_pmt: (pmt > 0.0).then(|| vmt / pmt),
        empty_pct: (vmt > 0.0).then(|| empty / vmt * 100.0),
        coverage_pct: if k == 0 { 0.0 } else { served as f64 / k as f64 * 100.0 },
        utilization_pct: sol.routes.len() as f64 / inst.fleet as f64 * 100.0,
        routes: sol.routes.len(),
    }
}

/// Solve with every algorithm concurrently; results in input order.
pub fn run_benchmark(
    inst: &PDInstance,
    algorithms: &[Algorithm],
    opts: &SolveOptions,
) -> Result<Vec<(PDSolution, Metrics)>> {
    algorithms
        .par_iter()
        .map(|&a| {
            let sol = solve(inst, a, opts)?;
            let m = metrics(inst, &sol);
            Ok((sol, m))
        })
        .collect()
}

pub fn results_csv(rows: &[Metrics]) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    let mut out = String::from("algorithm,vmt,pmt,vmt_pmt,empty_pct,coverage_pct,utilization_pct,routes\n");
    for m in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{},{},{:.2},{:.2},{}\n",
            m.algorithm,
            m.vmt,
            m.pmt,
            opt(m.vmt_pmt),
            opt(m.empty_pct),
            m.coverage_pct,
            m.utilization_pct,
            m.routes
        ));
    }
    out
}

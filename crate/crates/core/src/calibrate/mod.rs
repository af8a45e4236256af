//! Per-origin travel-time calibration.
//!
//! For one origin the decision grid is the integer trip count `a[d][t]`
//! per (destination, departure block). Destination and block totals are
//! hard constraints; travel-time bin totals are matched up to slacks
//! weighted by `alpha`; departures from the initial grid are penalized by
//! `beta`. Each cell belongs to the bin of its centroid-to-centroid travel
//! time at the block midpoint.
//!
//! The program is solved exactly with LP-based branch and bound. Among
//! equally good grids the one closest to the initial grid in L1 wins,
//! found by a second branch and bound with the primary objective capped
//! at its optimum.

pub mod simplex;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::ingest::CandidateSets;
use crate::marginals::{bin_index, Bin, Block, DepartureMarginal, ODFlowTable, TravelTimeMarginal};
use crate::network::RoadGraph;
use crate::rng::derive_seed;
use crate::synthesize::{trips_from_grid, CellGrid, OriginGrid, TripRecord};
use simplex::{LinearProgram, LpOutcome};

const INTEGRALITY_TOL: f64 = 1e-6;
/// Branch-and-bound nodes per origin before the search stops with its
/// best grid so far.
pub const DEFAULT_NODE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProblem {
    pub origin: String,
    pub n_o: u64,
    pub dest_targets: Vec<u64>,
    pub block_targets: Vec<u64>,
    pub bin_targets: Vec<u64>,
    /// Initial counts `m[d][t]`.
    pub initial: Vec<Vec<u64>>,
    /// Travel-time bin of each cell `[d][t]`.
    pub bin_of: Vec<Vec<usize>>,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSolution {
    pub counts: Vec<Vec<u64>>,
    pub eps_plus: Vec<f64>,
    pub eps_minus: Vec<f64>,
    pub zeta_plus: Vec<Vec<f64>>,
    pub zeta_minus: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub nodes: usize,
    /// False when the node limit stopped the search before optimality
    /// was proven.
    pub optimal: bool,
}

impl CalibrationSolution {
    pub fn eps_total(&self) -> f64 {
        self.eps_plus.iter().chain(&self.eps_minus).sum()
    }

    pub fn zeta_total(&self) -> f64 {
        self.zeta_plus.iter().chain(&self.zeta_minus).flatten().sum()
    }
}

/// Objective and slack totals of an integer grid, with slacks at their
/// smallest feasible values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub eps_total: u64,
    pub zeta_total: u64,
}

impl CalibrationProblem {
    fn dims(&self) -> (usize, usize, usize) {
        (self.dest_targets.len(), self.block_targets.len(), self.bin_targets.len())
    }

    pub fn validate(&self) -> Result<()> {
        let (nd, nt, nj) = self.dims();
        let sums = [
            self.dest_targets.iter().sum::<u64>(),
            self.block_targets.iter().sum::<u64>(),
            self.bin_targets.iter().sum::<u64>(),
        ];
        if sums.iter().any(|&s| s != self.n_o) {
            return Err(Error::Calibrate(format!(
                "origin {}: target sums (dest {}, block {}, bin {}) must all equal N_o = {}",
                self.origin, sums[0], sums[1], sums[2], self.n_o
            )));
        }
        fn shape_ok<T>(g: &[Vec<T>], nd: usize, nt: usize) -> bool {
            g.len() == nd && g.iter().all(|r| r.len() == nt)
        }
        if !shape_ok(&self.initial, nd, nt) || !shape_ok(&self.bin_of, nd, nt) {
            return Err(Error::Calibrate(format!("origin {}: grid shape mismatch", self.origin)));
        }
        if self.bin_of.iter().flatten().any(|&j| j >= nj) {
            return Err(Error::Calibrate(format!("origin {}: bin index out of range", self.origin)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Calibrate("alpha and beta must be non-negative".into()));
        }
        Ok(())
    }

    /// Whether `a` meets the destination and block totals exactly.
    pub fn is_feasible(&self, a: &[Vec<u64>]) -> bool {
        let (_, nt, _) = self.dims();
        let rows_ok = a.iter().zip(&self.dest_targets).all(|(r, &want)| r.iter().sum::<u64>() == want);
        let cols_ok = (0..nt).all(|t| a.iter().map(|r| r[t]).sum::<u64>() == self.block_targets[t]);
        a.len() == self.dest_targets.len() && rows_ok && cols_ok
    }

    pub fn evaluate(&self, a: &[Vec<u64>]) -> Evaluation {
        let mut bins = vec![0u64; self.bin_targets.len()];
        let mut zeta = 0u64;
        for (d, row) in a.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                bins[self.bin_of[d][t]] += v;
                zeta += v.abs_diff(self.initial[d][t]);
            }
        }
        let eps: u64 = bins.iter().zip(&self.bin_targets).map(|(b, t)| b.abs_diff(*t)).sum();
        Evaluation {
            objective: self.alpha * eps as f64 + self.beta * zeta as f64,
            eps_total: eps,
            zeta_total: zeta,
        }
    }

    fn solution_from(&self, a: Vec<Vec<u64>>, iterations: usize, nodes: usize, optimal: bool) -> CalibrationSolution {
        let mut bins = vec![0u64; self.bin_targets.len()];
        for (d, row) in a.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                bins[self.bin_of[d][t]] += v;
            }
        }
        let signed = |x: u64, y: u64| (x.saturating_sub(y) as f64, y.saturating_sub(x) as f64);
        let (eps_plus, eps_minus) = bins.iter().zip(&self.bin_targets).map(|(&b, &t)| signed(b, t)).unzip();
        let (zeta_plus, zeta_minus) = a
            .iter()
            .zip(&self.initial)
            .map(|(ar, mr)| ar.iter().zip(mr).map(|(&x, &y)| signed(x, y)).unzip())
            .unzip();
        CalibrationSolution {
            objective: self.evaluate(&a).objective,
            counts: a,
            eps_plus,
            eps_minus,
            zeta_plus,
            zeta_minus,
            iterations,
            nodes,
            optimal,
        }
    }
}

/// The LP model shared by both search stages. Only cells whose
/// destination and block targets are both positive can carry trips; the
/// others are fixed at zero.
struct Model<'a> {
    p: &'a CalibrationProblem,
    cells: Vec<(usize, usize)>,
    /// Upper bound on `a` per cell.
    cap: Vec<i64>,
    /// Cost of fixed-zero cells that start with trips.
    fixed_zeta: u64,
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Primary,
    /// Minimize L1 distance to the initial grid with the primary
    /// objective at most the given value.
    Closest(f64),
}

impl<'a> Model<'a> {
    fn new(p: &'a CalibrationProblem) -> Self {
        let mut cells = Vec::new();
        let mut cap = Vec::new();
        let mut fixed_zeta = 0;
        for (d, &dt) in p.dest_targets.iter().enumerate() {
            for (t, &bt) in p.block_targets.iter().enumerate() {
                if dt > 0 && bt > 0 {
                    cells.push((d, t));
                    cap.push(dt.min(bt) as i64);
                } else {
                    fixed_zeta += p.initial[d][t];
                }
            }
        }
        Self {
            p,
            cells,
            cap,
            fixed_zeta,
        }
    }

    fn m(&self, k: usize) -> i64 {
        let (d, t) = self.cells[k];
        self.p.initial[d][t] as i64
    }

    /// Variables: `(p_k, q_k)` per cell with `a_k = m_k + p_k - q_k`, then
    /// `(eps_minus_j, eps_plus_j)` per bin, then an optional cap slack.
    fn lp(&self, bounds: &[(i64, i64)], stage: Stage) -> LinearProgram {
        let p = self.p;
        let (nd, nt, nj) = p.dims();
        let (cell_cost, eps_cost) = match stage {
            Stage::Primary => (p.beta, p.alpha),
            Stage::Closest(_) => (1.0, 0.0),
        };
        let mut lp = LinearProgram::new(0);
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            let m = self.m(k);
            lp.add_var(cell_cost, (lo - m).max(0) as f64, (hi - m).max(0) as f64);
            lp.add_var(cell_cost, (m - hi).max(0) as f64, (m - lo).max(0) as f64);
        }
        let eps0 = lp.cost.len();
        for _ in 0..nj {
            lp.add_var(eps_cost, 0.0, f64::INFINITY);
            lp.add_var(eps_cost, 0.0, f64::INFINITY);
        }

        let mut dest_rows = vec![Vec::new(); nd];
        let mut block_rows = vec![Vec::new(); nt];
        let mut bin_rows = vec![Vec::new(); nj];
        let mut dest_rhs: Vec<f64> = p.dest_targets.iter().map(|&v| v as f64).collect();
        let mut block_rhs: Vec<f64> = p.block_targets.iter().map(|&v| v as f64).collect();
        let mut bin_rhs: Vec<f64> = p.bin_targets.iter().map(|&v| v as f64).collect();
        for (k, &(d, t)) in self.cells.iter().enumerate() {
            let j = p.bin_of[d][t];
            let m = self.m(k) as f64;
            for row in [&mut dest_rows[d], &mut block_rows[t], &mut bin_rows[j]] {
                row.push((2 * k, 1.0));
                row.push((2 * k + 1, -1.0));
            }
            dest_rhs[d] -= m;
            block_rhs[t] -= m;
            bin_rhs[j] -= m;
        }
        for (d, row) in dest_rows.into_iter().enumerate() {
            if p.dest_targets[d] > 0 {
                lp.add_row(row, dest_rhs[d]);
            }
        }
        for (t, row) in block_rows.into_iter().enumerate() {
            if p.block_targets[t] > 0 {
                lp.add_row(row, block_rhs[t]);
            }
        }
        for (j, mut row) in bin_rows.into_iter().enumerate() {
            row.push((eps0 + 2 * j, 1.0));
            row.push((eps0 + 2 * j + 1, -1.0));
            lp.add_row(row, bin_rhs[j]);
        }
        if let Stage::Closest(cap) = stage {
            let slack = lp.add_var(0.0, 0.0, f64::INFINITY);
            let mut row: Vec<(usize, f64)> = (0..2 * self.cells.len()).map(|v| (v, p.beta)).collect();
            row.extend((eps0..eps0 + 2 * nj).map(|v| (v, p.alpha)));
            row.push((slack, 1.0));
            lp.add_row(row, cap - p.beta * self.fixed_zeta as f64);
        }
        lp
    }

    fn grid(&self, cell_values: &[i64]) -> Vec<Vec<u64>> {
        let (nd, nt, _) = self.p.dims();
        let mut a = vec![vec![0u64; nt]; nd];
        for (k, &(d, t)) in self.cells.iter().enumerate() {
            a[d][t] = cell_values[k] as u64;
        }
        a
    }

    fn cell_values(&self, a: &[Vec<u64>]) -> Vec<i64> {
        self.cells.iter().map(|&(d, t)| a[d][t] as i64).collect()
    }
}

struct Search {
    iterations: usize,
    nodes: usize,
    node_limit: usize,
}

impl Search {
    /// Depth-first branch and bound over per-cell bounds on `a`.
    /// `incumbent` must be feasible for the stage.
    fn run(&mut self, model: &Model, stage: Stage, mut incumbent: Vec<i64>) -> Result<(Vec<i64>, bool)> {
        let p = model.p;
        let key = |vals: &[i64]| -> f64 {
            let e = p.evaluate(&model.grid(vals));
            match stage {
                Stage::Primary => e.objective,
                Stage::Closest(_) => e.zeta_total as f64,
            }
        };
        let mut best = key(&incumbent);
        let tol = 1e-9 * best.abs().max(1.0);
        // Primary: LP objective excludes the constant cost of fixed-zero cells.
        let offset = match stage {
            Stage::Primary => p.beta * model.fixed_zeta as f64,
            Stage::Closest(_) => model.fixed_zeta as f64,
        };
        // Every target sums to N_o, so the bin slack total is even and the
        // cell change total has the parity of N_o + sum(m). Objective values
        // therefore lie on a lattice `base + step * Z`, and a node is useful
        // only if the lattice point at or above its bound beats the best.
        let parity = (p.n_o + p.initial.iter().flatten().sum::<u64>()) % 2;
        let (base, step) = match stage {
            Stage::Primary => (p.beta * parity as f64, 2.0 * objective_step(p.alpha, p.beta)),
            Stage::Closest(_) => (parity as f64, 2.0),
        };
        let prunes = |bound: f64, best: f64| {
            if step > 0.0 {
                let next = base + ((bound - base) / step - 1e-6).ceil() * step;
                next >= best - 1e-6 * step
            } else {
                bound >= best - tol
            }
        };

        let root: Vec<(i64, i64)> = model.cap.iter().map(|&c| (0, c)).collect();
        let mut stack = vec![root];
        while let Some(bounds) = stack.pop() {
            if self.nodes >= self.node_limit {
                return Ok((incumbent, false));
            }
            self.nodes += 1;
            let (x, objective) = match simplex::solve(&model.lp(&bounds, stage)) {
                LpOutcome::Optimal { x, objective, iterations } => {
                    self.iterations += iterations;
                    (x, objective)
                }
                LpOutcome::Infeasible { iterations } => {
                    self.iterations += iterations;
                    continue;
                }
                LpOutcome::Unbounded { .. } | LpOutcome::IterationLimit { .. } => {
                    return Err(Error::Calibrate(format!(
                        "origin {}: LP relaxation failed to converge",
                        p.origin
                    )));
                }
            };
            if prunes(objective + offset, best) {
                continue;
            }
            let values: Vec<f64> = (0..model.cells.len())
                .map(|k| model.m(k) as f64 + x[2 * k] - x[2 * k + 1])
                .collect();
            let branch = values
                .iter()
                .enumerate()
                .map(|(k, v)| (k, (v - v.round()).abs()))
                .filter(|(_, f)| *f > INTEGRALITY_TOL)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match branch {
                None => {
                    let rounded: Vec<i64> = values.iter().map(|v| v.round() as i64).collect();
                    let grid = model.grid(&rounded);
                    if !p.is_feasible(&grid) {
                        return Err(Error::Calibrate(format!(
                            "origin {}: rounded LP vertex violates the marginals",
                            p.origin
                        )));
                    }
                    let within_cap = match stage {
                        Stage::Primary => true,
                        Stage::Closest(cap) => p.evaluate(&grid).objective <= cap,
                    };
                    let k = key(&rounded);
                    if within_cap && k < best - tol {
                        best = k;
                        incumbent = rounded;
                    }
                }
                Some((k, _)) => {
                    let v = values[k];
                    let (lo, hi) = bounds[k];
                    let mut down = bounds.clone();
                    down[k] = (lo, v.floor() as i64);
                    let mut up = bounds;
                    up[k] = (v.ceil() as i64, hi);
                    // Explore the nearer side first.
                    if v - v.floor() < 0.5 {
                        stack.push(up);
                        stack.push(down);
                    } else {
                        stack.push(down);
                        stack.push(up);
                    }
                }
            }
        }
        Ok((incumbent, true))
    }
}

/// Largest `g` such that `alpha` and `beta` are integer multiples of it,
/// for weights that are ratios with small denominators; 0 otherwise.
fn objective_step(alpha: f64, beta: f64) -> f64 {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    for q in 1..=1000u64 {
        let (a, b) = (alpha * q as f64, beta * q as f64);
        let near = |x: f64| (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0);
        if near(a) && near(b) && a.round() < 1e15 && b.round() < 1e15 {
            let g = gcd(a.round() as u64, b.round() as u64);
            return g as f64 / q as f64;
        }
    }
    0.0
}

/// Optimal calibrated grid for one origin.
pub fn solve_origin(p: &CalibrationProblem) -> Result<CalibrationSolution> {
    solve_origin_with_limit(p, DEFAULT_NODE_LIMIT)
}

pub fn solve_origin_with_limit(p: &CalibrationProblem, node_limit: usize) -> Result<CalibrationSolution> {
    p.validate()?;
    let model = Model::new(p);
    let mut search = Search {
        iterations: 0,
        nodes: 0,
        node_limit,
    };
    let start = if p.is_feasible(&p.initial) {
        model.cell_values(&p.initial)
    } else {
        feasible_start(&model)?
    };
    let (primary, exact) = search.run(&model, Stage::Primary, start)?;
    let optimum = p.evaluate(&model.grid(&primary)).objective;
    let cap = optimum + 1e-9 * optimum.abs().max(1.0);
    let (closest, exact2) = search.run(&model, Stage::Closest(cap), primary)?;
    if !(exact && exact2) {
        log::warn!(
            "origin {}: branch and bound hit the node limit ({node_limit}); solution may be suboptimal",
            p.origin
        );
    }
    Ok(p.solution_from(model.grid(&closest), search.iterations, search.nodes, exact && exact2))
}

/// Northwest-corner fill of the transportation polytope.
fn feasible_start(model: &Model) -> Result<Vec<i64>> {
    let p = model.p;
    let mut rows = p.dest_targets.clone();
    let mut cols = p.block_targets.clone();
    let mut a = vec![vec![0u64; cols.len()]; rows.len()];
    let (mut d, mut t) = (0, 0);
    while d < rows.len() && t < cols.len() {
        let v = rows[d].min(cols[t]);
        a[d][t] = v;
        rows[d] -= v;
        cols[t] -= v;
        if rows[d] == 0 {
            d += 1;
        } else {
            t += 1;
        }
    }
    if !p.is_feasible(&a) {
        return Err(Error::Calibrate(format!("origin {}: infeasible targets", p.origin)));
    }
    Ok(model.cell_values(&a))
}

/// Bin of the centroid-to-centroid travel time for every
/// (destination, block) cell of one origin.
pub fn bin_membership(
    origin_centroid: LonLat,
    dest_centroids: &[LonLat],
    blocks: &[Block],
    bins: &[Bin],
    graph: &RoadGraph,
) -> Result<Vec<Vec<usize>>> {
    let queries: Vec<(LonLat, LonLat, u32)> = dest_centroids
        .iter()
        .flat_map(|&d| blocks.iter().map(move |b| (origin_centroid, d, b.midpoint())))
        .collect();
    let legs = graph.travel_many(&queries)?;
    Ok(legs
        .chunks(blocks.len().max(1))
        .map(|row| row.iter().map(|l| bin_index(bins, l.route.duration_min)).collect())
        .collect())
}

/// Everything the solver log records about one origin.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginCalibration {
    pub problem: CalibrationProblem,
    pub solution: CalibrationSolution,
    pub wall_ms: f64,
}

pub struct CalibrationInputs<'a> {
    pub grid: &'a CellGrid,
    pub flows: &'a ODFlowTable,
    pub dep: &'a DepartureMarginal,
    pub tt: &'a TravelTimeMarginal,
    /// Unit centroids by id.
    pub centroids: &'a BTreeMap<String, LonLat>,
    pub graph: &'a RoadGraph,
    pub alpha: f64,
    pub beta: f64,
    pub node_limit: usize,
}

pub fn build_problem(inputs: &CalibrationInputs, origin: &str, og: &OriginGrid) -> Result<CalibrationProblem> {
    let centroid = |u: &str| {
        inputs.centroids.get(u).copied().ok_or_else(|| Error::Calibrate(format!("unknown census unit {u}")))
    };
    let row = inputs
        .flows
        .row(origin)
        .ok_or_else(|| Error::Calibrate(format!("origin {origin} has no flow row")))?;
    let n_o = inputs.dep.total(origin);
    let dest_centroids = og.dests.iter().map(|d| centroid(d)).collect::<Result<Vec<_>>>()?;
    Ok(CalibrationProblem {
        origin: origin.to_string(),
        n_o,
        dest_targets: row.iter().map(|c| c.scaled_int).collect(),
        block_targets: inputs.dep.targets(origin),
        bin_targets: inputs.tt.targets(origin, n_o)?,
        initial: og.counts.clone(),
        bin_of: bin_membership(
            centroid(origin)?,
            &dest_centroids,
            &inputs.dep.blocks,
            &inputs.tt.bins,
            inputs.graph,
        )?,
        alpha: inputs.alpha,
        beta: inputs.beta,
    })
}

/// Solve every origin independently; results come back in origin order.
pub fn calibrate_all(inputs: &CalibrationInputs) -> Result<Vec<OriginCalibration>> {
    let origins: Vec<(&String, &OriginGrid)> = inputs.grid.origins.iter().collect();
    origins
        .par_iter()
        .map(|(origin, og)| {
            let problem = build_problem(inputs, origin, og)?;
            let started = Instant::now();
            let solution = solve_origin_with_limit(&problem, inputs.node_limit)?;
            Ok(OriginCalibration {
                problem,
                solution,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect()
}

/// Calibrated cell grid assembled from per-origin solutions.
pub fn calibrated_grid(results: &[OriginCalibration], blocks: usize, template: &CellGrid) -> CellGrid {
    let origins = results
        .iter()
        .map(|r| {
            let dests = template.origins[&r.problem.origin].dests.clone();
            (
                r.problem.origin.clone(),
                OriginGrid {
                    dests,
                    counts: r.solution.counts.clone(),
                },
            )
        })
        .collect();
    CellGrid { blocks, origins }
}

/// Regenerate trips from calibrated counts with a seed stream distinct
/// from the initial sampling.
pub fn resample(
    grid: &CellGrid,
    cands: &CandidateSets,
    blocks: &[Block],
    graph: &RoadGraph,
    seed: u64,
) -> Result<(Vec<TripRecord>, usize)> {
    trips_from_grid(grid, cands, blocks, graph, derive_seed(seed, "calibrated"))
}

pub fn write_solver_log(path: &Path, results: &[OriginCalibration]) -> Result<()> {
    let mut out = String::from("geoid,objective,eps_total,zeta_total,iterations,nodes,optimal,wall_ms\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            r.problem.origin,
            r.solution.objective,
            r.solution.eps_total(),
            r.solution.zeta_total(),
            r.solution.iterations,
            r.solution.nodes,
            r.solution.optimal,
            r.wall_ms
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;

//! Construction heuristics and metaheuristics over a shared route state.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;

use super::route::{apply, best_insertion, feasible_cost, remove, route_cost, Insertion};
use super::{delivery, pickup, request_of, Algorithm, PDInstance, PDSolution, SolveOptions};
use crate::rng::{substream, StreamRng};

/// One slot per vehicle; empty slots are idle vehicles.
#[derive(Debug, Clone)]
pub(crate) struct State {
    routes: Vec<Vec<usize>>,
    costs: Vec<f64>,
    unserved: BTreeSet<usize>,
    penalty: f64,
    iterations: usize,
}

impl State {
    fn empty(inst: &PDInstance) -> Self {
        Self {
            routes: vec![Vec::new(); inst.fleet],
            costs: vec![0.0; inst.fleet],
            unserved: (0..inst.requests.len()).collect(),
            penalty: inst.penalty(),
            iterations: 0,
        }
    }

    fn total(&self) -> f64 {
        self.costs.iter().sum::<f64>() + self.penalty * self.unserved.len() as f64
    }

    /// Routes worth trying for an insertion: every used vehicle plus the
    /// first idle one (idle vehicles are interchangeable).
    fn candidate_routes(&self) -> impl Iterator<Item = usize> + '_ {
        let first_idle = self.routes.iter().position(|r| r.is_empty());
        (0..self.routes.len()).filter(move |&v| !self.routes[v].is_empty() || Some(v) == first_idle)
    }

    fn best_over_routes(&self, inst: &PDInstance, r: usize) -> Option<(usize, Insertion)> {
        let mut best: Option<(usize, Insertion)> = None;
        for v in self.candidate_routes() {
            if let Some(ins) = best_insertion(inst, &self.routes[v], r) {
                if best.map_or(true, |(_, b)| ins.delta < b.delta - 1e-9) {
                    best = Some((v, ins));
                }
            }
        }
        best
    }

    fn insert(&mut self, inst: &PDInstance, v: usize, r: usize, ins: Insertion) {
        apply(&mut self.routes[v], r, ins);
        self.costs[v] = route_cost(inst, &self.routes[v]);
        self.unserved.remove(&r);
    }

    fn route_of(&self, r: usize) -> Option<usize> {
        self.routes.iter().position(|route| route.contains(&pickup(r)))
    }

    /// Take `r` out of its route. Returns false when the shortened route
    /// would break a window (possible only with non-metric costs).
    fn unassign(&mut self, inst: &PDInstance, r: usize) -> bool {
        let Some(v) = self.route_of(r) else {
            return true;
        };
        let mut shorter = self.routes[v].clone();
        remove(&mut shorter, r);
        match feasible_cost(inst, &shorter) {
            Some(c) => {
                self.routes[v] = shorter;
                self.costs[v] = c;
                self.unserved.insert(r);
                true
            }
            None => false,
        }
    }

    pub(crate) fn into_solution(self, algorithm: Algorithm) -> PDSolution {
        PDSolution {
            algorithm,
            routes: self.routes.into_iter().filter(|r| !r.is_empty()).collect(),
            unserved: self.unserved.into_iter().collect(),
            iterations: self.iterations,
        }
    }
}

/// Requests by earliest pickup, then index.
fn by_earliest(inst: &PDInstance, reqs: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut out: Vec<usize> = reqs.into_iter().collect();
    out.sort_by(|&a, &b| inst.requests[a].earliest.total_cmp(&inst.requests[b].earliest).then(a.cmp(&b)));
    out
}

fn cheapest_insert_all(inst: &PDInstance, state: &mut State, reqs: &[usize]) {
    for &r in reqs {
        if let Some((v, ins)) = state.best_over_routes(inst, r) {
            state.insert(inst, v, r, ins);
        }
    }
}

/// Cheapest insertion in order of earliest pickup.
pub(crate) fn insertion(inst: &PDInstance) -> State {
    let mut state = State::empty(inst);
    let order = by_earliest(inst, 0..inst.requests.len());
    cheapest_insert_all(inst, &mut state, &order);
    state
}

/// Savings-based route concatenation. Each request starts on its own
/// route; routes are joined end to start in order of decreasing positive
/// savings while the joined route stays feasible. Routes beyond the fleet
/// are dissolved and their requests reinserted by cheapest insertion.
pub(crate) fn clarke_wright(inst: &PDInstance) -> State {
    let k = inst.requests.len();
    let mut routes: Vec<Option<Vec<usize>>> = (0..k)
        .map(|r| {
            let single = vec![pickup(r), delivery(r)];
            feasible_cost(inst, &single).map(|_| single)
        })
        .collect();
    // route_id[r]: which slot in `routes` currently holds request r.
    let mut route_id: Vec<usize> = (0..k).collect();

    let mut savings = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i != j && routes[i].is_some() && routes[j].is_some() {
                let s = inst.cost(delivery(i), 0) + inst.cost(0, pickup(j)) - inst.cost(delivery(i), pickup(j));
                if s > 1e-9 {
                    savings.push((s, i, j));
                }
            }
        }
    }
    savings.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    for (_, i, j) in savings {
        let (a, b) = (route_id[i], route_id[j]);
        if a == b {
            continue;
        }
        let (Some(ra), Some(rb)) = (&routes[a], &routes[b]) else {
            continue;
        };
        if ra.last() != Some(&delivery(i)) || rb.first() != Some(&pickup(j)) {
            continue;
        }
        let joined: Vec<usize> = ra.iter().chain(rb).copied().collect();
        if feasible_cost(inst, &joined).is_none() {
            continue;
        }
        for &s in rb {
            route_id[request_of(s)] = a;
        }
        routes[a] = Some(joined);
        routes[b] = None;
    }

    let mut built: Vec<Vec<usize>> = routes.into_iter().flatten().collect();
    // Keep the fullest routes, then the cheapest, then by first stop.
    built.sort_by(|x, y| {
        y.len()
            .cmp(&x.len())
            .then(route_cost(inst, x).total_cmp(&route_cost(inst, y)))
            .then(x[0].cmp(&y[0]))
    });
    let dissolved: Vec<usize> = built
        .iter()
        .skip(inst.fleet)
        .flat_map(|r| r.iter().filter(|&&s| s % 2 == 1).map(|&s| request_of(s)))
        .collect();
    built.truncate(inst.fleet);

    let mut state = State::empty(inst);
    for (v, r) in built.into_iter().enumerate() {
        for &s in r.iter().filter(|&&s| s % 2 == 1) {
            state.unserved.remove(&request_of(s));
        }
        state.costs[v] = route_cost(inst, &r);
        state.routes[v] = r;
    }
    let order = by_earliest(inst, dissolved);
    cheapest_insert_all(inst, &mut state, &order);
    state
}

struct Clock {
    start: Instant,
    budget: Duration,
}

impl Clock {
    fn new(budget_s: f64) -> Self {
        Self {
            start: Instant::now(),
            budget: Duration::try_from_secs_f64(budget_s).unwrap_or(Duration::MAX),
        }
    }

    fn expired(&self, iter: usize) -> bool {
        iter % 32 == 0 && self.start.elapsed() >= self.budget
    }
}

fn mean_direct_cost(inst: &PDInstance) -> f64 {
    let k = inst.requests.len().max(1);
    (0..inst.requests.len()).map(|r| inst.cost(pickup(r), delivery(r))).sum::<f64>() / k as f64
}

const SA_COOLING: f64 = 0.999;

/// Relocate moves from the insertion solution under a geometric
/// temperature schedule `T_k = T0 * 0.999^k`.
pub(crate) fn simulated_annealing(inst: &PDInstance, opts: &SolveOptions) -> State {
    let mut current = insertion(inst);
    let k = inst.requests.len();
    if k == 0 {
        return current;
    }
    let mut best = current.clone();
    let mut rng = substream(opts.seed, "vrp-sa", "");
    let clock = Clock::new(opts.time_budget_s);
    let t0 = 0.1 * mean_direct_cost(inst).max(1.0);
    let mut temp = t0;
    let mut iter = 0;
    while iter < opts.max_iters && !clock.expired(iter) {
        iter += 1;
        temp *= SA_COOLING;
        let r = rng.gen_range(0..k);
        let v = rng.gen_range(0..inst.fleet);
        let before = current.total();
        let mut next = current.clone();
        if !next.unassign(inst, r) {
            continue;
        }
        if let Some(ins) = best_insertion(inst, &next.routes[v], r) {
            next.insert(inst, v, r, ins);
        }
        let delta = next.total() - before;
        if delta < 0.0 || rng.gen::<f64>() < (-delta / temp).exp() {
            current = next;
            if current.total() < best.total() - 1e-9 {
                best = current.clone();
            }
        }
    }
    best.iterations = iter;
    best
}

const SHAW_DETERMINISM: i32 = 6;
const LNS_MAX_REMOVE: usize = 10;

/// Shaw relatedness: pickup and delivery proximity plus window distance
/// converted to meters at the vehicle speed. Lower is more related.
fn relatedness(inst: &PDInstance, a: usize, b: usize) -> f64 {
    let speed_m_per_min = inst.speed_kmh * 1000.0 / 60.0;
    inst.cost(pickup(a), pickup(b))
        + inst.cost(delivery(a), delivery(b))
        + speed_m_per_min * (inst.requests[a].earliest - inst.requests[b].earliest).abs()
}

fn shaw_removal(inst: &PDInstance, state: &mut State, q: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut served: Vec<usize> = (0..inst.requests.len()).filter(|r| !state.unserved.contains(r)).collect();
    let mut removed = Vec::with_capacity(q);
    let first = served.swap_remove(rng.gen_range(0..served.len()));
    removed.push(first);
    while removed.len() < q && !served.is_empty() {
        let anchor = removed[rng.gen_range(0..removed.len())];
        served.sort_by(|&a, &b| {
            relatedness(inst, anchor, a)
                .total_cmp(&relatedness(inst, anchor, b))
                .then(a.cmp(&b))
        });
        let y: f64 = rng.gen();
        let pick = ((y.powi(SHAW_DETERMINISM)) * served.len() as f64) as usize;
        removed.push(served.remove(pick.min(served.len() - 1)));
    }
    removed.retain(|&r| state.unassign(inst, r));
    removed
}

/// Regret-2 repair: repeatedly insert the request whose best and
/// second-best route options differ most.
fn regret_repair(inst: &PDInstance, state: &mut State) {
    let pending: Vec<usize> = state.unserved.iter().copied().collect();
    let fleet = inst.fleet;
    // options[i][v]: best insertion of pending[i] into used route v.
    let mut options: Vec<Vec<Option<Insertion>>> = pending
        .iter()
        .map(|&r| {
            (0..fleet)
                .map(|v| {
                    (!state.routes[v].is_empty())
                        .then(|| best_insertion(inst, &state.routes[v], r))
                        .flatten()
                })
                .collect()
        })
        .collect();
    let idle: Vec<Option<Insertion>> = pending.iter().map(|&r| best_insertion(inst, &[], r)).collect();
    let mut open: Vec<usize> = (0..pending.len()).collect();

    loop {
        let first_idle = state.routes.iter().position(|r| r.is_empty());
        let mut choice: Option<(f64, f64, usize, usize, Insertion)> = None;
        for &i in &open {
            let mut opts: Vec<(f64, usize, Insertion)> = options[i]
                .iter()
                .enumerate()
                .filter_map(|(v, o)| o.map(|ins| (ins.delta, v, ins)))
                .collect();
            if let (Some(v), Some(ins)) = (first_idle, idle[i]) {
                opts.push((ins.delta, v, ins));
            }
            if opts.is_empty() {
                continue;
            }
            opts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let regret = opts.get(1).map_or(f64::INFINITY, |o| o.0 - opts[0].0);
            // Largest regret, then cheapest best option, then request index.
            let key = (regret, opts[0].0, pending[i]);
            let better = choice.as_ref().map_or(true, |c| {
                key.0
                    .total_cmp(&c.0)
                    .reverse()
                    .then(key.1.total_cmp(&c.1))
                    .then(key.2.cmp(&pending[c.2]))
                    .is_lt()
            });
            if better {
                choice = Some((regret, opts[0].0, i, opts[0].1, opts[0].2));
            }
        }
        let Some((_, _, i, v, ins)) = choice else {
            break;
        };
        let r = pending[i];
        state.insert(inst, v, r, ins);
        open.retain(|&x| x != i);
        for &j in &open {
            options[j][v] = best_insertion(inst, &state.routes[v], pending[j]);
        }
    }
}

/// Shaw removal and regret-2 repair from the insertion solution,
/// accepting non-worsening candidates.
pub(crate) fn lns(inst: &PDInstance, opts: &SolveOptions) -> State {
    let mut current = insertion(inst);
    let mut best = current.clone();
    let mut rng = substream(opts.seed, "vrp-lns", "");
    let clock = Clock::new(opts.time_budget_s);
    let mut iter = 0;
    while iter < opts.max_iters && !clock.expired(iter) {
        iter += 1;
        let served = inst.requests.len() - current.unserved.len();
        if served == 0 {
            break;
        }
        let q = rng.gen_range(1..=served.min(LNS_MAX_REMOVE));
        let mut next = current.clone();
        shaw_removal(inst, &mut next, q, &mut rng);
        regret_repair(inst, &mut next);
        if next.total() <= current.total() + 1e-9 {
            current = next;
            if current.total() < best.total() - 1e-9 {
                best = current.clone();
            }
        }
    }
    best.iterations = iter;
    best
}

//! Single-route evaluation and request insertion.

use super::{delivery, pickup, request_of, PDInstance};

const TIME_EPS: f64 = 1e-9;

/// Depot-to-depot distance of a stop sequence.
pub(crate) fn route_cost(inst: &PDInstance, stops: &[usize]) -> f64 {
    let mut at = 0;
    let mut total = 0.0;
    for &s in stops.iter().chain(std::iter::once(&0)) {
        total += inst.cost(at, s);
        at = s;
    }
    total
}

/// Distance of a stop sequence if it respects precedence, capacity and
/// pickup windows.
pub(crate) fn feasible_cost(inst: &PDInstance, stops: &[usize]) -> Option<f64> {
    let (mut time, mut load, mut at, mut total) = (0.0f64, 0u32, 0usize, 0.0);
    let mut onboard: Vec<usize> = Vec::with_capacity(inst.capacity as usize);
    for &s in stops {
        total += inst.cost(at, s);
        time += inst.minutes(at, s);
        let q = request_of(s);
        let req = &inst.requests[q];
        if s % 2 == 1 {
            if time > req.earliest + req.window + TIME_EPS {
                return None;
            }
            time = time.max(req.earliest);
            load += req.demand;
            if load > inst.capacity {
                return None;
            }
            onboard.push(q);
        } else {
            let pos = onboard.iter().position(|&o| o == q)?;
            onboard.swap_remove(pos);
            load -= req.demand;
        }
        at = s;
    }
    if !onboard.is_empty() {
        return None;
    }
    Some(total + inst.cost(at, 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Insertion {
    pub delta: f64,
    /// Pickup goes before original index `pickup_at`, delivery before
    /// original index `delivery_at` (`pickup_at <= delivery_at`).
    pub pickup_at: usize,
    pub delivery_at: usize,
}

/// Arrival, service start, load and time slack at each stop of a
/// feasible route. `slack[k]` is the largest delay in arriving at stop `k`
/// that keeps stops `k..` within their pickup windows.
struct Schedule {
    arrive: Vec<f64>,
    start: Vec<f64>,
    load: Vec<u32>,
    slack: Vec<f64>,
}

fn schedule(inst: &PDInstance, stops: &[usize]) -> Schedule {
    let n = stops.len();
    let (mut arrive, mut start, mut load) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut time, mut onboard, mut at) = (0.0f64, 0u32, 0usize);
    for &s in stops {
        time += inst.minutes(at, s);
        arrive.push(time);
        let req = &inst.requests[request_of(s)];
        if s % 2 == 1 {
            time = time.max(req.earliest);
            onboard += req.demand;
        } else {
            onboard -= req.demand;
        }
        start.push(time);
        load.push(onboard);
        at = s;
    }
    let mut slack = vec![f64::INFINITY; n + 1];
    for k in (0..n).rev() {
        let req = &inst.requests[request_of(stops[k])];
        let own = if stops[k] % 2 == 1 {
            req.earliest + req.window + TIME_EPS - arrive[k]
        } else {
            f64::INFINITY
        };
        slack[k] = own.min(start[k] - arrive[k] + slack[k + 1]);
    }
    Schedule {
        arrive,
        start,
        load,
        slack,
    }
}

/// Cheapest feasible insertion of request `r` into the feasible route
/// `stops`. Ties keep the earliest position pair.
pub(crate) fn best_insertion(inst: &PDInstance, stops: &[usize], r: usize) -> Option<Insertion> {
    let best = scan_insertions(inst, stops, r)?;
    // The slack test can disagree with a full simulation only by rounding
    // at a window boundary; confirm and fall back to enumeration.
    let mut trial = stops.to_vec();
    apply(&mut trial, r, best);
    if feasible_cost(inst, &trial).is_some() {
        Some(best)
    } else {
        enumerate_insertions(inst, stops, r)
    }
}

fn scan_insertions(inst: &PDInstance, stops: &[usize], r: usize) -> Option<Insertion> {
    let n = stops.len();
    let sc = schedule(inst, stops);
    let req = &inst.requests[r];
    let (p, d) = (pickup(r), delivery(r));
    let deadline = req.earliest + req.window + TIME_EPS;
    let node = |k: usize| if k < n { stops[k] } else { 0 };
    let mut best: Option<Insertion> = None;
    for i in 0..=n {
        let (prev, depart, before) = if i == 0 { (0, 0.0, 0) } else { (stops[i - 1], sc.start[i - 1], sc.load[i - 1]) };
        if before + req.demand > inst.capacity {
            continue;
        }
        let reach = depart + inst.minutes(prev, p);
        if reach > deadline {
            continue;
        }
        let pickup_delta = inst.cost(prev, p) + inst.cost(p, node(i)) - inst.cost(prev, node(i));
        // Walk the delivery slot forward, simulating the stops between
        // pickup and delivery with the request on board.
        let (mut cur, mut time) = (p, reach.max(req.earliest));
        for j in i..=n {
            let at_d = time + inst.minutes(cur, d);
            let ok = j == n || at_d + inst.minutes(d, stops[j]) - sc.arrive[j] <= sc.slack[j];
            if ok {
                let delta = if i == j {
                    inst.cost(prev, p) + inst.cost(p, d) + inst.cost(d, node(j)) - inst.cost(prev, node(j))
                } else {
                    pickup_delta + inst.cost(cur, d) + inst.cost(d, node(j)) - inst.cost(cur, node(j))
                };
                if best.map_or(true, |b| delta < b.delta - 1e-9) {
                    best = Some(Insertion {
                        delta,
                        pickup_at: i,
                        delivery_at: j,
                    });
                }
            }
            if j == n || sc.load[j] + req.demand > inst.capacity {
                break;
            }
            let s = stops[j];
            time += inst.minutes(cur, s);
            if s % 2 == 1 {
                let q = &inst.requests[request_of(s)];
                if time > q.earliest + q.window + TIME_EPS {
                    break;
                }
                time = time.max(q.earliest);
            }
            cur = s;
        }
    }
    best
}

/// Reference version of [`best_insertion`]: simulate every position pair.
pub(crate) fn enumerate_insertions(inst: &PDInstance, stops: &[usize], r: usize) -> Option<Insertion> {
    let n = stops.len();
    let base = route_cost(inst, stops);
    let mut buf = Vec::with_capacity(n + 2);
    let mut best: Option<Insertion> = None;
    for i in 0..=n {
        for j in i..=n {
            buf.clear();
            buf.extend_from_slice(&stops[..i]);
            buf.push(pickup(r));
            buf.extend_from_slice(&stops[i..j]);
            buf.push(delivery(r));
            buf.extend_from_slice(&stops[j..]);
            if let Some(c) = feasible_cost(inst, &buf) {
                let delta = c - base;
                if best.map_or(true, |b| delta < b.delta - 1e-9) {
                    best = Some(Insertion {
                        delta,
                        pickup_at: i,
                        delivery_at: j,
                    });
                }
            }
        }
    }
    best
}

pub(crate) fn apply(stops: &mut Vec<usize>, r: usize, ins: Insertion) {
    stops.insert(ins.delivery_at, delivery(r));
    stops.insert(ins.pickup_at, pickup(r));
}

pub(crate) fn remove(stops: &mut Vec<usize>, r: usize) {
    stops.retain(|&s| s != pickup(r) && s != delivery(r));
}

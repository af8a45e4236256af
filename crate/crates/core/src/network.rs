//! Directed road graph with hourly speed profiles.
//!
//! Routes minimize duration with every edge speed frozen at the hour of
//! departure. Among equal-duration paths the shorter one wins.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_m, LonLat};
use crate::marginals::{DepartureMarginal, TravelTimeMarginal};

pub const HOURS: usize = 24;
/// Duration assigned to trips that start and end on the same node.
pub const SAME_NODE_FLOOR_MIN: f64 = 0.1;

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: u64,
    pub location: LonLat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub length_m: f64,
    pub speeds: [f64; HOURS],
}

/// Speeds used when an edge row lacks hourly values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedDefaults {
    pub highway_kmh: BTreeMap<String, f64>,
    pub other_kmh: f64,
}

impl Default for SpeedDefaults {
    fn default() -> Self {
        let highway_kmh = [
            ("motorway", 100.0),
            ("trunk", 80.0),
            ("primary", 65.0),
            ("secondary", 55.0),
            ("tertiary", 45.0),
            ("unclassified", 40.0),
            ("residential", 30.0),
            ("service", 20.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            highway_kmh,
            other_kmh: 40.0,
        }
    }
}

impl SpeedDefaults {
    pub fn speed_mps(&self, maxspeed_kmh: Option<f64>, highway: Option<&str>) -> f64 {
        let kmh = maxspeed_kmh
            .filter(|v| *v > 0.0)
            .or_else(|| highway.and_then(|h| self.highway_kmh.get(h).copied()))
            .unwrap_or(self.other_kmh);
        kmh_to_mps(kmh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteResult {
    pub distance_m: f64,
    pub duration_min: f64,
    pub speed_mps: f64,
}

impl RouteResult {
    fn new(distance_m: f64, duration_min: f64) -> Self {
        Self {
            distance_m,
            duration_min,
            speed_mps: distance_m / (duration_min * 60.0),
        }
    }

    fn same_node() -> Self {
        Self::new(0.0, SAME_NODE_FLOOR_MIN)
    }
}

/// A trip leg between two points: the route plus whether the
/// great-circle fallback was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub route: RouteResult,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct RoadGraph {
    /// Sorted by id.
    nodes: Vec<Node>,
    index: HashMap<u64, usize>,
    adjacency: Vec<Vec<Edge>>,
    /// Speed for disconnected pairs, scaled together with edge speeds.
    pub fallback_speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Label {
    duration_s: f64,
    distance_m: f64,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        self.duration_s
            .total_cmp(&other.duration_s)
            .then(self.distance_m.total_cmp(&other.distance_m))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RoadGraph {
    /// Build from nodes and `(from_id, to_id, length_m, speeds)` edges.
    pub fn new(mut nodes: Vec<Node>, edges: Vec<(u64, u64, f64, [f64; HOURS])>) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        if let Some(w) = nodes.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Network(format!("duplicate node id {}", w[0].id)));
        }
        let index: HashMap<u64, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (k, (from, to, length_m, speeds)) in edges.into_iter().enumerate() {
            let (&fi, &ti) = match (index.get(&from), index.get(&to)) {
                (Some(f), Some(t)) => (f, t),
                _ => return Err(Error::Network(format!("edge {k}: endpoint {from}->{to} not in nodes"))),
            };
            if !(length_m > 0.0 && length_m.is_finite()) {
                return Err(Error::Network(format!("edge {k}: length must be positive")));
            }
            if speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::Network(format!("edge {k}: speeds must be positive")));
            }
            adjacency[fi].push(Edge {
                to: ti,
                length_m,
                speeds,
            });
        }
        Ok(Self {
            nodes,
            index,
            adjacency,
            fallback_speed_mps: kmh_to_mps(30.0),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (u64, &Edge)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(move |(i, es)| es.iter().map(move |e| (self.nodes[i].id, e)))
    }

    pub fn node_id(&self, idx: usize) -> u64 {
        self.nodes[idx].id
    }

    fn idx(&self, id: u64) -> Result<usize> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Network(format!("unknown node {id}")))
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn snap_index(&self, p: LonLat) -> Result<usize> {
        if self.nodes.is_empty() {
            return Err(Error::Network("cannot snap to an empty graph".into()));
        }
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = haversine_m(p, n.location);
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(best.1)
    }

    /// Nearest node by great-circle distance; ties go to the smaller id.
    pub fn snap(&self, p: LonLat) -> Result<u64> {
        self.snap_index(p).map(|i| self.nodes[i].id)
    }

    /// Single-source labels at a fixed hour: `(duration_s, distance_m)`.
    fn tree(&self, source: usize, hour: usize) -> Vec<Option<Label>> {
        let mut best: Vec<Option<Label>> = vec![None; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        best[source] = Some(Label {
            duration_s: 0.0,
            distance_m: 0.0,
        });
        heap.push(std::cmp::Reverse((best[source].unwrap(), source)));
        while let Some(std::cmp::Reverse((label, u))) = heap.pop() {
            if best[u].is_some_and(|b| b < label) {
                continue;
            }
            for e in &self.adjacency[u] {
                let next = Label {
                    duration_s: label.duration_s + e.length_m / e.speeds[hour],
                    distance_m: label.distance_m + e.length_m,
                };
                if best[e.to].is_none_or(|b| next < b) {
                    best[e.to] = Some(next);
                    heap.push(std::cmp::Reverse((next, e.to)));
                }
            }
        }
        best
    }

    fn result_from(&self, from: usize, to: usize, label: Option<Label>) -> Result<RouteResult> {
        if from == to {
            return Ok(RouteResult::same_node());
        }
        let l = label.ok_or(Error::Unreachable {
            from: self.nodes[from].id,
            to: self.nodes[to].id,
        })?;
        Ok(RouteResult::new(l.distance_m, l.duration_s / 60.0))
    }

    /// Minimum-duration route between two nodes, speeds frozen at the
    /// departure hour.
    pub fn route(&self, from: u64, to: u64, depart_minute: u32) -> Result<RouteResult> {
        let (fi, ti) = (self.idx(from)?, self.idx(to)?);
        let hour = hour_of(depart_minute);
        if fi == ti {
            return Ok(RouteResult::same_node());
        }
        let tree = self.tree(fi, hour);
        self.result_from(fi, ti, tree[ti])
    }

    fn fallback_leg(&self, a: LonLat, b: LonLat) -> Leg {
        let d = haversine_m(a, b);
        let route = if d == 0.0 {
            RouteResult::same_node()
        } else {
            RouteResult::new(d, (d / self.fallback_speed_mps / 60.0).max(SAME_NODE_FLOOR_MIN))
        };
        Leg { route, fallback: true }
    }

    /// Batched point-to-point travel. Each query is `(from, to, depart_minute)`.
    /// Shortest-path trees are shared across queries with the same snapped
    /// source and hour; results come back in query order.
    pub fn travel_many(&self, queries: &[(LonLat, LonLat, u32)]) -> Result<Vec<Leg>> {
        let snapped: Vec<(usize, usize, usize)> = queries
            .par_iter()
            .map(|(a, b, m)| Ok((self.snap_index(*a)?, self.snap_index(*b)?, hour_of(*m))))
            .collect::<Result<_>>()?;
        let mut keys: Vec<(usize, usize)> = snapped
            .iter()
            .filter(|(f, t, _)| f != t)
            .map(|&(f, _, h)| (f, h))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let trees: HashMap<(usize, usize), Vec<Option<Label>>> =
            keys.par_iter().map(|&(f, h)| ((f, h), self.tree(f, h))).collect();
        Ok(snapped
            .iter()
            .zip(queries)
            .map(|(&(f, t, h), (a, b, _))| {
                if f == t {
                    return Leg {
                        route: RouteResult::same_node(),
                        fallback: false,
                    };
                }
                match trees[&(f, h)][t] {
                    Some(l) => Leg {
                        route: RouteResult::new(l.distance_m, l.duration_s / 60.0),
                        fallback: false,
                    },
                    None => self.fallback_leg(*a, *b),
                }
            })
            .collect())
    }

    pub fn travel(&self, a: LonLat, b: LonLat, depart_minute: u32) -> Result<Leg> {
        Ok(self.travel_many(&[(a, b, depart_minute)])?[0])
    }

    /// Multiply every edge speed (and the fallback speed) by `factor`.
    pub fn scale_speeds(&mut self, factor: f64) {
        for e in self.adjacency.iter_mut().flatten() {
            for s in e.speeds.iter_mut() {
                *s *= factor;
            }
        }
        self.fallback_speed_mps *= factor;
    }
}

pub fn hour_of(minute: u32) -> usize {
    ((minute / 60) as usize).min(HOURS - 1)
}

/// Global correction `psi = mean(durations) / acs_mean`; every road speed
/// is multiplied by `psi`. Returns `psi`.
pub fn mean_speed_shift(
    durations_min: &[f64],
    acs: &TravelTimeMarginal,
    dep: &DepartureMarginal,
    graph: &mut RoadGraph,
) -> Result<f64> {
    if durations_min.is_empty() {
        return Err(Error::Network("mean speed shift needs at least one trip".into()));
    }
    let acs_mean = acs.mean_minutes(dep)?;
    if acs_mean <= 0.0 {
        return Err(Error::Network("ACS mean travel time is zero".into()));
    }
    let syn_mean = durations_min.iter().sum::<f64>() / durations_min.len() as f64;
    let psi = syn_mean / acs_mean;
    graph.scale_speeds(psi);
    Ok(psi)
}

fn parse_f64(field: Option<&str>) -> Option<f64> {
    field.map(str::trim).filter(|s| !s.is_empty()).and_then(|s| s.parse().ok())
}

/// Load `nodes.csv` (`node_id,lon,lat`) and `edges.csv`
/// (`from,to,length_m,speed_h0..speed_h23`, optional `highway`,
/// `maxspeed_kmh`). Missing hourly speeds use the default-speed rule.
pub fn load_graph(nodes_path: &Path, edges_path: &Path, defaults: &SpeedDefaults) -> Result<RoadGraph> {
    let mut nodes = Vec::new();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(nodes_path)
        .map_err(|e| Error::csv(nodes_path, e))?;
    #[derive(Deserialize)]
    struct NodeRow {
        node_id: u64,
        lon: f64,
        lat: f64,
    }
    for rec in rdr.deserialize::<NodeRow>() {
        let r = rec.map_err(|e| Error::csv(nodes_path, e))?;
        nodes.push(Node {
            id: r.node_id,
            location: LonLat::new(r.lon, r.lat),
        });
    }

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(edges_path)
        .map_err(|e| Error::csv(edges_path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(edges_path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (from_c, to_c, len_c) = match (col("from"), col("to"), col("length_m")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::Network(format!(
                "{}: header must contain from,to,length_m",
                edges_path.display()
            )))
        }
    };
    let hour_cols: Vec<Option<usize>> = (0..HOURS).map(|h| col(&format!("speed_h{h}"))).collect();
    let (highway_c, maxspeed_c) = (col("highway"), col("maxspeed_kmh"));

    let mut edges = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(edges_path, e))?;
        let bad = |what: &str| Error::Network(format!("{}: edge row {k}: bad {what}", edges_path.display()));
        let from: u64 = rec.get(from_c).and_then(|s| s.parse().ok()).ok_or_else(|| bad("from"))?;
        let to: u64 = rec.get(to_c).and_then(|s| s.parse().ok()).ok_or_else(|| bad("to"))?;
        let length = parse_f64(rec.get(len_c)).ok_or_else(|| bad("length_m"))?;
        let default = defaults.speed_mps(
            maxspeed_c.and_then(|c| parse_f64(rec.get(c))),
            highway_c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()),
        );
        let mut speeds = [default; HOURS];
        for (h, c) in hour_cols.iter().enumerate() {
            if let Some(v) = c.and_then(|c| parse_f64(rec.get(c))) {
                speeds[h] = v;
            }
        }
        edges.push((from, to, length, speeds));
    }
    RoadGraph::new(nodes, edges)
}

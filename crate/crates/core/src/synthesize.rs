//! Initial OD dataset: cell grid, spatial sampling, departure minutes and
//! raw travel times.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CandidateSets;
use crate::marginals::{block_index, Block, DepartureMarginal, ODFlowTable};
use crate::network::RoadGraph;
use crate::rng::substream;

/// One commuter trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin_unit: String,
    pub dest_unit: String,
    pub origin_building: String,
    pub dest_building: String,
    pub depart_block: usize,
    pub depart_minute: u32,
    pub arrive_minute: f64,
    pub duration_min: f64,
    pub distance_m: f64,
}

/// Integer counts `m[d][t]` for one origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginGrid {
    pub dests: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl OriginGrid {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn dest_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn block_totals(&self, blocks: usize) -> Vec<u64> {
        let mut out = vec![0; blocks];
        for row in &self.counts {
            for (t, c) in row.iter().enumerate() {
                out[t] += c;
            }
        }
        out
    }
}

/// Per-origin `(destination, block)` trip counts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellGrid {
    pub blocks: usize,
    pub origins: BTreeMap<String, OriginGrid>,
}

impl CellGrid {
    /// Count trips per cell. Destinations come from `flows` so that zero
    /// rows stay aligned with the flow table.
    pub fn from_trips(trips: &[TripRecord], flows: &ODFlowTable, blocks: usize) -> Result<Self> {
        let mut origins: BTreeMap<String, OriginGrid> = BTreeMap::new();
        for t in trips {
            if !origins.contains_key(&t.origin_unit) {
                let row = flows.row(&t.origin_unit).ok_or_else(|| {
                    Error::Synthesize(format!("trip origin {} not in flow table", t.origin_unit))
                })?;
                let dests: Vec<String> = row.iter().map(|c| c.dest.clone()).collect();
                let counts = vec![vec![0; blocks]; dests.len()];
                origins.insert(t.origin_unit.clone(), OriginGrid { dests, counts });
            }
            let g = origins.get_mut(&t.origin_unit).unwrap();
            let d = g
                .dests
                .binary_search(&t.dest_unit)
                .map_err(|_| Error::Synthesize(format!("trip {}->{} not in flow table", t.origin_unit, t.dest_unit)))?;
            if t.depart_block >= blocks {
                return Err(Error::Synthesize(format!("trip block {} out of range", t.depart_block)));
            }
            g.counts[d][t.depart_block] += 1;
        }
        Ok(Self { blocks, origins })
    }
}

/// Distribute each origin's integer destination counts over departure
/// blocks: draw a block per trip from the origin's departure shares, then
/// move surplus trips to deficit blocks at random until every block total
/// equals its integer target.
pub fn build_cell_grid(flows: &ODFlowTable, dep: &DepartureMarginal, seed: u64) -> Result<CellGrid> {
    let nblocks = dep.blocks.len();
    let origins: Vec<(&String, _)> = flows.rows.iter().filter(|(o, _)| dep.total(o) > 0).collect();
    let grids = origins
        .par_iter()
        .map(|(origin, row)| {
            let targets = dep.targets(origin);
            let n_o: u64 = targets.iter().sum();
            let dest_total: u64 = row.iter().map(|c| c.scaled_int).sum();
            if dest_total != n_o {
                return Err(Error::Synthesize(format!(
                    "origin {origin}: destination total {dest_total} != departure total {n_o}"
                )));
            }
            let mut rng = substream(seed, "block", origin);
            let weights = WeightedIndex::new(&targets)
                .map_err(|e| Error::Synthesize(format!("origin {origin}: {e}")))?;
            let mut trips: Vec<(usize, usize)> = Vec::with_capacity(n_o as usize);
            for (d, cell) in row.iter().enumerate() {
                for _ in 0..cell.scaled_int {
                    trips.push((d, weights.sample(&mut rng)));
                }
            }
            repair_blocks(&mut trips, &targets, &mut rng);
            let mut counts = vec![vec![0u64; nblocks]; row.len()];
            for (d, t) in trips {
                counts[d][t] += 1;
            }
            Ok((
                (*origin).clone(),
                OriginGrid {
                    dests: row.iter().map(|c| c.dest.clone()).collect(),
                    counts,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellGrid {
        blocks: nblocks,
        origins: grids.into_iter().collect(),
    })
}

/// Minimal repair: exactly `sum(surplus)` trips change block.
fn repair_blocks(trips: &mut [(usize, usize)], targets: &[u64], rng: &mut impl Rng) {
    let mut current = vec![0u64; targets.len()];
    for &(_, t) in trips.iter() {
        current[t] += 1;
    }
    let mut deficit_slots: Vec<usize> = targets
        .iter()
        .zip(&current)
        .enumerate()
        .flat_map(|(t, (&want, &have))| std::iter::repeat_n(t, want.saturating_sub(have) as usize))
        .collect();
    deficit_slots.shuffle(rng);
    let mut slots = deficit_slots.into_iter();
    for t in 0..targets.len() {
        let excess = current[t].saturating_sub(targets[t]) as usize;
        if excess == 0 {
            continue;
        }
        let members: Vec<usize> = (0..trips.len()).filter(|&i| trips[i].1 == t).collect();
        let mut chosen = rand::seq::index::sample(rng, members.len(), excess).into_vec();
        chosen.sort_unstable();
        for k in chosen {
            trips[members[k]].1 = slots.next().expect("surplus equals deficit");
        }
    }
}

/// Emit `m[o][d][t]` trips per cell with origin and destination buildings
/// drawn uniformly from the unit candidate sets. Minutes and times are
/// filled in later.
pub fn sample_trips(grid: &CellGrid, cands: &CandidateSets, seed: u64) -> Result<Vec<TripRecord>> {
    let per_origin = grid
        .origins
        .par_iter()
        .map(|(origin, g)| {
            let mut rng = substream(seed, "spatial", origin);
            let from = cands
                .get(origin)
                .ok_or_else(|| Error::Synthesize(format!("no candidate buildings for unit {origin}")))?;
            let mut out = Vec::with_capacity(g.total() as usize);
            for (d, dest) in g.dests.iter().enumerate() {
                let to = cands
                    .get(dest)
                    .ok_or_else(|| Error::Synthesize(format!("no candidate buildings for unit {dest}")))?;
                for (t, &count) in g.counts[d].iter().enumerate() {
                    for _ in 0..count {
                        let bo = from.origin_buildings.choose(&mut rng).expect("non-empty candidates");
                        let bd = to.destination_buildings.choose(&mut rng).expect("non-empty candidates");
                        out.push(TripRecord {
                            origin_unit: origin.clone(),
                            dest_unit: dest.clone(),
                            origin_building: bo.clone(),
                            dest_building: bd.clone(),
                            depart_block: t,
                            depart_minute: 0,
                            arrive_minute: 0.0,
                            duration_min: 0.0,
                            distance_m: 0.0,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_origin.into_iter().flatten().collect())
}

/// Uniform integer minute within each trip's block.
pub fn assign_minutes(trips: &mut [TripRecord], blocks: &[Block], seed: u64) -> Result<()> {
    if let Some(b) = blocks.iter().find(|b| b.end <= b.start) {
        return Err(Error::Synthesize(format!("empty departure block [{}, {})", b.start, b.end)));
    }
    for chunk in trips.chunk_by_mut(|a, b| a.origin_unit == b.origin_unit) {
        let mut rng = substream(seed, "minute", &chunk[0].origin_unit);
        for t in chunk {
            let b = blocks
                .get(t.depart_block)
                .ok_or_else(|| Error::Synthesize(format!("block {} out of range", t.depart_block)))?;
            t.depart_minute = rng.gen_range(b.start..b.end);
        }
    }
    Ok(())
}

/// Route every trip at its departure minute. Returns how many trips used
/// the great-circle fallback.
pub fn compute_times(trips: &mut [TripRecord], cands: &CandidateSets, graph: &RoadGraph) -> Result<usize> {
    let locate = |id: &str| {
        cands
            .building(id)
            .map(|b| b.location)
            .ok_or_else(|| Error::Synthesize(format!("unknown building {id}")))
    };
    let queries = trips
        .iter()
        .map(|t| Ok((locate(&t.origin_building)?, locate(&t.dest_building)?, t.depart_minute)))
        .collect::<Result<Vec<_>>>()?;
    let legs = graph.travel_many(&queries)?;
    let mut fallbacks = 0;
    for (t, leg) in trips.iter_mut().zip(legs) {
        t.duration_min = leg.route.duration_min;
        t.distance_m = leg.route.distance_m;
        t.arrive_minute = t.depart_minute as f64 + t.duration_min;
        fallbacks += leg.fallback as usize;
    }
    Ok(fallbacks)
}

/// Trips for a grid: spatial sampling, minutes, then routing.
pub fn trips_from_grid(
    grid: &CellGrid,
    cands: &CandidateSets,
    blocks: &[Block],
    graph: &RoadGraph,
    seed: u64,
) -> Result<(Vec<TripRecord>, usize)> {
    let mut trips = sample_trips(grid, cands, seed)?;
    assign_minutes(&mut trips, blocks, seed)?;
    let fallbacks = compute_times(&mut trips, cands, graph)?;
    Ok((trips, fallbacks))
}

const TRIP_HEADER: &str = "trip_id,origin_geoid,dest_geoid,origin_building,dest_building,depart_min,arrive_min,duration_min,distance_m";

/// Write trips in the exchange CSV layout. `calibrated` appends the
/// `calibrated=1` column.
pub fn write_trips(path: &Path, trips: &[TripRecord], calibrated: bool) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "{TRIP_HEADER}").map_err(io)?;
    writeln!(w, "{}", if calibrated { ",calibrated" } else { "" }).map_err(io)?;
    for (i, t) in trips.iter().enumerate() {
        write!(
            w,
            "{i},{},{},{},{},{},{:.6},{:.6},{:.3}",
            csv_field(&t.origin_unit),
            csv_field(&t.dest_unit),
            csv_field(&t.origin_building),
            csv_field(&t.dest_building),
            t.depart_minute,
            t.arrive_minute,
            t.duration_min,
            t.distance_m
        )
        .map_err(io)?;
        writeln!(w, "{}", if calibrated { ",1" } else { "" }).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

#[derive(Deserialize)]
struct TripRow {
    origin_geoid: String,
    dest_geoid: String,
    origin_building: String,
    dest_building: String,
    depart_min: u32,
    arrive_min: f64,
    duration_min: f64,
    distance_m: f64,
}

pub fn read_trips(path: &Path, blocks: &[Block]) -> Result<Vec<TripRecord>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    rdr.deserialize::<TripRow>()
        .map(|rec| {
            let r = rec.map_err(|e| Error::csv(path, e))?;
            let depart_block = block_index(blocks, r.depart_min).ok_or_else(|| {
                Error::Synthesize(format!("{}: departure minute {} outside blocks", path.display(), r.depart_min))
            })?;
            Ok(TripRecord {
                origin_unit: r.origin_geoid,
                dest_unit: r.dest_geoid,
                origin_building: r.origin_building,
                dest_building: r.dest_building,
                depart_block,
                depart_minute: r.depart_min,
                arrive_minute: r.arrive_min,
                duration_min: r.duration_min,
                distance_m: r.distance_m,
            })
        })
        .collect()
}

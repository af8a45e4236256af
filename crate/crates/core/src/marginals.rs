//! Marginal tables: OD flows, departure-time blocks and travel-time bins.
//!
//! Raw OD flows are rescaled so each origin row sums to the origin total
//! `N_o` taken from the departure marginal, keeping destination shares
//! fixed. Every fractional target is then turned into integers with
//! largest-remainder apportionment so row sums are preserved exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: u32 = 1440;

/// Departure block `[start, end)` in minutes of day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: u32,
    pub end: u32,
}

impl Block {
    pub const fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, minute: u32) -> bool {
        self.start <= minute && minute < self.end
    }

    pub fn midpoint(&self) -> u32 {
        (self.start + self.end) / 2
    }
}

/// Travel-time bin `[start, end)` in minutes; `end = None` is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub start: f64,
    pub end: Option<f64>,
}

impl Bin {
    pub const fn new(start: f64, end: Option<f64>) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, minutes: f64) -> bool {
        minutes >= self.start && self.end.is_none_or(|e| minutes < e)
    }

    pub fn label(&self) -> String {
        match self.end {
            Some(e) if self.start == 0.0 => format!("<{e}"),
            Some(e) => format!("{}-{}", self.start, e - 1.0),
            None => format!("{}+", self.start),
        }
    }
}

/// The fourteen ACS departure blocks from midnight through 23:59.
pub fn default_blocks() -> Vec<Block> {
    [0, 300, 330, 360, 390, 420, 450, 480, 510, 540, 600, 660, 720, 960, 1440]
        .windows(2)
        .map(|w| Block::new(w[0], w[1]))
        .collect()
}

/// The twelve ACS travel-time bins, `<5` through `90+`.
pub fn default_bins() -> Vec<Bin> {
    let edges = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 60.0, 90.0];
    let mut bins: Vec<Bin> = edges.windows(2).map(|w| Bin::new(w[0], Some(w[1]))).collect();
    bins.push(Bin::new(90.0, None));
    bins
}

pub const DEFAULT_OPEN_BIN_MIDPOINT: f64 = 105.0;

pub fn validate_blocks(blocks: &[Block]) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::Marginals("no departure blocks defined".into()));
    }
    let mut expected = 0;
    for b in blocks {
        if b.start != expected || b.end <= b.start {
            return Err(Error::Marginals(format!(
                "departure blocks must partition [0, 1440) in order; bad block [{}, {})",
                b.start, b.end
            )));
        }
        expected = b.end;
    }
    if expected != MINUTES_PER_DAY {
        return Err(Error::Marginals(format!("departure blocks end at {expected}, not 1440")));
    }
    Ok(())
}

pub fn validate_bins(bins: &[Bin]) -> Result<()> {
    if bins.is_empty() {
        return Err(Error::Marginals("no travel-time bins defined".into()));
    }
    for (i, b) in bins.iter().enumerate() {
        let last = i + 1 == bins.len();
        match b.end {
            None if !last => {
                return Err(Error::Marginals("only the last travel-time bin may be open-ended".into()))
            }
            Some(e) if e <= b.start => {
                return Err(Error::Marginals(format!("empty travel-time bin starting at {}", b.start)))
            }
            _ => {}
        }
        if let Some(next) = bins.get(i + 1) {
            if b.end != Some(next.start) {
                return Err(Error::Marginals("travel-time bins must be contiguous and ordered".into()));
            }
        }
    }
    Ok(())
}

/// Index of the bin containing `minutes`. Durations below the first bin's
/// start fall into the first bin.
pub fn bin_index(bins: &[Bin], minutes: f64) -> usize {
    bins.iter()
        .position(|b| b.contains(minutes))
        .unwrap_or(if minutes < bins[0].start { 0 } else { bins.len() - 1 })
}

pub fn block_index(blocks: &[Block], minute: u32) -> Option<usize> {
    blocks.iter().position(|b| b.contains(minute))
}

/// One (origin, destination) entry of the OD table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCell {
    pub dest: String,
    pub raw: f64,
    pub scaled: f64,
    pub scaled_int: u64,
}

/// OD flows keyed by origin; each row is sorted by destination id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ODFlowTable {
    pub rows: BTreeMap<String, Vec<FlowCell>>,
}

impl ODFlowTable {
    /// Build from raw `(origin, dest, count)` triples. Repeated pairs add up.
    pub fn from_raw<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, f64)>,
        S: Into<String>,
    {
        let mut acc: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (o, d, c) in entries {
            let (o, d) = (o.into(), d.into());
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::Marginals(format!("flow {o}->{d} has invalid count {c}")));
            }
            *acc.entry(o).or_default().entry(d).or_default() += c;
        }
        let rows = acc
            .into_iter()
            .map(|(o, row)| {
                let cells = row
                    .into_iter()
                    .map(|(dest, raw)| FlowCell {
                        dest,
                        raw,
                        scaled: 0.0,
                        scaled_int: 0,
                    })
                    .collect();
                (o, cells)
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn row(&self, origin: &str) -> Option<&[FlowCell]> {
        self.rows.get(origin).map(Vec::as_slice)
    }

    /// Drop flows whose origin or destination is not a known unit.
    /// Returns the number of dropped entries.
    pub fn restrict_to(&mut self, known: &BTreeSet<String>) -> usize {
        let mut dropped = 0;
        self.rows.retain(|o, row| {
            if !known.contains(o) {
                dropped += row.len();
                return false;
            }
            let before = row.len();
            row.retain(|c| known.contains(&c.dest));
            dropped += before - row.len();
            true
        });
        dropped
    }

    /// Destinations with strictly positive raw flow.
    pub fn raw_support(&self, origin: &str) -> BTreeSet<String> {
        self.row(origin)
            .into_iter()
            .flatten()
            .filter(|c| c.raw > 0.0)
            .map(|c| c.dest.clone())
            .collect()
    }

    /// Destinations with a positive integer trip count.
    pub fn integer_support(&self, origin: &str) -> BTreeSet<String> {
        self.row(origin)
            .into_iter()
            .flatten()
            .filter(|c| c.scaled_int > 0)
            .map(|c| c.dest.clone())
            .collect()
    }
}

/// Departure counts per origin over a shared block partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DepartureMarginal {
    pub blocks: Vec<Block>,
    pub counts: BTreeMap<String, Vec<u64>>,
}

impl DepartureMarginal {
    pub fn new(blocks: Vec<Block>, counts: BTreeMap<String, Vec<u64>>) -> Result<Self> {
        validate_blocks(&blocks)?;
        if let Some((o, _)) = counts.iter().find(|(_, c)| c.len() != blocks.len()) {
            return Err(Error::Marginals(format!("origin {o}: departure row length != block count")));
        }
        Ok(Self { blocks, counts })
    }

    /// Origin total `N_o`; zero for origins absent from the table.
    pub fn total(&self, origin: &str) -> u64 {
        self.counts.get(origin).map_or(0, |c| c.iter().sum())
    }

    pub fn origins(&self) -> impl Iterator<Item = &String> {
        self.counts.keys()
    }

    /// Integer block targets summing to `N_o`.
    pub fn targets(&self, origin: &str) -> Vec<u64> {
        self.counts
            .get(origin)
            .cloned()
            .unwrap_or_else(|| vec![0; self.blocks.len()])
    }
}

/// Travel-time counts per origin over a shared bin list.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeMarginal {
    pub bins: Vec<Bin>,
    pub counts: BTreeMap<String, Vec<u64>>,
    pub open_bin_midpoint: f64,
}

impl TravelTimeMarginal {
    pub fn new(bins: Vec<Bin>, counts: BTreeMap<String, Vec<u64>>) -> Result<Self> {
        validate_bins(&bins)?;
        if let Some((o, _)) = counts.iter().find(|(_, c)| c.len() != bins.len()) {
            return Err(Error::Marginals(format!("origin {o}: travel-time row length != bin count")));
        }
        Ok(Self {
            bins,
            counts,
            open_bin_midpoint: DEFAULT_OPEN_BIN_MIDPOINT,
        })
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.bins
            .iter()
            .map(|b| b.end.map_or(self.open_bin_midpoint, |e| (b.start + e) / 2.0))
            .collect()
    }

    /// Integer bin targets for an origin with total `n_o`.
    pub fn targets(&self, origin: &str, n_o: u64) -> Result<Vec<u64>> {
        match self.counts.get(origin) {
            Some(row) if row.iter().sum::<u64>() == n_o => Ok(row.clone()),
            Some(row) => {
                let shares: Vec<f64> = row.iter().map(|&c| c as f64).collect();
                integerize_row(&shares, n_o)
            }
            None if n_o == 0 => Ok(vec![0; self.bins.len()]),
            None => Err(Error::Marginals(format!("origin {origin}: no travel-time marginal"))),
        }
    }

    /// Weighted-midpoint ACS mean over the given origins, each weighted by `N_o`.
    pub fn mean_minutes(&self, dep: &DepartureMarginal) -> Result<f64> {
        let k = self.midpoints();
        let (mut num, mut den) = (0.0, 0.0);
        for o in dep.origins() {
            let n_o = dep.total(o) as f64;
            if n_o == 0.0 {
                continue;
            }
            let row = self
                .counts
                .get(o)
                .ok_or_else(|| Error::Marginals(format!("origin {o}: no travel-time marginal")))?;
            let row_total: u64 = row.iter().sum();
            if row_total == 0 {
                return Err(Error::Marginals(format!("origin {o}: empty travel-time marginal")));
            }
            let mean_o: f64 = row.iter().zip(&k).map(|(&c, &kj)| c as f64 * kj).sum::<f64>() / row_total as f64;
            num += n_o * mean_o;
            den += n_o;
        }
        if den == 0.0 {
            return Err(Error::Marginals("no commuters in the departure marginal".into()));
        }
        Ok(num / den)
    }
}

/// Rescale each origin row to the departure-marginal total `N_o` with
/// destination shares unchanged, then apportion integer trip counts.
pub fn scale_flows(raw: &ODFlowTable, dep: &DepartureMarginal) -> Result<ODFlowTable> {
    let mut out = raw.clone();
    for (origin, row) in out.rows.iter_mut() {
        let n_o = dep.total(origin);
        let row_sum: f64 = row.iter().map(|c| c.raw).sum();
        if n_o == 0 {
            for c in row.iter_mut() {
                c.scaled = 0.0;
                c.scaled_int = 0;
            }
            continue;
        }
        if row_sum <= 0.0 {
            return Err(Error::Marginals(format!(
                "origin {origin} has {n_o} commuters but no destination flows"
            )));
        }
        let alpha = n_o as f64 / row_sum;
        for c in row.iter_mut() {
            c.scaled = alpha * c.raw;
        }
        let shares: Vec<f64> = row.iter().map(|c| c.scaled).collect();
        for (c, k) in row.iter_mut().zip(integerize_row(&shares, n_o)?) {
            c.scaled_int = k;
        }
    }
    for origin in dep.origins() {
        if dep.total(origin) > 0 && !out.rows.contains_key(origin) {
            return Err(Error::Marginals(format!(
                "origin {origin} has {} commuters but no destination flows",
                dep.total(origin)
            )));
        }
    }
    Ok(out)
}

/// Largest-remainder apportionment of `total` in proportion to `shares`.
/// Remainder seats go to the largest fractional parts, smaller index first
/// on ties.
pub fn integerize_row(shares: &[f64], total: u64) -> Result<Vec<u64>> {
    if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Marginals("shares must be finite and non-negative".into()));
    }
    let sum: f64 = shares.iter().sum();
    if total == 0 {
        return Ok(vec![0; shares.len()]);
    }
    if sum <= 0.0 {
        return Err(Error::Marginals(format!("cannot apportion {total} over all-zero shares")));
    }
    let quotas: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
    let mut out: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    if assigned > total {
        // Only reachable through rounding when every quota is integral.
        let mut excess = assigned - total;
        for k in out.iter_mut().rev() {
            let take = excess.min(*k);
            *k -= take;
            excess -= take;
        }
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..shares.len()).filter(|&i| shares[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let remainder = (total - assigned) as usize;
    for i in order.iter().cycle().take(remainder) {
        out[*i] += 1;
    }
    Ok(out)
}

/// `P(D = d | O = origin)` from the integerized row.
pub fn conditional_destination(origin: &str, table: &ODFlowTable) -> Result<Vec<(String, f64)>> {
    let row = table
        .row(origin)
        .ok_or_else(|| Error::Marginals(format!("origin {origin} has no flow row")))?;
    let total: u64 = row.iter().map(|c| c.scaled_int).sum();
    if total == 0 {
        return Err(Error::Marginals(format!("origin {origin} has an empty flow row")));
    }
    Ok(row
        .iter()
        .map(|c| (c.dest.clone(), c.scaled_int as f64 / total as f64))
        .collect())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

#[derive(Deserialize)]
struct FlowRow {
    origin_geoid: String,
    dest_geoid: String,
    count: f64,
}

pub fn read_flows(path: &Path) -> Result<ODFlowTable> {
    let mut entries = Vec::new();
    for rec in csv_reader(path)?.deserialize::<FlowRow>() {
        let r = rec.map_err(|e| Error::csv(path, e))?;
        entries.push((r.origin_geoid, r.dest_geoid, r.count));
    }
    ODFlowTable::from_raw(entries)
}

#[derive(Deserialize)]
struct DepartureRow {
    geoid: String,
    block_start_min: u32,
    block_end_min: u32,
    count: u64,
}

pub fn read_departures(path: &Path, blocks: &[Block]) -> Result<DepartureMarginal> {
    validate_blocks(blocks)?;
    let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for rec in csv_reader(path)?.deserialize::<DepartureRow>() {
        let r = rec.map_err(|e| Error::csv(path, e))?;
        let idx = blocks
            .iter()
            .position(|b| b.start == r.block_start_min && b.end == r.block_end_min)
            .ok_or_else(|| {
                Error::Marginals(format!(
                    "{}: block [{}, {}) is not a configured departure block",
                    path.display(),
                    r.block_start_min,
                    r.block_end_min
                ))
            })?;
        counts.entry(r.geoid).or_insert_with(|| vec![0; blocks.len()])[idx] += r.count;
    }
    DepartureMarginal::new(blocks.to_vec(), counts)
}

#[derive(Deserialize)]
struct TravelTimeRow {
    geoid: String,
    bin_start_min: f64,
    bin_end_min: f64,
    count: u64,
}

pub fn read_travel_times(path: &Path, bins: &[Bin], open_bin_midpoint: f64) -> Result<TravelTimeMarginal> {
    validate_bins(bins)?;
    let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for rec in csv_reader(path)?.deserialize::<TravelTimeRow>() {
        let r = rec.map_err(|e| Error::csv(path, e))?;
        let end = (r.bin_end_min >= 0.0).then_some(r.bin_end_min);
        let idx = bins
            .iter()
            .position(|b| b.start == r.bin_start_min && b.end == end)
            .ok_or_else(|| {
                Error::Marginals(format!(
                    "{}: bin [{}, {}) is not a configured travel-time bin",
                    path.display(),
                    r.bin_start_min,
                    r.bin_end_min
                ))
            })?;
        counts.entry(r.geoid).or_insert_with(|| vec![0; bins.len()])[idx] += r.count;
    }
    let mut tt = TravelTimeMarginal::new(bins.to_vec(), counts)?;
    tt.open_bin_midpoint = open_bin_midpoint;
    Ok(tt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dep_one(origin: &str, n: u64) -> DepartureMarginal {
        let blocks = vec![Block::new(0, 1440)];
        DepartureMarginal::new(blocks, BTreeMap::from([(origin.to_string(), vec![n])])).unwrap()
    }

    fn scaled_row(raw: &[f64], n: u64) -> Vec<f64> {
        let t = ODFlowTable::from_raw(raw.iter().enumerate().map(|(i, &c)| ("o".to_string(), format!("d{i}"), c))).unwrap();
        scale_flows(&t, &dep_one("o", n)).unwrap().rows["o"].iter().map(|c| c.scaled).collect()
    }

    #[test]
    fn scale_doubles_row() {
        let s = scaled_row(&[10.0, 30.0], 80);
        assert_eq!(s, vec![20.0, 60.0]);
    }

    #[test]
    fn scale_identity_when_totals_match() {
        assert_eq!(scaled_row(&[7.0, 3.0], 10), vec![7.0, 3.0]);
    }

    #[test]
    fn scale_to_thirds() {
        for v in scaled_row(&[1.0, 1.0, 1.0], 1) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scale_rejects_zero_row_with_commuters() {
        let t = ODFlowTable::from_raw([("o", "d", 0.0)]).unwrap();
        let err = scale_flows(&t, &dep_one("o", 5)).unwrap_err();
        assert!(err.to_string().contains("origin o"));
        let empty = ODFlowTable::default();
        assert!(scale_flows(&empty, &dep_one("o", 5)).is_err());
    }

    #[test]
    fn integerize_examples() {
        assert_eq!(integerize_row(&[20.0, 60.0], 80).unwrap(), vec![20, 60]);
        assert_eq!(integerize_row(&[1.0, 1.0, 1.0], 1).unwrap(), vec![1, 0, 0]);
        assert_eq!(integerize_row(&[0.5, 0.5], 3).unwrap(), vec![2, 1]);
        assert!(integerize_row(&[0.0, 0.0], 2).is_err());
        assert_eq!(integerize_row(&[0.0, 0.0], 0).unwrap(), vec![0, 0]);
    }

    /// Enumerate every apportionment of `total` that is within one seat of
    /// each quota, and pick the one giving extra seats to the largest
    /// fractional parts, smaller index first.
    fn brute_largest_remainder(shares: &[f64], total: u64) -> Vec<u64> {
        let sum: f64 = shares.iter().sum();
        let quotas: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
        let mut best: Option<(Vec<u64>, Vec<(f64, usize)>)> = None;
        let n = shares.len();
        let mut cur = vec![0u64; n];
        fn rec(
            i: usize,
            left: u64,
            quotas: &[f64],
            cur: &mut Vec<u64>,
            best: &mut Option<(Vec<u64>, Vec<(f64, usize)>)>,
        ) {
            if i == quotas.len() {
                if left != 0 {
                    return;
                }
                // key: the fractional parts of indices that got a bonus seat, sorted desc
                let mut key: Vec<(f64, usize)> = (0..quotas.len())
                    .filter(|&j| cur[j] as f64 > quotas[j].floor())
                    .map(|j| (quotas[j] - quotas[j].floor(), j))
                    .collect();
                key.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let better = match best {
                    None => true,
                    Some((_, k)) => {
                        let mut ord = std::cmp::Ordering::Equal;
                        for (x, y) in key.iter().zip(k.iter()) {
                            ord = y.0.total_cmp(&x.0).then(x.1.cmp(&y.1));
                            if ord != std::cmp::Ordering::Equal {
                                break;
                            }
                        }
                        ord == std::cmp::Ordering::Less
                    }
                };
                if better {
                    *best = Some((cur.clone(), key));
                }
                return;
            }
            let lo = quotas[i].floor() as u64;
            for k in [lo, lo + 1] {
                if k <= left && (k == lo || quotas[i] > 0.0) {
                    cur[i] = k;
                    rec(i + 1, left - k, quotas, cur, best);
                }
            }
        }
        rec(0, total, &quotas, &mut cur, &mut best);
        best.unwrap().0
    }

    #[test]
    fn integerize_matches_enumeration_oracle() {
        assert_eq!(brute_largest_remainder(&[1.0, 1.0, 1.0], 1), vec![1, 0, 0]);
        assert_eq!(brute_largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        for (shares, total) in [
            (vec![3.0, 2.0, 2.0, 1.0], 5u64),
            (vec![0.1, 0.7, 0.2], 9),
            (vec![5.0, 0.0, 5.0], 3),
        ] {
            assert_eq!(integerize_row(&shares, total).unwrap(), brute_largest_remainder(&shares, total));
        }
    }

    #[test]
    fn conditional_examples() {
        let mut t = ODFlowTable::from_raw([("o", "a", 20.0), ("o", "b", 60.0)]).unwrap();
        t = scale_flows(&t, &dep_one("o", 80)).unwrap();
        let p = conditional_destination("o", &t).unwrap();
        assert_eq!(p, vec![("a".into(), 0.25), ("b".into(), 0.75)]);

        let t = scale_flows(&ODFlowTable::from_raw([("o", "a", 5.0)]).unwrap(), &dep_one("o", 5)).unwrap();
        assert_eq!(conditional_destination("o", &t).unwrap(), vec![("a".into(), 1.0)]);

        let t = scale_flows(
            &ODFlowTable::from_raw([("o", "a", 0.0), ("o", "b", 8.0)]).unwrap(),
            &dep_one("o", 8),
        )
        .unwrap();
        assert_eq!(
            conditional_destination("o", &t).unwrap(),
            vec![("a".into(), 0.0), ("b".into(), 1.0)]
        );
        assert!(conditional_destination("x", &t).is_err());
    }

    #[test]
    fn default_partitions_are_valid() {
        validate_blocks(&default_blocks()).unwrap();
        validate_bins(&default_bins()).unwrap();
        assert_eq!(default_blocks().len(), 14);
        assert_eq!(default_bins().len(), 12);
        let labels: Vec<String> = default_bins().iter().map(Bin::label).collect();
        assert_eq!(labels[0], "<5");
        assert_eq!(labels[2], "10-14");
        assert_eq!(labels[11], "90+");
    }

    #[test]
    fn bin_membership_boundaries() {
        let bins = default_bins();
        assert_eq!(bin_index(&bins, 12.0), 2);
        assert_eq!(bin_index(&bins, 4.999), 0);
        assert_eq!(bin_index(&bins, 90.0), 11);
        assert_eq!(bin_index(&bins, 500.0), 11);
    }

    #[test]
    fn acs_mean_uses_midpoints() {
        let bins = vec![Bin::new(0.0, Some(10.0)), Bin::new(10.0, Some(20.0)), Bin::new(20.0, None)];
        let tt = TravelTimeMarginal::new(bins, BTreeMap::from([("o".to_string(), vec![0, 4, 0])])).unwrap();
        assert_eq!(tt.midpoints(), vec![5.0, 15.0, 105.0]);
        assert_eq!(tt.mean_minutes(&dep_one("o", 4)).unwrap(), 15.0);
    }

    #[test]
    fn restrict_drops_unknown_units() {
        let mut t = ODFlowTable::from_raw([("a", "a", 1.0), ("a", "z", 2.0), ("z", "a", 3.0)]).unwrap();
        let known = BTreeSet::from(["a".to_string()]);
        assert_eq!(t.restrict_to(&known), 2);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows["a"].len(), 1);
    }

    proptest! {
        #[test]
        fn apportionment_sums_exactly(
            shares in proptest::collection::vec(0.0f64..100.0, 1..12),
            total in 0u64..500,
        ) {
            prop_assume!(total == 0 || shares.iter().sum::<f64>() > 0.0);
            let out = integerize_row(&shares, total).unwrap();
            prop_assert_eq!(out.iter().sum::<u64>(), total);
            let sum: f64 = shares.iter().sum();
            for (k, s) in out.iter().zip(&shares) {
                if total > 0 {
                    let q = total as f64 * s / sum;
                    prop_assert!((*k as f64 - q).abs() < 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn apportionment_is_monotone_in_one_share(
            shares in proptest::collection::vec(0.01f64..50.0, 2..8),
            which in 0usize..8,
            bump in 0.0f64..50.0,
            total in 1u64..200,
        ) {
            let i = which % shares.len();
            let before = integerize_row(&shares, total).unwrap()[i];
            let mut bigger = shares.clone();
            bigger[i] += bump;
            let after = integerize_row(&bigger, total).unwrap()[i];
            prop_assert!(after >= before, "share {} : {} -> {}", i, before, after);
        }

        #[test]
        fn scaling_preserves_shares_and_totals(
            raw in proptest::collection::vec(0.0f64..1000.0, 1..10),
            n in 1u64..5000,
        ) {
            prop_assume!(raw.iter().sum::<f64>() > 0.0);
            let t = ODFlowTable::from_raw(raw.iter().enumerate().map(|(i, &c)| ("o".to_string(), format!("d{i:02}"), c))).unwrap();
            let s = scale_flows(&t, &dep_one("o", n)).unwrap();
            let row = &s.rows["o"];
            let sum: f64 = row.iter().map(|c| c.scaled).sum();
            prop_assert!((sum - n as f64).abs() <= 1e-9 * n as f64);
            prop_assert_eq!(row.iter().map(|c| c.scaled_int).sum::<u64>(), n);
            let raw_sum: f64 = raw.iter().sum();
            for (c, r) in row.iter().zip(&raw) {
                prop_assert!((c.scaled / sum - r / raw_sum).abs() <= 1e-9);
            }
        }
    }
}

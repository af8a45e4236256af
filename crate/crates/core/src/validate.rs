//! Fidelity checks: destination-support preservation, departure-time
//! exactness and the travel-time histogram gap before and after
//! calibration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::marginals::{bin_index, DepartureMarginal, ODFlowTable, TravelTimeMarginal};
use crate::synthesize::TripRecord;

/// `|A ∩ B| / |A ∪ B|`; two empty sets score 1.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Total-variation distance between two count histograms after
/// normalization. An empty histogram is at distance 1 from a non-empty
/// one and 0 from another empty one.
pub fn total_variation(p: &[u64], q: &[u64]) -> f64 {
    let (sp, sq) = (p.iter().sum::<u64>(), q.iter().sum::<u64>());
    match (sp, sq) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => 1.0,
        _ => {
            0.5 * p
                .iter()
                .zip(q)
                .map(|(&a, &b)| (a as f64 / sp as f64 - b as f64 / sq as f64).abs())
                .sum::<f64>()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JaccardReport {
    pub per_origin: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Which flow-table support to compare trips against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// Strictly positive raw flows.
    Raw,
    /// Strictly positive integerized flows.
    Integer,
}

/// Per-origin Jaccard index between flow-table destination support and
/// the destinations present in `trips`. Origins with no commuters and no
/// trips are skipped.
pub fn jaccard_destinations(flows: &ODFlowTable, trips: &[TripRecord], support: Support) -> JaccardReport {
    let mut generated: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for t in trips {
        generated
            .entry(t.origin_unit.as_str())
            .or_default()
            .insert(t.dest_unit.clone());
    }
    let mut per_origin = BTreeMap::new();
    for (origin, row) in &flows.rows {
        let commuters: u64 = row.iter().map(|c| c.scaled_int).sum();
        let b = generated.remove(origin.as_str()).unwrap_or_default();
        if commuters == 0 && b.is_empty() {
            continue;
        }
        let a = match support {
            Support::Raw => flows.raw_support(origin),
            Support::Integer => flows.integer_support(origin),
        };
        per_origin.insert(origin.clone(), jaccard(&a, &b));
    }
    for (origin, _) in generated {
        per_origin.insert(origin.to_string(), 0.0);
    }
    let mean = if per_origin.is_empty() {
        1.0
    } else {
        per_origin.values().sum::<f64>() / per_origin.len() as f64
    };
    JaccardReport { per_origin, mean }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub scope: String,
    pub observed: Vec<u64>,
    pub target: Vec<u64>,
    pub tv: f64,
    /// Mean absolute gap between normalized histograms, in percentage points.
    pub mae_pp: f64,
    pub max_abs_dev: u64,
}

impl HistogramRow {
    fn new(scope: &str, observed: Vec<u64>, target: Vec<u64>) -> Self {
        let tv = total_variation(&observed, &target);
        let max_abs_dev = observed.iter().zip(&target).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0);
        Self {
            scope: scope.to_string(),
            mae_pp: tv * 2.0 / observed.len().max(1) as f64 * 100.0,
            tv,
            max_abs_dev,
            observed,
            target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramReport {
    pub labels: Vec<String>,
    pub per_origin: Vec<HistogramRow>,
    pub pooled: HistogramRow,
}

impl HistogramReport {
    fn build(labels: Vec<String>, rows: BTreeMap<String, (Vec<u64>, Vec<u64>)>) -> Self {
        let n = labels.len();
        let (mut obs, mut tgt) = (vec![0; n], vec![0; n]);
        let per_origin = rows
            .into_iter()
            .map(|(o, (observed, target))| {
                for i in 0..n {
                    obs[i] += observed[i];
                    tgt[i] += target[i];
                }
                HistogramRow::new(&o, observed, target)
            })
            .collect();
        Self {
            labels,
            per_origin,
            pooled: HistogramRow::new("pooled", obs, tgt),
        }
    }

    /// Largest per-origin count deviation.
    pub fn max_abs_dev(&self) -> u64 {
        self.per_origin.iter().map(|r| r.max_abs_dev).max().unwrap_or(0)
    }
}

/// Observed departure-block counts per origin against integer targets.
pub fn departure_exactness(trips: &[TripRecord], dep: &DepartureMarginal) -> Result<HistogramReport> {
    let nb = dep.blocks.len();
    let mut rows: BTreeMap<String, (Vec<u64>, Vec<u64>)> = dep
        .origins()
        .filter(|o| dep.total(o) > 0)
        .map(|o| (o.clone(), (vec![0; nb], dep.targets(o))))
        .collect();
    for t in trips {
        if t.depart_block >= nb {
            return Err(Error::Validate(format!("trip block {} out of range", t.depart_block)));
        }
        rows.entry(t.origin_unit.clone())
            .or_insert_with(|| (vec![0; nb], vec![0; nb]))
            .0[t.depart_block] += 1;
    }
    let labels = dep.blocks.iter().map(|b| format!("{}-{}", b.start, b.end)).collect();
    Ok(HistogramReport::build(labels, rows))
}

/// Trip durations binned per origin against integer travel-time targets.
pub fn travel_time_histogram(
    trips: &[TripRecord],
    tt: &TravelTimeMarginal,
    dep: &DepartureMarginal,
) -> Result<HistogramReport> {
    let nj = tt.bins.len();
    let mut rows = BTreeMap::new();
    for o in dep.origins() {
        let n_o = dep.total(o);
        if n_o > 0 {
            rows.insert(o.clone(), (vec![0; nj], tt.targets(o, n_o)?));
        }
    }
    for t in trips {
        rows.entry(t.origin_unit.clone())
            .or_insert_with(|| (vec![0; nj], vec![0; nj]))
            .0[bin_index(&tt.bins, t.duration_min)] += 1;
    }
    let labels = tt.bins.iter().map(|b| b.label()).collect();
    Ok(HistogramReport::build(labels, rows))
}

/// Travel-time histograms for the initial and, when present, calibrated
/// trips.
pub fn travel_time_gap(
    initial: &[TripRecord],
    calibrated: Option<&[TripRecord]>,
    tt: &TravelTimeMarginal,
    dep: &DepartureMarginal,
) -> Result<(HistogramReport, Option<HistogramReport>)> {
    let before = travel_time_histogram(initial, tt, dep)?;
    let after = calibrated.map(|c| travel_time_histogram(c, tt, dep)).transpose()?;
    Ok((before, after))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub hard: bool,
}

/// Everything the validate stage reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub jaccard_raw: JaccardReport,
    pub jaccard_integer: JaccardReport,
    pub departure_initial: HistogramReport,
    pub departure_calibrated: Option<HistogramReport>,
    pub travel_initial: HistogramReport,
    pub travel_calibrated: Option<HistogramReport>,
    /// Pooled bin-slack totals at the initial and calibrated grids.
    pub slack_initial: Option<u64>,
    pub slack_calibrated: Option<u64>,
}

pub struct ValidationInputs<'a> {
    pub flows: &'a ODFlowTable,
    pub dep: &'a DepartureMarginal,
    pub tt: &'a TravelTimeMarginal,
    pub initial: &'a [TripRecord],
    pub calibrated: Option<&'a [TripRecord]>,
    pub slack_initial: Option<u64>,
    pub slack_calibrated: Option<u64>,
}

pub fn validate(inputs: &ValidationInputs) -> Result<ValidationReport> {
    // Jaccard is reported for the final dataset.
    let final_trips = inputs.calibrated.unwrap_or(inputs.initial);
    let (travel_initial, travel_calibrated) =
        travel_time_gap(inputs.initial, inputs.calibrated, inputs.tt, inputs.dep)?;
    Ok(ValidationReport {
        jaccard_raw: jaccard_destinations(inputs.flows, final_trips, Support::Raw),
        jaccard_integer: jaccard_destinations(inputs.flows, final_trips, Support::Integer),
        departure_initial: departure_exactness(inputs.initial, inputs.dep)?,
        departure_calibrated: inputs
            .calibrated
            .map(|c| departure_exactness(c, inputs.dep))
            .transpose()?,
        travel_initial,
        travel_calibrated,
        slack_initial: inputs.slack_initial,
        slack_calibrated: inputs.slack_calibrated,
    })
}

impl ValidationReport {
    /// Invariant checks; calibrated checks appear only when calibrated
    /// trips exist. Hard checks hold by construction on pipeline output,
    /// the others are empirical.
    pub fn checks(&self) -> Vec<Check> {
        let check = |name, passed, hard| Check { name, passed, hard };
        let mut out = vec![
            check("jaccard_integer_support_is_one", self.jaccard_integer.mean == 1.0, true),
            check("jaccard_raw_support_is_one", self.jaccard_raw.mean == 1.0, false),
            check("departures_exact_initial", self.departure_initial.max_abs_dev() == 0, true),
        ];
        if let Some(d) = &self.departure_calibrated {
            out.push(check("departures_exact_calibrated", d.max_abs_dev() == 0, true));
        }
        if let (Some(a), Some(b)) = (self.slack_initial, self.slack_calibrated) {
            out.push(check("bin_slack_not_worse", b <= a, true));
        }
        if let Some(c) = &self.travel_calibrated {
            out.push(check(
                "travel_tv_not_worse",
                c.pooled.tv <= self.travel_initial.pooled.tv + 1e-9,
                false,
            ));
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }

    pub fn hard_failures(&self) -> Vec<&'static str> {
        self.checks().into_iter().filter(|c| c.hard && !c.passed).map(|c| c.name).collect()
    }

    /// `metric,scope,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,scope,value\n");
        let mut row = |m: &str, s: &str, v: String| {
            let _ = writeln!(out, "{m},{s},{v}");
        };
        row("jaccard_mean", "raw", self.jaccard_raw.mean.to_string());
        row("jaccard_mean", "integer", self.jaccard_integer.mean.to_string());
        for (o, v) in &self.jaccard_raw.per_origin {
            row("jaccard", o, v.to_string());
        }
        let hist = |row: &mut dyn FnMut(&str, &str, String), name: &str, h: &HistogramReport| {
            row(&format!("{name}_tv"), "pooled", h.pooled.tv.to_string());
            row(&format!("{name}_mae_pp"), "pooled", h.pooled.mae_pp.to_string());
            row(&format!("{name}_max_abs_dev"), "pooled", h.max_abs_dev().to_string());
            for r in &h.per_origin {
                row(&format!("{name}_tv"), &r.scope, r.tv.to_string());
            }
        };
        hist(&mut row, "departure_initial", &self.departure_initial);
        if let Some(h) = &self.departure_calibrated {
            hist(&mut row, "departure_calibrated", h);
        }
        hist(&mut row, "travel_initial", &self.travel_initial);
        if let Some(h) = &self.travel_calibrated {
            hist(&mut row, "travel_calibrated", h);
        }
        if let Some(v) = self.slack_initial {
            row("bin_slack", "initial", v.to_string());
        }
        if let Some(v) = self.slack_calibrated {
            row("bin_slack", "calibrated", v.to_string());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Validation report");
        let _ = writeln!(
            out,
            "jaccard mean: {:.6} (raw support), {:.6} (integer support) over {} origins",
            self.jaccard_raw.mean,
            self.jaccard_integer.mean,
            self.jaccard_raw.per_origin.len()
        );
        let _ = writeln!(
            out,
            "departure max deviation: initial {}, calibrated {}",
            self.departure_initial.max_abs_dev(),
            self.departure_calibrated
                .as_ref()
                .map_or("absent".to_string(), |d| d.max_abs_dev().to_string())
        );
        let _ = writeln!(
            out,
            "travel-time TV: initial {:.6} (MAE {:.3} pp), calibrated {}",
            self.travel_initial.pooled.tv,
            self.travel_initial.pooled.mae_pp,
            self.travel_calibrated.as_ref().map_or("absent".to_string(), |h| format!(
                "{:.6} (MAE {:.3} pp)",
                h.pooled.tv, h.pooled.mae_pp
            ))
        );
        match (self.slack_initial, self.slack_calibrated) {
            (Some(a), Some(b)) => {
                let _ = writeln!(out, "bin slack total: initial {a}, calibrated {b}");
            }
            _ => {
                let _ = writeln!(out, "bin slack total: absent");
            }
        }
        for c in self.checks() {
            let status = match (c.passed, c.hard) {
                (true, _) => "ok",
                (false, true) => "FAIL",
                (false, false) => "warn",
            };
            let _ = writeln!(out, "[{status}] {}", c.name);
        }
        out
    }

    /// Per-origin destination shares, LODES against generated.
    pub fn fig1_csv(flows: &ODFlowTable, trips: &[TripRecord]) -> String {
        let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
        for t in trips {
            *counts.entry((&t.origin_unit, &t.dest_unit)).or_default() += 1;
            *totals.entry(&t.origin_unit).or_default() += 1;
        }
        let mut out = String::from("origin,dest,lodes_share,generated_share\n");
        for (o, row) in &flows.rows {
            let raw_total: f64 = row.iter().map(|c| c.raw).sum();
            let gen_total = totals.get(o.as_str()).copied().unwrap_or(0);
            if raw_total == 0.0 || gen_total == 0 {
                continue;
            }
            for c in row {
                let g = counts.get(&(o.as_str(), c.dest.as_str())).copied().unwrap_or(0);
                let _ = writeln!(
                    out,
                    "{o},{},{:.6},{:.6}",
                    c.dest,
                    c.raw / raw_total,
                    g as f64 / gen_total as f64
                );
            }
        }
        out
    }

    /// Pooled departure shares per block.
    pub fn fig2_csv(&self) -> String {
        let h = self.departure_calibrated.as_ref().unwrap_or(&self.departure_initial);
        let mut out = String::from("block,generated_pct,census_pct\n");
        let (so, st) = (h.pooled.observed.iter().sum::<u64>(), h.pooled.target.iter().sum::<u64>());
        for (i, label) in h.labels.iter().enumerate() {
            let _ = writeln!(
                out,
                "{label},{:.4},{:.4}",
                pct(h.pooled.observed[i], so),
                pct(h.pooled.target[i], st)
            );
        }
        out
    }

    /// Pooled travel-time shares per bin.
    pub fn fig3_csv(&self) -> String {
        let init = &self.travel_initial.pooled;
        let (si, st) = (init.observed.iter().sum::<u64>(), init.target.iter().sum::<u64>());
        let mut out = String::from("bin,initial_pct,calibrated_pct,acs_pct\n");
        for (i, label) in self.travel_initial.labels.iter().enumerate() {
            let cal = self.travel_calibrated.as_ref().map_or(String::new(), |c| {
                let sc = c.pooled.observed.iter().sum::<u64>();
                format!("{:.4}", pct(c.pooled.observed[i], sc))
            });
            let _ = writeln!(
                out,
                "{label},{:.4},{cal},{:.4}",
                pct(init.observed[i], si),
                pct(init.target[i], st)
            );
        }
        out
    }
}

fn pct(v: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        v as f64 / total as f64 * 100.0
    }
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::{default_bins, Block};
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn trip(o: &str, d: &str, block: usize, duration: f64) -> TripRecord {
        TripRecord {
            origin_unit: o.into(),
            dest_unit: d.into(),
            origin_building: "b".into(),
            dest_building: "c".into(),
            depart_block: block,
            depart_minute: 0,
            arrive_minute: duration,
            duration_min: duration,
            distance_m: 0.0,
        }
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&["x", "y"]), &set(&["x", "y"])), 1.0);
        assert_eq!(jaccard(&set(&["x"]), &set(&["y"])), 0.0);
        assert!((jaccard(&set(&["x", "y"]), &set(&["y", "z"])) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(total_variation(&[3, 1], &[6, 2]), 0.0);
        assert_eq!(total_variation(&[1, 0], &[0, 1]), 1.0);
        assert_eq!(total_variation(&[0, 0], &[0, 0]), 0.0);
    }

    fn two_block_dep(counts: &[(&str, Vec<u64>)]) -> DepartureMarginal {
        let blocks = vec![Block { start: 0, end: 300 }, Block { start: 300, end: 1440 }];
        DepartureMarginal::new(blocks, counts.iter().map(|(o, c)| (o.to_string(), c.clone())).collect()).unwrap()
    }

    #[test]
    fn departure_empty_is_zero() {
        let dep = two_block_dep(&[("a", vec![0, 0])]);
        let r = departure_exactness(&[], &dep).unwrap();
        assert_eq!(r.max_abs_dev(), 0);
        assert_eq!(r.pooled.tv, 0.0);
    }

    #[test]
    fn moved_trip_deviates_in_two_blocks() {
        let dep = two_block_dep(&[("a", vec![2, 1])]);
        let mut trips = vec![trip("a", "x", 0, 1.0), trip("a", "x", 0, 1.0), trip("a", "x", 1, 1.0)];
        assert_eq!(departure_exactness(&trips, &dep).unwrap().max_abs_dev(), 0);
        trips[0].depart_block = 1;
        let r = departure_exactness(&trips, &dep).unwrap();
        let row = &r.per_origin[0];
        let devs: Vec<u64> = row.observed.iter().zip(&row.target).map(|(a, b)| a.abs_diff(*b)).collect();
        assert_eq!(devs, vec![1, 1]);
    }

    #[test]
    fn travel_histogram_bins_durations() {
        let dep = two_block_dep(&[("a", vec![3, 0])]);
        let mut counts = vec![0; 12];
        counts[2] = 3;
        let tt = TravelTimeMarginal::new(default_bins(), [("a".to_string(), counts)].into()).unwrap();
        let trips = vec![trip("a", "x", 0, 12.0), trip("a", "x", 0, 4.999), trip("a", "x", 0, 90.0)];
        let r = travel_time_histogram(&trips, &tt, &dep).unwrap();
        assert_eq!(r.pooled.observed[0], 1);
        assert_eq!(r.pooled.observed[2], 1);
        assert_eq!(r.pooled.observed[11], 1);
        assert!((r.pooled.tv - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.pooled.mae_pp - r.pooled.tv * 2.0 / 12.0 * 100.0).abs() < 1e-12);
    }

    #[test]
    fn jaccard_on_trips() {
        let flows = ODFlowTable::from_raw(vec![("a", "x", 2.0), ("a", "y", 1.0)]).unwrap();
        let mut scaled = flows.clone();
        for c in scaled.rows.get_mut("a").unwrap() {
            c.scaled_int = c.raw as u64;
        }
        let trips = vec![trip("a", "x", 0, 1.0), trip("a", "y", 0, 1.0)];
        assert_eq!(jaccard_destinations(&scaled, &trips, Support::Raw).mean, 1.0);
        let r = jaccard_destinations(&scaled, &trips[..1], Support::Raw);
        assert_eq!(r.mean, 0.5);
    }

    proptest! {
        #[test]
        fn tv_is_bounded_and_symmetric(p in prop::collection::vec(0u64..20, 5), q in prop::collection::vec(0u64..20, 5)) {
            let a = total_variation(&p, &q);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, total_variation(&q, &p));
        }

        #[test]
        fn jaccard_is_bounded(a in prop::collection::btree_set(0u8..10, 0..6), b in prop::collection::btree_set(0u8..10, 0..6)) {
            let j = jaccard(&a, &b);
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(j == 1.0, a == b);
        }
    }
}

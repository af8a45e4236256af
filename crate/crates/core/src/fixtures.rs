//! Synthetic "mini-county" input generator.
//!
//! Census units form a rectangular grid of square cells. Each unit gets
//! OSM residential and commercial points plus MSBF footprints; some units
//! have no OSM buildings and one has no buildings at all, so every
//! selection tier occurs. The road network is a lattice with faster
//! arterials that slow down in the morning and evening peaks.
//!
//! Travel-time marginals come from centroid routing on the same network
//! with speeds scaled by `true_speed_factor`, so the synthetic durations
//! start off biased and both the mean-speed shift and the calibration have
//! something to correct.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::marginals::{bin_index, default_bins, default_blocks, integerize_row};
use crate::network::{kmh_to_mps, Node, RoadGraph, HOURS};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq)]
pub struct MiniCounty {
    pub units_x: usize,
    pub units_y: usize,
    /// Side of one unit in degrees.
    pub unit_deg: f64,
    pub buildings_per_unit: usize,
    pub trips_per_origin: u64,
    pub dests_per_origin: usize,
    /// Lattice nodes per unit side.
    pub nodes_per_unit: usize,
    /// Arterial speed multiplier in peak hours; 1 gives time-invariant speeds.
    pub peak_factor: f64,
    /// Speed multiplier of the network that generates the travel-time
    /// marginals.
    pub true_speed_factor: f64,
    pub seed: u64,
}

impl Default for MiniCounty {
    fn default() -> Self {
        Self {
            units_x: 10,
            units_y: 5,
            unit_deg: 0.02,
            buildings_per_unit: 40,
            trips_per_origin: 200,
            dests_per_origin: 15,
            nodes_per_unit: 3,
            peak_factor: 0.35,
            true_speed_factor: 0.75,
            seed: 2024,
        }
    }
}

const ORIGIN_LON: f64 = -85.40;
const ORIGIN_LAT: f64 = 35.00;
const LOCAL_KMH: f64 = 30.0;
const ARTERIAL_KMH: f64 = 60.0;

impl MiniCounty {
    fn unit_id(&self, ix: usize, iy: usize) -> String {
        format!("470650{:03}{:03}", ix + 1, iy + 1)
    }

    fn unit_origin(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            ORIGIN_LON + ix as f64 * self.unit_deg,
            ORIGIN_LAT + iy as f64 * self.unit_deg,
        )
    }

    fn units(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for ix in 0..self.units_x {
            for iy in 0..self.units_y {
                out.push((self.unit_id(ix, iy), ix, iy));
            }
        }
        out
    }

    fn centroid(&self, ix: usize, iy: usize) -> LonLat {
        let (lon, lat) = self.unit_origin(ix, iy);
        LonLat::new(lon + self.unit_deg / 2.0, lat + self.unit_deg / 2.0)
    }

    fn lattice(&self) -> (Vec<Node>, Vec<(u64, u64, f64, [f64; HOURS])>) {
        let nx = self.units_x * self.nodes_per_unit + 1;
        let ny = self.units_y * self.nodes_per_unit + 1;
        let step = self.unit_deg / self.nodes_per_unit as f64;
        let id = |i: usize, j: usize| (j * nx + i) as u64 + 1;
        let mut nodes = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                nodes.push(Node {
                    id: id(i, j),
                    location: LonLat::new(ORIGIN_LON + i as f64 * step, ORIGIN_LAT + j as f64 * step),
                });
            }
        }
        let loc = |i: usize, j: usize| nodes[j * nx + i].location;
        let mut edges = Vec::new();
        let mut link = |a: (usize, usize), b: (usize, usize), arterial: bool| {
            let len = crate::geo::haversine_m(loc(a.0, a.1), loc(b.0, b.1));
            let speeds = self.speeds(arterial);
            edges.push((id(a.0, a.1), id(b.0, b.1), len, speeds));
            edges.push((id(b.0, b.1), id(a.0, a.1), len, speeds));
        };
        for j in 0..ny {
            for i in 0..nx {
                if i + 1 < nx {
                    link((i, j), (i + 1, j), j % self.nodes_per_unit == 0);
                }
                if j + 1 < ny {
                    link((i, j), (i, j + 1), i % self.nodes_per_unit == 0);
                }
            }
        }
        (nodes, edges)
    }

    fn speeds(&self, arterial: bool) -> [f64; HOURS] {
        let mut s = [kmh_to_mps(if arterial { ARTERIAL_KMH } else { LOCAL_KMH }); HOURS];
        if arterial {
            for h in [7, 8, 16, 17] {
                s[h] *= self.peak_factor;
            }
        }
        s
    }

    fn building_docs(&self) -> (Value, Value) {
        let mut rng = substream(self.seed, "mini-county", "buildings");
        let (mut osm, mut msbf) = (Vec::new(), Vec::new());
        let units = self.units();
        for (u, (gid, ix, iy)) in units.iter().enumerate() {
            if u == 1 {
                continue;
            }
            let (lon0, lat0) = self.unit_origin(*ix, *iy);
            let osm_share = if u % 7 == 3 { 0 } else { self.buildings_per_unit / 2 };
            for k in 0..self.buildings_per_unit {
                // Stay clear of unit boundaries.
                let lon = lon0 + self.unit_deg * rng.gen_range(0.05..0.95);
                let lat = lat0 + self.unit_deg * rng.gen_range(0.05..0.95);
                if k < osm_share {
                    let landuse = if k % 5 < 3 { "residential" } else { "commercial" };
                    osm.push(json!({
                        "type": "Feature",
                        "properties": {"id": format!("osm-{gid}-{k}"), "landuse": landuse},
                        "geometry": {"type": "Point", "coordinates": [lon, lat]}
                    }));
                } else {
                    let h = self.unit_deg * 0.004;
                    msbf.push(json!({
                        "type": "Feature",
                        "properties": {"id": format!("msbf-{gid}-{k}")},
                        "geometry": {"type": "Polygon", "coordinates": [[
                            [lon - h, lat - h], [lon + h, lat - h], [lon + h, lat + h], [lon - h, lat + h], [lon - h, lat - h]
                        ]]}
                    }));
                }
            }
        }
        let fc = |features: Vec<Value>| json!({"type": "FeatureCollection", "features": features});
        (fc(osm), fc(msbf))
    }

    fn units_doc(&self) -> Value {
        let features: Vec<Value> = self
            .units()
            .iter()
            .map(|(gid, ix, iy)| {
                let (x0, y0) = self.unit_origin(*ix, *iy);
                let (x1, y1) = (x0 + self.unit_deg, y0 + self.unit_deg);
                json!({
                    "type": "Feature",
                    "properties": {"geoid": gid},
                    "geometry": {"type": "Polygon", "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]]}
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }

    /// Destination weights per origin: gravity over grid distance among
    /// the nearest units, each weight large enough to survive
    /// integerization.
    fn flows(&self) -> BTreeMap<String, Vec<(String, f64)>> {
        let mut rng = substream(self.seed, "mini-county", "flows");
        let units = self.units();
        let mut out = BTreeMap::new();
        for (gid, ix, iy) in &units {
            let mut near: Vec<(f64, &String)> = units
                .iter()
                .map(|(g, jx, jy)| {
                    let d = ((*ix as f64 - *jx as f64).powi(2) + (*iy as f64 - *jy as f64).powi(2)).sqrt();
                    (d, g)
                })
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
            let dests: Vec<(String, f64)> = near
                .into_iter()
                .take(self.dests_per_origin)
                .map(|(d, g)| (g.clone(), (100.0 / (1.0 + d)) * rng.gen_range(0.6..1.4)))
                .collect();
            let total: f64 = dests.iter().map(|d| d.1).sum();
            let floor = 2.0 * total / self.trips_per_origin as f64;
            let dests = dests.into_iter().map(|(g, w)| (g, w.max(floor).round().max(1.0))).collect();
            out.insert(gid.clone(), dests);
        }
        out
    }

    fn departures(&self) -> Result<BTreeMap<String, Vec<u64>>> {
        let mut rng = substream(self.seed, "mini-county", "departures");
        // Shares for the fourteen default blocks, peaking 07:00-08:00.
        let base = [2.0, 3.0, 4.0, 6.0, 9.0, 13.0, 15.0, 12.0, 8.0, 7.0, 5.0, 4.0, 7.0, 5.0];
        let mut out = BTreeMap::new();
        for (gid, _, _) in self.units() {
            let shares: Vec<f64> = base.iter().map(|b| b * rng.gen_range(0.7..1.3)).collect();
            out.insert(gid, integerize_row(&shares, self.trips_per_origin)?);
        }
        Ok(out)
    }

    /// Travel-time counts from centroid routes on the "true" network,
    /// weighted by the expected cell counts.
    fn travel_times(
        &self,
        flows: &BTreeMap<String, Vec<(String, f64)>>,
        dep: &BTreeMap<String, Vec<u64>>,
    ) -> Result<BTreeMap<String, Vec<u64>>> {
        let (nodes, edges) = self.lattice();
        let mut graph = RoadGraph::new(nodes, edges)?;
        graph.scale_speeds(self.true_speed_factor);
        let blocks = default_blocks();
        let bins = default_bins();
        let centroids: BTreeMap<String, LonLat> =
            self.units().into_iter().map(|(g, ix, iy)| (g, self.centroid(ix, iy))).collect();
        let mut out = BTreeMap::new();
        for (o, row) in flows {
            let total: f64 = row.iter().map(|d| d.1).sum();
            let dep_row = &dep[o];
            let n_o: u64 = dep_row.iter().sum();
            let queries: Vec<(LonLat, LonLat, u32)> = row
                .iter()
                .flat_map(|(d, _)| blocks.iter().map(|b| (centroids[o], centroids[d], b.midpoint())))
                .collect();
            let legs = graph.travel_many(&queries)?;
            let mut hist = vec![0.0; bins.len()];
            for (di, (_, w)) in row.iter().enumerate() {
                for (t, &c) in dep_row.iter().enumerate() {
                    let leg = legs[di * blocks.len() + t];
                    hist[bin_index(&bins, leg.route.duration_min)] += w / total * c as f64;
                }
            }
            out.insert(o.clone(), integerize_row(&hist, n_o)?);
        }
        Ok(out)
    }

    /// Write every input file plus `config.toml` into `dir`; returns the
    /// config path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, contents: String| {
            let p = dir.join(name);
            std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))
        };
        let json = |v: &Value| serde_json::to_string(v).expect("serializable");

        write("units.geojson", json(&self.units_doc()))?;
        let (osm, msbf) = self.building_docs();
        write("buildings_osm.geojson", json(&osm))?;
        write("buildings_msbf.geojson", json(&msbf))?;

        let (nodes, edges) = self.lattice();
        let mut s = String::from("node_id,lon,lat\n");
        for n in &nodes {
            let _ = writeln!(s, "{},{},{}", n.id, n.location.lon, n.location.lat);
        }
        write("nodes.csv", s)?;
        let mut s = String::from("from,to,length_m");
        for h in 0..HOURS {
            let _ = write!(s, ",speed_h{h}");
        }
        s.push('\n');
        for (a, b, len, speeds) in &edges {
            let _ = write!(s, "{a},{b},{len:.3}");
            for v in speeds {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        write("edges.csv", s)?;

        let flows = self.flows();
        let mut s = String::from("origin_geoid,dest_geoid,count\n");
        for (o, row) in &flows {
            for (d, c) in row {
                let _ = writeln!(s, "{o},{d},{c}");
            }
        }
        write("flows.csv", s)?;

        let dep = self.departures()?;
        let blocks = default_blocks();
        let mut s = String::from("geoid,block_start_min,block_end_min,count\n");
        for (o, row) in &dep {
            for (b, c) in blocks.iter().zip(row) {
                let _ = writeln!(s, "{o},{},{},{c}", b.start, b.end);
            }
        }
        write("departures.csv", s)?;

        let tt = self.travel_times(&flows, &dep)?;
        let bins = default_bins();
        let mut s = String::from("geoid,bin_start_min,bin_end_min,count\n");
        for (o, row) in &tt {
            for (b, c) in bins.iter().zip(row) {
                let _ = writeln!(s, "{o},{},{},{c}", b.start, b.end.unwrap_or(-1.0));
            }
        }
        write("travel_times.csv", s)?;

        write("config.toml", self.config_text())?;
        Ok(dir.join("config.toml"))
    }

    fn config_text(&self) -> String {
        format!(
            r#"seed = {seed}
output_dir = "out"

[inputs]
units = "units.geojson"
buildings_osm = "buildings_osm.geojson"
buildings_msbf = "buildings_msbf.geojson"
network_nodes = "nodes.csv"
network_edges = "edges.csv"
flows = "flows.csv"
departures = "departures.csv"
travel_times = "travel_times.csv"

[calibrate]
alpha = 1.0
beta = 1.0

[vrp]
k = 100
instances = 1
window_min = 30
budget_s = 30
max_iters = 300
"#,
            seed = self.seed
        )
    }
}

//! GeoJSON ingestion, census-unit assignment and tiered building selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::{BBox, LonLat, MultiPolygon, Polygon, Ring};

#[derive(Debug, Clone)]
pub struct CensusUnit {
    pub id: String,
    pub boundary: MultiPolygon,
    pub centroid: LonLat,
    bbox: BBox,
}

impl CensusUnit {
    pub fn new(id: impl Into<String>, boundary: MultiPolygon) -> Self {
        let centroid = boundary.centroid();
        let bbox = boundary.bbox();
        Self {
            id: id.into(),
            boundary,
            centroid,
            bbox,
        }
    }

    pub fn contains(&self, p: LonLat) -> bool {
        self.bbox.contains(p) && self.boundary.contains(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Landuse {
    Residential,
    Commercial,
    Untagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuildingSource {
    Osm,
    Msbf,
    CentroidFallback,
}

impl fmt::Display for Landuse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Landuse::Residential => "residential",
            Landuse::Commercial => "commercial",
            Landuse::Untagged => "untagged",
        })
    }
}

impl fmt::Display for BuildingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BuildingSource::Osm => "osm",
            BuildingSource::Msbf => "msbf",
            BuildingSource::CentroidFallback => "centroid-fallback",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: String,
    pub location: LonLat,
    pub landuse: Landuse,
    pub source: BuildingSource,
    pub unit_id: String,
}

impl Building {
    /// The synthetic building standing in for a unit without footprints.
    pub fn centroid_fallback(unit: &CensusUnit) -> Self {
        Self {
            id: format!("centroid:{}", unit.id),
            location: unit.centroid,
            landuse: Landuse::Untagged,
            source: BuildingSource::CentroidFallback,
            unit_id: unit.id.clone(),
        }
    }
}

/// Maps OSM `landuse` tag values onto the residential/commercial split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanduseMap {
    pub residential: Vec<String>,
    pub commercial: Vec<String>,
}

impl Default for LanduseMap {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            residential: owned(&["residential", "house", "apartments", "detached", "dormitory"]),
            commercial: owned(&["commercial", "retail", "office", "industrial", "warehouse"]),
        }
    }
}

impl LanduseMap {
    pub fn classify(&self, tag: Option<&str>) -> Landuse {
        match tag {
            Some(t) if self.residential.iter().any(|r| r == t) => Landuse::Residential,
            Some(t) if self.commercial.iter().any(|c| c == t) => Landuse::Commercial,
            _ => Landuse::Untagged,
        }
    }
}

/// A building parsed from a footprint file, before unit assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBuilding {
    pub id: String,
    pub location: LonLat,
    pub landuse: Landuse,
    pub source: BuildingSource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub osm: usize,
    pub msbf: usize,
    pub centroid: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub units: usize,
    pub osm_parsed: usize,
    pub msbf_parsed: usize,
    pub osm_dropped: usize,
    pub msbf_dropped: usize,
    pub origin_tiers: TierCounts,
    pub destination_tiers: TierCounts,
}

impl LoadReport {
    pub fn dropped(&self) -> usize {
        self.osm_dropped + self.msbf_dropped
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "census units: {}", self.units);
        let _ = writeln!(s, "osm buildings parsed: {}", self.osm_parsed);
        let _ = writeln!(s, "msbf buildings parsed: {}", self.msbf_parsed);
        let _ = writeln!(s, "osm buildings dropped (outside all units): {}", self.osm_dropped);
        let _ = writeln!(s, "msbf buildings dropped (outside all units): {}", self.msbf_dropped);
        for (name, t) in [("origin", &self.origin_tiers), ("destination", &self.destination_tiers)] {
            let _ = writeln!(
                s,
                "{name} candidate tiers: osm={} msbf={} centroid={}",
                t.osm, t.msbf, t.centroid
            );
        }
        s
    }
}

/// Units and assigned buildings for one study region.
#[derive(Debug, Clone)]
pub struct Region {
    /// Sorted by id.
    pub units: Vec<CensusUnit>,
    pub buildings: Vec<Building>,
    pub report: LoadReport,
}

impl Region {
    pub fn unit(&self, id: &str) -> Option<&CensusUnit> {
        self.units
            .binary_search_by(|u| u.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.units[i])
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Load units and both footprint files, then assign every building to a unit.
pub fn load_region(
    units_file: &Path,
    buildings_osm_file: &Path,
    buildings_msbf_file: &Path,
    landuse: &LanduseMap,
) -> Result<Region> {
    let units = parse_units(&file_label(units_file), &read_json(units_file)?)?;
    let osm = parse_buildings(
        &file_label(buildings_osm_file),
        &read_json(buildings_osm_file)?,
        BuildingSource::Osm,
        landuse,
    )?;
    let msbf = parse_buildings(
        &file_label(buildings_msbf_file),
        &read_json(buildings_msbf_file)?,
        BuildingSource::Msbf,
        landuse,
    )?;
    region_from_parts(units, osm, msbf)
}

/// Assemble a region from already-parsed parts.
pub fn region_from_parts(
    mut units: Vec<CensusUnit>,
    osm: Vec<RawBuilding>,
    msbf: Vec<RawBuilding>,
) -> Result<Region> {
    units.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = units.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Ingest(format!("duplicate unit id {}", w[0].id)));
    }
    let mut seen = BTreeSet::new();
    for b in osm.iter().chain(&msbf) {
        if !seen.insert(b.id.as_str()) {
            return Err(Error::Ingest(format!("duplicate building id {}", b.id)));
        }
    }
    let mut report = LoadReport {
        units: units.len(),
        osm_parsed: osm.len(),
        msbf_parsed: msbf.len(),
        ..Default::default()
    };
    let (osm_assigned, osm_dropped) = assign_units(&units, osm);
    let (msbf_assigned, msbf_dropped) = assign_units(&units, msbf);
    report.osm_dropped = osm_dropped;
    report.msbf_dropped = msbf_dropped;
    let mut buildings = osm_assigned;
    buildings.extend(msbf_assigned);
    if report.dropped() > 0 {
        log::warn!("{} buildings lie outside every census unit and were dropped", report.dropped());
    }
    let mut region = Region {
        units,
        buildings,
        report,
    };
    let cands = tiered_candidates(&region.units, &region.buildings);
    region.report.origin_tiers = cands.origin_tiers();
    region.report.destination_tiers = cands.destination_tiers();
    Ok(region)
}

/// Point-in-polygon assignment. A point inside (or on the boundary of)
/// several units goes to the one with the smallest id. `units` must be
/// sorted by id.
pub fn assign_units(units: &[CensusUnit], raw: Vec<RawBuilding>) -> (Vec<Building>, usize) {
    let resolved: Vec<Option<Building>> = raw
        .into_par_iter()
        .map(|b| {
            units.iter().find(|u| u.contains(b.location)).map(|u| Building {
                id: b.id,
                location: b.location,
                landuse: b.landuse,
                source: b.source,
                unit_id: u.id.clone(),
            })
        })
        .collect();
    let dropped = resolved.iter().filter(|b| b.is_none()).count();
    (resolved.into_iter().flatten().collect(), dropped)
}

fn features<'a>(file: &str, doc: &'a Value) -> Result<&'a Vec<Value>> {
    doc.get("features").and_then(Value::as_array).ok_or_else(|| Error::Geometry {
        file: file.to_string(),
        index: 0,
        message: "not a GeoJSON FeatureCollection".into(),
    })
}

fn string_property(feature: &Value, key: &str) -> Option<String> {
    match feature.get("properties")?.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub fn parse_units(file: &str, doc: &Value) -> Result<Vec<CensusUnit>> {
    let mut units = Vec::new();
    for (index, f) in features(file, doc)?.iter().enumerate() {
        let err = |message: String| Error::Geometry {
            file: file.to_string(),
            index,
            message,
        };
        let id = string_property(f, "geoid").ok_or_else(|| err("missing `geoid` property".into()))?;
        let boundary = match parse_geometry(f.get("geometry")).map_err(err)? {
            Geometry::Area(mp) => mp,
            Geometry::Point(_) => return Err(err("unit geometry must be Polygon or MultiPolygon".into())),
        };
        units.push(CensusUnit::new(id, boundary));
    }
    Ok(units)
}

pub fn parse_buildings(
    file: &str,
    doc: &Value,
    source: BuildingSource,
    landuse: &LanduseMap,
) -> Result<Vec<RawBuilding>> {
    let mut out = Vec::new();
    for (index, f) in features(file, doc)?.iter().enumerate() {
        let location = match parse_geometry(f.get("geometry")) {
            Ok(Geometry::Point(p)) => p,
            Ok(Geometry::Area(mp)) => mp.centroid(),
            Err(message) => {
                return Err(Error::Geometry {
                    file: file.to_string(),
                    index,
                    message,
                })
            }
        };
        let id = string_property(f, "id").unwrap_or_else(|| format!("{file}:{index}"));
        let tag = string_property(f, "landuse");
        out.push(RawBuilding {
            id,
            location,
            landuse: landuse.classify(tag.as_deref()),
            source,
        });
    }
    Ok(out)
}

enum Geometry {
    Point(LonLat),
    Area(MultiPolygon),
}

fn parse_position(v: &Value) -> std::result::Result<LonLat, String> {
    let arr = v.as_array().ok_or("position is not an array")?;
    match (arr.first().and_then(Value::as_f64), arr.get(1).and_then(Value::as_f64)) {
        (Some(lon), Some(lat)) if lon.is_finite() && lat.is_finite() => Ok(LonLat::new(lon, lat)),
        _ => Err("position needs numeric lon and lat".into()),
    }
}

fn parse_ring(v: &Value) -> std::result::Result<Ring, String> {
    let pts = v
        .as_array()
        .ok_or("ring is not an array")?
        .iter()
        .map(parse_position)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if pts.len() < 4 {
        return Err(format!("ring has {} positions, need at least 4", pts.len()));
    }
    if pts.first() != pts.last() {
        return Err("ring is not closed".into());
    }
    Ok(Ring(pts))
}

fn parse_polygon(v: &Value) -> std::result::Result<Polygon, String> {
    let rings = v.as_array().ok_or("polygon is not an array of rings")?;
    let mut rings = rings.iter().map(parse_ring);
    let exterior = rings.next().ok_or("polygon without rings")??;
    let holes = rings.collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Polygon { exterior, holes })
}

fn parse_geometry(g: Option<&Value>) -> std::result::Result<Geometry, String> {
    let g = g.filter(|g| !g.is_null()).ok_or("missing geometry")?;
    let coords = g.get("coordinates").ok_or("geometry without coordinates")?;
    match g.get("type").and_then(Value::as_str) {
        Some("Point") => parse_position(coords).map(Geometry::Point),
        Some("Polygon") => Ok(Geometry::Area(MultiPolygon(vec![parse_polygon(coords)?]))),
        Some("MultiPolygon") => {
            let polys = coords
                .as_array()
                .ok_or("multipolygon is not an array")?
                .iter()
                .map(parse_polygon)
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if polys.is_empty() {
                return Err("empty multipolygon".into());
            }
            Ok(Geometry::Area(MultiPolygon(polys)))
        }
        Some(other) => Err(format!("unsupported geometry type {other}")),
        None => Err("geometry without type".into()),
    }
}

/// Candidate origin and destination buildings of one unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCandidates {
    pub origin_buildings: Vec<String>,
    pub destination_buildings: Vec<String>,
    pub origin_tier: BuildingSource,
    pub destination_tier: BuildingSource,
}

#[derive(Debug, Clone, Default)]
pub struct CandidateSets {
    pub per_unit: BTreeMap<String, UnitCandidates>,
    /// Every building a candidate list may reference, including
    /// synthetic centroid buildings.
    pub buildings: BTreeMap<String, Building>,
}

impl CandidateSets {
    pub fn get(&self, unit: &str) -> Option<&UnitCandidates> {
        self.per_unit.get(unit)
    }

    pub fn building(&self, id: &str) -> Option<&Building> {
        self.buildings.get(id)
    }

    fn tiers(&self, pick: impl Fn(&UnitCandidates) -> BuildingSource) -> TierCounts {
        let mut t = TierCounts::default();
        for c in self.per_unit.values() {
            match pick(c) {
                BuildingSource::Osm => t.osm += 1,
                BuildingSource::Msbf => t.msbf += 1,
                BuildingSource::CentroidFallback => t.centroid += 1,
            }
        }
        t
    }

    pub fn origin_tiers(&self) -> TierCounts {
        self.tiers(|c| c.origin_tier)
    }

    pub fn destination_tiers(&self) -> TierCounts {
        self.tiers(|c| c.destination_tier)
    }
}

/// Three-tier rule: tagged OSM buildings of the matching land use, else
/// every MSBF footprint in the unit, else the unit centroid.
pub fn tiered_candidates(units: &[CensusUnit], buildings: &[Building]) -> CandidateSets {
    #[derive(Default)]
    struct Pools<'a> {
        residential: Vec<&'a Building>,
        commercial: Vec<&'a Building>,
        msbf: Vec<&'a Building>,
    }
    let mut pools: BTreeMap<&str, Pools> = BTreeMap::new();
    for b in buildings {
        let p = pools.entry(b.unit_id.as_str()).or_default();
        match (b.source, b.landuse) {
            (BuildingSource::Osm, Landuse::Residential) => p.residential.push(b),
            (BuildingSource::Osm, Landuse::Commercial) => p.commercial.push(b),
            (BuildingSource::Msbf, _) => p.msbf.push(b),
            _ => {}
        }
    }

    let mut sets = CandidateSets::default();
    for unit in units {
        let empty = Pools::default();
        let p = pools.get(unit.id.as_str()).unwrap_or(&empty);
        let mut pick = |tagged: &[&Building]| -> (Vec<String>, BuildingSource) {
            let chosen: &[&Building] = if !tagged.is_empty() {
                tagged
            } else if !p.msbf.is_empty() {
                &p.msbf
            } else {
                let fallback = Building::centroid_fallback(unit);
                let id = fallback.id.clone();
                sets.buildings.insert(id.clone(), fallback);
                return (vec![id], BuildingSource::CentroidFallback);
            };
            for b in chosen {
                sets.buildings.insert(b.id.clone(), (*b).clone());
            }
            (chosen.iter().map(|b| b.id.clone()).collect(), chosen[0].source)
        };
        let (origin_buildings, origin_tier) = pick(&p.residential);
        let (destination_buildings, destination_tier) = pick(&p.commercial);
        sets.per_unit.insert(
            unit.id.clone(),
            UnitCandidates {
                origin_buildings,
                destination_buildings,
                origin_tier,
                destination_tier,
            },
        );
    }
    sets
}

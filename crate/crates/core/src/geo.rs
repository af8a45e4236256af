//! Planar and spherical geometry on WGS84 lon/lat coordinates.

use serde::{Deserialize, Serialize};

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Great-circle distance in meters (haversine).
pub fn haversine_m(a: LonLat, b: LonLat) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// A closed ring; the first and last positions coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring(pub Vec<LonLat>);

impl Ring {
    /// Signed shoelace area in squared degrees (positive when counter-clockwise).
    pub fn signed_area(&self) -> f64 {
        self.0
            .windows(2)
            .map(|w| w[0].lon * w[1].lat - w[1].lon * w[0].lat)
            .sum::<f64>()
            / 2.0
    }

    /// Area-weighted centroid together with the signed area.
    fn centroid_and_area(&self) -> (LonLat, f64) {
        let area = self.signed_area();
        if area.abs() < 1e-18 {
            let n = (self.0.len() - 1).max(1) as f64;
            let (sx, sy) = self.0[..self.0.len().saturating_sub(1).max(1)]
                .iter()
                .fold((0.0, 0.0), |(x, y), p| (x + p.lon, y + p.lat));
            return (LonLat::new(sx / n, sy / n), 0.0);
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for w in self.0.windows(2) {
            let cross = w[0].lon * w[1].lat - w[1].lon * w[0].lat;
            cx += (w[0].lon + w[1].lon) * cross;
            cy += (w[0].lat + w[1].lat) * cross;
        }
        (LonLat::new(cx / (6.0 * area), cy / (6.0 * area)), area)
    }

    fn on_boundary(&self, p: LonLat) -> bool {
        self.0.windows(2).any(|w| on_segment(w[0], w[1], p))
    }

    /// Even-odd crossing test; boundary points give an unspecified answer.
    fn crosses(&self, p: LonLat) -> bool {
        let mut inside = false;
        for w in self.0.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                if p.lon < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn on_segment(a: LonLat, b: LonLat, p: LonLat) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    let scale = (b.lon - a.lon).abs().max((b.lat - a.lat).abs()).max(1e-300);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

/// Outer ring plus holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon {
    /// Closed-set membership: boundary points count as inside.
    pub fn contains(&self, p: LonLat) -> bool {
        if self.exterior.on_boundary(p) || self.holes.iter().any(|h| h.on_boundary(p)) {
            return true;
        }
        self.exterior.crosses(p) && !self.holes.iter().any(|h| h.crosses(p))
    }

    fn weighted_centroid(&self) -> (f64, f64, f64) {
        let (c, a) = self.exterior.centroid_and_area();
        let a = a.abs();
        let (mut sx, mut sy, mut sa) = (c.lon * a, c.lat * a, a);
        for h in &self.holes {
            let (hc, ha) = h.centroid_and_area();
            let ha = ha.abs();
            sx -= hc.lon * ha;
            sy -= hc.lat * ha;
            sa -= ha;
        }
        (sx, sy, sa)
    }
}

/// A region made of one or more polygons.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPolygon(pub Vec<Polygon>);

impl MultiPolygon {
    pub fn contains(&self, p: LonLat) -> bool {
        self.0.iter().any(|poly| poly.contains(p))
    }

    /// Area-weighted centroid of all polygons (holes subtracted).
    pub fn centroid(&self) -> LonLat {
        let (mut sx, mut sy, mut sa) = (0.0, 0.0, 0.0);
        for poly in &self.0 {
            let (x, y, a) = poly.weighted_centroid();
            sx += x;
            sy += y;
            sa += a;
        }
        if sa.abs() < 1e-18 {
            return self.0[0].exterior.centroid_and_area().0;
        }
        LonLat::new(sx / sa, sy / sa)
    }

    pub fn bbox(&self) -> BBox {
        let mut bb = BBox::empty();
        for p in self.0.iter().flat_map(|poly| poly.exterior.0.iter()) {
            bb.extend(*p);
        }
        bb
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: LonLat,
    pub max: LonLat,
}

impl BBox {
    fn empty() -> Self {
        Self {
            min: LonLat::new(f64::INFINITY, f64::INFINITY),
            max: LonLat::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn extend(&mut self, p: LonLat) {
        self.min.lon = self.min.lon.min(p.lon);
        self.min.lat = self.min.lat.min(p.lat);
        self.max.lon = self.max.lon.max(p.lon);
        self.max.lat = self.max.lat.max(p.lat);
    }

    pub fn contains(&self, p: LonLat) -> bool {
        p.lon >= self.min.lon && p.lon <= self.max.lon && p.lat >= self.min.lat && p.lat <= self.max.lat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, side: f64) -> MultiPolygon {
        let ring = Ring(vec![
            LonLat::new(x0, y0),
            LonLat::new(x0 + side, y0),
            LonLat::new(x0 + side, y0 + side),
            LonLat::new(x0, y0 + side),
            LonLat::new(x0, y0),
        ]);
        MultiPolygon(vec![Polygon {
            exterior: ring,
            holes: vec![],
        }])
    }

    #[test]
    fn square_membership_and_centroid() {
        let sq = square(0.0, 0.0, 1.0);
        assert!(sq.contains(LonLat::new(0.5, 0.5)));
        assert!(sq.contains(LonLat::new(1.0, 0.3)));
        assert!(sq.contains(LonLat::new(0.0, 0.0)));
        assert!(!sq.contains(LonLat::new(1.0001, 0.5)));
        let c = sq.centroid();
        assert!((c.lon - 0.5).abs() < 1e-12 && (c.lat - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hole_excludes_interior() {
        let outer = square(0.0, 0.0, 4.0).0.remove(0).exterior;
        let hole = square(1.0, 1.0, 2.0).0.remove(0).exterior;
        let poly = MultiPolygon(vec![Polygon {
            exterior: outer,
            holes: vec![hole],
        }]);
        assert!(!poly.contains(LonLat::new(2.0, 2.0)));
        assert!(poly.contains(LonLat::new(0.5, 2.0)));
        assert!(poly.contains(LonLat::new(1.0, 2.0)));
        let c = poly.centroid();
        assert!((c.lon - 2.0).abs() < 1e-12 && (c.lat - 2.0).abs() < 1e-12);
    }

    #[test]
    fn haversine_one_degree_latitude() {
        let d = haversine_m(LonLat::new(0.0, 0.0), LonLat::new(0.0, 1.0));
        assert!((d - 111_195.0).abs() < 5.0, "{d}");
        assert_eq!(haversine_m(LonLat::new(3.0, 4.0), LonLat::new(3.0, 4.0)), 0.0);
    }
}

//! Square tiling of a city bounding box.
//!
//! Tile sides are measured in meters using a local equirectangular
//! approximation evaluated once at the bounding box mid-latitude. Positions
//! are quantized to whole millimeters before tile assignment, so grids whose
//! edge lengths are integer multiples of one another nest exactly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

pub const MIN_EDGE_M: f64 = 50.0;
pub const MAX_EDGE_M: f64 = 5000.0;

/// Meters spanned by one degree of latitude.
pub fn meters_per_degree_lat() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

/// Meters spanned by one degree of longitude at `lat`.
pub fn meters_per_degree_lon(lat: f64) -> f64 {
    meters_per_degree_lat() * lat.to_radians().cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    /// Rough Manhattan box, used when no box is configured.
    pub const MANHATTAN: BoundingBox = BoundingBox {
        min_lon: -74.0200,
        min_lat: 40.7000,
        max_lon: -73.9070,
        max_lat: 40.8780,
    };

    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self> {
        let bbox = BoundingBox {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        };
        bbox.validate()?;
        Ok(bbox)
    }

    /// Box whose south-west corner is `(lon, lat)` and which spans the given
    /// metric extents under this module's equirectangular projection.
    pub fn from_extent(lon: f64, lat: f64, width_m: f64, height_m: f64) -> Result<Self> {
        let dlat = height_m / meters_per_degree_lat();
        let mid = lat + dlat / 2.0;
        let dlon = width_m / meters_per_degree_lon(mid);
        Self::new(lon, lat, lon + dlon, lat + dlat)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.min_lon, self.min_lat, self.max_lon, self.max_lat]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.min_lon >= self.max_lon || self.min_lat >= self.max_lat {
            return Err(Error::config(format!("degenerate bounding box {self}")));
        }
        if self.min_lon < -180.0 || self.max_lon > 180.0 || self.min_lat < -90.0 || self.max_lat > 90.0
        {
            return Err(Error::config(format!("bounding box {self} outside the globe")));
        }
        Ok(())
    }

    /// Closed containment on all four sides.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.min_lon && lon <= self.max_lon && lat >= self.min_lat && lat <= self.max_lat
    }

    pub fn mid_lat(&self) -> f64 {
        (self.min_lat + self.max_lat) / 2.0
    }

    pub fn width_m(&self) -> f64 {
        (self.max_lon - self.min_lon) * meters_per_degree_lon(self.mid_lat())
    }

    pub fn height_m(&self) -> f64 {
        (self.max_lat - self.min_lat) * meters_per_degree_lat()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}] x [{}, {}]",
            self.min_lon, self.max_lon, self.min_lat, self.max_lat
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileId {
    pub col: u32,
    pub row: u32,
}

impl TileId {
    pub fn new(col: u32, row: u32) -> Self {
        TileId { col, row }
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

/// Immutable square tiling. Tile `(c, r)` covers the half-open metric
/// interval `[c*e, (c+1)*e) x [r*e, (r+1)*e)` measured from the south-west
/// corner; points on the north or east edge of the box fold into the last
/// tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    bbox: BoundingBox,
    edge_length_m: f64,
    n_cols: u32,
    n_rows: u32,
    m_per_deg_lon: f64,
    m_per_deg_lat: f64,
    edge_mm: i64,
}

fn to_mm(m: f64) -> i64 {
    (m * 1000.0).round() as i64
}

impl TileGrid {
    pub fn new(bbox: BoundingBox, edge_length_m: f64) -> Result<Self> {
        bbox.validate()?;
        if !(MIN_EDGE_M..=MAX_EDGE_M).contains(&edge_length_m) {
            return Err(Error::config(format!(
                "tile edge {edge_length_m} m outside [{MIN_EDGE_M}, {MAX_EDGE_M}]"
            )));
        }
        let m_per_deg_lat = meters_per_degree_lat();
        let m_per_deg_lon = meters_per_degree_lon(bbox.mid_lat());
        let edge_mm = to_mm(edge_length_m);
        let cols = ceil_div(to_mm((bbox.max_lon - bbox.min_lon) * m_per_deg_lon), edge_mm);
        let rows = ceil_div(to_mm((bbox.max_lat - bbox.min_lat) * m_per_deg_lat), edge_mm);
        let n_cols = u32::try_from(cols.max(1))
            .map_err(|_| Error::config("tile grid has too many columns"))?;
        let n_rows =
            u32::try_from(rows.max(1)).map_err(|_| Error::config("tile grid has too many rows"))?;
        Ok(TileGrid {
            bbox,
            edge_length_m,
            n_cols,
            n_rows,
            m_per_deg_lon,
            m_per_deg_lat,
            edge_mm,
        })
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn edge_length_m(&self) -> f64 {
        self.edge_length_m
    }

    pub fn n_cols(&self) -> u32 {
        self.n_cols
    }

    pub fn n_rows(&self) -> u32 {
        self.n_rows
    }

    pub fn n_tiles(&self) -> u64 {
        u64::from(self.n_cols) * u64::from(self.n_rows)
    }

    /// Tile containing `(lon, lat)`; errors when the point lies outside the box.
    pub fn tile_of(&self, lon: f64, lat: f64) -> Result<TileId> {
        if !self.bbox.contains(lon, lat) {
            return Err(Error::data(format!(
                "point ({lon}, {lat}) outside bounding box {}",
                self.bbox
            )));
        }
        let x = to_mm((lon - self.bbox.min_lon) * self.m_per_deg_lon);
        let y = to_mm((lat - self.bbox.min_lat) * self.m_per_deg_lat);
        let col = (x.div_euclid(self.edge_mm) as u32).min(self.n_cols - 1);
        let row = (y.div_euclid(self.edge_mm) as u32).min(self.n_rows - 1);
        Ok(TileId { col, row })
    }

    /// Center of a tile, clipped to the box for partial edge tiles.
    pub fn tile_center(&self, tile: TileId) -> (f64, f64) {
        let (lon0, lat0, lon1, lat1) = self.tile_bounds(tile);
        ((lon0 + lon1) / 2.0, (lat0 + lat1) / 2.0)
    }

    /// `(min_lon, min_lat, max_lon, max_lat)` of a tile, clipped to the box.
    pub fn tile_bounds(&self, tile: TileId) -> (f64, f64, f64, f64) {
        let dlon = self.edge_length_m / self.m_per_deg_lon;
        let dlat = self.edge_length_m / self.m_per_deg_lat;
        let lon0 = self.bbox.min_lon + f64::from(tile.col) * dlon;
        let lat0 = self.bbox.min_lat + f64::from(tile.row) * dlat;
        (
            lon0,
            lat0,
            (lon0 + dlon).min(self.bbox.max_lon),
            (lat0 + dlat).min(self.bbox.max_lat),
        )
    }

    /// `key=value` summary lines.
    pub fn summary(&self) -> String {
        format!(
            "bbox_min_lon={}\nbbox_min_lat={}\nbbox_max_lon={}\nbbox_max_lat={}\nedge_length_m={}\nn_cols={}\nn_rows={}\nn_tiles={}\n",
            self.bbox.min_lon,
            self.bbox.min_lat,
            self.bbox.max_lon,
            self.bbox.max_lat,
            self.edge_length_m,
            self.n_cols,
            self.n_rows,
            self.n_tiles()
        )
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LON: f64 = -74.0;
    const LAT: f64 = 40.7;

    fn square_km(w: f64, h: f64) -> BoundingBox {
        BoundingBox::from_extent(LON, LAT, w * 1000.0, h * 1000.0).unwrap()
    }

    #[test]
    fn exact_division() {
        let g = TileGrid::new(square_km(10.0, 10.0), 1000.0).unwrap();
        assert_eq!((g.n_cols(), g.n_rows()), (10, 10));
    }

    #[test]
    fn partial_tile_rounds_up() {
        let g = TileGrid::new(square_km(10.5, 10.0), 1000.0).unwrap();
        assert_eq!((g.n_cols(), g.n_rows()), (11, 10));
    }

    #[test]
    fn edge_out_of_range() {
        let b = square_km(1.0, 1.0);
        assert!(matches!(TileGrid::new(b, 49.0), Err(Error::Config(_))));
        assert!(matches!(TileGrid::new(b, 5001.0), Err(Error::Config(_))));
        assert!(TileGrid::new(b, 50.0).is_ok());
    }

    #[test]
    fn degenerate_bbox_rejected() {
        assert!(BoundingBox::new(1.0, 1.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(1.0, 2.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn corners_and_midpoint() {
        let b = square_km(10.0, 10.0);
        let g = TileGrid::new(b, 1000.0).unwrap();
        assert_eq!(g.tile_of(b.min_lon, b.min_lat).unwrap(), TileId::new(0, 0));
        assert_eq!(g.tile_of(b.max_lon, b.max_lat).unwrap(), TileId::new(9, 9));
        let mid = ((b.min_lon + b.max_lon) / 2.0, (b.min_lat + b.max_lat) / 2.0);
        assert_eq!(g.tile_of(mid.0, mid.1).unwrap(), TileId::new(5, 5));
    }

    #[test]
    fn boundary_belongs_to_tile_it_opens() {
        let b = square_km(10.0, 10.0);
        let g = TileGrid::new(b, 1000.0).unwrap();
        let (_, _, lon1, lat1) = g.tile_bounds(TileId::new(2, 3));
        assert_eq!(g.tile_of(lon1, lat1).unwrap(), TileId::new(3, 4));
        let eps = 1e-7;
        assert_eq!(g.tile_of(lon1 - eps, lat1 - eps).unwrap(), TileId::new(2, 3));
    }

    #[test]
    fn outside_point_is_domain_error() {
        let b = square_km(1.0, 1.0);
        let g = TileGrid::new(b, 100.0).unwrap();
        assert!(matches!(g.tile_of(b.max_lon + 0.01, b.min_lat), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn tile_of_is_total_and_in_range(fx in 0.0f64..=1.0, fy in 0.0f64..=1.0, edge in 50.0f64..2000.0) {
            let b = square_km(7.3, 4.1);
            let g = TileGrid::new(b, edge).unwrap();
            let lon = b.min_lon + fx * (b.max_lon - b.min_lon);
            let lat = b.min_lat + fy * (b.max_lat - b.min_lat);
            let t = g.tile_of(lon, lat).unwrap();
            prop_assert!(t.col < g.n_cols() && t.row < g.n_rows());
            let (lon0, lat0, lon1, lat1) = g.tile_bounds(t);
            prop_assert!(lon >= lon0 - 1e-7 && lon <= lon1 + 1e-7);
            prop_assert!(lat >= lat0 - 1e-7 && lat <= lat1 + 1e-7);
        }

        #[test]
        fn doubled_edge_nests(fx in 0.0f64..=1.0, fy in 0.0f64..=1.0, edge in 50.0f64..2500.0) {
            let edge = edge.round();
            let b = square_km(9.0, 6.0);
            let fine = TileGrid::new(b, edge).unwrap();
            let coarse = TileGrid::new(b, 2.0 * edge).unwrap();
            let lon = b.min_lon + fx * (b.max_lon - b.min_lon);
            let lat = b.min_lat + fy * (b.max_lat - b.min_lat);
            let f = fine.tile_of(lon, lat).unwrap();
            let c = coarse.tile_of(lon, lat).unwrap();
            prop_assert_eq!(c.col, (f.col / 2).min(coarse.n_cols() - 1));
            prop_assert_eq!(c.row, (f.row / 2).min(coarse.n_rows() - 1));
        }
    }
}

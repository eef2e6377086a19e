use std::collections::HashMap;

use super::geo::{distance_km, project_km, CoordMode, Location};

/// Uniform grid over projected km coordinates for radius queries.
#[derive(Clone, Debug)]
pub struct GridIndex {
    cell_km: f64,
    mode: CoordMode,
    ref_lat: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    pub fn build(points: &[Location], mode: CoordMode, cell_km: f64) -> Self {
        assert!(cell_km > 0.0, "grid cell must be positive");
        let ref_lat = match mode {
            CoordMode::Planar => 0.0,
            CoordMode::LonLat if points.is_empty() => 0.0,
            CoordMode::LonLat => points.iter().map(|p| p.y).sum::<f64>() / points.len() as f64,
        };
        let mut index = Self {
            cell_km,
            mode,
            ref_lat,
            cells: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let key = index.cell_of(*p);
            index.cells.entry(key).or_default().push(i);
        }
        index
    }

    pub fn cell_km(&self) -> f64 {
        self.cell_km
    }

    fn cell_of(&self, p: Location) -> (i64, i64) {
        let (x, y) = project_km(p, self.mode, self.ref_lat);
        ((x / self.cell_km).floor() as i64, (y / self.cell_km).floor() as i64)
    }

    /// Every point `j != i` with `distance_km(i, j) <= radius_km`, ascending.
    pub fn within(&self, points: &[Location], i: usize, radius_km: f64) -> Vec<usize> {
        let p = points[i];
        let (cx, cy) = self.cell_of(p);
        // projected distances can understate great-circle ones slightly
        let slack = match self.mode {
            CoordMode::Planar => 1.0,
            CoordMode::LonLat => 1.05,
        };
        let reach = ((radius_km * slack) / self.cell_km).ceil() as i64;
        let mut out = Vec::new();
        for gx in cx - reach..=cx + reach {
            for gy in cy - reach..=cy + reach {
                if let Some(bucket) = self.cells.get(&(gx, gy)) {
                    out.extend(
                        bucket
                            .iter()
                            .copied()
                            .filter(|&j| j != i && distance_km(p, points[j], self.mode) <= radius_km),
                    );
                }
            }
        }
        out.sort_unstable();
        out
    }
}

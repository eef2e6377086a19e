/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// How POI coordinates are interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordMode {
    /// `x`, `y` in meters on a plane.
    Planar,
    /// `x` = longitude, `y` = latitude, both in degrees.
    LonLat,
}

impl CoordMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CoordMode::Planar => "planar",
            CoordMode::LonLat => "lonlat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "planar" => Some(CoordMode::Planar),
            "lonlat" => Some(CoordMode::LonLat),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

pub fn haversine_km(a: Location, b: Location) -> f64 {
    let (lat1, lat2) = (a.y.to_radians(), b.y.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.x - a.x).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn distance_km(a: Location, b: Location, mode: CoordMode) -> f64 {
    match mode {
        CoordMode::Planar => (a.x - b.x).hypot(a.y - b.y) / 1000.0,
        CoordMode::LonLat => haversine_km(a, b),
    }
}

/// Local equirectangular projection to km, used only for grid bucketing.
pub(crate) fn project_km(p: Location, mode: CoordMode, ref_lat: f64) -> (f64, f64) {
    match mode {
        CoordMode::Planar => (p.x / 1000.0, p.y / 1000.0),
        CoordMode::LonLat => {
            let k = EARTH_RADIUS_KM.to_radians();
            (p.x * k * ref_lat.to_radians().cos(), p.y * k)
        }
    }
}

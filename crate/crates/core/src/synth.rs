//! Synthetic cities with planted competitive / complementary relationships.

use std::fmt::{self, Write as _};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{CoordMode, Location, Poi, RawDataset, RelationSet, Taxonomy};
use crate::tensor::sigmoid;

/// Logistic planting rule `σ(a - b1·d_km - b2·path_distance)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Planting {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Planting {
    pub fn probability(&self, d_km: f64, path_distance: usize, boost: f64) -> f64 {
        sigmoid(self.a + boost - self.b1 * d_km - self.b2 * path_distance as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_pois: usize,
    pub side_km: f64,
    pub depth: usize,
    pub branching: usize,
    /// Number of themed zones scattered over the city.
    pub zones: usize,
    /// Depth of the taxonomy node that gives each zone its theme.
    pub zone_level: usize,
    /// Probability that a POI draws its category from its zone's theme.
    pub zone_affinity: f64,
    /// Added to both intercepts when both endpoints match their zone theme.
    pub zone_boost: f64,
    /// Within one zone, shifts the competitive intercept by `-zone_mix` and the
    /// complementary one by `+zone_mix` when the zone is busy, the reverse otherwise.
    pub zone_mix: f64,
    pub competitive: Planting,
    pub complementary: Planting,
    pub cutoff_km: f64,
    pub min_edges: usize,
    pub max_attempts: usize,
    /// Intercept increase per retry when too few edges were planted.
    pub intercept_step: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pois: 2000,
            side_km: 60.0,
            depth: 3,
            branching: 4,
            zones: 15,
            zone_level: 2,
            zone_affinity: 0.6,
            zone_boost: 0.25,
            zone_mix: 0.0,
            competitive: Planting {
                a: 11.1,
                b1: 2.75,
                b2: 1.55,
            },
            complementary: Planting {
                a: 16.4,
                b1: 3.0,
                b2: 1.55,
            },
            cutoff_km: 10.0,
            min_edges: 15000,
            max_attempts: 20,
            intercept_step: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_pois < 10 {
            return bad("n_pois must be at least 10");
        }
        if !(self.side_km > 0.0) || !(self.cutoff_km > 0.0) {
            return bad("side_km and cutoff_km must be positive");
        }
        if self.depth == 0 || self.branching < 2 {
            return bad("taxonomy needs depth >= 1 and branching >= 2");
        }
        if self.zone_level > self.depth || !(0.0..=1.0).contains(&self.zone_affinity) {
            return bad("zone_level must not exceed depth and zone_affinity must lie in [0, 1]");
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "n_pois",
        "side_km",
        "depth",
        "branching",
        "zones",
        "zone_level",
        "zone_affinity",
        "zone_boost",
        "zone_mix",
        "competitive",
        "complementary",
        "cutoff_km",
        "min_edges",
        "max_attempts",
        "intercept_step",
        "seed",
    ];

    /// Sets one knob; plantings are written `a,b1,b2`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        let planting = |v: &str| -> Result<Planting> {
            let f: Vec<f64> = v.split(',').map(|s| num(key, s)).collect::<Result<_>>()?;
            match f[..] {
                [a, b1, b2] => Ok(Planting { a, b1, b2 }),
                _ => Err(Error::Config(format!("{key}: expected a,b1,b2"))),
            }
        };
        match key.trim() {
            "n_pois" => self.n_pois = num(key, value)?,
            "side_km" => self.side_km = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "branching" => self.branching = num(key, value)?,
            "zones" => self.zones = num(key, value)?,
            "zone_level" => self.zone_level = num(key, value)?,
            "zone_affinity" => self.zone_affinity = num(key, value)?,
            "zone_boost" => self.zone_boost = num(key, value)?,
            "zone_mix" => self.zone_mix = num(key, value)?,
            "competitive" => self.competitive = planting(value)?,
            "complementary" => self.complementary = planting(value)?,
            "cutoff_km" => self.cutoff_km = num(key, value)?,
            "min_edges" => self.min_edges = num(key, value)?,
            "max_attempts" => self.max_attempts = num(key, value)?,
            "intercept_step" => self.intercept_step = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown synth key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let pl = |p: &Planting| format!("{},{},{}", p.a, p.b1, p.b2);
        Some(match key {
            "n_pois" => self.n_pois.to_string(),
            "side_km" => self.side_km.to_string(),
            "depth" => self.depth.to_string(),
            "branching" => self.branching.to_string(),
            "zones" => self.zones.to_string(),
            "zone_level" => self.zone_level.to_string(),
            "zone_affinity" => self.zone_affinity.to_string(),
            "zone_boost" => self.zone_boost.to_string(),
            "zone_mix" => self.zone_mix.to_string(),
            "competitive" => pl(&self.competitive),
            "complementary" => pl(&self.complementary),
            "cutoff_km" => self.cutoff_km.to_string(),
            "min_edges" => self.min_edges.to_string(),
            "max_attempts" => self.max_attempts.to_string(),
            "intercept_step" => self.intercept_step.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// `key = value` lines, `#` comments.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            c.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

/// Generated dataset plus what the generator knew.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: RawDataset,
    pub attempts: usize,
    /// Index of the nearest zone per POI.
    pub zone_of: Vec<usize>,
    /// Whether each POI's category lies under its zone's theme.
    pub on_theme: Vec<bool>,
    /// Whether each zone is busy; its theme lies in the first half of the theme level.
    pub zone_busy: Vec<bool>,
    /// Total intercept shift the accepted attempt used.
    pub shift: f64,
}

pub fn generate(cfg: &SynthConfig) -> Result<Generated> {
    cfg.validate()?;
    let taxonomy = Taxonomy::balanced(cfg.depth, cfg.branching);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let side_m = cfg.side_km * 1000.0;

    let theme_nodes: Vec<usize> = (0..taxonomy.len())
        .filter(|&k| taxonomy.node(k).depth == cfg.zone_level)
        .collect();
    let leaves = taxonomy.leaves();
    let leaves_under = |t: usize| -> Vec<usize> {
        leaves
            .iter()
            .copied()
            .filter(|&l| taxonomy.path(l).expect("leaf").contains(&t))
            .collect()
    };
    let zone_centers: Vec<Location> = (0..cfg.zones.max(1))
        .map(|_| Location::new(rng.gen_range(0.0..side_m), rng.gen_range(0.0..side_m)))
        .collect();
    let zone_theme: Vec<usize> = (0..zone_centers.len())
        .map(|_| theme_nodes[rng.gen_range(0..theme_nodes.len())])
        .collect();
    let zone_busy: Vec<bool> = zone_theme
        .iter()
        .map(|t| theme_nodes.iter().position(|x| x == t).expect("theme") < theme_nodes.len() / 2)
        .collect();
    let theme_leaves: Vec<Vec<usize>> = zone_theme.iter().map(|&t| leaves_under(t)).collect();

    let mut pois = Vec::with_capacity(cfg.n_pois);
    let mut zone_of = Vec::with_capacity(cfg.n_pois);
    for id in 0..cfg.n_pois {
        let loc = Location::new(rng.gen_range(0.0..side_m), rng.gen_range(0.0..side_m));
        let z = nearest(&zone_centers, loc);
        let category = if cfg.zones > 0 && rng.gen::<f64>() < cfg.zone_affinity {
            let pool = &theme_leaves[z];
            pool[rng.gen_range(0..pool.len())]
        } else {
            leaves[rng.gen_range(0..leaves.len())]
        };
        zone_of.push(z);
        pois.push(Poi {
            id,
            location: loc,
            category,
        });
    }
    let on_theme: Vec<bool> = pois
        .iter()
        .zip(&zone_of)
        .map(|(p, &z)| cfg.zones > 0 && theme_leaves[z].contains(&p.category))
        .collect();

    // candidate pairs within the cutoff, scanned once
    let mut candidates = Vec::new();
    for i in 0..pois.len() {
        for j in i + 1..pois.len() {
            let d = crate::graph::distance_km(pois[i].location, pois[j].location, CoordMode::Planar);
            if d <= cfg.cutoff_km {
                let pd = taxonomy.path_distance(pois[i].category, pois[j].category);
                candidates.push((i, j, d, pd));
            }
        }
    }

    let relations = RelationSet::new(&["competitive", "complementary"])?;
    let (comp, compl) = (
        relations.id("competitive").expect("named above"),
        relations.id("complementary").expect("named above"),
    );
    let mut shift = 0.0;
    let mut edges = Vec::new();
    let mut attempts = 0;
    for attempt in 0..cfg.max_attempts.max(1) {
        attempts = attempt + 1;
        shift = attempt as f64 * cfg.intercept_step;
        let mut prng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(attempt as u64));
        edges.clear();
        for &(i, j, d, pd) in &candidates {
            let boost = if on_theme[i] && on_theme[j] {
                cfg.zone_boost
            } else {
                0.0
            } + shift;
            let mix = match (zone_of[i] == zone_of[j], zone_busy[zone_of[i]]) {
                (false, _) => 0.0,
                (true, true) => cfg.zone_mix,
                (true, false) => -cfg.zone_mix,
            };
            let pc = cfg.competitive.probability(d, pd, boost - mix);
            let pm = cfg.complementary.probability(d, pd, boost + mix);
            let u: f64 = prng.gen();
            if u < pc {
                edges.push((i, j, comp));
            } else if u < (pc + pm).min(1.0) {
                edges.push((i, j, compl));
            }
        }
        if edges.len() >= cfg.min_edges {
            break;
        }
    }
    if edges.len() < cfg.min_edges {
        warn!(
            "planted {} edges after {attempts} attempts; target was {}",
            edges.len(),
            cfg.min_edges
        );
    }
    Ok(Generated {
        dataset: RawDataset {
            mode: CoordMode::Planar,
            taxonomy,
            pois,
            relations,
            edges,
        },
        attempts,
        zone_of,
        on_theme,
        zone_busy,
        shift,
    })
}

fn nearest(centers: &[Location], p: Location) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = (c.x - p.x).hypot(c.y - p.y);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationStats {
    pub name: String,
    pub edges: usize,
    pub mean_path_distance: f64,
    pub mean_distance_km: f64,
    pub within_2km: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub target: f64,
    pub tolerance: f64,
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        (v - self.target).abs() <= self.tolerance
    }
}

pub const COMPETITIVE_PATH: Band = Band {
    target: 1.72,
    tolerance: 0.4,
};
pub const COMPLEMENTARY_PATH: Band = Band {
    target: 3.53,
    tolerance: 0.6,
};
pub const COMPETITIVE_NEAR: Band = Band {
    target: 0.501,
    tolerance: 0.08,
};
pub const COMPLEMENTARY_NEAR: Band = Band {
    target: 0.212,
    tolerance: 0.08,
};

#[derive(Clone, Debug, PartialEq)]
pub struct StatsCheck {
    pub name: &'static str,
    pub value: f64,
    pub band: Band,
}

impl StatsCheck {
    pub fn passed(&self) -> bool {
        self.band.contains(self.value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub relations: Vec<RelationStats>,
    pub checks: Vec<StatsCheck>,
}

impl StatsReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(StatsCheck::passed)
    }

    pub fn relation(&self, name: &str) -> Option<&RelationStats> {
        self.relations.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::from("relation\tedges\tmean_path_distance\tmean_km\twithin_2km\n");
        for r in &self.relations {
            writeln!(
                s,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                r.name, r.edges, r.mean_path_distance, r.mean_distance_km, r.within_2km
            )
            .unwrap();
        }
        for c in &self.checks {
            writeln!(
                s,
                "[{}] {} = {:.4} (band {} ± {})",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.band.target,
                c.band.tolerance
            )
            .unwrap();
        }
        f.write_str(&s)
    }
}

/// Per-relation path-distance and proximity statistics with calibration bands.
pub fn verify_stats(data: &RawDataset) -> StatsReport {
    let mut relations = Vec::new();
    for r in 0..data.relations.num_data() {
        let mut count = 0usize;
        let (mut pd_sum, mut d_sum, mut near) = (0.0, 0.0, 0usize);
        for &(a, b, rel) in &data.edges {
            if rel != r {
                continue;
            }
            let (pa, pb) = (&data.pois[a], &data.pois[b]);
            let d = crate::graph::distance_km(pa.location, pb.location, data.mode);
            count += 1;
            pd_sum += data.taxonomy.path_distance(pa.category, pb.category) as f64;
            d_sum += d;
            near += usize::from(d <= 2.0);
        }
        let c = count.max(1) as f64;
        relations.push(RelationStats {
            name: data.relations.name(r).to_string(),
            edges: count,
            mean_path_distance: pd_sum / c,
            mean_distance_km: d_sum / c,
            within_2km: near as f64 / c,
        });
    }
    let mut checks = Vec::new();
    let get = |n: &str| relations.iter().find(|r| r.name == n);
    if let Some(c) = get("competitive") {
        checks.push(StatsCheck {
            name: "competitive mean path distance",
            value: c.mean_path_distance,
            band: COMPETITIVE_PATH,
        });
        checks.push(StatsCheck {
            name: "competitive within 2 km",
            value: c.within_2km,
            band: COMPETITIVE_NEAR,
        });
    }
    if let Some(m) = get("complementary") {
        checks.push(StatsCheck {
            name: "complementary mean path distance",
            value: m.mean_path_distance,
            band: COMPLEMENTARY_PATH,
        });
        checks.push(StatsCheck {
            name: "complementary within 2 km",
            value: m.within_2km,
            band: COMPLEMENTARY_NEAR,
        });
    }
    StatsReport { relations, checks }
}

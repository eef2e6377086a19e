//! POIs, relation types, the category taxonomy and spatial geometry.

pub mod bins;
pub mod dataset;
pub mod geo;
pub mod io;
pub mod spatial_index;
pub mod taxonomy;

pub use bins::DistanceBins;
pub use dataset::{hidden_pois, Dataset, LabeledPair, SplitConfig, Triple};
pub use geo::{distance_km, haversine_km, CoordMode, Location};
pub use io::RawDataset;
pub use spatial_index::GridIndex;
pub use taxonomy::{Taxonomy, TaxonomyNode};

use crate::error::{Error, Result};

pub const NONE_RELATION: &str = "none";
pub const SELF_RELATION: &str = "self";

#[derive(Clone, Debug, PartialEq)]
pub struct RelationType {
    pub id: usize,
    pub name: String,
    /// Participates in graph aggregation.
    pub is_structural: bool,
    /// Member of the set scored at inference.
    pub is_scored: bool,
}

/// Data relations (sorted by name), then `none`, then `self`.
///
/// Data relations are both structural and scored; `none` is scored only;
/// `self` is structural only and supplies the self loop in aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationSet {
    types: Vec<RelationType>,
    n_data: usize,
}

impl RelationSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        names.sort();
        names.dedup();
        if names.is_empty() {
            return Err(Error::Contract("at least one relation type is required".into()));
        }
        if let Some(bad) = names.iter().find(|n| *n == NONE_RELATION || *n == SELF_RELATION) {
            return Err(Error::Contract(format!("relation name {bad:?} is reserved")));
        }
        let n_data = names.len();
        let mut types: Vec<RelationType> = names
            .into_iter()
            .enumerate()
            .map(|(id, name)| RelationType {
                id,
                name,
                is_structural: true,
                is_scored: true,
            })
            .collect();
        types.push(RelationType {
            id: n_data,
            name: NONE_RELATION.into(),
            is_structural: false,
            is_scored: true,
        });
        types.push(RelationType {
            id: n_data + 1,
            name: SELF_RELATION.into(),
            is_structural: true,
            is_scored: false,
        });
        Ok(Self { types, n_data })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[RelationType] {
        &self.types
    }

    pub fn name(&self, id: usize) -> &str {
        &self.types[id].name
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn num_data(&self) -> usize {
        self.n_data
    }

    pub fn none_id(&self) -> usize {
        self.n_data
    }

    pub fn self_id(&self) -> usize {
        self.n_data + 1
    }

    /// Scored classes in id order: data relations then `none`.
    pub fn num_scored(&self) -> usize {
        self.n_data + 1
    }

    /// Structural relations in aggregation order: data relations then `self`.
    pub fn structural(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.n_data).collect();
        v.push(self.self_id());
        v
    }

    pub fn scored_names(&self) -> Vec<&str> {
        self.types[..=self.n_data].iter().map(|t| t.name.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Poi {
    pub id: usize,
    pub location: Location,
    /// Dense taxonomy node index of the POI's leaf category.
    pub category: usize,
}

/// POIs with per-relation adjacency and a grid index for spatial queries.
#[derive(Clone, Debug)]
pub struct PoiGraph {
    mode: CoordMode,
    pois: Vec<Poi>,
    locations: Vec<Location>,
    relations: RelationSet,
    /// `adjacency[r][i]`: sorted neighbors of `i` under data relation `r`.
    adjacency: Vec<Vec<Vec<usize>>>,
    index: GridIndex,
}

impl PoiGraph {
    /// `edges` are undirected `(a, b, relation)` with `relation` a data relation id.
    pub fn new(
        mode: CoordMode,
        pois: Vec<Poi>,
        relations: RelationSet,
        edges: impl IntoIterator<Item = (usize, usize, usize)>,
        grid_cell_km: f64,
    ) -> Result<Self> {
        let n = pois.len();
        if pois.iter().enumerate().any(|(k, p)| p.id != k) {
            return Err(Error::Contract("POI ids must be contiguous from 0".into()));
        }
        let mut adjacency = vec![vec![Vec::new(); n]; relations.num_data()];
        for (a, b, r) in edges {
            if a >= n || b >= n {
                return Err(Error::Contract(format!("edge ({a}, {b}) outside {n} POIs")));
            }
            if a == b {
                return Err(Error::Contract(format!("self edge on POI {a}")));
            }
            if r >= relations.num_data() {
                return Err(Error::Contract(format!("relation {r} is not a data relation")));
            }
            adjacency[r][a].push(b);
            adjacency[r][b].push(a);
        }
        for per_rel in &mut adjacency {
            for list in per_rel.iter_mut() {
                list.sort_unstable();
                list.dedup();
            }
        }
        let locations: Vec<Location> = pois.iter().map(|p| p.location).collect();
        let index = GridIndex::build(&locations, mode, grid_cell_km);
        Ok(Self {
            mode,
            pois,
            locations,
            relations,
            adjacency,
            index,
        })
    }

    pub fn mode(&self) -> CoordMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn poi(&self, i: usize) -> &Poi {
        &self.pois[i]
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn relations(&self) -> &RelationSet {
        &self.relations
    }

    pub fn neighbors(&self, relation: usize, i: usize) -> &[usize] {
        &self.adjacency[relation][i]
    }

    /// Number of relationships of `i` over all data relations.
    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.iter().map(|r| r[i].len()).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency
            .iter()
            .map(|r| r.iter().map(Vec::len).sum::<usize>())
            .sum::<usize>()
            / 2
    }

    pub fn distance_km(&self, i: usize, j: usize) -> f64 {
        distance_km(self.locations[i], self.locations[j], self.mode)
    }

    /// POIs within `radius_km` of `i`, excluding `i`, ascending by id.
    pub fn spatial_neighbors(&self, i: usize, radius_km: f64) -> Vec<usize> {
        self.index.within(&self.locations, i, radius_km)
    }

    /// Same POIs and relations with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize, usize)>) -> Result<Self> {
        Self::new(
            self.mode,
            self.pois.clone(),
            self.relations.clone(),
            edges,
            self.index.cell_km(),
        )
    }

    /// Subgraph on `keep` (ascending ids), renumbered densely. Returns the
    /// graph and the old→new id map.
    pub fn induced(
        &self,
        keep: &[usize],
        edges: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<(Self, Vec<Option<usize>>)> {
        let mut map = vec![None; self.len()];
        let mut pois = Vec::with_capacity(keep.len());
        for (new, &old) in keep.iter().enumerate() {
            map[old] = Some(new);
            pois.push(Poi {
                id: new,
                ..self.pois[old].clone()
            });
        }
        let kept: Vec<(usize, usize, usize)> = edges
            .into_iter()
            .filter_map(|(a, b, r)| Some((map[a]?, map[b]?, r)))
            .collect();
        let g = Self::new(self.mode, pois, self.relations.clone(), kept, self.index.cell_km())?;
        Ok((g, map))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pois(locs: &[(f64, f64)]) -> Vec<Poi> {
        locs.iter()
            .enumerate()
            .map(|(id, &(x, y))| Poi {
                id,
                location: Location::new(x, y),
                category: 1,
            })
            .collect()
    }

    #[test]
    fn relation_set_layout() {
        let r = RelationSet::new(&["complementary", "competitive"]).unwrap();
        assert_eq!(r.scored_names(), ["competitive", "complementary", "none"]);
        assert_eq!(r.structural(), vec![0, 1, 3]);
        assert!(!r.types()[r.none_id()].is_structural);
        assert!(!r.types()[r.self_id()].is_scored);
        assert!(RelationSet::new(&["none"]).is_err());
    }

    #[test]
    fn adjacency_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40;
        let locs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(0.0..5e3), rng.gen_range(0.0..5e3)))
            .collect();
        let rels = RelationSet::new(&["a", "b"]).unwrap();
        let edges: Vec<(usize, usize, usize)> = (0..120)
            .filter_map(|_| {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                (a != b).then(|| (a, b, rng.gen_range(0..2)))
            })
            .collect();
        let g = PoiGraph::new(CoordMode::Planar, pois(&locs), rels, edges, 1.15).unwrap();
        for r in 0..2 {
            for i in 0..n {
                assert!(!g.neighbors(r, i).contains(&i));
                for &j in g.neighbors(r, i) {
                    assert!(g.neighbors(r, j).contains(&i));
                }
            }
        }
        for i in 0..n {
            for j in g.spatial_neighbors(i, 1.15) {
                assert!(j != i);
                assert!(g.spatial_neighbors(j, 1.15).contains(&i));
            }
        }
    }

    #[test]
    fn rejects_self_edges_and_dangling_endpoints() {
        let rels = RelationSet::new(&["a"]).unwrap();
        let p = pois(&[(0.0, 0.0), (1.0, 1.0)]);
        assert!(PoiGraph::new(CoordMode::Planar, p.clone(), rels.clone(), [(0, 0, 0)], 1.0).is_err());
        assert!(PoiGraph::new(CoordMode::Planar, p, rels, [(0, 5, 0)], 1.0).is_err());
    }

    #[test]
    fn planar_distance_is_symmetric_and_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let locs: Vec<(f64, f64)> = (0..60)
            .map(|_| (rng.gen_range(-1e4..1e4), rng.gen_range(-1e4..1e4)))
            .collect();
        let g = PoiGraph::new(
            CoordMode::Planar,
            pois(&locs),
            RelationSet::new(&["a"]).unwrap(),
            std::iter::empty(),
            1.0,
        )
        .unwrap();
        for _ in 0..500 {
            let (a, b, c) = (rng.gen_range(0..60), rng.gen_range(0..60), rng.gen_range(0..60));
            assert_eq!(g.distance_km(a, b), g.distance_km(b, a));
            assert!(g.distance_km(a, c) <= g.distance_km(a, b) + g.distance_km(b, c) + 1e-9);
        }
    }
}

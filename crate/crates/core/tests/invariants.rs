//! Randomized structural invariants of attention, projection, scoring and aggregation.

use poirel::graph::{CoordMode, Poi, PoiGraph};
use poirel::model::{self, scoring, spatial_context, GraphContext, PairBatch};
use poirel::model_check::tiny_instance;
use poirel::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 120,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn attention_sums_to_one_per_relation_and_head(n in 3usize..10, layers in 1usize..3, seed in 0u64..1_000_000) {
        let inst = tiny_instance(n, layers, seed).unwrap();
        let mut tape = Tape::new();
        let b = inst.params.bind(&mut tape);
        let q = model::taxonomy_encoder::category_repr(&mut tape, &b, &inst.ctx, false).unwrap();
        let h0 = model::initial_states(&mut tape, &b, &inst.cfg, &inst.ctx, q).unwrap();
        let rel = b.var("rel").unwrap();
        let out = model::wrgnn::forward(&mut tape, &b, &inst.cfg, &inst.ctx, h0, q, rel).unwrap();
        for alpha in out.alphas {
            let a = tape.value(alpha);
            for i in 0..n {
                for pos in 0..inst.ctx.structural.len() {
                    let es = inst.ctx.segment_edges(i, pos);
                    if es.is_empty() {
                        continue;
                    }
                    for k in 0..inst.cfg.heads {
                        let s: f64 = es.clone().map(|e| a.at(e, k)).sum();
                        prop_assert!((s - 1.0).abs() <= 1e-12, "segment ({i}, {pos}) head {k}: {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn spatial_attention_sums_to_one(n in 3usize..12, seed in 0u64..1_000_000) {
        let mut inst = tiny_instance(n, 1, seed).unwrap();
        inst.cfg.radius_km = 1.2;
        let ctx = GraphContext::new(&inst.graph, &inst.taxonomy, &inst.cfg).unwrap();
        let mut tape = Tape::new();
        let b = inst.params.bind(&mut tape);
        let enc = model::encode(&mut tape, &b, &inst.cfg, &ctx).unwrap();
        let s = spatial_context::spatial_context(&mut tape, &b, &inst.cfg, &ctx, enc.h_graph).unwrap();
        if let Some(beta) = s.beta {
            let beta = tape.value(beta).data().to_vec();
            for i in 0..n {
                let idx: Vec<usize> = (0..ctx.sp_i.len()).filter(|&p| ctx.sp_i[p] == i).collect();
                if idx.is_empty() {
                    continue;
                }
                let total: f64 = idx.iter().map(|&p| beta[p]).sum();
                prop_assert!((total - 1.0).abs() <= 1e-12, "poi {i}: {total}");
            }
        }
    }

    #[test]
    fn projection_is_orthogonal_and_idempotent(
        rows in 1usize..8,
        d in 2usize..10,
        seed in 0u64..1_000_000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Tensor::new(vec![rows, d], (0..rows * d).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let normals = Tensor::new(vec![3, d], (0..3 * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let bins: std::rc::Rc<[usize]> = (0..rows).map(|_| rng.gen_range(0..3)).collect();
        let mut tape = Tape::new();
        let hv = tape.constant(h);
        let nv = tape.constant(normals);
        let u = tape.normalize_rows(nv).unwrap();
        let once = scoring::project(&mut tape, hv, u, bins.clone()).unwrap();
        let twice = scoring::project(&mut tape, once, u, bins.clone()).unwrap();
        let (p1, p2, un) = (tape.value(once), tape.value(twice), tape.value(u));
        for r in 0..rows {
            let along: f64 = p1.row(r).iter().zip(un.row(bins[r])).map(|(a, b)| a * b).sum();
            prop_assert!(along.abs() <= 1e-12, "row {r}: residual {along}");
            for c in 0..d {
                prop_assert!((p1.at(r, c) - p2.at(r, c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn scores_are_symmetric_bit_exact(n in 3usize..10, seed in 0u64..1_000_000, distance in any::<bool>()) {
        let mut inst = tiny_instance(n, 2, seed).unwrap();
        inst.cfg.ablations.no_distance = !distance;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let batch = PairBatch::new(&inst.graph, &inst.cfg.bins, pairs.iter().copied()).unwrap();
        let k = inst.graph.relations().num_scored();
        let fwd = model::predict_scores(&inst.params, &inst.cfg, &inst.ctx, k, &batch).unwrap();
        let rev = model::predict_scores(&inst.params, &inst.cfg, &inst.ctx, k, &batch.swapped()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&fwd), bits(&rev));
    }

    #[test]
    fn aggregation_is_invariant_to_poi_relabeling(n in 3usize..9, seed in 0u64..1_000_000) {
        let inst = tiny_instance(n, 2, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        // perm[old] = new
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut pois = vec![None; n];
        for (old, p) in inst.graph.pois().iter().enumerate() {
            pois[perm[old]] = Some(Poi { id: perm[old], ..p.clone() });
        }
        let pois: Vec<Poi> = pois.into_iter().map(Option::unwrap).collect();
        let rels = inst.graph.relations();
        let mut edges = Vec::new();
        for r in 0..rels.num_data() {
            for a in 0..n {
                for &b in inst.graph.neighbors(r, a) {
                    if a < b {
                        edges.push((perm[b], perm[a], r));
                    }
                }
            }
        }
        edges.shuffle(&mut rng);
        let g2 = PoiGraph::new(CoordMode::Planar, pois, rels.clone(), edges, 1.0).unwrap();
        let ctx2 = GraphContext::new(&g2, &inst.taxonomy, &inst.cfg).unwrap();
        let mut params2 = inst.params.clone();
        let free = inst.params.get("free").unwrap();
        let mut moved = vec![0.0; free.numel()];
        let d = free.cols();
        for old in 0..n {
            moved[perm[old] * d..(perm[old] + 1) * d].copy_from_slice(free.row(old));
        }
        *params2.get_mut("free").unwrap() = Tensor::matrix(n, d, moved).unwrap();

        let encode = |params: &poirel::tensor::ParamStore, ctx: &GraphContext| {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let enc = model::encode(&mut tape, &b, &inst.cfg, ctx).unwrap();
            tape.value(enc.h).clone()
        };
        let h1 = encode(&inst.params, &inst.ctx);
        let h2 = encode(&params2, &ctx2);
        for old in 0..n {
            for c in 0..h1.cols() {
                let (x, y) = (h1.at(old, c), h2.at(perm[old], c));
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "poi {old} col {c}: {x} vs {y}");
            }
        }
    }
}

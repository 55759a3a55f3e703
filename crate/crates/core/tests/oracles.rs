mod common;

use std::collections::BTreeSet;

use hero_core::analysis::{detect_stages, iou, layer_similarity, RegionSelector};
use hero_core::budgeting::{allocate, RemainderPolicy};
use hero_core::scoring::{combine, score_tiles, textual_relevance, visual_saliency};
use hero_core::selection::{aggregate_attention, select_all, select_topk, LayerSet};
use hero_core::synth::{generate, oracle_topk, SplitMix64, SynthSpec};
use hero_core::{ImageTrace, RegionTrace, Tensor};
use proptest::prelude::*;

// Independent two-step oracle: plain-loop cosines, then softmax without
// max-subtraction (inputs are cosines, so exp cannot overflow).
fn oracle_cos(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    dot / (na * nb).sqrt()
}

fn oracle_softmax(x: &[f64]) -> Vec<f64> {
    let z: f64 = x.iter().map(|v| v.exp()).sum();
    x.iter().map(|v| v.exp() / z).collect()
}

fn region(rng: &mut SplitMix64, d: usize, clip: Option<usize>) -> RegionTrace {
    RegionTrace::new(
        Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap(),
        Tensor::vector((0..d).map(|_| (rng.next_f64() - 0.5) as f32).collect()).unwrap(),
        clip.map(|dc| Tensor::vector(common::unit(rng, dc)).unwrap()),
    )
}

#[test]
fn visual_saliency_matches_two_step_oracle() {
    for seed in 0..50 {
        let mut rng = SplitMix64::new(seed);
        let tiles: Vec<_> = (0..4).map(|_| region(&mut rng, 16, None)).collect();
        let thumb = region(&mut rng, 16, None);
        let t = ImageTrace::new("v", 2, 2, tiles, thumb, None).unwrap();
        let cos: Vec<f64> = t
            .tiles()
            .iter()
            .map(|r| oracle_cos(r.cls_embed.data(), t.thumbnail().cls_embed.data()))
            .collect();
        let want = oracle_softmax(&cos);
        for (g, w) in visual_saliency(&t).unwrap().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn textual_relevance_matches_two_step_oracle() {
    for seed in 0..50 {
        let mut rng = SplitMix64::new(1000 + seed);
        let tiles: Vec<_> = (0..5).map(|_| region(&mut rng, 4, Some(12))).collect();
        let thumb = region(&mut rng, 4, None);
        let text = Tensor::vector(common::unit(&mut rng, 12)).unwrap();
        let t = ImageTrace::new("t", 1, 5, tiles, thumb, Some(text)).unwrap();
        let cos: Vec<f64> = t
            .tiles()
            .iter()
            .map(|r| oracle_cos(r.clip_embed.as_ref().unwrap().data(), t.text_embed().unwrap().data()))
            .collect();
        let want = oracle_softmax(&cos);
        for (g, w) in textual_relevance(&t).unwrap().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn tied_scores_against_oracle() {
    let s = [0.2, 0.2, 0.2, 0.05];
    assert_eq!(oracle_topk(&s, 2).unwrap(), vec![0, 1]);
    assert_eq!(select_topk(&s, 2).unwrap().kept_indices, vec![0, 1]);
}

fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(0.0f64..1.0, 0..=8),
        // coarse grid forces ties
        prop::collection::vec((0u8..4).prop_map(|v| f64::from(v) * 0.25), 0..=8),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn select_topk_equals_oracle(
        (scores, quota) in scores_strategy().prop_flat_map(|s| { let n = s.len(); (Just(s), 0..=n) })
    ) {
        let mask = select_topk(&scores, quota).unwrap();
        prop_assert_eq!(&mask.kept_indices, &oracle_topk(&scores, quota).unwrap());
        prop_assert_eq!(mask.keep.iter().filter(|&&b| b).count(), quota);
        for (i, &k) in mask.keep.iter().enumerate() {
            prop_assert_eq!(k, mask.kept_indices.contains(&i));
        }
    }
}

proptest! {
    #[test]
    fn scoring_is_permutation_equivariant(seed in any::<u64>(), k in 1usize..=9, alpha in 0.0f64..=1.0) {
        let mut rng = SplitMix64::new(seed);
        let tiles: Vec<_> = (0..k).map(|_| region(&mut rng, 8, Some(6))).collect();
        let thumb = region(&mut rng, 8, None);
        let text = Tensor::vector(common::unit(&mut rng, 6)).unwrap();
        // rotate by one plus a swap gives a generic permutation
        let mut perm: Vec<usize> = (0..k).map(|i| (i + 1) % k).collect();
        if k > 2 {
            perm.swap(0, 2);
        }
        let permuted: Vec<_> = perm.iter().map(|&i| tiles[i].clone()).collect();
        let a = ImageTrace::new("a", 1, k, tiles, thumb.clone(), Some(text.clone())).unwrap();
        let b = ImageTrace::new("b", 1, k, permuted, thumb, Some(text)).unwrap();
        let sa = score_tiles(&a, alpha).unwrap();
        let sb = score_tiles(&b, alpha).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((sa.s_v[i] - sb.s_v[j]).abs() < 1e-12);
            prop_assert!((sa.s_t.as_ref().unwrap()[i] - sb.s_t.as_ref().unwrap()[j]).abs() < 1e-12);
            prop_assert!((sa.s[i] - sb.s[j]).abs() < 1e-12);
        }
        prop_assert!((sa.s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn combine_preserves_simplex(seed in any::<u64>(), k in 1usize..=9, alpha in 0.0f64..=1.0) {
        let mut rng = SplitMix64::new(seed);
        let simplex = |rng: &mut SplitMix64| {
            let raw: Vec<f64> = (0..k).map(|_| rng.next_f64() + 1e-9).collect();
            let t: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / t).collect::<Vec<_>>()
        };
        let s_v = simplex(&mut rng);
        let s_t = simplex(&mut rng);
        let s = combine(&s_v, Some(&s_t), alpha).unwrap();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn aggregation_is_linear_over_disjoint_sets(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let r = RegionTrace::new(common::attention(&mut rng, 8, 20), Tensor::vector(vec![1.0]).unwrap(), None);
        let l1 = LayerSet::new(vec![1, 4, 6]).unwrap();
        let l2 = LayerSet::new(vec![2, 3, 8]).unwrap();
        let both = LayerSet::new(vec![1, 2, 3, 4, 6, 8]).unwrap();
        let a1 = aggregate_attention(&r, &l1).unwrap();
        let a2 = aggregate_attention(&r, &l2).unwrap();
        let ab = aggregate_attention(&r, &both).unwrap();
        for j in 0..20 {
            prop_assert!((ab[j] - (a1[j] + a2[j]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masks_invariant_to_positive_rescaling(seed in 0u64..10_000, ratio in 0.05f64..=1.0) {
        let t = common::random_trace(seed);
        let layers = t.num_layers();
        let low = LayerSet::range(1, layers).unwrap();
        let high = LayerSet::new(vec![layers]).unwrap();
        let alloc = allocate(t.num_tiles(), t.num_patches(), ratio, &vec![1.0 / t.num_tiles() as f64; t.num_tiles()], RemainderPolicy::Redistribute).unwrap();
        let base = select_all(&t, &alloc, &low, &high).unwrap();
        // halving is exact in binary floating point
        let scale = |r: &RegionTrace| RegionTrace::new(r.cls_attn.scaled(0.5), r.cls_embed.clone(), r.clip_embed.clone());
        let halved = ImageTrace::new(
            t.image_id(), t.grid_rows(), t.grid_cols(),
            t.tiles().iter().map(scale).collect(), scale(t.thumbnail()), t.text_embed().cloned(),
        ).unwrap();
        let again = select_all(&halved, &alloc, &low, &high).unwrap();
        for (a, b) in base.iter().zip(&again) {
            prop_assert_eq!(&a.kept_indices, &b.kept_indices);
        }
        prop_assert_eq!(select_all(&t, &alloc, &low, &high).unwrap(), base);
    }
}

#[test]
fn select_all_composes_single_region_selections() {
    let tile = RegionTrace::new(
        Tensor::matrix(2, 4, vec![0.4, 0.1, 0.3, 0.2, 0.1, 0.2, 0.3, 0.4]).unwrap(),
        Tensor::vector(vec![1.0, 0.0]).unwrap(),
        None,
    );
    let thumb = RegionTrace::new(
        Tensor::matrix(2, 4, vec![0.25, 0.25, 0.25, 0.25, 0.05, 0.5, 0.05, 0.3]).unwrap(),
        Tensor::vector(vec![0.0, 1.0]).unwrap(),
        None,
    );
    let t = ImageTrace::new("c", 1, 1, vec![tile.clone()], thumb.clone(), None).unwrap();
    let alloc = allocate(1, 4, 0.5, &[1.0], RemainderPolicy::Redistribute).unwrap();
    assert_eq!((alloc.n_global, alloc.per_tile.clone()), (2, vec![2]));
    let low = LayerSet::new(vec![1]).unwrap();
    let high = LayerSet::new(vec![2]).unwrap();
    let masks = select_all(&t, &alloc, &low, &high).unwrap();
    // independent single-region computation: top-2 of the raw rows
    assert_eq!(masks[0].kept_indices, oracle_topk(&[0.4, 0.1, 0.3, 0.2], 2).unwrap());
    assert_eq!(masks[0].kept_indices, vec![0, 2]);
    assert_eq!(masks[1].kept_indices, vec![1, 3]);

    let full = allocate(1, 4, 1.0, &[1.0], RemainderPolicy::Redistribute).unwrap();
    assert!(select_all(&t, &full, &low, &high).unwrap().iter().all(|m| m.num_kept() == 4));

    let wrong = allocate(2, 4, 0.5, &[0.5, 0.5], RemainderPolicy::Redistribute).unwrap();
    assert!(select_all(&t, &wrong, &low, &high).is_err());
    let too_deep = LayerSet::new(vec![3]).unwrap();
    assert!(select_all(&t, &alloc, &too_deep, &high).is_err());
}

#[test]
fn planted_patches_survive_selection() {
    let planted = vec![3, 17, 40, 41, 99];
    let mut spec = SynthSpec::new(11, 4, 128, 12, 6, vec![planted.clone()], vec![120]);
    spec.noise_scale = 0.05;
    let t = generate(&spec).unwrap();
    let alloc = allocate(4, 128, 0.2, &[0.25; 4], RemainderPolicy::Redistribute).unwrap();
    let masks = select_all(&t, &alloc, &LayerSet::range(1, 6).unwrap(), &LayerSet::new(vec![12]).unwrap()).unwrap();
    for (i, m) in masks[..4].iter().enumerate() {
        assert!(alloc.per_tile[i] >= planted.len());
        let kept: BTreeSet<usize> = m.kept_indices.iter().copied().collect();
        assert!(planted.iter().all(|p| kept.contains(p)), "tile {i}");
    }
    assert!(masks[4].kept_indices.contains(&120));
}

/// Corpus whose stage-1 rows sit near one prototype and stage-2 rows near an
/// orthogonal one; noise is bounded so the similarity bounds hold by
/// construction.
fn prototype_corpus(count: usize, layers: usize, boundary: usize, n: usize) -> Vec<ImageTrace> {
    (0..count)
        .map(|c| {
            let mut rng = SplitMix64::new(c as u64);
            let mut data = Vec::new();
            for l in 0..layers {
                for j in 0..n {
                    let on = if l < boundary { j < n / 2 } else { j >= n / 2 };
                    let base = if on { 1.0 } else { 0.0 };
                    let noise = 0.1 * rng.next_f64();
                    data.push(((base + noise) / n as f64) as f32);
                }
            }
            let r = RegionTrace::new(Tensor::matrix(layers, n, data).unwrap(), Tensor::vector(vec![1.0]).unwrap(), None);
            ImageTrace::new(format!("p{c}"), 1, 1, vec![r.clone()], r, None).unwrap()
        })
        .collect()
}

#[test]
fn two_stage_prototype_corpus() {
    let corpus = prototype_corpus(20, 24, 12, 64);
    let m = layer_similarity(&corpus, RegionSelector::All).unwrap();
    for p in 0..24 {
        assert!((m.get(p, p) - 1.0).abs() < 1e-5);
        for q in 0..24 {
            assert!((m.get(p, q) - m.get(q, p)).abs() < 1e-5);
            if (p < 12) == (q < 12) {
                assert!(m.get(p, q) >= 0.9, "({p},{q}) {}", m.get(p, q));
            } else {
                assert!(m.get(p, q) <= 0.3, "({p},{q}) {}", m.get(p, q));
            }
        }
    }
    assert_eq!(detect_stages(&m), 12);

    // corpus order and per-row rescaling leave the matrix unchanged
    let mut reversed = corpus.clone();
    reversed.reverse();
    let r = layer_similarity(&reversed, RegionSelector::All).unwrap();
    let scaled: Vec<ImageTrace> = corpus
        .iter()
        .map(|t| {
            let s = RegionTrace::new(t.thumbnail().cls_attn.scaled(0.37), t.thumbnail().cls_embed.clone(), None);
            ImageTrace::new(t.image_id(), 1, 1, vec![s.clone()], s, None).unwrap()
        })
        .collect();
    let s = layer_similarity(&scaled, RegionSelector::All).unwrap();
    for i in 0..m.sims.len() {
        assert!((m.sims[i] - r.sims[i]).abs() < 1e-12);
        assert!((m.sims[i] - s.sims[i]).abs() < 1e-6);
    }
}

#[test]
fn synthetic_corpus_boundary_is_recovered() {
    let spec = SynthSpec::new(0, 2, 64, 24, 12, vec![vec![1, 2, 3]], vec![60, 61]);
    let corpus: Vec<ImageTrace> = (0..100).map(|s| generate(&spec.with_seed(s)).unwrap()).collect();
    for selector in [RegionSelector::Thumbnail, RegionSelector::Tiles, RegionSelector::All] {
        let m = layer_similarity(&corpus, selector).unwrap();
        assert_eq!(detect_stages(&m), 12);
    }
}

proptest! {
    #[test]
    fn detect_stages_stays_in_range(seed in any::<u64>(), layers in 2usize..30) {
        let mut rng = SplitMix64::new(seed);
        let mut sims = vec![0.0; layers * layers];
        for p in 0..layers {
            for q in p..layers {
                let v = if p == q { 1.0 } else { 2.0 * rng.next_f64() - 1.0 };
                sims[p * layers + q] = v;
                sims[q * layers + p] = v;
            }
        }
        let m = hero_core::analysis::LayerSimilarityMatrix::from_rows(layers, sims).unwrap();
        let b = detect_stages(&m);
        prop_assert!((1..layers).contains(&b));
        prop_assert_eq!(b, detect_stages(&m));
    }

    #[test]
    fn iou_monotone_in_overlap(
        salient in prop::collection::btree_set(0usize..64, 1..40),
        top in prop::collection::btree_set(0usize..64, 0..40),
    ) {
        // move a salient patch into the top-k set: union stays inside top ∪ salient
        let union: BTreeSet<usize> = top.union(&salient).copied().collect();
        if let Some(&extra) = salient.difference(&top).next() {
            let mut grown = top.clone();
            grown.insert(extra);
            let grown_union: BTreeSet<usize> = grown.union(&salient).copied().collect();
            prop_assert_eq!(&grown_union, &union);
            prop_assert!(iou(&grown, &salient) >= iou(&top, &salient));
        }
    }
}

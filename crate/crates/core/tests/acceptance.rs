//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::time::Instant;

use hero_core::analysis::{detect_stages, layer_similarity, RegionSelector};
use hero_core::budgeting::{allocate, RemainderPolicy};
use hero_core::container::{read_trace, write_trace};
use hero_core::efficiency::{prefill_flops, LlmProfile};
use hero_core::math::softmax;
use hero_core::scoring::{combine, score_tiles};
use hero_core::selection::{aggregate_attention, select_topk, LayerSet};
use hero_core::synth::{generate, oracle_topk, SplitMix64, SynthSpec};
use hero_core::{ImageTrace, RegionTrace, Tensor};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn efficiency_table() -> Check {
    let p = LlmProfile::vicuna_7b();
    // (tokens, expected TFLOPs or None when excluded, expected MiB)
    let rows = [
        (2673u64, Some(38.4), 1336.5),
        (1105, None, 552.5),
        (583, Some(7.7), 291.5),
        (322, Some(4.2), 161.0),
    ];
    let mut seen = Vec::new();
    for (t, tflops, mib) in rows {
        let r = prefill_flops(t, 0, &p);
        if let Some(want) = tflops {
            ensure((r.tflops - want).abs() <= 0.05, || format!("T={t}: {:.4} TFLOPs, want {want} ± 0.05", r.tflops))?;
        }
        ensure(r.kv_cache_mib == mib, || format!("T={t}: {} MiB, want {mib}", r.kv_cache_mib))?;
        seen.push(format!("{t}:{:.2}T/{}MiB", r.tflops, r.kv_cache_mib));
    }
    Ok(seen.join(" "))
}

fn random_simplex(rng: &mut SplitMix64, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.next_f64()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn budget_conservation() -> Check {
    let mut rng = SplitMix64::new(0xB0D6E7);
    for trial in 0..10_000 {
        let k = 1 + rng.below(9) as usize;
        let n = 1 + rng.below(576) as usize;
        // (0, 1], with the endpoint hit now and then
        let ratio = if rng.below(50) == 0 { 1.0 } else { 1.0 - rng.next_f64() };
        let scores = random_simplex(&mut rng, k);
        let a = allocate(k, n, ratio, &scores, RemainderPolicy::Redistribute)
            .map_err(|e| format!("trial {trial}: {e}"))?;
        let local: usize = a.per_tile.iter().sum();
        ensure(a.n_global + local == a.n_total, || {
            format!("trial {trial}: {} + {local} != {} (K={k} N={n} R={ratio})", a.n_global, a.n_total)
        })?;
        ensure(a.n_global <= n && a.per_tile.iter().all(|&q| q <= n), || {
            format!("trial {trial}: quota above N={n}: {:?}", a.per_tile)
        })?;
    }
    Ok("10000 allocations".into())
}

fn selection_oracle() -> Check {
    let mut rng = SplitMix64::new(0x5E1EC7);
    let mut tied = 0;
    for trial in 0..10_000 {
        let n = rng.below(9) as usize;
        let scores: Vec<f64> = if trial % 2 == 0 {
            // four levels over up to eight slots guarantees repeats
            (0..n).map(|_| rng.below(4) as f64 * 0.25).collect()
        } else {
            (0..n).map(|_| rng.next_f64()).collect()
        };
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            tied += 1;
        }
        let quota = rng.below(n as u64 + 1) as usize;
        let got = select_topk(&scores, quota).map_err(|e| e.to_string())?.kept_indices;
        let want = oracle_topk(&scores, quota).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("trial {trial}: {scores:?} k={quota}: {got:?} vs {want:?}"))?;
    }
    Ok(format!("10000 trials, {tied} with ties"))
}

fn random_trace(rng: &mut SplitMix64, k: usize) -> ImageTrace {
    let mut region = |clip: bool| {
        RegionTrace::new(
            Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap(),
            Tensor::vector((0..8).map(|_| (rng.next_f64() - 0.5) as f32).collect()).unwrap(),
            clip.then(|| Tensor::vector(common::unit(rng, 6)).unwrap()),
        )
    };
    let tiles = (0..k).map(|_| region(true)).collect();
    let thumb = region(false);
    let text = Tensor::vector(common::unit(rng, 6)).unwrap();
    ImageTrace::new("p", 1, k, tiles, thumb, Some(text)).unwrap()
}

fn scoring_properties() -> Check {
    let mut rng = SplitMix64::new(0x5C0E);
    for trial in 0..2_000 {
        let k = 1 + rng.below(9) as usize;
        let x: Vec<f64> = (0..k).map(|_| 4.0 * rng.next_f64() - 2.0).collect();
        let c = 100.0 * rng.next_f64() - 50.0;
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let a = softmax(&x).map_err(|e| e.to_string())?;
        let b = softmax(&shifted).map_err(|e| e.to_string())?;
        ensure(a.iter().zip(&b).all(|(p, q)| (p - q).abs() <= 1e-6), || format!("trial {trial}: shift by {c}"))?;

        let t = random_trace(&mut rng, k);
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let s = score_tiles(&t, alpha).map_err(|e| e.to_string())?;
            let sum: f64 = s.s.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-6 && s.s.iter().all(|v| *v >= 0.0), || {
                format!("trial {trial}: alpha {alpha} sums to {sum}")
            })?;
            let direct = combine(&s.s_v, s.s_t.as_deref(), alpha).map_err(|e| e.to_string())?;
            ensure(direct == s.s, || format!("trial {trial}: combine disagrees"))?;
        }

        // reverse plus rotate
        let perm: Vec<usize> = (0..k).map(|i| (k - 1 - i + trial) % k).collect();
        let tiles: Vec<RegionTrace> = perm.iter().map(|&i| t.tiles()[i].clone()).collect();
        let p = ImageTrace::new("q", 1, k, tiles, t.thumbnail().clone(), t.text_embed().cloned()).unwrap();
        let alpha = [0.0, 0.25, 0.5, 0.75, 1.0][trial % 5];
        let s0 = score_tiles(&t, alpha).map_err(|e| e.to_string())?;
        let s1 = score_tiles(&p, alpha).map_err(|e| e.to_string())?;
        for (j, &i) in perm.iter().enumerate() {
            ensure((s0.s[i] - s1.s[j]).abs() <= 1e-12, || format!("trial {trial}: permutation broke tile {i}"))?;
        }
    }
    Ok("2000 trials, K <= 9".into())
}

fn planted_recovery() -> Check {
    let mut corpus = Vec::new();
    let low = LayerSet::range(1, 12).map_err(|e| e.to_string())?;
    for seed in 0..100u64 {
        let mut rng = SplitMix64::new(seed ^ 0x91A7);
        let k = 1 + rng.below(6) as usize;
        let primary: Vec<Vec<usize>> = (0..k)
            .map(|_| {
                let mut set: Vec<usize> = (0..3 + rng.below(10) as usize).map(|_| rng.below(576) as usize).collect();
                set.sort_unstable();
                set.dedup();
                set
            })
            .collect();
        let shortcut = vec![(rng.below(576)) as usize];
        let primary = primary
            .into_iter()
            .map(|s| s.into_iter().filter(|i| !shortcut.contains(i)).collect())
            .collect::<Vec<Vec<usize>>>();
        let spec = SynthSpec::new(seed, k, 576, 24, 12, primary.clone(), shortcut);
        let t = generate(&spec).map_err(|e| format!("seed {seed}: {e}"))?;
        for (i, tile) in t.tiles().iter().enumerate() {
            let agg = aggregate_attention(tile, &low).map_err(|e| e.to_string())?;
            let kept = select_topk(&agg, primary[i].len()).map_err(|e| e.to_string())?.kept_indices;
            ensure(kept == primary[i], || format!("seed {seed} tile {i}: {kept:?} vs {:?}", primary[i]))?;
        }
        corpus.push(t);
    }
    let m = layer_similarity(&corpus, RegionSelector::All).map_err(|e| e.to_string())?;
    let b = detect_stages(&m);
    ensure(b == 12, || format!("boundary {b}"))?;
    Ok("100 traces, boundary 12, every tile exact".into())
}

fn trace_round_trip() -> Check {
    for seed in 0..1_000u64 {
        let t = common::random_trace(seed.wrapping_mul(0x9E37_79B9));
        let bytes = write_trace(&t).map_err(|e| e.to_string())?;
        let back = read_trace(&bytes).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(common::bits(&t) == common::bits(&back), || format!("seed {seed}: payload differs"))?;
        ensure(
            back.image_id() == t.image_id() && back.grid_rows() == t.grid_rows() && back.grid_cols() == t.grid_cols(),
            || format!("seed {seed}: header differs"),
        )?;
    }
    Ok("1000 traces bit-exact".into())
}

fn main() {
    let checks: [Criterion; 6] = [
        ("efficiency model vs reported prefill table", efficiency_table),
        ("budget conservation", budget_conservation),
        ("selection oracle equivalence", selection_oracle),
        ("softmax and scoring properties", scoring_properties),
        ("planted structure recovery", planted_recovery),
        ("trace round-trip", trace_round_trip),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = check();
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({detail}) [{ms} ms]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{ms} ms]");
            }
        }
    }
    println!("SKIP  benchmark accuracies: need full model inference, out of scope for this crate");
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

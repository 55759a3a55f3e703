#![allow(dead_code)]

use hero_core::synth::SplitMix64;
use hero_core::{ImageTrace, RegionTrace, Tensor};

pub fn unit(rng: &mut SplitMix64, d: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..d).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Attention rows with mass in [0.5, 1), with occasional exact zeros.
pub fn attention(rng: &mut SplitMix64, layers: usize, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(layers * n);
    for _ in 0..layers {
        let raw: Vec<f64> = (0..n)
            .map(|_| match rng.below(10) {
                0 => 0.0,
                _ => rng.next_f64(),
            })
            .collect();
        let total: f64 = raw.iter().sum::<f64>() + 1e-3;
        let mass = 0.5 + 0.5 * rng.next_f64();
        data.extend(raw.iter().map(|v| (v / total * mass) as f32));
    }
    Tensor::matrix(layers, n, data).unwrap()
}

pub fn random_trace(seed: u64) -> ImageTrace {
    let mut rng = SplitMix64::new(seed);
    let rows = 1 + rng.below(3) as usize;
    let cols = 1 + rng.below(3) as usize;
    let n = 1 + rng.below(40) as usize;
    let layers = 1 + rng.below(6) as usize;
    let d_v = 1 + rng.below(12) as usize;
    let d_clip = 2 + rng.below(8) as usize;
    let with_clip = rng.below(2) == 0;
    let region = |rng: &mut SplitMix64, clip: bool| {
        let embed: Vec<f32> = (0..d_v).map(|_| (rng.next_f64() * 4.0 - 2.0) as f32).collect();
        RegionTrace::new(
            attention(rng, layers, n),
            Tensor::vector(embed).unwrap(),
            clip.then(|| Tensor::vector(unit(rng, d_clip)).unwrap()),
        )
    };
    let tiles = (0..rows * cols).map(|_| region(&mut rng, with_clip)).collect();
    let thumb = region(&mut rng, false);
    let text = (with_clip && rng.below(4) != 0).then(|| Tensor::vector(unit(&mut rng, d_clip)).unwrap());
    ImageTrace::new(format!("rand-{seed}"), rows, cols, tiles, thumb, text).unwrap()
}

pub fn bits(t: &ImageTrace) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut push = |x: &Tensor| out.push(x.data().iter().map(|v| v.to_bits()).collect());
    for r in t.tiles().iter().chain([t.thumbnail()]) {
        push(&r.cls_attn);
        push(&r.cls_embed);
        if let Some(c) = &r.clip_embed {
            push(c);
        }
    }
    if let Some(x) = t.text_embed() {
        push(x);
    }
    out
}

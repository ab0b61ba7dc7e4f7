//! Throwaway data/schedule probe for the toy-training margin. Not shipped.

use std::time::Instant;

use lgtd::data::{synth_scene, upsample_frame, PairedSample, SynthParams};
use lgtd::metrics::{self, EvalProtocol};
use lgtd::model::{Lgtd, ModelConfig};
use lgtd::train::{train, TrainConfig};

fn samples(seeds: std::ops::Range<u64>, p: &SynthParams, r: usize) -> Vec<PairedSample> {
    seeds
        .map(|s| PairedSample::from_hr_clip(&synth_scene(s, p).unwrap(), r).unwrap())
        .collect()
}

fn main() {
    let variant = std::env::args().nth(1).unwrap_or_else(|| "base".into());
    let epochs: usize = std::env::args()
        .nth(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(10);

    let (texture_scale, num_objects, max_speed, lr_init, halve_every) = match variant.as_str() {
        "base" => (12.0, 4, 1.5, 1e-3, 10),
        "t16" => (16.0, 4, 1.5, 1e-3, 10),
        "t16lr2" => (16.0, 4, 1.5, 2e-3, 5),
        "t20" => (20.0, 4, 1.5, 1e-3, 10),
        "t16m" => (16.0, 6, 2.0, 1e-3, 10),
        other => panic!("unknown variant {other}"),
    };

    let mcfg = ModelConfig {
        n: 2,
        c: 16,
        r: 4,
        recon_blocks: 2,
        msa_heads: 4,
        window_size: 8,
        ca_reduction: 4,
        ..ModelConfig::default()
    };
    let sp = SynthParams {
        num_frames: 5,
        height: 64,
        width: 64,
        num_objects,
        max_speed,
        texture_scale,
    };
    let train_set = samples(0..64, &sp, mcfg.r);
    let val_set = samples(2000..2008, &sp, mcfg.r);

    let proto = EvalProtocol::default();
    let mut base = 0.0;
    for s in &val_set {
        let up = upsample_frame(&s.lr.frames[s.lr.target_index()], s.r);
        base += metrics::psnr(&up, &s.hr, &proto).unwrap();
    }
    base /= val_set.len() as f64;
    println!("[{variant}] bicubic baseline: {base:.3} dB");

    let tcfg = TrainConfig {
        batch_size: 4,
        patch_size: 16,
        lr_init,
        halve_every,
        epochs,
        iters_per_epoch: Some(100),
        seed: 0,
        ..TrainConfig::default()
    };
    let (model, mut ps) = Lgtd::build(&mcfg, 1).unwrap();
    let t0 = Instant::now();
    let out = train(&model, &mut ps, &train_set, &val_set, &tcfg, None).unwrap();
    for row in &out.rows {
        if let Some(vp) = row.val_psnr {
            println!(
                "[{variant}] iter {:4} lr {:.1e}: val {vp:.3} dB (margin {:+.3})",
                row.iter,
                row.lr,
                vp - base
            );
        }
    }
    println!(
        "[{variant}] final margin {:+.3} dB in {:.1}s",
        out.final_val_psnr.unwrap() - base,
        t0.elapsed().as_secs_f64()
    );
}

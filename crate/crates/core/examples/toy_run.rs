//! Synthetic end-to-end run: train a small model on procedurally generated
//! images, then compare sampled SR against the bicubic baseline.
//!
//! `cargo run --release --example toy_run -- [lr_init] [iterations]`

use std::time::Instant;

use mrdiff::model::ModelConfig;
use mrdiff::sampling::SampleConfig;
use mrdiff::schedule::NoiseSchedule;
use mrdiff::toolkit::synth::{dataset_image, DatasetSpec, Family};
use mrdiff::toolkit::{avg_gradient, psnr, PairedDataset};
use mrdiff::pipeline::LoadedModel;
use mrdiff::train::{TrainConfig, Trainer};

fn dataset(count: usize, seed: u64) -> PairedDataset<f32> {
    let spec = DatasetSpec { count, hr_size: 64, scale: 4, seed, family: Family::Mixed };
    let imgs: Vec<_> = (0..count).map(|i| dataset_image(&spec, i)).collect();
    PairedDataset::from_images((0..count).map(|i| format!("img_{i:04}.png")).collect(), imgs, 4).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(1e-3, |s| s.parse().unwrap());
    let iterations: u64 = args.get(2).map_or(2000, |s| s.parse().unwrap());
    let (train, test) = (dataset(200, 0), dataset(20, 1));
    let mut cfg = ModelConfig::default();
    cfg.eanet.base_channels = 16;
    cfg.eanet.enc_counts = [2, 1, 1, 1];
    cfg.eanet.dec_counts = [1, 1, 1, 1];
    cfg.eanet.mid_count = 1;
    cfg.cpem.n_rcab = 2;
    cfg.cpem.channels = 32;
    let tc = TrainConfig { iterations, lr_init: lr, lr_min: lr.min(1e-7), seed: 0, ..Default::default() };
    let mut trainer = Trainer::new(&cfg, tc, NoiseSchedule::default_schedule()).unwrap();
    let start = Instant::now();
    let trace = trainer
        .run(&train, |t, row| {
            if t.iteration % 100 == 0 {
                println!("iter {:5} loss {:.5} lr {:.2e} ({:.0} s)", row.iteration, row.loss, row.lr, start.elapsed().as_secs_f64());
            }
            Ok(())
        })
        .unwrap();
    let mean = |rows: &[mrdiff::train::TraceRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    let (lead, trail) = (mean(&trace[..100]), mean(&trace[trace.len() - 100..]));
    println!("loss leading {lead:.5} trailing {trail:.5} ratio {:.3}", trail / lead);

    let ckpt = trainer.checkpoint(&mrdiff::toolkit::config::echo(&cfg, &Default::default()));
    let model = LoadedModel::from_checkpoint(&ckpt).unwrap();
    let (mut p_sr, mut p_mu, mut ag_sr, mut ag_mu) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..test.len() {
        let sr = model.upscale(&test.lr[i], &SampleConfig { steps: None, stochastic: false, seed: 0 }).unwrap();
        let mu = test.mu[i].clamp(0.0, 1.0);
        p_sr += psnr(&sr, &test.hr[i], 1.0).unwrap();
        p_mu += psnr(&mu, &test.hr[i], 1.0).unwrap();
        ag_sr += avg_gradient(&sr).unwrap();
        ag_mu += avg_gradient(&mu).unwrap();
    }
    let n = test.len() as f64;
    println!("psnr sr {:.3} mu {:.3}  ag sr {:.5} mu {:.5}  total {:.0} s", p_sr / n, p_mu / n, ag_sr / n, ag_mu / n, start.elapsed().as_secs_f64());
}

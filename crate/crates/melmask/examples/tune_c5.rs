// scratch: empirical check of the 300-step learning-signal criterion
use melmask::audio::{select_segments, synth};
use melmask::cli::sweep;
use melmask::config::RunConfig;
use melmask::masking::SQUARE;
use melmask::trainer::Trainer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.train.batch_size = 16;
    cfg.train.steps = 300;
    cfg.train.seed = 42;
    cfg.validate().unwrap();

    let clips = synth::corpus(8, 6.0, 42);
    let mut trainer = Trainer::new(cfg.model_config().unwrap(), cfg.train_config()).unwrap();
    let mut first = 0.0;
    let mut last = 0.0;
    for step in 0..cfg.train.steps {
        let s = trainer.pretrain_step(&clips).unwrap();
        if step == 0 { first = s.loss; }
        last = s.loss;
        if step % 50 == 0 { eprintln!("step {step}: loss {:.4} ({:.0} ms)", s.loss, s.wall_ms); }
    }
    eprintln!("train: first {first:.4} last {last:.4}, {:.1}s total", t0.elapsed().as_secs_f64());

    // pos/neg gap on fresh segments, full tokens
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let zs: Vec<[Vec<f32>; 2]> = clips.iter().map(|c| {
        let (s1, s2) = select_segments(c, &mut rng).unwrap();
        [trainer.segment_projection(&s1, &SQUARE, 0.0, &mut rng).unwrap(),
         trainer.segment_projection(&s2, &SQUARE, 0.0, &mut rng).unwrap()]
    }).collect();
    let dot = |a: &[f32], b: &[f32]| -> f64 { a.iter().zip(b).map(|(&x, &y)| (x as f64) * (y as f64)).sum() };
    let mut pos = vec![];
    let mut neg = vec![];
    for i in 0..zs.len() {
        pos.push(dot(&zs[i][0], &zs[i][1]));
        for j in 0..zs.len() {
            if i == j { continue; }
            for u in 0..2 { for v in 0..2 { neg.push(dot(&zs[i][u], &zs[j][v])); } }
        }
    }
    let mp = pos.iter().sum::<f64>() / pos.len() as f64;
    let mn = neg.iter().sum::<f64>() / neg.len() as f64;
    eprintln!("mean pos {mp:.4} mean neg {mn:.4} gap {:.4}", mp - mn);

    let acc = sweep::probe_accuracy(&trainer, cfg.train.seed, &cfg).unwrap();
    eprintln!("probe accuracy {acc:.4} (chance 0.25)");
    eprintln!("total {:.1}s", t0.elapsed().as_secs_f64());
}

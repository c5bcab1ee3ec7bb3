//! Rough throughput probe for the heavy stages. Not a benchmark; run with
//! `cargo run -p apegan --example timing --release -- <data_dir>`.

use std::time::Instant;

use apegan::attacks::{fgsm, AttackConfig};
use apegan::data::load_mnist;
use apegan::gan::{train_apegan, ApeGanConfig, TrainingPairs};
use apegan::models::{builtin_spec, train_classifier, TrainConfig};
use apegan::par::Parallelism;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/mnist".into());
    let mode = Parallelism::Parallel;
    let t0 = Instant::now();
    let (train, test) = load_mnist(std::path::Path::new(&dir)).unwrap();
    println!("load: {:?}", t0.elapsed());

    // one pass over 6400 samples per model to estimate epoch time
    let subset: Vec<usize> = (0..6400).collect();
    let small_train = train.select(&subset);
    let small_test = test.select(&(0..2000).collect::<Vec<_>>());
    for name in ["A", "B", "C"] {
        let spec = builtin_spec(name).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let clf = train_classifier(&spec, &small_train, &small_test, &cfg, mode).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!(
            "model {name}: {:.1}s for 6400 samples -> {:.0}s/epoch(60k), err {:.2}% (subset-trained)",
            dt,
            dt * 60000.0 / 6400.0,
            clf.meta.clean_error.unwrap()
        );

        let t = Instant::now();
        let r = fgsm(&clf.net, &small_test.images, &small_test.labels, 0.3, mode).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!(
            "  fgsm on 2000: {:.2}s -> {:.1}s/10k  (fooled {}/{})",
            dt,
            dt * 5.0,
            r.success_count(),
            r.success.len()
        );
        let _ = AttackConfig::default();
    }

    // apegan step timing: 3200 pairs, 1 epoch
    let g = builtin_spec("G_mnist").unwrap();
    let d = builtin_spec("D_mnist").unwrap();
    let n = 3200usize;
    let idx: Vec<usize> = (0..n).collect();
    let clean = train.images.gather(&idx);
    let adv = clean.map(|v| (v + 0.05).min(1.0));
    let pairs = TrainingPairs::new(adv, clean).unwrap();
    let cfg = ApeGanConfig {
        epochs: 1,
        ..ApeGanConfig::default()
    };
    let t = Instant::now();
    let state = train_apegan(&pairs, &g, &d, &cfg, mode).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!(
        "apegan: {:.1}s for {n} pairs -> {:.0}s/epoch(60k); g_loss {:?}",
        dt,
        dt * 60000.0 / n as f64,
        state.meta.epoch_losses
    );
}

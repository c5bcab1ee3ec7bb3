//! Attack diagnostics against pilot checkpoints.

use apegan::attacks::{cw_l2, deepfool, AttackConfig};
use apegan::data::load_mnist;
use apegan::models::{load_classifier, predictions};
use apegan::par::Parallelism;

fn main() {
    let mode = Parallelism::Parallel;
    let (_, test) = load_mnist(std::path::Path::new("data/mnist")).unwrap();
    let subset: Vec<usize> = (0..100).collect();
    let small = test.select(&subset);

    // --- deepfool vs model A ---
    let a_dir = std::fs::read_dir("runs/pilot/models")
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().starts_with("A-"))
        .unwrap()
        .path();
    let model_a = load_classifier(&a_dir).unwrap();
    println!("model A clean err on subset: {:.1}%", {
        let preds = predictions(&model_a.net, &small.images, mode).unwrap();
        100.0 * preds.iter().zip(&small.labels).filter(|(p, l)| p != l).count() as f64 / 100.0
    });
    let r = deepfool(&model_a.net, &small.images, &small.labels, 50, 0.02, mode).unwrap();
    let iter_hist: Vec<usize> = r.iterations.clone();
    println!(
        "deepfool: success {}/100, iters min/mean/max {}/{:.1}/{}",
        r.success_count(),
        iter_hist.iter().min().unwrap(),
        iter_hist.iter().sum::<usize>() as f64 / 100.0,
        iter_hist.iter().max().unwrap(),
    );
    // how many crossed BEFORE clipping? recompute without clip by hand:
    let mean_l2: f64 = r.norms.iter().map(|n| n.1).sum::<f64>() / 100.0;
    let mean_linf: f32 = r.norms.iter().map(|n| n.2).sum::<f32>() / 100.0;
    println!("deepfool: mean l2 {mean_l2:.3}, mean linf {mean_linf:.3}");

    // --- cw vs model B ---
    let b_dir = std::fs::read_dir("runs/pilot/models")
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().starts_with("B-"))
        .unwrap()
        .path();
    let model_b = load_classifier(&b_dir).unwrap();
    for (iters, steps, c0, polish, lr) in [
        (200usize, 3usize, 1.0f32, 40usize, 0.05f32),
        (200, 3, 1.0, 40, 0.1),
        (300, 3, 2.0, 60, 0.05),
    ] {
        let cfg = AttackConfig {
            cw_iters: iters,
            cw_search_steps: steps,
            cw_initial_c: c0,
            cw_polish_iters: polish,
            cw_lr: lr,
            ..AttackConfig::default()
        };
        let t = std::time::Instant::now();
        let r = cw_l2(&model_b.net, &small.images, &small.labels, 0.0, &cfg, mode).unwrap();
        let med = {
            let mut v: Vec<f64> = r.norms.iter().map(|n| n.1).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[50]
        };
        println!(
            "cw iters={iters} steps={steps} c0={c0} polish={polish} lr={lr}: success {}/100, median l2 {med:.3}, iters used {:.0}, {:.0}s",
            r.success_count(),
            r.iterations.iter().sum::<usize>() as f64 / 100.0,
            t.elapsed().as_secs_f64()
        );
    }
}

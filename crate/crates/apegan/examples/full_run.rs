//! Full desk-scale MNIST pipeline with the evaluation configuration.
//! `cargo run -p apegan --release --example full_run -- [data_dir] [out_dir]`

use apegan::harness::ExperimentConfig;
use apegan::par::Parallelism;

fn main() {
    let data_dir = std::env::args().nth(1).unwrap_or_else(|| "data/mnist".into());
    let out_dir = std::env::args().nth(2).unwrap_or_else(|| "runs/full".into());
    let cfg = ExperimentConfig::mnist_desk(data_dir, out_dir);
    let t = std::time::Instant::now();
    match apegan::harness::run_experiment(&cfg, true, Parallelism::Parallel, true) {
        Ok(artifacts) => {
            println!("total: {:.0}s", t.elapsed().as_secs_f64());
            println!("{}", apegan::harness::markdown_report(&artifacts.report));
        }
        Err(e) => {
            eprintln!("full run failed: {e}");
            std::process::exit(1);
        }
    }
}

//! Runs every strategy on the synthetic `5-1` benchmark for seeds 1..=3 and
//! prints final mIoU, probing stability, MD and efficiency numbers.
//!
//! `cargo run --release -p csslab --example reference_benchmark [seeds]`

use std::time::Instant;

use csslab::metrics::MdSource;
use csslab::model::Strategy;
use csslab::trainer::{load_data, run_experiment_on, ExperimentConfig};

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn main() -> csslab::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let cache = std::env::temp_dir().join(format!("csslab-bench-{}", std::process::id()));
    for seed in 1..=seeds {
        let base = ExperimentConfig::reference(seed, Strategy::Dft);
        let (train, eval) = load_data(&base)?;
        for strategy in Strategy::ALL {
            let mut cfg = ExperimentConfig::reference(seed, strategy);
            cfg.experiment.checkpoint_dir = Some(cache.clone());
            cfg.experiment.probing = strategy == Strategy::Dft;
            cfg.experiment.md = strategy == Strategy::Dft;
            let start = Instant::now();
            let out = run_experiment_on::<f64>(&cfg, &train, &eval)?;
            let log = &out.log;
            let fm = &log.final_metrics;
            let init1 = log.steps[0].observed.miou_init;
            let probe_last = log
                .steps
                .last()
                .and_then(|s| s.probe.as_ref())
                .and_then(|p| p.miou_all);
            let md_obs = mean(
                log.md
                    .iter()
                    .filter(|r| r.source == MdSource::Observed)
                    .map(|r| r.value),
            );
            let md_prb = mean(
                log.md
                    .iter()
                    .filter(|r| r.source == MdSource::Probing)
                    .map(|r| r.value),
            );
            println!(
                "seed {seed} {:8} all {:6.2} init {:6.2} incr {:6.2} | init@1 {:6.2?} probe@T {:6.2?} | md obs {md_obs:.4} prb {md_prb:.4} | incr {:.2}s params {:?} | {:.1}s",
                strategy.name(),
                fm.miou_all.unwrap_or(f64::NAN),
                fm.miou_init.unwrap_or(f64::NAN),
                fm.miou_incr.unwrap_or(f64::NAN),
                init1,
                probe_last,
                log.incremental_seconds,
                log.avg_trainable_params,
                start.elapsed().as_secs_f64(),
            );
            if strategy == Strategy::Dft {
                let curve: Vec<String> = log
                    .steps
                    .iter()
                    .map(|s| {
                        format!(
                            "{:.1}/{:.1}",
                            s.observed.miou_all.unwrap_or(0.0),
                            s.probe.as_ref().and_then(|p| p.miou_all).unwrap_or(0.0)
                        )
                    })
                    .collect();
                println!("    observed/probe per step: {}", curve.join(" "));
            }
        }
    }
    let _ = std::fs::remove_dir_all(&cache);
    Ok(())
}

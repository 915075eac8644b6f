//! Trains the matcher on synthetic motion pairs and saves a weight file.
//!
//! Usage: cargo run --release --example train_synthetic -- [steps] [out.pnw]

use std::path::PathBuf;

use patchnet::correlation::CorrelationConfig;
use patchnet::training::{train, TrainConfig};
use patchnet::util::thread_limit_from_env;
use patchnet::{weights, Result};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(300);
    let out: PathBuf = args
        .get(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("patchnet-weights.pnw"));

    let config = CorrelationConfig::default();
    let tcfg = TrainConfig {
        steps,
        lr: 0.02,
        grad_clip: Some(1.0),
        threads: thread_limit_from_env().max(2),
        ..TrainConfig::default()
    };

    println!("training {steps} steps of batch {} ...", tcfg.batch_size);
    let (params, log) = train(&config, &tcfg, 42)?;
    for row in log.iter().step_by((steps / 10).max(1)) {
        println!(
            "step {:4}  loc {:8.4}  bbox {:8.4}  total {:8.4}",
            row.step, row.loc_loss, row.bbox_loss, row.total
        );
    }
    if let Some(last) = log.last() {
        println!("final     loc {:8.4}  bbox {:8.4}  total {:8.4}", last.loc_loss, last.bbox_loss, last.total);
    }
    weights::save(&out, &config, &params)?;
    println!("weights written to {}", out.display());
    Ok(())
}

//! Scale-robustness comparison: mean center error of the patch matcher vs a
//! single whole-template correlation filter as the object is rescaled.
//!
//! Usage: cargo run --release --example scale_robustness -- [objects]

use std::collections::BTreeMap;

use patchnet::cli::run_scale_sweep;
use patchnet::correlation::CorrelationConfig;
use patchnet::training::{train, TrainConfig};
use patchnet::util::thread_limit_from_env;
use patchnet::Result;

fn main() -> Result<()> {
    let objects: usize = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(30);

    let config = CorrelationConfig::default();
    println!("training a small model first (~1 min) ...");
    let tcfg = TrainConfig {
        steps: 250,
        lr: 0.02,
        grad_clip: Some(1.0),
        threads: thread_limit_from_env().max(2),
        ..TrainConfig::default()
    };
    let (params, _) = train(&config, &tcfg, 5)?;

    let scales = [0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4];
    let rows = run_scale_sweep(&config, &params, objects, &scales, 17)?;

    let mut by_scale: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
    for r in &rows {
        let key = (r.scale * 100.0).round() as u32;
        let e = by_scale.entry(key).or_insert((0.0, 0.0, 0));
        e.0 += r.patchnet_err;
        e.1 += r.full_template_err;
        e.2 += 1;
    }
    println!("{:>5} {:>16} {:>22}", "scale", "patch matcher", "full-template filter");
    for (key, (pn, ft, n)) in by_scale {
        println!(
            "{:>5.2} {:>13.1} px {:>19.1} px",
            key as f64 / 100.0,
            pn / n as f64,
            ft / n as f64
        );
    }
    Ok(())
}

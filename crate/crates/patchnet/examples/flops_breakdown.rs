//! Prints the analytic FLOP accounting: per-component ablation rows and the
//! patch-size sweep.

use patchnet::correlation::CorrelationConfig;
use patchnet::flops::{ablation_rows, net_flops, patch_size_sweep};

fn main() {
    let config = CorrelationConfig::default();
    let b = net_flops(&config);

    println!("{:<20} {:>12} {:>12} {:>10} {:>12}", "variant", "correlation", "aggregation", "fft", "total");
    for row in ablation_rows(&config) {
        println!(
            "{:<20} {:>11.1}M {:>11.1}M {:>9.2}M {:>11.1}M",
            row.name,
            row.correlation / 1e6,
            row.aggregation / 1e6,
            row.fft / 1e6,
            row.total / 1e6
        );
    }

    println!();
    println!(
        "offset path adds {:.1}M ({:.0}% of the {:.1}M base); Fourier adds {:.2}M ({:.1}%)",
        b.bbox_overhead() / 1e6,
        100.0 * b.bbox_overhead() / b.base(),
        b.base() / 1e6,
        b.fourier / 1e6,
        100.0 * b.fourier / b.base()
    );
    println!(
        "structural sparsity saves {:.1}M over dense channel connections",
        b.mask_savings() / 1e6
    );

    println!();
    println!("patch-size sweep (fixed patch grid and correlation-map size):");
    for (k, total) in patch_size_sweep(&config, &[2, 4, 8, 16]) {
        println!("  {k:>2}x{k:<2} patches -> {:>8.1} MFLOPs", total / 1e6);
    }
}

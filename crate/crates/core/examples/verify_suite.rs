//! Runs the numerical self-checks, then once more with a corrupted gradient to show
//! that the gradient check notices.
//!
//! Run with `cargo run --release --example verify_suite`.

use pricing_lab::verify::{run_verify, Faults};

fn main() -> pricing_lab::Result<()> {
    let report = run_verify(0, Faults::default())?;
    for p in &report.properties {
        println!(
            "{} {:<24} {}",
            if p.passed { "PASS" } else { "FAIL" },
            p.name,
            p.detail
        );
    }
    let broken = run_verify(
        0,
        Faults {
            corrupt_gradient: true,
        },
    )?;
    let g = broken.get("gradient").expect("gradient property exists");
    println!(
        "\nwith a corrupted gradient: {} ({})",
        if g.passed { "PASS" } else { "FAIL" },
        g.detail
    );
    Ok(())
}

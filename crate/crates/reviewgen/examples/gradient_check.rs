//! Verify analytic gradients of the full training loss against central
//! finite differences on the micro model, group by group.
//!
//!     cargo run --release --example gradient_check

use reviewgen::model::{gradcheck, ModelConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig::micro();
    println!(
        "checking {}-dim model, {} encoder + {} decoder layer(s), vocab {}",
        cfg.hidden, cfg.enc_layers, cfg.dec_layers, cfg.vocab_size
    );
    let report = gradcheck(&cfg, 1e-4)?;
    for (name, err) in &report.groups {
        println!("  {name:<16} rel_err = {err:.3e}");
    }
    println!(
        "max relative error {:.3e} (tolerance {:.0e})",
        report.max_rel_err(),
        report.tolerance
    );
    anyhow::ensure!(report.pass(), "gradient check failed");
    println!("all parameter groups agree with finite differences");
    Ok(())
}

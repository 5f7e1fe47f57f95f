//! Central finite differences through the full training loss.
//!
//! cargo run --release --example gradient_check [32|64] [fraction]

use mudiknn::model::{check_model_gradients, ModelGradCheck, Precision};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let precision: Precision = args.next().as_deref().unwrap_or("64").parse()?;
    let fraction: f64 = args.next().as_deref().unwrap_or("0.01").parse()?;
    let check = ModelGradCheck {
        precision,
        fraction,
        ..Default::default()
    };
    let report = check_model_gradients(&check)?;
    println!(
        "{precision}-bit: {} elements, max relative error {:.3e} (tolerance {:.0e}), worst {:?}",
        report.checked,
        report.max_rel_error,
        precision.tolerance(),
        report.worst
    );
    Ok(())
}

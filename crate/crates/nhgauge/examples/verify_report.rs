//! Runs the full verification suite of one built-in and prints the report
//! as JSON. `cargo run --example verify_report -- solid`

use nhgauge::cli::verify;
use nhgauge::systems::by_name;

fn main() -> nhgauge::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "chaplygin".into());
    let report = verify(&by_name(&name)?, 20, 7, 1.0)?;
    for c in &report.checks {
        eprintln!("{:<40} {}", c.check, if c.pass { "ok" } else { "FAIL" });
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

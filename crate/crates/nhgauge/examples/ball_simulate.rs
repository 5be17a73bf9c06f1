//! Integrates the ball for ten time units and reports how well H, J₁, J₂ are
//! kept. Pass a path to also keep the CSV.

use std::fs::File;
use std::io::{sink, Write};

use nhgauge::cli::{simulate, SimulateArgs};
use nhgauge::systems::by_name;

fn main() -> nhgauge::Result<()> {
    let m = by_name("ball")?;
    let args = SimulateArgs {
        t0: 0.0,
        t_final: 10.0,
        h: 1e-3,
        init: None,
        stride: 100,
        reduced: false,
        seed: 7,
    };
    let out: Box<dyn Write> = match std::env::args().nth(1) {
        Some(path) => Box::new(File::create(path)?),
        None => Box::new(sink()),
    };
    let summary = simulate(&m, &args, out)?;
    println!("{}", summary.line());
    Ok(())
}

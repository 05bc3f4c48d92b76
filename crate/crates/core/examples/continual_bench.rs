//! Small ablation matrix over two seeds: vanilla, GAS only, PAS only, both.
//! `jascl bench` runs the full-size version.

use jascl::bench::{run_protocol, BenchSettings, ConfigKind, ContinualProtocol};

fn main() -> jascl::Result<()> {
    let protocol = ContinualProtocol::joint_shift_3(5, 20)?;
    let mut settings = BenchSettings { image_size: (24, 24), ..BenchSettings::default() };
    settings.incremental.epochs = 10;
    let seeds = [0, 1];
    let report = run_protocol(&protocol, &ConfigKind::MATRIX, &seeds, &settings)?;
    println!("{:<10} {:>8} {:>8} {:>8} {:>8}", "config", "s0 mDice", "s1 seen", "s1 new", "s1 hm");
    for row in report.aggregates.iter().filter(|a| a.session == 1) {
        let base = report.aggregates.iter().find(|a| a.config == row.config && a.session == 0).unwrap();
        println!(
            "{:<10} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            row.config.name(),
            base.mean_dice,
            row.seen_dice.unwrap_or(0.0),
            row.new_dice.unwrap_or(0.0),
            row.harmonic_dice.unwrap_or(0.0)
        );
    }
    Ok(())
}

//! Item-level simulation of the filtered dynamics against the recurrence,
//! plus the memory-bank drift it is contrasted with.

use std::sync::Arc;

use jascl::dynamics::{crossover_step, memory_bank_trajectory, monte_carlo_oracle, DynamicsParams, MemoryBankModel};

fn main() -> jascl::Result<()> {
    let p = DynamicsParams::new(0.3, 0.8, 0.9, 0.5, 0.9)?;
    let mc = monte_carlo_oracle(&p, 100_000, 200, 20, 7)?;
    for pt in mc.points.iter().step_by(40) {
        println!(
            "step {:>3}: analytic {:.5}  simulated {:.5} ± {:.5}",
            pt.step, pt.analytic, pt.mc_mean, pt.mc_stderr
        );
    }
    let worst = mc
        .points
        .iter()
        .skip(1)
        .map(|pt| (pt.analytic - pt.mc_mean).abs() / pt.mc_stderr)
        .fold(0.0, f64::max);
    println!("largest deviation {worst:.2} standard errors over {} steps", mc.points.len() - 1);

    let g = Arc::new(|e: f64| 0.02 + 0.98 * e.powf(0.8));
    let bank = MemoryBankModel::new(0.1, g, 0.05)?;
    let traj = memory_bank_trajectory(&bank, 100)?;
    println!("memory bank error after 100 updates {:.3}", traj[100]);
    match crossover_step(&traj, 1.0 - 0.1) {
        Some(t) => println!("bank precision stays below 0.9 from step {t}"),
        None => println!("bank precision never drops below 0.9"),
    }
    Ok(())
}

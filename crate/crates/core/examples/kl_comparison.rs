//! Variance-only KL of GAS, isotropic, static and memory posteriors against
//! the Laplace posterior, with the matching PAC-Bayes gaps.

use jascl::numerics::{kl_comparison, pac_bayes_gap, ComparisonConfig, FisherDiagonal, GasScale, MemoryPrior};

fn main() -> jascl::Result<()> {
    let current = FisherDiagonal::new(vec![2.0, 0.5, 8.0, 0.1])?;
    let previous = FisherDiagonal::new(vec![1.0, 1.0, 1.0, 1.0])?;
    let cfg = ComparisonConfig {
        static_lambda: Some(previous.mean()),
        memory: Some(MemoryPrior { lambda: 1.0, fisher_hist: previous }),
        ..Default::default()
    };
    let exact = kl_comparison(&current, &cfg)?;
    println!("heterogeneity {:.4}", exact.fisher_variance);
    println!("kl gas {:.6}  iso {:.6}  static {:.6}  memory {:.6}",
        exact.kl_gas, exact.kl_iso, exact.kl_static.unwrap(), exact.kl_memory.unwrap());

    // Squared gradients are only a proxy for the Fisher.
    let noisy = ComparisonConfig {
        approx_error: Some(vec![0.05, -0.04, 0.02, 0.08]),
        gas_scale: GasScale::Optimal,
        ..cfg
    };
    let approx = kl_comparison(&current, &noisy)?;
    println!("with 5% gradient error: kl gas {:.6}", approx.kl_gas);

    for n in [100u64, 10_000, 1_000_000] {
        println!(
            "n = {n:>7}: gap gas {:.5}  iso {:.5}",
            pac_bayes_gap(approx.kl_gas, n, 0.05)?,
            pac_bayes_gap(approx.kl_iso, n, 0.05)?
        );
    }
    Ok(())
}

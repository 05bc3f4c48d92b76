//! Worst-case versus GAS loss increase on quadratics of growing condition number.

use jascl::gas::{adversarial_comparison, expected_quadratic_increase, QuadraticLandscape};

fn main() -> jascl::Result<()> {
    println!("{:>9} {:>12} {:>12} {:>8}", "kappa", "delta_adv", "delta_gas", "ratio");
    for kappa in [1.0, 3.0, 10.0, 100.0, 1000.0] {
        let eig = vec![1.0 / kappa, 0.5 * (1.0 + 1.0 / kappa), 1.0];
        let l = QuadraticLandscape::centered(eig)?;
        let r = adversarial_comparison(&l, 0.1)?;
        // The same number straight from the per-coordinate allocation.
        let s = l.gas_scales(0.1);
        let direct = expected_quadratic_increase(&l, s.as_slice().unwrap())?;
        assert!((direct - r.delta_gas).abs() < 1e-15);
        println!("{:>9} {:>12.3e} {:>12.3e} {:>8.3}", l.condition_number(), r.delta_adv, r.delta_gas, r.ratio);
    }
    Ok(())
}

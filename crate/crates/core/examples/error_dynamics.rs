//! Teacher-error recurrence with and without the filter, and the precision sweep.

use jascl::dynamics::{
    asymptotic_error, improvement_threshold, iterate_to_convergence, DynamicsParams, FilterMode,
};

fn main() -> jascl::Result<()> {
    let p = DynamicsParams::new(0.3, 0.8, 0.9, 0.5, 0.9)?;
    for mode in [FilterMode::Unfiltered, FilterMode::Filtered] {
        let (e, iters) = iterate_to_convergence(&p, mode, 0.5)?;
        println!("{mode:?}: iterated {e:.6} after {iters} steps, closed form {:.6}", asymptotic_error(&p, mode)?);
    }
    println!("sufficient precision threshold {:.3}", improvement_threshold(p.f, p.gamma)?);
    println!("{:>5} {:>9}", "rho", "eps_inf");
    for k in 0..=10 {
        let rho = k as f64 / 10.0;
        let q = DynamicsParams { rho_precision: rho, ..p };
        println!("{rho:>5.1} {:>9.5}", asymptotic_error(&q, FilterMode::Filtered)?);
    }
    Ok(())
}

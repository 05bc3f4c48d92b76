//! Accumulate squared gradients, turn them into noise scales, perturb.

use jascl::gas::{noise_scales, perturb, GradientBuffer};
use ndarray::{array, Array2};

fn main() -> jascl::Result<()> {
    let mut buf = GradientBuffer::new(2, 3);
    // The first column sees large gradients, the last small ones.
    for step in 0..10 {
        let s = step as f64;
        buf.accumulate(&array![[1.0 + 0.1 * s, 0.3, 0.1], [0.8, 0.2 * s, 0.05]])?;
    }
    let scales = noise_scales(&buf)?;
    println!("accumulated\n{:.3}", buf.sums());
    println!("scales (1 = least-trained weight)\n{:.4}", scales.scales());

    let w = Array2::<f64>::zeros((2, 3));
    let a = perturb(&w, &scales, 42)?;
    let b = perturb(&w, &scales, 42)?;
    assert_eq!(a, b);
    println!("perturbed weights, seed 42\n{a:.4}");
    Ok(())
}

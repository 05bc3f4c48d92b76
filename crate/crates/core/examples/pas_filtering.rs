//! Prototype bank, dual-criteria masks and the consistency loss on a toy image.

use jascl::pas::{
    compute_prototypes, consistency_loss, estimate_coverage_precision, validate_pixels, FeatureMap,
    FilterConfig,
};
use ndarray::{Array2, Array3};

fn main() -> jascl::Result<()> {
    // 4x4 image, left half class 0, right half class 1, 2-d features.
    let (h, w) = (4, 4);
    let labels = Array2::from_shape_fn((h, w), |(_, x)| usize::from(x >= 2));
    let feats = Array3::from_shape_fn((2, h, w), |(k, y, x)| {
        let c = usize::from(x >= 2);
        let jitter = 0.1 * ((y * 7 + x * 3) % 5) as f64;
        if k == c { 1.0 } else { jitter }
    });
    let fm = FeatureMap::new(feats)?;
    let bank = compute_prototypes(&[(fm.clone(), labels.clone())])?;
    for (c, p) in bank.iter() {
        println!("prototype {c}: {:.3?} from {} samples", p.vector, p.count);
    }

    // Student is sure everywhere; teacher hesitates on one column.
    let student = Array3::from_shape_fn((2, h, w), |(k, _, x)| if k == usize::from(x >= 2) { 3.0 } else { 0.0 });
    let teacher = Array3::from_shape_fn((2, h, w), |(k, _, x)| {
        let margin = if x == 1 { 0.2 } else { 2.5 };
        if k == usize::from(x >= 2) { margin } else { 0.0 }
    });
    let cfg = FilterConfig::default();
    let ms = validate_pixels(&student, &fm, &bank, &cfg)?;
    let mt = validate_pixels(&teacher, &fm, &bank, &cfg)?;
    println!("accepted: student {}, teacher {}, joint {}", ms.accepted_count(), mt.accepted_count(), ms.and(&mt)?.accepted_count());

    let softmax = |z: &Array3<f64>| {
        let mut p = z.clone();
        for y in 0..h {
            for x in 0..w {
                let e: Vec<f64> = (0..2).map(|k| z[[k, y, x]].exp()).collect();
                let s: f64 = e.iter().sum();
                for k in 0..2 {
                    p[[k, y, x]] = e[k] / s;
                }
            }
        }
        p
    };
    let loss = consistency_loss(&softmax(&student), &softmax(&teacher), &ms, &mt)?;
    println!("consistency over the joint mask {loss:.5}");

    let predicted = Array2::from_shape_fn((h, w), |(_, x)| usize::from(x >= 2));
    let cp = estimate_coverage_precision(&mt, &predicted, &labels)?;
    println!("teacher coverage {:.3}, precision {:.3}", cp.f, cp.rho);
    Ok(())
}

//! Hilbert projective metric on the nonnegative cone.

use ndarray::{ArrayView1, Zip};

/// Hilbert projective distance `ln max(x/y) - ln min(x/y)`.
///
/// Entries where both vectors vanish are ignored. If exactly one of them
/// vanishes the vectors lie on different faces of the cone and the distance
/// is `+inf`. Two all-zero vectors are at distance 0.
pub fn hilbert_distance(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    let mut infinite = false;
    Zip::from(&x).and(&y).for_each(|&a, &b| {
        if a == 0.0 && b == 0.0 {
            return;
        }
        if a == 0.0 || b == 0.0 {
            infinite = true;
            return;
        }
        let r = (a / b).ln();
        hi = hi.max(r);
        lo = lo.min(r);
    });
    if infinite {
        f64::INFINITY
    } else if hi == f64::NEG_INFINITY {
        0.0
    } else {
        hi - lo
    }
}

/// Largest absolute entry; 0 for an empty view.
pub fn sup_norm(x: ArrayView1<'_, f64>) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

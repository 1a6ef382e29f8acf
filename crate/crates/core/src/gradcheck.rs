//! Central finite-difference gradient verification.
//!
//! The comparison metric for one coordinate is
//! |analytic - fd| / max(1e-8, |fd|), with fd the symmetric difference
//! quotient. That denominator floor makes the check extremely strict for
//! coordinates whose true derivative is near zero, so callers that probe
//! whole models avoid points where any ReLU sits close to its kink and
//! points where some live coordinate has a tiny-but-nonzero derivative;
//! both situations measure floating-point noise instead of the math being
//! verified.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor in the relative-error formula.
pub const FD_DENOM_FLOOR: f64 = 1e-8;
/// Step used throughout the test suite.
pub const FD_EPSILON: f64 = 1e-5;
/// Acceptance threshold for full-model checks.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Max over coordinates of the relative error between `analytic` and the
/// central difference of `f` at `point`. `f` must be scalar-valued;
/// non-finite values are reported with the offending coordinate.
pub fn finite_difference_check<F>(
    mut f: F,
    point: &Tensor,
    analytic: &Tensor,
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if point.shape != analytic.shape {
        return Err(Error::shape(
            "finite_difference_check",
            format!(
                "point {:?} vs analytic gradient {:?}",
                point.shape, analytic.shape
            ),
        ));
    }
    let mut probe = point.clone();
    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let orig = probe.data[i];
        probe.data[i] = orig + epsilon;
        let fp = f(&probe)?;
        probe.data[i] = orig - epsilon;
        let fm = f(&probe)?;
        probe.data[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("function value at coordinate {i} during finite differences"),
            });
        }
        let fd = (fp - fm) / (2.0 * epsilon);
        let err = (analytic.data[i] - fd).abs() / FD_DENOM_FLOOR.max(fd.abs());
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn linear_function_is_exact() {
        // f(x) = <a, x>, gradient a; central differences are exact for
        // linear maps up to roundoff
        let a = vec![0.7, -1.3, 2.1, 0.4];
        let point = Tensor::from_vec(vec![0.3, 0.9, -0.5, 1.7]);
        let analytic = Tensor::from_vec(a.clone());
        let err = finite_difference_check(
            |x| Ok(x.data.iter().zip(&a).map(|(v, c)| v * c).sum()),
            &point,
            &analytic,
            FD_EPSILON,
        )
        .unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn fusion_through_sum() {
        let xv = vec![0.8, 1.4, 0.3, 2.0, 0.6, 1.1];
        let zv = vec![0.9, 0.2, 1.7, 0.5, 1.2, 0.4];
        let x = Tensor::new(vec![1, 2, 3], xv.clone()).unwrap();
        let z = Tensor::new(vec![3, 2], zv.clone()).unwrap();

        let loss = |xt: &Tensor, zt: &Tensor| -> f64 {
            let mut tp = Tape::new();
            let xi = tp.leaf(xt.clone());
            let zi = tp.leaf(zt.clone());
            let o = tp.bilinear_fuse(xi, zi).unwrap();
            let s = tp.sum(o);
            tp.value(s).item()
        };

        let mut tp = Tape::new();
        let xi = tp.leaf(x.clone());
        let zi = tp.leaf(z.clone());
        let o = tp.bilinear_fuse(xi, zi).unwrap();
        let s = tp.sum(o);
        let g = tp.backward(s).unwrap();

        let err_x =
            finite_difference_check(|xt| Ok(loss(xt, &z)), &x, g.get(xi), FD_EPSILON).unwrap();
        let err_z =
            finite_difference_check(|zt| Ok(loss(&x, zt)), &z, g.get(zi), FD_EPSILON).unwrap();
        assert!(err_x < 1e-6, "err_x = {err_x}");
        assert!(err_z < 1e-6, "err_z = {err_z}");
    }

    #[test]
    fn sabotage_is_detected() {
        let a = vec![0.7, -1.3, 2.1];
        let point = Tensor::from_vec(vec![0.3, 0.9, -0.5]);
        let mut corrupted = Tensor::from_vec(a.clone());
        corrupted.data[1] *= 2.0;
        let err = finite_difference_check(
            |x| Ok(x.data.iter().zip(&a).map(|(v, c)| v * c).sum()),
            &point,
            &corrupted,
            FD_EPSILON,
        )
        .unwrap();
        assert!(err > 0.1, "sabotaged gradient slipped through: {err}");
    }

    #[test]
    fn non_finite_reported() {
        let point = Tensor::from_vec(vec![1.0]);
        let analytic = Tensor::from_vec(vec![1.0]);
        let res = finite_difference_check(|_| Ok(f64::NAN), &point, &analytic, FD_EPSILON);
        assert!(matches!(res, Err(Error::NonFinite { .. })));
    }
}

//! Scalar primitives: the principal branch of the Lambert W function and the
//! alpha synaptic kernel.

/// `-1/e`, the branch point of the Lambert W function.
pub const BRANCH_POINT: f64 = -0.36787944117144233;

/// Arguments this far below the branch point are treated as rounding noise
/// and clamped onto it.
pub const BRANCH_TOLERANCE: f64 = 1e-12;

const MAX_HALLEY_ITERS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("Lambert W0 undefined for z = {z} (< -1/e)")]
pub struct DomainError {
    pub z: f64,
}

/// Principal branch `W0(z)`: the solution `w >= -1` of `w e^w = z`.
///
/// Halley iteration from a piecewise initial guess: a branch-point series for
/// `z` near `-1/e`, an asymptotic log expansion for large `z`, and a
/// `log1p`-based approximation in between.
pub fn lambert_w0(z: f64) -> Result<f64, DomainError> {
    if z.is_nan() || z < BRANCH_POINT - BRANCH_TOLERANCE {
        return Err(DomainError { z });
    }
    if z <= BRANCH_POINT {
        return Ok(-1.0);
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == f64::INFINITY {
        return Ok(f64::INFINITY);
    }

    let mut w = initial_guess(z);
    for _ in 0..MAX_HALLEY_ITERS {
        let ew = w.exp();
        let f = w * ew - z;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = (w - step).max(-1.0);
        if (next - w).abs() <= 4.0 * f64::EPSILON * (1.0 + next.abs()) {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}

fn initial_guess(z: f64) -> f64 {
    if z < -0.25 {
        // Series in p = sqrt(2 (e z + 1)) about the branch point.
        let p = (2.0 * (std::f64::consts::E * z + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if z < 3.0 {
        let l = z.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = z.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// Membrane response at time `t` to a single spike of weight `w_i` arriving
/// at `t_i`: `w_i (t - t_i) e^{tau (t_i - t)}` for `t >= t_i`, zero before.
///
/// Peaks at `t_i + 1/tau` with value `w_i / (tau e)`.
#[inline]
pub fn alpha_kernel(t: f64, t_i: f64, w_i: f64, tau: f64) -> f64 {
    if t < t_i {
        return 0.0;
    }
    w_i * (t - t_i) * (tau * (t_i - t)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn residual(z: f64) -> f64 {
        let w = lambert_w0(z).unwrap();
        (w * w.exp() - z).abs()
    }

    /// Bisection on w e^w = z; independent of the Halley path.
    fn bisect_w0(z: f64, mut lo: f64, mut hi: f64) -> f64 {
        while hi - lo > 1e-15 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < z {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn fixed_points() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn omega_constant_matches_bisection() {
        let oracle = bisect_w0(1.0, 0.0, 1.0);
        assert!((oracle - 0.5671432904097838).abs() < 1e-14);
        assert!((lambert_w0(1.0).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn below_branch_point() {
        // Rounding-level undershoot clamps, anything beyond is an error.
        assert_eq!(lambert_w0(BRANCH_POINT - 5e-13).unwrap(), -1.0);
        assert!(lambert_w0(BRANCH_POINT - 1e-11).is_err());
        assert!(lambert_w0(-1.0).is_err());
        assert!(lambert_w0(f64::NAN).is_err());
    }

    #[test]
    fn near_branch_point() {
        for k in 1..=15 {
            let z = BRANCH_POINT + 10f64.powi(-k);
            assert!(residual(z) <= 1e-12, "z = {z}");
            assert!(lambert_w0(z).unwrap() >= -1.0);
        }
    }

    #[test]
    fn large_arguments() {
        for z in [10.0, 1e3, 1e6, 1e12, 1e100] {
            assert!(residual(z) <= 1e-12 * z, "z = {z}");
        }
    }

    #[test]
    fn alpha_kernel_values() {
        assert_eq!(alpha_kernel(3.0, 3.0, 7.0, 0.5), 0.0);
        assert_eq!(alpha_kernel(2.0, 3.0, 7.0, 0.5), 0.0);
        assert!((alpha_kernel(1.0, 0.0, 1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-16);
        let direct = 0.5 * 1.0 * (-2.0f64).exp();
        assert!((alpha_kernel(2.0, 1.0, 0.5, 2.0) - direct).abs() < 1e-16);
        assert!((alpha_kernel(2.0, 1.0, 0.5, 2.0) - 0.06767).abs() < 1e-5);
    }

    #[test]
    fn alpha_kernel_peak_by_grid_search() {
        for &(t_i, w, tau) in &[(0.0, 1.0, 1.0), (0.3, 2.5, 0.181769), (1.0, 0.7, 2.0)] {
            let dt = 1e-6;
            let (mut best_t, mut best_v) = (t_i, 0.0);
            let n = ((3.0 / tau) / dt) as usize;
            for k in 0..n {
                let t = t_i + k as f64 * dt;
                let v = alpha_kernel(t, t_i, w, tau);
                if v > best_v {
                    best_v = v;
                    best_t = t;
                }
            }
            assert!((best_t - (t_i + 1.0 / tau)).abs() <= 2.0 * dt);
            assert!((best_v - w / (tau * E)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn residual_bound(u in 0.0f64..1.0) {
            // Log-spaced over (-1/e, 1e6].
            let z = BRANCH_POINT + (1e6 - BRANCH_POINT) * (u * 30.0 - 30.0).exp2().min(1.0);
            prop_assert!(residual(z) <= 1e-12 * z.abs().max(1.0));
        }

        #[test]
        fn monotone(mut zs in proptest::collection::vec(-0.3678794f64..1e4, 2..50)) {
            zs.sort_by(f64::total_cmp);
            let ws: Vec<f64> = zs.iter().map(|&z| lambert_w0(z).unwrap()).collect();
            for pair in ws.windows(2) {
                prop_assert!(pair[0] <= pair[1]);
            }
        }
    }
}

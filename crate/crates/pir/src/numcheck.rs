//! Central-finite-difference utilities.
//!
//! Used by the test suites as the independent oracle for every hand-rolled
//! gradient in the crate: perturb one scalar at a time, evaluate the forward
//! function twice, and compare the quotient against the analytic value.

/// Central difference of `f` at `x` with step `h`.
pub fn central_diff(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central-difference gradient with respect to every entry of `params`.
///
/// `f` receives the full (temporarily perturbed) parameter slice.
pub fn central_diff_vec(f: &mut dyn FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let fp = f(&work);
        work[i] = orig - h;
        let fm = f(&work);
        work[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Relative agreement check between an analytic gradient and its
/// finite-difference estimate.
///
/// Agreement means `|a - fd| <= rel * max(|a|, |fd|) + floor`. The absolute
/// floor guards near-zero components where the relative criterion is
/// meaningless at FD precision.
pub fn grads_match(analytic: &[f64], fd: &[f64], rel: f64, floor: f64) -> std::result::Result<(), String> {
    if analytic.len() != fd.len() {
        return Err(format!(
            "length mismatch: {} vs {}",
            analytic.len(),
            fd.len()
        ));
    }
    for (i, (&a, &f)) in analytic.iter().zip(fd.iter()).enumerate() {
        let diff = (a - f).abs();
        let scale = a.abs().max(f.abs());
        if diff > rel * scale + floor {
            return Err(format!(
                "component {i}: analytic {a:.8e} vs fd {f:.8e} (diff {diff:.2e}, allowed {:.2e})",
                rel * scale + floor
            ));
        }
    }
    Ok(())
}

/// Default step and tolerances used throughout the gradient suites.
pub const FD_STEP: f64 = 1e-4;
pub const FD_REL: f64 = 1e-3;
pub const FD_FLOOR: f64 = 1e-7;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_on_polynomial() {
        let mut f = |x: f64| 3.0 * x * x + 2.0 * x - 1.0;
        let d = central_diff(&mut f, 1.5, 1e-5);
        assert!((d - (6.0 * 1.5 + 2.0)).abs() < 1e-8);
    }

    #[test]
    fn grads_match_flags_disagreement() {
        assert!(grads_match(&[1.0, 2.0], &[1.0, 2.0005], 1e-3, 1e-7).is_ok());
        assert!(grads_match(&[1.0, 2.0], &[1.0, 2.1], 1e-3, 1e-7).is_err());
    }
}

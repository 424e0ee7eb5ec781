//! Brute-force reference implementations used only by the `tist` test suites.
//!
//! Nothing here depends on the `tist` crate. Every routine works on plain
//! slices and sets in `f64`, one pixel or one coordinate at a time, so that
//! agreement with the production code is evidence rather than tautology.

use std::collections::HashSet;
use std::fmt;

/// Worst-case discrepancy between a checked routine and its oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub n_cases: usize,
    /// Index of the case that produced `max_rel_error`.
    pub worst_case: usize,
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cases={} max_abs={:.3e} max_rel={:.3e} (worst #{})",
            self.n_cases, self.max_abs_error, self.max_rel_error, self.worst_case
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    /// The loss was not finite when probing coordinate `coordinate`.
    NonFiniteProbe { coordinate: usize, value: f64 },
    /// Analytic gradient length does not match the parameter vector.
    GradientLength { expected: usize, got: usize },
    NoCases,
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::NonFiniteProbe { coordinate, value } => {
                write!(f, "non-finite loss {value} while probing coordinate {coordinate}")
            }
            OracleError::GradientLength { expected, got } => {
                write!(f, "analytic gradient has {got} entries, expected {expected}")
            }
            OracleError::NoCases => write!(f, "no coordinates to check"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Pseudo-label of one target pixel given both views' class distributions.
///
/// `view_a` is the untransformed view, `view_b` the photometrically transformed
/// one. Returns `Some(class)` (argmax of `view_b`, lowest index on ties) when
/// both views are strictly more confident than `tau`, otherwise `None`.
pub fn naive_tist_pixel(view_a: &[f64], view_b: &[f64], tau: f64) -> Option<usize> {
    let mut max_a = f64::NEG_INFINITY;
    for &p in view_a {
        if p > max_a {
            max_a = p;
        }
    }
    let mut max_b = f64::NEG_INFINITY;
    let mut arg_b = 0;
    for (i, &p) in view_b.iter().enumerate() {
        if p > max_b {
            max_b = p;
            arg_b = i;
        }
    }
    if max_a > tau && max_b > tau {
        Some(arg_b)
    } else {
        None
    }
}

/// Single-view counterpart of [`naive_tist_pixel`] (plain self-training).
pub fn naive_st_pixel(view: &[f64], tau: f64) -> Option<usize> {
    naive_tist_pixel(view, view, tau)
}

/// Dice coefficient `2|P ∩ G| / (|P| + |G|)` built from explicit sets.
/// Two empty sets score 1.
pub fn set_dice<T: Eq + std::hash::Hash>(pred: &HashSet<T>, gt: &HashSet<T>) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let inter = pred.intersection(gt).count();
    2.0 * inter as f64 / (pred.len() + gt.len()) as f64
}

/// Relative error floor: below this magnitude gradients are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

/// Compares an analytic gradient against central finite differences.
///
/// `loss_fn` evaluates the scalar loss at a parameter vector. `analytic` is the
/// gradient claimed at `params`. Every coordinate is probed with step `eps`.
pub fn fd_gradient_check<F>(
    loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<OracleReport, OracleError>
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..params.len()).collect();
    fd_gradient_check_coords(loss_fn, params, analytic, eps, &coords)
}

/// Like [`fd_gradient_check`] but only probes the listed coordinates.
pub fn fd_gradient_check_coords<F>(
    loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: &[usize],
) -> Result<OracleReport, OracleError>
where
    F: FnMut(&[f64]) -> f64,
{
    fd_gradient_check_floor(loss_fn, params, analytic, eps, coords, REL_ERROR_FLOOR)
}

/// Like [`fd_gradient_check_coords`] with an explicit denominator floor for
/// the relative error, for losses whose rounding noise divided by `eps` is
/// comparable to the smallest partials.
pub fn fd_gradient_check_floor<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: &[usize],
    rel_floor: f64,
) -> Result<OracleReport, OracleError>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(OracleError::GradientLength {
            expected: params.len(),
            got: analytic.len(),
        });
    }
    if coords.is_empty() {
        return Err(OracleError::NoCases);
    }
    let mut probe = params.to_vec();
    let mut report = OracleReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        n_cases: coords.len(),
        worst_case: coords[0],
    };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = loss_fn(&probe);
        if !plus.is_finite() {
            return Err(OracleError::NonFiniteProbe { coordinate: i, value: plus });
        }
        probe[i] = orig - eps;
        let minus = loss_fn(&probe);
        if !minus.is_finite() {
            return Err(OracleError::NonFiniteProbe { coordinate: i, value: minus });
        }
        probe[i] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let abs = (numeric - analytic[i]).abs();
        let scale = numeric.abs().max(analytic[i].abs()).max(rel_floor);
        let rel = abs / scale;
        if abs > report.max_abs_error {
            report.max_abs_error = abs;
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_case = i;
        }
    }
    Ok(report)
}

/// Normalised 1-D Gaussian kernel with radius `ceil(3 sigma)`, evaluated
/// directly from the density.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Softmax of one logit vector, computed without max-shifting.
pub fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tist_pixel_examples() {
        assert_eq!(naive_tist_pixel(&[0.9, 0.1], &[0.88, 0.12], 0.85), Some(0));
        assert_eq!(naive_tist_pixel(&[0.9, 0.1], &[0.6, 0.4], 0.85), None);
        assert_eq!(naive_tist_pixel(&[0.99, 0.01], &[0.3, 0.7], 0.999), None);
        assert_eq!(naive_tist_pixel(&[0.85, 0.15], &[0.9, 0.1], 0.85), None);
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let params = vec![0.3, -1.2, 2.5, 0.0];
        let loss = |p: &[f64]| p.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x * x).sum();
        let grad: Vec<f64> = params
            .iter()
            .enumerate()
            .map(|(i, x)| 2.0 * (i as f64 + 1.0) * x)
            .collect();
        let report = fd_gradient_check(loss, &params, &grad, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report}");
    }

    #[test]
    fn floor_caps_relative_error_of_tiny_partials() {
        let loss = |p: &[f64]| 1e-9 * p[0];
        let tight = fd_gradient_check_floor(loss, &[1.0], &[0.0], 1e-3, &[0], 1e-12).unwrap();
        let loose = fd_gradient_check_floor(loss, &[1.0], &[0.0], 1e-3, &[0], 1e-6).unwrap();
        assert!(tight.max_rel_error > 0.99);
        assert!(loose.max_rel_error < 1e-2);
        assert_eq!(tight.max_abs_error, loose.max_abs_error);
    }

    #[test]
    fn constant_direction_has_zero_gradient() {
        let params = vec![1.0, 2.0];
        let loss = |p: &[f64]| p[0] * p[0];
        let report = fd_gradient_check(loss, &params, &[2.0, 0.0], 1e-5).unwrap();
        assert_eq!(report.n_cases, 2);
        assert!(report.max_abs_error < 1e-9);
    }

    #[test]
    fn non_finite_probe_is_reported() {
        let loss = |p: &[f64]| if p[1] > 0.5 { f64::NAN } else { 0.0 };
        let err = fd_gradient_check(loss, &[0.0, 0.5], &[0.0, 0.0], 1e-3).unwrap_err();
        assert!(matches!(err, OracleError::NonFiniteProbe { coordinate: 1, .. }));
    }

    #[test]
    fn set_dice_examples() {
        let a: HashSet<u32> = [1, 2].into_iter().collect();
        let b: HashSet<u32> = [2, 3].into_iter().collect();
        assert_eq!(set_dice(&a, &a), 1.0);
        assert_eq!(set_dice(&a, &b), 0.5);
        assert_eq!(set_dice::<u32>(&HashSet::new(), &HashSet::new()), 1.0);
        assert_eq!(set_dice(&a, &HashSet::new()), 0.0);
    }

    #[test]
    fn gaussian_kernel_is_normalised() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

pub mod suite;

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors of near-zero gradients.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    fn empty(tolerance: f64) -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            worst_coord: None,
            checked: 0,
            skipped: 0,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    /// Combine reports from separate inputs of the same operation.
    pub fn merge(mut self, other: &GradCheckReport) -> Self {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst_coord = other.worst_coord;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.tolerance = self.tolerance.min(other.tolerance);
        self
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare `analytic` against central differences of the scalar function `f`
/// at `x`, over `coords` (all coordinates when `None`).
pub fn grad_check<F>(
    x: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    tolerance: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    grad_check_piecewise(x, analytic, coords, tolerance, |x| f(x).map(|v| (v, 0)))
}

/// Like [`grad_check`], for piecewise-smooth functions. `f` also returns a
/// signature of its active linear region (e.g. a hash of ReLU masks);
/// coordinates whose perturbation changes the region are skipped.
pub fn grad_check_piecewise<F>(
    x: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    tolerance: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, u64)>,
{
    if x.len() != analytic.len() {
        return Err(Error::shape("grad_check", "gradient length", x.len(), analytic.len()));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let (_, base_sig) = f(x)?;
    let mut probe = x.to_vec();
    let mut report = GradCheckReport::empty(tolerance);
    for &i in coords {
        if !x[i].is_finite() || !analytic[i].is_finite() {
            return Err(Error::NonFinite(format!("coordinate {i}")));
        }
        probe[i] = x[i] + FD_STEP;
        let (plus, sig_plus) = f(&probe)?;
        probe[i] = x[i] - FD_STEP;
        let (minus, sig_minus) = f(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst_coord.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst_coord = Some(i);
        }
    }
    Ok(report)
}

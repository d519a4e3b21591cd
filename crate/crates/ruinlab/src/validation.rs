//! Closed-form oracles, cross-method comparison and smoothness
//! diagnostics.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("no comparison points requested")]
    EmptyPoints,
    #[error("point (u = {u}, regime = {regime}) missing from input {side}")]
    MissingPoint { u: f64, regime: usize, side: &'static str },
    #[error("both inputs carry zero uncertainty at (u = {u}, regime = {regime}) but disagree")]
    ZeroCombinedUncertainty { u: f64, regime: usize },
    #[error("smoothness grid too coarse: need at least 5 points, got {0}")]
    GridTooCoarse(usize),
    #[error("smoothness grid must be uniformly spaced (spacing {got} vs {expected} at index {index})")]
    NonUniformGrid { index: usize, got: f64, expected: f64 },
}

/// Ruin probability of the classical no-investment model (`sigma = a = 0`)
/// with premium rate `c`, claim intensity `alpha`, exponential claim mean
/// `mu`:
///
/// `psi(u) = (alpha mu / c) exp(-(1/mu - alpha/c) u)` under the net-profit
/// condition `c > alpha mu`, and 1 otherwise. Solves the degenerate limit
/// of the integro-differential equation; re-derived by solving
/// `c psi' + I(psi) = 0` with the ruin extension analytically.
pub fn cramer_lundberg_psi(u: f64, c: f64, alpha: f64, mu: f64) -> Result<f64, ValidationError> {
    if !(c > 0.0) {
        return Err(ValidationError::Domain(format!("c = {c} must be > 0")));
    }
    if !(alpha > 0.0) {
        return Err(ValidationError::Domain(format!("alpha = {alpha} must be > 0")));
    }
    if !(mu > 0.0) {
        return Err(ValidationError::Domain(format!("mu = {mu} must be > 0")));
    }
    if u < 0.0 {
        return Err(ValidationError::Domain(format!("u = {u} must be >= 0")));
    }
    if c <= alpha * mu {
        return Ok(1.0);
    }
    Ok((alpha * mu / c) * (-(1.0 / mu - alpha / c) * u).exp())
}

/// A value with statistical uncertainty at one `(u, regime)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub u: f64,
    pub regime: usize,
    pub value: f64,
    /// Zero for solver outputs: solver tolerance carries no statistical
    /// error in z-scores.
    pub std_err: f64,
}

/// One compared point.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub u: f64,
    pub regime: usize,
    pub a: f64,
    pub b: f64,
    /// Signed difference `a - b`.
    pub diff: f64,
    /// `|a - b|` in units of the combined standard error.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub max_z: f64,
}

impl ComparisonReport {
    /// PASS gate used by the comparison workflow.
    pub fn passes(&self, z_max: f64) -> bool {
        self.max_z <= z_max
    }
}

fn lookup(
    points: &[PointEstimate],
    u: f64,
    regime: usize,
    side: &'static str,
) -> Result<PointEstimate, ValidationError> {
    points
        .iter()
        .find(|p| p.regime == regime && (p.u - u).abs() <= 1e-9 * (1.0 + u.abs()))
        .copied()
        .ok_or(ValidationError::MissingPoint { u, regime, side })
}

/// Compare two estimate sets at the requested `(u, regime)` points.
///
/// z-scores use the combined uncertainty `sqrt(se_a^2 + se_b^2)`; two
/// exact values may only coincide.
pub fn compare(
    a: &[PointEstimate],
    b: &[PointEstimate],
    points: &[(f64, usize)],
) -> Result<ComparisonReport, ValidationError> {
    if points.is_empty() {
        return Err(ValidationError::EmptyPoints);
    }
    let mut rows = Vec::with_capacity(points.len());
    let mut max_z = 0.0f64;
    for &(u, regime) in points {
        let pa = lookup(a, u, regime, "a")?;
        let pb = lookup(b, u, regime, "b")?;
        let diff = pa.value - pb.value;
        let combined = (pa.std_err * pa.std_err + pb.std_err * pb.std_err).sqrt();
        let z = if diff == 0.0 {
            0.0
        } else if combined == 0.0 {
            return Err(ValidationError::ZeroCombinedUncertainty { u, regime });
        } else {
            diff.abs() / combined
        };
        max_z = max_z.max(z);
        rows.push(ComparisonRow {
            u,
            regime,
            a: pa.value,
            b: pb.value,
            diff,
            z,
        });
    }
    Ok(ComparisonReport { rows, max_z })
}

/// Statistical model of the errors across a grid of Monte Carlo estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorModel {
    /// Estimates are independent across grid points.
    Independent,
    /// Estimates share common random numbers with the pathwise monotone
    /// coupling, under which `Cov(psi_a, psi_b) = (min(p_a, p_b) - p_a p_b)/n`
    /// because a path ruined at the larger capital is ruined at the smaller.
    MonotoneCoupled,
}

/// Input to the smoothness diagnostic: estimates on a uniform capital grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessInput {
    pub us: Vec<f64>,
    pub psi: Vec<f64>,
    pub std_err: Vec<f64>,
    pub n_paths: u64,
    pub coupling: ErrorModel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SmoothnessVerdict {
    /// Second differences stable under grid refinement within noise; a
    /// consistency check with C^2 smoothness, not a proof.
    ConsistentWithC2,
    Inconsistent,
    Inconclusive(String),
}

/// One interior grid point of the smoothness report.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessRow {
    pub u: f64,
    /// Second central difference at spacing Delta.
    pub d2_fine: f64,
    /// Second central difference at spacing 2 Delta.
    pub d2_coarse: f64,
    /// Propagated standard deviation of `d2_fine - d2_coarse`.
    pub gap_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessReport {
    pub rows: Vec<SmoothnessRow>,
    pub verdict: SmoothnessVerdict,
}

/// Relative stability demanded of the curvature beyond statistical noise;
/// covers the O(Delta^2) truncation difference between the two
/// resolutions for exact inputs.
const CURVATURE_RTOL: f64 = 0.25;
/// Grid-wide mean of `(d2 / sigma)^2` below which curvature cannot be
/// resolved from the noise.
const NOISE_GATE: f64 = 4.0;

/// Consistency check with two times continuous differentiability: second
/// central differences computed at spacings `Delta` and `2 Delta` must
/// agree within the propagated Monte Carlo noise.
pub fn smoothness_diagnostic(input: &SmoothnessInput) -> Result<SmoothnessReport, ValidationError> {
    let n = input.us.len();
    if n < 5 {
        return Err(ValidationError::GridTooCoarse(n));
    }
    assert_eq!(input.psi.len(), n);
    assert_eq!(input.std_err.len(), n);
    let delta = input.us[1] - input.us[0];
    for (j, w) in input.us.windows(2).enumerate() {
        let got = w[1] - w[0];
        if (got - delta).abs() > 1e-9 * delta {
            return Err(ValidationError::NonUniformGrid {
                index: j + 1,
                got,
                expected: delta,
            });
        }
    }
    // Covariance between two grid estimates under the declared error model.
    let cov = |a: usize, b: usize| -> f64 {
        if a == b {
            return input.std_err[a] * input.std_err[a];
        }
        match input.coupling {
            ErrorModel::Independent => 0.0,
            ErrorModel::MonotoneCoupled => {
                let pa = input.psi[a].clamp(0.0, 1.0);
                let pb = input.psi[b].clamp(0.0, 1.0);
                (pa.min(pb) - pa * pb).max(0.0) / input.n_paths as f64
            }
        }
    };
    // Variance of sum_k w_k psi_{j+off_k}.
    let quad_form = |j: usize, offsets: &[isize], weights: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (oa, wa) in offsets.iter().zip(weights.iter()) {
            for (ob, wb) in offsets.iter().zip(weights.iter()) {
                let a = (j as isize + oa) as usize;
                let b = (j as isize + ob) as usize;
                acc += wa * wb * cov(a, b);
            }
        }
        acc.max(0.0)
    };
    let d2_fine = |j: usize| (input.psi[j + 1] - 2.0 * input.psi[j] + input.psi[j - 1]) / (delta * delta);
    let d2_coarse =
        |j: usize| (input.psi[j + 2] - 2.0 * input.psi[j] + input.psi[j - 2]) / (4.0 * delta * delta);

    let s2 = delta * delta;
    let gap_weights = [-0.25 / s2, 1.0 / s2, -1.5 / s2, 1.0 / s2, -0.25 / s2];
    let gap_offsets = [-2isize, -1, 0, 1, 2];
    let coarse_weights = [0.25 / s2, -0.5 / s2, 0.25 / s2];
    let coarse_offsets = [-2isize, 0, 2];

    let mut rows = Vec::new();
    let mut noise_ratio_acc = 0.0;
    let mut sigma_max = 0.0f64;
    let mut all_within = true;
    for j in 2..n - 2 {
        let fine = d2_fine(j);
        let coarse = d2_coarse(j);
        let gap_sigma = quad_form(j, &gap_offsets, &gap_weights).sqrt();
        let coarse_sigma = quad_form(j, &coarse_offsets, &coarse_weights).sqrt();
        sigma_max = sigma_max.max(coarse_sigma);
        if coarse_sigma > 0.0 {
            noise_ratio_acc += (coarse / coarse_sigma).powi(2);
        }
        let tol = 3.0 * gap_sigma + CURVATURE_RTOL * fine.abs().max(coarse.abs());
        if (fine - coarse).abs() > tol {
            all_within = false;
        }
        rows.push(SmoothnessRow {
            u: input.us[j],
            d2_fine: fine,
            d2_coarse: coarse,
            gap_sigma,
        });
    }
    let interior = rows.len() as f64;
    let verdict = if sigma_max > 0.0 && noise_ratio_acc / interior < NOISE_GATE {
        SmoothnessVerdict::Inconclusive("noise-dominated".into())
    } else if all_within {
        SmoothnessVerdict::ConsistentWithC2
    } else {
        SmoothnessVerdict::Inconsistent
    };
    Ok(SmoothnessReport { rows, verdict })
}

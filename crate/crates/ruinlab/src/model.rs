//! Model parameters, sign conventions and validation.
//!
//! Everything downstream (path simulation, jump operator, ODE solver)
//! consumes a [`ModelConfig`] that has already passed [`validate_config`],
//! so invalid-model errors cannot occur past this module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on generator row sums after parsing decimal input.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance on the total mass of a tabulated claim density.
pub const DENSITY_MASS_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("RowSumViolation: generator row {row} sums to {sum:e}, expected 0")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("NegativeOffDiagonal: generator entry ({row},{col}) = {value} must be >= 0")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("NotCommunicating: state {state} does not communicate with the rest of the regime graph")]
    NotCommunicating { state: usize },
    #[error("NonPositiveSigma: sigma[{regime}] = {value}; volatility must be > 0 (sigma = a = 0 needs allow_degenerate)")]
    NonPositiveSigma { regime: usize, value: f64 },
    #[error("NoRuinPossible: c >= 0 and all jumps >= 0, the ruin probability is identically zero")]
    NoRuinPossible,
    #[error("BadClaimDensity: {0}")]
    BadClaimDensity(String),
    #[error("{variant} variant requires {requirement}, got c = {c}")]
    PremiumSign {
        variant: &'static str,
        requirement: &'static str,
        c: f64,
    },
    #[error("length mismatch: {what} has length {got}, expected K = {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("regime index {index} out of range (K = {regimes})")]
    RegimeIndex { index: usize, regimes: usize },
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

/// CTMC intensity matrix `(lambda_jk)` on the state set `{0, .., K-1}`.
///
/// Off-diagonal entries are non-negative, each row sums to zero
/// (`lambda_jj` is recomputed as `-sum_{k != j} lambda_jk` on construction)
/// and the directed graph of positive intensities is strongly connected.
/// `K = 1` is allowed as the degenerate single-regime case with
/// `lambda_00 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    lambda: Vec<Vec<f64>>,
}

impl GeneratorMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ConfigError> {
        let k = rows.len();
        if k == 0 {
            return Err(ConfigError::BadParameter("K must be >= 1".into()));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(ConfigError::LengthMismatch {
                    what: "lambda row",
                    got: row.len(),
                    expected: k,
                });
            }
            for (l, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ConfigError::BadParameter(format!(
                        "lambda[{j}][{l}] is not finite"
                    )));
                }
                if l != j && v < 0.0 {
                    return Err(ConfigError::NegativeOffDiagonal {
                        row: j,
                        col: l,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > ROW_SUM_TOL {
                return Err(ConfigError::RowSumViolation { row: j, sum });
            }
        }
        // Restore the diagonal identity exactly; input only has to hold it
        // within ROW_SUM_TOL.
        let mut lambda = rows;
        for j in 0..k {
            let off: f64 = (0..k).filter(|&l| l != j).map(|l| lambda[j][l]).sum();
            lambda[j][j] = -off;
        }
        let gen = GeneratorMatrix { lambda };
        if k >= 2 {
            for j in 0..k {
                if gen.hold_rate(j) <= 0.0 {
                    // A state that is never left cannot communicate.
                    return Err(ConfigError::NotCommunicating { state: j });
                }
            }
            gen.check_strongly_connected()?;
        }
        Ok(gen)
    }

    /// Number of regimes K.
    pub fn regimes(&self) -> usize {
        self.lambda.len()
    }

    /// Intensity `lambda_jk`.
    pub fn rate(&self, j: usize, k: usize) -> f64 {
        self.lambda[j][k]
    }

    /// Holding rate `lambda_j = -lambda_jj`.
    pub fn hold_rate(&self, j: usize) -> f64 {
        -self.lambda[j][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    fn check_strongly_connected(&self) -> Result<(), ConfigError> {
        let k = self.regimes();
        let reach = |transpose: bool| -> Vec<bool> {
            let mut seen = vec![false; k];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(j) = stack.pop() {
                for l in 0..k {
                    let rate = if transpose {
                        self.lambda[l][j]
                    } else {
                        self.lambda[j][l]
                    };
                    if l != j && rate > 0.0 && !seen[l] {
                        seen[l] = true;
                        stack.push(l);
                    }
                }
            }
            seen
        };
        let fwd = reach(false);
        let bwd = reach(true);
        for state in 0..k {
            if !fwd[state] || !bwd[state] {
                return Err(ConfigError::NotCommunicating { state });
            }
        }
        Ok(())
    }
}

/// Per-regime investment coefficients of the price process
/// `dS_t = S_t (a_k dt + sigma_k dW_t)`.
///
/// The log-price drift `kappa_k = a_k - sigma_k^2 / 2` is always derived,
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeParams {
    a: Vec<f64>,
    sigma: Vec<f64>,
}

impl RegimeParams {
    pub fn new(
        a: Vec<f64>,
        sigma: Vec<f64>,
        regimes: usize,
        allow_degenerate: bool,
    ) -> Result<Self, ConfigError> {
        if a.len() != regimes {
            return Err(ConfigError::LengthMismatch {
                what: "a",
                got: a.len(),
                expected: regimes,
            });
        }
        if sigma.len() != regimes {
            return Err(ConfigError::LengthMismatch {
                what: "sigma",
                got: sigma.len(),
                expected: regimes,
            });
        }
        for k in 0..regimes {
            if !a[k].is_finite() || !sigma[k].is_finite() {
                return Err(ConfigError::BadParameter(format!(
                    "a[{k}] or sigma[{k}] is not finite"
                )));
            }
            let degenerate_ok = allow_degenerate && sigma[k] == 0.0 && a[k] == 0.0;
            if sigma[k] <= 0.0 && !degenerate_ok {
                return Err(ConfigError::NonPositiveSigma {
                    regime: k,
                    value: sigma[k],
                });
            }
        }
        Ok(RegimeParams { a, sigma })
    }

    pub fn regimes(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, k: usize) -> f64 {
        self.a[k]
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma[k]
    }

    /// Log-price drift `kappa_k = a_k - sigma_k^2 / 2`.
    pub fn kappa(&self, k: usize) -> f64 {
        self.a[k] - 0.5 * self.sigma[k] * self.sigma[k]
    }

    pub fn a_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn sigma_slice(&self) -> &[f64] {
        &self.sigma
    }
}

/// `kappa_k = a_k - sigma_k^2 / 2` with an index check.
pub fn kappa_of(regimes: &RegimeParams, k: usize) -> Result<f64, ConfigError> {
    if k >= regimes.regimes() {
        return Err(ConfigError::RegimeIndex {
            index: k,
            regimes: regimes.regimes(),
        });
    }
    Ok(regimes.kappa(k))
}

/// Piecewise-linear claim density on a finite support `[xs[0], xs[n-1]]`.
///
/// The density is normalized to total mass one at validation (input mass
/// must already be within [`DENSITY_MASS_TOL`] of one). Sampling uses the
/// exact inverse of the piecewise-quadratic CDF; quadrature callers split
/// integration panels at the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    xs: Vec<f64>,
    pdf: Vec<f64>,
    /// Cumulative mass up to each knot; cum[0] = 0, cum[n-1] = 1.
    cum: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(xs: Vec<f64>, pdf: Vec<f64>) -> Result<Self, ConfigError> {
        if xs.len() < 2 || xs.len() != pdf.len() {
            return Err(ConfigError::BadClaimDensity(format!(
                "need matching xs/pdf arrays of length >= 2, got {} and {}",
                xs.len(),
                pdf.len()
            )));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(ConfigError::BadClaimDensity(
                    "xs must be strictly increasing".into(),
                ));
            }
        }
        for (j, &p) in pdf.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(ConfigError::BadClaimDensity(format!(
                    "pdf[{j}] = {p} must be finite and >= 0"
                )));
            }
        }
        let mass: f64 = xs
            .windows(2)
            .zip(pdf.windows(2))
            .map(|(x, p)| 0.5 * (p[0] + p[1]) * (x[1] - x[0]))
            .sum();
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(ConfigError::BadClaimDensity(format!(
                "total mass {mass} differs from 1 by more than {DENSITY_MASS_TOL:e}"
            )));
        }
        let pdf: Vec<f64> = pdf.iter().map(|p| p / mass).collect();
        let mut cum = vec![0.0; xs.len()];
        for j in 1..xs.len() {
            cum[j] = cum[j - 1] + 0.5 * (pdf[j - 1] + pdf[j]) * (xs[j] - xs[j - 1]);
        }
        let total = cum[xs.len() - 1];
        for c in cum.iter_mut() {
            *c /= total;
        }
        Ok(TabulatedDensity { xs, pdf, cum })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x < lo || x > hi {
            return 0.0;
        }
        let j = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p => (p - 1).min(self.xs.len() - 2),
        };
        let t = (x - self.xs[j]) / (self.xs[j + 1] - self.xs[j]);
        self.pdf[j] + t * (self.pdf[j + 1] - self.pdf[j])
    }

    /// Mass of `(-inf, x]` under the density.
    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let j = (self.xs.partition_point(|&k| k <= x) - 1).min(self.xs.len() - 2);
        let dx = x - self.xs[j];
        let slope = (self.pdf[j + 1] - self.pdf[j]) / (self.xs[j + 1] - self.xs[j]);
        self.cum[j] + self.pdf[j] * dx + 0.5 * slope * dx * dx
    }

    /// Inverse CDF for `p` in (0,1); exact on each quadratic segment.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.xs.len();
        if p <= 0.0 {
            return self.xs[0];
        }
        if p >= 1.0 {
            return self.xs[n - 1];
        }
        let j = (self.cum.partition_point(|&c| c <= p) - 1).min(n - 2);
        let target = p - self.cum[j];
        let h = self.xs[j + 1] - self.xs[j];
        let p0 = self.pdf[j];
        let slope = (self.pdf[j + 1] - self.pdf[j]) / h;
        // Solve p0*t + slope*t^2/2 = target for t in [0, h].
        let t = if slope.abs() < 1e-14 * (p0.abs() + 1.0) {
            if p0 > 0.0 {
                target / p0
            } else {
                h
            }
        } else {
            let disc = (p0 * p0 + 2.0 * slope * target).max(0.0);
            (-p0 + disc.sqrt()) / slope
        };
        self.xs[j] + t.clamp(0.0, h)
    }
}

/// Law of the claim variable.
///
/// `Exponential` is the law of the claim *magnitude* (mean `mu`); the sign
/// applied in the reserve dynamics comes from the business [`Variant`].
/// `Tabulated` magnitudes work the same way for non-life/annuity business;
/// for the mixed variant the tabulated density describes the *signed* jump
/// itself and may charge both half-axes.
#[derive(Debug, Clone, PartialEq)]
pub enum ClaimLaw {
    Exponential { mu: f64 },
    Tabulated(TabulatedDensity),
}

impl ClaimLaw {
    fn validate(&self) -> Result<(), ConfigError> {
        match self {
            ClaimLaw::Exponential { mu } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    Err(ConfigError::BadClaimDensity(format!(
                        "exponential mean mu = {mu} must be > 0"
                    )))
                } else {
                    Ok(())
                }
            }
            // TabulatedDensity::new already validated.
            ClaimLaw::Tabulated(_) => Ok(()),
        }
    }
}

/// Business variant fixing the premium and jump sign conventions.
///
/// Non-life: `c > 0` and claim magnitudes are subtracted from the reserve.
/// Annuity: `c < 0` and payment magnitudes are added. Mixed: the signed
/// jump law may charge both half-axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NonLife,
    Annuity,
    Mixed,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::NonLife => write!(f, "non_life"),
            Variant::Annuity => write!(f, "annuity"),
            Variant::Mixed => write!(f, "mixed"),
        }
    }
}

/// Sign with which sampled claim magnitudes enter the reserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpSign {
    /// Claims are subtracted (non-life).
    Negative,
    /// Payments are added (annuity).
    Positive,
    /// The tabulated law is already signed (mixed).
    Signed,
}

/// Premium rate, claim intensity and claim law of the business process
/// `P_t = c t + sum_{k <= N_t} xi_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BusinessParams {
    pub c: f64,
    pub alpha: f64,
    pub claims: ClaimLaw,
    pub variant: Variant,
}

impl BusinessParams {
    pub fn jump_sign(&self) -> JumpSign {
        match self.variant {
            Variant::NonLife => JumpSign::Negative,
            Variant::Annuity => JumpSign::Positive,
            Variant::Mixed => JumpSign::Signed,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ConfigError::BadParameter(format!(
                "alpha = {} must be > 0",
                self.alpha
            )));
        }
        if !self.c.is_finite() {
            return Err(ConfigError::BadParameter("c is not finite".into()));
        }
        self.claims.validate()?;
        match self.variant {
            Variant::NonLife => {
                if self.c <= 0.0 {
                    return Err(ConfigError::PremiumSign {
                        variant: "non_life",
                        requirement: "c > 0",
                        c: self.c,
                    });
                }
                self.require_magnitude_law("non_life")?;
            }
            Variant::Annuity => {
                if self.c >= 0.0 {
                    return Err(ConfigError::PremiumSign {
                        variant: "annuity",
                        requirement: "c < 0",
                        c: self.c,
                    });
                }
                self.require_magnitude_law("annuity")?;
            }
            Variant::Mixed => {
                let ClaimLaw::Tabulated(ref law) = self.claims else {
                    return Err(ConfigError::BadClaimDensity(
                        "mixed variant needs a signed tabulated density".into(),
                    ));
                };
                // With no premium drain and no downward jumps the reserve
                // never decreases.
                if self.c >= 0.0 && law.support().0 >= 0.0 {
                    return Err(ConfigError::NoRuinPossible);
                }
            }
        }
        Ok(())
    }

    fn require_magnitude_law(&self, variant: &'static str) -> Result<(), ConfigError> {
        if let ClaimLaw::Tabulated(ref law) = self.claims {
            if law.support().0 < 0.0 {
                return Err(ConfigError::BadClaimDensity(format!(
                    "{variant} magnitudes must have non-negative support, got lower end {}",
                    law.support().0
                )));
            }
        }
        Ok(())
    }
}

/// Numerical knobs shared across the workflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Monte Carlo time step h for the log-price grid.
    pub mc_step: f64,
    /// Gauss-Legendre node count per quadrature panel.
    pub quad_nodes: usize,
    /// Collocation grid size for the boundary-value solver.
    pub bvp_points: usize,
    /// Default simulation horizon.
    pub horizon: f64,
    /// Default Monte Carlo path count.
    pub n_paths: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            mc_step: 1.0 / 256.0,
            quad_nodes: 64,
            bvp_points: 400,
            horizon: 200.0,
            n_paths: 10_000,
        }
    }
}

impl Numerics {
    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.mc_step.is_finite() && self.mc_step > 0.0) {
            return Err(ConfigError::BadParameter(format!(
                "numerics.mc_step = {} must be > 0",
                self.mc_step
            )));
        }
        if self.quad_nodes < 2 {
            return Err(ConfigError::BadParameter(
                "numerics.quad_nodes must be >= 2".into(),
            ));
        }
        if self.bvp_points < 3 {
            return Err(ConfigError::BadParameter(
                "numerics.bvp_points must be >= 3".into(),
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ConfigError::BadParameter(
                "numerics.horizon must be > 0".into(),
            ));
        }
        if self.n_paths == 0 {
            return Err(ConfigError::BadParameter(
                "numerics.n_paths must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fully validated model; immutable and safe to share across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub generator: GeneratorMatrix,
    pub regimes: RegimeParams,
    pub business: BusinessParams,
    pub numerics: Numerics,
    pub seed: u64,
    pub allow_degenerate: bool,
}

impl ModelConfig {
    pub fn regime_count(&self) -> usize {
        self.generator.regimes()
    }

    /// Parse and validate a TOML config document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| ConfigError::BadParameter(format!("config parse error: {e}")))?;
        validate_config(&raw)
    }

    /// Round-trip back to the raw external representation.
    pub fn to_raw(&self) -> RawConfig {
        let claims = match &self.business.claims {
            ClaimLaw::Exponential { mu } => RawClaims {
                kind: "exponential".into(),
                mu: Some(*mu),
                xs: None,
                pdf: None,
            },
            ClaimLaw::Tabulated(t) => RawClaims {
                kind: "table".into(),
                mu: None,
                xs: Some(t.xs.clone()),
                pdf: Some(t.pdf.clone()),
            },
        };
        RawConfig {
            regime_count: self.regime_count(),
            lambda: self.generator.lambda.clone(),
            a: self.regimes.a.clone(),
            sigma: self.regimes.sigma.clone(),
            c: self.business.c,
            alpha: self.business.alpha,
            variant: self.business.variant,
            claims,
            numerics: self.numerics,
            seed: self.seed,
            allow_degenerate: self.allow_degenerate,
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_raw()).expect("config serialization cannot fail")
    }
}

/// Claim-law section of the external config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawClaims {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdf: Option<Vec<f64>>,
}

/// External config document, field-for-field; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(rename = "K")]
    pub regime_count: usize,
    pub lambda: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub sigma: Vec<f64>,
    pub c: f64,
    pub alpha: f64,
    pub variant: Variant,
    pub claims: RawClaims,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub allow_degenerate: bool,
}

/// Validate a raw parameter map into a [`ModelConfig`] with every invariant
/// checked and derived quantities (holding rates, kappa, embedded chain
/// ratios) available.
pub fn validate_config(raw: &RawConfig) -> Result<ModelConfig, ConfigError> {
    if raw.lambda.len() != raw.regime_count {
        return Err(ConfigError::LengthMismatch {
            what: "lambda",
            got: raw.lambda.len(),
            expected: raw.regime_count,
        });
    }
    let generator = GeneratorMatrix::new(raw.lambda.clone())?;
    let regimes = RegimeParams::new(
        raw.a.clone(),
        raw.sigma.clone(),
        raw.regime_count,
        raw.allow_degenerate,
    )?;
    let claims = match raw.claims.kind.as_str() {
        "exponential" => ClaimLaw::Exponential {
            mu: raw.claims.mu.ok_or_else(|| {
                ConfigError::BadClaimDensity("exponential law needs claims.mu".into())
            })?,
        },
        "table" => {
            let xs = raw.claims.xs.clone().ok_or_else(|| {
                ConfigError::BadClaimDensity("tabulated law needs claims.xs".into())
            })?;
            let pdf = raw.claims.pdf.clone().ok_or_else(|| {
                ConfigError::BadClaimDensity("tabulated law needs claims.pdf".into())
            })?;
            ClaimLaw::Tabulated(TabulatedDensity::new(xs, pdf)?)
        }
        other => {
            return Err(ConfigError::BadClaimDensity(format!(
                "unknown claims.kind '{other}' (expected 'exponential' or 'table')"
            )))
        }
    };
    let business = BusinessParams {
        c: raw.c,
        alpha: raw.alpha,
        claims,
        variant: raw.variant,
    };
    business.validate()?;
    raw.numerics.validate()?;
    Ok(ModelConfig {
        generator,
        regimes,
        business,
        numerics: raw.numerics,
        seed: raw.seed,
        allow_degenerate: raw.allow_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_raw() -> RawConfig {
        RawConfig {
            regime_count: 2,
            lambda: vec![vec![-2.0, 2.0], vec![3.0, -3.0]],
            a: vec![0.0, 0.5],
            sigma: vec![1.0, 1.0],
            c: 2.0,
            alpha: 1.0,
            variant: Variant::NonLife,
            claims: RawClaims {
                kind: "exponential".into(),
                mu: Some(1.0),
                xs: None,
                pdf: None,
            },
            numerics: Numerics::default(),
            seed: 7,
            allow_degenerate: false,
        }
    }

    #[test]
    fn canonical_two_regime_config_is_valid() {
        let cfg = validate_config(&base_raw()).expect("base config must validate");
        assert_eq!(cfg.regime_count(), 2);
        assert_eq!(cfg.generator.hold_rate(0), 2.0);
        assert_eq!(cfg.generator.hold_rate(1), 3.0);
    }

    #[test]
    fn row_sum_violation_is_rejected() {
        let mut raw = base_raw();
        raw.lambda = vec![vec![-2.0, 1.0], vec![3.0, -3.0]];
        match validate_config(&raw) {
            Err(ConfigError::RowSumViolation { row: 0, .. }) => {}
            other => panic!("expected RowSumViolation on row 0, got {other:?}"),
        }
    }

    #[test]
    fn negative_off_diagonal_is_rejected() {
        let mut raw = base_raw();
        raw.lambda = vec![vec![1.0, -1.0], vec![3.0, -3.0]];
        match validate_config(&raw) {
            Err(ConfigError::NegativeOffDiagonal { row: 0, col: 1, .. }) => {}
            other => panic!("expected NegativeOffDiagonal, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_generator_is_rejected() {
        let mut raw = base_raw();
        raw.regime_count = 3;
        // State 2 is absorbing once entered from nowhere: 0 <-> 1, 2 -> 0 only.
        raw.lambda = vec![
            vec![-2.0, 2.0, 0.0],
            vec![3.0, -3.0, 0.0],
            vec![1.0, 0.0, -1.0],
        ];
        raw.a = vec![0.0, 0.5, 0.1];
        raw.sigma = vec![1.0, 1.0, 1.0];
        match validate_config(&raw) {
            Err(ConfigError::NotCommunicating { .. }) => {}
            other => panic!("expected NotCommunicating, got {other:?}"),
        }
    }

    #[test]
    fn zero_hold_rate_with_two_regimes_is_rejected() {
        let mut raw = base_raw();
        raw.lambda = vec![vec![0.0, 0.0], vec![3.0, -3.0]];
        assert!(matches!(
            validate_config(&raw),
            Err(ConfigError::NotCommunicating { .. })
        ));
    }

    #[test]
    fn annuity_with_positive_premium_is_rejected() {
        let mut raw = base_raw();
        raw.variant = Variant::Annuity;
        raw.c = 1.0;
        match validate_config(&raw) {
            Err(ConfigError::PremiumSign {
                variant: "annuity", ..
            }) => {}
            other => panic!("expected annuity premium-sign error, got {other:?}"),
        }
    }

    #[test]
    fn non_life_with_negative_premium_is_rejected() {
        let mut raw = base_raw();
        raw.c = -1.0;
        assert!(matches!(
            validate_config(&raw),
            Err(ConfigError::PremiumSign {
                variant: "non_life",
                ..
            })
        ));
    }

    #[test]
    fn sigma_zero_needs_degenerate_flag() {
        let mut raw = base_raw();
        raw.regime_count = 1;
        raw.lambda = vec![vec![0.0]];
        raw.a = vec![0.0];
        raw.sigma = vec![0.0];
        assert!(matches!(
            validate_config(&raw),
            Err(ConfigError::NonPositiveSigma { regime: 0, .. })
        ));
        raw.allow_degenerate = true;
        validate_config(&raw).expect("degenerate sigma = a = 0 allowed with the flag");
    }

    #[test]
    fn degenerate_flag_does_not_allow_negative_sigma() {
        let mut raw = base_raw();
        raw.allow_degenerate = true;
        raw.sigma = vec![-1.0, 1.0];
        assert!(matches!(
            validate_config(&raw),
            Err(ConfigError::NonPositiveSigma { regime: 0, .. })
        ));
    }

    #[test]
    fn mixed_without_downward_jumps_and_nonnegative_premium_is_no_ruin() {
        let mut raw = base_raw();
        raw.variant = Variant::Mixed;
        raw.c = 1.0;
        raw.claims = RawClaims {
            kind: "table".into(),
            mu: None,
            xs: Some(vec![0.0, 2.0]),
            pdf: Some(vec![0.5, 0.5]),
        };
        assert_eq!(validate_config(&raw), Err(ConfigError::NoRuinPossible));
    }

    #[test]
    fn bad_density_mass_is_rejected() {
        let mut raw = base_raw();
        raw.claims = RawClaims {
            kind: "table".into(),
            mu: None,
            xs: Some(vec![0.0, 1.0]),
            pdf: Some(vec![0.5, 0.5]),
        };
        assert!(matches!(
            validate_config(&raw),
            Err(ConfigError::BadClaimDensity(_))
        ));
    }

    #[test]
    fn kappa_matches_hand_values() {
        let r = RegimeParams::new(vec![1.0, 0.0, 0.5], vec![1.0, 2.0, 1.0], 3, false).unwrap();
        assert_eq!(kappa_of(&r, 0).unwrap(), 0.5);
        assert_eq!(kappa_of(&r, 1).unwrap(), -2.0);
        assert_eq!(kappa_of(&r, 2).unwrap(), 0.0);
        assert!(matches!(
            kappa_of(&r, 3),
            Err(ConfigError::RegimeIndex { index: 3, .. })
        ));
    }

    #[test]
    fn validated_row_sums_are_exact_within_tolerance() {
        let cfg = validate_config(&base_raw()).unwrap();
        for row in cfg.generator.rows() {
            let sum: f64 = row.iter().sum();
            assert!(sum.abs() <= 1e-12, "row sum {sum} exceeds 1e-12");
        }
    }

    #[test]
    fn validation_round_trip_is_idempotent() {
        let cfg = validate_config(&base_raw()).unwrap();
        let text = cfg.to_toml_string();
        let cfg2 = ModelConfig::from_toml_str(&text).expect("serialized config must re-validate");
        assert_eq!(cfg, cfg2, "validate(serialize(validate(x))) must be identical");
    }

    #[test]
    fn toml_field_names_match_documented_schema() {
        let cfg = validate_config(&base_raw()).unwrap();
        let text = cfg.to_toml_string();
        for field in ["K", "lambda", "a", "sigma", "c", "alpha", "variant", "seed"] {
            assert!(text.contains(field), "serialized config misses '{field}':\n{text}");
        }
        assert!(text.contains("[claims]"));
        assert!(text.contains("kind"));
        assert!(text.contains("[numerics]"));
    }

    #[test]
    fn tabulated_density_quantile_inverts_cdf() {
        // Trapezoid mass: 0.5*(2/3 + 1/3) + 0.5*(1/3 + 1/6)*2 = 1.
        let law = TabulatedDensity::new(
            vec![0.0, 1.0, 3.0],
            vec![2.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        )
        .unwrap();
        for p in [0.01, 0.1, 0.35, 0.5, 0.77, 0.99] {
            let x = law.quantile(p);
            let back = law.cdf(x);
            assert!(
                (back - p).abs() < 1e-12,
                "cdf(quantile({p})) = {back}, expected {p}"
            );
        }
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let cfg = validate_config(&base_raw()).unwrap();
        let text = format!("{}\nnot_a_field = 3\n", cfg.to_toml_string());
        assert!(matches!(
            ModelConfig::from_toml_str(&text),
            Err(ConfigError::BadParameter(_))
        ));
    }

    #[test]
    fn single_regime_generator_is_allowed() {
        let gen = GeneratorMatrix::new(vec![vec![0.0]]).unwrap();
        assert_eq!(gen.regimes(), 1);
        assert_eq!(gen.hold_rate(0), 0.0);
    }
}

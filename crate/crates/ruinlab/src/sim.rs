//! Reserve process simulation and Monte Carlo ruin estimation.
//!
//! Between claims the reserve follows the inter-claim value process
//! `Y_t = e^{V_t - V_{T_n}} (X_{T_n} + c q)` with
//! `q = int e^{-(V_s - V_{T_n})} ds`; the log price `V` is advanced exactly
//! in law on the merged grid of regime switches and uniform steps of `h`,
//! and `q` by the trapezoidal rule on that grid. Claims arrive at
//! `Exponential(alpha)` times and are applied with the sign fixed by the
//! business variant.
//!
//! Per-path randomness is one stream, a pure function of
//! `(master_seed, path_index)`, consumed in a fixed order:
//!
//! 1. the regime path (holding time, then embedded transition, per jump);
//! 2. the claim schedule (one inter-arrival uniform per claim);
//! 3. chronologically: one standard normal per merged-grid step, and one
//!    uniform per claim magnitude at its claim time.
//!
//! None of these draws depend on the initial capital, so estimates for a
//! whole list of capitals ride on common random numbers and are coupled
//! path by path.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::ctmc::{self, exp_inverse_cdf, open01, EmbeddedChain, RegimePath};
use crate::model::{ClaimLaw, JumpSign, ModelConfig, RegimeParams};

pub use crate::ctmc::path_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("initial capital u = {0} must be > 0")]
    NonPositiveCapital(f64),
    #[error("horizon {0} must be positive and finite")]
    BadHorizon(f64),
    #[error("time step h = {0} must be > 0")]
    BadStep(f64),
    #[error("regime index {index} out of range (K = {regimes})")]
    RegimeIndex { index: usize, regimes: usize },
    #[error("segment [{t0}, {t1}] is empty or reversed")]
    BadSegment { t0: f64, t1: f64 },
    #[error("regime path covers [0, {have}] but the segment needs {need}")]
    PathTooShort { have: f64, need: f64 },
    #[error("horizons must be a non-empty strictly increasing list")]
    BadHorizons,
    #[error("n_paths must be >= 1")]
    NoPaths,
}

/// Outcome of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    pub ruined: bool,
    /// Time of ruin; present iff `ruined`.
    pub ruin_time: Option<f64>,
    /// Reserve at the horizon; present iff the path survived.
    pub terminal_value: Option<f64>,
    /// Claims applied before ruin or the horizon.
    pub claims_seen: u64,
}

/// Monte Carlo ruin estimate for one `(u, i)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RuinEstimate {
    pub u: f64,
    pub i: usize,
    pub horizon: f64,
    pub n_paths: u64,
    pub psi_hat: f64,
    pub std_err: f64,
    pub h: f64,
}

/// Binomial standard error `sqrt(p (1 - p) / n)`.
pub fn binomial_std_err(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Standard error of a common-random-number difference
/// `psi_hat(u_lo) - psi_hat(u_hi)` for `u_lo <= u_hi`.
///
/// Under the monotone coupling, a path ruined at the larger capital is
/// ruined at the smaller one, so the difference is itself the mean of a
/// Bernoulli indicator with success probability `p_lo - p_hi`.
pub fn crn_difference_std_err(p_lo: f64, p_hi: f64, n: u64) -> f64 {
    let d = (p_lo - p_hi).clamp(0.0, 1.0);
    binomial_std_err(d, n)
}

/// Claim arrival times below `horizon`, drawn as Exponential(`alpha`)
/// inter-arrivals by inverse CDF. The draw that overshoots the horizon is
/// still consumed.
pub fn claim_schedule<R: Rng + ?Sized>(alpha: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut buf = Vec::new();
    claim_schedule_into(alpha, horizon, rng, &mut buf);
    buf
}

fn claim_schedule_into<R: Rng + ?Sized>(
    alpha: f64,
    horizon: f64,
    rng: &mut R,
    buf: &mut Vec<f64>,
) {
    buf.clear();
    let mut t = 0.0;
    loop {
        t += exp_inverse_cdf(alpha, rng);
        if t >= horizon {
            break;
        }
        buf.push(t);
    }
}

/// Advance the log price from `t0` to `t1` along a realized regime path.
///
/// Returns `(v1, q)` where `v1` is the log price at `t1` and
/// `q = int_{t0}^{t1} e^{-(V_s - v0)} ds` by the trapezoidal rule on the
/// merged grid of regime switches and steps `t0 + m h`; `q > 0` always.
pub fn simulate_log_price_segment<R: Rng + ?Sized>(
    path: &RegimePath,
    regimes: &RegimeParams,
    t0: f64,
    t1: f64,
    v0: f64,
    h: f64,
    rng: &mut R,
) -> Result<(f64, f64), SimError> {
    if !(h > 0.0) {
        return Err(SimError::BadStep(h));
    }
    if !(t0 < t1) || t0 < 0.0 {
        return Err(SimError::BadSegment { t0, t1 });
    }
    if path.horizon() < t1 {
        return Err(SimError::PathTooShort {
            have: path.horizon(),
            need: t1,
        });
    }
    let kappa: Vec<f64> = (0..regimes.regimes()).map(|k| regimes.kappa(k)).collect();
    let jumps = path.jumps();
    let mut cursor = jumps.partition_point(|&(tau, _)| tau <= t0);
    let (w, q) = walk_segment(
        jumps,
        &mut cursor,
        &kappa,
        regimes.sigma_slice(),
        t0,
        t1,
        h,
        rng,
        &mut NoCrossing,
    );
    Ok((v0 + w, q))
}

/// Crossing hook invoked at every merged-grid point of a segment walk.
trait CrossingCheck {
    /// `q` is the running quadrature value at grid time `t`. Returns true
    /// when the walk can stop early (everything it tracks is decided).
    fn on_grid_point(&mut self, t: f64, q: f64) -> bool;
}

struct NoCrossing;

impl CrossingCheck for NoCrossing {
    #[inline]
    fn on_grid_point(&mut self, _t: f64, _q: f64) -> bool {
        false
    }
}

/// Walk `[t0, t1]` on the merged grid, advancing `w = V_t - V_{t0}` with the
/// exact-in-law Gaussian increment per sub-interval and accumulating the
/// trapezoidal `q`. Consumes one standard normal per positive-length step in
/// a regime with positive volatility.
#[allow(clippy::too_many_arguments)]
fn walk_segment<R: Rng + ?Sized, C: CrossingCheck>(
    jumps: &[(f64, usize)],
    cursor: &mut usize,
    kappa: &[f64],
    sigma: &[f64],
    t0: f64,
    t1: f64,
    h: f64,
    rng: &mut R,
    crossing: &mut C,
) -> (f64, f64) {
    let mut state = jumps[cursor.saturating_sub(1).min(jumps.len() - 1)].1;
    let mut w = 0.0;
    let mut q = 0.0;
    let mut prev_integrand = 1.0;
    let mut t = t0;
    let mut m: u64 = 1;
    loop {
        if t >= t1 {
            break;
        }
        let t_grid = t0 + m as f64 * h;
        let t_switch = if *cursor < jumps.len() {
            jumps[*cursor].0
        } else {
            f64::INFINITY
        };
        let t_next = t_grid.min(t_switch).min(t1);
        if t_next <= t {
            // Zero-length event (coincident switch/grid times); advance the
            // bookkeeping without stepping.
            if t_switch <= t {
                state = jumps[*cursor].1;
                *cursor += 1;
            } else if t_grid <= t {
                m += 1;
            } else {
                break;
            }
            continue;
        }
        let delta = t_next - t;
        w += kappa[state] * delta;
        if sigma[state] > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            w += sigma[state] * delta.sqrt() * z;
        }
        let integrand = (-w).exp();
        q += 0.5 * (prev_integrand + integrand) * delta;
        prev_integrand = integrand;
        let stop = crossing.on_grid_point(t_next, q);
        t = t_next;
        if t_next == t_switch {
            state = jumps[*cursor].1;
            *cursor += 1;
        }
        if t_next == t_grid {
            m += 1;
        }
        if stop {
            break;
        }
    }
    (w, q)
}

/// Reserve states for a batch of capitals sharing one event stream.
///
/// Capitals are processed in ascending order; the pathwise monotone
/// coupling keeps the alive set a suffix.
#[derive(Debug, Clone)]
struct MultiState {
    reserves: Vec<f64>,
    ruin_time: Vec<Option<f64>>,
    first_alive: usize,
    claims_seen: u64,
}

impl MultiState {
    fn new() -> Self {
        MultiState {
            reserves: Vec::new(),
            ruin_time: Vec::new(),
            first_alive: 0,
            claims_seen: 0,
        }
    }

    fn reset(&mut self, us: &[f64]) {
        self.reserves.clear();
        self.reserves.extend_from_slice(us);
        self.ruin_time.clear();
        self.ruin_time.resize(us.len(), None);
        self.first_alive = 0;
        self.claims_seen = 0;
    }

    fn all_ruined(&self) -> bool {
        self.first_alive == self.reserves.len()
    }
}

/// Grid-point crossing detector for a declining premium stream (`c < 0`):
/// `Y_t <= 0` iff `x + c q <= 0` since `e^w > 0`.
struct DecliningCrossing<'a> {
    state: &'a mut MultiState,
    c: f64,
}

impl CrossingCheck for DecliningCrossing<'_> {
    #[inline]
    fn on_grid_point(&mut self, t: f64, q: f64) -> bool {
        let cq = self.c * q;
        while self.state.first_alive < self.state.reserves.len()
            && self.state.reserves[self.state.first_alive] + cq <= 0.0
        {
            self.state.ruin_time[self.state.first_alive] = Some(t);
            self.state.first_alive += 1;
        }
        self.state.all_ruined()
    }
}

/// Reusable per-worker scratch buffers.
struct Scratch {
    jumps: Vec<(f64, usize)>,
    claims: Vec<f64>,
    state: MultiState,
}

impl Scratch {
    fn new() -> Self {
        Scratch {
            jumps: Vec::new(),
            claims: Vec::new(),
            state: MultiState::new(),
        }
    }
}

/// Precomputed per-run simulation context.
struct Engine<'a> {
    config: &'a ModelConfig,
    chain: EmbeddedChain,
    kappa: Vec<f64>,
    sigma: Vec<f64>,
    /// Every regime has sigma = kappa = 0, so V is identically zero and the
    /// trapezoid is exact without grid stepping.
    all_flat: bool,
    sign: JumpSign,
    h: f64,
}

impl<'a> Engine<'a> {
    fn new(config: &'a ModelConfig) -> Self {
        let regimes = &config.regimes;
        let k = regimes.regimes();
        let kappa: Vec<f64> = (0..k).map(|j| regimes.kappa(j)).collect();
        let sigma: Vec<f64> = (0..k).map(|j| regimes.sigma(j)).collect();
        let all_flat = (0..k).all(|j| sigma[j] == 0.0 && kappa[j] == 0.0);
        Engine {
            config,
            chain: ctmc::embedded_chain(&config.generator),
            kappa,
            sigma,
            all_flat,
            sign: config.business.jump_sign(),
            h: config.numerics.mc_step,
        }
    }

    fn draw_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = open01(rng);
        match (&self.config.business.claims, self.sign) {
            (ClaimLaw::Exponential { mu }, JumpSign::Negative) => mu * u.ln(),
            (ClaimLaw::Exponential { mu }, _) => -mu * u.ln(),
            (ClaimLaw::Tabulated(law), JumpSign::Negative) => -law.quantile(u),
            (ClaimLaw::Tabulated(law), JumpSign::Positive) => law.quantile(u),
            (ClaimLaw::Tabulated(law), JumpSign::Signed) => law.quantile(u),
        }
    }

    /// Simulate one path for ascending capitals `us`, sharing every draw.
    fn run<R: Rng + ?Sized>(
        &self,
        us: &[f64],
        i: usize,
        horizon: f64,
        rng: &mut R,
        scratch: &mut Scratch,
    ) {
        let c = self.config.business.c;
        let check_between = c < 0.0;
        scratch.state.reset(us);
        ctmc::sample_jumps_into(&self.chain, i, horizon, rng, &mut scratch.jumps);
        claim_schedule_into(
            self.config.business.alpha,
            horizon,
            rng,
            &mut scratch.claims,
        );
        let mut cursor = 1usize;
        let mut t_prev = 0.0;
        for ci in 0..scratch.claims.len() {
            let tc = scratch.claims[ci];
            let (w, q) = self.advance(
                &scratch.jumps,
                &mut cursor,
                t_prev,
                tc,
                rng,
                check_between.then_some((&mut scratch.state, c)),
            );
            if scratch.state.all_ruined() {
                return;
            }
            let jump = self.draw_jump(rng);
            scratch.state.claims_seen += 1;
            let e = w.exp();
            let cq = c * q;
            let state = &mut scratch.state;
            for idx in state.first_alive..state.reserves.len() {
                state.reserves[idx] = e * (state.reserves[idx] + cq) + jump;
            }
            while state.first_alive < state.reserves.len()
                && state.reserves[state.first_alive] <= 0.0
            {
                state.ruin_time[state.first_alive] = Some(tc);
                state.first_alive += 1;
            }
            if state.all_ruined() {
                return;
            }
            t_prev = tc;
        }
        if t_prev < horizon {
            let (w, q) = self.advance(
                &scratch.jumps,
                &mut cursor,
                t_prev,
                horizon,
                rng,
                check_between.then_some((&mut scratch.state, c)),
            );
            if scratch.state.all_ruined() {
                return;
            }
            let e = w.exp();
            let cq = c * q;
            let state = &mut scratch.state;
            for idx in state.first_alive..state.reserves.len() {
                state.reserves[idx] = e * (state.reserves[idx] + cq);
            }
        }
    }

    fn advance<R: Rng + ?Sized>(
        &self,
        jumps: &[(f64, usize)],
        cursor: &mut usize,
        t0: f64,
        t1: f64,
        rng: &mut R,
        crossing: Option<(&mut MultiState, f64)>,
    ) -> (f64, f64) {
        match crossing {
            None => {
                if self.all_flat {
                    // V identically zero: no draws, trapezoid exact.
                    while *cursor < jumps.len() && jumps[*cursor].0 <= t1 {
                        *cursor += 1;
                    }
                    (0.0, t1 - t0)
                } else {
                    walk_segment(
                        jumps,
                        cursor,
                        &self.kappa,
                        &self.sigma,
                        t0,
                        t1,
                        self.h,
                        rng,
                        &mut NoCrossing,
                    )
                }
            }
            Some((state, c)) => {
                let mut check = DecliningCrossing { state, c };
                walk_segment(
                    jumps,
                    cursor,
                    &self.kappa,
                    &self.sigma,
                    t0,
                    t1,
                    self.h,
                    rng,
                    &mut check,
                )
            }
        }
    }
}

fn validate_common(
    config: &ModelConfig,
    i: usize,
    horizon: f64,
) -> Result<(), SimError> {
    if i >= config.regime_count() {
        return Err(SimError::RegimeIndex {
            index: i,
            regimes: config.regime_count(),
        });
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SimError::BadHorizon(horizon));
    }
    Ok(())
}

/// Simulate one reserve path started at capital `u > 0` in regime `i`.
///
/// Non-life business checks for ruin at claim times only (the inter-claim
/// process stays positive when `c > 0`); with a declining premium stream
/// the reserve is additionally checked at every merged-grid point and the
/// first crossing grid point is reported as the ruin time.
pub fn simulate_path<R: Rng + ?Sized>(
    config: &ModelConfig,
    u: f64,
    i: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<PathOutcome, SimError> {
    if !(u > 0.0) {
        return Err(SimError::NonPositiveCapital(u));
    }
    validate_common(config, i, horizon)?;
    let engine = Engine::new(config);
    let mut scratch = Scratch::new();
    engine.run(&[u], i, horizon, rng, &mut scratch);
    let state = &scratch.state;
    Ok(match state.ruin_time[0] {
        Some(t) => PathOutcome {
            ruined: true,
            ruin_time: Some(t),
            terminal_value: None,
            claims_seen: state.claims_seen,
        },
        None => PathOutcome {
            ruined: false,
            ruin_time: None,
            terminal_value: Some(state.reserves[0]),
            claims_seen: state.claims_seen,
        },
    })
}

/// Estimate ruin probabilities for a list of capitals with common random
/// numbers.
///
/// Paths are distributed over the rayon pool; the per-path stream depends
/// only on `(master_seed, path_index)` and ruin counts are aggregated as
/// integers, so results are bitwise identical for any worker count.
/// Capitals `u <= 0` are mapped to `psi_hat = 1` directly without
/// simulation.
pub fn estimate_ruin(
    config: &ModelConfig,
    u_list: &[f64],
    i: usize,
    horizon: f64,
    n_paths: u64,
    master_seed: u64,
) -> Result<Vec<RuinEstimate>, SimError> {
    validate_common(config, i, horizon)?;
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let h = config.numerics.mc_step;
    // Ascending order for the monotone multi-capital engine.
    let mut order: Vec<usize> = (0..u_list.len()).filter(|&j| u_list[j] > 0.0).collect();
    order.sort_by(|&a, &b| u_list[a].total_cmp(&u_list[b]));
    let us: Vec<f64> = order.iter().map(|&j| u_list[j]).collect();

    let counts = if us.is_empty() {
        Vec::new()
    } else {
        ruin_counts(config, &us, i, horizon, n_paths, master_seed)
    };

    let mut psi = vec![1.0f64; u_list.len()];
    for (slot, &j) in order.iter().enumerate() {
        psi[j] = counts[slot] as f64 / n_paths as f64;
    }
    Ok(u_list
        .iter()
        .enumerate()
        .map(|(j, &u)| {
            let (p, se) = if u > 0.0 {
                (psi[j], binomial_std_err(psi[j], n_paths))
            } else {
                (1.0, 0.0)
            };
            RuinEstimate {
                u,
                i,
                horizon,
                n_paths,
                psi_hat: p,
                std_err: se,
                h,
            }
        })
        .collect())
}

fn ruin_counts(
    config: &ModelConfig,
    us_sorted: &[f64],
    i: usize,
    horizon: f64,
    n_paths: u64,
    master_seed: u64,
) -> Vec<u64> {
    let engine = Engine::new(config);
    let n_u = us_sorted.len();
    (0..n_paths)
        .into_par_iter()
        .fold(
            || (vec![0u64; n_u], Scratch::new()),
            |(mut counts, mut scratch), p| {
                let mut rng = path_rng(master_seed, p);
                engine.run(us_sorted, i, horizon, &mut rng, &mut scratch);
                for (j, rt) in scratch.state.ruin_time.iter().enumerate() {
                    if rt.is_some() {
                        counts[j] += 1;
                    }
                }
                (counts, scratch)
            },
        )
        .map(|(counts, _)| counts)
        .reduce(
            || vec![0u64; n_u],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b.iter()) {
                    *x += y;
                }
                a
            },
        )
}

/// One row of a horizon-refinement table.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonRow {
    pub horizon: f64,
    pub psi_hat: f64,
    pub std_err: f64,
}

/// Finite-horizon truncation diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonDiagnostic {
    pub rows: Vec<HorizonRow>,
    /// True when the last two estimates differ by less than one standard
    /// error of the final row; false with fewer than two horizons.
    pub converged: bool,
}

/// Tabulate `psi_hat(T)` over an increasing list of horizons with shared
/// paths: every path is simulated once to the largest horizon and its ruin
/// time thresholded per row, so ruin events are nested across horizons.
pub fn horizon_diagnostic(
    config: &ModelConfig,
    u: f64,
    i: usize,
    horizons: &[f64],
    n_paths: u64,
    master_seed: u64,
) -> Result<HorizonDiagnostic, SimError> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::BadHorizons);
    }
    if !(u > 0.0) {
        return Err(SimError::NonPositiveCapital(u));
    }
    let t_max = *horizons.last().unwrap();
    validate_common(config, i, t_max)?;
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let engine = Engine::new(config);
    let counts = (0..n_paths)
        .into_par_iter()
        .fold(
            || (vec![0u64; horizons.len()], Scratch::new()),
            |(mut counts, mut scratch), p| {
                let mut rng = path_rng(master_seed, p);
                engine.run(&[u], i, t_max, &mut rng, &mut scratch);
                if let Some(rt) = scratch.state.ruin_time[0] {
                    for (j, &t) in horizons.iter().enumerate() {
                        if rt <= t {
                            counts[j] += 1;
                        }
                    }
                }
                (counts, scratch)
            },
        )
        .map(|(counts, _)| counts)
        .reduce(
            || vec![0u64; horizons.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b.iter()) {
                    *x += y;
                }
                a
            },
        );
    let rows: Vec<HorizonRow> = horizons
        .iter()
        .zip(counts.iter())
        .map(|(&t, &c)| {
            let p = c as f64 / n_paths as f64;
            HorizonRow {
                horizon: t,
                psi_hat: p,
                std_err: binomial_std_err(p, n_paths),
            }
        })
        .collect();
    let converged = if rows.len() >= 2 {
        let last = &rows[rows.len() - 1];
        let prev = &rows[rows.len() - 2];
        let d = (last.psi_hat - prev.psi_hat).abs();
        d == 0.0 || d < last.std_err
    } else {
        false
    };
    Ok(HorizonDiagnostic { rows, converged })
}

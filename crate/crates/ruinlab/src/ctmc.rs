//! Regime process simulation: embedded chain, path sampling and the
//! compensator of the jump-counting measures.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::GeneratorMatrix;

/// Draw a uniform in the open interval (0,1); inverse-CDF exponential
/// sampling `-ln(u)/rate` then never sees 0 or 1.
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand::distr::Open01)
}

/// Exponential holding time by inverse CDF, reproducible across platforms.
pub fn exp_inverse_cdf<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    -open01(rng).ln() / rate
}

/// Realized regime trajectory on `[0, horizon]` as (jump time, state) pairs.
///
/// `jumps[0] = (0, initial)`; times are strictly increasing and consecutive
/// states differ. State lookup is right-continuous piecewise constant and
/// the final segment carries the last state up to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    jumps: Vec<(f64, usize)>,
    horizon: f64,
}

impl RegimePath {
    /// Build a path from explicit jumps; used by tests and deserialization.
    pub fn from_jumps(initial: usize, jumps: Vec<(f64, usize)>, horizon: f64) -> Self {
        let mut all = vec![(0.0, initial)];
        all.extend(jumps);
        debug_assert!(all.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 != w[0].1));
        RegimePath { jumps: all, horizon }
    }

    pub fn initial(&self) -> usize {
        self.jumps[0].1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Jump records including the artificial time-0 entry.
    pub fn jumps(&self) -> &[(f64, usize)] {
        &self.jumps
    }

    /// Right-continuous state at time `t` in `[0, horizon]`.
    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.jumps.partition_point(|&(tau, _)| tau <= t);
        self.jumps[idx.saturating_sub(1).min(self.jumps.len() - 1)].1
    }

    /// Constant-state segments `(start, end, state)` covering `[0, horizon]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let n = self.jumps.len();
        (0..n).map(move |j| {
            let (start, state) = self.jumps[j];
            let end = if j + 1 < n { self.jumps[j + 1].0 } else { self.horizon };
            (start, end, state)
        })
    }

    /// Debug CSV, one row per jump (`tau,state`). Not a stable format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,state\n");
        for (tau, state) in &self.jumps {
            out.push_str(&format!("{tau:.17e},{state}\n"));
        }
        out
    }
}

/// Embedded chain of the regime process: `P[k][l] = lambda_kl / lambda_k`
/// for `k != l`, `P[k][k] = 0`, with holding rates `lambda_k`.
///
/// For `K = 1` there is no embedded chain; the sentinel absorbing chain
/// `P = [[1]]`, `hold_rate = [0]` is returned instead.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedChain {
    pub p: Vec<Vec<f64>>,
    pub hold_rate: Vec<f64>,
}

impl EmbeddedChain {
    pub fn is_absorbing_sentinel(&self) -> bool {
        self.hold_rate.len() == 1
    }
}

/// Transition probabilities and holding rates of the embedded chain.
pub fn embedded_chain(generator: &GeneratorMatrix) -> EmbeddedChain {
    let k = generator.regimes();
    if k == 1 {
        return EmbeddedChain {
            p: vec![vec![1.0]],
            hold_rate: vec![0.0],
        };
    }
    let mut p = vec![vec![0.0; k]; k];
    let mut hold_rate = vec![0.0; k];
    for j in 0..k {
        hold_rate[j] = generator.hold_rate(j);
        for l in 0..k {
            if l != j {
                p[j][l] = generator.rate(j, l) / hold_rate[j];
            }
        }
    }
    EmbeddedChain { p, hold_rate }
}

/// Sample a regime trajectory started in state `i` and truncated at
/// `horizon`.
///
/// Per jump the stream is consumed in a fixed order: one Open01 uniform for
/// the holding time (inverse CDF), then one Open01 uniform for the embedded
/// transition. The jump attempt that overshoots the horizon still consumes
/// its holding-time draw.
pub fn sample_regime_path<R: Rng + ?Sized>(
    generator: &GeneratorMatrix,
    i: usize,
    horizon: f64,
    rng: &mut R,
) -> RegimePath {
    assert!(i < generator.regimes(), "initial state out of range");
    assert!(horizon > 0.0, "horizon must be positive");
    let chain = embedded_chain(generator);
    let mut jumps = Vec::new();
    sample_jumps_into(&chain, i, horizon, rng, &mut jumps);
    RegimePath { jumps, horizon }
}

/// Core sampler writing into a reusable buffer; consumes the stream exactly
/// as [`sample_regime_path`].
pub(crate) fn sample_jumps_into<R: Rng + ?Sized>(
    chain: &EmbeddedChain,
    i: usize,
    horizon: f64,
    rng: &mut R,
    jumps: &mut Vec<(f64, usize)>,
) {
    jumps.clear();
    jumps.push((0.0, i));
    let mut t = 0.0;
    let mut state = i;
    loop {
        let rate = chain.hold_rate[state];
        if rate <= 0.0 {
            break;
        }
        t += exp_inverse_cdf(rate, rng);
        if t >= horizon {
            break;
        }
        state = sample_row(&chain.p[state], rng);
        jumps.push((t, state));
    }
}

/// Draw from a probability row by cumulative scan of one uniform.
fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u = open01(rng);
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (l, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = l;
            acc += p;
            if u < acc {
                return l;
            }
        }
    }
    // Rounding can leave acc marginally below 1; land on the last mass point.
    last_positive
}

/// Count of jumps into state `k` on `(0, horizon]` together with the exact
/// integral of the compensator intensity `1{theta_s != k} lambda_{theta_s,k}`
/// along the path (piecewise-constant integrand).
pub fn compensator_counts(
    path: &RegimePath,
    generator: &GeneratorMatrix,
    k: usize,
) -> (u64, f64) {
    let mut n_k = 0u64;
    for &(tau, state) in path.jumps().iter().skip(1) {
        if state == k && tau > 0.0 {
            n_k += 1;
        }
    }
    let mut a_k = 0.0;
    for (start, end, state) in path.segments() {
        if state != k {
            a_k += generator.rate(state, k) * (end - start);
        }
    }
    (n_k, a_k)
}

/// Per-path random stream: a pure function of `(master_seed, path_index)`,
/// independent of execution order and worker count.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_state() -> GeneratorMatrix {
        GeneratorMatrix::new(vec![vec![-2.0, 2.0], vec![3.0, -3.0]]).unwrap()
    }

    #[test]
    fn embedded_chain_of_two_state_generator() {
        let chain = embedded_chain(&two_state());
        assert_eq!(chain.p, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(chain.hold_rate, vec![2.0, 3.0]);
    }

    #[test]
    fn embedded_chain_ratios_three_states() {
        let gen = GeneratorMatrix::new(vec![
            vec![-3.0, 1.0, 2.0],
            vec![1.0, -2.0, 1.0],
            vec![2.0, 1.0, -3.0],
        ])
        .unwrap();
        let chain = embedded_chain(&gen);
        assert!((chain.p[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((chain.p[0][2] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(chain.p[0][0], 0.0);
    }

    #[test]
    fn embedded_chain_single_state_is_sentinel() {
        let gen = GeneratorMatrix::new(vec![vec![0.0]]).unwrap();
        let chain = embedded_chain(&gen);
        assert!(chain.is_absorbing_sentinel());
        assert_eq!(chain.hold_rate, vec![0.0]);
    }

    #[test]
    fn embedded_rows_are_stochastic() {
        let gen = GeneratorMatrix::new(vec![
            vec![-3.0, 1.0, 2.0],
            vec![1.5, -2.5, 1.0],
            vec![2.0, 1.0, -3.0],
        ])
        .unwrap();
        let chain = embedded_chain(&gen);
        for (k, row) in chain.p.iter().enumerate() {
            assert_eq!(row[k], 0.0, "diagonal of embedded chain must be 0");
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {k} sums to {sum}");
        }
    }

    #[test]
    fn single_regime_path_has_no_jumps() {
        let gen = GeneratorMatrix::new(vec![vec![0.0]]).unwrap();
        let mut rng = path_rng(1, 0);
        let path = sample_regime_path(&gen, 0, 10.0, &mut rng);
        assert_eq!(path.jumps().len(), 1);
        assert_eq!(path.state_at(0.0), 0);
        assert_eq!(path.state_at(9.99), 0);
    }

    #[test]
    fn first_jump_from_state_zero_always_lands_in_one() {
        // P_01 = 1 for the two-state generator.
        let gen = two_state();
        for p in 0..200 {
            let mut rng = path_rng(3, p);
            let path = sample_regime_path(&gen, 0, 50.0, &mut rng);
            if path.jumps().len() > 1 {
                assert_eq!(path.jumps()[1].1, 1, "first jump must target state 1");
            }
        }
    }

    #[test]
    fn holding_time_mean_matches_rate_within_four_sigma() {
        let gen = two_state();
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for p in 0..n {
            let mut rng = path_rng(11, p);
            let t = exp_inverse_cdf(gen.hold_rate(0), &mut rng);
            sum += t;
            sumsq += t * t;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - 0.5).abs() < 4.0 * se,
            "holding-time mean {mean} deviates from 0.5 by more than 4 s.e. ({se})"
        );
    }

    #[test]
    fn embedded_transition_frequencies_within_four_sigma() {
        let gen = GeneratorMatrix::new(vec![
            vec![-3.0, 1.0, 2.0],
            vec![1.0, -2.0, 1.0],
            vec![2.0, 1.0, -3.0],
        ])
        .unwrap();
        let chain = embedded_chain(&gen);
        let n = 100_000u64;
        let mut counts = [[0u64; 3]; 3];
        let mut from = [0u64; 3];
        for p in 0..n {
            let mut rng = path_rng(17, p);
            let path = sample_regime_path(&gen, 0, 2.0, &mut rng);
            for w in path.jumps().windows(2) {
                counts[w[0].1][w[1].1] += 1;
                from[w[0].1] += 1;
            }
        }
        for k in 0..3 {
            for l in 0..3 {
                if k == l {
                    assert_eq!(counts[k][l], 0, "self-transition observed");
                    continue;
                }
                let n_k = from[k] as f64;
                let freq = counts[k][l] as f64 / n_k;
                let p = chain.p[k][l];
                let se = (p * (1.0 - p) / n_k).sqrt();
                assert!(
                    (freq - p).abs() < 4.0 * se,
                    "transition {k}->{l}: freq {freq} vs p {p} (4 s.e. = {})",
                    4.0 * se
                );
            }
        }
    }

    #[test]
    fn compensated_counts_have_zero_mean_within_four_sigma() {
        let gen = two_state();
        let n = 10_000u64;
        for k in 0..2 {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for p in 0..n {
                let mut rng = path_rng(23, p);
                let path = sample_regime_path(&gen, 0, 5.0, &mut rng);
                let (n_k, a_k) = compensator_counts(&path, &gen, k);
                let d = n_k as f64 - a_k;
                sum += d;
                sumsq += d * d;
            }
            let mean = sum / n as f64;
            let var = (sumsq / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(
                mean.abs() < 4.0 * se,
                "compensated count mean {mean} for state {k} exceeds 4 s.e. ({se})"
            );
        }
    }

    #[test]
    fn compensator_on_single_state_path_is_zero() {
        let gen = GeneratorMatrix::new(vec![vec![0.0]]).unwrap();
        let path = RegimePath::from_jumps(0, vec![], 10.0);
        assert_eq!(compensator_counts(&path, &gen, 0), (0, 0.0));
    }

    #[test]
    fn compensator_constant_path_integrates_rate_times_time() {
        // Path pinned to state 0 on [0, T]: A_1 = lambda_01 * T = 2T, N_1 = 0.
        let gen = two_state();
        let t_end = 3.5;
        let path = RegimePath::from_jumps(0, vec![], t_end);
        let (n_1, a_1) = compensator_counts(&path, &gen, 1);
        assert_eq!(n_1, 0);
        assert!((a_1 - 2.0 * t_end).abs() < 1e-12, "A_1 = {a_1}, expected {}", 2.0 * t_end);
    }

    #[test]
    fn sampling_is_bitwise_reproducible() {
        let gen = two_state();
        let a = sample_regime_path(&gen, 1, 25.0, &mut path_rng(99, 4));
        let b = sample_regime_path(&gen, 1, 25.0, &mut path_rng(99, 4));
        assert_eq!(a, b, "same (seed, stream) must give the identical path");
    }

    #[test]
    fn debug_csv_has_one_row_per_jump() {
        let path = RegimePath::from_jumps(0, vec![(1.5, 1)], 4.0);
        let csv = path.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("tau,state"));
        assert_eq!(lines.count(), 2);
        assert!(csv.ends_with(",1\n"));
    }

    #[test]
    fn state_lookup_is_right_continuous() {
        let path = RegimePath::from_jumps(0, vec![(1.0, 1), (2.5, 0)], 4.0);
        assert_eq!(path.state_at(0.999999), 0);
        assert_eq!(path.state_at(1.0), 1, "lookup at a jump time takes the new state");
        assert_eq!(path.state_at(2.5), 0);
        assert_eq!(path.state_at(4.0), 0);
    }

    proptest! {
        #[test]
        fn sampled_paths_satisfy_structural_invariants(
            seed in 0u64..1000,
            r01 in 0.1f64..5.0,
            r10 in 0.1f64..5.0,
            horizon in 0.5f64..20.0,
        ) {
            let gen = GeneratorMatrix::new(vec![vec![-r01, r01], vec![r10, -r10]]).unwrap();
            let path = sample_regime_path(&gen, 0, horizon, &mut path_rng(seed, 0));
            for w in path.jumps().windows(2) {
                prop_assert!(w[1].0 > w[0].0, "jump times must strictly increase");
                prop_assert!(w[1].1 != w[0].1, "consecutive states must differ");
            }
            prop_assert!(path.jumps().last().unwrap().0 < horizon);
            let total: f64 = path.segments().map(|(s, e, _)| e - s).sum();
            prop_assert!((total - horizon).abs() < 1e-9);
        }
    }
}

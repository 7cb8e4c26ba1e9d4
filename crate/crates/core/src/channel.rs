//! The noisy nanopore channel: i.i.d. geometric sample duplications of the
//! state levels followed by i.i.d. Gaussian noise.
//!
//! Besides the simulator this module holds the exhaustive likelihood oracle,
//! which sums over every segmentation explicitly. It is exponential in the
//! block size and only meant for cross-checking the trellis recursions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::Read;
use crate::decoder::lse_slice;
use crate::error::{Error, Result};
use crate::pore_model::{Base, PoreModel};

/// Upper bound on the number of segmentations the oracle will enumerate.
pub const MAX_SEGMENTATIONS: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NncParams {
    /// E[K], mean number of samples per state.
    pub mean_duration: f64,
    /// Noise standard deviation in normalized current units.
    pub sigma: f64,
}

impl NncParams {
    pub fn new(mean_duration: f64, sigma: f64) -> Result<Self> {
        if !(mean_duration.is_finite() && mean_duration >= 1.0) {
            return Err(Error::domain(format!(
                "mean duration must be finite and at least 1, got {mean_duration}"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::domain(format!(
                "sigma must be finite and positive, got {sigma}"
            )));
        }
        Ok(NncParams {
            mean_duration,
            sigma,
        })
    }

    /// Probability that a sample repeats the current state, 1 − 1/E[K].
    pub fn duplication_prob(&self) -> f64 {
        1.0 - 1.0 / self.mean_duration
    }

    /// ln(1 − 1/E[K]); −∞ when E[K] = 1.
    pub fn log_duplication(&self) -> f64 {
        if self.mean_duration == 1.0 {
            f64::NEG_INFINITY
        } else {
            (-1.0 / self.mean_duration).ln_1p()
        }
    }

    /// ln(1/E[K]).
    pub fn log_jump(&self) -> f64 {
        -self.mean_duration.ln()
    }

    /// 1 / (2σ²)
    pub fn precision_half(&self) -> f64 {
        0.5 / (self.sigma * self.sigma)
    }
}

/// Jump times t_1 < t_2 < … < t_m (1-based sample indices); t_ℓ is the last
/// sample of the ℓ-th state's run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Segmentation {
    jump_times: Vec<usize>,
}

impl Segmentation {
    pub fn new(jump_times: Vec<usize>) -> Result<Self> {
        let mut prev = 0;
        for &t in &jump_times {
            if t <= prev {
                return Err(Error::domain(format!(
                    "jump times must be strictly increasing and positive, got {t} after {prev}"
                )));
            }
            prev = t;
        }
        Ok(Segmentation { jump_times })
    }

    pub fn from_durations(durations: &[usize]) -> Result<Self> {
        let mut t = 0;
        let mut jumps = Vec::with_capacity(durations.len());
        for &k in durations {
            if k == 0 {
                return Err(Error::domain("durations must be at least 1"));
            }
            t += k;
            jumps.push(t);
        }
        Ok(Segmentation { jump_times: jumps })
    }

    pub fn jump_times(&self) -> &[usize] {
        &self.jump_times
    }

    pub fn into_jump_times(self) -> Vec<usize> {
        self.jump_times
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    /// t_m, the number of samples covered.
    pub fn total(&self) -> usize {
        self.jump_times.last().copied().unwrap_or(0)
    }

    pub fn durations(&self) -> Vec<usize> {
        let mut prev = 0;
        self.jump_times
            .iter()
            .map(|&t| {
                let k = t - prev;
                prev = t;
                k
            })
            .collect()
    }
}

/// Repeats `values[ℓ]` `durations[ℓ]` times, in order.
pub fn stretch<T: Clone>(values: &[T], durations: &[usize]) -> Result<Vec<T>> {
    if values.len() != durations.len() {
        return Err(Error::Length {
            expected: values.len(),
            got: durations.len(),
        });
    }
    if durations.contains(&0) {
        return Err(Error::domain("stretch durations must be at least 1"));
    }
    let mut out = Vec::with_capacity(durations.iter().sum());
    for (v, &k) in values.iter().zip(durations) {
        out.extend(std::iter::repeat_n(v.clone(), k));
    }
    Ok(out)
}

/// ‖y − stretch(x, seg)‖² without materializing the stretched vector.
pub fn stretched_sq_error(x: &[f64], y: &[f64], seg: &Segmentation) -> Result<f64> {
    if seg.len() != x.len() {
        return Err(Error::Length {
            expected: x.len(),
            got: seg.len(),
        });
    }
    if seg.total() != y.len() {
        return Err(Error::Length {
            expected: y.len(),
            got: seg.total(),
        });
    }
    let mut start = 0;
    let mut acc = 0.0;
    for (&level, &end) in x.iter().zip(seg.jump_times()) {
        for &v in &y[start..end] {
            let d = v - level;
            acc += d * d;
        }
        start = end;
    }
    Ok(acc)
}

/// I.i.d. geometric durations on {1, 2, …} with mean E[K], by inverse CDF.
pub fn sample_durations<R: Rng + ?Sized>(m: usize, params: &NncParams, rng: &mut R) -> Vec<usize> {
    let stay = params.duplication_prob();
    if stay == 0.0 {
        return vec![1; m];
    }
    let log_stay = stay.ln();
    (0..m)
        .map(|_| {
            // 1 − U lies in (0, 1], so the logarithm is finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            1 + (u.ln() / log_stay).floor() as usize
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRead {
    pub states: Vec<usize>,
    pub signal: Vec<f64>,
    pub truth: Segmentation,
    pub params: NncParams,
    /// State preceding `states[0]`, when known.
    pub initial_state: Option<usize>,
    /// Additive noise actually drawn; only kept when requested.
    pub noise: Option<Vec<f64>>,
}

/// Draws reads from the channel law for a fixed pore model.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    model: &'a PoreModel,
    params: NncParams,
    record_noise: bool,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a PoreModel, params: NncParams) -> Self {
        Simulator {
            model,
            params,
            record_noise: false,
        }
    }

    pub fn record_noise(mut self, yes: bool) -> Self {
        self.record_noise = yes;
        self
    }

    pub fn read<R: Rng + ?Sized>(&self, bases: &[Base], rng: &mut R) -> Result<SimulatedRead> {
        let states = self.model.space().states_from_bases(bases)?;
        self.states(states, None, rng)
    }

    /// Simulates a given state path; `initial_state` is carried through as
    /// side information and checked against the first state.
    pub fn states<R: Rng + ?Sized>(
        &self,
        states: Vec<usize>,
        initial_state: Option<usize>,
        rng: &mut R,
    ) -> Result<SimulatedRead> {
        if states.is_empty() {
            return Err(Error::domain("cannot simulate an empty state path"));
        }
        let space = self.model.space();
        if let Some(&bad) = states.iter().find(|&&s| s >= space.num_states()) {
            return Err(Error::domain(format!("state index {bad} out of range")));
        }
        if let Some(q) = initial_state {
            if !space.is_successor(q, states[0]) {
                return Err(Error::domain(
                    "first state is not a successor of the initial state",
                ));
            }
        }
        let durations = sample_durations(states.len(), &self.params, rng);
        let levels = self.model.levels_of(&states);
        let clean = stretch(&levels, &durations)?;
        let normal = Normal::new(0.0, self.params.sigma)
            .map_err(|e| Error::domain(format!("noise distribution: {e}")))?;
        let noise: Vec<f64> = (0..clean.len()).map(|_| normal.sample(rng)).collect();
        let signal = clean.iter().zip(&noise).map(|(x, n)| x + n).collect();
        Ok(SimulatedRead {
            states,
            signal,
            truth: Segmentation::from_durations(&durations)?,
            params: self.params,
            initial_state,
            noise: self.record_noise.then_some(noise),
        })
    }
}

/// Simulates `reads` reads of `bases` i.i.d. uniform bases each. Read i uses
/// its own generator seeded with `split_seed(seed, i)`, so the output does not
/// depend on the thread count.
pub fn simulate_dataset(
    model: &PoreModel,
    params: NncParams,
    reads: usize,
    bases: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<Read>> {
    if bases < model.tau() {
        return Err(Error::domain(format!(
            "reads of {bases} bases are shorter than tau = {}",
            model.tau()
        )));
    }
    let sim = Simulator::new(model, params);
    (0..reads)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, i as u64));
            let seq: Vec<Base> = (0..bases)
                .map(|_| Base::ALL[rng.random_range(0..4)])
                .collect();
            let r = sim.read(&seq, &mut rng)?;
            Ok(Read {
                read_id: format!("sim_{i:06}"),
                channel_id: (i % channels.max(1)) as i64 + 1,
                bases: seq,
                signal: r.signal,
                truth_jump_times: Some(r.truth.into_jump_times()),
                q_score: None,
            })
        })
        .collect()
}

/// Derives the seed of worker or item `index` from a master seed.
///
/// SplitMix64 finalizer over the pair; stable across platforms and releases.
pub fn split_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(master.wrapping_add(mix(index.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    acc
}

/// |𝒯_{m,total}| = C(total − 1, m − 1).
pub fn count_segmentations(m: usize, total: usize) -> u128 {
    if m == 0 || total < m {
        return 0;
    }
    binomial(total - 1, m - 1)
}

/// Every segmentation of `total` samples into `m` non-empty runs, in
/// lexicographic order of jump times.
pub fn enumerate_segmentations(m: usize, total: usize) -> Result<Vec<Segmentation>> {
    if m == 0 {
        return Err(Error::domain("need at least one state"));
    }
    if total < m {
        return Err(Error::Infeasible(format!(
            "no segmentation of {total} samples into {m} states"
        )));
    }
    let count = count_segmentations(m, total);
    if count > MAX_SEGMENTATIONS {
        return Err(Error::Capacity(format!(
            "{count} segmentations exceed the oracle limit of {MAX_SEGMENTATIONS}"
        )));
    }
    // Choose the m − 1 interior jump times from 1..total−1.
    let k = m - 1;
    let mut cuts: Vec<usize> = (1..=k).collect();
    let mut out = Vec::with_capacity(count as usize);
    loop {
        let mut jumps = cuts.clone();
        jumps.push(total);
        out.push(Segmentation { jump_times: jumps });
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if cuts[i] < total - 1 - (k - 1 - i) {
                cuts[i] += 1;
                for j in i + 1..k {
                    cuts[j] = cuts[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// log C′ = −(t/2) ln(2πσ²) + (t − m) ln(1 − 1/E[K]) + m ln(1/E[K]), with 0⁰ = 1.
pub fn log_c_prime(params: &NncParams, m: usize, total: usize) -> f64 {
    let gauss = -(total as f64) / 2.0 * (2.0 * std::f64::consts::PI * params.sigma.powi(2)).ln();
    let dups = if total == m {
        0.0
    } else {
        (total - m) as f64 * params.log_duplication()
    };
    gauss + dups + m as f64 * params.log_jump()
}

/// ln W(y | s, q) by explicit summation over every segmentation.
pub fn log_likelihood_bruteforce(
    params: &NncParams,
    levels: &[f64],
    signal: &[f64],
) -> Result<f64> {
    let m = levels.len();
    let total = signal.len();
    let segs = enumerate_segmentations(m, total)?;
    let log_c = log_c_prime(params, m, total);
    if log_c == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let scale = params.precision_half();
    let terms = segs
        .iter()
        .map(|seg| stretched_sq_error(levels, signal, seg).map(|d| -scale * d))
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_c + lse_slice(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pore_model::parse_bases;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn stretch_basics() {
        assert_eq!(stretch(&[1.5], &[1]).unwrap(), vec![1.5]);
        assert_eq!(stretch(&['a', 'b'], &[2, 1]).unwrap(), vec!['a', 'a', 'b']);
        assert!(stretch(&[1, 2], &[1, 0]).is_err());
        assert!(stretch(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn stretch_then_collapse_recovers_values() {
        let x = [3, 1, 4, 1, 5];
        let y = stretch(&x, &[2, 1, 3, 1, 4]).unwrap();
        let mut collapsed = y.clone();
        collapsed.dedup();
        assert_eq!(collapsed, x);
    }

    #[test]
    fn unit_mean_duration_never_duplicates() {
        let p = NncParams::new(1.0, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_durations(1000, &p, &mut rng).iter().all(|&k| k == 1));
    }

    #[test]
    fn geometric_durations_have_the_right_moments() {
        let e = 10.0;
        let m = 100_000;
        let p = NncParams::new(e, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = sample_durations(m, &p, &mut rng);
        let mean = k.iter().sum::<usize>() as f64 / m as f64;
        let se = (e * (e - 1.0) / m as f64).sqrt();
        assert!((mean - e).abs() < 5.0 * se, "mean {mean}");

        let ones = k.iter().filter(|&&v| v == 1).count() as f64 / m as f64;
        let p1 = 1.0 / e;
        let se1 = (p1 * (1.0 - p1) / m as f64).sqrt();
        assert!((ones - p1).abs() < 5.0 * se1, "P(K=1) {ones}");
    }

    #[test]
    fn noiseless_duplication_free_read_is_the_level_sequence() {
        let model = PoreModel::synthetic(3, 4).unwrap();
        let p = NncParams::new(1.0, 1e-300).unwrap();
        let bases = parse_bases("ACGTTGCAAC").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let read = Simulator::new(&model, p).read(&bases, &mut rng).unwrap();
        assert_eq!(read.signal, model.levels_of(&read.states));
        assert_eq!(read.truth.jump_times(), (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn simulation_is_seeded_and_self_consistent() {
        let model = PoreModel::synthetic(2, 4).unwrap();
        let p = NncParams::new(4.0, 0.5).unwrap();
        let bases = parse_bases("ACGTTGCAACGGATC").unwrap();
        let sim = Simulator::new(&model, p).record_noise(true);
        let a = sim.read(&bases, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sim.read(&bases, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);

        let clean = stretch(&model.levels_of(&a.states), &a.truth.durations()).unwrap();
        let noise = a.noise.as_ref().unwrap();
        let rebuilt: Vec<f64> = clean.iter().zip(noise).map(|(x, n)| x + n).collect();
        assert_eq!(rebuilt, a.signal);
        assert_eq!(a.truth.total(), a.signal.len());
        assert_eq!(a.truth.len(), a.states.len());
    }

    #[test]
    fn read_length_tracks_mean_duration() {
        let model = PoreModel::synthetic(2, 4).unwrap();
        let e = 10.0;
        let p = NncParams::new(e, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let states: Vec<usize> = (0..1000).map(|i| (i * 7) % 16).collect();
        let read = Simulator::new(&model, p)
            .states(states, None, &mut rng)
            .unwrap();
        let m = 1000.0;
        let ratio = read.signal.len() as f64 / m;
        let se = (e * (e - 1.0) / m).sqrt();
        assert!((ratio - e).abs() < 5.0 * se, "ratio {ratio}");
    }

    #[test]
    fn split_seeds_are_distinct() {
        let seeds: HashSet<u64> = (0..1000).map(|i| split_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(split_seed(42, 3), split_seed(42, 3));
        assert_ne!(split_seed(42, 3), split_seed(43, 3));
    }

    #[test]
    fn segmentation_counts() {
        assert_eq!(
            enumerate_segmentations(1, 5).unwrap(),
            vec![Segmentation::new(vec![5]).unwrap()]
        );
        assert_eq!(enumerate_segmentations(3, 5).unwrap().len(), 6);
        assert!(matches!(
            enumerate_segmentations(3, 2),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            enumerate_segmentations(20, 60),
            Err(Error::Capacity(_))
        ));
    }

    /// Compositions of `total` into `m` positive parts, by recursion on the
    /// first part.
    fn compositions(m: usize, total: usize) -> Vec<Vec<usize>> {
        if m == 1 {
            return vec![vec![total]];
        }
        let mut out = Vec::new();
        for first in 1..=total - (m - 1) {
            for mut rest in compositions(m - 1, total - first) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    #[test]
    fn enumeration_matches_composition_generator() {
        for (m, total) in [(4, 9), (2, 3), (3, 7), (5, 5)] {
            let got: HashSet<Vec<usize>> = enumerate_segmentations(m, total)
                .unwrap()
                .iter()
                .map(|s| s.durations())
                .collect();
            let want: HashSet<Vec<usize>> = compositions(m, total).into_iter().collect();
            assert_eq!(got, want);
            assert_eq!(got.len() as u128, count_segmentations(m, total));
        }
        assert_eq!(enumerate_segmentations(4, 9).unwrap().len(), 56);
    }

    #[test]
    fn bruteforce_with_forced_segmentation() {
        let p = NncParams::new(3.0, 0.7).unwrap();
        let x = [0.2, -1.0, 0.5];
        let y = [0.1, -0.8, 0.9];
        let d: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let want = log_c_prime(&p, 3, 3) - d / (2.0 * 0.49);
        let got = log_likelihood_bruteforce(&p, &x, &y).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_two_term_fixture() {
        // k ∈ {(1,2), (2,1)}: errors ‖(0,1,1) − y‖² = 1 and ‖(0,0,1) − y‖² = 0.
        let p = NncParams::new(2.0, 0.5).unwrap();
        let got = log_likelihood_bruteforce(&p, &[0.0, 1.0], &[0.0, 0.0, 1.0]).unwrap();
        let c = (2.0 * std::f64::consts::PI * 0.25).powf(-1.5) * 0.5 * 0.25;
        let want = (c * ((-1.0f64 / 0.5).exp() + 1.0)).ln();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn bruteforce_is_shift_invariant_but_order_sensitive() {
        let p = NncParams::new(2.5, 0.4).unwrap();
        let x = [0.3, -0.7, 1.1];
        let y = [0.2, 0.4, -0.9, -0.5, 1.0];
        let base = log_likelihood_bruteforce(&p, &x, &y).unwrap();
        let c = 3.25;
        let xs: Vec<f64> = x.iter().map(|v| v + c).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
        let shifted = log_likelihood_bruteforce(&p, &xs, &ys).unwrap();
        assert!((base - shifted).abs() < 1e-9);

        let mut swapped = y;
        swapped.swap(0, 4);
        let other = log_likelihood_bruteforce(&p, &x, &swapped).unwrap();
        assert!((base - other).abs() > 1e-3);
    }

    #[test]
    fn unit_mean_duration_forbids_extra_samples() {
        let p = NncParams::new(1.0, 0.5).unwrap();
        assert_eq!(
            log_likelihood_bruteforce(&p, &[0.0], &[0.0, 0.0]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(log_likelihood_bruteforce(&p, &[0.0], &[0.0])
            .unwrap()
            .is_finite());
    }

    #[test]
    fn params_validation() {
        assert!(NncParams::new(0.5, 1.0).is_err());
        assert!(NncParams::new(2.0, 0.0).is_err());
        assert!(NncParams::new(f64::NAN, 1.0).is_err());
        assert_eq!(
            NncParams::new(1.0, 1.0).unwrap().log_duplication(),
            f64::NEG_INFINITY
        );
    }
}

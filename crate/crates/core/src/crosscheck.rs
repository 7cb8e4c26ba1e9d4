//! Cross-checks of the trellis recursions and of DTW against exhaustive
//! enumeration on instances small enough to enumerate.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    enumerate_segmentations, log_c_prime, log_likelihood_bruteforce, split_seed,
    stretched_sq_error, NncParams,
};
use crate::decoder::{lse_slice, Decoder, TransitionWeights};
use crate::dtw::dtw_align;
use crate::error::Result;
use crate::pore_model::{PoreModel, StateModel, StateSpace};

/// Every state path of length `m` that starts with a successor of `q`.
pub fn admissible_paths(space: &StateSpace, q: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|p| {
                let last = p.last().copied().unwrap_or(q);
                space.successors(last).into_iter().map(move |s| {
                    let mut next = p.clone();
                    next.push(s);
                    next
                })
            })
            .collect();
    }
    out
}

/// Oracle value of the forward recursion for one path: ln W(y|s,q) with the
/// constant C′ removed and the mode's transition weights added.
fn oracle_path_term(
    model: &PoreModel,
    params: &NncParams,
    weights: TransitionWeights,
    path: &[usize],
    y: &[f64],
) -> Result<f64> {
    let m = path.len();
    Ok(
        log_likelihood_bruteforce(params, &model.levels_of(path), y)?
            - log_c_prime(params, m, y.len())
            + weights.path_log_weight(model.log_edge_prob(), params, m, y.len()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderCheck {
    pub tau: usize,
    pub m: usize,
    pub t: usize,
    pub sigma: f64,
    pub mean_duration: f64,
    pub weights: TransitionWeights,
    pub forward_error: f64,
    pub conditional_error: f64,
}

impl DecoderCheck {
    pub fn max_error(&self) -> f64 {
        self.forward_error.max(self.conditional_error)
    }
}

/// Draws one random small instance and compares both recursions to the
/// exhaustive sum.
pub fn check_decoder_fixture<R: Rng>(rng: &mut R) -> Result<DecoderCheck> {
    let tau = rng.random_range(1..=2);
    let m = rng.random_range(1..=4);
    let t = rng.random_range(m..=8);
    let sigma = *[0.3, 0.5, 1.0].choose(rng).expect("non-empty");
    let mean_duration = *[1.5, 2.0, 5.0].choose(rng).expect("non-empty");
    let weights = if rng.random_bool(0.5) {
        TransitionWeights::Full
    } else {
        TransitionWeights::Uniform
    };
    let model = PoreModel::synthetic(tau, rng.random())?;
    let params = NncParams::new(mean_duration, sigma)?;
    let q = rng.random_range(0..model.num_states());
    let y: Vec<f64> = (0..t).map(|_| rng.random_range(-2.5..2.5)).collect();
    let paths = admissible_paths(model.space(), q, m);
    let truth = paths.choose(rng).expect("non-empty").clone();

    let terms = paths
        .iter()
        .map(|p| oracle_path_term(&model, &params, weights, p, &y))
        .collect::<Result<Vec<f64>>>()?;
    let mut dec = Decoder::new(weights);
    let fwd = dec.forward(&model, &params, q, &y, m)?;
    let cond = dec.conditional_forward(&model, &params, &truth, &y)?;
    let cond_oracle = oracle_path_term(&model, &params, weights, &truth, &y)?;
    Ok(DecoderCheck {
        tau,
        m,
        t,
        sigma,
        mean_duration,
        weights,
        forward_error: (fwd - lse_slice(&terms)).abs(),
        conditional_error: (cond - cond_oracle).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwCheck {
    pub m: usize,
    pub t: usize,
    pub distance: f64,
    pub exhaustive_minimum: f64,
    /// |error(backtrace) − distance| / max(distance, 1e-300).
    pub backtrace_relative_error: f64,
}

impl DtwCheck {
    pub fn exact(&self) -> bool {
        self.distance == self.exhaustive_minimum
    }
}

pub fn check_dtw_fixture<R: Rng>(rng: &mut R) -> Result<DtwCheck> {
    let m = rng.random_range(1..=5);
    let t = rng.random_range(m..=10);
    let x: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..t).map(|_| rng.random_range(-2.5..2.5)).collect();
    let res = dtw_align(&x, &y)?;
    let minimum = enumerate_segmentations(m, t)?
        .iter()
        .map(|s| stretched_sq_error(&x, &y, s))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let back = stretched_sq_error(&x, &y, &res.segmentation)?;
    Ok(DtwCheck {
        m,
        t,
        distance: res.distance,
        exhaustive_minimum: minimum,
        backtrace_relative_error: (back - res.distance).abs() / res.distance.max(1e-300),
    })
}

/// Σ over every admissible path of exp(log-APP).
pub fn posterior_mass(
    model: &PoreModel,
    params: &NncParams,
    weights: TransitionWeights,
    q: usize,
    y: &[f64],
    m: usize,
) -> Result<f64> {
    let mut dec = Decoder::new(weights);
    let mut total = 0.0;
    for p in admissible_paths(model.space(), q, m) {
        total += dec.log_app(model, params, &p, y, q)?.log_app.exp();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub fixtures: usize,
    pub decoder_max_error: f64,
    pub decoder_failures: usize,
    pub dtw_inexact: usize,
    pub dtw_max_backtrace_error: f64,
    pub posterior_max_error: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.decoder_failures == 0
            && self.dtw_inexact == 0
            && self.dtw_max_backtrace_error <= self.tolerance
            && self.posterior_max_error <= self.tolerance
    }
}

/// Runs `fixtures` decoder and DTW fixtures plus posterior-mass checks for
/// τ = 1, m ≤ 3. Fixture i draws from its own generator.
pub fn run_oracle(fixtures: usize, seed: u64, tolerance: f64) -> Result<OracleReport> {
    let mut decoder_max_error: f64 = 0.0;
    let mut decoder_failures = 0;
    let mut dtw_inexact = 0;
    let mut dtw_max_backtrace_error: f64 = 0.0;
    for i in 0..fixtures {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, i as u64));
        let d = check_decoder_fixture(&mut rng)?;
        decoder_max_error = decoder_max_error.max(d.max_error());
        if d.max_error() > tolerance {
            decoder_failures += 1;
        }
        let w = check_dtw_fixture(&mut rng)?;
        if !w.exact() {
            dtw_inexact += 1;
        }
        dtw_max_backtrace_error = dtw_max_backtrace_error.max(w.backtrace_relative_error);
    }
    let mut posterior_max_error: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, u64::MAX));
    let model = PoreModel::synthetic(1, rng.random())?;
    for m in 1..=3 {
        for weights in [TransitionWeights::Full, TransitionWeights::Uniform] {
            let params = NncParams::new(2.0, 0.5)?;
            let t = rng.random_range(m..=m + 4);
            let y: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q = rng.random_range(0..4);
            let mass = posterior_mass(&model, &params, weights, q, &y, m)?;
            posterior_max_error = posterior_max_error.max((mass - 1.0).abs());
        }
    }
    Ok(OracleReport {
        seed,
        fixtures,
        decoder_max_error,
        decoder_failures,
        dtw_inexact,
        dtw_max_backtrace_error,
        posterior_max_error,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_enumeration_counts() {
        let space = StateSpace::new(2).unwrap();
        for m in 0..4 {
            assert_eq!(admissible_paths(&space, 5, m).len(), 4usize.pow(m as u32));
        }
        for p in admissible_paths(&space, 5, 3) {
            assert!(space.is_successor(5, p[0]));
            assert!(p.windows(2).all(|w| space.is_successor(w[0], w[1])));
        }
    }

    #[test]
    fn small_oracle_run_passes() {
        let r = run_oracle(10, 3, 1e-9).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}

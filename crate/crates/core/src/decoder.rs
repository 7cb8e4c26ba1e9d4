//! Forward and conditional forward recursions over the duplication trellis.
//!
//! A trellis node is a pair (segment index ℓ, state s). A sample either
//! duplicates the current node or jumps to segment ℓ+1 along a state-graph
//! edge, and every sample multiplies in the Gaussian likelihood of its level.
//! Both recursions run in the log domain and keep only two rows over the
//! segment index: the forward pass holds O(t·|Ω|) values, the conditional
//! pass O(t).
//!
//! The constant (2πσ²)^(−t/2) is never included. With
//! [`TransitionWeights::Full`] the jump weight p(s|s′)/E[K] and the
//! duplication weight 1 − 1/E[K] are applied inside the recursion; with
//! [`TransitionWeights::Uniform`] they are dropped, which is the plain
//! proportional form. Every admissible path carries exactly m jumps and
//! t − m duplications, so the two modes differ by a constant that cancels in
//! the log-APP.

use serde::{Deserialize, Serialize};

use crate::channel::NncParams;
use crate::error::{Error, Result};
use crate::pore_model::StateModel;

/// ln(eᵃ + eᵇ), exact for −∞ operands.
#[inline]
pub fn lse(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// ln Σ eᵛ over a slice, reduced in slice order.
pub fn lse_slice(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionWeights {
    /// Jump weight p(s|s′)/E[K] and duplication weight 1 − 1/E[K] retained.
    #[default]
    Full,
    /// Transition weights dropped entirely.
    Uniform,
}

impl TransitionWeights {
    /// (log jump weight, log duplication weight) for a graph whose edges carry
    /// log-probability `log_edge`.
    pub fn log_weights(self, log_edge: f64, params: &NncParams) -> (f64, f64) {
        match self {
            TransitionWeights::Full => (log_edge + params.log_jump(), params.log_duplication()),
            TransitionWeights::Uniform => (0.0, 0.0),
        }
    }

    /// Total log transition weight of any admissible path with `m` segments
    /// over `total` samples.
    pub fn path_log_weight(self, log_edge: f64, params: &NncParams, m: usize, total: usize) -> f64 {
        let (jump, dup) = self.log_weights(log_edge, params);
        let dups = if total == m {
            0.0
        } else {
            (total - m) as f64 * dup
        };
        m as f64 * jump + dups
    }
}

impl std::str::FromStr for TransitionWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TransitionWeights::Full),
            "uniform" => Ok(TransitionWeights::Uniform),
            other => Err(Error::input(format!(
                "unknown transition weights {other:?} (expected full or uniform)"
            ))),
        }
    }
}

impl std::fmt::Display for TransitionWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransitionWeights::Full => "full",
            TransitionWeights::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutput {
    pub log_numerator: f64,
    pub log_denominator: f64,
    /// ln V(s | y, q)
    pub log_app: f64,
}

/// Reusable decoder; owns the rolling buffers so repeated calls on blocks of
/// similar size do not reallocate.
#[derive(Debug, Default)]
pub struct Decoder {
    weights: TransitionWeights,
    emissions: Vec<f64>,
    emission_offsets: Vec<f64>,
    row_prev: Vec<f64>,
    row_cur: Vec<f64>,
    offsets_prev: Vec<f64>,
    offsets_cur: Vec<f64>,
    class_row: Vec<f64>,
    peak_cells: usize,
}

fn check_signal(y: &[f64], m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::domain("need at least one state"));
    }
    if y.len() < m {
        return Err(Error::Infeasible(format!(
            "{} samples cannot cover {m} states",
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("sample {i} is not finite")));
    }
    Ok(())
}

fn resize_fill(buf: &mut Vec<f64>, len: usize) {
    buf.clear();
    buf.resize(len, f64::NEG_INFINITY);
}

fn resize_zero(buf: &mut Vec<f64>, len: usize) {
    buf.clear();
    buf.resize(len, 0.0);
}

/// Scales `cells` so their maximum lies in [1, 2) and returns `log_offset`
/// adjusted to match. Scaling by a power of two is exact. An all-zero group
/// gets offset −∞.
fn renormalize(cells: &mut [f64], log_offset: f64) -> f64 {
    let max = cells.iter().fold(0.0f64, |a, &b| a.max(b));
    if max == 0.0 || log_offset == f64::NEG_INFINITY {
        cells.fill(0.0);
        return f64::NEG_INFINITY;
    }
    let exp = ((max.to_bits() >> 52) & 0x7ff) as i64 - 1023;
    let factor = f64::from_bits(((1023 - exp) as u64) << 52);
    for c in cells.iter_mut() {
        *c *= factor;
    }
    log_offset + exp as f64 * std::f64::consts::LN_2
}

impl Decoder {
    pub fn new(weights: TransitionWeights) -> Self {
        Decoder {
            weights,
            ..Default::default()
        }
    }

    pub fn weights(&self) -> TransitionWeights {
        self.weights
    }

    /// Largest number of f64 cells held by the buffers so far.
    pub fn peak_cells(&self) -> usize {
        self.peak_cells
    }

    fn note_cells(&mut self) {
        let cells = self.emissions.capacity()
            + self.emission_offsets.capacity()
            + self.offsets_prev.capacity()
            + self.offsets_cur.capacity()
            + self.row_prev.capacity()
            + self.row_cur.capacity()
            + self.class_row.capacity();
        self.peak_cells = self.peak_cells.max(cells);
    }

    /// ln Σ_s α_t(m, s): the APP denominator, constants dropped.
    ///
    /// Cells are held in linear scale with one log offset per (row, sample)
    /// group, renormalized by exact powers of two. A cell is lost only if it
    /// falls below 2^-1074 of the largest cell in its group.
    pub fn forward<M: StateModel>(
        &mut self,
        model: &M,
        params: &NncParams,
        q: usize,
        y: &[f64],
        m: usize,
    ) -> Result<f64> {
        check_signal(y, m)?;
        let n_states = model.num_states();
        if q >= n_states {
            return Err(Error::domain(format!("initial state {q} out of range")));
        }
        let n_classes = model.num_classes();
        let t_len = y.len();
        let (log_jump, log_dup) = self.weights.log_weights(model.log_edge_prob(), params);
        let scale = params.precision_half();
        let levels = model.levels();

        // Emissions relative to the best state at each sample; row n−1 holds
        // sample n.
        self.emissions.clear();
        self.emissions.reserve(t_len * n_states);
        self.emission_offsets.clear();
        for &v in y {
            let start = self.emissions.len();
            let mut best = f64::NEG_INFINITY;
            self.emissions.extend(levels.iter().map(|&f| {
                let d = v - f;
                let e = -scale * d * d;
                best = best.max(e);
                e
            }));
            for e in &mut self.emissions[start..] {
                *e = (*e - best).exp();
            }
            self.emission_offsets.push(best);
        }
        let width = (t_len + 1) * n_states;
        resize_zero(&mut self.row_prev, width);
        resize_zero(&mut self.row_cur, width);
        resize_fill(&mut self.offsets_prev, t_len + 1);
        resize_fill(&mut self.offsets_cur, t_len + 1);
        resize_zero(&mut self.class_row, n_classes);
        self.note_cells();

        // Row ℓ is only needed for ℓ ≤ n ≤ t − (m − ℓ).
        let n_max = |l: usize| t_len - (m - l);
        let em = &self.emissions;
        let em_off = &self.emission_offsets;

        {
            let cur = &mut self.row_cur;
            let off = &mut self.offsets_cur;
            let out = &mut cur[n_states..2 * n_states];
            for s in model.successors(q) {
                out[s] = em[s];
            }
            off[1] = renormalize(out, log_jump + em_off[0]);
            for n in 2..=n_max(1) {
                let (done, rest) = cur.split_at_mut(n * n_states);
                let before = &done[(n - 1) * n_states..];
                let out = &mut rest[..n_states];
                let em_n = &em[(n - 1) * n_states..n * n_states];
                for s in 0..n_states {
                    out[s] = em_n[s] * before[s];
                }
                off[n] = renormalize(out, off[n - 1] + log_dup + em_off[n - 1]);
            }
        }

        for l in 2..=m {
            std::mem::swap(&mut self.row_prev, &mut self.row_cur);
            std::mem::swap(&mut self.offsets_prev, &mut self.offsets_cur);
            let prev = &self.row_prev;
            let off_prev = &self.offsets_prev;
            let cur = &mut self.row_cur;
            let off = &mut self.offsets_cur;
            let class_row = &mut self.class_row;

            cur[(l - 1) * n_states..l * n_states].fill(0.0);
            off[l - 1] = f64::NEG_INFINITY;
            for n in l..=n_max(l) {
                let stay_off = off[n - 1] + log_dup;
                let jump_off = off_prev[n - 1] + log_jump;
                let top = stay_off.max(jump_off);
                let (done, rest) = cur.split_at_mut(n * n_states);
                let out = &mut rest[..n_states];
                if top == f64::NEG_INFINITY {
                    out.fill(0.0);
                    off[n] = top;
                    continue;
                }
                let stay_w = (stay_off - top).exp();
                let jump_w = (jump_off - top).exp();
                let before = &done[(n - 1) * n_states..];
                let prev_n = &prev[(n - 1) * n_states..n * n_states];
                for (c, sum) in class_row.iter_mut().enumerate() {
                    *sum = jump_w * model.class_members(c).map(|p| prev_n[p]).sum::<f64>();
                }
                let em_n = &em[(n - 1) * n_states..n * n_states];
                for s in 0..n_states {
                    out[s] = em_n[s] * (stay_w * before[s] + class_row[model.class_of(s)]);
                }
                off[n] = renormalize(out, top + em_off[n - 1]);
            }
        }

        let total: f64 = self.row_cur[t_len * n_states..].iter().sum();
        Ok(self.offsets_cur[t_len] + total.ln())
    }

    /// Same value as [`Decoder::forward`], computed with a log-sum-exp per
    /// cell. Several times slower; kept as a reference.
    pub fn forward_log_domain<M: StateModel>(
        &mut self,
        model: &M,
        params: &NncParams,
        q: usize,
        y: &[f64],
        m: usize,
    ) -> Result<f64> {
        check_signal(y, m)?;
        let n_states = model.num_states();
        if q >= n_states {
            return Err(Error::domain(format!("initial state {q} out of range")));
        }
        let n_classes = model.num_classes();
        let t_len = y.len();
        let (log_jump, log_dup) = self.weights.log_weights(model.log_edge_prob(), params);
        let scale = params.precision_half();
        let levels = model.levels();

        // Emission exponents, row n−1 holds sample n.
        self.emissions.clear();
        self.emissions.reserve(t_len * n_states);
        for &v in y {
            self.emissions.extend(levels.iter().map(|&f| {
                let d = v - f;
                -scale * d * d
            }));
        }
        let width = (t_len + 1) * n_states;
        resize_fill(&mut self.row_prev, width);
        resize_fill(&mut self.row_cur, width);
        resize_fill(&mut self.class_row, (t_len + 1) * n_classes);
        self.note_cells();

        // Row ℓ is only needed for ℓ ≤ n ≤ t − (m − ℓ).
        let n_max = |l: usize| t_len - (m - l);
        let em = &self.emissions;
        let cur = &mut self.row_cur;
        for s in model.successors(q) {
            let mut acc = log_jump + em[s];
            cur[n_states + s] = acc;
            for n in 2..=n_max(1) {
                acc += log_dup + em[(n - 1) * n_states + s];
                cur[n * n_states + s] = acc;
            }
        }

        for l in 2..=m {
            std::mem::swap(&mut self.row_prev, &mut self.row_cur);
            let prev = &self.row_prev;
            let cur = &mut self.row_cur;
            let class_row = &mut self.class_row;

            for n in (l - 1)..=n_max(l - 1) {
                let prev_n = &prev[n * n_states..(n + 1) * n_states];
                let class_n = &mut class_row[n * n_classes..(n + 1) * n_classes];
                for (c, out) in class_n.iter_mut().enumerate() {
                    let mut max = f64::NEG_INFINITY;
                    for p in model.class_members(c) {
                        max = max.max(prev_n[p]);
                    }
                    *out = if max == f64::NEG_INFINITY {
                        max
                    } else {
                        let sum: f64 = model
                            .class_members(c)
                            .map(|p| (prev_n[p] - max).exp())
                            .sum();
                        max + sum.ln() + log_jump
                    };
                }
            }

            cur[(l - 1) * n_states..l * n_states].fill(f64::NEG_INFINITY);
            for n in l..=n_max(l) {
                let (done, rest) = cur.split_at_mut(n * n_states);
                let before = &done[(n - 1) * n_states..];
                let out = &mut rest[..n_states];
                let em_n = &em[(n - 1) * n_states..n * n_states];
                let class_before = &class_row[(n - 1) * n_classes..n * n_classes];
                for s in 0..n_states {
                    let stay = before[s] + log_dup;
                    let jump = class_before[model.class_of(s)];
                    out[s] = lse(stay, jump) + em_n[s];
                }
            }
        }

        let last = &self.row_cur[t_len * n_states..];
        Ok(lse_slice(last))
    }

    /// ln α_t(m): the APP numerator for a fixed state path, constants dropped.
    pub fn conditional_forward<M: StateModel>(
        &mut self,
        model: &M,
        params: &NncParams,
        states: &[usize],
        y: &[f64],
    ) -> Result<f64> {
        let m = states.len();
        check_signal(y, m)?;
        let n_states = model.num_states();
        if let Some(&bad) = states.iter().find(|&&s| s >= n_states) {
            return Err(Error::domain(format!("state {bad} out of range")));
        }
        if let Some(w) = states.windows(2).find(|w| !model.has_edge(w[0], w[1])) {
            return Err(Error::domain(format!(
                "states {} -> {} is not an edge of the state graph",
                w[0], w[1]
            )));
        }
        let t_len = y.len();
        let (log_jump, log_dup) = self.weights.log_weights(model.log_edge_prob(), params);
        let scale = params.precision_half();
        let levels = model.levels();
        let emit = |n: usize, s: usize| {
            let d = y[n - 1] - levels[s];
            -scale * d * d
        };

        resize_fill(&mut self.row_prev, t_len + 1);
        resize_fill(&mut self.row_cur, t_len + 1);
        self.note_cells();
        let n_max = |l: usize| t_len - (m - l);

        let cur = &mut self.row_cur;
        let mut acc = log_jump + emit(1, states[0]);
        cur[1] = acc;
        for (n, cell) in cur.iter_mut().enumerate().take(n_max(1) + 1).skip(2) {
            acc += log_dup + emit(n, states[0]);
            *cell = acc;
        }

        for l in 2..=m {
            std::mem::swap(&mut self.row_prev, &mut self.row_cur);
            let prev = &self.row_prev;
            let cur = &mut self.row_cur;
            let s = states[l - 1];
            cur[l - 1] = f64::NEG_INFINITY;
            for n in l..=n_max(l) {
                cur[n] = lse(cur[n - 1] + log_dup, prev[n - 1] + log_jump) + emit(n, s);
            }
        }
        Ok(self.row_cur[t_len])
    }

    /// ln V(s | y, q) = conditional forward − forward.
    pub fn log_app<M: StateModel>(
        &mut self,
        model: &M,
        params: &NncParams,
        states: &[usize],
        y: &[f64],
        q: usize,
    ) -> Result<DecodeOutput> {
        let first = *states
            .first()
            .ok_or_else(|| Error::domain("need at least one state"))?;
        if q >= model.num_states() || !model.has_edge(q, first) {
            return Err(Error::domain(
                "first state is not a successor of the initial state",
            ));
        }
        let log_numerator = self.conditional_forward(model, params, states, y)?;
        let log_denominator = self.forward(model, params, q, y, states.len())?;
        if log_denominator == f64::NEG_INFINITY {
            return Err(Error::Infeasible(
                "no admissible path explains the signal under these parameters".into(),
            ));
        }
        Ok(DecodeOutput {
            log_numerator,
            log_denominator,
            log_app: log_numerator - log_denominator,
        })
    }
}

pub fn forward<M: StateModel>(
    model: &M,
    params: &NncParams,
    weights: TransitionWeights,
    q: usize,
    y: &[f64],
    m: usize,
) -> Result<f64> {
    Decoder::new(weights).forward(model, params, q, y, m)
}

pub fn conditional_forward<M: StateModel>(
    model: &M,
    params: &NncParams,
    weights: TransitionWeights,
    states: &[usize],
    y: &[f64],
) -> Result<f64> {
    Decoder::new(weights).conditional_forward(model, params, states, y)
}

pub fn log_app<M: StateModel>(
    model: &M,
    params: &NncParams,
    weights: TransitionWeights,
    states: &[usize],
    y: &[f64],
    q: usize,
) -> Result<DecodeOutput> {
    Decoder::new(weights).log_app(model, params, states, y, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{log_c_prime, log_likelihood_bruteforce, Simulator};
    use crate::dtw::dtw_align;
    use crate::pore_model::PoreModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const MODES: [TransitionWeights; 2] = [TransitionWeights::Full, TransitionWeights::Uniform];

    /// Four states on a directed cycle: each state has exactly one successor.
    struct Cycle {
        levels: Vec<f64>,
    }

    impl StateModel for Cycle {
        fn num_states(&self) -> usize {
            4
        }
        fn levels(&self) -> &[f64] {
            &self.levels
        }
        fn log_edge_prob(&self) -> f64 {
            0.0
        }
        fn successors(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
            std::iter::once((s + 1) % 4)
        }
        fn num_classes(&self) -> usize {
            4
        }
        fn class_of(&self, s: usize) -> usize {
            s
        }
        fn class_members(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
            std::iter::once((c + 3) % 4)
        }
        fn has_edge(&self, from: usize, to: usize) -> bool {
            (from + 1) % 4 == to
        }
    }

    /// All state paths of length m starting from a successor of q.
    fn paths(model: &PoreModel, q: usize, m: usize) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = model
            .space()
            .successors(q)
            .iter()
            .map(|&s| vec![s])
            .collect();
        for _ in 1..m {
            out = out
                .into_iter()
                .flat_map(|p| {
                    let last = *p.last().unwrap();
                    model.space().successors(last).into_iter().map(move |s| {
                        let mut next = p.clone();
                        next.push(s);
                        next
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn lse_identities() {
        assert_eq!(lse(f64::NEG_INFINITY, 1.5), 1.5);
        assert_eq!(lse(-3.0, f64::NEG_INFINITY), -3.0);
        assert_eq!(lse(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert!((lse(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = rng.random_range(-20.0..20.0);
            let b = rng.random_range(-20.0..20.0);
            assert_eq!(lse(a, b), lse(b, a));
            let direct = (f64::exp(a) + f64::exp(b)).ln();
            assert!((lse(a, b) - direct).abs() < 1e-12);
        }
        assert_eq!(lse_slice(&[]), f64::NEG_INFINITY);
        assert!((lse_slice(&[0.0, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_state_forward_is_initialization_only() {
        let model = PoreModel::synthetic(2, 1).unwrap();
        let params = NncParams::new(3.0, 0.6).unwrap();
        let y = [0.3, -0.2, 0.8, 0.1];
        let q = 6;
        let got = forward(&model, &params, TransitionWeights::Uniform, q, &y, 1).unwrap();
        let terms: Vec<f64> = model
            .space()
            .successors(q)
            .iter()
            .map(|&s| -y.iter().map(|v| (v - model.level(s)).powi(2)).sum::<f64>() / (2.0 * 0.36))
            .collect();
        assert!((got - lse_slice(&terms)).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_bruteforce_on_tau_one() {
        let model = PoreModel::synthetic(1, 5).unwrap();
        let params = NncParams::new(2.0, 0.5).unwrap();
        let y = [0.4, -1.1, 0.9];
        for weights in MODES {
            let got = forward(&model, &params, weights, 0, &y, 2).unwrap();
            let log_edge = model.log_edge_prob();
            let terms: Vec<f64> = paths(&model, 0, 2)
                .iter()
                .map(|p| {
                    log_likelihood_bruteforce(&params, &model.levels_of(p), &y).unwrap()
                        - log_c_prime(&params, 2, 3)
                        + weights.path_log_weight(log_edge, &params, 2, 3)
                })
                .collect();
            assert_eq!(terms.len(), 16);
            assert!((got - lse_slice(&terms)).abs() < 1e-12, "{weights}");
        }
    }

    #[test]
    fn conditional_forward_forced_path() {
        let model = PoreModel::synthetic(2, 2).unwrap();
        let params = NncParams::new(4.0, 0.3).unwrap();
        let states = model
            .space()
            .states_from_bases(&crate::pore_model::parse_bases("ACGTA").unwrap())
            .unwrap();
        let y: Vec<f64> = model.levels_of(&states).iter().map(|v| v + 0.05).collect();
        let got =
            conditional_forward(&model, &params, TransitionWeights::Uniform, &states, &y).unwrap();
        let want = -(states.len() as f64) * 0.05f64.powi(2) / (2.0 * 0.09);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn conditional_forward_two_segmentation_fixture() {
        // Levels (0, 1) on τ=1 states A and T; y = (0, 0, 1).
        let model = PoreModel::new(
            crate::pore_model::StateSpace::new(1).unwrap(),
            vec![0.0, 1.0, 5.0, -5.0],
        )
        .unwrap();
        let params = NncParams::new(2.0, 0.5).unwrap();
        let got = conditional_forward(
            &model,
            &params,
            TransitionWeights::Uniform,
            &[0, 1],
            &[0.0, 0.0, 1.0],
        )
        .unwrap();
        let want = lse(-1.0 / 0.5, 0.0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn conditional_forward_tends_to_dtw_distance() {
        let model = PoreModel::synthetic(3, 8).unwrap();
        let params_gen = NncParams::new(3.0, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let states: Vec<usize> = {
            let mut s = vec![rng.random_range(0..64)];
            for _ in 1..12 {
                let next = model.space().successors(*s.last().unwrap())[rng.random_range(0..4)];
                s.push(next);
            }
            s
        };
        let read = Simulator::new(&model, params_gen)
            .states(states.clone(), None, &mut rng)
            .unwrap();
        let sigma = 1e-3;
        let params = NncParams::new(3.0, sigma).unwrap();
        let cf = conditional_forward(
            &model,
            &params,
            TransitionWeights::Uniform,
            &states,
            &read.signal,
        )
        .unwrap();
        let dtw = dtw_align(&model.levels_of(&states), &read.signal).unwrap();
        assert!((-2.0 * sigma * sigma * cf - dtw.distance).abs() < 1e-3);
    }

    #[test]
    fn log_app_is_zero_with_a_single_admissible_path() {
        let model = Cycle {
            levels: vec![0.0, 1.0, -1.0, 0.5],
        };
        let params = NncParams::new(2.0, 0.4).unwrap();
        let y = [0.1, 0.9, 1.2, -0.8, 0.4];
        for weights in MODES {
            let out = log_app(&model, &params, weights, &[1, 2, 3], &y, 0).unwrap();
            assert!(out.log_app.abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn posterior_sums_to_one_for_tau_one() {
        let model = PoreModel::synthetic(1, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for m in 1..=3 {
            for weights in MODES {
                let params = NncParams::new(2.0, 0.5).unwrap();
                let y: Vec<f64> = (0..m + 3).map(|_| rng.random_range(-1.5..1.5)).collect();
                let q = 2;
                let mut dec = Decoder::new(weights);
                let total: f64 = paths(&model, q, m)
                    .iter()
                    .map(|p| {
                        dec.log_app(&model, &params, p, &y, q)
                            .unwrap()
                            .log_app
                            .exp()
                    })
                    .sum();
                assert!((total - 1.0).abs() < 1e-9, "m={m} {weights}: {total}");
            }
        }
    }

    #[test]
    fn near_noiseless_posterior_concentrates() {
        let model = PoreModel::synthetic(2, 31).unwrap();
        let params = NncParams::new(2.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = 9;
        let mut states = vec![model.space().successors(q)[1]];
        for k in [3, 0, 2, 1] {
            states.push(model.space().successors(*states.last().unwrap())[k]);
        }
        let read = Simulator::new(&model, params)
            .states(states.clone(), Some(q), &mut rng)
            .unwrap();
        let out = log_app(
            &model,
            &params,
            TransitionWeights::Full,
            &states,
            &read.signal,
            q,
        )
        .unwrap();
        assert!(out.log_app > 0.99f64.ln(), "{out:?}");
        assert!(out.log_app <= 1e-9);
        // Exhaustive posterior over all 4^5 paths: the true path is its mode.
        let mut dec = Decoder::new(TransitionWeights::Full);
        let best = paths(&model, q, 5)
            .into_iter()
            .max_by(|a, b| {
                let la = dec
                    .log_app(&model, &params, a, &read.signal, q)
                    .unwrap()
                    .log_app;
                let lb = dec
                    .log_app(&model, &params, b, &read.signal, q)
                    .unwrap()
                    .log_app;
                la.total_cmp(&lb)
            })
            .unwrap();
        assert_eq!(best, states);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = PoreModel::synthetic(2, 1).unwrap();
        let params = NncParams::new(2.0, 0.5).unwrap();
        let w = TransitionWeights::Full;
        assert!(matches!(
            forward(&model, &params, w, 0, &[0.0], 2),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            forward(&model, &params, w, 0, &[0.0, f64::NAN], 2),
            Err(Error::Input(_))
        ));
        // AA -> CC is not a de Bruijn edge.
        assert!(conditional_forward(&model, &params, w, &[0, 10], &[0.0, 0.0]).is_err());
        // q = AA, first state CC.
        assert!(log_app(&model, &params, w, &[10], &[0.0], 0).is_err());
    }

    #[test]
    fn unit_mean_duration_with_full_weights() {
        let model = PoreModel::synthetic(1, 2).unwrap();
        let params = NncParams::new(1.0, 0.5).unwrap();
        let exact = log_app(
            &model,
            &params,
            TransitionWeights::Full,
            &[1, 2],
            &[0.1, 0.2],
            0,
        )
        .unwrap();
        assert!(exact.log_app.is_finite() && exact.log_app <= 0.0);
        assert!(matches!(
            log_app(
                &model,
                &params,
                TransitionWeights::Full,
                &[1, 2],
                &[0.1, 0.2, 0.3],
                0
            ),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn scaled_forward_matches_log_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (tau, m, sigma) in [(3, 40, 0.1), (4, 60, 0.5), (2, 30, 1.5), (5, 20, 0.05)] {
            let model = PoreModel::synthetic(tau, tau as u64).unwrap();
            let params = NncParams::new(6.0, sigma).unwrap();
            let q = rng.random_range(0..model.num_states());
            let mut states = Vec::new();
            let mut s = q;
            for _ in 0..m {
                s = model.space().successors(s)[rng.random_range(0..4)];
                states.push(s);
            }
            let read = Simulator::new(&model, params)
                .states(states, Some(q), &mut rng)
                .unwrap();
            for weights in MODES {
                let mut dec = Decoder::new(weights);
                let fast = dec.forward(&model, &params, q, &read.signal, m).unwrap();
                let slow = dec
                    .forward_log_domain(&model, &params, q, &read.signal, m)
                    .unwrap();
                assert!(
                    (fast - slow).abs() <= 1e-9 * slow.abs().max(1.0),
                    "tau={tau} sigma={sigma} {weights}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn modes_agree_on_log_app() {
        let model = PoreModel::synthetic(2, 12).unwrap();
        let params = NncParams::new(3.0, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = 5;
        let mut states = vec![model.space().successors(q)[2]];
        for _ in 0..6 {
            states.push(model.space().successors(*states.last().unwrap())[rng.random_range(0..4)]);
        }
        let read = Simulator::new(&model, params)
            .states(states.clone(), Some(q), &mut rng)
            .unwrap();
        let full = log_app(
            &model,
            &params,
            TransitionWeights::Full,
            &states,
            &read.signal,
            q,
        )
        .unwrap();
        let uni = log_app(
            &model,
            &params,
            TransitionWeights::Uniform,
            &states,
            &read.signal,
            q,
        )
        .unwrap();
        assert!((full.log_app - uni.log_app).abs() < 1e-9);
        let offset = TransitionWeights::Full.path_log_weight(
            model.log_edge_prob(),
            &params,
            7,
            read.signal.len(),
        );
        assert!((full.log_denominator - uni.log_denominator - offset).abs() < 1e-9);
    }

    #[test]
    fn memory_stays_linear_in_signal_length() {
        let model = PoreModel::synthetic(2, 3).unwrap();
        let params = NncParams::new(3.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = 0;
        let mut states = vec![model.space().successors(q)[1]];
        for _ in 1..1000 {
            states.push(model.space().successors(*states.last().unwrap())[rng.random_range(0..4)]);
        }
        let read = Simulator::new(&model, params)
            .states(states.clone(), Some(q), &mut rng)
            .unwrap();
        let t = read.signal.len();
        let omega = model.num_states();

        let mut dec = Decoder::new(TransitionWeights::Full);
        dec.forward(&model, &params, q, &read.signal, states.len())
            .unwrap();
        // Emissions, two rows and the class row: about 3.25·t·|Ω|, far below m·t·|Ω|.
        assert!(
            dec.peak_cells() <= 4 * (t + 1) * omega,
            "{}",
            dec.peak_cells()
        );
        assert!(dec.peak_cells() * 100 < states.len() * t * omega);

        let mut cond = Decoder::new(TransitionWeights::Full);
        cond.conditional_forward(&model, &params, &states, &read.signal)
            .unwrap();
        assert!(cond.peak_cells() <= 2 * (t + 1) + 16);
    }
}

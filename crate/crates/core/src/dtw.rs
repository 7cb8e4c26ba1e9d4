//! Duplication-only dynamic time warping.
//!
//! `D[ℓ][n] = (y_n − x_ℓ)² + min(D[ℓ][n−1], D[ℓ−1][n−1])`, the minimum of
//! ‖y − stretch(x, t)‖² over segmentations t. Distances are kept in two rolling
//! rows; the backtrace keeps one bit per cell (stay or jump).

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::Segmentation;
use crate::error::{Error, Result};
use crate::pore_model::PoreModel;

/// Reads with more states than this get a band under [`Band::Auto`].
pub const AUTO_BAND_MIN_STATES: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    /// Squared-Euclidean distance d_dtw.
    pub distance: f64,
    pub segmentation: Segmentation,
    /// σ_dtw = sqrt(d_dtw / len(y)).
    pub normalized: f64,
}

/// Restriction of row ℓ to samples n with |n − ℓ·t/m| ≤ width.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "width")]
pub enum Band {
    /// Exact alignment over the whole feasible region.
    #[default]
    Off,
    Fixed(f64),
    /// Exact up to [`AUTO_BAND_MIN_STATES`] states, otherwise a band of width
    /// 6·sqrt(m)·sd(K) with E[K] taken as t/m.
    Auto,
}

impl Band {
    fn width(self, m: usize, t: usize) -> Option<f64> {
        match self {
            Band::Off => None,
            Band::Fixed(w) => Some(w),
            Band::Auto if m <= AUTO_BAND_MIN_STATES => None,
            Band::Auto => {
                let e = t as f64 / m as f64;
                Some(6.0 * (m as f64).sqrt() * (e * (e - 1.0)).sqrt())
            }
        }
    }
}

/// Inclusive sample range [lo, hi] of each row.
fn row_ranges(m: usize, t: usize, band: Band) -> Vec<(usize, usize)> {
    let width = band.width(m, t);
    let slope = t as f64 / m as f64;
    (1..=m)
        .map(|l| {
            let mut lo = l;
            let mut hi = t - (m - l);
            if let Some(w) = width {
                // Wide enough that consecutive rows always overlap.
                let w = w.max(slope + 1.0);
                let centre = l as f64 * slope;
                lo = lo.max((centre - w).ceil().max(1.0) as usize);
                hi = hi.min((centre + w).floor() as usize);
            }
            (lo, hi)
        })
        .collect()
}

pub fn dtw_align(x: &[f64], y: &[f64]) -> Result<DtwResult> {
    dtw_align_banded(x, y, Band::Off)
}

pub fn dtw_align_banded(x: &[f64], y: &[f64], band: Band) -> Result<DtwResult> {
    let m = x.len();
    let t = y.len();
    if m == 0 {
        return Err(Error::domain("need at least one level"));
    }
    if t < m {
        return Err(Error::Infeasible(format!(
            "{t} samples cannot cover {m} states"
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("sample {i} is not finite")));
    }
    let ranges = row_ranges(m, t, band);
    let mut offsets = Vec::with_capacity(m + 1);
    let mut cells = 0;
    for &(lo, hi) in &ranges {
        offsets.push(cells);
        cells += (hi + 1).saturating_sub(lo);
    }
    let mut jumped: BitVec<u64, Lsb0> = BitVec::repeat(false, cells);

    let inf = f64::INFINITY;
    let mut prev = vec![inf; t + 1];
    let mut cur = vec![inf; t + 1];

    // First row: everything after the first sample is a duplication.
    let (lo1, hi1) = ranges[0];
    if lo1 != 1 {
        return Err(Error::Infeasible("band excludes the first sample".into()));
    }
    let mut acc = 0.0;
    for n in 1..=hi1 {
        let d = y[n - 1] - x[0];
        acc += d * d;
        cur[n] = acc;
    }
    jumped.set(0, true);
    let (mut prev_lo, mut prev_hi) = (lo1, hi1);

    for l in 2..=m {
        std::mem::swap(&mut prev, &mut cur);
        let (lo, hi) = ranges[l - 1];
        let level = x[l - 1];
        let base = offsets[l - 1];
        let mut before = inf;
        for n in lo..=hi {
            let from_jump = if n > prev_lo && n - 1 <= prev_hi {
                prev[n - 1]
            } else {
                inf
            };
            let (best, jump) = if before <= from_jump {
                (before, false)
            } else {
                (from_jump, true)
            };
            let d = y[n - 1] - level;
            let value = d * d + best;
            cur[n] = value;
            before = value;
            if jump {
                jumped.set(base + n - lo, true);
            }
        }
        prev_lo = lo;
        prev_hi = hi;
    }

    let distance = cur[t];
    if !distance.is_finite() || prev_hi < t {
        return Err(Error::Infeasible(
            "no segmentation fits inside the band".into(),
        ));
    }

    let mut jumps = vec![0; m];
    let (mut l, mut n) = (m, t);
    jumps[m - 1] = t;
    while l > 1 {
        let (lo, _) = ranges[l - 1];
        if jumped[offsets[l - 1] + n - lo] {
            l -= 1;
            n -= 1;
            jumps[l - 1] = n;
        } else {
            n -= 1;
        }
    }

    Ok(DtwResult {
        distance,
        normalized: (distance / t as f64).sqrt(),
        segmentation: Segmentation::new(jumps)?,
    })
}

/// σ_dtw = sqrt(d_dtw(x, y) / len(y)).
pub fn normalized_dtw(x: &[f64], y: &[f64]) -> Result<f64> {
    dtw_align(x, y).map(|r| r.normalized)
}

/// A fixed-length block chopped from a read, with its preceding state as side
/// information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub read_id: String,
    #[serde(default)]
    pub channel_id: i64,
    /// 0-based position of the block within its read.
    pub block_index: usize,
    pub initial_state: usize,
    pub states: Vec<usize>,
    pub signal: Vec<f64>,
    /// E[K] estimated on the whole read, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_duration: Option<f64>,
}

impl Block {
    pub fn m(&self) -> usize {
        self.states.len()
    }
}

/// Number of blocks of `m` states in a read of `num_states` states, the first
/// state being side information.
pub fn block_count(num_states: usize, m: usize) -> usize {
    if m == 0 || num_states == 0 {
        0
    } else {
        (num_states - 1) / m
    }
}

/// Splits a read into blocks at every m-th jump time of `seg`.
///
/// Block j holds states s[jm+1 ..= (j+1)m] (0-based), initial state s[jm] and
/// samples y[t(jm) .. t((j+1)m)] where t(k) is the jump time closing state k.
/// Samples of the first state and the tail past the last whole block are
/// dropped.
pub fn chop_with_segmentation(
    states: &[usize],
    signal: &[f64],
    seg: &Segmentation,
    m: usize,
) -> Result<Vec<Block>> {
    if seg.len() != states.len() {
        return Err(Error::Length {
            expected: states.len(),
            got: seg.len(),
        });
    }
    if seg.total() > signal.len() {
        return Err(Error::Length {
            expected: signal.len(),
            got: seg.total(),
        });
    }
    if m == 0 {
        return Err(Error::domain("block length must be at least 1"));
    }
    if states.len() < m + 1 {
        return Err(Error::Infeasible(format!(
            "a read of {} states holds no block of {m} states",
            states.len()
        )));
    }
    let jt = seg.jump_times();
    Ok((0..block_count(states.len(), m))
        .map(|j| {
            let first = j * m;
            let last = (j + 1) * m;
            Block {
                read_id: String::new(),
                channel_id: 0,
                block_index: j,
                initial_state: states[first],
                states: states[first + 1..=last].to_vec(),
                signal: signal[jt[first]..jt[last]].to_vec(),
                mean_duration: None,
            }
        })
        .collect())
}

/// A read chopped at its DTW segmentation.
#[derive(Debug, Clone)]
pub struct Chopped {
    pub alignment: DtwResult,
    pub blocks: Vec<Block>,
}

/// Aligns the read's levels to its signal and chops at every m-th estimated
/// jump time.
pub fn chop_blocks(
    model: &PoreModel,
    states: &[usize],
    signal: &[f64],
    m: usize,
    band: Band,
) -> Result<Chopped> {
    if m == 0 {
        return Err(Error::domain("block length must be at least 1"));
    }
    if states.len() < m + 1 {
        return Err(Error::Infeasible(format!(
            "a read of {} states holds no block of {m} states",
            states.len()
        )));
    }
    let alignment = dtw_align_banded(&model.levels_of(states), signal, band)?;
    let blocks = chop_with_segmentation(states, signal, &alignment.segmentation, m)?;
    Ok(Chopped { alignment, blocks })
}

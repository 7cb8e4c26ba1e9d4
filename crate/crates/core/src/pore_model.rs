//! τ-mer state space and the level table of a pore model.
//!
//! States are radix-4 codes of their τ-mer with `A=0, T=1, C=2, G=3` and the
//! oldest base in the most significant digit. Moving to a successor is then a
//! shift-and-mask, and the four predecessors of a state are the states that
//! agree on its τ−1 oldest bases.

use std::fmt;
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported memory length. Decoding cost grows as 4^τ.
pub const MAX_TAU: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Base {
    A = 0,
    T = 1,
    C = 2,
    G = 3,
}

impl Base {
    pub const ALL: [Base; 4] = [Base::A, Base::T, Base::C, Base::G];

    #[inline]
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Base> {
        Base::ALL.get(code).copied()
    }

    pub fn from_byte(b: u8) -> Option<Base> {
        match b {
            b'A' | b'a' => Some(Base::A),
            b'T' | b't' => Some(Base::T),
            b'C' | b'c' => Some(Base::C),
            b'G' | b'g' => Some(Base::G),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Base::A => 'A',
            Base::T => 'T',
            Base::C => 'C',
            Base::G => 'G',
        }
    }
}

impl fmt::Display for Base {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Parses a base string over `ATCG` (case-insensitive).
pub fn parse_bases(s: &str) -> Result<Vec<Base>> {
    s.bytes()
        .enumerate()
        .map(|(i, b)| {
            Base::from_byte(b).ok_or_else(|| {
                Error::input(format!("invalid base {:?} at position {}", b as char, i))
            })
        })
        .collect()
}

pub fn bases_to_string(bases: &[Base]) -> String {
    bases.iter().map(|b| b.as_char()).collect()
}

/// De Bruijn state space over τ-mers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    tau: usize,
    num_states: usize,
}

impl StateSpace {
    pub fn new(tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::domain("tau must be at least 1"));
        }
        if tau > MAX_TAU {
            return Err(Error::domain(format!(
                "tau = {tau} exceeds the supported maximum of {MAX_TAU}"
            )));
        }
        Ok(StateSpace {
            tau,
            num_states: 1 << (2 * tau),
        })
    }

    #[inline]
    pub fn tau(&self) -> usize {
        self.tau
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    fn mask(&self) -> usize {
        self.num_states - 1
    }

    pub fn kmer_to_state(&self, kmer: &[Base]) -> Result<usize> {
        if kmer.len() != self.tau {
            return Err(Error::Length {
                expected: self.tau,
                got: kmer.len(),
            });
        }
        Ok(kmer.iter().fold(0, |s, b| (s << 2) | b.code()))
    }

    pub fn state_to_kmer(&self, state: usize) -> Vec<Base> {
        debug_assert!(state < self.num_states);
        (0..self.tau)
            .rev()
            .map(|i| Base::ALL[(state >> (2 * i)) & 3])
            .collect()
    }

    pub fn kmer_string(&self, state: usize) -> String {
        bases_to_string(&self.state_to_kmer(state))
    }

    /// Sliding window of length τ over `bases`: m = n − τ + 1 states.
    pub fn states_from_bases(&self, bases: &[Base]) -> Result<Vec<usize>> {
        if bases.len() < self.tau {
            return Err(Error::InsufficientLength {
                needed: self.tau,
                got: bases.len(),
                tau: self.tau,
            });
        }
        let mask = self.mask();
        let mut state = self.kmer_to_state(&bases[..self.tau])?;
        let mut out = Vec::with_capacity(bases.len() - self.tau + 1);
        out.push(state);
        for b in &bases[self.tau..] {
            state = ((state << 2) | b.code()) & mask;
            out.push(state);
        }
        Ok(out)
    }

    /// Drop the oldest base, append each of A, T, C, G.
    #[inline]
    pub fn successors(&self, state: usize) -> [usize; 4] {
        let shifted = (state << 2) & self.mask();
        [shifted, shifted | 1, shifted | 2, shifted | 3]
    }

    /// Prepend each of A, T, C, G, drop the newest base. Ascending order.
    #[inline]
    pub fn predecessors(&self, state: usize) -> [usize; 4] {
        let low = state >> 2;
        let top = self.num_states >> 2;
        [low, low + top, low + 2 * top, low + 3 * top]
    }

    #[inline]
    pub fn is_successor(&self, from: usize, to: usize) -> bool {
        (from << 2) & self.mask() == to & !3
    }
}

/// A Markov input process over a finite state space with one mean level per
/// state, as seen by the trellis recursions.
///
/// Predecessor sets are described by classes: all states in one class share
/// the same predecessor set, so the decoder combines each set once per class.
pub trait StateModel {
    fn num_states(&self) -> usize;

    fn levels(&self) -> &[f64];

    /// Log-probability carried by every edge (the input process is uniform over
    /// the edges leaving a state).
    fn log_edge_prob(&self) -> f64;

    fn successors(&self, state: usize) -> impl Iterator<Item = usize> + '_;

    fn num_classes(&self) -> usize;

    fn class_of(&self, state: usize) -> usize;

    /// Predecessors of every state in `class`, ascending.
    fn class_members(&self, class: usize) -> impl Iterator<Item = usize> + '_;

    fn has_edge(&self, from: usize, to: usize) -> bool;
}

/// Pore model: one mean level per τ-mer, in normalized current units.
#[derive(Debug, Clone, PartialEq)]
pub struct PoreModel {
    space: StateSpace,
    levels: Vec<f64>,
}

impl PoreModel {
    pub fn new(space: StateSpace, levels: Vec<f64>) -> Result<Self> {
        if levels.len() != space.num_states() {
            return Err(Error::Length {
                expected: space.num_states(),
                got: levels.len(),
            });
        }
        if let Some(i) = levels.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "level for {} is not finite",
                space.kmer_string(i)
            )));
        }
        Ok(PoreModel { space, levels })
    }

    /// Levels drawn i.i.d. standard normal from a seeded generator.
    pub fn synthetic(tau: usize, seed: u64) -> Result<Self> {
        let space = StateSpace::new(tau)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = (0..space.num_states())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        PoreModel::new(space, levels)
    }

    /// Reads a k-mer level table: header with `kmer` and `level_mean` columns,
    /// tab separated, one row per k-mer. Extra columns are ignored.
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (kmer_col, level_col) = loop {
            let Some((i, line)) = lines.next() else {
                return Err(Error::Format {
                    line: 1,
                    msg: "missing header line".into(),
                });
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            let find = |name: &str| cols.iter().position(|c| c.trim() == name);
            match (find("kmer"), find("level_mean")) {
                (Some(k), Some(l)) => break (k, l),
                _ => {
                    return Err(Error::Format {
                        line: i + 1,
                        msg: "header must contain `kmer` and `level_mean` columns".into(),
                    })
                }
            }
        };

        let mut tau = None;
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut last_line = 1;
        for (i, line) in lines {
            let lineno = i + 1;
            last_line = lineno;
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let field = |c: usize| {
                cols.get(c).map(|s| s.trim()).ok_or_else(|| Error::Format {
                    line: lineno,
                    msg: format!("expected at least {} columns", c + 1),
                })
            };
            let kmer = field(kmer_col)?;
            let level_text = field(level_col)?;
            let bases = parse_bases(kmer).map_err(|e| Error::Format {
                line: lineno,
                msg: format!("k-mer {kmer:?}: {e}"),
            })?;
            match tau {
                None => {
                    if bases.is_empty() || bases.len() > MAX_TAU {
                        return Err(Error::Format {
                            line: lineno,
                            msg: format!(
                                "k-mer length {} outside supported range 1..={MAX_TAU}",
                                bases.len()
                            ),
                        });
                    }
                    tau = Some(bases.len());
                }
                Some(t) if t != bases.len() => {
                    return Err(Error::Format {
                        line: lineno,
                        msg: format!(
                            "k-mer {kmer:?} has length {}, earlier rows have length {t}",
                            bases.len()
                        ),
                    });
                }
                Some(_) => {}
            }
            let level: f64 = level_text.parse().map_err(|_| Error::Format {
                line: lineno,
                msg: format!("non-numeric level {level_text:?} for k-mer {kmer}"),
            })?;
            if !level.is_finite() {
                return Err(Error::Format {
                    line: lineno,
                    msg: format!("non-finite level for k-mer {kmer}"),
                });
            }
            let state = bases.iter().fold(0, |s, b| (s << 2) | b.code());
            entries.push((lineno, state, level));
        }

        let tau = tau.ok_or_else(|| Error::Format {
            line: last_line,
            msg: "table has no k-mer rows".into(),
        })?;
        let space = StateSpace::new(tau)?;
        let mut levels = vec![f64::NAN; space.num_states()];
        let mut seen = vec![0usize; space.num_states()];
        for (lineno, state, level) in entries {
            if seen[state] != 0 {
                return Err(Error::Format {
                    line: lineno,
                    msg: format!(
                        "duplicate k-mer {} (first seen on line {})",
                        space.kmer_string(state),
                        seen[state]
                    ),
                });
            }
            seen[state] = lineno;
            levels[state] = level;
        }
        if let Some(missing) = seen.iter().position(|&l| l == 0) {
            return Err(Error::Format {
                line: last_line,
                msg: format!("missing k-mer {}", space.kmer_string(missing)),
            });
        }

        let n = levels.len() as f64;
        let mean = levels.iter().sum::<f64>() / n;
        let sd = (levels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if mean.abs() > 0.5 || !(0.5..=2.0).contains(&sd) {
            log::warn!(
                "pore model levels look unnormalized (mean {mean:.3}, sd {sd:.3}); \
                 signals are expected on the same scale"
            );
        }
        PoreModel::new(space, levels)
    }

    pub fn write_tsv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kmer\tlevel_mean")?;
        for (s, level) in self.levels.iter().enumerate() {
            writeln!(w, "{}\t{}", self.space.kmer_string(s), level)?;
        }
        Ok(())
    }

    #[inline]
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    #[inline]
    pub fn tau(&self) -> usize {
        self.space.tau()
    }

    #[inline]
    pub fn level(&self, state: usize) -> f64 {
        self.levels[state]
    }

    pub fn levels_of(&self, states: &[usize]) -> Vec<f64> {
        states.iter().map(|&s| self.levels[s]).collect()
    }
}

impl StateModel for PoreModel {
    #[inline]
    fn num_states(&self) -> usize {
        self.space.num_states()
    }

    #[inline]
    fn levels(&self) -> &[f64] {
        &self.levels
    }

    #[inline]
    fn log_edge_prob(&self) -> f64 {
        -(4f64.ln())
    }

    fn successors(&self, state: usize) -> impl Iterator<Item = usize> + '_ {
        self.space.successors(state).into_iter()
    }

    #[inline]
    fn num_classes(&self) -> usize {
        self.space.num_states() >> 2
    }

    #[inline]
    fn class_of(&self, state: usize) -> usize {
        state >> 2
    }

    fn class_members(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        let top = self.space.num_states() >> 2;
        (0..4).map(move |k| class + k * top)
    }

    #[inline]
    fn has_edge(&self, from: usize, to: usize) -> bool {
        self.space.is_successor(from, to)
    }
}

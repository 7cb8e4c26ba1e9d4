//! Information densities, the DTW-chopped achievable-rate estimate, outage
//! curves and dataset filters.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{NncParams, Segmentation};
use crate::dataset_io::Read;
use crate::decoder::{Decoder, TransitionWeights};
use crate::dtw::{chop_blocks, chop_with_segmentation, dtw_align, Band, Block};
use crate::error::{Error, Result};
use crate::pore_model::{Base, PoreModel};

/// i = 2 + log₂ V / m, bits per base.
pub fn info_density(log_app: f64, m: usize) -> f64 {
    2.0 + log_app / (m as f64 * LN_2)
}

/// Rate lost when the initial state is not known: log₂(4^τ)/m = 2τ/m.
pub fn rate_loss_bound(tau: usize, m: usize) -> f64 {
    2.0 * tau as f64 / m as f64
}

/// E[K] ≈ len(y) / len(s).
pub fn estimate_mean_duration(signal_len: usize, num_states: usize) -> Result<f64> {
    if signal_len == 0 || num_states == 0 {
        return Err(Error::domain(
            "mean duration needs non-empty signal and states",
        ));
    }
    Ok(signal_len as f64 / num_states as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConstraints {
    /// Reads need strictly more bases than this.
    pub min_bases: usize,
    /// Reads need strictly fewer bases than this.
    pub max_bases: usize,
    /// Every base frequency must be within this of 1/4 (strict).
    pub typicality: f64,
    /// len(y)/len(s) must be strictly below this.
    pub max_mean_duration: f64,
}

impl Default for FilterConstraints {
    fn default() -> Self {
        FilterConstraints {
            min_bases: 8000,
            max_bases: 12000,
            typicality: 0.01,
            max_mean_duration: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Length { bases: usize },
    Typicality { base: char, frequency: f64 },
    MeanDuration { mean_duration: f64 },
    ShorterThanTau { bases: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub read_id: String,
    pub reasons: Vec<RejectReason>,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub retained: Vec<Read>,
    pub rejected: Vec<Rejection>,
}

pub fn check_read(read: &Read, constraints: &FilterConstraints, tau: usize) -> Vec<RejectReason> {
    let n = read.bases.len();
    let mut reasons = Vec::new();
    if !(constraints.min_bases < n && n < constraints.max_bases) {
        reasons.push(RejectReason::Length { bases: n });
    }
    if n > 0 {
        let mut counts = [0usize; 4];
        for b in &read.bases {
            counts[b.code()] += 1;
        }
        for (b, &c) in Base::ALL.iter().zip(&counts) {
            let freq = c as f64 / n as f64;
            if (freq - 0.25).abs() >= constraints.typicality {
                reasons.push(RejectReason::Typicality {
                    base: b.as_char(),
                    frequency: freq,
                });
            }
        }
    }
    if n < tau {
        reasons.push(RejectReason::ShorterThanTau { bases: n });
    } else {
        let e = read.signal.len() as f64 / (n - tau + 1) as f64;
        if e >= constraints.max_mean_duration {
            reasons.push(RejectReason::MeanDuration { mean_duration: e });
        }
    }
    reasons
}

/// Keeps the reads that satisfy every constraint; the rest are reported with
/// all the reasons they failed.
pub fn filter_reads(
    reads: Vec<Read>,
    constraints: &FilterConstraints,
    tau: usize,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for read in reads {
        let reasons = check_read(&read, constraints, tau);
        if reasons.is_empty() {
            out.retained.push(read);
        } else {
            out.rejected.push(Rejection {
                read_id: read.read_id,
                reasons,
            });
        }
    }
    out
}

/// Where block boundaries come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chopping {
    /// Every m-th jump time of the DTW alignment.
    #[default]
    Dtw,
    /// Every m-th recorded true jump time (simulated data only).
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateConfig {
    /// States per block.
    pub m: usize,
    /// Noise level assumed by the decoder.
    pub sigma: f64,
    /// Fixed E[K] for decoding; estimated per read when absent.
    pub mean_duration: Option<f64>,
    pub transition_weights: TransitionWeights,
    pub band: Band,
    /// Blocks with σ_dtw above this are outliers; no removal when absent.
    pub outlier_threshold: Option<f64>,
    pub chopping: Chopping,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            m: 100,
            sigma: 0.5,
            mean_duration: None,
            transition_weights: TransitionWeights::Full,
            band: Band::Auto,
            outlier_threshold: Some(0.35),
            chopping: Chopping::Dtw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub read_id: String,
    pub channel_id: i64,
    pub block_index: usize,
    pub m: usize,
    /// Samples in the block.
    pub t: usize,
    pub log_app: f64,
    #[serde(rename = "info_density_bits_per_base")]
    pub info_density: f64,
    #[serde(rename = "sigma_dtw")]
    pub sigma_dtw_block: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedBlock {
    pub read_id: String,
    pub block_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadSummary {
    pub read_id: String,
    pub channel_id: i64,
    pub num_states: usize,
    pub signal_len: usize,
    pub mean_duration: f64,
    /// σ_dtw of the whole read against its levels.
    pub sigma_dtw: f64,
    pub blocks: usize,
    /// Block-average density over this read's retained blocks.
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRead {
    pub read_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    /// Block-average density after outlier removal.
    pub rate: Option<f64>,
    pub block_count: usize,
    /// Block-average density before outlier removal.
    pub rate_all: Option<f64>,
    pub block_count_all: usize,
    pub mean_sigma_dtw: f64,
    pub mean_duration: f64,
    pub reads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Mean info density over the retained blocks, bits/base; absent when no
    /// block was retained.
    pub pooled_rate: Option<f64>,
    /// N_s: retained blocks.
    pub num_blocks: usize,
    /// Same estimate before outlier removal.
    pub pooled_rate_all: Option<f64>,
    pub num_blocks_all: usize,
    pub outliers_removed: usize,
    pub density_mean: Option<f64>,
    pub density_variance: Option<f64>,
    pub m: usize,
    /// Bases spanned by a block, m + τ − 1.
    pub implied_bases: usize,
    pub tau: usize,
    pub sigma: f64,
    pub transition_weights: TransitionWeights,
    pub outlier_threshold: Option<f64>,
    pub normalization: String,
    pub per_channel: BTreeMap<i64, ChannelSummary>,
    pub reads: Vec<ReadSummary>,
    pub skipped_reads: Vec<SkippedRead>,
    pub failed_blocks: Vec<FailedBlock>,
}

#[derive(Debug, Clone)]
pub struct RateOutcome {
    pub report: RateReport,
    /// Every decoded block, ordered by (read_id, block_index), before outlier
    /// removal.
    pub blocks: Vec<BlockResult>,
}

/// Splits a read into blocks as configured, tagging them with the read's
/// metadata. Returns the blocks and the σ_dtw of the whole read.
pub fn blocks_for_read(
    model: &PoreModel,
    read: &Read,
    config: &RateConfig,
) -> Result<(Vec<Block>, f64, f64)> {
    let states = model.space().states_from_bases(&read.bases)?;
    let mean_duration = estimate_mean_duration(read.signal.len(), states.len())?;
    let (mut blocks, sigma_dtw) = match config.chopping {
        Chopping::Dtw => {
            let chopped = chop_blocks(model, &states, &read.signal, config.m, config.band)?;
            (chopped.blocks, chopped.alignment.normalized)
        }
        Chopping::Truth => {
            let jt = read.truth_jump_times.clone().ok_or_else(|| {
                Error::input(format!("read {} has no truth_jump_times", read.read_id))
            })?;
            let seg = Segmentation::new(jt)?;
            let blocks = chop_with_segmentation(&states, &read.signal, &seg, config.m)?;
            let sigma_dtw = dtw_align(&model.levels_of(&states), &read.signal)?.normalized;
            (blocks, sigma_dtw)
        }
    };
    for b in &mut blocks {
        b.read_id = read.read_id.clone();
        b.channel_id = read.channel_id;
        b.mean_duration = Some(mean_duration);
    }
    Ok((blocks, mean_duration, sigma_dtw))
}

/// Decodes one block: log-APP, density and the block's own σ_dtw.
pub fn decode_block(
    decoder: &mut Decoder,
    model: &PoreModel,
    block: &Block,
    sigma: f64,
    mean_duration: Option<f64>,
) -> Result<BlockResult> {
    let m = block.m();
    let e = match mean_duration.or(block.mean_duration) {
        Some(e) => e,
        None => estimate_mean_duration(block.signal.len(), m)?,
    };
    let params = NncParams::new(e, sigma)?;
    let out = decoder.log_app(
        model,
        &params,
        &block.states,
        &block.signal,
        block.initial_state,
    )?;
    if !out.log_app.is_finite() {
        return Err(Error::Infeasible(format!(
            "log-APP is {} for this block",
            out.log_app
        )));
    }
    let sigma_dtw = dtw_align(&model.levels_of(&block.states), &block.signal)?.normalized;
    Ok(BlockResult {
        read_id: block.read_id.clone(),
        channel_id: block.channel_id,
        block_index: block.block_index,
        m,
        t: block.signal.len(),
        log_app: out.log_app,
        info_density: info_density(out.log_app, m),
        sigma_dtw_block: sigma_dtw,
    })
}

/// Decodes blocks in parallel; results come back in input order.
pub fn decode_blocks(
    model: &PoreModel,
    blocks: &[Block],
    sigma: f64,
    mean_duration: Option<f64>,
    weights: TransitionWeights,
) -> Vec<Result<BlockResult>> {
    blocks
        .par_iter()
        .map_init(
            || Decoder::new(weights),
            |dec, b| decode_block(dec, model, b, sigma, mean_duration),
        )
        .collect()
}

/// Drops blocks whose σ_dtw exceeds `threshold`. Returns the kept blocks and
/// how many were removed.
pub fn filter_outlier_blocks(
    blocks: Vec<BlockResult>,
    threshold: f64,
) -> (Vec<BlockResult>, usize) {
    let before = blocks.len();
    let kept: Vec<BlockResult> = blocks
        .into_iter()
        .filter(|b| b.sigma_dtw_block <= threshold)
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        n += 1;
        sum += v;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Sample mean and (n − 1) variance; variance is 0 for a single value.
pub fn moments(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mu, 0.0));
    }
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mu, var))
}

/// I_dtw = 2 + Σ ln V / (m · N_s · ln 2) for blocks that all have `m` states.
pub fn pooled_rate_from_log_apps(log_apps: &[f64], m: usize) -> f64 {
    2.0 + log_apps.iter().sum::<f64>() / (m as f64 * log_apps.len() as f64 * LN_2)
}

/// Full pipeline: chop each read, decode every block, aggregate.
pub fn estimate_rate(
    reads: &[Read],
    model: &PoreModel,
    config: &RateConfig,
) -> Result<RateOutcome> {
    if config.m == 0 {
        return Err(Error::domain("block length must be at least 1"));
    }
    NncParams::new(config.mean_duration.unwrap_or(1.0), config.sigma)?;

    type Chopped = (Vec<Block>, f64, f64);
    let chopped: Vec<(usize, Result<Chopped>)> = reads
        .par_iter()
        .enumerate()
        .map(|(i, r)| (i, blocks_for_read(model, r, config)))
        .collect();

    let mut summaries = Vec::new();
    let mut skipped = Vec::new();
    let mut all_blocks = Vec::new();
    for (i, result) in chopped {
        let read = &reads[i];
        match result {
            Ok((blocks, mean_duration, sigma_dtw)) => {
                summaries.push(ReadSummary {
                    read_id: read.read_id.clone(),
                    channel_id: read.channel_id,
                    num_states: read.bases.len() + 1 - model.tau(),
                    signal_len: read.signal.len(),
                    mean_duration,
                    sigma_dtw,
                    blocks: blocks.len(),
                    rate: None,
                    q_score: read.q_score,
                });
                all_blocks.extend(blocks);
            }
            Err(e) => skipped.push(SkippedRead {
                read_id: read.read_id.clone(),
                reason: e.to_string(),
            }),
        }
    }

    let key = |id: &str, ch: i64, j: usize| (id.to_string(), ch, j);
    all_blocks.sort_by(|a, b| {
        key(&a.read_id, a.channel_id, a.block_index).cmp(&key(
            &b.read_id,
            b.channel_id,
            b.block_index,
        ))
    });
    summaries.sort_by(|a, b| (&a.read_id, a.channel_id).cmp(&(&b.read_id, b.channel_id)));
    skipped.sort_by(|a, b| a.read_id.cmp(&b.read_id));

    log::info!(
        "decoding {} blocks from {} reads",
        all_blocks.len(),
        summaries.len()
    );
    let decoded = decode_blocks(
        model,
        &all_blocks,
        config.sigma,
        config.mean_duration,
        config.transition_weights,
    );
    let mut results = Vec::with_capacity(decoded.len());
    let mut failed = Vec::new();
    for (block, r) in all_blocks.iter().zip(decoded) {
        match r {
            Ok(res) => results.push(res),
            Err(e) => failed.push(FailedBlock {
                read_id: block.read_id.clone(),
                block_index: block.block_index,
                reason: e.to_string(),
            }),
        }
    }

    let (retained, outliers_removed) = match config.outlier_threshold {
        Some(th) => filter_outlier_blocks(results.clone(), th),
        None => (results.clone(), 0),
    };

    let densities: Vec<f64> = retained.iter().map(|b| b.info_density).collect();
    let stats = moments(&densities);
    let pooled_rate = mean(densities.iter().copied());
    let pooled_rate_all = mean(results.iter().map(|b| b.info_density));

    for s in &mut summaries {
        s.rate = mean(
            retained
                .iter()
                .filter(|b| b.read_id == s.read_id && b.channel_id == s.channel_id)
                .map(|b| b.info_density),
        );
    }

    let mut per_channel = BTreeMap::new();
    let channels: std::collections::BTreeSet<i64> =
        summaries.iter().map(|s| s.channel_id).collect();
    for ch in channels {
        let reads_in: Vec<&ReadSummary> = summaries.iter().filter(|s| s.channel_id == ch).collect();
        let kept: Vec<f64> = retained
            .iter()
            .filter(|b| b.channel_id == ch)
            .map(|b| b.info_density)
            .collect();
        let all: Vec<f64> = results
            .iter()
            .filter(|b| b.channel_id == ch)
            .map(|b| b.info_density)
            .collect();
        per_channel.insert(
            ch,
            ChannelSummary {
                rate: mean(kept.iter().copied()),
                block_count: kept.len(),
                rate_all: mean(all.iter().copied()),
                block_count_all: all.len(),
                mean_sigma_dtw: mean(reads_in.iter().map(|s| s.sigma_dtw)).unwrap_or(f64::NAN),
                mean_duration: mean(reads_in.iter().map(|s| s.mean_duration)).unwrap_or(f64::NAN),
                reads: reads_in.len(),
            },
        );
    }

    let report = RateReport {
        pooled_rate,
        num_blocks: retained.len(),
        pooled_rate_all,
        num_blocks_all: results.len(),
        outliers_removed,
        density_mean: stats.map(|s| s.0),
        density_variance: stats.map(|s| s.1),
        m: config.m,
        implied_bases: config.m + model.tau() - 1,
        tau: model.tau(),
        sigma: config.sigma,
        transition_weights: config.transition_weights,
        outlier_threshold: config.outlier_threshold,
        normalization: "median/MAD (1.4826)".to_string(),
        per_channel,
        reads: summaries,
        skipped_reads: skipped,
        failed_blocks: failed,
    };
    Ok(RateOutcome {
        report,
        blocks: results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageCurve {
    /// γ, ascending, bits/base.
    pub thresholds: Vec<f64>,
    /// Empirical P(i ≤ γ).
    pub probabilities: Vec<f64>,
}

/// Empirical CDF of the densities at each threshold.
pub fn outage_curve(densities: &[f64], thresholds: &[f64]) -> Result<OutageCurve> {
    if densities.is_empty() {
        return Err(Error::input("outage curve needs at least one density"));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::input("thresholds must be ascending"));
    }
    let mut sorted = densities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let probabilities = thresholds
        .iter()
        .map(|&g| sorted.partition_point(|&d| d <= g) as f64 / n)
        .collect();
    Ok(OutageCurve {
        thresholds: thresholds.to_vec(),
        probabilities,
    })
}

/// `steps` evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn linear_thresholds(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

impl OutageCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["gamma", "p_outage"])?;
        for (g, p) in self.thresholds.iter().zip(&self.probabilities) {
            out.write_record([g.to_string(), p.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Step plot of the curve as a standalone SVG document.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, pad) = (640.0, 400.0, 50.0);
        let (g0, g1) = match (self.thresholds.first(), self.thresholds.last()) {
            (Some(&a), Some(&b)) if b > a => (a, b),
            (Some(&a), _) => (a - 1.0, a + 1.0),
            _ => (0.0, 2.0),
        };
        let px = |g: f64| pad + (g - g0) / (g1 - g0) * (w - 2.0 * pad);
        let py = |p: f64| h - pad - p * (h - 2.0 * pad);
        let mut points = String::new();
        let mut last_p = None;
        for (&g, &p) in self.thresholds.iter().zip(&self.probabilities) {
            if let Some(lp) = last_p {
                points.push_str(&format!("{:.2},{:.2} ", px(g), py(lp)));
            }
            points.push_str(&format!("{:.2},{:.2} ", px(g), py(p)));
            last_p = Some(p);
        }
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"25\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
             <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
             <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n",
            w / 2.0,
            xml_escape(title),
            h - pad,
            w - pad,
            h - pad,
            h - pad,
        );
        for i in 0..=4 {
            let p = i as f64 / 4.0;
            let g = g0 + (g1 - g0) * p;
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{g:.2}</text>\n\
                 <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{p:.2}</text>\n",
                px(g),
                h - pad + 16.0,
                pad - 6.0,
                py(p) + 4.0,
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">gamma (bits/base)</text>\n\
             <text x=\"15\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 15 {})\">outage probability</text>\n\
             <polyline fill=\"none\" stroke=\"firebrick\" stroke-width=\"2\" points=\"{}\"/>\n</svg>\n",
            w / 2.0,
            h - 10.0,
            h / 2.0,
            h / 2.0,
            points.trim_end(),
        ));
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes per-block results as CSV, optionally preceded by a `#` header line.
pub fn write_block_csv<W: std::io::Write>(
    mut w: W,
    header: Option<&crate::dataset_io::OutputHeader>,
    blocks: &[BlockResult],
) -> Result<()> {
    if let Some(h) = header {
        writeln!(w, "# {}", serde_json::to_string(h)?)?;
    }
    let mut out = csv::Writer::from_writer(w);
    for b in blocks {
        out.serialize(b)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_block_csv<R: std::io::Read>(r: R) -> Result<Vec<BlockResult>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pore_model::parse_bases;

    #[test]
    fn density_endpoints() {
        assert_eq!(info_density(0.0, 100), 2.0);
        let m = 37;
        let uniform = -(m as f64) * 4f64.ln();
        assert!(info_density(uniform, m).abs() < 1e-12);
        assert!((info_density(-70.0, 100) - (2.0 - 70.0 / (100.0 * LN_2))).abs() < 1e-15);
        assert!((info_density(-70.0, 100) - 0.990).abs() < 1e-3);
    }

    #[test]
    fn rate_loss() {
        assert_eq!(rate_loss_bound(5, 100), 0.1);
        assert_eq!(rate_loss_bound(0, 100), 0.0);
        let mut last = f64::INFINITY;
        for m in [1, 10, 100, 1000, 10000] {
            let v = rate_loss_bound(5, m);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn mean_duration_estimates() {
        assert_eq!(estimate_mean_duration(1000, 100).unwrap(), 10.0);
        assert_eq!(estimate_mean_duration(250, 250).unwrap(), 1.0);
        assert!(estimate_mean_duration(0, 10).is_err());
    }

    fn read_with(bases: &str, signal_len: usize) -> Read {
        Read {
            read_id: "r".into(),
            channel_id: 1,
            bases: parse_bases(bases).unwrap(),
            signal: vec![0.0; signal_len],
            truth_jump_times: None,
            q_score: None,
        }
    }

    fn balanced(n: usize) -> String {
        "ACGT".repeat(n / 4 + 1)[..n].to_string()
    }

    #[test]
    fn filter_boundaries() {
        let c = FilterConstraints::default();
        let short = read_with(&balanced(7999), 80_000);
        assert!(matches!(
            check_read(&short, &c, 5)[..],
            [RejectReason::Length { bases: 7999 }]
        ));
        let edge = read_with(&balanced(8000), 80_000);
        assert!(check_read(&edge, &c, 5).contains(&RejectReason::Length { bases: 8000 }));
        let ok = read_with(&balanced(10_000), 100_000);
        assert!(check_read(&ok, &c, 5).is_empty());
        let all_a = read_with(&"A".repeat(10_000), 100_000);
        let reasons = check_read(&all_a, &c, 5);
        assert!(reasons
            .iter()
            .any(|r| matches!(r, RejectReason::Typicality { base: 'A', .. })));
        let slow = read_with(&balanced(10_000), 200_000);
        assert!(check_read(&slow, &c, 5)
            .iter()
            .any(|r| matches!(r, RejectReason::MeanDuration { .. })));

        let out = filter_reads(vec![short, ok, all_a], &c, 5);
        assert_eq!(out.retained.len(), 1);
        assert_eq!(out.rejected.len(), 2);
    }

    fn result(density: f64, sigma_dtw: f64) -> BlockResult {
        BlockResult {
            read_id: "r".into(),
            channel_id: 0,
            block_index: 0,
            m: 100,
            t: 1000,
            log_app: (density - 2.0) * 100.0 * LN_2,
            info_density: density,
            sigma_dtw_block: sigma_dtw,
        }
    }

    #[test]
    fn outlier_filter_edges() {
        let blocks = vec![result(1.0, 0.2), result(1.2, 0.3)];
        let (kept, removed) = filter_outlier_blocks(blocks.clone(), 0.35);
        assert_eq!(kept, blocks);
        assert_eq!(removed, 0);
        let (kept, removed) = filter_outlier_blocks(blocks, 0.0);
        assert!(kept.is_empty());
        assert_eq!(removed, 2);
    }

    #[test]
    fn outage_counts() {
        let d = [0.5, 1.0, 1.5];
        let c = outage_curve(&d, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(c.probabilities, vec![0.0, 2.0 / 3.0, 1.0]);
        assert!(outage_curve(&[], &[0.0]).is_err());
        assert!(outage_curve(&d, &[1.0, 0.0]).is_err());
        let svg = c.to_svg("test <curve>");
        assert!(
            svg.starts_with("<svg") && svg.contains("polyline") && svg.contains("&lt;curve&gt;")
        );
    }

    #[test]
    fn pooled_rate_two_ways() {
        let blocks: Vec<BlockResult> = [0.7, 1.1, 1.3, 0.95]
            .iter()
            .map(|&d| result(d, 0.1))
            .collect();
        let logs: Vec<f64> = blocks.iter().map(|b| b.log_app).collect();
        let a = pooled_rate_from_log_apps(&logs, 100);
        let b = blocks.iter().map(|b| b.info_density).sum::<f64>() / 4.0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn block_csv_round_trip() {
        let blocks = vec![result(1.0, 0.2), result(0.4, 0.31)];
        let header = crate::dataset_io::OutputHeader::new(&serde_json::json!({"m": 100})).unwrap();
        let mut buf = Vec::new();
        write_block_csv(&mut buf, Some(&header), &blocks).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# {"));
        assert!(text.contains(
            "read_id,channel_id,block_index,m,t,log_app,info_density_bits_per_base,sigma_dtw"
        ));
        assert_eq!(read_block_csv(buf.as_slice()).unwrap(), blocks);
    }
}

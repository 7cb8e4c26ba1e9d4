//! End-to-end steps driven by a [`RunConfig`]. The command line is a thin
//! shell over these functions.

use serde::{Deserialize, Serialize};

use crate::channel::{simulate_dataset, NncParams};
use crate::config::RunConfig;
use crate::dataset_io::Read;
use crate::dtw::{chop_blocks, Block, DtwResult};
use crate::error::{Error, Result};
use crate::pore_model::PoreModel;
use crate::rates::{
    decode_blocks, estimate_rate, filter_reads, BlockResult, FilterOutcome, RateOutcome,
};

/// Simulated dataset as configured by `config.simulate`, seeded by
/// `config.seed`.
pub fn simulate(config: &RunConfig, model: &PoreModel) -> Result<Vec<Read>> {
    let sim = &config.simulate;
    let params = NncParams::new(sim.mean_duration, sim.sigma)?;
    simulate_dataset(
        model,
        params,
        sim.reads,
        sim.bases,
        sim.channels,
        config.seed,
    )
}

/// Applies the dataset filters unless `skip_filter` is set.
pub fn filter(config: &RunConfig, model: &PoreModel, reads: Vec<Read>) -> FilterOutcome {
    if config.skip_filter {
        FilterOutcome {
            retained: reads,
            rejected: Vec::new(),
        }
    } else {
        filter_reads(reads, &config.filter, model.tau())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub read_id: String,
    pub channel_id: i64,
    pub distance: f64,
    pub sigma_dtw: f64,
    pub jump_times: Vec<usize>,
}

/// Aligns each read and chops it into blocks. Reads too short for one block
/// are skipped with a warning; other errors abort.
pub fn segment(
    config: &RunConfig,
    model: &PoreModel,
    reads: &[Read],
) -> Result<(Vec<SegmentRecord>, Vec<Block>)> {
    use rayon::prelude::*;
    type Segmented = Option<(DtwResult, Vec<Block>)>;
    let results: Vec<Result<Segmented>> = reads
        .par_iter()
        .map(|r| {
            let states = model.space().states_from_bases(&r.bases)?;
            match chop_blocks(model, &states, &r.signal, config.m, config.band) {
                Ok(mut c) => {
                    let e = r.signal.len() as f64 / states.len() as f64;
                    for b in &mut c.blocks {
                        b.read_id = r.read_id.clone();
                        b.channel_id = r.channel_id;
                        b.mean_duration = Some(e);
                    }
                    Ok(Some((c.alignment, c.blocks)))
                }
                Err(e) if e.is_infeasible() => {
                    log::warn!("read {}: {e}", r.read_id);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut blocks = Vec::new();
    for (r, res) in reads.iter().zip(results) {
        if let Some((alignment, bs)) = res? {
            records.push(SegmentRecord {
                read_id: r.read_id.clone(),
                channel_id: r.channel_id,
                distance: alignment.distance,
                sigma_dtw: alignment.normalized,
                jump_times: alignment.segmentation.into_jump_times(),
            });
            blocks.extend(bs);
        }
    }
    Ok((records, blocks))
}

/// Decodes pre-chopped blocks. Any failing block is an error.
pub fn decode(config: &RunConfig, model: &PoreModel, blocks: &[Block]) -> Result<Vec<BlockResult>> {
    decode_blocks(
        model,
        blocks,
        config.sigma,
        config.mean_duration,
        config.transition_weights,
    )
    .into_iter()
    .zip(blocks)
    .map(|(r, b)| {
        r.map_err(|e| match e {
            Error::Infeasible(msg) => {
                Error::Infeasible(format!("{} block {}: {msg}", b.read_id, b.block_index))
            }
            other => other,
        })
    })
    .collect()
}

#[derive(Debug, Clone)]
pub struct RatePipeline {
    pub filter: FilterOutcome,
    pub rate: RateOutcome,
}

/// Filter then estimate. Fails with an infeasibility error when no read
/// survives the filters or no block could be decoded.
pub fn rate(config: &RunConfig, model: &PoreModel, reads: Vec<Read>) -> Result<RatePipeline> {
    config.validate()?;
    let mut filtered = filter(config, model, reads);
    if filtered.retained.is_empty() {
        return Err(Error::Infeasible("no reads retained".into()));
    }
    let rate = estimate_rate(&filtered.retained, model, &config.rate_config())?;
    if rate.blocks.is_empty() {
        return Err(Error::Infeasible("no blocks decoded".into()));
    }
    filtered.retained.clear();
    Ok(RatePipeline {
        filter: filtered,
        rate,
    })
}

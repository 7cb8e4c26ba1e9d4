use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nnc_core::crosscheck::run_oracle;
use nnc_core::dataset_io::{create_output, read_dataset, read_jsonl, write_jsonl, write_reads};
use nnc_core::pipeline;
use nnc_core::rates::{
    filter_outlier_blocks, linear_thresholds, outage_curve, read_block_csv, write_block_csv,
    BlockResult, Chopping,
};
use nnc_core::{Band, Block, Error, OutputHeader, PoreModel, RunConfig, TransitionWeights};

/// Noisy nanopore channel toolkit: simulation, DTW segmentation, exact
/// a-posteriori decoding and achievable-rate estimation.
#[derive(Parser, Debug)]
#[command(name = "nnc", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset through the channel.
    Simulate(SimulateArgs),
    /// Apply the dataset constraints and write the retained reads.
    Filter(FilterArgs),
    /// Align each read with DTW and optionally write its blocks.
    Segment(SegmentArgs),
    /// Decode blocks and write per-block log-APPs.
    Decode(DecodeArgs),
    /// Estimate the achievable rate of a dataset.
    Rate(RateArgs),
    /// Outage curve from per-block results.
    Outage(OutageArgs),
    /// Cross-check the recursions against exhaustive enumeration.
    Oracle(OracleArgs),
}

/// Options shared by every subcommand. Each overrides the config file.
#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Pore-model TSV (columns kmer, level_mean). Synthetic when omitted.
    #[arg(long, global = true)]
    pore_model: Option<PathBuf>,
    /// τ of the synthetic pore model.
    #[arg(long, global = true)]
    tau: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file; standard output when omitted. A .gz suffix compresses.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct Decoding {
    /// States per block.
    #[arg(long)]
    m: Option<usize>,
    /// Noise σ assumed by the decoder.
    #[arg(long)]
    sigma: Option<f64>,
    /// Fixed E[K]; estimated per read as len(signal)/len(states) otherwise.
    #[arg(long)]
    mean_duration: Option<f64>,
    #[arg(long, value_parser = parse_weights)]
    transition_weights: Option<TransitionWeights>,
}

#[derive(Args, Debug, Default)]
struct Segmenting {
    /// DTW band: off, auto or a width in samples.
    #[arg(long, value_parser = parse_band)]
    band: Option<Band>,
}

#[derive(Args, Debug, Default)]
struct Filtering {
    #[arg(long)]
    min_bases: Option<usize>,
    #[arg(long)]
    max_bases: Option<usize>,
    #[arg(long)]
    typicality: Option<f64>,
    #[arg(long)]
    max_mean_duration: Option<f64>,
    /// Keep every read.
    #[arg(long)]
    skip_filter: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    reads: Option<usize>,
    #[arg(long)]
    bases: Option<usize>,
    /// E[K] used to generate.
    #[arg(long)]
    sim_mean_duration: Option<f64>,
    /// Noise σ used to generate.
    #[arg(long)]
    sim_sigma: Option<f64>,
    #[arg(long)]
    channels: Option<usize>,
    /// Also write the pore model used as TSV.
    #[arg(long)]
    write_model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    filter: Filtering,
    /// JSONL of rejected reads with reasons.
    #[arg(long)]
    rejections: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    segmenting: Segmenting,
    /// States per block.
    #[arg(long)]
    m: Option<usize>,
    /// Also write the chopped blocks as JSONL.
    #[arg(long)]
    blocks: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Blocks JSONL as written by `segment --blocks`.
    #[arg(long)]
    blocks: PathBuf,
    #[command(flatten)]
    decoding: Decoding,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct RateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    decoding: Decoding,
    #[command(flatten)]
    segmenting: Segmenting,
    #[command(flatten)]
    filter: Filtering,
    /// σ_dtw above which a block is an outlier, or "none".
    #[arg(long, value_parser = parse_threshold)]
    outlier_threshold: Option<Threshold>,
    /// Where block boundaries come from.
    #[arg(long, value_parser = parse_chopping)]
    chopping: Option<Chopping>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Per-block CSV of every decoded block.
    #[arg(long)]
    blocks_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutageArgs {
    /// Per-block results: CSV from `rate --blocks-csv` or JSONL from `decode`.
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long, value_parser = parse_threshold)]
    outlier_threshold: Option<Threshold>,
    #[arg(long, default_value_t = 0.0)]
    gamma_min: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma_max: f64,
    #[arg(long, default_value_t = 81)]
    steps: usize,
    /// Also render the curve as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    fixtures: usize,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Clone, Copy, Debug)]
struct Threshold(Option<f64>);

fn parse_threshold(s: &str) -> Result<Threshold, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(Threshold(None));
    }
    s.parse::<f64>()
        .map(|v| Threshold(Some(v)))
        .map_err(|e| format!("expected a number or none: {e}"))
}

fn parse_weights(s: &str) -> Result<TransitionWeights, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_band(s: &str) -> Result<Band, String> {
    match s {
        "off" => Ok(Band::Off),
        "auto" => Ok(Band::Auto),
        w => w
            .parse::<f64>()
            .map(Band::Fixed)
            .map_err(|_| format!("expected off, auto or a width, got {w:?}")),
    }
}

fn parse_chopping(s: &str) -> Result<Chopping, String> {
    match s {
        "dtw" => Ok(Chopping::Dtw),
        "truth" => Ok(Chopping::Truth),
        other => Err(format!("expected dtw or truth, got {other:?}")),
    }
}

impl Common {
    fn load(&self, subcommand: &str) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_toml_file(p)?,
            None => RunConfig::default(),
        };
        c.subcommand = Some(subcommand.to_string());
        set(&mut c.pore_model_path, self.pore_model.clone().map(Some));
        set(&mut c.tau, self.tau);
        set(&mut c.seed, self.seed);
        set(&mut c.output_path, self.output.clone().map(Some));
        c.threads = self.threads.or(c.threads);
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Decoding {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.m, self.m);
        set(&mut c.sigma, self.sigma);
        set(&mut c.mean_duration, self.mean_duration.map(Some));
        set(&mut c.transition_weights, self.transition_weights);
    }
}

impl Filtering {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.filter.min_bases, self.min_bases);
        set(&mut c.filter.max_bases, self.max_bases);
        set(&mut c.filter.typicality, self.typicality);
        set(&mut c.filter.max_mean_duration, self.max_mean_duration);
        c.skip_filter |= self.skip_filter;
    }
}

fn dataset_path(arg: &Option<PathBuf>, c: &mut RunConfig) -> anyhow::Result<PathBuf> {
    set(&mut c.dataset_path, arg.clone().map(Some));
    c.dataset_path
        .clone()
        .context("no dataset given (use --dataset or dataset_path in the config)")
}

fn output(c: &RunConfig) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &c.output_path {
        Some(p) => create_output(p)?,
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    })
}

fn header(c: &RunConfig) -> anyhow::Result<OutputHeader> {
    Ok(OutputHeader::new(c)?)
}

fn model(c: &RunConfig) -> anyhow::Result<PoreModel> {
    let m = c.pore_model()?;
    log::info!(
        "pore model τ = {} ({} states)",
        m.tau(),
        m.space().num_states()
    );
    Ok(m)
}

fn run(command: Command, common: &Common) -> anyhow::Result<()> {
    match command {
        Command::Simulate(a) => {
            let mut c = common.load("simulate")?;
            set(&mut c.simulate.reads, a.reads);
            set(&mut c.simulate.bases, a.bases);
            set(&mut c.simulate.mean_duration, a.sim_mean_duration);
            set(&mut c.simulate.sigma, a.sim_sigma);
            set(&mut c.simulate.channels, a.channels);
            with_threads(&c, || {
                let model = model(&c)?;
                let reads = pipeline::simulate(&c, &model)?;
                if let Some(p) = &a.write_model {
                    model.write_tsv(create_output(p)?)?;
                }
                write_reads(output(&c)?, Some(&header(&c)?), &reads)?;
                log::info!("simulated {} reads", reads.len());
                Ok(())
            })
        }
        Command::Filter(a) => {
            let mut c = common.load("filter")?;
            a.filter.apply(&mut c);
            let path = dataset_path(&a.dataset, &mut c)?;
            let model = model(&c)?;
            let out = pipeline::filter(&c, &model, read_dataset(&path)?);
            let h = header(&c)?;
            write_reads(output(&c)?, Some(&h), &out.retained)?;
            if let Some(p) = &a.rejections {
                write_jsonl(create_output(p)?, Some(&h), &out.rejected)?;
            }
            log::info!(
                "retained {} reads, rejected {}",
                out.retained.len(),
                out.rejected.len()
            );
            if out.retained.is_empty() {
                return Err(Error::Infeasible("no reads retained".into()).into());
            }
            Ok(())
        }
        Command::Segment(a) => {
            let mut c = common.load("segment")?;
            set(&mut c.band, a.segmenting.band);
            set(&mut c.m, a.m);
            let path = dataset_path(&a.dataset, &mut c)?;
            c.validate()?;
            with_threads(&c, || {
                let model = model(&c)?;
                let reads = read_dataset(&path)?;
                let (records, blocks) = pipeline::segment(&c, &model, &reads)?;
                let h = header(&c)?;
                write_jsonl(output(&c)?, Some(&h), &records)?;
                if let Some(p) = &a.blocks {
                    write_jsonl(create_output(p)?, Some(&h), &blocks)?;
                }
                log::info!(
                    "segmented {} reads into {} blocks",
                    records.len(),
                    blocks.len()
                );
                Ok(())
            })
        }
        Command::Decode(a) => {
            let mut c = common.load("decode")?;
            a.decoding.apply(&mut c);
            c.validate()?;
            with_threads(&c, || {
                let model = model(&c)?;
                let blocks: Vec<Block> = read_jsonl(&a.blocks)?;
                let results = pipeline::decode(&c, &model, &blocks)?;
                write_jsonl(output(&c)?, Some(&header(&c)?), &results)?;
                log::info!("decoded {} blocks", results.len());
                Ok(())
            })
        }
        Command::Rate(a) => {
            let mut c = common.load("rate")?;
            a.decoding.apply(&mut c);
            a.filter.apply(&mut c);
            set(&mut c.band, a.segmenting.band);
            set(&mut c.outlier_threshold, a.outlier_threshold.map(|t| t.0));
            set(&mut c.chopping, a.chopping);
            let path = dataset_path(&a.dataset, &mut c)?;
            c.validate()?;
            with_threads(&c, || {
                let model = model(&c)?;
                let out = pipeline::rate(&c, &model, read_dataset(&path)?)?;
                let h = header(&c)?;
                let report = &out.rate.report;
                let mut w = output(&c)?;
                match a.format {
                    Format::Json => {
                        let doc = serde_json::json!({ "_header": h, "report": report, "rejected": out.filter.rejected });
                        serde_json::to_writer_pretty(&mut w, &doc)?;
                        writeln!(w)?;
                    }
                    Format::Csv => write_report_csv(&mut w, &h, report)?,
                }
                w.flush()?;
                if let Some(p) = &a.blocks_csv {
                    write_block_csv(create_output(p)?, Some(&h), &out.rate.blocks)?;
                }
                match report.pooled_rate {
                    Some(r) => log::info!(
                        "pooled rate {r:.4} bits/base over {} blocks",
                        report.num_blocks
                    ),
                    None => log::warn!("every block was removed as an outlier"),
                }
                Ok(())
            })
        }
        Command::Outage(a) => {
            let mut c = common.load("outage")?;
            set(&mut c.outlier_threshold, a.outlier_threshold.map(|t| t.0));
            let blocks = read_results(&a.blocks)?;
            let blocks = match c.outlier_threshold {
                Some(th) => filter_outlier_blocks(blocks, th).0,
                None => blocks,
            };
            let densities: Vec<f64> = blocks.iter().map(|b| b.info_density).collect();
            let curve = outage_curve(
                &densities,
                &linear_thresholds(a.gamma_min, a.gamma_max, a.steps),
            )?;
            let h = header(&c)?;
            let mut w = output(&c)?;
            writeln!(w, "# {}", serde_json::to_string(&h)?)?;
            curve.write_csv(&mut w)?;
            if let Some(p) = &a.svg {
                let svg = curve.to_svg(&format!(
                    "Outage probability over {} blocks",
                    densities.len()
                ));
                let comment = format!(
                    "<!-- {} -->\n",
                    serde_json::to_string(&h)?.replace("--", "- -")
                );
                let mut f = create_output(p)?;
                f.write_all(svg.replacen("\n", &format!("\n{comment}"), 1).as_bytes())?;
                f.flush()?;
            }
            Ok(())
        }
        Command::Oracle(a) => {
            let c = common.load("oracle")?;
            let report = run_oracle(a.fixtures, c.seed, a.tolerance)?;
            let mut w = output(&c)?;
            let doc = serde_json::json!({ "_header": header(&c)?, "report": report });
            serde_json::to_writer_pretty(&mut w, &doc)?;
            writeln!(w)?;
            w.flush()?;
            if !report.passed() {
                bail!("oracle cross-check failed");
            }
            Ok(())
        }
    }
}

fn read_results(path: &Path) -> anyhow::Result<Vec<BlockResult>> {
    let name = path.to_string_lossy();
    if name.ends_with(".csv") || name.ends_with(".csv.gz") {
        Ok(read_block_csv(nnc_core::dataset_io::open_input(path)?)?)
    } else {
        Ok(read_jsonl(path)?)
    }
}

fn write_report_csv(
    w: &mut dyn Write,
    h: &OutputHeader,
    r: &nnc_core::RateReport,
) -> anyhow::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(w, "# {}", serde_json::to_string(h)?)?;
    writeln!(
        w,
        "channel_id,rate,block_count,rate_all,block_count_all,mean_sigma_dtw,mean_duration,reads"
    )?;
    writeln!(
        w,
        "all,{},{},{},{},,,{}",
        opt(r.pooled_rate),
        r.num_blocks,
        opt(r.pooled_rate_all),
        r.num_blocks_all,
        r.reads.len()
    )?;
    for (ch, s) in &r.per_channel {
        writeln!(
            w,
            "{ch},{},{},{},{},{},{},{}",
            opt(s.rate),
            s.block_count,
            opt(s.rate_all),
            s.block_count_all,
            s.mean_sigma_dtw,
            s.mean_duration,
            s.reads
        )?;
    }
    Ok(())
}

fn with_threads<T>(c: &RunConfig, f: impl FnOnce() -> anyhow::Result<T> + Send) -> anyhow::Result<T>
where
    T: Send,
{
    match c.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the worker pool")?
            .install(f),
        None => f(),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_infeasible() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

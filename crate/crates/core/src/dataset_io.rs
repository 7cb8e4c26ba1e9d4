//! On-disk formats: reads and blocks as JSONL (optionally gzip-compressed,
//! chosen by a `.gz` extension), per-block results as CSV, and signal
//! normalization.
//!
//! Output files may begin with a provenance header. In JSONL it is a line
//! holding a single `_header` object; in CSV it is a `#`-prefixed JSON line.
//! Readers skip both.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pore_model::{bases_to_string, parse_bases, Base};

/// Scale that makes the MAD a consistent estimator of a Gaussian σ.
pub const MAD_SCALE: f64 = 1.4826;

pub const TOOL_NAME: &str = "nnc";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct Read {
    pub read_id: String,
    pub channel_id: i64,
    pub bases: Vec<Base>,
    /// Normalized current samples.
    pub signal: Vec<f64>,
    pub truth_jump_times: Option<Vec<usize>>,
    /// Basecaller quality, carried through untouched.
    pub q_score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReadRecord {
    read_id: String,
    channel_id: i64,
    bases: String,
    signal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_jump_times: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_score: Option<f64>,
}

impl Read {
    fn from_record(rec: ReadRecord) -> Result<Self> {
        let bases = parse_bases(&rec.bases)
            .map_err(|e| Error::input(format!("read {}: {e}", rec.read_id)))?;
        if let Some(i) = rec.signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "read {}: sample {i} is not finite",
                rec.read_id
            )));
        }
        Ok(Read {
            read_id: rec.read_id,
            channel_id: rec.channel_id,
            bases,
            signal: rec.signal,
            truth_jump_times: rec.truth_jump_times,
            q_score: rec.q_score,
        })
    }

    fn to_record(&self) -> ReadRecord {
        ReadRecord {
            read_id: self.read_id.clone(),
            channel_id: self.channel_id,
            bases: bases_to_string(&self.bases),
            signal: self.signal.clone(),
            truth_jump_times: self.truth_jump_times.clone(),
            q_score: self.q_score,
        }
    }
}

/// Provenance embedded at the top of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputHeader {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
}

impl OutputHeader {
    pub fn new<C: Serialize>(config: &C) -> Result<Self> {
        Ok(OutputHeader {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config: serde_json::to_value(config)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    #[serde(rename = "_header")]
    header: OutputHeader,
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(if is_gz(path) {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

pub fn create_output(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(if is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    })
}

/// Streams JSON records one line at a time, skipping blank lines and a
/// provenance header.
pub struct JsonLines<R, T> {
    lines: io::Lines<R>,
    line: usize,
    header: Option<OutputHeader>,
    _marker: std::marker::PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> JsonLines<R, T> {
    pub fn new(reader: R) -> Self {
        JsonLines {
            lines: reader.lines(),
            line: 0,
            header: None,
            _marker: std::marker::PhantomData,
        }
    }

    /// Header seen so far, if the file had one.
    pub fn header(&self) -> Option<&OutputHeader> {
        self.header.as_ref()
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonLines<R, T> {
    type Item = Result<(usize, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            if text.trim_start().starts_with("{\"_header\"") {
                match serde_json::from_str::<HeaderLine>(&text) {
                    Ok(h) => {
                        self.header = Some(h.header);
                        continue;
                    }
                    Err(e) => {
                        return Some(Err(Error::Format {
                            line: self.line,
                            msg: format!("bad header: {e}"),
                        }))
                    }
                }
            }
            return Some(
                serde_json::from_str(&text)
                    .map(|v| (self.line, v))
                    .map_err(|e| Error::Format {
                        line: self.line,
                        msg: e.to_string(),
                    }),
            );
        }
    }
}

/// Iterator over the reads of a JSONL dataset, in file order.
pub struct DatasetReader<R: BufRead> {
    inner: JsonLines<R, ReadRecord>,
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R) -> Self {
        DatasetReader {
            inner: JsonLines::new(reader),
        }
    }

    pub fn header(&self) -> Option<&OutputHeader> {
        self.inner.header()
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<Read>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line, rec) = match self.inner.next()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        Some(Read::from_record(rec).map_err(|e| Error::Format {
            line,
            msg: e.to_string(),
        }))
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<Read>> {
    DatasetReader::new(open_input(path)?).collect()
}

pub fn write_jsonl<W: Write, T: Serialize>(
    mut w: W,
    header: Option<&OutputHeader>,
    items: impl IntoIterator<Item = T>,
) -> Result<()> {
    if let Some(h) = header {
        serde_json::to_writer(&mut w, &HeaderLine { header: h.clone() })?;
        w.write_all(b"\n")?;
    }
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reads<W: Write>(w: W, header: Option<&OutputHeader>, reads: &[Read]) -> Result<()> {
    write_jsonl(w, header, reads.iter().map(Read::to_record))
}

pub fn write_dataset(path: &Path, header: Option<&OutputHeader>, reads: &[Read]) -> Result<()> {
    write_reads(create_output(path)?, header, reads)
}

/// Reads any JSONL file of records, skipping a header.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    JsonLines::new(open_input(path)?)
        .map(|r| r.map(|(_, v)| v))
        .collect()
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// (x − median) / (1.4826 · MAD).
///
/// When more than half the samples sit exactly on the median the MAD is zero;
/// the scale then falls back to the mean absolute deviation about the median
/// times sqrt(π/2), which is also Gaussian-consistent.
pub fn normalize_signal(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 samples, got {}",
            raw.len()
        )));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::input(format!("sample {i} is not finite")));
    }
    let med = median(raw);
    let dev: Vec<f64> = raw.iter().map(|v| (v - med).abs()).collect();
    let mut scale = MAD_SCALE * median(&dev);
    if scale == 0.0 {
        let mean_abs = dev.iter().sum::<f64>() / dev.len() as f64;
        scale = (std::f64::consts::PI / 2.0).sqrt() * mean_abs;
    }
    if scale == 0.0 {
        return Err(Error::Degenerate("signal is constant".into()));
    }
    Ok(raw.iter().map(|v| (v - med) / scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_read(id: &str) -> Read {
        Read {
            read_id: id.to_string(),
            channel_id: 17,
            bases: parse_bases("ACGTTGCA").unwrap(),
            signal: vec![0.1, -0.2, 1.0 / 3.0, 2.5e-17, -1.7976931348623157e308],
            truth_jump_times: Some(vec![1, 3, 5]),
            q_score: Some(13.9),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let reads: Vec<Read> = DatasetReader::new(&b""[..]).collect::<Result<_>>().unwrap();
        assert!(reads.is_empty());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let reads = vec![sample_read("a"), sample_read("b")];
        for name in ["d.jsonl", "d.jsonl.gz"] {
            let path = dir.path().join(name);
            let header = OutputHeader::new(&serde_json::json!({"k": 1})).unwrap();
            write_dataset(&path, Some(&header), &reads).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(back, reads);
            for (a, b) in back.iter().zip(&reads) {
                for (x, y) in a.signal.iter().zip(&b.signal) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn header_is_exposed() {
        let header = OutputHeader::new(&serde_json::json!({"seed": 3})).unwrap();
        let mut buf = Vec::new();
        write_reads(&mut buf, Some(&header), &[sample_read("x")]).unwrap();
        let mut reader = DatasetReader::new(buf.as_slice());
        assert!(reader.next().unwrap().is_ok());
        assert_eq!(reader.header(), Some(&header));
    }

    #[test]
    fn invalid_base_names_the_read() {
        let line = r#"{"read_id":"r9","channel_id":1,"bases":"ACNT","signal":[0.0,1.0]}"#;
        let err = DatasetReader::new(line.as_bytes())
            .next()
            .unwrap()
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("r9") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!(
            "{}\n\nnot json\n",
            r#"{"read_id":"r1","channel_id":1,"bases":"AC","signal":[0.0]}"#
        );
        let results: Vec<Result<Read>> = DatasetReader::new(text.as_bytes()).collect();
        assert!(results[0].is_ok());
        assert!(matches!(results[1], Err(Error::Format { line: 3, .. })));
    }

    #[test]
    fn normalization_fixture() {
        let out = normalize_signal(&[0.0, 0.0, 0.0, 10.0]).unwrap();
        assert_eq!(median(&out), 0.0);
        // MAD is zero here; mean absolute deviation 2.5 scaled by sqrt(π/2).
        let scale = (std::f64::consts::PI / 2.0).sqrt() * 2.5;
        assert!((out[3] - 10.0 / scale).abs() < 1e-12);
        assert!(normalize_signal(&[2.0, 2.0, 2.0]).is_err());
        assert!(normalize_signal(&[2.0]).is_err());
    }

    #[test]
    fn normalization_of_a_gaussian_like_vector() {
        let raw = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0];
        let out = normalize_signal(&raw).unwrap();
        // median 4, |dev| = 1,3,0,3,1,5,2,2,1 -> MAD 2
        assert_eq!(out[2], 0.0);
        assert!((out[5] - 5.0 / (MAD_SCALE * 2.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent_and_affine_invariant(
            raw in prop::collection::vec(-100.0f64..100.0, 5..200),
            a in 0.01f64..50.0,
            b in -100.0f64..100.0,
        ) {
            prop_assume!(raw.iter().any(|v| *v != raw[0]));
            let once = normalize_signal(&raw).unwrap();
            let twice = normalize_signal(&once).unwrap();
            for (x, y) in once.iter().zip(&twice) {
                prop_assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
            }
            let moved: Vec<f64> = raw.iter().map(|v| a * v + b).collect();
            let other = normalize_signal(&moved).unwrap();
            for (x, y) in once.iter().zip(&other) {
                prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()));
            }
        }
    }
}

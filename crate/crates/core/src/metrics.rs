//! Empirical CDFs, per-operation CSV export and experiment aggregates.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::{OpRecord, OpType};
use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::id::{Id256, NodeId};
use crate::netsim::{format_ms, Micros};

pub const RECORD_HEADER: [&str; 15] = [
    "experiment_id",
    "set_id",
    "op_id",
    "op_type",
    "key_hex",
    "origin_hex",
    "hops",
    "contacted",
    "failed_fast",
    "failed_slow",
    "start_ms",
    "end_ms",
    "duration_ms",
    "success",
    "replicas",
];

pub const CDF_HEADER: [&str; 3] = ["metric_name", "value", "cumulative_fraction"];

/// Empirical distribution with ties collapsed.
#[derive(Clone, Debug, PartialEq)]
pub struct Cdf {
    values: Vec<f64>,
    cumulative: Vec<usize>,
    n: usize,
}

/// Build the empirical CDF of `values`. NaN is rejected.
pub fn cdf(values: &[f64]) -> Result<Cdf> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse("NaN in cdf input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Cdf {
        values: Vec::new(),
        cumulative: Vec::new(),
        n: sorted.len(),
    };
    for (i, v) in sorted.iter().enumerate() {
        if out.values.last() == Some(v) {
            *out.cumulative.last_mut().unwrap() = i + 1;
        } else {
            out.values.push(*v);
            out.cumulative.push(i + 1);
        }
    }
    Ok(out)
}

impl Cdf {
    /// Number of samples behind the distribution.
    pub fn sample_count(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.cumulative)
            .map(move |(v, c)| (*v, *c as f64 / self.n as f64))
    }

    /// Nearest rank: the smallest value whose cumulative fraction is at least `p`.
    pub fn percentile(&self, p: f64) -> f64 {
        let rank = (p.clamp(0.0, 1.0) * self.n as f64 - 1e-9).ceil().max(1.0) as usize;
        let i = self.cumulative.partition_point(|&c| c < rank);
        self.values[i.min(self.values.len() - 1)]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// One row of the per-operation CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordRow {
    pub experiment_id: String,
    pub set_id: u32,
    pub op_id: u64,
    pub op_type: OpType,
    pub key: Id256,
    pub origin: NodeId,
    pub hops: u32,
    pub contacted: u32,
    pub failed_fast: u32,
    pub failed_slow: u32,
    pub start_us: Micros,
    pub end_us: Micros,
    pub success: bool,
    pub replicas: usize,
}

impl RecordRow {
    pub fn from_record(experiment_id: &str, r: &OpRecord) -> Self {
        RecordRow {
            experiment_id: experiment_id.to_string(),
            set_id: r.set_id,
            op_id: r.op_id,
            op_type: r.op_type,
            key: r.key,
            origin: r.origin,
            hops: r.hops,
            contacted: r.contacted,
            failed_fast: r.failed_fast,
            failed_slow: r.failed_slow,
            start_us: r.start_us,
            end_us: r.end_us,
            success: r.success,
            replicas: r.replicas(),
        }
    }

    pub fn duration_us(&self) -> Micros {
        self.end_us - self.start_us
    }

    fn fields(&self) -> [String; 15] {
        [
            self.experiment_id.clone(),
            self.set_id.to_string(),
            self.op_id.to_string(),
            self.op_type.as_str().to_string(),
            self.key.to_hex(),
            self.origin.0.to_hex(),
            self.hops.to_string(),
            self.contacted.to_string(),
            self.failed_fast.to_string(),
            self.failed_slow.to_string(),
            format_ms(self.start_us),
            format_ms(self.end_us),
            format_ms(self.duration_us()),
            self.success.to_string(),
            self.replicas.to_string(),
        ]
    }

    fn parse(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != RECORD_HEADER.len() {
            return Err(Error::Parse(format!(
                "expected {} fields, found {}",
                RECORD_HEADER.len(),
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<u64> {
            rec[i].parse().map_err(|_| {
                Error::Parse(format!("{}: bad integer {:?}", RECORD_HEADER[i], &rec[i]))
            })
        };
        let small = |i: usize| -> Result<u32> {
            u32::try_from(num(i)?)
                .map_err(|_| Error::Parse(format!("{}: out of range", RECORD_HEADER[i])))
        };
        let row = RecordRow {
            experiment_id: rec[0].to_string(),
            set_id: small(1)?,
            op_id: num(2)?,
            op_type: OpType::parse(&rec[3])?,
            key: Id256::from_hex(&rec[4])?,
            origin: NodeId(Id256::from_hex(&rec[5])?),
            hops: small(6)?,
            contacted: small(7)?,
            failed_fast: small(8)?,
            failed_slow: small(9)?,
            start_us: parse_ms(&rec[10])?,
            end_us: parse_ms(&rec[11])?,
            success: match &rec[13] {
                "true" => true,
                "false" => false,
                other => return Err(Error::Parse(format!("success: bad flag {other:?}"))),
            },
            replicas: num(14)? as usize,
        };
        if row.end_us < row.start_us || parse_ms(&rec[12])? != row.duration_us() {
            return Err(Error::Parse(format!(
                "op {}: inconsistent times",
                row.op_id
            )));
        }
        Ok(row)
    }
}

/// Inverse of [`format_ms`].
pub fn parse_ms(s: &str) -> Result<Micros> {
    let bad = || Error::Parse(format!("bad millisecond value {s:?}"));
    let (whole, frac) = s.split_once('.').ok_or_else(bad)?;
    if frac.len() != 3 || whole.is_empty() {
        return Err(bad());
    }
    let whole: u64 = whole.parse().map_err(|_| bad())?;
    let frac: u64 = frac.parse().map_err(|_| bad())?;
    Ok(whole * 1000 + frac)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Render rows, sorted by op id, as CSV.
pub fn records_csv(rows: &[RecordRow]) -> Vec<u8> {
    let mut sorted: Vec<&RecordRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.op_id);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_HEADER).expect("in-memory write");
    for r in sorted {
        w.write_record(r.fields()).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn export_records(rows: &[RecordRow], path: &Path) -> Result<()> {
    write_file(path, &records_csv(rows))
}

pub fn parse_records<R: Read>(reader: R) -> Result<Vec<RecordRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if header.iter().ne(RECORD_HEADER) {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(RecordRow::parse(
            &rec.map_err(|e| Error::Parse(e.to_string()))?,
        )?);
    }
    Ok(rows)
}

pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(f)
}

pub fn cdf_csv(metric: &str, cdf: &Cdf) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CDF_HEADER).expect("in-memory write");
    for (v, f) in cdf.points() {
        w.write_record([metric.to_string(), v.to_string(), f.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn export_cdf(metric: &str, cdf: &Cdf, path: &Path) -> Result<()> {
    write_file(path, &cdf_csv(metric, cdf))
}

/// Parse a CDF CSV back into (metric, value, fraction) triples.
pub fn read_cdf(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Parse(format!("bad number {:?}", &rec[i])))
        };
        out.push((rec[0].to_string(), num(1)?, num(2)?));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Percentiles {
    pub fn of(cdf: &Cdf) -> Self {
        Percentiles {
            p50: cdf.percentile(0.5),
            p90: cdf.percentile(0.9),
            p99: cdf.percentile(0.99),
        }
    }
}

/// Statistics derivable from the per-operation rows alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordStats {
    pub op_count: usize,
    pub success_rate: f64,
    pub hops: Option<Percentiles>,
    pub duration_ms: Option<Percentiles>,
}

impl RecordStats {
    pub fn from_rows(rows: &[RecordRow]) -> Self {
        let hops: Vec<f64> = rows.iter().map(|r| r.hops as f64).collect();
        let dur: Vec<f64> = rows
            .iter()
            .map(|r| r.duration_us() as f64 / 1000.0)
            .collect();
        let ok = rows.iter().filter(|r| r.success).count();
        RecordStats {
            op_count: rows.len(),
            success_rate: if rows.is_empty() {
                0.0
            } else {
                ok as f64 / rows.len() as f64
            },
            hops: cdf(&hops).ok().as_ref().map(Percentiles::of),
            duration_ms: cdf(&dur).ok().as_ref().map(Percentiles::of),
        }
    }
}

/// Count of nodes whose load falls in `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadBin {
    pub lo: u64,
    pub hi: u64,
    pub nodes: usize,
}

/// Power-of-two binned histogram: `[0,1), [1,2), [2,4), ...` up to the bin
/// holding the maximum.
pub fn load_histogram(loads: &[u64]) -> Vec<LoadBin> {
    let max = loads.iter().copied().max().unwrap_or(0);
    let mut bins = vec![LoadBin {
        lo: 0,
        hi: 1,
        nodes: 0,
    }];
    while bins.last().unwrap().hi <= max {
        let lo = bins.last().unwrap().hi;
        bins.push(LoadBin {
            lo,
            hi: lo * 2,
            nodes: 0,
        });
    }
    for &l in loads {
        let i = if l == 0 {
            0
        } else {
            64 - l.leading_zeros() as usize
        };
        bins[i].nodes += 1;
    }
    bins
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedingStats {
    pub seeders: usize,
    pub total_replicas: usize,
    pub mean_stored_per_node: f64,
    pub max_stored_per_node: usize,
    pub table_mean_load: f64,
    pub other_mean_load: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentAggregate {
    pub experiment_id: String,
    pub experiment: String,
    pub seed: u64,
    pub config: ConfigFile,
    pub op_count: usize,
    pub success_rate: f64,
    pub hops: Option<Percentiles>,
    pub duration_ms: Option<Percentiles>,
    pub set_count: usize,
    pub incomplete_sets: usize,
    pub set_duration_ms: Option<Percentiles>,
    pub seeding: Option<SeedingStats>,
    pub load_histogram: Vec<LoadBin>,
    pub total_duration_ms: f64,
    pub slot_ratio: f64,
    pub slot_fits: bool,
}

impl ExperimentAggregate {
    pub fn record_stats(&self) -> RecordStats {
        RecordStats {
            op_count: self.op_count,
            success_rate: self.success_rate,
            hops: self.hops,
            duration_ms: self.duration_ms,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("aggregate serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_value_cdf() {
        let c = cdf(&[5.0]).unwrap();
        assert_eq!(c.points().collect::<Vec<_>>(), vec![(5.0, 1.0)]);
    }

    #[test]
    fn ties_collapse() {
        let c = cdf(&[2.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(
            c.points().collect::<Vec<_>>(),
            vec![(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]
        );
        assert_eq!(c.percentile(0.25), 1.0);
        assert_eq!(c.percentile(0.26), 2.0);
        assert_eq!(c.percentile(0.75), 2.0);
        assert_eq!(c.percentile(1.0), 4.0);
    }

    #[test]
    fn empty_cdf_is_an_error() {
        assert!(matches!(cdf(&[]), Err(Error::EmptySample)));
    }

    #[test]
    fn uniform_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let c = cdf(&v).unwrap();
        assert!((c.percentile(0.99) - 0.99).abs() <= 0.02);
        assert!((c.percentile(0.5) - 0.5).abs() <= 0.02);
    }

    #[test]
    fn percentile_is_monotone_and_ends_at_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..500).map(|_| rng.gen_range(0..40) as f64).collect();
        let c = cdf(&v).unwrap();
        let mut prev = f64::MIN;
        for i in 0..=100 {
            let q = c.percentile(i as f64 / 100.0);
            assert!(q >= prev);
            prev = q;
        }
        assert_eq!(c.percentile(1.0), c.max());
        let fr: Vec<f64> = c.points().map(|p| p.1).collect();
        assert!(fr.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*fr.last().unwrap(), 1.0);
    }

    #[test]
    fn ms_parse_inverts_format() {
        for us in [0, 1, 999, 1000, 123_456_789] {
            assert_eq!(parse_ms(&format_ms(us)).unwrap(), us);
        }
        assert!(parse_ms("12").is_err());
        assert!(parse_ms("1.2345").is_err());
    }

    #[test]
    fn histogram_bins_cover_all_nodes() {
        let h = load_histogram(&[0, 0, 1, 2, 3, 4, 9]);
        assert_eq!(
            h.iter().map(|b| (b.lo, b.hi, b.nodes)).collect::<Vec<_>>(),
            vec![(0, 1, 2), (1, 2, 1), (2, 4, 2), (4, 8, 1), (8, 16, 1)]
        );
    }
}

//! File formats shared by the command-line tools.
//!
//! - Matrices: CSV, one sample per row. A first row containing any
//!   non-numeric field is treated as a header.
//! - Block layout: JSON sidecar `{"blocks": [p_1, ..., p_D]}`.
//! - Fit configuration: JSON `{"solver": {...}, "init": {...}}`, both parts
//!   optional.
//! - Directions, ground truth and manifests: JSON, see the types below.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{BlockLayout, ColumnStats};
use crate::error::{Error, Result};
use crate::init::InitConfig;
use crate::simulate::{GroundTruth, ScenarioSpec};
use crate::solver::{DirectionEstimate, SolverConfig};

/// A numeric matrix with optional column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: Array2<f64>,
}

pub fn read_csv_matrix<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut values = Vec::new();
    let mut ncols = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i == 0 && rec.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(rec.iter().map(str::to_owned).collect::<Vec<_>>());
            ncols = Some(rec.len());
            continue;
        }
        let width = *ncols.get_or_insert(rec.len());
        if rec.len() != width {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {width}",
                i + 1,
                rec.len()
            )));
        }
        for f in rec.iter() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: '{f}' is not a number", i + 1)))?;
            values.push(v);
        }
    }
    let ncols = ncols.unwrap_or(0);
    let nrows = if ncols == 0 { 0 } else { values.len() / ncols };
    let data = Array2::from_shape_vec((nrows, ncols), values)
        .map_err(|e| Error::Parse(format!("malformed matrix: {e}")))?;
    Ok(Table { header, data })
}

pub fn read_csv_matrix_file(path: &Path) -> Result<Table> {
    read_csv_matrix(BufReader::new(File::open(path)?))
}

/// Values are written with Rust's shortest round-trip formatting.
pub fn write_csv_matrix<W: Write>(out: W, data: ArrayView2<f64>, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(h) = header {
        if h.len() != data.ncols() {
            return Err(Error::DimensionMismatch {
                expected: data.ncols(),
                found: h.len(),
            });
        }
        w.write_record(h)?;
    }
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_matrix_file(path: &Path, data: ArrayView2<f64>, header: Option<&[String]>) -> Result<()> {
    write_csv_matrix(BufWriter::new(File::create(path)?), data, header)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Parses a blocks sidecar and validates the layout.
pub fn parse_blocks(json: &str) -> Result<BlockLayout> {
    let raw: BlockLayout = serde_json::from_str(json)?;
    BlockLayout::new(raw.block_sizes().to_vec())
}

pub fn read_blocks(path: &Path) -> Result<BlockLayout> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    parse_blocks(&s)
}

/// Solver and initializer settings read from one JSON file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub solver: SolverConfig,
    pub init: InitConfig,
}

/// One fitted direction as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    /// 1-based.
    pub index: usize,
    pub beta: Vec<f64>,
    /// `beta` split by block.
    pub loadings: Vec<Vec<f64>>,
    pub r_hat: f64,
    pub selected_iter: usize,
    pub iterations: usize,
}

/// Output of a fit: directions plus everything needed to score new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionsFile {
    pub blocks: Vec<usize>,
    /// Training column statistics; test data are transformed with these.
    pub standardization: Option<ColumnStats<f64>>,
    pub config: FitConfig,
    pub directions: Vec<DirectionRecord>,
}

impl DirectionsFile {
    pub fn new(
        layout: &BlockLayout,
        stats: Option<ColumnStats<f64>>,
        config: FitConfig,
        estimates: &[DirectionEstimate<f64>],
    ) -> Self {
        let directions = estimates
            .iter()
            .enumerate()
            .map(|(i, e)| DirectionRecord {
                index: i + 1,
                beta: e.beta.to_vec(),
                loadings: layout.ranges().map(|r| e.beta.slice(ndarray::s![r]).to_vec()).collect(),
                r_hat: e.r_hat,
                selected_iter: e.selected_iter,
                iterations: e.trajectory.len() - 1,
            })
            .collect();
        Self {
            blocks: layout.block_sizes().to_vec(),
            standardization: stats,
            config,
            directions,
        }
    }

    pub fn layout(&self) -> Result<BlockLayout> {
        BlockLayout::new(self.blocks.clone())
    }

    /// Directions as vectors, after checking their length.
    pub fn betas(&self) -> Result<Vec<Array1<f64>>> {
        let p: usize = self.blocks.iter().sum();
        self.directions
            .iter()
            .map(|d| {
                if d.beta.len() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        found: d.beta.len(),
                    });
                }
                Ok(Array1::from(d.beta.clone()))
            })
            .collect()
    }
}

/// Ground truth of one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub spec: ScenarioSpec,
    pub stream: u64,
    /// One unit vector per population direction.
    pub xi: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    /// `support[d][k]`, block-local indices.
    pub support: Vec<Vec<Vec<usize>>>,
}

impl TruthFile {
    pub fn new(spec: &ScenarioSpec, stream: u64, truth: &GroundTruth) -> Self {
        Self {
            spec: spec.clone(),
            stream,
            xi: truth.xi.columns().into_iter().map(|c| c.to_vec()).collect(),
            rho: truth.rho.clone(),
            support: truth.support.clone(),
        }
    }

    /// `p x K` matrix of the population directions.
    pub fn xi_matrix(&self) -> Result<Array2<f64>> {
        let k = self.xi.len();
        let p = self.xi.first().map_or(0, Vec::len);
        let mut out = Array2::zeros((p, k));
        for (c, v) in self.xi.iter().enumerate() {
            if v.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: v.len(),
                });
            }
            out.column_mut(c).assign(&ndarray::ArrayView1::from(v.as_slice()));
        }
        Ok(out)
    }
}

/// One simulated repetition in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rep: usize,
    pub stream: u64,
    pub train: String,
    pub test: String,
    pub truth: String,
}

/// Index of a simulation directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ScenarioSpec,
    pub reps: Vec<ManifestEntry>,
    pub blocks: String,
    pub version: String,
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub rep: String,
    pub direction: usize,
    pub correlation: f64,
    pub residual: Option<f64>,
}

/// Writes per-repetition rows followed by `mean`, `sd` and `se` rows per
/// direction. The residual column is omitted when no row has one.
pub fn write_metrics<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let with_residual = rows.iter().any(|r| r.residual.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["rep", "direction", "correlation"];
    if with_residual {
        header.push("residual");
    }
    w.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        let mut rec = vec![r.rep.clone(), r.direction.to_string(), r.correlation.to_string()];
        if with_residual {
            rec.push(fmt(r.residual));
        }
        w.write_record(&rec)?;
    }
    let max_dir = rows.iter().map(|r| r.direction).max().unwrap_or(0);
    for dir in 1..=max_dir {
        let corr: Vec<f64> = rows.iter().filter(|r| r.direction == dir).map(|r| r.correlation).collect();
        let res: Vec<f64> = rows
            .iter()
            .filter(|r| r.direction == dir)
            .filter_map(|r| r.residual)
            .collect();
        let (c, s) = (crate::evaluate::summarize(&corr), crate::evaluate::summarize(&res));
        for (label, cv, rv) in [("mean", c.mean, s.mean), ("sd", c.sd, s.sd), ("se", c.se, s.se)] {
            let mut rec = vec![label.to_string(), dir.to_string(), cv.to_string()];
            if with_residual {
                rec.push(if res.is_empty() { String::new() } else { rv.to_string() });
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

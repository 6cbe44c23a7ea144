//! On-disk artifact formats: operator matrices (JSON header + raw binary
//! payload), sweep CSV tables, and sweep JSON summaries. All writers are
//! deterministic: the same inputs produce byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockBasis, OperatorMatrix};
use crate::semiclassics::{SweepRecord, SweepResult};

/// Version stamp embedded in every artifact.
pub const SCHEMA_VERSION: u32 = 1;

const ORDERING: &str = "graded-lex";

/// Header stored next to an operator's binary payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorHeader {
    pub schema_version: u32,
    pub n: usize,
    pub k: f64,
    pub cutoff: usize,
    /// Basis ordering convention; always "graded-lex".
    pub ordering: String,
    pub rows: usize,
    pub cols: usize,
}

/// Write an operator as `<path>.json` (header) and `<path>.bin` (entries as
/// little-endian f64 pairs re,im in column-major order).
pub fn write_operator(m: &OperatorMatrix, path_stem: &Path) -> Result<()> {
    let header = OperatorHeader {
        schema_version: SCHEMA_VERSION,
        n: m.basis.n,
        k: m.basis.k,
        cutoff: m.basis.cutoff,
        ordering: ORDERING.to_string(),
        rows: m.entries.nrows(),
        cols: m.entries.ncols(),
    };
    let json = serde_json::to_string_pretty(&header)?;
    fs::write(path_stem.with_extension("json"), json + "\n")?;

    let mut bytes = Vec::with_capacity(16 * m.entries.len());
    for col in 0..m.entries.ncols() {
        for row in 0..m.entries.nrows() {
            let e = m.entries[(row, col)];
            bytes.extend_from_slice(&e.re.to_le_bytes());
            bytes.extend_from_slice(&e.im.to_le_bytes());
        }
    }
    fs::write(path_stem.with_extension("bin"), bytes)?;
    Ok(())
}

/// Read an operator written by `write_operator`, rebuilding and validating
/// its basis.
pub fn read_operator(path_stem: &Path) -> Result<OperatorMatrix> {
    let header: OperatorHeader =
        serde_json::from_str(&fs::read_to_string(path_stem.with_extension("json"))?)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported schema_version {}",
            header.schema_version
        )));
    }
    if header.ordering != ORDERING {
        return Err(Error::InvalidConfig(format!(
            "unsupported ordering {:?}",
            header.ordering
        )));
    }
    let basis = FockBasis::new(header.n, header.k, header.cutoff)?;
    if basis.len() != header.rows || header.rows != header.cols {
        return Err(Error::InvalidConfig(format!(
            "header dimensions {}x{} do not match basis size {}",
            header.rows,
            header.cols,
            basis.len()
        )));
    }
    let bytes = fs::read(path_stem.with_extension("bin"))?;
    if bytes.len() != 16 * header.rows * header.cols {
        return Err(Error::InvalidConfig(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            16 * header.rows * header.cols
        )));
    }
    let mut entries = DMatrix::<Complex64>::zeros(header.rows, header.cols);
    let mut off = 0;
    for col in 0..header.cols {
        for row in 0..header.rows {
            let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
            entries[(row, col)] = Complex64::new(re, im);
            off += 16;
        }
    }
    OperatorMatrix::new(basis, entries)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:e}"),
        None => "NA".to_string(),
    }
}

/// Render sweep records as CSV.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out =
        String::from("k,D,basis_size,res_first_order,res_first_order_full,res_commutator,wall_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.k,
            r.degree,
            r.basis_size,
            fmt_opt(r.res_first_order),
            fmt_opt(r.res_first_order_full),
            fmt_opt(r.res_commutator),
            r.wall_ms
        ));
    }
    out
}

/// JSON summary of a sweep: fits, flags, full record list, config echo, and
/// version stamps.
pub fn sweep_summary(result: &SweepResult) -> serde_json::Value {
    serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "fit_first_order": result.fit_first_order,
        "fit_commutator": result.fit_commutator,
        "exact_cancellation": result.exact_cancellation,
        "records": result.records,
        "config": result.config,
    })
}

/// Write the CSV and JSON artifacts named in the sweep's config (either may
/// be absent).
pub fn write_sweep_artifacts(result: &SweepResult) -> Result<()> {
    if let Some(path) = &result.config.csv_path {
        let mut file = fs::File::create(path)?;
        file.write_all(sweep_csv(&result.records).as_bytes())?;
    }
    if let Some(path) = &result.config.json_path {
        let mut file = fs::File::create(path)?;
        let text = serde_json::to_string_pretty(&sweep_summary(result))?;
        file.write_all(text.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

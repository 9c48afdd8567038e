//! CSV and footer writers. Numbers use 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bilevel_vi::oracle::VerifyRow;
use bilevel_vi::outer::IterationRecord;

use crate::SweepRow;

pub const TRACE_HEADER: &str = "k,f_value,hypergrad_norm_sq,dgap_final,inner_iters,oracle_err";
pub const VERIFY_HEADER: &str = "T,itd_fd_abs_err,itd_fd_rel_err,prop1_bound,lemma6_envelope_ok";
pub const SWEEP_HEADER: &str = "axis_value,min_grad_norm_sq,scaled_product";

/// `{:.16e}`: one digit before the point and sixteen after.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_lines(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()
}

pub fn write_trace_csv(path: &Path, records: &[IterationRecord]) -> std::io::Result<()> {
    write_lines(
        path,
        TRACE_HEADER,
        records.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.k,
                num(r.f_value),
                num(r.hypergrad_norm_sq),
                num(r.dgap_final),
                r.inner_iters,
                opt(r.oracle_err)
            )
        }),
    )
}

pub fn write_verify_csv(path: &Path, rows: &[VerifyRow]) -> std::io::Result<()> {
    write_lines(
        path,
        VERIFY_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r.t,
                num(r.abs_err),
                num(r.rel_err),
                num(r.prop1_bound),
                r.lemma6_envelope_ok
            )
        }),
    )
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> std::io::Result<()> {
    write_lines(
        path,
        SWEEP_HEADER,
        rows.iter()
            .map(|r| format!("{},{},{}", num(r.axis_value), num(r.min_grad_norm_sq), num(r.scaled_product))),
    )
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_meta(out: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(meta_path(out), text + "\n")
}

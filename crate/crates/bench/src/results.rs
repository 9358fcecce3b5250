//! Result rows and the versioned CSV they are written to.
//!
//! A results file starts with the line `# cake-bench results v1`, then a
//! header row with [`RESULT_COLUMNS`]. Aborted runs keep their parameter
//! columns, leave the measurements empty and carry `error: ...` in `status`.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use cake_core::{Mode, RunReport};

pub const RESULTS_VERSION_LINE: &str = "# cake-bench results v1";

pub const RESULT_COLUMNS: [&str; 15] = [
    "profile",
    "cost_model",
    "context_tokens",
    "chunk_size",
    "trace",
    "power_fraction",
    "codec",
    "mode",
    "ttft_us",
    "merge_point",
    "n_chunks",
    "computed_fraction",
    "compute_busy_us",
    "io_busy_us",
    "status",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub ttft_us: u64,
    pub merge_point: usize,
    pub n_chunks: usize,
    pub computed_fraction: f64,
    pub compute_busy_us: u64,
    pub io_busy_us: u64,
}

impl From<&RunReport> for Measurement {
    fn from(r: &RunReport) -> Self {
        Measurement {
            ttft_us: r.ttft.0,
            merge_point: r.merge_point,
            n_chunks: r.n_chunks,
            computed_fraction: r.computed_fraction,
            compute_busy_us: r.compute_busy.0,
            io_busy_us: r.io_busy.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub profile: String,
    pub cost_model: String,
    pub context_tokens: u32,
    pub chunk_size: u32,
    pub trace: String,
    pub power_fraction: f64,
    pub codec: String,
    pub mode: Mode,
    pub outcome: Result<Measurement, String>,
}

impl ResultRow {
    pub fn is_error(&self) -> bool {
        self.outcome.is_err()
    }

    pub fn measurement(&self) -> Option<&Measurement> {
        self.outcome.as_ref().ok()
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.profile.clone(),
            self.cost_model.clone(),
            self.context_tokens.to_string(),
            self.chunk_size.to_string(),
            self.trace.clone(),
            self.power_fraction.to_string(),
            self.codec.clone(),
            self.mode.to_string(),
        ];
        match &self.outcome {
            Ok(m) => f.extend([
                m.ttft_us.to_string(),
                m.merge_point.to_string(),
                m.n_chunks.to_string(),
                format!("{:.6}", m.computed_fraction),
                m.compute_busy_us.to_string(),
                m.io_busy_us.to_string(),
                "ok".to_string(),
            ]),
            Err(e) => {
                f.extend(std::iter::repeat_n(String::new(), 6));
                f.push(format!("error: {}", e.replace(['\n', '\r'], " ")));
            }
        }
        f
    }
}

pub fn write_results<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    writeln!(out, "{RESULTS_VERSION_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    let body = match text.split_once('\n') {
        Some((first, rest)) if first.trim_end() == RESULTS_VERSION_LINE => rest,
        _ => bail!("missing {RESULTS_VERSION_LINE:?} line"),
    };
    let mut r = csv::Reader::from_reader(body.as_bytes());
    if r.headers()?.iter().ne(RESULT_COLUMNS) {
        bail!("unexpected header {:?}", r.headers()?);
    }
    r.records().enumerate().map(|(i, rec)| parse_row(&rec?).with_context(|| format!("row {}", i + 1))).collect()
}

fn parse_row(rec: &csv::StringRecord) -> Result<ResultRow> {
    let get = |i: usize| rec.get(i).unwrap_or_default();
    let status = get(14);
    let outcome = if status == "ok" {
        Ok(Measurement {
            ttft_us: get(8).parse()?,
            merge_point: get(9).parse()?,
            n_chunks: get(10).parse()?,
            computed_fraction: get(11).parse()?,
            compute_busy_us: get(12).parse()?,
            io_busy_us: get(13).parse()?,
        })
    } else if let Some(msg) = status.strip_prefix("error: ") {
        Err(msg.to_string())
    } else {
        bail!("bad status {status:?}");
    };
    Ok(ResultRow {
        profile: get(0).to_string(),
        cost_model: get(1).to_string(),
        context_tokens: get(2).parse()?,
        chunk_size: get(3).parse()?,
        trace: get(4).to_string(),
        power_fraction: get(5).parse()?,
        codec: get(6).to_string(),
        mode: get(7).parse().map_err(anyhow::Error::msg)?,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(outcome: Result<Measurement, String>) -> ResultRow {
        ResultRow {
            profile: "p".into(),
            cost_model: "c".into(),
            context_tokens: 2048,
            chunk_size: 512,
            trace: "t".into(),
            power_fraction: 0.5,
            codec: "factor:8.6".into(),
            mode: Mode::Cake,
            outcome,
        }
    }

    #[test]
    fn round_trips_ok_and_error_rows() {
        let m = Measurement { ttft_us: 50, merge_point: 2, n_chunks: 4, computed_fraction: 0.5, compute_busy_us: 30, io_busy_us: 50 };
        let rows = vec![row(Ok(m)), row(Err("chunk missing, store empty".into()))];
        let mut buf = Vec::new();
        write_results(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_VERSION_LINE);
        assert_eq!(lines[1], RESULT_COLUMNS.join(","));
        assert_eq!(lines[2], "p,c,2048,512,t,0.5,factor:8.6,cake,50,2,4,0.500000,30,50,ok");
        assert_eq!(lines[3], "p,c,2048,512,t,0.5,factor:8.6,cake,,,,,,,\"error: chunk missing, store empty\"");
        assert_eq!(read_results(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn rejects_unversioned_files() {
        assert!(read_results("profile,cost_model\n".as_bytes()).is_err());
    }
}

//! CSV writers for run artifacts and the plot-ready export transforms.
//!
//! All floats are printed with `{}` (shortest round-trip form), so parsing a
//! written file recovers the exact f64 bits and rerunning an experiment
//! reproduces the metrics file byte for byte. Export transforms copy field
//! text verbatim — they never parse and reformat numbers.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{EvaeError, Result};
use crate::trainer::{MetricsRow, ScheduleTraceRow};
use crate::vga::VgaEvent;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render the metrics table; one `kl_i` column per latent dimension.
pub fn metrics_csv(rows: &[MetricsRow], latent_dim: usize) -> String {
    let mut out = String::from("iteration,beta,recon_loss,kl_total,total_loss,fitness");
    for d in 0..latent_dim {
        let _ = write!(out, ",kl_{d}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            r.beta,
            r.recon_loss,
            r.kl_total,
            r.total_loss,
            fmt_opt(r.fitness)
        );
        for v in &r.kl_per_dim {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Wall-clock timings live in their own file so the metrics CSV is
/// deterministic across reruns.
pub fn timing_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iteration,wall_clock_ms\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.iteration, r.wall_clock_ms);
    }
    out
}

pub fn events_csv(events: &[VgaEvent]) -> String {
    let mut out = String::from(
        "iteration,action,parent_prev,parent_cur,r_value,candidate_beta,fitness,accepted\n",
    );
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.iteration,
            e.action,
            fmt_opt(e.parent_prev),
            fmt_opt(e.parent_cur),
            fmt_opt(e.r_value),
            e.candidate_beta,
            e.fitness,
            e.accepted
        );
    }
    out
}

pub fn trace_csv(rows: &[ScheduleTraceRow]) -> String {
    let mut out = String::from("iteration,beta,kl_observed,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.iteration,
            r.beta,
            fmt_opt(r.kl_observed),
            fmt_opt(r.error)
        );
    }
    out
}

/// A CSV held as raw text fields, preserving the exact characters.
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| EvaeError::Config("empty csv: missing header".into()))?
            .split(',')
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            if fields.len() != header.len() {
                return Err(EvaeError::Config(format!(
                    "csv row {} has {} fields, header has {}",
                    i + 2,
                    fields.len(),
                    header.len()
                )));
            }
            rows.push(fields);
        }
        Ok(CsvTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EvaeError::Config(format!("metrics schema missing column {name}")))
    }
}

/// (rate, distortion) pairs ordered by iteration, values copied verbatim.
pub fn export_rd(metrics: &CsvTable) -> Result<String> {
    let it = metrics.column("iteration")?;
    let rate = metrics.column("kl_total")?;
    let dist = metrics.column("recon_loss")?;
    let mut out = String::from("iteration,rate,distortion\n");
    for row in &metrics.rows {
        let _ = writeln!(out, "{},{},{}", row[it], row[rate], row[dist]);
    }
    Ok(out)
}

/// Long-format per-dimension KL table: one row per (iteration, dim).
pub fn export_kl_long(metrics: &CsvTable) -> Result<String> {
    let it = metrics.column("iteration")?;
    let dims: Vec<(usize, usize)> = metrics
        .header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix("kl_")
                .and_then(|suffix| suffix.parse::<usize>().ok())
                .map(|d| (d, i))
        })
        .collect();
    if dims.is_empty() {
        return Err(EvaeError::Config(
            "metrics schema missing column kl_0".into(),
        ));
    }
    let mut out = String::from("iteration,dim,kl\n");
    for row in &metrics.rows {
        for (d, col) in &dims {
            let _ = writeln!(out, "{},{},{}", row[it], d, row[*col]);
        }
    }
    Ok(out)
}

/// Beta trace: (iteration, beta), values copied verbatim.
pub fn export_beta_trace(metrics: &CsvTable) -> Result<String> {
    let it = metrics.column("iteration")?;
    let beta = metrics.column("beta")?;
    let mut out = String::from("iteration,beta\n");
    for row in &metrics.rows {
        let _ = writeln!(out, "{},{}", row[it], row[beta]);
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

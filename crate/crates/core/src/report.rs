//! CSV output. Comma-separated, `.` decimal point, LF line endings, one
//! `#` provenance line followed by a header row.

use std::fmt::Write as _;
use std::io::Write;

use crate::config::Seeds;
use crate::drb::CircuitRecord;
use crate::esc::{trace_rows, EscKnob, IterationRecord};
use crate::harness::{GridResult, OffsetDemoRow, TraceRow};

pub const TRACE_COLUMNS: &str =
    "t_s,error_controlled,error_uncontrolled,gain_product,psi1,psi2,g2e1,g2e2,psi2q1,psi2q2,f_hat";
pub const GRID_COLUMNS: &str = "interval_minutes,circuits_per_depth,shots_per_circuit,iterations,n_samples,\
runtime_min_per_hour,suppression,mean_uncontrolled,mean_controlled,status";
pub const ESC_COLUMNS: &str = "iteration,knob,base,xi,delta";
pub const DRB_COLUMNS: &str = "iteration,depth,circuit_index,successes,shots";
pub const OFFSET_COLUMNS: &str = "iteration,t_s,gain_product,psi1,psi2,residual_gain_product,residual_psi1,\
residual_psi2,reference_p_hat,true_error";

/// Provenance written as the first line of every CSV file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: Seeds,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seeds: Seeds) -> Self {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
            seeds,
        }
    }

    fn line(&self) -> String {
        format!("# escg {} config={} {}\n", self.tool_version, self.config_hash, self.seeds)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn document(prov: &Provenance, columns: &str, body: impl IntoIterator<Item = String>) -> String {
    let mut out = prov.line();
    out.push_str(columns);
    out.push('\n');
    for row in body {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn trace_csv(prov: &Provenance, rows: &[TraceRow]) -> String {
    document(
        prov,
        TRACE_COLUMNS,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t_s,
                r.error_controlled,
                r.error_uncontrolled,
                r.gain_product,
                r.psi1,
                r.psi2,
                r.g2e1,
                r.g2e2,
                r.psi2q1,
                r.psi2q2,
                opt(r.f_hat)
            )
        }),
    )
}

pub fn grid_csv(prov: &Provenance, results: &[GridResult]) -> String {
    document(
        prov,
        GRID_COLUMNS,
        results.iter().map(|g| {
            let p = &g.point;
            let mut row = format!(
                "{},{},{},{},{},{},",
                p.interval_minutes, p.circuits_per_depth, p.shots_per_circuit, p.iterations, p.n_samples, g.runtime_minutes_per_hour
            );
            match &g.outcome {
                Ok(s) => {
                    let status = if s.degenerate { "degenerate" } else { "ok" };
                    let _ = write!(row, "{},{},{},{status}", s.ratio, s.mean_uncontrolled, s.mean_controlled);
                }
                Err(e) => {
                    let _ = write!(row, ",,,error: {}", e.replace([',', '\n'], ";"));
                }
            }
            row
        }),
    )
}

pub fn esc_csv(prov: &Provenance, history: &[IterationRecord], knobs: &[EscKnob]) -> String {
    document(
        prov,
        ESC_COLUMNS,
        trace_rows(history, knobs)
            .into_iter()
            .map(|r| format!("{},{},{},{},{}", r.iteration, r.knob, r.base, r.xi, r.delta)),
    )
}

pub fn drb_csv(prov: &Provenance, records: &[(usize, CircuitRecord)]) -> String {
    document(
        prov,
        DRB_COLUMNS,
        records
            .iter()
            .map(|(it, r)| format!("{},{},{},{},{}", it, r.depth, r.circuit_index, r.successes, r.shots)),
    )
}

pub fn offset_csv(prov: &Provenance, rows: &[OffsetDemoRow]) -> String {
    document(
        prov,
        OFFSET_COLUMNS,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.t_s,
                r.gain_product,
                r.psi1,
                r.psi2,
                r.residual_gain_product,
                r.residual_psi1,
                r.residual_psi2,
                r.reference_p_hat,
                r.true_error
            )
        }),
    )
}

pub fn write_file(path: &std::path::Path, contents: &str) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())
}

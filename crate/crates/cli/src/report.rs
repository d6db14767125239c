//! Output formats: CSV tables, JSON-lines traces and PPM images.

use paas_core::experiments::Table;
use paas_core::master::accounting::AccountingReport;
use paas_core::models::MandelbrotImage;
use paas_core::netsim::Trace;
use paas_core::sim::CloudStatus;
use serde::Serialize;
use std::io::{self, Write};

pub fn write_table_csv<W: Write>(w: W, table: &Table) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&table.columns)?;
    for row in &table.rows {
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Fixed-width rendering for the terminal.
pub fn render_table(table: &Table) -> String {
    let mut widths: Vec<usize> = table.columns.iter().map(|c| c.len()).collect();
    for row in &table.rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells.iter().enumerate().map(|(i, c)| format!("{c:<w$}", w = widths[i])).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    let mut out = line(table.columns.clone());
    out.push('\n');
    for row in &table.rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct AccountingRow<'a> {
    deployment_id: &'a str,
    instance_id: &'a str,
    size: &'a str,
    start_ms: u64,
    end_ms: u64,
    billed_hours: u64,
    amount: f64,
}

pub fn accounting_table(report: &AccountingReport) -> Table {
    Table {
        columns: vec!["deployment_id", "instance_id", "size", "start_ms", "end_ms", "billed_hours", "amount"],
        rows: report
            .records
            .iter()
            .map(|r| {
                vec![
                    r.deployment.clone(),
                    r.instance.clone(),
                    r.size.name().to_string(),
                    r.start.to_string(),
                    r.end.to_string(),
                    r.billed_hours.to_string(),
                    format!("{:.2}", r.amount),
                ]
            })
            .collect(),
    }
}

pub fn write_accounting_csv<W: Write>(w: W, report: &AccountingReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in &report.records {
        out.serialize(AccountingRow {
            deployment_id: &r.deployment,
            instance_id: &r.instance,
            size: r.size.name(),
            start_ms: r.start,
            end_ms: r.end,
            billed_hours: r.billed_hours,
            amount: r.amount,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn status_table(s: &CloudStatus) -> Table {
    Table {
        columns: vec!["worker", "uri", "running", "status", "busy", "executed"],
        rows: s
            .workers
            .iter()
            .map(|w| {
                vec![
                    w.label.clone(),
                    w.uri.to_string(),
                    w.running.to_string(),
                    w.status.map_or_else(|| "-".to_string(), |st| st.to_string()),
                    w.busy.to_string(),
                    w.executed.to_string(),
                ]
            })
            .collect(),
    }
}

pub fn status_summary(s: &CloudStatus) -> String {
    let m = &s.master;
    let proxy = match s.proxy_ready {
        Some(true) => "ready",
        Some(false) => "not ready",
        None => "none",
    };
    format!(
        "t={} ms mode={} deployment={} proxy={} online={} suspect={} dead={} queued={} inflight={} completed={}",
        s.now, s.mode, s.deployment, proxy, m.online, m.suspect, m.dead, m.queued, m.inflight, m.completed_units
    )
}

#[derive(Debug, Serialize)]
struct TraceLine<'a> {
    time: u64,
    kind: &'a str,
    src: &'a str,
    dst: &'a str,
    msg: Option<u64>,
    detail: &'a str,
}

pub fn write_trace_jsonl<W: Write>(mut w: W, trace: &Trace) -> io::Result<()> {
    for r in trace.records() {
        let line = TraceLine {
            time: r.time,
            kind: r.kind.name(),
            src: &r.source,
            dst: &r.destination,
            msg: r.message.map(|m| m.0),
            detail: &r.detail,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Binary PPM; points that never escape are black, the rest shade by iterations.
pub fn write_ppm<W: Write>(mut w: W, img: &MandelbrotImage) -> io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let max = img.max_iter.max(1) as f64;
    let mut buf = Vec::with_capacity(img.pixels.len() * 3);
    for &n in &img.pixels {
        if n >= img.max_iter {
            buf.extend_from_slice(&[0, 0, 0]);
        } else {
            let t = (n as f64 / max).sqrt();
            buf.extend_from_slice(&[(255.0 * t) as u8, (255.0 * t * t) as u8, (128.0 + 127.0 * t) as u8]);
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

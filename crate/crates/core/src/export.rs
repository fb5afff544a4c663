//! Output formats: Chrome trace events, CSV tables and markdown tables, plus
//! readers for the CSV formats.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::{Breakdown, SpeedupReport};
use crate::autotune::TrialRecord;
use crate::error::{Error, Result};
use crate::sched::{Resource, TaskGraph, Timeline};

/// One complete ("X") trace event. Times are microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub name: String,
    pub ph: String,
    pub ts: f64,
    pub dur: f64,
    pub pid: u32,
    pub tid: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChromeTrace {
    pub trace_events: Vec<TraceEvent>,
}

fn tid(resource: Resource) -> u32 {
    match resource {
        Resource::Compute => 0,
        Resource::Comm => 1,
        Resource::Delay => 2,
    }
}

pub fn chrome_trace(graph: &TaskGraph, timeline: &Timeline) -> ChromeTrace {
    ChromeTrace {
        trace_events: timeline
            .events
            .iter()
            .map(|e| TraceEvent {
                name: graph.task(e.task).label(),
                ph: "X".into(),
                ts: e.start * 1e6,
                dur: (e.end - e.start) * 1e6,
                pid: 0,
                tid: tid(e.resource),
            })
            .collect(),
    }
}

pub fn write_chrome_trace<W: Write>(out: W, graph: &TaskGraph, timeline: &Timeline) -> Result<()> {
    serde_json::to_writer_pretty(out, &chrome_trace(graph, timeline))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub task: usize,
    pub label: String,
    pub resource: Resource,
    pub start: f64,
    pub end: f64,
}

pub fn write_timeline_csv<W: Write>(out: W, graph: &TaskGraph, timeline: &Timeline) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in &timeline.events {
        w.serialize(TimelineRow {
            task: e.task,
            label: graph.task(e.task).label(),
            resource: e.resource,
            start: e.start,
            end: e.end,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timeline_csv<R: Read>(input: R) -> Result<Vec<TimelineRow>> {
    read_rows(input)
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reports_csv<W: Write>(out: W, reports: &[SpeedupReport]) -> Result<()> {
    write_rows(out, reports)
}

pub fn read_reports_csv<R: Read>(input: R) -> Result<Vec<SpeedupReport>> {
    read_rows(input)
}

pub fn write_trials_csv<W: Write>(out: W, trace: &[TrialRecord]) -> Result<()> {
    write_rows(out, trace)
}

pub fn read_trials_csv<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    read_rows(input)
}

/// `bytes,seconds` rows; a non-numeric first row is taken as a header.
pub fn read_measurements_csv<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "measurement row {} has {} fields, expected 2",
                i + 1,
                rec.len()
            )));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(d), Ok(t)) => out.push((d, t)),
            _ if i == 0 => continue,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "measurement row {} is not numeric: {:?}",
                    i + 1,
                    rec.iter().collect::<Vec<_>>()
                )))
            }
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<u64>) -> String {
    v.map_or_else(|| "-".into(), |b| b.to_string())
}

pub fn reports_markdown(reports: &[SpeedupReport]) -> String {
    let mut s = String::from(
        "| policy | buffer/partition (B) | P | t_ff (s) | t_bp (s) | t_rs (s) | t_ag (s) | t_ar (s) | comm sent (s) | iteration (s) | S_max | speedup | ratio |\n\
         |---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in reports {
        s.push_str(&format!(
            "| {} | {} | {} | {:.6} | {:.6} | {:.6} | {:.6} | {:.6} | {:.6} | {:.6} | {:.3} | {:.3} | {:.4} |\n",
            r.policy,
            fmt_opt(r.buffer_bytes),
            r.workers,
            r.t_ff,
            r.t_bp,
            r.t_rs,
            r.t_ag,
            r.t_ar,
            r.comm_seconds,
            r.iteration_seconds,
            r.s_max,
            r.simulated_speedup,
            r.ratio
        ));
    }
    s
}

pub fn breakdown_markdown(b: &Breakdown) -> String {
    format!(
        "| component | seconds |\n|---|---:|\n| feed-forward | {:.6} |\n| backpropagation | {:.6} |\n| exposed communication | {:.6} |\n| iteration | {:.6} |\n",
        b.ff_seconds, b.bp_seconds, b.exposed_comm_seconds, b.iteration_seconds
    )
}

pub fn trials_markdown(trace: &[TrialRecord]) -> String {
    let mut s =
        String::from("| trial | buffer (B) | throughput | best so far |\n|---:|---:|---:|---:|\n");
    for t in trace {
        let f = |v: Option<f64>| v.map_or_else(|| "failed".into(), |x| format!("{x:.3}"));
        s.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            t.trial,
            t.x_bytes,
            f(t.throughput),
            f(t.cumulative_best)
        ));
    }
    s
}

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::Micros;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// One request/response pair as seen by the attacker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub index: u64,
    pub send_us: Micros,
    /// `None` if no response ever arrived.
    pub recv_us: Option<Micros>,
}

impl PacketRecord {
    pub fn rtt_us(&self) -> Option<Micros> {
        self.recv_us.map(|r| r - self.send_us)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyTrace {
    pub rep: u32,
    pub records: Vec<PacketRecord>,
}

/// A controller event tagged with its repetition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub rep: u32,
    pub event: String,
    pub time_us: Micros,
    pub detail: String,
}

impl EventRow {
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail
            .split(' ')
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    rep: u32,
    packet_index: u64,
    send_us: Micros,
    recv_us: Option<Micros>,
    rtt_us: Option<Micros>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TraceError + '_ {
    move |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> TraceError + '_ {
    move |source| TraceError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Attacker trace CSV: `rep,packet_index,send_us,recv_us,rtt_us`.
pub fn write_traces<W: Write>(traces: &[LatencyTrace], out: W) -> Result<(), csv::Error> {
    let mut w = writer(out);
    w.write_record(["rep", "packet_index", "send_us", "recv_us", "rtt_us"])?;
    for t in traces {
        for r in &t.records {
            w.serialize(TraceRow {
                rep: t.rep,
                packet_index: r.index,
                send_us: r.send_us,
                recv_us: r.recv_us,
                rtt_us: r.rtt_us(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Controller CSV: `rep,event,time_us,detail`.
pub fn write_events<W: Write>(events: &[EventRow], out: W) -> Result<(), csv::Error> {
    let mut w = writer(out);
    w.write_record(["rep", "event", "time_us", "detail"])?;
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_traces(traces: &[LatencyTrace], path: &Path) -> Result<(), TraceError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_traces(traces, f).map_err(csv_err(path))
}

pub fn export_events(events: &[EventRow], path: &Path) -> Result<(), TraceError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_events(events, f).map_err(csv_err(path))
}

pub fn read_traces<R: Read>(input: R) -> Result<Vec<LatencyTrace>, csv::Error> {
    let mut traces: Vec<LatencyTrace> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: TraceRow = row?;
        if traces.last().is_none_or(|t| t.rep != row.rep) {
            traces.push(LatencyTrace {
                rep: row.rep,
                records: Vec::new(),
            });
        }
        traces.last_mut().expect("just pushed").records.push(PacketRecord {
            index: row.packet_index,
            send_us: row.send_us,
            recv_us: row.recv_us,
        });
    }
    Ok(traces)
}

pub fn read_events<R: Read>(input: R) -> Result<Vec<EventRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn load_traces(path: &Path) -> Result<Vec<LatencyTrace>, TraceError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_traces(f).map_err(csv_err(path))
}

pub fn load_events(path: &Path) -> Result<Vec<EventRow>, TraceError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_events(f).map_err(csv_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexStats {
    pub index: u64,
    pub n: usize,
    pub mean_us: f64,
    pub min_us: Micros,
    pub max_us: Micros,
    /// Population standard deviation.
    pub stddev_us: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub per_index: Vec<IndexStats>,
    /// Packet index the migration was triggered on, if any.
    pub migration_index: Option<u64>,
    /// Mean RTT over indices before the migration index.
    pub pre_mean_us: Option<f64>,
    /// Mean RTT over indices after the migration index.
    pub post_mean_us: Option<f64>,
}

impl Summary {
    pub fn ratio(&self) -> Option<f64> {
        Some(self.post_mean_us? / self.pre_mean_us?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = writer(out);
        w.write_record([
            "packet_index",
            "n",
            "mean_us",
            "min_us",
            "max_us",
            "stddev_us",
            "marker",
        ])?;
        for s in &self.per_index {
            let marker = if Some(s.index) == self.migration_index {
                "migration"
            } else {
                ""
            };
            w.write_record([
                s.index.to_string(),
                s.n.to_string(),
                format!("{:.3}", s.mean_us),
                s.min_us.to_string(),
                s.max_us.to_string(),
                format!("{:.3}", s.stddev_us),
                marker.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Aggregate RTTs by packet index across repetitions. Packets without a
/// response are left out.
pub fn summarize(traces: &[LatencyTrace], migration_index: Option<u64>) -> Summary {
    let mut by_index: std::collections::BTreeMap<u64, Vec<Micros>> = Default::default();
    for t in traces {
        for r in &t.records {
            if let Some(rtt) = r.rtt_us() {
                by_index.entry(r.index).or_default().push(rtt);
            }
        }
    }
    let per_index: Vec<IndexStats> = by_index
        .into_iter()
        .map(|(index, v)| {
            let n = v.len();
            let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
            let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            IndexStats {
                index,
                n,
                mean_us: mean,
                min_us: *v.iter().min().expect("non-empty"),
                max_us: *v.iter().max().expect("non-empty"),
                stddev_us: var.sqrt(),
            }
        })
        .collect();
    let mean_where = |f: &dyn Fn(u64) -> bool| {
        let (sum, n) = traces
            .iter()
            .flat_map(|t| &t.records)
            .filter(|r| f(r.index))
            .filter_map(|r| r.rtt_us())
            .fold((0u128, 0u64), |(s, n), x| (s + x as u128, n + 1));
        (n > 0).then(|| sum as f64 / n as f64)
    };
    let (pre_mean_us, post_mean_us) = match migration_index {
        Some(m) => (mean_where(&|i| i < m), mean_where(&|i| i > m)),
        None => (None, None),
    };
    Summary {
        per_index,
        migration_index,
        pre_mean_us,
        post_mean_us,
    }
}

//! Chrome trace event export (`chrome://tracing`, Perfetto).

use serde::{Deserialize, Serialize};

use super::{EventKind, ScheduleEvent};

/// A complete ("X") trace event. Field names and order are what trace
/// viewers expect; do not add fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub name: String,
    pub ph: String,
    pub ts: u64,
    pub dur: u64,
    pub pid: usize,
    pub tid: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChromeTrace {
    #[serde(rename = "traceEvents")]
    pub trace_events: Vec<TraceEvent>,
}

/// Seconds to integer microseconds, ties to even.
pub fn micros(seconds: f64) -> u64 {
    (seconds * 1e6).round_ties_even().max(0.0) as u64
}

fn event_name(e: &ScheduleEvent) -> String {
    let prefix = match e.kind {
        EventKind::Forward => "F",
        EventKind::Backward => "B",
        EventKind::Offload => "OFF",
        EventKind::Reload => "RLD",
        EventKind::Send => "SEND",
        EventKind::Recv => "RECV",
    };
    if e.stage != e.owner {
        format!("{prefix}{}[s{}]", e.subseq, e.owner)
    } else {
        format!("{prefix}{}", e.subseq)
    }
}

pub fn chrome_trace(events: &[ScheduleEvent]) -> ChromeTrace {
    ChromeTrace {
        trace_events: events
            .iter()
            .map(|e| {
                let ts = micros(e.t_start);
                TraceEvent {
                    name: event_name(e),
                    ph: "X".to_string(),
                    ts,
                    dur: micros(e.t_end).saturating_sub(ts),
                    pid: e.stage,
                    tid: e.stream.as_str().to_string(),
                }
            })
            .collect(),
    }
}

pub fn write_chrome_trace<W: std::io::Write>(
    events: &[ScheduleEvent],
    out: W,
) -> serde_json::Result<()> {
    serde_json::to_writer(out, &chrome_trace(events))
}

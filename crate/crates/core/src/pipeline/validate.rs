use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EventKind, ScheduleEvent, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Two events on one `(stage, stream)` overlap in time.
    Overlap,
    /// `second` starts before `first`, which it depends on, has ended.
    Dependency,
    /// An event has a negative start or ends before it starts.
    BadInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub first: ScheduleEvent,
    pub second: ScheduleEvent,
}

/// Check stream exclusivity, dependency order and time sanity.
///
/// Dependencies checked, per owning stage `k` and chunk `j`:
/// forward after forward `(k-1, j)` and `(k, j-1)`; offload after forward;
/// reload after offload; backward after its forward, its reload, backward
/// `(k+1, j)` and backward `(k, j+1)`.
pub fn validate_schedule(events: &[ScheduleEvent]) -> Vec<Violation> {
    let mut out = Vec::new();

    for e in events {
        if !(e.t_start >= 0.0) || !(e.t_end >= e.t_start) {
            out.push(Violation {
                kind: ViolationKind::BadInterval,
                first: e.clone(),
                second: e.clone(),
            });
        }
    }

    let mut streams: HashMap<(usize, Stream), Vec<&ScheduleEvent>> = HashMap::new();
    for e in events {
        streams.entry((e.stage, e.stream)).or_default().push(e);
    }
    let mut keys: Vec<_> = streams.keys().copied().collect();
    keys.sort();
    for key in keys {
        let list = streams.get_mut(&key).unwrap();
        list.sort_by(|a, b| {
            a.t_start
                .total_cmp(&b.t_start)
                .then(a.t_end.total_cmp(&b.t_end))
        });
        for w in list.windows(2) {
            if w[1].t_start < w[0].t_end {
                out.push(Violation {
                    kind: ViolationKind::Overlap,
                    first: w[0].clone(),
                    second: w[1].clone(),
                });
            }
        }
    }

    // A task may be spread over several hosting stages; its interval is the
    // hull of its events. Send/recv halves are not part of the check.
    let mut tasks: HashMap<(EventKind, usize, usize), (f64, f64, &ScheduleEvent)> = HashMap::new();
    for e in events {
        if matches!(e.kind, EventKind::Send | EventKind::Recv) {
            continue;
        }
        tasks
            .entry((e.kind, e.owner, e.subseq))
            .and_modify(|(s, t, _)| {
                *s = s.min(e.t_start);
                *t = t.max(e.t_end);
            })
            .or_insert((e.t_start, e.t_end, e));
    }
    let mut ids: Vec<_> = tasks.keys().copied().collect();
    ids.sort();
    for (kind, k, j) in ids {
        let (start, _, event) = tasks[&(kind, k, j)];
        let mut need: Vec<(EventKind, usize, usize)> = Vec::new();
        match kind {
            EventKind::Forward => {
                if k > 0 {
                    need.push((EventKind::Forward, k - 1, j));
                }
                if j > 0 {
                    need.push((EventKind::Forward, k, j - 1));
                }
            }
            EventKind::Offload => need.push((EventKind::Forward, k, j)),
            EventKind::Reload => need.push((EventKind::Offload, k, j)),
            EventKind::Backward => {
                need.push((EventKind::Forward, k, j));
                need.push((EventKind::Reload, k, j));
                need.push((EventKind::Backward, k + 1, j));
                need.push((EventKind::Backward, k, j + 1));
            }
            EventKind::Send | EventKind::Recv => {}
        }
        for dep in need {
            if let Some(&(_, dep_end, dep_event)) = tasks.get(&dep) {
                if start < dep_end {
                    out.push(Violation {
                        kind: ViolationKind::Dependency,
                        first: dep_event.clone(),
                        second: event.clone(),
                    });
                }
            }
        }
    }
    out
}

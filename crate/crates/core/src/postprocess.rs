//! Event extraction from per-sample labels and the short-event correction
//! rules.
//!
//! Predicted events shorter than `min_len` are corrected: same-class
//! neighbors merge into one event, differing neighbors absorb the short
//! event into the longer side, and a boundary event with a single neighbor
//! is absorbed into it. Rules apply left to right until a fixpoint.

use crate::error::{Error, Result};

/// Half-open sample interval `[onset, offset)` with a class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub onset: usize,
    pub offset: usize,
    pub class_id: u16,
}

impl Event {
    pub fn new(onset: usize, offset: usize, class_id: u16) -> Event {
        Event { onset, offset, class_id }
    }

    pub fn len(&self) -> usize {
        self.offset - self.onset
    }

    pub fn is_empty(&self) -> bool {
        self.offset <= self.onset
    }
}

/// Check the event-sequence invariants: non-empty events, sorted,
/// non-overlapping, contiguous.
pub fn validate_events(events: &[Event]) -> Result<()> {
    for (i, e) in events.iter().enumerate() {
        if e.is_empty() {
            return Err(Error::Data(format!("event {i} is empty: [{}, {})", e.onset, e.offset)));
        }
        if i > 0 && events[i - 1].offset != e.onset {
            return Err(Error::Data(format!(
                "events {} and {i} are not contiguous: ..{}) vs [{}..",
                i - 1,
                events[i - 1].offset,
                e.onset
            )));
        }
    }
    Ok(())
}

/// Run-length encode a label stream into maximal same-class events.
pub fn extract_events(labels: &[u16]) -> Vec<Event> {
    let mut events = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            events.push(Event::new(start, i, labels[start]));
            start = i;
        }
    }
    events
}

/// Expand events back to a per-sample label stream.
pub fn events_to_labels(events: &[Event]) -> Vec<u16> {
    let len = events.last().map(|e| e.offset).unwrap_or(0);
    let mut labels = vec![0u16; len];
    for e in events {
        for l in &mut labels[e.onset..e.offset] {
            *l = e.class_id;
        }
    }
    labels
}

fn coalesce(events: &mut Vec<Event>) {
    let mut i = 0;
    while i + 1 < events.len() {
        if events[i].class_id == events[i + 1].class_id {
            events[i].offset = events[i + 1].offset;
            events.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

/// Apply the short-event correction rules until no event shorter than
/// `min_len` remains (a single event covering the window is allowed to stay
/// short). Sample coverage is preserved exactly.
pub fn merge_short(events: &[Event], min_len: usize) -> Result<Vec<Event>> {
    validate_events(events)?;
    let mut ev = events.to_vec();
    coalesce(&mut ev);
    while let Some(i) = ev.iter().position(|e| e.len() < min_len) {
        if ev.len() == 1 {
            break; // degenerate: one short event covering the whole window
        }
        let short = ev[i];
        if i > 0 && i + 1 < ev.len() {
            let (prev, next) = (ev[i - 1], ev[i + 1]);
            if prev.class_id == next.class_id {
                // same class on both sides: one merged event
                ev[i - 1].offset = next.offset;
                ev.drain(i..=i + 1);
            } else if prev.len() >= next.len() {
                // longer side absorbs; ties go left
                ev[i - 1].offset = short.offset;
                ev.remove(i);
            } else {
                ev[i + 1].onset = short.onset;
                ev.remove(i);
            }
        } else if i == 0 {
            ev[1].onset = short.onset;
            ev.remove(0);
        } else {
            ev[i - 1].offset = short.offset;
            ev.remove(i);
        }
        coalesce(&mut ev);
    }
    Ok(ev)
}

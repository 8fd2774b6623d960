//! Seeded arrival schedules shared by the control- and user-plane injectors.
//!
//! Schedules hold offsets in milliseconds from the start of injection; the
//! orchestrator anchors them after warmup.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, DatasetError};
use crate::rng::Stream;
use crate::scenario::{ArrivalSpec, RandomProcess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub index: u64,
    pub t_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchedule {
    events: Vec<ScheduledEvent>,
}

impl EventSchedule {
    /// Index a nondecreasing list of offsets.
    pub fn from_times(times: Vec<u64>) -> Self {
        debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        let events = times.into_iter().enumerate().map(|(i, t_ms)| ScheduledEvent { index: i as u64, t_ms }).collect();
        EventSchedule { events }
    }

    pub fn events(&self) -> &[ScheduledEvent] {
        &self.events
    }

    pub fn times(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().map(|e| e.t_ms)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Keep the first `n` events.
    pub fn truncated(&self, n: usize) -> Self {
        EventSchedule { events: self.events.iter().take(n).copied().collect() }
    }

    /// CSV `index,t_ms`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.events {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ArrivalError {
    #[error("trace-driven arrivals: {0}")]
    Dataset(#[from] DatasetError),
}

/// Expand an arrival spec over `duration_s` seconds.
pub fn build_schedule(spec: &ArrivalSpec, duration_s: u64, seed: u64) -> Result<EventSchedule, ArrivalError> {
    let duration_ms = duration_s * 1000;
    let mut rng = Stream::new(seed);
    let times = match spec {
        // A zero gap would fire forever at t=0; it means a single shot.
        ArrivalSpec::Sequential { gap_ms: 0 } => vec![0],
        ArrivalSpec::Sequential { gap_ms } => (0..duration_ms).step_by(*gap_ms as usize).collect(),
        ArrivalSpec::Random { rate_per_s, process: RandomProcess::Poisson } => {
            let mean_ms = 1000.0 / rate_per_s;
            let mut times = Vec::new();
            let mut t = rng.exponential(mean_ms);
            while t < duration_ms as f64 {
                times.push(t as u64);
                t += rng.exponential(mean_ms);
            }
            times
        }
        ArrivalSpec::Random { rate_per_s, process: RandomProcess::Uniform } => {
            let n = (rate_per_s * duration_s as f64).round() as u64;
            uniform_in(&mut rng, n, 0, duration_ms)
        }
        ArrivalSpec::Burst { count, window_s, offset_s } => uniform_in(&mut rng, *count, offset_s * 1000, window_s * 1000),
        ArrivalSpec::TraceDriven { series_ref, window_s, scale } => {
            let records = dataset::load_cell_records(&series_ref.file)?;
            let agg = dataset::aggregate_cell_series(records, series_ref.interval_s);
            let series = dataset::aggregate_neighbors(&agg.series, &series_ref.cells)?;
            let sched = dataset::series_to_schedule(&series, *window_s, *scale, seed)?;
            sched.times().take_while(|t| *t < duration_ms).collect()
        }
    };
    Ok(EventSchedule::from_times(times))
}

fn uniform_in(rng: &mut Stream, n: u64, start_ms: u64, width_ms: u64) -> Vec<u64> {
    if width_ms == 0 {
        return vec![start_ms; n as usize];
    }
    let mut times: Vec<u64> = (0..n).map(|_| start_ms + rng.below(width_ms)).collect();
    times.sort_unstable();
    times
}

/// Time-sorted union; equal offsets keep input-schedule order.
pub fn merge_schedules(schedules: &[EventSchedule]) -> EventSchedule {
    let tagged = merge_tagged(schedules);
    EventSchedule::from_times(tagged.into_iter().map(|(t, _, _)| t).collect())
}

/// Merged `(t_ms, source schedule, index within source)` triples.
pub fn merge_tagged(schedules: &[EventSchedule]) -> Vec<(u64, usize, u64)> {
    let mut all: Vec<(u64, usize, u64)> = schedules
        .iter()
        .enumerate()
        .flat_map(|(s, sched)| sched.events.iter().map(move |e| (e.t_ms, s, e.index)))
        .collect();
    // Sources are already sorted, so a stable sort on time alone keeps ties in
    // source order and per-source order intact.
    all.sort_by_key(|(t, _, _)| *t);
    all
}

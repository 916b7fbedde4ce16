//! Event data model, event triggering from log-brightness changes, and
//! discretization of event streams into binary spike volumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of the brightness change that produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_i8(value: i8) -> Option<Self> {
        match value {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    /// Spike-tensor channel: 0 for ON events, 1 for OFF events.
    pub fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }
}

/// Ground-truth class carried by an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Background,
    Foreground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Timestamp in microseconds.
    pub t: u64,
    pub p: Polarity,
    pub label: Option<Label>,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Event {
            x,
            y,
            t,
            p,
            label: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn is_foreground(&self) -> bool {
        self.label == Some(Label::Foreground)
    }
}

/// Time-ordered events from one sensor over the half-open window `[t_start, t_end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub width: u16,
    pub height: u16,
    pub t_start: u64,
    pub t_end: u64,
}

impl EventStream {
    pub fn new(width: u16, height: u16, t_start: u64, t_end: u64) -> Self {
        EventStream {
            events: Vec::new(),
            width,
            height,
            t_start,
            t_end,
        }
    }

    /// Builds a stream, sorting events stably by timestamp and validating it.
    pub fn from_events(
        mut events: Vec<Event>,
        width: u16,
        height: u16,
        t_start: u64,
        t_end: u64,
    ) -> Result<Self> {
        events.sort_by_key(|e| e.t);
        let stream = EventStream {
            events,
            width,
            height,
            t_start,
            t_end,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration_us(&self) -> u64 {
        self.t_end.saturating_sub(self.t_start)
    }

    /// Checks bounds, ordering and window membership of every event.
    pub fn validate(&self) -> Result<()> {
        if self.t_end < self.t_start {
            return Err(Error::InvalidStream(format!(
                "t_end {} precedes t_start {}",
                self.t_end, self.t_start
            )));
        }
        let mut prev = self.t_start;
        for (index, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::EventOutOfBounds {
                    index,
                    x: e.x,
                    y: e.y,
                    width: self.width,
                    height: self.height,
                });
            }
            if e.t < self.t_start || e.t >= self.t_end {
                return Err(Error::InvalidStream(format!(
                    "event {index} at t={} outside window [{}, {})",
                    e.t, self.t_start, self.t_end
                )));
            }
            if e.t < prev {
                return Err(Error::InvalidStream(format!(
                    "event {index} at t={} is earlier than its predecessor ({prev})",
                    e.t
                )));
            }
            prev = e.t;
        }
        Ok(())
    }

    /// Events with `t` in `[from, to)` as a new stream with that window.
    pub fn slice(&self, from: u64, to: u64) -> EventStream {
        let lo = self.events.partition_point(|e| e.t < from);
        let hi = self.events.partition_point(|e| e.t < to);
        EventStream {
            events: self.events[lo..hi].to_vec(),
            width: self.width,
            height: self.height,
            t_start: from,
            t_end: to,
        }
    }

    /// Same window, only foreground-labelled events.
    pub fn foreground(&self) -> EventStream {
        EventStream {
            events: self.events.iter().copied().filter(Event::is_foreground).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> EventStream {
        EventStream::new(self.width, self.height, self.t_start, self.t_end)
    }

    /// Per-pixel event count (row-major `y * width + x`).
    pub fn pixel_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.width as usize * self.height as usize];
        for e in &self.events {
            counts[e.y as usize * self.width as usize + e.x as usize] += 1;
        }
        counts
    }
}

/// Emits a polarity when the log-brightness change reaches the trigger threshold.
pub fn trigger_event(log_prev: f64, log_curr: f64, threshold: f64) -> Result<Option<Polarity>> {
    if !log_prev.is_finite() || !log_curr.is_finite() || !threshold.is_finite() {
        return Err(Error::InvalidParam(
            "trigger inputs must be finite".to_string(),
        ));
    }
    if threshold <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "trigger threshold must be positive, got {threshold}"
        )));
    }
    let delta = log_curr - log_prev;
    Ok(if delta >= threshold {
        Some(Polarity::On)
    } else if -delta >= threshold {
        Some(Polarity::Off)
    } else {
        None
    })
}

/// Shape of a spatio-temporal volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
}

impl Dims {
    pub fn new(channels: usize, height: usize, width: usize, steps: usize) -> Self {
        Dims {
            channels,
            height,
            width,
            steps,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of values in one time step.
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Storage is time-major with channels innermost: `[k][y][x][c]`.
    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize, k: usize) -> usize {
        ((k * self.height + y) * self.width + x) * self.channels + c
    }
}

/// Binary spike volume indexed `(channel, y, x, time_bin)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    dims: Dims,
    bin_width_us: u64,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(dims: Dims, bin_width_us: u64) -> Self {
        SpikeTensor {
            dims,
            bin_width_us,
            data: vec![0; dims.len()],
        }
    }

    /// Wraps raw `[k][y][x][c]` data; every entry must be 0 or 1.
    pub fn from_data(dims: Dims, bin_width_us: u64, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParam(
                "spike tensor entries must be 0 or 1".to_string(),
            ));
        }
        Ok(SpikeTensor {
            dims,
            bin_width_us,
            data,
        })
    }

    /// Binarizes real-valued spikes (`v >= 0.5` becomes 1).
    pub fn from_values(dims: Dims, bin_width_us: u64, values: &[f64]) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::Shape(format!(
                "value length {} does not match dims {:?}",
                values.len(),
                dims
            )));
        }
        Ok(SpikeTensor {
            dims,
            bin_width_us,
            data: values.iter().map(|&v| u8::from(v >= 0.5)).collect(),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bin_width_us(&self) -> u64 {
        self.bin_width_us
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize, k: usize) -> bool {
        self.data[self.dims.index(c, y, x, k)] != 0
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, k: usize, spike: bool) {
        let i = self.dims.index(c, y, x, k);
        self.data[i] = u8::from(spike);
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Fraction of entries that are 1.
    pub fn density(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn to_values(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Keeps bins `< keep` and zeroes the rest, preserving the number of bins.
    pub fn prefix(&self, keep: usize) -> SpikeTensor {
        let mut out = self.clone();
        let cut = keep.min(self.dims.steps) * self.dims.frame_len();
        out.data[cut..].iter_mut().for_each(|v| *v = 0);
        out
    }

    /// Appends `extra` silent bins.
    pub fn extended(&self, extra: usize) -> SpikeTensor {
        let mut out = self.clone();
        out.dims.steps += extra;
        out.data.resize(out.dims.len(), 0);
        out
    }

    /// Re-expands each set bin into one event at the start of the bin.
    pub fn to_events(&self, t_start: u64) -> Vec<Event> {
        let d = self.dims;
        let mut events = Vec::new();
        for k in 0..d.steps {
            for y in 0..d.height {
                for x in 0..d.width {
                    for c in 0..d.channels {
                        if self.get(c, y, x, k) {
                            let p = if c == 0 { Polarity::On } else { Polarity::Off };
                            events.push(Event::new(
                                x as u16,
                                y as u16,
                                t_start + k as u64 * self.bin_width_us,
                                p,
                            ));
                        }
                    }
                }
            }
        }
        events
    }
}

/// Per-pixel spike counts summed over channels and time bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeProjection {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl SpikeProjection {
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// 16-bit grey levels for PGM export, saturating.
    pub fn to_u16(&self) -> Vec<u16> {
        self.counts.iter().map(|&c| c.min(u16::MAX as u32) as u16).collect()
    }
}

/// Collapses a stream into binary bins of `bin_width_us` on a `(width, height)` grid.
pub fn discretize(stream: &EventStream, bin_width_us: u64, dims: (usize, usize)) -> Result<SpikeTensor> {
    if bin_width_us == 0 {
        return Err(Error::InvalidParam("bin width must be positive".to_string()));
    }
    if stream.t_end <= stream.t_start {
        return Err(Error::InvalidStream(format!(
            "empty window [{}, {})",
            stream.t_start, stream.t_end
        )));
    }
    let (width, height) = dims;
    let steps = stream.duration_us().div_ceil(bin_width_us) as usize;
    let mut tensor = SpikeTensor::zeros(Dims::new(2, height, width, steps), bin_width_us);
    for (index, e) in stream.events.iter().enumerate() {
        if e.x as usize >= width || e.y as usize >= height {
            return Err(Error::EventOutOfBounds {
                index,
                x: e.x,
                y: e.y,
                width: width as u16,
                height: height as u16,
            });
        }
        if e.t < stream.t_start || e.t >= stream.t_end {
            return Err(Error::InvalidStream(format!(
                "event {index} at t={} outside window [{}, {})",
                e.t, stream.t_start, stream.t_end
            )));
        }
        let k = ((e.t - stream.t_start) / bin_width_us) as usize;
        tensor.set(e.p.channel(), e.y as usize, e.x as usize, k, true);
    }
    Ok(tensor)
}

pub fn project(tensor: &SpikeTensor) -> SpikeProjection {
    let d = tensor.dims();
    let mut counts = vec![0u32; d.pixels()];
    for frame in tensor.data().chunks_exact(d.frame_len()) {
        for (count, px) in counts.iter_mut().zip(frame.chunks_exact(d.channels)) {
            *count += px.iter().map(|&v| v as u32).sum::<u32>();
        }
    }
    SpikeProjection {
        height: d.height,
        width: d.width,
        counts,
    }
}

/// Real-valued projection of a `[k][y][x][c]` value volume.
pub fn project_values(values: &[f64], dims: Dims) -> Vec<f64> {
    let mut sums = vec![0.0; dims.pixels()];
    for frame in values.chunks_exact(dims.frame_len()) {
        for (sum, px) in sums.iter_mut().zip(frame.chunks_exact(dims.channels)) {
            *sum += px.iter().sum::<f64>();
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trigger_examples() {
        assert_eq!(trigger_event(0.0, 0.0, 0.2).unwrap(), None);
        assert_eq!(trigger_event(0.0, 0.3, 0.2).unwrap(), Some(Polarity::On));
        // |delta| == threshold is inclusive; 0.5 - 0.3 rounds to exactly 0.2 here.
        assert_eq!(trigger_event(0.5, 0.3, 0.2).unwrap(), Some(Polarity::Off));
        assert_eq!(trigger_event(0.25, 0.0, 0.25).unwrap(), Some(Polarity::Off));
        assert!(trigger_event(f64::NAN, 0.0, 0.2).is_err());
        assert!(trigger_event(0.0, f64::INFINITY, 0.2).is_err());
    }

    #[test]
    fn same_bin_events_collapse() {
        let events = vec![
            Event::new(3, 2, 100, Polarity::On),
            Event::new(3, 2, 900, Polarity::On),
        ];
        let s = EventStream::from_events(events, 8, 8, 0, 2000).unwrap();
        let t = discretize(&s, 1000, (8, 8)).unwrap();
        assert_eq!(t.dims(), Dims::new(2, 8, 8, 2));
        assert_eq!(t.count(), 1);
        assert!(t.get(0, 2, 3, 0));
    }

    #[test]
    fn empty_stream_gives_zero_tensor() {
        let s = EventStream::new(16, 8, 0, 10_000);
        let t = discretize(&s, 1000, (16, 8)).unwrap();
        assert_eq!(t.dims(), Dims::new(2, 8, 16, 10));
        assert_eq!(t.count(), 0);
    }

    #[test]
    fn bin_boundary_goes_to_next_bin() {
        let s = EventStream::from_events(vec![Event::new(1, 1, 1000, Polarity::On)], 4, 4, 0, 3000)
            .unwrap();
        let t = discretize(&s, 1000, (4, 4)).unwrap();
        assert!(t.get(0, 1, 1, 1));
        assert_eq!(t.count(), 1);
    }

    #[test]
    fn partial_last_bin_rounds_up() {
        let s = EventStream::new(4, 4, 0, 2500);
        assert_eq!(discretize(&s, 1000, (4, 4)).unwrap().dims().steps, 3);
    }

    #[test]
    fn discretize_errors() {
        let s = EventStream {
            events: vec![Event::new(9, 0, 0, Polarity::On)],
            width: 16,
            height: 16,
            t_start: 0,
            t_end: 100,
        };
        assert!(matches!(
            discretize(&s, 10, (8, 8)),
            Err(Error::EventOutOfBounds { .. })
        ));
        let empty = EventStream::new(8, 8, 50, 50);
        assert!(discretize(&empty, 10, (8, 8)).is_err());
        assert!(discretize(&EventStream::new(8, 8, 0, 10), 0, (8, 8)).is_err());
    }

    #[test]
    fn opposite_polarities_share_a_bin() {
        let s = EventStream::from_events(
            vec![
                Event::new(0, 0, 10, Polarity::On),
                Event::new(0, 0, 20, Polarity::Off),
            ],
            2,
            2,
            0,
            1000,
        )
        .unwrap();
        let t = discretize(&s, 1000, (2, 2)).unwrap();
        assert!(t.get(0, 0, 0, 0) && t.get(1, 0, 0, 0));
    }

    #[test]
    fn projection_examples() {
        let d = Dims::new(2, 8, 8, 4);
        let mut t = SpikeTensor::zeros(d, 1000);
        assert!(project(&t).counts.iter().all(|&c| c == 0));
        t.set(0, 3, 5, 0, true);
        let p = project(&t);
        assert_eq!(p.get(3, 5), 1);
        assert_eq!(p.counts.iter().sum::<u32>(), 1);
        t.set(1, 3, 5, 0, true);
        t.set(0, 3, 5, 2, true);
        t.set(1, 3, 5, 3, true);
        assert_eq!(project(&t).get(3, 5), 4);
    }

    #[test]
    fn validate_rejects_unsorted_and_out_of_window() {
        let mut s = EventStream::new(4, 4, 0, 100);
        s.events = vec![Event::new(0, 0, 50, Polarity::On), Event::new(0, 0, 10, Polarity::On)];
        assert!(s.validate().is_err());
        s.events = vec![Event::new(0, 0, 100, Polarity::On)];
        assert!(s.validate().is_err());
    }

    #[test]
    fn slice_is_half_open() {
        let events = (0..10).map(|i| Event::new(0, 0, i * 100, Polarity::On)).collect();
        let s = EventStream::from_events(events, 1, 1, 0, 1000).unwrap();
        let w = s.slice(200, 500);
        assert_eq!(w.events.iter().map(|e| e.t).collect::<Vec<_>>(), vec![200, 300, 400]);
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        prop::collection::vec((0u16..6, 0u16..5, 0u64..5000, any::<bool>()), 0..60).prop_map(
            |raw| {
                let events = raw
                    .into_iter()
                    .map(|(x, y, t, on)| {
                        Event::new(x, y, t, if on { Polarity::On } else { Polarity::Off })
                    })
                    .collect();
                EventStream::from_events(events, 6, 5, 0, 5000).unwrap()
            },
        )
    }

    #[test]
    fn extended_appends_silent_bins() {
        let mut t = SpikeTensor::zeros(Dims::new(2, 2, 3, 4), 1000);
        t.set(1, 1, 2, 3, true);
        let e = t.extended(5);
        assert_eq!(e.dims(), Dims::new(2, 2, 3, 9));
        assert!(e.get(1, 1, 2, 3));
        assert_eq!(e.count(), 1);
        assert_eq!(e.prefix(4), e);
    }

    proptest! {
        #[test]
        fn discretize_is_idempotent(s in arb_stream(), bin in 1u64..2000) {
            let t = discretize(&s, bin, (6, 5)).unwrap();
            let again = EventStream::from_events(t.to_events(0), 6, 5, 0, 5000).unwrap();
            prop_assert_eq!(discretize(&again, bin, (6, 5)).unwrap(), t);
        }

        #[test]
        fn projection_bounded_by_event_counts(s in arb_stream(), bin in 1u64..2000) {
            let t = discretize(&s, bin, (6, 5)).unwrap();
            prop_assert!(t.data().iter().all(|&v| v <= 1));
            let proj = project(&t);
            let counts = s.pixel_counts();
            let mut seen = std::collections::HashSet::new();
            let mut collisions = vec![false; counts.len()];
            for e in &s.events {
                let key = (e.x, e.y, e.p, e.t / bin);
                if !seen.insert(key) {
                    collisions[e.y as usize * 6 + e.x as usize] = true;
                }
            }
            for i in 0..counts.len() {
                prop_assert!(proj.counts[i] <= counts[i]);
                prop_assert_eq!(proj.counts[i] == counts[i], !collisions[i]);
            }
        }
    }
}

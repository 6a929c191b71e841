//! Asynchronous grouping of events into windows.
//!
//! Events update an adaptive time surface with linear time decay (two
//! channels, On and Off). After every update the surface's non-zero grid
//! entropy is measured; a window is closed as soon as that entropy falls in a
//! calibrated interval `[alpha, beta]`, and the next window starts at the
//! closing timestamp.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::event_io::{Event, EventStream, Polarity, SensorGeometry};

/// Two-channel time surface with linear decay.
///
/// Raw write timestamps are stored; decayed values are produced on read as
/// `(s - window_start) / (last_update - window_start)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtsltdFrame {
    geometry: SensorGeometry,
    on: Vec<Option<f64>>,
    off: Vec<Option<f64>>,
    window_start: f64,
    last_update: f64,
}

impl AtsltdFrame {
    pub fn new(geometry: SensorGeometry, window_start: f64) -> Self {
        let n = geometry.pixel_count();
        Self {
            geometry,
            on: vec![None; n],
            off: vec![None; n],
            window_start,
            last_update: window_start,
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    pub fn last_update(&self) -> f64 {
        self.last_update
    }

    fn idx(&self, u: u32, v: u32) -> usize {
        v as usize * self.geometry.width as usize + u as usize
    }

    /// Writes `event` at its pixel with the maximal value.
    pub fn update(&mut self, event: &Event) -> Result<()> {
        if event.t < self.last_update || !event.t.is_finite() {
            return Err(Error::EventPrecedesFrame {
                t: event.t,
                last: self.last_update,
            });
        }
        if !self.geometry.contains(event.u, event.v) {
            return Err(Error::OutOfBounds {
                line: 0,
                u: event.u,
                v: event.v,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        let i = self.idx(event.u, event.v);
        match event.p {
            Polarity::On => self.on[i] = Some(event.t),
            Polarity::Off => self.off[i] = Some(event.t),
        }
        self.last_update = event.t;
        Ok(())
    }

    fn decay(&self, written: Option<f64>) -> f64 {
        match written {
            None => 0.0,
            Some(s) => {
                let span = self.last_update - self.window_start;
                if span > 0.0 {
                    ((s - self.window_start) / span).clamp(0.0, 1.0)
                } else {
                    1.0
                }
            }
        }
    }

    pub fn value(&self, u: u32, v: u32, p: Polarity) -> f64 {
        let i = self.idx(u, v);
        match p {
            Polarity::On => self.decay(self.on[i]),
            Polarity::Off => self.decay(self.off[i]),
        }
    }

    /// Max of the two channels.
    pub fn combined(&self, u: u32, v: u32) -> f64 {
        self.value(u, v, Polarity::On)
            .max(self.value(u, v, Polarity::Off))
    }
}

/// Functional form of [`AtsltdFrame::update`].
pub fn update_frame(mut frame: AtsltdFrame, event: &Event) -> Result<AtsltdFrame> {
    frame.update(event)?;
    Ok(frame)
}

fn check_grid(geometry: SensorGeometry, grid: u32) -> Result<()> {
    if grid == 0 || geometry.width < grid || geometry.height < grid {
        return Err(Error::Config(format!(
            "entropy grid {grid} must be >= 1 and fit inside {geometry}"
        )));
    }
    Ok(())
}

/// Shannon entropy (bits) of a set of non-negative masses, zeros ignored.
pub fn mass_entropy<I>(masses: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let masses = masses.into_iter().filter(|m| *m > 0.0);
    let (count, total) = masses
        .clone()
        .fold((0usize, 0.0_f64), |(c, s), m| (c + 1, s + m));
    if count < 2 || total <= 0.0 {
        return 0.0;
    }
    let h = -masses
        .map(|m| {
            let p = m / total;
            p * p.log2()
        })
        .sum::<f64>();
    h.max(0.0)
}

/// Non-zero grid entropy of the combined surface over `grid`x`grid` tiles.
/// Partial tiles at the right and bottom borders are kept.
pub fn nzge_entropy(frame: &AtsltdFrame, grid: u32) -> Result<f64> {
    let g = frame.geometry;
    check_grid(g, grid)?;
    let tiles_x = g.width.div_ceil(grid) as usize;
    let tiles_y = g.height.div_ceil(grid) as usize;
    let mut sums = vec![0.0_f64; tiles_x * tiles_y];
    for v in 0..g.height {
        for u in 0..g.width {
            let c = frame.combined(u, v);
            if c > 0.0 {
                sums[(v / grid) as usize * tiles_x + (u / grid) as usize] += c;
            }
        }
    }
    Ok(mass_entropy(sums))
}

/// Incremental NZGE for a single window.
///
/// Tile masses are kept as sums of `s - window_start` over the combined
/// surface; the common `1 / (last_update - window_start)` factor cancels in
/// the entropy. While the window has zero span every written cell reads 1,
/// so written-pixel counts are used instead.
struct EntropyTracker {
    grid: u32,
    tiles_x: usize,
    window_start: f64,
    last_update: f64,
    newest: Vec<Option<f64>>,
    mass: Vec<f64>,
    written: Vec<u32>,
    active: Vec<usize>,
    touched: Vec<usize>,
    geometry: SensorGeometry,
}

impl EntropyTracker {
    fn new(geometry: SensorGeometry, grid: u32, window_start: f64) -> Self {
        let tiles_x = geometry.width.div_ceil(grid) as usize;
        let tiles = tiles_x * geometry.height.div_ceil(grid) as usize;
        Self {
            grid,
            tiles_x,
            window_start,
            last_update: window_start,
            newest: vec![None; geometry.pixel_count()],
            mass: vec![0.0; tiles],
            written: vec![0; tiles],
            active: Vec::new(),
            touched: Vec::new(),
            geometry,
        }
    }

    fn reset(&mut self, window_start: f64) {
        self.window_start = window_start;
        self.last_update = window_start;
        for &p in &self.touched {
            self.newest[p] = None;
        }
        for &t in &self.active {
            self.mass[t] = 0.0;
            self.written[t] = 0;
        }
        self.touched.clear();
        self.active.clear();
    }

    fn push(&mut self, e: &Event) {
        let pix = e.v as usize * self.geometry.width as usize + e.u as usize;
        let tile = (e.v / self.grid) as usize * self.tiles_x + (e.u / self.grid) as usize;
        let rel = e.t - self.window_start;
        match self.newest[pix] {
            Some(old) => self.mass[tile] += rel - (old - self.window_start),
            None => {
                self.touched.push(pix);
                if self.written[tile] == 0 {
                    self.active.push(tile);
                }
                self.written[tile] += 1;
                self.mass[tile] += rel;
            }
        }
        self.newest[pix] = Some(e.t);
        self.last_update = e.t;
    }

    fn entropy(&self) -> f64 {
        if self.last_update > self.window_start {
            mass_entropy(self.active.iter().map(|&t| self.mass[t]))
        } else {
            mass_entropy(self.active.iter().map(|&t| self.written[t] as f64))
        }
    }
}

/// Entropy bounds `[alpha, beta]` in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyInterval {
    pub alpha: f64,
    pub beta: f64,
}

impl EntropyInterval {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || alpha > beta {
            return Err(Error::Config(format!(
                "entropy interval needs 0 <= alpha <= beta, got [{alpha}, {beta}]"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn contains(&self, h: f64) -> bool {
        h >= self.alpha && h <= self.beta
    }
}

/// A time-bounded group of events, the unit of fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub events: Vec<Event>,
    pub t_start: f64,
    pub t_end: f64,
    pub geometry: SensorGeometry,
    /// Index of `events[0]` in the originating stream.
    pub offset: usize,
}

impl EventWindow {
    /// Window spanning exactly its events. A zero-span set gets the next
    /// representable `t_end`.
    pub fn from_events(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self> {
        let (first, last) = match (events.first(), events.last()) {
            (Some(f), Some(l)) => (f.t, l.t),
            _ => return Err(Error::Degenerate("window without events".into())),
        };
        Ok(Self {
            events,
            t_start: first,
            t_end: if last > first { last } else { first.next_up() },
            geometry,
            offset: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Splits a stream into windows by the entropy criterion, with a
/// `max_window` seconds latency bound.
///
/// A trailing group of fewer than two events (or of zero span) is folded
/// into the previous window so that no event is dropped.
pub fn cut_windows(
    stream: &EventStream,
    interval: EntropyInterval,
    grid: u32,
    max_window: f64,
) -> Result<Vec<EventWindow>> {
    check_grid(stream.geometry, grid)?;
    if max_window.is_nan() || max_window <= 0.0 {
        return Err(Error::Config(format!(
            "max_window must be positive, got {max_window}"
        )));
    }
    let Some(first) = stream.events.first() else {
        return Ok(Vec::new());
    };
    let geometry = stream.geometry;
    let mut windows = Vec::new();
    let mut tracker = EntropyTracker::new(geometry, grid, first.t);
    let mut start = first.t;
    let mut begin = 0usize;

    let close = |windows: &mut Vec<EventWindow>, lo: usize, hi: usize, t0: f64, t1: f64| {
        windows.push(EventWindow {
            events: stream.events[lo..hi].to_vec(),
            t_start: t0,
            t_end: t1,
            geometry,
            offset: lo,
        });
    };

    for (i, e) in stream.events.iter().enumerate() {
        if e.t - start > max_window {
            let steps = ((e.t - start) / max_window).floor().max(1.0);
            let boundary = start + steps * max_window;
            if i > begin {
                close(&mut windows, begin, i, start, start + max_window);
            }
            begin = i;
            start = if boundary <= e.t { boundary } else { e.t };
            tracker.reset(start);
        }
        tracker.push(e);
        if e.t > start && interval.contains(tracker.entropy()) {
            close(&mut windows, begin, i + 1, start, e.t);
            begin = i + 1;
            start = e.t;
            tracker.reset(start);
        }
    }

    let n = stream.events.len();
    if begin < n {
        let t_last = stream.events[n - 1].t;
        let tail_ok = n - begin >= 2 && t_last > start;
        match windows.last_mut() {
            Some(prev) if !tail_ok => {
                prev.events.extend_from_slice(&stream.events[begin..]);
                prev.t_end = prev.t_end.max(t_last);
            }
            _ => {
                let t_end = if t_last > start { t_last } else { start.next_up() };
                close(&mut windows, begin, n, start, t_end);
            }
        }
    }
    Ok(windows)
}

/// Terminal NZGE of a window, surface started at `t_start`.
pub fn window_entropy(window: &EventWindow, grid: u32) -> Result<f64> {
    check_grid(window.geometry, grid)?;
    let mut tracker = EntropyTracker::new(window.geometry, grid, window.t_start);
    for e in &window.events {
        tracker.push(e);
    }
    Ok(tracker.entropy())
}

/// Two-sided Student-t confidence interval of the mean entropy over
/// calibration windows with sharp contours.
pub fn estimate_interval(
    windows: &[EventWindow],
    grid: u32,
    confidence: f64,
) -> Result<EntropyInterval> {
    let samples = windows
        .iter()
        .map(|w| window_entropy(w, grid))
        .collect::<Result<Vec<_>>>()?;
    interval_from_samples(&samples, confidence)
}

pub fn interval_from_samples(samples: &[f64], confidence: f64) -> Result<EntropyInterval> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Config(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = if var > 0.0 {
        let dist = StudentsT::new(0.0, 1.0, n - 1.0)
            .map_err(|e| Error::Config(format!("student-t: {e}")))?;
        dist.inverse_cdf(0.5 + confidence / 2.0) * var.sqrt() / n.sqrt()
    } else {
        0.0
    };
    EntropyInterval::new((mean - half).max(0.0), mean + half)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(w: u32, h: u32) -> SensorGeometry {
        SensorGeometry::new(w, h).unwrap()
    }

    fn ev(t: f64, u: u32, v: u32) -> Event {
        Event::new(t, u, v, Polarity::On)
    }

    #[test]
    fn first_event_is_the_only_lit_cell() {
        let f = update_frame(AtsltdFrame::new(g(4, 4), 0.0), &ev(0.3, 1, 2)).unwrap();
        for v in 0..4 {
            for u in 0..4 {
                let want = if (u, v) == (1, 2) { 1.0 } else { 0.0 };
                assert_eq!(f.combined(u, v), want);
            }
        }
        assert_eq!(f.value(1, 2, Polarity::Off), 0.0);
    }

    #[test]
    fn overwrite_and_linear_decay() {
        let mut f = AtsltdFrame::new(g(4, 4), 0.0);
        f.update(&ev(1.0, 0, 0)).unwrap();
        f.update(&ev(2.0, 0, 0)).unwrap();
        assert_eq!(f.combined(0, 0), 1.0);

        // Oracle: each written cell holds (s_i - t0) / (t_last - t0).
        let mut f = AtsltdFrame::new(g(4, 4), 0.0);
        f.update(&ev(1.0, 0, 0)).unwrap();
        f.update(&ev(2.0, 3, 3)).unwrap();
        assert_eq!(f.combined(0, 0), 0.5);
        assert_eq!(f.combined(3, 3), 1.0);
    }

    #[test]
    fn update_rejects_stale_event() {
        let mut f = AtsltdFrame::new(g(4, 4), 0.0);
        f.update(&ev(1.0, 0, 0)).unwrap();
        assert!(matches!(
            f.update(&ev(0.5, 0, 0)),
            Err(Error::EventPrecedesFrame { .. })
        ));
    }

    #[test]
    fn entropy_base_cases() {
        let f = AtsltdFrame::new(g(16, 16), 0.0);
        assert_eq!(nzge_entropy(&f, 8).unwrap(), 0.0);

        let mut f = AtsltdFrame::new(g(16, 16), 0.0);
        f.update(&ev(0.0, 1, 1)).unwrap();
        f.update(&ev(1.0, 2, 3)).unwrap();
        assert_eq!(nzge_entropy(&f, 8).unwrap(), 0.0);

        // Four tiles, equal mass.
        let mut f = AtsltdFrame::new(g(16, 16), 0.0);
        for (u, v) in [(0, 0), (8, 0), (0, 8), (8, 8)] {
            f.update(&ev(0.0, u, v)).unwrap();
        }
        assert_eq!(nzge_entropy(&f, 8).unwrap(), 2.0);
        assert!(nzge_entropy(&f, 0).is_err());
        assert!(nzge_entropy(&f, 17).is_err());
    }

    #[test]
    fn equal_tiles_give_log2_k() {
        for k in 1..=16u32 {
            let mut f = AtsltdFrame::new(g(64, 64), 0.0);
            for i in 0..k {
                f.update(&ev(0.0, (i % 8) * 8, (i / 8) * 8)).unwrap();
            }
            let h = nzge_entropy(&f, 8).unwrap();
            assert!((h - (k as f64).log2()).abs() < 1e-12, "k={k} h={h}");
        }
    }

    #[test]
    fn tracker_matches_direct_entropy() {
        let geometry = g(32, 24);
        let mut f = AtsltdFrame::new(geometry, 0.5);
        let mut tr = EntropyTracker::new(geometry, 8, 0.5);
        let mut t = 0.5;
        for i in 0..400u32 {
            t += ((i * 7919) % 13) as f64 * 1e-4;
            let e = Event::new(
                t,
                (i * 31) % 32,
                (i * 17) % 24,
                if i % 3 == 0 { Polarity::Off } else { Polarity::On },
            );
            f.update(&e).unwrap();
            tr.push(&e);
            let direct = nzge_entropy(&f, 8).unwrap();
            assert!((direct - tr.entropy()).abs() < 1e-9, "i={i}");
        }
    }

    #[test]
    fn safety_valve_cuts_at_max_window() {
        let geometry = g(32, 32);
        // A static pixel never spreads entropy.
        let events: Vec<_> = (0..100).map(|i| ev(i as f64 * 0.01, 5, 5)).collect();
        let stream = EventStream::new(geometry, events).unwrap();
        let iv = EntropyInterval::new(2.5, 4.5).unwrap();
        let ws = cut_windows(&stream, iv, 8, 0.1).unwrap();
        assert!(ws.len() >= 9);
        for w in &ws {
            assert!(w.duration() <= 0.1 + 1e-9);
            assert!(w.t_end > w.t_start);
        }
        let total: usize = ws.iter().map(|w| w.len()).sum();
        assert_eq!(total, 100);
    }

    #[test]
    fn entropy_cut_closes_on_interval_entry() {
        let geometry = g(32, 32);
        // Events hop between four tiles: entropy reaches 2 bits on the 4th.
        let pts = [(0, 0), (8, 0), (0, 8), (8, 8)];
        let events: Vec<_> = (0..8)
            .map(|i| ev(0.001 * (i + 1) as f64, pts[i % 4].0, pts[i % 4].1))
            .collect();
        let stream = EventStream::new(geometry, events).unwrap();
        let iv = EntropyInterval::new(1.5, 2.5).unwrap();
        let ws = cut_windows(&stream, iv, 8, 1.0).unwrap();
        assert!(ws.len() >= 2);
        assert_eq!(ws[0].t_start, 0.001);
        assert_eq!(ws[1].t_start, ws[0].t_end);
        let total: usize = ws.iter().map(|w| w.len()).sum();
        assert_eq!(total, 8);
    }

    #[test]
    fn interval_estimates() {
        let iv = interval_from_samples(&[2.0, 2.0, 2.0], 0.95).unwrap();
        assert_eq!((iv.alpha, iv.beta), (2.0, 2.0));

        // Textbook: t_{0.975, 1} = 12.706204736..., sd = sqrt(2).
        let iv = interval_from_samples(&[1.0, 3.0], 0.95).unwrap();
        // The lower bound is clipped at zero since entropy cannot be negative.
        let half = 12.706_204_736_174_7 * (2.0_f64.sqrt() / 2.0_f64.sqrt());
        assert!((iv.beta - (2.0 + half)).abs() < 1e-6);
        assert_eq!(iv.alpha, 0.0);
        let iv = interval_from_samples(&[1.9, 2.1], 0.5).unwrap();
        let half = 1.0 * (0.2_f64.hypot(0.0) / 2.0_f64.sqrt()) / 2.0_f64.sqrt();
        assert!(((iv.alpha + iv.beta) / 2.0 - 2.0).abs() < 1e-12);
        assert!(((iv.beta - iv.alpha) / 2.0 - half).abs() < 1e-9);

        assert!(matches!(
            interval_from_samples(&[1.0], 0.95),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(EntropyInterval::new(3.0, 2.0).is_err());
    }
}

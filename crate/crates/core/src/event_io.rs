//! Event streams, association labels and ground-truth boxes as line-oriented text.
//!
//! Event file: one `t u v p` record per line, `t` in decimal seconds, `u`/`v`
//! integer pixel coordinates, `p` in `{0, 1}`. Lines starting with `#` are
//! comments. Association and label files: `event_index trajectory_id`, with
//! `-1` marking noise. Ground-truth files: `frame_timestamp x y w h`.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::tracking::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn as_bit(self) -> u8 {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }
}

/// A single retinal event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Timestamp in seconds.
    pub t: f64,
    pub u: u32,
    pub v: u32,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: f64, u: u32, v: u32, p: Polarity) -> Self {
        Self { t, u, v, p }
    }
}

/// Sensor resolution in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
}

impl SensorGeometry {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "sensor geometry must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height
    }

    /// Length of the normalized time axis, commensurate with the pixel axes.
    pub fn time_axis_len(&self) -> f64 {
        self.width.max(self.height) as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl fmt::Display for SensorGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for SensorGeometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("geometry `{s}` is not WxH")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("geometry `{s}` is not WxH")))
        };
        SensorGeometry::new(parse(w)?, parse(h)?)
    }
}

/// Time-ordered events from one sensor. Ties in `t` are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub geometry: SensorGeometry,
    pub events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, enforcing bounds and ordering.
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self> {
        let mut prev = 0.0_f64;
        for (i, e) in events.iter().enumerate() {
            validate_event(e, &geometry, i + 1, (i > 0).then_some(prev))?;
            prev = e.t;
        }
        Ok(Self { geometry, events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t0 <= t <= t1`, as a sub-stream.
    pub fn slice_time(&self, t0: f64, t1: f64) -> EventStream {
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t <= t1);
        EventStream {
            geometry: self.geometry,
            events: self.events[lo..hi.max(lo)].to_vec(),
        }
    }
}

fn validate_event(e: &Event, g: &SensorGeometry, line: usize, prev: Option<f64>) -> Result<()> {
    if !e.t.is_finite() || e.t < 0.0 {
        return Err(Error::Parse {
            line,
            msg: format!("timestamp {} is not a finite non-negative number", e.t),
        });
    }
    if !g.contains(e.u, e.v) {
        return Err(Error::OutOfBounds {
            line,
            u: e.u,
            v: e.v,
            width: g.width,
            height: g.height,
        });
    }
    if let Some(prev) = prev {
        if e.t < prev {
            return Err(Error::TimestampRegression { line, t: e.t, prev });
        }
    }
    Ok(())
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) => {
                let trimmed = l.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    None
                } else {
                    Some(Ok((i + 1, trimmed.to_string())))
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => Some(Err(Error::Parse {
                line: i + 1,
                msg: "not valid UTF-8".into(),
            })),
            Err(e) => Some(Err(e.into())),
        })
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, name: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing field `{name}`"),
    })?;
    tok.parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value `{tok}` for `{name}`"),
    })
}

fn no_trailing<'a>(mut it: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match it.next() {
        Some(extra) => Err(Error::Parse {
            line,
            msg: format!("unexpected trailing field `{extra}`"),
        }),
        None => Ok(()),
    }
}

/// Parses a `t u v p` event file. Out-of-order input is rejected.
pub fn parse_stream<R: BufRead>(source: R, geometry: SensorGeometry) -> Result<EventStream> {
    let mut events = Vec::new();
    let mut prev: Option<f64> = None;
    for item in data_lines(source) {
        let (line, text) = item?;
        let mut toks = text.split_whitespace();
        let t: f64 = field(toks.next(), line, "t")?;
        let u: u32 = field(toks.next(), line, "u")?;
        let v: u32 = field(toks.next(), line, "v")?;
        let p = match field::<u8>(toks.next(), line, "p")? {
            0 => Polarity::Off,
            1 => Polarity::On,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("polarity must be 0 or 1, got {other}"),
                })
            }
        };
        no_trailing(toks, line)?;
        let e = Event { t, u, v, p };
        validate_event(&e, &geometry, line, prev)?;
        prev = Some(t);
        events.push(e);
    }
    Ok(EventStream { geometry, events })
}

pub fn parse_stream_str(source: &str, geometry: SensorGeometry) -> Result<EventStream> {
    parse_stream(source.as_bytes(), geometry)
}

/// Looks for a `# geometry WxH` header comment.
pub fn sniff_geometry(source: &str) -> Option<SensorGeometry> {
    source
        .lines()
        .take_while(|l| l.trim().is_empty() || l.trim_start().starts_with('#'))
        .find_map(|l| {
            let rest = l.trim_start().trim_start_matches('#').trim();
            rest.strip_prefix("geometry")
                .and_then(|g| g.trim().parse().ok())
        })
}

pub fn write_stream<W: Write>(stream: &EventStream, mut sink: W) -> Result<()> {
    writeln!(sink, "# geometry {}", stream.geometry)?;
    writeln!(sink, "# t u v p")?;
    for e in &stream.events {
        writeln!(sink, "{} {} {} {}", e.t, e.u, e.v, e.p.as_bit())?;
    }
    sink.flush()?;
    Ok(())
}

/// Per-event association label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Trajectory(u32),
    Noise,
}

impl Label {
    pub const NOISE_ID: i64 = -1;

    pub fn as_i64(self) -> i64 {
        match self {
            Label::Trajectory(id) => id as i64,
            Label::Noise => Self::NOISE_ID,
        }
    }

    pub fn from_i64(id: i64) -> Option<Self> {
        match id {
            Self::NOISE_ID => Some(Label::Noise),
            id if id >= 0 && id <= u32::MAX as i64 => Some(Label::Trajectory(id as u32)),
            _ => None,
        }
    }

    pub fn trajectory(self) -> Option<u32> {
        match self {
            Label::Trajectory(id) => Some(id),
            Label::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self, Label::Noise)
    }
}

/// Writes `event_index trajectory_id` records, numbering from `first_index`.
pub fn write_labels<W: Write>(labels: &[Label], first_index: usize, mut sink: W) -> Result<()> {
    writeln!(sink, "# event_index trajectory_id")?;
    write_label_records(labels, first_index, &mut sink)?;
    sink.flush()?;
    Ok(())
}

/// Records only, no header; for appending per-window blocks.
pub fn write_label_records<W: Write>(
    labels: &[Label],
    first_index: usize,
    sink: &mut W,
) -> Result<()> {
    for (i, l) in labels.iter().enumerate() {
        writeln!(sink, "{} {}", first_index + i, l.as_i64())?;
    }
    Ok(())
}

/// Writes one window's assignment, event indices local to the window.
pub fn write_associations<W: Write>(
    result: &crate::fitting::AssociationResult,
    sink: W,
) -> Result<()> {
    write_labels(&result.assignment, 0, sink)
}

/// Reads an association or label file back as `(event_index, label)` pairs.
pub fn read_labels<R: BufRead>(source: R) -> Result<Vec<(usize, Label)>> {
    let mut out = Vec::new();
    for item in data_lines(source) {
        let (line, text) = item?;
        let mut toks = text.split_whitespace();
        let idx: usize = field(toks.next(), line, "event_index")?;
        let id: i64 = field(toks.next(), line, "trajectory_id")?;
        no_trailing(toks, line)?;
        let label = Label::from_i64(id).ok_or_else(|| Error::Parse {
            line,
            msg: format!("trajectory id {id} is neither -1 nor a valid id"),
        })?;
        out.push((idx, label));
    }
    Ok(out)
}

/// Reads `frame_timestamp x y w h` annotations.
pub fn read_ground_truth<R: BufRead>(source: R) -> Result<Vec<(f64, BoundingBox)>> {
    let mut out: Vec<(f64, BoundingBox)> = Vec::new();
    for item in data_lines(source) {
        let (line, text) = item?;
        let mut toks = text.split_whitespace();
        let t: f64 = field(toks.next(), line, "frame_timestamp")?;
        let x: f64 = field(toks.next(), line, "x")?;
        let y: f64 = field(toks.next(), line, "y")?;
        let w: f64 = field(toks.next(), line, "w")?;
        let h: f64 = field(toks.next(), line, "h")?;
        no_trailing(toks, line)?;
        if !(t.is_finite() && x.is_finite() && y.is_finite()) || !(w > 0.0 && h > 0.0) {
            return Err(Error::Parse {
                line,
                msg: "box needs finite coordinates and positive size".into(),
            });
        }
        if let Some((prev, _)) = out.last() {
            if t <= *prev {
                return Err(Error::TimestampRegression { line, t, prev: *prev });
            }
        }
        out.push((t, BoundingBox::new(x, y, w, h)));
    }
    Ok(out)
}

pub fn write_ground_truth<W: Write>(boxes: &[(f64, BoundingBox)], mut sink: W) -> Result<()> {
    writeln!(sink, "# frame_timestamp x y w h")?;
    for (t, b) in boxes {
        writeln!(sink, "{} {} {} {} {}", t, b.x, b.y, b.w, b.h)?;
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> SensorGeometry {
        SensorGeometry::new(240, 180).unwrap()
    }

    #[test]
    fn parses_single_event() {
        let s = parse_stream_str("0.000100 120 85 1", geom()).unwrap();
        assert_eq!(s.events, vec![Event::new(0.0001, 120, 85, Polarity::On)]);
    }

    #[test]
    fn rejects_regression_with_line_number() {
        let err = parse_stream_str("0.5 10 10 0\n0.4 11 11 1", geom()).unwrap_err();
        match err {
            Error::TimestampRegression { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_empty_stream() {
        let s = parse_stream_str("", geom()).unwrap();
        assert!(s.is_empty());
        let s = parse_stream_str("# only a comment\n\n", geom()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn ties_are_allowed_and_duplicates_kept() {
        let s = parse_stream_str("0.1 1 1 0\n0.1 1 1 0\n0.1 2 2 1", geom()).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn malformed_and_out_of_bounds() {
        assert!(matches!(
            parse_stream_str("0.1 1 1\n", geom()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_stream_str("# c\n0.1 1 1 2\n", geom()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_stream_str("0.1 240 1 0", geom()),
            Err(Error::OutOfBounds { line: 1, .. })
        ));
        assert!(matches!(
            parse_stream_str("-0.1 1 1 0", geom()),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_stream_str("0.1 1 1 0 9", geom()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn label_files() {
        let mut buf = Vec::new();
        write_labels(&[], 0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with('#'));

        let mut buf = Vec::new();
        write_labels(&[Label::Trajectory(0); 3], 0, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "# event_index trajectory_id\n0 0\n1 0\n2 0\n");

        let mut buf = Vec::new();
        write_labels(&[Label::Noise], 0, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("0 -1\n"));

        let labels = vec![Label::Trajectory(2), Label::Noise, Label::Trajectory(0)];
        let mut buf = Vec::new();
        write_labels(&labels, 5, &mut buf).unwrap();
        let back = read_labels(buf.as_slice()).unwrap();
        assert_eq!(back, vec![(5, labels[0]), (6, labels[1]), (7, labels[2])]);
    }

    #[test]
    fn ground_truth_roundtrip() {
        let boxes = vec![
            (0.0, BoundingBox::new(10.0, 12.5, 20.0, 18.0)),
            (0.02, BoundingBox::new(11.0, 12.5, 20.0, 18.0)),
        ];
        let mut buf = Vec::new();
        write_ground_truth(&boxes, &mut buf).unwrap();
        assert_eq!(read_ground_truth(buf.as_slice()).unwrap(), boxes);
        assert!(read_ground_truth("0 1 1 0 3".as_bytes()).is_err());
    }

    #[test]
    fn geometry_header() {
        let s = EventStream::new(geom(), vec![Event::new(0.0, 1, 2, Polarity::Off)]).unwrap();
        let mut buf = Vec::new();
        write_stream(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(sniff_geometry(&text), Some(geom()));
        assert_eq!("64x48".parse::<SensorGeometry>().unwrap(), SensorGeometry::new(64, 48).unwrap());
        assert!("64".parse::<SensorGeometry>().is_err());
        assert!("0x5".parse::<SensorGeometry>().is_err());
    }

    #[test]
    fn slice_time_is_inclusive() {
        let evs = (0..10)
            .map(|i| Event::new(i as f64 * 0.1, 0, 0, Polarity::On))
            .collect();
        let s = EventStream::new(geom(), evs).unwrap();
        let sub = s.slice_time(0.2, 0.5);
        assert_eq!(sub.len(), 4);
    }
}

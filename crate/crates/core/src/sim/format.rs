//! Canonical text interchange format for frame streams.
//!
//! ```text
//! # kmux-frames v1
//! # config_digest=<hex>
//! # storage_schedule=0,10
//! # columns=frame_index,arm,kx,ky,px,py
//! 0,S,12.5,-3.25,65,98
//! 0,AS,-12.75,3.5,64,101
//! 1,-,,,,
//! ```
//!
//! Every frame appears exactly once, in index order. A frame without hits is
//! written as a single placeholder line. Wavevectors use the shortest
//! decimal form that round-trips.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{Arm, Frame, FrameSink, Hit, Origin};

pub const MAGIC: &str = "kmux-frames v1";
pub const COLUMNS: &str = "frame_index,arm,kx,ky,px,py";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no frames in stream")]
    NoData,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Writes frames as text. Header lines go out on construction.
pub struct FrameWriter<W: Write> {
    out: W,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(mut out: W, config_digest: &str, storage_schedule: &[f64], extra_header: &[String]) -> io::Result<Self> {
        writeln!(out, "# {MAGIC}")?;
        writeln!(out, "# config_digest={config_digest}")?;
        let schedule: Vec<String> = storage_schedule.iter().map(|t| t.to_string()).collect();
        writeln!(out, "# storage_schedule={}", schedule.join(","))?;
        for line in extra_header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "# columns={COLUMNS}")?;
        Ok(FrameWriter { out })
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> FrameSink for FrameWriter<W> {
    fn accept(&mut self, frame: &Frame) -> io::Result<()> {
        if frame.hits.is_empty() {
            return writeln!(self.out, "{},-,,,,", frame.index);
        }
        for h in &frame.hits {
            writeln!(self.out, "{},{},{},{},{},{}", frame.index, h.arm.label(), h.kx, h.ky, h.px, h.py)?;
        }
        Ok(())
    }
}

/// Header fields recovered by [`FrameReader`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamHeader {
    pub config_digest: Option<String>,
    pub storage_schedule: Vec<f64>,
    pub lines: Vec<String>,
}

enum Record {
    Empty(u64),
    Hit(u64, Hit),
}

/// Streaming reader yielding one [`Frame`] at a time.
pub struct FrameReader<R: BufRead> {
    lines: io::Lines<R>,
    line_no: usize,
    header: StreamHeader,
    pending: Option<Record>,
    next_index: u64,
    done: bool,
}

impl<R: BufRead> FrameReader<R> {
    /// Reads the header and positions at the first record.
    pub fn new(input: R) -> Result<Self, FormatError> {
        let mut reader = FrameReader {
            lines: input.lines(),
            line_no: 0,
            header: StreamHeader::default(),
            pending: None,
            next_index: 0,
            done: false,
        };
        loop {
            let Some(line) = reader.lines.next() else {
                reader.done = true;
                break;
            };
            let line = line?;
            reader.line_no += 1;
            if let Some(rest) = line.strip_prefix('#') {
                reader.header_line(rest.trim())?;
            } else if line.trim().is_empty() {
                continue;
            } else {
                reader.pending = Some(reader.parse(&line)?);
                break;
            }
        }
        if reader.pending.is_none() {
            return Err(FormatError::NoData);
        }
        Ok(reader)
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn malformed(&self, message: impl Into<String>) -> FormatError {
        FormatError::Malformed {
            line: self.line_no,
            message: message.into(),
        }
    }

    fn header_line(&mut self, text: &str) -> Result<(), FormatError> {
        if let Some(d) = text.strip_prefix("config_digest=") {
            self.header.config_digest = Some(d.to_string());
        } else if let Some(s) = text.strip_prefix("storage_schedule=") {
            self.header.storage_schedule = s
                .split(',')
                .filter(|v| !v.is_empty())
                .map(|v| v.parse::<f64>().map_err(|e| self.malformed(format!("storage_schedule: {e}"))))
                .collect::<Result<_, _>>()?;
        }
        self.header.lines.push(text.to_string());
        Ok(())
    }

    fn parse(&self, line: &str) -> Result<Record, FormatError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(self.malformed(format!("expected 6 fields, found {}", fields.len())));
        }
        let index: u64 = fields[0]
            .parse()
            .map_err(|e| self.malformed(format!("frame_index: {e}")))?;
        let arm = match fields[1] {
            "-" => {
                if fields[2..].iter().any(|f| !f.is_empty()) {
                    return Err(self.malformed("empty-frame marker carries data"));
                }
                return Ok(Record::Empty(index));
            }
            "S" => Arm::Stokes,
            "AS" => Arm::AntiStokes,
            other => return Err(self.malformed(format!("unknown arm {other:?}"))),
        };
        let float = |i: usize, name: &str| -> Result<f64, FormatError> {
            let v: f64 = fields[i].parse().map_err(|e| self.malformed(format!("{name}: {e}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(self.malformed(format!("{name} is not finite")))
            }
        };
        let int = |i: usize, name: &str| -> Result<u32, FormatError> {
            fields[i].parse().map_err(|e| self.malformed(format!("{name}: {e}")))
        };
        Ok(Record::Hit(
            index,
            Hit {
                arm,
                kx: float(2, "kx")?,
                ky: float(3, "ky")?,
                px: int(4, "px")?,
                py: int(5, "py")?,
                origin: Origin::Unknown,
            },
        ))
    }

    fn next_record(&mut self) -> Result<Option<Record>, FormatError> {
        for line in self.lines.by_ref() {
            let line = line?;
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            if line.starts_with('#') {
                return Err(self.malformed("header line after data"));
            }
            return self.parse(&line).map(Some);
        }
        Ok(None)
    }

    fn storage_time(&self, index: u64) -> f64 {
        let s = &self.header.storage_schedule;
        if s.is_empty() {
            0.0
        } else {
            s[(index % s.len() as u64) as usize]
        }
    }

    fn next_frame(&mut self) -> Result<Option<Frame>, FormatError> {
        let Some(first) = self.pending.take() else {
            return Ok(None);
        };
        let index = match &first {
            Record::Empty(i) | Record::Hit(i, _) => *i,
        };
        if index != self.next_index {
            return Err(self.malformed(format!("expected frame {}, found {index}", self.next_index)));
        }
        self.next_index += 1;
        let mut frame = Frame {
            index,
            storage_time: self.storage_time(index),
            hits: Vec::new(),
        };
        match first {
            Record::Empty(_) => {
                self.pending = self.next_record()?;
                if let Some(Record::Empty(i) | Record::Hit(i, _)) = &self.pending {
                    if *i == index {
                        return Err(self.malformed(format!("frame {index} is both empty and non-empty")));
                    }
                }
            }
            Record::Hit(_, hit) => {
                frame.hits.push(hit);
                loop {
                    match self.next_record()? {
                        Some(Record::Hit(i, hit)) if i == index => frame.hits.push(hit),
                        Some(Record::Empty(i)) if i == index => {
                            return Err(self.malformed(format!("frame {index} is both empty and non-empty")))
                        }
                        other => {
                            self.pending = other;
                            break;
                        }
                    }
                }
            }
        }
        Ok(Some(frame))
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<Frame, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_frame() {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::small_config;
    use crate::sim::{run_simulation, Simulator};

    fn write(frames: &[Frame]) -> String {
        let mut w = FrameWriter::new(Vec::new(), "d1g35t", &[0.0, 12.5], &[]).unwrap();
        for f in frames {
            w.accept(f).unwrap();
        }
        String::from_utf8(w.finish().unwrap()).unwrap()
    }

    fn frame(index: u64, storage_time: f64, hits: Vec<Hit>) -> Frame {
        Frame {
            index,
            storage_time,
            hits,
        }
    }

    fn hit(arm: Arm, kx: f64, ky: f64) -> Hit {
        Hit {
            arm,
            kx,
            ky,
            px: 1,
            py: 2,
            origin: Origin::Unknown,
        }
    }

    #[test]
    fn exact_layout() {
        let text = write(&[
            frame(0, 0.0, vec![hit(Arm::Stokes, 0.1, -3.0), hit(Arm::AntiStokes, 1e-7, 2.5)]),
            frame(1, 12.5, vec![]),
        ]);
        assert_eq!(
            text,
            "# kmux-frames v1\n# config_digest=d1g35t\n# storage_schedule=0,12.5\n\
             # columns=frame_index,arm,kx,ky,px,py\n\
             0,S,0.1,-3,1,2\n0,AS,0.0000001,2.5,1,2\n1,-,,,,\n"
        );
    }

    #[test]
    fn reads_back_simulated_stream() {
        let mut cfg = small_config();
        cfg.source.p_mode = 0.05;
        cfg.storage = crate::sim::StorageSchedule::Cycle(vec![0.0, 12.5]);
        let sim = Simulator::new(cfg).unwrap();
        let mut frames: Vec<Frame> = Vec::new();
        run_simulation(&sim, 1, &mut frames).unwrap();
        let text = write(&frames);
        let reader = FrameReader::new(text.as_bytes()).unwrap();
        assert_eq!(reader.header().config_digest.as_deref(), Some("d1g35t"));
        let back: Vec<Frame> = reader.collect::<Result<_, _>>().unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in back.iter().zip(&frames) {
            assert_eq!(a.index, b.index);
            assert_eq!(a.storage_time, b.storage_time);
            assert_eq!(a.hits.len(), b.hits.len());
            for (x, y) in a.hits.iter().zip(&b.hits) {
                assert_eq!((x.arm, x.kx.to_bits(), x.ky.to_bits(), x.px, x.py), (y.arm, y.kx.to_bits(), y.ky.to_bits(), y.px, y.py));
            }
        }
    }

    #[test]
    fn empty_stream_is_no_data() {
        assert!(matches!(FrameReader::new("# kmux-frames v1\n".as_bytes()), Err(FormatError::NoData)));
        assert!(matches!(FrameReader::new("".as_bytes()), Err(FormatError::NoData)));
    }

    fn first_error(text: &str) -> FormatError {
        match FrameReader::new(text.as_bytes()) {
            Err(e) => e,
            Ok(r) => r.filter_map(Result::err).next().expect("an error"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            ("# h\n0,S,1,2,3\n", 2),
            ("0,-,,,,\n1,X,1,2,3,4\n", 2),
            ("0,S,abc,2,3,4\n", 1),
            ("0,-,,,,\n2,-,,,,\n", 2),
            ("0,S,1,2,3,4\n0,-,,,,\n", 2),
            ("0,-,,,,\n0,S,1,2,3,4\n", 2),
            ("0,-,1,,,\n", 1),
            ("0,S,NaN,2,3,4\n", 1),
        ];
        for (text, line) in cases {
            match first_error(text) {
                FormatError::Malformed { line: l, .. } => assert_eq!(l, line, "{text:?}"),
                e => panic!("{text:?}: {e}"),
            }
        }
    }
}

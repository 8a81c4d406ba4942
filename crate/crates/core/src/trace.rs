//! Episode trace records and their CSV form.
//!
//! The CSV schema is one row per completed step:
//!
//! ```text
//! t,x1,x2,v1,v2,u1,u2,y1,y2,vy1,vy2,tx1,tx2,tv1,tv2
//! ```
//!
//! Row `t` (1-based) holds the true state and observation *after* step `t`,
//! the control that produced it, and the target shown at the decision that
//! chose the control. Floats are written in shortest round-trip form, so
//! parsing an emitted file recovers the exact bits. The initial state and
//! observation precede the first row and travel separately (for replayed
//! buffers they live in the manifest).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const TRACE_HEADER: &str = "t,x1,x2,v1,v2,u1,u2,y1,y2,vy1,vy2,tx1,tx2,tv1,tv2";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} fields, got {got}")]
    FieldCount {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: cannot parse '{field}' as a number")]
    BadNumber { line: usize, field: String },
    #[error("bad header: expected '{TRACE_HEADER}', got '{got}'")]
    BadHeader { got: String },
}

/// Everything recorded about one completed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    /// True exposed state after the step.
    pub x: [f64; 4],
    /// Control applied at the decision before the step.
    pub u: [f64; 2],
    /// Observation emitted after the step.
    pub y: [f64; 4],
    /// Target shown at the decision before the step.
    pub target: [f64; 4],
}

/// A full episode: initial true state and observation, then one
/// [`TraceStep`] per step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub x0: [f64; 4],
    pub y0: [f64; 4],
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn new(x0: [f64; 4], y0: [f64; 4]) -> Self {
        EpisodeTrace {
            x0,
            y0,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.steps.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for (i, s) in self.steps.iter().enumerate() {
            let _ = write!(out, "{}", i + 1);
            for v in s.x.iter().chain(s.u.iter()).chain(s.y.iter()).chain(s.target.iter()) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TraceError> {
        fs::write(path, self.to_csv()).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Parses the row section of a trace CSV; the caller supplies the
    /// initial state and observation.
    pub fn parse_csv(content: &str, x0: [f64; 4], y0: [f64; 4]) -> Result<Self, TraceError> {
        let mut lines = content.lines();
        let header = lines.next().unwrap_or("");
        if header != TRACE_HEADER {
            return Err(TraceError::BadHeader {
                got: header.to_string(),
            });
        }
        let mut steps = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 15 {
                return Err(TraceError::FieldCount {
                    line: lineno + 2,
                    expected: 15,
                    got: fields.len(),
                });
            }
            let num = |f: &str| -> Result<f64, TraceError> {
                f.parse().map_err(|_| TraceError::BadNumber {
                    line: lineno + 2,
                    field: f.to_string(),
                })
            };
            let mut vals = [0.0f64; 14];
            for (i, f) in fields[1..].iter().enumerate() {
                vals[i] = num(f)?;
            }
            steps.push(TraceStep {
                x: [vals[0], vals[1], vals[2], vals[3]],
                u: [vals[4], vals[5]],
                y: [vals[6], vals[7], vals[8], vals[9]],
                target: [vals[10], vals[11], vals[12], vals[13]],
            });
        }
        Ok(EpisodeTrace { x0, y0, steps })
    }

    pub fn read_csv(path: &Path, x0: [f64; 4], y0: [f64; 4]) -> Result<Self, TraceError> {
        let content = fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_csv(&content, x0, y0)
    }
}

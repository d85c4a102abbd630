//! Line-oriented text dump of traced paths.
//!
//! ```text
//! # isac path dump v1
//! frame <frame>
//! path <index> <event count> <total length m>
//! event <kind> <object id|-> <x> <y> <z> <incident rad> <outgoing rad> <offset rad> <deviation rad> <speed m/s> <segment m|->
//! ```
//!
//! Object ids are percent-escaped for `%` and whitespace. Floats use the
//! shortest representation that parses back to the same value.

use std::io::{self, Write};

use thiserror::Error;

use super::{InteractionKind, PropPath};

pub const DUMP_HEADER: &str = "# isac path dump v1";

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpedEvent {
    pub kind: InteractionKind,
    pub object_id: Option<String>,
    pub point: [f64; 3],
    pub incident_angle: f64,
    pub outgoing_angle: f64,
    pub scatter_offset: f64,
    pub deviation: f64,
    pub surface_speed: f64,
    /// Length of the segment to the next event; `None` on the last event.
    pub segment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpedPath {
    pub frame: u32,
    pub index: usize,
    pub total_length: f64,
    pub events: Vec<DumpedEvent>,
}

fn escape(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for ch in id.chars() {
        match ch {
            '%' => out.push_str("%25"),
            c if c.is_whitespace() => out.push_str(&format!("%{:02X}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '%' {
            let hex: String = chars.by_ref().take(2).collect();
            let code = u32::from_str_radix(&hex, 16).ok()?;
            out.push(char::from_u32(code)?);
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// Append the paths of one frame. Write the header once per file with
/// `header = true`.
pub fn write_dump(
    mut w: impl Write,
    frame: u32,
    paths: &[PropPath],
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(w, "{DUMP_HEADER}")?;
    }
    writeln!(w, "frame {frame}")?;
    for (i, path) in paths.iter().enumerate() {
        writeln!(w, "path {i} {} {}", path.events.len(), path.total_length)?;
        for (j, e) in path.events.iter().enumerate() {
            let obj = e
                .object_id
                .as_deref()
                .map_or_else(|| "-".to_string(), escape);
            let seg = path
                .segment_lengths
                .get(j)
                .map_or_else(|| "-".to_string(), |l| l.to_string());
            writeln!(
                w,
                "event {} {} {} {} {} {} {} {} {} {} {}",
                e.kind,
                obj,
                e.point.x,
                e.point.y,
                e.point.z,
                e.incident_angle,
                e.outgoing_angle,
                e.scatter_offset,
                e.deviation,
                e.surface_speed,
                seg
            )?;
        }
    }
    Ok(())
}

pub fn parse_dump(text: &str) -> Result<Vec<DumpedPath>, DumpError> {
    let mut out: Vec<DumpedPath> = Vec::new();
    let mut frame: Option<u32> = None;
    let mut expected = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |reason: &str| DumpError::Syntax {
            line: line_no,
            reason: reason.to_string(),
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(&format!("bad number `{s}`")))
        };
        match fields[0] {
            "frame" => {
                if expected != 0 {
                    return Err(err("previous path is incomplete"));
                }
                let f = fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad frame"))?;
                frame = Some(f);
            }
            "path" => {
                if expected != 0 {
                    return Err(err("previous path is incomplete"));
                }
                if fields.len() != 4 {
                    return Err(err("path line needs 3 fields"));
                }
                let frame = frame.ok_or_else(|| err("path before frame"))?;
                let index = fields[1].parse().map_err(|_| err("bad path index"))?;
                expected = fields[2].parse().map_err(|_| err("bad event count"))?;
                if expected < 2 {
                    return Err(err("a path has at least two events"));
                }
                out.push(DumpedPath {
                    frame,
                    index,
                    total_length: num(fields[3])?,
                    events: Vec::with_capacity(expected),
                });
            }
            "event" => {
                if expected == 0 {
                    return Err(err("event outside a path"));
                }
                if fields.len() != 12 {
                    return Err(err("event line needs 11 fields"));
                }
                let kind = InteractionKind::parse(fields[1]).ok_or_else(|| err("unknown kind"))?;
                let object_id = match fields[2] {
                    "-" => None,
                    s => Some(unescape(s).ok_or_else(|| err("bad escape"))?),
                };
                let segment = match fields[11] {
                    "-" => None,
                    s => Some(num(s)?),
                };
                let path = out.last_mut().expect("path line seen");
                path.events.push(DumpedEvent {
                    kind,
                    object_id,
                    point: [num(fields[3])?, num(fields[4])?, num(fields[5])?],
                    incident_angle: num(fields[6])?,
                    outgoing_angle: num(fields[7])?,
                    scatter_offset: num(fields[8])?,
                    deviation: num(fields[9])?,
                    surface_speed: num(fields[10])?,
                    segment,
                });
                expected -= 1;
            }
            other => return Err(err(&format!("unknown record `{other}`"))),
        }
    }
    if expected != 0 {
        return Err(DumpError::Syntax {
            line: text.lines().count(),
            reason: "truncated path".into(),
        });
    }
    Ok(out)
}

//! Event files (binary records and CSV) and PGM images.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! header   magic "SPEV" | version u32 | width u32 | height u32      (16 bytes)
//! window   t_start u64 | t_end u64                                  (16 bytes)
//! record   x u16 | y u16 | p i8 | label u8 | t_us u64               (14 bytes each)
//! ```
//!
//! `label` is 0 for unlabelled, 1 for background, 2 for foreground.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Label, Polarity};

pub const EVENT_MAGIC: &[u8; 4] = b"SPEV";
pub const EVENT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;
const RECORD_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Binary,
    Csv,
}

impl EventFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            EventFormat::Binary => "evt",
            EventFormat::Csv => "csv",
        }
    }
}

fn label_code(label: Option<Label>) -> u8 {
    match label {
        None => 0,
        Some(Label::Background) => 1,
        Some(Label::Foreground) => 2,
    }
}

fn label_from_code(code: u8) -> Option<Option<Label>> {
    match code {
        0 => Some(None),
        1 => Some(Some(Label::Background)),
        2 => Some(Some(Label::Foreground)),
        _ => None,
    }
}

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    buf.extend_from_slice(EVENT_MAGIC);
    buf.extend_from_slice(&EVENT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(stream.width as u32).to_le_bytes());
    buf.extend_from_slice(&(stream.height as u32).to_le_bytes());
    buf.extend_from_slice(&stream.t_start.to_le_bytes());
    buf.extend_from_slice(&stream.t_end.to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.as_i8() as u8);
        buf.push(label_code(e.label));
        buf.extend_from_slice(&e.t.to_le_bytes());
    }
    buf
}

pub fn decode_events(bytes: &[u8], name: &str) -> Result<EventStream> {
    let err = |offset: usize, msg: &str| Error::parse(name, format!("byte offset {offset}"), msg);
    if bytes.len() < HEADER_LEN {
        return Err(err(0, "truncated header"));
    }
    if &bytes[0..4] != EVENT_MAGIC {
        return Err(err(0, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != EVENT_VERSION {
        return Err(err(4, &format!("unsupported version {version}")));
    }
    let (width, height) = (u32_at(8), u32_at(12));
    if width > u16::MAX as u32 || height > u16::MAX as u32 {
        return Err(err(8, "sensor dimensions exceed 65535"));
    }
    let t_start = u64_at(16);
    let t_end = u64_at(24);
    let body = &bytes[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 {
        let offset = HEADER_LEN + body.len() / RECORD_LEN * RECORD_LEN;
        return Err(err(offset, "truncated record"));
    }
    let mut events = Vec::with_capacity(body.len() / RECORD_LEN);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = HEADER_LEN + i * RECORD_LEN;
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let p = Polarity::from_i8(rec[4] as i8)
            .ok_or_else(|| err(offset + 4, &format!("invalid polarity {}", rec[4] as i8)))?;
        let label = label_from_code(rec[5])
            .ok_or_else(|| err(offset + 5, &format!("invalid label code {}", rec[5])))?;
        let t = u64::from_le_bytes(rec[6..14].try_into().unwrap());
        events.push(Event { x, y, t, p, label });
    }
    let stream = EventStream {
        events,
        width: width as u16,
        height: height as u16,
        t_start,
        t_end,
    };
    stream.validate()?;
    Ok(stream)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    x: u16,
    y: u16,
    t: u64,
    p: i8,
    label: String,
}

pub fn encode_events_csv(stream: &EventStream) -> Vec<u8> {
    let mut out = format!(
        "# spikeseg-events v{EVENT_VERSION} width={} height={} t_start={} t_end={}\n",
        stream.width, stream.height, stream.t_start, stream.t_end
    )
    .into_bytes();
    let mut writer = csv::Writer::from_writer(Vec::new());
    // Header row is written even when there are no records.
    writer.write_record(["x", "y", "t", "p", "label"]).unwrap();
    for e in &stream.events {
        let label = match e.label {
            None => "",
            Some(Label::Background) => "bg",
            Some(Label::Foreground) => "fg",
        };
        writer
            .write_record([
                e.x.to_string(),
                e.y.to_string(),
                e.t.to_string(),
                e.p.as_i8().to_string(),
                label.to_string(),
            ])
            .unwrap();
    }
    out.extend(writer.into_inner().unwrap());
    out
}

pub fn decode_events_csv(text: &str, name: &str) -> Result<EventStream> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let mut fields = std::collections::HashMap::new();
    let meta = first
        .strip_prefix("# spikeseg-events v1")
        .ok_or_else(|| Error::parse(name, "line 1", "missing '# spikeseg-events v1' header"))?;
    for kv in meta.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::parse(name, "line 1", format!("bad header field '{kv}'")))?;
        let v: u64 = v
            .parse()
            .map_err(|_| Error::parse(name, "line 1", format!("bad number in '{kv}'")))?;
        fields.insert(k.to_string(), v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::parse(name, "line 1", format!("missing header field '{k}'")))
    };
    let (width, height) = (get("width")?, get("height")?);
    if width > u16::MAX as u64 || height > u16::MAX as u64 {
        return Err(Error::parse(name, "line 1", "sensor dimensions exceed 65535"));
    }
    let (t_start, t_end) = (get("t_start")?, get("t_end")?);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(rest.as_bytes());
    let mut events = Vec::new();
    for (i, rec) in reader.deserialize::<CsvRecord>().enumerate() {
        // line 1 is the metadata comment, line 2 the column header
        let line = format!("line {}", i + 3);
        let rec = rec.map_err(|e| Error::parse(name, line.clone(), e.to_string()))?;
        let p = Polarity::from_i8(rec.p)
            .ok_or_else(|| Error::parse(name, line.clone(), format!("invalid polarity {}", rec.p)))?;
        let label = match rec.label.as_str() {
            "" => None,
            "bg" => Some(Label::Background),
            "fg" => Some(Label::Foreground),
            other => {
                return Err(Error::parse(name, line, format!("invalid label '{other}'")));
            }
        };
        events.push(Event {
            x: rec.x,
            y: rec.y,
            t: rec.t,
            p,
            label,
        });
    }
    let stream = EventStream {
        events,
        width: width as u16,
        height: height as u16,
        t_start,
        t_end,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn save_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    let bytes = match format {
        EventFormat::Binary => encode_events(stream),
        EventFormat::Csv => encode_events_csv(stream),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_events(path: &Path, format: EventFormat) -> Result<EventStream> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        EventFormat::Binary => decode_events(&bytes, &name),
        EventFormat::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::parse(&name, "file", format!("not utf-8: {e}")))?;
            decode_events_csv(&text, &name)
        }
    }
}

/// Event files (`.evt` or `.csv`) in a directory, sorted by file name.
pub fn list_event_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if matches!(path.extension().and_then(|e| e.to_str()), Some("evt" | "csv")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Writes a binary PGM. Samples are 8-bit when `maxval < 256`, else 16-bit big-endian.
pub fn write_pgm(path: &Path, width: usize, height: usize, maxval: u16, pixels: &[u16]) -> Result<()> {
    let mut buf = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &v in pixels {
        let v = v.min(maxval);
        if maxval < 256 {
            buf.push(v as u8);
        } else {
            buf.write_all(&v.to_be_bytes()).unwrap();
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // header: magic, width, height, maxval separated by single whitespace runs
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(&name, format!("byte offset {pos}"), "truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::parse(&name, "byte offset 0", "not a binary PGM"));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(&name, "header", format!("bad number '{s}'")))
    };
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(Error::parse(&name, "header", "maxval out of range"));
    }
    let sample = if maxval < 256 { 1 } else { 2 };
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() < width * height * sample {
        return Err(Error::parse(&name, format!("byte offset {pos}"), "truncated PGM data"));
    }
    let pixels = (0..width * height)
        .map(|i| {
            if sample == 1 {
                data[i] as u16
            } else {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]])
            }
        })
        .collect();
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

//! Newline-delimited JSON dataset files.
//!
//! Line 1 is a header `{format, format_version, J, fps, topology, count}`;
//! every following line is one sequence. Coordinates are written with the
//! shortest representation that parses back to the same `f64`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::skeleton::{Point, SkeletonSequence};
use crate::error::{Error, Result};

pub const FORMAT: &str = "hiskel-skeleton";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    format_version: u32,
    #[serde(rename = "J")]
    num_joints: Option<usize>,
    fps: Option<f64>,
    topology: Option<Vec<usize>>,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(rename = "T")]
    num_frames: usize,
    #[serde(default = "one")]
    subjects: usize,
    label: Option<usize>,
    frame_labels: Option<Vec<i64>>,
    joints: Vec<f64>,
}

fn one() -> usize {
    1
}

pub fn write_dataset<W: Write>(out: W, seqs: &[SkeletonSequence]) -> Result<()> {
    let first = seqs.first();
    if let Some(f) = first {
        for (i, s) in seqs.iter().enumerate() {
            if s.num_joints() != f.num_joints() || s.fps() != f.fps() || s.topology() != f.topology() {
                return Err(Error::InvalidSequence(format!(
                    "sequence {i} differs from sequence 0 in joints, fps or topology; a dataset file holds one skeleton layout"
                )));
            }
        }
    }
    let header = Header {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        num_joints: first.map(|s| s.num_joints()),
        fps: first.map(|s| s.fps()),
        topology: first.map(|s| s.topology().to_vec()),
        count: seqs.len(),
    };
    let mut w = BufWriter::new(out);
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for s in seqs {
        let rec = Record {
            num_frames: s.num_frames(),
            subjects: 1,
            label: s.label(),
            frame_labels: s.frame_labels().map(<[i64]>::to_vec),
            joints: s.flat_coords(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<SkeletonSequence>> {
    let mut lines = input.lines();
    let header_line = lines.next().ok_or_else(|| Error::Header("empty file".into()))??;
    // Check the version before the full schema so newer files fail clearly.
    let raw: serde_json::Value = serde_json::from_str(&header_line).map_err(|e| Error::Header(e.to_string()))?;
    if raw.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(Error::Header(format!("not a {FORMAT} file")));
    }
    let version = raw.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Header("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::Version { found: version.try_into().unwrap_or(u32::MAX), expected: FORMAT_VERSION });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Header(e.to_string()))?;
    let layout = match (header.num_joints, header.fps, header.topology) {
        (Some(j), Some(fps), Some(top)) => Some((j, fps, top)),
        (None, None, None) if header.count == 0 => None,
        _ => return Err(Error::Header("J, fps and topology are required for a non-empty dataset".into())),
    };

    let mut seqs = Vec::with_capacity(header.count);
    for (index, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| Error::Parse { record: index, msg };
        if index >= header.count {
            return Err(parse(format!("header declares {} records", header.count)));
        }
        let (j, fps, top) = layout.as_ref().expect("non-empty dataset has a layout");
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if rec.subjects != 1 {
            return Err(parse(format!("{} subjects; only single-subject sequences are supported", rec.subjects)));
        }
        if rec.joints.len() != rec.num_frames * j * 3 {
            return Err(parse(format!("{} coordinates for T={} J={j}", rec.joints.len(), rec.num_frames)));
        }
        let points: Vec<Point> = rec.joints.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let mut seq = SkeletonSequence::new(points, *j, *fps, top.clone()).map_err(|e| parse(e.to_string()))?;
        if let Some(l) = rec.label {
            seq = seq.with_label(l);
        }
        if let Some(fl) = rec.frame_labels {
            seq = seq.with_frame_labels(fl).map_err(|e| parse(e.to_string()))?;
        }
        seqs.push(seq);
    }
    if seqs.len() != header.count {
        return Err(Error::Parse { record: seqs.len(), msg: format!("file ends after {} of {} records", seqs.len(), header.count) });
    }
    Ok(seqs)
}

pub fn save_dataset(path: impl AsRef<Path>, seqs: &[SkeletonSequence]) -> Result<()> {
    write_dataset(fs::File::create(path)?, seqs)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SkeletonSequence>> {
    read_dataset(BufReader::new(fs::File::open(path)?))
}

//! Self-describing experiment container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "ISACREC\0"
//! 8       4     u32 format version (currently 1)
//! 12      8     u64 manifest length M
//! 20      M     manifest, canonical JSON (sorted keys, no whitespace)
//! 20+M    4     u32 CRC-32 of the manifest bytes
//! ..      4     u32 block count B
//! then B blocks:
//!         1     u8 block kind (1 frame, 2 image, 3 metrics)
//!         3     reserved, zero
//!         8     u64 payload length L
//!         L     payload
//!         4     u32 CRC-32 of the payload
//! ```
//!
//! Frame payloads are `[antenna][subcarrier][symbol]` tensors of complex64
//! values (`f32` real, `f32` imaginary). Image payloads use
//! [`RadarImage::to_bytes`]. The metrics payload is the CSV table written by
//! [`write_metrics_csv`]. The manifest lists every block with its kind, name,
//! length and SHA-256, plus frame shapes and ground truth.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::Array3;
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::GroundTruth;
use crate::propagation::RadioConfig;
use crate::sensing::{RadarImage, SensingError};

pub const MAGIC: &[u8; 8] = b"ISACREC\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_FRAME: u8 = 1;
const KIND_IMAGE: u8 = 2;
const KIND_METRICS: u8 = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a record file (bad magic)")]
    BadMagic,
    #[error("format version {0} is not supported")]
    VersionUnsupported(u32),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("malformed record: {0}")]
    Malformed(String),
}

impl From<serde_json::Error> for DatasetError {
    fn from(e: serde_json::Error) -> Self {
        DatasetError::Malformed(e.to_string())
    }
}

impl From<csv::Error> for DatasetError {
    fn from(e: csv::Error) -> Self {
        DatasetError::Malformed(e.to_string())
    }
}

impl From<SensingError> for DatasetError {
    fn from(e: SensingError) -> Self {
        DatasetError::Malformed(e.to_string())
    }
}

/// Experiment metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub software_version: String,
    pub scene_hash: String,
    pub radio: RadioConfig,
    pub tracer: serde_json::Value,
    pub seeds: Vec<u64>,
    pub num_frames: u32,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// A stored channel tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFrame {
    pub frame_index: u32,
    pub data: Array3<Complex32>,
    pub ground_truth: Vec<GroundTruth>,
}

impl RecordFrame {
    /// Narrow a channel tensor to complex64 storage.
    pub fn from_f64(
        frame_index: u32,
        data: &Array3<Complex64>,
        ground_truth: Vec<GroundTruth>,
    ) -> Self {
        RecordFrame {
            frame_index,
            data: data.mapv(|v| Complex32::new(v.re as f32, v.im as f32)),
            ground_truth,
        }
    }

    pub fn to_f64(&self) -> Array3<Complex64> {
        self.data.mapv(|v| Complex64::new(v.re as f64, v.im as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordImage {
    pub name: String,
    pub image: RadarImage,
}

/// One metrics table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub frame: u32,
    pub method: String,
    pub image: String,
    pub snr_db: f64,
    pub seed: u64,
    pub detected: bool,
    pub p_detection: f64,
    pub sinr: f64,
    pub sinr_db: f64,
    pub prominence: f64,
    pub normalized_prominence: f64,
    pub isolation: f64,
    pub truth_range: f64,
    pub truth_azimuth: f64,
    pub gate_radius: f64,
    pub num_peaks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub manifest: Manifest,
    pub frames: Vec<RecordFrame>,
    pub images: Vec<RecordImage>,
    pub metrics: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockEntry {
    kind: u8,
    name: String,
    length: u64,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameEntry {
    frame_index: u32,
    shape: [usize; 3],
    ground_truth: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredManifest {
    format_version: u32,
    record: Manifest,
    frames: Vec<FrameEntry>,
    blocks: Vec<BlockEntry>,
}

pub fn write_metrics_csv(rows: &[MetricRow], w: impl Write) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for row in rows {
        wr.serialize(row)?;
    }
    if rows.is_empty() {
        wr.write_record([
            "frame",
            "method",
            "image",
            "snr_db",
            "seed",
            "detected",
            "p_detection",
            "sinr",
            "sinr_db",
            "prominence",
            "normalized_prominence",
            "isolation",
            "truth_range",
            "truth_azimuth",
            "gate_radius",
            "num_peaks",
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_metrics_csv(r: impl Read) -> Result<Vec<MetricRow>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}

fn frame_bytes(frame: &RecordFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.data.len() * 8);
    for v in frame.data.iter() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

fn canonical_json(value: &impl Serialize) -> Result<Vec<u8>, serde_json::Error> {
    // Value maps are BTreeMaps, so keys come out sorted
    serde_json::to_vec(&serde_json::to_value(value)?)
}

/// Serialize a record to bytes.
pub fn encode_record(record: &ExperimentRecord) -> Result<Vec<u8>, DatasetError> {
    let mut blocks: Vec<(u8, String, Vec<u8>)> = Vec::new();
    for f in &record.frames {
        blocks.push((
            KIND_FRAME,
            format!("frame/{}", f.frame_index),
            frame_bytes(f),
        ));
    }
    for img in &record.images {
        blocks.push((KIND_IMAGE, img.name.clone(), img.image.to_bytes()));
    }
    let mut csv_bytes = Vec::new();
    write_metrics_csv(&record.metrics, &mut csv_bytes)?;
    blocks.push((KIND_METRICS, "metrics".into(), csv_bytes));

    let stored = StoredManifest {
        format_version: FORMAT_VERSION,
        record: record.manifest.clone(),
        frames: record
            .frames
            .iter()
            .map(|f| {
                let (a, b, c) = f.data.dim();
                FrameEntry {
                    frame_index: f.frame_index,
                    shape: [a, b, c],
                    ground_truth: f.ground_truth.clone(),
                }
            })
            .collect(),
        blocks: blocks
            .iter()
            .map(|(kind, name, payload)| BlockEntry {
                kind: *kind,
                name: name.clone(),
                length: payload.len() as u64,
                sha256: hex::encode(Sha256::digest(payload)),
            })
            .collect(),
    };
    let manifest = canonical_json(&stored)?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&crc32fast::hash(&manifest).to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (kind, _, payload) in &blocks {
        out.push(*kind);
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(payload);
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    }
    Ok(out)
}

/// Write atomically: a temporary file in the target directory is renamed
/// over `path` once complete.
pub fn write_record(record: &ExperimentRecord, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let bytes = encode_record(record)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| DatasetError::Io(e.error))?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Read `len` bytes without trusting `len` for the allocation size.
fn read_exact_vec(r: &mut impl Read, len: u64) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf)?;
    if buf.len() as u64 != len {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "record truncated",
        ));
    }
    Ok(buf)
}

/// Parse and validate a record.
pub fn decode_record(mut r: impl Read) -> Result<ExperimentRecord, DatasetError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::VersionUnsupported(version));
    }
    let manifest_len = read_u64(&mut r)?;
    let manifest_bytes = read_exact_vec(&mut r, manifest_len)?;
    if read_u32(&mut r)? != crc32fast::hash(&manifest_bytes) {
        return Err(DatasetError::ChecksumMismatch("manifest".into()));
    }
    let stored: StoredManifest = serde_json::from_slice(&manifest_bytes)?;
    let count = read_u32(&mut r)? as usize;
    if count != stored.blocks.len() {
        return Err(DatasetError::Malformed(
            "block count differs from manifest".into(),
        ));
    }

    let mut frames = Vec::new();
    let mut images = Vec::new();
    let mut metrics = None;
    let mut frame_meta = stored.frames.iter();
    for entry in &stored.blocks {
        let mut head = [0u8; 4];
        r.read_exact(&mut head)?;
        let len = read_u64(&mut r)?;
        let payload = read_exact_vec(&mut r, len)?;
        if read_u32(&mut r)? != crc32fast::hash(&payload) {
            return Err(DatasetError::ChecksumMismatch(entry.name.clone()));
        }
        if head[0] != entry.kind
            || len != entry.length
            || hex::encode(Sha256::digest(&payload)) != entry.sha256
        {
            return Err(DatasetError::ChecksumMismatch(entry.name.clone()));
        }
        match entry.kind {
            KIND_FRAME => {
                let meta = frame_meta.next().ok_or_else(|| {
                    DatasetError::Malformed("frame block without metadata".into())
                })?;
                let [a, b, c] = meta.shape;
                if payload.len() != a * b * c * 8 {
                    return Err(DatasetError::Malformed(format!(
                        "frame {} size",
                        meta.frame_index
                    )));
                }
                let values: Vec<Complex32> = payload
                    .chunks_exact(8)
                    .map(|ch| {
                        Complex32::new(
                            f32::from_le_bytes(ch[..4].try_into().unwrap()),
                            f32::from_le_bytes(ch[4..].try_into().unwrap()),
                        )
                    })
                    .collect();
                let data = Array3::from_shape_vec((a, b, c), values)
                    .map_err(|e| DatasetError::Malformed(e.to_string()))?;
                frames.push(RecordFrame {
                    frame_index: meta.frame_index,
                    data,
                    ground_truth: meta.ground_truth.clone(),
                });
            }
            KIND_IMAGE => images.push(RecordImage {
                name: entry.name.clone(),
                image: RadarImage::from_bytes(&payload)?,
            }),
            KIND_METRICS => metrics = Some(read_metrics_csv(payload.as_slice())?),
            k => return Err(DatasetError::Malformed(format!("unknown block kind {k}"))),
        }
    }
    Ok(ExperimentRecord {
        manifest: stored.record,
        frames,
        images,
        metrics: metrics.ok_or_else(|| DatasetError::Malformed("missing metrics block".into()))?,
    })
}

pub fn read_record(path: impl AsRef<Path>) -> Result<ExperimentRecord, DatasetError> {
    let file = std::fs::File::open(path)?;
    decode_record(io::BufReader::new(file))
}

//! On-disk formats.
//!
//! Volumes use a single self-describing container: one UTF-8 JSON header
//! line terminated by `\n`, followed by raw little-endian voxel data in
//! x-fastest order.
//!
//! ```text
//! {"magic":"SVOL1","kind":"scan","dtype":"f32","dims":[4,4,2],"spacing_mm":[2.0,2.0,2.0]}
//! <raw payload>
//! ```
//!
//! * `kind: "scan"`   — `f32` intensities, `dtype` must be `"f32"`.
//! * `kind: "labels"` — `u16` class ids, `dtype` must be `"u16"`, header
//!   additionally carries `num_classes`.
//! * `kind: "field"`  — three interleaved `f32` displacement components per
//!   voxel (millimetres), `dtype` must be `"f32"`.
//!
//! Deformation models use the same layout with magic `SDM1`: header line
//! `{"magic":"SDM1","dims":..,"spacing_mm":..,"n_components":N,"n_training":n}`
//! followed by the mean field (f32), each component vector (f32), then the
//! eigenvalues (f64).
//!
//! Swap tables are two-column CSV (`left,right` integer pairs); `#` starts a
//! comment and an optional literal `left,right` header line is tolerated.

use crate::error::{Error, Result};
use crate::model::DeformationModel;
use crate::volume::{voxel_count, DeformationField, LabelVolume, ScalarVolume, SwapTable};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    magic: String,
    kind: String,
    dtype: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<u16>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    magic: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    n_components: usize,
    n_training: usize,
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::format(Some(path.to_path_buf()), msg)
}

/// Split a file into its JSON header line and the raw payload after `\n`.
fn split_header(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<u8>)> {
    match bytes.iter().position(|&b| b == b'\n') {
        Some(pos) => Ok((pos, bytes[pos + 1..].to_vec())),
        None => Err(fmt_err(path, "missing header line terminator")),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_volume_header(path: &Path, bytes: &[u8]) -> Result<(VolumeHeader, Vec<u8>)> {
    let (pos, payload) = split_header(path, bytes)?;
    let header: VolumeHeader = serde_json::from_slice(&bytes[..pos])
        .map_err(|e| fmt_err(path, format!("bad header: {e}")))?;
    if header.magic != "SVOL1" {
        return Err(fmt_err(path, format!("bad magic {:?}", header.magic)));
    }
    Ok((header, payload))
}

fn expect_payload_len(path: &Path, payload: &[u8], want: usize) -> Result<()> {
    if payload.len() != want {
        return Err(fmt_err(
            path,
            format!("payload is {} bytes, header implies {want}", payload.len()),
        ));
    }
    Ok(())
}

fn f32s_from_le(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

fn push_f32s_le(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    // Write then rename so a crash never leaves a half-written artifact
    // under the final name.
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn volume_file(header: &VolumeHeader, payload_capacity: usize) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.reserve(payload_capacity + 1);
    out.push(b'\n');
    out
}

pub fn write_scan(path: impl AsRef<Path>, vol: &ScalarVolume) -> Result<()> {
    let header = VolumeHeader {
        magic: "SVOL1".into(),
        kind: "scan".into(),
        dtype: "f32".into(),
        dims: vol.dims,
        spacing_mm: vol.spacing_mm,
        num_classes: None,
    };
    let mut out = volume_file(&header, 4 * vol.num_voxels());
    push_f32s_le(&mut out, vol.data().iter().copied());
    write_atomically(path.as_ref(), &out)
}

pub fn write_labels(path: impl AsRef<Path>, vol: &LabelVolume) -> Result<()> {
    let header = VolumeHeader {
        magic: "SVOL1".into(),
        kind: "labels".into(),
        dtype: "u16".into(),
        dims: vol.dims,
        spacing_mm: vol.spacing_mm,
        num_classes: Some(vol.num_classes),
    };
    let mut out = volume_file(&header, 2 * vol.num_voxels());
    for v in vol.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_atomically(path.as_ref(), &out)
}

pub fn write_field(path: impl AsRef<Path>, field: &DeformationField) -> Result<()> {
    let header = VolumeHeader {
        magic: "SVOL1".into(),
        kind: "field".into(),
        dtype: "f32".into(),
        dims: field.dims,
        spacing_mm: field.spacing_mm,
        num_classes: None,
    };
    let mut out = volume_file(&header, 12 * field.num_voxels());
    push_f32s_le(&mut out, field.data().iter().flatten().copied());
    write_atomically(path.as_ref(), &out)
}

pub fn read_scan(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (header, payload) = parse_volume_header(path, &bytes)?;
    if header.kind != "scan" {
        return Err(fmt_err(path, format!("expected kind \"scan\", got {:?}", header.kind)));
    }
    if header.dtype != "f32" {
        return Err(fmt_err(path, format!("scan dtype must be \"f32\", got {:?}", header.dtype)));
    }
    let n = voxel_count(header.dims).map_err(|e| fmt_err(path, e.to_string()))?;
    expect_payload_len(path, &payload, 4 * n)?;
    ScalarVolume::new(header.dims, header.spacing_mm, f32s_from_le(&payload))
        .map_err(|e| fmt_err(path, e.to_string()))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (header, payload) = parse_volume_header(path, &bytes)?;
    if header.kind != "labels" {
        return Err(fmt_err(path, format!("expected kind \"labels\", got {:?}", header.kind)));
    }
    if header.dtype != "u16" {
        return Err(fmt_err(path, format!("labels dtype must be \"u16\", got {:?}", header.dtype)));
    }
    let num_classes = header
        .num_classes
        .ok_or_else(|| fmt_err(path, "labels header missing num_classes"))?;
    let n = voxel_count(header.dims).map_err(|e| fmt_err(path, e.to_string()))?;
    expect_payload_len(path, &payload, 2 * n)?;
    let data: Vec<u16> = payload
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    LabelVolume::new(header.dims, header.spacing_mm, num_classes, data)
        .map_err(|e| fmt_err(path, e.to_string()))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DeformationField> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (header, payload) = parse_volume_header(path, &bytes)?;
    if header.kind != "field" {
        return Err(fmt_err(path, format!("expected kind \"field\", got {:?}", header.kind)));
    }
    if header.dtype != "f32" {
        return Err(fmt_err(path, format!("field dtype must be \"f32\", got {:?}", header.dtype)));
    }
    let n = voxel_count(header.dims).map_err(|e| fmt_err(path, e.to_string()))?;
    expect_payload_len(path, &payload, 12 * n)?;
    let flat = f32s_from_le(&payload);
    let data: Vec<[f32; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    DeformationField::new(header.dims, header.spacing_mm, data)
        .map_err(|e| fmt_err(path, e.to_string()))
}

pub fn write_model(path: impl AsRef<Path>, model: &DeformationModel) -> Result<()> {
    let header = ModelHeader {
        magic: "SDM1".into(),
        dims: model.dims,
        spacing_mm: model.spacing_mm,
        n_components: model.n_components(),
        n_training: model.n_training,
    };
    let d = model.flat_len();
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.reserve(1 + 4 * d * (1 + model.n_components()) + 8 * model.n_components());
    out.push(b'\n');
    push_f32s_le(&mut out, model.mean.iter().map(|&v| v as f32));
    for comp in &model.components {
        push_f32s_le(&mut out, comp.iter().map(|&v| v as f32));
    }
    for &l in &model.eigenvalues {
        out.extend_from_slice(&l.to_le_bytes());
    }
    write_atomically(path.as_ref(), &out)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<DeformationModel> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (pos, payload) = split_header(path, &bytes)?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..pos])
        .map_err(|e| fmt_err(path, format!("bad header: {e}")))?;
    if header.magic != "SDM1" {
        return Err(fmt_err(path, format!("bad magic {:?}", header.magic)));
    }
    let n = voxel_count(header.dims).map_err(|e| fmt_err(path, e.to_string()))?;
    let d = 3 * n;
    let want = 4 * d * (1 + header.n_components) + 8 * header.n_components;
    expect_payload_len(path, &payload, want)?;

    let mean_bytes = &payload[..4 * d];
    let mean: Vec<f64> = f32s_from_le(mean_bytes).into_iter().map(|v| v as f64).collect();
    let mut components = Vec::with_capacity(header.n_components);
    for k in 0..header.n_components {
        let start = 4 * d * (1 + k);
        let comp: Vec<f64> = f32s_from_le(&payload[start..start + 4 * d])
            .into_iter()
            .map(|v| v as f64)
            .collect();
        components.push(comp);
    }
    let eig_start = 4 * d * (1 + header.n_components);
    let eigenvalues: Vec<f64> = payload[eig_start..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();

    let model = DeformationModel {
        dims: header.dims,
        spacing_mm: header.spacing_mm,
        mean,
        components,
        eigenvalues,
        n_training: header.n_training,
    };
    model.validate().map_err(|e| fmt_err(path, e.to_string()))?;
    Ok(model)
}

pub fn read_swap_table(path: impl AsRef<Path>) -> Result<SwapTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() || line == "left,right" {
            continue;
        }
        let mut cols = line.split(',');
        let (l, r) = match (cols.next(), cols.next(), cols.next()) {
            (Some(l), Some(r), None) => (l.trim(), r.trim()),
            _ => {
                return Err(fmt_err(
                    path,
                    format!("line {}: expected two comma-separated ids", lineno + 1),
                ))
            }
        };
        let parse = |s: &str| {
            s.parse::<u16>().map_err(|_| {
                fmt_err(path, format!("line {}: {:?} is not a label id", lineno + 1, s))
            })
        };
        pairs.push((parse(l)?, parse(r)?));
    }
    SwapTable::new(pairs).map_err(|e| fmt_err(path, e.to_string()))
}

pub fn write_swap_table(path: impl AsRef<Path>, table: &SwapTable) -> Result<()> {
    let mut out = String::from("left,right\n");
    for (l, r) in table.pairs() {
        out.push_str(&format!("{l},{r}\n"));
    }
    write_atomically(path.as_ref(), out.as_bytes())
}

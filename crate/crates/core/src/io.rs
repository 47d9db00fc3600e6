//! File formats: tensor containers, PNG images and label maps, binary edge
//! lists, run-length label JSON and line-delimited run logs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::consensus::EdgeList;
use crate::error::{Error, Result};

const TENSOR_MAGIC: &[u8; 4] = b"MIMG";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U8(_) => 1,
            TensorData::I32(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense little-endian row-major tensor: `"MIMG"`, u16 version, u8 dtype
/// code (0 f32, 1 u8, 2 i32), u8 rank, u32 dims, payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorContainer {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl TensorContainer {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::param(format!("rank {} too large", dims.len())));
        }
        let n: usize = dims.iter().map(|&d| d as usize).product();
        if n != data.len() {
            return Err(Error::dims(n, data.len()));
        }
        Ok(TensorContainer { dims, data })
    }

    pub fn from_f64(a: ArrayView2<f64>) -> Self {
        let (h, w) = a.dim();
        TensorContainer { dims: vec![h as u32, w as u32], data: TensorData::F32(a.iter().map(|&v| v as f32).collect()) }
    }

    pub fn from_labels(a: ArrayView2<u32>) -> Result<Self> {
        let (h, w) = a.dim();
        let vals = a.iter().map(|&v| i32::try_from(v).map_err(|_| Error::param(format!("label {v} exceeds i32")))).collect::<Result<_>>()?;
        Ok(TensorContainer { dims: vec![h as u32, w as u32], data: TensorData::I32(vals) })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&TENSOR_VERSION.to_le_bytes())?;
        w.write_all(&[self.data.code(), self.dims.len() as u8])?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        match &self.data {
            TensorData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            TensorData::U8(v) => w.write_all(v)?,
            TensorData::I32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        if &head[..4] != TENSOR_MAGIC {
            return Err(Error::Format("not a tensor container".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let (code, rank) = (head[6], head[7] as usize);
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            dims.push(u32::from_le_bytes(b));
        }
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let width = match code {
            0 | 2 => 4,
            1 => 1,
            c => return Err(Error::Format(format!("unknown dtype code {c}"))),
        };
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != n * width {
            return Err(Error::Format(format!("payload holds {} bytes, dims need {}", payload.len(), n * width)));
        }
        let words = || payload.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let data = match code {
            0 => TensorData::F32(words().map(f32::from_le_bytes).collect()),
            2 => TensorData::I32(words().map(i32::from_le_bytes).collect()),
            _ => TensorData::U8(payload),
        };
        Ok(TensorContainer { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn png_encoder<'a>(buf: &'a mut Vec<u8>, dims: (usize, usize), color: png::ColorType, depth: png::BitDepth) -> Result<png::Writer<&'a mut Vec<u8>>> {
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::param("cannot encode an empty image"));
    }
    let mut enc = png::Encoder::new(buf, w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    enc.write_header().map_err(|e| Error::Format(e.to_string()))
}

/// Grey PNG with values in `[0, 1]` (clamped) quantised to 8 or 16 bits.
pub fn encode_gray_png(img: ArrayView2<f64>, sixteen_bit: bool) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let depth = if sixteen_bit { png::BitDepth::Sixteen } else { png::BitDepth::Eight };
    let mut wr = png_encoder(&mut buf, img.dim(), png::ColorType::Grayscale, depth)?;
    let data: Vec<u8> = if sixteen_bit {
        img.iter().flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes()).collect()
    } else {
        img.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    };
    wr.write_image_data(&data).map_err(|e| Error::Format(e.to_string()))?;
    wr.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(buf)
}

fn decode_png(bytes: &[u8]) -> Result<(png::OutputInfo, Vec<u8>)> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Format("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Grey 8- or 16-bit PNG back to `[0, 1]`.
pub fn decode_gray_png(bytes: &[u8]) -> Result<Array2<f64>> {
    let (info, buf) = decode_png(bytes)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Format(format!("expected grey PNG, found {:?}", info.color_type)));
    }
    let dims = (info.height as usize, info.width as usize);
    let vals: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf.iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0).collect(),
        d => return Err(Error::Format(format!("unsupported bit depth {d:?}"))),
    };
    Array2::from_shape_vec(dims, vals).map_err(|e| Error::Format(e.to_string()))
}

/// Labels as an RGBA8 PNG: each pixel's four bytes are its u32 label in
/// little-endian order.
pub fn encode_label_png(labels: ArrayView2<u32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut wr = png_encoder(&mut buf, labels.dim(), png::ColorType::Rgba, png::BitDepth::Eight)?;
    let data: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    wr.write_image_data(&data).map_err(|e| Error::Format(e.to_string()))?;
    wr.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(buf)
}

pub fn decode_label_png(bytes: &[u8]) -> Result<Array2<u32>> {
    let (info, buf) = decode_png(bytes)?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("label PNG must be 8-bit RGBA".into()));
    }
    let vals = buf.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Array2::from_shape_vec((info.height as usize, info.width as usize), vals).map_err(|e| Error::Format(e.to_string()))
}

pub const EDGE_MAGIC: &[u8; 8] = b"SEGEDGE1";

/// Edge list as the magic header followed by `(u32 i, u32 j, f32 w)` records
/// in canonical order. Weights are narrowed to f32.
pub fn write_edges<W: Write>(edges: &EdgeList, mut w: W) -> Result<()> {
    let mut sorted = edges.edges.clone();
    sorted.sort_unstable_by_key(|&(i, j, _)| (i, j));
    w.write_all(EDGE_MAGIC)?;
    for (i, j, wt) in sorted {
        w.write_all(&i.to_le_bytes())?;
        w.write_all(&j.to_le_bytes())?;
        w.write_all(&(wt as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_edges`]; the node count is not stored.
pub fn read_edges<R: Read>(mut r: R, num_nodes: usize) -> Result<EdgeList> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != EDGE_MAGIC {
        return Err(Error::Format("not an edge file".into()));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 12 != 0 {
        return Err(Error::Format(format!("edge payload of {} bytes is not whole records", body.len())));
    }
    let word = |c: &[u8]| [c[0], c[1], c[2], c[3]];
    let edges = body
        .chunks_exact(12)
        .map(|c| (u32::from_le_bytes(word(&c[0..4])), u32::from_le_bytes(word(&c[4..8])), f32::from_le_bytes(word(&c[8..12])) as f64))
        .collect();
    EdgeList::new(num_nodes, edges)
}

/// Non-zero runs of a row-major label raster, each `[start, length, label]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLengthLabels {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub runs: Vec<[u32; 3]>,
}

impl RunLengthLabels {
    pub fn encode(labels: ArrayView2<u32>) -> Self {
        let (height, width) = labels.dim();
        let mut runs: Vec<[u32; 3]> = Vec::new();
        for (p, &l) in labels.iter().enumerate() {
            if l == 0 {
                continue;
            }
            match runs.last_mut() {
                Some(run) if run[2] == l && (run[0] + run[1]) as usize == p => run[1] += 1,
                _ => runs.push([p as u32, 1, l]),
            }
        }
        RunLengthLabels { version: 1, height, width, runs }
    }

    pub fn decode(&self) -> Result<Array2<u32>> {
        let n = self.height * self.width;
        let mut out = vec![0u32; n];
        for &[start, len, label] in &self.runs {
            let (s, e) = (start as usize, start as usize + len as usize);
            if e > n || label == 0 {
                return Err(Error::Format(format!("run [{start}, {len}, {label}] is invalid")));
            }
            out[s..e].fill(label);
        }
        Array2::from_shape_vec((self.height, self.width), out).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Append-only JSON-lines log.
pub struct RunLog<W: Write> {
    out: W,
}

impl RunLog<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(RunLog { out: BufWriter::new(File::create(path)?) })
    }
}

impl<W: Write> RunLog<W> {
    pub fn new(out: W) -> Self {
        RunLog { out }
    }

    pub fn record<T: Serialize>(&mut self, event: &str, payload: &T) -> Result<()> {
        let line = serde_json::json!({ "event": event, "data": payload });
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

//! `.mt` tensor files.
//!
//! Layout (all integers little-endian):
//! - magic `b"MESS"`
//! - version: u8 (currently 1)
//! - dtype: u8 (`0` = f32, `1` = u16)
//! - rank: u8
//! - dims: `rank` × u32
//! - payload: `product(dims)` elements, row-major, first dim outermost

use std::fs;
use std::io::Write;
use std::path::Path;

use super::TensorIoError;

pub const MAGIC: &[u8; 4] = b"MESS";
pub const FORMAT_VERSION: u8 = 1;

/// Sentinel for unlabeled pixels in label maps.
pub const IGNORE_LABEL: u16 = u16::MAX;

/// Allowed deviation of a per-pixel class distribution from summing to one.
pub const SOFTMAX_SUM_TOLERANCE: f64 = 1e-4;

/// Allowed excursion of a single probability outside `[0, 1]`.
pub const PROBABILITY_SLACK: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U16 = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self, TensorIoError> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U16),
            other => Err(TensorIoError::UnsupportedDType(other)),
        }
    }

    fn element_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U16 => 2,
        }
    }
}

/// Decoded file header plus the untouched payload bytes.
#[derive(Debug, Clone)]
pub struct RawTensor {
    pub dtype: DType,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

impl RawTensor {
    pub fn decode(bytes: &[u8]) -> Result<Self, TensorIoError> {
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(TensorIoError::BadMagic);
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(TensorIoError::UnsupportedVersion(bytes[4]));
        }
        let dtype = DType::from_code(bytes[5])?;
        let rank = bytes[6] as usize;
        let header_len = 7 + 4 * rank;
        if bytes.len() < header_len {
            return Err(TensorIoError::DimMismatch(format!(
                "header declares rank {rank} but file has {} bytes",
                bytes.len()
            )));
        }
        let dims: Vec<u32> = bytes[7..header_len]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let expected = dims
            .iter()
            .try_fold(dtype.element_size(), |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| TensorIoError::DimMismatch(format!("dims {dims:?} overflow")))?;
        let payload = &bytes[header_len..];
        if payload.len() != expected {
            return Err(TensorIoError::DimMismatch(format!(
                "dims {dims:?} need {expected} payload bytes, found {}",
                payload.len()
            )));
        }
        Ok(RawTensor {
            dtype,
            dims,
            payload: payload.to_vec(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.dtype as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    fn expect(&self, dtype: DType, rank: usize) -> Result<(), TensorIoError> {
        if self.dtype != dtype {
            return Err(TensorIoError::WrongDType {
                expected: dtype as u8,
                found: self.dtype as u8,
            });
        }
        if self.dims.len() != rank {
            return Err(TensorIoError::DimMismatch(format!(
                "expected rank {rank}, found rank {}",
                self.dims.len()
            )));
        }
        Ok(())
    }

    fn f32_values(&self) -> Vec<f32> {
        self.payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }

    fn u16_values(&self) -> Vec<u16> {
        self.payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    }
}

pub fn read_raw(path: &Path) -> Result<RawTensor, TensorIoError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TensorIoError::MissingFile(path.to_path_buf()),
        _ => TensorIoError::Io(e),
    })?;
    RawTensor::decode(&bytes)
}

pub fn write_raw(raw: &RawTensor, path: &Path) -> Result<(), TensorIoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&raw.encode())?;
    Ok(())
}

/// Per-exit softmax volume, `classes × rows × cols`, class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensor {
    /// Exit the tensor came from. Not stored in the file; set by the loader.
    pub exit_id: u32,
    classes: usize,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl PredictionTensor {
    /// Builds a tensor, checking the softmax invariants.
    pub fn new(
        classes: usize,
        rows: usize,
        cols: usize,
        data: Vec<f32>,
    ) -> Result<Self, TensorIoError> {
        if classes == 0 || data.len() != classes * rows * cols {
            return Err(TensorIoError::DimMismatch(format!(
                "{classes}x{rows}x{cols} tensor needs {} values, got {}",
                classes * rows * cols,
                data.len()
            )));
        }
        let t = PredictionTensor {
            exit_id: 0,
            classes,
            rows,
            cols,
            data,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_exit_id(mut self, exit_id: u32) -> Self {
        self.exit_id = exit_id;
        self
    }

    fn validate(&self) -> Result<(), TensorIoError> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(TensorIoError::NonFiniteValue { index: i });
        }
        if let Some(i) = self
            .data
            .iter()
            .position(|&v| !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&v))
        {
            return Err(TensorIoError::ProbabilityOutOfRange {
                index: i,
                value: self.data[i],
            });
        }
        let plane = self.rows * self.cols;
        for p in 0..plane {
            let sum: f64 = (0..self.classes).map(|m| self.data[m * plane + p] as f64).sum();
            if (sum - 1.0).abs() > SOFTMAX_SUM_TOLERANCE {
                return Err(TensorIoError::BadDistribution { pixel: p, sum });
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Probability of `class` at flat pixel index `pixel`.
    #[inline]
    pub fn prob(&self, class: usize, pixel: usize) -> f32 {
        self.data[class * self.rows * self.cols + pixel]
    }

    /// Class distribution at one flat pixel index.
    pub fn distribution(&self, pixel: usize) -> impl Iterator<Item = f32> + Clone + '_ {
        let plane = self.pixel_count();
        (0..self.classes).map(move |m| self.data[m * plane + pixel])
    }

    /// Per-pixel argmax; ties resolve to the lowest class id.
    pub fn argmax(&self) -> LabelMap {
        let data = (0..self.pixel_count())
            .map(|p| {
                let mut best = 0usize;
                let mut best_v = self.prob(0, p);
                for m in 1..self.classes {
                    let v = self.prob(m, p);
                    if v > best_v {
                        best = m;
                        best_v = v;
                    }
                }
                best as u16
            })
            .collect();
        LabelMap {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    fn to_raw(&self) -> RawTensor {
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        RawTensor {
            dtype: DType::F32,
            dims: vec![self.classes as u32, self.rows as u32, self.cols as u32],
            payload,
        }
    }
}

/// Ground-truth or predicted class ids, `rows × cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, data: Vec<u16>) -> Result<Self, TensorIoError> {
        if data.len() != rows * cols {
            return Err(TensorIoError::DimMismatch(format!(
                "{rows}x{cols} label map needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(LabelMap { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, label: u16) -> Self {
        LabelMap {
            rows,
            cols,
            data: vec![label; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u16 {
        self.data[r * self.cols + c]
    }

    /// Checks that every non-ignored id is below `classes`.
    pub fn check_classes(&self, classes: usize) -> Result<(), TensorIoError> {
        match self
            .data
            .iter()
            .position(|&v| v != IGNORE_LABEL && v as usize >= classes)
        {
            Some(p) => Err(TensorIoError::LabelOutOfRange {
                pixel: p,
                label: self.data[p],
                classes,
            }),
            None => Ok(()),
        }
    }

    fn to_raw(&self) -> RawTensor {
        let mut payload = Vec::with_capacity(self.data.len() * 2);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        RawTensor {
            dtype: DType::U16,
            dims: vec![self.rows as u32, self.cols as u32],
            payload,
        }
    }
}

/// Reads a `classes × rows × cols` f32 prediction tensor.
pub fn read_tensor(path: &Path) -> Result<PredictionTensor, TensorIoError> {
    let raw = read_raw(path)?;
    raw.expect(DType::F32, 3)?;
    let [m, r, c] = [raw.dims[0], raw.dims[1], raw.dims[2]].map(|d| d as usize);
    PredictionTensor::new(m, r, c, raw.f32_values())
}

pub fn write_tensor(tensor: &PredictionTensor, path: &Path) -> Result<(), TensorIoError> {
    write_raw(&tensor.to_raw(), path)
}

/// Reads a `rows × cols` u16 label map.
pub fn read_label_map(path: &Path) -> Result<LabelMap, TensorIoError> {
    let raw = read_raw(path)?;
    raw.expect(DType::U16, 2)?;
    LabelMap::new(raw.dims[0] as usize, raw.dims[1] as usize, raw.u16_values())
}

pub fn write_label_map(labels: &LabelMap, path: &Path) -> Result<(), TensorIoError> {
    write_raw(&labels.to_raw(), path)
}

/// Writes a rank-2 f32 grid, e.g. a confidence map.
pub fn write_f32_grid(
    rows: usize,
    cols: usize,
    values: impl IntoIterator<Item = f32>,
    path: &Path,
) -> Result<(), TensorIoError> {
    let mut payload = Vec::with_capacity(rows * cols * 4);
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    if payload.len() != rows * cols * 4 {
        return Err(TensorIoError::DimMismatch(format!(
            "grid {rows}x{cols} got {} values",
            payload.len() / 4
        )));
    }
    write_raw(
        &RawTensor {
            dtype: DType::F32,
            dims: vec![rows as u32, cols as u32],
            payload,
        },
        path,
    )
}

/// Reads a rank-2 f32 grid written by [`write_f32_grid`].
pub fn read_f32_grid(path: &Path) -> Result<(usize, usize, Vec<f32>), TensorIoError> {
    let raw = read_raw(path)?;
    raw.expect(DType::F32, 2)?;
    Ok((raw.dims[0] as usize, raw.dims[1] as usize, raw.f32_values()))
}

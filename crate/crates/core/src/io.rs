//! On-disk containers: MSD stacks, labeled masks and generic matrices.
//!
//! Every container is a small JSON header plus a sibling raw payload:
//!
//! | header        | payload                               |
//! |---------------|---------------------------------------|
//! | `X.json` MSD1 | `X.bin` floats `[row][col][band]`, `X.valid` mask bytes |
//! | `X.json` MSK1 | `X.bin` mask bytes (0/1), row-major   |
//! | `X.json` MSM1 | `X.bin` matrix entries, row-major     |

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::spectra::WavelengthGrid;
use crate::stack::{MultispectralStack, RoiMask, StackError};

pub const STACK_MAGIC: &str = "MSD1";
pub const MASK_MAGIC: &str = "MSK1";
pub const MATRIX_MAGIC: &str = "MSM1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid header: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("{path}: payload holds {found} {unit}, header declares {expected}")]
    DimensionMismatch {
        path: PathBuf,
        unit: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Stack(#[from] StackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "f64le")]
    F64Le,
    #[serde(rename = "u8")]
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::F64Le => 8,
            Dtype::U8 => 1,
        }
    }

    /// The float dtype that stores `T` without loss.
    pub fn native<T: Scalar>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            Dtype::F32Le
        } else {
            Dtype::F64Le
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackHeader {
    pub magic: String,
    pub height: usize,
    pub width: usize,
    pub wavelengths_nm: Vec<f64>,
    pub pixel_spacing_mm: f64,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub magic: String,
    pub label: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub magic: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
    pub column_ids: Vec<String>,
}

/// Payload path paired with a header path.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Valid-mask path paired with a stack header path.
pub fn valid_mask_path(header: &Path) -> PathBuf {
    header.with_extension("valid")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<H: Serialize>(path: &Path, header: &H) -> Result<(), IoError> {
    let mut text = serde_json::to_vec_pretty(header).map_err(|source| IoError::Header {
        path: path.to_path_buf(),
        source,
    })?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<H: for<'de> Deserialize<'de>>(path: &Path) -> Result<H, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Header {
        path: path.to_path_buf(),
        source,
    })
}

fn check_magic(path: &Path, found: &str, expected: &str) -> Result<(), IoError> {
    if found != expected {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("magic '{found}', expected '{expected}'"),
        });
    }
    Ok(())
}

fn encode_floats<T: Scalar>(values: impl Iterator<Item = T>, dtype: Dtype, out: &mut Vec<u8>) {
    for v in values {
        match dtype {
            Dtype::F32Le => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            Dtype::F64Le => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            Dtype::U8 => unreachable!("u8 is not a float dtype"),
        }
    }
}

fn decode_floats<T: Scalar>(bytes: &[u8], dtype: Dtype) -> Vec<T> {
    match dtype {
        Dtype::F32Le => bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        Dtype::F64Le => bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Dtype::U8 => unreachable!("u8 is not a float dtype"),
    }
}

/// Validates a payload length against `expected_units` records of
/// `unit_bytes` each. Whole records of the wrong count are a dimension
/// mismatch; a partial trailing record is a format error at the byte where
/// the data stops.
fn check_payload(
    path: &Path,
    len: usize,
    unit_bytes: usize,
    expected_units: usize,
    unit: &'static str,
) -> Result<(), IoError> {
    if len == unit_bytes * expected_units {
        return Ok(());
    }
    if unit_bytes > 0 && len % unit_bytes == 0 {
        return Err(IoError::DimensionMismatch {
            path: path.to_path_buf(),
            unit,
            expected: expected_units,
            found: len / unit_bytes,
        });
    }
    Err(IoError::Format {
        path: path.to_path_buf(),
        offset: len as u64,
        message: format!(
            "payload truncated: {len} bytes is not a whole number of {unit} ({unit_bytes} bytes each)"
        ),
    })
}

fn decode_mask(path: &Path, bytes: &[u8], height: usize, width: usize) -> Result<Array2<bool>, IoError> {
    check_payload(path, bytes.len(), width, height, "mask rows")?;
    if let Some(i) = bytes.iter().position(|&b| b > 1) {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            offset: i as u64,
            message: format!("mask byte {} is neither 0 nor 1", bytes[i]),
        });
    }
    Ok(Array2::from_shape_vec((height, width), bytes.iter().map(|&b| b == 1).collect())
        .expect("length checked"))
}

fn encode_mask(mask: &Array2<bool>) -> Vec<u8> {
    mask.iter().map(|&m| m as u8).collect()
}

/// Writes a stack as header `path`, payload and valid mask.
pub fn write_stack<T: Scalar>(stack: &MultispectralStack<T>, path: &Path, dtype: Dtype) -> Result<(), IoError> {
    assert!(dtype != Dtype::U8, "stack payloads are floating point");
    let header = StackHeader {
        magic: STACK_MAGIC.into(),
        height: stack.height(),
        width: stack.width(),
        wavelengths_nm: stack.grid().wavelengths().to_vec(),
        pixel_spacing_mm: stack.pixel_spacing_mm(),
        dtype,
    };
    let mut payload = Vec::with_capacity(stack.data().len() * dtype.size());
    encode_floats(stack.data().iter().copied(), dtype, &mut payload);
    write_atomic(&payload_path(path), &payload)?;
    write_atomic(&valid_mask_path(path), &encode_mask(stack.valid_mask()))?;
    write_json(path, &header)
}

pub fn read_stack<T: Scalar>(path: &Path) -> Result<MultispectralStack<T>, IoError> {
    let header: StackHeader = read_json(path)?;
    check_magic(path, &header.magic, STACK_MAGIC)?;
    if header.dtype == Dtype::U8 {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "stack dtype must be f32le or f64le".into(),
        });
    }
    let grid = WavelengthGrid::new(header.wavelengths_nm.clone()).map_err(StackError::from)?;
    let (h, w, l) = (header.height, header.width, grid.len());

    let data_path = payload_path(path);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    check_payload(&data_path, bytes.len(), h * w * header.dtype.size(), l, "wavelength planes")?;
    let data = Array3::from_shape_vec((h, w, l), decode_floats(&bytes, header.dtype)).expect("length checked");

    let mask_path = valid_mask_path(path);
    let mask_bytes = fs::read(&mask_path).map_err(io_err(&mask_path))?;
    let valid = decode_mask(&mask_path, &mask_bytes, h, w)?;

    Ok(MultispectralStack::new(Arc::new(grid), header.pixel_spacing_mm, data, valid)?)
}

pub fn write_mask(mask: &RoiMask, path: &Path) -> Result<(), IoError> {
    let (height, width) = mask.mask.dim();
    write_atomic(&payload_path(path), &encode_mask(&mask.mask))?;
    write_json(
        path,
        &MaskHeader {
            magic: MASK_MAGIC.into(),
            label: mask.label.clone(),
            height,
            width,
        },
    )
}

pub fn read_mask(path: &Path) -> Result<RoiMask, IoError> {
    let header: MaskHeader = read_json(path)?;
    check_magic(path, &header.magic, MASK_MAGIC)?;
    let data_path = payload_path(path);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let mask = decode_mask(&data_path, &bytes, header.height, header.width)?;
    Ok(RoiMask::new(header.label, mask))
}

/// Float matrix with named columns, e.g. coefficients or standardized scores.
pub fn write_matrix<T: Scalar>(
    m: &Array2<T>,
    column_ids: &[String],
    path: &Path,
    dtype: Dtype,
) -> Result<(), IoError> {
    assert!(dtype != Dtype::U8, "use write_bool_matrix for masks");
    assert_eq!(column_ids.len(), m.ncols(), "one id per column");
    let mut payload = Vec::with_capacity(m.len() * dtype.size());
    encode_floats(m.iter().copied(), dtype, &mut payload);
    write_atomic(&payload_path(path), &payload)?;
    write_json(
        path,
        &MatrixHeader {
            magic: MATRIX_MAGIC.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            dtype,
            column_ids: column_ids.to_vec(),
        },
    )
}

pub fn write_bool_matrix(m: &Array2<bool>, column_ids: &[String], path: &Path) -> Result<(), IoError> {
    assert_eq!(column_ids.len(), m.ncols(), "one id per column");
    write_atomic(&payload_path(path), &encode_mask(m))?;
    write_json(
        path,
        &MatrixHeader {
            magic: MATRIX_MAGIC.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            dtype: Dtype::U8,
            column_ids: column_ids.to_vec(),
        },
    )
}

fn read_matrix_header(path: &Path) -> Result<(MatrixHeader, Vec<u8>), IoError> {
    let header: MatrixHeader = read_json(path)?;
    check_magic(path, &header.magic, MATRIX_MAGIC)?;
    if header.column_ids.len() != header.cols {
        return Err(IoError::DimensionMismatch {
            path: path.to_path_buf(),
            unit: "column ids",
            expected: header.cols,
            found: header.column_ids.len(),
        });
    }
    let data_path = payload_path(path);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    check_payload(&data_path, bytes.len(), header.cols * header.dtype.size(), header.rows, "rows")?;
    Ok((header, bytes))
}

pub fn read_matrix<T: Scalar>(path: &Path) -> Result<(Array2<T>, Vec<String>), IoError> {
    let (header, bytes) = read_matrix_header(path)?;
    if header.dtype == Dtype::U8 {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "expected a float matrix".into(),
        });
    }
    let m = Array2::from_shape_vec((header.rows, header.cols), decode_floats(&bytes, header.dtype))
        .expect("length checked");
    Ok((m, header.column_ids))
}

pub fn read_bool_matrix(path: &Path) -> Result<(Array2<bool>, Vec<String>), IoError> {
    let (header, bytes) = read_matrix_header(path)?;
    if header.dtype != Dtype::U8 {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "expected a u8 matrix".into(),
        });
    }
    let data_path = payload_path(path);
    let m = decode_mask(&data_path, &bytes, header.rows, header.cols)?;
    Ok((m, header.column_ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_stack(h: usize, w: usize, l: usize) -> MultispectralStack<f32> {
        let grid = Arc::new(WavelengthGrid::new((0..l).map(|i| 700.0 + 10.0 * i as f64).collect()).unwrap());
        let data = Array3::from_shape_fn((h, w, l), |(r, c, b)| (r * 100 + c * 10 + b) as f32 * 0.37 - 3.0);
        let valid = Array2::from_shape_fn((h, w), |(r, c)| (r + c) % 3 != 0);
        MultispectralStack::new(grid, 0.1, data, valid).unwrap()
    }

    #[test]
    fn stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let s = sample_stack(3, 4, 28);
        write_stack(&s, &p, Dtype::F32Le).unwrap();
        let back: MultispectralStack<f32> = read_stack(&p).unwrap();
        assert_eq!(back, s);
        let header: StackHeader = read_json(&p).unwrap();
        assert_eq!(header.magic, "MSD1");
        assert_eq!(header.dtype, Dtype::F32Le);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_stack(&sample_stack(2, 2, 28), &p, Dtype::F32Le).unwrap();
        let bin = payload_path(&p);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 3]).unwrap();
        match read_stack::<f32>(&p) {
            Err(IoError::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_plane_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_stack(&sample_stack(2, 3, 28), &p, Dtype::F32Le).unwrap();
        let bin = payload_path(&p);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..2 * 3 * 27 * 4]).unwrap();
        assert!(matches!(
            read_stack::<f32>(&p),
            Err(IoError::DimensionMismatch { expected: 28, found: 27, .. })
        ));
    }

    #[test]
    fn bad_magic_and_mask_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        write_stack(&sample_stack(2, 2, 3), &p, Dtype::F32Le).unwrap();
        fs::write(valid_mask_path(&p), [1u8, 0, 2, 1]).unwrap();
        assert!(matches!(read_stack::<f32>(&p), Err(IoError::Format { offset: 2, .. })));

        let text = fs::read_to_string(&p).unwrap().replace("MSD1", "XXXX");
        fs::write(&p, text).unwrap();
        assert!(matches!(read_stack::<f32>(&p), Err(IoError::Format { offset: 0, .. })));
    }

    #[test]
    fn f64_stack_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let s: MultispectralStack<f64> = sample_stack(2, 2, 3).cast();
        let s = MultispectralStack::new(
            s.grid().clone(),
            s.pixel_spacing_mm(),
            s.data().mapv(|x| x / 3.0),
            s.valid_mask().clone(),
        )
        .unwrap();
        write_stack(&s, &p, Dtype::native::<f64>()).unwrap();
        assert_eq!(read_stack::<f64>(&p).unwrap(), s);
    }

    #[test]
    fn mask_and_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("m.json");
        let roi = RoiMask::new("nerve", ndarray::array![[true, false, true], [false, false, true]]);
        write_mask(&roi, &mp).unwrap();
        assert_eq!(read_mask(&mp).unwrap(), roi);

        let xp = dir.path().join("x.json");
        let m = ndarray::array![[1.0f64, -2.5], [1.0 / 3.0, 0.0]];
        let ids = vec!["c1".to_string(), "c2".to_string()];
        write_matrix(&m, &ids, &xp, Dtype::F64Le).unwrap();
        let (back, back_ids) = read_matrix::<f64>(&xp).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_ids, ids);

        let bp = dir.path().join("b.json");
        let b = ndarray::array![[true, false], [false, true]];
        write_bool_matrix(&b, &ids, &bp).unwrap();
        assert_eq!(read_bool_matrix(&bp).unwrap().0, b);
        assert!(read_matrix::<f64>(&bp).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn any_stack_round_trips(
            h in 1usize..5, w in 1usize..5, l in 1usize..6,
            seed in prop::collection::vec(any::<u32>(), 1..200),
            spacing in 0.01f64..2.0,
        ) {
            let grid = Arc::new(WavelengthGrid::new((0..l).map(|i| 700.0 + 10.0 * i as f64).collect()).unwrap());
            let n = h * w * l;
            let data = Array3::from_shape_fn((h, w, l), |(r, c, b)| {
                let bits = seed[(r * w * l + c * l + b) % seed.len()];
                let x = f32::from_bits(bits);
                if x.is_finite() { x } else { (bits % 1000) as f32 }
            });
            prop_assume!(n > 0);
            let valid = Array2::from_shape_fn((h, w), |(r, c)| (seed[(r + c) % seed.len()] & 1) == 1);
            let s = MultispectralStack::new(grid, spacing, data, valid).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.json");
            write_stack(&s, &p, Dtype::F32Le).unwrap();
            let back: MultispectralStack<f32> = read_stack(&p).unwrap();
            prop_assert_eq!(back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            s.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, s);
        }
    }
}

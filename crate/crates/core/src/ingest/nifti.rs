//! Minimal NIfTI-1 single-file reader plus the fixture writer used by the
//! test suites. Only uncompressed `.nii` with the five datatypes below is
//! supported; anything else is rejected loudly.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Parcellation, TimeSeriesMatrix};

pub const HEADER_SIZE: usize = 348;

/// Byte order of a parsed file relative to the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Native,
    Swapped,
}

impl ByteOrder {
    pub fn is_little(self) -> bool {
        cfg!(target_endian = "little") == (self == ByteOrder::Native)
    }
}

/// Supported voxel datatypes (NIfTI datatype codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            8 => Ok(Datatype::Int32),
            16 => Ok(Datatype::Float32),
            64 => Ok(Datatype::Float64),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::Uint8 => 8,
            Datatype::Int16 => 16,
            Datatype::Int32 => 32,
            Datatype::Float32 => 32,
            Datatype::Float64 => 64,
        }
    }

    pub fn byte_size(self) -> usize {
        (self.bitpix() / 8) as usize
    }
}

/// The decoded fields of a NIfTI-1 header that this crate consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub byte_order: ByteOrder,
}

impl NiftiHeader {
    /// Spatial grid (x, y, z).
    pub fn grid_dims(&self) -> [usize; 3] {
        [self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize]
    }

    pub fn n_timepoints(&self) -> usize {
        if self.dim[0] >= 4 {
            self.dim[4] as usize
        } else {
            1
        }
    }

    /// TR recorded in the header (pixdim[4]); used only as a cross-check
    /// against the manifest.
    pub fn header_tr(&self) -> f64 {
        self.pixdim[4] as f64
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl<'a> Decoder<'a> {
    fn i16_at(&self, off: usize) -> i16 {
        let b: [u8; 2] = self.bytes[off..off + 2].try_into().unwrap();
        if self.little {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn i32_at(&self, off: usize) -> i32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.little {
            i32::from_le_bytes(b)
        } else {
            i32::from_be_bytes(b)
        }
    }

    fn f32_at(&self, off: usize) -> f32 {
        f32::from_bits(self.i32_at(off) as u32)
    }
}

/// Decode the fixed 348-byte NIfTI-1 header, selecting the byte order that
/// makes `sizeof_hdr` come out as 348.
pub fn parse_nifti_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::UnsupportedFormat(format!(
            "need at least {HEADER_SIZE} header bytes, got {}",
            bytes.len()
        )));
    }
    let native_little = cfg!(target_endian = "little");
    let native = Decoder {
        bytes,
        little: native_little,
    };
    let byte_order = if native.i32_at(0) == HEADER_SIZE as i32 {
        ByteOrder::Native
    } else {
        let swapped = Decoder {
            bytes,
            little: !native_little,
        };
        if swapped.i32_at(0) == HEADER_SIZE as i32 {
            ByteOrder::Swapped
        } else {
            return Err(Error::UnsupportedFormat(format!(
                "sizeof_hdr is {} natively and {} byte-swapped; expected 348",
                native.i32_at(0),
                Decoder {
                    bytes,
                    little: !native_little
                }
                .i32_at(0)
            )));
        }
    };
    let d = Decoder {
        bytes,
        little: byte_order.is_little(),
    };

    let mut dim = [0i16; 8];
    for (i, slot) in dim.iter_mut().enumerate() {
        *slot = d.i16_at(40 + 2 * i);
    }
    if !(1..=7).contains(&dim[0]) {
        return Err(Error::UnsupportedFormat(format!(
            "dim[0] = {} outside [1, 7]",
            dim[0]
        )));
    }
    for k in 1..=dim[0] as usize {
        if dim[k] < 1 {
            return Err(Error::UnsupportedFormat(format!(
                "dim[{k}] = {} must be at least 1",
                dim[k]
            )));
        }
    }

    let datatype = Datatype::from_code(d.i16_at(70))?;
    let bitpix = d.i16_at(72);
    if bitpix != datatype.bitpix() {
        return Err(Error::UnsupportedFormat(format!(
            "bitpix {} inconsistent with datatype (expected {})",
            bitpix,
            datatype.bitpix()
        )));
    }

    let mut pixdim = [0f32; 8];
    for (i, slot) in pixdim.iter_mut().enumerate() {
        *slot = d.f32_at(76 + 4 * i);
    }
    let vox_offset = d.f32_at(108);
    if vox_offset < HEADER_SIZE as f32 {
        return Err(Error::UnsupportedFormat(format!(
            "vox_offset {vox_offset} below {HEADER_SIZE}; only single-file images are supported"
        )));
    }

    Ok(NiftiHeader {
        sizeof_hdr: HEADER_SIZE as i32,
        dim,
        datatype,
        bitpix,
        pixdim,
        vox_offset,
        scl_slope: d.f32_at(112),
        scl_inter: d.f32_at(116),
        byte_order,
    })
}

/// Parse the header of a NIfTI file on disk.
pub fn read_nifti_header(path: &Path) -> Result<NiftiHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti_header(&bytes)
}

fn decode_value(dt: Datatype, raw: &[u8], little: bool) -> f64 {
    macro_rules! get {
        ($t:ty) => {{
            let b: [u8; std::mem::size_of::<$t>()] = raw.try_into().unwrap();
            if little {
                <$t>::from_le_bytes(b)
            } else {
                <$t>::from_be_bytes(b)
            }
        }};
    }
    match dt {
        Datatype::Uint8 => raw[0] as f64,
        Datatype::Int16 => get!(i16) as f64,
        Datatype::Int32 => get!(i32) as f64,
        Datatype::Float32 => get!(f32) as f64,
        Datatype::Float64 => get!(f64),
    }
}

/// Read all voxel values of a NIfTI file, in (x fastest, then y, z, t)
/// linear order, with slope/intercept scaling applied when scl_slope != 0.
pub fn read_all_voxels(path: &Path, header: &NiftiHeader) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let [nx, ny, nz] = header.grid_dims();
    let nt = header.n_timepoints();
    let n_values = nx * ny * nz * nt;
    let byte_size = header.datatype.byte_size();
    let start = header.vox_offset as usize;
    let need = start + n_values * byte_size;
    if bytes.len() < need {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("data section truncated: need {need} bytes, file has {}", bytes.len()),
            ),
        ));
    }
    let little = header.byte_order.is_little();
    let scale = header.scl_slope != 0.0;
    let mut out = Vec::with_capacity(n_values);
    for i in 0..n_values {
        let off = start + i * byte_size;
        let mut v = decode_value(header.datatype, &bytes[off..off + byte_size], little);
        if scale {
            v = v * header.scl_slope as f64 + header.scl_inter as f64;
        }
        out.push(v);
    }
    Ok(out)
}

/// Extract the masked voxel time-series of a 4-D volume. Rows are the voxels
/// with a nonzero mask label, in ascending linear voxel index order; columns
/// are timepoints. The TR comes from the manifest, not from the header.
pub fn read_nifti_timeseries(
    path: &Path,
    header: &NiftiHeader,
    mask: &Parcellation,
    tr_seconds: f64,
) -> Result<TimeSeriesMatrix> {
    if header.dim[0] != 4 {
        return Err(Error::Shape(format!(
            "expected a 4-D time-series volume, got dim[0] = {}",
            header.dim[0]
        )));
    }
    let grid = header.grid_dims();
    if let Some(mask_dims) = mask.dims() {
        if mask_dims != grid {
            return Err(Error::Shape(format!(
                "mask grid {mask_dims:?} does not match volume grid {grid:?}"
            )));
        }
    }
    let n_voxels = grid[0] * grid[1] * grid[2];
    if mask.labels().len() != n_voxels {
        return Err(Error::Shape(format!(
            "mask covers {} voxels, volume has {n_voxels}",
            mask.labels().len()
        )));
    }
    let selected: Vec<usize> = mask
        .labels()
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l != 0)
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        return Err(Error::Argument(
            "mask selects no voxels; nothing to extract".to_string(),
        ));
    }

    let values = read_all_voxels(path, header)?;
    let nt = header.n_timepoints();
    let mut m = DMatrix::zeros(selected.len(), nt);
    for (row, &vox) in selected.iter().enumerate() {
        for t in 0..nt {
            m[(row, t)] = values[t * n_voxels + vox];
        }
    }
    let row_ids = selected.iter().map(|&v| format!("vox{v}")).collect();
    TimeSeriesMatrix::new(m, row_ids, tr_seconds)
}

fn encode_value(dt: Datatype, v: f64, little: bool, out: &mut Vec<u8>) {
    macro_rules! put {
        ($x:expr) => {{
            if little {
                out.extend_from_slice(&$x.to_le_bytes());
            } else {
                out.extend_from_slice(&$x.to_be_bytes());
            }
        }};
    }
    match dt {
        Datatype::Uint8 => out.push(v as u8),
        Datatype::Int16 => put!(v as i16),
        Datatype::Int32 => put!(v as i32),
        Datatype::Float32 => put!(v as f32),
        Datatype::Float64 => put!(v),
    }
}

/// Fixture writer: emit a minimal single-file NIfTI-1 image. `data` is in
/// linear (x fastest, then y, z, t) order and must be representable in the
/// requested datatype. `swapped` selects the non-native byte order.
pub fn write_nifti1(
    path: &Path,
    dims: &[u16],
    datatype: Datatype,
    tr_seconds: f32,
    data: &[f64],
    swapped: bool,
) -> Result<()> {
    if dims.is_empty() || dims.len() > 7 {
        return Err(Error::Argument(format!(
            "dims must have 1..=7 entries, got {}",
            dims.len()
        )));
    }
    let n_values: usize = dims.iter().map(|&d| d as usize).product();
    if n_values != data.len() {
        return Err(Error::Shape(format!(
            "dims imply {n_values} values, got {}",
            data.len()
        )));
    }
    let little = cfg!(target_endian = "little") != swapped;
    let vox_offset: f32 = 352.0;

    let mut hdr = vec![0u8; vox_offset as usize];
    macro_rules! put_i16 {
        ($off:expr, $v:expr) => {{
            let b = if little {
                ($v as i16).to_le_bytes()
            } else {
                ($v as i16).to_be_bytes()
            };
            hdr[$off..$off + 2].copy_from_slice(&b);
        }};
    }
    macro_rules! put_i32 {
        ($off:expr, $v:expr) => {{
            let b = if little {
                ($v as i32).to_le_bytes()
            } else {
                ($v as i32).to_be_bytes()
            };
            hdr[$off..$off + 4].copy_from_slice(&b);
        }};
    }
    macro_rules! put_f32 {
        ($off:expr, $v:expr) => {{
            let b = if little {
                ($v as f32).to_le_bytes()
            } else {
                ($v as f32).to_be_bytes()
            };
            hdr[$off..$off + 4].copy_from_slice(&b);
        }};
    }

    put_i32!(0, HEADER_SIZE as i32);
    put_i16!(40, dims.len() as i16);
    for (i, &d) in dims.iter().enumerate() {
        put_i16!(40 + 2 * (i + 1), d as i16);
    }
    for k in dims.len() + 1..8 {
        put_i16!(40 + 2 * k, 1);
    }
    put_i16!(70, datatype.code());
    put_i16!(72, datatype.bitpix());
    for k in 0..8 {
        // pixdim: unit grid spacing, TR in slot 4
        let v = if k == 4 { tr_seconds } else { 1.0 };
        put_f32!(76 + 4 * k, v);
    }
    put_f32!(108, vox_offset);
    put_f32!(112, 0.0); // scl_slope = 0: no scaling
    put_f32!(116, 0.0);
    hdr[344..348].copy_from_slice(b"n+1\0");

    let mut body = Vec::with_capacity(data.len() * datatype.byte_size());
    for &v in data {
        encode_value(datatype, v, little, &mut body);
    }
    hdr.extend_from_slice(&body);
    std::fs::write(path, hdr).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SchemeTag;

    /// Hand-assembled header bytes with fields placed at the offsets of the
    /// published NIfTI-1 layout; independent of the fixture writer.
    fn hand_header(little: bool) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        let w32 = |b: &mut [u8], off: usize, v: i32| {
            let x = if little { v.to_le_bytes() } else { v.to_be_bytes() };
            b[off..off + 4].copy_from_slice(&x);
        };
        let w16 = |b: &mut [u8], off: usize, v: i16| {
            let x = if little { v.to_le_bytes() } else { v.to_be_bytes() };
            b[off..off + 2].copy_from_slice(&x);
        };
        let wf = |b: &mut [u8], off: usize, v: f32| {
            let x = if little {
                v.to_le_bytes()
            } else {
                v.to_be_bytes()
            };
            b[off..off + 4].copy_from_slice(&x);
        };
        w32(&mut b, 0, 348); // sizeof_hdr
        w16(&mut b, 40, 4); // dim[0]
        w16(&mut b, 42, 2); // x
        w16(&mut b, 44, 2); // y
        w16(&mut b, 46, 1); // z
        w16(&mut b, 48, 3); // t
        for k in 5..8 {
            w16(&mut b, 40 + 2 * k, 1);
        }
        w16(&mut b, 70, 16); // float32
        w16(&mut b, 72, 32);
        for k in 0..8 {
            wf(&mut b, 76 + 4 * k, if k == 4 { 2.5 } else { 1.0 });
        }
        wf(&mut b, 108, 352.0); // vox_offset
        wf(&mut b, 112, 2.0); // scl_slope
        wf(&mut b, 116, 1.0); // scl_inter
        b
    }

    #[test]
    fn parses_native_little_endian_header() {
        let bytes = hand_header(true);
        let h = parse_nifti_header(&bytes).unwrap();
        assert_eq!(
            h.byte_order,
            if cfg!(target_endian = "little") {
                ByteOrder::Native
            } else {
                ByteOrder::Swapped
            }
        );
        assert_eq!(h.dim[0], 4);
        assert_eq!(h.grid_dims(), [2, 2, 1]);
        assert_eq!(h.n_timepoints(), 3);
        assert_eq!(h.datatype, Datatype::Float32);
        assert_eq!(h.vox_offset, 352.0);
        assert!((h.header_tr() - 2.5).abs() < 1e-6);
    }

    #[test]
    fn parses_swapped_header_with_all_fields_swapped() {
        let bytes = hand_header(false);
        let h = parse_nifti_header(&bytes).unwrap();
        assert_eq!(
            h.byte_order,
            if cfg!(target_endian = "little") {
                ByteOrder::Swapped
            } else {
                ByteOrder::Native
            }
        );
        assert_eq!(h.grid_dims(), [2, 2, 1]);
        assert_eq!(h.datatype, Datatype::Float32);
        assert_eq!(h.scl_slope, 2.0);
        assert_eq!(h.scl_inter, 1.0);
    }

    #[test]
    fn rejects_header_with_bad_magic_size() {
        let bytes = vec![0u8; 352];
        let err = parse_nifti_header(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)), "{err}");
    }

    #[test]
    fn rejects_unsupported_datatype() {
        let mut bytes = hand_header(true);
        let code = if cfg!(target_endian = "little") {
            128i16.to_le_bytes() // DT_RGB24
        } else {
            128i16.to_be_bytes()
        };
        bytes[70..72].copy_from_slice(&code);
        // bitpix consistent with rgb
        let bp = if cfg!(target_endian = "little") {
            24i16.to_le_bytes()
        } else {
            24i16.to_be_bytes()
        };
        bytes[72..74].copy_from_slice(&bp);
        let err = parse_nifti_header(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDatatype(128)), "{err}");
    }

    #[test]
    fn rejects_short_buffer() {
        assert!(parse_nifti_header(&[0u8; 100]).is_err());
    }

    #[test]
    fn reads_hand_written_volume_in_linear_order() {
        // 2x2x1x3 float32 volume: volume t holds [4t+1, 4t+2, 4t+3, 4t+4]
        // in x-fastest order.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nii");
        let mut bytes = hand_header(true);
        // disable scaling for this fixture
        let zero = 0f32.to_le_bytes();
        bytes[112..116].copy_from_slice(&zero);
        for t in 0..3u32 {
            for v in 0..4u32 {
                let x = ((t * 4 + v + 1) as f32).to_le_bytes();
                bytes.extend_from_slice(&x);
            }
        }
        std::fs::write(&path, &bytes).unwrap();
        let header = read_nifti_header(&path).unwrap();
        let mask = Parcellation::new(vec![1, 1, 1, 1], Some([2, 2, 1]), SchemeTag::External, vec![])
            .unwrap();
        let ts = read_nifti_timeseries(&path, &header, &mask, 2.5).unwrap();
        assert_eq!(ts.n_signals(), 4);
        assert_eq!(ts.n_timepoints(), 3);
        for vox in 0..4 {
            for t in 0..3 {
                assert_eq!(ts.values()[(vox, t)], (t * 4 + vox + 1) as f64);
            }
        }
        assert_eq!(ts.row_ids()[0], "vox0");
    }

    #[test]
    fn applies_slope_and_intercept() {
        // slope 2, intercept 1, raw value 3 -> 7
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scaled.nii");
        let mut bytes = hand_header(true);
        for _ in 0..12 {
            bytes.extend_from_slice(&3f32.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let header = read_nifti_header(&path).unwrap();
        let mask = Parcellation::new(vec![1, 1, 1, 1], Some([2, 2, 1]), SchemeTag::External, vec![])
            .unwrap();
        let ts = read_nifti_timeseries(&path, &header, &mask, 2.5).unwrap();
        assert_eq!(ts.values()[(0, 0)], 7.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nii");
        let mut bytes = hand_header(true);
        for _ in 0..12 {
            bytes.extend_from_slice(&1f32.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let header = read_nifti_header(&path).unwrap();
        let mask =
            Parcellation::new(vec![0, 0, 0, 0], Some([2, 2, 1]), SchemeTag::External, vec![])
                .unwrap();
        let err = read_nifti_timeseries(&path, &header, &mask, 2.5).unwrap_err();
        assert!(err.to_string().contains("no voxels"), "{err}");
    }

    #[test]
    fn truncated_data_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.nii");
        let mut bytes = hand_header(true);
        bytes.extend_from_slice(&1f32.to_le_bytes()); // 1 of 12 values
        std::fs::write(&path, &bytes).unwrap();
        let header = read_nifti_header(&path).unwrap();
        let mask = Parcellation::new(vec![1, 1, 1, 1], Some([2, 2, 1]), SchemeTag::External, vec![])
            .unwrap();
        let err = read_nifti_timeseries(&path, &header, &mask, 2.5).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn mask_dim_mismatch_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nii");
        let mut bytes = hand_header(true);
        for _ in 0..12 {
            bytes.extend_from_slice(&1f32.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let header = read_nifti_header(&path).unwrap();
        let mask = Parcellation::new(
            vec![1; 8],
            Some([2, 2, 2]),
            SchemeTag::External,
            vec![],
        )
        .unwrap();
        let err = read_nifti_timeseries(&path, &header, &mask, 2.5).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn round_trip_all_datatypes_and_orders() {
        let dir = tempfile::tempdir().unwrap();
        for dt in [
            Datatype::Uint8,
            Datatype::Int16,
            Datatype::Int32,
            Datatype::Float32,
            Datatype::Float64,
        ] {
            for swapped in [false, true] {
                let path = dir.path().join(format!("rt_{}_{}.nii", dt.code(), swapped));
                let data: Vec<f64> = (0..24).map(|i| (i % 120) as f64).collect();
                write_nifti1(&path, &[2, 3, 2, 2], dt, 1.5, &data, swapped).unwrap();
                let header = read_nifti_header(&path).unwrap();
                assert_eq!(header.datatype, dt);
                let voxels = read_all_voxels(&path, &header).unwrap();
                assert_eq!(voxels, data, "{dt:?} swapped={swapped}");
            }
        }
    }
}

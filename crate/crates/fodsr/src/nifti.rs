//! NIfTI-1 single-file (.nii) reader and writer.
//!
//! Supported subset: float32, little-endian, magic `n+1\0`, 3D or 4D.
//! `scl_slope`/`scl_inter` are honored on read (no transform when slope is
//! 0 or 1 and inter is 0) and written as 1/0, so roundtrips are bit-exact
//! on the payload.

use crate::error::{FodError, Result};
use crate::volume::VolumeHeader;
use byteorder::{ByteOrder, LittleEndian};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_FLOAT32: i16 = 16;

mod off {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const SFORM_CODE: usize = 254;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

/// Read a float32 NIfTI-1 volume.
///
/// Returns the header and the dense voxel array in x-fastest order, exactly
/// as stored in the file (after any declared slope/inter scaling).
pub fn read_nifti(path: &Path) -> Result<(VolumeHeader, Vec<f32>)> {
    let mut file = File::open(path)?;
    let mut hdr = [0u8; HEADER_SIZE];
    file.read_exact(&mut hdr).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FodError::Format(format!(
                "{}: file shorter than the 348-byte NIfTI-1 header",
                path.display()
            ))
        } else {
            FodError::Io(e)
        }
    })?;

    let magic = &hdr[off::MAGIC..off::MAGIC + 4];
    if magic == b"ni1\0" {
        return Err(FodError::Unsupported(
            "dual-file NIfTI (ni1 magic) is not supported; use single-file .nii".into(),
        ));
    }
    if magic != b"n+1\0" {
        return Err(FodError::Format(format!(
            "{}: bad magic {:?}, not a NIfTI-1 file",
            path.display(),
            &magic
        )));
    }

    let ndim = LittleEndian::read_i16(&hdr[off::DIM..]);
    if !(1..=7).contains(&ndim) {
        return Err(FodError::Unsupported(format!(
            "dim[0]={ndim}: file is not little-endian or is corrupt"
        )));
    }
    if !(3..=4).contains(&ndim) {
        return Err(FodError::Unsupported(format!(
            "only 3D/4D volumes supported, got {ndim}D"
        )));
    }
    let datatype = LittleEndian::read_i16(&hdr[off::DATATYPE..]);
    if datatype != DT_FLOAT32 {
        return Err(FodError::Unsupported(format!(
            "datatype code {datatype} unsupported; only float32 (16)"
        )));
    }

    let mut dims = Vec::with_capacity(ndim as usize);
    for i in 0..ndim as usize {
        let d = LittleEndian::read_i16(&hdr[off::DIM + 2 * (i + 1)..]);
        if d < 1 {
            return Err(FodError::Format(format!("dim[{}] = {d} invalid", i + 1)));
        }
        dims.push(d as usize);
    }

    let mut voxel_size = [0.0f32; 3];
    for (i, v) in voxel_size.iter_mut().enumerate() {
        *v = LittleEndian::read_f32(&hdr[off::PIXDIM + 4 * (i + 1)..]);
        if !(*v > 0.0) {
            // Some writers leave pixdim 0; substitute 1mm rather than reject.
            *v = 1.0;
        }
    }

    let sform_code = LittleEndian::read_i16(&hdr[off::SFORM_CODE..]);
    let mut affine = [[0.0f32; 4]; 4];
    if sform_code > 0 {
        for (r, base) in [off::SROW_X, off::SROW_Y, off::SROW_Z].iter().enumerate() {
            for c in 0..4 {
                affine[r][c] = LittleEndian::read_f32(&hdr[base + 4 * c..]);
            }
        }
    } else {
        for i in 0..3 {
            affine[i][i] = voxel_size[i];
        }
    }
    affine[3] = [0.0, 0.0, 0.0, 1.0];

    let descrip = &hdr[off::DESCRIP..off::DESCRIP + 80];
    let end = descrip.iter().position(|&b| b == 0).unwrap_or(80);
    let intent = String::from_utf8_lossy(&descrip[..end]).into_owned();

    let header = VolumeHeader::new(dims, voxel_size, affine, intent)?;

    let vox_offset = LittleEndian::read_f32(&hdr[off::VOX_OFFSET..]) as i64;
    if vox_offset < HEADER_SIZE as i64 {
        return Err(FodError::Format(format!("vox_offset {vox_offset} < 348")));
    }
    let skip = vox_offset as usize - HEADER_SIZE;
    if skip > 0 {
        std::io::copy(&mut (&mut file).take(skip as u64), &mut std::io::sink())?;
    }

    let n = header.n_values();
    let mut payload = vec![0u8; n * 4];
    file.read_exact(&mut payload).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FodError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("{}: payload truncated, expected {n} float32 values", path.display()),
            ))
        } else {
            FodError::Io(e)
        }
    })?;
    let mut data = vec![0.0f32; n];
    LittleEndian::read_f32_into(&payload, &mut data);

    let slope = LittleEndian::read_f32(&hdr[off::SCL_SLOPE..]);
    let inter = LittleEndian::read_f32(&hdr[off::SCL_INTER..]);
    let scaling_declared = !(slope == 0.0 || slope == 1.0) || inter != 0.0;
    if scaling_declared {
        let s = if slope == 0.0 { 1.0 } else { slope };
        for v in &mut data {
            *v = s * *v + inter;
        }
    }

    Ok((header, data))
}

/// Write a float32 NIfTI-1 single-file volume (348-byte header, payload at
/// byte 352).
pub fn write_nifti(header: &VolumeHeader, data: &[f32], path: &Path) -> Result<()> {
    header.validate()?;
    if data.len() != header.n_values() {
        return Err(FodError::InvalidArgument(format!(
            "data length {} does not match dims {:?}",
            data.len(),
            header.dims
        )));
    }
    for &d in &header.dims {
        if d > i16::MAX as usize {
            return Err(FodError::InvalidArgument(format!(
                "dimension {d} exceeds the NIfTI-1 i16 limit"
            )));
        }
    }

    let mut hdr = [0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut hdr[off::SIZEOF_HDR..], HEADER_SIZE as i32);
    hdr[38] = b'r'; // regular

    let ndim = header.dims.len();
    LittleEndian::write_i16(&mut hdr[off::DIM..], ndim as i16);
    for i in 0..7 {
        let d = header.dims.get(i).copied().unwrap_or(1) as i16;
        LittleEndian::write_i16(&mut hdr[off::DIM + 2 * (i + 1)..], d);
    }

    LittleEndian::write_i16(&mut hdr[off::DATATYPE..], DT_FLOAT32);
    LittleEndian::write_i16(&mut hdr[off::BITPIX..], 32);

    LittleEndian::write_f32(&mut hdr[off::PIXDIM..], 1.0);
    for i in 0..3 {
        LittleEndian::write_f32(&mut hdr[off::PIXDIM + 4 * (i + 1)..], header.voxel_size[i]);
    }

    LittleEndian::write_f32(&mut hdr[off::VOX_OFFSET..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut hdr[off::SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut hdr[off::SCL_INTER..], 0.0);
    hdr[off::XYZT_UNITS] = 2; // millimetres

    let descrip = header.intent.as_bytes();
    let n = descrip.len().min(79);
    hdr[off::DESCRIP..off::DESCRIP + n].copy_from_slice(&descrip[..n]);

    LittleEndian::write_i16(&mut hdr[off::SFORM_CODE..], 1);
    for (r, base) in [off::SROW_X, off::SROW_Y, off::SROW_Z].iter().enumerate() {
        for c in 0..4 {
            LittleEndian::write_f32(&mut hdr[base + 4 * c..], header.affine[r][c]);
        }
    }

    hdr[off::MAGIC..off::MAGIC + 4].copy_from_slice(b"n+1\0");

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&hdr)?;
    w.write_all(&[0u8; 4])?; // no extensions
    let mut buf = vec![0u8; data.len() * 4];
    LittleEndian::write_f32_into(data, &mut buf);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Read a 3D volume (e.g. a tissue-fraction or mask map).
pub fn read_nifti_3d(path: &Path) -> Result<(VolumeHeader, Vec<f32>)> {
    let (header, data) = read_nifti(path)?;
    if header.dims.len() != 3 {
        return Err(FodError::InvalidArgument(format!(
            "{}: expected a 3D volume, got {}D",
            path.display(),
            header.dims.len()
        )));
    }
    Ok((header, data))
}

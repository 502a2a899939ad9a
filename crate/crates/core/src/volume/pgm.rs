//! Binary PGM (P5) slice stacks.
//!
//! A volume is exported as one 8-bit binary PGM per z-slice, named
//! `slice_NNNN.pgm` with `NNNN` the absolute z index zero-padded to four
//! digits. Headers are written exactly as `P5\n<width> <height>\n255\n`;
//! the reader accepts any standard P5 header (whitespace and `#` comments)
//! but requires maxval 255.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Extent3D, SliceImage, Volume3D, VolumeError};

/// File name of the slice at absolute z index `z`.
pub fn slice_filename(z: u64) -> String {
    format!("slice_{z:04}.pgm")
}

fn io_err(path: &Path, source: std::io::Error) -> VolumeError {
    VolumeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> VolumeError {
    VolumeError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Write one PGM per z-slice into `dir`, returning the paths in z order.
pub fn write_pgm_stack(v: &Volume3D, dir: &Path) -> Result<Vec<PathBuf>, VolumeError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let e = v.extent();
    let mut paths = Vec::with_capacity(e.dz() as usize);
    for z in e.z0()..e.z1() {
        let slice = v.extract_slice(z)?;
        let path = dir.join(slice_filename(z));
        write_pgm(&slice, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Read the slices of `extent` back from `dir`; exact inverse of
/// [`write_pgm_stack`].
pub fn read_pgm_stack(dir: &Path, extent: Extent3D) -> Result<Volume3D, VolumeError> {
    let mut voxels = Vec::with_capacity(extent.volume_count() as usize);
    for z in extent.z0()..extent.z1() {
        let path = dir.join(slice_filename(z));
        if !path.is_file() {
            return Err(VolumeError::MissingSlice { path });
        }
        let slice = read_pgm(&path)?;
        if slice.width as u64 != extent.dx() || slice.height as u64 != extent.dy() {
            return Err(format_err(
                &path,
                format!(
                    "slice is {}x{}, extent wants {}x{}",
                    slice.width,
                    slice.height,
                    extent.dx(),
                    extent.dy()
                ),
            ));
        }
        voxels.extend_from_slice(&slice.pixels);
    }
    Volume3D::from_voxels(extent, voxels)
}

/// Write a single binary PGM image.
pub fn write_pgm(slice: &SliceImage, path: &Path) -> Result<(), VolumeError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", slice.width, slice.height).map_err(|e| io_err(path, e))?;
    w.write_all(&slice.pixels).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a single binary PGM image with maxval 255.
pub fn read_pgm(path: &Path) -> Result<SliceImage, VolumeError> {
    let data = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut pos = 0usize;

    let magic = header_token(&data, &mut pos);
    if magic != b"P5" {
        return Err(format_err(path, "not a binary PGM (magic is not P5)"));
    }
    let width = parse_header_number(&data, &mut pos, path, "width")?;
    let height = parse_header_number(&data, &mut pos, path, "height")?;
    let maxval = parse_header_number(&data, &mut pos, path, "maxval")?;
    if maxval != 255 {
        return Err(format_err(path, format!("maxval {maxval} unsupported, want 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing separator before pixel data"));
    }
    pos += 1;

    let expected = width
        .checked_mul(height)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| format_err(path, "image dimensions overflow"))?;
    let payload = &data[pos..];
    if payload.len() != expected {
        return Err(format_err(
            path,
            format!("payload is {} bytes, want {expected}", payload.len()),
        ));
    }
    Ok(SliceImage {
        width: width as usize,
        height: height as usize,
        pixels: payload.to_vec(),
    })
}

/// Next header token, skipping whitespace and `#` comments.
fn header_token<'a>(data: &'a [u8], pos: &mut usize) -> &'a [u8] {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    &data[start..*pos]
}

fn parse_header_number(
    data: &[u8],
    pos: &mut usize,
    path: &Path,
    what: &str,
) -> Result<u64, VolumeError> {
    let tok = header_token(data, pos);
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, format!("bad {what} in header")))
}

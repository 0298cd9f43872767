//! On-disk image formats.
//!
//! Binary PGM (`P5`, maxval up to 65535) carries a single channel scaled to
//! `[0, 1]`. The native format stores the full slice losslessly:
//!
//! ```text
//! "ORI8"                       4 bytes
//! version                      u32 LE
//! channels, height, width      u32 LE each
//! pixels                       f32 LE × channels·height·width
//! patient id                   u16 LE length + UTF-8
//! modality                     u16 LE length + UTF-8 ("C0", "LGE", "T2")
//! orientation                  u16 LE length + UTF-8 ("" when unknown, else "0".."7")
//! ```

use std::fs;
use std::path::Path;

use crate::d4::OrientationLabel;
use crate::error::{Error, Result};
use crate::imgops::{Modality, Slice};

pub const NATIVE_MAGIC: &[u8; 4] = b"ORI8";
pub const NATIVE_VERSION: u32 = 1;

pub fn encode_native(slice: &Slice) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + slice.pixels().len() * 4 + 32);
    out.extend_from_slice(NATIVE_MAGIC);
    out.extend_from_slice(&NATIVE_VERSION.to_le_bytes());
    for d in [slice.channels(), slice.height(), slice.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in slice.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let orientation = slice.true_orientation.map(|l| l.to_string()).unwrap_or_default();
    for s in [slice.patient_id.as_str(), slice.modality.as_str(), orientation.as_str()] {
        out.extend_from_slice(&(s.len() as u16).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<(u64, String)> {
        let at = self.pos as u64;
        let len = u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()) as usize;
        let raw = self.take(len, what)?;
        let s = std::str::from_utf8(raw).map_err(|_| Error::format(at + 2, format!("{what} is not UTF-8")))?;
        Ok((at, s.to_string()))
    }
}

pub fn decode_native(bytes: &[u8]) -> Result<Slice> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != NATIVE_MAGIC {
        return Err(Error::format(0, "bad magic, expected ORI8"));
    }
    let version = r.u32("version")?;
    if version != NATIVE_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let channels = r.u32("channels")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    if channels < 1 || height < 2 || width < 2 {
        return Err(Error::format(8, format!("invalid dims {channels}x{height}x{width}")));
    }
    let count = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
        .ok_or_else(|| Error::format(8, format!("dims {channels}x{height}x{width} exceed file size")))?;
    let pixel_at = r.pos as u64;
    let raw = r.take(count * 4, "pixel data")?;
    let pixels: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(pixel_at + 4 * i as u64, "non-finite pixel"));
    }
    let (_, patient) = r.string("patient id")?;
    let (mod_at, modality) = r.string("modality")?;
    let modality: Modality = modality
        .parse()
        .map_err(|_| Error::format(mod_at, format!("unknown modality `{modality}`")))?;
    let (or_at, orientation) = r.string("orientation")?;
    let orientation = if orientation.is_empty() {
        None
    } else {
        Some(
            orientation
                .parse::<OrientationLabel>()
                .map_err(|_| Error::format(or_at, format!("bad orientation `{orientation}`")))?,
        )
    };
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes"));
    }
    let mut slice = Slice::new(pixels, channels, height, width, patient, modality)?;
    slice.true_orientation = orientation;
    Ok(slice)
}

/// Parses the next whitespace-delimited header token, skipping `#` comments.
fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<(u64, u32)> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(start as u64, "expected a decimal number in PGM header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map(|v| (start as u64, v))
        .map_err(|_| Error::format(start as u64, "PGM header number out of range"))
}

/// Decodes binary PGM, scaling samples by `1 / maxval`.
pub fn decode_pgm(bytes: &[u8], patient_id: &str, modality: Modality) -> Result<Slice> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(0, "bad magic, expected P5"));
    }
    let mut pos = 2;
    let (width_at, width) = pgm_token(bytes, &mut pos)?;
    let (_, height) = pgm_token(bytes, &mut pos)?;
    let (maxval_at, maxval) = pgm_token(bytes, &mut pos)?;
    let (width, height) = (width as usize, height as usize);
    if width < 2 || height < 2 {
        return Err(Error::format(width_at, format!("invalid PGM dims {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(maxval_at, format!("invalid PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(pos as u64, "missing whitespace before PGM raster"));
    }
    pos += 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let n = width * height;
    if bytes.len() - pos < n * bps {
        return Err(Error::format(bytes.len() as u64, "truncated PGM raster"));
    }
    let raw = &bytes[pos..pos + n * bps];
    let maxval = maxval as f32;
    let pixels: Vec<f32> = if bps == 1 {
        raw.iter().map(|&b| b as f32 / maxval).collect()
    } else {
        raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval).collect()
    };
    Slice::new(pixels, 1, height, width, patient_id, modality)
}

/// Encodes channel 0 as binary PGM, clamping to `[0, 1]` before scaling.
pub fn encode_pgm(slice: &Slice, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::Argument("PGM maxval must be positive".into()));
    }
    let mut out = format!("P5\n{} {}\n{}\n", slice.width(), slice.height(), maxval).into_bytes();
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * maxval as f32).round() as u16;
    for &v in slice.channel(0) {
        let q = quantize(v);
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

/// Reads a native (`ORI8`) or PGM (`P5`) file, detected by magic bytes.
/// PGM slices take the file stem as patient id and C0 as modality.
pub fn read_image(path: impl AsRef<Path>) -> Result<Slice> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(NATIVE_MAGIC) {
        decode_native(&bytes)
    } else if bytes.starts_with(b"P5") {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        decode_pgm(&bytes, stem, Modality::C0)
    } else {
        Err(Error::format(0, "unrecognized image magic (expected ORI8 or P5)"))
    }
}

/// Writes PGM (maxval 255) for a `.pgm` extension and the native format otherwise.
pub fn write_image(slice: &Slice, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm { encode_pgm(slice, 255)? } else { encode_native(slice) };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

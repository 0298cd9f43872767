//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! "OR8W"                      4 bytes
//! version                     u32
//! config                      9 × u32: input_size, in_channels, conv_channels[0..3],
//!                             kernel, hidden_units, classes, seed
//! per tensor, in parameter order:
//!   name length               u16
//!   name                      UTF-8
//!   rank                      u8
//!   dims                      rank × u32
//!   values                    f32 × product(dims)
//! ```

use std::fs;
use std::path::Path;

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OR8W";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(net: &Network<f32>) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let ints = [
        cfg.input_size as u32,
        cfg.in_channels as u32,
        cfg.conv_channels[0] as u32,
        cfg.conv_channels[1] as u32,
        cfg.conv_channels[2] as u32,
        cfg.kernel as u32,
        cfg.hidden_units as u32,
        cfg.classes as u32,
        cfg.seed,
    ];
    for v in ints {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (name, tensor) in net.param_names().iter().zip(net.params()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.dims().len() as u8);
        for &d in tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(net)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. The whole file is validated before a network is returned.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Network<f32>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected OR8W"));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let config_at = cur.pos as u64;
    let mut ints = [0u32; 9];
    for v in &mut ints {
        *v = cur.u32("config")?;
    }
    let config = NetworkConfig {
        input_size: ints[0] as usize,
        in_channels: ints[1] as usize,
        conv_channels: [ints[2] as usize, ints[3] as usize, ints[4] as usize],
        kernel: ints[5] as usize,
        hidden_units: ints[6] as usize,
        classes: ints[7] as usize,
        seed: ints[8],
    };
    let mut net = Network::<f32>::zeroed(config)
        .map_err(|e| Error::format(config_at, format!("invalid config block: {e}")))?;

    let names = net.param_names();
    for (name, tensor) in names.iter().zip(net.params_mut()) {
        let at = cur.pos as u64;
        let len = u16::from_le_bytes(cur.take(2, "tensor name length")?.try_into().unwrap());
        let stored = std::str::from_utf8(cur.take(len as usize, "tensor name")?)
            .map_err(|_| Error::format(at + 2, "tensor name is not UTF-8"))?;
        if stored != name {
            return Err(Error::format(
                at,
                format!("expected tensor `{name}`, found `{stored}`"),
            ));
        }
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dims")? as usize);
        }
        if dims != tensor.dims() {
            return Err(Error::shape(
                format!("layer {name}"),
                format!("{:?}", tensor.dims()),
                format!("{dims:?}"),
            ));
        }
        let raw = cur.take(tensor.len() * 4, &format!("{name} values"))?;
        for (dst, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(cur.pos as u64, "trailing bytes after last tensor"));
    }
    Ok(net)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

/// Loads a checkpoint that must fit `expected`; the error names the first
/// layer whose shape differs.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    expected: &NetworkConfig,
) -> Result<Network<f32>> {
    let net = load_checkpoint(path)?;
    check_compatible(&net, expected)?;
    Ok(net)
}

/// Checks that every parameter of `net` has the shape `expected` implies.
pub fn check_compatible(net: &Network<f32>, expected: &NetworkConfig) -> Result<()> {
    let reference = Network::<f32>::zeroed(*expected)?;
    for ((name, want), got) in reference
        .param_names()
        .iter()
        .zip(reference.params())
        .zip(net.params())
    {
        if want.dims() != got.dims() {
            return Err(Error::shape(
                format!("layer {name}"),
                format!("{:?}", want.dims()),
                format!("{:?}", got.dims()),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig { input_size: 16, conv_channels: [2, 3, 4], hidden_units: 5, seed: 9, ..Default::default() }
    }

    #[test]
    fn round_trip_bit_exact() {
        let net = Network::<f32>::new(small()).unwrap();
        let back = read_checkpoint(&write_checkpoint(&net)).unwrap();
        assert_eq!(back.config(), net.config());
        for (a, b) in net.params().iter().zip(back.params()) {
            let a: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = write_checkpoint(&Network::<f32>::new(small()).unwrap());
        assert_eq!(&bytes[..4], b"OR8W");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &16u32.to_le_bytes());
        assert_eq!(&bytes[40..44], &9u32.to_le_bytes());
        assert_eq!(&bytes[44..46], &12u16.to_le_bytes());
        assert_eq!(&bytes[46..58], b"conv1.weight");
        assert_eq!(bytes[58], 4);
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = write_checkpoint(&Network::<f32>::new(small()).unwrap());
        for cut in [0, 3, 10, 50, bytes.len() - 1] {
            let err = read_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(read_checkpoint(&bad), Err(Error::Format { offset: 4, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(read_checkpoint(&long), Err(Error::Format { .. })));
    }

    #[test]
    fn config_mismatch_names_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.or8w");
        save_checkpoint(&Network::<f32>::new(small()).unwrap(), &path).unwrap();
        let other = NetworkConfig { conv_channels: [2, 5, 4], ..small() };
        let err = load_checkpoint_expecting(&path, &other).unwrap_err();
        assert!(err.to_string().contains("layer conv2.weight"), "{err}");
        assert!(load_checkpoint_expecting(&path, &NetworkConfig { seed: 1, ..small() }).is_ok());
    }
}

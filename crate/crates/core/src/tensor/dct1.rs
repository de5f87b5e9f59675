//! `DCT1` binary tensor files: magic, u32 LE rank, u32 LE extents, f64 LE payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const DCT1_MAGIC: &[u8; 4] = b"DCT1";

pub fn write_dct1_to<W: Write>(t: &Tensor, mut w: W) -> std::io::Result<()> {
    w.write_all(DCT1_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_dct1(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    write_dct1_to(t, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses a DCT1 image from bytes; `path` only labels errors.
pub fn read_dct1_from(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let fail = |offset: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.to_string(),
    };
    if bytes.len() < 4 || &bytes[..4] != DCT1_MAGIC {
        return Err(fail(0, "missing DCT1 magic"));
    }
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| fail(off, "truncated header"))
    };
    let rank = u32_at(4)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u32_at(8 + 4 * i)? as usize);
    }
    let start = 8 + 4 * rank;
    let n: usize = shape.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != 8 * n {
        return Err(fail(
            start,
            &format!("payload holds {} bytes, shape {shape:?} needs {}", payload.len(), 8 * n),
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn read_dct1(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_dct1_from(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new([2, 1], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_dct1_to(&t, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DCT1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 32);
    }

    #[test]
    fn malformed_reports_offset() {
        let p = Path::new("x.dct1");
        match read_dct1_from(b"DCT2", p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let mut buf = Vec::new();
        write_dct1_to(&Tensor::zeros([3]), &mut buf).unwrap();
        buf.pop();
        match read_dct1_from(&buf, p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(shape in prop::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let t = Tensor::new(shape, data).unwrap();
            let mut buf = Vec::new();
            write_dct1_to(&t, &mut buf).unwrap();
            let back = read_dct1_from(&buf, Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

//! Binary greyscale PGM (`P5`, maxval 255), pixels mapped linearly to `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Quantizes `[0,1]` to a byte by truncation (values are clamped first).
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 1e-9).floor() as u8
}

pub fn encode_pgm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *img.shape() {
        [h, w] | [h, w, 1] => (h, w),
        ref s => return Err(Error::domain("pgm", format!("expected H×W or H×W×1 image, got {s:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)?).map_err(|e| Error::io(path, e))
}

/// Parses a P5 image into an `H×W×1` tensor with values `byte/255`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let fail = |offset: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fail(0, "expected P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(fail(pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| fail(start, "header field out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(fail(pos, "only maxval 255 is supported"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail(pos, "missing whitespace after maxval"));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() != w * h {
        return Err(fail(pos, &format!("payload holds {} bytes, expected {}", payload.len(), w * h)));
    }
    Tensor::new([h, w, 1], payload.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_size() {
        let bytes = encode_pgm(&Tensor::zeros([4, 4])).unwrap();
        assert_eq!(bytes.len(), b"P5\n4 4\n255\n".len() + 16);
    }

    #[test]
    fn half_quantizes_down() {
        let bytes = encode_pgm(&Tensor::full([1, 1, 1], 0.5)).unwrap();
        let back = decode_pgm(&bytes, Path::new("m")).unwrap();
        assert_eq!(back.data()[0], 127.0 / 255.0);
        assert!((back.data()[0] - 0.498).abs() < 1e-3);
    }

    #[test]
    fn exact_levels_round_trip() {
        let t = Tensor::from_fn([16, 16, 1], |i| i as f64 / 255.0);
        let back = decode_pgm(&encode_pgm(&t).unwrap(), Path::new("m")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn comments_and_errors() {
        let mut b = b"P5\n# c\n2 1\n255\n".to_vec();
        b.extend([0u8, 255]);
        let t = decode_pgm(&b, Path::new("m")).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
        match decode_pgm(b"P2\n", Path::new("m")) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_pgm(b"P5\n2 x", Path::new("m")) {
            Err(Error::Format { offset: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}

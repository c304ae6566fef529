//! Portable float maps.
//!
//! Header is `PF` (3 channels) or `Pf` (1 channel), then `width height`,
//! then a scale whose sign gives the byte order (negative: little endian).
//! Rows are stored bottom to top; [`Pfm::data`] is kept top to bottom.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::image::{ColorImage, DepthMap, Grid, Rgb};

#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    /// 1 or 3.
    pub channels: usize,
    /// Interleaved, top row first.
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn from_depth(depth: &DepthMap) -> Self {
        Self {
            width: depth.width(),
            height: depth.height(),
            channels: 1,
            data: depth.raw().iter().map(|&d| d as f32).collect(),
        }
    }

    /// Invalid depth is encoded as `0.0`; anything non-positive or
    /// non-finite reads back invalid.
    pub fn to_depth(&self) -> Result<DepthMap> {
        self.expect_channels(1)?;
        DepthMap::new(self.width, self.height, self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn from_rgb(img: &Grid<Rgb>) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: 3,
            data: img.as_slice().iter().flatten().copied().collect(),
        }
    }

    pub fn to_rgb(&self) -> Result<ColorImage> {
        self.expect_channels(3)?;
        let px = self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Grid::from_vec(self.width, self.height, px)
    }

    pub fn from_scalar(img: &Grid<f32>) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: 1,
            data: img.as_slice().to_vec(),
        }
    }

    pub fn to_scalar(&self) -> Result<Grid<f32>> {
        self.expect_channels(1)?;
        Grid::from_vec(self.width, self.height, self.data.clone())
    }

    fn expect_channels(&self, c: usize) -> Result<()> {
        if self.channels != c {
            return Err(Error::Format(format!(
                "expected a {c}-channel PFM, got {} channels",
                self.channels
            )));
        }
        Ok(())
    }
}

fn read_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
        if tok.len() > 64 {
            return Err(Error::Format("PFM header token too long".into()));
        }
    }
    if tok.is_empty() {
        return Err(Error::Format("truncated PFM header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Format("PFM header is not ASCII".into()))
}

pub fn read_pfm(r: &mut impl BufRead) -> Result<Pfm> {
    let channels = match read_token(r)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::Format(format!("not a PFM magic: {other:?}"))),
    };
    let parse = |s: String| -> Result<usize> {
        s.parse().map_err(|_| Error::Format(format!("bad PFM dimension {s:?}")))
    };
    let width = parse(read_token(r)?)?;
    let height = parse(read_token(r)?)?;
    // the scale token is followed by exactly one whitespace byte, which
    // read_token consumed
    let scale: f32 = read_token(r)?
        .parse()
        .map_err(|_| Error::Format("bad PFM scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format("PFM scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let n = row_len
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PFM dimensions overflow".into()))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated PFM payload".into()))?;
    let mut data = vec![0f32; n];
    for (k, b) in bytes.chunks_exact(4).enumerate() {
        let b = [b[0], b[1], b[2], b[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        // file row k / row_len counts from the bottom
        let (row, col) = (k / row_len, k % row_len);
        data[(height - 1 - row) * row_len + col] = v;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Writes little-endian with scale `-1.0`.
pub fn write_pfm(w: &mut impl Write, pfm: &Pfm) -> Result<()> {
    let magic = match pfm.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Format(format!("PFM supports 1 or 3 channels, not {c}"))),
    };
    let row_len = pfm.width * pfm.channels;
    if pfm.data.len() != row_len * pfm.height {
        return Err(Error::DimensionMismatch("PFM data does not match its header".into()));
    }
    write!(w, "{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height)?;
    let mut buf = Vec::with_capacity(pfm.data.len() * 4);
    for row in pfm.data.chunks_exact(row_len.max(1)).rev() {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn to_bytes(pfm: &Pfm) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    write_pfm(&mut v, pfm)?;
    Ok(v)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Pfm> {
    read_pfm(&mut std::io::Cursor::new(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_order() {
        let pfm = Pfm {
            width: 2,
            height: 2,
            channels: 1,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let bytes = to_bytes(&pfm).unwrap();
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
        let payload = &bytes[12..];
        // bottom row first
        assert_eq!(&payload[..4], &3.0f32.to_le_bytes());
        assert_eq!(from_bytes(&bytes).unwrap(), pfm);
    }

    #[test]
    fn big_endian_input() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend_from_slice(&5.0f32.to_be_bytes());
        bytes.extend_from_slice(&6.0f32.to_be_bytes());
        let pfm = from_bytes(&bytes).unwrap();
        assert_eq!(pfm.data, vec![6.0, 5.0]);
    }

    #[test]
    fn truncated_payload() {
        let bytes = b"PF\n2 2\n-1.0\n\0\0\0\0".to_vec();
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
        assert!(from_bytes(b"P6\n1 1\n255\n").is_err());
    }

    #[test]
    fn depth_validity_encoding() {
        let d = DepthMap::new(3, 1, vec![1.5, 0.0, 2.0]).unwrap();
        let back = from_bytes(&to_bytes(&Pfm::from_depth(&d)).unwrap())
            .unwrap()
            .to_depth()
            .unwrap();
        assert_eq!(back, d);
        let nan = Pfm {
            width: 2,
            height: 1,
            channels: 1,
            data: vec![f32::NAN, -1.0],
        };
        assert_eq!(nan.to_depth().unwrap().valid_count(), 0);
    }
}

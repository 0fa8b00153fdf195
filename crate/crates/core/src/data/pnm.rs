//! Binary netpbm: PGM "P5" (read/write, 8- or 16-bit) and PPM "P6".

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A greyscale raster with integer samples in `0..=maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Grid {
    pub fn new(width: usize, height: usize, maxval: u16, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim("grid extents must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::dim(format!(
                "{width}x{height} grid needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if maxval == 0 {
            return Err(Error::config("maxval must be positive"));
        }
        if let Some(v) = data.iter().find(|&&v| v > maxval) {
            return Err(Error::Data(format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(Grid {
            width,
            height,
            maxval,
            data,
        })
    }

    /// Samples scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f32> {
        let m = self.maxval as f32;
        self.data.iter().map(|&v| v as f32 / m).collect()
    }

    /// Quantise `[0, 1]` values (clamped) to an 8-bit grid.
    pub fn from_unit(width: usize, height: usize, values: &[f32]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u16)
            .collect();
        Grid::new(width, height, 255, data)
    }

    pub fn from_mask(width: usize, height: usize, mask: &[u8]) -> Result<Self> {
        Grid::new(width, height, 255, mask.iter().map(|&v| v as u16).collect())
    }

    pub fn to_mask(&self) -> Result<Vec<u8>> {
        self.data
            .iter()
            .map(|&v| {
                u8::try_from(v)
                    .map_err(|_| Error::Data(format!("mask value {v} does not fit a class id")))
            })
            .collect()
    }
}

struct Header {
    fields: Vec<usize>,
    data_start: usize,
}

/// Parse a netpbm header with `count` numeric fields after the magic.
fn parse_header(bytes: &[u8], magic: &[u8; 2], count: usize) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::parse(
            0,
            format!("expected magic {:?}", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let mut pos = 2;
    let mut fields = Vec::with_capacity(count);
    while fields.len() < count {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::parse(pos, "header ended early")),
            }
        }
        if pos == 2 {
            return Err(Error::parse(pos, "missing whitespace after magic"));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(
                pos,
                format!("expected a decimal number, found byte {:#04x}", bytes[pos]),
            ));
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::parse(start, "number out of range"))?;
        fields.push(v);
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => {
            return Err(Error::parse(
                pos,
                "expected one whitespace byte before the raster",
            ))
        }
    }
    Ok(Header {
        fields,
        data_start: pos + 1,
    })
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Grid> {
    let h = parse_header(bytes, b"P5", 3)?;
    let (width, height, maxval) = (h.fields[0], h.fields[1], h.fields[2]);
    if width == 0 || height == 0 {
        return Err(Error::parse(2, "zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(
            2,
            format!("maxval {maxval} outside 1..=65535"),
        ));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(Error::parse(
            bytes.len(),
            format!("payload truncated: expected {need} bytes, found {have}"),
        ));
    }
    let raw = &bytes[h.data_start..h.data_start + need];
    let data: Vec<u16> = if bps == 1 {
        raw.iter().map(|&b| b as u16).collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(i) = data.iter().position(|&v| v as usize > maxval) {
        return Err(Error::parse(
            h.data_start + i * bps,
            format!("sample exceeds maxval {maxval}"),
        ));
    }
    Grid::new(width, height, maxval as u16, data)
}

pub fn encode_pgm(g: &Grid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", g.width, g.height, g.maxval).into_bytes();
    if g.maxval < 256 {
        out.extend(g.data.iter().map(|&v| v as u8));
    } else {
        for v in &g.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Grid> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_pgm(&bytes)
}

pub fn save_pgm(g: &Grid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_pgm(g)).map_err(|e| Error::io(path.as_ref(), e))
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            pixels: vec![[0; 3]; width * height],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn count(&self, rgb: [u8; 3]) -> usize {
        self.pixels.iter().filter(|&&p| p == rgb).count()
    }
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes, b"P6", 3)?;
    let (width, height, maxval) = (h.fields[0], h.fields[1], h.fields[2]);
    if maxval != 255 {
        return Err(Error::parse(
            2,
            format!("only maxval 255 is supported, found {maxval}"),
        ));
    }
    let need = width * height * 3;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(Error::parse(
            bytes.len(),
            format!("payload truncated: expected {need} bytes, found {have}"),
        ));
    }
    let pixels = bytes[h.data_start..h.data_start + need]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(RgbImage {
        width,
        height,
        pixels,
    })
}

pub fn save_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_ppm(img)).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_ppm(&bytes)
}

//! Raster types and binary PPM (P6) / PGM (P5) I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    rgb: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        Ok(ColorImage { width, height, rgb: vec![fill; width * height] })
    }

    pub fn from_pixels(width: usize, height: usize, rgb: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel buffer of {} does not match {width}x{height}",
                rgb.len()
            )));
        }
        Ok(ColorImage { width, height, rgb })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.rgb
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.rgb[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        self.rgb[y * self.width + x] = c;
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.rgb.iter().flatten().copied().collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let (w, h) = read_header(&mut r, "P6")?;
        let mut buf = vec![0u8; w * h * 3];
        r.read_exact(&mut buf).map_err(|_| Error::invalid("PPM pixel data truncated"))?;
        let rgb = buf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        ColorImage::from_pixels(w, h, rgb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        self.write_ppm(&mut out)?;
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)
            .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
        Self::read_ppm(f)
    }
}

/// Single-channel 8-bit image, used for masks and confidence maps on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let (width, height) = read_header(&mut r, "P5")?;
        let mut data = vec![0u8; width * height];
        r.read_exact(&mut data).map_err(|_| Error::invalid("PGM pixel data truncated"))?;
        Ok(GrayImage { width, height, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        self.write_pgm(&mut out)?;
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn read_header<R: BufRead>(r: &mut R, magic: &str) -> Result<(usize, usize)> {
    let mut fields = Vec::with_capacity(4);
    let mut token = String::new();
    let mut in_comment = false;
    let mut byte = [0u8; 1];
    while fields.len() < 4 {
        if r.read(&mut byte)? == 0 {
            return Err(Error::invalid("unexpected end of image header"));
        }
        let c = byte[0] as char;
        if in_comment {
            in_comment = c != '\n';
            continue;
        }
        if c == '#' {
            in_comment = true;
        } else if c.is_ascii_whitespace() {
            if !token.is_empty() {
                fields.push(std::mem::take(&mut token));
            }
        } else {
            token.push(c);
        }
    }
    if fields[0] != magic {
        return Err(Error::invalid(format!("expected {magic} image, found {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::invalid(format!("bad header field {s:?}")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::invalid(format!("only maxval 255 is supported, got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    Ok((w, h))
}

/// Binary segmentation mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// (intersection, union) pixel counts against `other`.
    pub fn overlap(&self, other: &Mask) -> Result<(usize, usize)> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::invalid("mask shapes differ"));
        }
        let mut inter = 0;
        let mut union = 0;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok((inter, union))
    }

    /// IoU with the convention that two empty masks have IoU 1.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        let (i, u) = self.overlap(other)?;
        Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }
}

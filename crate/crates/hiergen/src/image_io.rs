//! In-memory RGB images plus PPM (P6) and PNG file support.
//!
//! Pixels are stored as f32 in [0,1]; files quantize to 8-bit with
//! round-half-up so identical pixmaps always produce identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    /// RGB interleaved, row-major, `width * height * 3` values in [0,1].
    pub data: Vec<f32>,
}

impl Pixmap {
    pub fn new(width: usize, height: usize) -> Self {
        Pixmap { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn fill(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut p = Pixmap::new(width, height);
        for px in p.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        p
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::ImageFormat(format!(
                "expected {} bytes for {width}x{height}, got {}",
                width * height * 3,
                bytes.len()
            )));
        }
        Ok(Pixmap {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let mut fields = Vec::new();
        // header: magic, width, height, maxval; '#' comments allowed
        while fields.len() < 4 {
            while pos < buf.len() && (buf[pos] as char).is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < buf.len() && !(buf[pos] as char).is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::ImageFormat("truncated PPM header".into()));
            }
            fields.push(std::str::from_utf8(&buf[start..pos]).map_err(|_| {
                Error::ImageFormat("non-ascii PPM header".into())
            })?.to_string());
        }
        if fields[0] != "P6" {
            return Err(Error::ImageFormat(format!("not a P6 PPM: magic {}", fields[0])));
        }
        let width: usize = fields[1].parse().map_err(|_| Error::ImageFormat("bad width".into()))?;
        let height: usize =
            fields[2].parse().map_err(|_| Error::ImageFormat("bad height".into()))?;
        if fields[3] != "255" {
            return Err(Error::ImageFormat(format!("unsupported maxval {}", fields[3])));
        }
        pos += 1; // single whitespace after maxval
        let need = width * height * 3;
        if buf.len() < pos + need {
            return Err(Error::ImageFormat("truncated PPM payload".into()));
        }
        Pixmap::from_bytes(width, height, &buf[pos..pos + need])
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_ppm(std::io::BufWriter::new(f))
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Pixmap::read_ppm(std::io::BufReader::new(f))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img: image::RgbImage = image::ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.to_bytes(),
        )
        .expect("buffer sized to dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::ImageFormat(e.to_string()))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::ImageFormat(e.to_string()))?.to_rgb8();
        Pixmap::from_bytes(img.width() as usize, img.height() as usize, img.as_raw())
    }

    /// Load by extension: `.ppm` or `.png`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        match p.extension().and_then(|e| e.to_str()) {
            Some("ppm") => Pixmap::load_ppm(p),
            Some("png") => Pixmap::load_png(p),
            other => Err(Error::ImageFormat(format!("unsupported image extension {other:?}"))),
        }
    }
}

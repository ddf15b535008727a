use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WorldError;

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, WorldError> {
        let mut r = BufReader::new(bytes);
        let mut tokens = Vec::new();
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if r.read_line(&mut line).map_err(|e| WorldError::Ppm(e.to_string()))? == 0 {
                return Err(WorldError::Ppm("truncated header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P6" || tokens[3] != "255" {
            return Err(WorldError::Ppm(format!("unsupported header {tokens:?}")));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| WorldError::Ppm(e.to_string()));
        let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
        let mut data = vec![0u8; w * h * 3];
        r.read_exact(&mut data)
            .map_err(|e| WorldError::Ppm(e.to_string()))?;
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), WorldError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self, WorldError> {
        Self::from_ppm(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::new(3, 2);
        img.set_pixel(2, 1, [10, 20, 30]);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(Image::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn rejects_ascii_ppm() {
        assert!(Image::from_ppm(b"P3\n1 1\n255\n0 0 0\n").is_err());
    }
}

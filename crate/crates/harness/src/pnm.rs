//! Binary netpbm images: PGM (`P5`) and PPM (`P6`) with 8-bit samples.

use std::path::Path;

use dlps_core::operators::ImageGrid;
use dlps_core::tokenspace::{TokenSequence, VocabSpec};

use crate::error::{io_err, HarnessError, Result};

/// Interleaved 8-bit image with one or three channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    /// Columns.
    pub width: usize,
    /// Rows.
    pub height: usize,
    /// Samples per pixel, 1 or 3.
    pub channels: usize,
    /// Row-major interleaved samples.
    pub data: Vec<u8>,
}

impl Image {
    /// Image whose sample buffer matches its dimensions.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(HarnessError::Image(format!("{channels} channels; expected 1 or 3")));
        }
        if data.len() != width * height * channels {
            return Err(HarnessError::Image(format!(
                "{} samples for a {width}×{height}×{channels} image",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Grid with the same dimensions.
    pub fn grid(&self) -> Result<ImageGrid> {
        Ok(ImageGrid::new(self.height, self.width, self.channels)?)
    }

    /// From a channel-major intensity vector in `[0, 1]`.
    pub fn from_intensities(x: &[f64], grid: &ImageGrid) -> Result<Self> {
        if x.len() != grid.len() {
            return Err(HarnessError::Length(x.len(), grid.len()));
        }
        let mut data = vec![0u8; grid.len()];
        for c in 0..grid.channels {
            for p in 0..grid.plane() {
                let v = x[c * grid.plane() + p].clamp(0.0, 1.0);
                data[p * grid.channels + c] = (v * 255.0).round() as u8;
            }
        }
        Self::new(grid.width, grid.height, grid.channels, data)
    }

    /// Channel-major intensities in `[0, 1]`.
    pub fn intensities(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut x = vec![0.0; self.data.len()];
        for (i, &v) in self.data.iter().enumerate() {
            let (p, c) = (i / self.channels, i % self.channels);
            x[c * plane + p] = f64::from(v) / 255.0;
        }
        x
    }

    /// Quantizes decoded token intensities to 8 bits.
    pub fn from_tokens(z: &TokenSequence, vocab: &VocabSpec, grid: &ImageGrid) -> Result<Self> {
        let x = dlps_core::tokenspace::decode(z, vocab)?;
        Self::from_intensities(&x, grid)
    }

    /// Maps each sample to the token whose 8-bit intensity is nearest.
    pub fn to_tokens(&self, vocab: &VocabSpec) -> TokenSequence {
        let levels: Vec<f64> = vocab.intensities().iter().map(|i| (i * 255.0).round()).collect();
        self.intensities()
            .iter()
            .map(|&x| {
                let v = (x * 255.0).round();
                let mut best = 0;
                for (k, &l) in levels.iter().enumerate() {
                    if (l - v).abs() < (levels[best] - v).abs() {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Binary netpbm bytes.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Parses binary netpbm bytes, including header comments.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(HarnessError::Image("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(HarnessError::Image(format!("unsupported magic {other:?}"))),
        };
        let num = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| HarnessError::Image(format!("bad header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(HarnessError::Image(format!("only 8-bit images supported, maxval {maxval}")));
        }
        let n = width * height * channels;
        let data = bytes
            .get(pos..pos + n)
            .ok_or_else(|| HarnessError::Image("truncated raster".into()))?
            .to_vec();
        Self::new(width, height, channels, data)
    }

    /// Writes the image to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(io_err(path))
    }

    /// Reads an image from `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::decode(&bytes).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_gray_and_color() {
        let gray = Image::new(3, 2, 1, vec![0, 255, 7, 9, 128, 1]).unwrap();
        assert_eq!(Image::decode(&gray.encode()).unwrap(), gray);
        let color = Image::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(Image::decode(&color.encode()).unwrap(), color);
    }

    #[test]
    fn header_comments_and_errors() {
        let bytes = b"P5\n# comment\n2 1\n255\n\x05\x06";
        assert_eq!(Image::decode(bytes).unwrap().data, vec![5, 6]);
        assert!(Image::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(Image::decode(b"P5\n2 2\n255\n\x00").is_err());
    }

    #[test]
    fn token_round_trip() {
        let vocab = VocabSpec::new(2).unwrap();
        let grid = ImageGrid::new(2, 2, 1).unwrap();
        let z: TokenSequence = vec![0, 1, 1, 0].into();
        let img = Image::from_tokens(&z, &vocab, &grid).unwrap();
        assert_eq!(img.data, vec![0, 255, 255, 0]);
        assert_eq!(img.to_tokens(&vocab), z);

        let vocab = VocabSpec::new(5).unwrap();
        let grid = ImageGrid::new(1, 2, 3).unwrap();
        let z: TokenSequence = vec![0, 1, 2, 3, 4, 2].into();
        let img = Image::from_tokens(&z, &vocab, &grid).unwrap();
        assert_eq!(img.to_tokens(&vocab), z);
    }
}

//! Synthetic datasets and their on-disk form: one PGM/PPM per item plus a
//! plain-text manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dlps_core::operators::ImageGrid;
use dlps_core::rng::StreamKey;
use dlps_core::tokenspace::{TokenSequence, VocabSpec};
use rand::Rng;

use crate::error::{io_err, HarnessError, Result};
use crate::pnm::Image;

/// Name of the manifest file inside a dataset directory.
pub const MANIFEST: &str = "manifest.txt";

/// Family of synthetic patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Stripes, checkerboards, boxes, crosses and diagonals on a binary vocabulary.
    Binary,
    /// Smooth sinusoidal colour fields quantized to `levels` tokens.
    Color {
        /// Tokens per channel.
        levels: usize,
    },
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Pattern family.
    pub kind: SyntheticKind,
    /// Image rows.
    pub height: usize,
    /// Image columns.
    pub width: usize,
    /// Channels; binary patterns repeat across channels.
    pub channels: usize,
    /// Number of patterns drawn; duplicates are dropped.
    pub count: usize,
    /// Generator seed.
    pub seed: u64,
}

/// Token images on a common grid and vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Image shape.
    pub grid: ImageGrid,
    /// Vocabulary of every item.
    pub vocab: VocabSpec,
    /// Token sequences in channel-major order.
    pub items: Vec<TokenSequence>,
    /// File name of each item.
    pub names: Vec<String>,
}

impl Dataset {
    /// Number of items.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Whether there are no items.
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn binary_pattern(rng: &mut impl Rng, h: usize, w: usize) -> Vec<usize> {
    let kind = rng.random_range(0..6);
    let mut img = vec![0usize; h * w];
    let period = rng.random_range(2..=4usize);
    let phase = rng.random_range(0..period);
    for r in 0..h {
        for c in 0..w {
            let on = match kind {
                0 => (r + phase) % period < period / 2 + (period % 2),
                1 => (c + phase) % period < period / 2 + (period % 2),
                2 => ((r / (period - 1)) + (c / (period - 1)) + phase) % 2 == 0,
                _ => false,
            };
            img[r * w + c] = usize::from(on);
        }
    }
    match kind {
        3 => {
            let bh = rng.random_range(2..=h - 2);
            let bw = rng.random_range(2..=w - 2);
            let y = rng.random_range(0..=h - bh);
            let x = rng.random_range(0..=w - bw);
            let hollow = rng.random_bool(0.5);
            for r in y..y + bh {
                for c in x..x + bw {
                    let edge = r == y || r + 1 == y + bh || c == x || c + 1 == x + bw;
                    img[r * w + c] = usize::from(!hollow || edge);
                }
            }
        }
        4 => {
            let row = rng.random_range(1..h - 1);
            let col = rng.random_range(1..w - 1);
            let thick = rng.random_range(1..=2usize);
            for r in 0..h {
                for c in 0..w {
                    let on = (r >= row && r < row + thick) || (c >= col && c < col + thick);
                    img[r * w + c] = usize::from(on);
                }
            }
        }
        5 => {
            let width = rng.random_range(1..=3usize) as isize;
            let offset = rng.random_range(-(h as i64) / 2..=(h as i64) / 2) as isize;
            let anti = rng.random_bool(0.5);
            for r in 0..h {
                for c in 0..w {
                    let cc = if anti { w - 1 - c } else { c } as isize;
                    let d = cc - r as isize - offset;
                    img[r * w + c] = usize::from(d >= 0 && d < width);
                }
            }
        }
        _ => {}
    }
    img
}

fn color_field(rng: &mut impl Rng, grid: &ImageGrid, levels: usize) -> Vec<usize> {
    let mut z = vec![0usize; grid.len()];
    for ch in 0..grid.channels {
        let fx = rng.random_range(0.2..1.2) * std::f64::consts::PI / grid.width as f64 * 2.0;
        let fy = rng.random_range(0.2..1.2) * std::f64::consts::PI / grid.height as f64 * 2.0;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for r in 0..grid.height {
            for c in 0..grid.width {
                let v = 0.5 + 0.5 * (fx * c as f64 + fy * r as f64 + phase).sin();
                let k = (v * (levels - 1) as f64).round() as usize;
                z[grid.index(ch, r, c)] = k.min(levels - 1);
            }
        }
    }
    z
}

/// Deterministic dataset of `count` distinct items.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    let grid = ImageGrid::new(spec.height, spec.width, spec.channels)?;
    let vocab = match spec.kind {
        SyntheticKind::Binary => {
            if spec.channels != 1 || spec.height < 4 || spec.width < 4 {
                return Err(HarnessError::Config("binary patterns need one channel and at least 4×4".into()));
            }
            VocabSpec::new(2)?
        }
        SyntheticKind::Color { levels } => {
            if spec.channels != 1 && spec.channels != 3 {
                return Err(HarnessError::Config("colour fields need 1 or 3 channels".into()));
            }
            VocabSpec::new(levels)?
        }
    };
    let mut rng = StreamKey::new(spec.seed).rng();
    let mut seen = BTreeSet::new();
    let mut items = Vec::with_capacity(spec.count);
    let mut attempts = 0;
    while items.len() < spec.count {
        attempts += 1;
        if attempts > 1000 * (spec.count + 1) {
            return Err(HarnessError::Config(format!(
                "could not find {} distinct patterns",
                spec.count
            )));
        }
        let z = match spec.kind {
            SyntheticKind::Binary => binary_pattern(&mut rng, spec.height, spec.width),
            SyntheticKind::Color { levels } => color_field(&mut rng, &grid, levels),
        };
        let z = TokenSequence::new(z);
        if seen.insert(z.clone()) {
            items.push(z);
        }
    }
    let ext = if spec.channels == 1 { "pgm" } else { "ppm" };
    let names = (0..items.len()).map(|i| format!("item_{i:04}.{ext}")).collect();
    Ok(Dataset { grid, vocab, items, names })
}

/// Writes images and the manifest; returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let g = &dataset.grid;
    let mut manifest = String::new();
    writeln!(manifest, "grid {} {} {}", g.height, g.width, g.channels).unwrap();
    writeln!(manifest, "vocab {}", dataset.vocab.size()).unwrap();
    for (z, name) in dataset.items.iter().zip(&dataset.names) {
        Image::from_tokens(z, &dataset.vocab, g)?.save(&dir.join(name))?;
        writeln!(manifest, "{name}").unwrap();
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(io_err(&path))?;
    Ok(path)
}

/// Loads a dataset from a directory containing a manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let parse_err = |message: String| HarnessError::Parse { path: path.clone(), message };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let dims: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("grid "))
        .ok_or_else(|| parse_err("missing grid line".into()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(format!("bad grid field {t:?}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(parse_err("grid line needs H W C".into()));
    }
    let k: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("vocab "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| parse_err("missing or bad vocab line".into()))?;
    let grid = ImageGrid::new(dims[0], dims[1], dims[2])?;
    let vocab = VocabSpec::new(k)?;
    let mut items = Vec::new();
    let mut names = Vec::new();
    for name in lines {
        let name = name.trim().to_string();
        let img = Image::load(&dir.join(&name))?;
        if img.grid()? != grid {
            return Err(parse_err(format!("{name} does not match the manifest grid")));
        }
        items.push(img.to_tokens(&vocab));
        names.push(name);
    }
    Ok(Dataset { grid, vocab, items, names })
}

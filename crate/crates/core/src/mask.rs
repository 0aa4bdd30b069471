//! Binary segmentation masks stored as row-major run-length encodings.
//!
//! `counts` alternates unset/set runs and always starts with an unset run
//! (possibly of length zero). The runs sum to `width * height`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask runs sum to {got}, expected {expected} ({width}x{height})")]
    RunLength {
        got: u64,
        expected: u64,
        width: u32,
        height: u32,
    },
    #[error("bitmap has {got} pixels, expected {expected}")]
    BitmapSize { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMask", into = "RawMask")]
pub struct Mask {
    width: u32,
    height: u32,
    counts: Vec<u32>,
    /// Start offset of each run; `starts[i]` is the first pixel of run `i`.
    starts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct RawMask {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

impl TryFrom<RawMask> for Mask {
    type Error = MaskError;

    fn try_from(raw: RawMask) -> Result<Self, Self::Error> {
        Mask::from_rle(raw.width, raw.height, raw.counts)
    }
}

impl From<Mask> for RawMask {
    fn from(mask: Mask) -> Self {
        RawMask {
            width: mask.width,
            height: mask.height,
            counts: mask.counts,
        }
    }
}

impl Mask {
    pub fn from_rle(width: u32, height: u32, counts: Vec<u32>) -> Result<Self, MaskError> {
        let expected = width as u64 * height as u64;
        let mut starts = Vec::with_capacity(counts.len());
        let mut total = 0u64;
        for &c in &counts {
            starts.push(total);
            total += c as u64;
        }
        if total != expected {
            return Err(MaskError::RunLength {
                got: total,
                expected,
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            counts,
            starts,
        })
    }

    /// Encodes a row-major bitmap.
    pub fn from_bitmap(width: u32, height: u32, bits: &[bool]) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::BitmapSize {
                got: bits.len(),
                expected,
            });
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        Self::from_rle(width, height, counts)
    }

    /// Axis-aligned filled rectangle `[x0, x1) x [y0, y1)`, clipped to the raster.
    pub fn rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        let mut bits = vec![false; width as usize * height as usize];
        for y in y0.min(height)..y1.min(height) {
            for x in x0.min(width)..x1.min(width) {
                bits[(y * width + x) as usize] = true;
            }
        }
        Self::from_bitmap(width, height, &bits).expect("bitmap sized from dimensions")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let offset = y as u64 * self.width as u64 + x as u64;
        // Last run whose start <= offset; zero-length runs are skipped by taking the last.
        let run = self.starts.partition_point(|&s| s <= offset) - 1;
        run % 2 == 1
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &c) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        bits
    }
}

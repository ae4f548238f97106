//! Pixel-grid geometry shared across modules.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box in pixel coordinates, half-open: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    /// Fails on empty extents; a box always covers at least one pixel.
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::DegenerateBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// True when `other` lies fully inside `self`.
    pub fn encloses(&self, other: &PixelBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn ensure_fits(&self, width: u32, height: u32) -> Result<()> {
        if self.fits_in(width, height) {
            Ok(())
        } else {
            Err(Error::BoxOutOfBounds {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                width,
                height,
            })
        }
    }

    /// Canonical string key for feature files: `b:x0,y0,x1,y1`.
    pub fn key(&self) -> String {
        format!("b:{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }

    /// Parses the `key()` format back into a box.
    pub fn from_key(key: &str) -> Result<Self> {
        let body = key
            .strip_prefix("b:")
            .ok_or_else(|| Error::Config(format!("bad box key {key:?}")))?;
        let parts: Vec<u32> = body
            .split(',')
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::Config(format!("bad box key {key:?}")))
            })
            .collect::<Result<_>>()?;
        if parts.len() != 4 {
            return Err(Error::Config(format!("bad box key {key:?}")));
        }
        PixelBox::new(parts[0], parts[1], parts[2], parts[3])
    }
}

//! Label-map images and render palettes.
//!
//! Label maps are stored as PNG: 8-bit indexed with a full 256-entry palette
//! when every id fits a byte, 16-bit grayscale otherwise. The pixel value is
//! the class id in both cases, so files round-trip exactly; the palette is
//! only there to make the files viewable.

use std::collections::HashSet;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::label_space::{ClassId, LabelSpace};
use crate::proposals::SegmentationMap;
use crate::{Error, Result};

/// Render colors, indexed by class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palette {
    pub space: String,
    pub ignore_color: [u8; 3],
    pub colors: Vec<[u8; 3]>,
}

impl Palette {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let palette: Palette = serde_json::from_str(&text)?;
        palette.check()?;
        Ok(palette)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in self.colors.iter().chain(std::iter::once(&self.ignore_color)) {
            if !seen.insert(*c) {
                return Err(Error::Config(format!(
                    "palette {:?} repeats color {:?}",
                    self.space, c
                )));
            }
        }
        Ok(())
    }

    pub fn ensure_covers(&self, space: &LabelSpace) -> Result<()> {
        if self.colors.len() < space.len() {
            return Err(Error::Config(format!(
                "palette {:?} has {} colors for {} classes",
                self.space,
                self.colors.len(),
                space.len()
            )));
        }
        Ok(())
    }

    /// Deterministic distinct colors: golden-angle hue walk over three
    /// saturation/value tiers, nudged until unique after rounding.
    pub fn distinct(space_name: &str, n: usize) -> Palette {
        let ignore_color = [0u8, 0, 0];
        let mut used: HashSet<[u8; 3]> = HashSet::new();
        used.insert(ignore_color);
        let mut colors = Vec::with_capacity(n);
        for i in 0..n {
            let hue = (i as f64 * 137.507_764_050_037_86).rem_euclid(360.0);
            let tier = i % 3;
            let (s, v) = match tier {
                0 => (0.85, 0.95),
                1 => (0.60, 0.80),
                _ => (0.95, 0.60),
            };
            let mut rgb = hsv_to_rgb(hue, s, v);
            while !used.insert(rgb) {
                rgb[2] = rgb[2].wrapping_add(1);
            }
            colors.push(rgb);
        }
        Palette {
            space: space_name.to_string(),
            ignore_color,
            colors,
        }
    }

    pub fn color_of(&self, id: ClassId, ignore_id: Option<ClassId>) -> [u8; 3] {
        if Some(id) == ignore_id {
            return self.ignore_color;
        }
        self.colors
            .get(usize::from(id))
            .copied()
            .unwrap_or(self.ignore_color)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Encodes a label map to PNG bytes. `palette` colors the indexed variant;
/// ids above 255 force the 16-bit grayscale variant and ignore the palette.
pub fn encode_label_map_png(
    map: &SegmentationMap,
    palette: Option<&Palette>,
    ignore_id: Option<ClassId>,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let max_id = map.labels().iter().copied().max().unwrap_or(0);
    {
        let mut encoder = png::Encoder::new(Cursor::new(&mut out), map.width(), map.height());
        if max_id < 256 {
            encoder.set_color(png::ColorType::Indexed);
            encoder.set_depth(png::BitDepth::Eight);
            let mut plte = Vec::with_capacity(256 * 3);
            for id in 0u16..256 {
                let color = match palette {
                    Some(p) => p.color_of(id, ignore_id),
                    None => fallback_color(id, ignore_id),
                };
                plte.extend_from_slice(&color);
            }
            encoder.set_palette(plte);
            let mut writer = encoder
                .write_header()
                .map_err(|e| Error::PngDecode(e.to_string()))?;
            let data: Vec<u8> = map.labels().iter().map(|&l| l as u8).collect();
            writer
                .write_image_data(&data)
                .map_err(|e| Error::PngDecode(e.to_string()))?;
        } else {
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Sixteen);
            let mut writer = encoder
                .write_header()
                .map_err(|e| Error::PngDecode(e.to_string()))?;
            let mut data = Vec::with_capacity(map.labels().len() * 2);
            for &l in map.labels() {
                data.extend_from_slice(&l.to_be_bytes());
            }
            writer
                .write_image_data(&data)
                .map_err(|e| Error::PngDecode(e.to_string()))?;
        }
    }
    Ok(out)
}

fn fallback_color(id: ClassId, ignore_id: Option<ClassId>) -> [u8; 3] {
    if Some(id) == ignore_id {
        [0, 0, 0]
    } else {
        // Spread ids across channels; viewability only, ids carry the data.
        let v = id as u32;
        [
            ((v * 67) % 256) as u8,
            ((v * 129 + 31) % 256) as u8,
            ((v * 211 + 89) % 256) as u8,
        ]
    }
}

pub fn save_label_map_png(
    map: &SegmentationMap,
    path: &Path,
    palette: Option<&Palette>,
    ignore_id: Option<ClassId>,
) -> Result<()> {
    let bytes = encode_label_map_png(map, palette, ignore_id)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Decodes a label map from PNG bytes. Accepts 8-bit indexed (pixel = raw
/// palette index), 8-bit grayscale, and 16-bit grayscale.
pub fn decode_label_map_png(bytes: &[u8]) -> Result<SegmentationMap> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // Keep palette indices as written instead of expanding to RGB.
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let (width, height) = (info.width, info.height);
    let pixels = (width as usize) * (height as usize);
    let labels: Vec<ClassId> = match (info.color_type, info.bit_depth) {
        (png::ColorType::Indexed, png::BitDepth::Eight)
        | (png::ColorType::Grayscale, png::BitDepth::Eight) => {
            buf[..pixels].iter().map(|&b| ClassId::from(b)).collect()
        }
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => buf[..pixels * 2]
            .chunks_exact(2)
            .map(|c| ClassId::from_be_bytes([c[0], c[1]]))
            .collect(),
        (color, depth) => {
            return Err(Error::PngDecode(format!(
                "unsupported label-map format {color:?}/{depth:?}"
            )))
        }
    };
    SegmentationMap::from_labels(width, height, labels)
}

pub fn load_label_map_png(path: &Path) -> Result<SegmentationMap> {
    let bytes = std::fs::read(path)?;
    decode_label_map_png(&bytes).map_err(|e| match e {
        Error::PngDecode(reason) => Error::MalformedFile {
            path: path.display().to_string(),
            reason,
        },
        other => other,
    })
}

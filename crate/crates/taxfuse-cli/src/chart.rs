//! Tiny PNG charts with a built-in 5x7 pixel font. Just enough glyphs for
//! percentages and the two curve labels.

use std::path::Path;

use anyhow::Result;
use image::{Rgb, RgbImage};

const GLYPH_W: u32 = 5;

// Rows top to bottom, low 5 bits used, MSB = leftmost pixel.
fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..GLYPH_W {
                    if row & (0x10 >> dx) != 0 {
                        let px = cx + dx;
                        let py = y + dy as u32;
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, color);
                        }
                    }
                }
            }
        }
        cx += GLYPH_W + 1;
    }
}

fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, color);
        }
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    // Bresenham; endpoints clipped per pixel.
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const BAR: Rgb<u8> = Rgb([70, 120, 200]);
const MIOU_COLOR: Rgb<u8> = Rgb([70, 120, 200]);
const MACC_COLOR: Rgb<u8> = Rgb([200, 90, 70]);

/// Vertical bars, one per label, values in percent. NaN values leave a gap.
pub fn bar_chart(path: &Path, labels: &[String], values_pct: &[f64]) -> Result<()> {
    assert_eq!(labels.len(), values_pct.len());
    let n = labels.len().max(1) as u32;
    let bar_w = 9u32;
    let left = 34u32;
    let bottom_pad = 12u32;
    let top_pad = 8u32;
    let plot_h = 140u32;
    let width = left + n * (bar_w + 3) + 8;
    let height = top_pad + plot_h + bottom_pad;
    let mut img = white_canvas(width, height);

    for pct in [0u32, 25, 50, 75, 100] {
        let y = top_pad + plot_h - plot_h * pct / 100;
        draw_line(&mut img, left as i64, y as i64, (width - 4) as i64, y as i64, GRID);
        draw_text(&mut img, 2, y.saturating_sub(3), &format!("{pct}"), BLACK);
    }
    for (i, v) in values_pct.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let v = v.clamp(0.0, 100.0);
        let h = (v / 100.0 * plot_h as f64).round() as u32;
        let x0 = left + i as u32 * (bar_w + 3);
        let y1 = top_pad + plot_h;
        fill_rect(&mut img, x0, y1 - h, x0 + bar_w, y1, BAR);
    }
    draw_line(
        &mut img,
        left as i64,
        (top_pad + plot_h) as i64,
        (width - 4) as i64,
        (top_pad + plot_h) as i64,
        BLACK,
    );
    img.save(path)?;
    Ok(())
}

/// Two curves over threshold, values in percent.
pub fn sweep_chart(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let width = 360u32;
    let height = 220u32;
    let left = 34u32;
    let right = 12u32;
    let top = 26u32;
    let bottom = 24u32;
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let mut img = white_canvas(width, height);

    let (t_min, t_max) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.0), hi.max(r.0))
        });
    let t_span = if (t_max - t_min).abs() < 1e-12 { 1.0 } else { t_max - t_min };
    let to_xy = |t: f64, pct: f64| -> (i64, i64) {
        let x = left as f64 + (t - t_min) / t_span * plot_w as f64;
        let y = top as f64 + (1.0 - pct.clamp(0.0, 100.0) / 100.0) * plot_h as f64;
        (x.round() as i64, y.round() as i64)
    };

    for pct in [0u32, 25, 50, 75, 100] {
        let y = top + plot_h - plot_h * pct / 100;
        draw_line(&mut img, left as i64, y as i64, (width - right) as i64, y as i64, GRID);
        draw_text(&mut img, 2, y.saturating_sub(3), &format!("{pct}"), BLACK);
    }
    for row in rows {
        let (x, _) = to_xy(row.0, 0.0);
        draw_text(
            &mut img,
            (x as u32).saturating_sub(8),
            height - bottom + 6,
            &format!("{:.1}", row.0),
            BLACK,
        );
    }
    for pair in rows.windows(2) {
        let (x0, y0) = to_xy(pair[0].0, pair[0].1);
        let (x1, y1) = to_xy(pair[1].0, pair[1].1);
        draw_line(&mut img, x0, y0, x1, y1, MIOU_COLOR);
        let (x0, y0) = to_xy(pair[0].0, pair[0].2);
        let (x1, y1) = to_xy(pair[1].0, pair[1].2);
        draw_line(&mut img, x0, y0, x1, y1, MACC_COLOR);
    }
    if rows.len() == 1 {
        let (x, y) = to_xy(rows[0].0, rows[0].1);
        fill_rect(&mut img, x as u32 - 1, y as u32 - 1, x as u32 + 2, y as u32 + 2, MIOU_COLOR);
        let (x, y) = to_xy(rows[0].0, rows[0].2);
        fill_rect(&mut img, x as u32 - 1, y as u32 - 1, x as u32 + 2, y as u32 + 2, MACC_COLOR);
    }
    draw_line(&mut img, left as i64, (top + plot_h) as i64, (width - right) as i64, (top + plot_h) as i64, BLACK);

    fill_rect(&mut img, left, 6, left + 10, 10, MIOU_COLOR);
    draw_text(&mut img, left + 14, 4, "MIOU", BLACK);
    fill_rect(&mut img, left + 60, 6, left + 70, 10, MACC_COLOR);
    draw_text(&mut img, left + 74, 4, "MACC", BLACK);

    img.save(path)?;
    Ok(())
}

fn white_canvas(w: u32, h: u32) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb([255, 255, 255]))
}

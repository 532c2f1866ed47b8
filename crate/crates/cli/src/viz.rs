//! Glimpse-window overlays.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use dcc_core::comparator::select_stream;
use dcc_core::data::Image;
use dcc_core::glimpse::{GlimpseConfig, GlimpseParams};

const COLOR_A: [f64; 3] = [1.0, 0.85, 0.0];
const COLOR_B: [f64; 3] = [0.0, 0.9, 1.0];

/// Pixel rectangle `[x0, x1] × [y0, y1]` (inclusive) of a grid-unit window
/// on an image of `w×h` pixels over an `a×b` grid; cell `i` spans
/// `[i − ½, i + ½]`.
pub fn window_pixels(p: &GlimpseParams, cfg: &GlimpseConfig, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let (x0, y0, x1, y1) = p.window(cfg);
    let sx = w as f64 / p.a as f64;
    let sy = h as f64 / p.b as f64;
    let px = |v: f64, s: f64, n: usize| (((v + 0.5) * s).round().max(0.0) as usize).min(n - 1);
    (px(x0, sx, w), px(y0, sy, h), px(x1, sx, w), px(y1, sy, h))
}

fn draw_rect(img: &Image, rect: (usize, usize, usize, usize), color: [f64; 3], thick: usize) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    let (x0, y0, x1, y1) = rect;
    let mut data = img.data().to_vec();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let edge = x < x0 + thick || x + thick > x1 || y < y0 + thick || y + thick > y1;
            if edge {
                data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
            }
        }
    }
    Ok(Image::new(w, h, data)?)
}

/// One overlay per recurrent step on the image that step attends to, plus
/// `trajectory.csv`. Returns the number of overlays.
pub fn write_overlays(
    out: &Path,
    a: &Image,
    b: &Image,
    steps: &[GlimpseParams],
    cfg: &GlimpseConfig,
    scale: usize,
) -> Result<usize> {
    let big_a = a.resize(a.width() * scale, a.height() * scale);
    let big_b = b.resize(b.width() * scale, b.height() * scale);
    let mut csv = String::from("step,stream,g_x,g_y,delta,gamma,x0,y0,x1,y1,covers_grid\n");
    for (t, p) in steps.iter().enumerate() {
        let (img, tag, color) = select_stream(t, (&big_a, "a", COLOR_A), (&big_b, "b", COLOR_B));
        let rect = window_pixels(p, cfg, img.width(), img.height());
        let overlay = draw_rect(img, rect, color, scale.max(2) / 2)?;
        let path = out.join(format!("step_{t:02}_{tag}.png"));
        overlay.write_png(&path).with_context(|| format!("writing {}", path.display()))?;
        let (x0, y0, x1, y1) = p.window(cfg);
        writeln!(
            csv,
            "{t},{tag},{},{},{},{},{x0},{y0},{x1},{y1},{}",
            p.g_x,
            p.g_y,
            p.delta,
            p.gamma,
            p.covers_grid(cfg)
        )
        .expect("string write");
    }
    let path = out.join("trajectory.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(steps.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(g_x: f64, delta: f64) -> GlimpseParams {
        GlimpseParams { g_x, g_y: g_x, delta, gamma: 1.0, k: 2, a: 7, b: 7 }
    }

    #[test]
    fn full_window_maps_to_the_border() {
        let cfg = GlimpseConfig::default();
        // centre 3, two cells of 3.5 span [-0.5, 6.5]
        assert_eq!(window_pixels(&params(3.0, 3.5), &cfg, 28, 28), (0, 0, 27, 27));
    }

    #[test]
    fn small_window_is_inside() {
        let cfg = GlimpseConfig::default();
        let (x0, _, x1, _) = window_pixels(&params(3.0, 0.5), &cfg, 28, 28);
        assert_eq!((x0, x1), (12, 16));
    }

    #[test]
    fn border_pixels_take_the_color() {
        let img = Image::black(6);
        let out = draw_rect(&img, (1, 1, 4, 4), [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(out.pixel(1, 1), [1.0, 0.0, 0.0]);
        assert_eq!(out.pixel(4, 2), [1.0, 0.0, 0.0]);
        assert_eq!(out.pixel(2, 2), [0.0; 3]);
        assert_eq!(out.pixel(0, 0), [0.0; 3]);
    }
}

//! Side-by-side comparison grids with text labels and an optional zoomed inset.

use blindsr_core::image::bicubic_resize;
use blindsr_core::{Error, Image, Result};
use font8x8::{UnicodeFonts, BASIC_FONTS};

const GLYPH: usize = 8;
const BACKGROUND: f64 = 1.0;
const INK: f64 = 0.0;

/// Rectangle in panel coordinates, magnified by `zoom` under each panel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Inset {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub zoom: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareOptions {
    /// Blank pixels between panels and around the label strip.
    pub gutter: usize,
    /// Bicubic-resize every panel to the largest input before tiling.
    pub align: bool,
    pub inset: Option<Inset>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            gutter: 4,
            align: false,
            inset: None,
        }
    }
}

/// Where panel `i` landed in the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PanelPlacement {
    pub top: usize,
    pub left: usize,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub grid: Image,
    pub panels: Vec<PanelPlacement>,
    pub insets: Vec<PanelPlacement>,
}

fn to_channels(img: &Image, channels: usize) -> Image {
    if img.channels() == channels {
        img.clone()
    } else {
        Image::from_fn(channels, img.height(), img.width(), |_, y, x| img.get(0, y, x))
    }
}

fn align(images: &[(String, Image)]) -> Result<Vec<Image>> {
    let h = images.iter().map(|(_, i)| i.height()).max().expect("non-empty");
    let w = images.iter().map(|(_, i)| i.width()).max().expect("non-empty");
    images
        .iter()
        .map(|(label, img)| {
            if (img.height(), img.width()) == (h, w) {
                return Ok(img.clone());
            }
            let scale = h as f64 / img.height() as f64;
            if (img.width() as f64 * scale).round() as usize != w || (img.height() as f64 * scale).round() as usize != h {
                return Err(Error::ShapeMismatch(format!(
                    "{label} is {}x{}, which does not scale uniformly to {h}x{w}",
                    img.height(),
                    img.width()
                )));
            }
            bicubic_resize(img, scale)
        })
        .collect()
}

fn draw_text(grid: &mut Image, text: &str, top: usize, left: usize, max_width: usize, scale: usize) {
    let mut x0 = left;
    for ch in text.chars() {
        if x0 + GLYPH * scale > left + max_width {
            break;
        }
        let glyph = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH {
                if bits >> col & 1 == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (y, x) = (top + row * scale + dy, x0 + col * scale + dx);
                        for c in 0..grid.channels() {
                            grid.set(c, y, x, INK);
                        }
                    }
                }
            }
        }
        x0 += GLYPH * scale;
    }
}

fn blit(grid: &mut Image, src: &Image, top: usize, left: usize) {
    for c in 0..src.channels() {
        for y in 0..src.height() {
            for x in 0..src.width() {
                grid.set(c, top + y, left + x, src.get(c, y, x));
            }
        }
    }
}

fn zoom_nearest(src: &Image, f: usize) -> Image {
    Image::from_fn(src.channels(), src.height() * f, src.width() * f, |c, y, x| src.get(c, y / f, x / f))
}

/// Tiles labelled images left to right. Each column is a label strip, the
/// panel itself, and optionally the magnified inset; panel pixels are copied
/// verbatim.
pub fn compose(images: &[(String, Image)], opts: &CompareOptions) -> Result<Comparison> {
    if images.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a comparison needs at least 2 images, got {}",
            images.len()
        )));
    }
    let panels = if opts.align {
        align(images)?
    } else {
        images.iter().map(|(_, i)| i.clone()).collect()
    };
    let (h, w) = (panels[0].height(), panels[0].width());
    for ((label, _), p) in images.iter().zip(&panels) {
        if (p.height(), p.width()) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "{label} is {}x{} but the first panel is {h}x{w}; pass --align to resize",
                p.height(),
                p.width()
            )));
        }
    }
    if let Some(r) = opts.inset {
        if r.height == 0 || r.width == 0 || r.zoom == 0 || r.top + r.height > h || r.left + r.width > w {
            return Err(Error::InvalidArgument(format!(
                "inset {}x{} at ({}, {}) zoom {} does not fit the {h}x{w} panels",
                r.height, r.width, r.top, r.left, r.zoom
            )));
        }
    }
    let channels = panels.iter().map(Image::channels).max().expect("non-empty");
    let g = opts.gutter;
    let text_scale = if w >= 24 * GLYPH { 2 } else { 1 };
    let label_h = GLYPH * text_scale + 2 * g.max(1);
    let inset_dims = opts.inset.map(|r| (r.height * r.zoom, r.width * r.zoom));
    let col_w = w.max(inset_dims.map_or(0, |d| d.1));
    let grid_w = panels.len() * col_w + (panels.len() - 1) * g;
    let grid_h = label_h + h + inset_dims.map_or(0, |d| g + d.0);

    let mut grid = Image::filled(channels, grid_h, grid_w, BACKGROUND);
    let mut placed = Vec::with_capacity(panels.len());
    let mut inset_placed = Vec::new();
    for (i, ((label, _), panel)) in images.iter().zip(&panels).enumerate() {
        let left = i * (col_w + g);
        draw_text(&mut grid, label, g.max(1), left, col_w, text_scale);
        let panel = to_channels(panel, channels);
        blit(&mut grid, &panel, label_h, left);
        placed.push(PanelPlacement { top: label_h, left });
        if let Some(r) = opts.inset {
            let zoomed = zoom_nearest(&panel.crop(r.top, r.left, r.height, r.width)?, r.zoom);
            let at = PanelPlacement { top: label_h + h + g, left };
            blit(&mut grid, &zoomed, at.top, at.left);
            inset_placed.push(at);
        }
    }
    Ok(Comparison {
        grid,
        panels: placed,
        insets: inset_placed,
    })
}

/// Writes the grid from [`compose`] to `out`.
pub fn emit_comparison(images: &[(String, Image)], opts: &CompareOptions, out: impl AsRef<std::path::Path>) -> Result<()> {
    let cmp = compose(images, opts)?;
    blindsr_core::image::save_image(&cmp.grid, out)
}

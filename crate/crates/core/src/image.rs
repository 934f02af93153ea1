//! Planar floating-point images and the handful of image operations every
//! other module relies on.
//!
//! Pixel values are stored channels-first (`c`, then row, then column) as
//! `f64`, nominally in `[0, 1]`. Values outside that range are allowed while
//! processing; they are clamped only when an image is written to disk.

use std::fs;
use std::io::Write;
use std::path::Path;

use ::image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty image");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    /// Builds an image by evaluating `f(channel, row, col)` at every pixel.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        img
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    /// Extracts a `height x width` window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

/// Loads an image, scaling codes to `[0, 1]` by the container's maximum code.
///
/// Files ending in `.txt` are read as a plain-text matrix (see
/// [`read_text_matrix`]); everything else goes through the raster decoder,
/// which accepts 8- and 16-bit grayscale or RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if is_text_path(path) {
        return read_text_matrix(path);
    }
    let decoded = ::image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Codec {
            path: path.to_owned(),
            source,
        })?;
    let unsupported = |reason: &str| Error::UnsupportedFormat {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => {
            Image::new(1, h, w, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(buf) => Image::new(
            1,
            h,
            w,
            buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        ),
        DynamicImage::ImageRgb8(buf) => Ok(interleaved_to_planar(&buf.into_raw(), h, w, 255.0)),
        DynamicImage::ImageRgb16(buf) => Ok(interleaved_to_planar(&buf.into_raw(), h, w, 65535.0)),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageRgba16(_) => Err(unsupported("alpha channels are not supported")),
        _ => Err(unsupported("only 8/16-bit grayscale or RGB rasters are supported")),
    }
}

fn interleaved_to_planar<T: Copy + Into<f64>>(raw: &[T], h: usize, w: usize, max: f64) -> Image {
    Image::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c].into() / max)
}

/// Quantizes a value in `[0, 1]` to an 8-bit code: clamp, scale by 255, round
/// half away from zero.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an image. `.txt` paths use the text matrix format at full precision;
/// anything else is written as an 8-bit raster in the format implied by the
/// extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_text_path(path) {
        return write_text_matrix(img, path);
    }
    let (h, w) = (img.height as u32, img.width as u32);
    let dynimg = match img.channels {
        1 => {
            let raw: Vec<u8> = img.data.iter().map(|&v| quantize_u8(v)).collect();
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("buffer size"))
        }
        3 => {
            let mut raw = Vec::with_capacity(img.data.len());
            for y in 0..img.height {
                for x in 0..img.width {
                    for c in 0..3 {
                        raw.push(quantize_u8(img.get(c, y, x)));
                    }
                }
            }
            let buf: RgbImage = ImageBuffer::from_raw(w, h, raw).expect("buffer size");
            DynamicImage::ImageRgb8(buf)
        }
        n => {
            return Err(Error::InvalidArgument(format!(
                "cannot save a {n}-channel image, expected 1 or 3"
            )))
        }
    };
    dynimg.save(path).map_err(|source| Error::Codec {
        path: path.to_owned(),
        source,
    })
}

fn is_text_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("txt"))
}

/// Reads the plain-text matrix format: a header line `H W C`, then `H*W*C`
/// whitespace-separated decimals in row-major, channel-last order.
pub fn read_text_matrix(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text_matrix(&text).map_err(|reason| Error::parse(path, reason))
}

pub fn parse_text_matrix(text: &str) -> std::result::Result<Image, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| format!("bad header token {t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [h, w, c] = dims[..] else {
        return Err(format!("header must be `H W C`, got {header:?}"));
    };
    let values: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad value {t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != h * w * c {
        return Err(format!("expected {} values, found {}", h * w * c, values.len()));
    }
    if h == 0 || w == 0 || !(c == 1 || c == 3) {
        return Err(format!("unsupported dimensions {h}x{w}x{c}"));
    }
    Ok(Image::from_fn(c, h, w, |ch, y, x| values[(y * w + x) * c + ch]))
}

pub fn format_text_matrix(img: &Image) -> String {
    let mut out = format!("{} {} {}\n", img.height, img.width, img.channels);
    for y in 0..img.height {
        let row: Vec<String> = (0..img.width)
            .flat_map(|x| (0..img.channels).map(move |c| (c, x)))
            .map(|(c, x)| format!("{:e}", img.get(c, y, x)))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_text_matrix(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_text_matrix(img).as_bytes())
        .map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Colour, resampling, cropping
// ---------------------------------------------------------------------------

/// BT.601 luma on the limited (16..235) range, as used by SR benchmarks.
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "rgb_to_y needs 3 channels, got {}",
            img.channels
        )));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..img.plane_len())
        .map(|i| (16.0 + 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i]) / 255.0)
        .collect();
    Image::new(1, img.height, img.width, data)
}

/// Keys' cubic convolution kernel with `a = -0.5`.
pub fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four source taps and weights for one output coordinate.
fn cubic_taps(dst: usize, scale: f64, src_len: usize) -> ([usize; 4], [f64; 4]) {
    let src = (dst as f64 + 0.5) / scale - 0.5;
    let base = src.floor();
    let frac = src - base;
    let mut idx = [0usize; 4];
    let mut wts = [0f64; 4];
    for k in 0..4 {
        let offset = k as f64 - 1.0;
        let pos = base as i64 + k as i64 - 1;
        idx[k] = pos.clamp(0, src_len as i64 - 1) as usize;
        wts[k] = cubic_weight(frac - offset);
    }
    (idx, wts)
}

/// Separable cubic-convolution resize. Output dimensions are
/// `round(dim * scale)`; samples outside the image are clamped to the edge.
pub fn bicubic_resize(img: &Image, scale: f64) -> Result<Image> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let out_h = (img.height as f64 * scale).round() as usize;
    let out_w = (img.width as f64 * scale).round() as usize;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resizing {}x{} by {scale} gives an empty image",
            img.height, img.width
        )));
    }
    let col_taps: Vec<_> = (0..out_w).map(|x| cubic_taps(x, scale, img.width)).collect();
    let row_taps: Vec<_> = (0..out_h).map(|y| cubic_taps(y, scale, img.height)).collect();

    let mut out = Image::zeros(img.channels, out_h, out_w);
    let mut horiz = vec![0.0; img.height * out_w];
    for c in 0..img.channels {
        let src = img.plane(c);
        for y in 0..img.height {
            let row = &src[y * img.width..(y + 1) * img.width];
            for (x, (idx, wts)) in col_taps.iter().enumerate() {
                horiz[y * out_w + x] = (0..4).map(|k| wts[k] * row[idx[k]]).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (y, (idx, wts)) in row_taps.iter().enumerate() {
            for x in 0..out_w {
                dst[y * out_w + x] = (0..4).map(|k| wts[k] * horiz[idx[k] * out_w + x]).sum();
            }
        }
    }
    Ok(out)
}

/// Crops the bottom and right edges so both dimensions are multiples of `s`.
pub fn modcrop(img: &Image, s: usize) -> Result<Image> {
    if s == 0 {
        return Err(Error::InvalidArgument("modcrop scale must be >= 1".into()));
    }
    if img.height < s || img.width < s {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than scale {s}",
            img.height, img.width
        )));
    }
    img.crop(0, 0, img.height - img.height % s, img.width - img.width % s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = crate::rng::rng_for(seed, 0);
        Image::from_fn(c, h, w, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(Image::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 0, 2, vec![]).is_err());
    }

    #[test]
    fn save_quantization_rules() {
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(-0.2), 0);
        assert_eq!(quantize_u8(1.7), 255);
        // 0.5 * 255 = 127.5 rounds away from zero.
        assert_eq!(quantize_u8(0.5), 128);
    }

    #[test]
    fn loads_8bit_gray_codes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        GrayImage::from_raw(2, 2, vec![0, 255, 128, 64]).unwrap().save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.dims(), (1, 2, 2));
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn loads_rgb_white_and_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.png");
        RgbImage::from_raw(3, 2, vec![255; 18]).unwrap().save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.dims(), (3, 2, 3));
        assert!(img.data().iter().all(|&v| v == 1.0));

        let path16 = dir.path().join("g16.png");
        let buf: ImageBuffer<::image::Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(2, 1, vec![0u16, 65535]).unwrap();
        buf.save(&path16).unwrap();
        assert_eq!(load_image(&path16).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        ::image::RgbaImage::from_raw(1, 1, vec![1, 2, 3, 4]).unwrap().save(&path).unwrap();
        assert!(matches!(load_image(&path), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_image("/nonexistent/x.png").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn png_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::rng::rng_for(3, 0);
        let codes: Vec<u8> = (0..3 * 7 * 5).map(|_| rng.random()).collect();
        let img = Image::from_fn(3, 7, 5, |c, y, x| codes[(c * 7 + y) * 5 + x] as f64 / 255.0);
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        save_image(&img, &a).unwrap();
        let back = load_image(&a).unwrap();
        let back_codes: Vec<u8> = back.data().iter().map(|&v| quantize_u8(v)).collect();
        assert_eq!(back_codes, codes);
        save_image(&back, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn text_matrix_round_trip() {
        let img = random_image(3, 4, 5, 1);
        let parsed = parse_text_matrix(&format_text_matrix(&img)).unwrap();
        assert_eq!(parsed, img);
        assert!(parse_text_matrix("2 2 1\n1 2 3").is_err());
        // channel-last ordering
        let two = parse_text_matrix("1 2 3\n1 2 3 4 5 6\n").unwrap();
        assert_eq!(two.get(0, 0, 1), 4.0);
        assert_eq!(two.get(2, 0, 0), 3.0);
    }

    #[test]
    fn luma_reference_values() {
        let white = Image::filled(3, 1, 1, 1.0);
        assert!((rgb_to_y(&white).unwrap().get(0, 0, 0) - 235.0 / 255.0).abs() < 1e-12);
        let black = Image::zeros(3, 1, 1);
        assert!((rgb_to_y(&black).unwrap().get(0, 0, 0) - 16.0 / 255.0).abs() < 1e-15);
        let red = Image::new(3, 1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((rgb_to_y(&red).unwrap().get(0, 0, 0) - (16.0 + 65.481) / 255.0).abs() < 1e-15);
        assert!(rgb_to_y(&Image::zeros(1, 1, 1)).is_err());
    }

    #[test]
    fn bicubic_identity_and_constant() {
        let img = random_image(2, 6, 9, 4);
        let same = bicubic_resize(&img, 1.0).unwrap();
        for (a, b) in img.data().iter().zip(same.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let flat = Image::filled(1, 5, 7, 0.3);
        for s in [0.5, 1.5, 2.0, 3.0, 4.0] {
            let up = bicubic_resize(&flat, s).unwrap();
            assert!(up.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        }
        assert!(bicubic_resize(&flat, 0.01).is_err());
        assert!(bicubic_resize(&flat, 0.0).is_err());
    }

    #[test]
    fn bicubic_ramp_matches_direct_kernel_evaluation() {
        let ramp = Image::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f64 / 15.0);
        let up = bicubic_resize(&ramp, 2.0).unwrap();
        assert_eq!(up.dims(), (1, 8, 8));
        // Brute force: sum over all source pixels with clamped indices.
        let oracle = |oy: usize, ox: usize| {
            let sy = (oy as f64 + 0.5) / 2.0 - 0.5;
            let sx = (ox as f64 + 0.5) / 2.0 - 0.5;
            let mut acc = 0.0;
            for ty in -3i64..8 {
                for tx in -3i64..8 {
                    let w = cubic_weight(sy - ty as f64) * cubic_weight(sx - tx as f64);
                    if w != 0.0 {
                        let y = ty.clamp(0, 3) as usize;
                        let x = tx.clamp(0, 3) as usize;
                        acc += w * ramp.get(0, y, x);
                    }
                }
            }
            acc
        };
        for y in 0..8 {
            for x in 0..8 {
                assert!((up.get(0, y, x) - oracle(y, x)).abs() < 1e-12, "({y},{x})");
            }
        }
    }

    #[test]
    fn modcrop_dims() {
        let d = |h, w, s| modcrop(&Image::zeros(1, h, w), s).unwrap().dims();
        assert_eq!(d(7, 9, 4), (1, 4, 8));
        assert_eq!(d(8, 8, 2), (1, 8, 8));
        assert_eq!(d(21, 13, 3), (1, 21, 12));
        assert!(modcrop(&Image::zeros(1, 3, 9), 4).is_err());
    }

    proptest! {
        #[test]
        fn luma_stays_in_limited_range(r in 0.0..=1.0f64, g in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let y = rgb_to_y(&Image::new(3, 1, 1, vec![r, g, b]).unwrap()).unwrap().get(0, 0, 0);
            prop_assert!((16.0 / 255.0 - 1e-15..=235.0 / 255.0 + 1e-15).contains(&y));
        }

        #[test]
        fn bicubic_preserves_constants(v in -1.0..2.0f64, h in 1usize..9, w in 1usize..9, s in 0.5..4.0f64) {
            if let Ok(out) = bicubic_resize(&Image::filled(1, h, w, v), s) {
                prop_assert!(out.data().iter().all(|o| (o - v).abs() < 1e-12));
            }
        }
    }
}

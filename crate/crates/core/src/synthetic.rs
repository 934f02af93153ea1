//! Procedural test scenes: a shaded background, a handful of flat-colored
//! ellipses and rectangles, and a faint periodic texture.

use rand::Rng;

use crate::image::Image;
use crate::rng::{rng_for, streams};

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, cos: f64, sin: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, cos, sin } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }
}

/// A deterministic scene with values in `[0, 1]`.
pub fn scene(channels: usize, height: usize, width: usize, seed: u64) -> Image {
    let mut rng = rng_for(seed, streams::DEFAULT);
    let (h, w) = (height as f64, width as f64);
    let tint = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let base: f64 = rng.random_range(0.1..0.9);
        (0..channels).map(|_| (base + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0)).collect()
    };

    let bg0 = tint(&mut rng);
    let (gy, gx) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let n_shapes = rng.random_range(3..=6);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let shape = if rng.random_bool(0.5) {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Shape::Ellipse {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                ry: rng.random_range(h / 10.0..h / 3.0),
                rx: rng.random_range(w / 10.0..w / 3.0),
                cos: theta.cos(),
                sin: theta.sin(),
            }
        } else {
            let (y0, x0) = (rng.random_range(-h / 4.0..h), rng.random_range(-w / 4.0..w));
            Shape::Rect {
                y0,
                x0,
                y1: y0 + rng.random_range(h / 8.0..h / 2.0),
                x1: x0 + rng.random_range(w / 8.0..w / 2.0),
            }
        };
        shapes.push((shape, tint(&mut rng)));
    }
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    Image::from_fn(channels, height, width, |c, i, j| {
        let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
        let mut v = bg0[c] + gy * (y / h - 0.5) + gx * (x / w - 0.5);
        for (shape, color) in &shapes {
            if shape.contains(y, x) {
                v = color[c];
            }
        }
        v += waves.iter().map(|(fy, fx, p)| 0.03 * (fy * y + fx * x + p).sin()).sum::<f64>();
        v.clamp(0.0, 1.0)
    })
}

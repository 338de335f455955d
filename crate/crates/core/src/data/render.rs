//! Procedural scenes: one colored shape on a colored background.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub cardinality: u32,
}

/// Ordered generative factors plus the image geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorSpec {
    pub factors: Vec<Factor>,
    pub image_size: usize,
    pub channels: usize,
    pub bits: u8,
}

pub const FACTOR_NAMES: [&str; 6] = ["background_hue", "object_hue", "shape", "scale", "pos_x", "pos_y"];
const CARDINALITIES: [u32; 6] = [8, 8, 3, 6, 8, 8];

/// Supersampling grid per pixel side.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    /// Half-plane / radius test in units of the shape radius.
    fn contains(self, dx: f64, dy: f64) -> bool {
        match self {
            // same area as the unit circle
            Shape::Square => dx.abs() <= 0.886 && dy.abs() <= 0.886,
            Shape::Circle => dx * dx + dy * dy <= 1.0,
            Shape::Triangle => {
                // upward equilateral triangle, circumradius TRIANGLE_R, y grows downwards
                let r = TRIANGLE_R;
                let (s3, y0) = (3f64.sqrt(), 0.5 * r);
                dy <= y0 && s3 * dx - dy <= r && -s3 * dx - dy <= r
            }
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        })
    }
}

const TRIANGLE_R: f64 = 1.2;

impl FactorSpec {
    /// The six-factor scene family at `size x size`, 3 channels, 8 bits.
    pub fn scenes(size: usize) -> Result<Self> {
        if size < 8 {
            return Err(Error::invalid(format!("image size must be >= 8, got {}", size)));
        }
        Ok(FactorSpec {
            factors: FACTOR_NAMES
                .iter()
                .zip(CARDINALITIES)
                .map(|(n, c)| Factor { name: n.to_string(), cardinality: c })
                .collect(),
            image_size: size,
            channels: 3,
            bits: 8,
        })
    }

    pub fn num_images(&self) -> usize {
        self.factors.iter().map(|f| f.cardinality as usize).product()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.cardinality as usize).collect()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }

    /// Mixed-radix decoding of `index`; the last factor varies fastest.
    pub fn factors_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for (k, f) in self.factors.iter().enumerate().rev() {
            out[k] = index % f.cardinality as usize;
            index /= f.cardinality as usize;
        }
        out
    }

    pub fn index_of(&self, factors: &[usize]) -> Result<usize> {
        self.check(factors)?;
        Ok(factors.iter().zip(&self.factors).fold(0, |acc, (v, f)| acc * f.cardinality as usize + v))
    }

    pub fn check(&self, factors: &[usize]) -> Result<()> {
        if factors.len() != self.factors.len() {
            return Err(Error::invalid(format!("expected {} factors, got {}", self.factors.len(), factors.len())));
        }
        for (v, f) in factors.iter().zip(&self.factors) {
            if *v >= f.cardinality as usize {
                return Err(Error::invalid(format!("factor {} = {} out of range 0..{}", f.name, v, f.cardinality)));
            }
        }
        Ok(())
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let rgb = match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    };
    rgb.map(|c| 255.0 * c)
}

/// A rendered scene and the fraction of each pixel covered by the object.
pub struct Rendered {
    /// `[C, H, W]` 8-bit pixels.
    pub pixels: Vec<u8>,
    /// `[H, W]` coverage in `{0, 1/16, ..., 1}`.
    pub coverage: Vec<f64>,
}

/// Renders the scene for `factors`, anti-aliased by supersampling.
pub fn render(spec: &FactorSpec, factors: &[usize]) -> Result<Rendered> {
    spec.check(factors)?;
    if spec.factors.len() != 6 || spec.factors.iter().zip(FACTOR_NAMES).any(|(f, n)| f.name != n) || spec.channels != 3 {
        return Err(Error::invalid("render needs the six-factor RGB scene spec"));
    }
    let card = spec.cardinalities();
    let size = spec.image_size as f64;
    let bg = hsv(factors[0] as f64 / card[0] as f64, 0.45, 0.9);
    let fg = hsv((factors[1] as f64 + 0.5) / card[1] as f64, 0.85, 0.65);
    let shape = Shape::ALL[factors[2]];
    let radius = |s: usize| size * (0.09 + 0.028 * s as f64);
    let r = radius(factors[3]);
    let margin = TRIANGLE_R * radius(card[3] - 1) + 0.5;
    let span = size - 2.0 * margin;
    let cx = margin + span * factors[4] as f64 / (card[4] - 1) as f64;
    let cy = margin + span * factors[5] as f64 / (card[5] - 1) as f64;

    let n = spec.image_size;
    let mut coverage = vec![0.0; n * n];
    let reach = TRIANGLE_R * r + 1.0;
    let lo = |c: f64| ((c - reach).floor().max(0.0)) as usize;
    let hi = |c: f64| ((c + reach).ceil().min(size)) as usize;
    let step = 1.0 / SUPERSAMPLE as f64;
    for i in lo(cy)..hi(cy) {
        for j in lo(cx)..hi(cx) {
            let mut hits = 0;
            for a in 0..SUPERSAMPLE {
                for b in 0..SUPERSAMPLE {
                    let y = i as f64 + (a as f64 + 0.5) * step;
                    let x = j as f64 + (b as f64 + 0.5) * step;
                    if shape.contains((x - cx) / r, (y - cy) / r) {
                        hits += 1;
                    }
                }
            }
            coverage[i * n + j] = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    let mut pixels = vec![0u8; 3 * n * n];
    for ch in 0..3 {
        for p in 0..n * n {
            let c = coverage[p];
            pixels[ch * n * n + p] = (c * fg[ch] + (1.0 - c) * bg[ch]).round() as u8;
        }
    }
    Ok(Rendered { pixels, coverage })
}

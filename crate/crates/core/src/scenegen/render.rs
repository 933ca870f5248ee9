use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::BBox;
use super::world::{Placed, Shape, WorldConfig};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const BACKGROUND: [f32; 3] = [0.18, 0.18, 0.2];

/// Planar RGB image, values in `[0, 1]` quantized to 8 bits so that the
/// PPM round trip is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    /// `[3, height, width]` row-major.
    pub data: Vec<f32>,
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

impl RasterImage {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in rgb {
            data.extend(std::iter::repeat(quantize(c)).take(width * height));
        }
        RasterImage {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set_rgb(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[(c * self.height + y) * self.width + x] = quantize(v);
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![3, self.height, self.width], self.data.clone())
            .expect("image buffer matches its dimensions")
    }

    /// Binary PPM (P6), 8-bit RGB.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let plane = self.width * self.height;
        let mut bytes = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                bytes.push((self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Self> {
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::format("PPM image", "truncated header"));
            }
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        if tokens.len() != 4 || tokens[0] != "P6" {
            return Err(Error::format("PPM image", "expected a P6 header on separate lines"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format("PPM image", format!("bad header field `{s}`")))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if width == 0 || height == 0 || maxval != 255 {
            return Err(Error::format("PPM image", "unsupported dimensions or depth"));
        }
        let plane = width * height;
        let mut bytes = vec![0u8; 3 * plane];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::format("PPM image", "truncated pixel data"))?;
        let mut data = vec![0.0f32; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                data[c * plane + i] = bytes[3 * i + c] as f32 / 255.0;
            }
        }
        Ok(RasterImage {
            width,
            height,
            data,
        })
    }

    /// One-pixel rectangle outline, clipped to the canvas.
    pub fn draw_box(&mut self, bbox: &BBox, rgb: [f32; 3]) {
        let clip = |v: f64, hi: usize| v.round().clamp(0.0, (hi - 1) as f64) as usize;
        let (x0, x1) = (clip(bbox.x0, self.width), clip(bbox.x1 - 1.0, self.width));
        let (y0, y1) = (clip(bbox.y0, self.height), clip(bbox.y1 - 1.0, self.height));
        for x in x0..=x1 {
            self.set_rgb(x, y0, rgb);
            self.set_rgb(x, y1, rgb);
        }
        for y in y0..=y1 {
            self.set_rgb(x0, y, rgb);
            self.set_rgb(x1, y, rgb);
        }
    }

    /// Filled square marker of half-size `r` centered at `(x, y)`.
    pub fn draw_marker(&mut self, x: f64, y: f64, r: usize, rgb: [f32; 3]) {
        let (cx, cy) = (x.round() as isize, y.round() as isize);
        let r = r as isize;
        for yy in cy - r..=cy + r {
            for xx in cx - r..=cx + r {
                if xx >= 0 && yy >= 0 && (xx as usize) < self.width && (yy as usize) < self.height {
                    self.set_rgb(xx as usize, yy as usize, rgb);
                }
            }
        }
    }
}

/// Whether the pixel center `(px, py)` lies in the object's shape.
pub fn shape_covers(obj: &Placed, px: f64, py: f64) -> bool {
    let b = &obj.bbox;
    if !b.contains_point(px, py) {
        return false;
    }
    let (cx, cy) = b.center();
    match obj.shape {
        Shape::Square => true,
        Shape::Circle => {
            let dx = (px - cx) / (b.width() / 2.0);
            let dy = (py - cy) / (b.height() / 2.0);
            dx * dx + dy * dy <= 1.0
        }
        Shape::Triangle => {
            let t = (py - b.y0) / b.height();
            (px - cx).abs() <= t * b.width() / 2.0
        }
    }
}

/// Paint order: larger objects first so that smaller ones stay visible.
pub fn paint_order(objects: &[Placed]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| {
        objects[b]
            .bbox
            .area()
            .total_cmp(&objects[a].bbox.area())
            .then(a.cmp(&b))
    });
    order
}

/// Renders objects over a noisy background. Also returns, per object, the
/// number of visible pixels and the number of pixels its shape covers.
pub fn render(objects: &[Placed], cfg: &WorldConfig, noise_seed: u64) -> (RasterImage, Vec<(usize, usize)>) {
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut image = RasterImage::filled(w, h, BACKGROUND);
    for y in 0..h {
        for x in 0..w {
            let n = rng.gen_range(-cfg.noise..=cfg.noise);
            image.set_rgb(x, y, BACKGROUND.map(|c| c + n));
        }
    }
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let mut total = vec![0usize; objects.len()];
    for i in paint_order(objects) {
        let obj = &objects[i];
        let rgb = obj.color.rgb();
        let b = obj.bbox.clip(w as f64, h as f64);
        let (x0, x1) = (b.x0.floor() as usize, (b.x1.ceil() as usize).min(w));
        let (y0, y1) = (b.y0.floor() as usize, (b.y1.ceil() as usize).min(h));
        for y in y0..y1 {
            for x in x0..x1 {
                if shape_covers(obj, x as f64 + 0.5, y as f64 + 0.5) {
                    total[i] += 1;
                    owner[y * w + x] = Some(i);
                    image.set_rgb(x, y, rgb);
                }
            }
        }
    }
    let mut shown = vec![0usize; objects.len()];
    for o in owner.into_iter().flatten() {
        shown[o] += 1;
    }
    (image, shown.into_iter().zip(total).collect())
}

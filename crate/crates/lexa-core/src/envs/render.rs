//! Rasterization of environment states to 16×16 RGB images.
//!
//! Pixel `(row, col)` covers `[col/16, (col+1)/16] × [row/16, (row+1)/16]`.
//! Squares are drawn with exact area coverage, so sub-pixel motion changes
//! the image.

use alloc::vec;
use alloc::vec::Vec;

use super::{EnvKind, EnvState, Env, Rect};

pub const IMAGE_SHAPE: [usize; 3] = [16, 16, 3];
pub const PIXELS: usize = 16 * 16 * 3;

const BACKGROUND: [f32; 3] = [0.9, 0.9, 0.9];
const WALL: [f32; 3] = [0.3, 0.3, 0.3];
const AGENT: [f32; 3] = [0.9, 0.1, 0.1];
const BLOCK: [f32; 3] = [0.1, 0.7, 0.1];

/// Renders `state` as row-major `H×W×C` floats in `[0, 1]`.
pub fn render(kind: EnvKind, state: &EnvState) -> Vec<f32> {
    let mut img = vec![0.0f32; PIXELS];
    for px in img.chunks_exact_mut(3) {
        px.copy_from_slice(&BACKGROUND);
    }
    for wall in Env::new(kind).walls() {
        paint(&mut img, wall, WALL);
    }
    if let Some(block) = state.block {
        paint(&mut img, &Rect::around(block), BLOCK);
    }
    paint(&mut img, &Rect::around(state.agent), AGENT);
    img
}

fn paint(img: &mut [f32], rect: &Rect, color: [f32; 3]) {
    let span = |lo: f64, hi: f64| {
        let first = num_traits::Float::floor(lo * 16.0).max(0.0) as usize;
        let last = (num_traits::Float::ceil(hi * 16.0) as usize).min(16);
        first..last
    };
    for row in span(rect.y0, rect.y1) {
        let cover_y = overlap(rect.y0, rect.y1, row);
        for col in span(rect.x0, rect.x1) {
            let cover = (cover_y * overlap(rect.x0, rect.x1, col)) as f32;
            if cover <= 0.0 {
                continue;
            }
            let px = &mut img[(row * 16 + col) * 3..(row * 16 + col + 1) * 3];
            for (p, c) in px.iter_mut().zip(color) {
                *p = (1.0 - cover) * *p + cover * c;
            }
        }
    }
}

/// Fraction of pixel `i` covered by `[lo, hi]`.
fn overlap(lo: f64, hi: f64, i: usize) -> f64 {
    let (a, b) = (i as f64 / 16.0, (i + 1) as f64 / 16.0);
    ((hi.min(b) - lo.max(a)) * 16.0).clamp(0.0, 1.0)
}

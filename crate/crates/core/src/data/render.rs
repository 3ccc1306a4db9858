//! Anti-aliased square blobs moving along straight lines.

use crate::data::corpus::{gloss_def, Appearance};
use crate::error::{Error, Result};

/// One gesture: a blob moving at constant velocity for `frames` frames,
/// centred on its trajectory midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSpec {
    pub gloss_id: usize,
    pub appearance: Appearance,
    /// Pixels per frame along the appearance's direction.
    pub speed: f64,
    pub frames: usize,
}

impl GestureSpec {
    pub fn new(gloss_id: usize, speed: f64, frames: usize) -> Result<Self> {
        Ok(GestureSpec { gloss_id, appearance: gloss_def(gloss_id)?.appearance, speed, frames })
    }

    /// Blob centre (row, column) at frame `k`.
    pub fn position(&self, k: usize) -> (f64, f64) {
        let offset = self.speed * (k as f64 - (self.frames as f64 - 1.0) / 2.0);
        let a = &self.appearance;
        (a.center.0 + offset * a.direction.0, a.center.1 + offset * a.direction.1)
    }

    /// Whether every frame keeps the whole blob inside a `size`-pixel frame.
    pub fn fits(&self, size: usize) -> bool {
        let half = self.appearance.size / 2.0;
        (0..self.frames).all(|k| {
            let (r, c) = self.position(k);
            r - half >= 0.0 && c - half >= 0.0 && r + half <= size as f64 && c + half <= size as f64
        })
    }
}

/// Length of `[lo, hi] ∩ [p, p + 1]`.
fn overlap(lo: f64, hi: f64, p: usize) -> f64 {
    let p = p as f64;
    (hi.min(p + 1.0) - lo.max(p)).max(0.0)
}

/// Renders all gestures back to back: `[T, 3, size, size]` row-major with
/// `T = Σ frames`. Pixel value = colour × covered area of the pixel.
pub fn render_frames(specs: &[GestureSpec], size: usize) -> Result<Vec<f64>> {
    let plane = size * size;
    let total: usize = specs.iter().map(|s| s.frames).sum();
    let mut out = vec![0.0; total * 3 * plane];
    let mut t = 0;
    for spec in specs {
        if !spec.fits(size) {
            return Err(Error::config(format!(
                "gesture for gloss {} at speed {} leaves the {size}-pixel frame",
                spec.gloss_id, spec.speed
            )));
        }
        let half = spec.appearance.size / 2.0;
        for k in 0..spec.frames {
            let (r, c) = spec.position(k);
            let frame = &mut out[t * 3 * plane..(t + 1) * 3 * plane];
            let rows = (r - half).floor() as usize..((r + half).ceil() as usize).min(size);
            let cols = (c - half).floor() as usize..((c + half).ceil() as usize).min(size);
            for y in rows {
                let wy = overlap(r - half, r + half, y);
                for x in cols.clone() {
                    let cover = wy * overlap(c - half, c + half, x);
                    for (ch, &col) in spec.appearance.color.iter().enumerate() {
                        frame[ch * plane + y * size + x] = col * cover;
                    }
                }
            }
            t += 1;
        }
    }
    Ok(out)
}

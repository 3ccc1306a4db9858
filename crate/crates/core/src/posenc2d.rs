//! Fixed 2-D sinusoidal positional encoding for `[C, h, w]` feature maps.
//!
//! Coordinates: `x` is the row index in `[0, h)` and `y` the column index in
//! `[0, w)`. With `D` channels and `i, j ∈ [0, D/4)`:
//!
//! ```text
//! table[2i,       x, y] = sin(x / 10000^(4i/D))
//! table[2i + 1,   x, y] = cos(x / 10000^(4i/D))
//! table[D/2 + 2j,     x, y] = sin(y / 10000^(4j/D))
//! table[D/2 + 2j + 1, x, y] = cos(y / 10000^(4j/D))
//! ```
//!
//! The first half of the channels therefore varies only with the row and the
//! second half only with the column. The table is a constant: it never takes
//! part in optimisation.

use slt_tensor::Tensor;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PosEnc2D {
    channels: usize,
    height: usize,
    width: usize,
    table: Vec<f64>,
}

/// `1 / 10000^(4k/D)`.
fn frequency(k: usize, channels: usize) -> f64 {
    10000f64.powf(-(4.0 * k as f64) / channels as f64)
}

impl PosEnc2D {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || channels % 4 != 0 {
            return Err(Error::config(format!(
                "2-D positional encoding needs a channel count divisible by 4, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::config(format!("empty positional grid {height}x{width}")));
        }
        let half = channels / 2;
        let plane = height * width;
        let mut table = vec![0.0; channels * plane];
        for k in 0..channels / 4 {
            let freq = frequency(k, channels);
            for x in 0..height {
                for y in 0..width {
                    let (row_angle, col_angle) = (x as f64 * freq, y as f64 * freq);
                    let at = |c: usize| c * plane + x * width + y;
                    table[at(2 * k)] = row_angle.sin();
                    table[at(2 * k + 1)] = row_angle.cos();
                    table[at(half + 2 * k)] = col_angle.sin();
                    table[at(half + 2 * k + 1)] = col_angle.cos();
                }
            }
        }
        Ok(PosEnc2D { channels, height, width, table })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Value at channel `c`, row `x`, column `y`.
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.table[(c * self.height + x) * self.width + y]
    }

    /// Channel vector at position `(x, y)`.
    pub fn position(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, x, y)).collect()
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Adds the table to every frame of `[T, C, h, w]` maps.
    pub fn add_to(&self, maps: &Tensor) -> Result<Tensor> {
        match *maps.shape() {
            [_, c, h, w] if (c, h, w) == self.dims() => {}
            _ => {
                return Err(Error::config(format!(
                    "positional table [{}, {}, {}] does not match feature maps {:?}",
                    self.channels,
                    self.height,
                    self.width,
                    maps.shape()
                )))
            }
        }
        let table = Tensor::new(self.table.clone(), &[self.channels, self.height, self.width])?;
        Ok(maps.add_broadcast(&table)?)
    }
}

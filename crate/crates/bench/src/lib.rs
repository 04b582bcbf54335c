//! Fixtures shared by the criterion benches.

use surgiatm::{ImageBuffer, Raster, Shape};

/// Deterministic smoky-looking frame with a spatially varying haze.
pub fn frame(width: usize, height: usize) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, 3, |x, y, c| {
        let haze = 0.5 * ((x + y) as f64 / (width + height) as f64);
        let base = ((x * 31 + y * 17 + c * 7) % 97) as f64 / 97.0;
        base * (1.0 - haze) + 0.92 * haze
    })
}

/// Logits spanning both sides of zero.
pub fn logits(width: usize, height: usize) -> Raster {
    let shape = Shape::new(width, height, 3);
    let data = (0..shape.len()).map(|i| ((i % 13) as f64 - 6.0) / 3.0).collect();
    Raster::new(shape, data).expect("finite logits")
}

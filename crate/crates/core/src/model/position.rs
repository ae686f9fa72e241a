use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed 2-D sinusoidal embedding for an `h×w` grid, one row per cell in
/// row-major order.
///
/// The first `c/2` channels encode the row index and the last `c/2` the
/// column index, alternating sine and cosine over geometrically spaced
/// frequencies.
pub fn positional_embedding(h: usize, w: usize, c: usize) -> Result<Tensor> {
    if c == 0 || c % 2 != 0 {
        return Err(Error::Config(format!("position embedding width {c} must be even and positive")));
    }
    if h == 0 || w == 0 {
        return Err(Error::dim("positional_embedding", format!("empty grid {h}×{w}")));
    }
    let half = c / 2;
    let encode = |pos: usize, j: usize| {
        let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / half as f64);
        let angle = pos as f64 * freq;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    };
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            data.extend((0..half).map(|j| encode(y, j)));
            data.extend((0..half).map(|j| encode(x, j)));
        }
    }
    Tensor::new(vec![h * w, c], data)
}

//! Binary PGM (P5) image output for saliency frames and confusion heatmaps.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Write an 8-bit binary PGM. `pixels` is row-major, values in [0, 1].
pub fn write_pgm(path: &Path, pixels: &[f64], h: usize, w: usize) -> Result<()> {
    if pixels.len() != h * w {
        return Err(Error::shape("pgm", format!("{} pixels for {h}x{w}", pixels.len())));
    }
    let mut buf = Vec::with_capacity(h * w + 32);
    write!(buf, "P5\n{w} {h}\n255\n").expect("vec write");
    buf.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Confusion matrix as a heatmap, each cell scaled to a `cell`-pixel square,
/// intensity proportional to the count over the matrix maximum.
pub fn confusion_pgm(path: &Path, confusion: &[Vec<usize>], cell: usize) -> Result<()> {
    let c = confusion.len();
    if c == 0 || cell == 0 {
        return Err(Error::invalid("pgm", "empty confusion heatmap"));
    }
    let max = confusion.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let side = c * cell;
    let mut pixels = vec![0.0; side * side];
    for (i, row) in confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = v as f64 / max;
            for dy in 0..cell {
                for dx in 0..cell {
                    pixels[(i * cell + dy) * side + j * cell + dx] = shade;
                }
            }
        }
    }
    write_pgm(path, &pixels, side, side)
}

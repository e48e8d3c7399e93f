//! Minimal line plots rasterized straight into a grayscale buffer.
//!
//! No text is drawn; the numbers live in the CSV written next to each plot.

use hybrid_restore::pgm::Gray;
use ndarray::Array2;

const WIDTH: usize = 480;
const HEIGHT: usize = 320;
const MARGIN: usize = 32;
const INK: u16 = 0;
const GRID: u16 = 200;

/// Plots `points` (x, y) with linear axes, a light grid and square markers.
pub fn line_plot(points: &[(f64, f64)]) -> Gray {
    let mut px = Array2::from_elem((HEIGHT, WIDTH), 255u16);
    let finite: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();

    let (x0, x1) = span(finite.iter().map(|p| p.0));
    let (y0, y1) = span(finite.iter().map(|p| p.1));
    let (left, right) = (MARGIN as f64, (WIDTH - MARGIN) as f64);
    let (top, bottom) = (MARGIN as f64, (HEIGHT - MARGIN) as f64);
    let to_px = |(x, y): (f64, f64)| {
        let u = left + (x - x0) / (x1 - x0) * (right - left);
        let v = bottom - (y - y0) / (y1 - y0) * (bottom - top);
        (u.round() as i64, v.round() as i64)
    };

    for i in 0..=4 {
        let v = (top + (bottom - top) * i as f64 / 4.0).round() as i64;
        line(&mut px, (left as i64, v), (right as i64, v), GRID);
    }
    line(&mut px, (left as i64, bottom as i64), (right as i64, bottom as i64), INK);
    line(&mut px, (left as i64, top as i64), (left as i64, bottom as i64), INK);

    let marks: Vec<(i64, i64)> = finite.iter().map(|p| to_px(*p)).collect();
    for pair in marks.windows(2) {
        line(&mut px, pair[0], pair[1], INK);
    }
    for &(u, v) in &marks {
        for du in -2..=2 {
            for dv in -2..=2 {
                put(&mut px, u + du, v + dv, INK);
            }
        }
    }
    Gray {
        pixels: px,
        max_value: 255,
    }
}

/// Data range padded by 5% on each side; a flat range is widened around its value.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

fn put(px: &mut Array2<u16>, u: i64, v: i64, value: u16) {
    if u >= 0 && v >= 0 && (v as usize) < px.nrows() && (u as usize) < px.ncols() {
        px[[v as usize, u as usize]] = value;
    }
}

// Bresenham
fn line(px: &mut Array2<u16>, (mut u0, mut v0): (i64, i64), (u1, v1): (i64, i64), value: u16) {
    let du = (u1 - u0).abs();
    let dv = -(v1 - v0).abs();
    let su = if u0 < u1 { 1 } else { -1 };
    let sv = if v0 < v1 { 1 } else { -1 };
    let mut err = du + dv;
    loop {
        put(px, u0, v0, value);
        if u0 == u1 && v0 == v1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dv {
            err += dv;
            u0 += su;
        }
        if e2 <= du {
            err += du;
            v0 += sv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_land_at_the_corners_of_the_data_box() {
        let g = line_plot(&[(10.0, 1.0), (100.0, 0.0)]);
        assert_eq!(g.pixels.dim(), (HEIGHT, WIDTH));
        // with 5% padding the first point sits near the top left of the frame
        let pad_u = (0.05 / 1.1 * (WIDTH - 2 * MARGIN) as f64).round() as usize;
        let pad_v = (0.05 / 1.1 * (HEIGHT - 2 * MARGIN) as f64).round() as usize;
        assert_eq!(g.pixels[[MARGIN + pad_v, MARGIN + pad_u]], INK);
        assert_eq!(g.pixels[[HEIGHT - MARGIN - pad_v, WIDTH - MARGIN - pad_u]], INK);
        assert_eq!(g.pixels[[5, 5]], 255);
    }

    #[test]
    fn degenerate_input_still_draws_axes() {
        let g = line_plot(&[(1.0, f64::NAN)]);
        assert_eq!(g.pixels[[HEIGHT - MARGIN, WIDTH / 2]], INK);
        let g = line_plot(&[(3.0, 2.0)]);
        assert!(g.pixels.iter().filter(|v| **v == INK).count() > WIDTH);
    }
}

//! "Counters" demo widget: a dial with 60 ticks, a sweeping needle and a
//! three-digit centisecond counter over a radial gradient.
//!
//! Integer-only, so output is identical on every platform. The animation
//! repeats every [`PERIOD_US`]. `complexity` is the number of gradient passes,
//! which makes per-frame work scale linearly; 0 draws a flat background.

use crate::error::PixelError;
use crate::pixel::{Rect, SurfaceMut};

pub const PERIOD_US: u64 = 10_000_000;
pub const MIN_SIDE: u32 = 64;

/// sin(6° · i) · 1024 for i in 0..=15.
const SINE_QUARTER: [i32; 16] = [
    0, 107, 213, 316, 416, 512, 602, 685, 761, 828, 887, 935, 974, 1002, 1018, 1024,
];

/// sin and cos of `step` · 6°, scaled by 1024. Step 0 points up, clockwise.
fn sin_cos(step: u32) -> (i32, i32) {
    let sin = |s: u32| -> i32 {
        let s = s % 60;
        match s {
            0..=15 => SINE_QUARTER[s as usize],
            16..=30 => SINE_QUARTER[(30 - s) as usize],
            31..=45 => -SINE_QUARTER[(s - 30) as usize],
            _ => -SINE_QUARTER[(60 - s) as usize],
        }
    };
    (sin(step), sin(step + 15))
}

// Segment bits: a b c d e f g.
const DIGIT_SEGMENTS: [u8; 10] = [
    0b1111110, 0b0110000, 0b1101101, 0b1111001, 0b0110011, 0b1011011, 0b1011111, 0b1110000,
    0b1111111, 0b1111011,
];

const FACE: [u8; 4] = [20, 28, 44, 255];
const RING: [u8; 4] = [200, 210, 220, 255];
const TICK: [u8; 4] = [230, 230, 230, 255];
const NEEDLE: [u8; 4] = [255, 80, 40, 255];
const DIGIT: [u8; 4] = [120, 255, 140, 255];

pub fn render_counters(surface: &mut SurfaceMut<'_>, t_us: u64, complexity: u32) -> Result<(), PixelError> {
    let g = surface.geometry();
    if g.width() < MIN_SIDE || g.height() < MIN_SIDE {
        return Err(PixelError::InvalidArgument(format!(
            "counters need at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            g.width(),
            g.height()
        )));
    }
    let phase = t_us % PERIOD_US;
    let format = surface.format();
    let (w, h) = (g.width() as i32, g.height() as i32);
    let (cx, cy) = (w / 2, h / 2);
    let radius = w.min(h) / 2 - 2;

    if complexity == 0 {
        surface.fill(format.pack(FACE));
    } else {
        let r2 = (radius as i64 * radius as i64).max(1);
        let mut acc = vec![0u8; g.width() as usize];
        for y in 0..h {
            let dy = (y - cy) as i64;
            for pass in 0..complexity {
                for (x, a) in acc.iter_mut().enumerate() {
                    let dx = x as i64 - cx as i64;
                    let d2 = dx * dx + dy * dy;
                    let shade = (255 - (d2 * 255 / r2).min(255)) as u32;
                    *a = if pass == 0 {
                        shade as u8
                    } else {
                        ((u32::from(*a) * 3 + shade + (pass & 1)) >> 2) as u8
                    };
                }
            }
            let row = surface.row_mut(y as u32);
            for (px, &a) in row.chunks_exact_mut(4).zip(&acc) {
                let v = u32::from(a);
                let rgba = [
                    (FACE[0] as u32 + v / 6) as u8,
                    (FACE[1] as u32 + v / 5) as u8,
                    (FACE[2] as u32 + v / 3) as u8,
                    255,
                ];
                px.copy_from_slice(&format.pack(rgba).to_le_bytes());
            }
        }
    }

    // Outer ring.
    let ring = format.pack(RING);
    let (outer, inner) = (radius * radius, (radius - 3) * (radius - 3));
    for y in (cy - radius).max(0)..(cy + radius + 1).min(h) {
        for x in (cx - radius).max(0)..(cx + radius + 1).min(w) {
            let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if d2 <= outer && d2 >= inner {
                surface.set_pixel(x as u32, y as u32, ring);
            }
        }
    }

    let tick = format.pack(TICK);
    for step in 0..60 {
        let (s, c) = sin_cos(step);
        let len = if step % 5 == 0 { radius / 6 } else { radius / 12 };
        let (r0, r1) = (radius - 4 - len, radius - 4);
        line(
            surface,
            (cx + s * r0 / 1024, cy - c * r0 / 1024),
            (cx + s * r1 / 1024, cy - c * r1 / 1024),
            tick,
        );
    }

    let step = (phase * 60 / PERIOD_US) as u32;
    let (s, c) = sin_cos(step);
    let reach = radius * 4 / 5;
    line(surface, (cx, cy), (cx + s * reach / 1024, cy - c * reach / 1024), format.pack(NEEDLE));

    let centis = (phase / 10_000) % 1000;
    let digit = format.pack(DIGIT);
    let cell_w = (radius / 5).max(6);
    let cell_h = cell_w * 2;
    let total_w = cell_w * 3 + cell_w / 2 * 2;
    let (x0, y0) = (cx - total_w / 2, cy + radius / 3);
    let digits = [centis / 100, centis / 10 % 10, centis % 10];
    for (i, d) in digits.iter().enumerate() {
        let x = x0 + i as i32 * (cell_w + cell_w / 2);
        seven_segment(surface, x, y0, cell_w, cell_h, DIGIT_SEGMENTS[*d as usize], digit);
    }
    Ok(())
}

fn seven_segment(surface: &mut SurfaceMut<'_>, x: i32, y: i32, w: i32, h: i32, bits: u8, value: u32) {
    let t = (w / 5).max(1);
    let half = h / 2;
    let rect = |rx: i32, ry: i32, rw: i32, rh: i32| Rect::new(rx.max(0) as u32, ry.max(0) as u32, rw as u32, rh as u32);
    let segments = [
        rect(x, y, w, t),                 // a
        rect(x + w - t, y, t, half),      // b
        rect(x + w - t, y + half, t, half), // c
        rect(x, y + h - t, w, t),         // d
        rect(x, y + half, t, half),       // e
        rect(x, y, t, half),              // f
        rect(x, y + half - t / 2, w, t),  // g
    ];
    for (i, seg) in segments.iter().enumerate() {
        if bits & (1 << (6 - i)) != 0 {
            surface.fill_rect(*seg, value);
        }
    }
}

/// Two-pixel-wide Bresenham line, clipped to the surface.
fn line(surface: &mut SurfaceMut<'_>, from: (i32, i32), to: (i32, i32), value: u32) {
    let g = surface.geometry();
    let (w, h) = (g.width() as i32, g.height() as i32);
    let (mut x, mut y) = from;
    let (dx, dy) = ((to.0 - x).abs(), -(to.1 - y).abs());
    let (sx, sy) = (if x < to.0 { 1 } else { -1 }, if y < to.1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        for (px, py) in [(x, y), (x + 1, y)] {
            if (0..w).contains(&px) && (0..h).contains(&py) {
                surface.set_pixel(px as u32, py as u32, value);
            }
        }
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

//! Format conversion against an oracle that reads channel positions from the
//! format names, and blit against a per-pixel reference copy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fbstack_core::{blit, convert_pixel, PixelFormat, Rect, Surface, SurfaceGeometry, SurfaceMut};

use crate::Outcome;

/// Each format with its channels in memory byte order, as spelled by the name.
const FORMATS: [(PixelFormat, &str); 4] = [
    (PixelFormat::R8G8B8A8, "RGBA"),
    (PixelFormat::B8G8R8A8, "BGRA"),
    (PixelFormat::A8R8G8B8, "ARGB"),
    (PixelFormat::A8B8G8R8, "ABGR"),
];

const CHANNELS: &str = "RGBA";
const BLIT_CASES: usize = 100;

fn order(format: PixelFormat) -> &'static str {
    FORMATS.iter().find(|(f, _)| *f == format).map(|(_, o)| *o).expect("known format")
}

/// Memory bytes of a pixel whose channels are `rgba`.
fn oracle_bytes(format: PixelFormat, rgba: [u8; 4]) -> [u8; 4] {
    let mut out = [0u8; 4];
    for (i, letter) in order(format).chars().enumerate() {
        out[i] = rgba[CHANNELS.find(letter).unwrap()];
    }
    out
}

fn oracle_rgba(format: PixelFormat, bytes: [u8; 4]) -> [u8; 4] {
    let mut rgba = [0u8; 4];
    for (i, letter) in order(format).chars().enumerate() {
        rgba[CHANNELS.find(letter).unwrap()] = bytes[i];
    }
    rgba
}

fn conversion_mismatches() -> (usize, usize, Vec<String>) {
    let filler = [0x13, 0x57, 0x9b, 0xdf];
    let mut probes = 0;
    let mut mismatches = Vec::new();
    for &(from, _) in &FORMATS {
        for &(to, _) in &FORMATS {
            if from == to {
                continue;
            }
            for channel in 0..4 {
                for value in 0..=255u8 {
                    let mut rgba = filler;
                    rgba[channel] = value;
                    let src = u32::from_le_bytes(oracle_bytes(from, rgba));
                    let got = convert_pixel(src, from, to).to_le_bytes();
                    probes += 1;
                    if oracle_rgba(to, got) != rgba {
                        mismatches.push(format!("{from}->{to} channel {channel} value {value}: {got:02x?}"));
                    }
                }
            }
        }
    }
    (probes, mismatches.len(), mismatches)
}

struct BlitCase {
    src_format: PixelFormat,
    dst_format: PixelFormat,
    src_geometry: SurfaceGeometry,
    dst_geometry: SurfaceGeometry,
    at: Rect,
}

fn random_case(rng: &mut ChaCha8Rng, i: usize) -> BlitCase {
    let src_format = FORMATS[i % 4].0;
    let dst_format = FORMATS[(i / 4) % 4].0;
    let (w, h) = (rng.gen_range(1..=64u32), rng.gen_range(1..=48u32));
    let src_pitch = 4 * (w + rng.gen_range(0..=8));
    let (dw, dh) = (w + rng.gen_range(0..=40), h + rng.gen_range(0..=40));
    let dst_pitch = 4 * (dw + rng.gen_range(0..=8));
    BlitCase {
        src_format,
        dst_format,
        src_geometry: SurfaceGeometry::new(w, h, src_pitch, 4).unwrap(),
        dst_geometry: SurfaceGeometry::new(dw, dh, dst_pitch, 4).unwrap(),
        at: Rect::new(rng.gen_range(0..=dw - w), rng.gen_range(0..=dh - h), w, h),
    }
}

/// Writes each source pixel separately, leaving every other byte alone.
fn reference_blit(case: &BlitCase, src: &[u8], dst: &mut [u8]) {
    let (sp, dp) = (case.src_geometry.pitch() as usize, case.dst_geometry.pitch() as usize);
    for y in 0..case.at.height as usize {
        for x in 0..case.at.width as usize {
            let s = y * sp + 4 * x;
            let pixel: [u8; 4] = src[s..s + 4].try_into().unwrap();
            let rgba = oracle_rgba(case.src_format, pixel);
            let d = (case.at.y as usize + y) * dp + 4 * (case.at.x as usize + x);
            dst[d..d + 4].copy_from_slice(&oracle_bytes(case.dst_format, rgba));
        }
    }
}

fn blit_mismatches() -> Result<Vec<String>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b11_7000);
    let mut failures = Vec::new();
    for i in 0..BLIT_CASES {
        let case = random_case(&mut rng, i);
        let mut src = vec![0u8; case.src_geometry.byte_len()];
        let mut dst = vec![0u8; case.dst_geometry.byte_len()];
        rng.fill(&mut src[..]);
        rng.fill(&mut dst[..]);
        let mut expected = dst.clone();
        reference_blit(&case, &src, &mut expected);

        let source = Surface::new(&src, case.src_geometry, case.src_format).map_err(|e| e.to_string())?;
        let mut target =
            SurfaceMut::new(&mut dst, case.dst_geometry, case.dst_format).map_err(|e| e.to_string())?;
        blit(&source, &mut target, case.at).map_err(|e| format!("case {i}: {e}"))?;
        if dst != expected {
            let first = dst.iter().zip(&expected).position(|(a, b)| a != b).unwrap();
            failures.push(format!(
                "case {i} {}->{} at {}: first differing byte {first}",
                case.src_format, case.dst_format, case.at
            ));
        }
    }
    Ok(failures)
}

pub fn run() -> Outcome {
    let (probes, bad, examples) = conversion_mismatches();
    ensure!(probes == 12 * 4 * 256, "expected 12288 probes, ran {probes}");
    ensure!(bad == 0, "{bad} conversion mismatches, e.g. {}", examples[0]);
    let failures = blit_mismatches()?;
    ensure!(failures.is_empty(), "{} blit cases differ: {}", failures.len(), failures[0]);
    Ok(format!(
        "{probes} conversion probes over 12 format pairs, 0 mismatches; {BLIT_CASES} random blits equal the reference"
    ))
}

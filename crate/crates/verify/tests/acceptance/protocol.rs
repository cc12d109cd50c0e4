//! Region encode/attach round trips and header fuzzing.

use std::cell::Cell;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fbstack_core::protocol::ByteSource;
use fbstack_core::{
    client_attach, validate_region, AttachOptions, CompositorHeader, PixelFormat, Region, RegionConfig, ServerRegion,
    SimClock, SurfaceGeometry,
};

use crate::Outcome;

const ROUND_TRIPS: usize = 1_000;
const MUTATIONS: usize = 10_000;
const MAGIC: u32 = 0x4A46_4243;

const ALL: [PixelFormat; 4] = [
    PixelFormat::R8G8B8A8,
    PixelFormat::B8G8R8A8,
    PixelFormat::A8R8G8B8,
    PixelFormat::A8B8G8R8,
];

fn tag(format: PixelFormat) -> u32 {
    ALL.iter().position(|f| *f == format).unwrap() as u32
}

fn round_up(v: u64, a: u64) -> u64 {
    v.div_ceil(a) * a
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

fn random_config(rng: &mut ChaCha8Rng) -> RegionConfig {
    let width = rng.gen_range(1..=1024u32);
    let height = rng.gen_range(1..=192u32);
    let alignment = [4u32, 16, 64, 256][rng.gen_range(0..4)];
    let pitch = round_up(4 * u64::from(width), u64::from(alignment)) as u32 + alignment * rng.gen_range(0..4);
    let mut formats = ALL.to_vec();
    formats.shuffle(rng);
    formats.truncate(rng.gen_range(1..=4));
    let framerate = rng.gen_range(1..=240u32);
    let min_timeout = 2_000_000u64.div_ceil(u64::from(framerate));
    RegionConfig::new(
        SurfaceGeometry::new(width, height, pitch, alignment).unwrap(),
        formats,
        framerate,
        rng.gen_range(min_timeout..=min_timeout + 5_000_000),
        rng.gen_range(1..=8),
    )
    .with_frame_padding(1 << rng.gen_range(2..=16))
}

/// Checks every stored field against values computed here from the config.
fn check_round_trip(i: usize, config: &RegionConfig, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let server = ServerRegion::create_heap(config).map_err(|e| format!("config {i}: {e}"))?;
    let bytes = server.region().to_vec();
    let g = config.geometry;
    let n = config.formats.len() as u64;
    let depth = u64::from(config.queue_depth);
    let padding = u64::from(config.frame_padding);
    let format_offset = 64u64;
    let frame_offset = round_up(format_offset + 4 * n, 16);
    let private_offset = round_up(frame_offset + 16 * depth, 16);
    let data_offset = round_up(private_offset + 256, padding);
    let stride = round_up(u64::from(g.pitch()) * u64::from(g.height()), padding);

    let expected: [(usize, u64, &str); 14] = [
        (0, 1, "ready"),
        (4, u64::from(MAGIC), "magic"),
        (8, u64::from(g.width()), "width"),
        (12, u64::from(g.height()), "height"),
        (16, u64::from(g.pitch()), "pitch"),
        (20, u64::from(config.framerate), "framerate"),
        (24, config.timeout_us, "timeout"),
        (32, n, "format count"),
        (36, format_offset, "format offset"),
        (40, depth, "frame count"),
        (44, frame_offset, "frame offset"),
        (48, padding, "frame padding"),
        (52, data_offset, "frame data offset"),
        (56, private_offset, "private offset"),
    ];
    for (off, want, name) in expected {
        let got = if off == 24 {
            u64::from_le_bytes(bytes[24..32].try_into().unwrap())
        } else {
            u64::from(u32_at(&bytes, off))
        };
        ensure!(got == want, "config {i}: {name} stored as {got}, expected {want}");
    }
    for (k, f) in config.formats.iter().enumerate() {
        let got = u32_at(&bytes, 64 + 4 * k);
        ensure!(got == tag(*f), "config {i}: format table entry {k} is {got}");
    }
    ensure!(
        bytes.len() as u64 == data_offset + depth * stride,
        "config {i}: region is {} bytes, expected {}",
        bytes.len(),
        data_offset + depth * stride
    );
    let raw: [u8; 64] = bytes[..64].try_into().unwrap();
    ensure!(CompositorHeader::decode(&raw).encode() == raw, "config {i}: header does not re-encode bit-exactly");

    let preferred = *config.formats.choose(rng).unwrap();
    let options = AttachOptions {
        preferred_formats: vec![preferred],
        ..AttachOptions::default()
    };
    let clock = SimClock::new(0);
    let attached = client_attach(server.region().clone(), &options, &clock).map_err(|e| format!("config {i}: {e}"))?;
    let ctx = attached.context();
    ensure!(
        ctx.width() == g.width()
            && ctx.height() == g.height()
            && ctx.pitch() == g.pitch()
            && ctx.format() == preferred
            && ctx.framerate() == config.framerate
            && ctx.timeout_us() == config.timeout_us
            && ctx.queue_depth() == config.queue_depth,
        "config {i}: attached context {ctx:?} differs from {config:?}"
    );
    ensure!(attached.layout().formats == config.formats, "config {i}: format list differs after attach");
    ensure!(
        attached.layout().frame_stride as u64 == stride && attached.layout().header.frame_data_offset as u64 == data_offset,
        "config {i}: attached layout differs"
    );
    let negotiated = u32_at(&server.region().to_vec(), private_offset as usize);
    ensure!(negotiated == tag(preferred) + 1, "config {i}: negotiated format written as {negotiated}");
    Ok(())
}

/// Byte source that records any read falling outside the buffer.
struct Tracing<'a> {
    bytes: &'a [u8],
    out_of_bounds: Cell<u64>,
}

impl ByteSource for Tracing<'_> {
    fn byte_len(&self) -> usize {
        self.bytes.len()
    }

    fn read_at(&self, offset: usize, out: &mut [u8]) -> bool {
        match offset.checked_add(out.len()).and_then(|end| self.bytes.get(offset..end)) {
            Some(src) => {
                out.copy_from_slice(src);
                true
            }
            None => {
                self.out_of_bounds.set(self.out_of_bounds.get() + 1);
                false
            }
        }
    }
}

const SPECIAL: [u32; 14] = [
    0, 1, 2, 3, 4, 7, 8, 63, 64, 4095, 4096, 0x8000_0000, u32::MAX - 3, u32::MAX,
];

fn mutate(base: &[u8], metadata_len: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut bytes = base.to_vec();
    for _ in 0..rng.gen_range(1..=3) {
        match rng.gen_range(0..4) {
            0 => {
                for _ in 0..rng.gen_range(1..=8) {
                    let i = rng.gen_range(0..metadata_len.min(bytes.len()));
                    bytes[i] = rng.gen();
                }
            }
            1 => {
                let field = 4 * rng.gen_range(0..16);
                let value = if rng.gen_bool(0.7) { SPECIAL[rng.gen_range(0..SPECIAL.len())] } else { rng.gen() };
                if field + 4 <= bytes.len() {
                    bytes[field..field + 4].copy_from_slice(&value.to_le_bytes());
                }
            }
            2 => {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] ^= 1 << rng.gen_range(0..8);
            }
            _ => {
                let len = rng.gen_range(1..=bytes.len());
                bytes.truncate(len);
            }
        }
    }
    bytes
}

#[derive(Default)]
struct FuzzTally {
    rejected: u64,
    attached: u64,
    not_ready: u64,
}

fn fuzz_one(i: usize, bytes: &[u8], tally: &mut FuzzTally) -> Result<(), String> {
    let tracing = Tracing {
        bytes,
        out_of_bounds: Cell::new(0),
    };
    let violations = panic::catch_unwind(AssertUnwindSafe(|| validate_region(&tracing)))
        .map_err(|_| format!("mutation {i}: validation panicked"))?;
    // The only read allowed to miss is the initial header read of a region
    // shorter than the header.
    let allowed = u64::from(bytes.len() < 64);
    ensure!(
        tracing.out_of_bounds.get() <= allowed,
        "mutation {i}: {} out-of-bounds reads",
        tracing.out_of_bounds.get()
    );

    let region = Region::heap(bytes.len());
    // SAFETY: the region is fresh and nothing else references it.
    unsafe { region.write_bytes(0, bytes) };
    let options = AttachOptions {
        timeout_us: 0,
        ..AttachOptions::default()
    };
    let clock = SimClock::new(0);
    let attach = panic::catch_unwind(AssertUnwindSafe(|| client_attach(Arc::new(region), &options, &clock)))
        .map_err(|_| format!("mutation {i}: attach panicked"))?;
    match (&attach, violations.is_empty()) {
        (Ok(_), true) => tally.attached += 1,
        (Err(_), false) => {
            tally.rejected += 1;
            if bytes.len() >= 4 && u32_at(bytes, 0) == 0 {
                tally.not_ready += 1;
            }
        }
        (Ok(_), false) => return Err(format!("mutation {i}: attach accepted a region with {violations:?}")),
        (Err(e), true) => return Err(format!("mutation {i}: attach refused a valid region: {e}")),
    }
    Ok(())
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7072_6f74);
    for i in 0..ROUND_TRIPS {
        let config = random_config(&mut rng);
        check_round_trip(i, &config, &mut rng)?;
    }

    let bases: Vec<(Vec<u8>, usize)> = [(8, 8, 1, 64), (16, 4, 3, 4), (5, 3, 8, 16), (32, 2, 2, 4096)]
        .into_iter()
        .map(|(w, h, depth, padding)| {
            let config = RegionConfig::new(
                SurfaceGeometry::with_default_pitch(w, h).unwrap(),
                ALL.to_vec(),
                30,
                500_000,
                depth,
            )
            .with_frame_padding(padding);
            let server = ServerRegion::create_heap(&config).unwrap();
            let data = server.layout().header.frame_data_offset as usize;
            (server.region().to_vec(), data)
        })
        .collect();
    let mut tally = FuzzTally::default();
    for i in 0..MUTATIONS {
        let (base, metadata_len) = &bases[i % bases.len()];
        let bytes = mutate(base, *metadata_len, &mut rng);
        fuzz_one(i, &bytes, &mut tally)?;
    }
    ensure!(tally.rejected > 0 && tally.attached > 0, "fuzzing never exercised both outcomes");
    Ok(format!(
        "{ROUND_TRIPS} configs recovered bit-exactly; {MUTATIONS} mutated regions: {} rejected with violations ({} not ready), {} attached cleanly, 0 out-of-bounds reads, 0 panics",
        tally.rejected, tally.not_ready, tally.attached
    ))
}

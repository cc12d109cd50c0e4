//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use fbstack_core::{
    client_attach, AttachOptions, ClientSession, Compositor, CompositorConfig, NullSink, PixelFormat, Rect,
    RegionConfig, ServerRegion, SimClock, SurfaceGeometry,
};

/// A zeroed pixel buffer and its geometry.
pub fn buffer(width: u32, height: u32) -> (SurfaceGeometry, Vec<u8>) {
    let g = SurfaceGeometry::with_default_pitch(width, height).expect("benchmark geometry");
    (g, vec![0u8; g.byte_len()])
}

/// A compositor with `clients` solid-colour clients side by side, each with a
/// submitted frame, plus the sessions feeding it.
pub struct Scene {
    pub compositor: Compositor<NullSink>,
    pub sessions: Vec<ClientSession>,
    pub clock: Arc<SimClock>,
    _servers: Vec<ServerRegion>,
}

impl Scene {
    pub fn new(target: (u32, u32), client: (u32, u32), clients: u32, client_format: PixelFormat) -> Scene {
        let clock = Arc::new(SimClock::new(0));
        let geometry = SurfaceGeometry::with_default_pitch(target.0, target.1).expect("target geometry");
        let mut compositor =
            Compositor::new(CompositorConfig::new(geometry, PixelFormat::B8G8R8A8), NullSink::new(), clock.clone())
                .expect("compositor");
        let config = RegionConfig::new(
            SurfaceGeometry::with_default_pitch(client.0, client.1).expect("client geometry"),
            vec![client_format],
            30,
            1_000_000,
            3,
        );
        let mut servers = Vec::new();
        let mut sessions = Vec::new();
        for i in 0..clients {
            let server = ServerRegion::create_heap(&config).expect("region");
            let placement = Rect::new(i * client.0, 0, client.0, client.1);
            compositor.register_client(i + 1, server.region().clone(), placement, 0).expect("register");
            let attached =
                client_attach(server.region().clone(), &AttachOptions::default(), &*clock).expect("attach");
            sessions.push(ClientSession::composited(attached, clock.clone()));
            servers.push(server);
        }
        let mut scene = Scene {
            compositor,
            sessions,
            clock,
            _servers: servers,
        };
        scene.submit_all(0x3366_99ff);
        scene
    }

    /// Every client submits one frame filled with `value`.
    pub fn submit_all(&mut self, value: u32) {
        for session in &mut self.sessions {
            if let Some(mut frame) = session.try_begin_frame().expect("session") {
                frame.fill(value);
                session.end_frame().expect("submit");
            }
        }
    }
}

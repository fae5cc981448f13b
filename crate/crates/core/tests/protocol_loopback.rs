use std::io::{BufReader, BufWriter, Cursor};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use hierseg_core::backends::protocol::{recv, send, Hello, Message, ProtocolError};
use hierseg_core::backends::server::{serve, spawn_loopback};
use hierseg_core::backends::{
    ConstantBackend, DarknessBackend, DarknessParams, RemoteBackend, RemoteConnection,
};
use hierseg_core::raster::{Image, ScoreMap};
use hierseg_core::tta::{infer_multiscale, ScaleSet};
use hierseg_core::{Error, SegmenterBackend, Task};

fn frame(msg_type: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = b"HSEG".to_vec();
    out.push(1);
    out.push(msg_type);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

#[test]
fn golden_transcript_against_echo_model() {
    let hello = br#"{"task":"damage","num_classes":3,"max_tile":64}"#;
    let mut infer = vec![2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0];
    infer.extend_from_slice(&[10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120]);
    let client = [frame(1, hello), frame(3, &infer), frame(6, &[])].concat();

    let ack = br#"{"task":"damage","num_classes":3,"max_tile":64}"#;
    let mut scores = vec![2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0];
    for _ in 0..4 {
        // 1.0f32, 0.0f32, 0.0f32 little-endian
        scores.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]);
        scores.extend_from_slice(&[0; 8]);
    }
    let expected = [frame(2, ack), frame(4, &scores)].concat();
    assert_eq!(expected.len(), 10 + ack.len() + 10 + 60);

    let echo = ConstantBackend::new("echo", Task::Damage, 3, 0);
    let mut out = Vec::new();
    serve(&echo, 64, Cursor::new(client), &mut out).unwrap();
    assert_eq!(out, expected);
}

#[test]
fn mismatched_hello_is_refused_by_name() {
    let echo = ConstantBackend::new("echo", Task::Damage, 3, 0);
    let client = frame(1, br#"{"task":"damage","num_classes":4,"max_tile":0}"#);
    let mut out = Vec::new();
    serve(&echo, 0, Cursor::new(client), &mut out).unwrap();
    let reply = recv(&mut Cursor::new(out)).unwrap();
    assert!(matches!(reply, Message::Error(ref t) if t.contains("num_classes")), "{reply:?}");
}

#[test]
fn remote_darkness_equals_local_darkness() {
    let local = DarknessBackend::new("dark", DarknessParams::default());
    let served: Arc<dyn SegmenterBackend> = Arc::new(local.clone());
    let (addr, handle) = spawn_loopback(served, 0, 2).unwrap();
    let endpoint = format!("tcp://{addr}").parse().unwrap();
    let remote = RemoteBackend::connect("nn", &endpoint, Task::Damage, 3, 0, 2).unwrap();
    assert_eq!(remote.live_connections(), 2);

    let data: Vec<u8> = (0..70 * 45 * 3u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
    let img = Image::new(70, 45, data).unwrap();
    let scales = ScaleSet::default();
    let want = infer_multiscale(&img, &local, &scales, 32, 24).unwrap();
    let got = infer_multiscale(&img, &remote, &scales, 32, 24).unwrap();
    assert!(want.bitwise_eq(&got));
    drop(remote);
    handle.join().unwrap().unwrap();
}

/// A misbehaving server: acknowledges whatever it is asked, then answers with `k` classes.
fn lying_server(k: usize) -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut r = BufReader::new(stream.try_clone().unwrap());
        let mut w = BufWriter::new(stream);
        while let Ok(msg) = recv(&mut r) {
            let reply = match msg {
                Message::Hello(h) => Message::HelloAck(h),
                Message::Infer(img) => Message::Scores(ScoreMap::zeros(img.width, img.height, k)),
                _ => return,
            };
            if send(&mut w, &reply).is_err() {
                return;
            }
        }
    });
    addr
}

#[test]
fn wrong_class_count_poisons_the_connection() {
    let endpoint = format!("tcp://{}", lying_server(4)).parse().unwrap();
    let want = Hello {
        task: "damage".into(),
        num_classes: 3,
        max_tile: 0,
    };
    let mut conn = RemoteConnection::connect(&endpoint, &want).unwrap();
    let err = conn.infer(&Image::filled(4, 4, [0; 3])).unwrap_err();
    assert!(
        matches!(err, ProtocolError::ClassMismatch { expected: 3, got: 4, .. }),
        "{err}"
    );
    assert!(!conn.is_usable());
    assert!(matches!(
        conn.infer(&Image::filled(4, 4, [0; 3])),
        Err(ProtocolError::Unusable)
    ));
}

#[test]
fn wrong_class_count_surfaces_with_backend_context() {
    let endpoint = format!("tcp://{}", lying_server(4)).parse().unwrap();
    let remote = RemoteBackend::connect("liar", &endpoint, Task::Damage, 3, 0, 1).unwrap();
    let err = infer_multiscale(&Image::filled(8, 8, [1; 3]), &remote, &ScaleSet::single(), 8, 8).unwrap_err();
    assert!(err.to_string().contains("liar"), "{err}");
    assert!(matches!(err.root(), Error::Protocol(ProtocolError::ClassMismatch { .. })));
    assert_eq!(remote.live_connections(), 0);
}

struct Flaky;

impl SegmenterBackend for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }
    fn task(&self) -> Task {
        Task::Damage
    }
    fn num_classes(&self) -> usize {
        3
    }
    fn infer(&self, tile: &Image) -> hierseg_core::Result<ScoreMap> {
        if tile.width == 13 {
            return Err(Error::Data("model exploded".into()));
        }
        Ok(ScoreMap::zeros(tile.width, tile.height, 3))
    }
}

#[test]
fn model_errors_keep_the_connection_alive() {
    let (addr, handle) = spawn_loopback(Arc::new(Flaky), 16, 1).unwrap();
    let want = Hello {
        task: "damage".into(),
        num_classes: 3,
        max_tile: 16,
    };
    let mut conn = RemoteConnection::connect(&format!("tcp://{addr}").parse().unwrap(), &want).unwrap();
    let err = conn.infer(&Image::filled(13, 2, [0; 3])).unwrap_err();
    assert!(matches!(err, ProtocolError::Remote(ref t) if t.contains("model exploded")), "{err}");
    assert!(conn.is_usable());
    assert_eq!(conn.infer(&Image::filled(5, 2, [0; 3])).unwrap().width, 5);
    assert!(matches!(
        conn.infer(&Image::filled(17, 2, [0; 3])),
        Err(ProtocolError::TileTooLarge { max_tile: 16, .. })
    ));
    conn.shutdown();
    handle.join().unwrap().unwrap();
}

mod common;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::Arc;
use std::thread;

use gesture_service::engine::{AssetPaths, Engine};
use gesture_service::protocol::FrameMessage;
use gesture_service::server::Server;
use gesture_service::ws;
use serde_json::Value;

use common::{fixture_checkpoint, run_ok, s};

fn start(ckpt: &Path) -> SocketAddr {
    let engine = Engine::load(&AssetPaths {
        checkpoint: ckpt.to_path_buf(),
        ..AssetPaths::default()
    })
    .unwrap();
    let server = Server::bind("127.0.0.1:0", Arc::new(engine)).unwrap();
    let addr = server.local_addr().unwrap();
    server.spawn();
    addr
}

fn request(id: &str, sentence: &str, emotion: &str) -> String {
    format!(
        "{{\"v\":1,\"type\":\"request\",\"id\":\"{id}\",\"sentence\":\"{sentence}\",\"task\":\"narration\",\"emotion\":\"{emotion}\",\"gender\":\"male\",\"handedness\":\"left\",\"fps_out\":30}}\n"
    )
}

/// Frame lines (verbatim) and the final non-frame message.
fn read_reply(reader: &mut impl BufRead) -> (Vec<String>, Value) {
    let mut frames = Vec::new();
    loop {
        let mut line = String::new();
        assert!(reader.read_line(&mut line).unwrap() > 0, "connection closed early");
        let v: Value = serde_json::from_str(&line).unwrap();
        if v["type"] == "frame" {
            frames.push(line);
        } else {
            return (frames, v);
        }
    }
}

#[test]
fn round_trip_concurrency_and_malformed_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = fixture_checkpoint(dir.path(), 20);
    let addr = start(&ckpt);

    let stream = TcpStream::connect(addr).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    writer.write_all(request("r1", "hello there", "joyous").as_bytes()).unwrap();
    let (frames, summary) = read_reply(&mut reader);
    assert!(!frames.is_empty());
    let parsed: Vec<FrameMessage> = frames.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    for (i, f) in parsed.iter().enumerate() {
        assert_eq!(f.t, i);
        assert_eq!(f.id, "r1");
        assert_eq!(f.quats.len(), 23);
        assert_eq!(f.pos.len(), 23);
        assert_eq!(f.done, i + 1 == parsed.len());
        for q in &f.quats {
            let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-7);
        }
    }
    assert_eq!(summary["type"], "summary");
    assert_eq!(summary["frames"], frames.len());
    assert!(summary["mean_latency_ms"].as_f64().unwrap() >= 0.0);

    writer.write_all(b"{this is not json\n").unwrap();
    let (none, err) = read_reply(&mut reader);
    assert!(none.is_empty());
    assert_eq!(err["type"], "error");

    writer.write_all(request("r2", "hello there", "blorf").as_bytes()).unwrap();
    let (none, err) = read_reply(&mut reader);
    assert!(none.is_empty());
    assert_eq!(err["type"], "error");
    assert_eq!(err["id"], "r2");

    writer.write_all(request("r1", "hello there", "joyous").as_bytes()).unwrap();
    let (again, _) = read_reply(&mut reader);
    assert_eq!(again, frames);

    writer.write_all(b"{\"v\":1,\"type\":\"skeleton\",\"id\":\"s\"}\n").unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let sk: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(sk["type"], "skeleton");
    assert_eq!(sk["names"].as_array().unwrap().len(), 23);
    assert_eq!(sk["parents"][0], -1);

    let clients: Vec<_> = [("c1", "joyous"), ("c2", "sad"), ("c1", "joyous")]
        .into_iter()
        .map(|(id, emo)| {
            thread::spawn(move || {
                let stream = TcpStream::connect(addr).unwrap();
                let mut w = stream.try_clone().unwrap();
                let mut r = BufReader::new(stream);
                w.write_all(request(id, "we walked to the sea", emo).as_bytes()).unwrap();
                let (frames, summary) = read_reply(&mut r);
                assert_eq!(summary["type"], "summary");
                assert!(frames.iter().all(|f| f.contains(&format!("\"id\":\"{id}\""))));
                frames
            })
        })
        .collect();
    let outs: Vec<Vec<String>> = clients.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(outs[0], outs[2]);
    let strip = |f: &Vec<String>| f.iter().map(|l| l.replace("\"id\":\"c2\"", "\"id\":\"c1\"")).collect::<Vec<_>>();
    assert_ne!(strip(&outs[1]), outs[0], "different emotions should give different frames");
}

#[test]
fn stream_matches_cli_stream_output() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = fixture_checkpoint(dir.path(), 10);
    let out = dir.path().join("g.gesture");
    let stream_out = dir.path().join("g.ndjson");
    run_ok(&[
        "generate", "--checkpoint", s(&ckpt), "--sentence", "hello there", "--emotion", "joyous", "--gender", "male",
        "--handedness", "left", "--fps-out", "30", "--id", "r1", "--out", s(&out), "--stream-out", s(&stream_out),
    ]);
    let addr = start(&ckpt);
    let stream = TcpStream::connect(addr).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    writer.write_all(request("r1", "hello there", "joyous").as_bytes()).unwrap();
    let (frames, _) = read_reply(&mut reader);
    assert_eq!(frames.concat(), fs::read_to_string(&stream_out).unwrap());
}

#[test]
fn websocket_upgrade_streams_text_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = fixture_checkpoint(dir.path(), 2);
    let addr = start(&ckpt);
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "GET / HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n"
    )
    .unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut status = String::new();
    reader.read_line(&mut status).unwrap();
    assert!(status.starts_with("HTTP/1.1 101"), "{status}");
    let mut accept = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h.trim().is_empty() {
            break;
        }
        if let Some(v) = h.strip_prefix("Sec-WebSocket-Accept: ") {
            accept = Some(v.trim().to_string());
        }
    }
    assert_eq!(accept.as_deref(), Some("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="));

    ws::write_client_text(&mut stream, "{\"v\":1,\"type\":\"skeleton\"}", [9, 8, 7, 6]).unwrap();
    let sk: Value = serde_json::from_str(&ws::read_server_text(&mut reader).unwrap().unwrap()).unwrap();
    assert_eq!(sk["type"], "skeleton");

    ws::write_client_text(&mut stream, request("w", "hi", "calm").trim_end(), [1, 2, 3, 4]).unwrap();
    let mut frames = 0;
    loop {
        let text = ws::read_server_text(&mut reader).unwrap().unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        if v["type"] != "frame" {
            assert_eq!(v["type"], "summary");
            assert_eq!(v["frames"], frames);
            break;
        }
        frames += 1;
    }
    assert!(frames > 0);
}

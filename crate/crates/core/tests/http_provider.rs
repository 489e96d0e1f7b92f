use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use ethokit::provider::{DescribeRequest, HttpProvider, Provider, ProviderError, RateRequest};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};

type Seen = Arc<Mutex<Vec<(String, Value)>>>;

fn record(seen: &Seen, route: &str, body: &Value) {
    seen.lock().unwrap().push((route.to_string(), body.clone()));
}

/// Starts the mock on its own runtime and returns its address.
fn mock(seen: Seen) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let s1 = seen.clone();
            let s2 = seen.clone();
            let s3 = seen.clone();
            let s4 = seen;
            let app = Router::new()
                .route(
                    "/describe",
                    post(move |Json(b): Json<Value>| async move {
                        record(&s1, "describe", &b);
                        Json(json!({ "text": "{\"Overall\": \"x\"}" }))
                    }),
                )
                .route(
                    "/rate",
                    post(move |Json(b): Json<Value>| async move {
                        record(&s2, "rate", &b);
                        Json(json!({ "score": 7.5 }))
                    }),
                )
                .route(
                    "/embed",
                    post(move |Json(b): Json<Value>| async move {
                        record(&s3, "embed", &b);
                        Json(json!({ "vector": [0.5, -1.0, 2.0] }))
                    }),
                )
                .route(
                    "/complete",
                    post(move |Json(b): Json<Value>| async move {
                        record(&s4, "complete", &b);
                        if b["prompt"] == "fail" {
                            return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({})));
                        }
                        if b["prompt"] == "garbled" {
                            return (StatusCode::OK, Json(json!({ "txt": 1 })));
                        }
                        (StatusCode::OK, Json(json!({ "text": "done" })))
                    }),
                );
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn png(path: &std::path::Path, w: u32, h: u32, c: [u8; 3]) {
    RgbImage::from_pixel(w, h, Rgb(c)).save(path).unwrap();
}

#[test]
fn roles_round_trip() {
    let seen: Seen = Arc::default();
    let addr = mock(seen.clone());
    let dir = tempfile::tempdir().unwrap();
    png(&dir.path().join("a.png"), 2, 3, [255, 0, 0]);
    png(&dir.path().join("b.png"), 4, 5, [0, 0, 255]);
    let p = HttpProvider::new(&format!("http://{addr}/"), Duration::from_secs(5), Some(dir.path().to_path_buf())).unwrap();

    let text = p
        .describe(&DescribeRequest { prompt: "describe it".into(), images: vec!["a.png".into(), "b.png".into()] })
        .unwrap();
    assert_eq!(text, "{\"Overall\": \"x\"}");
    assert_eq!(p.rate(&RateRequest { description: "{}".into(), images: vec![] }).unwrap(), 7.5);
    assert_eq!(p.embed("hello").unwrap(), vec![0.5, -1.0, 2.0]);
    assert_eq!(p.complete("go").unwrap(), "done");

    let seen = seen.lock().unwrap();
    let routes: Vec<&str> = seen.iter().map(|(r, _)| r.as_str()).collect();
    assert_eq!(routes, ["describe", "rate", "embed", "complete"]);
    assert_eq!(seen[0].1["prompt"], "describe it");
    let bytes = base64::engine::general_purpose::STANDARD.decode(seen[0].1["image_png_base64"].as_str().unwrap()).unwrap();
    let img = image::load_from_memory(&bytes).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (6, 5));
    assert_eq!(img.get_pixel(0, 0), &Rgb([255, 0, 0]));
    assert_eq!(img.get_pixel(0, 4), &Rgb([0, 0, 0]));
    assert_eq!(img.get_pixel(5, 4), &Rgb([0, 0, 255]));
    assert_eq!(seen[1].1["image_png_base64"], Value::Null);
    assert_eq!(seen[2].1, json!({ "text": "hello" }));
}

#[test]
fn failures_are_classified() {
    let addr = mock(Arc::default());
    let p = HttpProvider::new(&format!("http://{addr}"), Duration::from_secs(5), None).unwrap();
    assert!(matches!(p.complete("fail"), Err(ProviderError::Unavailable(_))));
    assert!(matches!(p.complete("garbled"), Err(ProviderError::Protocol(_))));
    assert!(matches!(p.embed("x").map(|_| ()), Ok(())));

    let dead = HttpProvider::new("http://127.0.0.1:9", Duration::from_millis(500), None).unwrap();
    assert!(matches!(dead.complete("x"), Err(ProviderError::Unavailable(_))));
    let missing = dead.describe(&DescribeRequest { prompt: "p".into(), images: vec!["/nonexistent/x.png".into()] });
    assert!(matches!(missing, Err(ProviderError::Io(_))));
}

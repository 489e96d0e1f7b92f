//! JSON-over-HTTP provider.
//!
//! | endpoint          | request                                   | response             |
//! |-------------------|-------------------------------------------|----------------------|
//! | `POST /describe`  | `{"prompt", "image_png_base64"}`          | `{"text"}`           |
//! | `POST /rate`      | `{"description", "image_png_base64"}`     | `{"score"}`          |
//! | `POST /embed`     | `{"text"}`                                | `{"vector": [f64]}`  |
//! | `POST /complete`  | `{"prompt"}`                              | `{"text"}`           |
//!
//! `image_png_base64` is the views of the request concatenated left to right
//! into one PNG, or `null` when the request carries no images.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use image::{imageops, ImageFormat, RgbImage};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{DescribeRequest, Provider, ProviderError, ProviderSettings, RateRequest};

pub struct HttpProvider {
    endpoint: String,
    image_root: Option<PathBuf>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

#[derive(Deserialize)]
struct VectorResponse {
    vector: Vec<f64>,
}

/// Loads the views and places them side by side, top aligned, on a black
/// canvas as tall as the tallest view.
pub fn concat_horizontal(paths: &[PathBuf]) -> Result<RgbImage, ProviderError> {
    let mut views = Vec::with_capacity(paths.len());
    for p in paths {
        let img = image::open(p).map_err(|e| ProviderError::Io(format!("{}: {e}", p.display())))?;
        views.push(img.to_rgb8());
    }
    let width = views.iter().map(|v| v.width()).sum();
    let height = views.iter().map(|v| v.height()).max().unwrap_or(0);
    let mut canvas = RgbImage::new(width, height);
    let mut x = 0i64;
    for v in &views {
        imageops::replace(&mut canvas, v, x, 0);
        x += i64::from(v.width());
    }
    Ok(canvas)
}

impl HttpProvider {
    pub fn new(endpoint: &str, timeout: Duration, image_root: Option<PathBuf>) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(Self { endpoint: endpoint.trim_end_matches('/').to_string(), image_root, client })
    }

    pub fn from_settings(s: &ProviderSettings) -> Result<Self, ProviderError> {
        let endpoint = s
            .endpoint
            .as_deref()
            .ok_or_else(|| ProviderError::Parameter("http provider needs an endpoint".into()))?;
        Self::new(endpoint, Duration::from_secs(s.timeout_s), s.image_root.clone())
    }

    fn resolve(&self, reference: &str) -> PathBuf {
        let p = Path::new(reference);
        match &self.image_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn encode_images(&self, refs: &[String]) -> Result<Value, ProviderError> {
        if refs.is_empty() {
            return Ok(Value::Null);
        }
        let paths: Vec<PathBuf> = refs.iter().map(|r| self.resolve(r)).collect();
        let canvas = concat_horizontal(&paths)?;
        let mut png = Vec::new();
        canvas
            .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
            .map_err(|e| ProviderError::Io(e.to_string()))?;
        Ok(Value::String(base64::engine::general_purpose::STANDARD.encode(png)))
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, route: &str, body: &Value) -> Result<T, ProviderError> {
        let url = format!("{}/{route}", self.endpoint);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Unavailable(format!("{url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProviderError::Unavailable(format!("{url}: HTTP {status}")));
        }
        resp.json::<T>().map_err(|e| ProviderError::Protocol(format!("{url}: {e}")))
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> String {
        format!("http/{}", self.endpoint)
    }

    fn describe(&self, request: &DescribeRequest) -> Result<String, ProviderError> {
        let body = json!({ "prompt": request.prompt, "image_png_base64": self.encode_images(&request.images)? });
        Ok(self.post::<TextResponse>("describe", &body)?.text)
    }

    fn rate(&self, request: &RateRequest) -> Result<f64, ProviderError> {
        let body = json!({ "description": request.description, "image_png_base64": self.encode_images(&request.images)? });
        Ok(self.post::<ScoreResponse>("rate", &body)?.score)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.post::<VectorResponse>("embed", &json!({ "text": text }))?.vector)
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        Ok(self.post::<TextResponse>("complete", &json!({ "prompt": prompt }))?.text)
    }
}

use std::io::Cursor;
use std::time::Duration;

use image::{imageops, Rgb, RgbImage};
use serde_json::{json, Value};

use super::dispatch::{serialize_request, BackendRequest, Route};
use super::PipelineError;

/// An image plus the backend's region manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub png: Vec<u8>,
    /// `{"canvas": ..., "regions": [{"object_id", "route", "box_px"}]}`
    /// when the backend sent one.
    pub manifest: Option<Value>,
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, PipelineError>;
    fn describe(&self) -> String;
}

pub(crate) fn region_manifest(request: &BackendRequest) -> Value {
    let regions: Vec<Value> = request
        .items
        .iter()
        .map(|item| {
            json!({
                "object_id": item.object_id,
                "route": item.route.as_str(),
                "box_px": item.bbox.to_pixels(request.canvas),
            })
        })
        .collect();
    json!({
        "canvas": {"width_px": request.canvas.width_px, "height_px": request.canvas.height_px},
        "regions": regions,
    })
}

/// Draws a schematic: outlines for general objects, glyph bars for text,
/// the reference image (or hatching) for proper nouns.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

fn color(route: Route) -> Rgb<u8> {
    match route {
        Route::LayoutBackend => Rgb([31, 119, 180]),
        Route::TextModule => Rgb([214, 39, 40]),
        Route::PnComposite => Rgb([44, 160, 44]),
    }
}

fn fill(img: &mut RgbImage, [x, y, w, h]: [u32; 4], c: Rgb<u8>) {
    for py in y..(y + h).min(img.height()) {
        for px in x..(x + w).min(img.width()) {
            img.put_pixel(px, py, c);
        }
    }
}

fn outline(img: &mut RgbImage, [x, y, w, h]: [u32; 4], c: Rgb<u8>) {
    let t = 2.min(w).min(h);
    fill(img, [x, y, w, t], c);
    fill(img, [x, (y + h).saturating_sub(t), w, t], c);
    fill(img, [x, y, t, h], c);
    fill(img, [(x + w).saturating_sub(t), y, t, h], c);
}

/// One bar per non-space character, evenly spaced across the box.
fn glyph_bars(img: &mut RgbImage, [x, y, w, h]: [u32; 4], text: &str, c: Rgb<u8>) {
    let n = text.chars().count().max(1) as u32;
    let pitch = (w / n).max(1);
    for (i, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            continue;
        }
        let gx = x + i as u32 * pitch + pitch / 4;
        fill(img, [gx, y + h / 4, (pitch / 2).max(1), (h / 2).max(1)], c);
    }
}

fn paste_reference(img: &mut RgbImage, [x, y, w, h]: [u32; 4], reference: Option<&str>) -> bool {
    let Some(decoded) = reference.and_then(|r| image::open(r).ok()) else {
        return false;
    };
    if w == 0 || h == 0 {
        return true;
    }
    let scaled = imageops::resize(&decoded.to_rgb8(), w, h, imageops::FilterType::Triangle);
    imageops::replace(img, &scaled, i64::from(x), i64::from(y));
    true
}

impl MockBackend {
    pub fn render(&self, request: &BackendRequest) -> RgbImage {
        let mut img = RgbImage::from_pixel(request.canvas.width_px, request.canvas.height_px, Rgb([255, 255, 255]));
        let mut order: Vec<_> = request.items.iter().collect();
        // large boxes first so contained ones stay visible
        order.sort_by_key(|i| (std::cmp::Reverse(i.bbox.micros()[2] * i.bbox.micros()[3]), i.object_id));
        for item in order {
            let px = item.bbox.to_pixels(request.canvas);
            let c = color(item.route);
            match item.route {
                Route::LayoutBackend => outline(&mut img, px, c),
                Route::TextModule => {
                    fill(&mut img, px, Rgb([255, 236, 236]));
                    glyph_bars(&mut img, px, item.text.as_deref().unwrap_or(&item.caption), c);
                    outline(&mut img, px, c);
                }
                Route::PnComposite => {
                    if !paste_reference(&mut img, px, item.image_ref.as_deref()) {
                        for (i, py) in (px[1]..px[1] + px[3]).enumerate() {
                            if i % 6 < 2 {
                                fill(&mut img, [px[0], py, px[2], 1], Rgb([200, 235, 200]));
                            }
                        }
                    }
                    outline(&mut img, px, c);
                }
            }
        }
        img
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, PipelineError> {
        if request.items.is_empty() {
            return Err(PipelineError::SchemaMismatch("request has no items".into()));
        }
        let mut png = Vec::new();
        self.render(request)
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| PipelineError::SchemaMismatch(format!("PNG encoding failed: {e}")))?;
        Ok(BackendResponse {
            png,
            manifest: Some(region_manifest(request)),
        })
    }

    fn describe(&self) -> String {
        "mock".into()
    }
}

/// One POST of the request JSON. The reply is either `image/png` or a
/// multipart body holding the PNG and a JSON manifest.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, PipelineError> {
        let endpoint = endpoint.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PipelineError::BackendUnavailable {
                endpoint: endpoint.clone(),
                status: None,
                reason: e.to_string(),
            })?;
        Ok(Self { endpoint, client })
    }

    fn unavailable(&self, status: Option<u16>, reason: impl Into<String>) -> PipelineError {
        PipelineError::BackendUnavailable {
            endpoint: self.endpoint.clone(),
            status,
            reason: reason.into(),
        }
    }
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Splits a multipart body into `(content-type, bytes)` parts.
pub(crate) fn multipart_parts(body: &[u8], boundary: &str) -> Vec<(String, Vec<u8>)> {
    let delimiter = format!("--{boundary}").into_bytes();
    let mut parts = Vec::new();
    let mut rest = match find(body, &delimiter) {
        Some(i) => &body[i + delimiter.len()..],
        None => return parts,
    };
    while !rest.starts_with(b"--") {
        let Some(end) = find(rest, &delimiter) else { break };
        let part = &rest[..end];
        rest = &rest[end + delimiter.len()..];
        let part = part.strip_prefix(b"\r\n").unwrap_or(part);
        let Some(split) = find(part, b"\r\n\r\n") else { continue };
        let headers = String::from_utf8_lossy(&part[..split]).to_lowercase();
        let content_type = headers
            .lines()
            .find_map(|l| l.strip_prefix("content-type:"))
            .map(|v| v.trim().to_string())
            .unwrap_or_default();
        let data = &part[split + 4..];
        let data = data.strip_suffix(b"\r\n").unwrap_or(data);
        parts.push((content_type, data.to_vec()));
    }
    parts
}

fn boundary_of(content_type: &str) -> Option<String> {
    content_type.split(';').find_map(|p| {
        let p = p.trim();
        p.strip_prefix("boundary=").map(|b| b.trim_matches('"').to_string())
    })
}

impl Backend for HttpBackend {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, PipelineError> {
        let response = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(serialize_request(request))
            .send()
            .map_err(|e| self.unavailable(e.status().map(|s| s.as_u16()), e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(self.unavailable(Some(status.as_u16()), "backend returned an error status"));
        }
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_lowercase();
        let body = response.bytes().map_err(|e| self.unavailable(Some(status.as_u16()), e.to_string()))?;
        if content_type.starts_with("multipart/") {
            let boundary = boundary_of(&content_type)
                .ok_or_else(|| PipelineError::SchemaMismatch("multipart reply without boundary".into()))?;
            let parts = multipart_parts(&body, &boundary);
            let png = parts
                .iter()
                .find(|(ct, data)| ct.starts_with("image/png") || data.starts_with(PNG_MAGIC))
                .map(|(_, d)| d.clone())
                .ok_or_else(|| PipelineError::SchemaMismatch("multipart reply has no PNG part".into()))?;
            let manifest = parts
                .iter()
                .filter(|(ct, _)| ct.contains("json"))
                .find_map(|(_, d)| serde_json::from_slice(d).ok());
            return Ok(BackendResponse { png, manifest });
        }
        if body.starts_with(PNG_MAGIC) {
            return Ok(BackendResponse {
                png: body.to_vec(),
                manifest: None,
            });
        }
        Err(PipelineError::SchemaMismatch(format!(
            "expected a PNG or multipart reply, got `{content_type}`"
        )))
    }

    fn describe(&self) -> String {
        self.endpoint.clone()
    }
}

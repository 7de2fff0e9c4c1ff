mod common;

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use pcig_core::analysis::{AnalysisMode, AnalysisSource};
use pcig_core::layout::LayoutSource;
use pcig_core::llm::{CompletionRequest, CompletionResponse, LlmClient, LlmConfig, LlmError, RecordingTransport, TemplateStore, Transport};
use pcig_core::model::{ObjectCategory, PromptSpec};
use pcig_core::pipeline::{
    dispatch_plan, parse_request, plan_prompt, run_pipeline, serialize_request, Backend, Clients, FixtureResolver,
    HttpBackend, MockBackend, PlanConfig, PnImageResolver, ResolveError, Route, RunOptions, TextModule,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const JERSEY: &str = "A blue basketball jersey with the Golden State Warriors logo and 'Stephen Curry' written on it.";

fn pn_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pn")
}

struct Echo;

impl PnImageResolver for Echo {
    fn resolve(&self, pn_key: &str) -> Result<String, ResolveError> {
        Ok(format!("mem://{pn_key}"))
    }
}

#[test]
fn every_object_gets_exactly_one_item() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let plan = common::random_plan(&mut rng);
        for module in [TextModule::With, TextModule::Without] {
            let request = dispatch_plan(&plan, Some(&Echo), module, Default::default()).unwrap();
            let ids: Vec<usize> = request.items.iter().map(|i| i.object_id).collect();
            let unique: BTreeSet<usize> = ids.iter().copied().collect();
            assert_eq!(ids.len(), plan.objects.len());
            assert_eq!(unique, (0..plan.objects.len()).collect());
            for item in &request.items {
                let object = &plan.objects[item.object_id];
                assert_eq!(item.bbox, plan.boxes[&item.object_id]);
                let expected = match (object.category, module) {
                    (ObjectCategory::Text, TextModule::Without) => Route::LayoutBackend,
                    (c, _) => Route::for_category(c),
                };
                assert_eq!(item.route, expected);
                assert_eq!(item.image_ref.is_some(), item.route == Route::PnComposite);
                assert_eq!(item.text.is_some(), item.route == Route::TextModule);
            }
            if module == TextModule::Without {
                assert!(request.items.iter().all(|i| i.route != Route::TextModule));
            }
            assert_eq!(parse_request(&serialize_request(&request)).unwrap(), request);
        }
    }
}

#[test]
fn text_is_captioned_when_the_module_is_off() {
    let plan = plan_prompt(&PromptSpec::new("j", JERSEY), AnalysisMode::Full, Clients::offline(), &PlanConfig::default())
        .unwrap()
        .plan;
    let request = dispatch_plan(&plan, Some(&Echo), TextModule::Without, Default::default()).unwrap();
    let routes: Vec<Route> = request.items.iter().map(|i| i.route).collect();
    assert_eq!(routes, [Route::LayoutBackend, Route::PnComposite, Route::LayoutBackend]);
    assert_eq!(request.items[2].caption, "Stephen Curry");
    assert!(!request.text_module);
}

#[test]
fn unresolved_keys_are_listed() {
    let plan = plan_prompt(&PromptSpec::new("j", JERSEY), AnalysisMode::Full, Clients::offline(), &PlanConfig::default())
        .unwrap()
        .plan;
    let empty = tempfile::tempdir().unwrap();
    let err = dispatch_plan(&plan, Some(&FixtureResolver::new(empty.path())), TextModule::With, Default::default()).unwrap_err();
    assert_eq!(err.code(), "PN_RESOLUTION_FAILED");
    assert!(err.to_string().contains("golden-state-warriors-logo"));
    assert_eq!(dispatch_plan(&plan, None, TextModule::With, Default::default()).unwrap_err().code(), "PN_RESOLUTION_FAILED");
}

fn files(dir: &Path) -> Vec<Vec<u8>> {
    ["plan.json", "request.json", "image.png"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

/// Manifest minus the wall-clock fields.
fn stable_manifest(dir: &Path) -> serde_json::Value {
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m.as_object_mut().unwrap().remove("timing_ms");
    m
}

#[test]
fn offline_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let resolver = FixtureResolver::new(pn_dir());
    let options = RunOptions::default();
    let prompt = PromptSpec::new("jersey", JERSEY);
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        run_pipeline(&prompt, &options, Clients::offline(), Some(&resolver), &MockBackend, d).unwrap();
    }
    assert_eq!(files(&dirs[0]), files(&dirs[1]));
    assert_eq!(stable_manifest(&dirs[0]), stable_manifest(&dirs[1]));
}

/// Canned LLM answers keyed on the template.
struct Scripted;

impl Transport for Scripted {
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let text = match request.template_id.as_str() {
            "analysis/v1" => r#"Sure! {"objects": [
                {"caption": "a wooden sign", "category": "GO"},
                {"caption": "OPEN", "category": "TEXT", "text": "OPEN"},
                {"caption": "two potted plants", "category": "GO", "count": 2}],
              "triples": [{"subject": "OPEN", "predicate": "on", "object": "wooden sign"},
                          {"subject": "potted plants", "predicate": "below", "object": "wooden sign"}]}"#,
            "layout/v1" => r#"{"boxes": {
                "0": [0.25, 0.1, 0.5, 0.4], "1": [0.3, 0.2, 0.4, 0.1],
                "2": [0.1, 0.6, 0.3, 0.3], "3": [0.6, 0.6, 0.3, 0.3]}}"#,
            other => return Err(LlmError::Transport(format!("unexpected template {other}"))),
        };
        Ok(CompletionResponse {
            text: text.into(),
            prompt_tokens: 1000,
            completion_tokens: 500,
        })
    }
}

#[test]
fn recorded_llm_answers_replay_offline() {
    let fixtures = tempfile::tempdir().unwrap();
    let prompt = PromptSpec::new("sign", "A wooden sign saying OPEN above two potted plants.");
    let recording = LlmClient::new(
        Arc::new(RecordingTransport::new(Arc::new(Scripted), fixtures.path())),
        TemplateStore::builtin(),
        LlmConfig::default(),
    );
    let live = plan_prompt(&prompt, AnalysisMode::Full, Clients::both(&recording), &PlanConfig::default()).unwrap();
    assert_eq!(live.analysis_source, AnalysisSource::Llm);
    assert_eq!(live.layout_source, LayoutSource::Llm);
    assert_eq!(live.plan.objects.len(), 4);
    // two calls at 1000 prompt + 500 completion tokens, $0.03 / $0.06 per 1k
    assert_eq!(recording.cost_micros(), 2 * (30_000 + 30_000));

    let replay = LlmClient::fixtures(fixtures.path());
    let out = tempfile::tempdir().unwrap();
    let manifest = run_pipeline(&prompt, &RunOptions::default(), Clients::both(&replay), None, &MockBackend, out.path()).unwrap();
    assert_eq!(std::fs::read(&manifest.plan_path).unwrap(), pcig_core::canonical::serialize_plan(&live.plan).unwrap());
    assert!(manifest.llm_cost_micros > 0);
    assert_eq!(manifest.analysis_source, "llm");
}

/// Serves one canned HTTP response and hands back the request body.
fn one_shot_server(status: &'static str, content_type: &'static str, body: Vec<u8>) -> (String, mpsc::Receiver<Vec<u8>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
        }
        let mut request = vec![0; length];
        reader.read_exact(&mut request).unwrap();
        let _ = tx.send(request);
        let mut stream = stream;
        let head = format!(
            "HTTP/1.1 {status}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            body.len()
        );
        stream.write_all(head.as_bytes()).unwrap();
        stream.write_all(&body).unwrap();
    });
    (format!("http://{addr}/generate"), rx)
}

fn jersey_request() -> pcig_core::pipeline::BackendRequest {
    let plan = plan_prompt(&PromptSpec::new("jersey", JERSEY), AnalysisMode::Full, Clients::offline(), &PlanConfig::default())
        .unwrap()
        .plan;
    dispatch_plan(&plan, Some(&FixtureResolver::new(pn_dir())), TextModule::With, Default::default()).unwrap()
}

fn png_bytes() -> Vec<u8> {
    std::fs::read(pn_dir().join("golden-state-warriors-logo.png")).unwrap()
}

#[test]
fn http_backend_posts_the_canonical_request() {
    let request = jersey_request();
    let (url, sent) = one_shot_server("200 OK", "image/png", png_bytes());
    let backend = HttpBackend::new(&url, Duration::from_secs(10)).unwrap();
    let response = backend.generate(&request).unwrap();
    assert_eq!(response.png, png_bytes());
    assert_eq!(response.manifest, None);
    assert_eq!(sent.recv().unwrap(), serialize_request(&request));
}

#[test]
fn http_backend_reads_multipart_replies() {
    let manifest = br#"{"canvas": {"width_px": 512, "height_px": 512}, "regions": []}"#;
    let mut body = b"--b0undary\r\nContent-Type: image/png\r\n\r\n".to_vec();
    body.extend(png_bytes());
    body.extend(b"\r\n--b0undary\r\nContent-Type: application/json\r\n\r\n");
    body.extend(manifest);
    body.extend(b"\r\n--b0undary--\r\n");
    let (url, _) = one_shot_server("200 OK", "multipart/mixed; boundary=b0undary", body);
    let response = HttpBackend::new(&url, Duration::from_secs(10)).unwrap().generate(&jersey_request()).unwrap();
    assert_eq!(response.png, png_bytes());
    assert_eq!(response.manifest.unwrap()["regions"], serde_json::json!([]));
}

#[test]
fn http_errors_carry_endpoint_and_status() {
    let (url, _) = one_shot_server("500 Internal Server Error", "text/plain", b"boom".to_vec());
    let err = HttpBackend::new(&url, Duration::from_secs(10)).unwrap().generate(&jersey_request()).unwrap_err();
    assert_eq!(err.code(), "BACKEND_UNAVAILABLE");
    let message = err.to_string();
    assert!(message.contains(&url) && message.contains("500"), "{message}");

    // nothing listens on a freshly closed port
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/generate");
    let err = HttpBackend::new(&url, Duration::from_secs(5)).unwrap().generate(&jersey_request()).unwrap_err();
    assert_eq!(err.code(), "BACKEND_UNAVAILABLE");
}

#[test]
fn mock_backend_echoes_regions_in_pixels() {
    let mut request = jersey_request();
    let first = MockBackend.generate(&request).unwrap();
    assert_eq!(first, MockBackend.generate(&request).unwrap());
    let image = image::load_from_memory(&first.png).unwrap();
    assert_eq!((image.width(), image.height()), (512, 512));
    let regions = first.manifest.unwrap()["regions"].as_array().unwrap().clone();
    assert_eq!(regions.len(), request.items.len());
    for (region, item) in regions.iter().zip(&request.items) {
        let px: Vec<f64> = region["box_px"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let fractions = [item.bbox.x(), item.bbox.y(), item.bbox.w(), item.bbox.h()];
        for (p, f) in px.iter().zip(fractions) {
            assert!((p - f * 512.0).abs() <= 1.0, "{p} vs {}", f * 512.0);
        }
    }

    // the logo fixture is pasted: its dark blue shows inside the PN box
    let rgb = image.to_rgb8();
    let pn = regions.iter().find(|r| r["route"] == "pn_composite").unwrap();
    let b: Vec<u32> = pn["box_px"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as u32).collect();
    assert_eq!(rgb.get_pixel(b[0] + b[2] / 2, b[1] + b[3] / 2).0, [29, 66, 138]);

    request.canvas = pcig_core::model::Canvas { width_px: 256, height_px: 256 };
    let small = image::load_from_memory(&MockBackend.generate(&request).unwrap().png).unwrap();
    assert_eq!((small.width(), small.height()), (256, 256));

    request.items.clear();
    assert_eq!(MockBackend.generate(&request).unwrap_err().code(), "SCHEMA_MISMATCH");
}

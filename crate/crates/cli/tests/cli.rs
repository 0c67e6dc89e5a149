//! End-to-end tests over the compiled binary: exit codes, JSON outputs,
//! replay determinism, resume behavior, and help/README parity.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use image::{Rgb, RgbImage};

use brandlens::domain::PslList;
use brandlens::gateway::{
    FnTransport, Gateway, GatewayError, LlmRequest, LlmResponse, RecorderTransport, TokenUsage,
};
use brandlens::pipeline::{detect_batch, DetectSettings};
use brandlens::prompt::{render_phase1_response, BrandIdentification, Confidence, InputMode};
use brandlens::snapshot::{
    save_snapshot, GroundTruth, LabelClass, WebpageSnapshot, DEFAULT_USER_AGENT,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_brandlens"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

fn busy_image(seed: u32) -> RgbImage {
    RgbImage::from_fn(100, 100, |x, y| {
        let x = x + seed;
        Rgb([
            ((x * 7 + y * 13) % 256) as u8,
            ((x * 3 + y * 5) % 256) as u8,
            ((x * 11 + y * 3) % 256) as u8,
        ])
    })
}

fn sample(
    id: &str,
    url: &str,
    brand: &str,
    seed: u32,
    label: Option<GroundTruth>,
) -> WebpageSnapshot {
    WebpageSnapshot {
        sample_id: id.into(),
        url: url.into(),
        html: format!(
            "<html><head><title>{brand}</title></head><body><header>{brand}</header>\
             <p>Welcome to {brand}. Sign in to continue your session.</p>\
             <footer>© {brand}</footer></body></html>"
        ),
        screenshot: Some(busy_image(seed)),
        http_status: 200,
        captured_at: "2023-11-02T10:00:00Z".into(),
        user_agent: DEFAULT_USER_AGENT.into(),
        referrer: String::new(),
        label,
    }
}

/// Same scripted double as the acceptance suite, reduced to the brands these
/// tests use.
fn scripted_model(req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
    let usage = TokenUsage::new((req.system_text.len() + req.user_text.len()) as u64 / 4, 50);
    let text = if req.user_text.starts_with("- URL: ") {
        let url = req
            .user_text
            .lines()
            .next()
            .unwrap()
            .trim_start_matches("- URL: ");
        let brand = req
            .user_text
            .lines()
            .find_map(|l| l.strip_prefix("- Identified Brand: "))
            .unwrap_or_default()
            .to_lowercase();
        let host = url::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_lowercase))
            .unwrap_or_default();
        let genuine = match brand.as_str() {
            "whatsapp" => host.ends_with("whatsapp.com"),
            "paypal" => host.ends_with("paypal.com"),
            _ => false,
        };
        if genuine {
            format!("- Genuine/Phishing: Genuine\n- Evidence: {host} belongs to {brand}.\n- Genuine URL: https://{host}")
        } else {
            format!("- Genuine/Phishing: Phishing\n- Evidence: {host} does not belong to {brand}.\n- Genuine URL: https://www.{brand}.com")
        }
    } else {
        let brand = req
            .user_text
            .lines()
            .find_map(|l| l.trim().strip_prefix("\"title\": \""))
            .and_then(|l| l.strip_suffix("\","))
            .unwrap_or("NA");
        render_phase1_response(&BrandIdentification {
            brand: (!brand.is_empty() && brand != "NA").then(|| brand.to_string()),
            has_credentials: true,
            has_call_to_action: true,
            credential_fields: vec!["Email".into(), "Password".into()],
            call_to_action_fields: vec!["Sign in".into()],
            confidence: Confidence::from_hundredths(910).unwrap(),
            supporting_evidence: format!("Title and footer reference {brand}."),
            mode: InputMode::Both,
            warnings: vec![],
        })
    };
    Ok(LlmResponse { text, usage })
}

/// The CLI replays fixtures keyed by request hash, so tests pre-record them
/// by running the same batch in-process against the scripted model. The
/// settings must match the CLI defaults for the hashes to line up.
fn record_fixtures(root: &Path, fixture_path: &Path, modes: &[InputMode], models: &[String]) {
    let recorder = RecorderTransport::create(
        fixture_path,
        Arc::new(FnTransport::deterministic(scripted_model)),
    )
    .unwrap();
    let gateway = Gateway::new(Arc::new(recorder));
    let settings = DetectSettings {
        thresholds: cli_thresholds(),
        ..DetectSettings::default()
    };
    let mut sink = Vec::new();
    detect_batch(
        root,
        modes,
        models,
        &gateway,
        &settings,
        PslList::bundled(),
        None,
        &HashSet::new(),
        &mut sink,
        2,
    )
    .unwrap();
}

/// Thresholds used by tests on both the record and replay side; passed to
/// the CLI through a config file.
fn cli_thresholds() -> brandlens::filter::FilterThresholds {
    brandlens::filter::FilterThresholds {
        min_gray_stddev: 10.0,
        min_edge_count: 300,
        min_ocr_chars: 20,
        calibrated: true,
    }
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.json");
    let config = serde_json::json!({
        "filter_thresholds": cli_thresholds(),
    });
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path
}

fn whatsapp_phish_dataset(root: &Path) {
    let snap = sample(
        "whatsapp_phish",
        "https://polert.xyz/52Lp/whatsapp.html",
        "WhatsApp",
        3,
        Some(GroundTruth {
            class: LabelClass::Phishing,
            brand: Some("WhatsApp".into()),
        }),
    );
    save_snapshot(&snap, &root.join("whatsapp_phish")).unwrap();
    let benign = sample(
        "paypal_home",
        "https://paypal.com/signin",
        "PayPal",
        4,
        Some(GroundTruth {
            class: LabelClass::Benign,
            brand: Some("PayPal".into()),
        }),
    );
    save_snapshot(&benign, &root.join("paypal_home")).unwrap();
}

#[test]
fn detect_phishing_fixture_exits_3_with_json_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);
    let fixtures = tmp.path().join("fixtures.jsonl");
    record_fixtures(
        &root,
        &fixtures,
        &[InputMode::Both],
        &["scripted/model".into()],
    );
    let config = write_config(tmp.path());

    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "detect",
        root.join("whatsapp_phish").to_str().unwrap(),
        "--mode",
        "both",
        "--model",
        "scripted/model",
        "--transport",
        "replay",
        "--fixtures",
        fixtures.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "phishing exit code");
    let verdict = stdout_json(&output);
    assert_eq!(verdict["outcome"], "phishing");
    assert_eq!(verdict["identified_brand"], "WhatsApp");
    assert_eq!(verdict["sample_id"], "whatsapp_phish");
}

#[test]
fn detect_genuine_fixture_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);
    let fixtures = tmp.path().join("fixtures.jsonl");
    record_fixtures(
        &root,
        &fixtures,
        &[InputMode::Both],
        &["scripted/model".into()],
    );
    let config = write_config(tmp.path());

    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "detect",
        root.join("paypal_home").to_str().unwrap(),
        "--mode",
        "both",
        "--model",
        "scripted/model",
        "--transport",
        "replay",
        "--fixtures",
        fixtures.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(stdout_json(&output)["outcome"], "genuine");
}

#[test]
fn detect_invalid_sample_exits_5_without_fixture_hits() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    let mut snap = sample("blank", "https://blank.example/", "X", 0, None);
    snap.screenshot = Some(RgbImage::from_pixel(100, 100, Rgb([255, 255, 255])));
    save_snapshot(&snap, &root.join("blank")).unwrap();
    let fixtures = tmp.path().join("fixtures.jsonl");
    std::fs::write(&fixtures, "").unwrap();
    let config = write_config(tmp.path());

    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "detect",
        root.join("blank").to_str().unwrap(),
        "--mode",
        "both",
        "--model",
        "scripted/model",
        "--transport",
        "replay",
        "--fixtures",
        fixtures.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(5), "invalid exit code");
    assert_eq!(stdout_json(&output)["outcome"], "invalid");
}

#[test]
fn detect_unknown_brand_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    // A page whose title gives the scripted model nothing to identify.
    let mut snap = sample("mystery", "https://unbranded.example/", "NA", 9, None);
    snap.html = "<html><head><title>NA</title></head><body><p>Enter your code to continue with the process.</p></body></html>".into();
    save_snapshot(&snap, &root.join("mystery")).unwrap();
    let fixtures = tmp.path().join("fixtures.jsonl");
    record_fixtures(
        &root,
        &fixtures,
        &[InputMode::Both],
        &["scripted/model".into()],
    );
    let config = write_config(tmp.path());

    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "detect",
        root.join("mystery").to_str().unwrap(),
        "--mode",
        "both",
        "--model",
        "scripted/model",
        "--transport",
        "replay",
        "--fixtures",
        fixtures.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(4), "unknown exit code");
    assert_eq!(stdout_json(&output)["outcome"], "unknown");
}

#[test]
fn detect_gateway_error_exits_6() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);
    // Record a safety-filter block as the phase-1 outcome.
    let fixtures = tmp.path().join("fixtures.jsonl");
    {
        let blocked = FnTransport::deterministic(|_req: &LlmRequest| {
            Err(GatewayError::new(
                brandlens::gateway::ErrorKind::SafetyFilter,
                "blocked by safety system",
            ))
        });
        let recorder = RecorderTransport::create(&fixtures, Arc::new(blocked)).unwrap();
        let gateway = Gateway::new(Arc::new(recorder));
        let settings = DetectSettings {
            thresholds: cli_thresholds(),
            ..DetectSettings::default()
        };
        let mut sink = Vec::new();
        detect_batch(
            &root,
            &[InputMode::Both],
            &["scripted/model".to_string()],
            &gateway,
            &settings,
            PslList::bundled(),
            None,
            &HashSet::new(),
            &mut sink,
            1,
        )
        .unwrap();
    }
    let config = write_config(tmp.path());

    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "detect",
        root.join("whatsapp_phish").to_str().unwrap(),
        "--mode",
        "both",
        "--model",
        "scripted/model",
        "--transport",
        "replay",
        "--fixtures",
        fixtures.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(6), "error exit code");
    let verdict = stdout_json(&output);
    assert_eq!(verdict["outcome"], "error");
    assert_eq!(verdict["error"]["kind"], "safety_filter");
}

#[test]
fn usage_errors_are_single_line_json() {
    let output = run(&[
        "detect",
        "/tmp/nowhere",
        "--mode",
        "sideways",
        "--model",
        "m",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert_eq!(stderr.trim().lines().count(), 1);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"]["kind"], "bad_flag");

    let output = run(&["detect", "--mode", "both"]);
    assert_eq!(output.status.code(), Some(1), "clap usage error");
    let stderr = String::from_utf8_lossy(&output.stderr);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn filter_reports_blank_page_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    let mut blank = sample("blank", "https://blank.example/", "X", 0, None);
    blank.screenshot = Some(RgbImage::from_pixel(100, 100, Rgb([250, 250, 250])));
    save_snapshot(&blank, &root.join("blank")).unwrap();
    whatsapp_phish_dataset(&root);
    let config = write_config(tmp.path());

    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "filter",
        root.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    let blank_line = stdout
        .lines()
        .find(|l| l.contains("\"blank\""))
        .expect("blank sample reported");
    let report: serde_json::Value = serde_json::from_str(blank_line).unwrap();
    assert_eq!(report["valid"], false);
    assert_eq!(report["outcomes"]["pixel_stddev"]["status"], "fail");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("pixel_stddev"),
        "counts per check on stderr"
    );
}

#[test]
fn filter_calibrates_from_labeled_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    for (id, shade) in [("blank_w", 255u8), ("blank_b", 0u8)] {
        let mut snap = sample(id, "https://blank.example/", "X", 0, None);
        snap.screenshot = Some(RgbImage::from_pixel(100, 100, Rgb([shade; 3])));
        save_snapshot(&snap, &root.join(id)).unwrap();
    }
    whatsapp_phish_dataset(&root);
    let labels = tmp.path().join("labeled.json");
    std::fs::write(
        &labels,
        serde_json::json!([
            {"sample": "blank_w", "blank": true},
            {"sample": "blank_b", "blank": true},
            {"sample": "whatsapp_phish", "blank": false},
            {"sample": "paypal_home", "blank": false},
        ])
        .to_string(),
    )
    .unwrap();

    let output = run(&[
        "filter",
        root.to_str().unwrap(),
        "--calibrate",
        labels.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("calibrated_thresholds"));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for line in stdout.lines() {
        let report: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(report["thresholds_calibrated"], true);
    }
}

#[test]
fn scan_writes_manifest_and_dedup_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);
    // Exact duplicate of the whatsapp sample under another id.
    let dup = sample(
        "zz_dup",
        "https://polert.xyz/52Lp/whatsapp.html",
        "WhatsApp",
        3,
        None,
    );
    save_snapshot(&dup, &root.join("zz_dup")).unwrap();
    let report_path = tmp.path().join("dedup.jsonl");

    let output = run(&[
        "scan",
        root.to_str().unwrap(),
        "--dedup-report",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "duplicates are not an error");
    let manifest = stdout_json(&output);
    assert_eq!(manifest["duplicates"], 1);
    assert_eq!(
        manifest["samples"],
        serde_json::json!(["paypal_home", "whatsapp_phish"])
    );
    let report = std::fs::read_to_string(&report_path).unwrap();
    let entry: serde_json::Value = serde_json::from_str(report.trim()).unwrap();
    assert_eq!(entry["retained"], "whatsapp_phish");
    assert_eq!(entry["dropped"], "zz_dup");
}

#[test]
fn scan_unreadable_root_exits_2() {
    let output = run(&["scan", "/nonexistent/dataset/root"]);
    assert_eq!(output.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(err["error"]["exit"], 2);
}

#[test]
fn extract_prints_key_info_json() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);

    let output = run(&["extract", root.join("whatsapp_phish").to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    let info = stdout_json(&output);
    assert_eq!(info["title"], "WhatsApp");
    assert_eq!(info["footer_text"], "© WhatsApp");
}

#[test]
fn batch_then_eval_and_cost() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);
    let fixtures = tmp.path().join("fixtures.jsonl");
    record_fixtures(
        &root,
        &fixtures,
        &[InputMode::Both],
        &["scripted/model".into()],
    );
    let config = write_config(tmp.path());
    let results = tmp.path().join("results.jsonl");

    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "batch",
        root.to_str().unwrap(),
        "--mode",
        "both",
        "--model",
        "scripted/model",
        "--transport",
        "replay",
        "--fixtures",
        fixtures.to_str().unwrap(),
        "--output",
        results.to_str().unwrap(),
    ]);
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let lines = std::fs::read_to_string(&results).unwrap();
    assert_eq!(lines.lines().count(), 2);

    let eval_out = run(&[
        "eval",
        "--results",
        results.to_str().unwrap(),
        "--labels",
        root.to_str().unwrap(),
    ]);
    assert_eq!(eval_out.status.code(), Some(0));
    let report = stdout_json(&eval_out);
    let metrics = &report["metrics"]["scripted/model"]["both"];
    assert_eq!(metrics["precision"], 1.0);
    assert_eq!(metrics["recall"], 1.0);

    let cost_out = run(&["cost", "--results", results.to_str().unwrap()]);
    assert_eq!(cost_out.status.code(), Some(0));
    let cost = stdout_json(&cost_out);
    assert!(cost["scripted/model"]["both"]["mean"].as_f64().unwrap() > 0.0);

    let csv_dir = tmp.path().join("tables");
    let csv_out = run(&[
        "eval",
        "--results",
        results.to_str().unwrap(),
        "--labels",
        root.to_str().unwrap(),
        "--csv-dir",
        csv_dir.to_str().unwrap(),
    ]);
    assert_eq!(csv_out.status.code(), Some(0));
    let metrics_csv = std::fs::read_to_string(csv_dir.join("metrics.csv")).unwrap();
    assert!(metrics_csv.starts_with("model,mode,precision"));
    assert!(metrics_csv.contains("scripted/model,both,1,1,1"));
    for table in ["exclusive_wins.csv", "effect_categories.csv", "token_stats.csv"] {
        assert!(csv_dir.join(table).is_file(), "{table} written");
    }
}

#[test]
fn batch_resume_makes_no_gateway_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);
    let fixtures = tmp.path().join("fixtures.jsonl");
    record_fixtures(
        &root,
        &fixtures,
        &[InputMode::Both],
        &["scripted/model".into()],
    );
    let config = write_config(tmp.path());
    let results = tmp.path().join("results.jsonl");

    let args = |fixtures_path: &Path, resume: bool| {
        let mut v = vec![
            "--config".to_string(),
            config.to_str().unwrap().to_string(),
            "batch".to_string(),
            root.to_str().unwrap().to_string(),
            "--mode".to_string(),
            "both".to_string(),
            "--model".to_string(),
            "scripted/model".to_string(),
            "--transport".to_string(),
            "replay".to_string(),
            "--fixtures".to_string(),
            fixtures_path.to_str().unwrap().to_string(),
            "--output".to_string(),
            results.to_str().unwrap().to_string(),
        ];
        if resume {
            v.push("--resume".to_string());
        }
        v
    };

    let first = bin().args(args(&fixtures, false)).output().unwrap();
    assert_eq!(first.status.code(), Some(0));
    let after_first = std::fs::read_to_string(&results).unwrap();
    assert_eq!(after_first.lines().count(), 2);

    // Second run with --resume against an EMPTY fixture file: it can only
    // succeed if zero gateway calls are made.
    let empty_fixtures = tmp.path().join("empty.jsonl");
    std::fs::write(&empty_fixtures, "").unwrap();
    let second = bin().args(args(&empty_fixtures, true)).output().unwrap();
    assert_eq!(
        second.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&second.stderr)
    );
    let stderr = String::from_utf8_lossy(&second.stderr);
    let summary: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(summary["written"], 0);
    assert_eq!(summary["skipped"], 2);
    let after_second = std::fs::read_to_string(&results).unwrap();
    assert_eq!(after_second, after_first, "resume appended nothing");
}

#[test]
fn batch_is_deterministic_under_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);
    let fixtures = tmp.path().join("fixtures.jsonl");
    record_fixtures(
        &root,
        &fixtures,
        &[InputMode::Both, InputMode::HtmlOnly],
        &["scripted/model".into()],
    );
    let config = write_config(tmp.path());

    let mut outputs = Vec::new();
    for name in ["run1.jsonl", "run2.jsonl"] {
        let results = tmp.path().join(name);
        let output = run(&[
            "--config",
            config.to_str().unwrap(),
            "batch",
            root.to_str().unwrap(),
            "--mode",
            "both",
            "--mode",
            "html",
            "--model",
            "scripted/model",
            "--transport",
            "replay",
            "--fixtures",
            fixtures.to_str().unwrap(),
            "--output",
            results.to_str().unwrap(),
            "--max-in-flight",
            "4",
        ]);
        assert_eq!(output.status.code(), Some(0));
        outputs.push(std::fs::read(&results).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "byte-identical result files");
}

#[test]
fn replay_without_fixture_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("dataset");
    std::fs::create_dir_all(&root).unwrap();
    whatsapp_phish_dataset(&root);

    let output = run(&[
        "detect",
        root.join("paypal_home").to_str().unwrap(),
        "--mode",
        "both",
        "--model",
        "scripted/model",
        "--transport",
        "replay",
        "--fixtures",
        "/nonexistent/fixtures.jsonl",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn live_transport_without_credentials_names_the_variables() {
    let output = bin()
        .args([
            "batch",
            "/tmp",
            "--mode",
            "both",
            "--model",
            "openai/gpt-4-turbo",
            "--transport",
            "live",
        ])
        .env_remove("BRANDLENS_API_KEY_OPENAI")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&output.stderr).unwrap();
    assert!(err["error"]["detail"]
        .as_str()
        .unwrap()
        .contains("BRANDLENS_API_KEY_OPENAI"));
}

/// Every long flag shown by --help must be documented in the README.
#[test]
fn help_flags_match_readme() {
    let readme_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let readme = std::fs::read_to_string(&readme_path).expect("README.md at workspace root");
    let subcommands = [
        vec!["--help"],
        vec!["scan", "--help"],
        vec!["filter", "--help"],
        vec!["extract", "--help"],
        vec!["detect", "--help"],
        vec!["batch", "--help"],
        vec!["eval", "--help"],
        vec!["cost", "--help"],
    ];
    for args in &subcommands {
        let output = run(args);
        assert_eq!(output.status.code(), Some(0));
        let help = String::from_utf8_lossy(&output.stdout);
        for token in help.split_whitespace() {
            let Some(flag) = token.strip_prefix("--") else {
                continue;
            };
            let flag: String = flag
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || *c == '-')
                .collect();
            if flag.is_empty() {
                continue;
            }
            assert!(
                readme.contains(&format!("--{flag}")),
                "flag --{flag} (from `{}`) missing in README.md",
                args.join(" ")
            );
        }
    }
}

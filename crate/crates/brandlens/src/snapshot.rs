//! On-disk webpage snapshot store: loading, validation, SHA-256 deduplication.
//!
//! A dataset is a directory of per-sample subdirectories, each holding
//! `metadata.json`, `page.html` and an optional `screenshot.png`. Duplicate
//! samples (byte-identical URL and HTML) are dropped at scan time, keeping the
//! lexicographically first sample id.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// User-agent string used for capture, chosen for minimal cloaking.
pub const DEFAULT_USER_AGENT: &str = "Mozilla/5.0 (Windows NT 10.0; Win64; x64) \
     AppleWebKit/537.36 (KHTML, like Gecko) Chrome/116.0.0.0 Safari/537.36";

/// Ground-truth class of a labeled sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelClass {
    Benign,
    Phishing,
}

/// Optional ground truth attached to a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub class: LabelClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
}

/// One captured webpage.
///
/// The screenshot is either a decoded RGB raster or explicitly absent;
/// a zero-byte or unreadable image never silently becomes "present".
#[derive(Debug, Clone, PartialEq)]
pub struct WebpageSnapshot {
    /// Directory name of the sample.
    pub sample_id: String,
    /// Absolute URL with a host component.
    pub url: String,
    pub html: String,
    pub screenshot: Option<RgbImage>,
    /// HTTP status recorded at capture time (100-599).
    pub http_status: u16,
    /// Capture timestamp, ISO 8601.
    pub captured_at: String,
    pub user_agent: String,
    /// Referrer used at capture time, possibly empty.
    pub referrer: String,
    pub label: Option<GroundTruth>,
}

/// Referrer strategy for capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferrerPolicy {
    /// Use the page's own URL as referrer; observed to minimize cloaking.
    SelfReferential,
    Fixed(String),
    Empty,
}

/// Capture-side environment profile.
///
/// Defaults encode the configuration found to evade cloaking best:
/// a mainstream desktop Chrome user agent, a self-referential referrer,
/// and simulated mouse movement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureProfile {
    pub user_agent: String,
    pub referrer_policy: ReferrerPolicy,
    pub mouse_movement: bool,
}

impl Default for CaptureProfile {
    fn default() -> Self {
        Self {
            user_agent: DEFAULT_USER_AGENT.to_string(),
            referrer_policy: ReferrerPolicy::SelfReferential,
            mouse_movement: true,
        }
    }
}

/// Deduplication key: independent SHA-256 digests of the URL and HTML bytes.
///
/// Digests are computed over exact bytes. The URL is not normalized in any
/// way (no lowercasing, no trailing-slash stripping).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DedupKey {
    pub url_digest: [u8; 32],
    pub html_digest: [u8; 32],
}

impl fmt::Display for DedupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}",
            hex::encode(self.url_digest),
            hex::encode(self.html_digest)
        )
    }
}

/// One retained/dropped pair found during deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateEntry {
    pub retained: String,
    pub dropped: String,
}

/// Per-sample load failure collected during a scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample_id: String,
    pub error: String,
}

/// Outcome of scanning a dataset root.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupReport {
    pub duplicates: Vec<DuplicateEntry>,
    pub errors: Vec<SampleError>,
}

impl DedupReport {
    /// Writes the report as JSONL, one `{"retained": id, "dropped": id}`
    /// object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for dup in &self.duplicates {
            serde_json::to_writer(&mut out, dup)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("malformed metadata: {0}")]
    MalformedMetadata(String),
    #[error("page.html is not valid UTF-8")]
    NonUtf8Html,
    #[error("malformed screenshot: {0}")]
    MalformedScreenshot(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `metadata.json` schema. All keys lowercase.
#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    url: String,
    http_status: u16,
    captured_at: String,
    user_agent: String,
    referrer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<GroundTruth>,
}

fn io_err(path: &Path, source: std::io::Error) -> SnapshotError {
    SnapshotError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads one sample directory into a fully populated snapshot.
///
/// `metadata.json` and `page.html` are required; `screenshot.png` is
/// optional and its absence is recorded explicitly.
pub fn load_snapshot(dir: &Path) -> Result<WebpageSnapshot, SnapshotError> {
    let sample_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();

    let meta_path = dir.join("metadata.json");
    if !meta_path.is_file() {
        return Err(SnapshotError::MissingFile("metadata.json".into()));
    }
    let html_path = dir.join("page.html");
    if !html_path.is_file() {
        return Err(SnapshotError::MissingFile("page.html".into()));
    }

    let meta_bytes = fs::read(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: Metadata = serde_json::from_slice(&meta_bytes)
        .map_err(|e| SnapshotError::MalformedMetadata(e.to_string()))?;
    validate_metadata(&meta)?;

    let html_bytes = fs::read(&html_path).map_err(|e| io_err(&html_path, e))?;
    let html = String::from_utf8(html_bytes).map_err(|_| SnapshotError::NonUtf8Html)?;

    let shot_path = dir.join("screenshot.png");
    let screenshot = if shot_path.is_file() {
        let img = image::open(&shot_path)
            .map_err(|e| SnapshotError::MalformedScreenshot(e.to_string()))?
            .to_rgb8();
        if img.width() == 0 || img.height() == 0 {
            return Err(SnapshotError::MalformedScreenshot(
                "zero-dimension image".into(),
            ));
        }
        Some(img)
    } else {
        None
    };

    Ok(WebpageSnapshot {
        sample_id,
        url: meta.url,
        html,
        screenshot,
        http_status: meta.http_status,
        captured_at: meta.captured_at,
        user_agent: meta.user_agent,
        referrer: meta.referrer,
        label: meta.label,
    })
}

fn validate_metadata(meta: &Metadata) -> Result<(), SnapshotError> {
    match url::Url::parse(&meta.url) {
        Ok(u) if u.host_str().is_some() => {}
        _ => {
            return Err(SnapshotError::MalformedMetadata(format!(
                "url: not an absolute URL with a host: {:?}",
                meta.url
            )))
        }
    }
    if !(100..=599).contains(&meta.http_status) {
        return Err(SnapshotError::MalformedMetadata(format!(
            "http_status: {} outside 100-599",
            meta.http_status
        )));
    }
    if let Some(label) = &meta.label {
        if label.class == LabelClass::Phishing
            && label.brand.as_deref().is_none_or(|b| b.is_empty())
        {
            return Err(SnapshotError::MalformedMetadata(
                "label: phishing samples require a non-empty brand".into(),
            ));
        }
    }
    Ok(())
}

/// Writes a snapshot back to a sample directory, the inverse of
/// [`load_snapshot`].
pub fn save_snapshot(snapshot: &WebpageSnapshot, dir: &Path) -> Result<(), SnapshotError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta = Metadata {
        url: snapshot.url.clone(),
        http_status: snapshot.http_status,
        captured_at: snapshot.captured_at.clone(),
        user_agent: snapshot.user_agent.clone(),
        referrer: snapshot.referrer.clone(),
        label: snapshot.label.clone(),
    };
    let meta_path = dir.join("metadata.json");
    let meta_json = serde_json::to_vec_pretty(&meta)
        .map_err(|e| SnapshotError::MalformedMetadata(e.to_string()))?;
    fs::write(&meta_path, meta_json).map_err(|e| io_err(&meta_path, e))?;

    let html_path = dir.join("page.html");
    fs::write(&html_path, snapshot.html.as_bytes()).map_err(|e| io_err(&html_path, e))?;

    if let Some(img) = &snapshot.screenshot {
        let shot_path = dir.join("screenshot.png");
        img.save(&shot_path)
            .map_err(|e| SnapshotError::MalformedScreenshot(e.to_string()))?;
    }
    Ok(())
}

/// Computes the deduplication key for a snapshot.
///
/// Pure: equal `(url, html)` pairs always produce equal keys.
pub fn dedup_key(snapshot: &WebpageSnapshot) -> DedupKey {
    DedupKey {
        url_digest: Sha256::digest(snapshot.url.as_bytes()).into(),
        html_digest: Sha256::digest(snapshot.html.as_bytes()).into(),
    }
}

/// Scans a dataset root, yielding snapshots in lexicographic sample-id order
/// with exact duplicates dropped.
///
/// The first snapshot carrying a given [`DedupKey`] is retained; later ones
/// are listed in the report. Per-sample load failures are collected into the
/// report rather than aborting the scan.
pub fn scan_dataset(root: &Path) -> Result<(Vec<WebpageSnapshot>, DedupReport), SnapshotError> {
    let entries = fs::read_dir(root).map_err(|e| io_err(root, e))?;
    let mut dirs: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(root, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));

    let mut report = DedupReport::default();
    let mut seen: HashMap<DedupKey, String> = HashMap::new();
    let mut snapshots = Vec::new();
    for dir in dirs {
        let sample_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match load_snapshot(&dir) {
            Ok(snapshot) => {
                let key = dedup_key(&snapshot);
                match seen.get(&key) {
                    Some(retained) => report.duplicates.push(DuplicateEntry {
                        retained: retained.clone(),
                        dropped: snapshot.sample_id,
                    }),
                    None => {
                        seen.insert(key, snapshot.sample_id.clone());
                        snapshots.push(snapshot);
                    }
                }
            }
            Err(err) => report.errors.push(SampleError {
                sample_id,
                error: err.to_string(),
            }),
        }
    }
    Ok((snapshots, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn sample(url: &str, html: &str) -> WebpageSnapshot {
        WebpageSnapshot {
            sample_id: "s0".into(),
            url: url.into(),
            html: html.into(),
            screenshot: None,
            http_status: 200,
            captured_at: "2023-11-02T10:00:00Z".into(),
            user_agent: DEFAULT_USER_AGENT.into(),
            referrer: String::new(),
            label: None,
        }
    }

    fn write_sample(root: &Path, id: &str, url: &str, html: &str) {
        let mut snap = sample(url, html);
        snap.sample_id = id.into();
        save_snapshot(&snap, &root.join(id)).unwrap();
    }

    #[test]
    fn dedup_key_of_empty_strings_is_sha256_of_empty_input() {
        let key = dedup_key(&sample("", ""));
        let empty = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
        assert_eq!(hex::encode(key.url_digest), empty);
        assert_eq!(hex::encode(key.html_digest), empty);
    }

    #[test]
    fn dedup_key_matches_reference_sha256_fixture() {
        // Digests computed once with an independent SHA-256 tool (Python
        // hashlib) and pinned here.
        let key = dedup_key(&sample("https://a.example/x", "<html></html>"));
        assert_eq!(
            hex::encode(key.url_digest),
            "39021306bfa34811afd3241f2fb3c3aa85ffb75aa21c7bd4a6a0abef0e6b3bbd"
        );
        assert_eq!(
            hex::encode(key.html_digest),
            "b633a587c652d02386c4f16f8c6f6aab7352d97f16367c3c40576214372dd628"
        );
    }

    #[test]
    fn dedup_key_separates_urls_differing_by_one_byte() {
        let a = dedup_key(&sample("https://a.example/x", "<html></html>"));
        let b = dedup_key(&sample("https://a.example/y", "<html></html>"));
        assert_ne!(a.url_digest, b.url_digest);
        assert_eq!(a.html_digest, b.html_digest);
    }

    #[test]
    fn dedup_key_is_pure() {
        let snap = sample("https://a.example/x", "<p>hello</p>");
        let first = dedup_key(&snap);
        for _ in 0..1000 {
            assert_eq!(dedup_key(&snap), first);
        }
    }

    #[test]
    fn load_snapshot_reads_full_sample() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("whatsapp");
        let mut snap = sample(
            "https://www.whatsapp.com",
            "<html><title>WhatsApp</title></html>",
        );
        snap.sample_id = "whatsapp".into();
        snap.screenshot = Some(RgbImage::from_pixel(4, 3, image::Rgb([10, 200, 30])));
        save_snapshot(&snap, &dir).unwrap();

        let loaded = load_snapshot(&dir).unwrap();
        assert_eq!(loaded.url, "https://www.whatsapp.com");
        assert_eq!(loaded.http_status, 200);
        assert!(loaded.screenshot.is_some());
        assert_eq!(loaded, snap);
    }

    #[test]
    fn load_snapshot_missing_html_is_reported_by_name() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s1");
        save_snapshot(&sample("https://a.example/", "x"), &dir).unwrap();
        fs::remove_file(dir.join("page.html")).unwrap();
        match load_snapshot(&dir) {
            Err(SnapshotError::MissingFile(name)) => assert_eq!(name, "page.html"),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn load_snapshot_rejects_non_integer_status() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s1");
        fs::create_dir_all(&dir).unwrap();
        fs::write(
            dir.join("metadata.json"),
            r#"{"url":"https://a.example/","http_status":"OK","captured_at":"t","user_agent":"ua","referrer":""}"#,
        )
        .unwrap();
        fs::write(dir.join("page.html"), "<html></html>").unwrap();
        assert!(matches!(
            load_snapshot(&dir),
            Err(SnapshotError::MalformedMetadata(_))
        ));
    }

    #[test]
    fn load_snapshot_rejects_relative_url() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s1");
        fs::create_dir_all(&dir).unwrap();
        fs::write(
            dir.join("metadata.json"),
            r#"{"url":"/just/a/path","http_status":200,"captured_at":"t","user_agent":"ua","referrer":""}"#,
        )
        .unwrap();
        fs::write(dir.join("page.html"), "<html></html>").unwrap();
        match load_snapshot(&dir) {
            Err(SnapshotError::MalformedMetadata(msg)) => assert!(msg.contains("url")),
            other => panic!("expected MalformedMetadata, got {other:?}"),
        }
    }

    #[test]
    fn load_snapshot_rejects_phishing_label_without_brand() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s1");
        fs::create_dir_all(&dir).unwrap();
        fs::write(
            dir.join("metadata.json"),
            r#"{"url":"https://a.example/","http_status":200,"captured_at":"t","user_agent":"ua","referrer":"","label":{"class":"phishing"}}"#,
        )
        .unwrap();
        fs::write(dir.join("page.html"), "<html></html>").unwrap();
        assert!(matches!(
            load_snapshot(&dir),
            Err(SnapshotError::MalformedMetadata(_))
        ));
    }

    #[test]
    fn non_utf8_html_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s1");
        save_snapshot(&sample("https://a.example/", "x"), &dir).unwrap();
        fs::write(dir.join("page.html"), [0xff, 0xfe, 0x00]).unwrap();
        assert!(matches!(
            load_snapshot(&dir),
            Err(SnapshotError::NonUtf8Html)
        ));
    }

    #[test]
    fn scan_dedups_identical_url_html_pairs() {
        let tmp = tempfile::tempdir().unwrap();
        write_sample(tmp.path(), "a", "https://a.example/", "<html>same</html>");
        write_sample(tmp.path(), "b", "https://a.example/", "<html>same</html>");
        let (snaps, report) = scan_dataset(tmp.path()).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].sample_id, "a");
        assert_eq!(
            report.duplicates,
            vec![DuplicateEntry {
                retained: "a".into(),
                dropped: "b".into()
            }]
        );
    }

    #[test]
    fn scan_of_empty_root_is_empty() {
        let tmp = tempfile::tempdir().unwrap();
        let (snaps, report) = scan_dataset(tmp.path()).unwrap();
        assert!(snaps.is_empty());
        assert!(report.duplicates.is_empty());
        assert!(report.errors.is_empty());
    }

    #[test]
    fn scan_collects_per_sample_errors() {
        let tmp = tempfile::tempdir().unwrap();
        write_sample(tmp.path(), "a", "https://a.example/", "1");
        write_sample(tmp.path(), "b", "https://b.example/", "2");
        fs::create_dir_all(tmp.path().join("c")).unwrap(); // unreadable: no files
        let (snaps, report) = scan_dataset(tmp.path()).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].sample_id, "c");
    }

    #[test]
    fn capture_profile_defaults_match_capture_configuration() {
        let profile = CaptureProfile::default();
        assert_eq!(
            profile.user_agent,
            "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 \
             (KHTML, like Gecko) Chrome/116.0.0.0 Safari/537.36"
        );
        assert_eq!(profile.referrer_policy, ReferrerPolicy::SelfReferential);
        assert!(profile.mouse_movement);
    }

    #[test]
    fn dedup_report_jsonl_has_one_object_per_duplicate() {
        let report = DedupReport {
            duplicates: vec![DuplicateEntry {
                retained: "a".into(),
                dropped: "b".into(),
            }],
            errors: vec![],
        };
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"retained\":\"a\",\"dropped\":\"b\"}\n"
        );
    }

    proptest! {
        #[test]
        fn snapshot_roundtrips_through_disk(
            url_path in "[a-z]{1,8}",
            html in "[ -~]{0,64}",
            status in 100u16..=599,
            with_shot in any::<bool>(),
            w in 1u32..6,
            h in 1u32..6,
        ) {
            let tmp = tempfile::tempdir().unwrap();
            let dir = tmp.path().join("s");
            let snap = WebpageSnapshot {
                sample_id: "s".into(),
                url: format!("https://example.com/{url_path}"),
                html,
                screenshot: with_shot.then(|| {
                    RgbImage::from_fn(w, h, |x, y| {
                        image::Rgb([(x * 40) as u8, (y * 40) as u8, ((x + y) * 20) as u8])
                    })
                }),
                http_status: status,
                captured_at: "2023-12-01T00:00:00Z".into(),
                user_agent: "ua".into(),
                referrer: "https://example.com/".into(),
                label: Some(GroundTruth { class: LabelClass::Benign, brand: Some("Example".into()) }),
            };
            save_snapshot(&snap, &dir).unwrap();
            let loaded = load_snapshot(&dir).unwrap();
            prop_assert_eq!(loaded, snap);
        }

        #[test]
        fn scanned_snapshots_have_pairwise_distinct_keys(
            samples in proptest::collection::vec(("[ab]{1,2}", "[xy]{1,2}"), 1..8)
        ) {
            let tmp = tempfile::tempdir().unwrap();
            for (i, (path, html)) in samples.iter().enumerate() {
                write_sample(tmp.path(), &format!("s{i:02}"), &format!("https://d.example/{path}"), html);
            }
            let (snaps, report) = scan_dataset(tmp.path()).unwrap();
            let keys: HashSet<_> = snaps.iter().map(dedup_key).collect();
            prop_assert_eq!(keys.len(), snaps.len());
            prop_assert_eq!(snaps.len() + report.duplicates.len(), samples.len());
        }
    }
}

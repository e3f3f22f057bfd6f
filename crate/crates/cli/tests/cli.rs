use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pso_shield::samples;
use tempfile::TempDir;

fn sample_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples/case-study")
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        for f in ["config.toml", "annotations.json", "image.png"] {
            fs::copy(sample_dir().join(f), dir.path().join(f)).unwrap();
        }
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path("config.toml");
        Command::new(env!("CARGO_BIN_EXE_pso-shield"))
            .arg("--config")
            .arg(&config)
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("PSO_SHIELD_KEY_SERVICE")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.run(args).status.code().unwrap()
    }

    /// setup, three users and one protected container.
    fn provisioned() -> Self {
        let ws = Self::new();
        ws.ok(&["setup"]);
        ws.ok(&["register", "--user", "alice", "--attr", "a1", "--out", "alice.s2sk"]);
        ws.ok(&["register", "--user", "bob", "--attr", "a2", "--out", "bob.s2sk"]);
        ws.ok(&["register", "--user", "carol", "--attr", "a3", "--out", "carol.s2sk"]);
        ws.ok(&["protect", "--image", "image.png", "--annotations", "annotations.json"]);
        ws
    }

    fn container(&self) -> String {
        self.path("repository/case-study.s2sc").to_string_lossy().into_owned()
    }
}

fn pixels(path: &Path) -> Vec<u8> {
    let decoder = png::Decoder::new(fs::File::open(path).unwrap());
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    buf
}

#[test]
fn sample_image_matches_generator() {
    assert_eq!(
        pixels(&sample_dir().join("image.png")),
        samples::case_study_image().as_bytes()
    );
}

#[test]
fn setup_prints_nested_capability_matrix() {
    let ws = Workspace::new();
    let out = ws.ok(&["setup"]);
    assert!(out.contains("1      a1 ∨ a2 ∨ a3"), "{out}");
    assert!(out.contains("3      a2 ∨ a3"));
    assert!(out.contains("4      a3"));
    assert!(out.contains("a1           1          1\n"));
    assert!(out.contains("a3           4          1 2 3 4\n"));
    assert!(ws.path("keyservice/state.s2sk").exists());
    assert!(ws.path("repository/keys.s2sk").exists());
    // refuses to clobber existing keys
    assert_eq!(ws.code(&["setup"]), 2);
    ws.ok(&["setup", "--force"]);
}

#[test]
fn single_role_config() {
    let ws = Workspace::new();
    fs::write(ws.path("config.toml"), "[roles]\nonly = 4\n").unwrap();
    let out = ws.ok(&["setup"]);
    for g in 1..=4 {
        assert!(out.contains(&format!("{g}      only\n")), "{out}");
    }
}

#[test]
fn role_outside_group_range_is_rejected() {
    let ws = Workspace::new();
    fs::write(ws.path("config.toml"), "[roles]\nx = 5\n").unwrap();
    assert_eq!(ws.code(&["setup"]), 2);
}

#[test]
fn group_nobody_can_open_is_rejected() {
    let ws = Workspace::new();
    fs::write(ws.path("config.toml"), "[roles]\nlow = 2\n").unwrap();
    let out = ws.run(&["setup"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!ws.path("keyservice/state.s2sk").exists());
}

#[test]
fn register_refuses_duplicates_without_force() {
    let ws = Workspace::new();
    ws.ok(&["setup"]);
    ws.ok(&["register", "--user", "dan", "--attr", "a2", "--out", "dan.s2sk"]);
    assert_eq!(
        ws.code(&["register", "--user", "dan", "--attr", "a2", "--out", "dan2.s2sk"]),
        2
    );
    ws.ok(&[
        "register", "--user", "dan", "--attr", "a1", "--out", "dan.s2sk", "--force",
    ]);
    let roster = fs::read_to_string(ws.path("keyservice/roster.json")).unwrap();
    assert!(roster.contains("\"dan\""));
    let out = ws.ok(&["register", "--user", "eve"]);
    assert!(out.contains("opens no sensitivity group"));
    assert!(ws.path("eve.s2sk").exists());
}

#[test]
fn register_before_setup_fails_as_io() {
    let ws = Workspace::new();
    assert_eq!(ws.code(&["register", "--user", "x", "--attr", "a1"]), 1);
}

#[test]
fn protect_assigns_worked_example_groups() {
    let ws = Workspace::new();
    ws.ok(&["setup"]);
    let out = ws.run(&["protect", "--image", "image.png", "--annotations", "annotations.json"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("\"date\" -> \"birthdate\""), "{stderr}");

    let json = ws.ok(&["inspect", "--json", &ws.container()]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let groups: Vec<u64> = v["psos"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["group"].as_u64().unwrap())
        .collect();
    assert_eq!(groups, vec![1, 2, 2, 3, 3, 4, 4, 4]);
    let labels: Vec<&str> = v["psos"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["label"].as_str().unwrap())
        .collect();
    assert_eq!(
        labels,
        vec![
            "driver_license",
            "person",
            "location",
            "date",
            "face",
            "birthdate",
            "name",
            "signature"
        ]
    );
}

#[test]
fn protect_without_annotations_stores_clean_image() {
    let ws = Workspace::new();
    ws.ok(&["setup"]);
    fs::write(
        ws.path("empty.json"),
        r#"{"image_id":"blank","width":240,"height":160,"objects":[]}"#,
    )
    .unwrap();
    ws.ok(&[
        "protect",
        "--image",
        "image.png",
        "--annotations",
        "empty.json",
        "--out",
        "blank.s2sc",
    ]);
    ws.ok(&["unlock", "blank.s2sc", "--out", "blank.png"]);
    assert_eq!(pixels(&ws.path("blank.png")), pixels(&ws.path("image.png")));
}

#[test]
fn protect_rejects_dimension_mismatch() {
    let ws = Workspace::new();
    ws.ok(&["setup"]);
    fs::write(
        ws.path("bad.json"),
        r#"{"image_id":"x","width":10,"height":10,"objects":[]}"#,
    )
    .unwrap();
    assert_eq!(
        ws.code(&["protect", "--image", "image.png", "--annotations", "bad.json"]),
        2
    );
}

#[test]
fn unlock_restores_by_clearance() {
    let ws = Workspace::provisioned();
    let original = pixels(&ws.path("image.png"));
    let c = ws.container();

    let out = ws.ok(&["unlock", &c, "--key", "carol.s2sk", "--out", "carol.png"]);
    assert!(out.contains("opened groups 1 2 3 4"));
    assert_eq!(pixels(&ws.path("carol.png")), original);

    let out = ws.ok(&["unlock", &c, "--key", "alice.s2sk", "--out", "alice.png"]);
    assert!(out.contains("restored PSOs: [0]"), "{out}");
    let alice = pixels(&ws.path("alice.png"));
    assert_ne!(alice, original);

    let out = ws.ok(&["unlock", &c, "--key", "bob.s2sk", "--out", "bob.png"]);
    assert!(out.contains("still scrambled: [5, 6, 7]"), "{out}");

    // the cache written on first use serves later runs
    assert!(ws.path("alice.s2sk.store").exists());
    let again = ws.ok(&["unlock", &c, "--key", "alice.s2sk", "--out", "alice2.png"]);
    assert!(again.contains("restored PSOs: [0]"));
    assert_eq!(pixels(&ws.path("alice2.png")), alice);
}

#[test]
fn unlock_without_key_exports_scrambled() {
    let ws = Workspace::provisioned();
    ws.ok(&["unlock", &ws.container(), "--out", "scrambled.png"]);
    let alice = {
        ws.ok(&["unlock", &ws.container(), "--key", "alice.s2sk", "--out", "alice.png"]);
        pixels(&ws.path("alice.png"))
    };
    let scrambled = pixels(&ws.path("scrambled.png"));
    assert_ne!(scrambled, pixels(&ws.path("image.png")));
    assert_ne!(scrambled, alice);
}

#[test]
fn unlock_denied_key_exits_3() {
    let ws = Workspace::provisioned();
    ws.ok(&["register", "--user", "mallory", "--out", "m.s2sk"]);
    let out = ws.run(&["unlock", &ws.container(), "--key", "m.s2sk", "--out", "m.png"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no authorized sensitivity group"));
    assert!(!ws.path("m.png").exists());
}

#[test]
fn tampered_container_exits_4() {
    let ws = Workspace::provisioned();
    let mut bytes = fs::read(ws.container()).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(ws.path("bad.s2sc"), &bytes).unwrap();
    assert_eq!(ws.code(&["inspect", "bad.s2sc"]), 4);
    assert_eq!(
        ws.code(&["unlock", "bad.s2sc", "--key", "carol.s2sk", "--out", "x.png"]),
        4
    );
}

#[test]
fn verify_reports_damage() {
    let ws = Workspace::provisioned();
    let out = ws.ok(&["verify"]);
    assert!(out.contains("repository ok"));
    let mut bytes = fs::read(ws.container()).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 1;
    fs::write(ws.container(), bytes).unwrap();
    let out = ws.run(&["verify"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn inspect_needs_no_config_or_key() {
    let ws = Workspace::provisioned();
    let out = Command::new(env!("CARGO_BIN_EXE_pso-shield"))
        .args(["inspect", &ws.container()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("case-study: 240x160x3, 4 groups, 8 PSOs"));
}

#[test]
fn bench_writes_csv() {
    let ws = Workspace::new();
    ws.ok(&[
        "bench",
        "--images",
        "3",
        "--min-side",
        "64",
        "--max-side",
        "160",
        "--repetitions",
        "1",
        "--csv",
        "out.csv",
    ]);
    let csv = fs::read_to_string(ws.path("out.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "image_id,pixels,encrypt_s,decrypt_s_1,decrypt_s_2,decrypt_s_3,decrypt_s_4,clean_bytes,container_bytes"
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn bench_over_png_corpus() {
    let ws = Workspace::new();
    fs::create_dir(ws.path("corpus")).unwrap();
    fs::copy(ws.path("image.png"), ws.path("corpus/one.png")).unwrap();
    fs::copy(ws.path("annotations.json"), ws.path("corpus/one.json")).unwrap();
    let csv = ws.ok(&["bench", "--corpus", "corpus", "--repetitions", "1"]);
    assert!(csv.lines().nth(1).unwrap().starts_with("case-study,"), "{csv}");
}

#[test]
fn key_service_path_from_environment() {
    let ws = Workspace::new();
    let elsewhere = ws.path("vault/state.s2sk");
    let out = Command::new(env!("CARGO_BIN_EXE_pso-shield"))
        .arg("--config")
        .arg(ws.path("config.toml"))
        .arg("setup")
        .env("PSO_SHIELD_KEY_SERVICE", &elsewhere)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(elsewhere.exists());
    assert!(!ws.path("keyservice/state.s2sk").exists());
}

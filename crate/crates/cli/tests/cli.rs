use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use componerf::checkpoint::load_checkpoint;
use componerf::fixtures;
use componerf::layout::parse_layout;
use componerf_stub::{spawn, StubConfig};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/two_spheres").join(name)
}

fn run(args: &[&str]) -> Output {
    run_env(args, None)
}

fn run_env(args: &[&str], url: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_componerf"));
    cmd.args(args).env_remove("COMPONERF_GUIDANCE_URL");
    if let Some(u) = url {
        cmd.env("COMPONERF_GUIDANCE_URL", u);
    }
    cmd.output().unwrap()
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_else(|| panic!("no stderr; stdout {}", String::from_utf8_lossy(&out.stdout)));
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not a JSON error line ({e}): {text}"))
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const QUICK: &[&str] = &["--preset", "desk", "--color", "rgb", "--resolution", "12"];

fn compose_mock(out: &Path, steps: &str, extra: &[&str]) -> Output {
    let layout = fixture("layout.json");
    let guidance = format!("mock:{}", fixture("target.json").display());
    let mut args = vec!["compose", "--layout", p(&layout), "--out", p(out), "--steps", steps, "--guidance", &guidance];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn fixture_files_match_the_library_fixture() {
    let layout = parse_layout(&std::fs::read_to_string(fixture("layout.json")).unwrap()).unwrap();
    assert_eq!(layout, fixtures::two_sphere_layout());
    let target =
        componerf::analytic::AnalyticScene::parse(&std::fs::read_to_string(fixture("target.json")).unwrap()).unwrap();
    assert_eq!(target, fixtures::two_sphere_target());
}

#[test]
fn compose_writes_checkpoint_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = compose_mock(dir.path(), "4", &["--snapshot-every", "2"]);
    assert_ok(&out);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["steps"], 4);
    let (scene, layout) = load_checkpoint(&dir.path().join("scene.ckpt")).unwrap();
    assert_eq!(scene.step, 4);
    assert_eq!(layout, fixtures::two_sphere_layout());
    for step in [2, 4] {
        for (kind, id) in [("global", "scene"), ("local", "red"), ("local", "blue")] {
            for suffix in ["image", "weights_sum"] {
                let f = dir.path().join(format!("snapshots/step_{step}_{kind}_{id}_{suffix}.png"));
                assert!(f.is_file(), "missing {}", f.display());
            }
        }
    }
}

#[test]
fn deterministic_reruns_are_bitwise_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_ok(&compose_mock(d.path(), "3", &["--deterministic", "--seed", "42", "--snapshot-every", "0"]));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("scene.ckpt")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(load_checkpoint(&a.path().join("scene.ckpt")).unwrap().1.seed, 42);
}

#[test]
fn config_errors_exit_2_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&["compose", "--layout", p(&missing), "--out", p(dir.path()), "--guidance", "mock:x.json"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains(p(&missing)));

    let layout = fixture("layout.json");
    let bad = run(&["compose", "--layout", p(&layout), "--out", p(dir.path()), "--guidance", "sd:1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_line(&bad)["error"], "ConfigError");

    let none = run(&["compose", "--layout", p(&layout), "--out", p(dir.path())]);
    assert_eq!(none.status.code(), Some(2));

    let unknown_flag = run(&["render", "--bogus"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
    assert_eq!(error_line(&unknown_flag)["exit_code"], 2);
}

#[test]
fn unreachable_service_exits_3_with_a_partial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let layout = fixture("layout.json");
    let url = format!("remote:http://{port}");
    let out = run(&[
        "compose", "--layout", p(&layout), "--out", p(dir.path()), "--steps", "5", "--guidance", &url,
        "--preset", "desk", "--resolution", "8",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "GuidanceFailure");
    let (scene, _) = load_checkpoint(&dir.path().join("scene.ckpt")).unwrap();
    assert_eq!(scene.step, 0);
}

#[test]
fn environment_names_the_default_service() {
    let stub = spawn(StubConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let layout = fixture("layout.json");
    let out = run_env(
        &[
            "compose", "--layout", p(&layout), "--out", p(dir.path()), "--steps", "2", "--preset", "desk",
            "--resolution", "8", "--snapshot-every", "0", "--deterministic",
        ],
        Some(&stub.url()),
    );
    assert_ok(&out);
    // global + one call per node, per step
    assert_eq!(stub.request_ids().len(), 6);
}

#[test]
fn render_is_repeatable_and_orbits() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&compose_mock(dir.path(), "2", &["--snapshot-every", "0"]));
    let ckpt = dir.path().join("scene.ckpt");
    let orbit = dir.path().join("orbit");
    assert_ok(&run(&["render", "--ckpt", p(&ckpt), "--out", p(&orbit), "--frames", "8", "--resolution", "16"]));
    let pngs = std::fs::read_dir(&orbit)
        .unwrap()
        .filter(|e| {
            let n = e.as_ref().unwrap().file_name().into_string().unwrap();
            n.ends_with(".png") && !n.contains("weights")
        })
        .count();
    assert_eq!(pngs, 8);

    let single = |name: &str| {
        let out = dir.path().join(name);
        assert_ok(&run(&[
            "render", "--ckpt", p(&ckpt), "--out", p(&out), "--frames", "1", "--azimuth", "0", "--resolution", "16",
        ]));
        std::fs::read(out.join("frame_000.png")).unwrap()
    };
    assert_eq!(single("a"), single("b"));

    let local = dir.path().join("local");
    assert_ok(&run(&["render", "--ckpt", p(&ckpt), "--out", p(&local), "--frames", "1", "--node", "red", "--resolution", "8"]));
    let bad = run(&["render", "--ckpt", p(&ckpt), "--out", p(&local), "--node", "green"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn damaged_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&compose_mock(dir.path(), "1", &["--snapshot-every", "0"]));
    let ckpt = dir.path().join("scene.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&["render", "--ckpt", p(&cut), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    let mut other = bytes.clone();
    other[16] = 9;
    std::fs::write(&cut, &other).unwrap();
    let out = run(&["eval", "--ckpt", p(&cut), "--guidance", "mock:x"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"], "VersionMismatch");
}

fn latent_checkpoint(dir: &Path) -> PathBuf {
    let layout = fixture("layout.json");
    let out = dir.join("latent");
    assert_ok(&run(&["recompose", "--layout", p(&layout), "--out", p(&out), "--preset", "desk", "--color", "latent"]));
    out.join("scene.ckpt")
}

#[test]
fn latent_rgb_renders_need_a_decoder() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = latent_checkpoint(dir.path());
    let frames = dir.path().join("frames");
    let out = run(&["render", "--ckpt", p(&ckpt), "--out", p(&frames), "--frames", "1", "--rgb", "--resolution", "8"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "DecodeUnavailable");

    let raw = run(&["render", "--ckpt", p(&ckpt), "--out", p(&frames), "--frames", "1", "--resolution", "8"]);
    assert_ok(&raw);
    assert!(frames.join("frame_000.latent").is_file());

    let stub = spawn(StubConfig::default()).unwrap();
    let url = format!("remote:{}", stub.url());
    let rgb = dir.path().join("rgb");
    assert_ok(&run(&[
        "render", "--ckpt", p(&ckpt), "--out", p(&rgb), "--frames", "1", "--rgb", "--guidance", &url, "--resolution", "8",
    ]));
    let bytes = std::fs::read(rgb.join("frame_000.png")).unwrap();
    // PNG IHDR width/height
    assert_eq!(u32::from_be_bytes(bytes[16..20].try_into().unwrap()), 16);
    assert_eq!(u32::from_be_bytes(bytes[20..24].try_into().unwrap()), 16);
}

#[test]
fn decompose_then_recompose_reproduces_node_renders() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&compose_mock(dir.path(), "3", &["--snapshot-every", "0"]));
    let ckpt = dir.path().join("scene.ckpt");
    let caches = dir.path().join("caches");
    assert_ok(&run(&["decompose", "--ckpt", p(&ckpt), "--out", p(&caches)]));
    assert!(caches.join("red.cnode").is_file() && caches.join("blue.cnode").is_file());

    let only = dir.path().join("only");
    assert_ok(&run(&["decompose", "--ckpt", p(&ckpt), "--out", p(&only), "--node", "blue"]));
    assert_eq!(std::fs::read_dir(&only).unwrap().count(), 1);

    let mut layout = fixtures::two_sphere_layout();
    for b in &mut layout.boxes {
        b.cache_ref = Some(format!("caches/{}.cnode", b.id).into());
    }
    let edited = dir.path().join("edited.json");
    std::fs::write(&edited, componerf::layout::serialize_layout(&layout)).unwrap();
    let re = dir.path().join("re");
    assert_ok(&run(&["recompose", "--layout", p(&edited), "--out", p(&re), "--ckpt", p(&ckpt)]));

    let render_red = |c: &Path, name: &str| {
        let out = dir.path().join(name);
        assert_ok(&run(&["render", "--ckpt", p(c), "--out", p(&out), "--frames", "1", "--node", "red", "--resolution", "16"]));
        std::fs::read(out.join("frame_000.png")).unwrap()
    };
    assert_eq!(render_red(&ckpt, "r0"), render_red(&re.join("scene.ckpt"), "r1"));

    layout.boxes[1].cache_ref = Some("caches/missing.cnode".into());
    std::fs::write(&edited, componerf::layout::serialize_layout(&layout)).unwrap();
    let out = run(&["recompose", "--layout", p(&edited), "--out", p(&re), "--ckpt", p(&ckpt)]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"], "MissingCache");
}

#[test]
fn eval_reports_oracle_psnr_and_clip_scores() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&compose_mock(dir.path(), "2", &["--snapshot-every", "0"]));
    let ckpt = dir.path().join("scene.ckpt");
    let target = format!("mock:{}", fixture("target.json").display());
    let report = dir.path().join("eval/oracle.json");
    assert_ok(&run(&["eval", "--ckpt", p(&ckpt), "--guidance", &target, "--frames", "4", "--resolution", "8", "--out", p(&report)]));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["mode"], "oracle");
    assert_eq!(r["views"].as_array().unwrap().len(), 4);
    let mean = r["views"].as_array().unwrap().iter().map(|v| v["score"].as_f64().unwrap()).sum::<f64>() / 4.0;
    assert!((r["mean"].as_f64().unwrap() - mean).abs() < 1e-9);

    let stub = spawn(StubConfig::default()).unwrap();
    let url = format!("remote:{}", stub.url());
    let clip = || {
        let out = run(&["eval", "--ckpt", p(&ckpt), "--guidance", &url, "--frames", "3", "--resolution", "8"]);
        assert_ok(&out);
        serde_json::from_slice::<Value>(&out.stdout).unwrap()
    };
    let (a, b) = (clip(), clip());
    assert_eq!(a["mode"], "clip");
    assert_eq!(a["prompt"], "a red ball and a blue ball");
    assert_eq!(a, b);

    let missing = run(&["eval", "--ckpt", p(&ckpt)]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(error_line(&missing)["message"].as_str().unwrap().contains("no target"));
}

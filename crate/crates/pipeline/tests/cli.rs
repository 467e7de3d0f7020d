use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use echosyn_pipeline::cli::{all_flags, cli_reference, subcommand_names};
use echosyn_pipeline::protocol::ProtocolReport;
use echosyn_pipeline::store::Run;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tiny() -> PathBuf {
    root().join("configs/tiny.toml")
}

fn echosyn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echosyn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout
}

fn tiny_protocol(out: &Path) -> String {
    ok(&echosyn(&["--config", tiny().to_str().unwrap(), "protocol"], out))
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, d: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// One tiny protocol run shared by the tests that only read it.
fn shared() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        tiny_protocol(d.path());
        d
    })
    .path()
}

#[test]
fn tiny_protocol_report_is_consistent() {
    let dir = shared();
    let r = ProtocolReport::load(&Run::existing(dir, true).unwrap()).unwrap();
    for (stage, files) in &r.artifacts {
        for a in files {
            assert!(dir.join(a).exists(), "{a} from `{stage}` is listed but missing");
        }
    }
    let f = &r.filter;
    assert!(f.attempted - f.rejected >= f.target);
    assert!((r.rejection_rate() - f.rejected as f64 / f.attempted as f64).abs() < 1e-12);
    let anchors = fs::read_to_string(dir.join("synthetic/anchors.csv")).unwrap();
    assert_eq!(anchors.lines().count() - 1, f.target);
    let manifest = echosyn_core::echotoy::DatasetManifest::load(&dir.join("data/synthetic/manifest.csv")).unwrap();
    assert_eq!(manifest.records.len(), f.target);
    assert!(r.real_on_real().is_some() && r.syn_on_real().is_some());
    let text = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(text.contains(&r.config_hash));
    assert!(text.contains("privacy filter"));
}

#[test]
fn reruns_are_bit_identical() {
    let other = tempfile::tempdir().unwrap();
    tiny_protocol(other.path());
    let a = snapshot(shared());
    let b = snapshot(other.path());
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        if k == "timings.csv" {
            continue;
        }
        assert!(v == &b[k], "{k} differs between runs");
    }
}

#[test]
fn resume_skips_finished_stages() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let cfg = cfg.to_str().unwrap();
    ok(&echosyn(&["--config", cfg, "synth-data"], d.path()));
    ok(&echosyn(&["--config", cfg, "encode"], d.path()));
    let o = echosyn(&["--config", cfg, "--resume", "encode"], d.path());
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[encode] up to date, skipped"));
    // Without --resume the stage runs again.
    let o = echosyn(&["--config", cfg, "encode"], d.path());
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[encode] running"));
}

#[test]
fn filter_before_calibrate_names_the_missing_stage() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let cfg = cfg.to_str().unwrap();
    ok(&echosyn(&["--config", cfg, "synth-data"], d.path()));
    let o = echosyn(&["--config", cfg, "filter"], d.path());
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("run `echosyn"), "{err}");
}

#[test]
fn a_run_directory_keeps_its_config() {
    let d = tempfile::tempdir().unwrap();
    ok(&echosyn(&["--config", tiny().to_str().unwrap(), "synth-data"], d.path()));
    let o = echosyn(&["--config", tiny().to_str().unwrap(), "--seed", "8", "synth-data"], d.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fresh --out"));
}

#[test]
fn protocol_refuses_a_used_directory_without_resume() {
    let d = tempfile::tempdir().unwrap();
    ok(&echosyn(&["--config", tiny().to_str().unwrap(), "synth-data"], d.path()));
    let o = echosyn(&["--config", tiny().to_str().unwrap(), "protocol"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_nonzero() {
    let d = tempfile::tempdir().unwrap();
    for args in [&["no-such-command"][..], &["bench", "--lengths", "x"], &["generate", "--ef", "50"], &[]] {
        let o = echosyn(args, d.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    let bad = d.path().join("bad.toml");
    fs::write(&bad, "[data]\nvidoes = 3\n").unwrap();
    let o = echosyn(&["--config", bad.to_str().unwrap(), "synth-data"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_animates_a_given_anchor() {
    let dir = shared();
    let out = tempfile::tempdir().unwrap();
    let target = out.path().join("one.evt");
    // A pixel frame taken from a real video; the command encodes it.
    let real = echosyn_core::video::load(&dir.join("data/real/videos/real-00000.evt")).unwrap();
    let frame = real.slice_rows(0, 1).unwrap();
    let anchor = out.path().join("anchor.evt");
    echosyn_core::video::save(&anchor, &frame).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_echosyn"))
        .args(["--config", tiny().to_str().unwrap(), "--out"])
        .arg(dir)
        .args(["generate", "--frames", "48", "--ef", "60", "--anchor"])
        .arg(&anchor)
        .arg("--output")
        .arg(&target)
        .output()
        .unwrap();
    ok(&o);
    let bytes = fs::read(&target).unwrap();
    assert_eq!(&bytes[..4], b"EVT1");
    let v = echosyn_core::video::load(&target).unwrap();
    assert_eq!(v.shape()[0], 48);
    assert_eq!(v.shape()[2..], real.shape()[2..]);
}

#[test]
fn cli_reference_is_current() {
    let doc = fs::read_to_string(root().join("docs/CLI.md")).unwrap();
    assert_eq!(doc, cli_reference(), "docs/CLI.md is stale; regenerate it with the write_reference example");
}

#[test]
fn documented_flags_and_commands_exist() {
    let flags = all_flags();
    let subs = subcommand_names();
    let mut docs = vec![root().join("README.md")];
    for e in fs::read_dir(root().join("docs")).unwrap() {
        docs.push(e.unwrap().path());
    }
    for path in docs {
        let text = fs::read_to_string(&path).unwrap();
        for (i, _) in text.match_indices("--") {
            let rest = &text[i + 2..];
            let name: String = rest.chars().take_while(|c| c.is_ascii_lowercase() || *c == '-').collect();
            let prev = text[..i].chars().last();
            if !name.starts_with(|c: char| c.is_ascii_lowercase()) || prev.is_some_and(|c| c.is_alphanumeric() || c == '-') {
                continue;
            }
            // Cargo's own flags are fine.
            if [
                "release",
                "workspace",
                "no-default-features",
                "features",
                "bench",
                "test",
                "offline",
                "nocapture",
                "example",
                "package",
            ]
            .contains(&name.as_str())
            {
                continue;
            }
            assert!(flags.contains(&name), "{}: unknown flag --{name}", path.display());
        }
        for line in text.lines() {
            for (i, _) in line.match_indices("echosyn ") {
                if line[..i].ends_with('/') || line[..i].chars().last().is_some_and(|c| c.is_alphanumeric()) {
                    continue;
                }
                let word: String = line[i + 8..].chars().take_while(|c| c.is_ascii_lowercase() || *c == '-').collect();
                if !word.is_empty() && !word.starts_with('-') {
                    assert!(subs.contains(&word), "{}: unknown command `echosyn {word}`", path.display());
                }
            }
        }
    }
}

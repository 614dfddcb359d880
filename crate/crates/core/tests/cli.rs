use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPECTRUM: &str = "kind = Spectrum\nseed = 3\n\n[operator]\nkind = BlockAverageSr\nfactor = 2\nheight = 8\nwidth = 8\n\n[graph]\ntopologies = Grid4NN, Identity\n";

fn gsnr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsnr")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn spectrum_writes_listed_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", SPECTRUM);
    let out = dir.path().join("out");
    let o = gsnr(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let listed = String::from_utf8(o.stdout).unwrap();
    for file in ["spectrum.csv", "spectrum.svg", "manifest.txt"] {
        assert!(listed.contains(file), "{file} missing from {listed}");
        assert!(out.join(file).is_file());
    }
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed") && manifest.contains("config_sha256"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", SPECTRUM);
    let read = |sub: &str| {
        let out = dir.path().join(sub);
        assert!(gsnr(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
        fs::read(out.join("spectrum.csv")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = "kind = Coverage\nseed = 1\n\n[operator]\nkind = BlockAverageSr\nfactor = 2\nheight = 8\nwidth = 8\n\n[graph]\ntopologies = Grid4NN\n\n[select]\ncoverage_samples = 100\n";
    let cfg = write_config(dir.path(), "c.cfg", text);
    let run = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        let o = gsnr(&["coverage", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("coverage.csv")).unwrap()
    };
    assert_ne!(run("a", "1"), run("b", "2"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let no_seed = write_config(dir.path(), "a.cfg", &SPECTRUM.replace("seed = 3\n", ""));
    let bad_key = write_config(dir.path(), "b.cfg", &format!("{SPECTRUM}bogus = 1\n"));
    let missing = dir.path().join("missing.cfg");
    for cfg in [no_seed.as_str(), bad_key.as_str(), missing.to_str().unwrap()] {
        let o = gsnr(&["spectrum", "--config", cfg, "--out", out]);
        assert_eq!(o.status.code(), Some(2), "{cfg}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
}

#[test]
fn kind_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", SPECTRUM);
    let o = gsnr(&["coverage", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_falls_back_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-config");
    let text = SPECTRUM.replace("seed = 3\n", &format!("seed = 3\nout = {}\n", target.display()));
    let cfg = write_config(dir.path(), "s.cfg", &text);
    assert!(gsnr(&["spectrum", "--config", &cfg]).status.success());
    assert!(target.join("spectrum.csv").is_file());
}

#[test]
fn help_documents_exit_codes_and_constants() {
    for args in [vec!["--help"], vec!["reconstruct", "--help"]] {
        let o = gsnr(&args);
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        assert!(text.contains("2 config error") && text.contains("3 numerical failure"), "{text}");
        assert!(text.contains("burn-in"));
    }
    let o = gsnr(&["--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in ["spectrum", "coverage", "predictability", "select-p", "minimax", "reconstruct", "ablate-convergence", "perturb"] {
        assert!(text.contains(sub), "{sub}");
    }
}

//! End-to-end tests of the command-line binary: artifact determinism, the
//! corrector cache, command resolution, and error reporting on bad configs.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_homog2d")
}

fn run_args(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    cmd.env_remove("HOMOG2D_CACHE");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn tiny_config(out: &Path, command_line: &str) -> String {
    format!(
        "{command_line}preset = \"identity\"\n[run]\ntorus_n = 16\ncells_per_period = 4\n\
         eps = [0.5, 0.25, 0.125]\nlambda = 1.0\nout = {:?}\n",
        out.to_str().unwrap()
    )
}

#[test]
fn all_run_is_deterministic_and_reuses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("artifacts");
    let cfg = write_config(dir.path(), "run.toml", &tiny_config(&out, ""));

    let first = run_args(&["all", "--config", &cfg], &[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("computed and cached"), "{stdout}");
    assert!(stdout.lines().last().unwrap().contains("flagged"));

    let read = |name: &str| std::fs::read(out.join(name)).unwrap();
    let baseline: Vec<(String, Vec<u8>)> = ["effective.csv", "rates.csv", "green_report.csv"]
        .iter()
        .map(|n| (n.to_string(), read(n)))
        .collect();

    let second = run_args(&["all", "--config", &cfg], &[]);
    assert!(second.status.success());
    let stdout2 = String::from_utf8_lossy(&second.stdout);
    assert!(stdout2.contains("loaded from cache"), "{stdout2}");
    for (name, bytes) in &baseline {
        assert_eq!(&read(name), bytes, "{name} changed between identical runs");
    }
}

#[test]
fn command_resolution_prefers_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // Config says `cell`; no positional argument uses it.
    let cfg = write_config(dir.path(), "c.toml", &tiny_config(&out, "command = \"cell\"\n"));
    let r = run_args(&["--config", &cfg], &[]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.join("effective.csv").exists());

    // Positional `effective` overrides the config's `cell`.
    let r = run_args(&["effective", "--config", &cfg], &[]);
    assert!(r.status.success());
    assert!(out.join("effective.csv").exists());

    // No command anywhere is a config error.
    let cfg2 = write_config(dir.path(), "n.toml", &tiny_config(&out, ""));
    let r = run_args(&["--config", &cfg2], &[]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("no command"));

    // Unknown command names the candidates.
    let r = run_args(&["warp", "--config", &cfg], &[]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("unknown command"));
}

#[test]
fn cache_directory_precedence_is_cli_env_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.toml", &tiny_config(&out, ""));
    let env_cache = dir.path().join("env_cache");
    let cli_cache = dir.path().join("cli_cache");

    // Environment variable redirects the cache.
    let r = run_args(
        &["cell", "--config", &cfg],
        &[("HOMOG2D_CACHE", env_cache.to_str().unwrap())],
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(env_cache.read_dir().unwrap().next().is_some());
    assert!(!out.join("cache").exists());

    // The --cache flag beats the environment.
    let r = run_args(
        &["cell", "--config", &cfg, "--cache", cli_cache.to_str().unwrap()],
        &[("HOMOG2D_CACHE", env_cache.to_str().unwrap())],
    );
    assert!(r.status.success());
    assert!(cli_cache.read_dir().unwrap().next().is_some());
}

#[test]
fn bad_configs_fail_with_named_offenses() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let fail = |body: &str, needle: &str| {
        let cfg = write_config(dir.path(), "bad.toml", body);
        let r = run_args(&["all", "--config", &cfg], &[]);
        assert!(!r.status.success(), "config should fail: {body}");
        let err = String::from_utf8_lossy(&r.stderr);
        assert!(err.contains(needle), "stderr {err:?} missing {needle:?}");
    };

    fail("preset = \"identity\"\ntorus = 7\n", "torus");
    fail("preset = \"identity\"\npreset = \"laminate\"\n", "duplicate");
    fail("preset = \"zigzag\"\n", "zigzag");
    fail(
        "preset = \"identity\"\n[run]\neps = [0.3333333333333333]\n",
        "commensurate",
    );
    fail(
        "[coefficients]\nm = 1\n[coefficients.A.3.1.1.1]\nconstant = 1.0\n",
        "coefficients.A.3",
    );

    // A missing config file is reported, not panicked on.
    let r = run_args(&["all", "--config", dir.path().join("nope.toml").to_str().unwrap()], &[]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("cannot read"));
    let _ = out;
}

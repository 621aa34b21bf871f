use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
preset = heterogeneity
num_communities = 2
samples_per_community = 120
rounds = 3
batch_size = 16
seeds = 4
";

fn fedmeter(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedmeter"))
        .args(args)
        .current_dir(dir)
        .env_remove("FEDMETER_SEED")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_all_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    for out in ["a", "b"] {
        let o = fedmeter(&["run", "--config", &cfg, "--output_dir", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(
        text.starts_with("run,round,client,available,provenance,test_nrmse,train_loss,epsilon\n")
    );
    // 3 methods x 3 rounds x 2 clients
    assert_eq!(text.lines().count(), 1 + 3 * 3 * 2);

    let run_dir = dir.path().join("a/runs/A4_nc0_epsinf_mu0.0005_e10_s4");
    let per_run = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(
        per_run.starts_with("round,client,available,provenance,test_nrmse,train_loss,epsilon\n")
    );

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/summary.json")).unwrap())
            .unwrap();
    let rows = summary["table"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["method"], "A1");
    assert!(rows[0]["epsilon"].is_null());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.cfg",
        &format!("{SMALL}methods = A4\noutput_dir = first\n"),
    );
    assert!(fedmeter(&["run", "--config", &cfg], dir.path())
        .status
        .success());
    let resolved = dir
        .path()
        .join("first/config_resolved.txt")
        .display()
        .to_string();
    let o = fedmeter(
        &["run", "--config", &resolved, "--output_dir", "second"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(dir.path().join("first/metrics.csv")).unwrap(),
        fs::read(dir.path().join("second/metrics.csv")).unwrap()
    );
    // Single sweep point: the top-level file is the plain per-run layout.
    let text = fs::read_to_string(dir.path().join("first/metrics.csv")).unwrap();
    assert!(text.starts_with("round,client,"));
}

#[test]
fn seed_env_overrides_master_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        "rounds = 2\nnum_communities = 2\nsamples_per_community = 60\n",
    );
    let o = Command::new(env!("CARGO_BIN_EXE_fedmeter"))
        .args(["run", "--config", &cfg, "--output_dir", "env"])
        .current_dir(dir.path())
        .env("FEDMETER_SEED", "31")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(dir.path().join("env/config_resolved.txt")).unwrap();
    assert!(resolved.contains("master_seed = 31\n"));
    assert!(dir
        .path()
        .join("env/runs/A4_nc0_epsinf_mu0.0005_e10_s31")
        .is_dir());
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.cfg", "lr_personalized = -0.01\n");
    let o = fedmeter(&["validate", "--config", &bad], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lr_personalized"));

    let o = fedmeter(&["run", "--config", &bad], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let unknown = write_config(dir.path(), "unknown.cfg", "speed = 3\n");
    assert_eq!(
        fedmeter(&["run", "--config", &unknown], dir.path())
            .status
            .code(),
        Some(2)
    );
    let missing = dir.path().join("missing.cfg").display().to_string();
    assert_eq!(
        fedmeter(&["validate", "--config", &missing], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_failure_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let cfg = write_config(
        dir.path(),
        "csv.cfg",
        "data_source = csv_dir\ncsv_dir = empty\nrounds = 1\n",
    );
    let o = fedmeter(&["run", "--config", &cfg], dir.path());
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn csv_dir_source_runs_one_client_per_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    for (name, scale) in [("a.csv", 1.0), ("b.csv", 2.0)] {
        let mut text =
            String::from("timestamp,net_load,irradiance,temperature,humidity,wind_speed,pv\n");
        for i in 0..40 {
            let irr = (i % 10) as f64 * 100.0;
            let pv = scale * irr / 1000.0;
            text.push_str(&format!(
                "t{i},{},{irr},{},50,3,{pv}\n",
                1.0 - pv,
                20 + i % 5
            ));
        }
        fs::write(data.join(name), text).unwrap();
    }
    let cfg = write_config(
        dir.path(),
        "csv.cfg",
        "data_source = csv_dir\ncsv_dir = data\nrounds = 2\nbatch_size = 8\nmethod = A2\noutput_dir = out\n",
    );
    let o = fedmeter(&["run", "--config", &cfg], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn similarity_dump_is_written_for_substituting_methods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.cfg",
        "rounds = 2\nnum_communities = 3\nsamples_per_community = 60\nbatch_size = 16\n\
         dump_similarity = true\noutput_dir = out\n",
    );
    assert!(fedmeter(&["run", "--config", &cfg], dir.path())
        .status
        .success());
    let sim = fs::read_to_string(
        dir.path()
            .join("out/runs/A4_nc0_epsinf_mu0.0005_e10_s0/similarity.csv"),
    )
    .unwrap();
    assert_eq!(sim.lines().next(), Some("client,0,1,2"));
}

#[test]
fn presets_list_names_every_preset() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedmeter(&["presets", "list"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in [
        "heterogeneity",
        "dropout",
        "privacy",
        "epsilon",
        "mu",
        "epochs",
    ] {
        assert!(text.contains(name), "{name}");
    }
}

//! End-to-end tests that drive the compiled binary the way a user would.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use halosim_core::config::{PartitionMethod, RunConfig};
use halosim_core::ingest::{self, GeneratorSpec, LoadOptions};
use halosim_core::prefetch::PolicyParams;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_halosim"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("binary runs");
    (out.status.code().expect("exit code"), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Small self-contained experiment config saved as JSON.
fn write_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig {
        run_id: "e2e".into(),
        seed: 7,
        train_fraction: 0.2,
        epochs: 2,
        policy: PolicyParams {
            fraction: 0.25,
            decay: 0.995,
            interval: 8,
            eviction: true,
            clamp_swap_scores: false,
        },
        ..RunConfig::default()
    };
    cfg.graph.generate = Some(GeneratorSpec::BarabasiAlbert {
        num_nodes: 600,
        attachment: 4,
        rng_seed: 11,
    });
    cfg.graph.feature_dim = 8;
    cfg.partitioning.num_partitions = 2;
    cfg.sampling.fanouts = vec![4, 4];
    cfg.sampling.batch_size = 8;
    let path = dir.join("config.json");
    cfg.save(&path).expect("save config");
    path
}

#[test]
fn run_writes_outputs_and_reruns_reproducibly() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(tmp.path());
    let out1 = tmp.path().join("out1");

    let output = run_ok(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out1));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("baseline"), "summary names the baseline run:\n{stdout}");
    assert!(stdout.contains("speedup over baseline"), "summary compares runs:\n{stdout}");
    for name in [
        "effective_config.json",
        "baseline_metrics.csv",
        "baseline_metrics.json",
        "prefetch_metrics.csv",
        "prefetch_metrics.json",
    ] {
        assert!(out1.join(name).is_file(), "{name} must be written");
    }

    // Re-running from the echoed effective config reproduces every byte.
    let out2 = tmp.path().join("out2");
    run_ok(
        bin()
            .args(["run", "--config"])
            .arg(out1.join("effective_config.json"))
            .arg("--out")
            .arg(&out2),
    );
    for name in ["baseline_metrics.json", "prefetch_metrics.json", "prefetch_metrics.csv"] {
        let a = fs::read(out1.join(name)).expect("first run output");
        let b = fs::read(out2.join(name)).expect("second run output");
        assert_eq!(a, b, "{name} must be reproducible from the effective config");
    }
}

#[test]
fn overrides_land_in_the_effective_config() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("out");

    run_ok(
        bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "123", "--no-eviction", "--baseline-only"]),
    );
    let effective = RunConfig::load(&out.join("effective_config.json")).expect("readable echo");
    assert_eq!(effective.seed, 123, "--seed override must be echoed");
    assert!(!effective.policy.eviction, "--no-eviction must be echoed");
    assert!(
        !out.join("prefetch_metrics.json").exists(),
        "--baseline-only must skip the prefetch run"
    );
    assert!(out.join("baseline_metrics.json").is_file());
}

#[test]
fn out_dir_falls_back_to_environment() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(tmp.path());
    let env_out = tmp.path().join("from-env");

    run_ok(
        bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--baseline-only")
            .env("HALOSIM_OUT", &env_out),
    );
    assert!(
        env_out.join("baseline_metrics.json").is_file(),
        "HALOSIM_OUT must pick the output directory when --out is absent"
    );
}

#[test]
fn generate_then_read_round_trips() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("gen");

    run_ok(bin().args(["generate", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let edges = out.join("edges.tsv");
    assert!(edges.is_file());

    let reread = ingest::read_edge_list(
        &edges,
        &LoadOptions { directed: false, feature_dim: 8, num_nodes_override: None },
    )
    .expect("generated file parses");
    let direct = ingest::generate(
        &GeneratorSpec::BarabasiAlbert { num_nodes: 600, attachment: 4, rng_seed: 11 },
        8,
    )
    .expect("direct generation");
    assert_eq!(reread.num_nodes(), direct.num_nodes(), "node count survives the file");
    assert_eq!(reread.num_edges(), direct.num_edges(), "edge count survives the file");
}

#[test]
fn partition_map_covers_every_node() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut cfg = RunConfig::default();
    cfg.graph.generate = Some(GeneratorSpec::BarabasiAlbert {
        num_nodes: 300,
        attachment: 3,
        rng_seed: 5,
    });
    cfg.partitioning.num_partitions = 3;
    cfg.partitioning.method = PartitionMethod::Hash;
    let path = tmp.path().join("config.json");
    cfg.save(&path).expect("save config");
    let out = tmp.path().join("parts");

    run_ok(bin().args(["partition", "--config"]).arg(&path).arg("--out").arg(&out));
    let map = ingest::read_partition_map(&out.join("partition_map.tsv")).expect("map parses");
    assert_eq!(map.len(), 300, "one row per node");
    assert!(map.values().all(|&p| p < 3), "every owner within range");

    // A single partition degenerates to the all-zero map.
    cfg.partitioning.num_partitions = 1;
    cfg.save(&path).expect("save config");
    let out1 = tmp.path().join("parts1");
    run_ok(bin().args(["partition", "--config"]).arg(&path).arg("--out").arg(&out1));
    let map = ingest::read_partition_map(&out1.join("partition_map.tsv")).expect("map parses");
    assert!(map.values().all(|&p| p == 0), "k=1 owns everything");
}

#[test]
fn sweep_writes_ranked_comparison() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut cfg = RunConfig {
        run_id: "sweep-e2e".into(),
        train_fraction: 0.2,
        epochs: 2,
        sweep: Some(halosim_core::config::SweepConfig {
            fractions: vec![0.1, 0.5],
            decays: vec![0.995],
            intervals: vec![8, 64],
        }),
        ..RunConfig::default()
    };
    cfg.graph.generate = Some(GeneratorSpec::BarabasiAlbert {
        num_nodes: 400,
        attachment: 4,
        rng_seed: 9,
    });
    cfg.graph.feature_dim = 8;
    cfg.sampling.fanouts = vec![3, 3];
    cfg.sampling.batch_size = 8;
    let path = tmp.path().join("config.json");
    cfg.save(&path).expect("save config");
    let out = tmp.path().join("sweep");

    let output = run_ok(
        bin().args(["sweep", "--config"]).arg(&path).arg("--out").arg(&out).args(["--jobs", "2"]),
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("baseline"), "sweep prints the baseline reference:\n{stdout}");

    let text = fs::read_to_string(out.join("sweep.csv")).expect("sweep csv");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "header plus one row per grid point:\n{text}");
    let totals: Vec<u64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(3).expect("total column").parse().expect("total parses"))
        .collect();
    let mut sorted = totals.clone();
    sorted.sort_unstable();
    assert_eq!(totals, sorted, "rows must be ranked fastest first");
}

#[test]
fn report_summarizes_metrics_files() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("out");
    run_ok(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out));

    let output = run_ok(
        bin()
            .arg("report")
            .arg(out.join("baseline_metrics.json"))
            .arg(out.join("prefetch_metrics.json")),
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("e2e"), "report names the run:\n{stdout}");
    assert!(stdout.contains("baseline") && stdout.contains("prefetch"), "both modes listed");
}

#[test]
fn bad_config_exits_one_with_the_offending_key() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let path = tmp.path().join("bad.json");
    fs::write(&path, br#"{"epochs": 0}"#).expect("write config");
    let (code, stderr) = exit_code(bin().args(["run", "--config"]).arg(&path));
    assert_eq!(code, 1, "config validation failures exit 1: {stderr}");
    assert!(stderr.contains("epochs"), "error names the key: {stderr}");

    let (code, _) = exit_code(bin().args(["run", "--config"]).arg("/nonexistent.json"));
    assert_eq!(code, 1, "missing config file exits 1");

    let (code, _) = exit_code(bin().args(["run", "--bogus-flag"]));
    assert_eq!(code, 1, "usage errors exit 1");
}

#[test]
fn unwritable_output_exits_two() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = write_config(tmp.path());
    let blocker = tmp.path().join("blocked");
    fs::write(&blocker, b"file, not a directory").expect("write blocker");

    let (code, stderr) =
        exit_code(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&blocker));
    assert_eq!(code, 2, "output failures exit 2: {stderr}");
}

#[test]
fn help_exits_zero() {
    let (code, _) = exit_code(bin().arg("--help"));
    assert_eq!(code, 0);
}

use std::path::Path;
use std::process::{Command, Output};

use povm_forge::io::{read_dataset_csv, read_matrix_csv, read_povm_csv, read_reconstruction_json};
use povm_forge::povm_distance;

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_povm-forge"))
        .args(args)
        .env_remove("POVM_FORGE_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn model_apd_writes_povm_csv() {
    let out = forge(&["model", "--detector", "apd:0.5", "--truncation", "8"]);
    assert_eq!(code(&out), 0);
    let m = read_matrix_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(m.shape(), (2, 9));
    assert_eq!(m[(0, 2)], 0.25);
    assert!(stdout(&out).starts_with("outcome,0,1,2,3,4,5,6,7,8\n"));
}

#[test]
fn model_files_for_tmd() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(&["model", "--detector", "tmd:0.5,0.5", "--truncation", "4", "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0);
    let c = read_matrix_csv(std::fs::File::open(dir.path().join("convolution.csv")).unwrap()).unwrap();
    assert_eq!(c.column(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.5, 0.5]);
    assert!(dir.path().join("loss.csv").exists());
    assert!(dir.path().join("povm.csv").exists());
}

#[test]
fn model_builtin_rows_are_c_times_l() {
    let out = forge(&["model", "--detector", "builtin:paper-tmd-8bin", "--loss", "0.48", "--format", "json"]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let grab = |key: &str| -> Vec<Vec<f64>> { serde_json::from_value(doc[key].clone()).unwrap() };
    let (c, l, povm) = (grab("convolution_matrix"), grab("loss_matrix"), grab("povm"));
    assert_eq!(povm.len(), 9);
    for j in 0..9 {
        for n in 0..l.len() {
            let cl: f64 = (0..l.len()).map(|m| c[j][m] * l[m][n]).sum();
            assert!((cl - povm[j][n]).abs() < 1e-12);
        }
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&forge(&["model", "--detector", "laser:3"])), 2);
    assert_eq!(code(&forge(&["model", "--detector", "apd:1.5"])), 2);
    assert_eq!(code(&forge(&["completeness", "--probes", "linspace:1,2", "--dim", "2"])), 2);
    assert_eq!(code(&forge(&["frobnicate"])), 2);
    assert_eq!(code(&forge(&[])), 2);
}

#[test]
fn completeness_verdicts() {
    let complete = forge(&["completeness", "--probes", "linspace:1,10,10", "--dim", "10"]);
    assert_eq!(code(&complete), 0);
    assert!(stdout(&complete).contains(",true\n"));
    assert_eq!(code(&forge(&["completeness", "--probes", "const:1,10", "--dim", "10"])), 3);
    let grid = forge(&["completeness", "--probes", "linspace:0,40,400", "--dim", "30", "--format", "json"]);
    assert_eq!(code(&grid), 0);
    let doc: serde_json::Value = serde_json::from_slice(&grid.stdout).unwrap();
    assert!(doc["condition_number"].as_f64().unwrap().is_finite());
}

#[test]
fn missing_input_exits_4() {
    let out = forge(&["reconstruct", "--input", "/definitely/not/here.csv"]);
    assert_eq!(code(&out), 4);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "mean_photon,shots,freq_outcome_0\n1.0,0,zero\n").unwrap();
    assert_eq!(code(&forge(&["reconstruct", "--input", path_str(&bad)])), 4);
}

#[test]
fn exact_simulation_ignores_seed() {
    let base = ["simulate", "--detector", "apd:0.4", "--probes", "linspace:0,5,6", "--shots", "0"];
    let a = forge(&[&base[..], &["--seed", "1"]].concat());
    let b = forge(&[&base[..], &["--seed", "2"]].concat());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sampling_is_byte_identical_and_seed_env_wins() {
    let base = ["simulate", "--detector", "builtin:paper-tmd-8bin,0.48", "--probes", "linspace:0,8,20", "--shots", "5000"];
    let a = forge(&[&base[..], &["--seed", "11"]].concat());
    let b = forge(&[&base[..], &["--seed", "11", "--threads", "4"]].concat());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = forge(&[&base[..], &["--seed", "12"]].concat());
    assert_ne!(a.stdout, c.stdout);

    let env = Command::new(env!("CARGO_BIN_EXE_povm-forge"))
        .args([&base[..], &["--seed", "12"]].concat())
        .env("POVM_FORGE_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
}

#[test]
fn simulate_refuses_truncated_probes() {
    let out = forge(&["simulate", "--detector", "apd:0.5", "--probes", "linspace:0.2,6,20", "--truncation", "9"]);
    // ⟨n⟩ = 6 leaves far more than 1e-6 of its Poisson mass above n = 9
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("probe 4 "));
}

/// Noiseless data from a detector truncated at N = 8, reconstructed with the
/// tail lumped into n = 8, is exactly consistent with the model.
#[test]
fn simulate_then_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for detector in ["apd:0.5", "builtin:paper-tmd-8bin,0.48"] {
        let data = dir.path().join("data.csv");
        let probes = dir.path().join("probes.csv");
        let sim = forge(&[
            "simulate",
            "--detector",
            detector,
            "--probes",
            "linspace:0.05,0.9,30",
            "--truncation",
            "8",
            "--out",
            path_str(&data),
            "--probes-out",
            path_str(&probes),
        ]);
        assert_eq!(code(&sim), 0);
        let ds = read_dataset_csv(std::fs::File::open(&data).unwrap(), 800e-9, 1e5).unwrap();
        assert_eq!(ds.probes.len(), 30);
        assert!(std::fs::read_to_string(&probes).unwrap().starts_with("index,mean_photon,avg_power_W"));

        let rec = dir.path().join("rec.json");
        let run = forge(&[
            "reconstruct",
            "--input",
            path_str(&data),
            "--dim",
            "9",
            "--tail",
            "lump",
            "--format",
            "json",
            "--out",
            path_str(&rec),
        ]);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
        let povm = read_reconstruction_json(std::fs::File::open(&rec).unwrap()).unwrap();

        let model = forge(&["model", "--detector", detector, "--truncation", "8"]);
        let truth = read_povm_csv(model.stdout.as_slice()).unwrap();
        let gap = povm_distance(&povm, &truth).unwrap();
        assert!(gap.max_abs <= 1e-5, "{detector}: {:e}", gap.max_abs);
    }
}

#[test]
fn non_convergence_exits_5_and_writes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tmd.json");
    let sim = forge(&[
        "simulate",
        "--detector",
        "builtin:paper-tmd-8bin,0.48",
        "--probes",
        "linspace:0,10,50",
        "--format",
        "json",
        "--out",
        path_str(&data),
    ]);
    assert_eq!(code(&sim), 0);
    let rec = dir.path().join("rec.csv");
    let run = forge(&[
        "reconstruct",
        "--input",
        path_str(&data),
        "--dim",
        "12",
        "--max-iterations",
        "2",
        "--no-polish",
        "--out",
        path_str(&rec),
    ]);
    assert_eq!(code(&run), 5);
    let povm = read_povm_csv(std::fs::File::open(&rec).unwrap()).unwrap();
    assert_eq!(povm.outcomes(), 9);
}

#[test]
fn wigner_one_click_negative_at_origin() {
    let out = forge(&["wigner", "--detector", "builtin:paper-tmd-8bin", "--loss", "0.48", "--outcome", "1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,W"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!(first[1] < 0.0);
}

#[test]
fn wigner_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(&[
        "wigner",
        "--detector",
        "apd:0.6",
        "--outcome",
        "0",
        "--points",
        "21",
        "--half-width",
        "3",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.path().join("wigner.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 21 * 21);
    let gp = std::fs::read_to_string(dir.path().join("wigner.gp")).unwrap();
    assert_eq!(gp.lines().count(), 22);
    assert!(dir.path().join("cross_section.csv").exists());
}

#[test]
fn config_file_runs_like_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "command = \"model\"\ndetector = \"apd:0.5\"\ntruncation = 8\n").unwrap();
    let from_config = forge(&["--config", path_str(&cfg)]);
    let from_flags = forge(&["model", "--detector", "apd:0.5", "--truncation", "8"]);
    assert_eq!(code(&from_config), 0);
    assert_eq!(from_config.stdout, from_flags.stdout);
    assert_eq!(code(&forge(&["--config", path_str(&cfg), "model", "--detector", "apd:0.5"])), 2);

    std::fs::write(&cfg, "command = \"model\"\n").unwrap();
    assert_eq!(code(&forge(&["--config", path_str(&cfg)])), 2);
    assert_eq!(code(&forge(&["--config", "/no/such/run.toml"])), 4);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgvae::artifacts::{read_metrics, RunManifest};
use sgvae::mnist::{TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use sgvae_core::data::{encode_idx, IdxArray};

fn sgvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgvae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn repo(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
        .to_string_lossy()
        .into_owned()
}

/// Writes `n` tiny 28×28 images per split with cycling labels.
fn fixture_dir(train: usize, test: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let write = |images: &str, labels: &str, n: usize, offset: usize| {
        let pixels: Vec<u8> = (0..n * 784)
            .map(|i| (((i / 784 + offset) * 37 + i * 11) % 256) as u8)
            .collect();
        let img = IdxArray {
            magic: 0x0803,
            dims: vec![n, 28, 28],
            data: pixels,
        };
        let lab = IdxArray {
            magic: 0x0801,
            dims: vec![n],
            data: (0..n).map(|i| (i % 10) as u8).collect(),
        };
        std::fs::write(dir.path().join(images), encode_idx(&img)).unwrap();
        std::fs::write(dir.path().join(labels), encode_idx(&lab)).unwrap();
    };
    write(TRAIN_IMAGES, TRAIN_LABELS, train, 0);
    write(TEST_IMAGES, TEST_LABELS, test, 7);
    dir
}

fn train_fixture(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let model = repo("models/mnist.json");
    let mut args = vec![
        "train",
        "--model",
        &model,
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--labeled",
        "20",
        "--epochs",
        "1",
        "--batch-unsup",
        "20",
        "--batch-sup",
        "10",
        "--seed",
        "7",
    ];
    args.extend_from_slice(extra);
    sgvae(&args)
}

#[test]
fn train_writes_checkpoint_metrics_and_manifest() {
    let data = fixture_dir(120, 30);
    let out = tempfile::tempdir().unwrap();
    let o = train_fixture(data.path(), out.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("test_error="));
    let manifest = RunManifest::load(&out.path().join("manifest.json")).unwrap();
    assert_eq!((manifest.labeled, manifest.unlabeled), (20, 100));
    assert_eq!(manifest.config.seed, 7);
    assert!(manifest.artifacts.checkpoint.exists());
    let rows = read_metrics(&out.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].objective.is_finite() && rows[0].test_error.is_some());
    assert_eq!(rows[0].step, 5);
}

#[test]
fn manifest_records_the_supervision_rate() {
    let data = fixture_dir(120, 10);
    let out = tempfile::tempdir().unwrap();
    let o = train_fixture(data.path(), out.path(), &["--gamma", "2", "--epochs", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::load(&out.path().join("manifest.json")).unwrap();
    assert_eq!(m.rho, 40.0 / 140.0);
    assert_eq!(m.alpha, 0.1 / m.rho);
}

#[test]
fn invalid_inputs_exit_with_status_two() {
    let out = tempfile::tempdir().unwrap();
    let o = train_fixture(&out.path().join("missing"), out.path(), &[]);
    assert_eq!(o.status.code(), Some(2));

    let bad = out.path().join("bad.json");
    std::fs::write(&bad, r#"{"variables": [{"name": "x", "family": "normal", "shape": 2, "supervision": "observed", "generative_parents": ["q"]}]}"#).unwrap();
    let data = fixture_dir(30, 10);
    let o = sgvae(&[
        "train",
        "--model",
        bad.to_str().unwrap(),
        "--data-dir",
        data.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        sgvae(&["check", "--model", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let o = sgvae(&[
        "generate",
        "--model",
        "m",
        "--checkpoint",
        "c",
        "--mode",
        "collage",
        "--out",
        "o.pgm",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_rejects_corrupt_and_mismatched_checkpoints() {
    let data = fixture_dir(60, 20);
    let out = tempfile::tempdir().unwrap();
    assert!(train_fixture(data.path(), out.path(), &["--epochs", "0"])
        .status
        .success());
    let ckpt = out.path().join("checkpoint.bin");
    let model = repo("models/mnist.json");
    let dir = data.path().to_str().unwrap();

    let ok = sgvae(&[
        "eval",
        "--model",
        &model,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        dir,
    ]);
    assert!(ok.status.success());
    assert!(stdout(&ok).lines().any(|l| l.starts_with("test_error=")));

    let other = repo("models/mnist-2d.json");
    let o = sgvae(&[
        "eval",
        "--model",
        &other,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        dir,
    ]);
    assert_eq!(o.status.code(), Some(2));

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    let corrupt = out.path().join("corrupt.bin");
    std::fs::write(&corrupt, bytes).unwrap();
    let o = sgvae(&[
        "eval",
        "--model",
        &model,
        "--checkpoint",
        corrupt.to_str().unwrap(),
        "--data-dir",
        dir,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn real_data() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("SGVAE_DATA_DIR")?);
    dir.join(TEST_IMAGES).exists().then_some(dir)
}

#[test]
fn untrained_checkpoint_is_at_chance_on_mnist() {
    let Some(data) = real_data() else {
        eprintln!("SGVAE_DATA_DIR not available; skipping");
        return;
    };
    let out = tempfile::tempdir().unwrap();
    let model = repo("models/mnist.json");
    let o = sgvae(&[
        "train",
        "--model",
        &model,
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        out.path().to_str().unwrap(),
        "--epochs",
        "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.path().join("checkpoint.bin");
    let o = sgvae(&[
        "eval",
        "--model",
        &model,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
    ]);
    let line = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("test_error=").map(str::to_owned))
        .unwrap();
    let e: f64 = line.parse().unwrap();
    // A random classifier errs 90% of the time; an untrained network is
    // not uniform, so allow a wide band around chance.
    assert!(e > 0.75, "{e}");
}

#[test]
fn generated_grids_have_the_documented_layout_and_are_reproducible() {
    let data = fixture_dir(60, 20);
    let out = tempfile::tempdir().unwrap();
    let dir = data.path().to_str().unwrap();
    let ckpt = out.path().join("checkpoint.bin");
    assert!(train_fixture(data.path(), out.path(), &[]).status.success());
    let model = repo("models/mnist.json");
    let analogy = |name: &str| {
        let path = out.path().join(name);
        let o = sgvae(&[
            "generate",
            "--model",
            &model,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--mode",
            "analogy",
            "--data-dir",
            dir,
            "--indices",
            "0,1,2,3,4,5,6,7",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(path).unwrap()
    };
    let a = analogy("a.pgm");
    let header = b"P5\n328 238\n255\n";
    assert_eq!(&a[..header.len()], header);
    assert_eq!(a.len(), header.len() + 328 * 238);
    assert_eq!(a, analogy("b.pgm"));

    let o = sgvae(&[
        "generate",
        "--model",
        &model,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--mode",
        "style-sweep",
        "--out",
        out.path().join("s.pgm").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "style sweeps need a 2-d style");

    let out2 = tempfile::tempdir().unwrap();
    let model2 = repo("models/mnist-2d.json");
    let o = sgvae(&[
        "train",
        "--model",
        &model2,
        "--data-dir",
        dir,
        "--out-dir",
        out2.path().to_str().unwrap(),
        "--labeled",
        "20",
        "--epochs",
        "0",
    ]);
    assert!(o.status.success());
    let sweep = out2.path().join("s.pgm");
    let o = sgvae(&[
        "generate",
        "--model",
        &model2,
        "--checkpoint",
        out2.path().join("checkpoint.bin").to_str().unwrap(),
        "--mode",
        "style-sweep",
        "--label",
        "3",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let side = 7 * 28 + 6 * 2;
    let bytes = std::fs::read(sweep).unwrap();
    assert!(bytes.starts_with(format!("P5\n{side} {side}\n255\n").as_bytes()));
}

#[test]
fn verify_suite_passes_and_reports_csv() {
    let out = tempfile::tempdir().unwrap();
    let report = out.path().join("verify.csv");
    let o = sgvae(&[
        "verify",
        "--s-sweep",
        "1,100,10000",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(
        o.status.success(),
        "{}\n{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    let mut r = csv::Reader::from_path(&report).unwrap();
    let headers: Vec<String> = r.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(
        headers,
        ["model", "variant", "S", "seeds", "mean", "stderr", "exact", "z"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert!(rows.len() >= 6);
    let bias: Vec<f64> = rows
        .iter()
        .filter(|r| &r[1] == "snis_sweep")
        .map(|r| (r[4].parse::<f64>().unwrap() - r[6].parse::<f64>().unwrap()).abs())
        .collect();
    assert_eq!(bias.len(), 3);
    assert!(bias[0] >= bias[1] && bias[1] >= bias[2], "{bias:?}");
}

#[test]
fn verify_fails_on_corrupted_tables() {
    let out = tempfile::tempdir().unwrap();
    let tables = out.path().join("tables.json");
    std::fs::write(
        &tables,
        r#"{"variables": [
            {"name": "x", "domain": 2, "supervision": "observed", "generative_parents": [1], "generative_table": [0.5, 0.5, 0.3, 0.7]},
            {"name": "y", "domain": 2, "supervision": "partial", "generative_table": [0.6, 0.6],
             "recognition_parents": [0], "recognition_table": [0.5, 0.5, 0.5, 0.5]}
        ], "given": [0, 1]}"#,
    )
    .unwrap();
    let o = sgvae(&[
        "verify",
        "--samples",
        "1000",
        "--tables",
        tables.to_str().unwrap(),
        "--report",
        out.path().join("r.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("[FAIL] tables"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybrid_restore::pgm::{read_pgm, write_pgm, Gray};
use ndarray::Array2;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybrid-restore"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_image(dir: &Path, name: &str, pixels: Array2<u16>, max_value: u16) -> PathBuf {
    let path = dir.join(name);
    write_pgm(fs::File::create(&path).unwrap(), &Gray { pixels, max_value }).unwrap();
    path
}

/// Two flat halves, 40 and 200, with a little deterministic texture.
fn step_image(dir: &Path, size: usize) -> PathBuf {
    let px = Array2::from_shape_fn((size, size), |(r, c)| {
        let base = if c < size / 2 { 40 } else { 200 };
        base + ((r * 7 + c * 13) % 5) as u16
    });
    write_image(dir, "step.pgm", px, 255)
}

fn truth_image(dir: &Path, size: usize) -> PathBuf {
    let px = Array2::from_shape_fn((size, size), |(r, c)| {
        let (x, y) = (c as f64 / size as f64 - 0.5, r as f64 / size as f64 - 0.5);
        let disk = if x.hypot(y) < 0.25 { 120.0 } else { 0.0 };
        (60.0 + 30.0 * (6.0 * x).sin() + disk) as u16
    });
    write_image(dir, "truth.pgm", px, 255)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn restore_writes_images_spectrum_and_metadata() {
    let tmp = TempDir::new().unwrap();
    let input = step_image(tmp.path(), 64);
    let out_dir = tmp.path().join("out");
    let out = run(&["restore", "--input", arg(&input), "--output-dir", arg(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    for name in ["combined.pgm", "edge.pgm", "smooth.pgm"] {
        let g = read_pgm(std::io::BufReader::new(fs::File::open(out_dir.join(name)).unwrap())).unwrap();
        assert_eq!(g.pixels.dim(), (64, 64), "{name}");
    }
    let spectrum = fs::read_to_string(out_dir.join("spectrum.csv")).unwrap();
    let mut lines = spectrum.lines();
    assert_eq!(lines.next(), Some("k,l,re,im"));
    assert_eq!(lines.count(), 64 * 64);
    assert!(spectrum.lines().nth(1).unwrap().starts_with("-32,-32,"));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("restore.json")).unwrap()).unwrap();
    assert!(meta["lambda"].as_f64().unwrap() >= 0.0);
    assert!(meta["t_star"].as_f64().unwrap() > 0.0);
    assert!(meta["rejected_windows"].as_u64().unwrap() > 0);
    assert_eq!(meta["lambda_selection"], "sure");
}

#[test]
fn restore_png_with_fixed_lambda() {
    let tmp = TempDir::new().unwrap();
    let input = step_image(tmp.path(), 32);
    let out_dir = tmp.path().join("png");
    let out = run(&[
        "restore",
        "--input",
        arg(&input),
        "--output-dir",
        arg(&out_dir),
        "--format",
        "png",
        "--lambda",
        "0.001",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let img = image::open(out_dir.join("combined.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("restore.json")).unwrap()).unwrap();
    assert_eq!(meta["lambda"], 0.001);
    assert_eq!(meta["lambda_selection"], "fixed");
}

#[test]
fn detect_finds_the_step() {
    let tmp = TempDir::new().unwrap();
    let input = step_image(tmp.path(), 48);
    let out = run(&["detect", "--input", arg(&input), "--output-dir", arg(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("windows.csv")).unwrap();
    assert!(csv.starts_with("row,col,pvalue,beta1,beta2,eta,rejected\n"));
    let rejected: Vec<usize> = csv
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",true"))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!rejected.is_empty());
    assert!(rejected.iter().all(|c| c.abs_diff(24) <= 6), "{rejected:?}");
    let mask = read_pgm(std::io::BufReader::new(fs::File::open(tmp.path().join("edges.pgm")).unwrap())).unwrap();
    assert!(mask.pixels.iter().any(|v| *v == 255));
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let truth = truth_image(tmp.path(), 32);
    let args = |dir: &Path| {
        run(&[
            "simulate",
            "--input",
            arg(&truth),
            "--output-dir",
            arg(dir),
            "--multiplier",
            "10",
            "--seed",
            "42",
            "--replicates",
            "2",
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&args(&a)), 0);
    assert_eq!(code(&args(&b)), 0);
    for name in ["sample-m10-000.pgm", "sample-m10-001.pgm"] {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        assert_eq!(x, y, "{name}");
    }
    assert_ne!(fs::read(a.join("sample-m10-000.pgm")).unwrap(), fs::read(a.join("sample-m10-001.pgm")).unwrap());

    let g = read_pgm(std::io::BufReader::new(fs::File::open(a.join("sample-m10-000.pgm")).unwrap())).unwrap();
    let total: u64 = g.pixels.iter().map(|v| u64::from(*v)).sum();
    assert_eq!(total, 10 * 32 * 32);
}

#[test]
fn report_tables_and_plots() {
    let tmp = TempDir::new().unwrap();
    let truth = truth_image(tmp.path(), 32);
    let out_dir = tmp.path().join("report");
    let out = run(&[
        "report",
        "--input",
        arg(&truth),
        "--output-dir",
        arg(&out_dir),
        "--multipliers",
        "20,10",
        "--replicates",
        "5",
        "--seed",
        "3",
        "--format",
        "png",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let rows: Vec<(u32, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().parse().unwrap(), f.next().unwrap().parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![10, 20]);
    assert!(rows[1].1 < rows[0].1, "{rows:?}");
    for name in ["table1_dmse.csv", "table2_within_var.csv", "table3_ratio.csv", "report.json"] {
        assert!(out_dir.join(name).is_file(), "{name}");
    }
    for name in ["dmse.png", "ratio.png"] {
        image::open(out_dir.join(name)).unwrap();
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let input = step_image(tmp.path(), 32);
    let cfg = tmp.path().join("settings.toml");
    fs::write(&cfg, "stride = 2\nlambda = 0.5\n").unwrap();
    let out = run(&[
        "restore",
        "--config",
        arg(&cfg),
        "--input",
        arg(&input),
        "--output-dir",
        arg(tmp.path()),
        "--lambda",
        "0.25",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("restore.json")).unwrap()).unwrap();
    assert_eq!(meta["lambda"], 0.25);
    assert_eq!(meta["config"]["stride"], 2);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let input = step_image(tmp.path(), 32);
    let dir = arg(tmp.path());

    assert_eq!(code(&run(&["restore", "--input", arg(&input), "--bogus"])), 2);
    assert_eq!(code(&run(&["restore", "--input", arg(&input), "--alpha", "2"])), 2);
    assert_eq!(code(&run(&["restore", "--input", arg(&input), "--output-dir", dir, "--window-half-width", "20"])), 2);
    assert_eq!(code(&run(&["restore", "--input", "photo.jpg"])), 2);

    let bad_cfg = tmp.path().join("bad.toml");
    fs::write(&bad_cfg, "strides = 3\n").unwrap();
    assert_eq!(code(&run(&["restore", "--config", arg(&bad_cfg), "--input", arg(&input)])), 2);

    let wide = write_image(tmp.path(), "wide.pgm", Array2::ones((16, 24)), 255);
    let out = run(&["restore", "--input", arg(&wide), "--output-dir", dir]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("square"));

    assert_eq!(code(&run(&["restore", "--input", arg(&tmp.path().join("missing.pgm"))])), 3);
    let truncated = tmp.path().join("cut.pgm");
    fs::write(&truncated, b"P5\n4 4\n255\n\x01\x02").unwrap();
    assert_ne!(code(&run(&["restore", "--input", arg(&truncated)])), 0);

    let blocked = tmp.path().join("file-not-dir");
    fs::write(&blocked, b"").unwrap();
    assert_eq!(code(&run(&["restore", "--input", arg(&input), "--output-dir", arg(&blocked)])), 3);
}

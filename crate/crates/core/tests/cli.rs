use std::path::Path;
use std::process::{Command, Output};

fn nlpinn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlpinn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn check_pddo_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlpinn(dir.path(), &["check-pddo"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let ortho: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("orthogonality "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(ortho <= 1e-9);
    assert!(read(dir.path(), "resolved_config.toml").contains("delta_factor = 3.5"));
}

#[test]
fn unknown_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[network]\nwidth = 3\n").unwrap();
    let out = nlpinn(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn type_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlpinn(dir.path(), &["identify", "train.epochs=lots"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epochs"));
}

#[test]
fn singular_operators_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlpinn(dir.path(), &["check-pddo", "pddo.delta_factor=0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlpinn(
        dir.path(),
        &[
            "identify",
            "train.epochs=2",
            "train.lr_start=1e12",
            "train.lr_end=1e11",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_mode_reports_config_material() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlpinn(
        dir.path(),
        &[
            "train",
            "data.source=plastic",
            "train.epochs=2",
            "material.trainable=[\"lambda\",\"mu\",\"sigma_y0\",\"hp\"]",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read(dir.path(), "parameters.txt");
    for line in report.lines().skip(1) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols[1], cols[3], "{line}");
    }
}

#[test]
fn data_file_round_trip_through_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let gen = nlpinn(
        p,
        &["gen-data", "data.source=plastic", "grid.nx=9", "grid.ny=9"],
    );
    assert_eq!(gen.status.code(), Some(0));
    let data = [
        "data.source=file",
        "data.path=out/fields.csv",
        "train.epochs=3",
    ];
    for (cmd, arch) in [
        ("identify", "ad_pddo"),
        ("evaluate", "ad_pddo"),
        ("export-fields", "ad_pddo"),
    ] {
        let mut args = vec![cmd, &format!("train.architecture={arch}")[..]]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        args.extend(data.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = nlpinn(p, &refs);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let eval = read(p, "evaluation.txt");
    assert!(eval.starts_with("architecture ad_pddo"));
    assert!(eval.contains("total"));
    let (header, pixels) = nlpinn::dataio::read_pgm(
        std::fs::File::open(p.join("out/fields/sxy.pgm"))
            .map(std::io::BufReader::new)
            .unwrap(),
    )
    .unwrap();
    assert_eq!((header.width, header.height), (9, 9));
    assert_eq!(pixels.len(), 81);
    let predicted = nlpinn::dataio::load_fields(&p.join("out/predicted.csv")).unwrap();
    assert_eq!(predicted.len(), 81);
    assert!(predicted.plastic_mode);
}

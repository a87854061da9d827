use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hba"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, frames: usize) {
    let spec = dir.join("scene.spec");
    fs::write(
        &spec,
        format!("frames = {frames}\npoint_noise = 0.01\nrotation_noise_deg = 0.3\ntranslation_noise_m = 0.01\n"),
    )
    .unwrap();
    let out = hba(&["synth", "--spec", spec.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains(&format!("frames={frames}")));
}

fn kitti_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn synth_then_run_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 30);
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let out = hba(&[
        "run",
        "--scans",
        &p("scans"),
        "--poses",
        &p("poses_init.txt"),
        "--out-poses",
        &p("refined.txt"),
        "--out-map",
        &p("map.ply"),
        "--report",
        &p("report.csv"),
        "--out-graph",
        &p("graph.txt"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = kitti_rows(&fs::read_to_string(p("refined.txt")).unwrap());
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r.len() == 12));

    let report = fs::read_to_string(p("report.csv")).unwrap();
    let mut lines = report.lines();
    assert!(lines.next().unwrap().starts_with("pass,cost_ba,cost_pg,t_voxel_s,t_ba_s,t_pg_s,rss_mb_estimate"));
    assert!(lines.count() >= 1);
    assert!(fs::metadata(p("map.ply")).unwrap().len() > 0);
    assert!(fs::read_to_string(p("graph.txt")).unwrap().lines().count() > 0);

    let eval = hba(&["eval", "ate", "--gt", &p("poses_gt.txt"), "--est", &p("refined.txt")]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert!(stdout(&eval).starts_with("rot_rmse_deg="));
}

#[test]
fn original_ba_mode_is_labelled_in_the_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 100);
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let out = hba(&[
        "run",
        "--scans",
        &p("scans"),
        "--poses",
        &p("poses_init.txt"),
        "--mode",
        "original_ba",
        "--report",
        &p("report.csv"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(kitti_rows(&stdout(&out)).len(), 100);
    let report = fs::read_to_string(p("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.ends_with(",original_ba")));
}

#[test]
fn missing_poses_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hba(&[
        "run",
        "--scans",
        dir.path().to_str().unwrap(),
        "--poses",
        dir.path().join("absent.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("poses: not found"), "{err}");
    assert_eq!(err.lines().filter(|l| l.starts_with("error:")).count(), 1);
}

#[test]
fn unknown_override_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 12);
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let out = hba(&["run", "--scans", &p("scans"), "--poses", &p("poses_init.txt"), "--set", "windw=4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("windw"));
}

const SQUARE: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];

fn write_translations(path: &Path, points: impl Iterator<Item = [f64; 3]>) {
    let text: String = points
        .map(|[x, y, z]| format!("1 0 0 {x} 0 1 0 {y} 0 0 1 {z}\n"))
        .collect();
    fs::write(path, text).unwrap();
}

#[test]
fn eval_ate_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.txt");
    write_translations(&gt, SQUARE.into_iter());
    let out = hba(&["eval", "ate", "--gt", gt.to_str().unwrap(), "--est", gt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "rot_rmse_deg=0.000000 trans_rmse_m=0.000000");
}

#[test]
fn eval_ate_known_offset() {
    // the estimate is the unit square scaled by 1.2 about its center and shifted;
    // the best rigid fit leaves 0.2·√0.5 at every corner
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.txt");
    let est = dir.path().join("est.txt");
    write_translations(&gt, SQUARE.into_iter());
    write_translations(
        &est,
        SQUARE
            .into_iter()
            .map(|[x, y, z]| [0.5 + 1.2 * (x - 0.5) + 3.0, 0.5 + 1.2 * (y - 0.5) - 1.0, z + 2.0]),
    );
    let out = hba(&["eval", "ate", "--gt", gt.to_str().unwrap(), "--est", est.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "rot_rmse_deg=0.000000 trans_rmse_m=0.141421");
}

#[test]
fn eval_mme_of_single_point_map_fails() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("map.ply");
    fs::write(
        &map,
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n",
    )
    .unwrap();
    let out = hba(&["eval", "mme", "--map", map.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn plan_prints_cost_table_and_choice() {
    let out = hba(&["plan", "--frames", "2000"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().any(|l| l == "T_3=5.72e5"), "{text}");
    assert!(text.contains("closed_form_l="));

    let out = hba(&["plan", "--frames", "9"]);
    assert!(out.status.success());
    assert!(stdout(&out).lines().any(|l| l == "chosen_l=1"));
}

#[test]
fn bench_prints_one_row_per_mode() {
    let out = hba(&["bench", "--frames", "20", "--workers", "2", "--modes", "hierarchical,direct_assign"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("hierarchical,20,2,"));
    assert!(lines[2].starts_with("direct_assign,20,2,"));
}

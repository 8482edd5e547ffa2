use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mmaf::report::{read_json_report, render, Format, RunManifest, Source};

fn mmaf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmaf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MMAF_SEED")
        .output()
        .expect("binary runs")
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_dump_occupation_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmaf(
        &["simulate", "--T", "1", "--M", "20", "--seed", "42", "--n", "4", "--pad", "2", "--dump-occupation"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("rep,k,i,t,x,mass"));
    // 9 particles on 21 grid points
    assert_eq!(lines.count(), 9 * 21);
    let occ = fs::read_to_string(dir.path().join("occupation.csv")).unwrap();
    assert!(occ.starts_with("rep,k,A_k\n"));
    assert_eq!(occ.lines().count(), 1 + 4);
    let m = manifest(dir.path());
    assert_eq!(m.master_seed, 42);
    assert_eq!(m.config.reps, 1);
    assert_eq!(m.provenance["reps"], Source::Default);
    assert_eq!(m.provenance["M"], Source::Flag);
    assert!(m.failed.is_empty());
    assert_eq!(m.outputs.len(), 2);
    m.check_outputs().unwrap();
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["clt", "--M", "50", "--n", "32", "--kmax", "4", "--reps", "60", "--seed", "5"];
    let mut with_workers: Vec<&str> = args.to_vec();
    with_workers.extend(["--workers", "1"]);
    assert!(mmaf(&args, a.path()).status.success());
    assert!(mmaf(&with_workers, b.path()).status.success());
    let x = fs::read(a.path().join("clt.csv")).unwrap();
    let y = fs::read(b.path().join("clt.csv")).unwrap();
    assert_eq!(x, y);
    assert!(String::from_utf8(x).unwrap().starts_with("rep,Y\n"));
}

#[test]
fn t_beyond_horizon_is_rejected_with_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmaf(&["clt", "--t", "2", "--T", "1"], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("t exceeds T"), "{err}");
    assert!(err.contains("`t`"), "{err}");
    assert!(err.contains("failed experiments: clt"), "{err}");
}

#[test]
fn flags_win_over_config_file_and_provenance_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "reps = 7\nn = 5\nM = 30\nseed = 3\n").unwrap();
    let o = mmaf(
        &["simulate", "--config", cfg.to_str().unwrap(), "--reps", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path());
    assert_eq!(m.config.reps, 2);
    assert_eq!(m.config.n, 5);
    assert_eq!(m.provenance["reps"], Source::Flag);
    assert_eq!(m.provenance["n"], Source::File);
    assert_eq!(m.provenance["T"], Source::Default);
    assert_eq!(m.config_file.as_deref(), Some(cfg.as_path()));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "reps = 7\nreplications = 3\n").unwrap();
    let o = mmaf(&["clt", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`replications`"), "{}", stderr(&o));
}

#[test]
fn environment_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mmaf"))
        .args(["simulate", "--M", "10", "--n", "2", "--seed", "1", "--out"])
        .arg(dir.path())
        .env("MMAF_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path());
    assert_eq!(m.master_seed, 77);
    assert_eq!(m.provenance["seed"], Source::Env);
}

#[test]
fn json_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmaf(
        &["moments", "--M", "22", "--reps", "20", "--format", "json", "--seed", "8"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let path = dir.path().join("moments.json");
    let report = read_json_report(&path).unwrap();
    assert_eq!(render(&report, Format::Json).unwrap(), fs::read_to_string(&path).unwrap());
}

#[test]
fn every_subcommand_writes_its_schema() {
    let cases: [(&[&str], &str, &str); 3] = [
        (
            &["moments", "--M", "22", "--reps", "10"],
            "moments.csv",
            "t,p,estimate,stderr",
        ),
        (
            &["smalltime", "--M", "20", "--reps", "10", "--n", "16", "--kmax", "4"],
            "smalltime.csv",
            "t,sigma2_over_t,stderr",
        ),
        (
            &["mixing", "--M", "20", "--reps", "40", "--n", "16", "--kmax", "4"],
            "mixing.csv",
            "kind,l,param,t,estimate,stderr,oracle",
        ),
    ];
    for (args, file, header) in cases {
        let dir = tempfile::tempdir().unwrap();
        let o = mmaf(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        let csv = fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(csv.lines().next(), Some(header));
        assert!(csv.lines().count() > 1);
    }
}

#[test]
fn smalltime_requires_derivative_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmaf(&["smalltime", "--function", "halfind", "--reps", "4", "--n", "8", "--kmax", "2"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`function`"), "{}", stderr(&o));
    assert!(stderr(&o).contains("failed experiments: smalltime"));
    assert_eq!(manifest(dir.path()).failed, vec!["smalltime".to_string()]);
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = mmaf(&["simulate", "--M", "10", "--n", "2"], &blocker.join("sub"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("failed experiments: simulate"));
}

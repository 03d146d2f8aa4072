//! The `ocp-adaptive` binary end to end on small oracle1d runs.

mod common;

use std::fs;
use std::path::Path;

use common::*;

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_the_documented_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", &tiny_config("adaptive-aonn", "a", "[4]", 2));
    let o = run(&["run", &cfg], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("a/seed_4");
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), dir.to_str().unwrap());
    for f in ["config.toml", "run.toml", "record.csv", "report.csv"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    for k in 0..2 {
        for f in ["y.ckpt", "p.ckpt", "u.ckpt", "flow.ckpt", "trainset.csv", "log.csv"] {
            assert!(dir.join(format!("stage_{k}/{f}")).is_file(), "missing stage_{k}/{f}");
        }
    }
    let record = fs::read_to_string(dir.join("record.csv")).unwrap();
    assert!(record.starts_with("stage,set_size,L_s,L_a,L_u,flow_CE,rel_l2_u,rel_l2_y,wall_seconds\n"));
    let log = fs::read_to_string(dir.join("stage_0/log.csv")).unwrap();
    assert!(log.starts_with("epoch,L_s,L_a,L_u,c,n,wall_seconds\n"));
    assert_eq!(log.lines().count(), 1 + 3);
    assert!(!log.contains('\r'));
}

#[test]
fn identical_configs_give_identical_outputs_and_snapshots_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let text = tiny_config("adaptive-aonn", "det", "[7]", 3);
    let cfg = write_cfg(tmp.path(), "det.cfg", &text);
    let (r1, r2, r3) = (tmp.path().join("r1"), tmp.path().join("r2"), tmp.path().join("r3"));
    for root in [&r1, &r2] {
        let o = run(&["run", &cfg], root);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let snapshot = r1.join("det/seed_7/config.toml");
    let o = run(&["run", snapshot.to_str().unwrap()], &r3);
    assert!(o.status.success(), "{}", stderr(&o));

    let reference = csv_files(&r1.join("det/seed_7"));
    assert!(reference.len() >= 2 + 2 * 3);
    for other in [&r2, &r3] {
        let files = csv_files(&other.join("det/seed_7"));
        assert_eq!(files.len(), reference.len());
        for ((pa, a), (pb, b)) in reference.iter().zip(&files) {
            assert_eq!(pa, pb);
            assert_eq!(without_timings(a), without_timings(b), "{} differs", pa.display());
        }
        assert_eq!(checkpoints(&r1.join("det/seed_7")), checkpoints(&other.join("det/seed_7")));
    }
    // Training sets carry no timing column, so they match byte for byte.
    for k in 0..3 {
        let p = format!("det/seed_7/stage_{k}/trainset.csv");
        assert_eq!(fs::read(r1.join(&p)).unwrap(), fs::read(r2.join(&p)).unwrap());
    }
}

#[test]
fn invalid_configs_fail_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("missing.cfg", "problem = \"oracle1d\"\n[adaptive]\nstages = 1\n", "missing-keys", "method"),
        (
            "badtype.cfg",
            "problem = \"oracle1d\"\nmethod = \"aonn\"\n[adaptive]\nstages = 1\nn_r = 10\n[dal]\ngamma = \"high\"\n",
            "config",
            "line 7",
        ),
        (
            "range.cfg",
            "problem = \"oracle1d\"\nmethod = \"aonn\"\n[adaptive]\nstages = 1\nn_r = 10\n[dal]\ngamma = 1.5\n",
            "config",
            "gamma",
        ),
        (
            "unknown.cfg",
            "problem = \"nope\"\nmethod = \"aonn\"\n[adaptive]\nstages = 1\nn_r = 10\n",
            "config",
            "nope",
        ),
    ];
    for (name, text, kind, needle) in cases {
        let cfg = write_cfg(tmp.path(), name, text);
        let o = run(&["run", &cfg], &out);
        let err = stderr(&o);
        assert_eq!(o.status.code(), Some(2), "{name}: {err}");
        assert!(err.contains(&format!("kind={kind}")), "{name}: {err}");
        assert!(err.contains(needle), "{name}: {err}");
        assert!(!out.exists(), "{name} left artifacts");
    }
}

#[test]
fn eval_writes_fields_and_checks_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "e.cfg", &tiny_config("aonn", "e", "[0]", 1));
    assert!(run(&["run", &cfg], tmp.path()).status.success());
    let dir = tmp.path().join("e/seed_0");
    let d = dir.to_str().unwrap();

    let o = run(&["eval", d, "--res", "11"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let fields = fs::read_to_string(dir.join("eval/fields_stage0.csv")).unwrap();
    let mut lines = fields.lines();
    assert_eq!(lines.next().unwrap(), "x1,y,p,u,y_exact,p_exact,y_abs_err,u_exact,u_abs_err");
    assert_eq!(lines.count(), 11);
    let errors = fs::read_to_string(dir.join("eval/errors_stage0.csv")).unwrap();
    assert!(errors.starts_with("field,rel_l2\nu,"));

    let o = run(&["eval", d, "--res", "11", "--problem", "test3"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=integrity"), "{}", stderr(&o));

    let o = run(&["eval", d, "--res", "11", "--stage", "4"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=integrity"));

    let o = run(&["eval", d, "--xi", "0.5", "--res", "11"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn compare_needs_two_runs_of_one_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_cfg(tmp.path(), "a.cfg", &tiny_config("aonn", "ca", "[0, 1]", 2));
    let b = write_cfg(tmp.path(), "b.cfg", &tiny_config("das2", "cb", "[0]", 2));
    for c in [&a, &b] {
        let o = run(&["run", c], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }

    let single = tmp.path().join("cb/seed_0");
    let o = run(&["compare", single.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=compare"));

    let merged = tmp.path().join("merged");
    let o = run(&["compare", &a, &b, "--out", merged.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(merged.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);
    let samples = fs::read_to_string(merged.join("error_vs_samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 3 * 2);
    let epochs = fs::read_to_string(merged.join("error_vs_epoch.csv")).unwrap();
    assert!(epochs.lines().nth(2).unwrap().starts_with("aonn,0,6,"));

    // A Test 1 run directory cannot join an oracle1d comparison.
    let fake = tmp.path().join("fake");
    fs::create_dir_all(&fake).unwrap();
    let manifest = fs::read_to_string(single.join("run.toml")).unwrap().replace("oracle1d", "test1");
    fs::write(fake.join("run.toml"), manifest).unwrap();
    fs::copy(single.join("record.csv"), fake.join("record.csv")).unwrap();
    let o = run(&["compare", single.to_str().unwrap(), fake.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mix problems"), "{}", stderr(&o));
}

#[test]
fn export_samples_prints_the_stage_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "x.cfg", &tiny_config("adaptive-aonn", "x", "[2]", 2));
    assert!(run(&["run", &cfg], tmp.path()).status.success());
    let d = tmp.path().join("x/seed_2");
    let o = run(&["export-samples", d.to_str().unwrap(), "--stage", "1"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,stage,source");
    assert_eq!(text.lines().count(), 1 + 2 * 64);
    assert_eq!(text, fs::read_to_string(d.join("stage_1/trainset.csv")).unwrap());

    let o = run(&["export-samples", d.to_str().unwrap(), "--stage", "2"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "env.cfg", &tiny_config("aonn", "envrun", "[0]", 1));
    let root = tmp.path().join("elsewhere");
    let o = run(&["run", &cfg], &root);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("envrun/seed_0/report.csv").is_file());
}

#[test]
fn run_refuses_to_clobber_foreign_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "c.cfg", &tiny_config("aonn", "keep", "[0]", 1));
    let dir = tmp.path().join("keep/seed_0");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("notes.txt"), "mine").unwrap();
    let o = run(&["run", &cfg], tmp.path());
    assert!(!o.status.success());
    assert_eq!(fs::read_to_string(dir.join("notes.txt")).unwrap(), "mine");
}

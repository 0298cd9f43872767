use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn orient8(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orient8")).args(args).env("ORIENT8_THREADS", "2").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn tables_matches_reference_rows() {
    let o = orient8(&["tables"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 19);
    assert_eq!(lines[1], "0 1 2 3 4 5 6 7");
    assert_eq!(lines[5], "4 6 5 7 0 2 1 3");
    assert_eq!(lines[18], "inverse: 0 1 2 3 4 6 5 7");
    assert!(String::from_utf8_lossy(&o.stderr).contains("tables config"));
}

#[test]
fn workflow_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let o = orient8(&["gen", "--patients", "10", "--slices", "2", "--size", "32", "--seed", "3", "--out", s(&data)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let manifest = fs::read_to_string(data.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 10 * 2 * 3);

    let cfg = d.join("run.cfg");
    fs::write(&cfg, "epochs = 2\ninput_size = 32\nseed = 3\nbatch = 16\n").unwrap();
    let train = |name: &str| {
        let ckpt = d.join(name);
        let o = orient8(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("test_voting_accuracy="));
        ckpt
    };
    let a = train("a.or8w");
    let b = train("b.or8w");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
    let log = fs::read_to_string(d.join("a.csv")).unwrap();
    assert!(log.starts_with("epoch,loss,val_accuracy\n1,"));
    assert_eq!(log.lines().count(), 3);

    let report = d.join("report.csv");
    let o = orient8(&["eval", "--ckpt", s(&a), "--data", s(&data), "--seed", "3", "--method", "voting", "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("accuracy="));
    assert_eq!(fs::read_to_string(&report).unwrap().lines().count(), 9);
    let o = orient8(&["eval", "--ckpt", s(&a), "--data", s(&data), "--seed", "3", "--method", "voting", "--prob-sum"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("method=voting"));
    let o = orient8(&["eval", "--ckpt", s(&a), "--data", s(&data), "--method", "direct", "--prob-sum"]);
    assert_eq!(o.status.code(), Some(1));

    let frozen = d.join("lge.or8w");
    let o = orient8(&[
        "transfer", "--ckpt", s(&a), "--data", s(&data), "--out", s(&frozen), "--epochs", "1", "--freeze-conv", "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // the conv block sits at the start of the tensor section and must not move
    let (pa, pb) = (fs::read(&a).unwrap(), fs::read(&frozen).unwrap());
    assert_eq!(pa.len(), pb.len());
    assert_eq!(pa[..2000], pb[..2000]);
    assert_ne!(pa, pb);

    let input = data.join("C0/P001/slice_000.ori8");
    let fixed = d.join("fixed.ori8");
    let o = orient8(&["reorient", "--ckpt", s(&a), "--in", s(&input), "--out", s(&fixed)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("label=0"));
    assert_eq!(fs::read(&input).unwrap(), fs::read(&fixed).unwrap());

    let csv = d.join("sweep.csv");
    let o = orient8(&[
        "sweep", "--data", s(&data), "--out", s(&csv), "--fraction", "0.6,0.3", "--epochs", "1", "--input-size", "32",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(d.join("sweep.jsonl")).unwrap().lines().count(), 6);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("missing");
    assert_eq!(orient8(&["eval", "--ckpt", s(&missing), "--data", s(d)]).status.code(), Some(2));
    let bad = d.join("bad.or8w");
    fs::write(&bad, b"OR8W\x07\x00\x00\x00").unwrap();
    let o = orient8(&["eval", "--ckpt", s(&bad), "--data", s(d)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().filter(|l| l.starts_with("error:")).count(), 1);
    assert_eq!(orient8(&["train", "--unknown-flag"]).status.code(), Some(1));
    assert_eq!(orient8(&["tables"]).status.code(), Some(0));

    let cfg = d.join("c.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(orient8(&["tables", "--config", s(&cfg)]).status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_orient8")).arg("tables").env("ORIENT8_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

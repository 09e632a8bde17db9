use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flexup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexup")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const TINY: &str = "factors=2,4\nprobabilities=0.5,0.5\nr_max=4\nneighbors=8\nfeature_width=8\nedge_widths=8\ngraph_k=4\nquery_width=4\nvalue_width=4\nhidden_width=8\nbatch_size=1\npatch_size=32\niterations=3\n";

#[test]
fn synth_train_upsample_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("tiny.cfg"), TINY).unwrap();
    let out = flexup(&["synth", "--out", &s(&root.join("data")), "--surfaces", "sphere", "--shapes", "1", "--points", "100", "--factors", "2,4"]);
    assert!(out.status.success(), "{out:?}");
    let shape = root.join("data/sphere/0");
    assert!(shape.join("dense_R4.xyz").exists());

    let out = flexup(&["train", "--data", &s(&root.join("data")), "--config", &s(&root.join("tiny.cfg")), "--out", &s(&root.join("m.ckpt")), "--log", &s(&root.join("log.csv"))]);
    assert!(out.status.success(), "{out:?}");
    let log = fs::read_to_string(root.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let out = flexup(&["upsample", "--checkpoint", &s(&root.join("m.ckpt")), "--input", &s(&shape.join("sparse.xyz")), "--factor", "3", "--patch-size", "32", "--out", &s(&root.join("up.xyz"))]);
    assert!(out.status.success(), "{out:?}");
    let up = fs::read_to_string(root.join("up.xyz")).unwrap();
    assert_eq!(up.lines().filter(|l| !l.trim().is_empty()).count(), 300);

    let out = flexup(&["eval", "--pred", &s(&root.join("up.xyz")), "--gt", &s(&shape.join("dense_R2.xyz")), "--surface", &s(&shape.join("surface.txt")), "--metrics", "cd,p2f", "--out", &s(&root.join("r.json"))]);
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("cd="), "{text}");
    assert!(text.contains("p2f_mean="));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("r.json")).unwrap()).unwrap();
    assert!(json["cd"].as_f64().unwrap() > 0.0);
    assert!(json["p2f"]["std"].as_f64().is_some());

    let out = flexup(&["upsample", "--checkpoint", &s(&root.join("m.ckpt")), "--input", &s(&shape.join("sparse.xyz")), "--factor", "5", "--out", &s(&root.join("bad.xyz"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("R_max = 4"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(flexup(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(flexup(&["upsample", "--factor", "2"]).status.code(), Some(2));

    fs::write(root.join("bad.cfg"), "colour=red\n").unwrap();
    let out = flexup(&["train", "--data", &s(root), "--config", &s(&root.join("bad.cfg")), "--out", &s(&root.join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = flexup(&["eval", "--pred", &s(&root.join("missing.xyz")), "--gt", &s(&root.join("missing.xyz"))]);
    assert_eq!(out.status.code(), Some(3));

    fs::write(root.join("junk.xyz"), "1 2\n").unwrap();
    let out = flexup(&["eval", "--pred", &s(&root.join("junk.xyz")), "--gt", &s(&root.join("junk.xyz"))]);
    assert_eq!(out.status.code(), Some(3));

    let out = flexup(&["eval", "--pred", &s(&root.join("junk.xyz")), "--gt", &s(&root.join("junk.xyz")), "--metrics", "emd"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_detects_a_fault() {
    let out = flexup(&["gradcheck", "--no-uni-loss"]);
    assert!(out.status.success(), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("result=pass"));
    let out = flexup(&["gradcheck", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("result=fail"));
}

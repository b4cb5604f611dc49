use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fgv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgv")).args(args).env_remove("FGV_SEED").output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.to_str().unwrap();
    let mut args = vec!["gen-data", "--classes", "3", "--per-class", "4", "--canvas", "48", "--input", "32", "--out-dir", out];
    args.extend_from_slice(extra);
    let o = fgv(&args);
    assert!(o.status.success(), "{}", text(&o));
    dir.join("manifest.txt")
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v = Vec::new();
    for e in walk(dir) {
        v.push((e.strip_prefix(dir).unwrap().display().to_string(), fs::read(&e).unwrap()));
    }
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

/// Option blocks of a help page: the `--flag` line plus its continuation.
fn option_blocks(help: &str) -> Vec<String> {
    let mut blocks: Vec<String> = Vec::new();
    for line in help.lines().skip_while(|l| !l.starts_with("Options:")).skip(1) {
        let t = line.trim_start();
        if t.starts_with("--") || t.starts_with("-v") || t.starts_with("-h") {
            blocks.push(t.to_string());
        } else if let Some(b) = blocks.last_mut() {
            b.push(' ');
            b.push_str(t);
        }
    }
    blocks
}

#[test]
fn every_flag_documents_its_default() {
    let required: &[(&str, &[&str])] = &[
        ("gen-data", &[]),
        ("train", &["--manifest"]),
        ("eval", &["--ckpt", "--manifest"]),
        ("pipeline", &["--loc", "--cls", "--manifest"]),
        ("bench", &["--ckpt"]),
        ("heatmap", &["--ckpt"]),
        ("analyze-bins", &["--manifest"]),
    ];
    for (cmd, req) in required {
        let o = fgv(&[cmd, "--help"]);
        assert!(o.status.success());
        let blocks = option_blocks(&text(&o));
        assert!(blocks.len() > 4, "{cmd}");
        for b in &blocks {
            let flag = b.split([' ', ',']).find(|w| w.starts_with("--")).unwrap_or("");
            if flag == "--help" || flag == "--version" || req.contains(&flag) {
                continue;
            }
            assert!(b.contains("[default"), "{cmd}: {b}");
        }
    }
}

#[test]
fn gen_data_is_reproducible_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    gen(&a, &[]);
    gen(&b, &[]);
    gen(&c, &["--seed", "5"]);
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("#fgv-manifest v1 classes=3 split=train"));
    assert_eq!(manifest.lines().count(), 2 + 12);
}

#[test]
fn seed_precedence_flag_env_config_default() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "seed = 5\n").unwrap();
    let run = |name: &str, args: &[&str], env: Option<&str>| {
        let dir = tmp.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fgv"));
        cmd.env_remove("FGV_SEED");
        if let Some(v) = env {
            cmd.env("FGV_SEED", v);
        }
        let d = dir.to_str().unwrap();
        let o = cmd.args(["gen-data", "--classes", "2", "--per-class", "2", "--canvas", "48", "--input", "32", "--out-dir", d]).args(args).output().unwrap();
        assert!(o.status.success(), "{}", text(&o));
        tree(&dir)
    };
    let c = cfg.to_str().unwrap();
    let five = run("five", &["--seed", "5"], None);
    let six = run("six", &["--seed", "6"], None);
    assert_eq!(run("cfg", &["--config", c], None), five);
    assert_eq!(run("env", &["--config", c], Some("6")), six);
    assert_eq!(run("flag", &["--config", c, "--seed", "6"], Some("5")), six);
    assert_ne!(run("default", &[], None), five);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(fgv(&["gen-data", "--classes", "1", "--out-dir", out]).status.code(), Some(2));
    assert_eq!(fgv(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(fgv(&["eval", "--ckpt", "missing.ckpt", "--manifest", "missing.txt"]).status.code(), Some(1));
    fs::write(tmp.path().join("bad.toml"), "[train]\nlearning_rate = 1\n").unwrap();
    let bad = tmp.path().join("bad.toml");
    assert_eq!(fgv(&["--config", bad.to_str().unwrap(), "gen-data", "--out-dir", out]).status.code(), Some(2));
    assert_eq!(fgv(&["--help"]).status.code(), Some(0));
}

#[test]
fn analyze_bins_counts_every_record() {
    let tmp = tempfile::tempdir().unwrap();
    let m = gen(&tmp.path().join("d"), &[]);
    let out = tmp.path().join("h");
    fs::create_dir(&out).unwrap();
    let o = fgv(&["analyze-bins", "--manifest", m.to_str().unwrap(), "--bin-size", "1.5", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    for name in ["centre_x", "centre_y", "width", "height"] {
        let csv = fs::read_to_string(out.join(format!("hist_{name}.csv"))).unwrap();
        let total: u64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum();
        assert_eq!(total, 12, "{name}");
    }
}

#[test]
fn train_eval_resume_heatmap_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let m = gen(&tmp.path().join("d"), &[]);
    let m = m.to_str().unwrap();
    let path = |n: &str| tmp.path().join(n).to_str().unwrap().to_string();
    let (cls, loc, hist) = (path("cls.ckpt"), path("loc.ckpt"), path("hist.csv"));
    let common = ["--arch", "18", "--width", "0.0625", "--input", "32", "--batch-size", "4", "--manifest", m];

    let mut args = vec!["train", "--swp", "--view", "box", "--epochs", "2", "--out", &cls, "--history", &hist];
    args.extend_from_slice(&common);
    let o = fgv(&args);
    assert!(o.status.success(), "{}", text(&o));
    let mut args = vec!["train", "--swp", "--view", "box", "--epochs", "1", "--resume", &cls, "--out", &cls, "--history", &hist];
    args.extend_from_slice(&common);
    let o = fgv(&args);
    assert!(o.status.success(), "{}", text(&o));
    let h = fs::read_to_string(&hist).unwrap();
    let epochs: Vec<&str> = h.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "1", "2"]);

    let mut args = vec!["train", "--task", "loc", "--view", "central", "--bin-size", "1.75", "--epochs", "1", "--out", &loc];
    args.extend_from_slice(&common);
    let o = fgv(&args);
    assert!(o.status.success(), "{}", text(&o));

    let o = fgv(&["eval", "--ckpt", &cls, "--manifest", m, "--view", "box"]);
    assert!(o.status.success() && text(&o).contains("top-5:"), "{}", text(&o));
    let o = fgv(&["eval", "--ckpt", &loc, "--manifest", m, "--view", "central"]);
    let t = text(&o);
    assert!(o.status.success() && t.contains("mean accuracy:") && t.contains("d>=3"), "{t}");

    for gt in [true, false] {
        let mut args = vec!["pipeline", "--loc", &loc, "--cls", &cls, "--manifest", m];
        if gt {
            args.push("--gt-boxes");
        }
        let o = fgv(&args);
        assert!(o.status.success() && text(&o).contains("top-1:"), "{}", text(&o));
    }

    let heat = path("heat");
    let o = fgv(&["heatmap", "--ckpt", &cls, "--manifest", m, "--limit", "2", "--out-dir", &heat]);
    assert!(o.status.success(), "{}", text(&o));
    let files: Vec<_> = fs::read_dir(&heat).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 2);
    assert!(fs::read(&files[0]).unwrap().starts_with(b"P5"));

    // Heatmaps need an SWP head; a plain localiser is a usage error.
    assert_eq!(fgv(&["heatmap", "--ckpt", &loc, "--manifest", m]).status.code(), Some(2));
    assert_eq!(fgv(&["bench", "--ckpt", &cls, "--images", "10"]).status.code(), Some(2));
}

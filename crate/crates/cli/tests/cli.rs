use std::path::Path;
use std::process::{Command, Output};

fn shelfid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shelfid")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn schedule_prints_three_block_rates() {
    let dir = tempfile::tempdir().unwrap();
    let o = shelfid(&["schedule", "--blocks", "3", "--top-lr", "2e-4", "--decay", "0.7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "block_index,lr\n0,9.8e-05\n1,1.4e-04\n2,2.0e-04\n");
    assert!(stderr(&o).contains("num_blocks = 3"));
}

#[test]
fn no_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = shelfid(&[], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn classify_with_missing_gallery_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = shelfid(&["classify", "--gallery", "missing.gal", "--checkpoint", "missing.ckpt", "--image", "x.png"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), "# schedule\nnum_blocks = 5\ntop_lr = 1e-3\n").unwrap();
    let o = shelfid(&["schedule", "--config", "run.conf"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 6);
    assert!(stdout(&o).ends_with("4,1.0e-03\n"));
    let o = shelfid(&["schedule", "--config", "run.conf", "--blocks", "2"], dir.path());
    assert_eq!(stdout(&o), "block_index,lr\n0,7.0e-04\n1,1.0e-03\n");
    let o = shelfid(&["schedule", "--config", "run.conf", "--set", "lr_decay=0.5", "--blocks", "2"], dir.path());
    assert_eq!(stdout(&o), "block_index,lr\n0,5.0e-04\n1,1.0e-03\n");
}

#[test]
fn unknown_config_key_and_bad_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "learning_rate = 1\n").unwrap();
    let o = shelfid(&["schedule", "--config", "bad.conf"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"));
    let o = shelfid(&["schedule", "--decay", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = shelfid(&["finetune", "--epochs", "0", "--manifest", "m.csv", "--out", "x.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_shows_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = shelfid(&["finetune", "--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let help = stdout(&o);
    for flag in ["--epochs", "--batch-size", "--top-lr", "--decay", "--weight-decay", "--margin", "--scale", "--depth"] {
        let line = help.lines().position(|l| l.trim_start().starts_with(flag)).unwrap_or_else(|| panic!("{flag}"));
        assert!(help.lines().nth(line + 1).unwrap().contains("[default:"), "{flag}");
    }
    assert!(help.contains("[default: 0.0002]"));
    assert!(help.contains("[default: 0.7]"));
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let ok = |args: &[&str]| {
        let o = shelfid(args, cwd);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    ok(&["synth", "--out", "data", "--num-classes", "3", "--min-class-size", "6", "--max-class-size", "9"]);
    ok(&["init", "--out", "init.ckpt", "--embed-dim", "32"]);

    let eval = ["eval", "--checkpoint", "init.ckpt", "--train", "data/manifest.csv", "--test", "data/manifest.csv", "--format", "csv"];
    let first = stdout(&ok(&eval));
    assert!(first.starts_with("class,n_test,n_correct,accuracy\n"));
    assert!(first.contains("__micro__") && first.contains("__macro__"));
    assert_eq!(stdout(&ok(&eval)), first);
    let mut xml = eval.to_vec();
    xml[8] = "xml";
    assert_eq!(shelfid(&xml, cwd).status.code(), Some(1));

    let o = ok(&[
        "finetune", "--manifest", "data/manifest.csv", "--init", "init.ckpt", "--out", "ft.ckpt", "--epochs", "2",
        "--batch-size", "4", "--depth", "4", "--val-per-class", "1", "--history", "history.csv",
    ]);
    assert!(stderr(&o).contains("depth = 4"));
    let history = std::fs::read_to_string(cwd.join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,loss,val_macro_acc"));
    assert_eq!(history.lines().count(), 3);

    ok(&["enroll", "--checkpoint", "ft.ckpt", "--gallery", "g.gal", "--manifest", "data/manifest.csv"]);
    let o = ok(&["classify", "--checkpoint", "ft.ckpt", "--gallery", "g.gal", "--image", "data/product_00_000.png", "--image", "data/product_02_001.png"]);
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    for line in &lines {
        let (id, score) = line.split_once('\t').unwrap();
        assert!(id.starts_with("product_0"));
        let score: f64 = score.parse().unwrap();
        assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&score));
    }

    let dup = shelfid(&["enroll", "--checkpoint", "ft.ckpt", "--gallery", "g.gal", "--id", "product_00", "--image", "data/product_00_000.png"], cwd);
    assert_eq!(dup.status.code(), Some(2));
    ok(&["enroll", "--checkpoint", "ft.ckpt", "--gallery", "g.gal", "--id", "new_item", "--image", "data/product_01_000.png"]);
}

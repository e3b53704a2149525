use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
seed = 3
run.dir = run
data.synthetic = true
synth.n_images = 4
synth.size = 16
model.scale_factor = 2
model.levels = 2
model.flow_steps_per_level = 1
model.ncl_blocks = 1
model.encoder_blocks = 1
model.encoder_width = 4
model.coupling_hidden = 4
train.batch_size = 2
train.patch_hr = 16
train.total_steps = 4
train.halve_at = 2
train.checkpoint_every = 2
";

fn ncsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncsr"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup(cfg: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.txt"), cfg).unwrap();
    dir
}

#[test]
fn train_writes_a_complete_run_directory() {
    let dir = setup(TINY);
    let o = ncsr(dir.path(), &["train", "-c", "cfg.txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    for f in ["config.txt", "config.resolved.txt", "train_log.tsv", "run_info.txt", "final.ncsr", "checkpoint_0000002.ncsr"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(run.join("config.txt")).unwrap(), TINY);
    let resolved = fs::read_to_string(run.join("config.resolved.txt")).unwrap();
    let a = ncsr_cli::RunConfig::from_text(&resolved).unwrap();
    assert_eq!(a, ncsr_cli::RunConfig::from_text(TINY).unwrap());
    let info = fs::read_to_string(run.join("run_info.txt")).unwrap();
    assert!(info.contains("seed = 3") && info.contains("checkpoint_sha256 = ") && info.contains("build = "));
    ncsr::checkpoint::Checkpoint::load(&run.join("final.ncsr")).unwrap();
}

#[test]
fn config_errors_exit_2_and_name_the_problem() {
    let dir = setup("seed = 1\nmodel.levels = three\n");
    let o = ncsr(dir.path(), &["train", "-c", "cfg.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let dir = setup("seed = 1\n");
    let o = ncsr(dir.path(), &["train", "-c", "cfg.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.manifest"), "{}", stderr(&o));

    let dir = setup("data.manifest = nowhere.tsv\n");
    let o = ncsr(dir.path(), &["train", "-c", "cfg.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.manifest"), "{}", stderr(&o));
}

#[test]
fn sample_and_eval_end_to_end() {
    let dir = setup(TINY);
    let d = dir.path();
    assert!(ncsr(d, &["train", "-c", "cfg.txt"]).status.success());
    let o = ncsr(d, &["synth-data", "-c", "cfg.txt", "-o", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(d.join("data")).unwrap().count(), 5);

    // the HR corpus image doubles as an 16x16 LR input
    let o = ncsr(d, &["sample", "-k", "run/final.ncsr", "-i", "data/synth0000.png", "-n", "3", "-t", "0", "-s", "1", "-o", "t0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let png: Vec<Vec<u8>> = (0..3).map(|i| fs::read(d.join(format!("t0/sample_{i:03}.png"))).unwrap()).collect();
    assert!(png[0] == png[1] && png[1] == png[2]);
    let img = ncsr::data::load_png(&d.join("t0/sample_000.png")).unwrap();
    assert_eq!(img.shape(), [1, 3, 32, 32]);
    let info = fs::read_to_string(d.join("t0/sample_info.txt")).unwrap();
    assert!(info.contains("temperature = 0.0") && info.contains("seed = 1") && info.contains("checkpoint_sha256"));

    let o = ncsr(d, &["eval", "-k", "run/final.ncsr", "-m", "data/manifest.tsv", "-n", "3", "-t", "0", "-s", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("diversity=0.000"), "{}", stdout(&o));

    let o = ncsr(d, &["eval", "-k", "run/final.ncsr", "-m", "data/manifest.tsv", "-n", "1", "-t", "0.9", "-s", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("diversity=undefined"), "{}", stdout(&o));
    let tsv = fs::read_to_string(d.join("run/eval_final_n1_t0.9_s2/metrics.tsv")).unwrap();
    assert!(tsv.lines().nth(1).unwrap().contains("undefined"));
}

#[test]
fn sample_rejects_mismatched_lr_size() {
    let dir = setup(&TINY.replace("synth.size = 16", "synth.size = 18"));
    let d = dir.path();
    let cfg = TINY.to_string();
    fs::write(d.join("train.txt"), cfg).unwrap();
    assert!(ncsr(d, &["train", "-c", "train.txt"]).status.success());
    assert!(ncsr(d, &["synth-data", "-c", "cfg.txt", "-o", "odd"]).status.success());
    let o = ncsr(d, &["sample", "-k", "run/final.ncsr", "-i", "odd/synth0000.png", "-n", "1", "-t", "0", "-s", "0", "-o", "x"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn eval_fails_only_when_every_image_fails() {
    let dir = setup(TINY);
    let d = dir.path();
    assert!(ncsr(d, &["train", "-c", "cfg.txt"]).status.success());
    assert!(ncsr(d, &["synth-data", "-c", "cfg.txt", "-o", "data"]).status.success());
    let tiny = ncsr::numerics::Tensor::full([1, 3, 4, 4], 0.5);
    ncsr::data::save_png(&d.join("data/small.png"), &tiny).unwrap();
    let mut m = fs::read_to_string(d.join("data/manifest.tsv")).unwrap();
    m.push_str("small\tsmall.png\n");
    fs::write(d.join("data/mixed.tsv"), m).unwrap();
    fs::write(d.join("data/bad.tsv"), "small\tsmall.png\n").unwrap();

    let o = ncsr(d, &["eval", "-k", "run/final.ncsr", "-m", "data/mixed.tsv", "-n", "2", "-t", "0.5", "-s", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("small"));
    let o = ncsr(d, &["eval", "-k", "run/final.ncsr", "-m", "data/bad.tsv", "-n", "2", "-t", "0.5", "-s", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_reports_and_fails_on_a_singular_weight() {
    let dir = tempfile::tempdir().unwrap();
    let o = ncsr(dir.path(), &["verify", "--level", "quick", "-s", "4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count() >= 12);
    let o = ncsr(dir.path(), &["verify", "--level", "quick", "-s", "4", "--inject-singular-1x1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL logdet.inv_conv1x1"));
}

#[test]
fn threads_do_not_change_eval_reports() {
    let dir = setup(TINY);
    let d = dir.path();
    assert!(ncsr(d, &["train", "-c", "cfg.txt"]).status.success());
    assert!(ncsr(d, &["synth-data", "-c", "cfg.txt", "-o", "data"]).status.success());
    let args = ["eval", "-k", "run/final.ncsr", "-m", "data/manifest.tsv", "-n", "2", "-t", "0.7", "-s", "9"];
    let report = d.join("run/eval_final_n2_t0.7_s9/metrics.tsv");
    let one = Command::new(env!("CARGO_BIN_EXE_ncsr")).args(args).current_dir(d).env("NCSR_THREADS", "1").output().unwrap();
    assert!(one.status.success());
    let a = fs::read(&report).unwrap();
    let three = Command::new(env!("CARGO_BIN_EXE_ncsr")).args(args).current_dir(d).env("NCSR_THREADS", "3").output().unwrap();
    assert!(three.status.success());
    assert_eq!(a, fs::read(&report).unwrap());
}

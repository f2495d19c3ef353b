use std::path::Path;
use std::process::{Command, Output};

fn bnrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnrnn")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn small_copy_run(dir: &Path, extra: &[&str]) -> Output {
    let ckpt = dir.join("run.ckpt");
    let mut args = vec![
        "train",
        "--task",
        "copy",
        "--updates",
        "12",
        "--eval-every",
        "6",
        "--hidden-size",
        "6",
        "--train-examples",
        "100",
        "--out-dir",
        dir.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--record-timing",
        "false",
    ];
    args.extend_from_slice(extra);
    bnrnn(&args)
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&bnrnn(&[])), 1);
    assert_eq!(code(&bnrnn(&["train", "--no-such-flag", "1"])), 1);
    assert_eq!(code(&bnrnn(&["train", "--hidden-size", "many"])), 1);
    assert_eq!(code(&bnrnn(&["grad-flow", "--gammas", "0.1,-1"])), 1);
    assert_eq!(code(&bnrnn(&["--help"])), 0);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    assert_eq!(code(&bnrnn(&["popstat-trace", "--from", missing.to_str().unwrap()])), 2);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = bnrnn(&["train", "--task", "seq-mnist", "--data-path", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_copy_run(
        dir.path(),
        &["--model", "rnn", "--learning-rate", "1e308", "--clip-threshold", "1e300", "--optimizer", "sgd"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_writes_record_and_checkpoint_for_follow_up_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_copy_run(dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let record = std::fs::read_to_string(dir.path().join("run.jsonl")).unwrap();
    assert!(record.lines().count() > 12);

    let ckpt = dir.path().join("run.ckpt");
    let table = dir.path().join("trace.csv");
    let out = bnrnn(&[
        "popstat-trace",
        "--from",
        ckpt.to_str().unwrap(),
        "--units",
        "3",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(&table).unwrap();
    assert!(csv.starts_with("normalizer,unit,t,mean,var\n"));
    assert!(dir.path().join("trace.csv.meta.json").exists());

    let again = tempfile::tempdir().unwrap();
    small_copy_run(again.path(), &[]);
    let rows = |text: &str| text.lines().skip(1).map(str::to_owned).collect::<Vec<_>>();
    let repeat = std::fs::read_to_string(again.path().join("run.jsonl")).unwrap();
    assert_eq!(rows(&record), rows(&repeat));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cfg.txt");
    std::fs::write(&file, "task = copy\nhidden_size = 5 # small\nupdates = 4\neval_every = 2\n").unwrap();
    let out = bnrnn(&["train", "--config", file.to_str().unwrap(), "--updates", "2", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let header = std::fs::read_to_string(dir.path().join("run.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(header.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["hidden_size"], 5);
    assert_eq!(header["config"]["updates"], 2);
}

#[test]
fn tables_are_byte_identical_across_runs() {
    let args = ["tanh-derivative", "--samples", "2000", "--seed", "4"];
    assert_eq!(bnrnn(&args).stdout, bnrnn(&args).stdout);
    let args = [
        "grad-flow",
        "--task",
        "copy",
        "--hidden-size",
        "4",
        "--seq-len",
        "5",
        "--gammas",
        "0.1,1",
    ];
    let first = bnrnn(&args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(first.stdout, bnrnn(&args).stdout);
    assert_eq!(String::from_utf8(first.stdout).unwrap().lines().count(), 1 + 2 * 5);
}

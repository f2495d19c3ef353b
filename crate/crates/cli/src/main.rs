//! `bnrnn`: train batch-normalized recurrent networks and run the
//! diagnostic studies, writing CSV tables and JSONL run records.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnrnn_core::experiments::output::{csv_bytes, write_table};
use bnrnn_core::experiments::studies::sweep_rows;
use bnrnn_core::experiments::{
    checkpoint, eval_lengths, gamma_sweep, grad_flow_sweep, load_task, popstat_trace, tanh_derivative_study, train,
    ExperimentConfig, TaskData, TaskKind,
};
use bnrnn_core::recurrent::CellKind;
use bnrnn_core::tasks::digits::write_synthetic_mnist;
use bnrnn_core::tasks::Split;
use bnrnn_core::{Error, Result};
use clap::parser::ValueSource;
use clap::{value_parser, Arg, ArgMatches, Command};
use serde::Serialize;
use serde_json::{json, Value};

fn config_flags(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("Key-value config file; command-line flags override it"),
    );
    ExperimentConfig::keys().into_iter().fold(cmd, |cmd, key| {
        let flag = key.replace('_', "-");
        cmd.arg(
            Arg::new(key.clone())
                .long(flag)
                .value_name("VALUE")
                .help_heading("Config fields")
                .help(format!("Sets `{key}`")),
        )
    })
}

fn out_flag() -> Arg {
    Arg::new("out")
        .long("out")
        .value_name("CSV")
        .value_parser(value_parser!(PathBuf))
        .help("Table destination (a .meta.json sidecar is written next to it); stdout when absent")
}

fn from_flag() -> Arg {
    Arg::new("from")
        .long("from")
        .value_name("CHECKPOINT")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help("Checkpoint written by `train`")
}

fn list_flag(name: &'static str, default: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("LIST").default_value(default).help(help)
}

fn cli() -> Command {
    Command::new("bnrnn")
        .about("Batch-normalized recurrent networks: training and diagnostic studies")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_flags(
            Command::new("train").about("Train one model; writes run.jsonl to --out-dir and a checkpoint to --checkpoint"),
        ))
        .subcommand(
            config_flags(
                Command::new("grad-flow")
                    .about("Gradient norm with respect to each hidden state of an untrained model, per initial gamma"),
            )
            .arg(list_flag("gammas", "0.1,0.2,0.5,1.0", "Initial gamma values"))
            .arg(
                Arg::new("loss-scale")
                    .long("loss-scale")
                    .value_name("FACTOR")
                    .default_value("1")
                    .value_parser(value_parser!(f64))
                    .help("Multiplier applied to the loss before the backward pass"),
            )
            .arg(out_flag()),
        )
        .subcommand(
            Command::new("tanh-derivative")
                .about("Monte Carlo expectation and quartiles of tanh' under Gaussian inputs")
                .arg(list_flag("sigmas", "0,0.25,0.5,0.75,1", "Input standard deviations"))
                .arg(
                    Arg::new("samples")
                        .long("samples")
                        .default_value("1000000")
                        .value_parser(value_parser!(usize)),
                )
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
                .arg(out_flag()),
        )
        .subcommand(
            Command::new("popstat-trace")
                .about("Per-timestep population mean and variance for a sample of units")
                .arg(from_flag())
                .arg(
                    Arg::new("units")
                        .long("units")
                        .default_value("16")
                        .value_parser(value_parser!(usize))
                        .help("Units sampled per normalizer"),
                )
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
                .arg(out_flag()),
        )
        .subcommand(
            Command::new("eval-lengths")
                .about("Inference-phase bits per character on windows of each length")
                .arg(from_flag())
                .arg(list_flag("lengths", "50,100,200", "Window lengths"))
                .arg(
                    Arg::new("split")
                        .long("split")
                        .default_value("valid")
                        .value_parser(value_parser!(Split)),
                )
                .arg(out_flag()),
        )
        .subcommand(
            config_flags(Command::new("gamma-sweep").about("One training run per initial gamma, all else fixed"))
                .arg(list_flag("gammas", "0.1,1.0", "Initial gamma values"))
                .arg(out_flag()),
        )
        .subcommand(
            Command::new("synth-digits")
                .about("Write procedurally rendered digits as MNIST-style IDX files")
                .arg(
                    Arg::new("dir")
                        .long("dir")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(Arg::new("train").long("train").default_value("10000").value_parser(value_parser!(usize)))
                .arg(Arg::new("test").long("test").default_value("2000").value_parser(value_parser!(usize)))
                .arg(Arg::new("seed").long("seed").default_value("2016").value_parser(value_parser!(u64))),
        )
}

fn parse_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("{what}: cannot parse {s:?} as a number")))
        })
        .collect()
}

fn parse_lengths(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("lengths: cannot parse {s:?} as a length")))
        })
        .collect()
}

/// Config file entries followed by command-line flags, so later entries win.
fn config_pairs(m: &ArgMatches) -> Result<Vec<(String, String)>> {
    let mut pairs = match m.get_one::<PathBuf>("config") {
        Some(path) => ExperimentConfig::parse_kv(&std::fs::read_to_string(path)?)?,
        None => Vec::new(),
    };
    for key in ExperimentConfig::keys() {
        if m.value_source(&key) == Some(ValueSource::CommandLine) {
            if let Some(v) = m.get_one::<String>(&key) {
                pairs.push((key, v.clone()));
            }
        }
    }
    Ok(pairs)
}

/// The task preset, then the config file, then command-line flags; `adjust`
/// sees the preset before any explicit value is applied.
fn build_config(m: &ArgMatches, adjust: impl FnOnce(&mut ExperimentConfig)) -> Result<ExperimentConfig> {
    let pairs = config_pairs(m)?;
    let task = match pairs.iter().rev().find(|(k, _)| k.trim().replace('-', "_") == "task") {
        Some((_, v)) => serde_json::from_value::<TaskKind>(Value::String(v.trim().to_string()))
            .map_err(|_| Error::Config(format!("unknown task {v:?}")))?,
        None => TaskKind::Pmnist,
    };
    let mut cfg = ExperimentConfig::preset(task);
    adjust(&mut cfg);
    cfg.set_many(&pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(rows: &[T], out: Option<&PathBuf>, cfg: Option<&ExperimentConfig>, extra: Value) -> Result<()> {
    match out {
        Some(path) => {
            write_table(path, rows, cfg, extra)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&csv_bytes(rows)?)?;
        }
    }
    Ok(())
}

fn run_train(m: &ArgMatches) -> Result<()> {
    let cfg = build_config(m, |_| {})?;
    let out = train(&cfg)?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        out.record.write_jsonl(&dir.join("run.jsonl"))?;
    }
    if let Some(path) = &cfg.checkpoint {
        checkpoint::save(path, &cfg, &out.model, &out.optimizer, out.updates)?;
    }
    let last = |metric: &str| out.record.last_value("valid", metric).unwrap_or(f64::NAN);
    println!(
        "updates {} | valid cross_entropy {:.4} | bpc {:.4} | accuracy {:.4} | config {}",
        out.updates,
        last("cross_entropy"),
        last("bpc"),
        last("accuracy"),
        &out.record.header.config_hash[..12]
    );
    Ok(())
}

fn run_grad_flow(m: &ArgMatches) -> Result<()> {
    // The study is defined on the normalized tanh RNN unless told otherwise.
    let cfg = build_config(m, |c| c.model = CellKind::BnRnn)?;
    let gammas = parse_list(m.get_one::<String>("gammas").unwrap(), "gammas")?;
    let scale = *m.get_one::<f64>("loss-scale").unwrap();
    let data = load_task(&cfg)?;
    let rows = grad_flow_sweep(&cfg, &data, &gammas, scale)?;
    emit(&rows, m.get_one("out"), Some(&cfg), json!({ "gammas": gammas, "loss_scale": scale }))
}

fn run_tanh(m: &ArgMatches) -> Result<()> {
    let sigmas = parse_list(m.get_one::<String>("sigmas").unwrap(), "sigmas")?;
    let samples = *m.get_one::<usize>("samples").unwrap();
    let seed = *m.get_one::<u64>("seed").unwrap();
    let rows = tanh_derivative_study(&sigmas, samples, seed)?;
    emit(&rows, m.get_one("out"), None, json!({ "samples": samples, "seed": seed }))
}

fn run_popstat(m: &ArgMatches) -> Result<()> {
    let ckpt = checkpoint::load(m.get_one::<PathBuf>("from").unwrap())?;
    let units = *m.get_one::<usize>("units").unwrap();
    let seed = *m.get_one::<u64>("seed").unwrap();
    let trace = popstat_trace(&ckpt.model, units, seed)?;
    if !trace.degenerate.is_empty() {
        eprintln!("{} sampled units have zero variance at every timestep", trace.degenerate.len());
    }
    let degenerate: Vec<Value> = trace.degenerate.iter().map(|(n, u)| json!({ "normalizer": n, "unit": u })).collect();
    emit(
        &trace.rows,
        m.get_one("out"),
        Some(&ckpt.config),
        json!({ "units": units, "seed": seed, "degenerate": degenerate }),
    )
}

fn run_eval_lengths(m: &ArgMatches) -> Result<()> {
    let ckpt = checkpoint::load(m.get_one::<PathBuf>("from").unwrap())?;
    let lengths = parse_lengths(m.get_one::<String>("lengths").unwrap())?;
    let split = *m.get_one::<Split>("split").unwrap();
    let data = load_task(&ckpt.config)?;
    let TaskData::Language { corpus, .. } = &data else {
        return Err(Error::Config("eval-lengths needs a character language model checkpoint".into()));
    };
    let rows = eval_lengths(&ckpt.model, corpus, &lengths, split, ckpt.config.batch_size)?;
    emit(
        &rows,
        m.get_one("out"),
        Some(&ckpt.config),
        json!({ "split": split.to_string(), "t_max": ckpt.config.effective_t_max(data.steps()) }),
    )
}

fn run_gamma_sweep(m: &ArgMatches) -> Result<()> {
    let cfg = build_config(m, |_| {})?;
    let gammas = parse_list(m.get_one::<String>("gammas").unwrap(), "gammas")?;
    let data = load_task(&cfg)?;
    let runs = gamma_sweep(&cfg, &data, &gammas)?;
    for run in &runs {
        if let Err(e) = &run.outcome {
            eprintln!("gamma {}: {e}", run.gamma);
        }
    }
    emit(&sweep_rows(&runs), m.get_one("out"), Some(&cfg), json!({ "gammas": gammas }))
}

fn run_synth(m: &ArgMatches) -> Result<()> {
    let dir: &Path = m.get_one::<PathBuf>("dir").unwrap();
    let (n_train, n_test) = (*m.get_one::<usize>("train").unwrap(), *m.get_one::<usize>("test").unwrap());
    write_synthetic_mnist(dir, n_train, n_test, *m.get_one::<u64>("seed").unwrap())?;
    eprintln!("wrote {n_train} training and {n_test} test digits to {}", dir.display());
    Ok(())
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    match matches.subcommand() {
        Some(("train", m)) => run_train(m),
        Some(("grad-flow", m)) => run_grad_flow(m),
        Some(("tanh-derivative", m)) => run_tanh(m),
        Some(("popstat-trace", m)) => run_popstat(m),
        Some(("eval-lengths", m)) => run_eval_lengths(m),
        Some(("gamma-sweep", m)) => run_gamma_sweep(m),
        Some(("synth-digits", m)) => run_synth(m),
        _ => unreachable!("a subcommand is required"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

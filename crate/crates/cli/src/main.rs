use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use inode_core::events::{
    load_dataset, restrict_classes, split_holdout, take_random, AerFormat, LoadOptions,
};
use inode_core::report::{json_string, render_svg, write_csv};
use inode_core::stream::{format_prediction, run_session};
use inode_core::train::eval_seed;
use inode_core::{
    evaluate, Checkpoint, Dataset, Error, InodeConfig, LstmConfig, ModelSpec, OnlineClassifier, RunConfig,
    SensorDims, Split, SynthTask, Trainer,
};
use log::{info, warn};
use serde_json::json;

#[derive(Parser)]
#[command(name = "inode", version, about = "Per-event classification of event-camera streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints and learning curves.
    Train(TrainArgs),
    /// Accuracy of a checkpoint after n events, for each requested n.
    Eval(EvalArgs),
    /// Classify events one at a time from stdin, TCP or a recording.
    Stream(StreamArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Inode,
    Lstm,
    Bilstm,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root: class directories, or `train/` and `test/` splits.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic task such as `movedot2`.
    #[arg(long)]
    synthetic: Option<SynthTask>,
    /// Training items generated for a synthetic task, or kept from real data.
    #[arg(long)]
    n_train: Option<usize>,
    /// Test items generated for a synthetic task, or kept from real data.
    #[arg(long)]
    n_test: Option<usize>,
    /// Held-out fraction when the data has no `test/` split.
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    /// Keep only the first n events of every recording.
    #[arg(long)]
    truncate: Option<usize>,
    /// Drop recordings with fewer events, counted before truncation.
    #[arg(long)]
    min_events: Option<usize>,
    /// Drop recordings with more events, counted before truncation.
    #[arg(long)]
    max_events: Option<usize>,
    /// Keep only these classes, e.g. `0,1`.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "aer")]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Aer,
    Aer16,
}

impl From<FormatArg> for AerFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Aer => AerFormat::Aer,
            FormatArg::Aer16 => AerFormat::Aer16,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "inode")]
    model: Arch,
    /// State width (ODE) or hidden size (LSTM); defaults 30 and 72.
    #[arg(long)]
    hidden: Option<usize>,
    /// Train the initial ODE state instead of fixing it at zero.
    #[arg(long)]
    learn_h0: bool,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Batch size at full data; scaled by --rho.
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Fraction of the training set to use.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Events per training window.
    #[arg(long, default_value_t = 100)]
    s_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    d_max: f64,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = default_lengths())]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    eval_repeats: usize,
    /// Best checkpoint path; the last epoch goes to `<stem>.last.ckpt` and
    /// curves to `<stem>.metrics.{csv,json}` and `<stem>.curves.svg`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Seed used to build synthetic data and evaluation windows; defaults
    /// to the training seed stored in the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = default_lengths())]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// JSON output; defaults to `<ckpt stem>.eval.json`.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Serve the line protocol on this address instead of stdin.
    #[arg(long, conflicts_with = "replay")]
    listen: Option<String>,
    /// Stop after this many TCP connections have closed.
    #[arg(long, requires = "listen")]
    max_conns: Option<usize>,
    /// Classify a binary recording instead of reading the line protocol.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "aer", requires = "replay")]
    format: FormatArg,
    /// Replay as fast as possible instead of at recorded pace.
    #[arg(long, requires = "replay")]
    fast: bool,
}

fn default_lengths() -> Vec<usize> {
    (1..=10).map(|k| 10 * k).collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stream(a) => cmd_stream(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::NonFinite { .. }) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

/// Train and test sets. Synthetic test items come from `seed + 1`.
fn load_data(args: &DataArgs, seed: u64, sensor: SensorDims) -> anyhow::Result<(Dataset, Dataset)> {
    let (train, test) = if let Some(task) = args.synthetic {
        (
            task.generate(args.n_train.unwrap_or(2000), seed, Split::Train)?,
            task.generate(args.n_test.unwrap_or(500), seed.wrapping_add(1), Split::Test)?,
        )
    } else {
        let root = args.data.as_ref().expect("clap requires --data or --synthetic");
        let opts = |split| LoadOptions {
            truncate_to: args.truncate,
            min_events: args.min_events,
            max_events: args.max_events,
            sensor,
            format: args.format.into(),
            split,
        };
        let (train_dir, test_dir) = (root.join("train"), root.join("test"));
        let (mut train, mut test) = if train_dir.is_dir() && test_dir.is_dir() {
            (load_dataset(&train_dir, &opts(Split::Train))?, load_dataset(&test_dir, &opts(Split::Test))?)
        } else {
            let all = load_dataset(root, &opts(Split::Train))?;
            split_holdout(&all, args.test_frac, seed)?
        };
        if let Some(keep) = &args.classes {
            train = restrict_classes(&train, keep)?;
            test = restrict_classes(&test, keep)?;
        }
        if let Some(n) = args.n_train {
            train = take_random(&train, n, seed)?;
        }
        if let Some(n) = args.n_test {
            test = take_random(&test, n, seed.wrapping_add(1))?;
        }
        return Ok((train, test));
    };
    Ok((train, test))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let (train, test) = load_data(&a.data, a.seed, SensorDims::NMNIST)?;
    let classes = train.class_count;
    let model = match a.model {
        Arch::Inode => {
            let mut c = InodeConfig::standard(classes);
            c.state_dim = a.hidden.unwrap_or(c.state_dim);
            c.learn_h0 = a.learn_h0;
            ModelSpec::Inode(c)
        }
        Arch::Lstm | Arch::Bilstm => {
            ModelSpec::Lstm(LstmConfig::new(a.hidden.unwrap_or(72), classes, matches!(a.model, Arch::Bilstm)))
        }
    };
    let config = RunConfig {
        model,
        seq_len: a.s_len,
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch,
        rho: a.rho,
        seed: a.seed,
        eval_lengths: a.lengths,
        d_max: a.d_max,
        clip_norm: a.clip,
        eval_repeats: a.eval_repeats,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut trainer = Trainer::new(config, &train, &test)?;
    for _ in 0..a.epochs {
        trainer.run_epoch()?;
    }
    let outcome = trainer.finish();

    outcome.best.save(&a.out)?;
    outcome.last.save(&sibling(&a.out, "last.ckpt"))?;
    let csv_path = sibling(&a.out, "metrics.csv");
    let file = std::fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_csv(&outcome.metrics, BufWriter::new(file))?;
    std::fs::write(sibling(&a.out, "metrics.json"), json_string(&outcome.metrics)?)?;
    std::fs::write(sibling(&a.out, "curves.svg"), render_svg(&outcome.metrics))?;
    info!(
        "best epoch {} written to {}; metrics in {}",
        outcome.best_epoch,
        a.out.display(),
        csv_path.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    if !path.is_file() {
        bail!(Error::Usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let seed = a
        .seed
        .or_else(|| ckpt.meta.run_config.as_ref().map(|c| c.seed))
        .unwrap_or(0);
    let (_, test) = load_data(&a.data, seed, ckpt.meta.sensor)?;
    if test.class_count != ckpt.meta.classes {
        bail!(Error::Usage(format!(
            "checkpoint has {} classes but the data has {}",
            ckpt.meta.classes, test.class_count
        )));
    }
    let loss_steps = a.lengths.iter().copied().max().unwrap_or(1);
    let eval = evaluate(&ckpt.model, &ckpt.stats, &test, &a.lengths, loss_steps, eval_seed(seed), a.repeats)?;

    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{:>6}  {:>8}", "events", "accuracy")?;
    for (n, acc) in eval.lengths.iter().zip(&eval.accuracy) {
        writeln!(out, "{n:>6}  {acc:>8.4}")?;
    }
    let rows: Vec<_> = eval
        .lengths
        .iter()
        .zip(&eval.accuracy)
        .zip(&eval.predictions)
        .map(|((n, acc), preds)| json!({"length": n, "accuracy": acc, "predictions": preds}))
        .collect();
    let doc = json!({
        "model": ckpt.meta.model.to_string(),
        "test_items": test.len(),
        "seed": seed,
        "loss": eval.loss,
        "rows": rows,
    });
    let json_path = a.json.unwrap_or_else(|| sibling(&a.ckpt, "eval.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    Ok(())
}

fn cmd_stream(a: StreamArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let (model, stats, sensor) = (&ckpt.model, ckpt.stats, ckpt.meta.sensor);

    if let Some(path) = &a.replay {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let events = AerFormat::from(a.format).parse(&bytes)?;
        let mut clf = OnlineClassifier::new(model, stats, sensor)?;
        let mut out = BufWriter::new(io::stdout().lock());
        let mut line = String::new();
        let started = Instant::now();
        let t0 = events.first().map_or(0, |e| e.t);
        for e in &events {
            if !a.fast {
                let due = Duration::from_micros(e.t.saturating_sub(t0));
                if let Some(wait) = due.checked_sub(started.elapsed()) {
                    out.flush()?;
                    thread::sleep(wait);
                }
            }
            line.clear();
            format_prediction(&clf.push(e)?, &mut line);
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        let secs = started.elapsed().as_secs_f64();
        info!(
            "{} events in {secs:.3} s ({:.0} events/s)",
            events.len(),
            events.len() as f64 / secs.max(1e-9)
        );
        return Ok(());
    }

    if let Some(addr) = &a.listen {
        let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
        info!("listening on {}", listener.local_addr()?);
        thread::scope(|scope| -> anyhow::Result<()> {
            let mut handles = Vec::new();
            for (i, conn) in listener.incoming().enumerate() {
                let conn = match conn {
                    Ok(c) => c,
                    Err(e) => {
                        warn!("accept failed: {e}");
                        continue;
                    }
                };
                handles.push(scope.spawn(move || {
                    let peer = conn.peer_addr().map(|p| p.to_string()).unwrap_or_default();
                    let result = conn
                        .try_clone()
                        .map_err(|e| Error::io(&peer, e))
                        .and_then(|reader| {
                            let mut clf = OnlineClassifier::new(model, stats, sensor)?;
                            run_session(&mut clf, reader, conn)
                        });
                    match result {
                        Ok(s) => info!("{peer} closed after {} events, {} errors", s.events, s.errors),
                        Err(e) => warn!("{peer}: {e}"),
                    }
                }));
                if a.max_conns.is_some_and(|m| i + 1 >= m) {
                    break;
                }
            }
            for h in handles {
                let _ = h.join();
            }
            Ok(())
        })?;
        return Ok(());
    }

    let mut clf = OnlineClassifier::new(model, stats, sensor)?;
    let s = run_session(&mut clf, io::stdin().lock(), io::stdout().lock())?;
    info!("{} events, {} resets, {} malformed lines", s.events, s.resets, s.errors);
    Ok(())
}

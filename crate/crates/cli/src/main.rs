//! `blockscramble` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 data or format problem, 4 numeric
//! failure (non-finite training state or a failed gradient check).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockscramble::adaptnet::{gradcheck, read_checkpoint, write_checkpoint, FrontEnd, Model, SubnetInput};
use blockscramble::dataio::{png_read, png_write, read_cifar, scramble_dataset, CifarVariant};
use blockscramble::keying::{fingerprint, read_keyfile, write_keyfile};
use blockscramble::scramble::{etc_color_only_key_space, key_space, scramble, unscramble};
use blockscramble::trainer::{evaluate, train};
use blockscramble::{Error, Exec, LabeledExample, SchemeId, ScrambleKey};
use clap::{Args, Parser, Subcommand};

use crate::config::TrainSettings;

#[derive(Parser)]
#[command(name = "blockscramble", version, about = "Block-wise image scrambling and adaptation-network training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a fresh key file.
    Keygen {
        #[arg(long)]
        scheme: SchemeId,
        #[arg(long, default_value_t = 4)]
        block_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scramble a PNG.
    Scramble(ImageArgs),
    /// Undo `scramble` with the same key.
    Unscramble(ImageArgs),
    /// Print the exact key-space size and its log2.
    Keyspace {
        #[arg(long)]
        scheme: SchemeId,
        #[arg(long)]
        block_size: usize,
        #[arg(long)]
        blocks: usize,
        /// EtC restricted to color shuffling and block shuffling.
        #[arg(long)]
        color_only: bool,
    },
    /// Scramble every image of a CIFAR binary file with one key.
    ScrambleDataset {
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "cifar10")]
        variant: CifarVariant,
        /// Random crop and flip before scrambling.
        #[arg(long)]
        augment: bool,
    },
    /// Train a model on (scrambled) CIFAR binary files.
    Train(TrainArgs),
    /// Report accuracy of a checkpoint on a CIFAR binary file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "cifar10")]
        variant: CifarVariant,
        #[command(flatten)]
        subset: SubsetArgs,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        draws: u64,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Args)]
struct ImageArgs {
    #[arg(long)]
    key: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct SubsetArgs {
    /// Keep only these original class ids, relabeled 0..k in the given order.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    /// Keep at most this many images per class, in file order.
    #[arg(long)]
    per_class: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required = true, num_args = 1..)]
    train: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    test: Vec<PathBuf>,
    #[arg(long, default_value = "cifar10")]
    variant: CifarVariant,
    #[command(flatten)]
    subset: SubsetArgs,
    /// TOML file with any of the training settings; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// none, le or ele.
    #[arg(long)]
    front: Option<FrontEnd>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `epoch:rate` pairs, e.g. `0:0.1,150:0.01,225:0.001`.
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    lambda_u: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    feature_channels: Option<usize>,
    /// nibbles or intensities.
    #[arg(long)]
    subnet_input: Option<SubnetInput>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::Numeric(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn set_threads(threads: Option<usize>) -> CliResult {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn keygen(scheme: SchemeId, block_size: usize, out: &Path) -> CliResult {
    if block_size == 0 {
        return Err(Failure::Usage("--block-size must be positive".into()));
    }
    let mut seed = [0u8; 32];
    getrandom::getrandom(&mut seed).map_err(|e| Failure::Data(format!("no entropy: {e}")))?;
    let key = ScrambleKey {
        scheme,
        block_size,
        master_seed: seed,
    };
    write_keyfile(&key, out)?;
    println!("wrote {} scheme={} block_size={} fingerprint={}", out.display(), scheme, block_size, fingerprint(&key));
    Ok(())
}

fn image_op(args: &ImageArgs, forward: bool) -> CliResult {
    let key = read_keyfile(&args.key)?;
    let img = png_read(&args.input)?;
    let out = if forward {
        scramble(&img, &key)?
    } else {
        unscramble(&img, &key)?
    };
    png_write(&out, &args.out)?;
    Ok(())
}

fn keyspace(scheme: SchemeId, block_size: usize, blocks: usize, color_only: bool) -> CliResult {
    let ks = if color_only {
        if scheme != SchemeId::Etc {
            return Err(Failure::Usage("--color-only applies to ETC".into()));
        }
        etc_color_only_key_space(blocks)
    } else {
        key_space(scheme, block_size, blocks)
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    println!("exact={}", ks.exact);
    println!("log2={:.1}", ks.log2_bits);
    Ok(())
}

fn load(files: &[PathBuf], variant: CifarVariant, subset: &SubsetArgs) -> Result<(Vec<LabeledExample>, usize), Failure> {
    let mut all = Vec::new();
    for f in files {
        all.extend(read_cifar(f, variant)?);
    }
    let Some(classes) = &subset.classes else {
        if let Some(cap) = subset.per_class {
            let mut counts = vec![0usize; variant.classes()];
            all.retain(|e| {
                counts[e.label] += 1;
                counts[e.label] <= cap
            });
        }
        return Ok((all, variant.classes()));
    };
    if classes.len() < 2 || classes.iter().any(|&c| c >= variant.classes()) {
        return Err(Failure::Usage(format!("--classes needs at least two ids below {}", variant.classes())));
    }
    let cap = subset.per_class.unwrap_or(usize::MAX);
    let mut counts = vec![0usize; classes.len()];
    let picked = all
        .into_iter()
        .filter_map(|e| {
            let k = classes.iter().position(|&c| c == e.label)?;
            counts[k] += 1;
            (counts[k] <= cap).then_some(LabeledExample { image: e.image, label: k })
        })
        .collect();
    Ok((picked, classes.len()))
}

fn run_train(args: &TrainArgs) -> CliResult {
    let file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            TrainSettings::from_toml(&text).map_err(Failure::Usage)?
        }
        None => TrainSettings::default(),
    };
    let flags = TrainSettings {
        front: args.front,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr_schedule: args.lr_schedule.clone(),
        momentum: args.momentum,
        lambda_u: args.lambda_u,
        lambda_s: args.lambda_s,
        seed: args.seed,
        block_size: args.block_size,
        feature_channels: args.feature_channels,
        subnet_input: args.subnet_input,
        threads: args.threads,
    };
    let settings = flags.over(file);
    set_threads(settings.threads)?;

    let (train_set, classes) = load(&args.train, args.variant, &args.subset)?;
    let (test_set, _) = load(&args.test, args.variant, &args.subset)?;
    let (model_cfg, train_cfg) = settings.resolve(classes).map_err(Failure::Usage)?;
    let mut model = Model::init(model_cfg, train_cfg.seed)?;
    eprintln!(
        "training front={} on {} images ({} test), {} epochs",
        model_cfg.front.as_str(),
        train_set.len(),
        test_set.len(),
        train_cfg.epochs
    );
    let report = train(&mut model, &train_set, &test_set, &train_cfg, Exec::default(), |r| {
        println!("{}", r.to_line())
    })?;
    if let Some(p) = &args.report {
        fs::write(p, report.to_text()).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
    }
    write_checkpoint(&model, &args.checkpoint)?;
    Ok(())
}

fn run_evaluate(checkpoint: &Path, data: &[PathBuf], variant: CifarVariant, subset: &SubsetArgs, threads: Option<usize>) -> CliResult {
    set_threads(threads)?;
    let model = read_checkpoint(checkpoint)?;
    let (examples, _) = load(data, variant, subset)?;
    let eval = evaluate(&model, &examples, Exec::default())?;
    println!("accuracy={:.6}", eval.accuracy);
    println!("mean_loss={:.6}", eval.mean_loss);
    println!("count={}", examples.len());
    Ok(())
}

fn run_gradcheck(draws: u64, seed: u64) -> CliResult {
    if draws == 0 {
        return Err(Failure::Usage("--draws must be positive".into()));
    }
    let checks = gradcheck::run_all(draws, seed)?;
    let mut failed = 0;
    for c in &checks {
        if !c.passed() {
            failed += 1;
            println!("FAIL {} draw={} rel_error={:.3e} tol={:.0e}", c.name, c.draw, c.rel_error, c.tolerance);
        }
    }
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    println!("checks={} failed={failed} worst_rel_error={worst:.3e}", checks.len());
    if failed > 0 {
        return Err(Failure::Numeric(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Keygen { scheme, block_size, out } => keygen(*scheme, *block_size, out),
        Command::Scramble(a) => image_op(a, true),
        Command::Unscramble(a) => image_op(a, false),
        Command::Keyspace { scheme, block_size, blocks, color_only } => {
            keyspace(*scheme, *block_size, *blocks, *color_only)
        }
        Command::ScrambleDataset { key, input, out, variant, augment } => (|| {
            let key = read_keyfile(key)?;
            let m = scramble_dataset(input, out, &key, *variant, *augment, Exec::default())?;
            println!("{}", m.to_text().trim_end().replace('\n', " "));
            Ok(())
        })(),
        Command::Train(a) => run_train(a),
        Command::Evaluate { checkpoint, data, variant, subset, threads } => {
            run_evaluate(checkpoint, data, *variant, subset, *threads)
        }
        Command::Gradcheck { draws, seed } => run_gradcheck(*draws, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(4)
        }
    }
}

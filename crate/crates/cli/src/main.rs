//! `pointat`: dataset generation, training, evaluation, teach/find and
//! attention dumps, executed by the pointat service.
//!
//! Unless `--server` names a running service, an embedded one is started on
//! a loopback port for the duration of the command.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pointat_api::*;
use pointat_client::{Client, ClientError};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "pointat", version, about = "One-shot object localization from a pointing hand")]
struct Cli {
    /// Use a running service instead of an embedded one.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8750")]
        bind: SocketAddr,
    },
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Report IOU@0.5 accuracy of one or more checkpoints.
    Eval(EvalArgs),
    /// Store the feature of the pointed-at object under a name.
    Teach(TeachArgs),
    /// Localize a taught object in a new scene.
    Find(FindArgs),
    /// Write the attention maps of one scene as PGM heatmaps.
    DumpAttention(DumpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Default,
    Small,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Default => Preset::Default,
            PresetArg::Small => Preset::Small,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ablation {
    NoModulation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    Fc,
    Conv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training samples (preset default when omitted).
    #[arg(long)]
    train: Option<usize>,
    /// Test samples (preset default when omitted).
    #[arg(long)]
    test: Option<usize>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for `checkpoint.ptat` and `metrics.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, conflicts_with = "baseline")]
    ablation: Option<Ablation>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<PathBuf>,
    /// Stop after this many optimizer steps in total.
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// May be repeated to compare conditions in one table.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct TeachArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    name: String,
    /// PNG scene in which the hand points at the object.
    #[arg(long)]
    image: PathBuf,
    /// Replace an existing entry with the same name.
    #[arg(long)]
    overwrite: bool,
    /// Provenance time in Unix seconds (defaults to now).
    #[arg(long)]
    timestamp: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct FindArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    name: String,
    #[arg(long)]
    image: PathBuf,
    /// Write a copy of the image with the predicted box drawn on it.
    #[arg(long, value_name = "PNG")]
    annotate: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Scene to search with the pooled feature (defaults to --image).
    #[arg(long)]
    search: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e.kind() {
            ErrorKind::Usage => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map_or("-".into(), |a| format!("{:.2}%", a * 100.0))
}

async fn gen_data(client: &Client, a: GenDataArgs) -> Outcome {
    let req = GenDataRequest {
        out: absolute(&a.out)?,
        preset: a.preset.into(),
        seed: a.seed,
        train: a.train,
        test: a.test,
        force: a.force,
    };
    let r = client.gen_data(&req).await?;
    if a.json {
        print_json(&r);
    } else {
        let c = &r.manifest.config;
        println!("dataset   {}", r.out.display());
        println!("preset    {} ({}x{} px, sprites {} px)", c.preset, c.scene.width, c.scene.height, c.scene.sprite_size);
        println!("seed      {}", r.manifest.seed);
        println!("samples   {} train / {} test", r.manifest.counts.train, r.manifest.counts.test);
        println!("sha256    {}", r.digest);
    }
    Ok(())
}

async fn train(client: &Client, a: TrainArgs) -> Outcome {
    let out = absolute(&a.out)?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    let head = match a.baseline {
        None => HeadKind::Siamese,
        Some(Baseline::Fc) => HeadKind::FcBaseline,
        Some(Baseline::Conv) => HeadKind::ConvBaseline,
    };
    let req = TrainRequest {
        data: absolute(&a.data)?,
        checkpoint: out.join("checkpoint.ptat"),
        metrics: Some(out.join("metrics.csv")),
        preset: a.preset.into(),
        head,
        modulation: a.ablation.is_none(),
        seed: a.seed,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        weight_decay: a.weight_decay,
        resume: a.resume.as_deref().map(absolute).transpose()?,
        max_steps: a.max_steps,
    };
    let job = client.start_train(&req).await?;
    let mut printed = 0;
    if !a.json {
        println!("{:>5}  {:>12}  {:>12}  {:>10}", "epoch", "train_loss", "exemplar_acc", "search_acc");
    }
    let status = client
        .wait_job(job.id, Duration::from_millis(250), |s| {
            if !a.json {
                for m in s.history.iter().skip(printed) {
                    println!("{:>5}  {:>12.6}  {:>12}  {:>10}", m.epoch, m.train_loss, fmt_acc(Some(m.exemplar_acc)), fmt_acc(m.search_acc));
                }
            }
            printed = s.history.len();
        })
        .await?;
    if let Some(e) = status.error {
        return Err(Failure::from(ClientError::Api(e)));
    }
    let summary = status.summary.ok_or_else(|| Failure::Data("training job ended without a summary".into()))?;
    if a.json {
        print_json(&summary);
    } else {
        let (ex, se) = summary.final_eval.as_ref().map_or((None, None), |r| (Some(r.exemplar_acc), r.search_acc));
        println!();
        println!("{:<14}  {:>8}  {:>12}  {:>10}", "condition", "steps", "exemplar_acc", "search_acc");
        println!("{:<14}  {:>8}  {:>12}  {:>10}", summary.condition, summary.steps, fmt_acc(ex), fmt_acc(se));
        println!("checkpoint {}", summary.checkpoint.display());
        println!("metrics    {}", summary.metrics.display());
        if !summary.completed {
            println!("stopped early; continue with --resume {}", summary.checkpoint.display());
        }
    }
    Ok(())
}

async fn eval(client: &Client, a: EvalArgs) -> Outcome {
    let req = EvalRequest {
        checkpoints: a.checkpoint.iter().map(|p| absolute(p)).collect::<Result<_, _>>()?,
        data: absolute(&a.data)?,
        split: match a.split {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        },
    };
    let r = client.eval(&req).await?;
    if a.json {
        print_json(&r);
    } else {
        println!("{:<14}  {:>7}  {:>12}  {:>10}  checkpoint", "condition", "samples", "exemplar_acc", "search_acc");
        for row in &r.rows {
            println!(
                "{:<14}  {:>7}  {:>12}  {:>10}  {}",
                row.condition,
                row.report.samples,
                fmt_acc(Some(row.report.exemplar_acc)),
                fmt_acc(row.report.search_acc),
                row.checkpoint.display()
            );
        }
    }
    Ok(())
}

async fn teach(client: &Client, a: TeachArgs) -> Outcome {
    let timestamp = a.timestamp.unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
    let req = TeachRequest {
        checkpoint: absolute(&a.checkpoint)?,
        store: absolute(&a.store)?,
        name: a.name,
        image: ImageInput::Path(absolute(&a.image)?),
        overwrite: a.overwrite,
        timestamp,
    };
    let r = client.teach(&req).await?;
    if a.json {
        print_json(&r);
    } else {
        let verb = if r.result.replaced { "replaced" } else { "taught" };
        println!("{verb} `{}` at ({:.1}, {:.1}) px; |f| = {:.4}", r.result.name, r.result.p.0, r.result.p.1, r.result.feature_norm);
        println!("store {} now holds: {}", r.store.display(), r.objects.join(", "));
    }
    Ok(())
}

async fn find(client: &Client, a: FindArgs) -> Outcome {
    let req = FindRequest {
        checkpoint: absolute(&a.checkpoint)?,
        store: absolute(&a.store)?,
        name: a.name,
        image: ImageInput::Path(absolute(&a.image)?),
        annotate: a.annotate.as_deref().map(absolute).transpose()?,
    };
    let r = client.find(&req).await?;
    if a.json {
        print_json(&r);
    } else {
        println!("`{}` at ({:.1}, {:.1}) px, confidence {:.4}", r.result.name, r.result.p.0, r.result.p.1, r.result.confidence);
        if let Some(p) = &r.annotated {
            println!("annotated image {}", p.display());
        }
    }
    Ok(())
}

async fn dump_attention(client: &Client, a: DumpArgs) -> Outcome {
    let req = DumpAttentionRequest {
        checkpoint: absolute(&a.checkpoint)?,
        image: ImageInput::Path(absolute(&a.image)?),
        search: a.search.as_deref().map(absolute).transpose()?.map(ImageInput::Path),
        out: absolute(&a.out)?,
    };
    let r = client.dump_attention(&req).await?;
    if a.json {
        print_json(&r);
    } else {
        println!("p = ({:.1}, {:.1}) px, p_hat = ({:.1}, {:.1}) px", r.p.0, r.p.1, r.p_hat.0, r.p_hat.1);
        if let Some(h) = &r.hand {
            println!("hand at cell ({}, {}) pointing {:.0} deg", h.row, h.col, h.angle_deg);
        }
        for f in &r.files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

async fn run(cli: Cli) -> Outcome {
    if let Command::Serve { bind } = cli.command {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| Failure::Data(format!("cannot bind {bind}: {e}")))?;
        eprintln!("pointat service listening on http://{}", listener.local_addr().map_err(|e| Failure::Data(e.to_string()))?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        return pointat_server::serve(listener, shutdown).await.map_err(|e| Failure::Data(e.to_string()));
    }
    let client = match &cli.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let addr = pointat_server::spawn(([127, 0, 0, 1], 0).into())
                .await
                .map_err(|e| Failure::Data(format!("cannot start the embedded service: {e}")))?;
            Client::new(format!("http://{addr}"))
        }
    };
    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::GenData(a) => gen_data(&client, a).await,
        Command::Train(a) => train(&client, a).await,
        Command::Eval(a) => eval(&client, a).await,
        Command::Teach(a) => teach(&client, a).await,
        Command::Find(a) => find(&client, a).await,
        Command::DumpAttention(a) => dump_attention(&client, a).await,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start async runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

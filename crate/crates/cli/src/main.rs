use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use uniconv::ablation::{run_ablation, table, AblationEval};
use uniconv::checkpoint::Checkpoint;
use uniconv::config::{load_grid, Config, TaskMode};
use uniconv::inference::{write_transcripts, Engine, Session, StepOptions};
use uniconv::metrics::{evaluate_model, EvalReport};
use uniconv::synth::{generate, SyntheticSpec};
use uniconv::text::tokenize;
use uniconv::trainer::train_model;
use uniconv::{Error, Result};
use uniconv_cli::{data, service};

#[derive(Parser)]
#[command(name = "uniconv", version, about = "Multi-domain dialogue state tracking and response generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Delexicalise and index a corpus into a cache directory.
    Preprocess {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
    },
    /// Train a model.
    Train(TrainArgs),
    /// Decode a split and score it.
    Eval(EvalArgs),
    /// Train and score every row of an ablation grid.
    Ablate(AblateArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Serve chat sessions over HTTP.
    Serve(ServeArgs),
    /// Chat with a model in the terminal.
    Chat(ChatArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Settings file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus or cache directory (overrides the config).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    mode: Option<TaskMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory for the training log.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// dst, c2t or e2e; defaults to the mode the checkpoint was trained in.
    #[arg(long)]
    mode: Option<TaskMode>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    beam: Option<usize>,
    /// Directory for the report, curves and transcripts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Score tracker and acts only, without decoding responses.
    #[arg(long)]
    no_responses: bool,
    /// Output table; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    domains: usize,
    #[arg(long, default_value_t = 3)]
    slots_per_domain: usize,
    #[arg(long, default_value_t = 12)]
    db_rows: usize,
    #[arg(long, default_value_t = 30)]
    dialogues: usize,
    #[arg(long, default_value_t = 5)]
    val_dialogues: usize,
    #[arg(long, default_value_t = 5)]
    test_dialogues: usize,
    #[arg(long, default_value_t = 12)]
    max_turns: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus or cache the checkpoint was trained on; supplies the database.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    port: Option<u16>,
}

#[derive(Args)]
struct ChatArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Print the tracked state after every turn.
    #[arg(long)]
    show_state: bool,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map(Config::load).unwrap_or_else(|| Ok(Config::default()))
}

fn data_path(arg: Option<PathBuf>, config: &Config) -> Result<PathBuf> {
    arg.or_else(|| config.paths.cache.clone())
        .or_else(|| config.paths.corpus.clone())
        .ok_or_else(|| Error::Config("no corpus given (--data or paths.corpus)".into()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    let path = data_path(a.data, &config)?;
    if let Some(m) = a.mode {
        config.train.mode = m;
    }
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    if let Some(s) = a.seed {
        config.train.seed = s;
    }
    if a.checkpoint.is_some() {
        config.paths.checkpoint = a.checkpoint;
    }
    if a.output.is_some() {
        config.paths.output = a.output;
    }
    if config.paths.checkpoint.is_none() {
        config.paths.checkpoint = Some(PathBuf::from("uniconv.ckpt"));
    }
    config.validate()?;
    let prep = data::open(&path)?;
    let model = match &a.resume {
        Some(p) => Checkpoint::load(p, Some(&prep.ds.fingerprint))?.model,
        None => prep.model(&config)?,
    };
    info!("{} parameters", model.store.num_values());
    let out = train_model(model, &prep.ds, &config, &mut |_, log| {
        println!("{}", log.line());
        Ok(true)
    })?;
    let best = out.best;
    println!(
        "best epoch {} (loss {}) saved to {}",
        best.epoch,
        best.best_val_loss.map(|l| format!("{l:.6}")).unwrap_or_else(|| "-".into()),
        config.paths.checkpoint.as_ref().expect("checkpoint path").display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let prep = data::open(&a.data)?;
    let ckpt = Checkpoint::load(&a.checkpoint, Some(&prep.ds.fingerprint))?;
    let mode = a.mode.unwrap_or(ckpt.config.train.mode);
    let dialogues = prep.ds.corpus.split(&a.split)?;
    let opts = StepOptions {
        beam_size: a.beam,
        ..Default::default()
    };
    let (report, sessions) = evaluate_model(&ckpt.model, &prep.ds.kb, dialogues, mode, opts)?;
    print!("{}", report.table());
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("report.tsv", report.tsv())?;
        write("report.txt", report.table())?;
        if !report.joint_by_turn.is_empty() {
            write("joint_by_turn.tsv", EvalReport::curve(&report.joint_by_turn))?;
        }
        if !report.bleu_by_turn.is_empty() {
            write("bleu_by_turn.tsv", EvalReport::curve(&report.bleu_by_turn))?;
        }
        write_transcripts(&dir.join("transcripts.jsonl"), &sessions)?;
        println!("wrote report to {}", dir.display());
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let path = data_path(a.data, &config)?;
    let grid = load_grid(&a.grid)?;
    let prep = data::open(&path)?;
    let eval = AblationEval {
        split: &a.split,
        respond: !a.no_responses,
    };
    let rows = run_ablation(&prep.ds, &config, &grid, eval);
    let text = table(&rows);
    match a.out {
        Some(p) => fs::write(&p, &text).map_err(|e| Error::io(&p, e))?,
        None => print!("{text}"),
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(Error::Training(format!("{failed} of {} ablation rows failed", rows.len())));
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        domains: a.domains,
        slots_per_domain: a.slots_per_domain,
        db_rows: a.db_rows,
        dialogues: a.dialogues,
        val_dialogues: a.val_dialogues,
        test_dialogues: a.test_dialogues,
        max_turns: a.max_turns,
        seed: a.seed,
    };
    let s = generate(&spec)?;
    s.write(&a.out)?;
    println!(
        "wrote {} dialogues over {} domains to {}",
        s.corpus.all().count(),
        s.ontology.domains().len(),
        a.out.display()
    );
    Ok(())
}

fn load_for_decoding(checkpoint: &Path, data_dir: &Path) -> Result<(Checkpoint, data::Prepared)> {
    let prep = data::open(data_dir)?;
    let ckpt = Checkpoint::load(checkpoint, Some(&prep.ds.fingerprint))?;
    Ok((ckpt, prep))
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let (ckpt, prep) = load_for_decoding(&a.checkpoint, &a.data)?;
    let mut sc = ckpt.config.service.clone();
    if let Some(p) = a.port {
        sc.port = p;
    }
    let port = sc.port;
    let app = service::AppState::new(ckpt.model, prep.ds.kb, sc);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(service::serve(app, port)).map_err(|e| Error::io(format!("port {port}"), e))
}

fn cmd_chat(a: ChatArgs) -> Result<()> {
    let (ckpt, prep) = load_for_decoding(&a.checkpoint, &a.data)?;
    let engine = Engine::new(&ckpt.model, &prep.ds.kb);
    let mode = match ckpt.config.train.mode {
        TaskMode::C2t => TaskMode::E2e,
        m => m,
    };
    let mut session = Session::new("chat", mode, ckpt.config.service.max_turns);
    println!("type a message; :state shows the tracked state, :quit leaves");
    let stdin = std::io::stdin();
    loop {
        print!("> ");
        std::io::stdout().flush().map_err(|e| Error::io("stdout", e))?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(|e| Error::io("stdin", e))? == 0 {
            break;
        }
        match line.trim() {
            "" => continue,
            ":quit" | ":q" => break,
            ":state" => {
                println!("{}", serde_json::to_string_pretty(&session.state).expect("state serialises"));
                continue;
            }
            text => {
                let r = engine.step_turn(&mut session, &tokenize(text), None, StepOptions::default())?;
                if mode == TaskMode::Dst {
                    println!("state: {}", serde_json::to_string(&r.state).expect("state serialises"));
                    continue;
                }
                println!("{}", r.lexical.join(" "));
                println!("  acts: {}", r.acts.join(", "));
                if a.show_state {
                    println!("  state: {}", serde_json::to_string(&r.state).expect("state serialises"));
                }
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Json { .. } | Error::Data(_) => 3,
        Error::Checkpoint(_) => 4,
        Error::Training(_) | Error::Num(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess { corpus, cache, min_count } => data::preprocess(&corpus, &cache, min_count).map(|rebuilt| {
            if rebuilt {
                println!("cache written to {}", cache.display());
            } else {
                println!("cache {} already up to date", cache.display());
            }
        }),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Chat(a) => cmd_chat(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}

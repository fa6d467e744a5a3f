use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use fedrank::data::{ingest_events, ingest_grades, read_schedule, DEFAULT_MAX_SCORE, DEFAULT_THRESHOLD_RANK};
use fedrank::experiment::{
    default_out_dir, discover_models, evaluate_groups, generate_cohorts, load_course, load_models, train_matrix,
    write_metrics, CourseFiles, LoadedConfig,
};
use fedrank::features::{featurize, read_feature_table};
use fedrank::federation::TrainingMode;
use fedrank::metrics::{pr_curve, write_pr_curve_csv, MetricsRow};
use fedrank::model::TrainedModel;
use fedrank::pipeline::{early_sweep, observed_span, rank_course, write_sweep_csv, SweepOptions};
use fedrank::{Error, Result};

/// At-risk student ranking with simulated federated training.
#[derive(Parser)]
#[command(name = "fedrank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic cohorts and a matching experiment config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the experiment matrix (or one cell of it).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<TrainingMode>,
        #[arg(long, action = clap::ArgAction::Set)]
        differential: Option<bool>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score students with a model and write a ranked CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: CourseInput,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute metric tables.
    Evaluate(EvaluateArgs),
    /// Metrics after each of lectures k-min..=k-max, with a random baseline.
    EarlySweep(SweepArgs),
}

#[derive(Args)]
struct CourseInput {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Evaluate every model group in `--models-dir` on the config's test courses.
    #[arg(long, conflicts_with = "model")]
    config: Option<PathBuf>,
    #[arg(long)]
    models_dir: Option<PathBuf>,
    /// One or more model files evaluated on a single course; metrics are averaged.
    #[arg(long, num_args = 1..)]
    model: Vec<PathBuf>,
    #[arg(long)]
    grades: Option<PathBuf>,
    #[command(flatten)]
    input: CourseInput,
    #[arg(long, default_value = "course")]
    course: String,
    #[arg(long)]
    threshold_rank: Option<usize>,
    #[arg(long)]
    max_score: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, required = true, num_args = 1..)]
    model: Vec<PathBuf>,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    grades: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long, default_value = "course")]
    course: String,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    /// Defaults to the number of lectures in the schedule.
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    shuffles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_RANK)]
    threshold_rank: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_SCORE)]
    max_score: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.unwrap_or_else(default_out_dir)
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.into(),
        source: e,
    })
}

fn course_files(id: &str, grades: PathBuf, input: CourseInput) -> CourseFiles {
    CourseFiles {
        id: id.to_string(),
        grades,
        features: input.features,
        events: input.events,
        schedule: input.schedule,
        lectures: None,
    }
}

fn cmd_predict(model: &Path, input: CourseInput, output: Option<PathBuf>) -> Result<()> {
    let model = TrainedModel::load(model)?;
    let table = match (&input.features, &input.events, &input.schedule) {
        (Some(f), _, _) => read_feature_table(f)?.1,
        (None, Some(ev), Some(sc)) => {
            let spec = model
                .feature_spec
                .clone()
                .ok_or_else(|| Error::IncompatibleModel("model was trained on external features".into()))?;
            let log = ingest_events(ev, &spec.vocab)?;
            let schedule = read_schedule(sc)?;
            let span = observed_span(&log.records, &schedule, schedule.lecture_count())?;
            featurize(&log.records, &spec, &span)?
        }
        _ => return Err(Error::InvalidArgument("give --features or --events with --schedule".into())),
    };
    let students: Vec<String> = table.keys().cloned().collect();
    let features: Vec<Vec<f64>> = table.into_values().collect();
    let scores = model.score_students(&students, &features)?;
    let mut ranked: Vec<(&String, &f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(b.1).then_with(|| a.0.cmp(b.0)));

    let sink: Box<dyn std::io::Write> = match &output {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["rank", "student_id", "score"])?;
    for (rank, (id, score)) in ranked.into_iter().enumerate() {
        w.write_record([(rank + 1).to_string(), id.clone(), format!("{score:e}")])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: output.unwrap_or_else(|| "<stdout>".into()),
        source: e,
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    if let Some(config) = &args.config {
        let loaded = LoadedConfig::load(config)?;
        let out = out_dir(args.out);
        let models_dir = args.models_dir.unwrap_or_else(|| out.join("models"));
        let mut groups = BTreeMap::new();
        for (method, paths) in discover_models(&models_dir)? {
            groups.insert(method, load_models(&paths)?);
        }
        if groups.is_empty() {
            return Err(Error::EmptyInput("model files"));
        }
        let threshold = args.threshold_rank.unwrap_or(loaded.config.threshold_rank);
        let max_score = args.max_score.unwrap_or(loaded.config.max_score);
        let rows = evaluate_groups(&groups, &loaded.test_files(), threshold, max_score)?;
        write_metrics(&out, &rows)?;
        info!("wrote {} metric rows to {}", rows.len(), out.display());
        return Ok(());
    }

    if args.model.is_empty() {
        return Err(Error::InvalidArgument("give --config or at least one --model".into()));
    }
    let grades = args
        .grades
        .ok_or_else(|| Error::InvalidArgument("--grades is required with --model".into()))?;
    let out = out_dir(args.out);
    let models = load_models(&args.model)?;
    let files = course_files(&args.course, grades, args.input);
    let threshold = args.threshold_rank.unwrap_or(DEFAULT_THRESHOLD_RANK);
    let max_score = args.max_score.unwrap_or(DEFAULT_MAX_SCORE);
    let mut groups = BTreeMap::new();
    groups.insert("model".to_string(), models);
    let rows: Vec<MetricsRow> = evaluate_groups(&groups, std::slice::from_ref(&files), threshold, max_score)?;
    write_metrics(&out, &rows)?;

    let first = &groups["model"][0];
    let spec = first.feature_spec.clone().unwrap_or_default();
    let client = load_course(&files, &spec, max_score, None)?;
    let ranking = rank_course(first, &client, threshold)?;
    write_pr_curve_csv(out.join("pr_curve.csv"), &pr_curve(&ranking)?)?;
    Ok(())
}

fn cmd_early_sweep(args: SweepArgs) -> Result<()> {
    let models = load_models(&args.model)?;
    let spec = models[0]
        .feature_spec
        .clone()
        .ok_or_else(|| Error::IncompatibleModel("model was trained on external features".into()))?;
    let events = ingest_events(&args.events, &spec.vocab)?;
    let grades = ingest_grades(&args.grades)?;
    let schedule = read_schedule(&args.schedule)?;
    let opts = SweepOptions {
        lectures: args.k_min..=args.k_max.unwrap_or(schedule.lecture_count()),
        threshold_rank: args.threshold_rank,
        max_score: args.max_score,
        shuffles: args.shuffles,
        seed: args.seed,
    };
    let rows = early_sweep(&models, &args.course, &events.records, &grades, &schedule, &opts)?;
    let out = out_dir(args.out);
    ensure_dir(&out)?;
    write_sweep_csv(out.join("sweep.csv"), &args.course, models.len(), args.shuffles, &rows)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let loaded = LoadedConfig::load(&config)?;
            let out = out_dir(out);
            ensure_dir(&out)?;
            let path = generate_cohorts(&loaded, &out)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Train {
            config,
            mode,
            differential,
            out,
        } => {
            let loaded = LoadedConfig::load(&config)?;
            let out = out_dir(out);
            for r in train_matrix(&loaded, &out, mode, differential)? {
                let last = r.report.round_losses.last().copied().unwrap_or(f64::NAN);
                println!("{}\tfinal_loss={last:.6}", r.name);
            }
            Ok(())
        }
        Command::Predict { model, input, output } => cmd_predict(&model, input, output),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::EarlySweep(args) => cmd_early_sweep(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(64);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

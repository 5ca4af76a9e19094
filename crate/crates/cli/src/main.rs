mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tog_core::annotation::{substitute_subject, Source, DEFAULT_SUBJECT};
use tog_core::dataset::{
    dataset_stats, header_line, read_records, split_dataset, template_records, validate_records, write_records,
    SplitSpec, TextRecord,
};
use tog_core::diffusion::checkpoint::checkpoint_bytes;
use tog_core::diffusion::train::fixed_examples;
use tog_core::diffusion::{
    ddim_sample, grad_check, load_checkpoint, train, Conditioning, Example, GradFault, Model, ModelConfig, Vocab,
};
use tog_core::eval::{
    ablation_csv, ablation_table, evaluate, evaluate_model, run_ablation, train_items, AblationConfig,
    AblationSettings, ConstantPredictor,
};
use tog_core::geometry::eye_from_gaze;
use tog_core::grid::{enumerate_and_filter, select_convention, GridSpec, PoseSample};
use tog_core::sketch::{encode_bytes, render_sketch, sketch_file_name, CameraSpec, CanonicalHead, ImageFormat};
use tog_core::{Convention, YawPitch};
use tog_llm::{annotate_batch, LlmClient};

use config::{RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "tog", version, about = "Gaze pose grids, descriptions, sketches and text-to-pose diffusion")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// `key = value` settings file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rotation convention, e.g. yaw-then-pitch/intrinsic, or `auto`.
    #[arg(long, global = true)]
    convention: Option<String>,
    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Root directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate and filter the head/eye pose grid.
    Grid {
        #[arg(long, default_value = "poses.jsonl")]
        out: PathBuf,
    },
    /// Describe every pose sample in text.
    Annotate {
        #[arg(long, default_value = "template")]
        source: Source,
        /// Pose file from `grid`; the grid is regenerated when omitted.
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long, default_value = "dataset.jsonl")]
        out: PathBuf,
        #[arg(long)]
        subject: Option<String>,
        /// Annotate only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Split, summarize or check a dataset file.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Render line sketches for poses.
    Sketch {
        /// `head_yaw,head_pitch,eye_yaw,eye_pitch` in degrees.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "from_dataset", required_unless_present = "from_dataset")]
        pose: Option<String>,
        #[arg(long)]
        from_dataset: Option<PathBuf>,
        /// Output file for `--pose`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        /// Render only the first N distinct samples of the dataset.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train the text-to-pose diffusion model.
    Train {
        #[arg(long, default_value = "train.jsonl")]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        conditioning: Option<String>,
        #[arg(long)]
        preset: Option<String>,
        /// Validation examples used for the ε-MSE curve.
        #[arg(long, default_value_t = 256)]
        val_limit: usize,
    },
    /// Sample a pose for a description, optionally rendering it.
    Sample {
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "model.ckpt")]
        checkpoint: PathBuf,
        #[arg(long)]
        sketch: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Angular error of a trained model on a dataset.
    Eval {
        #[arg(long, default_value = "model.ckpt")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test.jsonl")]
        data: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
    },
    /// Train and compare conditioning variants under one budget.
    Ablate {
        #[arg(long, default_value = "train.jsonl")]
        train: PathBuf,
        #[arg(long, default_value = "test.jsonl")]
        test: PathBuf,
        /// `NAME=CONDITIONING`, repeatable; defaults to the three variants.
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Compare analytic gradients against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 200)]
        params: usize,
        /// Inject a known backward-pass bug: silu or softmax.
        #[arg(long)]
        fault: Option<String>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Sample-atomic train/test split.
    Split {
        #[arg(long, default_value = "dataset.jsonl")]
        input: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value = "train.jsonl")]
        train_out: PathBuf,
        #[arg(long, default_value = "test.jsonl")]
        test_out: PathBuf,
    },
    /// Counts and histograms.
    Stats {
        #[arg(long, default_value = "dataset.jsonl")]
        input: PathBuf,
    },
    /// Check gaze consistency and description rules.
    Validate {
        #[arg(long, default_value = "dataset.jsonl")]
        input: PathBuf,
        /// Exit with status 1 when any record is flagged.
        #[arg(long)]
        strict: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Grid { .. } => "grid",
            Command::Annotate { .. } => "annotate",
            Command::Dataset { command: DatasetCommand::Split { .. } } => "dataset split",
            Command::Dataset { command: DatasetCommand::Stats { .. } } => "dataset stats",
            Command::Dataset { command: DatasetCommand::Validate { .. } } => "dataset validate",
            Command::Sketch { .. } => "sketch",
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::GradCheck { .. } => "grad-check",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults();
    if let Some(path) = &cli.global.config {
        cfg.apply_file(path)?;
    }
    cfg.set_opt("seed", cli.global.seed)?;
    cfg.set_opt("convention", cli.global.convention.as_ref())?;
    match &cli.command {
        Command::Annotate { subject, .. } => cfg.set_opt("subject", subject.as_ref())?,
        Command::Dataset { command: DatasetCommand::Split { ratio, .. } } => cfg.set_opt("split.ratio", *ratio)?,
        Command::Sketch { format, .. } => cfg.set_opt("sketch.format", format.as_ref())?,
        Command::Train { steps, batch_size, lr, conditioning, preset, .. } => {
            cfg.set_opt("train.steps", *steps)?;
            cfg.set_opt("train.batch_size", *batch_size)?;
            cfg.set_opt("train.lr", *lr)?;
            cfg.set_opt("model.conditioning", conditioning.as_ref())?;
            cfg.set_opt("model.preset", preset.as_ref())?;
        }
        Command::Sample { steps, .. } | Command::Eval { steps, .. } => cfg.set_opt("sample.steps", *steps)?,
        Command::Ablate { steps, .. } => cfg.set_opt("train.steps", *steps)?,
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = resolve_config(&cli)?;
    let seed = cfg.seed()?;
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker threads")?;
    }
    eprintln!("fingerprint = {}", cfg.fingerprint(cli.command.name()));
    eprintln!("seed = {seed}");
    let out = Outputs { root: cli.global.out_dir.clone(), force: cli.global.force };
    match cli.command {
        Command::Grid { out: path } => cmd_grid(&cfg, &out, &path),
        Command::Annotate { source, poses, out: path, limit, .. } => {
            cmd_annotate(&cfg, &out, source, poses.as_deref(), &path, limit)
        }
        Command::Dataset { command } => match command {
            DatasetCommand::Split { input, train_out, test_out, .. } => {
                cmd_split(&cfg, &out, &input, &train_out, &test_out)
            }
            DatasetCommand::Stats { input } => {
                let loaded = load_dataset(&input)?;
                print!("{}", dataset_stats(&loaded.0).to_text());
                Ok(ExitCode::SUCCESS)
            }
            DatasetCommand::Validate { input, strict } => cmd_validate(&cfg, &input, strict),
        },
        Command::Sketch { pose, from_dataset, out: path, limit, .. } => {
            cmd_sketch(&cfg, &out, pose.as_deref(), from_dataset.as_deref(), path.as_deref(), limit)
        }
        Command::Train { data, val, out: path, val_limit, .. } => {
            cmd_train(&cfg, &out, &data, val.as_deref(), &path, val_limit)
        }
        Command::Sample { text, checkpoint, sketch, .. } => cmd_sample(&cfg, &out, &text, &checkpoint, sketch.as_deref()),
        Command::Eval { checkpoint, data, limit, out: path, .. } => cmd_eval(&cfg, &out, &checkpoint, &data, limit, &path),
        Command::Ablate { train, test, variants, limit, out: path, .. } => {
            cmd_ablate(&cfg, &out, &train, &test, &variants, limit, &path)
        }
        Command::GradCheck { params, fault } => cmd_grad_check(&cfg, params, fault.as_deref()),
    }
}

/// Output paths live under `root`; existing files are kept unless `force`.
struct Outputs {
    root: PathBuf,
    force: bool,
}

impl Outputs {
    fn path(&self, rel: &Path) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if p.exists() && !self.force {
            bail!("refusing to overwrite {} (pass --force)", p.display());
        }
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(p)
    }

    fn write(&self, rel: &Path, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

fn grid_convention(cfg: &RunConfig, spec: &GridSpec) -> Result<(Convention, Option<String>)> {
    match cfg.get("convention") {
        "auto" => {
            let (conv, report) = select_convention(spec)?;
            Ok((conv, Some(report.to_kv_text())))
        }
        other => Ok((other.parse().map_err(|e| UsageError(format!("{e}")))?, None)),
    }
}

/// Convention recorded in a dataset, unless one is forced explicitly.
fn dataset_convention(cfg: &RunConfig, recorded: Option<Convention>) -> Result<Convention> {
    match (cfg.get("convention"), recorded) {
        ("auto", Some(c)) => Ok(c),
        ("auto", None) => Ok(grid_convention(cfg, &GridSpec::default())?.0),
        (s, _) => Ok(s.parse().map_err(|e| UsageError(format!("{e}")))?),
    }
}

#[derive(Serialize, Deserialize)]
struct PoseLine {
    id: u32,
    head: [f64; 2],
    eye: [f64; 2],
    gaze: [f64; 2],
}

fn cmd_grid(cfg: &RunConfig, out: &Outputs, path: &Path) -> Result<ExitCode> {
    let spec = GridSpec::default();
    let (conv, report) = grid_convention(cfg, &spec)?;
    let samples = enumerate_and_filter(&spec, conv)?;
    let mut text = header_line(conv);
    text.push('\n');
    for s in &samples {
        let line = PoseLine {
            id: s.id,
            head: [s.head.yaw, s.head.pitch],
            eye: [s.eye.yaw, s.eye.pitch],
            gaze: [s.gaze.yaw, s.gaze.pitch],
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    let p = out.write(path, text.as_bytes())?;
    let (heads, eyes) = tog_core::grid::generate_grids(&spec)?;
    println!("head_poses = {}", heads.len());
    println!("eye_poses = {}", eyes.len());
    println!("pre_filter = {}", heads.len() * eyes.len());
    println!("kept = {}", samples.len());
    println!("convention = {conv}");
    if let Some(r) = report {
        print!("{r}");
        out.write(&with_suffix(path, "report.txt"), r.as_bytes())?;
    }
    println!("output = {}", p.display());
    Ok(ExitCode::SUCCESS)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn read_poses(path: &Path) -> Result<(Vec<PoseSample>, Option<Convention>)> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let header: serde_json::Value = serde_json::from_str(&lines.next().context("pose file is empty")??)
        .with_context(|| format!("{}: malformed header", path.display()))?;
    let conv = match header.get("convention").and_then(|c| c.as_str()) {
        Some(c) => Some(c.parse::<Convention>()?),
        None => None,
    };
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PoseLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: malformed pose", path.display(), i + 2))?;
        samples.push(PoseSample {
            id: p.id,
            head: YawPitch::new(p.head[0], p.head[1]),
            eye: YawPitch::new(p.eye[0], p.eye[1]),
            gaze: YawPitch::new(p.gaze[0], p.gaze[1]),
        });
    }
    Ok((samples, conv))
}

fn cmd_annotate(
    cfg: &RunConfig,
    out: &Outputs,
    source: Source,
    poses: Option<&Path>,
    path: &Path,
    limit: Option<usize>,
) -> Result<ExitCode> {
    let (mut samples, conv) = match poses {
        Some(p) => {
            let (samples, recorded) = read_poses(p)?;
            (samples, dataset_convention(cfg, recorded)?)
        }
        None => {
            let spec = GridSpec::default();
            let (conv, _) = grid_convention(cfg, &spec)?;
            (enumerate_and_filter(&spec, conv)?, conv)
        }
    };
    if let Some(n) = limit {
        samples.truncate(n);
    }
    let target = out.path(path)?;
    let subject = cfg.get("subject").to_string();
    let mut failures = 0;
    let records = match source {
        Source::Template => {
            let mut records = template_records(&samples);
            if subject != DEFAULT_SUBJECT {
                let mut warnings = 0;
                for r in &mut records {
                    let sub = substitute_subject(&r.text, &subject)?;
                    warnings += usize::from(sub.warning);
                    r.text = sub.text;
                }
                if warnings > 0 {
                    eprintln!("warning: {warnings} description(s) changed length class after subject substitution");
                }
            }
            records
        }
        Source::Llm => {
            let client = Arc::new(LlmClient::from_env(cfg.llm_config()?)?);
            let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
            let outcome = rt.block_on(annotate_batch(client, &samples, &subject))?;
            failures = outcome.failures.len();
            if failures > 0 {
                let mut text = String::new();
                for f in &outcome.failures {
                    let line = serde_json::json!({ "id": f.sample_id, "precision": f.precision, "reason": f.reason });
                    text.push_str(&line.to_string());
                    text.push('\n');
                }
                let p = out.write(&with_suffix(path, "failures.jsonl"), text.as_bytes())?;
                eprintln!("warning: {failures} sample(s) failed; see {}", p.display());
            }
            outcome.records
        }
    };
    let n = write_records(&records, &target, conv)?;
    println!("samples = {}", samples.len());
    println!("records = {n}");
    println!("failed_samples = {failures}");
    println!("convention = {conv}");
    println!("output = {}", target.display());
    Ok(ExitCode::SUCCESS)
}

fn load_dataset(path: &Path) -> Result<(Vec<TextRecord>, Option<Convention>)> {
    let loaded = read_records(path)?;
    for d in &loaded.diagnostics {
        eprintln!("warning: {}:{}: {}", path.display(), d.line, d.message);
    }
    if loaded.records.is_empty() {
        bail!("{} contains no valid records", path.display());
    }
    Ok((loaded.records, loaded.convention))
}

fn cmd_split(cfg: &RunConfig, out: &Outputs, input: &Path, train_out: &Path, test_out: &Path) -> Result<ExitCode> {
    let (records, recorded) = load_dataset(input)?;
    let conv = dataset_convention(cfg, recorded)?;
    let spec = SplitSpec { train_ratio: cfg.parse("split.ratio")?, seed: cfg.seed()? };
    let (train, test) = split_dataset(&records, &spec).map_err(|e| UsageError(e.to_string()))?;
    let (tp, sp) = (out.path(train_out)?, out.path(test_out)?);
    write_records(&train, &tp, conv)?;
    write_records(&test, &sp, conv)?;
    let ids = |r: &[TextRecord]| r.iter().map(|r| r.sample_id).collect::<std::collections::BTreeSet<_>>().len();
    println!("train_samples = {}", ids(&train));
    println!("test_samples = {}", ids(&test));
    println!("train_records = {}", train.len());
    println!("test_records = {}", test.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(cfg: &RunConfig, input: &Path, strict: bool) -> Result<ExitCode> {
    let (records, recorded) = load_dataset(input)?;
    let conv = dataset_convention(cfg, recorded)?;
    let summary = validate_records(&records, conv);
    let mut by_rule: BTreeMap<&str, usize> = BTreeMap::new();
    for f in &summary.flags {
        *by_rule.entry(f.rule_name()).or_default() += 1;
    }
    println!("checked = {}", summary.checked);
    println!("flagged = {}", summary.flags.len());
    for (rule, n) in &by_rule {
        println!("rule.{rule} = {n}");
    }
    for f in summary.flags.iter().take(20) {
        println!("flag = record {} (sample {}): {}", f.index, f.sample_id, f.rule_name());
    }
    Ok(if strict && !summary.flags.is_empty() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn parse_pose(s: &str) -> Result<(YawPitch, YawPitch)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| UsageError(format!("--pose `{s}`: {e}")))?;
    if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
        return Err(UsageError(format!("--pose expects four finite numbers, got `{s}`")).into());
    }
    Ok((YawPitch::new(v[0], v[1]), YawPitch::new(v[2], v[3])))
}

fn format_for(path: &Path, fallback: ImageFormat) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => Ok(ext.to_ascii_lowercase().parse().map_err(|e| UsageError(format!("{e}")))?),
        None => Ok(fallback),
    }
}

fn cmd_sketch(
    cfg: &RunConfig,
    out: &Outputs,
    pose: Option<&str>,
    dataset: Option<&Path>,
    path: Option<&Path>,
    limit: Option<usize>,
) -> Result<ExitCode> {
    let fallback = cfg.image_format()?;
    let asset = CanonicalHead::default_asset();
    let camera = CameraSpec::default();
    if let Some(pose) = pose {
        let (head, eye) = parse_pose(pose)?;
        let conv = dataset_convention(cfg, None)?;
        let rel = path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(format!("sketch.{}", fallback.extension())));
        let format = format_for(&rel, fallback)?;
        let img = render_sketch(head, eye, conv, &asset, &camera)?;
        let p = out.write(&rel, &encode_bytes(&img, format)?)?;
        println!("output = {}", p.display());
        return Ok(ExitCode::SUCCESS);
    }
    let dataset = dataset.expect("clap enforces one source");
    let (records, recorded) = load_dataset(dataset)?;
    let conv = dataset_convention(cfg, recorded)?;
    let mut poses: BTreeMap<u32, (YawPitch, YawPitch)> = BTreeMap::new();
    for r in &records {
        poses.entry(r.sample_id).or_insert((r.head, r.eye));
    }
    let dir = path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("sketches"));
    let mut written = 0;
    for (id, (head, eye)) in poses.into_iter().take(limit.unwrap_or(usize::MAX)) {
        let img = render_sketch(head, eye, conv, &asset, &camera).with_context(|| format!("sample {id}"))?;
        out.write(&dir.join(sketch_file_name(id, fallback)), &encode_bytes(&img, fallback)?)?;
        written += 1;
    }
    println!("sketches = {written}");
    println!("output = {}", out.root.join(&dir).display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(
    cfg: &RunConfig,
    out: &Outputs,
    data: &Path,
    val: Option<&Path>,
    path: &Path,
    val_limit: usize,
) -> Result<ExitCode> {
    let seed = cfg.seed()?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let (records, _) = load_dataset(data)?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let vocab = Vocab::build(&texts)?;
    let items = train_items(&records, &vocab)?;
    let val_examples: Vec<Example> = match val {
        Some(v) => {
            let (mut val_records, _) = load_dataset(v)?;
            val_records.truncate(val_limit);
            fixed_examples(&train_items(&val_records, &vocab)?, model_cfg.schedule.steps, seed ^ 0x7A1)
        }
        None => Vec::new(),
    };
    let ckpt = out.path(path)?;
    let log_path = out.path(&with_suffix(path, "log.csv"))?;
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let model = Model::new(model_cfg, vocab, seed)?;
    eprintln!("parameters = {}", model.num_params());
    let (model, report) = train(model, &items, &val_examples, &train_cfg, Some(&mut log as &mut dyn Write))?;
    fs::write(&ckpt, checkpoint_bytes(&model)).with_context(|| format!("writing {}", ckpt.display()))?;
    if let Some(last) = report.losses.last() {
        println!("final_train_loss = {last:.6}");
    }
    for (step, loss) in &report.val_losses {
        println!("val_loss.{step} = {loss:.6}");
    }
    println!("checkpoint = {}", ckpt.display());
    println!("log = {}", log_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(cfg: &RunConfig, out: &Outputs, text: &str, checkpoint: &Path, sketch: Option<&Path>) -> Result<ExitCode> {
    let model = load_checkpoint(checkpoint)?;
    let steps: usize = cfg.parse("sample.steps")?;
    let tokens = model.vocab.encode(text)?;
    let cond = model.condition(&tokens)?;
    let (gaze, head) = ddim_sample(&model, &cond, steps, cfg.seed()?)?;
    println!(
        "gaze_yaw={:.4} gaze_pitch={:.4} head_yaw={:.4} head_pitch={:.4}",
        gaze.yaw, gaze.pitch, head.yaw, head.pitch
    );
    if let Some(rel) = sketch {
        let conv = dataset_convention(cfg, None)?;
        let format = format_for(rel, cfg.image_format()?)?;
        let eye = eye_from_gaze(head, gaze, conv);
        let img = render_sketch(head, eye, conv, &CanonicalHead::default_asset(), &CameraSpec::default())?;
        let p = out.write(rel, &encode_bytes(&img, format)?)?;
        eprintln!("sketch = {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    cfg: &RunConfig,
    out: &Outputs,
    checkpoint: &Path,
    data: &Path,
    limit: Option<usize>,
    path: &Path,
) -> Result<ExitCode> {
    let model = load_checkpoint(checkpoint)?;
    let (mut records, _) = load_dataset(data)?;
    if let Some(n) = limit {
        records.truncate(n);
    }
    let seed = cfg.seed()?;
    let target = out.path(path)?;
    let report = evaluate_model(&model, &records, cfg.parse("sample.steps")?, seed)?;
    let baseline = evaluate(&ConstantPredictor { gaze: YawPitch::ZERO, head: YawPitch::ZERO }, &records, seed)?;
    println!("n = {}", report.n);
    println!("head_mean_deg = {:.4}", report.head_mean);
    println!("head_median_deg = {:.4}", report.head_median);
    println!("gaze_mean_deg = {:.4}", report.gaze_mean);
    println!("gaze_median_deg = {:.4}", report.gaze_median);
    println!("baseline_head_mean_deg = {:.4}", baseline.head_mean);
    println!("baseline_gaze_mean_deg = {:.4}", baseline.gaze_mean);
    println!("model_fingerprint = {}", report.fingerprint);
    fs::write(&target, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", target.display()))?;
    println!("output = {}", target.display());
    Ok(ExitCode::SUCCESS)
}

fn default_variants(base: &ModelConfig) -> Vec<AblationConfig> {
    [("w/o TAM", Conditioning::SelfOnly), ("TAM-concat", Conditioning::TamConcat), ("TAM-add", Conditioning::TamAdd)]
        .into_iter()
        .map(|(name, c)| AblationConfig { name: name.into(), model: base.clone().with_conditioning(c) })
        .collect()
}

fn cmd_ablate(
    cfg: &RunConfig,
    out: &Outputs,
    train_path: &Path,
    test_path: &Path,
    variants: &[String],
    limit: Option<usize>,
    path: &Path,
) -> Result<ExitCode> {
    let base = cfg.model_config()?;
    let configs = if variants.is_empty() {
        default_variants(&base)
    } else {
        variants
            .iter()
            .map(|v| {
                let (name, c) =
                    v.split_once('=').ok_or_else(|| UsageError(format!("--variant `{v}` is not NAME=CONDITIONING")))?;
                let c: Conditioning = c.parse().map_err(|e| UsageError(format!("{e}")))?;
                Ok(AblationConfig { name: name.to_string(), model: base.clone().with_conditioning(c) })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let (train_records, _) = load_dataset(train_path)?;
    let (mut test_records, _) = load_dataset(test_path)?;
    if let Some(n) = limit {
        test_records.truncate(n);
    }
    let seed = cfg.seed()?;
    let target = out.path(path)?;
    let settings = AblationSettings { train: cfg.train_config()?, sample_steps: cfg.parse("sample.steps")?, seed };
    let rows = run_ablation(&configs, &train_records, &test_records, &settings)?;
    fs::write(&target, ablation_csv(&rows, seed)).with_context(|| format!("writing {}", target.display()))?;
    print!("{}", ablation_table(&rows));
    println!("output = {}", target.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_grad_check(cfg: &RunConfig, params: usize, fault: Option<&str>) -> Result<ExitCode> {
    let fault = match fault {
        None => GradFault::None,
        Some("silu") => GradFault::SiluDerivative,
        Some("softmax") => GradFault::SoftmaxJacobian,
        Some(other) => return Err(UsageError(format!("unknown fault `{other}` (silu or softmax)")).into()),
    };
    let seed = cfg.seed()?;
    let spec = GridSpec::default();
    let (conv, _) = grid_convention(cfg, &spec)?;
    let samples: Vec<PoseSample> = enumerate_and_filter(&spec, conv)?.into_iter().step_by(997).take(4).collect();
    let records = template_records(&samples);
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let vocab = Vocab::build(&texts)?;
    let model_cfg = ModelConfig { zero_init_out: false, ..cfg.model_config()? };
    let model = Model::new(model_cfg, vocab, seed)?;
    let items = train_items(&records[..4.min(records.len())], &model.vocab)?;
    let batch = fixed_examples(&items, model.schedule.steps(), seed);
    let report = grad_check(&model, &batch, params, seed, fault)?;
    println!("checked = {}", report.checked);
    println!("tensors = {}/{}", report.tensors_covered, report.tensors_total);
    println!("max_rel_error = {:.3e}", report.max_rel_error);
    if let Some(w) = &report.worst {
        println!("worst = {}[{}] analytic={:.6e} numeric={:.6e}", w.tensor, w.index, w.analytic, w.numeric);
    }
    let ok = match fault {
        GradFault::None => report.max_rel_error < 1e-4,
        _ => report.max_rel_error > 1e-2,
    };
    println!("status = {}", if ok { "pass" } else { "fail" });
    if ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(anyhow!("gradient check failed"))
    }
}

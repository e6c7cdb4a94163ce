use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};

use moemo::ablation::{self, AblationConfig};
use moemo::config::{model_from_text, RunConfig};
use moemo::data::{labels, subset, synth_samples, Sample};
use moemo::io;
use moemo::metrics::{stratified_split, EvalReport};
use moemo::model::Variant;
use moemo::motion::clip_vectors;
use moemo::run::{self, RunRecord};
use moemo::synth::{bayes_gap, generate};
use moemo::train::{evaluate_model, init_model, train};
use moemo::{Error, Net32};

#[derive(Parser)]
#[command(name = "moemo", version, about = "Emotion classification from 3D movement and scene context")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random substream (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest, keypoint and context files)
    Synth {
        #[arg(long)]
        n_clips: Option<usize>,
        #[arg(long)]
        interaction_fraction: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        context_purity: Option<f64>,
    },
    /// Compute movement vectors from keypoint files or manifests
    Vectors {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train one model; without --manifest the synthetic data is generated in memory
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train every variant on the synthetic data and compare them
    Ablate {
        /// Comma-separated seeds
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated subset of variants
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
    },
    /// Check interchange files, manifests, checkpoints and run records
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

fn load_config(global: &Global, bench_default: bool) -> anyhow::Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::read(path)?,
        None if bench_default => RunConfig::bench(),
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.set("seed", &seed.to_string())?;
    }
    Ok(config)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Samples and their train/test indices from a manifest or the in-memory
/// synthetic generator, plus a content hash of the inputs.
fn dataset(config: &RunConfig, manifest: Option<&Path>) -> anyhow::Result<(Vec<Sample>, Vec<usize>, Vec<usize>, String)> {
    let seed = config.train.seed;
    let n_classes = config.model.n_classes;
    match manifest {
        Some(path) => {
            let (samples, tags) = run::manifest_samples(path, &config.motion, config.model.context_dims)?;
            let (train, test) = run::resolve_split(&samples, &tags, n_classes, config.train.split_fraction, seed)?;
            Ok((samples, train, test, run::manifest_hash(path)?))
        }
        None => {
            let data = generate(&config.synth)?;
            let samples = synth_samples(&data, &config.motion)?;
            let split = stratified_split(&labels(&samples), n_classes, config.train.split_fraction, seed)?;
            let hash = run::content_hash([b"synthetic".as_slice(), config.to_text().as_bytes()]);
            Ok((samples, split.train, split.test, hash))
        }
    }
}

fn report_files(out: &Path, report: &EvalReport) -> anyhow::Result<()> {
    write(&out.join("metrics.csv"), &report.to_csv())?;
    write(&out.join("metrics.txt"), &report.to_table())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let out = cli.global.out.clone();
    match cli.command {
        Command::Synth {
            n_clips,
            interaction_fraction,
            noise_sigma,
            context_purity,
        } => {
            let mut config = load_config(&cli.global, false)?;
            let s = &mut config.synth;
            s.n_clips = n_clips.unwrap_or(s.n_clips);
            s.interaction_fraction = interaction_fraction.unwrap_or(s.interaction_fraction);
            s.noise_sigma = noise_sigma.unwrap_or(s.noise_sigma);
            s.context_purity = context_purity.unwrap_or(s.context_purity);
            config.validate()?;
            let data = generate(&config.synth)?;
            let clip_labels: Vec<usize> = data.clips.iter().map(|c| c.label.index()).collect();
            let split = stratified_split(
                &clip_labels,
                config.model.n_classes,
                config.train.split_fraction,
                config.train.seed,
            )?;
            let manifest = run::write_synth_dataset(&out, &data, &split.test)?;
            write(&out.join("config.txt"), &config.to_text())?;
            let (with, without) = bayes_gap(&config.synth)?;
            println!(
                "wrote {} clips to {} (train {}, test {})",
                manifest.clips.len(),
                out.join("manifest.toml").display(),
                split.train.len(),
                split.test.len()
            );
            println!("bayes accuracy with context {with:.4}, motion only {without:.4}");
        }
        Command::Vectors { inputs } => {
            let config = load_config(&cli.global, false)?;
            for input in inputs {
                let clips = if input.extension().is_some_and(|e| e == "toml") {
                    let manifest = io::Manifest::read(&input)?;
                    let root = input.parent().unwrap_or(Path::new("."));
                    manifest
                        .clips
                        .iter()
                        .map(|c| io::read_keypoints(&root.join(&c.keypoint_file)))
                        .collect::<Result<Vec<_>, _>>()?
                } else {
                    vec![io::read_keypoints(&input)?]
                };
                for clip in clips {
                    for seq in clip_vectors(&clip, &config.motion)? {
                        let (a, b, c) = seq.shape();
                        let file = out
                            .join("vectors")
                            .join(format!("{}_p{}.momv", clip.clip_id, seq.person_id));
                        io::write_vectors(&file, &clip.clip_id, &seq)?;
                        println!("{} person {}: ({a}, {b}, {c})", clip.clip_id, seq.person_id);
                    }
                }
            }
        }
        Command::Train {
            manifest,
            variant,
            epochs,
        } => {
            let mut config = load_config(&cli.global, false)?;
            if let Some(v) = variant {
                config.model.variant = v;
            }
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            config.validate()?;
            let (samples, train_idx, test_idx, input_hash) = dataset(&config, manifest.as_deref())?;
            let (train_set, test_set) = (subset(&samples, &train_idx), subset(&samples, &test_idx));
            if test_set.is_empty() {
                bail!("the test split is empty");
            }
            let mut net: Net32 = init_model(config.model.clone(), config.train.seed)?;
            eprintln!(
                "training {} ({} parameters) on {} samples, testing on {}",
                config.model.variant,
                net.store.numel(),
                train_set.len(),
                test_set.len()
            );
            let history = train(&mut net, &train_set, &config.train, |epoch, loss| {
                eprintln!("epoch {:>3}  loss {loss:.6}", epoch + 1)
            })?;
            let report = evaluate_model(&net, &test_set)?;
            let text = config.to_text();
            let checkpoint = out.join("checkpoint.moem");
            io::write_checkpoint(&checkpoint, &text, &net.store)?;
            write(&out.join("loss.csv"), &history.to_csv())?;
            report_files(&out, &report)?;
            RunRecord::new(
                &text,
                config.train.seed,
                input_hash,
                PathBuf::from("checkpoint.moem"),
                &report,
                &history.loss_curve,
            )
            .write(&out.join("run.toml"))?;
            print!("{}", report.to_table());
        }
        Command::Eval { checkpoint, manifest } => {
            let (text, store) = io::read_checkpoint::<f32>(&checkpoint)?;
            let mut config = RunConfig::parse(&text)?;
            if let Some(seed) = cli.global.seed {
                config.set("seed", &seed.to_string())?;
            }
            let net = Net32::from_store(model_from_text(&text)?, store)?;
            let (samples, _, test_idx, _) = dataset(&config, manifest.as_deref())?;
            let report = evaluate_model(&net, &subset(&samples, &test_idx))?;
            report_files(&out, &report)?;
            print!("{}", report.to_table());
        }
        Command::Ablate { seeds, epochs, variants } => {
            let mut config = load_config(&cli.global, true)?;
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            config.validate()?;
            let ablation_config = AblationConfig {
                model: config.model.clone(),
                train: config.train.clone(),
                motion: config.motion.clone(),
                synth: config.synth.clone(),
                seeds,
                variants: if variants.is_empty() { Variant::ALL.to_vec() } else { variants },
            };
            let rows = ablation::run_ablation(&ablation_config, |variant, seed, epoch, loss| {
                eprintln!("{variant:<20} seed {seed}  epoch {:>3}  loss {loss:.6}", epoch + 1)
            })?;
            write(&out.join("ablation.csv"), &ablation::to_csv(&rows))?;
            write(&out.join("ablation.txt"), &ablation::to_table(&rows))?;
            print!("{}", ablation::to_table(&rows));
        }
        Command::Validate { paths } => {
            let config = load_config(&cli.global, false)?;
            let mut failed = 0;
            for path in &paths {
                match run::validate_file(path, &config.motion, Some(config.model.context_dims)) {
                    Ok(summary) => println!("ok      {}: {summary}", path.display()),
                    Err(e) => {
                        println!("invalid {}: {e}", path.display());
                        failed += 1;
                    }
                }
            }
            if failed > 0 {
                return Err(Error::Format {
                    path: PathBuf::from(format!("{failed} file(s)")),
                    reason: "failed validation".into(),
                })
                .context("validate");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

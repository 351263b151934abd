//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use threading_sim::error::{Error, Result};
use threading_sim::harness::{
    report, run_campaign, run_full_pipeline, write_curve_csv, write_episodes_jsonl, Algorithm, Config, ControllerKind,
    ControllerSpec, RecordOutcome, ReportOptions,
};
use threading_sim::insertion_env::Env;
use threading_sim::policy::{train_offpolicy, train_onpolicy, InsertionTask};
use threading_sim::scene::{new_world, thread_material, WorldConfig};
use threading_sim::seeding::derive_seed;
use threading_sim::tactile::{render_grip_image, TactileImage};
use threading_sim::tail_finding::{
    collect_tip_dataset, read_tip_csv, sample_tilt, trace_to_offset, trace_to_tip, train_tip_model, write_tip_csv,
    TipModel,
};

#[derive(Parser, Debug)]
#[command(name = "threading", version, about = "Thread tracing, tip estimation and tactile insertion in simulation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Tactile image size as WIDTHxHEIGHT.
    #[arg(long, global = true, value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trace the thread twice and report measured lengths.
    Trace {
        #[arg(long, default_value_t = 1)]
        episodes: usize,
    },
    /// Collect grasped-tail samples for the tip model.
    CollectTipData {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train the tip model from a dataset file, or from fresh samples.
    TrainTip {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train an insertion policy on the configured world.
    TrainPolicy {
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a controller over the configured campaign grid.
    Eval {
        /// Policy checkpoint; the visual-servoing baseline when absent
        /// and the configuration names none.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write the plain-text grid.
        #[arg(long)]
        grid: bool,
        /// Dump every eyelet image as PGM.
        #[arg(long)]
        images: bool,
    },
    /// Run the full trace, approach and insertion pipeline.
    Pipeline {
        #[arg(long)]
        tip_model: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
    },
    /// Render the grip and eyelet imprints of one world as PGM.
    Render,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum AlgorithmArg {
    Offpolicy,
    Onpolicy,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    if w < 8 || h < 8 {
        return Err("resolution must be at least 8x8".into());
    }
    Ok((w, h))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some((w, h)) = cli.resolution {
        cfg.sensor = cfg.sensor.with_resolution(w, h);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

fn world_config(cfg: &Config, seed: u64) -> WorldConfig {
    WorldConfig {
        thread: cfg.world.thread,
        needle: cfg.world.needle,
        angle: cfg.world.angle,
        seed,
        noise_bound: cfg.world.noise_bound,
        ..WorldConfig::default()
    }
}

fn controller_for(cfg: &Config, policy: Option<&PathBuf>) -> Result<ControllerKind> {
    match policy {
        Some(p) => ControllerKind::load(&ControllerSpec::Policy(p.clone())),
        None => ControllerKind::load(&cfg.campaign.controller),
    }
}

#[derive(Serialize)]
struct TraceRow {
    episode: usize,
    seed: u64,
    true_length: f64,
    d1: f64,
    d2: f64,
    l_thread: f64,
    l_tail: f64,
    theta: f64,
}

#[derive(Serialize)]
struct TipEvalRow {
    samples: usize,
    train_size: usize,
    test_size: usize,
    mean_error_m: f64,
}

#[derive(Serialize)]
struct TrainRow {
    algorithm: String,
    steps: usize,
    episodes: usize,
    final_success_rate: f64,
    aborted: bool,
}

#[derive(Serialize)]
struct PipelineRow {
    episode: usize,
    seed: u64,
    outcome: String,
    steps: usize,
    l_tail: Option<f64>,
    tip_error: Option<f64>,
    initial_offset: f64,
    final_offset: f64,
}

#[derive(Serialize)]
struct RenderRow {
    image: String,
    width: usize,
    height: usize,
    max: f64,
    mean: f64,
}

fn image_row(name: &str, img: &TactileImage) -> RenderRow {
    let n = (img.width * img.height) as f64;
    RenderRow {
        image: name.into(),
        width: img.width,
        height: img.height,
        max: img.max(),
        mean: img.data.iter().sum::<f64>() / n,
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::Trace { episodes } => {
            let mut rows = Vec::new();
            for e in 0..*episodes {
                let seed = derive_seed(cfg.seed, &[e as u64]);
                let mut world = new_world(&world_config(&cfg, seed))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let first = trace_to_tip(&mut world, &cfg.sensor, &mut rng)?;
                let tilt = sample_tilt(&mut rng);
                let t = trace_to_offset(&mut world, &cfg.sensor, &first, cfg.tip.tail_target, tilt, &mut rng)?;
                rows.push(TraceRow {
                    episode: e,
                    seed,
                    true_length: world.thread_length(),
                    d1: t.d1,
                    d2: t.d2,
                    l_thread: t.l_thread,
                    l_tail: t.l_tail,
                    theta: t.theta,
                });
            }
            write_rows(&out.join("trace.csv"), &rows)
        }
        Command::CollectTipData { samples } => {
            let n = samples.unwrap_or(cfg.tip.samples);
            let data = collect_tip_dataset(n, thread_material(cfg.tip.thread)?, &cfg.sensor, cfg.seed)?;
            write_tip_csv(&out.join("tip_data.csv"), &data)
        }
        Command::TrainTip { data } => {
            let samples = match data {
                Some(p) => read_tip_csv(p)?,
                None => collect_tip_dataset(cfg.tip.samples, thread_material(cfg.tip.thread)?, &cfg.sensor, cfg.seed)?,
            };
            let tcfg = threading_sim::tail_finding::TipTrainConfig { seed: cfg.seed, ..cfg.tip.training.clone() };
            let (model, err) = train_tip_model(&samples, &tcfg)?;
            model.save_json(&out.join("tip_model.json"))?;
            let meta = model.meta.clone();
            write_rows(
                &out.join("tip_eval.csv"),
                &[TipEvalRow {
                    samples: samples.len(),
                    train_size: meta.as_ref().map_or(0, |m| m.train_size),
                    test_size: meta.as_ref().map_or(0, |m| m.test_size),
                    mean_error_m: err,
                }],
            )
        }
        Command::TrainPolicy { algorithm, steps } => {
            let algorithm = match algorithm {
                Some(AlgorithmArg::Offpolicy) => Algorithm::Offpolicy,
                Some(AlgorithmArg::Onpolicy) => Algorithm::Onpolicy,
                None => cfg.train.algorithm,
            };
            let mut task = InsertionTask::new(cfg.env_config())?;
            let report = match algorithm {
                Algorithm::Offpolicy => {
                    let mut c = cfg.train.offpolicy.clone();
                    c.seed = cfg.seed;
                    c.total_steps = steps.unwrap_or(c.total_steps);
                    train_offpolicy(&mut task, &c)?
                }
                Algorithm::Onpolicy => {
                    let mut c = cfg.train.onpolicy.clone();
                    c.seed = cfg.seed;
                    c.total_steps = steps.unwrap_or(c.total_steps);
                    train_onpolicy(&mut task, &c)?
                }
            };
            report.params.save_json(&out.join("policy.json"))?;
            write_curve_csv(&out.join("learning_curve.csv"), &report.curve)?;
            let tail = &report.curve[report.curve.len() - report.curve.len() / 10..];
            let rate = if tail.is_empty() { 0.0 } else { tail.iter().filter(|p| p.success).count() as f64 / tail.len() as f64 };
            write_rows(
                &out.join("train_summary.csv"),
                &[TrainRow {
                    algorithm: report.params.algorithm.clone(),
                    steps: report.params.steps,
                    episodes: report.curve.len(),
                    final_success_rate: rate,
                    aborted: report.aborted.is_some(),
                }],
            )?;
            match report.aborted {
                Some(msg) => Err(Error::TrainingFailure(msg)),
                None => Ok(()),
            }
        }
        Command::Eval { policy, episodes, grid, images } => {
            let mut cfg = cfg.clone();
            if let Some(n) = episodes {
                cfg.campaign.episodes = *n;
            }
            if *images {
                cfg.campaign.image_dir = Some(out.join("images"));
            }
            let controller = controller_for(&cfg, policy.as_ref())?;
            let output = run_campaign(&cfg, &controller)?;
            report(&output, out, ReportOptions { grid: *grid })?;
            if *grid {
                print!("{}", threading_sim::harness::results_grid(&output.table));
            }
            Ok(())
        }
        Command::Pipeline { tip_model, policy, episodes } => {
            let model = TipModel::load_json(tip_model).map_err(|e| Error::Config(e.to_string()))?;
            let controller = controller_for(&cfg, policy.as_ref())?;
            let env = cfg.env_config();
            let mut rows = Vec::new();
            let mut records = Vec::new();
            for e in 0..*episodes {
                let seed = derive_seed(cfg.seed, &[e as u64]);
                let mut ctl = controller.instantiate();
                let r = run_full_pipeline(&env, &model, cfg.tip.tail_target, ctl.as_mut(), e, seed, None);
                let outcome = match &r.outcome {
                    RecordOutcome::StageError { stage, .. } => format!("error:{stage}"),
                    o => serde_json::to_value(o)
                        .ok()
                        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_string))
                        .unwrap_or_default(),
                };
                rows.push(PipelineRow {
                    episode: e,
                    seed,
                    outcome,
                    steps: r.steps_taken,
                    l_tail: r.approach.as_ref().map(|a| a.trace.l_tail),
                    tip_error: r.approach.as_ref().map(|a| a.tip_error),
                    initial_offset: r.initial_offset,
                    final_offset: r.final_offset,
                });
                records.push(r);
            }
            write_rows(&out.join("pipeline.csv"), &rows)?;
            write_episodes_jsonl(&out.join("episodes.jsonl"), &records)
        }
        Command::Render => {
            let mut world = new_world(&world_config(&cfg, cfg.seed))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let first = trace_to_tip(&mut world, &cfg.sensor, &mut rng)?;
            let tilt = sample_tilt(&mut rng);
            trace_to_offset(&mut world, &cfg.sensor, &first, cfg.tip.tail_target, tilt, &mut rng)?;
            let grip = render_grip_image(&world, &cfg.sensor, &mut rng)?;
            grip.save_pgm(&out.join("grip.pgm"))?;
            let mut env = Env::new(cfg.env_config())?;
            env.reset(cfg.seed)?;
            let eyelet = env.last_image().ok_or_else(|| Error::InvalidState("no eyelet image".into()))?;
            eyelet.save_pgm(&out.join("eyelet.pgm"))?;
            write_rows(&out.join("render.csv"), &[image_row("grip", &grip), image_row("eyelet", eyelet)])
        }
    }
}

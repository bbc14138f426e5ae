//! Command-line front end. [`run`] parses arguments, executes one command
//! and returns the process exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::attention::{export_attention_maps, probabilities_csv, AttentionMode};
use crate::config::Config;
use crate::detect::{detections_csv, draw_detections};
use crate::error::{Error, Result};
use crate::geometry::{generate_dataset, Dataset, ShapeEntry};
use crate::gradsuite;
use crate::render::build_gsp_ground_truth;
use crate::train::{
    ablation_csv, checkpoint, gsp_dir, load_views, metrics_csv, render_cached, total_loss_csv, validation_split,
    Pipeline, TrainState,
};

#[derive(Debug, Parser)]
#[command(name = "fgpv", version, about = "Fine-grained multi-view shape classification")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic OFF dataset and its splits.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; overrides `dataset_root`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the shaded views of every shape into the view cache.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Build per-view GSP ground-truth boxes from part-colored renders.
    GspGt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Alternate detector and classifier training, checkpointing each round.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a round checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Retrain the attention branch in every ablation mode on a trained detector.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Detector source; defaults to the latest round checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of every operation and both training paths.
    GradCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Write attention heatmaps and boxed views of one shape.
    ExportAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shape id such as `chair_lowback/shape_017`.
        #[arg(long)]
        shape: String,
        /// Output directory; defaults to `<out_dir>/attention/<shape>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code: 0 success, 1 usage or configuration error,
/// 2 data error, 3 numeric or contract failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common) -> Result<Config> {
    match &common.config {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn checkpoints_dir(cfg: &Config) -> PathBuf {
    cfg.out_dir.join("checkpoints")
}

/// `round_{r}.fgpv` under the checkpoint directory.
pub fn checkpoint_path(cfg: &Config, round: usize) -> PathBuf {
    checkpoints_dir(cfg).join(format!("round_{round}.fgpv"))
}

fn latest_checkpoint(cfg: &Config) -> Result<PathBuf> {
    let dir = checkpoints_dir(cfg);
    let best = fs::read_dir(&dir)
        .ok()
        .into_iter()
        .flatten()
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            name.strip_prefix("round_")?.strip_suffix(".fgpv")?.parse::<usize>().ok()
        })
        .max();
    best.map(|r| checkpoint_path(cfg, r))
        .ok_or_else(|| Error::Data(format!("no checkpoints in {} (run train first)", dir.display())))
}

/// Loads a checkpoint whose architecture must match `cfg`.
fn load_matching(path: &Path, cfg: &Config) -> Result<TrainState> {
    let (saved, state) = checkpoint::load(path)?;
    if !saved.same_architecture(cfg) {
        return Err(Error::Config(format!(
            "{} was trained with a different architecture or rig than the configuration",
            path.display()
        )));
    }
    Ok(state)
}

fn dataset(cfg: &Config) -> Result<Dataset> {
    Dataset::load(&cfg.dataset_root).map_err(|e| match e {
        Error::Io { path, .. } => Error::Data(format!("cannot read {} (run gen-data first)", path.display())),
        other => other,
    })
}

fn find_shape<'a>(ds: &'a Dataset, id: &str) -> Result<&'a ShapeEntry> {
    ds.all()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::Data(format!("no shape `{id}` in {}", ds.root.display())))
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData { common, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = out {
                cfg.dataset_root = o;
            }
            let ds = generate_dataset(
                &cfg.dataset_root,
                cfg.family,
                cfg.shapes_per_subcategory,
                cfg.test_fraction,
                cfg.seed,
            )?;
            println!(
                "wrote {} shapes ({} train, {} test) in {} classes to {}",
                ds.train.len() + ds.test.len(),
                ds.train.len(),
                ds.test.len(),
                ds.classes.len(),
                cfg.dataset_root.display()
            );
        }
        Command::Render { common, dataset: root } => {
            let mut cfg = load_config(&common)?;
            if let Some(r) = root {
                cfg.dataset_root = r;
            }
            let ds = dataset(&cfg)?;
            let rig = cfg.rig();
            let entries: Vec<&ShapeEntry> = ds.all().collect();
            let rendered = entries
                .par_iter()
                .map(|e| render_cached(e, &rig, &cfg.out_dir))
                .collect::<Result<Vec<bool>>>()?;
            let fresh = rendered.iter().filter(|&&r| r).count();
            println!("rendered {fresh} shapes, {} already cached", rendered.len() - fresh);
        }
        Command::GspGt { common, dataset: root } => {
            let mut cfg = load_config(&common)?;
            if let Some(r) = root {
                cfg.dataset_root = r;
            }
            let ds = dataset(&cfg)?;
            let n = build_gsp_ground_truth(&ds, &cfg.rig(), &gsp_dir(&cfg.out_dir))?;
            println!("wrote ground truth for {n} shapes to {}", gsp_dir(&cfg.out_dir).display());
        }
        Command::Train { common, resume } => train(load_config(&common)?, resume)?,
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let state = load_matching(&checkpoint, &cfg)?;
            let ds = dataset(&cfg)?;
            let p = Pipeline::new(cfg.clone(), ds.classes.clone())?;
            let test = p.load_samples(&ds.test, false)?;
            let (report, rows) = p.evaluate(&state.store, &test)?;
            let dir = cfg.out_dir.join("eval");
            write(&dir.join("confusion.csv"), &report.confusion_csv(&ds.classes))?;
            write(&dir.join("probabilities.csv"), &probabilities_csv(&rows))?;
            println!(
                "test instance accuracy {:.4}, class accuracy {:.4} ({} shapes)",
                report.instance_accuracy,
                report.class_accuracy,
                test.len()
            );
        }
        Command::Ablate { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let path = match checkpoint {
                Some(p) => p,
                None => latest_checkpoint(&cfg)?,
            };
            let state = load_matching(&path, &cfg)?;
            let ds = dataset(&cfg)?;
            let p = Pipeline::new(cfg.clone(), ds.classes.clone())?;
            let train = p.load_samples(&ds.train, false)?;
            let test = p.load_samples(&ds.test, false)?;
            let rows = p.run_ablation(&state.store, &train, &test, &AttentionMode::ALL)?;
            let csv = ablation_csv(&rows);
            write(&cfg.out_dir.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::GradCheck { common } => {
            let cfg = load_config(&common)?;
            let results = gradsuite::run(gradsuite::SUITE_SEED)?;
            let mut csv = String::from("case,max_rel_error,coords_checked,worst_param,worst_index,passed\n");
            let mut failed = 0;
            for r in &results {
                let (wp, wi) = r.report.worst.clone().map_or((String::new(), String::new()), |(p, i)| (p, i.to_string()));
                csv += &format!("{},{:e},{},{wp},{wi},{}\n", r.name, r.report.max_rel_error, r.report.coords_checked, r.passed());
                println!(
                    "{} {:<32} max rel error {:.3e} over {} coordinates",
                    if r.passed() { "ok  " } else { "FAIL" },
                    r.name,
                    r.report.max_rel_error,
                    r.report.coords_checked
                );
                failed += usize::from(!r.passed());
            }
            write(&cfg.out_dir.join("grad_check.csv"), &csv)?;
            if failed > 0 {
                eprintln!("{failed} of {} cases at or above {:e}", results.len(), gradsuite::TOLERANCE);
                return Ok(3);
            }
        }
        Command::ExportAttn { checkpoint: path, shape, out } => {
            let (cfg, state) = checkpoint::load(&path)?;
            let ds = dataset(&cfg)?;
            let entry = find_shape(&ds, &shape)?;
            let p = Pipeline::new(cfg.clone(), ds.classes.clone())?;
            let sample = p.load_samples(std::slice::from_ref(entry), false)?.remove(0);
            let parts = p.shape_parts(&state.store, &sample)?;
            let (probs, q, theta) = p.attention_maps(&state.store, &parts, cfg.attention_mode)?;
            let dir = out.unwrap_or_else(|| cfg.out_dir.join("attention").join(&shape));
            export_attention_maps(&q, &theta, &dir)?;
            let mut drawn = 0;
            let mut rows = Vec::new();
            for (v, mut img) in load_views(entry, &cfg.rig(), &cfg.out_dir)?.into_iter().enumerate() {
                drawn += draw_detections(&mut img, &parts.boxes[v]);
                img.write_ppm(&dir.join(format!("view_{v:02}.ppm")))?;
                rows.extend(parts.boxes[v].iter().map(|b| (shape.clone(), *b)));
            }
            write(&dir.join("detections.csv"), &detections_csv(&rows))?;
            write(&dir.join("probabilities.csv"), &probabilities_csv(&[(shape.clone(), entry.class, probs)]))?;
            if drawn == 0 {
                log::warn!("no selected part scored above 0.8; views were exported without boxes");
            }
            println!("wrote attention maps and {} views to {}", q.len(), dir.display());
        }
    }
    Ok(0)
}

fn train(cfg: Config, resume: Option<PathBuf>) -> Result<()> {
    let ds = dataset(&cfg)?;
    let (train_entries, val_entries) = validation_split(&ds.train, cfg.val_fraction);
    let p = Pipeline::new(cfg.clone(), ds.classes.clone())?;
    let mut state = match &resume {
        Some(path) => {
            let (saved, state) = checkpoint::load(path)?;
            let mut same = saved.clone();
            same.rounds = cfg.rounds;
            if same != cfg {
                return Err(Error::Config(format!(
                    "{} was written under a different configuration; only `rounds` may change on resume",
                    path.display()
                )));
            }
            state
        }
        None => p.init_state()?,
    };
    if state.rounds_done >= cfg.rounds {
        println!("checkpoint already has {} of {} rounds", state.rounds_done, cfg.rounds);
        return Ok(());
    }
    let samples = p.load_samples(&train_entries, true)?;
    let val = p.load_samples(&val_entries, false)?;
    let mut recall = String::from("round,matched,total,recall,train_instance_acc,val_instance_acc\n");
    if let Some(prev) = resume.as_ref().and_then(|_| fs::read_to_string(cfg.out_dir.join("recall.csv")).ok()) {
        recall = prev.lines().take(state.rounds_done + 1).map(|l| format!("{l}\n")).collect();
    }
    let remaining = cfg.rounds - state.rounds_done;
    p.alternate_train(&mut state, &samples, remaining, |st| {
        let round = st.rounds_done;
        checkpoint::save(&checkpoint_path(&cfg, round), &cfg, st)?;
        write(&cfg.out_dir.join("metrics.csv"), &metrics_csv(&st.history))?;
        write(&cfg.out_dir.join("total_loss.csv"), &total_loss_csv(&st.history))?;
        let (hit, total) = p.recall(&st.store, &samples)?;
        let r = hit as f64 / total.max(1) as f64;
        let (train_report, _) = p.evaluate(&st.store, &samples)?;
        let val_acc = if val.is_empty() {
            String::new()
        } else {
            p.evaluate(&st.store, &val)?.0.instance_accuracy.to_string()
        };
        recall += &format!("{round},{hit},{total},{r},{},{val_acc}\n", train_report.instance_accuracy);
        write(&cfg.out_dir.join("recall.csv"), &recall)?;
        println!(
            "round {round}: recall@{} {r:.3}, train accuracy {:.3}",
            cfg.recall_top_n, train_report.instance_accuracy
        );
        Ok(())
    })
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use pvkit::pipeline::{
    ablation, evaluate, format_report, labels_to_objects, mean_loss, prepare_labeled,
    read_kitti_bin, read_label_file, read_sidecar, synthetic_corpus, train, write_kitti_bin,
    write_labels, write_predictions, write_sidecar, Detection, Detector, DetectorConfig, GtObject,
    SceneDetections, SyntheticScene,
};
use pvkit::pooling::PoolingMode;
use pvkit::scene::PointCloud;
use pvkit::tensor::ParamStore;

/// Toy two-stage point-voxel detector.
///
/// A working directory (`--out`) holds everything: `gen` writes `train/` and
/// `eval/` splits in KITTI layout (`velodyne/*.bin`, `label_2/*.txt`),
/// `train` adds `model.ckpt`, `loss_curve.csv` and `train_summary.csv`,
/// `detect` fills `pred/` and `eval` writes `ap_report.csv`.
#[derive(Debug, Parser)]
#[command(name = "pvkit", version)]
struct Cli {
    /// Flat `key = value` configuration file; unset keys keep the toy preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Working directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "pvkit-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic train and eval splits.
    Gen,
    /// Train on a labeled split and save the checkpoint and loss curve.
    Train {
        /// Split to train on [default: <out>/train].
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Detect objects in every `.bin` of a split.
    Detect {
        /// Checkpoint [default: <out>/model.ckpt].
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Split whose `velodyne/` is scanned [default: <out>/eval].
        #[arg(long, value_name = "DIR")]
        input: Option<PathBuf>,
    },
    /// AP_R40 per class of predictions against ground-truth labels.
    Eval {
        /// Prediction directory [default: <out>/pred].
        #[arg(long, value_name = "DIR")]
        pred: Option<PathBuf>,
        /// Label directory [default: <out>/eval/label_2].
        #[arg(long, value_name = "DIR")]
        labels: Option<PathBuf>,
    },
    /// Compare pooling heads on the synthetic corpus over several training seeds.
    Ablate {
        /// Training seeds 0..N.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Comma-separated heads (gph, cph, pph, cph+pph) [default: all].
        #[arg(long, value_delimiter = ',')]
        modes: Vec<PoolingMode>,
        /// Car IoU threshold [default: the configured car eval IoU].
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Run the invariant and gradient suite; exits nonzero on any failure.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = set_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn set_threads() -> Result<()> {
    let Ok(v) = std::env::var("PVKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .with_context(|| format!("PVKIT_THREADS={v} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<DetectorConfig> {
    let mut cfg = match &cli.config {
        Some(p) => DetectorConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => DetectorConfig::toy(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Check = cli.command {
        return Ok(check());
    }
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Gen => gen(&cfg, out)?,
        Command::Train { data } => {
            train_cmd(&cfg, out, data.clone().unwrap_or_else(|| out.join("train")))?
        }
        Command::Detect { model, input } => detect(
            &cfg,
            model.clone().unwrap_or_else(|| out.join("model.ckpt")),
            input.clone().unwrap_or_else(|| out.join("eval")),
            &out.join("pred"),
        )?,
        Command::Eval { pred, labels } => eval(
            &cfg,
            pred.clone().unwrap_or_else(|| out.join("pred")),
            labels
                .clone()
                .unwrap_or_else(|| out.join("eval").join("label_2")),
            out,
        )?,
        Command::Ablate { seeds, modes, iou } => ablate(&cfg, out, *seeds, modes, *iou)?,
        Command::Check => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn write_split(dir: &Path, scenes: &[SyntheticScene]) -> Result<()> {
    create_dir(&dir.join("velodyne"))?;
    create_dir(&dir.join("label_2"))?;
    scenes
        .par_iter()
        .enumerate()
        .try_for_each(|(i, s)| -> Result<()> {
            write_kitti_bin(dir.join("velodyne").join(format!("{i:06}.bin")), &s.cloud)?;
            write_labels(dir.join("label_2").join(format!("{i:06}.txt")), &s.objects)?;
            Ok(())
        })
}

fn gen(cfg: &DetectorConfig, out: &Path) -> Result<()> {
    let (train_s, eval_s) = synthetic_corpus(cfg);
    create_dir(out)?;
    write_split(&out.join("train"), &train_s)?;
    write_split(&out.join("eval"), &eval_s)?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    println!(
        "wrote {} train and {} eval scenes to {}",
        train_s.len(),
        eval_s.len(),
        out.display()
    );
    Ok(())
}

/// Sorted `(stem, path)` of every file in `dir` with extension `ext`.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == ext) {
            let stem = path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

fn read_labeled_split(dir: &Path) -> Result<Vec<(PointCloud, Vec<GtObject>)>> {
    let bins = files_with_ext(&dir.join("velodyne"), "bin")?;
    if bins.is_empty() {
        bail!("no .bin files under {}", dir.join("velodyne").display());
    }
    bins.par_iter()
        .map(|(stem, bin)| {
            let labels = read_label_file(dir.join("label_2").join(format!("{stem}.txt")))?;
            Ok((read_kitti_bin(bin)?, labels_to_objects(&labels)))
        })
        .collect()
}

fn train_cmd(cfg: &DetectorConfig, out: &Path, data: PathBuf) -> Result<()> {
    let start = Instant::now();
    let scenes = read_labeled_split(&data)?;
    let mut det = Detector::new(cfg.clone())?;
    let samples = prepare_labeled(&det, &scenes);
    let initial = mean_loss(&det, &samples)?;
    let total = cfg.total_steps();
    let report = train(&mut det, &samples, |step, l| {
        if step % 100 == 0 || step + 1 == total {
            eprintln!("step {step}/{total} {l}");
        }
    })?;
    let final_ = mean_loss(&det, &samples)?;
    create_dir(out)?;
    let ckpt = out.join("model.ckpt");
    det.params
        .save(&ckpt)
        .with_context(|| format!("writing {}", ckpt.display()))?;
    write(&out.join("loss_curve.csv"), &report.curve_csv())?;
    let ratio = final_.total / initial.total;
    write(
        &out.join("train_summary.csv"),
        &format!(
            "initial_loss,final_loss,ratio\n{:?},{:?},{:?}\n",
            initial.total, final_.total, ratio
        ),
    )?;
    println!(
        "trained {} steps on {} scenes in {:.1}s; mean loss {:.4} -> {:.4} (ratio {:.4})",
        report.losses.len(),
        scenes.len(),
        start.elapsed().as_secs_f64(),
        initial.total,
        final_.total,
        ratio
    );
    Ok(())
}

fn load_detector(cfg: &DetectorConfig, model: &Path) -> Result<Detector> {
    let params =
        ParamStore::load(model).map_err(|e| anyhow::anyhow!("loading {}: {e}", model.display()))?;
    Ok(Detector::new(cfg.clone())?.with_params(params)?)
}

fn detect(cfg: &DetectorConfig, model: PathBuf, input: PathBuf, pred: &Path) -> Result<()> {
    let det = load_detector(cfg, &model)?;
    let bins = files_with_ext(&input.join("velodyne"), "bin")?;
    create_dir(pred)?;
    let counts: Vec<usize> = bins
        .par_iter()
        .map(|(stem, bin)| -> Result<usize> {
            let dets = det.detect(&read_kitti_bin(bin)?)?;
            write_predictions(pred.join(format!("{stem}.txt")), &dets)?;
            write_sidecar(pred.join(format!("{stem}.sidecar")), &dets)?;
            Ok(dets.len())
        })
        .collect::<Result<_>>()?;
    println!(
        "{} detections over {} scenes written to {}",
        counts.iter().sum::<usize>(),
        bins.len(),
        pred.display()
    );
    Ok(())
}

/// Predictions of one scene: the exact sidecar when present, else the label
/// file (score 1 when the line has none), else nothing.
fn read_predictions(pred: &Path, stem: &str) -> Result<Vec<Detection>> {
    let sidecar = pred.join(format!("{stem}.sidecar"));
    if sidecar.exists() {
        return Ok(read_sidecar(sidecar)?);
    }
    let txt = pred.join(format!("{stem}.txt"));
    if !txt.exists() {
        return Ok(Vec::new());
    }
    Ok(read_label_file(txt)?
        .iter()
        .filter_map(|l| {
            Some(Detection {
                class: l.class()?,
                bbox: l.to_box()?,
                score: l.score.unwrap_or(1.0),
            })
        })
        .collect())
}

fn eval(cfg: &DetectorConfig, pred: PathBuf, labels: PathBuf, out: &Path) -> Result<()> {
    let scenes = files_with_ext(&labels, "txt")?
        .iter()
        .map(|(stem, path)| {
            Ok(SceneDetections {
                detections: read_predictions(&pred, stem)?,
                gt: labels_to_objects(&read_label_file(path)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if scenes.is_empty() {
        bail!("no label files under {}", labels.display());
    }
    let report = format_report(&evaluate(&scenes, &cfg.eval_iou));
    print!("{report}");
    create_dir(out)?;
    write(&out.join("ap_report.csv"), &report)
}

fn ablate(
    cfg: &DetectorConfig,
    out: &Path,
    seeds: u64,
    modes: &[PoolingMode],
    iou: Option<f64>,
) -> Result<()> {
    let modes = if modes.is_empty() {
        PoolingMode::ALL.to_vec()
    } else {
        modes.to_vec()
    };
    let seeds: Vec<u64> = (0..seeds).collect();
    let iou = iou.unwrap_or(cfg.eval_iou[0]);
    let report = ablation(cfg, &modes, &seeds, iou, |row| {
        let ap = row
            .ap
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        eprintln!("{} seed {}: car AP {ap}", row.mode, row.seed);
    })?;
    create_dir(out)?;
    write(&out.join("ablation.csv"), &report.to_csv())?;
    println!("mode,mean_ap");
    for m in modes {
        let ap = report
            .mean(m)
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        println!("{m},{ap}");
    }
    Ok(())
}

fn check() -> ExitCode {
    let checks = pvkit::verify::run_checks();
    for c in &checks {
        println!("{c}");
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

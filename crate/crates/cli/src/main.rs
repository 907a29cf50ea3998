use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semscene::dataset::{self, ingest, read_scene_spec, read_track_truth, write_synth_dataset};
use semscene::error::{Error, Result};
use semscene::evalmetrics::{cloud_error, runtime_report, seg_metrics, tracking_score};
use semscene::export::{Manifest, MANIFEST_FILE};
use semscene::geometry::PointCloud;
use semscene::io;
use semscene::pipeline::{run_pipeline, write_outputs, PipelineConfig, TRACKS_FILE};
use semscene::semvote::LabelImage;
use semscene::synthdata::SceneSpec;

#[derive(Parser)]
#[command(name = "semscene", version, about = "Semantic RGB-D scene structuring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Scene description (JSON). Defaults to the built-in demo room.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Demo room image width; height follows at 4:3.
        #[arg(long, default_value_t = 320)]
        width: usize,
    },
    /// Run the pipeline over a dataset and export the scene.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to the config's export_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare every scene object with every frame segment.
        #[arg(long)]
        no_labels: bool,
    },
    /// Score a run against a synthetic dataset's ground truth, or two label images.
    Eval {
        #[arg(long, required_unless_present = "pred_labels")]
        dataset: Option<PathBuf>,
        /// Output directory of `run`.
        #[arg(long, required_unless_present = "pred_labels")]
        out: Option<PathBuf>,
        #[arg(long, requires = "truth_labels")]
        pred_labels: Option<PathBuf>,
        #[arg(long, requires = "pred_labels")]
        truth_labels: Option<PathBuf>,
    },
    /// Time the overlap search with and without label gating.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Also write the rows as JSON lines here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a run directory, manifest or dataset.
    Inspect { path: PathBuf },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::read(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>, width: usize) -> Result<()> {
    let mut spec = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            serde_json::from_str::<SceneSpec>(&text).map_err(|e| Error::file(p, e))?
        }
        None => {
            if width < 4 {
                return Err(Error::input("width must be at least 4"));
            }
            SceneSpec::demo_room(width, width * 3 / 4)
        }
    };
    if let Some(s) = seed {
        spec.noise.seed = s;
    }
    let summary = write_synth_dataset(&spec, out)?;
    println!(
        "wrote {} frames ({} detections) to {}",
        summary.frames,
        summary.detections,
        out.display()
    );
    Ok(())
}

fn run(config: Option<&Path>, dataset: &Path, out: Option<&Path>, no_labels: bool) -> Result<()> {
    let mut cfg = load_config(config)?;
    if no_labels {
        cfg.fusion.use_labels = false;
    }
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.export_dir.clone())
        .ok_or_else(|| Error::input("no output directory: pass --out or set export_dir"))?;
    let ds = ingest(dataset)?;
    let output = run_pipeline(&cfg, &ds)?;
    let manifest = write_outputs(&output, &out)?;
    match manifest {
        Some(m) => println!(
            "{} frames, {} objects written to {}",
            output.frames.len(),
            m.objects.len(),
            out.display()
        ),
        None => println!("{} frames, empty scene", output.frames.len()),
    }
    Ok(())
}

fn load_objects(run_dir: &Path, manifest: &Manifest) -> Result<Vec<(bool, PointCloud)>> {
    manifest
        .objects
        .iter()
        .map(|o| Ok((o.track_id.is_some(), io::read_ply(&run_dir.join(&o.ply))?)))
        .collect()
}

fn eval(
    dataset: Option<&Path>,
    out: Option<&Path>,
    pred: Option<&Path>,
    truth: Option<&Path>,
) -> Result<()> {
    let mut report = BTreeMap::new();
    if let (Some(p), Some(t)) = (pred, truth) {
        let m = seg_metrics(
            &LabelImage::new(io::read_id_png(p)?),
            &LabelImage::new(io::read_id_png(t)?),
        )?;
        report.insert("segmentation", serde_json::to_value(m).expect("plain data"));
    }
    if let (Some(ds), Some(run_dir)) = (dataset, out) {
        let manifest = Manifest::read(&run_dir.join(MANIFEST_FILE))?;
        let spec = read_scene_spec(&ds.join(dataset::TRUTH_DIR).join("scene.json"))?;
        let truth_cloud = io::read_ply(&ds.join(dataset::TRUTH_DIR).join("surface.ply"))?;
        let estimated: PointCloud = load_objects(run_dir, &manifest)?
            .into_iter()
            .filter(|(tracked, _)| !tracked)
            .flat_map(|(_, c)| c.points)
            .collect();
        let static_objects = manifest
            .objects
            .iter()
            .filter(|o| o.track_id.is_none())
            .count();
        report.insert(
            "objects",
            serde_json::json!({
                "static_found": static_objects,
                "static_expected": spec.primitives.len(),
            }),
        );
        if !estimated.is_empty() {
            let e = cloud_error(&estimated, &truth_cloud)?;
            report.insert("cloud_error", serde_json::to_value(e).expect("plain data"));
        }
        let truth_tracks = ds.join(dataset::TRUTH_DIR).join("tracks.txt");
        let run_tracks = run_dir.join(TRACKS_FILE);
        if run_tracks.exists() && truth_tracks.exists() {
            let p: Vec<Vec<u64>> = read_track_truth(&run_tracks)?.into_values().collect();
            let t: Vec<Vec<u64>> = read_track_truth(&truth_tracks)?.into_values().collect();
            let s = tracking_score(&p, &t)?;
            report.insert("tracking", serde_json::to_value(s).expect("plain data"));
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("plain data")
    );
    Ok(())
}

fn bench(config: Option<&Path>, dataset: &Path, trials: usize, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let ds = ingest(dataset)?;
    let report = runtime_report(trials, |use_labels| {
        let mut c = cfg.clone();
        c.fusion.use_labels = use_labels;
        let output = run_pipeline(&c, &ds)?;
        Ok(output.frames.into_iter().filter_map(|f| f.stats).collect())
    })?;
    print!("{}", report.to_text());
    if let Some(p) = out {
        std::fs::write(p, report.to_json_lines()).map_err(|e| Error::file(p, e))?;
    } else {
        print!("{}", report.to_json_lines());
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    if manifest_path.is_file() {
        let m = Manifest::read(&manifest_path)?;
        println!("frames: {}", m.frames);
        println!("objects: {}", m.objects.len());
        for o in &m.objects {
            let track = o
                .track_id
                .map(|t| format!(" track {t}"))
                .unwrap_or_default();
            println!(
                "  obj_{:<4} {:<14} {:>7} points{}",
                o.instance_id, o.label_name, o.points, track
            );
        }
        return Ok(());
    }
    let ds = ingest(path)?;
    println!("frames: {}", ds.frames.len());
    if let Some(k) = ds.intrinsics {
        println!("image: {}x{}", k.width, k.height);
    }
    println!("classes: {}", ds.class_names.len());
    for (id, name) in &ds.class_names {
        println!("  {id:>3} {name}");
    }
    let with_det = ds.frames.iter().filter(|f| f.detections.is_some()).count();
    println!("frames with detections: {with_det}");
    println!(
        "projector: {}",
        if ds.projector.is_some() { "yes" } else { "no" }
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Synth {
            config,
            out,
            seed,
            width,
        } => synth(config.as_deref(), out, *seed, *width),
        Command::Run {
            config,
            dataset,
            out,
            no_labels,
        } => run(config.as_deref(), dataset, out.as_deref(), *no_labels),
        Command::Eval {
            dataset,
            out,
            pred_labels,
            truth_labels,
        } => eval(
            dataset.as_deref(),
            out.as_deref(),
            pred_labels.as_deref(),
            truth_labels.as_deref(),
        ),
        Command::Bench {
            config,
            dataset,
            trials,
            out,
        } => bench(config.as_deref(), dataset, *trials, out.as_deref()),
        Command::Inspect { path } => inspect(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

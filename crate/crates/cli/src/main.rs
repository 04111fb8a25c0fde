use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wsitile::metrics::{confusion_from_csv, prf, TileClass};
use wsitile::penmark::CleaningBackend;
use wsitile::pipeline::{stage_report, stage_segment, stage_select, stage_tile, RunPlan};
use wsitile::review::{export_review, score_review};
use wsitile::segment::SegBackendConfig;
use wsitile::synth::{gen_slide, SynthSpec};
use wsitile::{run_pipeline, Error, PipelineConfig, Result, RunOutput};

#[derive(Parser)]
#[command(name = "wsitile", version, about = "Content-aware tiling of whole-slide images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage on one slide.
    Run {
        slide: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Plan the grid, extract tile sets and triage pen marks into a run directory.
    Tile {
        slide: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Segment the tiles of a run directory into masks/.
    Segment {
        run_dir: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Choose one tile per set from the masks of a run directory.
    Select {
        run_dir: PathBuf,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Write manifest, statistics and mosaic for a run directory.
    Report {
        run_dir: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigOpts,
    },
    /// Tile-class metrics from `id,class` CSVs (classes: artifact_free, blur, fold).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Generate a synthetic slide with ground truth from a JSON spec.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a seeded sample of tile sets for blind expert review.
    ReviewExport {
        /// NAME=RUN_DIR, repeatable.
        #[arg(long = "run", value_parser = parse_named_run, required = true)]
        runs: Vec<(String, PathBuf)>,
        #[arg(long, default_value_t = 10)]
        sets_per_wsi: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Agreement between reviewer answers and the pipeline's choices.
    ReviewScore {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        answers: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SegKind {
    Heuristic,
    Maskdir,
    Sidecar,
}

#[derive(Clone, Copy, ValueEnum)]
enum CleanKind {
    None,
    Fill,
    Sidecar,
}

/// Overrides applied on top of `--config` (or the run's recorded config for
/// the staged subcommands after `tile`).
#[derive(Args, Default)]
struct ConfigOpts {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tile side, or WxH.
    #[arg(long, value_parser = parse_tile_size)]
    tile_size: Option<(u32, u32)>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    pen_max: Option<f64>,
    #[arg(long)]
    pen_min: Option<f64>,
    #[arg(long, alias = "backend", value_enum)]
    seg_backend: Option<SegKind>,
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    #[arg(long)]
    sidecar_cmd: Option<String>,
    #[arg(long)]
    sidecar_procs: Option<usize>,
    #[arg(long, value_enum)]
    cleaning: Option<CleanKind>,
    #[arg(long)]
    lambda_fo: Option<f64>,
    #[arg(long)]
    lambda_bl: Option<f64>,
    #[arg(long)]
    lambda_bg: Option<f64>,
    #[arg(long)]
    cmax: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dilate_iters: Option<u32>,
    #[arg(long)]
    mosaic_downsample: Option<u32>,
    #[arg(long)]
    save_masks: bool,
    #[arg(long)]
    save_tiles: bool,
}

fn parse_tile_size(s: &str) -> std::result::Result<(u32, u32), String> {
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => parse(s).map(|v| (v, v)),
    }
}

fn parse_named_run(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or("expected NAME=RUN_DIR")?;
    Ok((name.to_string(), PathBuf::from(dir)))
}

impl ConfigOpts {
    fn build(&self, base: PipelineConfig) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => base,
        };
        if let Some((w, h)) = self.tile_size {
            (c.tile_w, c.tile_h) = (w, h);
        }
        set(&mut c.overlap, self.overlap);
        set(&mut c.pen.p_max, self.pen_max);
        set(&mut c.pen.p_min, self.pen_min);
        set(&mut c.weights.lambda_fo, self.lambda_fo);
        set(&mut c.weights.lambda_bl, self.lambda_bl);
        set(&mut c.weights.lambda_bg, self.lambda_bg);
        set(&mut c.c_max, self.cmax);
        set(&mut c.workers, self.workers);
        set(&mut c.seed, self.seed);
        set(&mut c.tissue.dilate_iters, self.dilate_iters);
        if self.mosaic_downsample.is_some() {
            c.report.mosaic_downsample = self.mosaic_downsample;
        }
        c.save_masks |= self.save_masks;
        c.save_tiles |= self.save_tiles;

        let processes = self.sidecar_procs.unwrap_or(1);
        let sidecar_cmd = |what: &str| {
            self.sidecar_cmd
                .clone()
                .ok_or_else(|| Error::InvalidArgument(format!("{what} sidecar needs --sidecar-cmd")))
        };
        match self.seg_backend {
            None => {
                if let Some(dir) = &self.mask_dir {
                    c.segmentation = SegBackendConfig::Maskdir { dir: dir.clone() };
                }
            }
            Some(SegKind::Heuristic) => c.segmentation = SegBackendConfig::default(),
            Some(SegKind::Maskdir) => {
                let dir = self
                    .mask_dir
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("--seg-backend maskdir needs --mask-dir".into()))?;
                c.segmentation = SegBackendConfig::Maskdir { dir };
            }
            Some(SegKind::Sidecar) => {
                c.segmentation = SegBackendConfig::Sidecar {
                    command: sidecar_cmd("segmentation")?,
                    timeout_secs: 30.0,
                    processes,
                }
            }
        }
        match self.cleaning {
            None => {}
            Some(CleanKind::None) => c.cleaning = CleaningBackend::None,
            Some(CleanKind::Fill) => c.cleaning = CleaningBackend::Fill,
            Some(CleanKind::Sidecar) => {
                c.cleaning = CleaningBackend::Sidecar {
                    command: sidecar_cmd("cleaning")?,
                    timeout_secs: 30.0,
                    processes,
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Config recorded by the `tile` stage, with the live worker default.
fn recorded_config(run_dir: &Path) -> Result<PipelineConfig> {
    Ok(RunPlan::load(run_dir)?.config)
}

fn summarize(out: &RunOutput) {
    let s = &out.stats;
    println!(
        "sets {}  selected {}  rejected {}  pen-discarded {}",
        s.n_total,
        s.n_records - s.n_rejected_cost,
        s.n_rejected_cost,
        s.n_discarded_pen
    );
    match s.qt.gain_percent {
        Some(g) => println!("qt_gain {g:.4}%"),
        None => println!("qt_gain undefined (standard tiling captured no qualified tissue)"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { slide, out, opts } => {
            let cfg = opts.build(PipelineConfig::default())?;
            summarize(&run_pipeline(&slide, &cfg, &out)?);
        }
        Command::Tile { slide, out, opts } => {
            let cfg = opts.build(PipelineConfig::default())?;
            let plan = stage_tile(&slide, &cfg, &out)?;
            println!("planned {} sets into {}", plan.grid.len(), out.display());
        }
        Command::Segment { run_dir, opts } => {
            let cfg = opts.build(recorded_config(&run_dir)?)?;
            let n = stage_segment(&run_dir, &cfg)?;
            println!("segmented {n} tiles");
        }
        Command::Select { run_dir, opts } => {
            let cfg = opts.build(recorded_config(&run_dir)?)?;
            let records = stage_select(&run_dir, &cfg)?;
            let chosen = records.iter().filter(|r| r.chosen.is_some()).count();
            println!("selected {chosen} of {} sets", records.len());
        }
        Command::Report { run_dir, out, opts } => {
            let cfg = opts.build(recorded_config(&run_dir)?)?;
            let out = out.unwrap_or_else(|| run_dir.clone());
            summarize(&stage_report(&run_dir, &cfg, &out)?);
        }
        Command::Eval { pred, truth } => {
            let cm = confusion_from_csv(&truth, &pred)?;
            let m = prf(&cm)?;
            println!("accuracy {:.5}", m.accuracy);
            for c in TileClass::ALL {
                let s = m.class(c);
                let name = serde_json::to_value(c)?;
                println!(
                    "{:<14} precision {:.5}  recall {:.5}  f1 {:.5}",
                    name.as_str().unwrap_or_default(),
                    s.precision,
                    s.recall,
                    s.f1
                );
            }
            println!(
                "macro          precision {:.5}  recall {:.5}  f1 {:.5}",
                m.macro_precision, m.macro_recall, m.macro_f1
            );
        }
        Command::Synth { spec, out } => {
            let spec = SynthSpec::load(&spec)?;
            gen_slide(&spec)?.write(&out)?;
            println!("wrote {}", out.join("slide.png").display());
        }
        Command::ReviewExport {
            runs,
            sets_per_wsi,
            seed,
            out,
        } => {
            let b = export_review(&runs, sets_per_wsi, seed, &out)?;
            let rows: usize = b.wsis.iter().map(|w| w.sets.len()).sum();
            println!("exported {rows} sets from {} slides to {}", b.wsis.len(), out.display());
        }
        Command::ReviewScore { bundle, answers } => {
            let g = score_review(&bundle, &answers)?;
            for w in &g.per_wsi {
                println!("{:<16} {}/{}  {:.2}%", w.wsi, w.matches, w.total, w.percent);
            }
            println!("agreement {}/{}  {:.2}%", g.matches, g.total, g.percent);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Display already folds in the source chain.
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

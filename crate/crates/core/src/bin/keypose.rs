use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use keypose::data::{generate_dataset, read_dataset, write_dataset, Family, GeneratorConfig, OcclusionMode, Split};
use keypose::meta::Aggregation;
use keypose::pipeline::{
    evaluate, gradcheck_suite, load_checkpoint, save_checkpoint, train, write_loss_trace, DecoderKind, EvalOptions,
    SegMode, TrainConfig,
};
use keypose::posefit::fit_rigid;
use keypose::{Error, Result, Vec3};

#[derive(Parser)]
#[command(
    name = "keypose",
    about = "Category-agnostic keypoint pose estimation on synthetic point scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Intra,
    Cross,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated training families; the others are held out.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<Family>>,
        /// Training objects per family (default 8).
        #[arg(long)]
        objects_per_family: Option<usize>,
        #[arg(long)]
        scenes_per_object: Option<usize>,
        /// `none` or `range` (adds an occluded copy of every held-out scene).
        #[arg(long, default_value = "range")]
        occlusion: OcclusionMode,
    },
    /// Meta-train the networks; writes checkpoint.json, loss.txt and config.txt.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat `key = value` file; flags given here override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `mlp` or `gnn`.
        #[arg(long)]
        decoder: Option<DecoderKind>,
        /// Context aggregation, `max` or `mean`.
        #[arg(long)]
        agg: Option<Aggregation>,
        /// Keypoint graph neighbours, 1 to 8.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// No progress lines on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on the held-out objects.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        /// Use the occluded scene variants as targets.
        #[arg(long)]
        occluded: bool,
        /// `predicted` or `gt` segmentation.
        #[arg(long, default_value = "predicted")]
        seg: SegMode,
        /// CSV output; the summary table goes next to it with a `.txt` suffix.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Context scenes per object; overrides the checkpoint's setting.
        #[arg(long)]
        contexts: Option<usize>,
        /// Evaluate training objects instead (generalization-gap check).
        #[arg(long)]
        train_objects: bool,
    },
    /// Fit a rigid transform to correspondences: one `x y z x' y' z'` line each.
    FitPose { input: PathBuf },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        configs: usize,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data(
    out: &Path,
    seed: u64,
    families: Option<Vec<Family>>,
    objects_per_family: Option<usize>,
    scenes_per_object: Option<usize>,
    occlusion: OcclusionMode,
) -> Result<()> {
    let mut config = GeneratorConfig {
        occlusion,
        ..GeneratorConfig::default()
    };
    if let Some(f) = families {
        config.train_families = f;
    }
    if let Some(n) = objects_per_family {
        config.objects_per_family = n;
    }
    if let Some(n) = scenes_per_object {
        config.scenes_per_object = n;
    }
    let dataset = generate_dataset(&config, seed)?;
    write_dataset(&dataset, out)?;
    println!(
        "wrote {} objects and {} scenes to {}",
        dataset.objects.len(),
        dataset.scenes.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    data: &Path,
    config: Option<&Path>,
    decoder: Option<DecoderKind>,
    agg: Option<Aggregation>,
    k: Option<usize>,
    iters: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    quiet: bool,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::from_kv(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(d) = decoder {
        cfg.decoder = d;
    }
    if let Some(a) = agg {
        cfg.aggregation = a;
    }
    if let Some(k) = k {
        cfg.k_neighbors = k;
    }
    if let Some(n) = iters {
        cfg.iterations = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dataset = read_dataset(data)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let every = (cfg.iterations / 20).max(1);
    let outcome = train(&cfg, &dataset, |r| {
        if !quiet && (r.iteration % every == 0 || r.iteration == 1) {
            eprintln!(
                "iter {:>6}  loss {:.5}  seg {:.5}  offsets {:.5}",
                r.iteration, r.total, r.segmentation, r.offsets
            );
        }
    })?;
    save_checkpoint(&outcome.checkpoint, &out.join("checkpoint.json"))?;
    write_loss_trace(&outcome.trace, &out.join("loss.txt"))?;
    write_text(&out.join("config.txt"), &cfg.to_kv())?;
    println!("checkpoint written to {}", out.join("checkpoint.json").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_eval(
    checkpoint: &Path,
    data: &Path,
    split: SplitArg,
    occluded: bool,
    seg: SegMode,
    report: Option<&Path>,
    contexts: Option<usize>,
    train_objects: bool,
) -> Result<()> {
    let mut ckpt = load_checkpoint(checkpoint)?;
    if let Some(n) = contexts {
        if n != ckpt.config.eval_contexts {
            eprintln!(
                "warning: --contexts {n} overrides eval_contexts = {} from the checkpoint",
                ckpt.config.eval_contexts
            );
            ckpt.config.eval_contexts = n;
        }
    }
    let dataset = read_dataset(data)?;
    let splits = if train_objects {
        vec![Split::Train]
    } else {
        match split {
            SplitArg::Intra => vec![Split::Intra],
            SplitArg::Cross => vec![Split::Cross],
            SplitArg::All => vec![Split::Intra, Split::Cross],
        }
    };
    let options = EvalOptions {
        splits,
        occluded,
        seg_mode: seg,
        allow_train_objects: train_objects,
    };
    let result = evaluate(&ckpt, &dataset, &options)?;
    print!("{}", result.summary());
    if let Some(path) = report {
        result.write(path)?;
    }
    Ok(())
}

fn parse_correspondences(text: &str) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", n + 1)))?;
        if v.len() != 6 {
            return Err(Error::InvalidArgument(format!(
                "line {}: expected 6 numbers, got {}",
                n + 1,
                v.len()
            )));
        }
        src.push(Vec3::new(v[0], v[1], v[2]));
        dst.push(Vec3::new(v[3], v[4], v[5]));
    }
    Ok((src, dst))
}

fn fit_pose(input: &Path) -> Result<()> {
    let (src, dst) = parse_correspondences(&read_text(input)?)?;
    let fit = fit_rigid(&src, &dst)?;
    let r = fit.pose.rotation();
    println!("rotation:");
    for i in 0..3 {
        println!("  {:>22.15e} {:>22.15e} {:>22.15e}", r[(i, 0)], r[(i, 1)], r[(i, 2)]);
    }
    let t = fit.pose.translation();
    println!("translation: {:.15e} {:.15e} {:.15e}", t.x, t.y, t.z);
    println!("residual: {:.6e}", fit.residual);
    Ok(())
}

fn run_gradcheck(configs: usize) -> Result<bool> {
    let entries = gradcheck_suite(configs)?;
    let mut ok = true;
    for e in &entries {
        println!(
            "{:<18} config {:>3}  max rel error {:.3e}  {}",
            e.component,
            e.config,
            e.max_rel_error,
            if e.passed() { "ok" } else { "FAIL" }
        );
        ok &= e.passed();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            out,
            seed,
            families,
            objects_per_family,
            scenes_per_object,
            occlusion,
        } => gen_data(&out, seed, families, objects_per_family, scenes_per_object, occlusion).map(|_| true),
        Command::Train {
            data,
            config,
            decoder,
            agg,
            k,
            iters,
            seed,
            out,
            quiet,
        } => run_train(&data, config.as_deref(), decoder, agg, k, iters, seed, &out, quiet).map(|_| true),
        Command::Eval {
            checkpoint,
            data,
            split,
            occluded,
            seg,
            report,
            contexts,
            train_objects,
        } => run_eval(
            &checkpoint,
            &data,
            split,
            occluded,
            seg,
            report.as_deref(),
            contexts,
            train_objects,
        )
        .map(|_| true),
        Command::FitPose { input } => fit_pose(&input).map(|_| true),
        Command::Gradcheck { configs } => run_gradcheck(configs),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

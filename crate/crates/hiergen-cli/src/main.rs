//! Command-line front end: every pipeline stage plus the attention
//! benchmark and the gradient checker.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. All
//! randomness hangs off `--seed`, so reruns with identical flags produce
//! byte-identical artifacts. `HIERGEN_CACHE_DIR` sets the default output
//! directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hiergen::coglm::{InfillMode, Language};
use hiergen::config::{Geometry, ModelShape};
use hiergen::hierarchy::{
    build_lopar_schedule, direct_sr, iterative_sr, DirectSrRun, IterativeSrRun, KeepPattern,
    PlanKind,
};
use hiergen::local_attention::{benchmark, to_csv, BenchConfig};
use hiergen::model::{grad_check, Checkpoint, ModelParams, Stage};
use hiergen::pipeline::{generate, infill_edit, GenerateConfig, InfillRequest, ParamsBundle};
use hiergen::sampling::{SamplerConfig, TruncationMode};
use hiergen::tokenizer::vocab::CombinedVocab;
use hiergen::tokenizer::{image_patches, Codebook};
use hiergen::training::{
    finetune_sr, grammar_vocab, log_to_csv, pretrain_coglm, synthetic_dataset, TrainConfig,
};
use hiergen::Pixmap;

#[global_allocator]
static ALLOC: hiergen::memtrack::TrackingAlloc = hiergen::memtrack::TrackingAlloc;

#[derive(Parser)]
#[command(name = "hiergen", about = "Hierarchical token-based text-to-image generation")]
struct Cli {
    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LangArg {
    English,
    Chinese,
}

impl From<LangArg> for Language {
    fn from(l: LangArg) -> Language {
        match l {
            LangArg::English => Language::English,
            LangArg::Chinese => Language::Chinese,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    AllAtOnce,
    RegionByRegion,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Direct,
    Iterative,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Grid,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanArg {
    Compressed,
    Diagonal,
}

#[derive(Args)]
struct GeometryArgs {
    /// Low-resolution grid side in tokens.
    #[arg(long, default_value_t = 8)]
    low_side: usize,
    /// Super-resolution scale factor.
    #[arg(long, default_value_t = 3)]
    scale: usize,
    /// Text token budget per sequence.
    #[arg(long, default_value_t = 12)]
    text_budget: usize,
    /// Local attention window.
    #[arg(long, default_value_t = 9)]
    window: usize,
    /// Refinement window size sigma.
    #[arg(long, default_value_t = 6)]
    sigma: usize,
}

impl GeometryArgs {
    fn geometry(&self, cb: &Codebook) -> Geometry {
        Geometry {
            patch_size: cb.patch_size(),
            image_vocab: cb.vocab_size(),
            n_clusters: cb.n_clusters(),
            low_side: self.low_side,
            scale: self.scale,
            text_budget: self.text_budget,
            window: self.window,
            sigma: self.sigma,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the image patch codebook from synthetic renders (or a
    /// directory of images) and cluster it.
    TokenizeBuild {
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        /// Images sampled for codebook fitting.
        #[arg(long, default_value_t = 600)]
        sample_images: usize,
        #[arg(long, default_value_t = 512)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        clusters: usize,
        #[arg(long, default_value_t = 8)]
        patch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional directory of .ppm/.png images to fit on instead of
        /// synthetic renders.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        render_px: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the base model on synthetic pairs.
    Train {
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        #[arg(long, default_value_t = 900)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        codebook: PathBuf,
        /// Optional JSON training config; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (step, loss, lr, strategy counts).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Finetune a pretrained model into a super-resolution stage.
    FinetuneSr {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Generate images from text through the full hierarchy.
    Generate {
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 16)]
        candidates: usize,
        #[arg(long, default_value_t = 1)]
        keep: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 4)]
        cluster_k: usize,
        #[arg(long, default_value_t = 1.0)]
        upweight: f64,
        /// Skip caption-perplexity post-selection.
        #[arg(long)]
        no_post_select: bool,
        #[arg(long, value_enum, default_value_t = LangArg::English)]
        language: LangArg,
        #[arg(long)]
        coglm: PathBuf,
        #[arg(long)]
        direct_sr: PathBuf,
        #[arg(long)]
        iter_sr: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        /// Output directory (default: $HIERGEN_CACHE_DIR or ./hiergen-out).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also write PNG files next to the PPMs.
        #[arg(long)]
        png: bool,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Regenerate a rectangular token region of an image under text
    /// guidance.
    Infill {
        #[arg(long)]
        image: PathBuf,
        /// Token-cell rectangle: row0 col0 row1 col1, inclusive.
        #[arg(long, num_args = 4)]
        rect: Vec<usize>,
        #[arg(long)]
        text: String,
        #[arg(long, value_enum, default_value_t = ModeArg::AllAtOnce)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = LangArg::English)]
        language: LangArg,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 4)]
        cluster_k: usize,
        #[arg(long, default_value_t = 1.0)]
        upweight: f64,
        #[arg(long)]
        coglm: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Run the two super-resolution stages on an existing low-res image.
    Superres {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 4)]
        cluster_k: usize,
        #[arg(long)]
        direct_sr: PathBuf,
        #[arg(long)]
        iter_sr: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        png: bool,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Benchmark windowed vs dense masked attention.
    BenchAttn {
        /// Grid sides (repeatable).
        #[arg(long, num_args = 1.., default_values_t = vec![48])]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 9)]
        window: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check on a fresh desk-scale model.
    CheckGrad {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Print a refinement schedule as JSON.
    ScheduleDump {
        /// Grid shape: height width.
        #[arg(long, num_args = 2, default_values_t = vec![60, 60])]
        hw: Vec<usize>,
        #[arg(long, default_value_t = 6)]
        sigma: usize,
        #[arg(long, value_enum, default_value_t = PatternArg::Grid)]
        pattern: PatternArg,
        #[arg(long, value_enum, default_value_t = PlanArg::Compressed)]
        plan: PlanArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| {
        std::env::var_os("HIERGEN_CACHE_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("hiergen-out"))
    })
}

fn sampler(temperature: f64, cluster_k: usize, seed: u64) -> SamplerConfig {
    SamplerConfig { temperature, mode: TruncationMode::Cluster { k: cluster_k }, seed }
}

fn load_codebook(path: &Path) -> Result<Codebook> {
    Codebook::load(path).with_context(|| format!("loading codebook {}", path.display()))
}

fn load_checkpoint(path: &Path, stage: Stage) -> Result<Checkpoint> {
    let ck =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    ck.expect_stage(stage)
        .with_context(|| format!("checkpoint {} is the wrong stage", path.display()))?;
    Ok(ck)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().ok();
    }
    match cli.command {
        Command::TokenizeBuild {
            pairs,
            sample_images,
            k,
            clusters,
            patch,
            seed,
            images,
            render_px,
            out,
        } => {
            let mut patches = Vec::new();
            match images {
                Some(dir) => {
                    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| {
                            matches!(
                                p.extension().and_then(|e| e.to_str()),
                                Some("ppm") | Some("png")
                            )
                        })
                        .collect();
                    files.sort();
                    if files.is_empty() {
                        bail!("no .ppm/.png images under {}", dir.display());
                    }
                    for f in files {
                        let img = Pixmap::load(&f)?;
                        patches.extend(image_patches(&img, patch)?);
                    }
                }
                None => {
                    let dataset = synthetic_dataset(pairs, seed)?;
                    for p in dataset.train.iter().take(sample_images) {
                        patches.extend(image_patches(&p.render(render_px), patch)?);
                    }
                }
            }
            let cb = Codebook::build(&patches, patch, k, seed)?.cluster(clusters, seed)?;
            cb.save(&out)?;
            println!(
                "codebook: K={} patch={} clusters={} -> {}",
                cb.vocab_size(),
                cb.patch_size(),
                cb.n_clusters(),
                out.display()
            );
        }
        Command::Train { pairs, steps, batch, lr, seed, codebook, config, out, log, geometry } => {
            let cb = load_codebook(&codebook)?;
            let geometry = geometry.geometry(&cb);
            let mut cfg = match config {
                Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
                None => TrainConfig::default(),
            };
            cfg.steps = steps;
            cfg.batch_size = batch;
            cfg.adam.lr = lr;
            cfg.seed = seed;
            let dataset = synthetic_dataset(pairs, seed)?;
            let vocab = CombinedVocab::new(geometry.image_vocab, grammar_vocab());
            let shape = ModelShape::desk(vocab.total(), geometry.image_vocab, &geometry);
            let outcome = pretrain_coglm(&dataset, &cb, &vocab, &shape, &geometry, &cfg)?;
            outcome.checkpoint.save(&out)?;
            if let Some(log_path) = log {
                std::fs::write(&log_path, log_to_csv(&outcome.log))?;
            }
            let last = outcome.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!(
                "trained {} steps (loss {:.4}); strategies {}/{} -> {}",
                steps, last, outcome.strategy_counts.0, outcome.strategy_counts.1, out.display()
            );
        }
        Command::FinetuneSr {
            stage,
            base,
            codebook,
            pairs,
            steps,
            batch,
            lr,
            seed,
            out,
            log,
            geometry,
        } => {
            let cb = load_codebook(&codebook)?;
            let geometry = geometry.geometry(&cb);
            let pretrained = load_checkpoint(&base, Stage::CogLm)?;
            let dataset = synthetic_dataset(pairs, seed)?;
            let vocab = CombinedVocab::new(geometry.image_vocab, grammar_vocab());
            let cfg = TrainConfig {
                steps,
                batch_size: batch,
                adam: hiergen::training::AdamConfig { lr, ..Default::default() },
                seed,
            };
            let stage = match stage {
                StageArg::Direct => Stage::DirectSr,
                StageArg::Iterative => Stage::IterativeSr,
            };
            let outcome = finetune_sr(&pretrained, stage, &dataset, &cb, &vocab, &geometry, &cfg)?;
            outcome.checkpoint.save(&out)?;
            if let Some(log_path) = log {
                std::fs::write(&log_path, log_to_csv(&outcome.log))?;
            }
            println!(
                "finetuned {} for {} steps (loss {:.4}) -> {}",
                stage.name(),
                steps,
                outcome.log.last().map(|r| r.loss).unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Generate {
            text,
            candidates,
            keep,
            seed,
            temperature,
            cluster_k,
            upweight,
            no_post_select,
            language,
            coglm,
            direct_sr,
            iter_sr,
            codebook,
            out_dir: dir,
            png,
            geometry,
        } => {
            let cb = load_codebook(&codebook)?;
            let geometry = geometry.geometry(&cb);
            let bundle = ParamsBundle {
                coglm: load_checkpoint(&coglm, Stage::CogLm)?,
                direct: load_checkpoint(&direct_sr, Stage::DirectSr)?,
                iterative: load_checkpoint(&iter_sr, Stage::IterativeSr)?,
                codebook: cb,
                vocab: CombinedVocab::new(geometry.image_vocab, grammar_vocab()),
                geometry,
            };
            let cfg = GenerateConfig {
                n_candidates: candidates,
                keep,
                temperature,
                cluster_k,
                upweight,
                post_select: !no_post_select,
                language: language.into(),
                seed,
            };
            let mut output = generate(&text, &bundle, &cfg)?;
            let dir = out_dir(dir);
            std::fs::create_dir_all(&dir)?;
            for (rank, img) in output.images.iter().enumerate() {
                let name = format!("image_{rank:02}.ppm");
                img.save_ppm(dir.join(&name))?;
                output.manifest.outputs.push(name);
                if png {
                    let name = format!("image_{rank:02}.png");
                    img.save_png(dir.join(&name))?;
                    output.manifest.outputs.push(name);
                }
            }
            let manifest_json = serde_json::to_string_pretty(&output.manifest)?;
            std::fs::write(dir.join("manifest.json"), &manifest_json)?;
            println!(
                "wrote {} image(s) + manifest.json to {}",
                output.images.len(),
                dir.display()
            );
        }
        Command::Infill {
            image,
            rect,
            text,
            mode,
            language,
            seed,
            temperature,
            cluster_k,
            upweight,
            coglm,
            codebook,
            out,
            geometry,
        } => {
            let cb = load_codebook(&codebook)?;
            let geometry = geometry.geometry(&cb);
            let ck = load_checkpoint(&coglm, Stage::CogLm)?;
            let vocab = CombinedVocab::new(geometry.image_vocab, grammar_vocab());
            let img = Pixmap::load(&image)?;
            let req = InfillRequest {
                rect: (rect[0], rect[1], rect[2], rect[3]),
                mode: match mode {
                    ModeArg::AllAtOnce => InfillMode::AllAtOnce,
                    ModeArg::RegionByRegion => InfillMode::RegionByRegion,
                },
                sampler: sampler(temperature, cluster_k, seed),
                upweight,
            };
            let (edited, _) = infill_edit(
                &img,
                &text,
                language.into(),
                &ck,
                &cb,
                &vocab,
                geometry.text_budget,
                &req,
            )?;
            match out.extension().and_then(|e| e.to_str()) {
                Some("png") => edited.save_png(&out)?,
                _ => edited.save_ppm(&out)?,
            }
            println!("infilled rect {:?} -> {}", req.rect, out.display());
        }
        Command::Superres {
            image,
            seed,
            temperature,
            cluster_k,
            direct_sr: direct_path,
            iter_sr,
            codebook,
            out_dir: dir,
            png,
            geometry,
        } => {
            let cb = load_codebook(&codebook)?;
            let geometry = geometry.geometry(&cb);
            let vocab = CombinedVocab::new(geometry.image_vocab, grammar_vocab());
            let direct = load_checkpoint(&direct_path, Stage::DirectSr)?;
            let iterative = load_checkpoint(&iter_sr, Stage::IterativeSr)?;
            let img = Pixmap::load(&image)?;
            let low = hiergen::encode_image(&img, &cb)?;
            let run = DirectSrRun {
                vocab: &vocab,
                codebook: &cb,
                scale: geometry.scale,
                window: geometry.window,
                sampler: sampler(temperature, cluster_k, seed),
                seed,
            };
            let high = direct_sr(&low, &direct, &run)?;
            let schedule = build_lopar_schedule(
                high.height,
                high.width,
                geometry.sigma,
                KeepPattern::Grid,
                PlanKind::Compressed,
            )?;
            let irun = IterativeSrRun {
                vocab: &vocab,
                codebook: &cb,
                window: geometry.window,
                sampler: sampler(temperature, cluster_k, seed + 1),
                seed: seed + 1,
            };
            let (refined, stats) = iterative_sr(&high, &iterative, &schedule, &irun)?;
            let out_img = hiergen::decode_tokens(&refined, &cb)?;
            let dir = out_dir(dir);
            std::fs::create_dir_all(&dir)?;
            out_img.save_ppm(dir.join("superres.ppm"))?;
            if png {
                out_img.save_png(dir.join("superres.png"))?;
            }
            println!(
                "{}x{} -> {}x{} tokens in {} forwards -> {}",
                low.height,
                low.width,
                refined.height,
                refined.width,
                stats.forwards,
                dir.display()
            );
        }
        Command::BenchAttn { grid, window, dim, reps, seed, out } => {
            let cfg = BenchConfig {
                grid_sides: grid,
                window,
                dim,
                repetitions: reps,
                workers: cli
                    .workers
                    .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
                seed,
            };
            let rows = benchmark(&cfg)?;
            let csv = to_csv(&rows);
            match out {
                Some(path) => {
                    std::fs::write(&path, &csv)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
        }
        Command::CheckGrad { seed, coords, eps, tol } => {
            let geometry = Geometry::desk();
            let vocab = CombinedVocab::new(geometry.image_vocab, grammar_vocab());
            let shape = ModelShape::desk(vocab.total(), geometry.image_vocab, &geometry);
            let params = ModelParams::<f64>::init(&shape, seed);
            use hiergen::coglm::{layout_sequence, LayoutStrategy, MaskRegionSet};
            let ids: Vec<u32> = (0..16u64)
                .map(|i| ((i.wrapping_mul(31).wrapping_add(seed)) % geometry.image_vocab as u64) as u32)
                .collect();
            let grid = hiergen::TokenGrid { height: 4, width: 4, ids };
            let text = vocab.encode_text("red circle above blue square")?;
            let seq = layout_sequence(
                &text,
                &grid,
                LayoutStrategy::TextToImage,
                Language::English,
                &vocab,
                geometry.text_budget,
            )?;
            let (l, rr) = seq.image_span();
            let regions = MaskRegionSet::new(vec![(l - 1, rr)])?;
            let report = grad_check(&params, &seq, &regions, eps, coords, seed)?;
            println!(
                "max rel err {:.3e} over {} coordinates (worst {}[{}]: analytic {:.3e}, numeric {:.3e})",
                report.max_rel_err,
                report.coords_checked,
                report.worst_tensor,
                report.worst_index,
                report.worst_analytic,
                report.worst_numeric
            );
            if report.max_rel_err >= tol {
                bail!("gradient check exceeded tolerance {tol}");
            }
        }
        Command::ScheduleDump { hw, sigma, pattern, plan, seed, out } => {
            let schedule = build_lopar_schedule(
                hw[0],
                hw[1],
                sigma,
                match pattern {
                    PatternArg::Grid => KeepPattern::Grid,
                    PatternArg::Random => KeepPattern::SeededRandom { seed },
                },
                match plan {
                    PlanArg::Compressed => PlanKind::Compressed,
                    PlanArg::Diagonal => PlanKind::Diagonal,
                },
            )?;
            let json = schedule.to_json();
            match out {
                Some(path) => {
                    std::fs::write(&path, &json)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success; anything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;

use gsedit_core::deform::AnchorSet;
use gsedit_core::gradcheck;
use gsedit_core::loss::{psnr, ssim};
use gsedit_core::optimize::{run_edit, run_track, to_jsonl, FineMode, Target};
use gsedit_core::ply::{load_scene, save_scene};
use gsedit_core::regularize::{MaskFamily, RigidityGraph};
use gsedit_core::render::render_forward;
use gsedit_core::scene::logit;
use gsedit_core::toy::{gen_toy_scene, ToyKind, ToySpec};
use gsedit_core::{Camera, EditConfig, GaussianScene, Image, Mask};

#[derive(Parser, Debug)]
#[command(name = "gsedit", version, about = "Edit a Gaussian splat scene to match one edited image")]
struct Cli {
    /// Single-threaded, fixed reduction order (the engine always runs this way).
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Edit configuration JSON; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene from a camera to PNG.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a scene to an edited reference image.
    Edit(EditArgs),
    /// Fit a scene to each frame of a sequence with the coarse stage.
    Track(TrackArgs),
    /// Write a synthetic scene, reference and oracle.
    GenToy(GenToyArgs),
    /// Run the finite-difference gradient suites.
    GradCheck,
    /// PSNR and SSIM between two images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

#[derive(Args, Debug)]
struct EditArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Single-channel PNG; nonzero pixels are supervised.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, requires = "novel_reference")]
    novel_camera: Option<PathBuf>,
    #[arg(long, requires = "novel_camera")]
    novel_reference: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<FineMode>,
    #[arg(long)]
    coarse_iterations: Option<usize>,
    #[arg(long)]
    fine_iterations: Option<usize>,
    #[arg(long)]
    skip_fine: bool,
    /// Photometric loss only for matching (regularizers kept).
    #[arg(long)]
    no_positional: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Directory of frame PNGs, processed in file-name order.
    #[arg(long)]
    frames: PathBuf,
    /// Start every frame from the rest anchors.
    #[arg(long)]
    cold: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenToyArgs {
    #[arg(long)]
    kind: ToyKind,
    #[arg(long)]
    gaussians: Option<usize>,
    #[arg(long)]
    magnitude: Option<f64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<FineMode, String> {
    match s {
        "geometry" => Ok(FineMode::Geometry),
        "texture" => Ok(FineMode::Texture),
        "hybrid" => Ok(FineMode::Hybrid),
        _ => Err(format!("unknown mode {s:?}; expected geometry, texture or hybrid")),
    }
}

fn load_config(path: Option<&Path>) -> Result<EditConfig> {
    Ok(match path {
        Some(p) => EditConfig::load(p)?,
        None => EditConfig::default(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn blue_red(v: f64) -> Vector3<f64> {
    let v = v.clamp(0.0, 1.0);
    Vector3::new(1.0 - v, 0.15, v)
}

/// Gaussians colored by the skin-weighted mean ARAP mask of their anchors:
/// red where the anchor graph flexes, blue where it stays rigid.
fn mask_overlay(scene: &GaussianScene, anchors: &AnchorSet, graph: &RigidityGraph, cam: &Camera) -> Image {
    let node = graph.node_mask_means(MaskFamily::Arap);
    let mut painted = scene.clone();
    for ((g, nb), w) in painted.gaussians.iter_mut().zip(&anchors.neighbors).zip(&anchors.skin_weights) {
        let v: f64 = nb.iter().zip(w).map(|(j, w)| w * node[*j]).sum();
        g.color = blue_red(v).map(|c| logit(c.clamp(1e-4, 1.0 - 1e-4)));
    }
    render_forward(&painted, cam).image
}

fn cmd_render(scene: &Path, camera: &Path, out: &Path) -> Result<()> {
    let scene = load_scene(scene)?;
    let cam = Camera::load(camera)?;
    render_forward(&scene, &cam).image.save_png(out)?;
    Ok(())
}

#[derive(Serialize)]
struct RunInfo {
    seed: u64,
    deterministic: bool,
}

fn cmd_edit(cli: &Cli, a: &EditArgs) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(m) = a.mode {
        cfg.fine.mode = m;
    }
    if let Some(n) = a.coarse_iterations {
        cfg.coarse.iterations = n;
    }
    if let Some(n) = a.fine_iterations {
        cfg.fine.iterations = n;
    }
    cfg.skip_fine |= a.skip_fine;
    if a.no_positional {
        cfg = cfg.without_positional();
    }
    let scene = load_scene(&a.scene)?;
    let cam = Camera::load(&a.camera)?;
    let reference = Image::load_png(&a.reference)?;
    let mask = a.mask.as_ref().map(Mask::load_png).transpose()?;
    let novel = match (&a.novel_camera, &a.novel_reference) {
        (Some(c), Some(r)) => vec![(Camera::load(c)?, Image::load_png(r)?)],
        _ => Vec::new(),
    };
    let target = Target::new(&reference, &cam).with_mask(mask.as_ref());
    let out = run_edit(&scene, target, &cfg, &novel)?;

    let dir = &a.out;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_scene(&out.scene, dir.join("scene.ply"))?;
    save_scene(&out.coarse_scene, dir.join("coarse_scene.ply"))?;
    out.anchors.save(&dir.join("anchors.json"))?;
    std::fs::write(dir.join("log.jsonl"), to_jsonl(&out.log)).context("writing log.jsonl")?;
    write_json(&dir.join("report.json"), &out.report)?;
    write_json(
        &dir.join("run.json"),
        &RunInfo {
            seed: cli.seed,
            deterministic: cli.deterministic,
        },
    )?;
    cfg.save(&dir.join("config.json"))?;
    out.coarse_graph.write_edge_csv(&dir.join("edges_coarse.csv"))?;
    if let Some(g) = &out.fine_graph {
        g.write_edge_csv(&dir.join("edges_fine.csv"))?;
    }
    render_forward(&out.scene, &cam).image.save_png(dir.join("render.png"))?;
    mask_overlay(&out.coarse_scene, &out.anchors, &out.coarse_graph, &cam).save_png(dir.join("mask_overlay.png"))?;
    let r = &out.report;
    println!(
        "reference psnr {:.2} dB (initial {:.2}, coarse {:.2}), {} coarse + {} fine iterations",
        r.reference.psnr, r.initial.psnr, r.coarse.psnr, r.coarse_iterations, r.fine_iterations
    );
    for (k, v) in r.novel.iter().enumerate() {
        println!("novel view {k}: psnr {:.2} dB ssim {:.4}", v.psnr, v.ssim);
    }
    Ok(())
}

#[derive(Serialize)]
struct TrackReportFrame {
    frame: String,
    iterations: usize,
    reached_target: Option<usize>,
    psnr: f64,
}

fn cmd_track(cli: &Cli, a: &TrackArgs) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let scene = load_scene(&a.scene)?;
    let cam = Camera::load(&a.camera)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&a.frames)
        .with_context(|| format!("reading {}", a.frames.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no PNG frames in {}", a.frames.display());
    }
    let frames = paths.iter().map(Image::load_png).collect::<gsedit_core::Result<Vec<_>>>()?;
    let results = run_track(&scene, &frames, &cam, &cfg, !a.cold)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut log = Vec::new();
    let mut report = Vec::new();
    for (k, (f, p)) in results.iter().zip(&paths).enumerate() {
        f.anchors.save(&a.out.join(format!("anchors_{k:03}.json")))?;
        save_scene(&f.scene, a.out.join(format!("scene_{k:03}.ply")))?;
        log.push(to_jsonl(&f.log));
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        println!("{name}: {} iterations, psnr {:.2} dB", f.iterations, f.psnr);
        report.push(TrackReportFrame {
            frame: name,
            iterations: f.iterations,
            reached_target: f.reached_target,
            psnr: f.psnr,
        });
    }
    std::fs::write(a.out.join("log.jsonl"), log.concat()).context("writing log.jsonl")?;
    write_json(&a.out.join("report.json"), &report)?;
    Ok(())
}

fn cmd_gen_toy(cli: &Cli, a: &GenToyArgs) -> Result<()> {
    let mut spec = ToySpec::new(a.kind);
    spec.seed = cli.seed;
    spec.frames = a.frames;
    if let Some(n) = a.gaussians {
        spec.gaussians = n;
    }
    if let Some(m) = a.magnitude {
        spec.magnitude = m;
    }
    if let Some(s) = a.size {
        spec.width = s;
        spec.height = s;
    }
    let toy = gen_toy_scene(&spec)?;
    toy.write(&a.out)?;
    println!("wrote {} toy with {} gaussians to {}", a.kind.name(), toy.scene.len(), a.out.display());
    Ok(())
}

fn cmd_grad_check(cli: &Cli) -> Result<bool> {
    let reports = gradcheck::run_all(cli.seed)?;
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<20} {} checked {:>5} skipped {:>3} max rel err {:.3e} (tol {:.0e})",
            r.name,
            if r.passed() { "PASS" } else { "FAIL" },
            r.checked,
            r.skipped,
            r.max_rel_err,
            r.tolerance
        );
        ok &= r.passed();
    }
    Ok(ok)
}

fn cmd_metrics(a: &Path, b: &Path) -> Result<()> {
    let ia = Image::load_png(a)?;
    let ib = Image::load_png(b)?;
    println!("psnr {:.4} dB", psnr(&ia, &ib)?);
    println!("ssim {:.6}", ssim(&ia, &ib)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Render { scene, camera, out } => cmd_render(scene, camera, out)?,
        Command::Edit(a) => cmd_edit(cli, a)?,
        Command::Track(a) => cmd_track(cli, a)?,
        Command::GenToy(a) => cmd_gen_toy(cli, a)?,
        Command::GradCheck => return cmd_grad_check(cli),
        Command::Metrics { a, b } => cmd_metrics(a, b)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

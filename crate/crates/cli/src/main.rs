use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use meshfield::editor::{
    arap_deform, deform_geometry, fill_texture, paint_texture, swap_texture, FillTemplate, PaintJob, SwapOptions,
};
use meshfield::io::{
    parse_camera, parse_correspondences, parse_selection, read_checkpoint, read_image, read_mesh, write_checkpoint,
    write_image, write_mesh, RunConfig, FORMAT_VERSION,
};
use meshfield::render::{fibonacci_cameras, render_image, train_test_split, Camera, RenderConfig};
use meshfield::scaffold::TriMesh;
use meshfield::trainer::{sdf_mae, write_loss_csv, Trainer};
use meshfield::{psnr, Error, Result, Scene, Scene32, Vec3};

#[derive(Parser)]
#[command(name = "meshfield", version, about = "Mesh-anchored neural implicit fields: train, render and edit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a scaffold mesh from the teacher with marching cubes.
    ExtractScaffold {
        #[arg(long)]
        config: PathBuf,
        /// Output mesh (.obj or .ply).
        #[arg(long)]
        out: PathBuf,
    },
    /// Distil a field from the configured teacher.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Use this scaffold instead of extracting one.
        #[arg(long)]
        scaffold: Option<PathBuf>,
        /// Output directory; defaults to the config's `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a checkpoint from one camera.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        /// Output image (.png or .ppm).
        #[arg(long)]
        out: PathBuf,
        /// Also write the accumulated opacity.
        #[arg(long)]
        opacity: Option<PathBuf>,
    },
    /// PSNR of a checkpoint against the teacher over the held-out views.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the student renders here.
        #[arg(long)]
        renders: Option<PathBuf>,
        /// Number of SDF probe points near the surface (0 skips the check).
        #[arg(long, default_value_t = 10_000)]
        sdf_points: usize,
    },
    /// Move the scaffold vertices and carry the field along.
    EditGeometry {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Deformed copy of the scaffold with the same vertex order.
        #[arg(long, conflicts_with = "handles", required_unless_present = "handles")]
        mesh: Option<PathBuf>,
        /// Handle file, one `id x y z` per line; the rest follows by ARAP.
        #[arg(long)]
        handles: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer the texture of a region of one checkpoint onto another.
    EditSwap {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        source_selection: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        target_selection: PathBuf,
        /// Point pairs, one `sx sy sz tx ty tz` per line.
        #[arg(long)]
        correspondences: PathBuf,
        #[arg(long, default_value_t = 10)]
        arap_iterations: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tile a template texture over a UV-parameterised target region.
    EditFill {
        #[arg(long)]
        target: PathBuf,
        /// Target selection with `id u v` lines.
        #[arg(long)]
        target_selection: PathBuf,
        #[arg(long)]
        template: PathBuf,
        /// Template selection with `id u v` lines.
        #[arg(long)]
        template_selection: PathBuf,
        #[arg(long)]
        tile_size: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit texture codes to a painted image seen from one camera.
    EditPaint {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        /// Painted image, same size as the camera.
        #[arg(long)]
        image: PathBuf,
        /// Mask image; pixels brighter than one half are painted.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 8000)]
        iterations: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.5)]
        augment: f64,
        #[arg(long, default_value_t = 5)]
        dilation: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a checkpoint summary.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// A camera given either as a file or as a view index into the configured rig.
#[derive(Args)]
struct ViewArgs {
    /// Camera file with `eye`, `target`, `up`, `width`, `height`, `focal`.
    #[arg(long, conflicts_with = "view")]
    camera: Option<PathBuf>,
    /// Index into the configured camera rig (needs `--config`).
    #[arg(long, requires = "config")]
    view: Option<usize>,
    /// Run config supplying render settings and the camera rig.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ViewArgs {
    fn resolve(&self) -> Result<(Camera<f32>, RenderConfig)> {
        let cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        let camera = match (&self.camera, self.view) {
            (Some(p), _) => parse_camera(&read_text(p)?)?.cast(),
            (None, Some(i)) => {
                let t = &cfg.train;
                let rig = fibonacci_cameras::<f32>(t.n_cameras, t.camera_radius, t.image_size, t.image_size, t.focal)?;
                rig.get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("view {i} out of range (rig has {})", rig.len())))?
            }
            (None, None) => return Err(Error::InvalidArgument("give --camera or --view".into())),
        };
        Ok((camera, cfg.train.render))
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load(path: &Path) -> Result<Scene32> {
    read_checkpoint(path)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("selection").to_string()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ExtractScaffold { config, out } => {
            let cfg = RunConfig::read(&config)?;
            let b = cfg.scaffold_bounds;
            let mesh = cfg.teacher.marching_cubes(cfg.scaffold_resolution, -b, b)?;
            write_mesh(&out, &mesh)?;
            println!("vertices {} faces {}", mesh.vertex_count(), mesh.faces.len());
        }
        Command::Train { config, scaffold, out } => {
            let cfg = RunConfig::read(&config)?;
            let out = out.unwrap_or(cfg.output.clone());
            create_dir(&out)?;
            let mesh = match scaffold {
                Some(p) => read_mesh(&p)?,
                None => {
                    let b = cfg.scaffold_bounds;
                    cfg.teacher.marching_cubes(cfg.scaffold_resolution, -b, b)?
                }
            };
            info!("scaffold: {} vertices, {} faces", mesh.vertex_count(), mesh.faces.len());
            let scene = Scene::<f32>::new(mesh.cast(), &cfg.model, cfg.train.seed)?;
            let ckpt = out.join("model.ckpt");
            let total = cfg.train.steps;
            let mut trainer = Trainer::new(scene, &cfg.teacher, cfg.train.clone())?;
            let report = (total / 20).max(1);
            while trainer.step_count() < total {
                let r = trainer.step()?;
                let done = trainer.step_count();
                if done % report == 0 || done == total {
                    info!("step {done}/{total} L_d {:.4} L_f {:.4} total {:.4} lr {:.2e}", r.distill, r.photometric, r.total, r.lr);
                }
                let every = cfg.train.checkpoint_every;
                if every > 0 && done % every == 0 && done < total {
                    write_checkpoint(&out.join(format!("step{done:06}.ckpt")), &trainer.scene)?;
                }
            }
            write_checkpoint(&ckpt, &trainer.scene)?;
            write_loss_csv(&out.join("loss.csv"), &trainer.history)?;
            println!("checkpoint {}", ckpt.display());
        }
        Command::Render { checkpoint, view, out, opacity } => {
            let scene = load(&checkpoint)?;
            let (camera, render) = view.resolve()?;
            let img = render_image(&scene, &camera, &render)?;
            write_image(&out, &img.image)?;
            if let Some(p) = opacity {
                write_image(&p, &img.opacity)?;
            }
        }
        Command::Eval { config, checkpoint, renders, sdf_points } => {
            let cfg = RunConfig::read(&config)?;
            let scene = load(&checkpoint)?;
            let t = &cfg.train;
            let rig = fibonacci_cameras::<f32>(t.n_cameras, t.camera_radius, t.image_size, t.image_size, t.focal)?;
            let (_, test) = train_test_split(t.n_cameras, t.n_test, t.seed);
            if let Some(dir) = &renders {
                create_dir(dir)?;
            }
            let mut total = 0.0;
            for &i in &test {
                let student = render_image(&scene, &rig[i], &t.render)?.image;
                let teacher = cfg.teacher.render(&rig[i].cast(), t.render.background, 1);
                let p = psnr(&student, &teacher)?;
                total += p;
                println!("view {i} psnr {p:.3}");
                if let Some(dir) = &renders {
                    write_image(&dir.join(format!("view{i:03}.png")), &student)?;
                }
            }
            println!("mean_psnr {:.3}", total / test.len().max(1) as f64);
            if sdf_points > 0 {
                println!("sdf_mae {:.5}", sdf_mae(&scene, &cfg.teacher, sdf_points, 0.1, t.seed)?);
            }
        }
        Command::EditGeometry { checkpoint, mesh, handles, iterations, out } => {
            let scene = load(&checkpoint)?;
            let vertices: Vec<Vec3<f64>> = if let Some(p) = mesh {
                read_mesh(&p)?.vertices
            } else {
                let p = handles.expect("clap requires --mesh or --handles");
                let constraints = parse_handles(&read_text(&p)?)?;
                let base: TriMesh<f64> = scene.scaffold.mesh.cast();
                let res = arap_deform(&base, &constraints, iterations)?;
                info!("ARAP energy {:?}", res.energies.last());
                res.vertices
            };
            let edited = deform_geometry(&scene, vertices.iter().map(|v| v.cast()).collect())?;
            write_checkpoint(&out, &edited)?;
        }
        Command::EditSwap {
            source,
            source_selection,
            target,
            target_selection,
            correspondences,
            arap_iterations,
            k,
            out,
        } => {
            let src = load(&source)?;
            let dst = load(&target)?;
            let src_sel = parse_selection(&stem(&source_selection), &read_text(&source_selection)?)?;
            let dst_sel = parse_selection(&stem(&target_selection), &read_text(&target_selection)?)?;
            let corr = parse_correspondences(&read_text(&correspondences)?)?;
            let opts = SwapOptions { arap_iterations, k, ..SwapOptions::default() };
            let res = swap_texture(&src, &dst, &src_sel, &dst_sel, &corr, &opts)?;
            if !res.orphans.is_empty() {
                println!("orphans {}", res.orphans.len());
            }
            write_checkpoint(&out, &res.scene)?;
        }
        Command::EditFill { target, target_selection, template, template_selection, tile_size, out } => {
            let dst = load(&target)?;
            let tpl = load(&template)?;
            let dst_sel = parse_selection(&stem(&target_selection), &read_text(&target_selection)?)?;
            let tpl_sel = parse_selection(&stem(&template_selection), &read_text(&template_selection)?)?;
            let uvs = tpl_sel
                .uvs
                .clone()
                .ok_or_else(|| Error::Edit("template selection needs `id u v` lines".into()))?;
            let tpl_ref = FillTemplate { scene: &tpl, ids: tpl_sel.ids.clone(), uvs };
            let filled = fill_texture(&dst, &dst_sel, &tpl_ref, tile_size)?;
            write_checkpoint(&out, &filled)?;
        }
        Command::EditPaint { checkpoint, view, image, mask, iterations, lr, augment, dilation, seed, out } => {
            let scene = load(&checkpoint)?;
            let (camera, render) = view.resolve()?;
            let painted = read_image(&image)?;
            let m = read_image(&mask)?;
            if (m.width, m.height) != (camera.width, camera.height) {
                return Err(Error::Edit(format!(
                    "mask is {}x{}, camera is {}x{}",
                    m.width, m.height, camera.width, camera.height
                )));
            }
            let mask: Vec<bool> = (0..m.width * m.height)
                .map(|p| {
                    let px = &m.data[p * m.channels..(p + 1) * m.channels];
                    px.iter().sum::<f32>() / m.channels as f32 > 0.5
                })
                .collect();
            let mut job = PaintJob::new(camera, painted, mask);
            job.iterations = iterations;
            job.lr = lr;
            job.augment_prob = augment;
            job.dilation = dilation;
            job.seed = seed;
            job.render = render;
            let res = paint_texture(&scene, &job)?;
            println!("affected {} final_loss {:.6}", res.affected.len(), res.losses.last().copied().unwrap_or(0.0));
            write_checkpoint(&out, &res.scene)?;
        }
        Command::Inspect { checkpoint } => {
            let s = load(&checkpoint)?;
            let e = &s.encoding;
            println!("format_version {FORMAT_VERSION}");
            println!("vertices {}", s.scaffold.vertex_count());
            println!("faces {}", s.scaffold.mesh.faces.len());
            println!("code_dim {}", s.scaffold.code_dim());
            println!("k {}", e.k);
            println!("frequencies h={} code={} dir={}", e.freq_h, e.freq_code, e.freq_dir);
            println!("geometry_layers {:?}", s.geometry.sizes());
            println!("radiance_decoders {}", s.radiance.len());
            println!("sharpness {:.4}", s.s_inv());
            println!("step {}", s.step);
            println!("seed {}", s.seed);
        }
    }
    Ok(())
}

/// `id x y z` per line, `#` comments allowed.
fn parse_handles(text: &str) -> Result<Vec<(u32, Vec3<f64>)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse { what: "handles".into(), msg: format!("line {}: {msg}", no + 1) };
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 {
            return Err(bad("expected `id x y z`"));
        }
        let id: u32 = t[0].parse().map_err(|_| bad("bad vertex id"))?;
        let c: Vec<f64> = t[1..].iter().map(|s| s.parse().map_err(|_| bad("bad coordinate"))).collect::<Result<_>>()?;
        out.push((id, Vec3::new(c[0], c[1], c[2])));
    }
    Ok(out)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}

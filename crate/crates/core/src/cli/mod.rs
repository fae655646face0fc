//! Command-line front end, run configuration and checkpoint files.

mod checkpoint;
mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{RunConfig, TemplateChoice};

use crate::avatar::{
    fit_codebook, init_avatar, paint_texture, read_vertex_set, repose, transfer_region, Avatar, AvatarSource,
    FitConfig, PaintInput,
};
use crate::codebook::{pca_fit, KindMask};
use crate::error::{Error, Result};
use crate::geometry::io::{load_mesh, save_mesh};
use crate::geometry::{Camera, PoseParams, TemplateMesh};
use crate::mesher::{extract_mesh, render_turntable};
use crate::training::{synth_scan_with, LossRecord, Scan, TrainState, Trainer, DEFAULT_AMPLITUDE};

#[derive(Debug, Parser)]
#[command(name = "cbav", version, about = "Editable avatars from mesh-anchored feature codebooks")]
pub struct Cli {
    /// Template the scans are registered to.
    #[arg(long, global = true, value_enum, default_value = "humanoid")]
    pub template: TemplateChoice,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic registered scans (PLY plus pose sidecar).
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Surface displacement as a fraction of the bbox diagonal.
        #[arg(long, default_value_t = DEFAULT_AMPLITUDE)]
        amplitude: f64,
    },
    /// Train dictionaries and decoders on a scan directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss trace; defaults to the checkpoint path with `.csv` appended.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// New avatar from a dictionary row or a PCA sample.
    Sample {
        #[command(flatten)]
        ckpt: CkptArg,
        #[arg(long, conflicts_with = "seed")]
        index: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert a registered scan with the decoders frozen.
    Fit {
        #[command(flatten)]
        ckpt: CkptArg,
        /// Scan mesh; its pose is read from the `.pose.json` sidecar.
        #[arg(long)]
        scan: PathBuf,
        #[arg(long, default_value_t = 100)]
        geometry_iters: usize,
        #[arg(long, default_value_t = 300)]
        texture_iters: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy feature rows of a vertex set from one avatar into another.
    Swap {
        #[command(flatten)]
        ckpt: CkptArg,
        #[arg(long)]
        dst: PathBuf,
        #[arg(long)]
        src: PathBuf,
        /// Newline-delimited vertex indices.
        #[arg(long)]
        vertices: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        kinds: Kinds,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit texture features to an edited image.
    Paint {
        #[command(flatten)]
        ckpt: CkptArg,
        #[arg(long)]
        avatar: PathBuf,
        /// Edited RGB image.
        #[arg(long)]
        image: PathBuf,
        /// Edit mask; pixels brighter than half are painted.
        #[arg(long)]
        mask: PathBuf,
        /// Camera JSON, as written by `render`.
        #[arg(long)]
        camera: PathBuf,
        /// Mesh the image was drawn over; extracted from the avatar if absent.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace an avatar's pose.
    Repose {
        #[command(flatten)]
        ckpt: CkptArg,
        #[arg(long)]
        avatar: PathBuf,
        /// Pose JSON (joint_rotations, shape_coeffs, root_translation).
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Marching-cubes mesh of an avatar with vertex colors (.ply or .obj).
    Extract {
        #[command(flatten)]
        ckpt: CkptArg,
        #[arg(long)]
        avatar: PathBuf,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Color and normal turntable PNGs plus camera files.
    Render {
        #[command(flatten)]
        ckpt: CkptArg,
        #[arg(long)]
        avatar: PathBuf,
        #[arg(long, default_value_t = 4)]
        views: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CkptArg {
    /// Training checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kinds {
    Geometry,
    Texture,
    Both,
}

impl From<Kinds> for KindMask {
    fn from(k: Kinds) -> Self {
        match k {
            Kinds::Geometry => KindMask::GEOMETRY,
            Kinds::Texture => KindMask::TEXTURE,
            Kinds::Both => KindMask::BOTH,
        }
    }
}

/// Registration sidecar stored next to each scan mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSidecar {
    pub subject_id: usize,
    pub pose: PoseParams,
}

pub fn sidecar_path(mesh: &Path) -> PathBuf {
    mesh.with_extension("pose.json")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
    serde_json::from_str(&text).map_err(|e| Error::format(what, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(Error::at_path(path))
}

pub fn save_scan(scan: &Scan, path: &Path) -> Result<()> {
    save_mesh(&scan.mesh, path)?;
    write_json(&sidecar_path(path), &ScanSidecar { subject_id: scan.subject_id, pose: scan.pose.clone() })
}

pub fn load_scan(path: &Path) -> Result<Scan> {
    let mesh = load_mesh(path)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::format("scan", format!("{} has no pose sidecar {}", path.display(), side.display())));
    }
    let s: ScanSidecar = read_json(&side, "pose sidecar")?;
    Ok(Scan { mesh, pose: s.pose, subject_id: s.subject_id })
}

/// All `*.ply` scans in `dir`, sorted by file name.
pub fn load_scan_dir(dir: &Path) -> Result<Vec<Scan>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::at_path(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format("scan directory", format!("{} holds no .ply scans", dir.display())));
    }
    paths.iter().map(|p| load_scan(p)).collect()
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let file = File::create(path).map_err(Error::at_path(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", LossRecord::CSV_HEADER)?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush().map_err(Error::at_path(path))
}

fn load_rgb_png(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect()))
}

/// Checkpoint plus its template, checked against each other.
struct Loaded {
    template: TemplateMesh,
    ckpt: Checkpoint,
}

impl Loaded {
    fn open(arg: &CkptArg, template: TemplateChoice) -> Result<Self> {
        let template = template.build();
        let ckpt = Checkpoint::load_for(&arg.ckpt, &template)?;
        Ok(Self { template, ckpt })
    }

    fn avatar(&self, path: &Path) -> Result<Avatar> {
        let a = Avatar::load(path)?;
        a.check_template(&self.template)?;
        a.check_decoders(&self.ckpt.state.decoders)?;
        Ok(a)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::at_path(dir))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { count, seed, out, amplitude } => {
            let t = cli.template.build();
            ensure_dir(&out)?;
            for i in 0..count {
                let mut scan = synth_scan_with(&t, seed.wrapping_add(i as u64), amplitude)?;
                scan.subject_id = i;
                save_scan(&scan, &out.join(format!("scan_{i:04}.ply")))?;
            }
            log::info!("wrote {count} scans to {}", out.display());
            Ok(())
        }
        Command::Train { config, scans, out, resume, loss_csv } => {
            let rc = RunConfig::load(&config)?;
            if rc.template != cli.template {
                log::info!("using template {:?} from {}", rc.template, config.display());
            }
            let t = rc.template.build();
            let scans = load_scan_dir(&scans)?;
            let state = match &resume {
                Some(p) => {
                    let c = Checkpoint::load_for(p, &t)?;
                    if c.subject_count() != scans.len() {
                        return Err(Error::format(
                            "resume",
                            format!("checkpoint has {} subjects, scan directory {}", c.subject_count(), scans.len()),
                        ));
                    }
                    c.state
                }
                None => TrainState::new(&t, scans.len(), &rc.train)?,
            };
            let mut trainer = Trainer::resume(&t, &scans, &rc.train, state)?;
            let cfg = rc.train.clone();
            let initial = trainer.trace.len();
            trainer.run(|tr| Checkpoint::new(&t, &cfg, tr.state.clone())?.save(&out))?;
            let csv = loss_csv.unwrap_or_else(|| PathBuf::from(format!("{}.csv", out.display())));
            write_loss_csv(&csv, &trainer.trace[initial..])?;
            if let (Some(first), Some(last)) = (trainer.trace.first(), trainer.trace.last()) {
                log::info!("l_sdf {:.5} -> {:.5} over {} iterations", first.l_sdf, last.l_sdf, trainer.trace.len());
            }
            Ok(())
        }
        Command::Sample { ckpt, index, seed, temperature, out } => {
            let l = Loaded::open(&ckpt, cli.template)?;
            let cfg = l.ckpt.config()?;
            let st = &l.ckpt.state;
            let avatar = match (index, seed) {
                (Some(i), _) => init_avatar(&l.template, &st.shape, &st.color, &st.decoders, AvatarSource::Index(i))?,
                (None, seed) => {
                    let n = st.shape.subject_count();
                    if n < 2 {
                        return Err(Error::InvalidArgument("PCA sampling needs at least two training subjects".into()));
                    }
                    let g = pca_fit(&st.shape, cfg.pca_dim_geometry.min(n - 1))?;
                    let c = pca_fit(&st.color, cfg.pca_dim_texture.min(n - 1))?;
                    let src = AvatarSource::Pca { geometry: &g, texture: &c, seed: seed.unwrap_or(0), temperature };
                    init_avatar(&l.template, &st.shape, &st.color, &st.decoders, src)?
                }
            };
            avatar.save(&out)
        }
        Command::Fit { ckpt, scan, geometry_iters, texture_iters, lr, seed, out } => {
            let l = Loaded::open(&ckpt, cli.template)?;
            let cfg = l.ckpt.config()?;
            let scan = load_scan(&scan)?;
            let st = &l.ckpt.state;
            let fc = FitConfig { geometry_iterations: geometry_iters, texture_iterations: texture_iters, lr, seed };
            let (avatar, trace) = fit_codebook(&l.template, &scan, &st.decoders, &st.shape, &st.color, &cfg, &fc)?;
            if let (Some(a), Some(b)) = (trace.first(), trace.last()) {
                log::info!("fit l_sdf {:.5} -> {:.5}, l_rgb {:.5} -> {:.5}", a.l_sdf, b.l_sdf, a.l_rgb, b.l_rgb);
            }
            avatar.save(&out)
        }
        Command::Swap { ckpt, dst, src, vertices, kinds, out } => {
            let l = Loaded::open(&ckpt, cli.template)?;
            let d = l.avatar(&dst)?;
            let s = l.avatar(&src)?;
            let set = read_vertex_set(&vertices, l.template.vertex_count())?;
            transfer_region(&d, &s, &set, kinds.into())?.save(&out)
        }
        Command::Paint { ckpt, avatar, image, mask, camera, mesh, iters, lr, seed, out } => {
            let l = Loaded::open(&ckpt, cli.template)?;
            let cfg = l.ckpt.config()?;
            let av = l.avatar(&avatar)?;
            let camera: Camera = read_json(&camera, "camera")?;
            let (w, h, pixels) = load_rgb_png(&image)?;
            let (mw, mh, m) = load_rgb_png(&mask)?;
            if (w, h) != (camera.width, camera.height) || (mw, mh) != (w, h) {
                return Err(Error::Dimension(format!(
                    "image {w}x{h}, mask {mw}x{mh} and camera {}x{} must agree",
                    camera.width, camera.height
                )));
            }
            let mask: Vec<bool> = m.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0 > 0.5).collect();
            let target = match mesh {
                Some(p) => load_mesh(&p)?,
                None => extract_mesh(&av, &av.posed(&l.template)?, &l.ckpt.state.decoders, 64)?,
            };
            let paint = PaintInput { image: pixels, mask, camera, mesh: target };
            paint_texture(&l.template, &av, &paint, &l.ckpt.state.decoders, &cfg, iters, lr, seed)?.save(&out)
        }
        Command::Repose { ckpt, avatar, pose, out } => {
            let l = Loaded::open(&ckpt, cli.template)?;
            let av = l.avatar(&avatar)?;
            let pose: PoseParams = read_json(&pose, "pose")?;
            repose(&l.template, &av, pose)?.save(&out)
        }
        Command::Extract { ckpt, avatar, res, out } => {
            let l = Loaded::open(&ckpt, cli.template)?;
            let av = l.avatar(&avatar)?;
            let mesh = extract_mesh(&av, &av.posed(&l.template)?, &l.ckpt.state.decoders, res)?;
            if !mesh.is_watertight() {
                log::warn!("extracted mesh is not watertight");
            }
            save_mesh(&mesh, &out)?;
            log::info!("{} vertices, {} faces -> {}", mesh.vertices.len(), mesh.faces.len(), out.display());
            Ok(())
        }
        Command::Render { ckpt, avatar, views, size, steps, out } => {
            let l = Loaded::open(&ckpt, cli.template)?;
            let av = l.avatar(&avatar)?;
            let posed = av.posed(&l.template)?;
            let tt = render_turntable(&av, &posed, &l.ckpt.state.decoders, views, size, steps)?;
            let paths = tt.save(&out, "view")?;
            for (k, cam) in tt.cameras.iter().enumerate() {
                write_json(&out.join(format!("view_camera_{k:02}.json")), cam)?;
            }
            log::info!("wrote {} images to {}", paths.len(), out.display());
            Ok(())
        }
    }
}

/// Cap the worker pool from `CBAV_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CBAV_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("CBAV_THREADS={v:?} is not a count")))?;
        if n == 0 {
            return Err(Error::Config("CBAV_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::template::icosphere;

    #[test]
    fn scan_files_round_trip() {
        let t = icosphere(2, 0.5);
        let mut s = synth_scan_with(&t, 3, 0.01).unwrap();
        s.subject_id = 4;
        s.pose.root_translation = [0.1, 0.0, 0.0];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        save_scan(&s, &p).unwrap();
        let back = load_scan(&p).unwrap();
        assert_eq!(back.pose, s.pose);
        assert_eq!(back.subject_id, 4);
        assert_eq!(back.mesh.vertices, s.mesh.vertices);
        std::fs::remove_file(sidecar_path(&p)).unwrap();
        assert!(load_scan(&p).is_err());
    }

    #[test]
    fn cli_parses() {
        let c = Cli::try_parse_from(["cbav", "synth", "--count", "2", "--out", "d"]).unwrap();
        assert!(matches!(c.command, Command::Synth { count: 2, seed: 0, .. }));
        assert!(Cli::try_parse_from(["cbav", "sample", "--ckpt", "c", "--index", "1", "--seed", "2", "--out", "a"])
            .is_err());
        let c = Cli::try_parse_from([
            "cbav",
            "--template",
            "sphere",
            "extract",
            "--ckpt",
            "c",
            "--avatar",
            "a",
            "--out",
            "m.ply",
        ])
        .unwrap();
        assert_eq!(c.template, TemplateChoice::Sphere);
    }
}

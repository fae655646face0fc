use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{loss_3d, loss_reg, Adam, Loss3d, LossWeights, Predictions, SamplePoint, Scan, ScanSampler, TrainConfig};
use crate::adversarial::{self, AdvState};
use crate::codebook::{codebook_from_dictionaries, init_dictionary, Codebook, Dictionary, FeatureKind};
use crate::error::{Error, Result};
use crate::field::{axis_offsets, DecoderGrads, Decoders, FieldBatch};
use crate::geometry::{skin, MeshAccel, TemplateMesh, TriMesh, Vec3};

pub(crate) const CHUNK: usize = 256;

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub l_sdf: f64,
    pub l_rgb: f64,
    pub l_reg: f64,
    pub l_adv: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iteration,l_sdf,l_rgb,l_reg,l_adv";

    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e},{:e},{:e}", self.iteration, self.l_sdf, self.l_rgb, self.l_reg, self.l_adv)
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub shape: Dictionary,
    pub color: Dictionary,
    pub decoders: Decoders,
    pub adam_shape: Adam,
    pub adam_color: Adam,
    pub adam_sdf: Adam,
    pub adam_rgb: Adam,
    pub adv: Option<AdvState>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl TrainState {
    /// Fresh dictionaries, decoders and optimizer state for `n` subjects.
    pub fn new(template: &TemplateMesh, n: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let m = template.vertex_count();
        let f = config.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let shape = init_dictionary(FeatureKind::Geometry, n, m, f, rand::Rng::random(&mut rng))?;
        let color = init_dictionary(FeatureKind::Texture, n, m, f, rand::Rng::random(&mut rng))?;
        let decoders = Decoders::new(f, &mut rng)?;
        let adv = if config.adversarial { Some(AdvState::new(config, &mut rng)?) } else { None };
        Ok(Self {
            adam_shape: Adam::new(shape.entries().len()),
            adam_color: Adam::new(color.entries().len()),
            adam_sdf: Adam::new(decoders.sdf.params().len()),
            adam_rgb: Adam::new(decoders.color.params().len()),
            shape,
            color,
            decoders,
            adv,
            rng,
            iteration: 0,
        })
    }

    pub fn codebook(&self, subject: usize) -> Result<Codebook> {
        codebook_from_dictionaries(&self.shape, &self.color, subject)
    }
}

/// Per-subject sampling and query structures.
#[derive(Debug, Clone)]
pub(crate) struct SubjectCtx {
    pub sampler: ScanSampler,
    /// Template posed by the scan's registration.
    pub anchor: MeshAccel,
    /// Posed template joints.
    pub joints: Vec<Vec3>,
    /// The scan itself, for rasterized real patches.
    pub mesh: TriMesh,
    pub fd_eps: f64,
}

impl SubjectCtx {
    pub fn new(template: &TemplateMesh, scan: &Scan, fd_eps: f64) -> Result<Self> {
        scan.validate(template)?;
        let posed = skin(template, &scan.pose)?;
        let eps = fd_eps * posed.surface.bbox_diagonal();
        Ok(Self {
            sampler: ScanSampler::new(scan)?,
            anchor: MeshAccel::build(&posed.surface)?,
            joints: posed.rig.joints.clone(),
            mesh: scan.mesh.clone(),
            fd_eps: eps,
        })
    }
}

pub(crate) fn normal_count(len: usize, fraction: f64) -> usize {
    ((len as f64 * fraction).ceil() as usize).min(len)
}

/// Loss and gradients of one supervised pass over labelled points.
pub(crate) struct PassOut {
    pub loss: Loss3d,
    pub grads: DecoderGrads,
    /// `M x 2F`, laid out like the codebook.
    pub codebook: Vec<f64>,
}

/// Forward and backward over `gts` in fixed chunks; chunk results are
/// reduced in chunk order so the outcome does not depend on thread count.
/// The first `normal_count(chunk, fraction)` points of each chunk also
/// evaluate six axis offsets for the finite-difference normal term.
#[allow(clippy::too_many_arguments)]
pub(crate) fn supervised_pass(
    anchor: &MeshAccel,
    cb: &Codebook,
    dec: &Decoders,
    gts: &[SamplePoint],
    w: &LossWeights,
    normal_fraction: f64,
    fd_eps: f64,
    totals: (usize, usize),
) -> Result<PassOut> {
    let offsets = axis_offsets(fd_eps);
    let outs: Vec<Result<PassOut>> = gts
        .par_chunks(CHUNK)
        .map(|chunk| {
            let c = chunk.len();
            let nn = normal_count(c, normal_fraction);
            let mut points: Vec<Vec3> = chunk.iter().map(|p| p.x).collect();
            for p in &chunk[..nn] {
                points.extend(offsets.iter().map(|o| p.x + o));
            }
            let batch = FieldBatch::evaluate(anchor, cb, dec, &points, c)?;
            let s = batch.sdf();
            let grad: Vec<Vec3> = (0..nn)
                .map(|i| {
                    let b = c + 6 * i;
                    Vec3::new(s[b] - s[b + 1], s[b + 2] - s[b + 3], s[b + 4] - s[b + 5]) / (2.0 * fd_eps)
                })
                .collect();
            let colors: Vec<[f64; 3]> = (0..c).map(|i| batch.color(i)).collect();
            let (loss, lg) =
                loss_3d(&Predictions { s: &s[..c], grad: &grad, c: &colors }, chunk, w, totals.0, totals.1)?;
            let mut grad_s = lg.ds;
            grad_s.reserve(6 * nn);
            for d in &lg.dgrad {
                let d = d / (2.0 * fd_eps);
                grad_s.extend([d.x, -d.x, d.y, -d.y, d.z, -d.z]);
            }
            let mut grads = DecoderGrads::zeros(dec);
            let mut codebook = vec![0.0; cb.data().len()];
            batch.backward(dec, &grad_s, Some(&lg.dc), &mut grads, Some(&mut codebook))?;
            Ok(PassOut { loss, grads, codebook })
        })
        .collect();
    let mut total =
        PassOut { loss: Loss3d::default(), grads: DecoderGrads::zeros(dec), codebook: vec![0.0; cb.data().len()] };
    for o in outs {
        let o = o?;
        total.loss.add(&o.loss);
        total.grads.add(&o.grads);
        for (a, b) in total.codebook.iter_mut().zip(&o.codebook) {
            *a += b;
        }
    }
    Ok(total)
}

/// Auto-decoder training over a fixed set of registered scans.
pub struct Trainer {
    template: TemplateMesh,
    subjects: Vec<SubjectCtx>,
    scans: Vec<Scan>,
    config: TrainConfig,
    pub state: TrainState,
    pub trace: Vec<LossRecord>,
}

impl Trainer {
    /// Scans are ordered by `subject_id`, which must be a permutation of
    /// `0..N`.
    pub fn new(template: &TemplateMesh, scans: &[Scan], config: &TrainConfig) -> Result<Self> {
        let state = TrainState::new(template, scans.len().max(1), config)?;
        Self::resume(template, scans, config, state)
    }

    pub fn resume(template: &TemplateMesh, scans: &[Scan], config: &TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        if scans.is_empty() {
            return Err(Error::InvalidArgument("no scans to train on".into()));
        }
        let n = scans.len();
        let mut ordered: Vec<Option<Scan>> = vec![None; n];
        for s in scans {
            if s.subject_id >= n {
                return Err(Error::InvalidArgument(format!("subject id {} out of range for {n} scans", s.subject_id)));
            }
            if ordered[s.subject_id].is_some() {
                return Err(Error::InvalidArgument(format!("subject id {} used twice", s.subject_id)));
            }
            ordered[s.subject_id] = Some(s.clone());
        }
        let scans: Vec<Scan> = ordered.into_iter().map(|s| s.unwrap()).collect();
        if state.shape.subject_count() != n || state.shape.vertex_count() != template.vertex_count() {
            return Err(Error::Dimension("training state does not match scans or template".into()));
        }
        if state.shape.feature_dim() != config.feature_dim {
            return Err(Error::Dimension("training state feature dimension differs from config".into()));
        }
        let subjects =
            scans.par_iter().map(|s| SubjectCtx::new(template, s, config.fd_eps)).collect::<Result<Vec<_>>>()?;
        Ok(Self { template: template.clone(), subjects, scans, config: config.clone(), state, trace: Vec::new() })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn template(&self) -> &TemplateMesh {
        &self.template
    }

    pub fn scans(&self) -> &[Scan] {
        &self.scans
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    /// One optimization step; returns its loss record.
    pub fn step(&mut self) -> Result<LossRecord> {
        let cfg = &self.config;
        let n = self.subjects.len();
        let st = &mut self.state;
        let b = cfg.batch_subjects.min(n);
        let mut batch = rand::seq::index::sample(&mut st.rng, n, b).into_vec();
        batch.sort_unstable();

        // Fresh shell samples per subject, drawn serially from the one generator.
        let per = cfg.points_per_iter / b;
        let extra = cfg.points_per_iter % b;
        let mut samples = Vec::with_capacity(b);
        for (k, &i) in batch.iter().enumerate() {
            let count = per + usize::from(k < extra);
            let xs = self.subjects[i].sampler.positions(
                count,
                (cfg.shell_near, cfg.shell_far),
                cfg.space_fraction,
                &mut st.rng,
            );
            samples.push(self.subjects[i].sampler.label(&xs)?);
        }
        let total_points: usize = samples.iter().map(|s| s.len()).sum();
        let total_normals: usize = samples
            .iter()
            .map(|s| s.chunks(CHUNK).map(|c| normal_count(c.len(), cfg.normal_fraction)).sum::<usize>())
            .sum();

        let w = cfg.loss_weights();
        let m = st.shape.vertex_count();
        let f = st.shape.feature_dim();
        let row = m * f;
        let mut dec_grads = DecoderGrads::zeros(&st.decoders);
        let mut g_shape = vec![0.0; st.shape.entries().len()];
        let mut g_color = vec![0.0; st.color.entries().len()];
        let mut loss = Loss3d::default();
        for (&i, pts) in batch.iter().zip(&samples) {
            let ctx = &self.subjects[i];
            let cb = st.codebook(i)?;
            let out = supervised_pass(
                &ctx.anchor,
                &cb,
                &st.decoders,
                pts,
                &w,
                cfg.normal_fraction,
                ctx.fd_eps,
                (total_points, total_normals),
            )?;
            loss.add(&out.loss);
            dec_grads.add(&out.grads);
            for v in 0..m {
                let src = &out.codebook[v * 2 * f..(v + 1) * 2 * f];
                for k in 0..f {
                    g_shape[i * row + v * f + k] += src[k];
                    g_color[i * row + v * f + k] += src[f + k];
                }
            }
        }

        // The norm regularizer acts on the batch rows only so the 3D step
        // stays local to the selected subjects.
        let l_reg = loss_reg(&st.shape, &st.color);
        if cfg.lambda_reg > 0.0 {
            for (dict, g) in [(&st.shape, &mut g_shape), (&st.color, &mut g_color)] {
                let norm = dict.norm();
                if norm > 0.0 {
                    let scale = cfg.lambda_reg / norm;
                    for &i in &batch {
                        for (gi, x) in g[i * row..(i + 1) * row].iter_mut().zip(dict.row(i)?) {
                            *gi += scale * x;
                        }
                    }
                }
            }
        }

        let mut l_adv = 0.0;
        if cfg.adversarial && st.iteration % cfg.adv_every as u64 == 0 {
            let out = adversarial::adversarial_step(
                &self.template,
                &self.subjects,
                cfg,
                st,
                &mut dec_grads,
                &mut g_shape,
                &mut g_color,
            )?;
            l_adv = out;
        }

        let record = LossRecord { iteration: st.iteration, l_sdf: loss.l_sdf(&w), l_rgb: loss.rgb, l_reg, l_adv };
        let finite = [record.l_sdf, record.l_rgb, record.l_reg, record.l_adv].iter().all(|x| x.is_finite())
            && dec_grads.sdf.iter().chain(&dec_grads.color).chain(&g_shape).chain(&g_color).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Numeric(format!(
                "non-finite loss or gradient at iteration {} (l_sdf={}, l_rgb={}, l_reg={}, l_adv={})",
                record.iteration, record.l_sdf, record.l_rgb, record.l_reg, record.l_adv
            )));
        }

        let hp = cfg.adam();
        st.adam_sdf.step(st.decoders.sdf.params_mut(), &dec_grads.sdf, &hp)?;
        st.adam_rgb.step(st.decoders.color.params_mut(), &dec_grads.color, &hp)?;
        st.adam_shape.step(st.shape.entries_mut(), &g_shape, &hp)?;
        st.adam_color.step(st.color.entries_mut(), &g_color, &hp)?;
        st.iteration += 1;
        self.trace.push(record);
        Ok(record)
    }

    /// Run until `config.iterations`, calling `checkpoint` every
    /// `checkpoint_every` iterations and once at the end.
    pub fn run(&mut self, mut checkpoint: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        while (self.state.iteration as usize) < self.config.iterations {
            let r = self.step()?;
            if r.iteration % 50 == 0 {
                log::info!(
                    "iter {} l_sdf {:.5} l_rgb {:.5} l_reg {:.3} l_adv {:.4}",
                    r.iteration,
                    r.l_sdf,
                    r.l_rgb,
                    r.l_reg,
                    r.l_adv
                );
            }
            if self.state.iteration % self.config.checkpoint_every as u64 == 0 {
                checkpoint(self)?;
            }
        }
        checkpoint(self)
    }

    /// Mean `|s_gt - s|` of subject `i` on fresh samples drawn from `seed`.
    pub fn evaluate_sdf(&self, i: usize, count: usize, seed: u64) -> Result<f64> {
        let ctx = self.subjects.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.subjects.len() })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = ctx.sampler.shell_positions(count, (self.config.shell_near, self.config.shell_far), &mut rng);
        let gts = ctx.sampler.label(&xs)?;
        let cb = self.state.codebook(i)?;
        let s = crate::field::eval_sdf(&ctx.anchor, &cb, &self.state.decoders, &xs)?;
        Ok(s.iter().zip(&gts).map(|(a, g)| (a - g.s).abs()).sum::<f64>() / count.max(1) as f64)
    }
}

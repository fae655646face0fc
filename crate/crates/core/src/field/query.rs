use rayon::prelude::*;

use super::{encode_into, Decoders, Tape, ENCODED_WIDTH};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::geometry::{LocalQuery, MeshAccel, Vec3};

/// Points evaluated in one forward pass through both decoders, with the
/// tapes needed to push gradients back to decoder weights and codebook rows.
#[derive(Debug, Clone)]
pub struct FieldBatch {
    pub queries: Vec<LocalQuery>,
    pub corners: Vec<[u32; 3]>,
    sdf_tape: Tape,
    color_tape: Option<Tape>,
    color_rows: usize,
}

/// Gradient accumulators matching the two decoders' parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads {
    pub sdf: Vec<f64>,
    pub color: Vec<f64>,
}

impl DecoderGrads {
    pub fn zeros(dec: &Decoders) -> Self {
        Self { sdf: vec![0.0; dec.sdf.params().len()], color: vec![0.0; dec.color.params().len()] }
    }

    pub fn add(&mut self, other: &DecoderGrads) {
        for (a, b) in self.sdf.iter_mut().zip(&other.sdf) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += b;
        }
    }
}

impl FieldBatch {
    /// Locate every point on the mesh and run the SDF decoder on all of them
    /// and the color decoder on the first `color_rows`.
    pub fn evaluate(
        accel: &MeshAccel,
        cb: &Codebook,
        dec: &Decoders,
        points: &[Vec3],
        color_rows: usize,
    ) -> Result<Self> {
        let queries = points.iter().map(|x| accel.locate(x)).collect::<Result<Vec<_>>>()?;
        Self::from_queries(accel.faces(), cb, dec, queries, color_rows)
    }

    /// Decode precomputed local queries.
    pub fn from_queries(
        faces: &[[u32; 3]],
        cb: &Codebook,
        dec: &Decoders,
        queries: Vec<LocalQuery>,
        color_rows: usize,
    ) -> Result<Self> {
        let f = dec.feature_dim();
        if cb.feature_dim() != f {
            return Err(Error::Dimension(format!(
                "codebook feature dimension {} does not match decoders ({f})",
                cb.feature_dim()
            )));
        }
        if color_rows > queries.len() {
            return Err(Error::InvalidArgument(format!("{color_rows} color rows for {} points", queries.len())));
        }
        let w = dec.input_width();
        let n = queries.len();
        let mut xs = vec![0.0; n * w];
        let mut xc = vec![0.0; color_rows * w];
        let mut corners = Vec::with_capacity(n);
        for (r, q) in queries.iter().enumerate() {
            let c = *faces.get(q.face).ok_or(Error::IndexOutOfRange { index: q.face, len: faces.len() })?;
            if c.iter().any(|&v| v as usize >= cb.vertex_count()) {
                return Err(Error::Dimension("codebook has fewer rows than the mesh has vertices".into()));
            }
            corners.push(c);
            let wts = q.weights();
            let row = &mut xs[r * w..(r + 1) * w];
            for (&v, &wt) in c.iter().zip(&wts) {
                for (o, x) in row[..f].iter_mut().zip(cb.geometry(v as usize)) {
                    *o += wt * x;
                }
            }
            encode_into(q.uvd(), q.dir_local.into(), &mut row[f..f + ENCODED_WIDTH]);
            if r < color_rows {
                let crow = &mut xc[r * w..(r + 1) * w];
                for (&v, &wt) in c.iter().zip(&wts) {
                    for (o, x) in crow[..f].iter_mut().zip(cb.texture(v as usize)) {
                        *o += wt * x;
                    }
                }
                crow[f..].copy_from_slice(&xs[r * w + f..(r + 1) * w]);
            }
        }
        let sdf_tape = dec.sdf.forward(&xs, n)?;
        let color_tape = if color_rows > 0 { Some(dec.color.forward(&xc, color_rows)?) } else { None };
        Ok(Self { queries, corners, sdf_tape, color_tape, color_rows })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn sdf(&self) -> &[f64] {
        self.sdf_tape.output()
    }

    /// Row-major RGB of the first `color_rows` points.
    pub fn colors(&self) -> &[f64] {
        self.color_tape.as_ref().map_or(&[], |t| t.output())
    }

    pub fn color(&self, i: usize) -> [f64; 3] {
        let c = self.colors();
        [c[3 * i], c[3 * i + 1], c[3 * i + 2]]
    }

    pub fn sdf_tape(&self) -> &Tape {
        &self.sdf_tape
    }

    /// Reverse pass from `dL/ds` (one per point) and `dL/dc` (three per
    /// color row). Decoder gradients are accumulated into `grads`; codebook
    /// gradients, if requested, into an `M x 2F` buffer laid out like the
    /// codebook.
    pub fn backward(
        &self,
        dec: &Decoders,
        grad_s: &[f64],
        grad_c: Option<&[f64]>,
        grads: &mut DecoderGrads,
        codebook_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let f = dec.feature_dim();
        let w = dec.input_width();
        let n = self.len();
        let want_features = codebook_grad.is_some();
        let mut gx = if want_features { vec![0.0; n * w] } else { Vec::new() };
        dec.sdf.backward(&self.sdf_tape, grad_s, &mut grads.sdf, want_features.then_some(&mut gx[..]))?;
        let mut gxc = Vec::new();
        if let (Some(gc), Some(tape)) = (grad_c, &self.color_tape) {
            if want_features {
                gxc = vec![0.0; self.color_rows * w];
            }
            dec.color.backward(tape, gc, &mut grads.color, want_features.then_some(&mut gxc[..]))?;
        }
        if let Some(cg) = codebook_grad {
            for r in 0..n {
                let wts = self.queries[r].weights();
                for (&v, &wt) in self.corners[r].iter().zip(&wts) {
                    let base = v as usize * 2 * f;
                    let dst = &mut cg[base..base + f];
                    for (d, g) in dst.iter_mut().zip(&gx[r * w..r * w + f]) {
                        *d += wt * g;
                    }
                    if r < gxc.len() / w {
                        let dst = &mut cg[base + f..base + 2 * f];
                        for (d, g) in dst.iter_mut().zip(&gxc[r * w..r * w + f]) {
                            *d += wt * g;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// One decoded point: signed distance, color and the tapes that produced them.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub s: f64,
    pub c: [f64; 3],
    pub batch: FieldBatch,
}

/// Closest point, local coordinates, feature fusion, encoding and both
/// decoders for a single world point.
pub fn query_field(accel: &MeshAccel, cb: &Codebook, dec: &Decoders, x: &Vec3) -> Result<FieldSample> {
    let batch = FieldBatch::evaluate(accel, cb, dec, std::slice::from_ref(x), 1)?;
    Ok(FieldSample { s: batch.sdf()[0], c: batch.color(0), batch })
}

const EVAL_CHUNK: usize = 512;

/// Signed distances at many points, in parallel chunks.
pub fn eval_sdf(accel: &MeshAccel, cb: &Codebook, dec: &Decoders, points: &[Vec3]) -> Result<Vec<f64>> {
    let chunks: Vec<Result<Vec<f64>>> = points
        .par_chunks(EVAL_CHUNK)
        .map(|c| FieldBatch::evaluate(accel, cb, dec, c, 0).map(|b| b.sdf().to_vec()))
        .collect();
    let mut out = Vec::with_capacity(points.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Colors at many points, in parallel chunks.
pub fn eval_color(accel: &MeshAccel, cb: &Codebook, dec: &Decoders, points: &[Vec3]) -> Result<Vec<[f64; 3]>> {
    let chunks: Vec<Result<Vec<[f64; 3]>>> = points
        .par_chunks(EVAL_CHUNK)
        .map(|c| {
            let b = FieldBatch::evaluate(accel, cb, dec, c, c.len())?;
            Ok((0..c.len()).map(|i| b.color(i)).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(points.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Axis offsets `+x, -x, +y, -y, +z, -z` scaled by `eps`.
pub fn axis_offsets(eps: f64) -> [Vec3; 6] {
    [
        Vec3::new(eps, 0.0, 0.0),
        Vec3::new(-eps, 0.0, 0.0),
        Vec3::new(0.0, eps, 0.0),
        Vec3::new(0.0, -eps, 0.0),
        Vec3::new(0.0, 0.0, eps),
        Vec3::new(0.0, 0.0, -eps),
    ]
}

/// Central-difference gradient of a scalar field from six axis-offset
/// evaluations.
pub fn spatial_gradient<F>(field: F, x: &Vec3, eps: f64) -> Result<Vec3>
where
    F: Fn(&Vec3) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {eps} must be positive")));
    }
    let o = axis_offsets(eps);
    let mut v = [0.0; 6];
    for (vi, off) in v.iter_mut().zip(&o) {
        *vi = field(&(x + off))?;
    }
    Ok(Vec3::new(v[0] - v[1], v[2] - v[3], v[4] - v[5]) / (2.0 * eps))
}

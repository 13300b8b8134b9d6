//! Reconstruction methods: zero-filled, a TV + L1-wavelet compressed-sensing
//! solver, and an unrolled cascade of denoising and data-consistency blocks.
//!
//! The CS solver is a Chambolle-Pock primal-dual scheme on the stacked
//! operator [A; grad]: the quadratic data term and the TV term are handled by
//! dual proxes, the orthonormal-wavelet L1 term by an exact primal prox. The
//! iteration itself is not monotone, so the returned image is the best
//! iterate by objective and the trace records that monotone envelope
//! alongside the raw per-iteration values.
//!
//! Images are normalized by the 99.9th percentile of the zero-filled
//! magnitude before solving and rescaled afterwards, which makes the lambda
//! defaults transferable across datasets and makes reconstruction equivariant
//! under scaling of the measurements at fixed lambda.

use ndarray::ArrayD;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{DcPolicy, ForwardOperator};
use crate::sampling::apply_mask;
use crate::transforms::{
    crop_to, divergence, dwt, gradient, idwt, pad_to_multiple, tv_value, GradientField,
    WaveletFamily,
};
use crate::volume::{Domain, ImageVolume, KSpaceData};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CsConfig {
    pub lambda_tv: f64,
    pub lambda_wav: f64,
    pub wavelet: WaveletFamily,
    pub levels: usize,
    pub max_iters: usize,
    /// Relative iterate-change stopping tolerance.
    pub tol: f64,
    /// Primal step; when absent both steps default to 1/L for the stacked
    /// operator norm L.
    pub tau_p: Option<f64>,
    /// Dual step.
    pub sigma_d: Option<f64>,
    /// Final hard data-consistency projection applied to the solver output.
    pub final_dc: Option<DcPolicy>,
}

impl Default for CsConfig {
    fn default() -> Self {
        CsConfig {
            lambda_tv: 1e-3,
            lambda_wav: 1e-3,
            wavelet: WaveletFamily::Db4,
            levels: 2,
            max_iters: 200,
            tol: 1e-5,
            tau_p: None,
            sigma_d: None,
            final_dc: Some(DcPolicy::default()),
        }
    }
}

#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceTrace {
    /// Objective of the monotone best-so-far output candidate.
    pub objective: Vec<f64>,
    /// Objective of the raw primal iterate at each iteration.
    pub raw_objective: Vec<f64>,
    /// Relative iterate change per iteration.
    pub residual: Vec<f64>,
}

impl ConvergenceTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,raw_objective,residual\n");
        for i in 0..self.objective.len() {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e}\n",
                i, self.objective[i], self.raw_objective[i], self.residual[i]
            ));
        }
        out
    }
}

/// 99.9th-percentile magnitude, the normalization scale for reconstruction.
fn percentile_999(img: &ImageVolume) -> f64 {
    let mut mags: Vec<f64> = img.data.iter().map(|c| c.norm()).collect();
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() - 1) as f64 * 0.999).round() as usize;
    mags[idx]
}

/// Exact prox of tau * ||Psi x||_1 for orthonormal Psi. Shapes that do not
/// divide by 2^levels go through zero-padding, which makes this an
/// approximate prox there; benchmark shapes divide evenly.
fn wavelet_prox(
    x: &ImageVolume,
    family: WaveletFamily,
    levels: usize,
    tau: f64,
) -> Result<ImageVolume> {
    if tau <= 0.0 {
        return Ok(x.clone());
    }
    let (padded, offsets) = pad_to_multiple(x, levels);
    let mut coeffs = dwt(&padded, family, levels)?;
    coeffs.threshold_all(tau);
    let back = idwt(&coeffs)?;
    if padded.shape() == x.shape() {
        Ok(back)
    } else {
        Ok(crop_to(&back, x.shape(), &offsets))
    }
}

fn wavelet_l1(x: &ImageVolume, family: WaveletFamily, levels: usize) -> Result<f64> {
    let (padded, _) = pad_to_multiple(x, levels);
    Ok(dwt(&padded, family, levels)?.l1_norm())
}

struct Objective<'a> {
    op: &'a ForwardOperator,
    y: &'a KSpaceData,
    cfg: &'a CsConfig,
}

impl Objective<'_> {
    fn eval(&self, x: &ImageVolume) -> Result<f64> {
        let ax = self.op.forward(x)?;
        let data: f64 = (&ax.data - &self.y.data)
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            / 2.0;
        let mut obj = data;
        if self.cfg.lambda_tv > 0.0 {
            obj += self.cfg.lambda_tv * tv_value(x);
        }
        if self.cfg.lambda_wav > 0.0 {
            obj += self.cfg.lambda_wav * wavelet_l1(x, self.cfg.wavelet, self.cfg.levels)?;
        }
        Ok(obj)
    }
}

/// TV dual prox: clamps each component's complex magnitude to `bound`.
fn clamp_field(field: &mut GradientField, bound: f64) {
    for comp in field.components.iter_mut() {
        comp.mapv_inplace(|v| {
            let mag = v.norm();
            if mag > bound {
                v * (bound / mag)
            } else {
                v
            }
        });
    }
}

/// Compressed-sensing reconstruction. Returns the best-objective iterate and
/// the convergence trace; the optional final data-consistency projection is
/// applied after the solve.
pub fn cs_reconstruct(
    op: &ForwardOperator,
    y: &KSpaceData,
    cfg: &CsConfig,
) -> Result<(ImageVolume, ConvergenceTrace)> {
    if cfg.lambda_tv < 0.0 || cfg.lambda_wav < 0.0 {
        return Err(Error::InvalidArgument(
            "regularization weights must be nonnegative".into(),
        ));
    }
    let zf = op.zero_filled(y)?;
    let scale = percentile_999(&zf);
    if scale == 0.0 {
        // All-zero measurements reconstruct to zero.
        return Ok((zf, ConvergenceTrace::default()));
    }
    let ndim = op.ndim as f64;
    // Stacked-operator norm bound: ||A|| <= 1, ||grad||^2 <= 4 ndim.
    let l2 = 1.0 + 4.0 * ndim;
    let tau = cfg.tau_p.unwrap_or(1.0 / l2.sqrt());
    let sigma = cfg.sigma_d.unwrap_or(1.0 / l2.sqrt());
    if tau <= 0.0 || sigma <= 0.0 || tau * sigma * l2 > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "step sizes violate tau*sigma*L^2 <= 1: tau={tau} sigma={sigma} L^2={l2}"
        )));
    }

    let inv = 1.0 / scale;
    let yn = KSpaceData::new(apply_mask(y, &op.mask)?.data.mapv(|v| v * inv), y.mode)?;
    let objective = Objective { op, y: &yn, cfg };

    let mut x = ImageVolume::new(zf.data.mapv(|v| v * inv), Domain::Spatial)?;
    let mut x_bar = x.clone();
    let mut u = ArrayD::<Complex64>::zeros(yn.data.raw_dim());
    let mut p = GradientField::zeros_like(&x);

    let mut trace = ConvergenceTrace::default();
    let initial_obj = objective.eval(&x)?;
    let mut best = x.clone();
    let mut best_obj = initial_obj;

    for _iter in 0..cfg.max_iters {
        // Dual ascent on the data term: prox of the conjugate of
        // (1/2)||. - y||^2 is v -> (v - sigma y)/(1 + sigma).
        let ax = op.forward(&x_bar)?;
        u.zip_mut_with(&ax.data, |ui, ai| *ui += ai * sigma);
        u.zip_mut_with(&yn.data, |ui, yi| {
            *ui = (*ui - yi * sigma) / (1.0 + sigma)
        });

        // Dual ascent on TV with magnitude clamp at lambda_tv.
        if cfg.lambda_tv > 0.0 {
            let gx = gradient(&x_bar);
            for (pc, gc) in p.components.iter_mut().zip(&gx.components) {
                pc.zip_mut_with(gc, |pi, gi| *pi += gi * sigma);
            }
            clamp_field(&mut p, cfg.lambda_tv);
        }

        // Primal descent plus wavelet prox.
        let au = op.adjoint(&KSpaceData::new(u.clone(), yn.mode)?)?;
        let mut step = au.data;
        if cfg.lambda_tv > 0.0 {
            let div = divergence(&p);
            step.zip_mut_with(&div, |s, d| *s -= d); // K^T p = -div p
        }
        let mut x_next_data = x.data.clone();
        x_next_data.zip_mut_with(&step, |xi, si| *xi -= si * tau);
        let mut x_next = ImageVolume::new(x_next_data, Domain::Spatial).map_err(|_| {
            Error::Diverged("non-finite iterate in cs_reconstruct".into())
        })?;
        if cfg.lambda_wav > 0.0 {
            x_next = wavelet_prox(&x_next, cfg.wavelet, cfg.levels, tau * cfg.lambda_wav)?;
        }

        // Overrelaxation x_bar = 2 x_next - x.
        let mut bar = x_next.data.clone();
        bar.zip_mut_with(&x.data, |b, xi| *b = *b * 2.0 - xi);
        x_bar = ImageVolume::new(bar, Domain::Spatial)?;

        let change: f64 = (&x_next.data - &x.data)
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt();
        let norm = x.norm_l2().max(1e-300);
        x = x_next;

        let raw = objective.eval(&x)?;
        if !raw.is_finite() {
            return Err(Error::Diverged("non-finite objective in cs_reconstruct".into()));
        }
        if raw > 10.0 * initial_obj.max(1e-300) {
            return Err(Error::Diverged(format!(
                "cs objective grew from {initial_obj:.3e} to {raw:.3e}"
            )));
        }
        if raw < best_obj {
            best_obj = raw;
            best = x.clone();
        }
        trace.raw_objective.push(raw);
        trace.objective.push(best_obj);
        trace.residual.push(change / norm);
        if change / norm < cfg.tol {
            break;
        }
    }

    let mut out = ImageVolume::new(best.data.mapv(|v| v * scale), Domain::Spatial)?;
    if let Some(policy) = &cfg.final_dc {
        out = op.data_consistency_with(&out, y, policy)?;
    }
    Ok((out, trace))
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Denoiser {
    Identity,
    /// Soft-thresholds detail wavelet coefficients with a geometric
    /// per-block schedule tau_k = tau0 * decay^k. A missing tau0 is set
    /// data-adaptively to twice the median absolute detail coefficient of
    /// the normalized starting image.
    WaveletSoftThreshold {
        family: WaveletFamily,
        levels: usize,
        tau0: Option<f64>,
        decay: f64,
    },
}

impl Denoiser {
    pub fn default_wavelet() -> Self {
        Denoiser::WaveletSoftThreshold {
            family: WaveletFamily::Db4,
            levels: 2,
            tau0: None,
            decay: 0.7,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct UnrolledConfig {
    pub blocks: usize,
    pub denoiser: Denoiser,
    /// Data-consistency effort inside the cascade.
    pub dc_policy: DcPolicy,
    /// Effort for the final projection; this controls the consistency of the
    /// returned image.
    pub final_dc: DcPolicy,
}

impl Default for UnrolledConfig {
    fn default() -> Self {
        UnrolledConfig {
            blocks: 6,
            denoiser: Denoiser::default_wavelet(),
            dc_policy: DcPolicy::default(),
            final_dc: DcPolicy::default(),
        }
    }
}

/// Unrolled cascade: x0 = zero_filled; each block denoises then projects
/// back onto the measured data.
pub fn unrolled_reconstruct(
    op: &ForwardOperator,
    y: &KSpaceData,
    cfg: &UnrolledConfig,
) -> Result<ImageVolume> {
    let zf = op.zero_filled(y)?;
    if cfg.blocks == 0 {
        return Ok(zf);
    }
    let scale = percentile_999(&zf);
    if scale == 0.0 {
        return Ok(zf);
    }
    let inv = 1.0 / scale;
    let yn = KSpaceData::new(y.data.mapv(|v| v * inv), y.mode)?;
    let mut x = ImageVolume::new(zf.data.mapv(|v| v * inv), Domain::Spatial)?;

    // Resolve the data-adaptive threshold once, from the starting image.
    let schedule: Option<(WaveletFamily, usize, f64, f64)> = match &cfg.denoiser {
        Denoiser::Identity => None,
        Denoiser::WaveletSoftThreshold {
            family,
            levels,
            tau0,
            decay,
        } => {
            if *decay < 0.0 {
                return Err(Error::InvalidArgument(
                    "denoiser decay must be nonnegative".into(),
                ));
            }
            let tau0 = match tau0 {
                Some(t) if *t >= 0.0 => *t,
                Some(t) => {
                    return Err(Error::InvalidArgument(format!(
                        "denoiser tau0 must be nonnegative, got {t}"
                    )))
                }
                None => {
                    let (padded, _) = pad_to_multiple(&x, *levels);
                    let mut mags = dwt(&padded, *family, *levels)?.detail_magnitudes();
                    mags.sort_by(f64::total_cmp);
                    let median = if mags.is_empty() {
                        0.0
                    } else {
                        mags[mags.len() / 2]
                    };
                    2.0 * median
                }
            };
            Some((*family, *levels, tau0, *decay))
        }
    };

    for block in 0..cfg.blocks {
        if let Some((family, levels, tau0, decay)) = schedule {
            let tau = tau0 * decay.powi(block as i32);
            let (padded, offsets) = pad_to_multiple(&x, levels);
            let mut coeffs = dwt(&padded, family, levels)?;
            coeffs.threshold_details(tau);
            let denoised = idwt(&coeffs)?;
            x = if denoised.shape() == x.shape() {
                denoised
            } else {
                crop_to(&denoised, x.shape(), &offsets)
            };
        }
        let policy = if block + 1 == cfg.blocks {
            &cfg.final_dc
        } else {
            &cfg.dc_policy
        };
        x = op.data_consistency_with(&x, &yn, policy)?;
        x.check_finite(&format!("unrolled block {block}"))?;
    }
    ImageVolume::new(x.data.mapv(|v| v * scale), Domain::Spatial)
}

/// Uniform method interface for the harness.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    ZeroFilled,
    Cs(CsConfig),
    Unrolled(UnrolledConfig),
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::ZeroFilled => "zero_filled",
            MethodConfig::Cs(_) => "cs",
            MethodConfig::Unrolled(_) => "unrolled",
        }
    }
}

/// Dispatch wrapper over the three reconstruction methods.
pub fn reconstruct(
    method: &MethodConfig,
    op: &ForwardOperator,
    y: &KSpaceData,
) -> Result<ImageVolume> {
    match method {
        MethodConfig::ZeroFilled => op.zero_filled(y),
        MethodConfig::Cs(cfg) => Ok(cs_reconstruct(op, y, cfg)?.0),
        MethodConfig::Unrolled(cfg) => unrolled_reconstruct(op, y, cfg),
    }
}

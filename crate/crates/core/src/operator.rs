//! The measurement operator `A = M F S`: coil expansion, centered FFT and
//! undersampling, together with its adjoint, zero-filled reconstruction and
//! hard data-consistency projection.
//!
//! With unitary F, voxelwise-normalized maps and a binary mask the operator
//! norm is at most 1; solvers rely on that bound for their step sizes.

use ndarray::ArrayD;
use num_complex::Complex64;

use crate::coil::{combine, expand, SensitivityMaps};
use crate::error::{Error, Result};
use crate::fourier::transform_nd;
use crate::sampling::{apply_mask, SamplingMask};
use crate::volume::{AcquisitionMode, Domain, ImageVolume, KSpaceData};

/// Effort policy for the data-consistency projection. The kept-set residual
/// target is absolute, in the units of the measured k-space.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct DcPolicy {
    pub tol_abs: f64,
    pub max_iters: usize,
}

impl Default for DcPolicy {
    fn default() -> Self {
        // Bounded effort for use inside iterative cascades; the acceptance
        // tolerance of 5e-6 is reached by raising the budget.
        DcPolicy {
            tol_abs: 5e-6,
            max_iters: 300,
        }
    }
}

impl DcPolicy {
    /// Runs CGLS until the tolerance is met, with a generous budget.
    pub fn exact(tol_abs: f64) -> Self {
        DcPolicy {
            tol_abs,
            max_iters: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOperator {
    pub mask: SamplingMask,
    pub maps: SensitivityMaps,
    pub ndim: usize,
}

impl ForwardOperator {
    pub fn new(mask: SamplingMask, maps: SensitivityMaps, ndim: usize) -> Result<Self> {
        if !(ndim == 2 || ndim == 3) {
            return Err(Error::InvalidArgument(format!(
                "operator dimensionality must be 2 or 3, got {ndim}"
            )));
        }
        let spatial = maps.spatial_shape();
        if ndim > spatial.len() {
            return Err(Error::InvalidArgument(format!(
                "operator dimensionality {ndim} exceeds spatial rank {}",
                spatial.len()
            )));
        }
        let (mh, mw) = mask.shape();
        let last = &spatial[spatial.len() - 2..];
        if last != [mh, mw] {
            return Err(Error::shape("operator: mask vs maps", &[mh, mw], last));
        }
        Ok(ForwardOperator { mask, maps, ndim })
    }

    pub fn mode(&self) -> AcquisitionMode {
        if self.ndim == 2 {
            AcquisitionMode::TwoD
        } else {
            AcquisitionMode::ThreeD
        }
    }

    fn check_image(&self, x: &ImageVolume) -> Result<()> {
        if x.shape() != self.maps.spatial_shape() {
            return Err(Error::shape(
                "operator: image vs maps",
                x.shape(),
                self.maps.spatial_shape(),
            ));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &KSpaceData) -> Result<()> {
        if y.spatial_shape() != self.maps.spatial_shape() || y.coils() != self.maps.coil_count() {
            return Err(Error::shape(
                "operator: k-space vs maps",
                y.data.shape(),
                self.maps.maps.shape(),
            ));
        }
        Ok(())
    }

    /// `y = M F S x`.
    pub fn forward(&self, x: &ImageVolume) -> Result<KSpaceData> {
        self.check_image(x)?;
        let mut stack = expand(x, &self.maps)?;
        transform_nd(&mut stack, self.ndim, false);
        let ksp = KSpaceData::new(stack, self.mode())?;
        apply_mask(&ksp, &self.mask)
    }

    /// `x = S^H F^{-1} M y`.
    pub fn adjoint(&self, y: &KSpaceData) -> Result<ImageVolume> {
        self.check_kspace(y)?;
        let masked = apply_mask(y, &self.mask)?;
        let mut stack = masked.data;
        transform_nd(&mut stack, self.ndim, true);
        combine(&stack, &self.maps)
    }

    /// Zero-filled reconstruction: missing k-space entries are left at zero
    /// and the result is transformed back and coil-combined. Alias of the
    /// adjoint; it is the front-end of the naive baseline and the start
    /// iterate of every solver.
    pub fn zero_filled(&self, y: &KSpaceData) -> Result<ImageVolume> {
        self.adjoint(y)
    }

    /// Per-coil k-space of `x` without masking.
    fn coil_kspace(&self, x: &ImageVolume) -> Result<ArrayD<Complex64>> {
        let mut stack = expand(x, &self.maps)?;
        transform_nd(&mut stack, self.ndim, false);
        Ok(stack)
    }

    /// Hard data-consistency step with the default polish policy.
    pub fn data_consistency(&self, x: &ImageVolume, y: &KSpaceData) -> Result<ImageVolume> {
        self.data_consistency_with(x, y, &DcPolicy::default())
    }

    /// Hard data-consistency projection: substitutes the measured entries
    /// into the per-coil k-space of `x` and projects the result onto the
    /// consistent set `{x' : A x' = M y}`.
    ///
    /// Coil combination alone does not preserve the substitution exactly for
    /// more than one coil (`S S^H` is a projection, not the identity), so the
    /// combined image is polished by CGLS on the error equation
    /// `A delta = M y - A x` until the sampled-location residual falls below
    /// `policy.tol_abs` or the iteration budget runs out.
    pub fn data_consistency_with(
        &self,
        x: &ImageVolume,
        y: &KSpaceData,
        policy: &DcPolicy,
    ) -> Result<ImageVolume> {
        self.check_image(x)?;
        self.check_kspace(y)?;
        let target = apply_mask(y, &self.mask)?;

        // Cheap warm start: k-space replacement.
        let mut stack = self.coil_kspace(x)?;
        let (mh, mw) = self.mask.shape();
        for (i, (v, t)) in stack.iter_mut().zip(target.data.iter()).enumerate() {
            let col = i % mw;
            let row = (i / mw) % mh;
            if self.mask.keep[[row, col]] != 0 {
                *v = *t;
            }
        }
        transform_nd(&mut stack, self.ndim, true);
        let xk = combine(&stack, &self.maps)?;

        // CGLS polish on the error equation `A delta = y - A x`.
        let tol = policy.tol_abs;
        let max_iters = policy.max_iters;
        let inf = |a: &ArrayD<Complex64>| a.iter().map(|c| c.norm()).fold(0.0f64, f64::max);

        let mut r = &target.data - &self.forward(&xk)?.data;
        if inf(&r) <= tol {
            return Ok(xk);
        }
        let mut delta = ArrayD::<Complex64>::zeros(xk.data.raw_dim());
        let mut best_delta = delta.clone();
        let mut best_res = inf(&r);
        let mut s = self
            .adjoint(&KSpaceData::new(r.clone(), self.mode())?)?
            .data;
        let mut p = s.clone();
        let mut gamma: f64 = s.iter().map(|c| c.norm_sqr()).sum();
        for _ in 0..max_iters {
            let q = self
                .forward(&ImageVolume::new(p.clone(), Domain::Spatial)?)?
                .data;
            let qq: f64 = q.iter().map(|c| c.norm_sqr()).sum();
            if qq <= 0.0 || gamma <= 0.0 {
                break;
            }
            let alpha = gamma / qq;
            delta.zip_mut_with(&p, |d, pi| *d += pi * alpha);
            r.zip_mut_with(&q, |ri, qi| *ri -= qi * alpha);
            let res = inf(&r);
            if res < best_res {
                best_res = res;
                best_delta.assign(&delta);
            }
            if res <= tol {
                break;
            }
            s = self
                .adjoint(&KSpaceData::new(r.clone(), self.mode())?)?
                .data;
            let gamma_new: f64 = s.iter().map(|c| c.norm_sqr()).sum();
            let beta = gamma_new / gamma;
            gamma = gamma_new;
            let mut p_next = s.clone();
            p_next.zip_mut_with(&p, |pi, old| *pi += old * beta);
            p = p_next;
        }
        ImageVolume::new(xk.data + best_delta, Domain::Spatial)
    }
}

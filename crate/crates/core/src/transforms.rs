//! Sparsifying transforms: orthonormal discrete wavelet transform with
//! periodic boundaries, complex soft-thresholding, and anisotropic total
//! variation with its gradient/divergence pair.

use ndarray::{ArrayD, Axis, Dimension, IxDyn, Slice};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::volume::{Domain, ImageVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    Db4,
}

impl WaveletFamily {
    /// Orthonormal lowpass filter (sums to sqrt(2)).
    pub fn lowpass(self) -> &'static [f64] {
        const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;
        const HAAR: [f64; 2] = [SQRT_HALF, SQRT_HALF];
        // Daubechies with four vanishing moments, eight taps.
        const DB4: [f64; 8] = [
            0.230_377_813_308_855_2,
            0.714_846_570_552_541_5,
            0.630_880_767_929_590_3,
            -0.027_983_769_416_983_85,
            -0.187_034_811_718_881_1,
            0.030_841_381_835_986_96,
            0.032_883_011_666_982_94,
            -0.010_597_401_784_997_3,
        ];
        match self {
            WaveletFamily::Haar => &HAAR,
            WaveletFamily::Db4 => &DB4,
        }
    }

    /// Quadrature-mirror highpass: `g[k] = (-1)^k h[L-1-k]`.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let len = h.len();
        (0..len)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * h[len - 1 - k]
            })
            .collect()
    }
}

impl std::str::FromStr for WaveletFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(WaveletFamily::Haar),
            "db4" => Ok(WaveletFamily::Db4),
            other => Err(Error::InvalidArgument(format!(
                "unknown wavelet family '{other}', expected haar or db4"
            ))),
        }
    }
}

/// Multilevel wavelet coefficients in pyramid layout: the approximation block
/// occupies the low corner `[0, n/2^levels)` per axis, detail subbands fill
/// the rest. Total coefficient count equals the input element count.
#[derive(Clone, Debug)]
pub struct WaveletCoeffs {
    pub data: ArrayD<Complex64>,
    pub levels: usize,
    pub family: WaveletFamily,
}

impl WaveletCoeffs {
    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    fn approx_extent(&self, axis: usize) -> usize {
        self.data.shape()[axis] >> self.levels
    }

    /// True when the flat-layout index addresses a detail coefficient.
    pub fn is_detail(&self, idx: &[usize]) -> bool {
        idx.iter()
            .enumerate()
            .any(|(ax, &i)| i >= self.approx_extent(ax))
    }

    /// Magnitudes of all detail coefficients.
    pub fn detail_magnitudes(&self) -> Vec<f64> {
        self.data
            .indexed_iter()
            .filter(|(idx, _)| self.is_detail(idx.slice()))
            .map(|(_, v)| v.norm())
            .collect()
    }

    /// Soft-thresholds every coefficient in place.
    pub fn threshold_all(&mut self, tau: f64) {
        self.data.mapv_inplace(|v| soft_threshold_scalar(v, tau));
    }

    /// Soft-thresholds detail coefficients only, leaving the approximation
    /// band untouched.
    pub fn threshold_details(&mut self, tau: f64) {
        let extents: Vec<usize> = (0..self.data.ndim())
            .map(|ax| self.approx_extent(ax))
            .collect();
        for (idx, v) in self.data.indexed_iter_mut() {
            let detail = idx
                .slice()
                .iter()
                .zip(&extents)
                .any(|(&i, &e)| i >= e);
            if detail {
                *v = soft_threshold_scalar(*v, tau);
            }
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).sum()
    }
}

fn analysis_lane(lane: &[Complex64], h: &[f64], g: &[f64], out: &mut [Complex64]) {
    let n = lane.len();
    let half = n / 2;
    for i in 0..half {
        let mut a = Complex64::new(0.0, 0.0);
        let mut d = Complex64::new(0.0, 0.0);
        for (k, (&hk, &gk)) in h.iter().zip(g).enumerate() {
            let x = lane[(2 * i + k) % n];
            a += x * hk;
            d += x * gk;
        }
        out[i] = a;
        out[half + i] = d;
    }
}

fn synthesis_lane(lane: &[Complex64], h: &[f64], g: &[f64], out: &mut [Complex64]) {
    let n = lane.len();
    let half = n / 2;
    for v in out.iter_mut() {
        *v = Complex64::new(0.0, 0.0);
    }
    for i in 0..half {
        let a = lane[i];
        let d = lane[half + i];
        for (k, (&hk, &gk)) in h.iter().zip(g).enumerate() {
            out[(2 * i + k) % n] += a * hk + d * gk;
        }
    }
}

fn transform_block(
    data: &mut ArrayD<Complex64>,
    block: &[usize],
    family: WaveletFamily,
    inverse: bool,
) {
    let h = family.lowpass();
    let g = family.highpass();
    for axis in 0..block.len() {
        let n = block[axis];
        let mut view = data.view_mut();
        for (ax, &len) in block.iter().enumerate() {
            view.slice_axis_inplace(Axis(ax), Slice::from(0..len));
        }
        let mut buf = vec![Complex64::default(); n];
        let mut out = vec![Complex64::default(); n];
        for mut lane in view.lanes_mut(Axis(axis)) {
            for (b, v) in buf.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            if inverse {
                synthesis_lane(&buf, h, &g, &mut out);
            } else {
                analysis_lane(&buf, h, &g, &mut out);
            }
            for (v, o) in lane.iter_mut().zip(out.iter()) {
                *v = *o;
            }
        }
    }
}

fn check_divisible(shape: &[usize], levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be >= 1".into()));
    }
    let div = 1usize << levels;
    let bad: Vec<usize> = shape.iter().copied().filter(|n| n % div != 0).collect();
    if !bad.is_empty() {
        let padded: Vec<usize> = shape.iter().map(|n| n.div_ceil(div) * div).collect();
        return Err(Error::InvalidArgument(format!(
            "shape {shape:?} not divisible by 2^{levels}; pad to {padded:?}"
        )));
    }
    Ok(())
}

/// Multilevel orthonormal DWT with periodic boundary handling.
pub fn dwt(img: &ImageVolume, family: WaveletFamily, levels: usize) -> Result<WaveletCoeffs> {
    check_divisible(img.shape(), levels)?;
    let mut data = img.data.clone();
    let mut block: Vec<usize> = img.shape().to_vec();
    for _ in 0..levels {
        transform_block(&mut data, &block, family, false);
        for n in block.iter_mut() {
            *n /= 2;
        }
    }
    Ok(WaveletCoeffs {
        data,
        levels,
        family,
    })
}

/// Inverse of `dwt`.
pub fn idwt(coeffs: &WaveletCoeffs) -> Result<ImageVolume> {
    check_divisible(coeffs.shape(), coeffs.levels)?;
    let mut data = coeffs.data.clone();
    let full: Vec<usize> = coeffs.shape().to_vec();
    for level in (0..coeffs.levels).rev() {
        let block: Vec<usize> = full.iter().map(|n| n >> level).collect();
        transform_block(&mut data, &block, coeffs.family, true);
    }
    ImageVolume::new(data, Domain::Spatial)
}

/// Complex magnitude shrinkage: `v * max(1 - tau/|v|, 0)`.
pub fn soft_threshold_scalar(v: Complex64, tau: f64) -> Complex64 {
    let mag = v.norm();
    if mag <= tau || mag == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        v * ((mag - tau) / mag)
    }
}

/// Elementwise complex soft-thresholding.
pub fn soft_threshold(v: &ArrayD<Complex64>, tau: f64) -> ArrayD<Complex64> {
    v.mapv(|x| soft_threshold_scalar(x, tau))
}

/// Anisotropic total variation: sum over axes of the magnitudes of one-sided
/// forward differences (no wrap-around).
pub fn tv_value(img: &ImageVolume) -> f64 {
    let mut total = 0.0;
    for axis in 0..img.rank() {
        let n = img.shape()[axis];
        if n < 2 {
            continue;
        }
        let hi = img.data.slice_axis(Axis(axis), Slice::from(1..n));
        let lo = img.data.slice_axis(Axis(axis), Slice::from(0..n - 1));
        total += (&hi - &lo).iter().map(|d| d.norm()).sum::<f64>();
    }
    total
}

/// Per-axis forward-difference fields, the dual variable of the TV term.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub components: Vec<ArrayD<Complex64>>,
}

impl GradientField {
    pub fn zeros_like(img: &ImageVolume) -> Self {
        GradientField {
            components: (0..img.rank())
                .map(|_| ArrayD::zeros(IxDyn(img.shape())))
                .collect(),
        }
    }
}

/// Forward differences per axis, zero at the trailing boundary.
pub fn gradient(img: &ImageVolume) -> GradientField {
    let mut components = Vec::with_capacity(img.rank());
    for axis in 0..img.rank() {
        let n = img.shape()[axis];
        let mut comp = ArrayD::<Complex64>::zeros(IxDyn(img.shape()));
        if n >= 2 {
            let hi = img.data.slice_axis(Axis(axis), Slice::from(1..n));
            let lo = img.data.slice_axis(Axis(axis), Slice::from(0..n - 1));
            comp.slice_axis_mut(Axis(axis), Slice::from(0..n - 1))
                .assign(&(&hi - &lo));
        }
        components.push(comp);
    }
    GradientField { components }
}

/// Discrete divergence adjoint to `gradient`:
/// `<gradient(x), p> = <x, -divergence(p)>`.
pub fn divergence(field: &GradientField) -> ArrayD<Complex64> {
    let shape = field.components[0].shape().to_vec();
    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&shape));
    for (axis, comp) in field.components.iter().enumerate() {
        let n = shape[axis];
        if n < 2 {
            continue;
        }
        // div[0] = p[0]; div[i] = p[i] - p[i-1]; p[n-1] is unused (grad's
        // trailing entry is structurally zero).
        let mut acc = ArrayD::<Complex64>::zeros(IxDyn(&shape));
        acc.slice_axis_mut(Axis(axis), Slice::from(0..n - 1))
            .assign(&comp.slice_axis(Axis(axis), Slice::from(0..n - 1)));
        acc.slice_axis_mut(Axis(axis), Slice::from(1..n))
            .zip_mut_with(
                &comp.slice_axis(Axis(axis), Slice::from(0..n - 1)),
                |a, b| *a -= *b,
            );
        out += &acc;
    }
    out
}

/// Power-iteration estimate of the gradient operator norm.
pub fn gradient_norm_estimate(shape: &[usize], iters: usize, seed: u64) -> f64 {
    let mut rng = crate::rng::Rng::new(seed);
    let mut x = ArrayD::from_shape_fn(IxDyn(shape), |_| {
        Complex64::new(rng.next_normal(), rng.next_normal())
    });
    let mut norm = 0.0;
    for _ in 0..iters {
        let img = ImageVolume {
            data: x.clone(),
            domain: Domain::Spatial,
        };
        let grad = gradient(&img);
        let back = divergence(&grad).mapv(|v| -v);
        norm = back.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let scale = 1.0 / norm.max(1e-300);
        x = back.mapv(|v| v * scale);
    }
    norm.sqrt()
}

/// Pads each axis with zeros, split as evenly as possible, so that every
/// axis length becomes a multiple of `2^levels`. Returns the padded image
/// and the per-axis leading offsets for later cropping.
pub fn pad_to_multiple(img: &ImageVolume, levels: usize) -> (ImageVolume, Vec<usize>) {
    let div = 1usize << levels;
    let target: Vec<usize> = img.shape().iter().map(|n| n.div_ceil(div) * div).collect();
    if target == img.shape() {
        return (img.clone(), vec![0; img.rank()]);
    }
    let offsets: Vec<usize> = img
        .shape()
        .iter()
        .zip(&target)
        .map(|(&n, &t)| (t - n) / 2)
        .collect();
    let mut data = ArrayD::<Complex64>::zeros(IxDyn(&target));
    {
        let mut view = data.view_mut();
        for (ax, (&off, &n)) in offsets.iter().zip(img.shape()).enumerate() {
            view.slice_axis_inplace(Axis(ax), Slice::from(off..off + n));
        }
        view.assign(&img.data);
    }
    (
        ImageVolume {
            data,
            domain: img.domain,
        },
        offsets,
    )
}

/// Crops a padded image back to `shape` using the offsets from
/// `pad_to_multiple`.
pub fn crop_to(img: &ImageVolume, shape: &[usize], offsets: &[usize]) -> ImageVolume {
    let mut view = img.data.view();
    for (ax, (&off, &n)) in offsets.iter().zip(shape).enumerate() {
        view.slice_axis_inplace(Axis(ax), Slice::from(off..off + n));
    }
    ImageVolume {
        data: view.to_owned(),
        domain: img.domain,
    }
}

//! Centered, orthonormal discrete Fourier transforms over the trailing
//! spatial axes of complex arrays.
//!
//! Convention: zero frequency sits at the array center. Each axis is
//! transformed as `fftshift(fft(ifftshift(lane))) / sqrt(n)`, which makes the
//! transform unitary, so the inverse equals the adjoint.

use ndarray::{ArrayD, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::volume::{Domain, ImageVolume};

fn rotate_left(buf: &mut [Complex64], shift: usize, scratch: &mut Vec<Complex64>) {
    let n = buf.len();
    if shift % n == 0 {
        return;
    }
    scratch.clear();
    scratch.extend_from_slice(buf);
    for (i, out) in buf.iter_mut().enumerate() {
        *out = scratch[(i + shift) % n];
    }
}

fn transform_axis(data: &mut ArrayD<Complex64>, axis: usize, inverse: bool) {
    let n = data.shape()[axis];
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let scale = 1.0 / (n as f64).sqrt();
    let pre = n / 2; // ifftshift: move center bin to index 0
    let post = (n - n / 2) % n; // fftshift: move index 0 back to center
    let mut buf = vec![Complex64::default(); n];
    let mut scratch = Vec::with_capacity(n);
    for mut lane in data.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        rotate_left(&mut buf, pre, &mut scratch);
        fft.process(&mut buf);
        rotate_left(&mut buf, post, &mut scratch);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b * scale;
        }
    }
}

/// Centered orthonormal transform of the last `ndim` axes, in place.
pub(crate) fn transform_nd(data: &mut ArrayD<Complex64>, ndim: usize, inverse: bool) {
    let rank = data.ndim();
    for axis in rank - ndim..rank {
        transform_axis(data, axis, inverse);
    }
}

fn check_ndim(rank: usize, ndim: usize) -> Result<()> {
    if !(ndim == 2 || ndim == 3) {
        return Err(Error::InvalidArgument(format!(
            "transform dimensionality must be 2 or 3, got {ndim}"
        )));
    }
    if ndim > rank {
        return Err(Error::InvalidArgument(format!(
            "transform dimensionality {ndim} exceeds array rank {rank}"
        )));
    }
    Ok(())
}

/// Forward centered FFT over the last `ndim` spatial axes.
pub fn fft_centered(img: &ImageVolume, ndim: usize) -> Result<ImageVolume> {
    check_ndim(img.rank(), ndim)?;
    if img.domain != Domain::Spatial {
        return Err(Error::InvalidArgument(
            "fft_centered expects a spatial-domain input".into(),
        ));
    }
    img.check_finite("fft_centered input")?;
    let mut data = img.data.clone();
    transform_nd(&mut data, ndim, false);
    Ok(ImageVolume {
        data,
        domain: Domain::Frequency,
    })
}

/// Inverse centered FFT over the last `ndim` spatial axes.
pub fn ifft_centered(ksp: &ImageVolume, ndim: usize) -> Result<ImageVolume> {
    check_ndim(ksp.rank(), ndim)?;
    if ksp.domain != Domain::Frequency {
        return Err(Error::InvalidArgument(
            "ifft_centered expects a frequency-domain input".into(),
        ));
    }
    ksp.check_finite("ifft_centered input")?;
    let mut data = ksp.data.clone();
    transform_nd(&mut data, ndim, true);
    Ok(ImageVolume {
        data,
        domain: Domain::Spatial,
    })
}

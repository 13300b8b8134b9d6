//! Synthetic coil sensitivity maps plus SENSE-style expand/combine.
//!
//! Maps are Gaussian magnitude profiles centered at evenly spaced border
//! positions with a gentle linear phase, normalized voxelwise to unit
//! sum-of-squares so that combine is the exact left inverse of expand.

use ndarray::{ArrayD, Axis, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::volume::{Domain, ImageVolume};

/// Per-coil complex spatial weighting; axis 0 is the coil axis.
#[derive(Clone, Debug)]
pub struct SensitivityMaps {
    pub maps: ArrayD<Complex64>,
}

impl SensitivityMaps {
    pub fn coil_count(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.maps.shape()[1..]
    }
}

/// Generates `coils` normalized sensitivity maps over `shape`.
pub fn synth_maps(shape: &[usize], coils: usize, seed: u64) -> Result<SensitivityMaps> {
    if coils == 0 {
        return Err(Error::InvalidArgument("coil count must be >= 1".into()));
    }
    if shape.is_empty() || shape.iter().any(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!(
            "invalid spatial shape {shape:?}"
        )));
    }
    let mut rng = Rng::new(seed);
    let rank = shape.len();
    // Coil centers sit on an ellipse around the border of the last two axes.
    let h = shape[rank - 2] as f64;
    let w = shape[rank - 1] as f64;
    let sigma = 0.6 * h.max(w);
    let floor = 0.05;

    let mut full_shape = vec![coils];
    full_shape.extend_from_slice(shape);
    let mut maps = ArrayD::<Complex64>::zeros(IxDyn(&full_shape));

    for c in 0..coils {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / coils as f64
            + 0.1 * rng.next_f64();
        let cy = h / 2.0 + 0.6 * h * angle.sin();
        let cx = w / 2.0 + 0.6 * w * angle.cos();
        // Linear phase slopes, about one radian across the field of view.
        let py = (rng.next_f64() - 0.5) * 2.0 / h;
        let px = (rng.next_f64() - 0.5) * 2.0 / w;
        let p0 = (rng.next_f64() - 0.5) * std::f64::consts::PI;
        let mut coil_view = maps.index_axis_mut(Axis(0), c);
        for (idx, v) in coil_view.indexed_iter_mut() {
            let y = idx[rank - 2] as f64;
            let x = idx[rank - 1] as f64;
            let d2 = (y - cy).powi(2) + (x - cx).powi(2);
            let mag = (-d2 / (2.0 * sigma * sigma)).exp() + floor;
            let phase = p0 + py * y + px * x;
            *v = Complex64::from_polar(mag, phase);
        }
    }

    // Voxelwise unit sum-of-squares normalization.
    let spatial_len: usize = shape.iter().product();
    {
        let flat = maps
            .as_slice_mut()
            .expect("freshly allocated maps are contiguous");
        for p in 0..spatial_len {
            let ssq: f64 = (0..coils)
                .map(|c| flat[c * spatial_len + p].norm_sqr())
                .sum();
            let inv = 1.0 / ssq.sqrt();
            for c in 0..coils {
                flat[c * spatial_len + p] *= inv;
            }
        }
    }
    Ok(SensitivityMaps { maps })
}

fn check_spatial(context: &str, maps: &SensitivityMaps, shape: &[usize]) -> Result<()> {
    if maps.spatial_shape() != shape {
        return Err(Error::shape(context, maps.spatial_shape(), shape));
    }
    Ok(())
}

/// Per-coil images `S_c * img`, coil axis prepended.
pub fn expand(img: &ImageVolume, maps: &SensitivityMaps) -> Result<ArrayD<Complex64>> {
    check_spatial("expand: maps vs image", maps, img.shape())?;
    let coils = maps.coil_count();
    let mut out_shape = vec![coils];
    out_shape.extend_from_slice(img.shape());
    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&out_shape));
    for c in 0..coils {
        let coil = maps.maps.index_axis(Axis(0), c);
        let mut slab = out.index_axis_mut(Axis(0), c);
        slab.assign(&(&coil * &img.data));
    }
    Ok(out)
}

/// Adjoint of `expand`: `sum_c conj(S_c) * stack_c`. With normalized maps this
/// is the exact left inverse of `expand`.
pub fn combine(stack: &ArrayD<Complex64>, maps: &SensitivityMaps) -> Result<ImageVolume> {
    if stack.ndim() < 2 || stack.shape()[0] != maps.coil_count() {
        return Err(Error::shape(
            "combine: coil axis",
            &[maps.coil_count()],
            stack.shape(),
        ));
    }
    check_spatial("combine: maps vs stack", maps, &stack.shape()[1..])?;
    let mut acc = ArrayD::<Complex64>::zeros(IxDyn(&stack.shape()[1..]));
    for c in 0..maps.coil_count() {
        let coil = maps.maps.index_axis(Axis(0), c);
        let slab = stack.index_axis(Axis(0), c);
        acc.zip_mut_with(&(&coil.mapv(|s| s.conj()) * &slab), |a, b| *a += *b);
    }
    ImageVolume::new(acc, Domain::Spatial)
}

/// Root-sum-of-squares magnitude over the coil axis.
pub fn rss(stack: &ArrayD<Complex64>) -> Result<ArrayD<f64>> {
    if stack.ndim() < 2 || stack.shape()[0] == 0 {
        return Err(Error::InvalidArgument("rss: empty coil stack".into()));
    }
    let mut acc = ArrayD::<f64>::zeros(IxDyn(&stack.shape()[1..]));
    for c in 0..stack.shape()[0] {
        let slab = stack.index_axis(Axis(0), c);
        acc.zip_mut_with(&slab.mapv(|v| v.norm_sqr()), |a, b| *a += *b);
    }
    Ok(acc.mapv(f64::sqrt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::inner_product;

    fn random_image(shape: &[usize], seed: u64) -> ImageVolume {
        let mut rng = Rng::new(seed);
        ImageVolume::spatial(ArrayD::from_shape_fn(IxDyn(shape), |_| {
            Complex64::new(rng.next_normal(), rng.next_normal())
        }))
        .unwrap()
    }

    #[test]
    fn single_coil_has_unit_magnitude() {
        let maps = synth_maps(&[32, 32], 1, 3).unwrap();
        for v in maps.maps.iter() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_and_smooth() {
        for seed in [1u64, 2] {
            let maps = synth_maps(&[64, 64], 8, seed).unwrap();
            let spatial: usize = 64 * 64;
            let flat = maps.maps.as_slice().unwrap();
            for p in 0..spatial {
                let ssq: f64 = (0..8).map(|c| flat[c * spatial + p].norm_sqr()).sum();
                assert!((ssq - 1.0).abs() < 1e-6);
            }
            // Magnitude jumps between horizontal neighbors stay small.
            for c in 0..8 {
                let view = maps.maps.index_axis(Axis(0), c);
                for y in 0..64 {
                    for x in 1..64 {
                        let a = view[[y, x - 1]].norm();
                        let b = view[[y, x]].norm();
                        assert!((a - b).abs() <= 0.2);
                    }
                }
            }
        }
        let a = synth_maps(&[64, 64], 8, 1).unwrap();
        let b = synth_maps(&[64, 64], 8, 2).unwrap();
        assert_ne!(a.maps, b.maps);
    }

    #[test]
    fn expand_combine_roundtrip() {
        let img = random_image(&[32, 32], 5);
        let maps = synth_maps(&[32, 32], 4, 7).unwrap();
        let stack = expand(&img, &maps).unwrap();
        let back = combine(&stack, &maps).unwrap();
        let err: f64 = (&back.data - &img.data)
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err / img.norm_l2() < 1e-6);
    }

    #[test]
    fn zero_image_expands_to_zero() {
        let maps = synth_maps(&[16, 16], 3, 1).unwrap();
        let zero = ImageVolume::zeros(&[16, 16], Domain::Spatial);
        let stack = expand(&zero, &maps).unwrap();
        assert!(stack.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn adjointness_dot_test() {
        let img = random_image(&[16, 16], 11);
        let maps = synth_maps(&[16, 16], 4, 13).unwrap();
        let mut rng = Rng::new(17);
        let stack_z = ArrayD::from_shape_fn(IxDyn(&[4, 16, 16]), |_| {
            Complex64::new(rng.next_normal(), rng.next_normal())
        });
        let lhs = inner_product(expand(&img, &maps).unwrap().iter(), stack_z.iter());
        let rhs = inner_product(img.data.iter(), combine(&stack_z, &maps).unwrap().data.iter());
        assert!((lhs - rhs).norm() / lhs.norm() < 1e-6);
    }

    #[test]
    fn rss_cases() {
        let img = random_image(&[16, 16], 2);
        let maps = synth_maps(&[16, 16], 4, 3).unwrap();

        let single = expand(&img, &synth_maps(&[16, 16], 1, 0).unwrap()).unwrap();
        let r = rss(&single).unwrap();
        for (a, b) in r.iter().zip(img.magnitude().iter()) {
            assert!((a - b).abs() < 1e-9);
        }

        // Two identical coils of magnitude m give m * sqrt(2).
        let mut two = ArrayD::<Complex64>::zeros(IxDyn(&[2, 8, 8]));
        two.fill(Complex64::new(0.6, 0.8)); // magnitude 1
        let r = rss(&two).unwrap();
        for v in r.iter() {
            assert!((v - 2.0f64.sqrt()).abs() < 1e-12);
        }

        // Expanding with normalized maps preserves the magnitude under RSS.
        let stack = expand(&img, &maps).unwrap();
        let r = rss(&stack).unwrap();
        for (a, b) in r.iter().zip(img.magnitude().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatches_rejected() {
        let maps = synth_maps(&[16, 16], 2, 1).unwrap();
        let img = random_image(&[8, 8], 1);
        assert!(expand(&img, &maps).is_err());
        let stack = ArrayD::<Complex64>::zeros(IxDyn(&[3, 16, 16]));
        assert!(combine(&stack, &maps).is_err());
        assert!(synth_maps(&[16, 16], 0, 1).is_err());
    }
}

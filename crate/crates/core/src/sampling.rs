//! Cartesian undersampling masks: variable-density Poisson-disc patterns
//! with a fully sampled autocalibration (ACS) center block.
//!
//! Points are accepted by dart throwing over a seeded random permutation of
//! the phase-encode grid. A candidate is rejected when an already accepted
//! point lies closer than the local radius `r(d) = r0 * (1 + alpha * d/dmax)`,
//! where `d` is the distance from the grid center. The base radius `r0` is
//! calibrated by bisection until the achieved acceleration lands within
//! +-10% of the request.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::volume::KSpaceData;

/// Density growth factor of the radius schedule.
pub const DENSITY_ALPHA: f64 = 2.0;

/// Acceleration tolerance band around the request.
pub const ACCEL_TOLERANCE: f64 = 0.1;

const MAX_BISECTION_ITERS: usize = 30;

/// Binary Cartesian undersampling pattern over the phase-encode grid.
#[derive(Clone, Debug)]
pub struct SamplingMask {
    pub keep: Array2<u8>,
    pub acs_size: usize,
    pub requested_accel: f64,
    pub seed: u64,
    /// Calibrated base radius of the dart-throwing schedule; 0 for masks
    /// not produced by the generator (full masks, loaded containers).
    pub base_radius: f64,
}

impl SamplingMask {
    pub fn full(shape: (usize, usize)) -> Self {
        SamplingMask {
            keep: Array2::ones(shape),
            acs_size: shape.0.min(shape.1),
            requested_accel: 1.0,
            seed: 0,
            base_radius: 0.0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.keep.dim()
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k != 0).count()
    }

    /// Index ranges of the ACS block, centered on the grid.
    pub fn acs_bounds(&self) -> ((usize, usize), (usize, usize)) {
        let (h, w) = self.shape();
        acs_bounds(h, w, self.acs_size)
    }
}

fn acs_bounds(h: usize, w: usize, acs: usize) -> ((usize, usize), (usize, usize)) {
    let r0 = h / 2 - acs / 2;
    let c0 = w / 2 - acs / 2;
    ((r0, r0 + acs), (c0, c0 + acs))
}

/// Acceptance radius at distance `d` from the grid center.
pub fn local_radius(r0: f64, d: f64, d_max: f64) -> f64 {
    r0 * (1.0 + DENSITY_ALPHA * d / d_max)
}

/// Dart throwing with a fixed visit order; returns the keep grid.
fn throw_darts(shape: (usize, usize), order: &[(usize, usize)], r0: f64) -> Array2<u8> {
    let (h, w) = shape;
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let d_max = (cy * cy + cx * cx).sqrt().max(1.0);

    // Bucket grid for neighbor queries.
    let bucket = 4usize;
    let bh = (h + bucket - 1) / bucket;
    let bw = (w + bucket - 1) / bucket;
    let mut buckets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); bh * bw];

    let mut keep = Array2::<u8>::zeros(shape);
    for &(y, x) in order {
        let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
        let r_p = local_radius(r0, d, d_max);
        let mut blocked = false;
        if r_p >= 1.0 {
            let reach = (r_p.ceil() as usize) / bucket + 1;
            let by = y / bucket;
            let bx = x / bucket;
            'scan: for ny in by.saturating_sub(reach)..(by + reach + 1).min(bh) {
                for nx in bx.saturating_sub(reach)..(bx + reach + 1).min(bw) {
                    for &(qy, qx, r_q) in &buckets[ny * bw + nx] {
                        let dist = ((y as f64 - qy as f64).powi(2)
                            + (x as f64 - qx as f64).powi(2))
                        .sqrt();
                        if dist < r_p.min(r_q) {
                            blocked = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if !blocked {
            keep[[y, x]] = 1;
            buckets[(y / bucket) * bw + (x / bucket)].push((y, x, r_p));
        }
    }
    keep
}

fn force_acs(keep: &mut Array2<u8>, acs: usize) {
    let (h, w) = keep.dim();
    let ((r0, r1), (c0, c1)) = acs_bounds(h, w, acs);
    for y in r0..r1 {
        for x in c0..c1 {
            keep[[y, x]] = 1;
        }
    }
}

/// Generates a variable-density Poisson-disc mask at the requested
/// acceleration. Deterministic from `(shape, accel, acs_size, seed)`.
pub fn poisson_mask(
    shape: (usize, usize),
    accel: f64,
    acs_size: usize,
    seed: u64,
) -> Result<SamplingMask> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty mask shape".into()));
    }
    if !(accel > 1.0) || !accel.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "acceleration must be a finite value > 1, got {accel}"
        )));
    }
    if acs_size >= h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "ACS size {acs_size} must be smaller than the shortest mask axis {}",
            h.min(w)
        )));
    }
    let total = (h * w) as f64;
    let acs_points = (acs_size * acs_size) as f64;
    if acs_points / total > (1.0 + ACCEL_TOLERANCE) / accel {
        return Err(Error::InfeasibleSampling(format!(
            "ACS block of {acs_size}x{acs_size} alone keeps {:.3} of k-space, \
             more than the budget 1/{accel} allows",
            acs_points / total
        )));
    }

    // Visit order is fixed once so the kept count is monotone in r0.
    let mut rng = Rng::new(seed);
    let mut order: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .collect();
    rng.shuffle(&mut order);

    let lo_band = accel * (1.0 - ACCEL_TOLERANCE);
    let hi_band = accel * (1.0 + ACCEL_TOLERANCE);

    let build = |r0: f64| -> (Array2<u8>, f64) {
        let mut keep = throw_darts(shape, &order, r0);
        force_acs(&mut keep, acs_size);
        let kept = keep.iter().filter(|&&k| k != 0).count() as f64;
        (keep, total / kept)
    };

    // At the floor radius the whole schedule stays below the grid spacing
    // (0.3 * (1 + alpha) < 1), so every cell is kept; the upper end keeps
    // essentially only the ACS.
    let mut lo = 0.3;
    let mut hi = (h.max(w)) as f64;
    let (keep_full, accel_full) = build(lo);
    if accel_full >= lo_band && accel_full <= hi_band {
        return Ok(SamplingMask {
            keep: keep_full,
            acs_size,
            requested_accel: accel,
            seed,
            base_radius: lo,
        });
    }
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let (keep, achieved) = build(mid);
        if achieved >= lo_band && achieved <= hi_band {
            return Ok(SamplingMask {
                keep,
                acs_size,
                requested_accel: accel,
                seed,
                base_radius: mid,
            });
        }
        if achieved < lo_band {
            lo = mid; // too dense, grow the radius
        } else {
            hi = mid;
        }
    }
    Err(Error::InfeasibleSampling(format!(
        "could not calibrate a mask for acceleration {accel} on {h}x{w} \
         with ACS {acs_size} within {MAX_BISECTION_ITERS} bisection steps"
    )))
}

/// Achieved acceleration: total grid points over kept points.
pub fn mask_accel(mask: &SamplingMask) -> Result<f64> {
    let kept = mask.kept_count();
    if kept == 0 {
        return Err(Error::InvalidArgument(
            "mask keeps no points, acceleration undefined".into(),
        ));
    }
    Ok(mask.keep.len() as f64 / kept as f64)
}

/// Zeroes unmeasured k-space entries. The mask covers the last two spatial
/// axes; leading spatial axes (readout) and the coil axis broadcast.
pub fn apply_mask(ksp: &KSpaceData, mask: &SamplingMask) -> Result<KSpaceData> {
    let spatial = ksp.spatial_shape();
    let (mh, mw) = mask.shape();
    if spatial.len() < 2 || spatial[spatial.len() - 2] != mh || spatial[spatial.len() - 1] != mw {
        return Err(Error::shape(
            "apply_mask: mask vs trailing k-space axes",
            &[mh, mw],
            spatial,
        ));
    }
    let mut data = ksp.data.clone();
    let w = mw;
    for (i, v) in data.iter_mut().enumerate() {
        let x = i % w;
        let y = (i / w) % mh;
        if mask.keep[[y, x]] == 0 {
            *v = num_complex::Complex64::new(0.0, 0.0);
        }
    }
    KSpaceData::new(data, ksp.mode)
}

/// Persists a mask as a u8 container with its generation parameters.
pub fn save_mask(mask: &SamplingMask, dir: &std::path::Path) -> Result<()> {
    use crate::container::{encode_u8, write_container, ContainerMeta, Dtype};
    let (h, w) = mask.shape();
    let mut meta = ContainerMeta::new("mask", Dtype::U8, &[h, w]);
    meta.requested_accel = Some(mask.requested_accel);
    meta.acs_size = Some(mask.acs_size);
    meta.seed = Some(mask.seed);
    let flat = mask.keep.clone().into_dyn();
    write_container(dir, &meta, &encode_u8(&flat))
}

pub fn load_mask(dir: &std::path::Path) -> Result<SamplingMask> {
    use crate::container::{decode_u8, expect_kind, read_container};
    let (meta, bytes) = read_container(dir)?;
    expect_kind(dir, &meta, "mask")?;
    if meta.shape.len() != 2 {
        return Err(Error::container(
            dir,
            format!("mask must be 2D, got shape {:?}", meta.shape),
        ));
    }
    let arr = decode_u8(&bytes, &meta.shape)?;
    if arr.iter().any(|&v| v > 1) {
        return Err(Error::container(dir, "mask entries must be 0 or 1"));
    }
    let keep = arr
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| Error::container(dir, format!("mask reshape: {e}")))?;
    Ok(SamplingMask {
        keep,
        acs_size: meta.acs_size.unwrap_or(0),
        requested_accel: meta.requested_accel.unwrap_or(0.0),
        seed: meta.seed.unwrap_or(0),
        base_radius: 0.0,
    })
}

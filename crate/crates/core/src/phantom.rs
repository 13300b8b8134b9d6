//! Desk-scale dataset generation: piecewise-constant ellipse/ellipsoid
//! phantoms in the Shepp-Logan tradition, with exact label maps, synthetic
//! coil maps and simulated fully sampled k-space.
//!
//! The table is painted in order, later entries overwriting earlier ones, so
//! every label carries exactly one intensity value. Geometry is jittered per
//! case to create distinct dataset members; intensities are never jittered.

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

use crate::coil::{expand, synth_maps, SensitivityMaps};
use crate::error::{Error, Result};
use crate::fourier::transform_nd;
use crate::rng::Rng;
use crate::segment::{Band, SegmentationMap};
use crate::volume::{AcquisitionMode, ImageVolume, KSpaceData};

/// One table entry in normalized [-1, 1] coordinates. `theta` rotates in the
/// last-two-axes plane; `z0`/`c` are ignored for 2D shapes.
#[derive(Clone, Copy, Debug)]
struct Ellipse {
    label: u16,
    intensity: f64,
    x0: f64,
    y0: f64,
    z0: f64,
    a: f64,
    b: f64,
    c: f64,
    theta: f64,
}

const LABEL_NAMES: [(u16, &str); 5] = [
    (1, "shell"),
    (2, "tissue"),
    (3, "ventricle"),
    (4, "mass"),
    (5, "lesion"),
];

/// Smallest semi-axis is kept well above one voxel at the minimum supported
/// shape of 32 so that no class can vanish under the default jitter.
fn base_table() -> Vec<Ellipse> {
    let e = |label, intensity, x0: f64, y0: f64, a: f64, b: f64, c: f64, theta: f64| Ellipse {
        label,
        intensity,
        x0,
        y0,
        z0: 0.0,
        a,
        b,
        c,
        theta,
    };
    vec![
        e(1, 0.90, 0.00, 0.00, 0.72, 0.95, 0.85, 0.0),
        e(2, 0.20, 0.00, -0.02, 0.65, 0.87, 0.78, 0.0),
        // T2-like contrast: fluid-filled ventricles brighter than tissue.
        // Class intensities are spaced at least 0.15 apart so the matched
        // threshold bands stay clear of undersampling speckle near zero.
        e(3, 0.35, 0.22, 0.00, 0.12, 0.31, 0.25, -0.3141592653589793),
        e(3, 0.35, -0.22, 0.00, 0.16, 0.41, 0.30, 0.3141592653589793),
        e(4, 0.50, 0.00, 0.38, 0.18, 0.22, 0.18, 0.0),
        e(5, 0.70, 0.00, -0.35, 0.09, 0.09, 0.09, 0.0),
        e(5, 0.70, -0.20, -0.52, 0.08, 0.08, 0.08, 0.0),
        e(5, 0.70, 0.20, -0.52, 0.08, 0.08, 0.08, 0.0),
    ]
}

/// Intensity bands matched to the table. The half-width is capped at half
/// the class intensity so the faintest band never swallows background zeros;
/// segmenting the noiseless ground truth with these reproduces the label map
/// exactly.
pub fn default_bands() -> Vec<Band> {
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeMap::new();
    for e in base_table() {
        seen.entry(e.label).or_insert(e.intensity);
    }
    for (label, name) in LABEL_NAMES {
        let intensity = seen[&label];
        let half = (0.07f64).min(intensity / 2.0);
        out.push(Band {
            label,
            name: name.to_string(),
            lo: intensity - half,
            hi: intensity + half,
        });
    }
    out
}

/// Default geometric jitter amplitude (fraction of the normalized FOV for
/// centers, relative for semi-axes).
pub const DEFAULT_JITTER: f64 = 0.03;

#[derive(Clone, Debug)]
pub struct PhantomCase {
    /// Real-valued ground truth in [0, 1].
    pub gt_image: ImageVolume,
    pub gt_seg: SegmentationMap,
    pub maps: SensitivityMaps,
    pub full_kspace: KSpaceData,
    pub case_id: String,
    pub seed: u64,
}

fn jitter_table(table: &[Ellipse], rng: &mut Rng, amp: f64) -> Vec<Ellipse> {
    table
        .iter()
        .map(|e| {
            let u = |rng: &mut Rng| 2.0 * rng.next_f64() - 1.0;
            Ellipse {
                x0: e.x0 + amp * u(rng),
                y0: e.y0 + amp * u(rng),
                z0: e.z0 + amp * u(rng),
                a: e.a * (1.0 + amp * u(rng)),
                b: e.b * (1.0 + amp * u(rng)),
                c: e.c * (1.0 + amp * u(rng)),
                ..*e
            }
        })
        .collect()
}

fn rasterize(shape: &[usize], table: &[Ellipse]) -> (ArrayD<f64>, ArrayD<u16>) {
    let rank = shape.len();
    let mut image = ArrayD::<f64>::zeros(IxDyn(shape));
    let mut labels = ArrayD::<u16>::zeros(IxDyn(shape));
    let norm = |i: usize, n: usize| (2.0 * i as f64 + 1.0) / n as f64 - 1.0;
    for (idx, v) in image.indexed_iter_mut() {
        let x = norm(idx[rank - 1], shape[rank - 1]);
        let y = norm(idx[rank - 2], shape[rank - 2]);
        let z = if rank == 3 { norm(idx[0], shape[0]) } else { 0.0 };
        let mut intensity = 0.0;
        let mut label = 0u16;
        for e in table {
            let (s, co) = e.theta.sin_cos();
            let dx = x - e.x0;
            let dy = y - e.y0;
            let ru = co * dx + s * dy;
            let rv = -s * dx + co * dy;
            let mut q = (ru / e.a).powi(2) + (rv / e.b).powi(2);
            if rank == 3 {
                q += ((z - e.z0) / e.c).powi(2);
            }
            if q <= 1.0 {
                intensity = e.intensity;
                label = e.label;
            }
        }
        *v = intensity;
        labels[idx.clone()] = label;
    }
    (image, labels)
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if !(shape.len() == 2 || shape.len() == 3) {
        return Err(Error::InvalidArgument(format!(
            "phantom shape must be 2D or 3D, got {shape:?}"
        )));
    }
    if shape.iter().any(|&n| n < 32) {
        return Err(Error::InvalidArgument(format!(
            "phantom axes must be >= 32, got {shape:?}"
        )));
    }
    Ok(())
}

/// Generates one phantom case with the given geometric jitter amplitude.
/// Degenerate jitter that empties a class is re-drawn up to 10 times.
pub fn make_phantom_with(
    shape: &[usize],
    coils: usize,
    seed: u64,
    jitter: f64,
) -> Result<PhantomCase> {
    check_shape(shape)?;
    if coils == 0 {
        return Err(Error::InvalidArgument("coil count must be >= 1".into()));
    }
    let base = base_table();
    let mut rng = Rng::new(seed);
    let mut painted = None;
    for _attempt in 0..10 {
        let table = if jitter == 0.0 {
            base.clone()
        } else {
            jitter_table(&base, &mut rng, jitter)
        };
        let (image, labels) = rasterize(shape, &table);
        let all_present = LABEL_NAMES
            .iter()
            .all(|(l, _)| labels.iter().any(|v| v == l));
        if all_present {
            painted = Some((image, labels));
            break;
        }
        if jitter == 0.0 {
            break;
        }
    }
    let (image, labels) = painted.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "jitter seed {seed} produced an empty class 10 times in a row at shape {shape:?}"
        ))
    })?;

    let gt_image = ImageVolume::from_real(image)?;
    let classes = LABEL_NAMES
        .iter()
        .map(|(l, n)| (*l, n.to_string()))
        .collect();
    let gt_seg = SegmentationMap::new(labels, classes)?;
    let maps = synth_maps(shape, coils, seed ^ 0xC0115EED)?;

    let mode = if shape.len() == 2 {
        AcquisitionMode::TwoD
    } else {
        AcquisitionMode::ThreeD
    };
    let mut stack = expand(&gt_image, &maps)?;
    transform_nd(&mut stack, mode.fft_ndim(), false);
    let full_kspace = KSpaceData::new(stack, mode)?;

    Ok(PhantomCase {
        gt_image,
        gt_seg,
        maps,
        full_kspace,
        case_id: format!("case_{seed:016x}"),
        seed,
    })
}

/// Default-jitter phantom case.
pub fn make_phantom(shape: &[usize], coils: usize, jitter_seed: u64) -> Result<PhantomCase> {
    make_phantom_with(shape, coils, jitter_seed, DEFAULT_JITTER)
}

/// `n_cases` independent jittered cases, deterministic from `seed` and
/// independent of generation order.
pub fn make_dataset(
    n_cases: usize,
    shape: &[usize],
    coils: usize,
    seed: u64,
) -> Result<Vec<PhantomCase>> {
    if n_cases == 0 {
        return Err(Error::InvalidArgument("n_cases must be >= 1".into()));
    }
    (0..n_cases)
        .map(|i| {
            let case_seed = Rng::new(seed).fork(i as u64).next_u64();
            let mut case = make_phantom(shape, coils, case_seed)?;
            case.case_id = format!("case_{i:04}");
            Ok(case)
        })
        .collect()
}

/// Adds complex Gaussian noise to k-space at the requested SNR (dB, signal
/// power over noise power). Off by default everywhere; robustness runs only.
pub fn add_kspace_noise(ksp: &KSpaceData, snr_db: f64, seed: u64) -> Result<KSpaceData> {
    let n = ksp.data.len() as f64;
    let signal_power = ksp.norm_l2().powi(2) / n;
    let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
    let sigma = (noise_power / 2.0).sqrt();
    let mut rng = Rng::new(seed);
    let noisy = ksp
        .data
        .mapv(|v| v + Complex64::new(sigma * rng.next_normal(), sigma * rng.next_normal()));
    KSpaceData::new(noisy, ksp.mode)
}

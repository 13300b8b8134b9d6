//! Acceptance suite: one test per contract item, each printing a single
//! pass/fail line. Heavier phantom runs are shared through lazily
//! initialized fixtures so the suite stays within its time budget.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

use kbench_core::coil::synth_maps;
use kbench_core::fourier::{fft_centered, ifft_centered};
use kbench_core::harness::{
    run_benchmark, BenchConfig, BenchReport, DatasetConfig, SegmenterConfig,
    CONFIG_SCHEMA_VERSION,
};
use kbench_core::metrics::{dice, psnr, ssim, SsimParams};
use kbench_core::operator::{DcPolicy, ForwardOperator};
use kbench_core::phantom::{make_dataset, PhantomCase};
use kbench_core::recon::{
    cs_reconstruct, unrolled_reconstruct, ConvergenceTrace, CsConfig, Denoiser, MethodConfig,
    UnrolledConfig,
};
use kbench_core::rng::Rng;
use kbench_core::sampling::{apply_mask, local_radius, poisson_mask, SamplingMask};
use kbench_core::segment::SegmentationMap;
use kbench_core::stats::{
    significance_star, spearman, wilcoxon_signed_rank, Alternative, PairedSample,
};
use kbench_core::transforms::{dwt, idwt, tv_value, WaveletFamily};
use kbench_core::volume::inner_product;
use kbench_core::{ImageVolume, KSpaceData};

fn random_image(shape: &[usize], seed: u64) -> ImageVolume {
    let mut rng = Rng::new(seed);
    let data = ArrayD::from_shape_fn(IxDyn(shape), |_| {
        Complex64::new(rng.next_normal(), rng.next_normal())
    });
    ImageVolume::spatial(data).unwrap()
}

fn random_kspace(op: &ForwardOperator, seed: u64) -> KSpaceData {
    let mut shape = vec![op.maps.coil_count()];
    shape.extend_from_slice(op.maps.spatial_shape());
    let mut rng = Rng::new(seed);
    let data = ArrayD::from_shape_fn(IxDyn(&shape), |_| {
        Complex64::new(rng.next_normal(), rng.next_normal())
    });
    let ksp = KSpaceData::new(data, op.mode()).unwrap();
    apply_mask(&ksp, &op.mask).unwrap()
}

// ---------------------------------------------------------------------------
// Shared fixtures.

/// Benchmark over 30 phantom cases at four accelerations, single worker.
struct BenchFixture {
    report: BenchReport,
    elapsed: Duration,
    _dir: tempfile::TempDir,
}

fn tuned_cs() -> MethodConfig {
    MethodConfig::Cs(CsConfig {
        max_iters: 100,
        ..CsConfig::default()
    })
}

fn tuned_unrolled() -> MethodConfig {
    MethodConfig::Unrolled(UnrolledConfig {
        blocks: 4,
        denoiser: Denoiser::WaveletSoftThreshold {
            family: WaveletFamily::Db4,
            levels: 2,
            tau0: None,
            decay: 0.5,
        },
        dc_policy: DcPolicy {
            tol_abs: 1e-4,
            max_iters: 40,
        },
        final_dc: DcPolicy {
            tol_abs: 1e-5,
            max_iters: 120,
        },
    })
}

fn bench_fixture() -> &'static BenchFixture {
    static FIX: OnceLock<BenchFixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            dataset: DatasetConfig::Phantom {
                n: 30,
                shape: vec![64, 64],
                coils: 4,
                seed: 20260825,
            },
            accels: vec![4.0, 8.0, 16.0, 32.0],
            methods: vec![MethodConfig::ZeroFilled, tuned_cs(), tuned_unrolled()],
            segmenter: SegmenterConfig::default_threshold(),
            baseline_method: "zero_filled".into(),
            output_dir: dir.path().join("run"),
            parallelism: 1,
            // 6x6 ACS keeps 36 of 4096 points, feasible up to 32x while
            // leaving most of the sample budget to the scattered pattern.
            acs_size: 6,
            mask_seed: 0,
            alternative: Alternative::Greater,
        };
        let start = Instant::now();
        let report = run_benchmark(&cfg).unwrap();
        BenchFixture {
            report,
            elapsed: start.elapsed(),
            _dir: dir,
        }
    })
}

fn aggregate_dice(report: &BenchReport, method: &str, accel: f64) -> f64 {
    report
        .metrics
        .aggregates
        .iter()
        .find(|a| a.method == method && a.accel == accel)
        .unwrap_or_else(|| panic!("no aggregate for {method} at {accel}x"))
        .mean_dice
        .mean
}

/// Small reconstruction set used for the data-consistency and solver checks:
/// three cases, two accelerations, exact final projection.
struct ReconRun {
    op: ForwardOperator,
    y: KSpaceData,
    cs_image: ImageVolume,
    cs_trace: ConvergenceTrace,
    unrolled_image: ImageVolume,
}

struct ReconFixture {
    cases: Vec<PhantomCase>,
    runs: Vec<ReconRun>,
}

fn recon_fixture() -> &'static ReconFixture {
    static FIX: OnceLock<ReconFixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let cases = make_dataset(3, &[64, 64], 4, 71).unwrap();
        let cs_cfg = CsConfig {
            max_iters: 100,
            final_dc: Some(DcPolicy::exact(5e-6)),
            ..CsConfig::default()
        };
        let unrolled_cfg = UnrolledConfig {
            blocks: 4,
            denoiser: Denoiser::WaveletSoftThreshold {
                family: WaveletFamily::Db4,
                levels: 2,
                tau0: None,
                decay: 0.5,
            },
            dc_policy: DcPolicy {
                tol_abs: 1e-5,
                max_iters: 100,
            },
            final_dc: DcPolicy::exact(5e-6),
        };
        let mut runs = Vec::new();
        for (ci, case) in cases.iter().enumerate() {
            for (ai, accel) in [4.0, 8.0].into_iter().enumerate() {
                let mask =
                    poisson_mask((64, 64), accel, 12, (ci * 2 + ai) as u64 + 1).unwrap();
                let op = ForwardOperator::new(mask, case.maps.clone(), 2).unwrap();
                let y = apply_mask(&case.full_kspace, &op.mask).unwrap();
                let (cs_image, cs_trace) = cs_reconstruct(&op, &y, &cs_cfg).unwrap();
                let unrolled_image = unrolled_reconstruct(&op, &y, &unrolled_cfg).unwrap();
                runs.push(ReconRun {
                    op,
                    y,
                    cs_image,
                    cs_trace,
                    unrolled_image,
                });
            }
        }
        ReconFixture { cases, runs }
    })
}

/// Largest |forward(x) - y| over the sampled k-space locations.
fn kept_deviation(op: &ForwardOperator, x: &ImageVolume, y: &KSpaceData) -> f64 {
    let ax = op.forward(x).unwrap();
    let (h, w) = op.mask.shape();
    let mut worst = 0.0f64;
    for (i, (a, b)) in ax.data.iter().zip(y.data.iter()).enumerate() {
        let col = i % w;
        let row = (i / w) % h;
        if op.mask.keep[[row, col]] != 0 {
            worst = worst.max((a - b).norm());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// 1. Forward operator adjoint identity.

#[test]
fn a01_forward_operator_adjoint_dot_test() {
    let start = Instant::now();
    for i in 0..100u64 {
        let accel = [2.0, 4.0, 8.0][(i % 3) as usize];

        let mask = poisson_mask((64, 64), accel, 8, i).unwrap();
        let maps = synth_maps(&[64, 64], 4, 1000 + i).unwrap();
        let op = ForwardOperator::new(mask, maps, 2).unwrap();
        let x = random_image(&[64, 64], 2000 + i);
        let y = random_kspace(&op, 3000 + i);
        let lhs = inner_product(op.forward(&x).unwrap().data.iter(), y.data.iter());
        let rhs = inner_product(x.data.iter(), op.adjoint(&y).unwrap().data.iter());
        assert!(
            (lhs - rhs).norm() / lhs.norm() < 1e-5,
            "2D adjoint mismatch on instance {i}"
        );

        let mask = poisson_mask((32, 32), accel, 6, i).unwrap();
        let maps = synth_maps(&[32, 32, 32], 4, 4000 + i).unwrap();
        let op = ForwardOperator::new(mask, maps, 3).unwrap();
        let x = random_image(&[32, 32, 32], 5000 + i);
        let y = random_kspace(&op, 6000 + i);
        let lhs = inner_product(op.forward(&x).unwrap().data.iter(), y.data.iter());
        let rhs = inner_product(x.data.iter(), op.adjoint(&y).unwrap().data.iter());
        assert!(
            (lhs - rhs).norm() / lhs.norm() < 1e-5,
            "3D adjoint mismatch on instance {i}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
}

// ---------------------------------------------------------------------------
// 2. Transform exactness.

#[test]
fn a02_transform_exactness() {
    // FFT roundtrip and Parseval.
    for (shape, ndim, seed) in [(vec![32usize, 32], 2usize, 1u64), (vec![16, 16, 16], 3, 2)] {
        let x = random_image(&shape, seed);
        let k = fft_centered(&x, ndim).unwrap();
        let back = ifft_centered(&k, ndim).unwrap();
        let num: f64 = (&back.data - &x.data).iter().map(|v| v.norm_sqr()).sum();
        assert!(
            (num.sqrt() / x.norm_l2()) < 1e-6,
            "fft roundtrip error on {shape:?}"
        );
        assert!(
            (k.norm_l2() - x.norm_l2()).abs() / x.norm_l2() < 1e-6,
            "Parseval violated on {shape:?}"
        );
    }

    // Wavelet perfect reconstruction for both families at levels 1-3.
    for family in [WaveletFamily::Haar, WaveletFamily::Db4] {
        for levels in 1..=3 {
            let x = random_image(&[32, 32], 10 + levels as u64);
            let back = idwt(&dwt(&x, family, levels).unwrap()).unwrap();
            let num: f64 = (&back.data - &x.data).iter().map(|v| v.norm_sqr()).sum();
            assert!(
                (num.sqrt() / x.norm_l2()) < 1e-6,
                "{family:?} level {levels} reconstruction error"
            );
        }
    }

    // Total variation against a direct double loop, summed in the same
    // per-axis order so the values agree bit for bit.
    for seed in 0..50u64 {
        let x = random_image(&[8, 8], 100 + seed);
        let mut expected = 0.0;
        let mut axis0 = 0.0;
        for y in 0..7 {
            for c in 0..8 {
                axis0 += (x.data[[y + 1, c]] - x.data[[y, c]]).norm();
            }
        }
        expected += axis0;
        let mut axis1 = 0.0;
        for y in 0..8 {
            for c in 0..7 {
                axis1 += (x.data[[y, c + 1]] - x.data[[y, c]]).norm();
            }
        }
        expected += axis1;
        let got = tv_value(&x);
        assert!(
            got == expected,
            "tv mismatch on sample {seed}: {got} vs {expected}"
        );
    }
}

// ---------------------------------------------------------------------------
// 3. Hard data consistency on reconstruction outputs.

#[test]
fn a03_data_consistency_on_sampled_locations() {
    let fix = recon_fixture();
    for (i, run) in fix.runs.iter().enumerate() {
        let dev_cs = kept_deviation(&run.op, &run.cs_image, &run.y);
        let dev_un = kept_deviation(&run.op, &run.unrolled_image, &run.y);
        assert!(dev_cs < 1e-5, "cs run {i}: kept-set deviation {dev_cs}");
        assert!(
            dev_un < 1e-5,
            "unrolled run {i}: kept-set deviation {dev_un}"
        );
    }
}

// ---------------------------------------------------------------------------
// 4. CS solver behavior.

#[test]
fn a04_cs_objective_monotone_and_exact_limit() {
    let fix = recon_fixture();
    for (i, run) in fix.runs.iter().enumerate() {
        let obj = &run.cs_trace.objective;
        assert!(obj.len() > 10, "run {i}: trace too short");
        for k in 10..obj.len() {
            assert!(
                obj[k] <= obj[k - 1] + 1e-12,
                "run {i}: objective rose at iteration {k}: {} -> {}",
                obj[k - 1],
                obj[k]
            );
        }
    }

    // Unregularized, fully sampled: the solution is the ground truth.
    let case = &fix.cases[0];
    let mask = SamplingMask::full((64, 64));
    let op = ForwardOperator::new(mask, case.maps.clone(), 2).unwrap();
    let y = op.forward(&case.gt_image).unwrap();
    let cfg = CsConfig {
        lambda_tv: 0.0,
        lambda_wav: 0.0,
        max_iters: 60,
        ..CsConfig::default()
    };
    let (image, _) = cs_reconstruct(&op, &y, &cfg).unwrap();
    let p = psnr(&image.magnitude(), &case.gt_image.magnitude(), None).unwrap();
    assert!(p > 80.0, "full-mask unregularized recovery only {p} dB");
}

// ---------------------------------------------------------------------------
// 5. Segmentation quality degrades with acceleration.

#[test]
fn a05_dice_degrades_with_acceleration() {
    let fix = bench_fixture();
    assert!(
        fix.report.failures.is_empty(),
        "benchmark had failures: {:?}",
        fix.report.failures
    );
    for method in ["zero_filled", "cs", "unrolled"] {
        let dices: Vec<f64> = [4.0, 8.0, 16.0, 32.0]
            .iter()
            .map(|&a| aggregate_dice(&fix.report, method, a))
            .collect();
        for k in 1..dices.len() {
            assert!(
                dices[k] <= dices[k - 1] + 1e-12,
                "{method}: mean Dice rose between accelerations: {dices:?}"
            );
        }
        assert!(
            dices[0] - dices[3] > 0.0,
            "{method}: no positive margin between 4x and 32x: {dices:?}"
        );
    }
    assert!(
        fix.elapsed < Duration::from_secs(300),
        "30-case run took {:?}",
        fix.elapsed
    );
}

// ---------------------------------------------------------------------------
// 6. CS beats zero filling at 8x; star follows the p < 0.01 rule.

#[test]
fn a06_cs_beats_zero_filled_at_8x() {
    let fix = bench_fixture();
    let zf = aggregate_dice(&fix.report, "zero_filled", 8.0);
    let cs = aggregate_dice(&fix.report, "cs", 8.0);
    assert!(cs >= zf, "mean Dice cs {cs} < zero_filled {zf} at 8x");

    let entry = fix
        .report
        .wilcoxon
        .iter()
        .find(|e| e.method == "cs" && e.accel == 8.0)
        .expect("no Wilcoxon entry for cs at 8x");
    assert_eq!(fix.report.alternative, Alternative::Greater);
    assert_eq!(
        entry.star,
        significance_star(entry.p_value, entry.median_difference, 0.01),
        "star flag inconsistent with the p < 0.01 rule"
    );
    println!(
        "cs vs zero_filled at 8x: p = {:.3e}, star = {}",
        entry.p_value, entry.star
    );
}

// ---------------------------------------------------------------------------
// 7. Metric oracles.

#[test]
fn a07_metric_oracles() {
    // Dice 2|P n G| / (|P| + |G|) = 2/3 for one overlapping of 1+2 voxels.
    let classes: BTreeMap<u16, String> = [(1u16, "fg".to_string())].into_iter().collect();
    let mut p = ArrayD::<u16>::zeros(IxDyn(&[4, 4]));
    let mut g = ArrayD::<u16>::zeros(IxDyn(&[4, 4]));
    p[[0, 0]] = 1;
    g[[0, 0]] = 1;
    g[[0, 1]] = 1;
    let pred = SegmentationMap::new(p, classes.clone()).unwrap();
    let gt = SegmentationMap::new(g, classes).unwrap();
    let d = dice(&pred, &gt, 1).unwrap();
    assert!((d - 2.0 / 3.0).abs() < 1e-15, "dice {d}");

    // One voxel off by exactly 0.5 on a range-1 image: MSE 0.01, 20 dB.
    let mut gt_img = ArrayD::<f64>::zeros(IxDyn(&[5, 5]));
    gt_img[[0, 0]] = 1.0;
    let mut pred_img = gt_img.clone();
    pred_img[[2, 2]] += 0.5;
    let p_db = psnr(&pred_img, &gt_img, Some(1.0)).unwrap();
    assert!((p_db - 20.0).abs() < 1e-9, "psnr {p_db}");

    // Valid-mode SSIM on an 11x11 pair equals the single-window scalar
    // formula with an independently built Gaussian weighting.
    let mut rng = Rng::new(77);
    let a = ArrayD::from_shape_fn(IxDyn(&[11, 11]), |_| rng.next_f64());
    let b = ArrayD::from_shape_fn(IxDyn(&[11, 11]), |_| rng.next_f64());
    let params = SsimParams {
        data_range: Some(1.0),
        ..SsimParams::default()
    };
    let got = ssim(&a, &b, &params).unwrap();

    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let gsum: f64 = g.iter().sum();
    let mut mu_a = 0.0;
    let mut mu_b = 0.0;
    for y in 0..11 {
        for x in 0..11 {
            let w = g[y] * g[x] / (gsum * gsum);
            mu_a += w * a[[y, x]];
            mu_b += w * b[[y, x]];
        }
    }
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for y in 0..11 {
        for x in 0..11 {
            let w = g[y] * g[x] / (gsum * gsum);
            va += w * (a[[y, x]] - mu_a).powi(2);
            vb += w * (b[[y, x]] - mu_b).powi(2);
            cov += w * (a[[y, x]] - mu_a) * (b[[y, x]] - mu_b);
        }
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let oracle = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
    assert!((got - oracle).abs() < 1e-6, "ssim {got} vs oracle {oracle}");

    let self_ssim = ssim(&a, &a, &params).unwrap();
    assert!((self_ssim - 1.0).abs() < 1e-9, "ssim(x,x) = {self_ssim}");
}

// ---------------------------------------------------------------------------
// 8. Statistics oracles.

fn oracle_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let mut below = 0usize;
        let mut equal = 0usize;
        for j in 0..n {
            if values[j] < values[i] {
                below += 1;
            } else if values[j] == values[i] {
                equal += 1;
            }
        }
        // Average rank of a tie group of size `equal` starting at below+1.
        ranks[i] = below as f64 + (equal as f64 + 1.0) / 2.0;
    }
    ranks
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

fn sign_enumeration_p(diffs: &[f64], alternative: Alternative) -> f64 {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = oracle_ranks(&abs);
    let w_obs: f64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let m = nonzero.len();
    let total = 1usize << m;
    let (mut ge, mut le) = (0usize, 0usize);
    for bits in 0..total {
        let w: f64 = (0..m)
            .filter(|k| bits >> k & 1 == 1)
            .map(|k| ranks[k])
            .sum();
        if w >= w_obs - 1e-9 {
            ge += 1;
        }
        if w <= w_obs + 1e-9 {
            le += 1;
        }
    }
    let (ge, le, total) = (ge as f64, le as f64, total as f64);
    match alternative {
        Alternative::Greater => ge / total,
        Alternative::Less => le / total,
        Alternative::TwoSided => (2.0 * ge.min(le) / total).min(1.0),
    }
}

fn permutations_of(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for sub in permutations_of(n - 1) {
        for pos in 0..n {
            let mut p: Vec<usize> = sub.iter().map(|&v| v + usize::from(v >= pos)).collect();
            p.insert(0, pos);
            out.push(p);
        }
    }
    out
}

#[test]
fn a08_statistics_oracles() {
    // 200 random paired samples with ties and zeros, m <= 12, exact p vs
    // full sign enumeration under every alternative.
    let mut rng = Rng::new(88);
    let mut checked = 0usize;
    while checked < 200 {
        let m = 3 + (rng.next_u64() % 10) as usize; // 3..=12 nonzero candidates
        let diffs: Vec<f64> = (0..m)
            .map(|_| (rng.next_u64() % 7) as f64 - 3.0)
            .collect();
        if diffs.iter().all(|d| *d == 0.0) {
            continue;
        }
        let ids = (0..m).map(|i| format!("c{i}")).collect();
        let sample = PairedSample::new(ids, vec![0.0; m], diffs.clone()).unwrap();
        for alt in [Alternative::TwoSided, Alternative::Greater, Alternative::Less] {
            let res = wilcoxon_signed_rank(&sample, alt).unwrap();
            assert!(res.exact, "sample {checked} not on the exact path");
            let oracle = sign_enumeration_p(&diffs, alt);
            assert!(
                (res.p_value - oracle).abs() <= 1e-12,
                "sample {checked} ({alt:?}): p {} vs oracle {oracle}",
                res.p_value
            );
        }
        checked += 1;
    }

    // Six positive differences, one-sided: exactly 1 of 64 sign patterns.
    let ids = (0..6).map(|i| format!("c{i}")).collect();
    let sample =
        PairedSample::new(ids, vec![0.0; 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let res = wilcoxon_signed_rank(&sample, Alternative::Greater).unwrap();
    assert_eq!(res.p_value, 1.0 / 64.0);

    // Spearman against the all-permutation oracle for n <= 6.
    for n in 3..=6usize {
        for trial in 0..4u64 {
            let mut rng = Rng::new(900 + n as u64 * 10 + trial);
            let x: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            let res = spearman(&x, &y).unwrap();
            assert!(res.exact);

            let rx = oracle_ranks(&x);
            let ry = oracle_ranks(&y);
            let rho = oracle_pearson(&rx, &ry);
            assert!((res.rho - rho).abs() <= 1e-12, "rho {} vs {rho}", res.rho);
            let mut hits = 0usize;
            let perms = permutations_of(n);
            for perm in &perms {
                let permuted: Vec<f64> = perm.iter().map(|&i| ry[i]).collect();
                if oracle_pearson(&rx, &permuted).abs() >= rho.abs() - 1e-12 {
                    hits += 1;
                }
            }
            let oracle_p = hits as f64 / perms.len() as f64;
            assert!(
                (res.p_value - oracle_p).abs() <= 1e-12,
                "n={n} trial {trial}: p {} vs oracle {oracle_p}",
                res.p_value
            );
        }
    }
}

// ---------------------------------------------------------------------------
// 9. Sampling mask contract.

#[test]
fn a09_mask_contract() {
    // 102 masks across six accelerations at 128x128: acceleration inside the
    // +-10% band and a fully sampled ACS block.
    for &accel in &[4.0, 8.0, 16.0, 32.0, 64.0, 128.0] {
        for seed in 0..17u64 {
            let mask = poisson_mask((128, 128), accel, 8, seed).unwrap();
            let achieved = (128.0 * 128.0) / mask.kept_count() as f64;
            assert!(
                (achieved / accel - 1.0).abs() <= 0.1 + 1e-12,
                "R={accel} seed {seed}: achieved {achieved}"
            );
            let ((r0, r1), (c0, c1)) = mask.acs_bounds();
            for y in r0..r1 {
                for x in c0..c1 {
                    assert_eq!(mask.keep[[y, x]], 1, "ACS hole at ({y},{x})");
                }
            }
        }
    }

    // Brute-force pairwise check of the variable-density min-distance rule
    // at 64x64, outside the forced ACS block.
    for &accel in &[4.0, 8.0, 16.0] {
        for seed in 0..2u64 {
            let mask = poisson_mask((64, 64), accel, 8, seed).unwrap();
            assert!(mask.base_radius > 0.0);
            let ((r0, r1), (c0, c1)) = mask.acs_bounds();
            let cy = 63.0 / 2.0;
            let d_max = (2.0f64).sqrt() * cy;
            let pts: Vec<(usize, usize)> = mask
                .keep
                .indexed_iter()
                .filter(|(_, &k)| k != 0)
                .map(|(idx, _)| idx)
                .filter(|&(y, x)| !(y >= r0 && y < r1 && x >= c0 && x < c1))
                .collect();
            for (i, &(y1, x1)) in pts.iter().enumerate() {
                let d1 = ((y1 as f64 - cy).powi(2) + (x1 as f64 - cy).powi(2)).sqrt();
                let rad1 = local_radius(mask.base_radius, d1, d_max);
                for &(y2, x2) in &pts[i + 1..] {
                    let d2 = ((y2 as f64 - cy).powi(2) + (x2 as f64 - cy).powi(2)).sqrt();
                    let rad2 = local_radius(mask.base_radius, d2, d_max);
                    let need = rad1.min(rad2);
                    let dist = ((y1 as f64 - y2 as f64).powi(2)
                        + (x1 as f64 - x2 as f64).powi(2))
                    .sqrt();
                    assert!(
                        dist >= need - 1e-9 || need < 1.0,
                        "R={accel} seed {seed}: ({y1},{x1})-({y2},{x2}) at {dist} < {need}"
                    );
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 10. Worker count cannot influence the report bytes.

#[test]
fn a10_report_bytes_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = BenchConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        dataset: DatasetConfig::Phantom {
            n: 4,
            shape: vec![64, 64],
            coils: 2,
            seed: 31,
        },
        accels: vec![4.0, 8.0],
        methods: vec![
            MethodConfig::ZeroFilled,
            MethodConfig::Cs(CsConfig {
                max_iters: 20,
                final_dc: None,
                ..CsConfig::default()
            }),
        ],
        segmenter: SegmenterConfig::default_threshold(),
        baseline_method: "zero_filled".into(),
        output_dir: dir.path().join("run"),
        parallelism: 1,
        acs_size: 12,
        mask_seed: 0,
        alternative: Alternative::TwoSided,
    };
    run_benchmark(&cfg).unwrap();
    let first = std::fs::read(cfg.output_dir.join("report.json")).unwrap();
    cfg.parallelism = 8;
    run_benchmark(&cfg).unwrap();
    let second = std::fs::read(cfg.output_dir.join("report.json")).unwrap();
    assert_eq!(first, second, "report.json differs between 1 and 8 workers");
}

// ---------------------------------------------------------------------------
// 11. Correlation entries recomputable from the emitted scatter CSV.

#[test]
fn a11_spearman_recomputable_from_scatter_csv() {
    let fix = bench_fixture();
    let csv = std::fs::read_to_string(
        fix.report.config.output_dir.join("psnr_vs_dice_scatter.csv"),
    )
    .unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "case_id,method,accel,psnr_db,mean_dice"
    );

    // (method, accel-bits) -> finite (psnr, dice) pairs in file order.
    let mut groups: BTreeMap<(String, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5, "bad scatter row: {line}");
        if f[3] == "inf" {
            continue;
        }
        let accel: f64 = f[2].parse().unwrap();
        let entry = groups
            .entry((f[1].to_string(), accel.to_bits()))
            .or_default();
        entry.0.push(f[3].parse().unwrap());
        entry.1.push(f[4].parse().unwrap());
    }

    assert!(!fix.report.spearman.is_empty());
    for entry in &fix.report.spearman {
        let (xs, ys) = groups
            .get(&(entry.method.clone(), entry.accel.to_bits()))
            .unwrap_or_else(|| panic!("no scatter rows for {} at {}x", entry.method, entry.accel));
        match spearman(xs, ys) {
            Ok(r) => {
                let rho = entry.rho.expect("report entry lacks rho");
                let p = entry.p_value.expect("report entry lacks p");
                assert_eq!(
                    r.rho.to_bits(),
                    rho.to_bits(),
                    "{} at {}x: rho {} vs report {rho}",
                    entry.method,
                    entry.accel,
                    r.rho
                );
                assert_eq!(r.p_value.to_bits(), p.to_bits());
                assert_eq!(Some(r.exact), entry.exact);
                assert_eq!(r.n, entry.n);
            }
            Err(e) => {
                assert!(entry.rho.is_none());
                assert_eq!(entry.note.as_deref(), Some(e.to_string().as_str()));
            }
        }
    }
}

//! Benchmark orchestration: dataset generation or ingestion, undersampling,
//! reconstruction, segmentation, metrics, statistics and report emission.
//!
//! Determinism contract: every per-case computation is keyed by
//! (case_id, accel, method) with seeds derived from the config alone, results
//! are sorted before aggregation, and the emitted report is byte-identical
//! regardless of worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::container::{
    decode_complex, encode_complex, expect_kind, read_container, write_container, ContainerMeta,
    Dtype,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_case, CaseRow, MetricsReport};
use crate::operator::ForwardOperator;
use crate::phantom::{default_bands, make_dataset, PhantomCase};
use crate::recon::{reconstruct, MethodConfig};
use crate::rng::Rng;
use crate::sampling::{apply_mask, poisson_mask};
use crate::segment::{load_segmentation, save_segmentation, threshold_segment, Band};
use crate::coil::SensitivityMaps;
use crate::stats::{
    significance_star, spearman, wilcoxon_signed_rank, Alternative, PairedSample,
};
use crate::volume::{AcquisitionMode, ImageVolume, KSpaceData};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetConfig {
    Phantom {
        n: usize,
        shape: Vec<usize>,
        coils: usize,
        seed: u64,
    },
    External {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SegmenterConfig {
    Threshold {
        bands: Vec<Band>,
        #[serde(default)]
        filter_components: bool,
    },
    /// Externally produced label maps, one container per
    /// `{path}/{case_id}/{method}/accel_{accel}`.
    External { path: PathBuf },
}

impl SegmenterConfig {
    /// Threshold bands matched to the built-in phantom intensities.
    pub fn default_threshold() -> Self {
        SegmenterConfig::Threshold {
            bands: default_bands(),
            filter_components: false,
        }
    }
}

fn default_parallelism() -> usize {
    1
}

fn default_acs() -> usize {
    12
}

fn default_alternative() -> Alternative {
    Alternative::TwoSided
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BenchConfig {
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    pub accels: Vec<f64>,
    pub methods: Vec<MethodConfig>,
    pub segmenter: SegmenterConfig,
    pub baseline_method: String,
    pub output_dir: PathBuf,
    /// Worker count; overridden by KBENCH_THREADS. Not echoed into the
    /// report so that worker count cannot affect the report bytes.
    #[serde(default = "default_parallelism", skip_serializing)]
    pub parallelism: usize,
    #[serde(default = "default_acs")]
    pub acs_size: usize,
    #[serde(default)]
    pub mask_seed: u64,
    #[serde(default = "default_alternative")]
    pub alternative: Alternative,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "config schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.accels.is_empty() {
            return Err(Error::InvalidArgument("accels list is empty".into()));
        }
        if self.accels.iter().any(|&r| !(r > 1.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "every acceleration must be a finite value > 1, got {:?}",
                self.accels
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods list is empty".into()));
        }
        let names: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let mut dedup = names.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != names.len() {
            return Err(Error::InvalidArgument(format!(
                "duplicate method names in {names:?}"
            )));
        }
        if !names.contains(&self.baseline_method.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "baseline_method '{}' not among methods {names:?}",
                self.baseline_method
            )));
        }
        if let DatasetConfig::Phantom { n, coils, .. } = &self.dataset {
            if *n == 0 || *coils == 0 {
                return Err(Error::InvalidArgument(
                    "phantom dataset needs n >= 1 and coils >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// KBENCH_THREADS wins over the configured parallelism; zero means one.
pub fn resolve_threads(requested: usize) -> usize {
    if let Ok(v) = std::env::var("KBENCH_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    requested.max(1)
}

/// Persists one case as four containers under `dir`.
pub fn save_case(case: &PhantomCase, dir: &Path) -> Result<()> {
    let mut meta = ContainerMeta::new("image", Dtype::C64, case.gt_image.shape());
    meta.seed = Some(case.seed);
    write_container(
        &dir.join("gt_image"),
        &meta,
        &encode_complex(&case.gt_image.data),
    )?;
    save_segmentation(&case.gt_seg, &dir.join("gt_seg"))?;

    let mut meta = ContainerMeta::new("maps", Dtype::C64, case.maps.maps.shape());
    meta.coils = Some(case.maps.coil_count());
    write_container(&dir.join("maps"), &meta, &encode_complex(&case.maps.maps))?;

    let mut meta = ContainerMeta::new("kspace", Dtype::C64, case.full_kspace.data.shape());
    meta.coils = Some(case.full_kspace.coils());
    meta.mode = Some(case.full_kspace.mode);
    write_container(
        &dir.join("kspace"),
        &meta,
        &encode_complex(&case.full_kspace.data),
    )?;
    Ok(())
}

/// Loads a case saved by `save_case`; `case_id` is the directory name.
pub fn load_case(dir: &Path) -> Result<PhantomCase> {
    let case_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "case".to_string());

    let (meta, bytes) = read_container(&dir.join("gt_image"))?;
    expect_kind(&dir.join("gt_image"), &meta, "image")?;
    let seed = meta.seed.unwrap_or(0);
    let gt_image = ImageVolume::spatial(decode_complex(&bytes, &meta.shape)?)?;

    let gt_seg = load_segmentation(&dir.join("gt_seg"))?;
    if gt_seg.shape() != gt_image.shape() {
        return Err(Error::shape(
            "load_case: segmentation vs image",
            gt_seg.shape(),
            gt_image.shape(),
        ));
    }

    let (meta, bytes) = read_container(&dir.join("maps"))?;
    expect_kind(&dir.join("maps"), &meta, "maps")?;
    let maps = SensitivityMaps {
        maps: decode_complex(&bytes, &meta.shape)?,
    };
    if maps.spatial_shape() != gt_image.shape() {
        return Err(Error::shape(
            "load_case: maps vs image",
            maps.spatial_shape(),
            gt_image.shape(),
        ));
    }

    let (meta, bytes) = read_container(&dir.join("kspace"))?;
    expect_kind(&dir.join("kspace"), &meta, "kspace")?;
    let mode = meta.mode.ok_or_else(|| {
        Error::container(dir.join("kspace"), "kspace container lacks acquisition mode")
    })?;
    let full_kspace = KSpaceData::new(decode_complex(&bytes, &meta.shape)?, mode)?;
    if full_kspace.spatial_shape() != gt_image.shape()
        || full_kspace.coils() != maps.coil_count()
    {
        return Err(Error::shape(
            "load_case: kspace vs maps",
            full_kspace.data.shape(),
            maps.maps.shape(),
        ));
    }

    Ok(PhantomCase {
        gt_image,
        gt_seg,
        maps,
        full_kspace,
        case_id,
        seed,
    })
}

fn load_dataset(cfg: &DatasetConfig) -> Result<Vec<PhantomCase>> {
    match cfg {
        DatasetConfig::Phantom {
            n,
            shape,
            coils,
            seed,
        } => make_dataset(*n, shape, *coils, *seed),
        DatasetConfig::External { path } => {
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            if dirs.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "external dataset {} contains no case directories",
                    path.display()
                )));
            }
            dirs.iter().map(|d| load_case(d)).collect()
        }
    }
}

/// FNV-1a; stable across platforms, used only to mix case ids into seeds.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mask seed for one (case, accel) pair; shared by all methods so they see
/// the same measurements, as in a paired comparison.
fn mask_seed_for(base: u64, case_id: &str, accel: f64) -> u64 {
    Rng::new(base)
        .fork(fnv1a64(case_id.as_bytes()))
        .fork(accel.to_bits())
        .next_u64()
}

fn accel_label(accel: f64) -> String {
    format!("{accel}")
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub method: String,
    pub accel: f64,
    pub reason: String,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct WilcoxonEntry {
    pub method: String,
    pub accel: f64,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    pub all_zero: bool,
    pub median_difference: f64,
    /// Table rule: p < 0.01 strictly and the median difference favors the
    /// candidate.
    pub star: bool,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SpearmanEntry {
    pub method: String,
    pub accel: f64,
    /// Cases with finite PSNR entering the correlation.
    pub n: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub exact: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: BenchConfig,
    pub metrics: MetricsReport,
    pub baseline_method: String,
    pub alternative: Alternative,
    pub wilcoxon: Vec<WilcoxonEntry>,
    pub spearman: Vec<SpearmanEntry>,
    pub failures: Vec<CaseFailure>,
}

fn segment_prediction(
    cfg: &SegmenterConfig,
    recon: &ImageVolume,
    case_id: &str,
    method: &str,
    accel: f64,
) -> Result<crate::segment::SegmentationMap> {
    match cfg {
        SegmenterConfig::Threshold {
            bands,
            filter_components,
        } => threshold_segment(recon, bands, *filter_components),
        SegmenterConfig::External { path } => {
            let dir = path
                .join(case_id)
                .join(method)
                .join(format!("accel_{}", accel_label(accel)));
            let seg = load_segmentation(&dir)?;
            if seg.shape() != recon.shape() {
                return Err(Error::shape(
                    "external segmentation vs reconstruction",
                    seg.shape(),
                    recon.shape(),
                ));
            }
            Ok(seg)
        }
    }
}

fn run_one(
    cfg: &BenchConfig,
    case: &PhantomCase,
    accel: f64,
    method: &MethodConfig,
) -> Result<CaseRow> {
    let shape = case.gt_image.shape();
    let rank = shape.len();
    let (h, w) = (shape[rank - 2], shape[rank - 1]);
    let seed = mask_seed_for(cfg.mask_seed, &case.case_id, accel);
    let mask = poisson_mask((h, w), accel, cfg.acs_size, seed)?;
    let ndim = match case.full_kspace.mode {
        AcquisitionMode::TwoD => 2,
        AcquisitionMode::ThreeD => 3,
    };
    let op = ForwardOperator::new(mask, case.maps.clone(), ndim)?;
    let y = apply_mask(&case.full_kspace, &op.mask)?;
    let recon = reconstruct(method, &op, &y)?;
    let pred = segment_prediction(&cfg.segmenter, &recon, &case.case_id, method.name(), accel)?;
    evaluate_case(
        &recon,
        &case.gt_image,
        &pred,
        &case.gt_seg,
        &case.case_id,
        method.name(),
        accel,
    )
}

fn compute_stats(
    cfg: &BenchConfig,
    metrics: &MetricsReport,
) -> (Vec<WilcoxonEntry>, Vec<SpearmanEntry>) {
    // Index rows by (method, accel-bits) then case_id.
    let mut cells: BTreeMap<(String, u64), BTreeMap<&str, &CaseRow>> = BTreeMap::new();
    for row in &metrics.per_case {
        cells
            .entry((row.method.clone(), row.accel.to_bits()))
            .or_default()
            .insert(&row.case_id, row);
    }

    let mut wilcoxon = Vec::new();
    let mut spearman_entries = Vec::new();
    let method_names: Vec<&str> = cfg.methods.iter().map(|m| m.name()).collect();
    for &accel in &cfg.accels {
        let key_base = accel.to_bits();
        let baseline = cells.get(&(cfg.baseline_method.clone(), key_base));
        for &method in &method_names {
            let cell = match cells.get(&(method.to_string(), key_base)) {
                Some(c) => c,
                None => continue,
            };
            if method != cfg.baseline_method {
                if let Some(base_cell) = baseline {
                    let mut ids = Vec::new();
                    let mut b = Vec::new();
                    let mut c = Vec::new();
                    for (&id, row) in cell {
                        if let Some(base_row) = base_cell.get(id) {
                            ids.push(id.to_string());
                            b.push(base_row.mean_dice);
                            c.push(row.mean_dice);
                        }
                    }
                    if let Ok(sample) = PairedSample::new(ids, b, c) {
                        if let Ok(res) = wilcoxon_signed_rank(&sample, cfg.alternative) {
                            let median = sample.median_difference();
                            wilcoxon.push(WilcoxonEntry {
                                method: method.to_string(),
                                accel,
                                n: sample.baseline.len(),
                                statistic: res.statistic,
                                p_value: res.p_value,
                                exact: res.exact,
                                all_zero: res.all_zero,
                                median_difference: median,
                                star: significance_star(res.p_value, median, 0.01),
                            });
                        }
                    }
                }
            }

            // Within-accel Spearman between PSNR and mean Dice; cases with
            // infinite PSNR are dropped.
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for row in cell.values() {
                if let Some(p) = row.psnr_db {
                    xs.push(p);
                    ys.push(row.mean_dice);
                }
            }
            let entry = match spearman(&xs, &ys) {
                Ok(r) => SpearmanEntry {
                    method: method.to_string(),
                    accel,
                    n: r.n,
                    rho: Some(r.rho),
                    p_value: Some(r.p_value),
                    exact: Some(r.exact),
                    note: None,
                },
                Err(e) => SpearmanEntry {
                    method: method.to_string(),
                    accel,
                    n: xs.len(),
                    rho: None,
                    p_value: None,
                    exact: None,
                    note: Some(e.to_string()),
                },
            };
            spearman_entries.push(entry);
        }
    }
    (wilcoxon, spearman_entries)
}

/// Runs the full benchmark and writes report.json, per_case.csv and the
/// plot CSVs into the configured output directory.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let cases = load_dataset(&cfg.dataset)?;
    let threads = resolve_threads(cfg.parallelism);

    let mut items: Vec<(usize, f64, usize)> = Vec::new();
    for ci in 0..cases.len() {
        for &accel in &cfg.accels {
            for mi in 0..cfg.methods.len() {
                items.push((ci, accel, mi));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<std::result::Result<CaseRow, CaseFailure>> = pool.install(|| {
        items
            .par_iter()
            .map(|&(ci, accel, mi)| {
                let case = &cases[ci];
                let method = &cfg.methods[mi];
                run_one(cfg, case, accel, method).map_err(|e| CaseFailure {
                    case_id: case.case_id.clone(),
                    method: method.name().to_string(),
                    accel,
                    reason: e.to_string(),
                })
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    failures.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.accel.total_cmp(&b.accel))
            .then(a.case_id.cmp(&b.case_id))
    });
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "every case failed; first failure: {}",
            failures
                .first()
                .map(|f| f.reason.clone())
                .unwrap_or_default()
        )));
    }

    let metrics = MetricsReport::from_rows(rows)?;
    let (wilcoxon, spearman) = compute_stats(cfg, &metrics);
    let report = BenchReport {
        schema_version: CONFIG_SCHEMA_VERSION,
        config: cfg.clone(),
        metrics,
        baseline_method: cfg.baseline_method.clone(),
        alternative: cfg.alternative,
        wilcoxon,
        spearman,
        failures,
    };
    write_report(&report, &cfg.output_dir)?;
    Ok(report)
}

pub fn write_report(report: &BenchReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("report.json"), json + "\n")
        .map_err(|e| Error::io(dir.join("report.json"), e))?;
    std::fs::write(dir.join("per_case.csv"), report.metrics.per_case_csv())
        .map_err(|e| Error::io(dir.join("per_case.csv"), e))?;
    emit_plot_data(report, dir)
}

/// Plot-ready CSVs: aggregate curves per metric and the per-case
/// PSNR-vs-Dice scatter. Scatter values use shortest-roundtrip formatting so
/// statistics recomputed from the file match the report exactly.
pub fn emit_plot_data(report: &BenchReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut dice = String::from("method,accel,mean_dice,std_dice,n\n");
    let mut ssim = String::from("method,accel,mean_ssim,std_ssim,n\n");
    for agg in &report.metrics.aggregates {
        dice.push_str(&format!(
            "{},{},{},{},{}\n",
            agg.method, agg.accel, agg.mean_dice.mean, agg.mean_dice.std, agg.n_cases
        ));
        ssim.push_str(&format!(
            "{},{},{},{},{}\n",
            agg.method, agg.accel, agg.ssim.mean, agg.ssim.std, agg.n_cases
        ));
    }
    let mut scatter = String::from("case_id,method,accel,psnr_db,mean_dice\n");
    for row in &report.metrics.per_case {
        let psnr = match row.psnr_db {
            Some(p) => format!("{p}"),
            None => "inf".to_string(),
        };
        scatter.push_str(&format!(
            "{},{},{},{psnr},{}\n",
            row.case_id, row.method, row.accel, row.mean_dice
        ));
    }
    for (name, content) in [
        ("dice_vs_accel.csv", dice),
        ("ssim_vs_accel.csv", ssim),
        ("psnr_vs_dice_scatter.csv", scatter),
    ] {
        std::fs::write(dir.join(name), content).map_err(|e| Error::io(dir.join(name), e))?;
    }
    Ok(())
}

//! `kbench`: command-line front end for the benchmark toolkit.
//!
//! Exit codes: 0 on success, 1 when a benchmark run had per-case failures,
//! 2 for usage or configuration errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kbench_core::container::{encode_complex, write_container, ContainerMeta, Dtype};
use kbench_core::harness::{
    load_case, run_benchmark, save_case, write_report, BenchConfig, BenchReport,
};
use kbench_core::metrics::{evaluate_case, MetricsReport};
use kbench_core::operator::ForwardOperator;
use kbench_core::phantom::{default_bands, make_dataset};
use kbench_core::recon::{reconstruct, CsConfig, MethodConfig, UnrolledConfig};
use kbench_core::sampling::{apply_mask, load_mask, poisson_mask, save_mask};
use kbench_core::segment::{load_segmentation, save_segmentation, threshold_segment, Band};
use kbench_core::stats::{
    significance_star, spearman, wilcoxon_signed_rank, Alternative, PairedSample,
};
use kbench_core::{AcquisitionMode, ImageVolume};

#[derive(Parser)]
#[command(
    name = "kbench",
    about = "Accelerated multi-coil MRI benchmark: simulate, reconstruct, segment, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base seed for deterministic generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; equivalent to setting KBENCH_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset of container cases.
    Phantom {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Spatial shape, e.g. 64x64 or 32x64x64.
        #[arg(long, default_value = "64x64")]
        shape: String,
        #[arg(long, default_value_t = 4)]
        coils: usize,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a Poisson-disc undersampling mask.
    Mask {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "64x64")]
        shape: String,
        #[arg(long)]
        accel: f64,
        #[arg(long, default_value_t = 12)]
        acs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one case with one method.
    Recon {
        #[command(flatten)]
        common: Common,
        /// Case directory produced by `phantom`.
        #[arg(long)]
        case: PathBuf,
        /// Mask container directory produced by `mask`.
        #[arg(long)]
        mask: PathBuf,
        /// Method name: zero_filled, cs or unrolled (with default settings),
        /// overridden by --method-config.
        #[arg(long, default_value = "zero_filled")]
        method: String,
        /// JSON file holding a full method configuration.
        #[arg(long)]
        method_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold-segment an image container.
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        /// JSON file with a list of bands; defaults to the phantom bands.
        #[arg(long)]
        bands: Option<PathBuf>,
        #[arg(long, default_value_t = false)]
        filter_components: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate metrics for given reconstruction/segmentation files.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        gt_image: PathBuf,
        #[arg(long)]
        pred_seg: PathBuf,
        #[arg(long)]
        gt_seg: PathBuf,
        /// Write the JSON row here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wilcoxon or Spearman statistics over a per-case CSV.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        csv: PathBuf,
        /// wilcoxon or spearman.
        #[arg(long)]
        test: String,
        /// Metric column (wilcoxon), default mean_dice.
        #[arg(long, default_value = "mean_dice")]
        metric: String,
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        candidate: Option<String>,
        /// Method filter for spearman.
        #[arg(long)]
        method: Option<String>,
        /// Acceleration filter.
        #[arg(long)]
        accel: Option<f64>,
        #[arg(long, default_value = "two_sided")]
        alternative: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full benchmark from a JSON config.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render aggregates and plot CSVs from an existing run directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory containing report.json.
        #[arg(long)]
        run: PathBuf,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_shape(text: &str) -> Result<Vec<usize>, String> {
    let parts: Vec<&str> = text
        .split(|c| c == 'x' || c == ',')
        .filter(|s| !s.is_empty())
        .collect();
    let dims: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if d.len() == 2 || d.len() == 3 => Ok(d),
        _ => Err(format!("cannot parse shape '{text}', expected e.g. 64x64")),
    }
}

fn parse_alternative(text: &str) -> Result<Alternative, String> {
    match text {
        "two_sided" => Ok(Alternative::TwoSided),
        "greater" => Ok(Alternative::Greater),
        "less" => Ok(Alternative::Less),
        other => Err(format!(
            "unknown alternative '{other}', expected two_sided, greater or less"
        )),
    }
}

fn apply_threads(common: &Common) {
    if let Some(n) = common.threads {
        std::env::set_var("KBENCH_THREADS", n.to_string());
    }
}

/// Usage/config failure: message to stderr, exit 2.
fn usage_err(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_image_container(dir: &Path) -> kbench_core::Result<ImageVolume> {
    use kbench_core::container::{decode_complex, read_container};
    let (meta, bytes) = read_container(dir)?;
    ImageVolume::spatial(decode_complex(&bytes, &meta.shape)?)
}

fn save_image_container(img: &ImageVolume, dir: &Path) -> kbench_core::Result<()> {
    let meta = ContainerMeta::new("image", Dtype::C64, img.shape());
    write_container(dir, &meta, &encode_complex(&img.data))
}

fn run() -> Result<ExitCode, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Phantom {
            common,
            n,
            shape,
            coils,
            out,
        } => {
            apply_threads(&common);
            let shape = parse_shape(&shape)?;
            let cases = make_dataset(n, &shape, coils, common.seed).map_err(|e| e.to_string())?;
            for case in &cases {
                save_case(case, &out.join(&case.case_id)).map_err(|e| e.to_string())?;
            }
            println!("wrote {} cases to {}", cases.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Mask {
            common,
            shape,
            accel,
            acs,
            out,
        } => {
            apply_threads(&common);
            let shape = parse_shape(&shape)?;
            if shape.len() != 2 {
                return Err("mask shape must be 2D".into());
            }
            let mask = poisson_mask((shape[0], shape[1]), accel, acs, common.seed)
                .map_err(|e| e.to_string())?;
            save_mask(&mask, &out).map_err(|e| e.to_string())?;
            let achieved = shape.iter().product::<usize>() as f64 / mask.kept_count() as f64;
            println!(
                "mask {}x{} accel {accel} achieved {achieved:.3} at {}",
                shape[0],
                shape[1],
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Recon {
            common,
            case,
            mask,
            method,
            method_config,
            out,
        } => {
            apply_threads(&common);
            let method = match method_config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                    serde_json::from_str::<MethodConfig>(&text)
                        .map_err(|e| format!("invalid method config: {e}"))?
                }
                None => match method.as_str() {
                    "zero_filled" => MethodConfig::ZeroFilled,
                    "cs" => MethodConfig::Cs(CsConfig::default()),
                    "unrolled" => MethodConfig::Unrolled(UnrolledConfig::default()),
                    other => {
                        return Err(format!(
                            "unknown method '{other}', expected zero_filled, cs or unrolled"
                        ))
                    }
                },
            };
            let case = load_case(&case).map_err(|e| e.to_string())?;
            let mask = load_mask(&mask).map_err(|e| e.to_string())?;
            let ndim = match case.full_kspace.mode {
                AcquisitionMode::TwoD => 2,
                AcquisitionMode::ThreeD => 3,
            };
            let op =
                ForwardOperator::new(mask, case.maps.clone(), ndim).map_err(|e| e.to_string())?;
            let y = apply_mask(&case.full_kspace, &op.mask).map_err(|e| e.to_string())?;
            let img = reconstruct(&method, &op, &y).map_err(|e| e.to_string())?;
            save_image_container(&img, &out).map_err(|e| e.to_string())?;
            println!("reconstructed {} -> {}", case.case_id, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Segment {
            common,
            image,
            bands,
            filter_components,
            out,
        } => {
            apply_threads(&common);
            let bands: Vec<Band> = match bands {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                    serde_json::from_str(&text).map_err(|e| format!("invalid bands: {e}"))?
                }
                None => default_bands(),
            };
            let img = load_image_container(&image).map_err(|e| e.to_string())?;
            let seg =
                threshold_segment(&img, &bands, filter_components).map_err(|e| e.to_string())?;
            save_segmentation(&seg, &out).map_err(|e| e.to_string())?;
            println!("segmented {} -> {}", image.display(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            common,
            recon,
            gt_image,
            pred_seg,
            gt_seg,
            out,
        } => {
            apply_threads(&common);
            let rec = load_image_container(&recon).map_err(|e| e.to_string())?;
            let gt = load_image_container(&gt_image).map_err(|e| e.to_string())?;
            if rec.shape() != gt.shape() {
                return Err(format!(
                    "shape mismatch between {} ({:?}) and {} ({:?})",
                    recon.display(),
                    rec.shape(),
                    gt_image.display(),
                    gt.shape()
                ));
            }
            let pred = load_segmentation(&pred_seg).map_err(|e| e.to_string())?;
            let truth = load_segmentation(&gt_seg).map_err(|e| e.to_string())?;
            let row = evaluate_case(&rec, &gt, &pred, &truth, "case", "cli", 0.0)
                .map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&row).map_err(|e| e.to_string())?;
            write_or_print(&out, &json)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats {
            common,
            csv,
            test,
            metric,
            baseline,
            candidate,
            method,
            accel,
            alternative,
            out,
        } => {
            apply_threads(&common);
            let alternative = parse_alternative(&alternative)?;
            let text = std::fs::read_to_string(&csv)
                .map_err(|e| format!("cannot read {}: {e}", csv.display()))?;
            let table = CsvTable::parse(&text)?;
            match test.as_str() {
                "wilcoxon" => {
                    let baseline =
                        baseline.ok_or("wilcoxon needs --baseline")?;
                    let candidate =
                        candidate.ok_or("wilcoxon needs --candidate")?;
                    let b = table.metric_by_case(&baseline, accel, &metric)?;
                    let c = table.metric_by_case(&candidate, accel, &metric)?;
                    let mut ids = Vec::new();
                    let mut bs = Vec::new();
                    let mut cs = Vec::new();
                    for (id, bv) in &b {
                        if let Some(cv) = c.get(id) {
                            ids.push(id.clone());
                            bs.push(*bv);
                            cs.push(*cv);
                        }
                    }
                    let sample =
                        PairedSample::new(ids, bs, cs).map_err(|e| e.to_string())?;
                    let res = wilcoxon_signed_rank(&sample, alternative)
                        .map_err(|e| e.to_string())?;
                    let median = sample.median_difference();
                    let star = significance_star(res.p_value, median, 0.01);
                    let json = serde_json::json!({
                        "test": "wilcoxon",
                        "metric": metric,
                        "baseline": baseline,
                        "candidate": candidate,
                        "alternative": alternative,
                        "n": res.m,
                        "statistic": res.statistic,
                        "p_value": res.p_value,
                        "exact": res.exact,
                        "all_zero": res.all_zero,
                        "median_difference": median,
                        "star": star,
                    });
                    write_or_print(&out, &serde_json::to_string_pretty(&json).unwrap())?;
                }
                "spearman" => {
                    let method = method.ok_or("spearman needs --method")?;
                    let xs = table.metric_by_case(&method, accel, "psnr_db")?;
                    let ys = table.metric_by_case(&method, accel, &metric)?;
                    let mut x = Vec::new();
                    let mut y = Vec::new();
                    for (id, xv) in &xs {
                        if let (true, Some(yv)) = (xv.is_finite(), ys.get(id)) {
                            x.push(*xv);
                            y.push(*yv);
                        }
                    }
                    let res = spearman(&x, &y).map_err(|e| e.to_string())?;
                    let json = serde_json::json!({
                        "test": "spearman",
                        "method": method,
                        "metric": metric,
                        "n": res.n,
                        "rho": res.rho,
                        "p_value": res.p_value,
                        "exact": res.exact,
                    });
                    write_or_print(&out, &serde_json::to_string_pretty(&json).unwrap())?;
                }
                other => return Err(format!("unknown test '{other}'")),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { common, config } => {
            apply_threads(&common);
            let text = std::fs::read_to_string(&config)
                .map_err(|e| format!("cannot read {}: {e}", config.display()))?;
            let cfg = BenchConfig::from_json(&text).map_err(|e| e.to_string())?;
            let report = run_benchmark(&cfg).map_err(|e| e.to_string())?;
            println!(
                "benchmark complete: {} rows, {} failures, report at {}",
                report.metrics.per_case.len(),
                report.failures.len(),
                cfg.output_dir.join("report.json").display()
            );
            if report.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &report.failures {
                    eprintln!(
                        "case failure: {} / {} / accel {}: {}",
                        f.case_id, f.method, f.accel, f.reason
                    );
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::Report { common, run, out } => {
            apply_threads(&common);
            let path = run.join("report.json");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let mut report: BenchReport =
                serde_json::from_str(&text).map_err(|e| format!("invalid report: {e}"))?;
            // Re-derive aggregates from the per-case rows before re-rendering.
            report.metrics = MetricsReport::from_rows(report.metrics.per_case)
                .map_err(|e| e.to_string())?;
            let dest = out.unwrap_or(run);
            write_report(&report, &dest).map_err(|e| e.to_string())?;
            println!("re-rendered report into {}", dest.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Minimal CSV reader for the per-case and scatter files.
struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or("empty csv")?
            .split(',')
            .map(|s| s.to_string())
            .collect();
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(|s| s.to_string()).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(format!(
                    "csv row {} has {} fields, header has {}",
                    i + 2,
                    row.len(),
                    header.len()
                ));
            }
        }
        Ok(CsvTable { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize, String> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("csv lacks column '{name}' (has {:?})", self.header))
    }

    /// case_id -> metric for one method, optionally filtered by accel.
    fn metric_by_case(
        &self,
        method: &str,
        accel: Option<f64>,
        metric: &str,
    ) -> Result<BTreeMap<String, f64>, String> {
        let id_col = self.col("case_id")?;
        let method_col = self.col("method")?;
        let accel_col = self.col("accel")?;
        let metric_col = self.col(metric)?;
        let mut out = BTreeMap::new();
        for row in &self.rows {
            if row[method_col] != method {
                continue;
            }
            if let Some(a) = accel {
                let ra: f64 = row[accel_col]
                    .parse()
                    .map_err(|e| format!("bad accel '{}': {e}", row[accel_col]))?;
                if ra != a {
                    continue;
                }
            }
            let raw = &row[metric_col];
            let value = if raw == "inf" {
                f64::INFINITY
            } else {
                raw.parse()
                    .map_err(|e| format!("bad {metric} value '{raw}': {e}"))?
            };
            out.insert(row[id_col].clone(), value);
        }
        if out.is_empty() {
            return Err(format!(
                "no rows for method '{method}'{}",
                accel
                    .map(|a| format!(" at accel {a}"))
                    .unwrap_or_default()
            ));
        }
        Ok(out)
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(msg) => usage_err(msg),
    }
}

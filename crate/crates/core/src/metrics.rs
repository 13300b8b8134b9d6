//! Reconstruction and segmentation quality metrics: per-class and mean Dice,
//! PSNR, and Gaussian-windowed SSIM, plus per-case report assembly.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::segment::SegmentationMap;
use crate::stats::{aggregate, AggregateResult};
use crate::volume::ImageVolume;

/// 2|P∩G| / (|P| + |G|) for one label; both sets empty scores 1.0 so a
/// correctly predicted absence is rewarded.
pub fn dice(pred: &SegmentationMap, gt: &SegmentationMap, label: u16) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("dice", pred.shape(), gt.shape()));
    }
    let mut p = 0usize;
    let mut g = 0usize;
    let mut both = 0usize;
    for (a, b) in pred.labels.iter().zip(gt.labels.iter()) {
        let ia = *a == label;
        let ib = *b == label;
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// Equal-weight mean Dice over the classes declared in the ground truth.
pub fn mean_dice(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<(BTreeMap<u16, f64>, f64)> {
    if gt.classes.is_empty() {
        return Err(Error::InvalidArgument(
            "ground truth declares no foreground classes".into(),
        ));
    }
    let mut per_class = BTreeMap::new();
    for &label in gt.classes.keys() {
        per_class.insert(label, dice(pred, gt, label)?);
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok((per_class, mean))
}

fn check_real_pair(context: &str, pred: &ArrayD<f64>, gt: &ArrayD<f64>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(context, pred.shape(), gt.shape()));
    }
    if pred.iter().chain(gt.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context.to_string()));
    }
    Ok(())
}

fn gt_range(gt: &ArrayD<f64>) -> Result<f64> {
    let max = gt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = gt.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Err(Error::InvalidArgument(
            "data range is zero: ground truth is constant".into(),
        ));
    }
    Ok(range)
}

/// Peak signal-to-noise ratio in dB; +infinity when the images are equal.
/// `data_range` defaults to max(gt) - min(gt).
pub fn psnr(pred: &ArrayD<f64>, gt: &ArrayD<f64>, data_range: Option<f64>) -> Result<f64> {
    check_real_pair("psnr", pred, gt)?;
    let range = match data_range {
        Some(r) if r > 0.0 => r,
        Some(r) => {
            return Err(Error::InvalidArgument(format!(
                "data_range must be positive, got {r}"
            )))
        }
        None => gt_range(gt)?,
    };
    let n = gt.len() as f64;
    let mse = pred
        .iter()
        .zip(gt.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

#[derive(Clone, Copy, Debug)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: None,
        }
    }
}

fn gaussian_weights(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean of the local SSIM map over all fully interior windows (valid mode),
/// with a separable Gaussian window.
pub fn ssim(pred: &ArrayD<f64>, gt: &ArrayD<f64>, params: &SsimParams) -> Result<f64> {
    check_real_pair("ssim", pred, gt)?;
    let win = params.window;
    let shape = gt.shape().to_vec();
    if shape.iter().any(|&n| n < win) {
        return Err(Error::InvalidArgument(format!(
            "image shape {shape:?} smaller than the {win}-wide ssim window"
        )));
    }
    let range = match params.data_range {
        Some(r) if r > 0.0 => r,
        Some(r) => {
            return Err(Error::InvalidArgument(format!(
                "data_range must be positive, got {r}"
            )))
        }
        None => gt_range(gt)?,
    };
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);

    let rank = shape.len();
    let w1 = gaussian_weights(win, params.sigma);
    // Flat offsets and product weights for one window placement.
    let strides: Vec<usize> = {
        let mut s = vec![1usize; rank];
        for i in (0..rank - 1).rev() {
            s[i] = s[i + 1] * shape[i + 1];
        }
        s
    };
    let mut offsets: Vec<(usize, f64)> = vec![(0, 1.0)];
    for ax in 0..rank {
        let mut next = Vec::with_capacity(offsets.len() * win);
        for &(off, w) in &offsets {
            for (i, &wi) in w1.iter().enumerate() {
                next.push((off + i * strides[ax], w * wi));
            }
        }
        offsets = next;
    }

    let x = pred.as_standard_layout();
    let y = gt.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice().expect("standard layout");

    let valid: Vec<usize> = shape.iter().map(|n| n - win + 1).collect();
    let mut origin = vec![0usize; rank];
    let mut total = 0.0;
    let mut count = 0usize;
    loop {
        let base: usize = origin.iter().zip(&strides).map(|(o, s)| o * s).sum();
        let mut mx = 0.0;
        let mut my = 0.0;
        let mut mxx = 0.0;
        let mut myy = 0.0;
        let mut mxy = 0.0;
        for &(off, w) in &offsets {
            let a = xs[base + off];
            let b = ys[base + off];
            mx += w * a;
            my += w * b;
            mxx += w * a * a;
            myy += w * b * b;
            mxy += w * a * b;
        }
        let vx = mxx - mx * mx;
        let vy = myy - my * my;
        let cxy = mxy - mx * my;
        let local = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
        total += local;
        count += 1;

        // Odometer over valid window origins.
        let mut ax = rank;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            origin[ax] += 1;
            if origin[ax] < valid[ax] {
                break;
            }
            origin[ax] = 0;
            if ax == 0 {
                return Ok(total / count as f64);
            }
        }
        if origin.iter().all(|&o| o == 0) {
            break;
        }
    }
    Ok(total / count as f64)
}

/// One evaluated (case, method, accel) triple.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub method: String,
    pub accel: f64,
    pub dice_per_class: BTreeMap<u16, f64>,
    pub mean_dice: f64,
    pub ssim: f64,
    /// None encodes an infinite PSNR (exact reconstruction).
    pub psnr_db: Option<f64>,
}

/// Computes all metrics for one case. Magnitude images are compared with the
/// ground-truth-derived data range for both PSNR and SSIM.
pub fn evaluate_case(
    recon: &ImageVolume,
    gt_img: &ImageVolume,
    pred_seg: &SegmentationMap,
    gt_seg: &SegmentationMap,
    case_id: &str,
    method: &str,
    accel: f64,
) -> Result<CaseRow> {
    if gt_img.shape() != gt_seg.shape() {
        return Err(Error::shape(
            "evaluate_case: image vs segmentation",
            gt_img.shape(),
            gt_seg.shape(),
        ));
    }
    let rm = recon.magnitude();
    let gm = gt_img.magnitude();
    let range = gt_range(&gm)?;
    let (dice_per_class, mean) = mean_dice(pred_seg, gt_seg)?;
    let s = ssim(
        &rm,
        &gm,
        &SsimParams {
            data_range: Some(range),
            ..Default::default()
        },
    )?;
    let p = psnr(&rm, &gm, Some(range))?;
    Ok(CaseRow {
        case_id: case_id.to_string(),
        method: method.to_string(),
        accel,
        dice_per_class,
        mean_dice: mean,
        ssim: s,
        psnr_db: if p.is_finite() { Some(p) } else { None },
    })
}

/// Mean/std summary for one (method, accel) cell of the report.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub accel: f64,
    pub n_cases: usize,
    pub mean_dice: AggregateResult,
    pub ssim: AggregateResult,
    /// Aggregated over finite PSNR values only.
    pub psnr_db: Option<AggregateResult>,
    pub psnr_infinite_count: usize,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub per_case: Vec<CaseRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl MetricsReport {
    /// Sorts rows by (method, accel, case_id) and computes aggregates; the
    /// result is independent of input order.
    pub fn from_rows(mut rows: Vec<CaseRow>) -> Result<Self> {
        rows.sort_by(|a, b| {
            (&a.method, &a.case_id)
                .cmp(&(&b.method, &b.case_id))
                .then(a.accel.total_cmp(&b.accel))
        });
        rows.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.accel.total_cmp(&b.accel))
                .then(a.case_id.cmp(&b.case_id))
        });
        let mut aggregates = Vec::new();
        let mut i = 0;
        while i < rows.len() {
            let mut j = i;
            while j + 1 < rows.len()
                && rows[j + 1].method == rows[i].method
                && rows[j + 1].accel == rows[i].accel
            {
                j += 1;
            }
            let cell = &rows[i..=j];
            let dices: Vec<f64> = cell.iter().map(|r| r.mean_dice).collect();
            let ssims: Vec<f64> = cell.iter().map(|r| r.ssim).collect();
            let psnrs: Vec<f64> = cell.iter().filter_map(|r| r.psnr_db).collect();
            aggregates.push(AggregateRow {
                method: rows[i].method.clone(),
                accel: rows[i].accel,
                n_cases: cell.len(),
                mean_dice: aggregate(&dices)?,
                ssim: aggregate(&ssims)?,
                psnr_db: if psnrs.is_empty() {
                    None
                } else {
                    Some(aggregate(&psnrs)?)
                },
                psnr_infinite_count: cell.len() - psnrs.len(),
            });
            i = j + 1;
        }
        Ok(MetricsReport {
            per_case: rows,
            aggregates,
        })
    }

    /// Per-case rows as CSV; the class columns are the union of labels seen.
    pub fn per_case_csv(&self) -> String {
        let mut labels: Vec<u16> = Vec::new();
        for row in &self.per_case {
            for &l in row.dice_per_class.keys() {
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
        }
        labels.sort_unstable();
        let mut out = String::from("case_id,method,accel");
        for l in &labels {
            out.push_str(&format!(",dice_{l}"));
        }
        out.push_str(",mean_dice,ssim,psnr_db\n");
        for row in &self.per_case {
            out.push_str(&format!("{},{},{}", row.case_id, row.method, row.accel));
            for l in &labels {
                match row.dice_per_class.get(l) {
                    Some(d) => out.push_str(&format!(",{d:.12}")),
                    None => out.push(','),
                }
            }
            let psnr = match row.psnr_db {
                Some(p) => format!("{p:.12}"),
                None => "inf".to_string(),
            };
            out.push_str(&format!(",{:.12},{:.12},{psnr}\n", row.mean_dice, row.ssim));
        }
        out
    }
}

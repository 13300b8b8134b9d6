//! Baseline segmentation: intensity-band thresholding with an optional
//! largest-connected-component filter, plus container persistence so
//! externally produced label maps can be evaluated with the same pipeline.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::container::{
    decode_u16, encode_u16, expect_kind, read_container, write_container, ContainerMeta, Dtype,
};
use crate::error::{Error, Result};
use crate::volume::ImageVolume;

/// Integer label map over the spatial shape. Label 0 is background and is
/// never listed in `classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    pub labels: ArrayD<u16>,
    pub classes: BTreeMap<u16, String>,
}

impl SegmentationMap {
    pub fn new(labels: ArrayD<u16>, classes: BTreeMap<u16, String>) -> Result<Self> {
        if classes.contains_key(&0) {
            return Err(Error::InvalidArgument(
                "label 0 is reserved for background".into(),
            ));
        }
        for &v in labels.iter() {
            if v != 0 && !classes.contains_key(&v) {
                return Err(Error::InvalidArgument(format!(
                    "label {v} not present in class dictionary"
                )));
            }
        }
        Ok(SegmentationMap { labels, classes })
    }

    pub fn shape(&self) -> &[usize] {
        self.labels.shape()
    }

    pub fn voxel_count(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&v| v == label).count()
    }

    /// Labels actually present in the map, background excluded.
    pub fn present_labels(&self) -> Vec<u16> {
        let mut seen: Vec<u16> = self
            .classes
            .keys()
            .copied()
            .filter(|&l| self.voxel_count(l) > 0)
            .collect();
        seen.sort_unstable();
        seen
    }
}

/// One intensity band: voxels with `lo <= |img| < hi` receive `label`.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Band {
    pub label: u16,
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

fn check_bands(bands: &[Band]) -> Result<()> {
    if bands.is_empty() {
        return Err(Error::InvalidArgument("band list is empty".into()));
    }
    for b in bands {
        if b.label == 0 {
            return Err(Error::InvalidArgument(
                "band label 0 collides with background".into(),
            ));
        }
        if !(b.lo < b.hi) {
            return Err(Error::InvalidArgument(format!(
                "band {}: lo {} must be below hi {}",
                b.label, b.lo, b.hi
            )));
        }
    }
    let mut sorted: Vec<&Band> = bands.iter().collect();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    for w in sorted.windows(2) {
        if w[1].lo < w[0].hi {
            return Err(Error::InvalidArgument(format!(
                "bands {} and {} overlap: [{}, {}) vs [{}, {})",
                w[0].label, w[1].label, w[0].lo, w[0].hi, w[1].lo, w[1].hi
            )));
        }
    }
    let mut labels: Vec<u16> = bands.iter().map(|b| b.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() != bands.len() {
        return Err(Error::InvalidArgument("duplicate band labels".into()));
    }
    Ok(())
}

/// Assigns each voxel the label of the band containing its magnitude.
/// With `filter_components` set, each label keeps only its largest
/// face-connected component (4-connectivity in 2D, 6 in 3D).
pub fn threshold_segment(
    img: &ImageVolume,
    bands: &[Band],
    filter_components: bool,
) -> Result<SegmentationMap> {
    check_bands(bands)?;
    let mag = img.magnitude();
    let mut labels = ArrayD::<u16>::zeros(IxDyn(img.shape()));
    for (v, m) in labels.iter_mut().zip(mag.iter()) {
        for b in bands {
            if *m >= b.lo && *m < b.hi {
                *v = b.label;
                break;
            }
        }
    }
    if filter_components {
        for b in bands {
            keep_largest_component(&mut labels, b.label);
        }
    }
    let classes = bands.iter().map(|b| (b.label, b.name.clone())).collect();
    SegmentationMap::new(labels, classes)
}

/// Face-neighbor offsets as flat-index deltas with boundary checks done in
/// coordinate space.
fn keep_largest_component(labels: &mut ArrayD<u16>, label: u16) {
    let shape = labels.shape().to_vec();
    let rank = shape.len();
    let strides: Vec<usize> = {
        let mut s = vec![1usize; rank];
        for i in (0..rank - 1).rev() {
            s[i] = s[i + 1] * shape[i + 1];
        }
        s
    };
    let flat = labels.as_slice_mut().expect("labels are contiguous");
    let n = flat.len();
    let mut component = vec![0u32; n]; // 0 = unvisited
    let mut best_id = 0u32;
    let mut best_size = 0usize;
    let mut next_id = 0u32;
    let mut queue = VecDeque::new();

    let coords = |mut i: usize| -> Vec<usize> {
        let mut c = vec![0usize; rank];
        for ax in 0..rank {
            c[ax] = i / strides[ax];
            i %= strides[ax];
        }
        c
    };

    for start in 0..n {
        if flat[start] != label || component[start] != 0 {
            continue;
        }
        next_id += 1;
        let id = next_id;
        let mut size = 0usize;
        component[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let c = coords(i);
            for ax in 0..rank {
                if c[ax] + 1 < shape[ax] {
                    let j = i + strides[ax];
                    if flat[j] == label && component[j] == 0 {
                        component[j] = id;
                        queue.push_back(j);
                    }
                }
                if c[ax] > 0 {
                    let j = i - strides[ax];
                    if flat[j] == label && component[j] == 0 {
                        component[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        if size > best_size {
            best_size = size;
            best_id = id;
        }
    }
    if next_id > 1 {
        for i in 0..n {
            if flat[i] == label && component[i] != best_id {
                flat[i] = 0;
            }
        }
    }
}

pub fn save_segmentation(map: &SegmentationMap, dir: &Path) -> Result<()> {
    let mut meta = ContainerMeta::new("segmentation", Dtype::U16, map.shape());
    meta.classes = Some(map.classes.clone());
    write_container(dir, &meta, &encode_u16(&map.labels))
}

pub fn load_segmentation(dir: &Path) -> Result<SegmentationMap> {
    let (meta, bytes) = read_container(dir)?;
    expect_kind(dir, &meta, "segmentation")?;
    let labels = decode_u16(&bytes, &meta.shape)?;
    let classes = meta.classes.unwrap_or_default();
    for &v in labels.iter() {
        if v != 0 && !classes.contains_key(&v) {
            return Err(Error::container(
                dir,
                format!("label {v} not declared in class dictionary"),
            ));
        }
    }
    SegmentationMap::new(labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn band(label: u16, lo: f64, hi: f64) -> Band {
        Band {
            label,
            name: format!("class{label}"),
            lo,
            hi,
        }
    }

    fn image_from(vals: ArrayD<f64>) -> ImageVolume {
        ImageVolume::from_real(vals).unwrap()
    }

    #[test]
    fn all_zero_image_is_background() {
        let img = image_from(ArrayD::zeros(IxDyn(&[8, 8])));
        let bands = vec![band(1, 0.2, 0.5), band(2, 0.5, 0.9)];
        let seg = threshold_segment(&img, &bands, false).unwrap();
        assert!(seg.labels.iter().all(|&v| v == 0));
    }

    #[test]
    fn bands_pick_up_exact_intensities() {
        let mut vals = ArrayD::zeros(IxDyn(&[4, 4]));
        vals[[0, 0]] = 0.3;
        vals[[1, 1]] = 0.7;
        vals[[2, 2]] = 0.95;
        let img = image_from(vals);
        let bands = vec![band(1, 0.25, 0.35), band(2, 0.65, 0.75)];
        let seg = threshold_segment(&img, &bands, false).unwrap();
        assert_eq!(seg.labels[[0, 0]], 1);
        assert_eq!(seg.labels[[1, 1]], 2);
        assert_eq!(seg.labels[[2, 2]], 0); // outside every band
        assert_eq!(seg.voxel_count(1), 1);
        assert_eq!(seg.voxel_count(2), 1);
    }

    #[test]
    fn band_order_is_irrelevant() {
        let mut vals = ArrayD::zeros(IxDyn(&[6, 6]));
        for (i, v) in vals.iter_mut().enumerate() {
            *v = (i as f64) / 36.0;
        }
        let img = image_from(vals);
        let a = vec![band(1, 0.1, 0.3), band(2, 0.3, 0.6), band(3, 0.6, 0.9)];
        let mut b = a.clone();
        b.reverse();
        let sa = threshold_segment(&img, &a, false).unwrap();
        let sb = threshold_segment(&img, &b, false).unwrap();
        assert_eq!(sa.labels, sb.labels);
    }

    #[test]
    fn invalid_bands_rejected() {
        let img = image_from(ArrayD::zeros(IxDyn(&[4, 4])));
        assert!(threshold_segment(&img, &[], false).is_err());
        assert!(threshold_segment(&img, &[band(1, 0.5, 0.5)], false).is_err());
        assert!(threshold_segment(&img, &[band(0, 0.1, 0.2)], false).is_err());
        let overlapping = vec![band(1, 0.1, 0.4), band(2, 0.3, 0.6)];
        assert!(threshold_segment(&img, &overlapping, false).is_err());
        let dup = vec![band(1, 0.1, 0.2), band(1, 0.3, 0.4)];
        assert!(threshold_segment(&img, &dup, false).is_err());
    }

    #[test]
    fn component_filter_keeps_largest_only() {
        // A 3-voxel blob and a lone voxel of the same label.
        let mut vals = ArrayD::zeros(IxDyn(&[8, 8]));
        vals[[1, 1]] = 0.5;
        vals[[1, 2]] = 0.5;
        vals[[2, 1]] = 0.5;
        vals[[6, 6]] = 0.5;
        let img = image_from(vals);
        let bands = vec![band(1, 0.4, 0.6)];
        let plain = threshold_segment(&img, &bands, false).unwrap();
        assert_eq!(plain.voxel_count(1), 4);
        let filtered = threshold_segment(&img, &bands, true).unwrap();
        assert_eq!(filtered.voxel_count(1), 3);
        assert_eq!(filtered.labels[[6, 6]], 0);
        // The filter never adds voxels.
        for (a, b) in filtered.labels.iter().zip(plain.labels.iter()) {
            assert!(*a == 0 || a == b);
        }
    }

    #[test]
    fn component_filter_3d_connectivity() {
        // Two voxels touching only diagonally are separate components.
        let mut vals = ArrayD::zeros(IxDyn(&[4, 4, 4]));
        vals[[1, 1, 1]] = 0.5;
        vals[[2, 2, 2]] = 0.5;
        vals[[1, 1, 2]] = 0.5; // face-connected to the first
        let img = image_from(vals);
        let seg = threshold_segment(&img, &[band(1, 0.4, 0.6)], true).unwrap();
        assert_eq!(seg.voxel_count(1), 2);
        assert_eq!(seg.labels[[2, 2, 2]], 0);
    }

    #[test]
    fn magnitude_drives_banding_for_complex_input() {
        let mut vals = ArrayD::from_elem(IxDyn(&[2, 2]), Complex64::new(0.0, 0.0));
        vals[[0, 0]] = Complex64::new(0.3, 0.4); // magnitude 0.5
        let img = ImageVolume::spatial(vals).unwrap();
        let seg = threshold_segment(&img, &[band(1, 0.45, 0.55)], false).unwrap();
        assert_eq!(seg.labels[[0, 0]], 1);
    }

    #[test]
    fn container_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = ArrayD::<u16>::zeros(IxDyn(&[8, 8]));
        labels[[2, 3]] = 1;
        labels[[5, 5]] = 2;
        let classes: BTreeMap<u16, String> =
            [(1, "a".to_string()), (2, "b".to_string())].into();
        let map = SegmentationMap::new(labels, classes).unwrap();
        let p = dir.path().join("seg");
        save_segmentation(&map, &p).unwrap();
        let back = load_segmentation(&p).unwrap();
        assert_eq!(back, map);

        // Undeclared label value is rejected at load.
        let mut meta = ContainerMeta::new("segmentation", Dtype::U16, map.shape());
        meta.classes = Some([(1, "a".to_string())].into());
        let q = dir.path().join("bad");
        write_container(&q, &meta, &encode_u16(&map.labels)).unwrap();
        let err = load_segmentation(&q).unwrap_err();
        assert!(err.to_string().contains("label 2"), "{err}");
    }
}

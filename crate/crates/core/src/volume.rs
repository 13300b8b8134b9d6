//! Core array types: spatial/frequency images and multi-coil k-space.

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Which domain an array currently lives in. Flips on every transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Spatial,
    Frequency,
}

/// Whether k-space was acquired slice-by-slice (2D transforms per slice)
/// or as a full volume (3D transform).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AcquisitionMode {
    #[serde(rename = "2D")]
    TwoD,
    #[serde(rename = "3D")]
    ThreeD,
}

impl AcquisitionMode {
    pub fn fft_ndim(self) -> usize {
        match self {
            AcquisitionMode::TwoD => 2,
            AcquisitionMode::ThreeD => 3,
        }
    }
}

/// Complex image or k-space slab over 2 or 3 spatial axes.
#[derive(Clone, Debug)]
pub struct ImageVolume {
    pub data: ArrayD<Complex64>,
    pub domain: Domain,
}

impl ImageVolume {
    pub fn new(data: ArrayD<Complex64>, domain: Domain) -> Result<Self> {
        if data.shape().iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "empty axis in shape {:?}",
                data.shape()
            )));
        }
        let vol = ImageVolume { data, domain };
        vol.check_finite("ImageVolume::new")?;
        Ok(vol)
    }

    pub fn spatial(data: ArrayD<Complex64>) -> Result<Self> {
        Self::new(data, Domain::Spatial)
    }

    pub fn frequency(data: ArrayD<Complex64>) -> Result<Self> {
        Self::new(data, Domain::Frequency)
    }

    pub fn from_real(data: ArrayD<f64>) -> Result<Self> {
        Self::spatial(data.mapv(|x| Complex64::new(x, 0.0)))
    }

    pub fn zeros(shape: &[usize], domain: Domain) -> Self {
        ImageVolume {
            data: ArrayD::zeros(IxDyn(shape)),
            domain,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn rank(&self) -> usize {
        self.data.ndim()
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite(context.to_string()));
        }
        Ok(())
    }

    /// Voxelwise magnitude as a real array.
    pub fn magnitude(&self) -> ArrayD<f64> {
        self.data.mapv(|c| c.norm())
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Multi-coil complex frequency-domain measurements. Axis 0 is the coil axis.
#[derive(Clone, Debug)]
pub struct KSpaceData {
    pub data: ArrayD<Complex64>,
    pub mode: AcquisitionMode,
}

impl KSpaceData {
    pub fn new(data: ArrayD<Complex64>, mode: AcquisitionMode) -> Result<Self> {
        if data.ndim() < 2 {
            return Err(Error::InvalidArgument(
                "k-space must have a coil axis plus spatial axes".into(),
            ));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("KSpaceData::new".into()));
        }
        Ok(KSpaceData { data, mode })
    }

    pub fn coils(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn spatial_shape(&self) -> &[usize] {
        &self.data.shape()[1..]
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Complex inner product sum(conj(a) * b).
pub fn inner_product<'a, I, J>(a: I, b: J) -> Complex64
where
    I: IntoIterator<Item = &'a Complex64>,
    J: IntoIterator<Item = &'a Complex64>,
{
    a.into_iter()
        .zip(b)
        .map(|(x, y)| x.conj() * y)
        .sum()
}

use crate::error::{ensure_arg, ensure_dims, Error, Result};

/// Dense 4D array laid out with `b` fastest, then `k`, `h`, and `n` slowest.
///
/// Spacing is `(mm, mm, mm, s)`; the origin is the physical position of voxel
/// `(0, 0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume4D {
    dims: [usize; 4],
    spacing: [f64; 4],
    origin: [f64; 3],
    data: Vec<f64>,
}

impl Volume4D {
    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        check_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self {
            dims,
            spacing: [1.0; 4],
            origin: [0.0; 3],
            data: vec![0.0; len],
        })
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        ensure_dims!(
            data.len() == len,
            "data length {} does not match dims {:?}",
            data.len(),
            dims
        );
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite value at index {pos}")));
        }
        Ok(Self {
            dims,
            spacing: [1.0; 4],
            origin: [0.0; 3],
            data,
        })
    }

    pub fn with_spacing(mut self, spacing: [f64; 4]) -> Result<Self> {
        ensure_arg!(
            spacing.iter().all(|s| s.is_finite() && *s > 0.0),
            "spacing must be strictly positive, got {spacing:?}"
        );
        self.spacing = spacing;
        Ok(self)
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Result<Self> {
        ensure_arg!(
            origin.iter().all(|o| o.is_finite()),
            "origin must be finite, got {origin:?}"
        );
        self.origin = origin;
        Ok(self)
    }

    /// A zero volume sharing this volume's shape, spacing and origin.
    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            data: vec![0.0; self.data.len()],
        }
    }

    /// Same shape and metadata, new payload.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Ok(Self::from_vec(self.dims, data)?
            .with_spacing(self.spacing)?
            .with_origin(self.origin)?)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2]]
    }

    pub fn n_timepoints(&self) -> usize {
        self.dims[3]
    }

    pub fn spacing(&self) -> [f64; 4] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, k: usize, h: usize, n: usize) -> usize {
        let [nb, nk, nh, _] = self.dims;
        b + nb * (k + nk * (h + nh * n))
    }

    #[inline]
    pub fn get(&self, b: usize, k: usize, h: usize, n: usize) -> f64 {
        self.data[self.index(b, k, h, n)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, k: usize, h: usize, n: usize, value: f64) {
        let i = self.index(b, k, h, n);
        self.data[i] = value;
    }

    pub fn voxels_per_volume(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Contiguous storage of timepoint `n`.
    pub fn volume(&self, n: usize) -> &[f64] {
        let len = self.voxels_per_volume();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn volume_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.voxels_per_volume();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn volume3d(&self, n: usize) -> Volume3D {
        Volume3D {
            dims: self.spatial_dims(),
            spacing: [self.spacing[0], self.spacing[1], self.spacing[2]],
            data: self.volume(n).to_vec(),
        }
    }

    /// Voxel-wise mean over time.
    pub fn temporal_mean(&self) -> Volume3D {
        let nvox = self.voxels_per_volume();
        let nt = self.dims[3] as f64;
        let mut data = vec![0.0; nvox];
        for n in 0..self.dims[3] {
            for (acc, v) in data.iter_mut().zip(self.volume(n)) {
                *acc += v;
            }
        }
        data.iter_mut().for_each(|v| *v /= nt);
        Volume3D {
            dims: self.spatial_dims(),
            spacing: [self.spacing[0], self.spacing[1], self.spacing[2]],
            data,
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense 3D array, `b` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        ensure_arg!(dims.iter().all(|&d| d >= 1), "dims must be >= 1, got {dims:?}");
        ensure_dims!(
            data.len() == dims.iter().product::<usize>(),
            "data length {} does not match dims {:?}",
            data.len(),
            dims
        );
        Ok(Self {
            dims,
            spacing: [1.0; 3],
            data,
        })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            spacing: [1.0; 3],
            data: vec![0.0; dims.iter().product()],
        }
    }

    #[inline]
    pub fn index(&self, b: usize, k: usize, h: usize) -> usize {
        b + self.dims[0] * (k + self.dims[1] * h)
    }

    #[inline]
    pub fn get(&self, b: usize, k: usize, h: usize) -> f64 {
        self.data[self.index(b, k, h)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn check_dims(dims: &[usize; 4]) -> Result<()> {
    ensure_arg!(
        dims.iter().all(|&d| d >= 1),
        "all four dimensions must be >= 1, got {dims:?}"
    );
    Ok(())
}

/// Plain dot product with a fixed left-to-right accumulation order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

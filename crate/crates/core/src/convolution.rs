//! Convolution as an inner product with a sparse compounded filter tensor.
//!
//! For a filter of size `k_1 × ... × k_r` sliding with strides
//! `(s_1, ..., s_r)` over a tensor with dims `(n_1, ..., n_r)`, the
//! compounded filter is the order-`2r` tensor of dims
//! `(n̄_1, ..., n̄_r, n_1, ..., n_r)` holding filter coefficient `j` at
//! `(1 + i, j + s·i)` for every output position `i`. Convolution is then
//! `F ⋆ T = F(F) ⊙_r T`, and the filter-independent derivative of `F(F)`
//! with respect to the filter is the 0/1 tensor built by [`filter_gradient`].

use crate::error::{Error, Result};
use crate::tensor::{flat_offset, unravel, volume, DenseTensor, SparseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Valid,
    /// Embed the input in zeros so the output keeps the input dims.
    Zero,
}

/// Filter array, strides and padding mode of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub filter: DenseTensor,
    pub strides: Vec<usize>,
    pub padding: Padding,
}

impl FilterSpec {
    pub fn new(filter: DenseTensor, strides: Vec<usize>, padding: Padding) -> Result<Self> {
        if filter.order() == 0 {
            return Err(Error::Geometry("filter must have order >= 1".into()));
        }
        if strides.len() != filter.order() {
            return Err(Error::Geometry(format!(
                "{} strides given for an order-{} filter",
                strides.len(),
                filter.order()
            )));
        }
        if strides.contains(&0) {
            return Err(Error::Geometry(format!("strides {:?} must be >= 1", strides)));
        }
        Ok(Self {
            filter,
            strides,
            padding,
        })
    }

    /// Unit-stride valid convolution with the given filter.
    pub fn valid(filter: DenseTensor) -> Self {
        let strides = vec![1; filter.order()];
        Self {
            filter,
            strides,
            padding: Padding::Valid,
        }
    }

    pub fn kernel_dims(&self) -> &[usize] {
        self.filter.dims()
    }

    pub fn order(&self) -> usize {
        self.filter.order()
    }

    pub fn geometry(&self, input_dims: &[usize]) -> Result<ConvGeometry> {
        ConvGeometry::new(input_dims, self.kernel_dims(), &self.strides, self.padding)
    }
}

/// Output length of a valid convolution along each order:
/// `n̄ = ⌊(n − k)/s⌋ + 1`.
pub fn output_dims(n: &[usize], k: &[usize], s: &[usize]) -> Result<Vec<usize>> {
    if n.len() != k.len() || n.len() != s.len() {
        return Err(Error::Geometry(format!(
            "input dims {:?}, kernel {:?} and strides {:?} differ in order",
            n, k, s
        )));
    }
    n.iter()
        .zip(k)
        .zip(s)
        .enumerate()
        .map(|(axis, ((&n, &k), &s))| {
            if k == 0 || s == 0 {
                Err(Error::Geometry(format!(
                    "axis {}: kernel {} and stride {} must be positive",
                    axis + 1,
                    k,
                    s
                )))
            } else if k > n {
                Err(Error::Geometry(format!(
                    "axis {}: kernel {} exceeds input dimension {}",
                    axis + 1,
                    k,
                    n
                )))
            } else {
                Ok((n - k) / s + 1)
            }
        })
        .collect()
}

/// Zero-padded dims `n* = (n − 1)s + k` and offsets `g = ⌈(n* − n)/2⌉`.
fn padding_geometry(n: &[usize], k: &[usize], s: &[usize]) -> (Vec<usize>, Vec<usize>) {
    n.iter()
        .zip(k)
        .zip(s)
        .map(|((&n, &k), &s)| {
            let padded = (n - 1) * s + k;
            (padded, (padded - n).div_ceil(2))
        })
        .unzip()
}

/// Resolved dimension bookkeeping for one convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input_dims: Vec<usize>,
    /// Dims the filter slides over (`n*` under zero padding, else `n`).
    pub padded_dims: Vec<usize>,
    /// Embedding offsets `g_i` of the input inside the padded tensor.
    pub offsets: Vec<usize>,
    pub output_dims: Vec<usize>,
    pub kernel_dims: Vec<usize>,
    pub strides: Vec<usize>,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(
        input_dims: &[usize],
        kernel_dims: &[usize],
        strides: &[usize],
        padding: Padding,
    ) -> Result<Self> {
        if input_dims.len() != kernel_dims.len() || strides.len() != kernel_dims.len() {
            return Err(Error::Geometry(format!(
                "order-{} filter cannot convolve an order-{} tensor",
                kernel_dims.len(),
                input_dims.len()
            )));
        }
        if input_dims.contains(&0) {
            return Err(Error::Geometry(format!(
                "input dims {:?} must be positive",
                input_dims
            )));
        }
        let (padded_dims, offsets) = match padding {
            Padding::Valid => (input_dims.to_vec(), vec![0; input_dims.len()]),
            Padding::Zero => padding_geometry(input_dims, kernel_dims, strides),
        };
        let output_dims = output_dims(&padded_dims, kernel_dims, strides)?;
        Ok(Self {
            input_dims: input_dims.to_vec(),
            padded_dims,
            offsets,
            output_dims,
            kernel_dims: kernel_dims.to_vec(),
            strides: strides.to_vec(),
            padding,
        })
    }

    /// Applies this geometry's padding to a tensor whose leading orders have
    /// `input_dims`. Trailing orders (a sample index) are left unpadded.
    pub fn pad(&self, t: &DenseTensor) -> Result<DenseTensor> {
        let q = self.input_dims.len();
        if t.order() < q || t.dims()[..q] != self.input_dims[..] {
            return Err(Error::Geometry(format!(
                "tensor dims {:?} do not match convolution input dims {:?}",
                t.dims(),
                self.input_dims
            )));
        }
        match self.padding {
            Padding::Valid => Ok(t.clone()),
            Padding::Zero => {
                let extra = &t.dims()[q..];
                let dims = [self.padded_dims.as_slice(), extra].concat();
                let offsets = [self.offsets.as_slice(), &vec![0; extra.len()]].concat();
                t.embed(&dims, &offsets)
            }
        }
    }

    /// Adjoint of [`ConvGeometry::pad`] on the leading orders: crops the
    /// padded block back to `input_dims`, keeping any trailing orders whole.
    pub fn unpad(&self, t: &DenseTensor) -> Result<DenseTensor> {
        if self.padding == Padding::Valid {
            return Ok(t.clone());
        }
        let q = self.input_dims.len();
        let ranges: Vec<_> = self
            .offsets
            .iter()
            .zip(&self.input_dims)
            .map(|(&g, &n)| crate::tensor::IndexRange { lo: g + 1, hi: g + n })
            .chain(t.dims()[q..].iter().map(|&n| crate::tensor::IndexRange::full(n)))
            .collect();
        t.subarray(&ranges)
    }
}

/// Zero-pads `t` so that convolving with `spec`'s filter and strides
/// preserves its dims.
pub fn zero_pad(t: &DenseTensor, spec: &FilterSpec) -> Result<DenseTensor> {
    let geom = ConvGeometry::new(t.dims(), spec.kernel_dims(), &spec.strides, Padding::Zero)?;
    geom.pad(t)
}

/// Sparsity pattern of a compounded filter for one geometry.
///
/// The pattern depends only on dims and strides; [`CompoundedPattern::materialize`]
/// fills it with the current filter coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundedPattern {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    filter_offsets: Vec<usize>,
}

impl CompoundedPattern {
    pub fn new(geom: &ConvGeometry) -> Self {
        let q = geom.kernel_dims.len();
        let n_in = volume(&geom.padded_dims);
        let n_k = volume(&geom.kernel_dims);
        let n_out = volume(&geom.output_dims);
        let mut offsets = Vec::with_capacity(n_out * n_k);
        let mut filter_offsets = Vec::with_capacity(n_out * n_k);
        let (mut i, mut j, mut src) = (vec![0; q], vec![0; q], vec![0; q]);
        // Output positions in row-major order, then filter entries in
        // row-major order: the resulting flat offsets are strictly increasing.
        for out_off in 0..n_out {
            unravel(&geom.output_dims, out_off, &mut i);
            for k_off in 0..n_k {
                unravel(&geom.kernel_dims, k_off, &mut j);
                for axis in 0..q {
                    src[axis] = j[axis] + geom.strides[axis] * i[axis];
                }
                offsets.push(out_off * n_in + flat_offset(&geom.padded_dims, &src));
                filter_offsets.push(k_off);
            }
        }
        Self {
            dims: [geom.output_dims.as_slice(), geom.padded_dims.as_slice()].concat(),
            offsets,
            filter_offsets,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nnz(&self) -> usize {
        self.offsets.len()
    }

    /// `F(filter)` as a sparse tensor; zero coefficients stay as structural entries.
    pub fn materialize(&self, filter: &DenseTensor) -> SparseTensor {
        let values = filter.data();
        let entries = self
            .offsets
            .iter()
            .zip(&self.filter_offsets)
            .map(|(&off, &k)| (off, values[k]))
            .collect();
        SparseTensor::from_sorted_offsets(self.dims.clone(), entries)
    }
}

/// Compounded filter `F(F)` for a tensor of `input_dims`.
///
/// Under zero padding the trailing block indexes the padded input.
pub fn compounded_filter(spec: &FilterSpec, input_dims: &[usize]) -> Result<SparseTensor> {
    let geom = spec.geometry(input_dims)?;
    Ok(CompoundedPattern::new(&geom).materialize(&spec.filter))
}

/// `F ⋆ T = F(F) ⊙_r T`, padding `T` first when requested.
pub fn convolve(spec: &FilterSpec, t: &DenseTensor) -> Result<DenseTensor> {
    let geom = spec.geometry(t.dims())?;
    let padded = geom.pad(t)?;
    let w = CompoundedPattern::new(&geom).materialize(&spec.filter);
    w.inner(&padded, spec.order())
}

/// Constant derivative of `F(X)` with respect to the filter entries.
///
/// Dims are `(k_1, ..., k_q, n̄_1, ..., n̄_q, n_1, ..., n_q)` with a 1 at
/// `(t, 1 + i, t + s·i)`: filter entry `t` feeds output position `i` from
/// input position `t + s·i`.
pub fn filter_gradient(spec: &FilterSpec, input_dims: &[usize]) -> Result<SparseTensor> {
    let geom = spec.geometry(input_dims)?;
    Ok(filter_gradient_for(&geom))
}

pub(crate) fn filter_gradient_for(geom: &ConvGeometry) -> SparseTensor {
    let q = geom.kernel_dims.len();
    let n_in = volume(&geom.padded_dims);
    let n_out = volume(&geom.output_dims);
    let n_k = volume(&geom.kernel_dims);
    let block = n_out * n_in;
    let mut entries = Vec::with_capacity(n_out * n_k);
    let (mut t, mut i, mut src) = (vec![0; q], vec![0; q], vec![0; q]);
    for k_off in 0..n_k {
        unravel(&geom.kernel_dims, k_off, &mut t);
        for out_off in 0..n_out {
            unravel(&geom.output_dims, out_off, &mut i);
            for axis in 0..q {
                src[axis] = t[axis] + geom.strides[axis] * i[axis];
            }
            let off = k_off * block + out_off * n_in + flat_offset(&geom.padded_dims, &src);
            entries.push((off, 1.0));
        }
    }
    let dims = [
        geom.kernel_dims.as_slice(),
        geom.output_dims.as_slice(),
        geom.padded_dims.as_slice(),
    ]
    .concat();
    SparseTensor::from_sorted_offsets(dims, entries)
}

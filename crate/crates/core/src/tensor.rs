//! Coordinate-level real tensors.
//!
//! A tensor of order `q` is stored as its dimension list `(n_1, ..., n_q)`
//! plus a row-major coordinate array (last index varies fastest). Public
//! index tuples are 1-based; the flat storage offset is 0-based.
//!
//! The central operation is the `r`-order inner product `T ⊙_r S`, which
//! contracts the trailing `r` orders of `T` against the leading `r` orders
//! of `S`. Scalars are order-0 tensors with a single coordinate, so a full
//! contraction of two equal-shape tensors needs no special casing.

use crate::error::{Error, Result};

/// Product of a dimension list. The empty product is 1 (order-0 scalar).
pub fn volume(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Row-major flat offset of a 0-based index tuple.
pub(crate) fn flat_offset(dims: &[usize], index0: &[usize]) -> usize {
    index0
        .iter()
        .zip(dims)
        .fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Inverse of [`flat_offset`], writing the 0-based tuple into `out`.
pub(crate) fn unravel(dims: &[usize], mut offset: usize, out: &mut [usize]) {
    for (slot, &n) in out.iter_mut().zip(dims).rev() {
        *slot = offset % n;
        offset /= n;
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if let Some(axis) = dims.iter().position(|&n| n == 0) {
        return Err(Error::Shape(format!(
            "dimension {} of {:?} is zero",
            axis + 1,
            dims
        )));
    }
    Ok(())
}

/// Converts a 1-based public index tuple to 0-based, checking bounds.
fn to_zero_based(dims: &[usize], index: &[usize]) -> Option<Vec<usize>> {
    if index.len() != dims.len() {
        return None;
    }
    index
        .iter()
        .zip(dims)
        .map(|(&i, &n)| (1..=n).contains(&i).then(|| i - 1))
        .collect()
}

/// Dense real tensor of arbitrary order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        if data.len() != volume(&dims) {
            return Err(Error::Shape(format!(
                "{} coordinates supplied for dims {:?} (expected {})",
                data.len(),
                dims,
                volume(&dims)
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![value; volume(dims)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![value],
        }
    }

    /// Order-1 tensor holding `values`.
    pub fn vector(values: &[f64]) -> Self {
        Self {
            dims: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// Builds a tensor by evaluating `f` at every 1-based index tuple in
    /// row-major order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut index = vec![0; dims.len()];
        let data = (0..volume(dims))
            .map(|off| {
                unravel(dims, off, &mut index);
                index.iter_mut().for_each(|i| *i += 1);
                f(&index)
            })
            .collect();
        Self {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
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

    /// Value of an order-0 tensor (or the first coordinate otherwise).
    pub fn to_scalar(&self) -> f64 {
        self.data[0]
    }

    /// Coordinate at a 1-based index tuple.
    pub fn get(&self, index: &[usize]) -> Option<f64> {
        let index0 = to_zero_based(&self.dims, index)?;
        Some(self.data[flat_offset(&self.dims, &index0)])
    }

    /// Sets the coordinate at a 1-based index tuple.
    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let index0 = to_zero_based(&self.dims, index).ok_or_else(|| {
            Error::Shape(format!("index {:?} outside dims {:?}", index, self.dims))
        })?;
        let off = flat_offset(&self.dims, &index0);
        self.data[off] = value;
        Ok(())
    }

    /// Same coordinates viewed with new dims of equal volume.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Coordinate-wise combination of two equal-shape tensors.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::mismatch(&self.dims, &other.dims));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Coordinate-wise (Hadamard) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|x| alpha * x)
    }

    /// Full contraction of two equal-shape tensors.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::mismatch(&self.dims, &other.dims));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest absolute coordinate difference between equal-shape tensors.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::mismatch(&self.dims, &other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `self ⊙_r other` for dense operands.
    pub fn inner(&self, other: &DenseTensor, r: usize) -> Result<DenseTensor> {
        let (left, shared, right) = split_contraction(&self.dims, &other.dims, r)?;
        let (a_len, c_len, b_len) = (volume(&left), volume(&shared), volume(&right));
        let mut out = vec![0.0; a_len * b_len];
        for a in 0..a_len {
            let row = &self.data[a * c_len..(a + 1) * c_len];
            let dst = &mut out[a * b_len..(a + 1) * b_len];
            for (c, &t) in row.iter().enumerate() {
                let src = &other.data[c * b_len..(c + 1) * b_len];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += t * s;
                }
            }
        }
        Ok(DenseTensor {
            dims: [left, right].concat(),
            data: out,
        })
    }

    /// `self ⊙_r other` where the right operand is sparse.
    pub fn inner_sparse(&self, other: &SparseTensor, r: usize) -> Result<DenseTensor> {
        let (left, shared, right) = split_contraction(&self.dims, &other.dims, r)?;
        let (a_len, c_len, b_len) = (volume(&left), volume(&shared), volume(&right));
        let mut out = vec![0.0; a_len * b_len];
        for &(off, v) in &other.entries {
            let (c, b) = (off / b_len, off % b_len);
            for a in 0..a_len {
                out[a * b_len + b] += self.data[a * c_len + c] * v;
            }
        }
        Ok(DenseTensor {
            dims: [left, right].concat(),
            data: out,
        })
    }

    /// Sub-array `[T]_{k_1:h_1, ..., k_q:h_q}` with 1-based inclusive ranges.
    pub fn subarray(&self, ranges: &[IndexRange]) -> Result<DenseTensor> {
        if ranges.len() != self.order() {
            return Err(Error::Shape(format!(
                "{} ranges supplied for a tensor of order {}",
                ranges.len(),
                self.order()
            )));
        }
        for (axis, (range, &n)) in ranges.iter().zip(&self.dims).enumerate() {
            if range.hi > n {
                return Err(Error::Range {
                    axis: axis + 1,
                    lo: range.lo,
                    hi: range.hi,
                    len: n,
                });
            }
        }
        let dims: Vec<usize> = ranges.iter().map(IndexRange::len).collect();
        let mut src = vec![0; dims.len()];
        let mut index = vec![0; dims.len()];
        let data = (0..volume(&dims))
            .map(|off| {
                unravel(&dims, off, &mut index);
                for ((s, &j), range) in src.iter_mut().zip(&index).zip(ranges) {
                    *s = j + range.lo - 1;
                }
                self.data[flat_offset(&self.dims, &src)]
            })
            .collect();
        Ok(DenseTensor { dims, data })
    }

    /// Places `self` inside a zero tensor of `dims`, shifted by `offsets`
    /// along each order.
    pub fn embed(&self, dims: &[usize], offsets: &[usize]) -> Result<DenseTensor> {
        if dims.len() != self.order() || offsets.len() != self.order() {
            return Err(Error::Shape(format!(
                "cannot embed order-{} tensor into dims {:?}",
                self.order(),
                dims
            )));
        }
        for ((&n, &big), &g) in self.dims.iter().zip(dims).zip(offsets) {
            if n + g > big {
                return Err(Error::Shape(format!(
                    "dims {:?} at offsets {:?} do not fit in {:?}",
                    self.dims, offsets, dims
                )));
            }
        }
        let mut out = DenseTensor::zeros(dims);
        let mut index = vec![0; self.order()];
        for (off, &v) in self.data.iter().enumerate() {
            unravel(&self.dims, off, &mut index);
            for (i, &g) in index.iter_mut().zip(offsets) {
                *i += g;
            }
            out.data[flat_offset(dims, &index)] = v;
        }
        Ok(out)
    }

    /// Slice `j` (1-based) along the trailing order.
    pub fn slice_last(&self, j: usize) -> Result<DenseTensor> {
        let (&p, head) = self
            .dims
            .split_last()
            .ok_or_else(|| Error::Shape("cannot slice an order-0 tensor".into()))?;
        if j == 0 || j > p {
            return Err(Error::Range {
                axis: self.order(),
                lo: j,
                hi: j,
                len: p,
            });
        }
        let data = self.data.iter().skip(j - 1).step_by(p).copied().collect();
        Ok(DenseTensor {
            dims: head.to_vec(),
            data,
        })
    }
}

/// Splits `(dims_t, dims_s)` for `T ⊙_r S` into (free left, shared, free right).
fn split_contraction(
    dims_t: &[usize],
    dims_s: &[usize],
    r: usize,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if r == 0 {
        return Err(Error::Order { r, order: 0 });
    }
    for order in [dims_t.len(), dims_s.len()] {
        if r > order {
            return Err(Error::Order { r, order });
        }
    }
    let (left, shared_t) = dims_t.split_at(dims_t.len() - r);
    let (shared_s, right) = dims_s.split_at(r);
    if shared_t != shared_s {
        return Err(Error::mismatch(shared_t, shared_s));
    }
    Ok((left.to_vec(), shared_t.to_vec(), right.to_vec()))
}

/// Tensor product `a ⊗ b`: order adds, dims concatenate.
pub fn tensor_product(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let data = a
        .data
        .iter()
        .flat_map(|&x| b.data.iter().map(move |&y| x * y))
        .collect();
    DenseTensor {
        dims: [a.dims.as_slice(), b.dims.as_slice()].concat(),
        data,
    }
}

/// Left operand of an inner product, which may be dense or sparse.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Dense(&'a DenseTensor),
    Sparse(&'a SparseTensor),
}

impl<'a> From<&'a DenseTensor> for Operand<'a> {
    fn from(t: &'a DenseTensor) -> Self {
        Operand::Dense(t)
    }
}

impl<'a> From<&'a SparseTensor> for Operand<'a> {
    fn from(t: &'a SparseTensor) -> Self {
        Operand::Sparse(t)
    }
}

/// `t ⊙_r s`: sum over the `r` shared indices of products of coordinates.
pub fn inner_product_r<'a>(
    t: impl Into<Operand<'a>>,
    s: &DenseTensor,
    r: usize,
) -> Result<DenseTensor> {
    match t.into() {
        Operand::Dense(t) => t.inner(s, r),
        Operand::Sparse(t) => t.inner(s, r),
    }
}

/// Inclusive 1-based index range `lo:hi` along one order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexRange {
    pub lo: usize,
    pub hi: usize,
}

impl IndexRange {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || lo > hi {
            return Err(Error::Range {
                axis: 0,
                lo,
                hi,
                len: hi,
            });
        }
        Ok(Self { lo, hi })
    }

    /// Whole axis `1:n`.
    pub fn full(n: usize) -> Self {
        Self { lo: 1, hi: n }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Sparse real tensor in coordinate form.
///
/// Entries are kept sorted by row-major flat offset, which is the
/// lexicographic order of index tuples, and contractions accumulate in that
/// order. Tensors built by [`SparseTensor::from_entries`] and
/// [`SparseTensor::sparsify`] hold no explicit zeros; structural patterns
/// produced by the convolution module (a compounded filter whose filter has
/// zero coefficients) may.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseTensor {
    /// Builds from 1-based `(index, value)` pairs. Zero values are dropped;
    /// duplicates and out-of-range indices are rejected.
    pub fn from_entries(dims: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        check_dims(&dims)?;
        let mut flat = Vec::with_capacity(entries.len());
        for (index, v) in entries {
            let index0 = to_zero_based(&dims, &index).ok_or_else(|| {
                Error::Shape(format!("index {:?} outside dims {:?}", index, dims))
            })?;
            if v != 0.0 {
                flat.push((flat_offset(&dims, &index0), v));
            }
        }
        flat.sort_by_key(|&(off, _)| off);
        if let Some(w) = flat.windows(2).find(|w| w[0].0 == w[1].0) {
            let mut index = vec![0; dims.len()];
            unravel(&dims, w[0].0, &mut index);
            return Err(Error::Shape(format!(
                "duplicate entry at {:?}",
                index.iter().map(|i| i + 1).collect::<Vec<_>>()
            )));
        }
        Ok(Self { dims, entries: flat })
    }

    /// Crate-internal constructor for offsets already sorted and unique.
    pub(crate) fn from_sorted_offsets(dims: Vec<usize>, entries: Vec<(usize, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(entries.iter().all(|&(off, _)| off < volume(&dims)));
        Self { dims, entries }
    }

    /// Sparse form of a dense tensor, dropping exact zeros.
    pub fn sparsify(t: &DenseTensor) -> Self {
        let entries = t
            .data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(off, &v)| (off, v))
            .collect();
        Self {
            dims: t.dims.clone(),
            entries,
        }
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(&self.dims);
        for &(off, v) in &self.entries {
            out.data[off] = v;
        }
        out
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Stored entries as 1-based index tuples, in lexicographic order.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.entries.iter().map(|&(off, v)| {
            let mut index = vec![0; self.dims.len()];
            unravel(&self.dims, off, &mut index);
            index.iter_mut().for_each(|i| *i += 1);
            (index, v)
        })
    }

    /// Coordinate at a 1-based index tuple (zero when not stored).
    pub fn get(&self, index: &[usize]) -> Option<f64> {
        let index0 = to_zero_based(&self.dims, index)?;
        let off = flat_offset(&self.dims, &index0);
        Some(
            self.entries
                .binary_search_by_key(&off, |&(o, _)| o)
                .map_or(0.0, |i| self.entries[i].1),
        )
    }

    /// `self ⊙_r other`, iterating stored entries only.
    pub fn inner(&self, other: &DenseTensor, r: usize) -> Result<DenseTensor> {
        let (left, shared, right) = split_contraction(&self.dims, &other.dims, r)?;
        let (c_len, b_len) = (volume(&shared), volume(&right));
        let mut out = vec![0.0; volume(&left) * b_len];
        for &(off, v) in &self.entries {
            let (a, c) = (off / c_len, off % c_len);
            let dst = &mut out[a * b_len..(a + 1) * b_len];
            let src = &other.data[c * b_len..(c + 1) * b_len];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
        Ok(DenseTensor {
            dims: [left, right].concat(),
            data: out,
        })
    }

    /// Contracts the leading `r` orders of `self` against the leading `r`
    /// orders of `other`. The result carries the trailing orders of `self`
    /// followed by the trailing orders of `other`.
    ///
    /// For an order-`r` `other` this is `other ⊙_r self`; with extra trailing
    /// orders on `other` (a sample index, say) each slice is contracted
    /// independently in the same entry order.
    pub fn contract_leading(&self, other: &DenseTensor, r: usize) -> Result<DenseTensor> {
        if r == 0 || r > self.order() || r > other.order() {
            return Err(Error::Order {
                r,
                order: self.order().min(other.order()),
            });
        }
        let (shared, tail) = self.dims.split_at(r);
        let (shared_o, extra) = other.dims.split_at(r);
        if shared != shared_o {
            return Err(Error::mismatch(shared, shared_o));
        }
        let (b_len, e_len) = (volume(tail), volume(extra));
        let mut out = vec![0.0; b_len * e_len];
        for &(off, v) in &self.entries {
            let (c, b) = (off / b_len, off % b_len);
            let dst = &mut out[b * e_len..(b + 1) * e_len];
            let src = &other.data[c * e_len..(c + 1) * e_len];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
        Ok(DenseTensor {
            dims: [tail, extra].concat(),
            data: out,
        })
    }
}

/// Identity tensor `I^{2q}` of a space with the given dims.
pub fn identity_tensor(dims: &[usize]) -> Result<SparseTensor> {
    if dims.is_empty() {
        return Err(Error::Shape("identity tensor needs order >= 1".into()));
    }
    check_dims(dims)?;
    let n = volume(dims);
    let entries = (0..n).map(|i| (i * n + i, 1.0)).collect();
    Ok(SparseTensor::from_sorted_offsets(
        [dims, dims].concat(),
        entries,
    ))
}

/// Stacks equal-shape tensors along a new trailing order of length `p`.
pub fn stack_last(samples: &[DenseTensor]) -> Result<DenseTensor> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    let p = samples.len();
    if let Some(bad) = samples.iter().find(|s| s.dims != first.dims) {
        return Err(Error::mismatch(&first.dims, &bad.dims));
    }
    let mut data = vec![0.0; first.len() * p];
    for (j, s) in samples.iter().enumerate() {
        for (i, &v) in s.data.iter().enumerate() {
            data[i * p + j] = v;
        }
    }
    let mut dims = first.dims.clone();
    dims.push(p);
    Ok(DenseTensor { dims, data })
}

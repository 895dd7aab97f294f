//! Dense row-major multi-dimensional arrays over f32/f64.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Element precision tag, used in checkpoints and config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

/// Scalar element of an [`NdArray`].
pub trait Element:
    num_traits::Float + num_traits::NumAssign + Copy + Send + Sync + std::fmt::Debug + 'static
{
    const DTYPE: Dtype;
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array. Immutable once wrapped in the tape; plain value otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> NdArray<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(
                "NdArray::new",
                format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(NdArray { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        NdArray { shape: shape.to_vec(), data: vec![E::zero(); n] }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let n: usize = shape.iter().product();
        NdArray { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: E) -> Self {
        NdArray { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<E>) -> Self {
        NdArray { shape: vec![data.len()], data }
    }

    pub fn from_f64s(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| E::from_f64(v)).collect())
    }

    pub fn eye(n: usize) -> Self {
        let mut a = Self::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = E::one();
        }
        a
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Value of a single-element array.
    pub fn scalar_value(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::invalid(
                "scalar_value",
                format!("expected 1 element, shape is {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: self.shape.clone(), rhs: shape });
        }
        Ok(NdArray { shape, data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        NdArray { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn as_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }
}

/// NumPy-style broadcast of two shapes (right-aligned, extents equal or 1).
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        };
    }
    Ok(out)
}

/// Row-major strides, with stride 0 for broadcast (size-1) axes against `out_shape`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[offset + i] = s;
        acc *= shape[i];
    }
    strides
}

/// Apply an elementwise binary op with broadcasting.
pub fn binary_op<E: Element>(
    op: &'static str,
    a: &NdArray<E>,
    b: &NdArray<E>,
    f: impl Fn(E, E) -> E,
) -> Result<NdArray<E>> {
    // Fast paths: identical shapes, or scalar rhs/lhs.
    if a.shape == b.shape {
        let data = a.data.iter().zip(b.data.iter()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(NdArray { shape: a.shape.clone(), data });
    }
    if b.data.len() == 1 {
        let s = b.data[0];
        let shape = broadcast_shapes(op, &a.shape, &b.shape)?;
        return Ok(NdArray { shape, data: a.data.iter().map(|&x| f(x, s)).collect() });
    }
    if a.data.len() == 1 {
        let s = a.data[0];
        let shape = broadcast_shapes(op, &a.shape, &b.shape)?;
        return Ok(NdArray { shape, data: b.data.iter().map(|&y| f(s, y)).collect() });
    }
    let out_shape = broadcast_shapes(op, &a.shape, &b.shape)?;
    let n: usize = out_shape.iter().product();
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for _ in 0..n {
        data.push(f(a.data[ia], b.data[ib]));
        // Odometer increment.
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
    Ok(NdArray { shape: out_shape, data })
}

/// Reduce `grad` (shaped like the broadcast output) back to `target_shape` by
/// summing over broadcast axes. Inverse of broadcasting for gradients.
pub fn reduce_to_shape<E: Element>(grad: &NdArray<E>, target_shape: &[usize]) -> NdArray<E> {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    let out_rank = grad.shape().len();
    let offset = out_rank - target_shape.len();
    let strides = broadcast_strides(target_shape, grad.shape());
    let n_out: usize = target_shape.iter().product();
    let mut data = vec![E::zero(); n_out];
    let out_shape = grad.shape().to_vec();
    let mut idx = vec![0usize; out_rank];
    let mut it = 0usize;
    for &g in grad.data().iter() {
        data[it] += g;
        for d in (0..out_rank).rev() {
            idx[d] += 1;
            it += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            it -= strides[d] * out_shape[d];
        }
    }
    let _ = offset;
    NdArray { shape: target_shape.to_vec(), data }
}

/// Matmul operand layout: `(m,k)@(k,n)`, `(b,m,k)@(k,n)` or `(b,m,k)@(b,k,n)`,
/// optionally with the rhs stored transposed (`(…,n,k)` interpreted as `(…,k,n)`).
pub struct MatmulSpec {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub lhs_batched: bool,
    pub rhs_batched: bool,
}

pub fn matmul_spec(
    lhs_shape: &[usize],
    rhs_shape: &[usize],
    transpose_b: bool,
) -> Result<MatmulSpec> {
    let (lb, m, k1) = match lhs_shape.len() {
        2 => (1usize, lhs_shape[0], lhs_shape[1]),
        3 => (lhs_shape[0], lhs_shape[1], lhs_shape[2]),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: lhs_shape.to_vec(),
                rhs: rhs_shape.to_vec(),
            })
        }
    };
    let (rb, rk, rn) = match rhs_shape.len() {
        2 => (1usize, rhs_shape[0], rhs_shape[1]),
        3 => (rhs_shape[0], rhs_shape[1], rhs_shape[2]),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: lhs_shape.to_vec(),
                rhs: rhs_shape.to_vec(),
            })
        }
    };
    let (k2, n) = if transpose_b { (rn, rk) } else { (rk, rn) };
    let rhs_batched = rhs_shape.len() == 3;
    let lhs_batched = lhs_shape.len() == 3;
    if k1 != k2 || (rhs_batched && lhs_batched && lb != rb) || (rhs_batched && !lhs_batched) {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: lhs_shape.to_vec(),
            rhs: rhs_shape.to_vec(),
        });
    }
    Ok(MatmulSpec { batch: lb, m, k: k1, n, lhs_batched, rhs_batched })
}

fn gemm_block<E: Element>(
    a: &[E], // m*k row-major
    b: &[E], // k*n row-major, or n*k if transpose_b
    c: &mut [E],
    m: usize,
    k: usize,
    n: usize,
    transpose_b: bool,
) {
    if transpose_b {
        // C[i,j] = dot(A[i,:], B[j,:]) — both rows contiguous.
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            let cr = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                let br = &b[j * k..(j + 1) * k];
                let mut acc = E::zero();
                for t in 0..k {
                    acc += ar[t] * br[t];
                }
                cr[j] = acc;
            }
        }
    } else {
        // ikj ordering: stream B rows.
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            let cr = &mut c[i * n..(i + 1) * n];
            for t in 0..k {
                let av = ar[t];
                if av == E::zero() {
                    continue;
                }
                let br = &b[t * n..(t + 1) * n];
                for j in 0..n {
                    cr[j] += av * br[j];
                }
            }
        }
    }
}

/// `lhs @ rhs` (see [`matmul_spec`] for accepted layouts). Deterministic:
/// every output element is accumulated sequentially by a single task.
pub fn matmul<E: Element>(
    lhs: &NdArray<E>,
    rhs: &NdArray<E>,
    transpose_b: bool,
) -> Result<NdArray<E>> {
    use rayon::prelude::*;
    let spec = matmul_spec(&lhs.shape, &rhs.shape, transpose_b)?;
    let MatmulSpec { batch, m, k, n, lhs_batched, rhs_batched } = spec;
    let out_shape = if lhs_batched { vec![batch, m, n] } else { vec![m, n] };
    let mut data = vec![E::zero(); batch * m * n];
    let work = batch * m * n * k;
    let run = |slot: (usize, &mut [E])| {
        let (bi, chunk) = slot;
        let a = &lhs.data[bi * m * k..(bi + 1) * m * k];
        let b = if rhs_batched {
            let bl = rhs.data.len() / batch;
            &rhs.data[bi * bl..(bi + 1) * bl]
        } else {
            &rhs.data[..]
        };
        gemm_block(a, b, chunk, m, k, n, transpose_b);
    };
    if work > 1 << 16 && batch > 1 {
        data.par_chunks_mut(m * n).enumerate().for_each(run);
    } else if work > 1 << 16 && m > 1 {
        // Split rows of the single batch.
        let b = &rhs.data[..];
        data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let a = &lhs.data[i * k..(i + 1) * k];
            gemm_block(a, b, row, 1, k, n, transpose_b);
        });
    } else {
        for (bi, chunk) in data.chunks_mut(m * n).enumerate() {
            run((bi, chunk));
        }
    }
    Ok(NdArray { shape: out_shape, data })
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last<E: Element>(x: &NdArray<E>) -> Result<NdArray<E>> {
    let rank = x.shape.len();
    if rank == 0 || x.shape[rank - 1] == 0 {
        return Err(Error::invalid("softmax", "empty last axis"));
    }
    let w = x.shape[rank - 1];
    let mut data = vec![E::zero(); x.data.len()];
    for (row_in, row_out) in x.data.chunks(w).zip(data.chunks_mut(w)) {
        let mut mx = row_in[0];
        for &v in row_in.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut z = E::zero();
        for (o, &v) in row_out.iter_mut().zip(row_in.iter()) {
            let e = (v - mx).exp();
            *o = e;
            z += e;
        }
        let inv = E::one() / z;
        for o in row_out.iter_mut() {
            *o *= inv;
        }
    }
    Ok(NdArray { shape: x.shape.clone(), data })
}

/// Sum over one axis (keeping the axis removed) or over all elements.
pub fn sum_axis<E: Element>(x: &NdArray<E>, axis: Option<usize>) -> Result<NdArray<E>> {
    match axis {
        None => {
            let mut acc = E::zero();
            for &v in &x.data {
                acc += v;
            }
            Ok(NdArray::scalar(acc))
        }
        Some(ax) => {
            if ax >= x.shape.len() {
                return Err(Error::invalid("sum_axis", format!("axis {ax} out of range")));
            }
            let outer: usize = x.shape[..ax].iter().product();
            let mid = x.shape[ax];
            let inner: usize = x.shape[ax + 1..].iter().product();
            let mut shape = x.shape.clone();
            shape.remove(ax);
            if shape.is_empty() {
                shape.push(1);
            }
            let mut data = vec![E::zero(); outer * inner];
            for o in 0..outer {
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    let obase = o * inner;
                    for i in 0..inner {
                        data[obase + i] += x.data[base + i];
                    }
                }
            }
            Ok(NdArray { shape, data })
        }
    }
}

/// Repeat a summed gradient back along `axis` to `orig_shape`.
pub fn unsum_axis<E: Element>(grad: &NdArray<E>, orig_shape: &[usize], axis: Option<usize>) -> NdArray<E> {
    match axis {
        None => NdArray::full(orig_shape, grad.data[0]),
        Some(ax) => {
            let outer: usize = orig_shape[..ax].iter().product();
            let mid = orig_shape[ax];
            let inner: usize = orig_shape[ax + 1..].iter().product();
            let mut data = vec![E::zero(); outer * mid * inner];
            for o in 0..outer {
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    let gbase = o * inner;
                    for i in 0..inner {
                        data[base + i] = grad.data[gbase + i];
                    }
                }
            }
            NdArray { shape: orig_shape.to_vec(), data }
        }
    }
}

/// Row gather: `out[i, …] = input[indices[i], …]` over axis 0.
pub fn gather_rows<E: Element>(x: &NdArray<E>, indices: &[usize]) -> Result<NdArray<E>> {
    if x.shape.is_empty() {
        return Err(Error::invalid("gather", "rank-0 input"));
    }
    let rows = x.shape[0];
    let row_len: usize = x.shape[1..].iter().product();
    let mut shape = x.shape.clone();
    shape[0] = indices.len();
    let mut data = Vec::with_capacity(indices.len() * row_len);
    for &ix in indices {
        if ix >= rows {
            return Err(Error::invalid("gather", format!("index {ix} out of {rows} rows")));
        }
        data.extend_from_slice(&x.data[ix * row_len..(ix + 1) * row_len]);
    }
    Ok(NdArray { shape, data })
}

/// Row scatter-add: `out[indices[i], …] += input[i, …]`, `out` has `out_rows` rows.
pub fn scatter_add_rows<E: Element>(
    x: &NdArray<E>,
    indices: &[usize],
    out_rows: usize,
) -> Result<NdArray<E>> {
    if x.shape.is_empty() || x.shape[0] != indices.len() {
        return Err(Error::invalid(
            "scatter_add",
            format!("input rows {:?} vs {} indices", x.shape.first(), indices.len()),
        ));
    }
    let row_len: usize = x.shape[1..].iter().product();
    let mut shape = x.shape.clone();
    shape[0] = out_rows;
    let mut data = vec![E::zero(); out_rows * row_len];
    for (i, &ix) in indices.iter().enumerate() {
        if ix >= out_rows {
            return Err(Error::invalid("scatter_add", format!("index {ix} out of {out_rows} rows")));
        }
        let src = &x.data[i * row_len..(i + 1) * row_len];
        let dst = &mut data[ix * row_len..(ix + 1) * row_len];
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d += *s;
        }
    }
    Ok(NdArray { shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes("t", &[3, 1], &[4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shapes("t", &[2, 3, 4], &[3, 4]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shapes("t", &[2, 3], &[4]).is_err());
    }

    #[test]
    fn binary_broadcast_values() {
        let a = NdArray::<f64>::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = NdArray::<f64>::new(vec![2], vec![10.0, 20.0]).unwrap();
        let c = binary_op("add", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 13.0, 24.0]);
        let g = reduce_to_shape(&c, &[2]);
        assert_eq!(g.data(), &[24.0, 46.0]);
    }

    #[test]
    fn matmul_shapes() {
        let a = NdArray::<f64>::new(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let b = NdArray::<f64>::eye(3);
        let c = matmul(&a, &b, false).unwrap();
        assert_eq!(c.data(), a.data());
        // transpose_b: (2,3) @ (2,3)^T -> (2,2)
        let d = matmul(&a, &a, true).unwrap();
        assert_eq!(d.shape(), &[2, 2]);
        assert_eq!(d.data()[0], 0.0 + 1.0 + 4.0);
        assert_eq!(d.data()[1], 0.0 + 4.0 + 10.0);
    }

    #[test]
    fn batched_matmul_shared_rhs() {
        let a = NdArray::<f64>::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = NdArray::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = matmul(&a, &b, false).unwrap();
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = NdArray::<f64>::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let y = softmax_last(&x).unwrap();
        for row in y.data().chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_and_unsum() {
        let x = NdArray::<f64>::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = sum_axis(&x, Some(1)).unwrap();
        assert_eq!(s.data(), &[6.0, 15.0]);
        let u = unsum_axis(&s, &[2, 3], Some(1));
        assert_eq!(u.data(), &[6.0, 6.0, 6.0, 15.0, 15.0, 15.0]);
    }

    #[test]
    fn gather_scatter_roundtrip() {
        let x = NdArray::<f64>::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = gather_rows(&x, &[2, 0, 2]).unwrap();
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = scatter_add_rows(&g, &[2, 0, 2], 3).unwrap();
        assert_eq!(s.data(), &[1.0, 2.0, 0.0, 0.0, 10.0, 12.0]);
    }
}

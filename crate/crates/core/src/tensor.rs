//! Dense tensors over real or complex scalars, with pairwise contraction,
//! truncated SVD splitting and elementwise maps.

use crate::error::{arg, Error, Result};
use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn, LinalgScalar, ScalarOperand};
use ndarray_linalg::{Eigh, JobSvd, Lapack, SVDDC, SVD, UPLO};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[allow(non_camel_case_types)]
pub type c64 = Complex64;

/// Scalar types the numerical kernels are generic over (`f64` and `c64`).
pub trait Elem:
    ndarray_linalg::Scalar<Real = f64> + Lapack + LinalgScalar + ScalarOperand + Send + Sync
{
    const FIELD: Field;
    fn wrap(a: ArrayD<Self>) -> DenseTensor;
    fn from_c64(z: c64) -> Self;
    fn to_c64(self) -> c64;
}

impl Elem for f64 {
    const FIELD: Field = Field::Real;
    fn wrap(a: ArrayD<f64>) -> DenseTensor {
        DenseTensor::Real(a)
    }
    fn from_c64(z: c64) -> f64 {
        z.re
    }
    fn to_c64(self) -> c64 {
        c64::new(self, 0.0)
    }
}

impl Elem for c64 {
    const FIELD: Field = Field::Complex;
    fn wrap(a: ArrayD<c64>) -> DenseTensor {
        DenseTensor::Complex(a)
    }
    fn from_c64(z: c64) -> c64 {
        z
    }
    fn to_c64(self) -> c64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scalar {
    Real(f64),
    Complex(c64),
}

impl Scalar {
    pub fn field(&self) -> Field {
        match self {
            Scalar::Real(_) => Field::Real,
            Scalar::Complex(_) => Field::Complex,
        }
    }

    pub fn to_c64(self) -> c64 {
        match self {
            Scalar::Real(x) => c64::new(x, 0.0),
            Scalar::Complex(z) => z,
        }
    }

    pub fn abs(self) -> f64 {
        match self {
            Scalar::Real(x) => x.abs(),
            Scalar::Complex(z) => z.norm(),
        }
    }

    pub fn re(self) -> f64 {
        self.to_c64().re
    }

    pub fn is_finite(self) -> bool {
        match self {
            Scalar::Real(x) => x.is_finite(),
            Scalar::Complex(z) => z.re.is_finite() && z.im.is_finite(),
        }
    }
}

/// Row-major dense tensor. Leg `k` has dimension `shape()[k]`.
#[derive(Debug, Clone, PartialEq)]
pub enum DenseTensor {
    Real(ArrayD<f64>),
    Complex(ArrayD<c64>),
}

impl DenseTensor {
    pub fn from_real(shape: &[usize], entries: Vec<f64>) -> Result<Self> {
        Ok(DenseTensor::Real(ArrayD::from_shape_vec(
            IxDyn(shape),
            entries,
        )?))
    }

    pub fn from_complex(shape: &[usize], entries: Vec<c64>) -> Result<Self> {
        Ok(DenseTensor::Complex(ArrayD::from_shape_vec(
            IxDyn(shape),
            entries,
        )?))
    }

    pub fn zeros(shape: &[usize], field: Field) -> Self {
        match field {
            Field::Real => DenseTensor::Real(ArrayD::zeros(IxDyn(shape))),
            Field::Complex => DenseTensor::Complex(ArrayD::zeros(IxDyn(shape))),
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        DenseTensor::Real(ArrayD::ones(IxDyn(shape)))
    }

    pub fn scalar(s: Scalar) -> Self {
        match s {
            Scalar::Real(x) => DenseTensor::Real(ArrayD::from_elem(IxDyn(&[]), x)),
            Scalar::Complex(z) => DenseTensor::Complex(ArrayD::from_elem(IxDyn(&[]), z)),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DenseTensor::Real(a) => a.shape(),
            DenseTensor::Complex(a) => a.shape(),
        }
    }

    pub fn rank(&self) -> usize {
        self.shape().len()
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn field(&self) -> Field {
        match self {
            DenseTensor::Real(_) => Field::Real,
            DenseTensor::Complex(_) => Field::Complex,
        }
    }

    pub fn get(&self, idx: &[usize]) -> Scalar {
        match self {
            DenseTensor::Real(a) => Scalar::Real(a[IxDyn(idx)]),
            DenseTensor::Complex(a) => Scalar::Complex(a[IxDyn(idx)]),
        }
    }

    /// Entries in row-major order, promoted to complex.
    pub fn entries_c64(&self) -> Vec<c64> {
        match self {
            DenseTensor::Real(a) => a.iter().map(|&x| c64::new(x, 0.0)).collect(),
            DenseTensor::Complex(a) => a.iter().copied().collect(),
        }
    }

    pub fn to_complex(&self) -> ArrayD<c64> {
        match self {
            DenseTensor::Real(a) => a.mapv(|x| c64::new(x, 0.0)),
            DenseTensor::Complex(a) => a.clone(),
        }
    }

    pub fn as_real(&self) -> Option<&ArrayD<f64>> {
        match self {
            DenseTensor::Real(a) => Some(a),
            DenseTensor::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&ArrayD<c64>> {
        match self {
            DenseTensor::Complex(a) => Some(a),
            DenseTensor::Real(_) => None,
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            DenseTensor::Real(a) => a.iter().map(|x| x * x).sum::<f64>().sqrt(),
            DenseTensor::Complex(a) => a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            DenseTensor::Real(a) => a.iter().all(|x| x.is_finite()),
            DenseTensor::Complex(a) => a.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    pub fn scale(&self, s: Scalar) -> DenseTensor {
        match (self, s) {
            (DenseTensor::Real(a), Scalar::Real(x)) => DenseTensor::Real(a * x),
            (t, s) => DenseTensor::Complex(t.to_complex() * s.to_c64()),
        }
    }

    pub fn conj(&self) -> DenseTensor {
        match self {
            DenseTensor::Real(a) => DenseTensor::Real(a.clone()),
            DenseTensor::Complex(a) => DenseTensor::Complex(a.mapv(|z| z.conj())),
        }
    }

    /// Permuted copy: leg `k` of the result is leg `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<DenseTensor> {
        check_perm(perm, self.rank())?;
        Ok(match self {
            DenseTensor::Real(a) => DenseTensor::Real(permuted(a, perm)),
            DenseTensor::Complex(a) => DenseTensor::Complex(permuted(a, perm)),
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<DenseTensor> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return arg(format!("cannot reshape {:?} into {:?}", self.shape(), shape));
        }
        Ok(match self {
            DenseTensor::Real(a) => DenseTensor::Real(reshaped(a, shape)),
            DenseTensor::Complex(a) => DenseTensor::Complex(reshaped(a, shape)),
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.shape() != other.shape() {
            return Err(Error::Contract(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(match (self, other) {
            (DenseTensor::Real(a), DenseTensor::Real(b)) => DenseTensor::Real(a + b),
            (a, b) => DenseTensor::Complex(a.to_complex() + b.to_complex()),
        })
    }
}

fn check_perm(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return arg(format!("permutation {perm:?} has wrong length for rank {rank}"));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return arg(format!("invalid permutation {perm:?}"));
        }
        seen[p] = true;
    }
    Ok(())
}

pub(crate) fn permuted<T: Clone>(a: &ArrayD<T>, perm: &[usize]) -> ArrayD<T> {
    a.view()
        .permuted_axes(IxDyn(perm))
        .as_standard_layout()
        .into_owned()
}

pub(crate) fn reshaped<T: Clone>(a: &ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(shape))
        .expect("element count checked by caller")
}

/// Matricize `a` with `rows` legs (in order) as row index and the rest as column index.
pub(crate) fn matricize<T: Clone>(a: &ArrayD<T>, rows: &[usize]) -> (Array2<T>, Vec<usize>) {
    let rank = a.ndim();
    let cols: Vec<usize> = (0..rank).filter(|k| !rows.contains(k)).collect();
    let perm: Vec<usize> = rows.iter().chain(cols.iter()).copied().collect();
    let m: usize = rows.iter().map(|&k| a.shape()[k]).product();
    let n: usize = cols.iter().map(|&k| a.shape()[k]).product();
    let p = permuted(a, &perm);
    let mat = p
        .into_shape_with_order((m, n))
        .expect("permuted copy is contiguous");
    (mat, cols)
}

fn check_legs(rank: usize, legs: &[usize], name: &str) -> Result<()> {
    let mut seen = vec![false; rank];
    for &l in legs {
        if l >= rank {
            return arg(format!("{name}: leg {l} out of range for rank {rank}"));
        }
        if seen[l] {
            return arg(format!("{name}: duplicate leg {l}"));
        }
        seen[l] = true;
    }
    Ok(())
}

pub(crate) fn contract_arrays<T: Elem>(
    a: &ArrayD<T>,
    legs_a: &[usize],
    b: &ArrayD<T>,
    legs_b: &[usize],
) -> ArrayD<T> {
    let free_a: Vec<usize> = (0..a.ndim()).filter(|k| !legs_a.contains(k)).collect();
    let (ma, _) = matricize(a, &free_a);
    let (mb, free_b) = matricize(b, legs_b);
    let prod = ma.dot(&mb);
    let shape: Vec<usize> = free_a
        .iter()
        .map(|&k| a.shape()[k])
        .chain(free_b.iter().map(|&k| b.shape()[k]))
        .collect();
    prod.into_shape_with_order(IxDyn(&shape))
        .expect("product is contiguous")
}

/// Sum over paired legs. Result legs: unpaired legs of `a` then unpaired legs of `b`.
pub fn contract_pair(
    a: &DenseTensor,
    legs_a: &[usize],
    b: &DenseTensor,
    legs_b: &[usize],
) -> Result<DenseTensor> {
    check_legs(a.rank(), legs_a, "legs_a")?;
    check_legs(b.rank(), legs_b, "legs_b")?;
    if legs_a.len() != legs_b.len() {
        return Err(Error::Contract(format!(
            "{} legs paired with {}",
            legs_a.len(),
            legs_b.len()
        )));
    }
    for (&la, &lb) in legs_a.iter().zip(legs_b) {
        if a.shape()[la] != b.shape()[lb] {
            return Err(Error::Contract(format!(
                "leg {la} (dim {}) vs leg {lb} (dim {})",
                a.shape()[la],
                b.shape()[lb]
            )));
        }
    }
    let out = match (a, b) {
        (DenseTensor::Real(x), DenseTensor::Real(y)) => {
            DenseTensor::Real(contract_arrays(x, legs_a, y, legs_b))
        }
        _ => DenseTensor::Complex(contract_arrays(
            &a.to_complex(),
            legs_a,
            &b.to_complex(),
            legs_b,
        )),
    };
    debug_assert!(out.is_finite());
    Ok(out)
}

/// Entrywise modulus; the result is always real.
pub fn elementwise_abs(t: &DenseTensor) -> DenseTensor {
    match t {
        DenseTensor::Real(a) => DenseTensor::Real(a.mapv(f64::abs)),
        DenseTensor::Complex(a) => DenseTensor::Real(a.mapv(|z| z.norm())),
    }
}

#[derive(Debug, Clone)]
pub struct SvdSplit {
    /// Left legs followed by the new bond; columns are orthonormal.
    pub left: DenseTensor,
    /// New bond followed by the remaining legs; carries the singular values.
    pub right: DenseTensor,
    pub kept_spectrum: Vec<f64>,
    pub discarded_weight: f64,
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending, eigenvectors as columns.
///
/// LAPACK sees a column-major copy: handing it row-major complex storage yields
/// conjugated eigenvectors.
pub fn eigh_hermitian<T: Elem>(m: &Array2<T>) -> Result<(Array1<f64>, Array2<T>)> {
    let f = m.t().as_standard_layout().reversed_axes().to_owned();
    Ok(f.eigh(UPLO::Lower)?)
}

/// Thin SVD of a matrix, singular values non-increasing.
pub fn svd_thin<T: Elem>(m: &Array2<T>) -> Result<(Array2<T>, Array1<f64>, Array2<T>)> {
    match m.svddc(JobSvd::Some) {
        Ok((Some(u), s, Some(vt))) => Ok((u, s, vt)),
        _ => {
            let (u, s, vt) = m.svd(true, true)?;
            let (u, vt) = (u.unwrap(), vt.unwrap());
            let k = s.len();
            Ok((
                u.slice(ndarray::s![.., ..k]).to_owned(),
                s,
                vt.slice(ndarray::s![..k, ..]).to_owned(),
            ))
        }
    }
}

/// Number of singular values kept: `min(chi, #{σ² > rel_tol·Σσ²})`, at least one.
pub fn truncation_rank(s: &[f64], chi: usize, rel_tol: f64) -> usize {
    let total: f64 = s.iter().map(|x| x * x).sum();
    let above = s.iter().filter(|&&x| x * x > rel_tol * total).count();
    above.min(chi).max(1).min(s.len())
}

pub(crate) fn svd_split_matrix<T: Elem>(
    m: &Array2<T>,
    chi: usize,
    rel_tol: f64,
) -> Result<(Array2<T>, Array2<T>, Vec<f64>, f64)> {
    let (u, s, vt) = svd_thin(m)?;
    let sv: Vec<f64> = s.to_vec();
    let k = truncation_rank(&sv, chi, rel_tol);
    let discarded: f64 = sv[k..].iter().map(|x| x * x).sum();
    let left = u.slice(ndarray::s![.., ..k]).to_owned();
    let mut right = vt.slice(ndarray::s![..k, ..]).to_owned();
    for (mut row, &sk) in right.axis_iter_mut(Axis(0)).zip(&sv[..k]) {
        row.mapv_inplace(|x| x * T::from_real(sk));
    }
    Ok((left, right, sv[..k].to_vec(), discarded))
}

fn split_generic<T: Elem>(
    a: &ArrayD<T>,
    left_legs: &[usize],
    chi: usize,
    rel_tol: f64,
) -> Result<SvdSplit> {
    let (m, right_legs) = matricize(a, left_legs);
    let (l, r, kept, discarded) = svd_split_matrix(&m, chi, rel_tol)?;
    let k = kept.len();
    let lshape: Vec<usize> = left_legs
        .iter()
        .map(|&i| a.shape()[i])
        .chain(std::iter::once(k))
        .collect();
    let rshape: Vec<usize> = std::iter::once(k)
        .chain(right_legs.iter().map(|&i| a.shape()[i]))
        .collect();
    Ok(SvdSplit {
        left: T::wrap(l.into_shape_with_order(IxDyn(&lshape))?),
        right: T::wrap(r.into_shape_with_order(IxDyn(&rshape))?),
        kept_spectrum: kept,
        discarded_weight: discarded,
    })
}

/// Split `t` across (`left_legs` | rest) keeping at most `chi` singular values.
pub fn svd_split(t: &DenseTensor, left_legs: &[usize], chi: usize, rel_tol: f64) -> Result<SvdSplit> {
    if chi < 1 {
        return arg("chi must be >= 1");
    }
    check_legs(t.rank(), left_legs, "left_legs")?;
    if left_legs.is_empty() || left_legs.len() >= t.rank() {
        return arg("left_legs must be a nonempty proper subset of the legs");
    }
    match t {
        DenseTensor::Real(a) => split_generic(a, left_legs, chi, rel_tol),
        DenseTensor::Complex(a) => split_generic(a, left_legs, chi, rel_tol),
    }
}

//! Boundary state of a W×H block with open right edge: its truncated MPS, its
//! Rényi entropies across horizontal cuts, and disorder-averaged scans.

use crate::ensembles::{make_site_tensor, EnsembleKind, EnsembleSpec, Legs, TargetKind};
use crate::error::{arg, guard, Error, Result};
use crate::network::frobenius;
use crate::rng::{rng, trial_seed};
use crate::stats::Summary;
use crate::tensor::{c64, eigh_hermitian, matricize, permuted, svd_split_matrix, svd_thin, DenseTensor, Elem, Field};
use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest cut dimension handled by the exact Gram route.
pub const GRAM_LIMIT: usize = 1024;
pub const DEFAULT_REL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub w: usize,
    pub h: usize,
    pub ensemble: EnsembleSpec,
    pub cut: usize,
}

impl BlockSpec {
    /// `H = 4W`, cut at `H/2`.
    pub fn new(w: usize, ensemble: EnsembleSpec) -> Self {
        BlockSpec {
            w,
            h: 4 * w,
            ensemble,
            cut: 2 * w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        if self.w < 1 || self.h < 2 {
            return arg("block needs W >= 1 and H >= 2");
        }
        if self.cut < 1 || self.cut >= self.h {
            return arg(format!("cut must lie in 1..{}", self.h));
        }
        Ok(())
    }
}

/// W×H grid of four-leg (l, r, u, d) tensors. Left, top and bottom legs have
/// dimension 1; the right legs of the last column are the physical legs.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub w: usize,
    pub h: usize,
    pub tensors: Vec<DenseTensor>,
}

pub fn block_legs(h: usize, r: usize, c: usize) -> Legs {
    Legs {
        l: c > 0,
        r: true,
        u: r > 0,
        d: r + 1 < h,
    }
}

impl Block {
    pub fn from_tensors(w: usize, h: usize, tensors: Vec<DenseTensor>) -> Result<Block> {
        if tensors.len() != w * h || w == 0 || h < 2 {
            return arg("block needs W·H tensors with H >= 2");
        }
        let at = |r: usize, c: usize| tensors[r * w + c].shape();
        for r in 0..h {
            for c in 0..w {
                let s = at(r, c);
                if s.len() != 4 {
                    return arg(format!("site ({r},{c}) must have four legs"));
                }
                let edge_ok = (c > 0 || s[0] == 1) && (r > 0 || s[2] == 1) && (r + 1 < h || s[3] == 1);
                let inner_ok = (c + 1 == w || s[1] == at(r, c + 1)[0]) && (r + 1 == h || s[3] == at(r + 1, c)[2]);
                if !edge_ok || !inner_ok {
                    return Err(Error::Contract(format!("inconsistent leg dimensions at ({r},{c})")));
                }
            }
        }
        Ok(Block { w, h, tensors })
    }

    /// Draw sites row-major from `rng`.
    pub fn sample<R: Rng>(spec: &BlockSpec, rng: &mut R) -> Result<Block> {
        spec.validate()?;
        let dim = spec.ensemble.bond_dim;
        let mut tensors = Vec::with_capacity(spec.w * spec.h);
        for r in 0..spec.h {
            for c in 0..spec.w {
                let legs = block_legs(spec.h, r, c);
                let t = make_site_tensor(&spec.ensemble, legs, rng)?;
                tensors.push(t.reshape(&legs.padded_dims(dim))?);
            }
        }
        Block::from_tensors(spec.w, spec.h, tensors)
    }

    pub fn tensor(&self, r: usize, c: usize) -> &DenseTensor {
        &self.tensors[r * self.w + c]
    }

    pub fn field(&self) -> Field {
        if self.tensors.iter().any(|t| t.field() == Field::Complex) {
            Field::Complex
        } else {
            Field::Real
        }
    }

    /// Dimension of the cut between rows `cut − 1` and `cut`.
    pub fn cut_dim(&self, cut: usize) -> usize {
        (0..self.w).map(|c| self.tensor(cut, c).shape()[2]).product()
    }

    fn arrays<T: Elem>(&self) -> Vec<ArrayD<T>> {
        self.tensors
            .iter()
            .map(|t| match t {
                DenseTensor::Real(a) => a.mapv(|x| T::from_c64(c64::new(x, 0.0))),
                DenseTensor::Complex(a) => a.mapv(T::from_c64),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRecord {
    /// Rényi-`alpha` entropy in nats.
    pub s2: f64,
    pub schmidt_spectrum: Vec<f64>,
    pub alpha: f64,
}

/// Rényi entropy of a probability vector; `alpha = 1` is the von Neumann limit.
pub fn renyi_of_spectrum(p: &[f64], alpha: f64) -> f64 {
    let p: Vec<f64> = p.iter().copied().filter(|&x| x > 0.0).collect();
    let s = if alpha == 1.0 {
        -p.iter().map(|x| x * x.ln()).sum::<f64>()
    } else if alpha == 0.0 {
        (p.len() as f64).ln()
    } else {
        p.iter().map(|x| x.powf(alpha)).sum::<f64>().ln() / (1.0 - alpha)
    };
    s.max(0.0)
}

fn normalized_spectrum(mut w: Vec<f64>) -> Vec<f64> {
    w.iter_mut().for_each(|x| *x = x.max(0.0));
    w.sort_by(|a, b| b.partial_cmp(a).expect("finite spectrum"));
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Move the leading axis of length `front` (of a flat row-major buffer) to the back.
fn rotate_front<T: Elem>(x: Vec<T>, front: usize) -> Vec<T> {
    let rest = x.len() / front;
    let m = Array2::from_shape_vec((front, rest), x).expect("length divisible");
    let (v, offset) = m.reversed_axes().as_standard_layout().into_owned().into_raw_vec_and_offset();
    debug_assert!(offset.unwrap_or(0) == 0);
    v
}

/// `x` viewed as (rows, k) times `a` viewed as (k, n).
fn gemm_flat<T: Elem>(x: Vec<T>, a: &Array2<T>) -> Vec<T> {
    let k = a.nrows();
    let m = Array2::from_shape_vec((x.len() / k, k), x).expect("length divisible");
    let (v, _) = m.dot(a).into_raw_vec_and_offset();
    v
}

fn ket_row<T: Elem>(mut x: Vec<T>, row: &[ArrayD<T>]) -> Vec<T> {
    for a in row {
        let (dl, dr, dout, din) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
        x = rotate_front(x, dout);
        let am = permuted(a, &[0, 2, 3, 1]).into_shape_with_order((dl * dout, din * dr)).expect("contiguous");
        x = gemm_flat(x, &am);
    }
    x
}

fn bra_row<T: Elem>(mut x: Vec<T>, row: &[ArrayD<T>]) -> Vec<T> {
    for a in row.iter().rev() {
        let (dl, dr, dout, din) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
        x = rotate_front(x, dout);
        let am = permuted(&a.mapv(|z| z.conj()), &[1, 2, 3, 0])
            .into_shape_with_order((dr * dout, din * dl))
            .expect("contiguous");
        x = gemm_flat(x, &am);
    }
    x
}

fn normalize<T: Elem>(x: &mut [T]) {
    let nrm = x.iter().map(|z| z.square()).sum::<f64>().sqrt();
    x.iter_mut().for_each(|z| *z = *z / T::from_real(nrm));
}

/// Reorder the trailing W bra legs of a (ket, bra) buffer, reversing their order.
fn reverse_bra<T: Elem>(x: Vec<T>, dims: &[usize]) -> Vec<T> {
    let w = dims.len();
    let mut shape = dims.to_vec();
    shape.extend(dims.iter().rev());
    let mut perm: Vec<usize> = (0..w).collect();
    perm.extend((w..2 * w).rev());
    let t = ArrayD::from_shape_vec(IxDyn(&shape), x).expect("cut dims match");
    permuted(&t, &perm).into_raw_vec_and_offset().0
}

/// `L·L†` of a factor buffer laid out as (n, rank).
fn gram_of_factor<T: Elem>(l: Vec<T>, n: usize) -> Array2<T> {
    let m = Array2::from_shape_vec((n, l.len() / n), l).expect("length divisible");
    m.dot(&m.t().mapv(|z| z.conj()))
}

/// Gram matrix over the cut legs of one half: rows are given as
/// (l, r, out, in) tensors, ordered from the outer edge toward the cut.
///
/// While its rank is below the leg dimension the Gram matrix is kept as a
/// factor `L` with `G = L·L†`, absorbing only the ket row. Afterwards the
/// buffer holds (ket legs 0..W, bra legs W−1..0). Each site rotates the leg it
/// consumes to the back, next to the horizontal bond, so one GEMM absorbs it.
fn half_gram<T: Elem>(rows: &[Vec<ArrayD<T>>]) -> Array2<T> {
    let mut x: Vec<T> = vec![T::one()];
    let mut factor = true;
    for row in rows {
        let in_dims: Vec<usize> = row.iter().map(|a| a.shape()[3]).collect();
        let n_in: usize = in_dims.iter().product();
        if factor {
            // (k.., a, h=1) -> (a, in.., p) -> (in.., p·a)
            let rank = x.len() / row.iter().map(|a| a.shape()[2]).product::<usize>();
            x = ket_row(x, row);
            x = rotate_front(x, rank);
            let new_rank = x.len() / n_in;
            if new_rank >= n_in {
                let g = gram_of_factor(x, n_in);
                x = reverse_bra(g.into_raw_vec_and_offset().0, &in_dims);
                factor = false;
            }
        } else {
            x = ket_row(x, row);
            x = bra_row(x, row);
        }
        normalize(&mut x);
    }
    let dims: Vec<usize> = rows.last().expect("nonempty half").iter().map(|a| a.shape()[3]).collect();
    let n: usize = dims.iter().product();
    if factor {
        return gram_of_factor(x, n);
    }
    // restore bra leg order to 0..W (reversal is an involution)
    let g = reverse_bra(x, &dims);
    Array2::from_shape_vec((n, n), g).expect("contiguous")
}

fn halves<T: Elem>(block: &Block, cut: usize) -> (Array2<T>, Array2<T>) {
    let arrays = block.arrays::<T>();
    let w = block.w;
    let top: Vec<Vec<ArrayD<T>>> = (0..cut).map(|r| arrays[r * w..(r + 1) * w].to_vec()).collect();
    let bottom: Vec<Vec<ArrayD<T>>> = (cut..block.h)
        .rev()
        .map(|r| arrays[r * w..(r + 1) * w].iter().map(|a| permuted(a, &[0, 1, 3, 2])).collect())
        .collect();
    (half_gram(&top), half_gram(&bottom))
}

fn gram_s2_generic<T: Elem>(block: &Block, cut: usize) -> f64 {
    let (gt, gb) = halves::<T>(block, cut);
    let m = gt.dot(&gb.t());
    let tr: f64 = m.diag().iter().map(|z| z.re()).sum();
    let tr2: f64 = m
        .indexed_iter()
        .map(|((i, j), &z)| (z * m[[j, i]]).re())
        .sum();
    (-(tr2 / (tr * tr)).ln()).max(0.0)
}

fn gram_spectrum_generic<T: Elem>(block: &Block, cut: usize) -> Result<Vec<f64>> {
    let (gt, gb) = halves::<T>(block, cut);
    // eigenvalues of G_b·G_tᵀ = eigenvalues of K^{1/2} G_b K^{1/2} with K = G_tᵀ ⪰ 0
    let k = gt.t().to_owned();
    let (evals, evecs) = eigh_hermitian(&k)?;
    let sqrt_vals = evals.mapv(|x| T::from_real(x.max(0.0).sqrt()));
    let mut half = evecs.clone();
    for (mut col, s) in half.axis_iter_mut(Axis(1)).zip(sqrt_vals.iter()) {
        col.mapv_inplace(|z| z * *s);
    }
    let ksqrt = half.dot(&evecs.t().mapv(|z| z.conj()));
    let mut m = ksqrt.dot(&gb).dot(&ksqrt);
    // symmetrize against roundoff
    let mh = m.t().mapv(|z| z.conj());
    m = (&m + &mh).mapv(|z| z * T::from_real(0.5));
    let (w, _) = eigh_hermitian(&m)?;
    Ok(normalized_spectrum(w.to_vec()))
}

/// Exact Rényi-2 entropy of the block boundary state across `cut` via the Gram matrices of both halves.
pub fn gram_s2(block: &Block, cut: usize) -> Result<f64> {
    check_cut(block, cut)?;
    guard("cut dimension", block.cut_dim(cut) as f64, GRAM_LIMIT as f64)?;
    Ok(match block.field() {
        Field::Real => gram_s2_generic::<f64>(block, cut),
        Field::Complex => gram_s2_generic::<c64>(block, cut),
    })
}

/// Exact Schmidt spectrum and Rényi-`alpha` entropy across `cut` via Gram matrices.
pub fn gram_entropy(block: &Block, cut: usize, alpha: f64) -> Result<EntropyRecord> {
    check_cut(block, cut)?;
    guard("cut dimension", block.cut_dim(cut) as f64, GRAM_LIMIT as f64)?;
    let spectrum = match block.field() {
        Field::Real => gram_spectrum_generic::<f64>(block, cut)?,
        Field::Complex => gram_spectrum_generic::<c64>(block, cut)?,
    };
    Ok(EntropyRecord {
        s2: renyi_of_spectrum(&spectrum, alpha),
        schmidt_spectrum: spectrum,
        alpha,
    })
}

fn check_cut(block: &Block, cut: usize) -> Result<()> {
    if cut < 1 || cut >= block.h {
        return arg(format!("cut {cut} outside 1..{}", block.h));
    }
    Ok(())
}

/// MPS over the H physical legs; site tensors are (left bond, physical, right bond).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMPS {
    pub site_tensors: Vec<DenseTensor>,
    pub chi_max: usize,
    pub cumulative_truncation: f64,
    pub canonical_center: Option<usize>,
}

struct Mps<T: Elem> {
    sites: Vec<ArrayD<T>>,
}

impl<T: Elem> Mps<T> {
    fn from_dense(b: &BoundaryMPS) -> Self {
        Mps {
            sites: b
                .site_tensors
                .iter()
                .map(|t| match t {
                    DenseTensor::Real(a) => a.mapv(|x| T::from_c64(c64::new(x, 0.0))),
                    DenseTensor::Complex(a) => a.mapv(T::from_c64),
                })
                .collect(),
        }
    }

    fn into_dense(self, chi_max: usize, truncation: f64, center: Option<usize>) -> BoundaryMPS {
        BoundaryMPS {
            site_tensors: self.sites.into_iter().map(T::wrap).collect(),
            chi_max,
            cumulative_truncation: truncation,
            canonical_center: center,
        }
    }

    /// Make sites `k+1..` right-isometric, moving weight into site `k`, for k from the end down to `stop`.
    fn right_canonicalize(&mut self, stop: usize) {
        for k in (stop + 1..self.sites.len()).rev() {
            let s = &self.sites[k];
            let (a, p, b) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let m = s.view().into_shape_with_order((a, p * b)).expect("contiguous").to_owned();
            let (u, sv, vt) = svd_thin(&m).expect("svd converges");
            let r = sv.len();
            self.sites[k] = vt.into_shape_with_order(IxDyn(&[r, p, b])).expect("contiguous");
            let mut us = u;
            for (mut col, &x) in us.axis_iter_mut(Axis(1)).zip(sv.iter()) {
                col.mapv_inplace(|z| z * T::from_real(x));
            }
            let prev = &self.sites[k - 1];
            let (pa, pp, _) = (prev.shape()[0], prev.shape()[1], prev.shape()[2]);
            let pm = prev.view().into_shape_with_order((pa * pp, a)).expect("contiguous").dot(&us);
            self.sites[k - 1] = pm.into_shape_with_order(IxDyn(&[pa, pp, r])).expect("contiguous");
        }
    }

    /// Left-to-right truncating sweep; assumes sites 1.. are right-isometric.
    /// Returns the sum of discarded weights relative to the norm.
    fn truncate_sweep(&mut self, chi: usize, rel_tol: f64) -> f64 {
        let n = self.sites.len();
        let mut discarded = 0.0;
        for k in 0..n - 1 {
            let s = &self.sites[k];
            let (a, p, b) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let m = s.view().into_shape_with_order((a * p, b)).expect("contiguous").to_owned();
            let norm2: f64 = m.iter().map(|z| z.square()).sum();
            let (l, r, kept, d) = svd_split_matrix(&m, chi, rel_tol).expect("svd converges");
            discarded += d / norm2;
            let kdim = kept.len();
            self.sites[k] = l.into_shape_with_order(IxDyn(&[a, p, kdim])).expect("contiguous");
            let next = &self.sites[k + 1];
            let (_, np, nb) = (next.shape()[0], next.shape()[1], next.shape()[2]);
            let nm = next.view().into_shape_with_order((b, np * nb)).expect("contiguous");
            self.sites[k + 1] = r.dot(&nm).into_shape_with_order(IxDyn(&[kdim, np, nb])).expect("contiguous");
        }
        let last = &mut self.sites[n - 1];
        let nrm = frobenius(last);
        last.mapv_inplace(|z| z / T::from_real(nrm));
        discarded
    }

    /// Schmidt spectrum across the bond between sites `cut − 1` and `cut`.
    fn spectrum(&self, cut: usize) -> Vec<f64> {
        let mut m = Mps { sites: self.sites.clone() };
        m.right_canonicalize(0);
        // left sweep without truncation up to the cut
        for k in 0..cut - 1 {
            let s = &m.sites[k];
            let (a, p, b) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let mat = s.view().into_shape_with_order((a * p, b)).expect("contiguous").to_owned();
            let (l, r, kept, _) = svd_split_matrix(&mat, usize::MAX, 0.0).expect("svd converges");
            let kdim = kept.len();
            m.sites[k] = l.into_shape_with_order(IxDyn(&[a, p, kdim])).expect("contiguous");
            let next = &m.sites[k + 1];
            let (_, np, nb) = (next.shape()[0], next.shape()[1], next.shape()[2]);
            let nm = next.view().into_shape_with_order((b, np * nb)).expect("contiguous");
            m.sites[k + 1] = r.dot(&nm).into_shape_with_order(IxDyn(&[kdim, np, nb])).expect("contiguous");
        }
        let s = &m.sites[cut - 1];
        let (a, p, b) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        let mat = s.view().into_shape_with_order((a * p, b)).expect("contiguous").to_owned();
        let (_, sv, _) = svd_thin(&mat).expect("svd converges");
        normalized_spectrum(sv.iter().map(|x| x * x).collect())
    }
}

fn build_mps<T: Elem>(block: &Block, chi: usize, rel_tol: f64) -> (Mps<T>, f64) {
    let arrays = block.arrays::<T>();
    let (w, h) = (block.w, block.h);
    // column 0: (u, r, d)
    let mut mps = Mps {
        sites: (0..h)
            .map(|r| {
                let a = &arrays[r * w];
                let s = a.shape();
                permuted(a, &[0, 2, 1, 3])
                    .into_shape_with_order(IxDyn(&[s[2], s[1], s[3]]))
                    .expect("left leg has dimension 1")
            })
            .collect(),
    };
    let mut truncation = 0.0;
    for c in 0..w {
        if c > 0 {
            for r in 0..h {
                let m = &mps.sites[r];
                let a = &arrays[r * w + c];
                let (ma, mb) = (m.shape()[0], m.shape()[2]);
                let (dr, du, dd) = (a.shape()[1], a.shape()[2], a.shape()[3]);
                // Σ_l M(ma, l, mb) A(l, r, u, d) -> (ma, u, r, mb, d)
                let (mm, _) = matricize(m, &[0, 2]);
                let (am, _) = matricize(a, &[0]);
                let y = mm
                    .dot(&am)
                    .into_shape_with_order(IxDyn(&[ma, mb, dr, du, dd]))
                    .expect("contiguous");
                mps.sites[r] = permuted(&y, &[0, 3, 2, 1, 4])
                    .into_shape_with_order(IxDyn(&[ma * du, dr, mb * dd]))
                    .expect("contiguous");
            }
        }
        mps.right_canonicalize(0);
        let n0 = frobenius(&mps.sites[0]);
        mps.sites[0].mapv_inplace(|z| z / T::from_real(n0));
        truncation += mps.truncate_sweep(chi, rel_tol);
    }
    (mps, truncation)
}

/// Boundary MPS of an explicit block, absorbing columns left to right with truncation at `chi`.
pub fn boundary_mps(block: &Block, chi: usize, rel_tol: f64) -> Result<BoundaryMPS> {
    if chi < 1 {
        return arg("chi must be >= 1");
    }
    Ok(match block.field() {
        Field::Real => {
            let (m, t) = build_mps::<f64>(block, chi, rel_tol);
            m.into_dense(chi, t, Some(block.h - 1))
        }
        Field::Complex => {
            let (m, t) = build_mps::<c64>(block, chi, rel_tol);
            m.into_dense(chi, t, Some(block.h - 1))
        }
    })
}

/// Sample a block from `spec` and build its boundary MPS.
pub fn block_boundary_state<R: Rng>(spec: &BlockSpec, chi: usize, rng: &mut R) -> Result<BoundaryMPS> {
    if chi < spec.ensemble.bond_dim {
        return arg("chi must be >= D");
    }
    let block = Block::sample(spec, rng)?;
    boundary_mps(&block, chi, DEFAULT_REL_TOL)
}

/// Rényi-`alpha` entropy of the normalized state across the bond above site `cut`.
pub fn renyi_entropy(psi: &BoundaryMPS, cut: usize, alpha: f64) -> Result<EntropyRecord> {
    let n = psi.site_tensors.len();
    if cut < 1 || cut >= n {
        return arg(format!("cut {cut} outside 1..{n}"));
    }
    if !(alpha >= 0.0) {
        return arg("alpha must be >= 0");
    }
    let complex = psi.site_tensors.iter().any(|t| t.field() == Field::Complex);
    let spectrum = if complex {
        Mps::<c64>::from_dense(psi).spectrum(cut)
    } else {
        Mps::<f64>::from_dense(psi).spectrum(cut)
    };
    Ok(EntropyRecord {
        s2: renyi_of_spectrum(&spectrum, alpha),
        schmidt_spectrum: spectrum,
        alpha,
    })
}

impl BoundaryMPS {
    /// Dense state vector over the physical legs (top site most significant).
    pub fn to_dense(&self) -> DenseTensor {
        let mut acc = DenseTensor::ones(&[1, 1]);
        for s in &self.site_tensors {
            let phys = s.shape()[1];
            let rows = acc.shape()[0];
            let t = crate::tensor::contract_pair(&acc, &[1], s, &[0]).expect("bond dims match");
            let b = t.shape()[2];
            acc = t.reshape(&[rows * phys, b]).expect("sizes match");
        }
        let n = acc.len();
        acc.reshape(&[n]).expect("last bond is 1")
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.site_tensors.iter().map(|t| t.shape()[2]).collect()
    }
}

/// Entropy of one block: exact Gram route when the cut is small enough, else MPS at `chi`.
/// Returns `(s2, chi used, truncation weight)`.
pub fn block_s2(block: &Block, cut: usize, chi: usize) -> Result<(f64, usize, f64)> {
    let cut_dim = block.cut_dim(cut);
    if cut_dim <= GRAM_LIMIT {
        return Ok((gram_s2(block, cut)?, cut_dim, 0.0));
    }
    let psi = boundary_mps(block, chi, DEFAULT_REL_TOL)?;
    let rec = renyi_entropy(&psi, cut, 2.0)?;
    Ok((rec.s2, chi, psi.cumulative_truncation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub kind: String,
    pub target: String,
    #[serde(rename = "D")]
    pub d: usize,
    pub lambda: f64,
    #[serde(rename = "lambdaD")]
    pub lambda_d: f64,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub chi: usize,
    pub trial: usize,
    pub s2: f64,
    pub trunc_weight: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyAgg {
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "lambdaD")]
    pub lambda_d: f64,
    #[serde(rename = "W")]
    pub w: usize,
    pub mean_s2: f64,
    pub std: f64,
    pub stderr: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub kind: EnsembleKind,
    pub target: TargetKind,
    pub d_list: Vec<usize>,
    /// Grid of λ·D values (λ = value / D).
    pub lambda_d: Vec<f64>,
    pub w_list: Vec<usize>,
    pub trials: usize,
    /// Truncation for blocks beyond the Gram route; `None` means min(D^W, 256).
    pub chi: Option<usize>,
    pub master_seed: u64,
    pub experiment: String,
}

impl ScanSpec {
    pub fn grid(&self) -> Vec<(usize, f64, usize)> {
        let mut g = Vec::new();
        for &d in &self.d_list {
            for &x in &self.lambda_d {
                for &w in &self.w_list {
                    g.push((d, x, w));
                }
            }
        }
        g
    }
}

fn scan_trial(spec: &ScanSpec, gi: usize, d: usize, x: f64, w: usize, trial: usize, chi: usize) -> Result<EntropyRow> {
    let seed = trial_seed(spec.master_seed, &spec.experiment, gi, trial);
    let mut g = rng(seed);
    let target = spec.target.realize(d, &mut g);
    let ens = EnsembleSpec::new(spec.kind, d, x / d as f64).with_target(target).with_seed(seed);
    let bspec = BlockSpec::new(w, ens);
    let block = Block::sample(&bspec, &mut g)?;
    let (s2, chi_used, trunc) = block_s2(&block, bspec.cut, chi)?;
    Ok(EntropyRow {
        kind: spec.kind.name().into(),
        target: spec.target.name().into(),
        d,
        lambda: x / d as f64,
        lambda_d: x,
        w,
        h: bspec.h,
        chi: chi_used,
        trial,
        s2,
        trunc_weight: trunc,
        seed,
    })
}

/// Disorder-averaged ⟨S₂⟩ over the (D, λD, W) grid with `H = 4W`, cut at `H/2`.
pub fn entropy_scan(spec: &ScanSpec) -> Result<(Vec<EntropyRow>, Vec<EntropyAgg>)> {
    if spec.trials < 10 {
        return arg("trials must be >= 10");
    }
    entropy_scan_unchecked(spec)
}

/// As [`entropy_scan`] without the minimum trial count (for quick looks and tests).
pub fn entropy_scan_unchecked(spec: &ScanSpec) -> Result<(Vec<EntropyRow>, Vec<EntropyAgg>)> {
    let grid = spec.grid();
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|gi| (0..spec.trials).map(move |t| (gi, t)))
        .collect();
    let chi_for = |d: usize, w: usize| spec.chi.unwrap_or_else(|| (d as f64).powi(w as i32).min(256.0) as usize);
    let rows: Vec<EntropyRow> = tasks
        .par_iter()
        .map(|&(gi, t)| {
            let (d, x, w) = grid[gi];
            scan_trial(spec, gi, d, x, w, t, chi_for(d, w))
        })
        .collect::<Result<_>>()?;
    let mut aggs = Vec::new();
    for (gi, &(d, x, w)) in grid.iter().enumerate() {
        let vals: Vec<f64> = rows[gi * spec.trials..(gi + 1) * spec.trials].iter().map(|r| r.s2).collect();
        let s = Summary::of(&vals);
        let exact = (d as f64).powi(w as i32) <= GRAM_LIMIT as f64;
        let converged = exact || {
            let chi = chi_for(d, w);
            let doubled: Vec<f64> = (0..spec.trials)
                .into_par_iter()
                .map(|t| scan_trial(spec, gi, d, x, w, t, 2 * chi).map(|r| r.s2))
                .collect::<Result<_>>()?;
            let m2 = Summary::of(&doubled).mean;
            (m2 - s.mean).abs() <= 0.02 * s.mean.abs().max(1e-12)
        };
        aggs.push(EntropyAgg {
            d,
            lambda_d: x,
            w,
            mean_s2: s.mean,
            std: s.std,
            stderr: s.stderr,
            converged,
        });
    }
    Ok((rows, aggs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::contract_pair;

    fn spec(kind: EnsembleKind, d: usize, lambda: f64, w: usize, h: usize) -> BlockSpec {
        BlockSpec {
            w,
            h,
            ensemble: EnsembleSpec::new(kind, d, lambda),
            cut: h / 2,
        }
    }

    /// Dense boundary state by direct contraction: rows absorbed top to bottom.
    fn dense_state(block: &Block) -> DenseTensor {
        let w = block.w;
        let mut acc: Option<DenseTensor> = None; // (physical so far, d-legs flattened)
        for r in 0..block.h {
            // row tensor: (u_0..u_{w-1}, phys, d_0..d_{w-1})
            let mut row = block.tensor(r, 0).clone(); // (l=1, r, u, d)
            let s = row.shape().to_vec();
            row = row.reshape(&[s[1], s[2], s[3]]).unwrap(); // (r, u0, d0)
            for c in 1..w {
                let a = block.tensor(r, c); // (l, r, u, d)
                row = contract_pair(&row, &[0], a, &[0]).unwrap(); // (u.., d.., r, u, d)
                let k = row.rank();
                let mut perm = vec![k - 3];
                // current order: (u0,d0,u1,d1,...,u_{c-1},d_{c-1}, r, u_c, d_c)
                for i in 0..c {
                    perm.push(2 * i);
                    perm.push(2 * i + 1);
                }
                perm.push(k - 2);
                perm.push(k - 1);
                row = row.permute(&perm).unwrap(); // (r, u0,d0,...,u_c,d_c)
            }
            // reorder to (u-all, r, d-all)
            let mut perm: Vec<usize> = (0..w).map(|i| 1 + 2 * i).collect();
            perm.push(0);
            perm.extend((0..w).map(|i| 2 + 2 * i));
            row = row.permute(&perm).unwrap();
            let sh = row.shape().to_vec();
            let du: usize = sh[..w].iter().product();
            let p = sh[w];
            let dd: usize = sh[w + 1..].iter().product();
            row = row.reshape(&[du, p, dd]).unwrap();
            acc = Some(match acc {
                None => row.reshape(&[p, dd]).unwrap(),
                Some(prev) => {
                    let t = contract_pair(&prev, &[1], &row, &[0]).unwrap();
                    let n = prev.shape()[0];
                    t.reshape(&[n * p, dd]).unwrap()
                }
            });
        }
        let t = acc.unwrap();
        let n = t.len();
        t.reshape(&[n]).unwrap()
    }

    fn dense_spectrum(psi: &DenseTensor, left_dim: usize) -> Vec<f64> {
        let n = psi.len();
        let m = psi.reshape(&[left_dim, n / left_dim]).unwrap();
        let s = crate::tensor::svd_split(&m, &[0], usize::MAX, 0.0).unwrap();
        normalized_spectrum(s.kept_spectrum.iter().map(|x| x * x).collect())
    }

    #[test]
    fn spectrum_entropies() {
        assert_eq!(renyi_of_spectrum(&[1.0], 2.0), 0.0);
        for a in [0.0, 1.0, 2.0, 3.0] {
            assert!((renyi_of_spectrum(&[1.0 / 3.0; 3], a) - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_column_is_exact() {
        let s = spec(EnsembleKind::HaarOrthogonal, 2, 0.3, 1, 6);
        let psi = block_boundary_state(&s, 2, &mut rng(1)).unwrap();
        assert!(psi.cumulative_truncation < 1e-28);
        assert!(block_boundary_state(&s, 1, &mut rng(1)).is_err());
    }

    #[test]
    fn mps_matches_dense_block() {
        for kind in [EnsembleKind::HaarOrthogonal, EnsembleKind::HaarUnitary] {
            let s = spec(kind, 2, 0.2, 2, 4);
            let block = Block::sample(&s, &mut rng(3)).unwrap();
            let psi = boundary_mps(&block, 64, 0.0).unwrap();
            let dense = dense_state(&block);
            let mps = psi.to_dense();
            // compare up to normalization
            let ov: c64 = dense.entries_c64().iter().zip(mps.entries_c64()).map(|(a, b)| a.conj() * b).sum();
            let fid = ov.norm() / (dense.norm() * mps.norm());
            assert!((1.0 - fid).abs() < 1e-8, "{kind:?} fidelity {fid}");
            let want = dense_spectrum(&dense, 4);
            for alpha in [1.0, 2.0] {
                let rec = renyi_entropy(&psi, 2, alpha).unwrap();
                let exact = renyi_of_spectrum(&want, alpha);
                assert!((rec.s2 - exact).abs() < 1e-8);
                assert!((rec.schmidt_spectrum.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            let g = gram_entropy(&block, 2, 2.0).unwrap();
            assert!((g.s2 - renyi_of_spectrum(&want, 2.0)).abs() < 1e-8);
            assert!((gram_s2(&block, 2).unwrap() - g.s2).abs() < 1e-8);
        }
    }

    #[test]
    fn gram_and_mps_agree_on_larger_blocks() {
        let s = spec(EnsembleKind::HaarOrthogonal, 3, 0.1, 3, 12);
        let block = Block::sample(&s, &mut rng(5)).unwrap();
        let psi = boundary_mps(&block, 1000, 0.0).unwrap();
        let m = renyi_entropy(&psi, 6, 2.0).unwrap();
        let g = gram_entropy(&block, 6, 2.0).unwrap();
        assert!((m.s2 - g.s2).abs() < 1e-8, "{} vs {}", m.s2, g.s2);
        let bound = 3.0 * 3f64.ln() + 1e-9;
        assert!(g.s2 <= bound);
        let vn = gram_entropy(&block, 6, 1.0).unwrap();
        assert!(g.s2 <= vn.s2 + 1e-12);
    }

    #[test]
    fn large_shift_kills_entanglement() {
        let s = spec(EnsembleKind::HaarOrthogonal, 2, 10.0, 2, 8);
        let block = Block::sample(&s, &mut rng(9)).unwrap();
        for cut in 1..8 {
            assert!(gram_s2(&block, cut).unwrap() < 0.05);
        }
    }

    #[test]
    fn product_state_has_zero_entropy() {
        let site = DenseTensor::from_real(&[1, 2, 1], vec![0.6, 0.8]).unwrap();
        let psi = BoundaryMPS {
            site_tensors: vec![site.clone(), site.clone(), site],
            chi_max: 1,
            cumulative_truncation: 0.0,
            canonical_center: None,
        };
        for a in [0.0, 1.0, 2.0] {
            assert!(renyi_entropy(&psi, 1, a).unwrap().s2.abs() < 1e-12);
        }
        assert!(renyi_entropy(&psi, 3, 2.0).is_err());
    }

    #[test]
    fn scan_is_deterministic() {
        let spec = ScanSpec {
            kind: EnsembleKind::HaarOrthogonal,
            target: TargetKind::AllOnes,
            d_list: vec![2],
            lambda_d: vec![0.5],
            w_list: vec![2],
            trials: 3,
            chi: None,
            master_seed: 11,
            experiment: "entropy".into(),
        };
        let a = entropy_scan_unchecked(&spec).unwrap();
        let b = entropy_scan_unchecked(&spec).unwrap();
        assert_eq!(a, b);
        assert!(entropy_scan(&spec).is_err());
    }
}

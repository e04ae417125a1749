//! Decomposition of bipartite PSD operators into positive sums of product PSD
//! factors: identity padding in a Hermitian basis, preceded when needed by a
//! Frank-Wolfe fit with product pure states.

use crate::error::{arg, Result};
use crate::tensor::{c64, eigh_hermitian};
use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::LeastSquaresSvd;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Mixing weight of the maximally mixed state removed before the product-state fit.
pub const FW_SHRINK: f64 = 0.02;
pub const FW_MAX_ITERS: usize = 1000;
pub const FW_CERTIFY_EVERY: usize = 10;
pub const LMO_RESTARTS: usize = 12;
pub const LMO_SWEEPS: usize = 25;
/// Grid over the weight `s` of the fitted separable part in the certificate.
pub const CERTIFY_GRID: usize = 51;
/// Identity shortfall tolerated in the padding budget (absorbs roundoff when the remainder vanishes).
pub const PAD_TOL: f64 = 1e-12;

/// Orthonormal Hermitian basis of n×n matrices, identity first.
/// Returns the matrices and their operator norms.
pub fn gell_mann(n: usize) -> (Vec<Array2<c64>>, Vec<f64>) {
    let mut mats = Vec::with_capacity(n * n);
    let mut norms = Vec::with_capacity(n * n);
    let nf = n as f64;
    mats.push(Array2::eye(n).mapv(|x: c64| x / nf.sqrt()));
    norms.push(1.0 / nf.sqrt());
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..n {
        for k in j + 1..n {
            let mut m = Array2::zeros((n, n));
            m[[j, k]] = c64::new(h, 0.0);
            m[[k, j]] = c64::new(h, 0.0);
            mats.push(m);
            norms.push(h);
            let mut m = Array2::zeros((n, n));
            m[[j, k]] = c64::new(0.0, -h);
            m[[k, j]] = c64::new(0.0, h);
            mats.push(m);
            norms.push(h);
        }
    }
    for l in 1..n {
        let lf = l as f64;
        let scale = 1.0 / (lf * (lf + 1.0)).sqrt();
        let mut m = Array2::zeros((n, n));
        for j in 0..l {
            m[[j, j]] = c64::new(scale, 0.0);
        }
        m[[l, l]] = c64::new(-lf * scale, 0.0);
        mats.push(m);
        norms.push(lf * scale);
    }
    (mats, norms)
}

/// Real coefficients `c[a, b] = tr(R·(G_a ⊗ G_b))`.
fn basis_coefficients(r: &Array2<c64>, ga: &[Array2<c64>], gb: &[Array2<c64>]) -> Array2<f64> {
    let (na, nb) = (ga[0].nrows(), gb[0].nrows());
    let r4 = r.view().into_shape_with_order((na, nb, na, nb)).expect("bipartite dims");
    // partial contraction over B first: X_b[i, k] = Σ_{j,l} R[i,j,k,l]·G_b[l, j]
    let xb: Vec<Array2<c64>> = gb
        .iter()
        .map(|g| {
            Array2::from_shape_fn((na, na), |(i, k)| {
                let mut acc = c64::new(0.0, 0.0);
                for j in 0..nb {
                    for l in 0..nb {
                        acc += r4[[i, j, k, l]] * g[[l, j]];
                    }
                }
                acc
            })
        })
        .collect();
    Array2::from_shape_fn((ga.len(), gb.len()), |(a, b)| {
        let g = &ga[a];
        let x = &xb[b];
        let mut acc = c64::new(0.0, 0.0);
        for i in 0..na {
            for k in 0..na {
                acc += x[[i, k]] * g[[k, i]];
            }
        }
        acc.re
    })
}

fn kron(a: &Array2<c64>, b: &Array2<c64>) -> Array2<c64> {
    let (m, n) = (a.nrows(), b.nrows());
    Array2::from_shape_fn((m * n, m * n), |(i, j)| a[[i / n, j / n]] * b[[i % n, j % n]])
}

fn outer(v: &Array1<c64>) -> Array2<c64> {
    Array2::from_shape_fn((v.len(), v.len()), |(i, j)| v[i] * v[j].conj())
}

fn trace(m: &Array2<c64>) -> f64 {
    m.diag().iter().map(|z| z.re).sum()
}

fn frob(m: &Array2<c64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableTerm {
    pub p: f64,
    pub sigma_a: Array2<c64>,
    pub sigma_b: Array2<c64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableDecomposition {
    pub terms: Vec<SeparableTerm>,
    pub dims: (usize, usize),
    /// Whether a product-state fit preceded the identity padding.
    pub used_fit: bool,
}

impl SeparableDecomposition {
    pub fn reconstruct(&self) -> Array2<c64> {
        let n = self.dims.0 * self.dims.1;
        let mut out = Array2::zeros((n, n));
        for t in &self.terms {
            out = out + kron(&t.sigma_a, &t.sigma_b).mapv(|z| z * t.p);
        }
        out
    }

    pub fn reconstruction_error(&self, rho: &Array2<c64>) -> f64 {
        frob(&(self.reconstruct() - rho))
    }

    /// Smallest eigenvalue over all factors.
    pub fn min_factor_eigenvalue(&self) -> Result<f64> {
        let mut m = f64::INFINITY;
        for t in &self.terms {
            for s in [&t.sigma_a, &t.sigma_b] {
                let (w, _) = eigh_hermitian(s)?;
                m = m.min(w[0]);
            }
        }
        Ok(m)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.p).collect()
    }
}

/// Why the padding construction does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotSeparable {
    /// Weight of `I⊗I` available for padding.
    pub identity_mass: f64,
    /// Weight of `I⊗I` the non-identity terms would consume.
    pub padding_cost: f64,
    /// Largest-magnitude non-identity coefficient, the main offender.
    pub offending_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecomposeOutcome {
    Success(SeparableDecomposition),
    Failure(NotSeparable),
}

impl DecomposeOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, DecomposeOutcome::Success(_))
    }

    pub fn success(self) -> Option<SeparableDecomposition> {
        match self {
            DecomposeOutcome::Success(d) => Some(d),
            DecomposeOutcome::Failure(_) => None,
        }
    }
}

struct Basis {
    ga: Vec<Array2<c64>>,
    gb: Vec<Array2<c64>>,
    na_norms: Vec<f64>,
    nb_norms: Vec<f64>,
}

impl Basis {
    fn new(na: usize, nb: usize) -> Self {
        let (ga, na_norms) = gell_mann(na);
        let (gb, nb_norms) = gell_mann(nb);
        Basis { ga, gb, na_norms, nb_norms }
    }

    /// (identity mass, padding cost, largest non-identity coefficient) of the operator with coefficients `c`.
    fn budget(&self, c: &Array2<f64>) -> NotSeparable {
        let mass = c[[0, 0]] * self.na_norms[0] * self.nb_norms[0];
        let mut cost = 0.0;
        let mut worst: f64 = 0.0;
        for ((a, b), &x) in c.indexed_iter() {
            if (a, b) != (0, 0) {
                cost += x.abs() * self.na_norms[a] * self.nb_norms[b];
                if x.abs() > worst.abs() {
                    worst = x;
                }
            }
        }
        NotSeparable {
            identity_mass: mass,
            padding_cost: cost,
            offending_coefficient: worst,
        }
    }

    /// Product terms of the padding construction for coefficients `c`, assuming the budget allows it.
    fn pad(&self, c: &Array2<f64>) -> Vec<SeparableTerm> {
        let (na, nb) = (self.ga[0].nrows(), self.gb[0].nrows());
        let ia: Array2<c64> = Array2::eye(na);
        let ib: Array2<c64> = Array2::eye(nb);
        let mut terms = Vec::new();
        let mut left = c[[0, 0]] * self.na_norms[0] * self.nb_norms[0];
        let mut push = |p: f64, a: Array2<c64>, b: Array2<c64>| {
            let (ta, tb) = (trace(&a), trace(&b));
            if p * ta * tb > 0.0 {
                terms.push(SeparableTerm {
                    p: p * ta * tb,
                    sigma_a: a.mapv(|z| z / ta),
                    sigma_b: b.mapv(|z| z / tb),
                });
            }
        };
        for ((a, b), &x) in c.indexed_iter() {
            if (a, b) == (0, 0) || x == 0.0 {
                continue;
            }
            // x·G_a⊗G_b = κ·s·P⊗Q with ‖P‖, ‖Q‖ ≤ 1, padded by κ·I⊗I
            let kappa = x.abs() * self.na_norms[a] * self.nb_norms[b];
            let p = self.ga[a].mapv(|z| z / self.na_norms[a]);
            let q = self.gb[b].mapv(|z| z * x.signum() / self.nb_norms[b]);
            push(kappa / 2.0, &ia + &p, &ib + &q);
            push(kappa / 2.0, &ia - &p, &ib - &q);
            left -= kappa;
        }
        push(left, ia, ib);
        terms
    }
}

/// Footnote-style construction: expand in a Hermitian basis containing the
/// identity and pair each term with part of the identity.
pub fn identity_padding(rho: &Array2<c64>, dims: (usize, usize)) -> Result<std::result::Result<SeparableDecomposition, NotSeparable>> {
    check(rho, dims)?;
    let basis = Basis::new(dims.0, dims.1);
    let c = basis_coefficients(rho, &basis.ga, &basis.gb);
    let b = basis.budget(&c);
    if b.identity_mass - b.padding_cost < -PAD_TOL {
        return Ok(Err(b));
    }
    Ok(Ok(SeparableDecomposition {
        terms: basis.pad(&c),
        dims,
        used_fit: false,
    }))
}

fn check(rho: &Array2<c64>, dims: (usize, usize)) -> Result<()> {
    let n = dims.0 * dims.1;
    if rho.dim() != (n, n) {
        return arg(format!("operator must be {n}x{n} for dims {dims:?}"));
    }
    let herm = frob(&(rho - &rho.t().mapv(|z| z.conj())));
    if herm > 1e-10 * frob(rho).max(1.0) {
        return arg("operator must be Hermitian");
    }
    if (trace(rho) - 1.0).abs() > 1e-10 {
        return arg("operator must have unit trace");
    }
    Ok(())
}

fn random_unit<R: Rng>(n: usize, rng: &mut R) -> Array1<c64> {
    let v = Array1::from_shape_fn(n, |_| c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv(|z| z / nrm)
}

fn lowest(m: &Array2<c64>) -> Result<(f64, Array1<c64>)> {
    let (w, v) = eigh_hermitian(m)?;
    Ok((w[0], v.column(0).to_owned()))
}

/// Product pure state `a⊗b` approximately minimizing `⟨ab|G|ab⟩` by alternating eigenproblems.
fn product_lmo<R: Rng>(g: &Array2<c64>, dims: (usize, usize), rng: &mut R) -> Result<(f64, Array1<c64>, Array1<c64>)> {
    let (na, nb) = dims;
    let g4 = g.view().into_shape_with_order((na, nb, na, nb)).expect("bipartite dims");
    let (_, v0) = lowest(g)?;
    let m0 = v0.into_shape_with_order((na, nb)).expect("dims");
    let (_, _, vt) = crate::tensor::svd_thin(&m0)?;
    let first_b = vt.row(0).mapv(|z| z.conj());
    let mut best: Option<(f64, Array1<c64>, Array1<c64>)> = None;
    for start in 0..=LMO_RESTARTS {
        let mut b = if start == 0 { first_b.clone() } else { random_unit(nb, rng) };
        let mut a = Array1::zeros(na);
        let mut val = f64::INFINITY;
        for _ in 0..LMO_SWEEPS {
            let ga = Array2::from_shape_fn((na, na), |(i, k)| {
                let mut acc = c64::new(0.0, 0.0);
                for j in 0..nb {
                    for l in 0..nb {
                        acc += g4[[i, j, k, l]] * b[j].conj() * b[l];
                    }
                }
                acc
            });
            a = lowest(&ga)?.1;
            let gb = Array2::from_shape_fn((nb, nb), |(j, l)| {
                let mut acc = c64::new(0.0, 0.0);
                for i in 0..na {
                    for k in 0..na {
                        acc += g4[[i, j, k, l]] * a[i].conj() * a[k];
                    }
                }
                acc
            });
            let (v, bb) = lowest(&gb)?;
            val = v;
            b = bb;
        }
        if best.as_ref().is_none_or(|(bv, _, _)| val < *bv) {
            best = Some((val, a, b));
        }
    }
    Ok(best.expect("at least one start"))
}

/// Real vectorization of a Hermitian matrix: real parts then imaginary parts.
fn herm_vec(m: &Array2<c64>) -> Array1<f64> {
    m.iter().map(|z| z.re).chain(m.iter().map(|z| z.im)).collect()
}

/// Nonnegative least squares `min ‖A·x − b‖, x ≥ 0` (Lawson-Hanson active set).
pub fn nnls(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    nnls_gram(&a.t().dot(a), &a.t().dot(b), None)
}

/// Lawson-Hanson on the normal equations `G = AᵀA`, `h = Aᵀb`.
///
/// `warm` must be optimal for the problem restricted to its nonzero entries,
/// e.g. the previous solution with new columns appended as zeros.
fn nnls_gram(g: &Array2<f64>, h: &Array1<f64>, warm: Option<Array1<f64>>) -> Result<Array1<f64>> {
    let n = g.ncols();
    let mut x = warm.unwrap_or_else(|| Array1::zeros(n));
    let mut passive: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
    let tol = 1e-12 * g.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let solve = |passive: &[bool]| -> Result<Array1<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = g.select(Axis(0), &idx).select(Axis(1), &idx);
        let rhs = h.select(Axis(0), &idx);
        let sol = sub.least_squares(&rhs)?.solution;
        let mut z = Array1::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            z[j] = sol[k];
        }
        Ok(z)
    };
    for _ in 0..3 * n + 10 {
        let w = h - &g.dot(&x);
        let cand = (0..n).filter(|&j| !passive[j]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match cand {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        loop {
            let z = solve(&passive)?;
            let bad: Vec<usize> = (0..n).filter(|&j| passive[j] && z[j] <= 0.0).collect();
            if bad.is_empty() {
                x = z;
                break;
            }
            let alpha = bad
                .iter()
                .map(|&j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x = &x + &((&z - &x) * alpha);
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(x)
}

/// Decompose `rho` (unit trace, Hermitian, on an `na × nb` bipartite space).
///
/// A trivial factor (`na = 1` or `nb = 1`) gives a single term. Otherwise
/// tries identity padding on `rho` itself, and failing that fits
/// `(rho − t·I/n)/(1 − t)` by a nonnegative combination `ω` of product pure
/// states and, every few iterations, tries to pad `rho − s·ω` for `s` on a grid.
pub fn separable_decompose<R: Rng>(rho: &Array2<c64>, dims: (usize, usize), rng: &mut R) -> Result<DecomposeOutcome> {
    separable_decompose_with(rho, dims, rng, FW_SHRINK, FW_MAX_ITERS)
}

/// `separable_decompose` with an explicit shrink `t ∈ [0, 1)` and iteration budget.
pub fn separable_decompose_with<R: Rng>(
    rho: &Array2<c64>,
    dims: (usize, usize),
    rng: &mut R,
    shrink: f64,
    max_iters: usize,
) -> Result<DecomposeOutcome> {
    if !(0.0..1.0).contains(&shrink) {
        return arg("shrink must lie in [0, 1)");
    }
    if dims.0 == 1 || dims.1 == 1 {
        // one trivial factor: rho is already a product
        check(rho, dims)?;
        let one: Array2<c64> = Array2::eye(1);
        let (sigma_a, sigma_b) = if dims.0 == 1 { (one, rho.clone()) } else { (rho.clone(), one) };
        return Ok(DecomposeOutcome::Success(SeparableDecomposition {
            terms: vec![SeparableTerm { p: 1.0, sigma_a, sigma_b }],
            dims,
            used_fit: false,
        }));
    }
    if let Ok(d) = identity_padding(rho, dims)? {
        return Ok(DecomposeOutcome::Success(d));
    }
    let n = dims.0 * dims.1;
    let basis = Basis::new(dims.0, dims.1);
    let c_rho = basis_coefficients(rho, &basis.ga, &basis.gb);
    let eye: Array2<c64> = Array2::eye(n);
    let target = (rho - &eye.mapv(|z| z * (shrink / n as f64))).mapv(|z| z / (1.0 - shrink));
    let t_vec = herm_vec(&target);
    // atoms (a, b, |ab⟩⟨ab|, its real vectorization) with their Gram matrix and overlaps with the target
    let mut atoms: Vec<(Array1<c64>, Array1<c64>, Array2<c64>, Array1<f64>)> = Vec::new();
    let mut gram = Array2::<f64>::zeros((0, 0));
    let mut h = Array1::<f64>::zeros(0);
    let mut weights: Vec<f64> = Vec::new();
    let mut omega: Array2<c64> = Array2::zeros((n, n));
    let mut best_fail = basis.budget(&c_rho);
    for it in 0..max_iters {
        let (_, a, b) = product_lmo(&(&omega - &target), dims, rng)?;
        let ab = Array1::from_shape_fn(n, |i| a[i / dims.1] * b[i % dims.1]);
        let p = outer(&ab);
        let v = herm_vec(&p);
        let k = atoms.len();
        let mut g2 = Array2::<f64>::zeros((k + 1, k + 1));
        g2.slice_mut(ndarray::s![..k, ..k]).assign(&gram);
        for (j, at) in atoms.iter().enumerate() {
            let x = at.3.dot(&v);
            g2[[j, k]] = x;
            g2[[k, j]] = x;
        }
        g2[[k, k]] = v.dot(&v);
        let mut h2 = h.to_vec();
        h2.push(v.dot(&t_vec));
        atoms.push((a, b, p, v));
        let mut warm = weights.clone();
        warm.push(0.0);
        let w = nnls_gram(&g2, &Array1::from(h2.clone()), Some(Array1::from(warm)))?;
        let keep: Vec<usize> = (0..atoms.len()).filter(|&k| w[k] > 0.0).collect();
        atoms = keep.iter().map(|&k| atoms[k].clone()).collect();
        gram = g2.select(Axis(0), &keep).select(Axis(1), &keep);
        h = keep.iter().map(|&k| h2[k]).collect();
        weights = keep.iter().map(|&k| w[k]).collect();
        omega = Array2::zeros((n, n));
        for ((_, _, p, _), &wk) in atoms.iter().zip(&weights) {
            omega = omega + p.mapv(|z| z * wk);
        }
        if it % FW_CERTIFY_EVERY == FW_CERTIFY_EVERY - 1 {
            let c_om = basis_coefficients(&omega, &basis.ga, &basis.gb);
            let mut best: Option<(f64, f64)> = None;
            for g in 0..CERTIFY_GRID {
                let s = 0.5 + 0.5 * g as f64 / (CERTIFY_GRID - 1) as f64;
                let bud = basis.budget(&(&c_rho - &c_om.mapv(|x| x * s)));
                let slack = bud.identity_mass - bud.padding_cost;
                if best.is_none_or(|(m, _)| slack > m) {
                    best = Some((slack, s));
                }
                if slack > best_fail.identity_mass - best_fail.padding_cost {
                    best_fail = bud;
                }
            }
            if let Some((_, s)) = best.filter(|&(m, _)| m >= -PAD_TOL) {
                let c = &c_rho - &c_om.mapv(|x| x * s);
                let mut terms = basis.pad(&c);
                for ((a, b, _, _), &wk) in atoms.iter().zip(&weights) {
                    terms.push(SeparableTerm {
                        p: s * wk,
                        sigma_a: outer(a),
                        sigma_b: outer(b),
                    });
                }
                return Ok(DecomposeOutcome::Success(SeparableDecomposition {
                    terms,
                    dims,
                    used_fit: true,
                }));
            }
        }
    }
    Ok(DecomposeOutcome::Failure(best_fail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use proptest::prelude::*;

    #[test]
    fn gell_mann_is_orthonormal() {
        for n in [1, 2, 3, 4] {
            let (g, norms) = gell_mann(n);
            assert_eq!(g.len(), n * n);
            for (a, ga) in g.iter().enumerate() {
                let (w, _) = eigh_hermitian(ga).unwrap();
                let op = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!((op - norms[a]).abs() < 1e-12);
                for (b, gb) in g.iter().enumerate() {
                    let t = ga.dot(gb).diag().sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((t - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maximally_mixed_is_a_single_term() {
        let rho: Array2<c64> = Array2::eye(16).mapv(|z: c64| z / 16.0);
        let d = identity_padding(&rho, (4, 4)).unwrap().unwrap();
        assert_eq!(d.terms.len(), 1);
        assert!((d.terms[0].p - 1.0).abs() < 1e-15);
        assert!(d.reconstruction_error(&rho) < 1e-14);
        assert!((&d.terms[0].sigma_a - &Array2::eye(4).mapv(|z: c64| z / 4.0)).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn entangled_state_is_refused_with_witness() {
        // Bell state on 2×2
        let mut psi = Array1::zeros(4);
        psi[0] = c64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        psi[3] = psi[0];
        let rho = outer(&psi);
        let out = separable_decompose(&rho, (2, 2), &mut rng(1)).unwrap();
        match out {
            DecomposeOutcome::Failure(w) => assert!(w.padding_cost > w.identity_mass && w.offending_coefficient != 0.0),
            DecomposeOutcome::Success(_) => panic!("Bell state is entangled"),
        }
    }

    #[test]
    fn separable_mixture_needs_the_fit() {
        // a few product states over a little white noise: separable, beyond plain padding
        let mut g = rng(2);
        let n = 6;
        let mut rho: Array2<c64> = Array2::eye(n).mapv(|z: c64| z * (0.1 / n as f64));
        for _ in 0..3 {
            let a = random_unit(3, &mut g);
            let b = random_unit(2, &mut g);
            let ab = Array1::from_shape_fn(n, |i| a[i / 2] * b[i % 2]);
            rho = rho + outer(&ab).mapv(|z| z * 0.3);
        }
        assert!(identity_padding(&rho, (3, 2)).unwrap().is_err());
        let d = separable_decompose(&rho, (3, 2), &mut rng(4)).unwrap().success().unwrap();
        assert!(d.used_fit);
        assert!(d.reconstruction_error(&rho) < 1e-10);
        assert!(d.min_factor_eigenvalue().unwrap() > -1e-12);
        assert!(d.terms.iter().all(|t| t.p > 0.0));
    }

    #[test]
    fn nnls_matches_known_solution() {
        let a = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let x = nnls(&a, &ndarray::arr1(&[1.0, -1.0, 0.0])).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && x[1] == 0.0);
        let x = nnls(&a, &ndarray::arr1(&[1.0, 2.0, 3.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_input() {
        let rho: Array2<c64> = Array2::eye(4);
        assert!(identity_padding(&rho, (2, 2)).is_err());
        assert!(identity_padding(&rho.mapv(|z| z / 4.0), (2, 3)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn padding_successes_reconstruct(seed in 0u64..1000, mix in 0.6f64..1.0) {
            // mixtures close to the identity are always padded
            let mut g = rng(seed);
            let v = random_unit(9, &mut g);
            let eye: Array2<c64> = Array2::eye(9);
            let rho = eye.mapv(|z| z * (mix / 9.0)) + outer(&v).mapv(|z| z * (1.0 - mix) * 0.1)
                + eye.mapv(|z| z * ((1.0 - mix) * 0.9 / 9.0));
            if let Ok(d) = identity_padding(&rho, (3, 3)).unwrap() {
                prop_assert!(d.reconstruction_error(&rho) < 1e-10);
                prop_assert!(d.terms.iter().all(|t| t.p > 0.0));
                prop_assert!(d.min_factor_eigenvalue().unwrap() > -1e-12);
                prop_assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }
}

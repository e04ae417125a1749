//! Double-layer PEPS norms: composite ket⊗bra tensors, bipartite groupings of
//! their legs, positive-sum estimation over plaquettes, and the entanglement of
//! contracted double-layer blocks.

use crate::boundary::{block_legs, block_s2, Block};
use crate::ensembles::{make_peps_tensor, Legs, PepsSpec};
use crate::error::{arg, Error, Result};
use crate::network::{transfer_value, ContractionValue, Geometry, LatticeNetwork};
use crate::rng::{rng, stream_rng, trial_seed};
use crate::separable::{separable_decompose, DecomposeOutcome, SeparableDecomposition};
use crate::sign_mc::McEstimate;
use crate::stats::{linear_fit, power_law_decay, Summary};
use crate::tensor::{c64, eigh_hermitian, permuted, DenseTensor, Field, Scalar};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// PEPS tensor contracted with its conjugate over the physical index.
///
/// `a` has legs (l, r, u, d); leg `k` has dimension `ket_dims[k]²` and
/// composite index `ket·ket_dims[k] + bra`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleLayerTensor {
    pub a: DenseTensor,
    pub ket_dims: [usize; 4],
    pub phys_dim: usize,
}

/// `A = Σ_i C_i ⊗ C̄_i` for `c` with legs (phys, l, r, u, d).
pub fn double_layer(c: &DenseTensor) -> Result<DoubleLayerTensor> {
    if c.rank() != 5 {
        return arg(format!("PEPS tensor needs 5 legs (d, l, r, u, d), got {}", c.rank()));
    }
    let s = c.shape();
    let phys = s[0];
    let ket_dims = [s[1], s[2], s[3], s[4]];
    let k: usize = ket_dims.iter().product();
    let m = ket_bra(&c.to_complex(), phys, k);
    let eight: Vec<usize> = ket_dims.iter().chain(ket_dims.iter()).copied().collect();
    let a = permuted(&m.into_shape_with_order(IxDyn(&eight))?, &[0, 4, 1, 5, 2, 6, 3, 7]);
    let a = a.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&ket_dims.map(|x| x * x)))?;
    let a = match c.field() {
        Field::Real => DenseTensor::Real(a.mapv(|z| z.re)),
        Field::Complex => DenseTensor::Complex(a),
    };
    Ok(DoubleLayerTensor { a, ket_dims, phys_dim: phys })
}

/// `M[ket, bra] = Σ_i c[i, ket]·conj(c[i, bra])`.
fn ket_bra(c: &ArrayD<c64>, phys: usize, k: usize) -> ArrayD<c64> {
    let cm = c.as_standard_layout().into_owned().into_shape_with_order((phys, k)).expect("contiguous");
    cm.t().dot(&cm.mapv(|z| z.conj())).into_dyn()
}

impl DoubleLayerTensor {
    /// The tensor as a map from the ket multi-index (l, r, u, d) to the bra multi-index.
    pub fn ket_bra_matrix(&self) -> Array2<c64> {
        let k: usize = self.ket_dims.iter().product();
        let split: Vec<usize> = self.ket_dims.iter().flat_map(|&x| [x, x]).collect();
        let a = self.a.to_complex().into_shape_with_order(IxDyn(&split)).expect("composite legs");
        permuted(&a, &[0, 2, 4, 6, 1, 3, 5, 7])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((k, k))
            .expect("square")
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(eigh_hermitian(&self.ket_bra_matrix())?.0[0])
    }

    /// Full trace over all paired legs, `‖c‖²`.
    pub fn trace(&self) -> f64 {
        self.ket_bra_matrix().diag().iter().map(|z| z.re).sum()
    }

    /// The composite tensor with absent (dimension-1) legs removed.
    fn stripped(&self) -> Result<DenseTensor> {
        let dims: Vec<usize> = self.ket_dims.iter().filter(|&&x| x > 1).map(|x| x * x).collect();
        self.a.reshape(&dims)
    }
}

/// Which two legs form subsystem A; the other two form B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grouping {
    /// A = (l, d), B = (u, r).
    LeftDownUpRight,
    /// A = (l, u), B = (r, d).
    LeftUpRightDown,
}

impl Grouping {
    /// Alternating pattern with `(0, 0)` grouped `LeftDownUpRight`.
    pub fn for_site(r: usize, c: usize) -> Grouping {
        if (r + c).is_multiple_of(2) {
            Grouping::LeftDownUpRight
        } else {
            Grouping::LeftUpRightDown
        }
    }

    /// Leg positions (0 = l, 1 = r, 2 = u, 3 = d) of A and of B, in index order.
    pub fn legs(self) -> ([usize; 2], [usize; 2]) {
        match self {
            Grouping::LeftDownUpRight => ([0, 3], [2, 1]),
            Grouping::LeftUpRightDown => ([0, 2], [1, 3]),
        }
    }

    pub fn dims(self, ket_dims: [usize; 4]) -> (usize, usize) {
        let (a, b) = self.legs();
        (ket_dims[a[0]] * ket_dims[a[1]], ket_dims[b[0]] * ket_dims[b[1]])
    }
}

/// The ket→bra map regrouped as a bipartite operator on A⊗B, unit trace.
pub fn rho_from_grouping(t: &DoubleLayerTensor, grouping: Grouping) -> Result<Array2<c64>> {
    let (a, b) = grouping.legs();
    let order = [a[0], a[1], b[0], b[1]];
    let perm: Vec<usize> = order.iter().chain(order.iter()).enumerate().map(|(k, &x)| if k < 4 { x } else { x + 4 }).collect();
    let eight: Vec<usize> = t.ket_dims.iter().chain(t.ket_dims.iter()).copied().collect();
    let m = t.ket_bra_matrix().into_shape_with_order(IxDyn(&eight))?;
    let n: usize = t.ket_dims.iter().product();
    let rho = permuted(&m, &perm).as_standard_layout().into_owned().into_shape_with_order((n, n))?;
    let tr: f64 = rho.diag().iter().map(|z| z.re).sum();
    if tr <= 0.0 {
        return arg("double-layer tensor has zero trace");
    }
    Ok(rho.mapv(|z| z / tr))
}

/// Open `rows × cols` grid of double-layer tensors; absent boundary legs have dimension 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PepsNetwork {
    pub rows: usize,
    pub cols: usize,
    pub bond_dim: usize,
    pub phys_dim: usize,
    pub sites: Vec<DoubleLayerTensor>,
}

/// Padded PEPS tensor with legs (phys, l, r, u, d).
pub fn padded_peps_tensor<R: Rng>(spec: &PepsSpec, legs: Legs, rng: &mut R) -> Result<DenseTensor> {
    let c = make_peps_tensor(spec, legs, rng)?;
    let mut shape = vec![spec.phys_dim];
    shape.extend(legs.padded_dims(spec.bond_dim));
    c.reshape(&shape)
}

impl PepsNetwork {
    /// Site `(r, c)` drawn from stream `r·cols + c` of `spec.seed`.
    pub fn random(spec: &PepsSpec, rows: usize, cols: usize) -> Result<PepsNetwork> {
        if rows == 0 || cols == 0 {
            return arg("PEPS lattice must be at least 1x1");
        }
        let mut sites = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let legs = LatticeNetwork::lattice_legs(rows, cols, Geometry::OpenRect, r, c);
                let mut g = stream_rng(spec.seed, (r * cols + c) as u64);
                sites.push(double_layer(&padded_peps_tensor(spec, legs, &mut g)?)?);
            }
        }
        Ok(PepsNetwork {
            rows,
            cols,
            bond_dim: spec.bond_dim,
            phys_dim: spec.phys_dim,
            sites,
        })
    }

    pub fn site(&self, r: usize, c: usize) -> &DoubleLayerTensor {
        &self.sites[r * self.cols + c]
    }

    /// Norm network with composite bonds of dimension `D²`.
    pub fn to_lattice(&self) -> Result<LatticeNetwork> {
        let tensors = self.sites.iter().map(|s| s.stripped()).collect::<Result<Vec<_>>>()?;
        LatticeNetwork::new(self.rows, self.cols, Geometry::OpenRect, self.bond_dim * self.bond_dim, tensors)
    }

    pub fn exact_norm(&self) -> Result<ContractionValue> {
        transfer_value(&self.to_lattice()?)
    }
}

/// Separable form of one site's grouped operator, `M = trace·Σ p σ_A⊗σ_B`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteDecomposition {
    pub grouping: Grouping,
    pub trace: f64,
    pub decomposition: SeparableDecomposition,
}

/// Decompose every site in its alternating grouping; site `s` uses stream `s` of `seed`.
pub fn decompose_network(net: &PepsNetwork, seed: u64) -> Result<Vec<(Grouping, DecomposeOutcome)>> {
    (0..net.sites.len())
        .into_par_iter()
        .map(|s| {
            let g = Grouping::for_site(s / net.cols, s % net.cols);
            let t = &net.sites[s];
            let rho = rho_from_grouping(t, g)?;
            let out = separable_decompose(&rho, g.dims(t.ket_dims), &mut stream_rng(seed, s as u64))?;
            Ok((g, out))
        })
        .collect()
}

/// Site decompositions, or the first site whose grouped operator was refused.
pub fn site_decompositions(net: &PepsNetwork, seed: u64) -> Result<std::result::Result<Vec<SiteDecomposition>, usize>> {
    let mut out = Vec::with_capacity(net.sites.len());
    for (s, (grouping, outcome)) in decompose_network(net, seed)?.into_iter().enumerate() {
        match outcome {
            DecomposeOutcome::Success(decomposition) => out.push(SiteDecomposition {
                grouping,
                trace: net.sites[s].trace(),
                decomposition,
            }),
            DecomposeOutcome::Failure(_) => return Ok(Err(s)),
        }
    }
    Ok(Ok(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveSumEstimate {
    pub estimate: McEstimate,
    /// Smallest plaquette value met while sampling.
    pub min_plaquette: f64,
    /// `Σ T / Σ |T|` over sampled terms.
    pub average_sign: f64,
}

/// One active face: corner sites (TL, TR, BR, BL) when present, and the ket
/// dimensions of its edges e1 = TL–TR, e2 = TR–BR, e3 = BR–BL, e4 = BL–TL.
struct Face {
    corners: [Option<usize>; 4],
    dims: [usize; 4],
}

fn active_faces(rows: usize, cols: usize, bond_dim: usize) -> Vec<Face> {
    let site = |r: i64, c: i64| -> Option<usize> {
        (r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols).then(|| r as usize * cols + c as usize)
    };
    let mut faces = Vec::new();
    for r in -1..rows as i64 {
        for c in -1..cols as i64 {
            if (r + c).rem_euclid(2) != 1 {
                continue;
            }
            let corners = [site(r, c), site(r, c + 1), site(r + 1, c + 1), site(r + 1, c)];
            let edge = |a: usize, b: usize| if corners[a].is_some() && corners[b].is_some() { bond_dim } else { 1 };
            faces.push(Face {
                corners,
                dims: [edge(0, 1), edge(1, 2), edge(2, 3), edge(3, 0)],
            });
        }
    }
    faces
}

/// Overlap of the four corner operators around a face:
/// `Σ TL[e1 e4; f1 f4]·TR[e1 e2; f1 f2]·BR[e3 e2; f3 f2]·BL[e4 e3; f4 f3]`.
pub fn plaquette_value(ops: [Option<&Array2<c64>>; 4], dims: [usize; 4]) -> f64 {
    let one = Array2::from_elem((1, 1), c64::new(1.0, 0.0));
    let [tl, tr, br, bl] = ops.map(|o| o.unwrap_or(&one));
    let [d1, d2, d3, d4] = dims;
    let mut acc = c64::new(0.0, 0.0);
    for e1 in 0..d1 {
        for f1 in 0..d1 {
            for e4 in 0..d4 {
                for f4 in 0..d4 {
                    let x = tl[[e1 * d4 + e4, f1 * d4 + f4]];
                    for e2 in 0..d2 {
                        for f2 in 0..d2 {
                            let y = x * tr[[e1 * d2 + e2, f1 * d2 + f2]];
                            for e3 in 0..d3 {
                                for f3 in 0..d3 {
                                    acc += y * br[[e3 * d2 + e2, f3 * d2 + f2]] * bl[[e4 * d3 + e3, f4 * d3 + f3]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    acc.re
}

/// Unbiased norm estimate `Π trace_s · E[Π_faces F]` with term indices drawn
/// independently per site with probability `p_i`.
pub fn positive_sum_estimate<R: Rng>(
    net: &PepsNetwork,
    decomps: &[SiteDecomposition],
    samples: usize,
    rng: &mut R,
) -> Result<PositiveSumEstimate> {
    if !net.rows.is_multiple_of(2) || !net.cols.is_multiple_of(2) {
        return arg(format!("plaquette tiling needs an even x even lattice, got {}x{}", net.rows, net.cols));
    }
    if samples < 2 {
        return arg("K must be >= 2");
    }
    if decomps.len() != net.sites.len() {
        return arg(format!("expected {} site decompositions, got {}", net.sites.len(), decomps.len()));
    }
    for (s, d) in decomps.iter().enumerate() {
        let want = Grouping::for_site(s / net.cols, s % net.cols);
        if d.grouping != want || d.decomposition.dims != want.dims(net.sites[s].ket_dims) {
            return arg(format!("site {s} needs grouping {want:?}"));
        }
    }
    let prefactor: f64 = decomps
        .iter()
        .map(|d| d.trace * d.decomposition.terms.iter().map(|t| t.p).sum::<f64>())
        .product();
    let pickers = decomps
        .iter()
        .map(|d| WeightedIndex::new(d.decomposition.terms.iter().map(|t| t.p)).map_err(|e| Error::Argument(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let faces = active_faces(net.rows, net.cols, net.bond_dim);
    // corner k of a face uses factor B for TL and BL, factor A for TR and BR
    let uses_a = [false, true, true, false];
    let mut pick = vec![0usize; decomps.len()];
    let mut terms = Vec::with_capacity(samples);
    let mut min_plaquette = f64::INFINITY;
    for _ in 0..samples {
        for (p, w) in pick.iter_mut().zip(&pickers) {
            *p = w.sample(rng);
        }
        let mut t = prefactor;
        for f in &faces {
            let ops = std::array::from_fn(|k| {
                f.corners[k].map(|s| {
                    let term = &decomps[s].decomposition.terms[pick[s]];
                    if uses_a[k] {
                        &term.sigma_a
                    } else {
                        &term.sigma_b
                    }
                })
            });
            let v = plaquette_value(ops, f.dims);
            min_plaquette = min_plaquette.min(v);
            t *= v;
        }
        terms.push(t);
    }
    let s = Summary::of(&terms);
    let abs_sum: f64 = terms.iter().map(|t| t.abs()).sum();
    Ok(PositiveSumEstimate {
        estimate: McEstimate {
            mean: Scalar::Real(s.mean),
            stderr: s.stderr,
            samples,
        },
        min_plaquette,
        average_sign: terms.iter().sum::<f64>() / abs_sum,
    })
}

/// `W × 4W` block of double-layer tensors with open right legs, drawn row-major from `rng`.
pub fn peps_block<R: Rng>(spec: &PepsSpec, w: usize, rng: &mut R) -> Result<Block> {
    let h = 4 * w;
    let mut tensors = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            tensors.push(double_layer(&padded_peps_tensor(spec, block_legs(h, r, c), rng)?)?.a);
        }
    }
    Block::from_tensors(w, h, tensors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PepsEntropyRow {
    #[serde(rename = "D")]
    pub bond_dim: usize,
    pub d: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub trial: usize,
    pub s2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PepsEntropySpec {
    pub d_list: Vec<usize>,
    pub phys_list: Vec<usize>,
    pub w_list: Vec<usize>,
    pub trials: usize,
    pub chi: usize,
    pub master_seed: u64,
}

impl PepsEntropySpec {
    /// Grid points `(D, d, W)` in index order.
    pub fn grid(&self) -> Vec<(usize, usize, usize)> {
        let mut g = Vec::new();
        for &bd in &self.d_list {
            for &pd in &self.phys_list {
                for &w in &self.w_list {
                    g.push((bd, pd, w));
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PepsEntropyTable {
    pub rows: Vec<PepsEntropyRow>,
    /// `(D, d, W, summary of S₂)`.
    pub means: Vec<(usize, usize, usize, Summary)>,
    /// `(D, d, slope of mean S₂ against W)`.
    pub slopes: Vec<(usize, usize, f64)>,
    /// `(D, α)` with `S₂ ∝ d^{−α}` fitted on the W-averaged means.
    pub alphas: Vec<(usize, f64)>,
}

pub fn peps_entropy_experiment(spec: &PepsEntropySpec) -> Result<PepsEntropyTable> {
    if spec.d_list.is_empty() || spec.phys_list.is_empty() || spec.w_list.is_empty() || spec.trials == 0 {
        return arg("PEPS entropy grids must be nonempty and trials >= 1");
    }
    let grid = spec.grid();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..spec.trials).map(move |t| (g, t))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(gi, trial)| {
            let (bd, pd, w) = grid[gi];
            let seed = trial_seed(spec.master_seed, "peps", gi, trial);
            let pspec = PepsSpec {
                bond_dim: bd,
                phys_dim: pd,
                seed,
            };
            let block = peps_block(&pspec, w, &mut rng(seed))?;
            let (s2, _, _) = block_s2(&block, 2 * w, spec.chi)?;
            Ok(PepsEntropyRow {
                bond_dim: bd,
                d: pd,
                w,
                trial,
                s2,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut means = Vec::new();
    for &(bd, pd, w) in &grid {
        let xs: Vec<f64> = rows.iter().filter(|r| (r.bond_dim, r.d, r.w) == (bd, pd, w)).map(|r| r.s2).collect();
        means.push((bd, pd, w, Summary::of(&xs)));
    }
    let mut slopes = Vec::new();
    let mut alphas = Vec::new();
    for &bd in &spec.d_list {
        let mut pooled = Vec::new();
        for &pd in &spec.phys_list {
            let pts: Vec<(f64, f64)> = means
                .iter()
                .filter(|m| (m.0, m.1) == (bd, pd))
                .map(|m| (m.2 as f64, m.3.mean))
                .collect();
            let (ws, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let slope = if ws.len() > 1 { linear_fit(&ws, &ys).0 } else { 0.0 };
            slopes.push((bd, pd, slope));
            pooled.push(ys.iter().sum::<f64>() / ys.len() as f64);
        }
        if spec.phys_list.len() > 1 {
            let ds: Vec<f64> = spec.phys_list.iter().map(|&x| x as f64).collect();
            alphas.push((bd, power_law_decay(&ds, &pooled)));
        }
    }
    Ok(PepsEntropyTable {
        rows,
        means,
        slopes,
        alphas,
    })
}

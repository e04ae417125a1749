//! Uniform configuration sampling of network values and the free-energy
//! density difference Δf between the modulus network and the signed one.

use crate::ensembles::{make_site_tensor, EnsembleSpec, Legs};
use crate::error::{arg, guard, Result};
use crate::network::{apply_column, frobenius, LatticeNetwork};
use crate::stats;
use crate::tensor::{c64, elementwise_abs, DenseTensor, Elem, Field, Scalar};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;

pub const CYLINDER_LIMIT: f64 = (1u64 << 16) as f64;
pub const DEFAULT_L: usize = 400;
pub const DEFAULT_BURN_IN: usize = 20;
pub const MIN_KEPT_SLICES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: Scalar,
    pub stderr: f64,
    pub samples: usize,
}

/// `D^{#edges}·⟨T(x)⟩` over uniformly drawn edge configurations.
pub fn mc_estimate_value<R: Rng>(net: &LatticeNetwork, samples: usize, rng: &mut R) -> Result<McEstimate> {
    if samples < 2 {
        return arg("K must be >= 2");
    }
    if !net.open_legs().is_empty() {
        return arg("sampling needs a closed network");
    }
    let dim = net.bond_dim;
    let n_edges = net.num_edges();
    let volume = (dim as f64).powi(n_edges as i32);
    let site_edges = net.site_edges();
    let entries: Vec<Vec<c64>> = net.tensors().iter().map(|t| t.entries_c64()).collect();
    let mut x = vec![0usize; n_edges];
    let mut terms = Vec::with_capacity(samples);
    for _ in 0..samples {
        x.iter_mut().for_each(|xe| *xe = rng.random_range(0..dim));
        let t: c64 = site_edges
            .iter()
            .zip(&entries)
            .map(|(edges, e)| e[edges.iter().fold(0, |f, &k| f * dim + x[k])])
            .product();
        terms.push(t * volume);
    }
    let n = samples as f64;
    let mean: c64 = terms.iter().sum::<c64>() / n;
    let var = terms.iter().map(|t| (t - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        mean: match net.field() {
            Field::Real => Scalar::Real(mean.re),
            Field::Complex => Scalar::Complex(mean),
        },
        stderr: (var / n).sqrt(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaFRecord {
    pub w: usize,
    pub l: usize,
    pub burn_in: usize,
    pub delta_f: f64,
    pub delta_f_stderr: f64,
    /// Per-slice `(log ratio of modulus network − log ratio of signed network)/W`, all slices.
    pub slice_series: Vec<f64>,
}

impl DeltaFRecord {
    pub fn kept(&self) -> &[f64] {
        &self.slice_series[self.burn_in..]
    }

    /// First and second half means of the kept slices agree within 3 combined stderr.
    pub fn is_stationary(&self) -> bool {
        let kept = self.kept();
        let (a, b) = kept.split_at(kept.len() / 2);
        let (sa, sb) = (stats::Summary::of(a), stats::Summary::of(b));
        (sa.mean - sb.mean).abs() <= 3.0 * (sa.stderr.powi(2) + sb.stderr.powi(2)).sqrt()
    }
}

fn to_elem<T: Elem>(t: &DenseTensor) -> ArrayD<T> {
    match t {
        DenseTensor::Real(a) => a.mapv(|x| T::from_c64(c64::new(x, 0.0))),
        DenseTensor::Complex(a) => a.mapv(T::from_c64),
    }
}

/// Signed and modulus boundary vectors of the two cylinder transfers.
struct SliceTransfer<T: Elem> {
    signed: ArrayD<T>,
    moduli: ArrayD<f64>,
}

impl<T: Elem> SliceTransfer<T> {
    fn new(dim: usize, w: usize) -> Self {
        SliceTransfer {
            signed: ArrayD::ones(IxDyn(&vec![dim; w])),
            moduli: ArrayD::ones(IxDyn(&vec![dim; w])),
        }
    }

    /// Absorb one column; returns `(log ‖v_abs‖ ratio − log ‖v‖ ratio)/W`.
    fn step(&mut self, col: &[DenseTensor]) -> f64 {
        let signed: Vec<ArrayD<T>> = col.iter().map(to_elem::<T>).collect();
        let moduli: Vec<ArrayD<f64>> = col.iter().map(|t| to_elem::<f64>(&elementwise_abs(t))).collect();
        self.signed = apply_column(&self.signed, &signed, true);
        self.moduli = apply_column(&self.moduli, &moduli, true);
        let (n, na) = (frobenius(&self.signed), frobenius(&self.moduli));
        self.signed.mapv_inplace(|x| x / T::from_real(n));
        self.moduli.mapv_inplace(|x| x / na);
        (na.ln() - n.ln()) / col.len() as f64
    }
}

/// Per-slice Δf contributions for a sequence of cylinder columns (each W
/// rank-4 tensors in (l, r, u, d) order), starting both transfers from the
/// all-ones vector.
pub fn cylinder_slices(columns: &[Vec<DenseTensor>]) -> Result<Vec<f64>> {
    if columns.is_empty() || columns[0].is_empty() {
        return arg("need at least one column with one site");
    }
    let w = columns[0].len();
    let dim = columns[0][0].shape()[0];
    for col in columns {
        if col.len() != w || col.iter().any(|t| t.shape() != [dim; 4]) {
            return arg(format!("every column needs {w} tensors of shape [{dim}; 4]"));
        }
    }
    fn run<T: Elem>(columns: &[Vec<DenseTensor>], dim: usize, w: usize) -> Vec<f64> {
        let mut st = SliceTransfer::<T>::new(dim, w);
        columns.iter().map(|c| st.step(c)).collect()
    }
    let complex = columns.iter().flatten().any(|t| t.field() == Field::Complex);
    Ok(if complex {
        run::<c64>(columns, dim, w)
    } else {
        run::<f64>(columns, dim, w)
    })
}

fn sampled_series<T: Elem, R: Rng>(spec: &EnsembleSpec, w: usize, l: usize, rng: &mut R) -> Result<Vec<f64>> {
    let mut st = SliceTransfer::<T>::new(spec.bond_dim, w);
    (0..l)
        .map(|_| {
            let col: Vec<DenseTensor> = (0..w)
                .map(|_| make_site_tensor(spec, Legs::ALL, rng))
                .collect::<Result<_>>()?;
            Ok(st.step(&col))
        })
        .collect()
}

/// Δf on a cylinder of circumference `w` and length `l`, discarding `burn_in` slices.
pub fn cylinder_delta_f<R: Rng>(
    spec: &EnsembleSpec,
    w: usize,
    l: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<DeltaFRecord> {
    spec.validate()?;
    if w < 2 {
        return arg("W must be >= 2 for a cylinder");
    }
    guard("D^W", (spec.bond_dim as f64).powi(w as i32), CYLINDER_LIMIT)?;
    if burn_in >= l || l - burn_in < MIN_KEPT_SLICES {
        return arg(format!("need L - burn_in >= {MIN_KEPT_SLICES}"));
    }
    let series = match spec.field() {
        Field::Real => sampled_series::<f64, R>(spec, w, l, rng)?,
        Field::Complex => sampled_series::<c64, R>(spec, w, l, rng)?,
    };
    let s = stats::Summary::of(&series[burn_in..]);
    Ok(DeltaFRecord {
        w,
        l,
        burn_in,
        delta_f: s.mean,
        delta_f_stderr: s.stderr,
        slice_series: series,
    })
}

//! Rectangular tensor networks and their exact contraction, by brute-force
//! configuration sums and by column transfer with log rescaling.

use crate::ensembles::{make_site_tensor, EnsembleSpec, Legs};
use crate::error::{arg, guard, Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{c64, elementwise_abs, permuted, DenseTensor, Elem, Field, Scalar};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

pub const BRUTE_FORCE_LIMIT: f64 = (1u64 << 24) as f64;
pub const TRANSFER_LIMIT: f64 = (1u64 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    OpenRect,
    /// Top-row `u` legs are identified with bottom-row `d` legs.
    CylinderRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    L,
    R,
    U,
    D,
}

impl Dir {
    fn index(self) -> usize {
        match self {
            Dir::L => 0,
            Dir::R => 1,
            Dir::U => 2,
            Dir::D => 3,
        }
    }
}

/// Grid of site tensors, row-major. Each tensor carries its present legs in (l, r, u, d) order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeNetwork {
    pub rows: usize,
    pub cols: usize,
    pub geometry: Geometry,
    pub bond_dim: usize,
    tensors: Vec<DenseTensor>,
    open_legs: Vec<(usize, usize, Dir)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionValue {
    pub value: Scalar,
    pub log_magnitude: f64,
    pub sign_or_phase: Scalar,
}

impl ContractionValue {
    fn from_parts<T: Elem>(s: T, log_scale: f64) -> Self {
        let z = s.to_c64();
        let mag = z.norm();
        let (log_magnitude, phase) = if mag > 0.0 {
            (log_scale + mag.ln(), z / mag)
        } else {
            (f64::NEG_INFINITY, c64::new(1.0, 0.0))
        };
        let value = phase * log_magnitude.exp();
        match T::FIELD {
            Field::Real => ContractionValue {
                value: Scalar::Real(value.re),
                log_magnitude,
                sign_or_phase: Scalar::Real(phase.re),
            },
            Field::Complex => ContractionValue {
                value: Scalar::Complex(value),
                log_magnitude,
                sign_or_phase: Scalar::Complex(phase),
            },
        }
    }

    /// `|self/other|` computed in log space.
    pub fn log_ratio(&self, other: &ContractionValue) -> f64 {
        self.log_magnitude - other.log_magnitude
    }
}

impl LatticeNetwork {
    pub fn lattice_legs(rows: usize, cols: usize, geometry: Geometry, r: usize, c: usize) -> Legs {
        let cyl = geometry == Geometry::CylinderRows;
        Legs {
            l: c > 0,
            r: c + 1 < cols,
            u: r > 0 || cyl,
            d: r + 1 < rows || cyl,
        }
    }

    pub fn legs(&self, r: usize, c: usize) -> Legs {
        let mut legs = Self::lattice_legs(self.rows, self.cols, self.geometry, r, c);
        for &(rr, cc, dir) in &self.open_legs {
            if (rr, cc) == (r, c) {
                match dir {
                    Dir::L => legs.l = true,
                    Dir::R => legs.r = true,
                    Dir::U => legs.u = true,
                    Dir::D => legs.d = true,
                }
            }
        }
        legs
    }

    pub fn new(
        rows: usize,
        cols: usize,
        geometry: Geometry,
        bond_dim: usize,
        tensors: Vec<DenseTensor>,
    ) -> Result<Self> {
        Self::with_open_legs(rows, cols, geometry, bond_dim, tensors, Vec::new())
    }

    /// Network with dangling legs; each open leg must point off the lattice.
    pub fn with_open_legs(
        rows: usize,
        cols: usize,
        geometry: Geometry,
        bond_dim: usize,
        tensors: Vec<DenseTensor>,
        open_legs: Vec<(usize, usize, Dir)>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || bond_dim == 0 {
            return arg("rows, cols and D must be >= 1");
        }
        if geometry == Geometry::CylinderRows && rows < 2 {
            return arg("a row cylinder needs at least 2 rows");
        }
        if tensors.len() != rows * cols {
            return arg(format!("expected {} tensors, got {}", rows * cols, tensors.len()));
        }
        for &(r, c, dir) in &open_legs {
            if r >= rows || c >= cols {
                return arg(format!("open leg at ({r},{c}) is off the lattice"));
            }
            let base = Self::lattice_legs(rows, cols, geometry, r, c);
            if base.mask()[dir.index()] {
                return arg(format!("open leg {dir:?} at ({r},{c}) is an internal edge"));
            }
        }
        let net = LatticeNetwork {
            rows,
            cols,
            geometry,
            bond_dim,
            tensors,
            open_legs,
        };
        for r in 0..rows {
            for c in 0..cols {
                let want = net.legs(r, c).shape(bond_dim);
                let got = net.tensor(r, c).shape();
                if got != want.as_slice() {
                    return Err(Error::Contract(format!(
                        "site ({r},{c}) has shape {got:?}, expected {want:?}"
                    )));
                }
            }
        }
        Ok(net)
    }

    /// Closed network with site `(r, c)` drawn from stream `r·cols + c` of `seed`.
    pub fn random(
        spec: &EnsembleSpec,
        rows: usize,
        cols: usize,
        geometry: Geometry,
        seed: u64,
    ) -> Result<Self> {
        let mut tensors = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let legs = Self::lattice_legs(rows, cols, geometry, r, c);
                let mut g = stream_rng(seed, (r * cols + c) as u64);
                tensors.push(make_site_tensor(spec, legs, &mut g)?);
            }
        }
        Self::new(rows, cols, geometry, spec.bond_dim, tensors)
    }

    pub fn tensor(&self, r: usize, c: usize) -> &DenseTensor {
        &self.tensors[r * self.cols + c]
    }

    pub fn tensors(&self) -> &[DenseTensor] {
        &self.tensors
    }

    pub fn open_legs(&self) -> &[(usize, usize, Dir)] {
        &self.open_legs
    }

    pub fn set_tensor(&mut self, r: usize, c: usize, t: DenseTensor) -> Result<()> {
        let want = self.legs(r, c).shape(self.bond_dim);
        if t.shape() != want.as_slice() {
            return arg(format!("site ({r},{c}) needs shape {want:?}"));
        }
        self.tensors[r * self.cols + c] = t;
        Ok(())
    }

    pub fn field(&self) -> Field {
        if self.tensors.iter().any(|t| t.field() == Field::Complex) {
            Field::Complex
        } else {
            Field::Real
        }
    }

    pub fn num_edges(&self) -> usize {
        let h = self.rows * (self.cols - 1);
        let v = match self.geometry {
            Geometry::OpenRect => (self.rows - 1) * self.cols,
            Geometry::CylinderRows => self.rows * self.cols,
        };
        h + v
    }

    /// Site tensor reshaped to four legs (l, r, u, d), absent legs of dimension 1.
    pub fn padded<T: Elem>(&self, r: usize, c: usize) -> ArrayD<T> {
        let dims = self.legs(r, c).padded_dims(self.bond_dim);
        let t = self.tensor(r, c);
        let a: ArrayD<T> = match t {
            DenseTensor::Real(a) => a.mapv(|x| T::from_c64(c64::new(x, 0.0))),
            DenseTensor::Complex(a) => a.mapv(T::from_c64),
        };
        a.into_shape_with_order(IxDyn(&dims))
            .expect("site shape validated")
    }

    /// Mirror across the diagonal: site (r, c) moves to (c, r) and legs (l, r, u, d) become (u, d, l, r).
    pub fn transpose(&self) -> Result<LatticeNetwork> {
        if self.geometry != Geometry::OpenRect || !self.open_legs.is_empty() {
            return arg("transpose needs a closed open-rectangle network");
        }
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for r in 0..self.cols {
            for c in 0..self.rows {
                let legs = self.legs(c, r);
                let present: Vec<usize> = (0..4).filter(|&k| legs.mask()[k]).collect();
                // new order (u, d, l, r) restricted to present legs
                let perm: Vec<usize> = [2, 3, 0, 1]
                    .iter()
                    .filter_map(|k| present.iter().position(|p| p == k))
                    .collect();
                tensors.push(self.tensor(c, r).permute(&perm)?);
            }
        }
        LatticeNetwork::new(self.cols, self.rows, Geometry::OpenRect, self.bond_dim, tensors)
    }

    /// Edge ids touching each site, in the site's leg order. Edges are numbered
    /// row-major, the right edge of a site before its down edge.
    pub fn site_edges(&self) -> Vec<Vec<usize>> {
        let (rows, cols) = (self.rows, self.cols);
        let mut right = vec![usize::MAX; rows * cols];
        let mut down = vec![usize::MAX; rows * cols];
        let mut next = 0;
        for r in 0..rows {
            for c in 0..cols {
                let legs = Self::lattice_legs(rows, cols, self.geometry, r, c);
                if legs.r {
                    right[r * cols + c] = next;
                    next += 1;
                }
                if legs.d {
                    down[r * cols + c] = next;
                    next += 1;
                }
            }
        }
        (0..rows * cols)
            .map(|s| {
                let (r, c) = (s / cols, s % cols);
                let legs = Self::lattice_legs(rows, cols, self.geometry, r, c);
                let above = if r == 0 { rows - 1 } else { r - 1 };
                let mut e = Vec::new();
                if legs.l {
                    e.push(right[s - 1]);
                }
                if legs.r {
                    e.push(right[s]);
                }
                if legs.u {
                    e.push(down[above * cols + c]);
                }
                if legs.d {
                    e.push(down[s]);
                }
                e
            })
            .collect()
    }

    pub fn to_dump(&self) -> NetworkDump {
        NetworkDump {
            rows: self.rows,
            cols: self.cols,
            geometry: self.geometry,
            bond_dim: self.bond_dim,
            open_legs: self.open_legs.clone(),
            tensors: self.tensors.iter().map(TensorDump::from).collect(),
        }
    }

    pub fn from_dump(d: &NetworkDump) -> Result<Self> {
        let tensors = d.tensors.iter().map(|t| t.to_tensor()).collect::<Result<_>>()?;
        Self::with_open_legs(d.rows, d.cols, d.geometry, d.bond_dim, tensors, d.open_legs.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDump {
    pub shape: Vec<usize>,
    pub field: Field,
    pub re: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<f64>>,
}

impl From<&DenseTensor> for TensorDump {
    fn from(t: &DenseTensor) -> Self {
        match t {
            DenseTensor::Real(a) => TensorDump {
                shape: a.shape().to_vec(),
                field: Field::Real,
                re: a.iter().copied().collect(),
                im: None,
            },
            DenseTensor::Complex(a) => TensorDump {
                shape: a.shape().to_vec(),
                field: Field::Complex,
                re: a.iter().map(|z| z.re).collect(),
                im: Some(a.iter().map(|z| z.im).collect()),
            },
        }
    }
}

impl TensorDump {
    pub fn to_tensor(&self) -> Result<DenseTensor> {
        match (self.field, &self.im) {
            (Field::Real, _) => DenseTensor::from_real(&self.shape, self.re.clone()),
            (Field::Complex, Some(im)) if im.len() == self.re.len() => DenseTensor::from_complex(
                &self.shape,
                self.re.iter().zip(im).map(|(&a, &b)| c64::new(a, b)).collect(),
            ),
            _ => Err(Error::Format("complex tensor dump needs matching `im`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDump {
    pub rows: usize,
    pub cols: usize,
    pub geometry: Geometry,
    pub bond_dim: usize,
    #[serde(default)]
    pub open_legs: Vec<(usize, usize, Dir)>,
    pub tensors: Vec<TensorDump>,
}

/// Entrywise modulus of every site tensor; geometry unchanged.
pub fn abs_network(net: &LatticeNetwork) -> LatticeNetwork {
    LatticeNetwork {
        tensors: net.tensors.iter().map(elementwise_abs).collect(),
        ..net.clone()
    }
}

/// Neumaier-compensated accumulator.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: c64,
    comp: c64,
}

impl Compensated {
    fn add_part(sum: &mut f64, comp: &mut f64, x: f64) {
        let t = *sum + x;
        if sum.abs() >= x.abs() {
            *comp += (*sum - t) + x;
        } else {
            *comp += (x - t) + *sum;
        }
        *sum = t;
    }

    fn add(&mut self, z: c64) {
        Self::add_part(&mut self.sum.re, &mut self.comp.re, z.re);
        Self::add_part(&mut self.sum.im, &mut self.comp.im, z.im);
    }

    fn total(&self) -> c64 {
        self.sum + self.comp
    }
}

/// Exact `Σ_x Π_s A^{(s)}_x` by enumerating all edge configurations.
pub fn brute_force_value(net: &LatticeNetwork) -> Result<ContractionValue> {
    if !net.open_legs.is_empty() {
        return arg("brute force needs a closed network");
    }
    let dim = net.bond_dim;
    let n_edges = net.num_edges();
    guard("D^#edges", (dim as f64).powi(n_edges as i32), BRUTE_FORCE_LIMIT)?;
    let site_edges = net.site_edges();
    let entries: Vec<Vec<c64>> = net.tensors.iter().map(|t| t.entries_c64()).collect();

    let total_configs = dim.pow(n_edges as u32);
    let mut x = vec![0usize; n_edges];
    let mut acc = Compensated::default();
    for _ in 0..total_configs {
        let mut term = c64::new(1.0, 0.0);
        for (s, edges) in site_edges.iter().enumerate() {
            let flat = edges.iter().fold(0usize, |f, &e| f * dim + x[e]);
            term *= entries[s][flat];
        }
        acc.add(term);
        for xe in x.iter_mut() {
            *xe += 1;
            if *xe < dim {
                break;
            }
            *xe = 0;
        }
    }
    let total = acc.total();
    Ok(match net.field() {
        Field::Real => ContractionValue::from_parts(total.re, 0.0),
        Field::Complex => ContractionValue::from_parts(total, 0.0),
    })
}

/// Absorb one column of padded (l, r, u, d) tensors into the boundary vector `v`
/// (shape = l-leg dims of the column). Returns the vector over the r-legs.
/// With `periodic`, the top `u` leg is traced against the bottom `d` leg.
pub(crate) fn apply_column<T: Elem>(v: &ArrayD<T>, column: &[ArrayD<T>], periodic: bool) -> ArrayD<T> {
    let h = column.len();
    let top = column[0].shape()[2];
    let bottom = column[h - 1].shape()[3];
    let b0 = if periodic { top } else { 1 };
    debug_assert!(periodic || (top == 1 && bottom == 1));
    // state (b0, b, x_0 .. x_{h-1})
    let mut dims: Vec<usize> = v.shape().to_vec();
    let mut state = {
        let mut shape = vec![b0, top];
        shape.extend_from_slice(&dims);
        let flat = v.as_standard_layout();
        let vs = flat.as_slice().expect("standard layout");
        let n = vs.len();
        let mut s = vec![T::zero(); b0 * top * n];
        for k in 0..b0 {
            let b = if periodic { k } else { 0 };
            let off = (k * top + b) * n;
            s[off..off + n].copy_from_slice(vs);
        }
        ArrayD::from_shape_vec(IxDyn(&shape), s).expect("sizes match")
    };
    for (i, a) in column.iter().enumerate() {
        let (dl, dr, du, dd) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
        let p: usize = dims[..i].iter().product();
        let q: usize = dims[i + 1..].iter().product();
        let s5 = state
            .into_shape_with_order(IxDyn(&[b0, du, p, dl, q]))
            .expect("state contiguous");
        // (b0, p, q, b, l)
        let sm = permuted(&s5, &[0, 2, 4, 1, 3])
            .into_shape_with_order((b0 * p * q, du * dl))
            .expect("contiguous");
        let am = permuted(a, &[2, 0, 1, 3])
            .into_shape_with_order((du * dl, dr * dd))
            .expect("contiguous");
        let prod = sm
            .dot(&am)
            .into_shape_with_order(IxDyn(&[b0, p, q, dr, dd]))
            .expect("contiguous")
            .into_dyn();
        // -> (b0, d, p, r, q)
        state = permuted(&prod, &[0, 4, 1, 3, 2]);
        dims[i] = dr;
        let mut shape = vec![b0, dd];
        shape.extend_from_slice(&dims);
        state = state.into_shape_with_order(IxDyn(&shape)).expect("contiguous");
    }
    let n: usize = dims.iter().product();
    let s3 = state
        .into_shape_with_order((b0, bottom, n))
        .expect("contiguous");
    let mut out = ndarray::Array1::<T>::zeros(n);
    if periodic {
        for k in 0..b0 {
            out += &s3.slice(ndarray::s![k, k, ..]);
        }
    } else {
        out += &s3.slice(ndarray::s![0, 0, ..]);
    }
    out.into_shape_with_order(IxDyn(&dims)).expect("sizes match")
}

pub(crate) fn frobenius<T: Elem>(v: &ArrayD<T>) -> f64 {
    v.iter().map(|x| x.square()).sum::<f64>().sqrt()
}

fn transfer_generic<T: Elem>(net: &LatticeNetwork) -> ContractionValue {
    let periodic = net.geometry == Geometry::CylinderRows;
    let mut v = ArrayD::<T>::ones(IxDyn(&vec![1; net.rows]));
    let mut log_scale = 0.0;
    for c in 0..net.cols {
        let column: Vec<ArrayD<T>> = (0..net.rows).map(|r| net.padded(r, c)).collect();
        v = apply_column(&v, &column, periodic);
        let n = frobenius(&v);
        if n > 0.0 && c + 1 < net.cols {
            v.mapv_inplace(|x| x / T::from_real(n));
            log_scale += n.ln();
        }
    }
    let s = v.iter().next().copied().unwrap_or(T::zero());
    ContractionValue::from_parts(s, log_scale)
}

/// Exact contraction by column transfer with per-column rescaling.
pub fn transfer_value(net: &LatticeNetwork) -> Result<ContractionValue> {
    if !net.open_legs.is_empty() {
        return arg("transfer contraction needs a closed network");
    }
    guard(
        "D^H",
        (net.bond_dim as f64).powi(net.rows as i32),
        TRANSFER_LIMIT,
    )?;
    Ok(match net.field() {
        Field::Real => transfer_generic::<f64>(net),
        Field::Complex => transfer_generic::<c64>(net),
    })
}

/// Relative deviation `|a − b| / |b|`.
pub fn relative_deviation(a: &ContractionValue, b: &ContractionValue) -> f64 {
    let (za, zb) = (a.sign_or_phase.to_c64(), b.sign_or_phase.to_c64());
    // |a - b|/|b| = |za·e^{la-lb} − zb|
    (za * (a.log_magnitude - b.log_magnitude).exp() - zb).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::EnsembleKind;
    use crate::rng::rng;
    use ndarray::Array2;
    use rand::Rng;

    fn ones_net(rows: usize, cols: usize, dim: usize) -> LatticeNetwork {
        let tensors = (0..rows * cols)
            .map(|s| {
                let legs = LatticeNetwork::lattice_legs(rows, cols, Geometry::OpenRect, s / cols, s % cols);
                DenseTensor::ones(&legs.shape(dim))
            })
            .collect();
        LatticeNetwork::new(rows, cols, Geometry::OpenRect, dim, tensors).unwrap()
    }

    #[test]
    fn all_ones_counts_configurations() {
        let net = ones_net(2, 2, 2);
        assert_eq!(net.num_edges(), 4);
        let b = brute_force_value(&net).unwrap();
        let t = transfer_value(&net).unwrap();
        assert!((b.value.re() - 16.0).abs() < 1e-12);
        assert!((t.value.re() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn single_site_is_its_entry() {
        let t = DenseTensor::from_real(&[], vec![-2.5]).unwrap();
        let net = LatticeNetwork::new(1, 1, Geometry::OpenRect, 3, vec![t]).unwrap();
        assert_eq!(brute_force_value(&net).unwrap().value, Scalar::Real(-2.5));
        assert!((transfer_value(&net).unwrap().value.re() + 2.5).abs() < 1e-14);
    }

    #[test]
    fn chain_is_matrix_product() {
        let mut g = rng(11);
        let dim = 3;
        let l = 5;
        let mut tensors = Vec::new();
        let mut mats: Vec<Array2<f64>> = Vec::new();
        for c in 0..l {
            let legs = LatticeNetwork::lattice_legs(1, l, Geometry::OpenRect, 0, c);
            let shape = legs.shape(dim);
            let n = shape.iter().product();
            let e: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..1.0)).collect();
            let rows = if legs.l { dim } else { 1 };
            let cols = if legs.r { dim } else { 1 };
            mats.push(Array2::from_shape_vec((rows, cols), e.clone()).unwrap());
            tensors.push(DenseTensor::from_real(&shape, e).unwrap());
        }
        let net = LatticeNetwork::new(1, l, Geometry::OpenRect, dim, tensors).unwrap();
        let prod = mats.iter().skip(1).fold(mats[0].clone(), |acc, m| acc.dot(m));
        let t = transfer_value(&net).unwrap();
        assert!((t.value.re() - prod[[0, 0]]).abs() < 1e-12 * prod[[0, 0]].abs());
    }

    #[test]
    fn transfer_matches_brute_force_and_row_sweep() {
        for (kind, lambda, seed) in [
            (EnsembleKind::HaarOrthogonal, 0.0, 1),
            (EnsembleKind::HaarUnitary, 0.5, 2),
            (EnsembleKind::GaussianReal, 2.0, 3),
        ] {
            let spec = EnsembleSpec::new(kind, 2, lambda);
            let net = LatticeNetwork::random(&spec, 3, 3, Geometry::OpenRect, seed).unwrap();
            let b = brute_force_value(&net).unwrap();
            let t = transfer_value(&net).unwrap();
            let r = transfer_value(&net.transpose().unwrap()).unwrap();
            assert!(relative_deviation(&t, &b) < 1e-10, "{kind:?}");
            assert!(relative_deviation(&r, &t) < 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn four_by_four_sweeps_agree() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarOrthogonal, 3, 0.2);
        let net = LatticeNetwork::random(&spec, 4, 4, Geometry::OpenRect, 5).unwrap();
        let t = transfer_value(&net).unwrap();
        let r = transfer_value(&net.transpose().unwrap()).unwrap();
        assert!(relative_deviation(&t, &r) < 1e-10);
    }

    #[test]
    fn cylinder_matches_brute_force() {
        let spec = EnsembleSpec::new(EnsembleKind::GaussianComplex, 2, 0.3);
        let net = LatticeNetwork::random(&spec, 3, 2, Geometry::CylinderRows, 8).unwrap();
        let b = brute_force_value(&net).unwrap();
        let t = transfer_value(&net).unwrap();
        assert!(relative_deviation(&t, &b) < 1e-10);
    }

    #[test]
    fn abs_network_sums_moduli() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarUnitary, 2, 0.0);
        let net = LatticeNetwork::random(&spec, 2, 2, Geometry::OpenRect, 4).unwrap();
        let a = abs_network(&net);
        assert_eq!(a.field(), Field::Real);
        // brute-force Σ|T(x)| directly
        let mut total = 0.0;
        let e: Vec<Vec<c64>> = net.tensors().iter().map(|t| t.entries_c64()).collect();
        for x in 0..16usize {
            let b = |k: usize| (x >> k) & 1;
            // edges: (0,0)r=0 (0,0)d=1 (0,1)d=2 (1,0)r=3
            let t = e[0][b(0) * 2 + b(1)] * e[1][b(0) * 2 + b(2)] * e[2][b(3) * 2 + b(1)] * e[3][b(3) * 2 + b(2)];
            total += t.norm();
        }
        let v = transfer_value(&a).unwrap().value.re();
        assert!((v - total).abs() < 1e-10 * total);
        let pos = abs_network(&a);
        assert_eq!(pos, a);
    }

    #[test]
    fn guards_fire() {
        let spec = EnsembleSpec::new(EnsembleKind::GaussianReal, 4, 0.0);
        let net = LatticeNetwork::random(&spec, 4, 4, Geometry::OpenRect, 1).unwrap();
        assert!(matches!(brute_force_value(&net), Err(Error::Size { .. })));
    }

    #[test]
    fn scaling_one_site_scales_value() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarOrthogonal, 2, 0.4);
        let mut net = LatticeNetwork::random(&spec, 3, 3, Geometry::OpenRect, 7).unwrap();
        let v0 = transfer_value(&net).unwrap();
        let t = net.tensor(1, 2).scale(Scalar::Real(-2.5));
        net.set_tensor(1, 2, t).unwrap();
        let v1 = transfer_value(&net).unwrap();
        assert!((v1.value.re() + 2.5 * v0.value.re()).abs() < 1e-12 * v1.value.abs());
    }

    #[test]
    fn factorized_network_is_product_of_halves() {
        // column-0 tensors depend on their r-leg only through a fixed vector w
        let dim = 2;
        let mut g = rng(21);
        let w = [0.3, -1.2];
        let rows = 2;
        let cols = 3;
        let mut tensors = Vec::new();
        let mut left_parts = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let legs = LatticeNetwork::lattice_legs(rows, cols, Geometry::OpenRect, r, c);
                let shape = legs.shape(dim);
                let n: usize = shape.iter().product();
                if c == 0 {
                    // legs (r, u|d): A = w_r · B(vertical)
                    let b: Vec<f64> = (0..n / dim).map(|_| g.random_range(-1.0..1.0)).collect();
                    left_parts.push(b.clone());
                    let e: Vec<f64> = (0..dim).flat_map(|i| b.iter().map(move |x| w[i] * x)).collect();
                    tensors.push(DenseTensor::from_real(&shape, e).unwrap());
                } else {
                    let e: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..1.0)).collect();
                    tensors.push(DenseTensor::from_real(&shape, e).unwrap());
                }
            }
        }
        let net = LatticeNetwork::new(rows, cols, Geometry::OpenRect, dim, tensors.clone()).unwrap();
        let full = transfer_value(&net).unwrap().value.re();
        // left half: Σ_b B0(b) B1(b)
        let left: f64 = (0..dim).map(|b| left_parts[0][b] * left_parts[1][b]).sum();
        // right half: columns 1.. with their l-legs contracted with w
        let mut right_tensors = Vec::new();
        for r in 0..rows {
            for c in 1..cols {
                let t = &tensors[r * cols + c];
                let wt = DenseTensor::from_real(&[dim], w.to_vec()).unwrap();
                let t = if c == 1 { contract_l(&wt, t) } else { t.clone() };
                right_tensors.push(t);
            }
        }
        let rnet = LatticeNetwork::new(rows, cols - 1, Geometry::OpenRect, dim, right_tensors).unwrap();
        let right = transfer_value(&rnet).unwrap().value.re();
        assert!((full - left * right).abs() < 1e-10 * full.abs());

        fn contract_l(w: &DenseTensor, t: &DenseTensor) -> DenseTensor {
            crate::tensor::contract_pair(w, &[0], t, &[0]).unwrap()
        }
    }

    #[test]
    fn gauge_on_internal_edge_is_invisible() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarUnitary, 2, 0.3);
        let mut net = LatticeNetwork::random(&spec, 3, 3, Geometry::OpenRect, 12).unwrap();
        let v0 = transfer_value(&net).unwrap();
        // G on the (1,1)-(1,2) edge: A(1,1) r-leg ← G, A(1,2) l-leg ← G^{-1}
        let gm = DenseTensor::from_real(&[2, 2], vec![2.0, 0.5, -0.3, 1.0]).unwrap();
        let det = 2.0 * 1.0 - 0.5 * -0.3;
        let ginv = DenseTensor::from_real(&[2, 2], vec![1.0 / det, -0.5 / det, 0.3 / det, 2.0 / det]).unwrap();
        let a = net.tensor(1, 1).clone(); // (l, r, u, d)
        let a = crate::tensor::contract_pair(&a, &[1], &gm, &[0]).unwrap().permute(&[0, 3, 1, 2]).unwrap();
        let b = net.tensor(1, 2).clone(); // (l, u, d)
        let b = crate::tensor::contract_pair(&ginv, &[1], &b, &[0]).unwrap();
        net.set_tensor(1, 1, a).unwrap();
        net.set_tensor(1, 2, b).unwrap();
        let v1 = transfer_value(&net).unwrap();
        assert!(relative_deviation(&v1, &v0) < 1e-8);
    }

    #[test]
    fn dump_round_trip() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarUnitary, 2, 0.3);
        let net = LatticeNetwork::random(&spec, 2, 3, Geometry::OpenRect, 3).unwrap();
        let json = serde_json::to_string(&net.to_dump()).unwrap();
        let back = LatticeNetwork::from_dump(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}

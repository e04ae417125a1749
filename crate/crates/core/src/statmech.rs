//! Spin models obtained by averaging four copies of a random network, and
//! their twisted-boundary free energies as predictions for ⟨S₂⟩.

use crate::error::{arg, guard, Result};
use crate::network::{transfer_value, Geometry, LatticeNetwork};
use crate::stats::linear_fit;
use crate::tensor::DenseTensor;
use ndarray::{Array2, Array3, ArrayD, Dimension, IxDyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest row state space `q^W` handled by the transfer evaluation.
pub const TRANSFER_LIMIT: usize = 200_000;

/// Exponent table of the orthogonal link weight, basis
/// (∅); (12),(34),(13),(24),(14),(23); (12)(34),(13)(24),(14)(23).
pub const ORTHOGONAL_KTILDE: [[u8; 10]; 10] = [
    [0, 1, 1, 1, 1, 1, 1, 2, 2, 2],
    [1, 0, 2, 2, 2, 2, 2, 1, 3, 3],
    [1, 2, 0, 2, 2, 2, 2, 1, 3, 3],
    [1, 2, 2, 0, 2, 2, 2, 3, 1, 3],
    [1, 2, 2, 2, 0, 2, 2, 3, 1, 3],
    [1, 2, 2, 2, 2, 0, 2, 3, 3, 1],
    [1, 2, 2, 2, 2, 2, 0, 3, 3, 1],
    [2, 1, 1, 3, 3, 3, 3, 0, 2, 2],
    [2, 3, 3, 1, 1, 3, 3, 2, 0, 2],
    [2, 3, 3, 3, 3, 1, 1, 2, 2, 0],
];

/// Exponent table of the unitary link weight, basis
/// (∅); (12),(34),(14),(23); (12)(34),(14)(23).
pub const UNITARY_KTILDE: [[u8; 7]; 7] = [
    [0, 1, 1, 1, 1, 2, 2],
    [1, 0, 2, 2, 2, 1, 3],
    [1, 2, 0, 2, 2, 1, 3],
    [1, 2, 2, 0, 2, 3, 1],
    [1, 2, 2, 2, 0, 3, 1],
    [2, 1, 1, 3, 3, 0, 2],
    [2, 3, 3, 1, 1, 2, 0],
];

const ORTHOGONAL_LABELS: [&str; 10] = [
    "()", "(12)", "(34)", "(13)", "(24)", "(14)", "(23)", "(12)(34)", "(13)(24)", "(14)(23)",
];
const UNITARY_LABELS: [&str; 7] = ["()", "(12)", "(34)", "(14)", "(23)", "(12)(34)", "(14)(23)"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Orthogonal,
    Unitary,
    Rank1,
    S4,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Orthogonal => "orthogonal",
            ModelKind::Unitary => "unitary",
            ModelKind::Rank1 => "rank1",
            ModelKind::S4 => "s4",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s {
            "orthogonal" => Some(ModelKind::Orthogonal),
            "unitary" => Some(ModelKind::Unitary),
            "rank1" => Some(ModelKind::Rank1),
            "s4" => Some(ModelKind::S4),
            _ => None,
        }
    }
}

/// Ising variables on links with a vertex weight depending only on the number of 1's.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexWeights {
    /// `T(i, j, k, l)` over (l, r, u, d) link variables.
    pub tensor: ArrayD<f64>,
    /// `w(n)` for n = 0..4.
    pub w: [f64; 5],
    /// Columns are the boundary vectors of the two Ising basis states.
    pub boundary_vectors: Array2<f64>,
    /// Vector contracted into dangling links away from the twisted boundary.
    pub free_vector: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatmechModel {
    pub kind: ModelKind,
    pub bond_dim: usize,
    pub lambda: f64,
    pub q: usize,
    pub onsite_weight: Vec<f64>,
    pub link_weight: Array2<f64>,
    pub state_labels: Vec<String>,
    /// Named boundary states: "A" (top of the cut), "B" (bottom and uniform).
    pub boundary_states: Vec<(String, usize)>,
    pub vertex: Option<VertexWeights>,
}

impl StatmechModel {
    pub fn state(&self, name: &str) -> Result<usize> {
        self.boundary_states
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, i)| i)
            .or_else(|| self.state_labels.iter().position(|l| l == name))
            .map_or_else(|| arg(format!("unknown boundary state {name:?}")), Ok)
    }

    pub fn mu(&self) -> f64 {
        self.lambda * self.bond_dim as f64
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return arg("statmech models need D >= 2");
    }
    Ok(())
}

fn link_from_ktilde<const Q: usize>(k: &[[u8; Q]; Q], d: usize) -> Array2<f64> {
    let df = d as f64;
    Array2::from_shape_fn((Q, Q), |(i, j)| df.powf(-(k[i][j] as f64) / 2.0))
}

/// Ten-state model of the shifted Haar-orthogonal ensemble, rescaled so that
/// `V = (μ⁴; μ²…; D⁴/(D⁴+2)…)` and `Wlink = D^{−k̃/2}`.
pub fn build_orthogonal_model(d: usize, lambda: f64) -> Result<StatmechModel> {
    check_dim(d)?;
    let mu = lambda * d as f64;
    let d4 = (d as f64).powi(4);
    let mut v = vec![mu.powi(4)];
    v.extend([mu * mu; 6]);
    v.extend([d4 / (d4 + 2.0); 3]);
    Ok(StatmechModel {
        kind: ModelKind::Orthogonal,
        bond_dim: d,
        lambda,
        q: 10,
        onsite_weight: v,
        link_weight: link_from_ktilde(&ORTHOGONAL_KTILDE, d),
        state_labels: ORTHOGONAL_LABELS.iter().map(|s| s.to_string()).collect(),
        boundary_states: vec![("A".into(), 9), ("B".into(), 7), ("C".into(), 8), ("()".into(), 0)],
        vertex: None,
    })
}

/// Seven-state model of the shifted Haar-unitary ensemble.
pub fn build_unitary_model(d: usize, lambda: f64) -> Result<StatmechModel> {
    check_dim(d)?;
    let mu = lambda * d as f64;
    let d4 = (d as f64).powi(4);
    let mut v = vec![mu.powi(4)];
    v.extend([mu * mu; 4]);
    v.extend([d4 / (d4 + 1.0); 2]);
    Ok(StatmechModel {
        kind: ModelKind::Unitary,
        bond_dim: d,
        lambda,
        q: 7,
        onsite_weight: v,
        link_weight: link_from_ktilde(&UNITARY_KTILDE, d),
        state_labels: UNITARY_LABELS.iter().map(|s| s.to_string()).collect(),
        boundary_states: vec![("A".into(), 6), ("B".into(), 5), ("()".into(), 0)],
        vertex: None,
    })
}

/// Pieces of the rank-1 construction: unrescaled unitary vertex weight `Ṽ`,
/// the 7×2 link factor `W̃_Y`, the link matrix `Y` and its positive root `R`.
pub struct Rank1Parts {
    pub v_tilde: Vec<f64>,
    pub w_y: Array2<f64>,
    pub y: Array2<f64>,
    pub r: Array2<f64>,
}

pub fn rank1_parts(d: usize, lambda: f64) -> Result<Rank1Parts> {
    check_dim(d)?;
    let df = d as f64;
    let d4 = df.powi(4);
    let mut v_tilde = vec![lambda.powi(4)];
    v_tilde.extend([lambda * lambda; 4]);
    v_tilde.extend([d4 / (d4 + 1.0); 2]);
    let q: Vec<f64> = std::iter::once(d4)
        .chain([df.powi(3); 4])
        .chain([df * df; 2])
        .collect();
    // columns of W̃ = √Q·D^{−k̃/2}·√Q belonging to (12)(34) and (14)(23)
    let w_y = Array2::from_shape_fn((7, 2), |(s, t)| {
        q[s].sqrt() * df.powf(-(UNITARY_KTILDE[s][5 + t] as f64) / 2.0) * q[5 + t].sqrt()
    });
    let pre = 1.0 / (df * df - 1.0);
    let y = Array2::from_shape_vec((2, 2), vec![pre, -pre / df, -pre / df, pre]).expect("2x2");
    // Y has eigenvectors (1, ±1)/√2 with eigenvalues pre·(1 ∓ 1/D)
    let (a, b) = ((pre * (1.0 - 1.0 / df)).sqrt(), (pre * (1.0 + 1.0 / df)).sqrt());
    let r = Array2::from_shape_vec((2, 2), vec![(a + b) / 2.0, (a - b) / 2.0, (a - b) / 2.0, (a + b) / 2.0])
        .expect("2x2");
    Ok(Rank1Parts { v_tilde, w_y, y, r })
}

/// Ising link model for interpolation toward Haar rank-1 targets (unitary base).
/// `T(i,j,k,l) = D⁻⁴ Σ_σ Ṽ(σ) Π (W̃_Y R)(σ, ·)`; boundary states are `R·e_i`.
pub fn build_rank1_link_model(d: usize, lambda: f64) -> Result<StatmechModel> {
    let p = rank1_parts(d, lambda)?;
    let m = p.w_y.dot(&p.r);
    let d4 = (d as f64).powi(4);
    let raw = ArrayD::from_shape_fn(IxDyn(&[2, 2, 2, 2]), |ix| {
        (0..7)
            .map(|s| p.v_tilde[s] * m[[s, ix[0]]] * m[[s, ix[1]]] * m[[s, ix[2]]] * m[[s, ix[3]]])
            .sum::<f64>()
            / d4
    });
    // the weight depends only on the count of 1's and is invariant under 0 ↔ 1;
    // averaging the orbit makes both symmetries hold bit for bit
    let mut w = [0.0; 5];
    let mut counts = [0.0; 5];
    for (ix, &x) in raw.indexed_iter() {
        let n: usize = ix.slice().iter().sum();
        w[n] += x;
        counts[n] += 1.0;
    }
    for n in 0..5 {
        w[n] /= counts[n];
    }
    for n in 0..2 {
        let avg = 0.5 * (w[n] + w[4 - n]);
        w[n] = avg;
        w[4 - n] = avg;
    }
    let tensor = ArrayD::from_shape_fn(IxDyn(&[2, 2, 2, 2]), |ix| w[ix.slice().iter().sum::<usize>()]);
    Ok(StatmechModel {
        kind: ModelKind::Rank1,
        bond_dim: d,
        lambda,
        q: 2,
        onsite_weight: vec![1.0, 1.0],
        link_weight: Array2::eye(2),
        state_labels: vec!["(12)(34)".into(), "(14)(23)".into()],
        boundary_states: vec![("A".into(), 1), ("B".into(), 0)],
        vertex: Some(VertexWeights {
            tensor,
            w,
            boundary_vectors: p.r.clone(),
            free_vector: [1.0, 1.0],
        }),
    })
}

/// All permutations of four copies in lexicographic order.
pub fn s4_elements() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for e in 0..4 {
                    let p = [a, b, c, e];
                    if (0..4).all(|i| (0..i).all(|j| p[i] != p[j])) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

pub fn cycle_count(p: &[usize; 4]) -> u32 {
    let mut seen = [false; 4];
    let mut n = 0;
    for i in 0..4 {
        if !seen[i] {
            n += 1;
            let mut j = i;
            while !seen[j] {
                seen[j] = true;
                j = p[j];
            }
        }
    }
    n
}

fn compose_inverse(a: &[usize; 4], b: &[usize; 4]) -> [usize; 4] {
    // a ∘ b⁻¹
    let mut binv = [0; 4];
    for i in 0..4 {
        binv[b[i]] = i;
    }
    [a[binv[0]], a[binv[1]], a[binv[2]], a[binv[3]]]
}

/// Cycle notation with copies numbered from 1; the identity is "()".
pub fn cycle_label(p: &[usize; 4]) -> String {
    let mut seen = [false; 4];
    let mut s = String::new();
    for i in 0..4 {
        if seen[i] || p[i] == i {
            seen[i] = true;
            continue;
        }
        s.push('(');
        let mut j = i;
        while !seen[j] {
            seen[j] = true;
            s.push_str(&(j + 1).to_string());
            j = p[j];
        }
        s.push(')');
    }
    if s.is_empty() {
        "()".into()
    } else {
        s
    }
}

/// Permutation model of double-layer networks built from Haar PEPS tensors:
/// `e^{−h(π)} = d^{c(π)}`, `e^{−k(π₁,π₂)} = D^{c(π₁π₂⁻¹)}`.
pub fn build_s4_model(d: usize, phys: usize) -> Result<StatmechModel> {
    check_dim(d)?;
    if phys < 1 {
        return arg("physical dimension must be >= 1");
    }
    let perms = s4_elements();
    let df = d as f64;
    let labels: Vec<String> = perms.iter().map(cycle_label).collect();
    let find = |l: &str| labels.iter().position(|x| x == l).expect("label exists");
    Ok(StatmechModel {
        kind: ModelKind::S4,
        bond_dim: d,
        lambda: 0.0,
        q: 24,
        onsite_weight: perms.iter().map(|p| (phys as f64).powi(cycle_count(p) as i32)).collect(),
        link_weight: Array2::from_shape_fn((24, 24), |(i, j)| {
            df.powi(cycle_count(&compose_inverse(&perms[i], &perms[j])) as i32)
        }),
        boundary_states: vec![("A".into(), find("(14)(23)")), ("B".into(), find("(12)(34)")), ("()".into(), find("()"))],
        state_labels: labels,
        vertex: None,
    })
}

pub fn build_model(kind: ModelKind, d: usize, lambda: f64) -> Result<StatmechModel> {
    match kind {
        ModelKind::Orthogonal => build_orthogonal_model(d, lambda),
        ModelKind::Unitary => build_unitary_model(d, lambda),
        ModelKind::Rank1 => build_rank1_link_model(d, lambda),
        ModelKind::S4 => arg("the permutation model is parameterized by d, use build_s4_model"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistedRatio {
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub log_z_twisted: f64,
    pub log_z_uniform: f64,
    pub predicted_s2: f64,
}

/// `log Z` of a W×H spin lattice with free left, top and bottom edges; row `r`
/// couples its rightmost spin to the fixed state `bc[r]`.
pub fn spin_log_z(model: &StatmechModel, w: usize, bc: &[usize]) -> Result<f64> {
    let q = model.q;
    let n = (q as f64).powi(w as i32);
    guard("q^W", n, TRANSFER_LIMIT as f64)?;
    let n = n as usize;
    let wl = &model.link_weight;
    let apply_axis = |v: &Vec<f64>, j: usize, m: &Array2<f64>| -> Vec<f64> {
        // v(a, s_j, c) -> Σ_{s_j} v(a, s_j, c)·m(s_j, t)
        let pre = q.pow(j as u32);
        let post = n / (pre * q);
        let a3 = Array3::from_shape_vec((pre, q, post), v.clone()).expect("sizes");
        let mut out = Array3::<f64>::zeros((pre, q, post));
        for a in 0..pre {
            let blk = m.t().dot(&a3.index_axis(ndarray::Axis(0), a));
            out.index_axis_mut(ndarray::Axis(0), a).assign(&blk);
        }
        out.into_raw_vec_and_offset().0
    };
    let row_weight = |b: usize| -> Vec<f64> {
        let mut rv = vec![1.0; n];
        for (idx, x) in rv.iter_mut().enumerate() {
            let mut digits = vec![0; w];
            let mut t = idx;
            for k in (0..w).rev() {
                digits[k] = t % q;
                t /= q;
            }
            let mut p = 1.0;
            for k in 0..w {
                p *= model.onsite_weight[digits[k]];
                if k + 1 < w {
                    p *= wl[[digits[k], digits[k + 1]]];
                }
            }
            *x = p * wl[[digits[w - 1], b]];
        }
        rv
    };
    let mut log_z = 0.0;
    let mut v: Option<Vec<f64>> = None;
    for &b in bc {
        let rw = row_weight(b);
        let mut next = match v {
            None => rw,
            Some(prev) => {
                let mut x = prev;
                for j in 0..w {
                    x = apply_axis(&x, j, wl);
                }
                x.iter().zip(&rw).map(|(a, b)| a * b).collect()
            }
        };
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        log_z += s.ln();
        v = Some(next);
    }
    Ok(log_z)
}

/// Vertex-model lattice with link variables; free dangling links take the
/// model's free vector and right-edge links its boundary vectors.
pub fn vertex_network(model: &StatmechModel, w: usize, bc: &[usize]) -> Result<LatticeNetwork> {
    let vx = match &model.vertex {
        Some(v) => v,
        None => return arg("model has no vertex weights"),
    };
    let h = bc.len();
    let free = ndarray::arr1(&vx.free_vector);
    let mut tensors = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut t = vx.tensor.clone();
            // contract from the last leg so earlier axis numbers stay valid
            let bvec = vx.boundary_vectors.column(bc[r]).to_owned();
            let cuts: [(usize, bool, &ndarray::Array1<f64>); 4] = [
                (3, r + 1 == h, &free),
                (2, r == 0, &free),
                (1, c + 1 == w, &bvec),
                (0, c == 0, &free),
            ];
            for (axis, cut, vec) in cuts {
                if cut {
                    t = t.map_axis(ndarray::Axis(axis), |lane| lane.dot(vec));
                }
            }
            tensors.push(DenseTensor::Real(t));
        }
    }
    LatticeNetwork::new(h, w, Geometry::OpenRect, 2, tensors)
}

pub fn log_z(model: &StatmechModel, w: usize, bc: &[usize]) -> Result<f64> {
    if w < 1 || bc.is_empty() {
        return arg("lattice needs W >= 1 and H >= 1");
    }
    if bc.iter().any(|&b| b >= model.q) {
        return arg("boundary state out of range");
    }
    match model.vertex {
        Some(_) => {
            let v = transfer_value(&vertex_network(model, w, bc)?)?;
            Ok(v.log_magnitude)
        }
        None => spin_log_z(model, w, bc),
    }
}

/// Twisted (top half `bc_top`, bottom half `bc_bottom`) against uniform
/// (`bc_bottom` everywhere) boundary free energy.
pub fn predicted_entropy(model: &StatmechModel, w: usize, h: usize, bc_top: usize, bc_bottom: usize) -> Result<TwistedRatio> {
    if h < 2 {
        return arg("H must be >= 2");
    }
    let twisted: Vec<usize> = (0..h).map(|r| if r < h / 2 { bc_top } else { bc_bottom }).collect();
    let uniform = vec![bc_bottom; h];
    let lt = log_z(model, w, &twisted)?;
    let lu = log_z(model, w, &uniform)?;
    Ok(TwistedRatio {
        w,
        h,
        log_z_twisted: lt,
        log_z_uniform: lu,
        predicted_s2: -(lt - lu),
    })
}

/// Prediction with H = 4W and the model's "A"/"B" boundary states.
pub fn predicted_s2(model: &StatmechModel, w: usize) -> Result<TwistedRatio> {
    predicted_entropy(model, w, 4 * w, model.state("A")?, model.state("B")?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatmechRow {
    pub model: String,
    #[serde(rename = "D")]
    pub d: usize,
    pub lambda: f64,
    pub mu: f64,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub bc: String,
    pub log_z_twisted: f64,
    pub log_z_uniform: f64,
    pub predicted_s2: f64,
}

impl StatmechRow {
    pub fn new(model: &StatmechModel, t: &TwistedRatio) -> Self {
        StatmechRow {
            model: model.kind.name().into(),
            d: model.bond_dim,
            lambda: model.lambda,
            mu: model.mu(),
            w: t.w,
            h: t.h,
            bc: "A|B".into(),
            log_z_twisted: t.log_z_twisted,
            log_z_uniform: t.log_z_uniform,
            predicted_s2: t.predicted_s2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub model: String,
    #[serde(rename = "D")]
    pub d: usize,
    pub mu: f64,
    pub line_tension: f64,
    /// Predicted S₂ per W, in W-list order, joined by ';'.
    pub s2_by_w: String,
}

/// Predictions over a (D, μ) grid; line tension is the least-squares slope of predicted S₂ in W.
pub fn phase_scan(
    kind: ModelKind,
    d_grid: &[usize],
    mu_grid: &[f64],
    w_list: &[usize],
) -> Result<(Vec<StatmechRow>, Vec<PhaseRow>)> {
    if d_grid.is_empty() || mu_grid.is_empty() || w_list.len() < 2 {
        return arg("phase scan needs nonempty grids and at least two widths");
    }
    let points: Vec<(usize, f64)> = d_grid.iter().flat_map(|&d| mu_grid.iter().map(move |&m| (d, m))).collect();
    let results: Vec<(Vec<StatmechRow>, PhaseRow)> = points
        .par_iter()
        .map(|&(d, mu)| {
            let model = build_model(kind, d, mu / d as f64)?;
            let mut rows = Vec::new();
            for &w in w_list {
                rows.push(StatmechRow::new(&model, &predicted_s2(&model, w)?));
            }
            let xs: Vec<f64> = w_list.iter().map(|&w| w as f64).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.predicted_s2).collect();
            let phase = PhaseRow {
                model: kind.name().into(),
                d,
                mu,
                line_tension: linear_fit(&xs, &ys).0,
                s2_by_w: ys.iter().map(|y| format!("{y}")).collect::<Vec<_>>().join(";"),
            };
            Ok((rows, phase))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut phases = Vec::new();
    for (r, p) in results {
        rows.extend(r);
        phases.push(p);
    }
    Ok((rows, phases))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::sample_haar_vector;
    use crate::network::brute_force_value;
    use crate::rng::rng;
    use crate::tensor::Field;

    /// Z of a 2×2 spin patch by summing all q⁴ configurations.
    fn brute_spin_z(m: &StatmechModel, bc: [usize; 2]) -> f64 {
        let (q, v, wl) = (m.q, &m.onsite_weight, &m.link_weight);
        let mut z = 0.0;
        for a in 0..q {
            for b in 0..q {
                for c in 0..q {
                    for e in 0..q {
                        // a b / c e
                        z += v[a] * v[b] * v[c] * v[e]
                            * wl[[a, b]] * wl[[c, e]]
                            * wl[[a, c]] * wl[[b, e]]
                            * wl[[b, bc[0]]] * wl[[e, bc[1]]];
                    }
                }
            }
        }
        z
    }

    #[test]
    fn ktilde_tables_are_symmetric_with_block_structure() {
        for i in 0..10 {
            assert_eq!(ORTHOGONAL_KTILDE[i][i], 0);
            for j in 0..10 {
                assert_eq!(ORTHOGONAL_KTILDE[i][j], ORTHOGONAL_KTILDE[j][i]);
            }
        }
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(UNITARY_KTILDE[i][j], UNITARY_KTILDE[j][i]);
            }
        }
        // (∅) row: 1 to single pairs, 2 to double pairs
        assert!(ORTHOGONAL_KTILDE[0][1..7].iter().all(|&x| x == 1));
        assert!(ORTHOGONAL_KTILDE[0][7..].iter().all(|&x| x == 2));
        // the unitary table is the orthogonal one restricted to its seven states
        let keep = [0, 1, 2, 5, 6, 7, 9];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                assert_eq!(UNITARY_KTILDE[a][b], ORTHOGONAL_KTILDE[i][j]);
            }
        }
    }

    #[test]
    fn golden_onsite_weights() {
        let m = build_orthogonal_model(3, 1.0 / 3.0).unwrap();
        assert!((m.onsite_weight[0] - 1.0).abs() < 1e-15);
        assert!((m.onsite_weight[1] - 1.0).abs() < 1e-15);
        assert_eq!(m.onsite_weight[9], 81.0 / 83.0);
        assert!(m.link_weight.diag().iter().all(|&x| x == 1.0));
        let u = build_unitary_model(2, 0.25).unwrap();
        assert_eq!(u.q, 7);
        assert_eq!(u.onsite_weight[5], 16.0 / 17.0);
        assert!(build_orthogonal_model(1, 0.5).is_err());
    }

    #[test]
    fn onsite_weights_depend_on_mu_only() {
        let a = build_orthogonal_model(8, 0.5 / 8.0).unwrap();
        let b = build_orthogonal_model(16, 0.5 / 16.0).unwrap();
        for s in 0..10 {
            let diff = (a.onsite_weight[s] - b.onsite_weight[s]).abs();
            if s < 7 {
                assert!(diff < 1e-15);
            } else {
                assert!(diff <= 2.0 / 8f64.powi(4));
            }
        }
    }

    #[test]
    fn models_are_invariant_under_copy_relabeling() {
        let perms = s4_elements();
        let m = build_orthogonal_model(3, 0.2).unwrap();
        // a state label is a set of pairs; conjugation permutes the copies inside it
        let relabel = |label: &str, p: &[usize; 4]| -> String {
            let digits: Vec<usize> = label.chars().filter_map(|c| c.to_digit(10)).map(|x| x as usize - 1).collect();
            let mut pairs: Vec<(usize, usize)> = digits
                .chunks(2)
                .map(|c| (p[c[0]].min(p[c[1]]), p[c[0]].max(p[c[1]])))
                .collect();
            pairs.sort();
            if pairs.is_empty() {
                return "()".into();
            }
            pairs.iter().map(|(a, b)| format!("({}{})", a + 1, b + 1)).collect()
        };
        for p in &perms {
            let img: Vec<usize> = m
                .state_labels
                .iter()
                .map(|l| m.state_labels.iter().position(|x| *x == relabel(l, p)).unwrap())
                .collect();
            for i in 0..10 {
                assert_eq!(m.onsite_weight[i], m.onsite_weight[img[i]]);
                for j in 0..10 {
                    assert_eq!(m.link_weight[[i, j]], m.link_weight[[img[i], img[j]]]);
                }
            }
        }
    }

    #[test]
    fn haar_moments_match_onsite_weights() {
        // N = D⁴ = 16: N·E[u_x²] = 1 and N²·E[u_x²u_y²] = N/(N+2) = V((ij)(kl))
        let n = 16;
        let samples = 100_000;
        let mut g = rng(17);
        let (mut m2, mut m22) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
        for _ in 0..samples {
            let u = sample_haar_vector(n, Field::Real, &mut g).unwrap();
            let u = u.as_real().unwrap();
            m2.push(n as f64 * u[0] * u[0]);
            m22.push((n * n) as f64 * u[0] * u[0] * u[1] * u[1]);
        }
        let m = build_orthogonal_model(2, 0.3).unwrap();
        for (xs, want) in [(m2, 1.0), (m22, m.onsite_weight[7])] {
            let s = crate::stats::Summary::of(&xs);
            assert!((s.mean - want).abs() < 4.0 * s.stderr, "{} vs {want}", s.mean);
        }
    }

    #[test]
    fn transfer_matches_enumeration_for_spin_models() {
        for m in [
            build_orthogonal_model(3, 0.2).unwrap(),
            build_unitary_model(2, 0.4).unwrap(),
            build_s4_model(2, 3).unwrap(),
        ] {
            let (a, b) = (m.state("A").unwrap(), m.state("B").unwrap());
            let got = log_z(&m, 2, &[a, b]).unwrap();
            let want = brute_spin_z(&m, [a, b]).ln();
            assert!((got - want).abs() < 1e-10, "{:?}: {got} vs {want}", m.kind);
        }
    }

    #[test]
    fn rank1_vertex_model_matches_spin_enumeration() {
        let (d, lambda) = (3, 0.7);
        let m = build_rank1_link_model(d, lambda).unwrap();
        let p = rank1_parts(d, lambda).unwrap();
        let d4 = (d as f64).powi(4);
        let link = p.w_y.dot(&p.y).dot(&p.w_y.t());
        let edge_right = p.w_y.dot(&p.y); // (W̃_Y R)·(R e_i)
        let edge_free = p.w_y.dot(&p.r).dot(&ndarray::arr1(&[1.0, 1.0]));
        let bc = [m.state("A").unwrap(), m.state("B").unwrap()];
        let v = |s: usize| p.v_tilde[s] / d4;
        let mut z = 0.0;
        for a in 0..7 {
            for b in 0..7 {
                for c in 0..7 {
                    for e in 0..7 {
                        // a b / c e; each site has free dangling links on its outer left/top/bottom
                        z += v(a) * v(b) * v(c) * v(e)
                            * link[[a, b]] * link[[c, e]] * link[[a, c]] * link[[b, e]]
                            * edge_right[[b, bc[0]]] * edge_right[[e, bc[1]]]
                            * edge_free[a].powi(2) * edge_free[b] * edge_free[c].powi(2) * edge_free[e];
                    }
                }
            }
        }
        let got = log_z(&m, 2, &bc).unwrap();
        assert!((got - z.ln()).abs() < 1e-10, "{got} vs {}", z.ln());
        let net = vertex_network(&m, 2, &bc).unwrap();
        assert!((brute_force_value(&net).unwrap().log_magnitude - z.ln()).abs() < 1e-10);
    }

    #[test]
    fn rank1_weights_follow_series() {
        let m = build_rank1_link_model(100, 0.5).unwrap();
        let (l, d) = (0.5f64, 100.0);
        let w = m.vertex.as_ref().unwrap().w;
        assert!((w[0] - (1.0 + 2.0 * l * l + l.powi(4) - 2.0 * l.powi(4) / d)).abs() < 1e-3);
        assert!((w[1] - (l.powi(4) - (2.0 * l.powi(4) - l * l - 0.5) / d)).abs() < 1e-3);
        assert!((w[2] - (l.powi(4) - 2.0 * l.powi(4) / d)).abs() < 1e-3);
        assert_eq!(w[0], w[4]);
        assert_eq!(w[1], w[3]);
        let t = &m.vertex.as_ref().unwrap().tensor;
        assert_eq!(t[[0, 1, 0, 0]], w[1]);
        assert_eq!(t[[0, 1, 1, 0]], w[2]);
        // λ = 0, large D: ferromagnet with rare single flips
        let f = build_rank1_link_model(1000, 0.0).unwrap().vertex.unwrap().w;
        assert!((f[0] - 1.0).abs() < 1e-3 && (f[1] - 0.5e-3).abs() < 1e-5 && f[2] < 1e-5);
    }

    #[test]
    fn s4_weights() {
        let m = build_s4_model(3, 2).unwrap();
        let id = m.state("()").unwrap();
        assert_eq!(m.onsite_weight[id], 16.0);
        assert!(m.link_weight.diag().iter().all(|&x| x == 81.0));
        let flat = build_s4_model(3, 1).unwrap();
        assert!(flat.onsite_weight.iter().all(|&x| x == 1.0));
        assert_eq!(m.state_labels.len(), 24);
        assert_eq!(cycle_label(&[1, 0, 3, 2]), "(12)(34)");
    }

    #[test]
    fn equal_boundaries_predict_zero() {
        let m = build_orthogonal_model(4, 0.1).unwrap();
        let b = m.state("B").unwrap();
        assert!(predicted_entropy(&m, 2, 8, b, b).unwrap().predicted_s2.abs() < 1e-9);
    }

    #[test]
    fn disordered_phase_is_flat_in_width() {
        let m = build_orthogonal_model(4, 0.5).unwrap();
        let s: Vec<f64> = (2..=4).map(|w| predicted_s2(&m, w).unwrap().predicted_s2).collect();
        assert!(s.iter().all(|&x| (-1e-9..0.2).contains(&x)), "{s:?}");
        assert!((s[2] - s[0]).abs() < 0.02);
    }

    #[test]
    fn guard_rejects_wide_lattices() {
        let m = build_s4_model(2, 2).unwrap();
        assert!(predicted_s2(&m, 4).is_err());
    }
}

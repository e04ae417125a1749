//! Random site tensors: shifted Haar and Gaussian ensembles, interpolation
//! targets, and Haar PEPS tensors.

use crate::error::{arg, Result};
use crate::tensor::{c64, DenseTensor, Field};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

/// Which of the four lattice legs (l, r, u, d) a site carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Legs {
    pub l: bool,
    pub r: bool,
    pub u: bool,
    pub d: bool,
}

impl Legs {
    pub const ALL: Legs = Legs {
        l: true,
        r: true,
        u: true,
        d: true,
    };

    pub fn mask(&self) -> [bool; 4] {
        [self.l, self.r, self.u, self.d]
    }

    pub fn count(&self) -> usize {
        self.mask().iter().filter(|&&b| b).count()
    }

    /// Leg dimensions in (l, r, u, d) order with 1 for an absent leg.
    pub fn padded_dims(&self, dim: usize) -> [usize; 4] {
        self.mask().map(|b| if b { dim } else { 1 })
    }

    pub fn shape(&self, dim: usize) -> Vec<usize> {
        vec![dim; self.count()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnsembleKind {
    HaarOrthogonal,
    HaarUnitary,
    GaussianReal,
    GaussianComplex,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 4] = [
        EnsembleKind::HaarOrthogonal,
        EnsembleKind::HaarUnitary,
        EnsembleKind::GaussianReal,
        EnsembleKind::GaussianComplex,
    ];

    pub fn field(&self) -> Field {
        match self {
            EnsembleKind::HaarOrthogonal | EnsembleKind::GaussianReal => Field::Real,
            EnsembleKind::HaarUnitary | EnsembleKind::GaussianComplex => Field::Complex,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnsembleKind::HaarOrthogonal => "orthogonal",
            EnsembleKind::HaarUnitary => "unitary",
            EnsembleKind::GaussianReal => "gaussian_real",
            EnsembleKind::GaussianComplex => "gaussian_complex",
        }
    }

    pub fn parse(s: &str) -> Option<EnsembleKind> {
        EnsembleKind::ALL
            .into_iter()
            .find(|k| k.name() == s || format!("{k:?}").eq_ignore_ascii_case(s))
    }
}

/// Target tensor S of the interpolation `scale·U + λ·S`.
#[derive(Debug, Clone, PartialEq)]
pub enum InterpolationTarget {
    AllOnes,
    /// l and u vectors balanced ±1, r and d vectors all ones.
    Rank1Signed,
    /// Four independent Haar unit vectors per site, scaled by √D.
    Rank1Haar,
    /// One rank-4 tensor with entries uniform in [0, 2], shared by all sites.
    PositiveRandom(DenseTensor),
}

impl InterpolationTarget {
    pub fn name(&self) -> &'static str {
        match self {
            InterpolationTarget::AllOnes => "ones",
            InterpolationTarget::Rank1Signed => "rank1_signed",
            InterpolationTarget::Rank1Haar => "rank1_haar",
            InterpolationTarget::PositiveRandom(_) => "positive_random",
        }
    }

    pub fn positive_random<R: Rng>(dim: usize, rng: &mut R) -> InterpolationTarget {
        let n = dim.pow(4);
        let u = Uniform::new(0.0, 2.0).expect("valid range");
        let e: Vec<f64> = (0..n).map(|_| rng.sample(u)).collect();
        InterpolationTarget::PositiveRandom(
            DenseTensor::from_real(&[dim; 4], e).expect("shape matches"),
        )
    }
}

/// Target kind as named in configs; `PositiveRandom` data is drawn per realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    AllOnes,
    Rank1Signed,
    Rank1Haar,
    PositiveRandom,
}

impl TargetKind {
    pub fn name(&self) -> &'static str {
        match self {
            TargetKind::AllOnes => "ones",
            TargetKind::Rank1Signed => "rank1_signed",
            TargetKind::Rank1Haar => "rank1_haar",
            TargetKind::PositiveRandom => "positive_random",
        }
    }

    pub fn parse(s: &str) -> Option<TargetKind> {
        [
            TargetKind::AllOnes,
            TargetKind::Rank1Signed,
            TargetKind::Rank1Haar,
            TargetKind::PositiveRandom,
        ]
        .into_iter()
        .find(|k| k.name() == s || format!("{k:?}").eq_ignore_ascii_case(s))
    }

    pub fn realize<R: Rng>(&self, dim: usize, rng: &mut R) -> InterpolationTarget {
        match self {
            TargetKind::AllOnes => InterpolationTarget::AllOnes,
            TargetKind::Rank1Signed => InterpolationTarget::Rank1Signed,
            TargetKind::Rank1Haar => InterpolationTarget::Rank1Haar,
            TargetKind::PositiveRandom => InterpolationTarget::positive_random(dim, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub bond_dim: usize,
    pub lambda: f64,
    pub target: InterpolationTarget,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, bond_dim: usize, lambda: f64) -> Self {
        EnsembleSpec {
            kind,
            bond_dim,
            lambda,
            target: InterpolationTarget::AllOnes,
            seed: 0,
        }
    }

    pub fn with_target(mut self, target: InterpolationTarget) -> Self {
        self.target = target;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bond_dim < 1 {
            return arg("bond dimension D must be >= 1");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return arg("shift lambda must be finite and >= 0");
        }
        Ok(())
    }

    /// Field of tensors drawn from this spec (targets never force complex, except Rank1Haar with a complex kind).
    pub fn field(&self) -> Field {
        self.kind.field()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PepsSpec {
    pub bond_dim: usize,
    pub phys_dim: usize,
    pub seed: u64,
}

fn normals<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn complex_normals<R: Rng>(n: usize, rng: &mut R) -> Vec<c64> {
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c64::new(re, im)
        })
        .collect()
}

/// Uniform unit vector in R^n or C^n (normalized Gaussian vector).
pub fn sample_haar_vector<R: Rng>(n: usize, field: Field, rng: &mut R) -> Result<DenseTensor> {
    if n == 0 {
        return arg("Haar vector length must be >= 1");
    }
    match field {
        Field::Real => {
            let mut v = normals(n, rng);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            DenseTensor::from_real(&[n], v)
        }
        Field::Complex => {
            let mut v = complex_normals(n, rng);
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.iter_mut().for_each(|z| *z /= norm);
            DenseTensor::from_complex(&[n], v)
        }
    }
}

/// Balanced ±1 vector: the first ⌈D/2⌉ entries are +1.
pub fn balanced_signs(dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| if i < dim.div_ceil(2) { 1.0 } else { -1.0 })
        .collect()
}

fn outer_product(vectors: &[Vec<c64>]) -> ArrayD<c64> {
    let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
        vectors
            .iter()
            .enumerate()
            .map(|(k, v)| v[idx[k]])
            .product()
    })
}

/// The target tensor S restricted to the present legs.
fn target_tensor<R: Rng>(
    target: &InterpolationTarget,
    field: Field,
    dim: usize,
    legs: Legs,
    rng: &mut R,
) -> Result<DenseTensor> {
    let present: Vec<usize> = (0..4).filter(|&k| legs.mask()[k]).collect();
    let shape = legs.shape(dim);
    Ok(match target {
        InterpolationTarget::AllOnes => DenseTensor::ones(&shape),
        InterpolationTarget::Rank1Signed => {
            let signs = balanced_signs(dim);
            let ones = vec![1.0; dim];
            let vecs: Vec<Vec<c64>> = present
                .iter()
                .map(|&k| {
                    let v = if k == 0 || k == 2 { &signs } else { &ones };
                    v.iter().map(|&x| c64::new(x, 0.0)).collect()
                })
                .collect();
            DenseTensor::Real(outer_product(&vecs).mapv(|z| z.re))
        }
        InterpolationTarget::Rank1Haar => {
            let scale = (dim as f64).sqrt();
            let vecs: Vec<Vec<c64>> = present
                .iter()
                .map(|_| {
                    sample_haar_vector(dim, field, rng)
                        .map(|v| v.entries_c64().into_iter().map(|z| z * scale).collect())
                })
                .collect::<Result<_>>()?;
            let t = outer_product(&vecs);
            match field {
                Field::Real => DenseTensor::Real(t.mapv(|z| z.re)),
                Field::Complex => DenseTensor::Complex(t),
            }
        }
        InterpolationTarget::PositiveRandom(s) => {
            if s.shape() != [dim; 4] {
                return arg(format!("PositiveRandom target must have shape [{dim}; 4]"));
            }
            let a = s.as_real().expect("positive target is real");
            let sliced = ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
                let mut full = [0usize; 4];
                for (j, &k) in present.iter().enumerate() {
                    full[k] = idx[j];
                }
                a[IxDyn(&full)]
            });
            DenseTensor::Real(sliced)
        }
    })
}

/// `D^{k/2}·U + λ·S` on the `k` present legs (Haar kinds), or `G + λ·S` (Gaussian kinds).
pub fn make_site_tensor<R: Rng>(spec: &EnsembleSpec, legs: Legs, rng: &mut R) -> Result<DenseTensor> {
    spec.validate()?;
    let k = legs.count();
    if !(2..=4).contains(&k) {
        return arg(format!("site rank must be 2, 3 or 4, got {k}"));
    }
    let dim = spec.bond_dim;
    let n = dim.pow(k as u32);
    let shape = legs.shape(dim);
    let scale = (dim as f64).powf(k as f64 / 2.0);
    let random = match spec.kind {
        EnsembleKind::HaarOrthogonal => sample_haar_vector(n, Field::Real, rng)?
            .reshape(&shape)?
            .scale(crate::tensor::Scalar::Real(scale)),
        EnsembleKind::HaarUnitary => sample_haar_vector(n, Field::Complex, rng)?
            .reshape(&shape)?
            .scale(crate::tensor::Scalar::Real(scale)),
        EnsembleKind::GaussianReal => DenseTensor::from_real(&shape, normals(n, rng))?,
        EnsembleKind::GaussianComplex => {
            let v = complex_normals(n, rng)
                .into_iter()
                .map(|z| z * std::f64::consts::FRAC_1_SQRT_2)
                .collect();
            DenseTensor::from_complex(&shape, v)?
        }
    };
    if spec.lambda == 0.0 && !matches!(spec.target, InterpolationTarget::Rank1Haar) {
        return Ok(random);
    }
    let s = target_tensor(&spec.target, spec.field(), dim, legs, rng)?;
    random.add(&s.scale(crate::tensor::Scalar::Real(spec.lambda)))
}

/// Unit-norm complex Haar tensor with legs (d, present virtual legs...).
pub fn make_peps_tensor<R: Rng>(spec: &PepsSpec, legs: Legs, rng: &mut R) -> Result<DenseTensor> {
    if spec.bond_dim < 1 || spec.phys_dim < 1 {
        return arg("PEPS dimensions must be >= 1");
    }
    let mut shape = vec![spec.phys_dim];
    shape.extend(legs.shape(spec.bond_dim));
    let n = shape.iter().product();
    sample_haar_vector(n, Field::Complex, rng)?.reshape(&shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng, stream_rng};
    use crate::tensor::Scalar;

    #[test]
    fn one_dimensional_haar_is_sign() {
        let mut g = rng(3);
        for _ in 0..10 {
            let v = sample_haar_vector(1, Field::Real, &mut g).unwrap();
            assert!((v.get(&[0]).abs() - 1.0).abs() < 1e-15);
        }
        assert!(sample_haar_vector(0, Field::Real, &mut g).is_err());
    }

    #[test]
    fn haar_vectors_have_unit_norm() {
        let mut g = rng(4);
        for n in [1, 5, 64] {
            for f in [Field::Real, Field::Complex] {
                let v = sample_haar_vector(n, f, &mut g).unwrap();
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn haar_coordinates_have_zero_mean() {
        let mut g = rng(5);
        let samples = 100_000;
        let mut mean = [0.0; 16];
        for _ in 0..samples {
            let v = sample_haar_vector(16, Field::Real, &mut g).unwrap();
            for (m, x) in mean.iter_mut().zip(v.as_real().unwrap().iter()) {
                *m += x / samples as f64;
            }
        }
        let bound = 4.0 / (samples as f64).sqrt();
        assert!(mean.iter().all(|m| m.abs() < bound), "{mean:?}");
    }

    #[test]
    fn shift_is_linear_in_lambda() {
        let base = EnsembleSpec::new(EnsembleKind::HaarOrthogonal, 3, 0.0);
        let shifted = EnsembleSpec { lambda: 0.7, ..base.clone() };
        let a = make_site_tensor(&base, Legs::ALL, &mut stream_rng(9, 4)).unwrap();
        let b = make_site_tensor(&shifted, Legs::ALL, &mut stream_rng(9, 4)).unwrap();
        let d = b.add(&a.scale(Scalar::Real(-1.0))).unwrap();
        assert!(d.as_real().unwrap().iter().all(|&x| (x - 0.7).abs() < 1e-14));
    }

    #[test]
    fn bulk_haar_norm_is_d_squared() {
        for kind in [EnsembleKind::HaarOrthogonal, EnsembleKind::HaarUnitary] {
            let spec = EnsembleSpec::new(kind, 3, 0.0);
            let t = make_site_tensor(&spec, Legs::ALL, &mut rng(1)).unwrap();
            assert!((t.norm() - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_entries_have_unit_std() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarOrthogonal, 4, 0.0);
        let mut g = rng(2);
        let mut xs = Vec::new();
        while xs.len() < 10_000 {
            let t = make_site_tensor(&spec, Legs::ALL, &mut g).unwrap();
            xs.extend(t.as_real().unwrap().iter().copied());
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((0.9..=1.1).contains(&std), "std {std}");
    }

    #[test]
    fn gaussian_moments() {
        for kind in [EnsembleKind::GaussianReal, EnsembleKind::GaussianComplex] {
            let spec = EnsembleSpec::new(kind, 3, 0.5);
            let mut g = rng(8);
            let mut zs: Vec<c64> = Vec::new();
            while zs.len() < 20_000 {
                zs.extend(make_site_tensor(&spec, Legs::ALL, &mut g).unwrap().entries_c64());
            }
            let n = zs.len() as f64;
            let mean: c64 = zs.iter().sum::<c64>() / n;
            let var = zs.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n;
            assert!((mean.re - 0.5).abs() < 4.0 / n.sqrt(), "{kind:?} mean {mean}");
            assert!(mean.im.abs() < 4.0 / n.sqrt());
            assert!((var - 1.0).abs() < 0.05, "{kind:?} var {var}");
        }
    }

    #[test]
    fn trimmed_sites_use_partial_scale() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarOrthogonal, 3, 0.0);
        let legs = Legs { l: false, r: true, u: false, d: true };
        let t = make_site_tensor(&spec, legs, &mut rng(1)).unwrap();
        assert_eq!(t.shape(), &[3, 3]);
        assert!((t.norm() - 3.0).abs() < 1e-12);
        let bad = Legs { l: false, r: true, u: false, d: false };
        assert!(make_site_tensor(&spec, bad, &mut rng(1)).is_err());
    }

    #[test]
    fn signed_target_is_balanced() {
        for dim in 2..6 {
            let s: f64 = balanced_signs(dim).iter().sum();
            assert_eq!(s, if dim % 2 == 0 { 0.0 } else { 1.0 });
        }
        let spec = EnsembleSpec::new(EnsembleKind::HaarOrthogonal, 4, 1.0)
            .with_target(InterpolationTarget::Rank1Signed);
        let zero = EnsembleSpec { lambda: 0.0, ..spec.clone() };
        let a = make_site_tensor(&spec, Legs::ALL, &mut rng(3)).unwrap();
        let b = make_site_tensor(&zero, Legs::ALL, &mut rng(3)).unwrap();
        let s = a.add(&b.scale(Scalar::Real(-1.0))).unwrap();
        // l,u vectors balanced: sum over l of S vanishes
        let total: f64 = s.as_real().unwrap().iter().sum();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn positive_target_entries() {
        let mut g = rng(6);
        let t = InterpolationTarget::positive_random(3, &mut g);
        if let InterpolationTarget::PositiveRandom(s) = &t {
            assert!(s.as_real().unwrap().iter().all(|&x| (0.0..=2.0).contains(&x)));
        }
        let spec = EnsembleSpec::new(EnsembleKind::HaarOrthogonal, 3, 100.0).with_target(t);
        let a = make_site_tensor(&spec, Legs { l: true, r: true, u: false, d: true }, &mut g).unwrap();
        assert_eq!(a.shape(), &[3, 3, 3]);
    }

    #[test]
    fn rank1_haar_is_product() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarUnitary, 2, 1.0)
            .with_target(InterpolationTarget::Rank1Haar);
        let mut g = rng(10);
        let t = target_tensor(&spec.target, Field::Complex, 2, Legs::ALL, &mut g).unwrap();
        let m = t.reshape(&[4, 4]).unwrap();
        let s = crate::tensor::svd_split(&m, &[0], 4, 0.0).unwrap();
        assert!(s.kept_spectrum[1] < 1e-12 * s.kept_spectrum[0]);
        assert!((t.norm() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn peps_tensor_norm_and_shape() {
        let spec = PepsSpec { bond_dim: 2, phys_dim: 3, seed: 0 };
        let t = make_peps_tensor(&spec, Legs::ALL, &mut rng(1)).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2, 2, 2]);
        assert!((t.norm() - 1.0).abs() < 1e-12);
        let one = PepsSpec { bond_dim: 1, phys_dim: 1, seed: 0 };
        let s = make_peps_tensor(&one, Legs::ALL, &mut rng(2)).unwrap();
        assert!((s.get(&[0, 0, 0, 0, 0]).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn peps_tensors_concentrate() {
        let spec = PepsSpec { bond_dim: 2, phys_dim: 16, seed: 0 };
        let a = make_peps_tensor(&spec, Legs::ALL, &mut rng(1)).unwrap().entries_c64();
        let b = make_peps_tensor(&spec, Legs::ALL, &mut rng(2)).unwrap().entries_c64();
        let ov: c64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        assert!(ov.norm() < 0.25);
    }

    #[test]
    fn reproducible_per_stream() {
        let spec = EnsembleSpec::new(EnsembleKind::HaarUnitary, 2, 0.3);
        let a = make_site_tensor(&spec, Legs::ALL, &mut stream_rng(5, 12)).unwrap();
        let b = make_site_tensor(&spec, Legs::ALL, &mut stream_rng(5, 12)).unwrap();
        assert_eq!(a, b);
    }
}

//! Line integrals, holonomies and Wilson loops, gauge transformations, the
//! holonomy perturbation expansion, steering curves and the initial data of
//! the covariance-breaking experiment.

use crate::dynamics::BlockOperator;
use crate::heatflow::{ym_flow, FlowConfig, FlowError};
use crate::lattice_field::{bump, evaluate_offgrid, gauss_legendre, GaugeTransformField, FieldLayout, Lattice, LatticeField};
use crate::lie_core::{frob, su2_pauli_half, trace_inner, CMat, GroupElement, GroupKind, GroupSpec, C64};
use crate::stats::{fit_exponent, Fit, FitError};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObservableError {
    #[error("segment direction has length {0} > 1/4")]
    SegmentTooLong(f64),
    #[error("steering curve infeasible: best holonomy defect {defect:e}, constraint residual {constraint:e} after {restarts} restarts")]
    Infeasible { defect: f64, constraint: f64, restarts: usize },
    #[error("functional j must be nonzero")]
    ZeroFunctional,
    #[error("invalid case data: {0}")]
    Case(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Line segment `ℓ = (x, v)` with `|v| ≤ 1/4`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Segment {
    pub x: [f64; 3],
    pub v: [f64; 3],
}

impl Segment {
    pub fn new(x: [f64; 3], v: [f64; 3]) -> Result<Self, ObservableError> {
        let s = Self { x, v };
        if s.len() > 0.25 * (1.0 + 1e-12) {
            return Err(ObservableError::SegmentTooLong(s.len()));
        }
        Ok(s)
    }

    pub fn len(&self) -> f64 {
        self.v.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0.0
    }

    pub fn point(&self, t: f64) -> [f64; 3] {
        [self.x[0] + t * self.v[0], self.x[1] + t * self.v[1], self.x[2] + t * self.v[2]]
    }

    /// `d(ℓ, ℓ̄) = |x − x̄| ∨ |x + v − (x̄ + v̄)|` (torus distance).
    pub fn distance(&self, other: &Segment) -> f64 {
        let torus = |a: [f64; 3], b: [f64; 3]| -> f64 {
            a.iter()
                .zip(&b)
                .map(|(p, q)| {
                    let d = (p - q).rem_euclid(1.0);
                    d.min(1.0 - d).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        };
        torus(self.x, other.x).max(torus(self.point(1.0), other.point(1.0)))
    }

    /// `d(ℓ, ℓ̄) > ¼(|ℓ| ∧ |ℓ̄|)`.
    pub fn is_far(&self, other: &Segment) -> bool {
        self.distance(other) > 0.25 * self.len().min(other.len())
    }
}

/// `∫_ℓ g = ∫₀¹ |v| g(x + tv) dt` for a continuum integrand, by Gauss–Legendre
/// with 16 nodes doubled until the relative change is below `1e-9`.
pub fn line_integral_fn(seg: &Segment, g: impl Fn([f64; 3]) -> Vec<f64>) -> Vec<f64> {
    let len = seg.len();
    let eval = |m: usize| -> Vec<f64> {
        let (x, w) = gauss_legendre(m);
        let mut acc: Vec<f64> = Vec::new();
        for (xi, wi) in x.iter().zip(&w) {
            let v = g(seg.point(0.5 * (xi + 1.0)));
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += 0.5 * wi * len * b;
            }
        }
        acc
    };
    let mut m = 16;
    let mut prev = eval(m);
    while m < 2048 {
        m *= 2;
        let next = eval(m);
        let change = next.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = next.iter().map(|a| a.abs()).fold(0.0, f64::max);
        prev = next;
        if change <= 1e-9 * scale || change < 1e-15 {
            break;
        }
    }
    prev
}

/// `∫_ℓ f` for a lattice field through its trigonometric interpolant.
pub fn line_integral(f: &LatticeField, seg: &Segment) -> Vec<f64> {
    let d = f.lattice.d;
    line_integral_fn(seg, |p| evaluate_offgrid(f, &p[..d]))
}

/// Smooth closed curve on the torus.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LoopCurve {
    /// `ℓ(x) = base + x·e_axis`.
    Axis { axis: usize, base: [f64; 3] },
    /// Circle of the given radius in the `(a, b)` coordinate plane.
    Circle { center: [f64; 3], radius: f64, plane: (usize, usize) },
}

/// Parametrised loop with its number of holonomy sub-intervals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Loop {
    pub curve: LoopCurve,
    pub nodes: usize,
}

impl Loop {
    /// `ℓ(x) = (x, 0, 0)`.
    pub fn default_axis() -> Self {
        Self { curve: LoopCurve::Axis { axis: 0, base: [0.0; 3] }, nodes: 8192 }
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn point(&self, s: f64) -> [f64; 3] {
        match self.curve {
            LoopCurve::Axis { axis, base } => {
                let mut p = base;
                p[axis] += s;
                p
            }
            LoopCurve::Circle { center, radius, plane } => {
                let mut p = center;
                p[plane.0] += radius * (2.0 * std::f64::consts::PI * s).cos();
                p[plane.1] += radius * (2.0 * std::f64::consts::PI * s).sin();
                p
            }
        }
    }

    pub fn velocity(&self, s: f64) -> [f64; 3] {
        match self.curve {
            LoopCurve::Axis { axis, .. } => {
                let mut v = [0.0; 3];
                v[axis] = 1.0;
                v
            }
            LoopCurve::Circle { radius, plane, .. } => {
                let w = 2.0 * std::f64::consts::PI;
                let mut v = [0.0; 3];
                v[plane.0] = -radius * w * (w * s).sin();
                v[plane.1] = radius * w * (w * s).cos();
                v
            }
        }
    }
}

/// 𝔤-valued path sampled at `m + 1` equispaced nodes of `[0, 1]`, in algebra
/// coordinates, with `values[0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPath {
    pub values: Vec<Vec<f64>>,
}

impl DrivingPath {
    pub fn zero(m: usize, dim: usize) -> Self {
        Self { values: vec![vec![0.0; dim]; m + 1] }
    }

    /// Path `x ↦ f(x) − f(0)` sampled on `m` sub-intervals.
    pub fn from_fn(m: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let f0 = f(0.0);
        Self {
            values: (0..=m)
                .map(|k| f(k as f64 / m as f64).iter().zip(&f0).map(|(a, b)| a - b).collect())
                .collect(),
        }
    }

    pub fn segments(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn increments(&self) -> Vec<Vec<f64>> {
        self.values.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect()).collect()
    }

    pub fn endpoint(&self) -> &[f64] {
        self.values.last().expect("nonempty path")
    }

    pub fn scale(&self, lam: f64) -> Self {
        Self { values: self.values.iter().map(|v| v.iter().map(|a| lam * a).collect()).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|a| *a == 0.0))
    }

    /// Lower estimate of the p-variation by dynamic programming over at most
    /// 512 nodes.
    pub fn p_variation(&self, p: f64) -> f64 {
        let m = self.segments();
        let stride = m.div_ceil(512).max(1);
        let idx: Vec<usize> = (0..=m).step_by(stride).chain(std::iter::once(m)).collect();
        let mut idx = idx;
        idx.dedup();
        let pts: Vec<&Vec<f64>> = idx.iter().map(|&i| &self.values[i]).collect();
        let dist = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let mut best = vec![0.0; pts.len()];
        for j in 1..pts.len() {
            let mut b: f64 = 0.0;
            for i in 0..j {
                b = b.max(best[i] + dist(pts[i], pts[j]).powf(p));
            }
            best[j] = b;
        }
        best.last().copied().unwrap_or(0.0).powf(1.0 / p)
    }
}

/// `ℓ_A(t) = ∫₀ᵗ ⟨A(ℓ_s), ℓ̇_s⟩ ds` with three Gauss points per sub-interval,
/// for a continuum connection given as `𝔤^d` coordinates.
pub fn path_from_fn(dim: usize, d: usize, lp: &Loop, a: impl Fn([f64; 3]) -> Vec<f64>) -> DrivingPath {
    let m = lp.nodes;
    let (gx, gw) = gauss_legendre(3);
    let mut values = Vec::with_capacity(m + 1);
    let mut acc = vec![0.0; dim];
    values.push(acc.clone());
    let hseg = 1.0 / m as f64;
    for k in 0..m {
        for (xi, wi) in gx.iter().zip(&gw) {
            let s = (k as f64 + 0.5 * (xi + 1.0)) * hseg;
            let p = lp.point(s);
            let v = lp.velocity(s);
            let val = a(p);
            for i in 0..d {
                if v[i] == 0.0 {
                    continue;
                }
                for c in 0..dim {
                    acc[c] += 0.5 * wi * hseg * v[i] * val[i * dim + c];
                }
            }
        }
        values.push(acc.clone());
    }
    DrivingPath { values }
}

/// Driving path of a lattice connection along a loop.
pub fn path_from_loop(spec: &GroupSpec, a: &LatticeField, lp: &Loop) -> DrivingPath {
    let d = a.lattice.d;
    let dg = spec.dim();
    path_from_fn(dg, d, lp, |p| {
        let v = evaluate_offgrid(a, &p[..d]);
        v[..d * dg].to_vec()
    })
}

/// Solution at time 1 of `dy = y dℓ`, `y₀ = 1`: the ordered product
/// `e^{Δ₁}e^{Δ₂}⋯e^{Δ_m}` of the path increments.
pub fn holonomy(spec: &GroupSpec, path: &DrivingPath) -> GroupElement {
    let mut y = CMat::identity(spec.n, spec.n);
    for inc in path.increments() {
        y *= spec.exp_coords(&inc).mat;
    }
    GroupElement { mat: y }
}

/// Complex trace of a holonomy; the scalar observable is the real part.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WilsonValue {
    pub re: f64,
    pub im: f64,
    pub alive: bool,
}

impl WilsonValue {
    pub const CEMETERY: WilsonValue = WilsonValue { re: 0.0, im: 0.0, alive: false };
}

/// `W_ℓ(A) = Tr hol(A, ℓ)`; `None` stands for the cemetery and yields 0.
pub fn wilson_loop(spec: &GroupSpec, a: Option<&LatticeField>, lp: &Loop) -> WilsonValue {
    match a {
        None => WilsonValue::CEMETERY,
        Some(a) => {
            let tr = holonomy(spec, &path_from_loop(spec, a, lp)).trace();
            WilsonValue { re: tr.re, im: tr.im, alive: true }
        }
    }
}

/// `W_ℓ[ℱ_s(a)]`, zero when either the input or the flow is in the cemetery.
pub fn wilson_after_flow(spec: &GroupSpec, a: Option<&LatticeField>, s: f64, cfg: &FlowConfig, lp: &Loop) -> Result<WilsonValue, ObservableError> {
    let Some(a) = a else { return Ok(WilsonValue::CEMETERY) };
    let flowed = ym_flow(spec, a, s, cfg)?;
    Ok(wilson_loop(spec, flowed.field.as_ref(), lp))
}

/// `g·A = Ad_g A − (dg)g⁻¹` on the connection and `gΦ` on the Higgs part.
pub fn gauge_transform(spec: &GroupSpec, g: &GaugeTransformField, x: &LatticeField) -> LatticeField {
    let l = x.lattice;
    let layout = x.layout;
    let (d, dg, dv) = (layout.d, layout.dim_g, layout.dim_v);
    let n = g.n;
    let dgs: Vec<Vec<Vec<C64>>> = (0..d).map(|j| g.derivative(j)).collect();
    let mut out = x.clone();
    for idx in 0..l.len() {
        let gm = g.at(idx).mat;
        let ginv = gm.adjoint();
        let v = x.value_at(idx);
        for i in 0..d {
            let ai = spec.from_coords(&v[i * dg..(i + 1) * dg]).mat;
            let dgm = DMatrix::from_fn(n, n, |r, c| dgs[i][r * n + c][idx]);
            let y = &gm * ai * &ginv - dgm * &ginv;
            for (b, t) in spec.basis().iter().enumerate() {
                out.comps[i * dg + b][idx] = trace_inner(&y, t);
            }
        }
        if dv > 0 {
            let phi = &v[d * dg..];
            let pv = DVector::from_fn(n, |r, _| C64::new(phi[2 * r], phi[2 * r + 1]));
            let gp = &gm * pv;
            for r in 0..n {
                out.comps[d * dg + 2 * r][idx] = gp[r].re;
                out.comps[d * dg + 2 * r + 1][idx] = gp[r].im;
            }
        }
    }
    out
}

fn coords_to_mat(spec: &GroupSpec, c: &[f64]) -> CMat {
    spec.from_coords(c).mat
}

/// Iterated integral `∫₀¹∫₀ˣ dα(y) dβ(x)` of two paths on the same grid
/// (earlier increment on the left), exact for piecewise-linear paths.
pub fn iterated_integral(spec: &GroupSpec, alpha: &DrivingPath, beta: &DrivingPath) -> CMat {
    let n = spec.n;
    let mut out = CMat::zeros(n, n);
    let mut running = CMat::zeros(n, n);
    for (da, db) in alpha.increments().iter().zip(beta.increments()) {
        let ma = coords_to_mat(spec, da);
        let mb = coords_to_mat(spec, &db);
        out += &running * &mb + (&ma * &mb) * C64::new(0.5, 0.0);
        running += ma;
    }
    out
}

/// `|J^{γ+ζ}(1) − J^γ(1) − ζ(1) − ∬{dζdγ + dγdζ}|`, with `∬dζdζ` also
/// subtracted when γ vanishes.
pub fn expansion_defect(spec: &GroupSpec, gamma: &DrivingPath, zeta: &DrivingPath) -> f64 {
    let exact = holonomy(spec, &gamma.add(zeta)).mat;
    let mut approx = holonomy(spec, gamma).mat + coords_to_mat(spec, zeta.endpoint());
    approx += iterated_integral(spec, zeta, gamma) + iterated_integral(spec, gamma, zeta);
    if gamma.is_zero() {
        approx += iterated_integral(spec, zeta, zeta);
    }
    frob(&(exact - approx))
}

/// How the λ-ladder rescales the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum LadderScaling {
    /// `ζ ↦ λζ`.
    Zeta,
    /// `(γ, ζ) ↦ (λγ, λζ)`.
    Joint,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PerturbationReport {
    pub lambdas: Vec<f64>,
    pub defects: Vec<f64>,
    pub p_variation_gamma: f64,
    pub p_variation_zeta: f64,
    pub fit: Fit,
}

/// Defect of the three-term expansion over a λ-ladder and its fitted order.
pub fn holonomy_perturbation_check(
    spec: &GroupSpec,
    gamma: &DrivingPath,
    zeta: &DrivingPath,
    lambdas: &[f64],
    scaling: LadderScaling,
    p: f64,
) -> Result<PerturbationReport, ObservableError> {
    let defects: Vec<f64> = lambdas
        .iter()
        .map(|&lam| {
            let g = match scaling {
                LadderScaling::Zeta => gamma.clone(),
                LadderScaling::Joint => gamma.scale(lam),
            };
            expansion_defect(spec, &g, &zeta.scale(lam))
        })
        .collect();
    let series: Vec<(f64, f64)> = lambdas.iter().copied().zip(defects.iter().copied()).collect();
    let fit = fit_exponent(&series, None)?;
    Ok(PerturbationReport { lambdas: lambdas.to_vec(), defects, p_variation_gamma: gamma.p_variation(p), p_variation_zeta: zeta.p_variation(p), fit })
}

/// Curve `ζ = Σ_k c_k B_k` where `B_k` rises smoothly from 0 to 1 on the
/// k-th of `m` equal sub-intervals of `[¼, ¾]`; `ζ̇ = 0` outside `[¼, ¾]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SteeringCurve {
    /// `coeffs[k]` in algebra coordinates.
    pub coeffs: Vec<Vec<f64>>,
    pub j: Vec<f64>,
}

fn bump_mass() -> f64 {
    let (x, w) = gauss_legendre(128);
    x.iter().zip(&w).map(|(u, wi)| wi * bump(*u)).sum()
}

impl SteeringCurve {
    pub fn segments(&self) -> usize {
        self.coeffs.len()
    }

    fn interval(&self, k: usize) -> (f64, f64) {
        let w = 0.5 / self.segments() as f64;
        (0.25 + k as f64 * w, 0.25 + (k + 1) as f64 * w)
    }

    /// Fraction of the k-th rise completed at `x`.
    fn rise(&self, k: usize, x: f64) -> f64 {
        let (a, b) = self.interval(k);
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let hi = (x - mid) / half;
        let (gx, gw) = gauss_legendre(64);
        let part: f64 = gx.iter().zip(&gw).map(|(u, wi)| {
            let v = -1.0 + 0.5 * (hi + 1.0) * (u + 1.0);
            0.5 * (hi + 1.0) * wi * bump(v)
        }).sum();
        part / bump_mass()
    }

    fn rate(&self, k: usize, x: f64) -> f64 {
        let (a, b) = self.interval(k);
        let half = 0.5 * (b - a);
        bump((x - 0.5 * (a + b)) / half) / (half * bump_mass())
    }

    fn segment_of(&self, x: f64) -> Option<usize> {
        (0..self.segments()).find(|&k| {
            let (a, b) = self.interval(k);
            x > a && x < b
        })
    }

    pub fn zeta(&self, x: f64) -> Vec<f64> {
        let dim = self.coeffs[0].len();
        let mut out = vec![0.0; dim];
        for (k, c) in self.coeffs.iter().enumerate() {
            let r = self.rise(k, x);
            for (o, v) in out.iter_mut().zip(c) {
                *o += r * v;
            }
        }
        out
    }

    pub fn zeta_dot(&self, x: f64) -> Vec<f64> {
        let dim = self.coeffs[0].len();
        match self.segment_of(x) {
            None => vec![0.0; dim],
            Some(k) => self.coeffs[k].iter().map(|v| v * self.rate(k, x)).collect(),
        }
    }

    /// `L^ζ(x)` for `dL = (dζ)L`, `L(0) = id`. On each sub-interval the
    /// direction is fixed, so `L` is an ordered product of exponentials.
    pub fn holonomy_at(&self, spec: &GroupSpec, x: f64) -> GroupElement {
        let mut l = CMat::identity(spec.n, spec.n);
        for (k, c) in self.coeffs.iter().enumerate() {
            let r = self.rise(k, x);
            if r == 0.0 {
                break;
            }
            let scaled: Vec<f64> = c.iter().map(|v| v * r).collect();
            l = spec.exp_coords(&scaled).mat * l;
        }
        GroupElement { mat: l }
    }

    pub fn endpoint(&self) -> Vec<f64> {
        let dim = self.coeffs[0].len();
        let mut out = vec![0.0; dim];
        for c in &self.coeffs {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        out
    }

    pub fn j_value(&self) -> f64 {
        self.j.iter().zip(self.endpoint()).map(|(a, b)| a * b).sum()
    }

    pub fn holonomy_defect(&self, spec: &GroupSpec) -> f64 {
        let l = self.holonomy_at(spec, 1.0).mat;
        frob(&(l - CMat::identity(spec.n, spec.n)))
    }

    /// Largest `|ζ̇|` sampled on `[0, ¼] ∪ [¾, 1]`.
    pub fn flat_end_residual(&self) -> f64 {
        (0..=400)
            .map(|i| {
                let s = i as f64 / 1600.0;
                [s, 0.75 + s]
            })
            .flat_map(|p| p.into_iter())
            .map(|x| self.zeta_dot(x).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Optimiser settings for [`chow_rashevskii_curve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringOptions {
    pub segments: usize,
    pub restarts: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for SteeringOptions {
    fn default() -> Self {
        Self { segments: 8, restarts: 20, seed: 7, tolerance: 1e-12 }
    }
}

/// Derivative of `exp` at `X` in direction `T` via the block exponential of
/// `[[X, T], [0, X]]`.
fn dexp(x: &CMat, t: &CMat) -> CMat {
    let n = x.nrows();
    let mut big = CMat::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(x);
    big.view_mut((n, n), (n, n)).copy_from(x);
    big.view_mut((0, n), (n, n)).copy_from(t);
    big.exp().view((0, n), (n, n)).into_owned()
}

/// Residual vector `[Re, Im of (L(1) − id); constraint]` and its Jacobian for
/// `L(1) = e^{c_m}⋯e^{c_1}`.
fn steering_residual(spec: &GroupSpec, j: &[f64], c: &[f64], m: usize, weight: f64, shift: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = spec.n;
    let dim = spec.dim();
    let mats: Vec<CMat> = (0..m).map(|k| coords_to_mat(spec, &c[k * dim..(k + 1) * dim])).collect();
    let exps: Vec<CMat> = mats.iter().map(|x| x.clone().exp()).collect();
    // prefix[k] = e^{c_{k-1}}⋯e^{c_0}; suffix[k] = e^{c_{m-1}}⋯e^{c_{k+1}}
    let mut prefix = vec![CMat::identity(n, n); m + 1];
    for k in 0..m {
        prefix[k + 1] = &exps[k] * &prefix[k];
    }
    let mut suffix = vec![CMat::identity(n, n); m + 1];
    for k in (0..m).rev() {
        suffix[k] = &suffix[k + 1] * &exps[k];
    }
    let l = &prefix[m];
    let rows = 2 * n * n + 1;
    let mut r = DVector::zeros(rows);
    for a in 0..n {
        for b in 0..n {
            let v = l[(a, b)] - if a == b { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            r[2 * (a * n + b)] = v.re;
            r[2 * (a * n + b) + 1] = v.im;
        }
    }
    let total: f64 = (0..m).map(|k| (0..dim).map(|a| j[a] * c[k * dim + a]).sum::<f64>()).sum();
    r[rows - 1] = weight * (total - 1.0 + shift);
    let mut jac = DMatrix::zeros(rows, m * dim);
    for k in 0..m {
        for a in 0..dim {
            let de = dexp(&mats[k], &spec.basis()[a]);
            let dl = &suffix[k + 1] * de * &prefix[k];
            let col = k * dim + a;
            for p in 0..n {
                for q in 0..n {
                    jac[(2 * (p * n + q), col)] = dl[(p, q)].re;
                    jac[(2 * (p * n + q) + 1, col)] = dl[(p, q)].im;
                }
            }
            jac[(rows - 1, col)] = weight * j[a];
        }
    }
    (r, jac)
}

/// Levenberg–Marquardt on the residual with a fixed constraint shift.
fn lm_solve(spec: &GroupSpec, j: &[f64], c: &mut Vec<f64>, m: usize, weight: f64, shift: f64) {
    let mut mu = 1e-3;
    let (mut r, mut jac) = steering_residual(spec, j, c, m, weight, shift);
    for _ in 0..200 {
        let cost = r.norm_squared();
        if cost < 1e-30 {
            break;
        }
        let jt = jac.transpose();
        // minimum-norm damped step through the row space (under-determined system)
        let jjt = &jac * &jt + DMatrix::identity(jac.nrows(), jac.nrows()) * mu;
        let Some(y) = jjt.lu().solve(&r) else { break };
        let step = &jt * y;
        let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
        let (rt, jact) = steering_residual(spec, j, &trial, m, weight, shift);
        if rt.norm_squared() < cost {
            *c = trial;
            r = rt;
            jac = jact;
            mu = (mu * 0.3).max(1e-15);
        } else {
            mu *= 10.0;
            if mu > 1e12 {
                break;
            }
        }
    }
}

/// Constructs ζ with `L^ζ(1) = id` and `jζ(1) = 1` by an augmented-Lagrangian
/// loop around Levenberg–Marquardt, with random restarts.
pub fn chow_rashevskii_curve(spec: &GroupSpec, j: &[f64], opts: &SteeringOptions) -> Result<SteeringCurve, ObservableError> {
    if j.iter().all(|v| *v == 0.0) {
        return Err(ObservableError::ZeroFunctional);
    }
    let dim = spec.dim();
    let m = opts.segments;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..opts.restarts.max(1) {
        let mut c: Vec<f64> = (0..m * dim).map(|_| 2.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let rho: f64 = 10.0;
        let mut lambda = 0.0;
        for _ in 0..20 {
            lm_solve(spec, j, &mut c, m, rho.sqrt(), lambda / rho);
            let total: f64 = (0..m).map(|k| (0..dim).map(|a| j[a] * c[k * dim + a]).sum::<f64>()).sum();
            let g = total - 1.0;
            lambda += rho * g;
            if g.abs() < opts.tolerance {
                break;
            }
        }
        // final polish with the constraint enforced directly
        lm_solve(spec, j, &mut c, m, 1.0, 0.0);
        let curve = SteeringCurve { coeffs: c.chunks(dim).map(|s| s.to_vec()).collect(), j: j.to_vec() };
        let defect = curve.holonomy_defect(spec);
        let constraint = (curve.j_value() - 1.0).abs();
        if defect < 1e-8 && constraint < 1e-8 {
            return Ok(curve);
        }
        let score = defect + constraint;
        if best.as_ref().is_none_or(|b| score < b.0 + b.1) {
            best = Some((defect, constraint, c));
        }
    }
    let (defect, constraint, _) = best.expect("at least one restart");
    Err(ObservableError::Infeasible { defect, constraint, restarts: opts.restarts })
}

/// `j = ĵ∘c` with `ĵ = ⟨c y / |c y|, ·⟩` for a unit `y` maximising `|c y|`.
/// Among maximisers the basis direction with the largest index is preferred.
pub fn default_functional(c11: &DMatrix<f64>) -> Vec<f64> {
    let dim = c11.ncols();
    let smax = c11.clone().svd(false, false).singular_values.max();
    let mut y = DVector::zeros(dim);
    if let Some(a) = (0..dim).rev().find(|&a| (c11.column(a).norm() - smax).abs() < 1e-12 * (1.0 + smax)) {
        y[a] = 1.0;
    } else {
        let svd = c11.clone().svd(false, true);
        let vt = svd.v_t.expect("requested");
        let k = svd.singular_values.imax();
        y = vt.row(k).transpose();
    }
    let cy = c11 * &y;
    let u = &cy / cy.norm();
    (c11.transpose() * u).iter().copied().collect()
}

/// `ψ(y) = y·exp(1 − 1/(1 − 16y²))` on `|y| < ¼`, extended periodically.
pub fn psi_profile(y: f64) -> f64 {
    let y = y - y.round();
    if y.abs() >= 0.25 {
        return 0.0;
    }
    let q = 1.0 - 16.0 * y * y;
    y * (1.0 - 1.0 / q).exp()
}

pub fn psi_derivative(y: f64) -> f64 {
    let y = y - y.round();
    if y.abs() >= 0.25 {
        return 0.0;
    }
    let q = 1.0 - 16.0 * y * y;
    (1.0 - 1.0 / q).exp() * (1.0 - 32.0 * y * y / (q * q))
}

/// The two initial-data constructions.
#[derive(Debug, Clone, PartialEq)]
pub enum CaseKind {
    /// `u(x, y, z) = L^ζ(x)` with a steering curve.
    One(SteeringCurve),
    /// `u(x, y, z) = e^{ψ(y)X}` with `X` in algebra coordinates.
    Two(Vec<f64>),
}

/// Initial data `(g(0), h(0), x̃)` with `A(0) = t^r c h(0)` and `Φ(0) = 0`.
#[derive(Debug, Clone)]
pub struct CaseInitialData {
    pub spec: GroupSpec,
    pub c: BlockOperator,
    pub kind: CaseKind,
    pub t: f64,
    pub r: f64,
}

impl CaseInitialData {
    pub fn d(&self) -> usize {
        self.c.d
    }

    pub fn u_at(&self, p: [f64; 3]) -> GroupElement {
        match &self.kind {
            CaseKind::One(curve) => curve.holonomy_at(&self.spec, p[0].rem_euclid(1.0)),
            CaseKind::Two(x) => self.spec.exp_coords(&x.iter().map(|v| v * psi_profile(p[1])).collect::<Vec<_>>()),
        }
    }

    /// `h(0) = (du)u⁻¹` in `𝔤^d` coordinates.
    pub fn h_at(&self, p: [f64; 3]) -> Vec<f64> {
        let dg = self.spec.dim();
        let mut out = vec![0.0; self.d() * dg];
        match &self.kind {
            CaseKind::One(curve) => out[..dg].copy_from_slice(&curve.zeta_dot(p[0].rem_euclid(1.0))),
            CaseKind::Two(x) => {
                let s = psi_derivative(p[1]);
                for (o, v) in out[dg..2 * dg].iter_mut().zip(x) {
                    *o = s * v;
                }
            }
        }
        out
    }

    /// `c·h(0)`.
    pub fn ch_at(&self, p: [f64; 3]) -> Vec<f64> {
        self.c.apply(&self.h_at(p))
    }

    /// `A(0) = t^r c·h(0)`.
    pub fn a0_at(&self, p: [f64; 3]) -> Vec<f64> {
        let s = self.t.powf(self.r);
        self.ch_at(p).into_iter().map(|v| s * v).collect()
    }

    pub fn g0(&self, l: Lattice) -> GaugeTransformField {
        GaugeTransformField::from_fn(l, self.spec.n, |p| self.u_at(p))
    }

    pub fn h0(&self, l: Lattice) -> LatticeField {
        LatticeField::from_fn(l, FieldLayout::gauge_only(&self.spec, l.d), |p, o| o.copy_from_slice(&self.h_at(p)))
    }

    /// `x̃ = (A(0), 0)` in the given layout.
    pub fn x_tilde(&self, l: Lattice, layout: FieldLayout) -> LatticeField {
        let na = layout.d * layout.dim_g;
        LatticeField::from_fn(l, layout, |p, o| {
            o[..na].copy_from_slice(&self.a0_at(p));
        })
    }
}

/// Builds the Case 1 or Case 2 data. Case 1 takes the steering functional
/// `j` (default from [`default_functional`]); Case 2 takes `X` (default
/// `−iσ₁/2` for SU(2), else the first basis element).
pub fn build_case_initial_data(
    spec: &GroupSpec,
    c: &BlockOperator,
    case: u8,
    t: f64,
    r: f64,
    direction: Option<Vec<f64>>,
    opts: &SteeringOptions,
) -> Result<CaseInitialData, ObservableError> {
    if c.d < 2 {
        return Err(ObservableError::Case("need d >= 2".into()));
    }
    let kind = match case {
        1 => {
            let c11 = c.block(0, 0);
            if c11.iter().all(|v| *v == 0.0) {
                return Err(ObservableError::Case("case 1 requires c_1^(1) != 0".into()));
            }
            let j = direction.unwrap_or_else(|| default_functional(&c11));
            CaseKind::One(chow_rashevskii_curve(spec, &j, opts)?)
        }
        2 => {
            let c12 = c.block(0, 1);
            if c12.iter().all(|v| *v == 0.0) {
                return Err(ObservableError::Case("case 2 requires c_1^(2) != 0".into()));
            }
            let x = direction.unwrap_or_else(|| default_case_two_direction(spec));
            if (&c12 * DVector::from_vec(x.clone())).norm() == 0.0 {
                return Err(ObservableError::Case("c_1^(2) X vanishes".into()));
            }
            CaseKind::Two(x)
        }
        k => return Err(ObservableError::Case(format!("unknown case {k}"))),
    };
    Ok(CaseInitialData { spec: spec.clone(), c: c.clone(), kind, t, r })
}

/// Default `X` of case 2: `−iσ₁/2` for SU(2), the first basis element otherwise.
pub fn default_case_two_direction(spec: &GroupSpec) -> Vec<f64> {
    if spec.kind == GroupKind::SU && spec.n == 2 {
        spec.coords(&su2_pauli_half(0))
    } else {
        let mut e = vec![0.0; spec.dim()];
        e[0] = 1.0;
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_field::Spectral;
    use std::f64::consts::PI;

    #[test]
    fn line_integral_examples() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let cst = LatticeField::from_fn(l, layout, |_, o| o.iter_mut().enumerate().for_each(|(c, v)| *v = c as f64 - 2.0));
        let seg = Segment::new([0.13, 0.71, 0.0], [0.1, -0.15, 0.0]).unwrap();
        let got = line_integral(&cst, &seg);
        for (c, v) in got.iter().enumerate() {
            assert!((v - seg.len() * (c as f64 - 2.0)).abs() < 1e-12);
        }
        let s = LatticeField::from_fn(l, layout, |p, o| o[0] = (2.0 * PI * p[0]).sin());
        let seg = Segment::new([0.1, 0.3, 0.0], [0.2, 0.0, 0.0]).unwrap();
        let want = ((2.0 * PI * 0.1).cos() - (2.0 * PI * 0.3).cos()) / (2.0 * PI);
        assert!((line_integral(&s, &seg)[0] - want).abs() < 1e-9);
        assert!(Segment::new([0.0; 3], [0.3, 0.0, 0.0]).is_err());
    }

    #[test]
    fn line_integral_matches_oversampled_trapezoid() {
        let l = Lattice::new(2, 8).unwrap();
        let spec = GroupSpec::u1();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let f = LatticeField::from_fn(l, layout, |p, o| {
            o[0] = (2.0 * PI * (p[0] + 2.0 * p[1])).cos() + 0.3 * (2.0 * PI * 3.0 * p[0]).sin();
            o[1] = (2.0 * PI * p[1]).sin();
        });
        let seg = Segment::new([0.37, 0.21, 0.0], [0.17, 0.11, 0.0]).unwrap();
        let got = line_integral(&f, &seg);
        let m = 10_000;
        let mut want = [0.0; 2];
        for k in 0..=m {
            let w = if k == 0 || k == m { 0.5 } else { 1.0 } / m as f64;
            let v = evaluate_offgrid(&f, &seg.point(k as f64 / m as f64)[..2]);
            want[0] += w * seg.len() * v[0];
            want[1] += w * seg.len() * v[1];
        }
        assert!((got[0] - want[0]).abs() < 1e-8 && (got[1] - want[1]).abs() < 1e-8);
    }

    #[test]
    fn segment_metric() {
        let a = Segment::new([0.0; 3], [0.1, 0.0, 0.0]).unwrap();
        let b = Segment::new([0.95, 0.0, 0.0], [0.1, 0.0, 0.0]).unwrap();
        assert!((a.distance(&b) - 0.05).abs() < 1e-12);
        assert!(a.is_far(&b));
        assert!(!a.is_far(&a));
    }

    #[test]
    fn paths_and_holonomy_examples() {
        let l = Lattice::new(2, 8).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let lp = Loop::default_axis().with_nodes(64);
        let zero = LatticeField::zeros(l, layout);
        assert!(path_from_loop(&spec, &zero, &lp).is_zero());
        assert!((wilson_loop(&spec, Some(&zero), &lp).re - 2.0).abs() < 1e-14);
        let a = [0.3, -0.7, 1.1];
        let cst = LatticeField::from_fn(l, layout, |_, o| o[..3].copy_from_slice(&a));
        let path = path_from_loop(&spec, &cst, &lp);
        for (k, v) in path.values.iter().enumerate() {
            let t = k as f64 / 64.0;
            for c in 0..3 {
                assert!((v[c] - t * a[c]).abs() < 1e-12);
            }
        }
        let hol = holonomy(&spec, &path);
        assert!((hol.mat - spec.exp_coords(&a).mat).norm() < 1e-12);
        assert_eq!(wilson_loop(&spec, None, &lp), WilsonValue::CEMETERY);
    }

    #[test]
    fn two_step_holonomy_is_ordered_product() {
        let spec = GroupSpec::su2();
        let d1 = vec![0.4, 0.0, 0.2];
        let d2 = vec![0.0, 0.9, -0.3];
        let path = DrivingPath { values: vec![vec![0.0; 3], d1.clone(), d1.iter().zip(&d2).map(|(a, b)| a + b).collect()] };
        let e1 = spec.exp_coords(&d1).mat;
        let e2 = spec.exp_coords(&d2).mat;
        let hol = holonomy(&spec, &path).mat;
        assert!((&hol - &e1 * &e2).norm() < 1e-14);
        let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        let naive = spec.exp_coords(&sum).mat;
        let comm = (&e1 * &e2 - &e2 * &e1).norm();
        assert!((&hol - naive).norm() > 0.1 * comm);
        // abelian: order is irrelevant
        let u1 = GroupSpec::u1();
        let p = DrivingPath { values: vec![vec![0.0], vec![0.4], vec![1.5]] };
        assert!((holonomy(&u1, &p).mat - u1.exp_coords(&[1.5]).mat).norm() < 1e-14);
    }

    #[test]
    fn path_refinement_consistency() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = LatticeField::from_fn(l, layout, |p, o| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = (2.0 * PI * (p[0] * (c + 1) as f64)).sin() + 0.2 * (2.0 * PI * p[1]).cos();
            }
        });
        let lp = Loop { curve: LoopCurve::Circle { center: [0.5, 0.5, 0.0], radius: 0.2, plane: (0, 1) }, nodes: 512 };
        let p1 = path_from_loop(&spec, &a, &lp);
        let p2 = path_from_loop(&spec, &a, &lp.with_nodes(1024));
        let diff: f64 = p1.endpoint().iter().zip(p2.endpoint()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn gauge_transform_examples() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::new(&spec, 2);
        let x = LatticeField::from_fn(l, layout, |p, o| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = 0.3 * (2.0 * PI * (p[0] + c as f64 * p[1])).sin();
            }
        });
        let id = GaugeTransformField::identity(l, 2);
        assert!(gauge_transform(&spec, &id, &x).max_abs_diff(&x) < 1e-14);
        // composition holds up to the spectral derivative error of g and h
        let comp = |n: usize| {
            let l = Lattice::new(2, n).unwrap();
            let x = LatticeField::from_fn(l, layout, |p, o| {
                for (c, v) in o.iter_mut().enumerate() {
                    *v = 0.3 * (2.0 * PI * (p[0] + c as f64 * p[1])).sin();
                }
            });
            let g = GaugeTransformField::from_fn(l, 2, |p| spec.exp_coords(&[(2.0 * PI * p[0]).sin(), 0.3, (2.0 * PI * p[1]).cos()]));
            let h = GaugeTransformField::from_fn(l, 2, |p| spec.exp_coords(&[0.2, (2.0 * PI * (p[0] - p[1])).sin(), 0.1]));
            let lhs = gauge_transform(&spec, &g, &gauge_transform(&spec, &h, &x));
            let rhs = gauge_transform(&spec, &g.mul(&h), &x);
            lhs.max_abs_diff(&rhs)
        };
        let (e16, e32) = (comp(16), comp(32));
        assert!(e32 < 1e-9 && e32 < 1e-3 * e16, "{e16:e} {e32:e}");

        // U(1) with the fundamental action e^{iθ}
        let u1 = GroupSpec::new(GroupKind::U, 1, crate::lie_core::Representation::Fundamental).unwrap();
        let lay1 = FieldLayout::new(&u1, 2);
        let l = Lattice::new(2, 64).unwrap();
        let theta = |p: [f64; 3]| 0.7 * (2.0 * PI * p[0]).sin() + 0.2 * (2.0 * PI * p[1]).cos();
        let x1 = LatticeField::from_fn(l, lay1, |p, o| {
            o[0] = (2.0 * PI * p[1]).cos();
            o[1] = 0.5;
            o[2] = 1.0;
            o[3] = (2.0 * PI * p[0]).sin();
        });
        let g1 = GaugeTransformField::from_fn(l, 1, |p| GroupElement { mat: CMat::from_element(1, 1, C64::from_polar(1.0, theta(p))) });
        let y = gauge_transform(&u1, &g1, &x1);
        let sp = Spectral::new(l);
        let th = LatticeField::from_fn(l, FieldLayout { d: 2, dim_g: 1, dim_v: 0 }, |p, o| {
            o[0] = theta(p);
            o[1] = 0.0;
        });
        let dth: Vec<Vec<f64>> = (0..2).map(|j| sp.derivative_real(&th.comps[0], j)).collect();
        for idx in 0..l.len() {
            // basis −i: coordinate of −i∂θ is ∂θ
            let p = l.position(idx);
            let v = x1.value_at(idx);
            assert!((y.comps[0][idx] - (v[0] + dth[0][idx])).abs() < 1e-10);
            assert!((y.comps[1][idx] - (v[1] + dth[1][idx])).abs() < 1e-10);
            let phi = C64::new(v[2], v[3]) * C64::from_polar(1.0, theta(p));
            assert!((y.comps[2][idx] - phi.re).abs() < 1e-10 && (y.comps[3][idx] - phi.im).abs() < 1e-10);
        }
    }

    #[test]
    fn wilson_loop_is_gauge_invariant() {
        let l = Lattice::new(2, 32).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = LatticeField::from_fn(l, layout, |p, o| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = 0.8 * (2.0 * PI * (p[0] + c as f64 * p[1])).cos();
            }
        });
        let g = GaugeTransformField::from_fn(l, 2, |p| spec.exp_coords(&[(2.0 * PI * p[0]).sin(), 0.3 * (2.0 * PI * p[1]).cos(), 0.5]));
        let lp = Loop::default_axis().with_nodes(4096);
        let w1 = wilson_loop(&spec, Some(&a), &lp);
        let w2 = wilson_loop(&spec, Some(&gauge_transform(&spec, &g, &a)), &lp);
        assert!((w1.re - w2.re).abs() < 1e-6, "{w1:?} {w2:?}");
    }

    fn random_path(seed: u64, m: usize, scale: f64) -> DrivingPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coef: Vec<f64> = (0..12).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        DrivingPath::from_fn(m, |x| {
            (0..3).map(|a| scale * (coef[4 * a] * (2.0 * PI * x).sin() + coef[4 * a + 1] * x + coef[4 * a + 2] * (6.0 * x).cos() + coef[4 * a + 3] * x * x)).collect()
        })
    }

    #[test]
    fn trace_of_cross_terms_is_full_square() {
        let spec = GroupSpec::su2();
        let z = random_path(1, 200, 0.5);
        let g = random_path(2, 200, 0.5);
        let sym = iterated_integral(&spec, &z, &g) + iterated_integral(&spec, &g, &z);
        let full = coords_to_mat(&spec, z.endpoint()) * coords_to_mat(&spec, g.endpoint());
        assert!((sym.trace() - full.trace()).norm() < 1e-10);
    }

    #[test]
    fn perturbation_orders() {
        let spec = GroupSpec::su2();
        let lam = [1.0, 0.5, 0.25, 0.125];
        let z = random_path(3, 400, 0.3);
        let zero = DrivingPath::zero(400, 3);
        assert_eq!(expansion_defect(&spec, &random_path(4, 400, 0.3), &DrivingPath::zero(400, 3)), 0.0);
        let pure = holonomy_perturbation_check(&spec, &zero, &z, &lam, LadderScaling::Zeta, 1.5).unwrap();
        assert!(pure.fit.slope >= 3.0 - 0.05, "{:?}", pure.fit);
        let g = random_path(5, 400, 0.3);
        let joint = holonomy_perturbation_check(&spec, &g, &z, &lam, LadderScaling::Joint, 1.5).unwrap();
        assert!(joint.fit.slope >= 2.0 - 0.05, "{:?}", joint.fit);
    }

    #[test]
    fn steering_curve_su2() {
        let spec = GroupSpec::su2();
        let j = spec.coords(&su2_pauli_half(2));
        let curve = chow_rashevskii_curve(&spec, &j, &SteeringOptions::default()).unwrap();
        assert!(curve.holonomy_defect(&spec) < 1e-8);
        assert!((curve.j_value() - 1.0).abs() < 1e-8);
        assert!(curve.flat_end_residual() < 1e-10);
        assert_eq!(curve.zeta(0.0), vec![0.0; 3]);
    }

    #[test]
    fn steering_curve_u1_is_infeasible() {
        let spec = GroupSpec::u1();
        let r = chow_rashevskii_curve(&spec, &[1.0], &SteeringOptions { restarts: 4, ..SteeringOptions::default() });
        assert!(matches!(r, Err(ObservableError::Infeasible { .. })));
    }

    #[test]
    fn case_two_data() {
        let spec = GroupSpec::su2();
        let mut c = BlockOperator::zero(3, 3);
        c.set_block(0, 1, &DMatrix::identity(3, 3));
        let data = build_case_initial_data(&spec, &c, 2, 0.01, 0.1, None, &SteeringOptions::default()).unwrap();
        let x = spec.coords(&su2_pauli_half(0));
        for xs in [0.0, 0.3, 0.77] {
            let h = data.h_at([xs, 0.0, 0.0]);
            for a in 0..3 {
                assert!((h[3 + a] - x[a]).abs() < 1e-15 && h[a] == 0.0 && h[6 + a] == 0.0);
            }
        }
        let seg = Segment::new([0.0; 3], [0.25, 0.0, 0.0]).unwrap();
        let mut total = vec![0.0; 9];
        for k in 0..4 {
            let s = Segment { x: [0.25 * k as f64, 0.0, 0.0], ..seg };
            for (t, v) in total.iter_mut().zip(line_integral_fn(&s, |p| data.ch_at(p))) {
                *t += v;
            }
        }
        for a in 0..3 {
            assert!((total[a] - x[a]).abs() < 1e-8);
        }
        assert!(build_case_initial_data(&spec, &c, 1, 0.01, 0.1, None, &SteeringOptions::default()).is_err());
        // (∂₂u)u⁻¹ from finite differences of u
        let p = [0.2, 0.07, 0.4];
        let e = 1e-6;
        let up = data.u_at([p[0], p[1] + e, p[2]]).mat;
        let um = data.u_at([p[0], p[1] - e, p[2]]).mat;
        let du = (up - um) / C64::new(2.0 * e, 0.0);
        let hm = du * data.u_at(p).mat.adjoint();
        let h = data.h_at(p);
        for (a, t) in spec.basis().iter().enumerate() {
            assert!((trace_inner(&hm, t) - h[3 + a]).abs() < 1e-8);
        }
    }

    #[test]
    fn case_one_data() {
        let spec = GroupSpec::su2();
        let c = BlockOperator::identity(3, 3, 1.0);
        let data = build_case_initial_data(&spec, &c, 1, 0.01, 0.1, None, &SteeringOptions::default()).unwrap();
        let CaseKind::One(curve) = &data.kind else { panic!() };
        let mut total = vec![0.0; 9];
        for k in 0..4 {
            let s = Segment::new([0.25 * k as f64, 0.0, 0.0], [0.25, 0.0, 0.0]).unwrap();
            for (t, v) in total.iter_mut().zip(line_integral_fn(&s, |p| data.ch_at(p))) {
                *t += v;
            }
        }
        for (a, z) in curve.endpoint().iter().enumerate() {
            assert!((total[a] - z).abs() < 1e-8);
        }
        // u is periodic in x
        assert!((data.u_at([0.0; 3]).mat - data.u_at([0.999_999_999, 0.0, 0.0]).mat).norm() < 1e-8);
    }

    #[test]
    fn default_functional_prefers_last_basis_direction() {
        let j = default_functional(&DMatrix::identity(3, 3));
        assert_eq!(j, vec![0.0, 0.0, 1.0]);
        let mut c = DMatrix::zeros(3, 3);
        c[(0, 1)] = 2.0;
        let j = default_functional(&c);
        assert!((j[1] - 2.0).abs() < 1e-12);
    }
}

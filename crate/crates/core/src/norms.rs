//! Heat-flow growth norms, the quadratic functional `𝒩_s`, segment-based
//! gr-γ norms and the Greek parameter block.
//!
//! Every supremum over segments or flow times is a lower estimate over a
//! fixed deterministic family; refining a family never decreases a value.

use crate::lattice_field::{FieldLayout, Lattice, LatticeField, Spectral};
use crate::lie_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NormError {
    #[error("flow time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("negative Hölder norm needs beta <= 0, got {0}")]
    PositiveBeta(f64),
    #[error("parameter condition violated: {0}")]
    Condition(String),
    #[error("field shapes differ")]
    Shape,
}

/// The Greek parameters and the experiment scale exponents.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormParams {
    pub alpha: f64,
    pub theta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub nu: f64,
    pub eta_bar: f64,
    pub omega: f64,
    pub r: f64,
    /// `s = t^β`.
    pub beta: f64,
}

impl Default for NormParams {
    fn default() -> Self {
        Self::block(0.05, 0.1)
    }
}

impl NormParams {
    /// `α = ½ − ε, θ = ε, γ = ½ + ε, δ = 1 − ε, η̄ = −ε/2`, `ω = −¼`,
    /// `β = −r/(4λ)`. `ν = ε/2` is clamped to its admissible upper bound
    /// `ε/2 − ε²`.
    pub fn block(eps: f64, r: f64) -> Self {
        let mut p = Self {
            alpha: 0.5 - eps,
            theta: eps,
            gamma: 0.5 + eps,
            delta: 1.0 - eps,
            nu: 0.0,
            eta_bar: -0.5 * eps,
            omega: -0.25,
            r,
            beta: 0.0,
        };
        p.nu = (0.5 * eps).min(p.nu_bound());
        p.beta = -r / (4.0 * p.lambda());
        p
    }

    pub fn eta(&self) -> f64 {
        (1.0 + 2.0 * self.theta) * (self.alpha - 1.0)
    }

    pub fn mu(&self) -> f64 {
        self.gamma - 1.0 + 2.0 * (1.0 - self.delta)
    }

    pub fn zeta(&self) -> f64 {
        (self.gamma - 1.0) / (self.alpha - 1.0)
    }

    pub fn lambda(&self) -> f64 {
        let z = self.zeta();
        (1.0 - z) * self.eta() / 2.0 - self.theta * (1.0 - self.alpha) * z
    }

    /// `κ = (ω + ½)/100 ∧ (−ω)/100`.
    pub fn kappa(&self) -> f64 {
        ((self.omega + 0.5) / 100.0).min(-self.omega / 100.0)
    }

    /// `min{η/2 + μ/2 + ½, 1 + 3η/2, μ + ½}`.
    pub fn nu_bound(&self) -> f64 {
        let (eta, mu) = (self.eta(), self.mu());
        (eta / 2.0 + mu / 2.0 + 0.5).min(1.0 + 1.5 * eta).min(mu + 0.5)
    }

    /// Checks condition (I), the range of ν, ω and the scale exponents.
    pub fn validate(&self) -> Result<(), NormError> {
        let fail = |m: String| Err(NormError::Condition(m));
        let (eta, mu) = (self.eta(), self.mu());
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return fail(format!("alpha = {} not in (0, 1/2)", self.alpha));
        }
        if self.theta <= 0.0 {
            return fail(format!("theta = {} not positive", self.theta));
        }
        if !(self.gamma > 0.5 && self.gamma <= 1.0) {
            return fail(format!("gamma = {} not in (1/2, 1]", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta = {} not in (0, 1)", self.delta));
        }
        if eta <= -2.0 / 3.0 {
            return fail(format!("eta = {eta} <= -2/3"));
        }
        if !(mu > -0.5 && mu < 0.0) {
            return fail(format!("mu = {mu} not in (-1/2, 0)"));
        }
        if eta + mu <= -1.0 {
            return fail(format!("eta + mu = {} <= -1", eta + mu));
        }
        if !(self.nu > 0.0 && self.nu <= self.nu_bound()) {
            return fail(format!("nu = {} not in (0, {}]", self.nu, self.nu_bound()));
        }
        if !(self.omega > -0.5 && self.omega < 0.0) {
            return fail(format!("omega = {} not in (-1/2, 0)", self.omega));
        }
        if self.r <= 0.0 || self.beta <= 0.0 {
            return fail(format!("r = {} and beta = {} must be positive", self.r, self.beta));
        }
        Ok(())
    }
}

/// Flow times over which weighted suprema are estimated.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SLadder {
    pub points: Vec<f64>,
}

impl Default for SLadder {
    /// 24 logarithmic points in `[2⁻²⁰, 2⁻¹]`.
    fn default() -> Self {
        Self::log(2f64.powi(-20), 0.5, 24)
    }
}

impl SLadder {
    pub fn log(lo: f64, hi: f64, count: usize) -> Self {
        let (a, b) = (lo.ln(), hi.ln());
        let points = (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1).max(1) as f64).exp()).collect();
        Self { points }
    }

    /// Inserts the geometric midpoint of every adjacent pair.
    pub fn refine(&self) -> Self {
        let mut points = Vec::with_capacity(2 * self.points.len());
        for w in self.points.windows(2) {
            points.push(w[0]);
            points.push((w[0] * w[1]).sqrt());
        }
        points.extend(self.points.last());
        Self { points }
    }
}

/// Dyadic family of segment direction vectors `v`; each is used at every
/// lattice base point.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SegmentFamily {
    pub d: usize,
    pub levels: usize,
    pub random_dirs: usize,
    pub seed: u64,
    pub vectors: Vec<[f64; 3]>,
}

impl SegmentFamily {
    /// Lengths `2⁻², …, 2⁻⁽ᴸ⁺¹⁾` along the coordinate axes and `random_dirs`
    /// seeded unit directions.
    pub fn dyadic(d: usize, levels: usize, random_dirs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dirs: Vec<[f64; 3]> = (0..d)
            .map(|a| {
                let mut e = [0.0; 3];
                e[a] = 1.0;
                e
            })
            .collect();
        for _ in 0..random_dirs {
            let mut e = [0.0; 3];
            for x in e.iter_mut().take(d) {
                *x = StandardNormal.sample(&mut rng);
            }
            let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            dirs.push(e.map(|x| x / n));
        }
        let mut vectors = Vec::new();
        for l in 0..levels {
            let len = 0.25 * 0.5f64.powi(l as i32);
            for e in &dirs {
                vectors.push(e.map(|x| x * len));
            }
        }
        Self { d, levels, random_dirs, seed, vectors }
    }

    /// Default family: 5 levels and 4 random directions.
    pub fn standard(d: usize) -> Self {
        Self::dyadic(d, 5, 4, 0x5e6)
    }

    /// One more level and twice as many random directions (a superset).
    pub fn refine(&self) -> Self {
        Self::dyadic(self.d, self.levels + 1, (2 * self.random_dirs).max(1), self.seed)
    }
}

/// Real components on a lattice without gauge/Higgs structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentField {
    pub lattice: Lattice,
    pub comps: Vec<Vec<f64>>,
}

impl ComponentField {
    pub fn zeros(lattice: Lattice, ncomp: usize) -> Self {
        Self { lattice, comps: vec![vec![0.0; lattice.len()]; ncomp] }
    }

    /// Connection components of `x`.
    pub fn gauge(x: &LatticeField) -> Self {
        let na = x.layout.d * x.layout.dim_g;
        Self { lattice: x.lattice, comps: x.comps[..na].to_vec() }
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NormError> {
        if self.lattice != other.lattice || self.comps.len() != other.comps.len() {
            return Err(NormError::Shape);
        }
        let comps = self.comps.iter().zip(&other.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        Ok(Self { lattice: self.lattice, comps })
    }

    pub fn add(&self, other: &Self) -> Result<Self, NormError> {
        let neg = Self { lattice: other.lattice, comps: other.comps.iter().map(|c| c.iter().map(|x| -x).collect()).collect() };
        self.sub(&neg)
    }

    /// Pointwise Euclidean norm maximised over sites.
    pub fn sup_norm(&self) -> f64 {
        pointwise_sup(&self.comps)
    }

    pub fn heat(&self, s: f64) -> Self {
        let sp = Spectral::cached(self.lattice);
        let refs: Vec<&[f64]> = self.comps.iter().map(|c| c.as_slice()).collect();
        let mut packed = sp.forward_real(&refs);
        for z in packed.iter_mut() {
            sp.apply_heat(z, s);
        }
        Self { lattice: self.lattice, comps: sp.inverse_real(packed, self.comps.len()) }
    }
}

impl From<&LatticeField> for ComponentField {
    fn from(x: &LatticeField) -> Self {
        Self { lattice: x.lattice, comps: x.comps.clone() }
    }
}

fn pointwise_sup(comps: &[Vec<f64>]) -> f64 {
    let len = comps.first().map_or(0, |c| c.len());
    (0..len).map(|i| comps.iter().map(|c| c[i] * c[i]).sum::<f64>()).fold(0.0, f64::max).sqrt()
}

/// `(e^{iθ} − 1)/(iθ)`.
fn phase_average(theta: f64) -> C64 {
    if theta.abs() < 1e-8 {
        C64::new(1.0 - theta * theta / 6.0, theta / 2.0)
    } else {
        (C64::from_polar(1.0, theta) - 1.0) / C64::new(0.0, theta)
    }
}

/// Fourier multiplier mapping `f` to `x ↦ ∫_{(x, v)} f`. Nyquist modes are
/// treated as cosines, matching the symmetric trigonometric interpolant.
fn segment_multiplier(l: &Lattice, v: [f64; 3]) -> Vec<C64> {
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = l.n;
    (0..l.len())
        .map(|idx| {
            let site = l.site(idx);
            let mut ks: Vec<f64> = vec![0.0];
            for (a, &sa) in site.iter().enumerate().take(l.d) {
                let k = l.wavenumber(sa) as f64;
                let opts: Vec<f64> = if 2 * sa == n { vec![k, -k] } else { vec![k] };
                ks = ks.iter().flat_map(|base| opts.iter().map(move |k| base + k * v[a])).collect();
            }
            let sum: C64 = ks.iter().map(|kv| phase_average(2.0 * PI * kv)).sum();
            sum * (len / ks.len() as f64)
        })
        .collect()
}

/// `x ↦ ∫_{(x, v)} f` at every lattice base point, exact for the
/// trigonometric interpolant.
pub fn segment_integrals(f: &ComponentField, v: [f64; 3]) -> Vec<Vec<f64>> {
    let sp = Spectral::cached(f.lattice);
    let refs: Vec<&[f64]> = f.comps.iter().map(|c| c.as_slice()).collect();
    let packed = sp.forward_real(&refs);
    integrate_packed(&sp, &packed, f.comps.len(), v)
}

fn integrate_packed(sp: &Spectral, packed: &[Vec<C64>], ncomp: usize, v: [f64; 3]) -> Vec<Vec<f64>> {
    let m = segment_multiplier(&sp.lattice, v);
    let out: Vec<Vec<C64>> = packed.iter().map(|z| z.iter().zip(&m).map(|(a, b)| a * b).collect()).collect();
    sp.inverse_real(out, ncomp)
}

/// `sup_ℓ |∫_ℓ f| / |ℓ|^γ` over the family members shorter than `max_len`.
fn gr_estimate(f: &ComponentField, gamma: f64, family: &SegmentFamily, max_len: f64) -> f64 {
    let lattice = f.lattice;
    let ncomp = f.comps.len();
    let refs: Vec<&[f64]> = f.comps.iter().map(|c| c.as_slice()).collect();
    let packed = Spectral::cached(lattice).forward_real(&refs);
    family
        .vectors
        .par_iter()
        .filter(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt() < max_len)
        .map(|&v| {
            let sp = Spectral::cached(lattice);
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            pointwise_sup(&integrate_packed(&sp, &packed, ncomp, v)) / len.powf(gamma)
        })
        .reduce(|| 0.0, f64::max)
}

/// `|f|_{γ-gr}` estimated over `family`.
pub fn gr_norm(f: &ComponentField, gamma: f64, family: &SegmentFamily) -> f64 {
    gr_estimate(f, gamma, family, f64::INFINITY)
}

/// `⦃A⦄_{α,θ} = sup_s |P_s A|_{α-gr; <s^θ}`.
pub fn heatgr_norm(a: &ComponentField, alpha: f64, theta: f64, ladder: &SLadder, family: &SegmentFamily) -> f64 {
    ladder.points.iter().map(|&s| gr_estimate(&a.heat(s), alpha, family, s.powf(theta))).fold(0.0, f64::max)
}

/// `𝒩_s(A) = P_sA ⊗ ∇P_sA`; component `(i·m + j)·d + k` holds
/// `(P_sA)_i ∂_k(P_sA)_j` with `m` the number of input components.
pub fn quadratic_functional(a: &ComponentField, s: f64) -> Result<ComponentField, NormError> {
    if s <= 0.0 {
        return Err(NormError::NonPositiveTime(s));
    }
    let l = a.lattice;
    let sp = Spectral::cached(l);
    let m = a.comps.len();
    let refs: Vec<&[f64]> = a.comps.iter().map(|c| c.as_slice()).collect();
    let mut packed = sp.forward_real(&refs);
    for z in packed.iter_mut() {
        sp.apply_heat(z, s);
    }
    let p = sp.inverse_real(packed.clone(), m);
    let grads: Vec<Vec<Vec<f64>>> = (0..l.d)
        .map(|k| sp.inverse_real(packed.iter().map(|z| sp.derivative(z, k)).collect(), m))
        .collect();
    let mut comps = Vec::with_capacity(m * m * l.d);
    for i in 0..m {
        for j in 0..m {
            for g in &grads {
                comps.push(p[i].iter().zip(&g[j]).map(|(x, y)| x * y).collect());
            }
        }
    }
    Ok(ComponentField { lattice: l, comps })
}

/// `⦀A;B⦀_{γ,δ} = sup_s s^δ |𝒩_sA − 𝒩_sB|_{γ-gr}`.
pub fn quad_norm(a: &ComponentField, b: &ComponentField, gamma: f64, delta: f64, ladder: &SLadder, family: &SegmentFamily) -> Result<f64, NormError> {
    let mut best: f64 = 0.0;
    for &s in &ladder.points {
        let diff = quadratic_functional(a, s)?.sub(&quadratic_functional(b, s)?)?;
        best = best.max(s.powf(delta) * gr_norm(&diff, gamma, family));
    }
    Ok(best)
}

/// `Σ(A, B) = ⦃A − B⦄_{α,θ} + ⦀A;B⦀_{γ,δ}`.
pub fn sigma_distance(a: &ComponentField, b: &ComponentField, p: &NormParams, ladder: &SLadder, family: &SegmentFamily) -> Result<f64, NormError> {
    let heat = heatgr_norm(&a.sub(b)?, p.alpha, p.theta, ladder, family);
    Ok(heat + quad_norm(a, b, p.gamma, p.delta, ladder, family)?)
}

/// `Σ(A) = ⦃A⦄_{α,θ} + ⦀A⦀_{γ,δ}`.
pub fn sigma_size(a: &ComponentField, p: &NormParams, ladder: &SLadder, family: &SegmentFamily) -> Result<f64, NormError> {
    sigma_distance(a, &ComponentField::zeros(a.lattice, a.comps.len()), p, ladder, family)
}

/// `|f|_{𝒞^β} = sup_s s^{−β/2} |P_s f|_∞` for `β ≤ 0`.
pub fn holder_neg_norm(f: &ComponentField, beta: f64, ladder: &SLadder) -> Result<f64, NormError> {
    if beta > 0.0 {
        return Err(NormError::PositiveBeta(beta));
    }
    Ok(ladder.points.iter().map(|&s| s.powf(-beta / 2.0) * f.heat(s).sup_norm()).fold(0.0, f64::max))
}

/// Random lacunary field `Σ_j 2^{−jH} cos(2π 2^j x_a + φ)` per component,
/// with octaves kept below the dealiasing cutoff. Its Hölder regularity is
/// about `H`.
pub fn weierstrass_field(lattice: Lattice, layout: FieldLayout, amplitude: f64, hurst: f64, seed: u64) -> LatticeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves = (0..).take_while(|j| 3 * (1usize << j) < lattice.n).count();
    let terms: Vec<Vec<(usize, f64, f64)>> = (0..layout.ncomp())
        .map(|_| (0..octaves).map(|j| (rng.gen_range(0..lattice.d), rng.gen_range(0.0..2.0 * PI), (1u64 << j) as f64)).collect())
        .collect();
    LatticeField::from_fn(lattice, layout, |p, o| {
        for (v, t) in o.iter_mut().zip(&terms) {
            *v = amplitude * t.iter().map(|(a, ph, k)| k.powf(-hurst) * (2.0 * PI * k * p[*a] + ph).cos()).sum::<f64>();
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_field::FieldLayout;
    use crate::lie_core::GroupSpec;
    use crate::observables::{line_integral, Segment};

    fn random_field(l: Lattice, ncomp: usize, seed: u64) -> ComponentField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<([i32; 3], f64, f64)> = (0..6 * ncomp)
            .map(|_| ([rng.gen_range(-3..=3), rng.gen_range(-3..=3), rng.gen_range(-3..=3)], rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.0)))
            .collect();
        let comps = (0..ncomp)
            .map(|c| {
                (0..l.len())
                    .map(|idx| {
                        let p = l.position(idx);
                        modes[6 * c..6 * c + 6].iter().map(|(k, a, ph)| {
                            let kx: f64 = (0..l.d).map(|i| k[i] as f64 * p[i]).sum();
                            a * (2.0 * PI * kx + ph).cos()
                        }).sum()
                    })
                    .collect()
            })
            .collect();
        ComponentField { lattice: l, comps }
    }

    #[test]
    fn default_block_is_admissible() {
        let p = NormParams::default();
        p.validate().unwrap();
        assert!((p.alpha - 0.45).abs() < 1e-15 && (p.delta - 0.95).abs() < 1e-15);
        assert!((p.eta() + 0.605).abs() < 1e-12);
        assert!((p.mu() + 0.35).abs() < 1e-12);
        assert!(p.lambda() < 0.0 && p.lambda() > -0.125);
        assert!((p.nu - (0.025 - 0.0025)).abs() < 1e-12);
        assert!((p.kappa() - 0.0025).abs() < 1e-15);
        assert!((p.beta * 4.0 * p.lambda() + p.r).abs() < 1e-12);
        let bad = NormParams { alpha: 0.6, ..p };
        assert!(bad.validate().is_err());
        let bad = NormParams { nu: 0.03, ..p };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn segment_integrals_match_quadrature() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let f = random_field(l, 6, 1);
        let lf = LatticeField { lattice: l, layout, comps: f.comps.clone() };
        for v in [[0.25, 0.0, 0.0], [0.1, -0.17, 0.0], [0.03125, 0.0625, 0.0]] {
            let all = segment_integrals(&f, v);
            for idx in [0, 37, 200] {
                let p = l.position(idx);
                let want = line_integral(&lf, &Segment::new(p, v).unwrap());
                for c in 0..6 {
                    assert!((all[c][idx] - want[c]).abs() < 1e-9, "{v:?} {c}");
                }
            }
        }
        // Nyquist content as well
        let g = ComponentField { lattice: l, comps: vec![(0..l.len()).map(|i| if (l.site(i)[0] + l.site(i)[1]) % 2 == 0 { 1.0 } else { -1.0 }).collect()] };
        let lg = LatticeField { lattice: l, layout: FieldLayout { d: 2, dim_g: 1, dim_v: 0 }, comps: vec![g.comps[0].clone(), vec![0.0; l.len()]] };
        let v = [0.07, 0.11, 0.0];
        let all = segment_integrals(&g, v);
        let want = line_integral(&lg, &Segment::new(l.position(5), v).unwrap());
        assert!((all[0][5] - want[0]).abs() < 1e-9);
    }

    #[test]
    fn gr_norm_examples() {
        let l = Lattice::new(3, 8).unwrap();
        let fam = SegmentFamily::standard(3);
        let zero = ComponentField::zeros(l, 3);
        assert_eq!(gr_norm(&zero, 0.6, &fam), 0.0);
        let c = ComponentField { lattice: l, comps: vec![vec![3.0; l.len()], vec![4.0; l.len()]] };
        let want = 5.0 * 0.25f64.powf(1.0 - 0.6);
        assert!((gr_norm(&c, 0.6, &fam) - want).abs() < 1e-12);
        assert!((gr_norm(&c, 0.6, &fam.refine()) - want).abs() < 1e-12);
    }

    #[test]
    fn gr_norm_refinement_and_contraction() {
        let l = Lattice::new(2, 32).unwrap();
        let fam = SegmentFamily::standard(2);
        for seed in 0..5 {
            let f = random_field(l, 2, seed);
            let a = gr_norm(&f, 0.55, &fam);
            assert!(gr_norm(&f, 0.55, &fam.refine()) >= a);
            for s in [1e-4, 1e-3, 1e-2] {
                assert!(gr_norm(&f.heat(s), 0.55, &fam) <= a * 1.01);
            }
        }
    }

    #[test]
    fn quadratic_functional_examples() {
        let l = Lattice::new(2, 16).unwrap();
        assert_eq!(quadratic_functional(&ComponentField::zeros(l, 2), 0.0), Err(NormError::NonPositiveTime(0.0)));
        let f = random_field(l, 2, 4);
        let q1 = quadratic_functional(&f, 0.003).unwrap();
        let f2 = ComponentField { lattice: l, comps: f.comps.iter().map(|c| c.iter().map(|x| 2.0 * x).collect()).collect() };
        let q2 = quadratic_functional(&f2, 0.003).unwrap();
        for (a, b) in q1.comps.iter().zip(&q2.comps) {
            for (x, y) in a.iter().zip(b) {
                assert!((4.0 * x - y).abs() < 1e-12 * (1.0 + y.abs()));
            }
        }
        // single mode A_1 = cos(2π(2x + y)), A_2 = 0
        let s = 0.01;
        let one = ComponentField {
            lattice: l,
            comps: vec![(0..l.len()).map(|i| { let p = l.position(i); (2.0 * PI * (2.0 * p[0] + p[1])).cos() }).collect(), vec![0.0; l.len()]],
        };
        let q = quadratic_functional(&one, s).unwrap();
        let damp = (-4.0 * PI * PI * 5.0 * s).exp();
        for idx in [0, 11, 100] {
            let p = l.position(idx);
            let ph = 2.0 * PI * (2.0 * p[0] + p[1]);
            let want = [-damp * damp * ph.cos() * ph.sin() * 2.0 * PI * 2.0, -damp * damp * ph.cos() * ph.sin() * 2.0 * PI];
            assert!((q.comps[0][idx] - want[0]).abs() < 1e-9);
            assert!((q.comps[1][idx] - want[1]).abs() < 1e-9);
            assert!(q.comps[2..].iter().all(|c| c[idx].abs() < 1e-12));
        }
    }

    #[test]
    fn quad_norm_and_sigma() {
        let l = Lattice::new(2, 16).unwrap();
        let p = NormParams::default();
        let ladder = SLadder::log(1e-4, 0.25, 8);
        let fam = SegmentFamily::dyadic(2, 3, 1, 1);
        let a = random_field(l, 2, 7);
        assert_eq!(quad_norm(&a, &a, p.gamma, p.delta, &ladder, &fam).unwrap(), 0.0);
        assert_eq!(sigma_size(&ComponentField::zeros(l, 2), &p, &ladder, &fam).unwrap(), 0.0);
        let b = random_field(l, 2, 8);
        let c = random_field(l, 2, 9);
        let ab = sigma_distance(&a, &b, &p, &ladder, &fam).unwrap();
        let ac = sigma_distance(&a, &c, &p, &ladder, &fam).unwrap();
        let cb = sigma_distance(&c, &b, &p, &ladder, &fam).unwrap();
        assert!(ab <= 1.05 * (ac + cb));
    }

    #[test]
    fn holder_examples() {
        let l = Lattice::new(2, 16).unwrap();
        let ladder = SLadder::default();
        let c = ComponentField { lattice: l, comps: vec![vec![-2.5; l.len()]] };
        assert!((holder_neg_norm(&c, 0.0, &ladder).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(holder_neg_norm(&c, 0.1, &ladder), Err(NormError::PositiveBeta(0.1)));
        let k2 = 5.0;
        let mode = ComponentField { lattice: l, comps: vec![(0..l.len()).map(|i| { let p = l.position(i); (2.0 * PI * (2.0 * p[0] + p[1])).cos() }).collect()] };
        let beta = -0.6;
        let got = holder_neg_norm(&mode, beta, &ladder).unwrap();
        let on_ladder = ladder.points.iter().map(|s| s.powf(-beta / 2.0) * (-4.0 * PI * PI * k2 * s).exp()).fold(0.0, f64::max);
        assert!((got - on_ladder).abs() < 1e-12);
        let s_star = -beta / (8.0 * PI * PI * k2);
        let exact = s_star.powf(-beta / 2.0) * (-4.0 * PI * PI * k2 * s_star).exp();
        assert!(got <= exact * (1.0 + 1e-12) && got > 0.9 * exact);
        assert!(holder_neg_norm(&mode, beta, &ladder.refine()).unwrap() >= got);
    }

    #[test]
    fn heatgr_examples() {
        let l = Lattice::new(2, 16).unwrap();
        let ladder = SLadder::log(1e-5, 0.5, 12);
        let fam = SegmentFamily::dyadic(2, 3, 1, 2);
        assert_eq!(heatgr_norm(&ComponentField::zeros(l, 2), 0.45, 0.05, &ladder, &fam), 0.0);
        let f = random_field(l, 2, 3);
        let a = heatgr_norm(&f, 0.45, 0.05, &ladder, &fam);
        let b = heatgr_norm(&f, 0.45, 0.05, &ladder.refine(), &fam);
        assert!(a.is_finite() && b >= a && b <= 1.05 * a);
    }

    #[test]
    fn weierstrass_is_deterministic_and_band_limited() {
        let l = Lattice::new(2, 32).unwrap();
        let layout = FieldLayout::gauge_only(&GroupSpec::su2(), 2);
        let a = weierstrass_field(l, layout, 1.0, 0.2, 3);
        assert_eq!(a, weierstrass_field(l, layout, 1.0, 0.2, 3));
        let sp = Spectral::new(l);
        let packed = crate::lattice_field::SpectralField::from_physical(&sp, &a).packed;
        for z in &packed {
            for (v, m) in z.iter().zip(sp.dealias_mask()) {
                assert!(*m == 1.0 || v.norm() < 1e-9);
            }
        }
    }
}

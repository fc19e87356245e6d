//! Space-time white noise, the stochastic heat equation Ψ = 𝒫⋆1₊ξ and the
//! quadratic functional 𝒫⋆(Ψ dΨ).

use crate::drift::{DriftKernel, Jet};
use crate::lattice_field::{FieldError, FieldLayout, Lattice, LatticeField, Mollifier, Spectral};
use crate::lie_core::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use std::collections::VecDeque;

/// Seed of ensemble member `index` derived from a master seed.
pub fn member_seed(master: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

/// Random-access stream of white-noise slices: slice `i` covers
/// `[iΔt, (i+1)Δt)` and every real coordinate has per-cell variance
/// `1/(Δt·h^d)`. Slices are reproducible from `(seed, i)`.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    pub seed: u64,
    pub lattice: Lattice,
    pub ncomp: usize,
    pub dt: f64,
    /// Multiplies every sample (antithetic pairs use -1).
    pub sign: f64,
    /// Slices with index >= cutoff are zero.
    pub cutoff: Option<i64>,
}

impl NoiseStream {
    pub fn new(seed: u64, lattice: Lattice, ncomp: usize, dt: f64) -> Self {
        Self { seed, lattice, ncomp, dt, sign: 1.0, cutoff: None }
    }

    pub fn std(&self) -> f64 {
        (1.0 / (self.dt * self.lattice.h().powi(self.lattice.d as i32))).sqrt()
    }

    pub fn slice(&self, i: i64) -> Vec<Vec<f64>> {
        let len = self.lattice.len();
        if self.cutoff.is_some_and(|c| i >= c) {
            return vec![vec![0.0; len]; self.ncomp];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64 ^ 0x9e37_79b9_7f4a_7c15);
        let s = self.std() * self.sign;
        (0..self.ncomp)
            .map(|_| (0..len).map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect())
            .collect()
    }
}

/// A materialised block of noise slices.
#[derive(Debug, Clone)]
pub struct NoiseSlab {
    pub seed: u64,
    pub lattice: Lattice,
    pub dt: f64,
    pub first: i64,
    pub slices: Vec<Vec<Vec<f64>>>,
}

/// Samples slices `first..first+count` of the stream for `seed`.
pub fn sample_white_noise(seed: u64, lattice: Lattice, ncomp: usize, dt: f64, first: i64, count: usize) -> NoiseSlab {
    let stream = NoiseStream::new(seed, lattice, ncomp, dt);
    NoiseSlab { seed, lattice, dt, first, slices: (0..count as i64).map(|k| stream.slice(first + k)).collect() }
}

/// Per-mode factors of the exponential integrator for one step size.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub dt: f64,
    /// `e^{-λΔt}` with `λ = 4π²|k|²`.
    pub decay: Vec<f64>,
    /// `(1 - e^{-λΔt})/λ`.
    pub phi1: Vec<f64>,
    /// `√((1 - e^{-2λΔt})/(2λΔt))·Δt`, the exact OU increment factor.
    pub white: Vec<f64>,
}

impl Propagator {
    pub fn new(sp: &Spectral, dt: f64) -> Self {
        let n = sp.len();
        let mut decay = vec![0.0; n];
        let mut phi1 = vec![0.0; n];
        let mut white = vec![0.0; n];
        for (k, &lam) in sp.ksq().iter().enumerate() {
            let z = lam * dt;
            decay[k] = (-z).exp();
            if z < 1e-12 {
                phi1[k] = dt;
                white[k] = dt;
            } else {
                phi1[k] = -(-z).exp_m1() / lam;
                white[k] = (-(-2.0 * z).exp_m1() / (2.0 * z)).sqrt() * dt;
            }
        }
        Self { dt, decay, phi1, white }
    }
}

/// Supplies the Fourier-space stochastic increment of each step for either
/// white noise (exact OU increment) or mollified noise ξ^ε (constant on each
/// step, integrated exactly against the heat kernel).
#[derive(Debug)]
pub struct NoiseDriver {
    pub stream: NoiseStream,
    pub chi: Option<Mollifier>,
    first_lag: i64,
    weights: Vec<f64>,
    spatial: Vec<f64>,
    cache: VecDeque<(i64, Vec<Vec<C64>>)>,
}

impl NoiseDriver {
    pub fn new(stream: NoiseStream, chi: Option<Mollifier>) -> Result<Self, FieldError> {
        let (first_lag, weights, spatial) = match &chi {
            Some(m) => {
                m.check_resolvable(&stream.lattice, stream.dt)?;
                let (f, w) = m.time_weights(stream.dt);
                (f, w, m.spatial_multiplier(&stream.lattice))
            }
            None => (0, vec![1.0], vec![1.0; stream.lattice.len()]),
        };
        Ok(Self { stream, chi, first_lag, weights, spatial, cache: VecDeque::new() })
    }

    fn ensure_slice(&mut self, sp: &Spectral, i: i64) {
        if self.cache.iter().any(|(k, _)| *k == i) {
            return;
        }
        let raw = self.stream.slice(i);
        let refs: Vec<&[f64]> = raw.iter().map(|c| c.as_slice()).collect();
        let mut packed = sp.forward_real(&refs);
        if self.chi.is_some() {
            for z in packed.iter_mut() {
                for (v, m) in z.iter_mut().zip(&self.spatial) {
                    *v *= m;
                }
            }
        }
        self.cache.push_back((i, packed));
        while self.cache.len() > self.weights.len() + 1 {
            self.cache.pop_front();
        }
    }

    /// Packed Fourier-space noise value used on step `i` (ξ_i or ξ^ε_i).
    pub fn value(&mut self, sp: &Spectral, i: i64) -> Vec<Vec<C64>> {
        let lags: Vec<i64> = (0..self.weights.len()).map(|m| i - (self.first_lag + m as i64)).collect();
        for &src in lags.iter().rev() {
            self.ensure_slice(sp, src);
        }
        let mut acc: Option<Vec<Vec<C64>>> = None;
        for (&src, &wm) in lags.iter().zip(&self.weights) {
            let z = &self.cache.iter().find(|(k, _)| *k == src).expect("slice cached").1;
            match acc.as_mut() {
                None => acc = Some(z.iter().map(|v| v.iter().map(|c| c * wm).collect()).collect()),
                Some(a) => {
                    for (av, zv) in a.iter_mut().zip(z) {
                        for (x, y) in av.iter_mut().zip(zv) {
                            *x += y * wm;
                        }
                    }
                }
            }
        }
        acc.expect("at least one weight")
    }

    /// Increment to add after propagating the state by `e^{-λΔt}` on step `i`.
    pub fn increment(&mut self, sp: &Spectral, prop: &Propagator, i: i64) -> Vec<Vec<C64>> {
        let mut z = self.value(sp, i);
        let factor = if self.chi.is_some() { &prop.phi1 } else { &prop.white };
        for v in z.iter_mut() {
            for (x, f) in v.iter_mut().zip(factor) {
                *x *= f;
            }
        }
        z
    }
}

/// Trajectory of the stochastic heat equation with zero initial condition.
#[derive(Debug, Clone)]
pub struct SheSolution {
    pub dt: f64,
    /// `states[i]` is Ψ at time `i·Δt`.
    pub states: Vec<LatticeField>,
}

/// Per-mode exponential update driven by the slab's slices (mollified if
/// `chi` is given; slices before the slab are taken from the same stream).
pub fn solve_she(slab: &NoiseSlab, layout: FieldLayout, chi: Option<Mollifier>) -> Result<SheSolution, FieldError> {
    let l = slab.lattice;
    let sp = Spectral::cached(l);
    let prop = Propagator::new(&sp, slab.dt);
    let nc = layout.ncomp();
    let packs = nc.div_ceil(2);
    let mut state: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); l.len()]; packs];
    let mut states = vec![LatticeField::zeros(l, layout)];
    let stream = NoiseStream::new(slab.seed, l, nc, slab.dt);
    let mut driver = NoiseDriver::new(stream, chi)?;
    for (k, raw) in slab.slices.iter().enumerate() {
        let i = slab.first + k as i64;
        let inc = if chi.is_some() {
            driver.increment(&sp, &prop, i)
        } else {
            let refs: Vec<&[f64]> = raw.iter().map(|c| c.as_slice()).collect();
            let mut z = sp.forward_real(&refs);
            for v in z.iter_mut() {
                for (x, f) in v.iter_mut().zip(&prop.white) {
                    *x *= f;
                }
            }
            z
        };
        for (s, dz) in state.iter_mut().zip(&inc) {
            for ((x, y), e) in s.iter_mut().zip(dz).zip(&prop.decay) {
                *x = *x * e + y;
            }
        }
        states.push(LatticeField { lattice: l, layout, comps: sp.inverse_real(state.clone(), nc) });
    }
    Ok(SheSolution { dt: slab.dt, states })
}

/// Exact one-shot sample of Ψ_t: each Fourier mode of unit-time white noise is
/// scaled by the OU standard deviation `√((1 - e^{-2λt})/(2λ))`.
pub fn sample_she_exact(seed: u64, lattice: Lattice, layout: FieldLayout, t: f64) -> LatticeField {
    let sp = Spectral::cached(lattice);
    let stream = NoiseStream::new(seed, lattice, layout.ncomp(), 1.0);
    let raw = stream.slice(0);
    let refs: Vec<&[f64]> = raw.iter().map(|c| c.as_slice()).collect();
    let mut z = sp.forward_real(&refs);
    let factor: Vec<f64> = sp
        .ksq()
        .iter()
        .map(|&lam| if lam * t < 1e-12 { t.sqrt() } else { (-(-2.0 * lam * t).exp_m1() / (2.0 * lam)).sqrt() })
        .collect();
    for v in z.iter_mut() {
        for (x, f) in v.iter_mut().zip(&factor) {
            *x *= f;
        }
    }
    LatticeField { lattice, layout, comps: sp.inverse_real(z, layout.ncomp()) }
}

/// One ε level of the quadratic functional 𝒫_t⋆(Ψ_ε dΨ_ε).
#[derive(Debug, Clone)]
pub struct QuadLevel {
    pub eps: f64,
    pub psi: LatticeField,
    pub value: LatticeField,
}

/// Quadratic functional on an ε ladder with Cauchy defects between
/// consecutive levels.
#[derive(Debug, Clone)]
pub struct QuadNoise {
    pub levels: Vec<QuadLevel>,
    /// `|Z^{ε_k} − Z^{ε_{k+1}}|_∞`.
    pub cauchy_defects: Vec<f64>,
    /// Set when a defect exceeds the tolerance.
    pub renormalisation_required: bool,
}

/// Integrates `Z' = ΔZ + Q(Ψ, Ψ)` with Z(0) = 0 alongside a supplied
/// trajectory `psi[i]` at times `iΔt`.
pub fn duhamel_quadratic(kernel: &DriftKernel, psi: &[LatticeField], dt: f64) -> LatticeField {
    let l = psi[0].lattice;
    let layout = psi[0].layout;
    let sp = Spectral::cached(l);
    let prop = Propagator::new(&sp, dt);
    let nc = layout.ncomp();
    let mut z: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); l.len()]; nc.div_ceil(2)];
    for p in &psi[..psi.len() - 1] {
        let jet = Jet::from_field(&sp, p, true);
        let q = kernel.evaluate(&jet.x, &jet.dx, true, false);
        let refs: Vec<&[f64]> = q.iter().map(|c| c.as_slice()).collect();
        let qh = sp.forward_real(&refs);
        for (s, dq) in z.iter_mut().zip(&qh) {
            for (((x, y), e), f) in s.iter_mut().zip(dq).zip(&prop.decay).zip(&prop.phi1) {
                *x = *x * e + y * f;
            }
        }
    }
    LatticeField { lattice: l, layout, comps: sp.inverse_real(z, nc) }
}

/// Computes 𝒫_t⋆(Ψ_ε dΨ_ε) for each ε in `eps_ladder` (all driven by the same
/// noise stream) up to `steps·Δt`.
pub fn quad_noise(
    kernel: &DriftKernel,
    stream: &NoiseStream,
    eps_ladder: &[f64],
    steps: usize,
    tolerance: f64,
) -> Result<QuadNoise, FieldError> {
    let layout = kernel.layout;
    let mut levels = Vec::new();
    for &eps in eps_ladder {
        let chi = Mollifier::new(eps, true);
        let slab = NoiseSlab { seed: stream.seed, lattice: stream.lattice, dt: stream.dt, first: 0, slices: vec![Vec::new(); steps] };
        let she = solve_she(&slab, layout, Some(chi))?;
        let value = duhamel_quadratic(kernel, &she.states, stream.dt);
        levels.push(QuadLevel { eps, psi: she.states.last().cloned().expect("nonempty"), value });
    }
    Ok(finish_quad(levels, tolerance))
}

/// Builds the report from precomputed levels.
pub fn finish_quad(levels: Vec<QuadLevel>, tolerance: f64) -> QuadNoise {
    let cauchy_defects: Vec<f64> = levels.windows(2).map(|w| w[0].value.max_abs_diff(&w[1].value)).collect();
    let renormalisation_required = cauchy_defects.iter().any(|d| *d > tolerance);
    QuadNoise { levels, cauchy_defects, renormalisation_required }
}

/// CSV moment report row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MomentRow {
    pub quantity: String,
    pub scale: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub fitted_slope: f64,
    pub target_slope: f64,
}

pub fn write_moment_csv<W: std::io::Write>(rows: &[MomentRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "quantity,scale,estimate,stderr,fitted_slope,target_slope")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e},{:e},{},{}", r.quantity, r.scale, r.estimate, r.stderr, r.fitted_slope, r.target_slope)?;
    }
    Ok(())
}

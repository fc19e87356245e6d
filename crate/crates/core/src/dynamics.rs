//! Time integration of the mollified Yang–Mills–Higgs system, the coupled
//! gauge-transformation flow and the perturbed system driven by `c·h`.

use crate::drift::{DriftKernel, Jet};
use crate::lattice_field::{FieldError, FieldLayout, GaugeTransformField, Lattice, LatticeField, Mollifier, Spectral};
use crate::lie_core::{GroupKind, GroupSpec, C64};
use crate::noise::{member_seed, NoiseDriver, NoiseStream, Propagator};
use nalgebra::DMatrix;
use rand::Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("time step {dt} exceeds the bound {max} ({reason})")]
    StepTooLarge { dt: f64, max: f64, reason: &'static str },
    #[error("operator has shape {0}x{1}, expected {2}x{2}")]
    Shape(usize, usize, usize),
    #[error("state carries no gauge transformation")]
    NoGauge,
    #[error("root-find not bracketed at eps = {eps}: probe offset {low} at m = {m_low}, {high} at m = {m_high}")]
    NotBracketed { eps: f64, m_low: f64, low: f64, m_high: f64, high: f64 },
}

/// Pointwise linear map on `𝔤^d` in block form: block `(i, k)` is `c_i^{(k)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    pub d: usize,
    pub dim: usize,
    pub mat: DMatrix<f64>,
}

impl BlockOperator {
    pub fn zero(d: usize, dim: usize) -> Self {
        Self { d, dim, mat: DMatrix::zeros(d * dim, d * dim) }
    }

    pub fn identity(d: usize, dim: usize, scale: f64) -> Self {
        Self { d, dim, mat: DMatrix::identity(d * dim, d * dim) * scale }
    }

    pub fn from_matrix(d: usize, dim: usize, mat: DMatrix<f64>) -> Result<Self, DynamicsError> {
        if mat.nrows() != d * dim || mat.ncols() != d * dim {
            return Err(DynamicsError::Shape(mat.nrows(), mat.ncols(), d * dim));
        }
        Ok(Self { d, dim, mat })
    }

    /// Builds the operator from its action on basis vectors.
    pub fn from_fn(d: usize, dim: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let m = d * dim;
        let mut mat = DMatrix::zeros(m, m);
        for k in 0..m {
            let mut e = vec![0.0; m];
            e[k] = 1.0;
            for (i, v) in f(&e).into_iter().enumerate() {
                mat[(i, k)] = v;
            }
        }
        Self { d, dim, mat }
    }

    pub fn block(&self, i: usize, k: usize) -> DMatrix<f64> {
        self.mat.view((i * self.dim, k * self.dim), (self.dim, self.dim)).into_owned()
    }

    pub fn set_block(&mut self, i: usize, k: usize, b: &DMatrix<f64>) {
        self.mat.view_mut((i * self.dim, k * self.dim), (self.dim, self.dim)).copy_from(b);
    }

    pub fn is_zero(&self) -> bool {
        self.mat.iter().all(|v| *v == 0.0)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_acc(x, 1.0, &mut out);
        out
    }

    pub fn apply_acc(&self, x: &[f64], w: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.mat.nrows()) {
            let mut s = 0.0;
            for (k, xk) in x.iter().enumerate().take(self.mat.ncols()) {
                s += self.mat[(i, k)] * xk;
            }
            *o += w * s;
        }
    }

    fn sparse(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.mat.nrows() {
            for k in 0..self.mat.ncols() {
                if self.mat[(i, k)] != 0.0 {
                    out.push((i, k, self.mat[(i, k)]));
                }
            }
        }
        out
    }
}

/// Linear counterterm `(C_A, C_Φ)` added to the drift.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterterm {
    pub c_a: BlockOperator,
    pub c_phi: DMatrix<f64>,
}

impl Counterterm {
    pub fn zero(layout: FieldLayout) -> Self {
        Self { c_a: BlockOperator::zero(layout.d, layout.dim_g), c_phi: DMatrix::zeros(layout.dim_v, layout.dim_v) }
    }

    /// `C_A = m_A·id`, `C_Φ = m_Φ·id`.
    pub fn mass(layout: FieldLayout, m_a: f64, m_phi: f64) -> Self {
        Self { c_a: BlockOperator::identity(layout.d, layout.dim_g, m_a), c_phi: DMatrix::identity(layout.dim_v, layout.dim_v) * m_phi }
    }

    pub fn is_zero(&self) -> bool {
        self.c_a.is_zero() && self.c_phi.iter().all(|v| *v == 0.0)
    }

    /// Largest `|C(αx + y) − αCx − Cy|` over random vectors.
    pub fn linearity_defect<R: Rng>(&self, rng: &mut R, trials: usize) -> f64 {
        let m = self.c_a.mat.nrows();
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let al: f64 = rng.gen_range(-2.0..2.0);
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| al * a + b).collect();
            let (cx, cy, cxy) = (self.c_a.apply(&x), self.c_a.apply(&y), self.c_a.apply(&xy));
            for i in 0..m {
                worst = worst.max((cxy[i] - al * cx[i] - cy[i]).abs());
            }
        }
        worst
    }

    /// Largest `|C(Ad_g A) − Ad_g(C A)|` over random `g` and `A`.
    pub fn equivariance_defect<R: Rng>(&self, spec: &GroupSpec, rng: &mut R, trials: usize) -> f64 {
        let (d, dg) = (self.c_a.d, self.c_a.dim);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let gc: Vec<f64> = (0..dg).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = spec.exp_coords(&gc);
            let ad = |x: &[f64]| -> Vec<f64> {
                let mut out = Vec::with_capacity(x.len());
                for i in 0..d {
                    let xi = spec.from_coords(&x[i * dg..(i + 1) * dg]);
                    let y = &g.mat * &xi.mat * g.mat.adjoint();
                    out.extend(spec.basis().iter().map(|t| crate::lie_core::trace_inner(&y, t)));
                }
                out
            };
            let a: Vec<f64> = (0..d * dg).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = self.c_a.apply(&ad(&a));
            let rhs = ad(&self.c_a.apply(&a));
            for (p, q) in lhs.iter().zip(&rhs) {
                worst = worst.max((p - q).abs());
            }
        }
        worst
    }
}

/// Tabulated mass counterterm `ε ↦ m(ε)` (multiple of identity on `𝔤^d`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CountertermTable {
    pub probe: String,
    /// `(ε, m)` sorted by decreasing ε.
    pub entries: Vec<(f64, f64)>,
}

impl CountertermTable {
    /// Interpolates linearly in `log ε`, clamping at the ends.
    pub fn mass_at(&self, eps: f64) -> f64 {
        let e = &self.entries;
        if e.is_empty() {
            return 0.0;
        }
        let mut sorted = e.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if eps <= sorted[0].0 {
            return sorted[0].1;
        }
        for w in sorted.windows(2) {
            if eps <= w[1].0 {
                let s = (eps.ln() - w[0].0.ln()) / (w[1].0.ln() - w[0].0.ln());
                return w[0].1 + s * (w[1].1 - w[0].1);
            }
        }
        sorted.last().map_or(0.0, |v| v.1)
    }

    pub fn counterterm(&self, layout: FieldLayout, eps: f64) -> Counterterm {
        Counterterm::mass(layout, self.mass_at(eps), 0.0)
    }
}

/// Step size, mollification scale and blow-up threshold.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Mollification scale; `None` drives with white noise.
    pub eps: Option<f64>,
    pub non_anticipative: bool,
    pub blowup: f64,
}

impl IntegratorConfig {
    /// `Δt = h²/8`, `ε = 4h`, causal mollifier, threshold `1e6`.
    pub fn for_lattice(l: Lattice) -> Self {
        let h = l.h();
        Self { dt: h * h / 8.0, eps: Some(4.0 * h), non_anticipative: true, blowup: 1e6 }
    }

    pub fn validate(&self, l: Lattice) -> Result<(), DynamicsError> {
        let h = l.h();
        let max = h * h / 8.0;
        if self.dt > max * (1.0 + 1e-12) {
            return Err(DynamicsError::StepTooLarge { dt: self.dt, max, reason: "dt <= h^2/8" });
        }
        if let Some(eps) = self.eps {
            let max = eps * eps / 4.0;
            if self.dt > max * (1.0 + 1e-12) {
                return Err(DynamicsError::StepTooLarge { dt: self.dt, max, reason: "dt <= eps^2/4" });
            }
            Mollifier::new(eps, self.non_anticipative).check_resolvable(&l, self.dt)?;
        }
        Ok(())
    }

    pub fn mollifier(&self) -> Option<Mollifier> {
        self.eps.map(|e| Mollifier::new(e, self.non_anticipative))
    }
}

/// State of one trajectory. The field is stored as its packed spectrum.
#[derive(Debug, Clone)]
pub struct SpdeState {
    pub t: f64,
    pub step: i64,
    pub lattice: Lattice,
    pub layout: FieldLayout,
    pub spectrum: Vec<Vec<C64>>,
    pub g: Option<GaugeTransformField>,
    pub alive: bool,
    pub diagnostic: Option<String>,
}

impl SpdeState {
    pub fn new(x: &LatticeField, g: Option<GaugeTransformField>) -> Self {
        let sp = Spectral::cached(x.lattice);
        let refs: Vec<&[f64]> = x.comps.iter().map(|c| c.as_slice()).collect();
        Self {
            t: 0.0,
            step: 0,
            lattice: x.lattice,
            layout: x.layout,
            spectrum: sp.forward_real(&refs),
            g,
            alive: true,
            diagnostic: None,
        }
    }

    /// Physical field, or `None` in the cemetery.
    pub fn field(&self) -> Option<LatticeField> {
        if !self.alive {
            return None;
        }
        let sp = Spectral::cached(self.lattice);
        Some(LatticeField { lattice: self.lattice, layout: self.layout, comps: sp.inverse_real(self.spectrum.clone(), self.layout.ncomp()) })
    }

    pub fn kill(&mut self, why: String) {
        if self.alive {
            self.alive = false;
            self.diagnostic = Some(why);
        }
    }
}

/// Scalar diagnostics of one step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StepDiagnostics {
    pub step: i64,
    pub t: f64,
    pub sup_norm: f64,
    pub energy: f64,
    pub alive: bool,
}

pub fn write_diagnostics_csv<W: std::io::Write>(rows: &[StepDiagnostics], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,t,sup_norm,energy,alive")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e},{:e},{}", r.step, r.t, r.sup_norm, r.energy, r.alive)?;
    }
    Ok(())
}

const MAXN: usize = 4;
type Small = [C64; MAXN * MAXN];
const ZERO: C64 = C64::new(0.0, 0.0);

#[inline]
fn mm(n: usize, a: &Small, b: &Small, out: &mut Small) {
    for r in 0..n {
        for c in 0..n {
            let mut s = ZERO;
            for k in 0..n {
                s += a[r * n + k] * b[k * n + c];
            }
            out[r * n + c] = s;
        }
    }
}

/// `a bᴴ`
#[inline]
fn mm_h(n: usize, a: &Small, b: &Small, out: &mut Small) {
    for r in 0..n {
        for c in 0..n {
            let mut s = ZERO;
            for k in 0..n {
                s += a[r * n + k] * b[c * n + k].conj();
            }
            out[r * n + c] = s;
        }
    }
}

fn small_defect(n: usize, g: &Small) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let mut s = ZERO;
            for k in 0..n {
                s += g[k * n + r].conj() * g[k * n + c];
            }
            if r == c {
                s -= 1.0;
            }
            worst = worst.max(s.norm());
        }
    }
    worst
}

fn small_det(n: usize, g: &Small) -> C64 {
    match n {
        1 => g[0],
        2 => g[0] * g[3] - g[1] * g[2],
        3 => {
            g[0] * (g[4] * g[8] - g[5] * g[7]) - g[1] * (g[3] * g[8] - g[5] * g[6]) + g[2] * (g[3] * g[7] - g[4] * g[6])
        }
        _ => DMatrix::from_fn(n, n, |r, c| g[r * n + c]).determinant(),
    }
}

/// Newton–Schulz polar projection onto U(N), with the determinant phase
/// removed for SU(N). Returns the defect before projection.
fn project_unitary(n: usize, g: &mut Small, special: bool) -> f64 {
    let before = small_defect(n, g);
    let mut gh_g: Small = [ZERO; 16];
    let mut tmp: Small = [ZERO; 16];
    for _ in 0..40 {
        if small_defect(n, g) < 1e-15 {
            break;
        }
        for r in 0..n {
            for c in 0..n {
                let mut s = ZERO;
                for k in 0..n {
                    s += g[k * n + r].conj() * g[k * n + c];
                }
                gh_g[r * n + c] = -s * 0.5;
            }
            gh_g[r * n + r] += 1.5;
        }
        mm(n, g, &gh_g, &mut tmp);
        g[..n * n].copy_from_slice(&tmp[..n * n]);
    }
    if special {
        let det = small_det(n, g);
        let phase = C64::from_polar(1.0, -det.arg() / n as f64);
        for v in g[..n * n].iter_mut() {
            *v *= phase;
        }
    }
    before
}

/// Exponential-Euler integrator for one lattice, group and configuration.
#[derive(Debug)]
pub struct Integrator {
    pub cfg: IntegratorConfig,
    pub kernel: DriftKernel,
    pub sp: Arc<Spectral>,
    pub prop: Propagator,
    basis: Vec<Small>,
}

impl Integrator {
    pub fn new(spec: &GroupSpec, layout: FieldLayout, lattice: Lattice, cfg: IntegratorConfig) -> Result<Self, DynamicsError> {
        cfg.validate(lattice)?;
        Ok(Self::unchecked(spec, layout, lattice, cfg))
    }

    /// Deterministic use (the heat flow) with its own step rule.
    pub(crate) fn unchecked(spec: &GroupSpec, layout: FieldLayout, lattice: Lattice, cfg: IntegratorConfig) -> Self {
        let sp = Spectral::cached(lattice);
        let prop = Propagator::new(&sp, cfg.dt);
        let n = spec.n;
        let basis = spec
            .basis()
            .iter()
            .map(|t| {
                let mut s = [ZERO; 16];
                for r in 0..n {
                    for c in 0..n {
                        s[r * n + c] = t[(r, c)];
                    }
                }
                s
            })
            .collect();
        Self { cfg, kernel: DriftKernel::new(spec, layout), sp, prop, basis }
    }

    pub fn lattice(&self) -> Lattice {
        self.sp.lattice
    }

    pub fn layout(&self) -> FieldLayout {
        self.kernel.layout
    }

    /// Noise driver for one member seed and sign.
    pub fn driver(&self, seed: u64, sign: f64) -> Result<NoiseDriver, DynamicsError> {
        let mut stream = NoiseStream::new(seed, self.lattice(), self.layout().ncomp(), self.cfg.dt);
        stream.sign = sign;
        Ok(NoiseDriver::new(stream, self.cfg.mollifier())?)
    }

    /// Fourier increment of the noise for step `state.step` (the propagated
    /// stochastic convolution over one step).
    pub fn noise_increment(&self, driver: &mut NoiseDriver, step: i64) -> Vec<Vec<C64>> {
        driver.increment(&self.sp, &self.prop, step)
    }

    pub(crate) fn jet(&self, state: &SpdeState) -> Jet {
        Jet::from_spectrum(&self.sp, &state.spectrum, self.layout().ncomp(), true)
    }

    pub(crate) fn check_blowup(&self, state: &mut SpdeState, x: &[Vec<f64>]) {
        let len = x.first().map_or(0, |c| c.len());
        let mut worst: f64 = 0.0;
        let mut finite = true;
        for i in 0..len {
            let s: f64 = x.iter().map(|c| c[i] * c[i]).sum();
            finite &= s.is_finite();
            worst = worst.max(s);
        }
        if !finite {
            state.kill(format!("non-finite field at t = {}", state.t));
        } else if worst.sqrt() > self.cfg.blowup {
            state.kill(format!("sup norm {:e} exceeded {:e} at t = {}", worst.sqrt(), self.cfg.blowup, state.t));
        }
    }

    /// Drift `Q(X,X) + K(X) + C X [+ c·h]` on the grid.
    pub(crate) fn drift(&self, jet: &Jet, ct: &Counterterm, extra: Option<(&BlockOperator, &[Vec<f64>])>) -> Vec<Vec<f64>> {
        let mut out = self.kernel.full_drift(jet);
        let l = self.layout();
        let na = l.d * l.dim_g;
        for (i, k, v) in ct.c_a.sparse() {
            let (src, dst) = (&jet.x[k], i);
            for (o, s) in out[dst].iter_mut().zip(src) {
                *o += v * s;
            }
        }
        for i in 0..l.dim_v {
            for k in 0..l.dim_v {
                let v = ct.c_phi[(i, k)];
                if v != 0.0 {
                    let src = jet.x[na + k].clone();
                    for (o, s) in out[na + i].iter_mut().zip(&src) {
                        *o += v * s;
                    }
                }
            }
        }
        if let Some((c, h)) = extra {
            for (i, k, v) in c.sparse() {
                for (o, s) in out[i].iter_mut().zip(&h[k]) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// `x̂ ← e^{−λΔt}x̂ + φ₁·mask·N̂ + noise`.
    fn advance(&self, state: &mut SpdeState, drift: &[Vec<f64>], noise: &[Vec<C64>]) {
        let refs: Vec<&[f64]> = drift.iter().map(|c| c.as_slice()).collect();
        let nh = self.sp.forward_real(&refs);
        let mask = self.sp.dealias_mask();
        for ((s, dn), dz) in state.spectrum.iter_mut().zip(&nh).zip(noise) {
            for k in 0..s.len() {
                s[k] = s[k] * self.prop.decay[k] + dn[k] * (self.prop.phi1[k] * mask[k]) + dz[k];
            }
        }
        state.t += self.cfg.dt;
        state.step += 1;
    }

    /// One step of the mollified SYMH system with the given noise increment.
    pub fn step_symh(&self, state: &mut SpdeState, noise: &[Vec<C64>], ct: &Counterterm) {
        if !state.alive {
            return;
        }
        let jet = self.jet(state);
        self.check_blowup(state, &jet.x);
        if !state.alive {
            return;
        }
        let n = self.drift(&jet, ct, None);
        self.advance(state, &n, noise);
    }

    /// Computes `h_j = (∂_j g)g⁻¹` (algebra coordinates in the A layout) and
    /// the nonlinear part of the gauge flow given the current connection.
    fn gauge_terms(&self, g: &GaugeTransformField, a: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<C64>>, Vec<Vec<C64>>) {
        let n = g.n;
        let l = self.layout();
        let (d, dg) = (l.d, l.dim_g);
        let len = self.sp.len();
        let ghat: Vec<Vec<C64>> = g
            .entries
            .iter()
            .map(|e| {
                let mut z = e.clone();
                self.sp.forward(&mut z);
                z
            })
            .collect();
        let dgs: Vec<Vec<Vec<C64>>> = (0..d)
            .map(|j| {
                ghat.iter()
                    .map(|z| {
                        let mut w = self.sp.derivative(z, j);
                        self.sp.inverse(&mut w);
                        w
                    })
                    .collect()
            })
            .collect();
        let mut h = vec![vec![0.0; len]; d * dg];
        let mut nl = vec![vec![ZERO; len]; n * n];
        let (mut gm, mut dm, mut hm, mut am, mut t1, mut t2, mut acc) = ([ZERO; 16], [ZERO; 16], [ZERO; 16], [ZERO; 16], [ZERO; 16], [ZERO; 16], [ZERO; 16]);
        for idx in 0..len {
            for e in 0..n * n {
                gm[e] = g.entries[e][idx];
                acc[e] = ZERO;
            }
            for j in 0..d {
                for e in 0..n * n {
                    dm[e] = dgs[j][e][idx];
                    am[e] = ZERO;
                }
                mm_h(n, &dm, &gm, &mut hm);
                for (b, t) in self.basis.iter().enumerate() {
                    let mut s = 0.0;
                    for e in 0..n * n {
                        s += (hm[e] * t[e].conj()).re;
                    }
                    h[j * dg + b][idx] = s;
                    let ab = a[j * dg + b][idx];
                    if ab != 0.0 {
                        for e in 0..n * n {
                            am[e] += t[e] * ab;
                        }
                    }
                }
                // −h_j ∂_j g + [Ã_j, h_j] g
                mm(n, &hm, &dm, &mut t1);
                for e in 0..n * n {
                    acc[e] -= t1[e];
                }
                mm(n, &am, &hm, &mut t1);
                mm(n, &hm, &am, &mut t2);
                for e in 0..n * n {
                    t1[e] -= t2[e];
                }
                mm(n, &t1, &gm, &mut t2);
                for e in 0..n * n {
                    acc[e] += t2[e];
                }
            }
            for e in 0..n * n {
                nl[e][idx] = acc[e];
            }
        }
        (h, ghat, nl)
    }

    fn gauge_update(&self, state: &mut SpdeState, ghat: Vec<Vec<C64>>, nl: Vec<Vec<C64>>) {
        let special = matches!(self.kernel.spec.kind, GroupKind::SU);
        let Some(g) = state.g.as_mut() else { return };
        let n = g.n;
        for (e, (mut z, mut w)) in ghat.into_iter().zip(nl).enumerate() {
            self.sp.forward(&mut w);
            for k in 0..z.len() {
                z[k] = z[k] * self.prop.decay[k] + w[k] * self.prop.phi1[k];
            }
            self.sp.inverse(&mut z);
            g.entries[e] = z;
        }
        let mut m = [ZERO; 16];
        let mut worst: f64 = 0.0;
        for idx in 0..self.sp.len() {
            for e in 0..n * n {
                m[e] = g.entries[e][idx];
            }
            let before = project_unitary(n, &mut m, special);
            worst = worst.max(if before.is_finite() { before } else { f64::INFINITY });
            for e in 0..n * n {
                g.entries[e][idx] = m[e];
            }
        }
        if worst > 0.5 {
            state.kill(format!("gauge transformation lost invertibility (defect {worst:e}) at t = {}", state.t));
        }
    }

    /// One step of the gauge flow driven by the physical connection `a`;
    /// returns `h = (dg)g⁻¹` evaluated before the step.
    pub fn step_gauge_flow(&self, state: &mut SpdeState, a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DynamicsError> {
        let g = state.g.as_ref().ok_or(DynamicsError::NoGauge)?;
        let (h, ghat, nl) = self.gauge_terms(g, a);
        self.gauge_update(state, ghat, nl);
        Ok(h)
    }

    /// One step of the perturbed system: SYMH drift plus `c·h` on the gauge
    /// component, followed by the gauge-flow step with the pre-step field.
    pub fn step_perturbed(&self, state: &mut SpdeState, noise: &[Vec<C64>], ct: &Counterterm, c: &BlockOperator) -> Result<(), DynamicsError> {
        if state.g.is_none() {
            return Err(DynamicsError::NoGauge);
        }
        if !state.alive {
            return Ok(());
        }
        let jet = self.jet(state);
        self.check_blowup(state, &jet.x);
        if !state.alive {
            return Ok(());
        }
        let g = state.g.as_ref().expect("checked above");
        let (h, ghat, nl) = self.gauge_terms(g, &jet.x);
        let n = if c.is_zero() { self.drift(&jet, ct, None) } else { self.drift(&jet, ct, Some((c, &h))) };
        self.advance(state, &n, noise);
        self.gauge_update(state, ghat, nl);
        Ok(())
    }

    /// Runs `steps` SYMH steps drawing increments from `driver`.
    pub fn run_symh(&self, state: &mut SpdeState, driver: &mut NoiseDriver, ct: &Counterterm, steps: usize) {
        for _ in 0..steps {
            let inc = self.noise_increment(driver, state.step);
            self.step_symh(state, &inc, ct);
        }
    }

    /// Runs `steps` steps recording diagnostics after each.
    pub fn run_with_diagnostics(&self, state: &mut SpdeState, driver: &mut NoiseDriver, ct: &Counterterm, steps: usize) -> Vec<StepDiagnostics> {
        let mut rows = Vec::with_capacity(steps);
        for _ in 0..steps {
            let inc = self.noise_increment(driver, state.step);
            self.step_symh(state, &inc, ct);
            let (sup_norm, energy) = state.field().map_or((f64::NAN, f64::NAN), |f| (f.sup_norm(), 0.5 * f.l2_norm().powi(2)));
            rows.push(StepDiagnostics { step: state.step, t: state.t, sup_norm, energy, alive: state.alive });
        }
        rows
    }

    /// Advances a spectrum by one exponential-Euler step with the given
    /// physical drift and no noise.
    pub(crate) fn advance_spectrum(&self, s: &mut [Vec<C64>], drift: &[Vec<f64>]) {
        let refs: Vec<&[f64]> = drift.iter().map(|c| c.as_slice()).collect();
        let nh = self.sp.forward_real(&refs);
        let mask = self.sp.dealias_mask();
        for (sv, dn) in s.iter_mut().zip(&nh) {
            for k in 0..sv.len() {
                sv[k] = sv[k] * self.prop.decay[k] + dn[k] * (self.prop.phi1[k] * mask[k]);
            }
        }
    }
}

/// Probe used to calibrate the mass counterterm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Probe {
    /// `E(|A_t|²_{L²} − |Ψ_t|²_{L²})` with Ψ driven by the same noise.
    CoupledExcess,
    /// `E|A_t|²_{L²}`.
    MeanSquare,
}

/// Calibration run parameters.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub spec: GroupSpec,
    pub layout: FieldLayout,
    pub lattice: Lattice,
    pub t: f64,
    pub members: usize,
    pub seed: u64,
    pub probe: Probe,
    /// Initial half-width of the bracketing interval for `m`.
    pub bracket: f64,
    pub tolerance: f64,
}

fn probe_value(cal: &Calibration, eps: f64, m: f64) -> Result<f64, DynamicsError> {
    let l = cal.lattice;
    let h = l.h();
    let dt = (h * h / 8.0).min(eps * eps / 4.0);
    let steps = (cal.t / dt).ceil() as usize;
    let dt = cal.t / steps as f64;
    let cfg = IntegratorConfig { dt, eps: Some(eps), non_anticipative: true, blowup: 1e6 };
    let integ = Integrator::new(&cal.spec, cal.layout, l, cfg)?;
    let ct = Counterterm::mass(cal.layout, m, 0.0);
    let na = cal.layout.d * cal.layout.dim_g;
    let mut acc = 0.0;
    for member in 0..cal.members {
        let mut driver = integ.driver(member_seed(cal.seed, member as u64), 1.0)?;
        let zero = LatticeField::zeros(l, cal.layout);
        let mut x = SpdeState::new(&zero, None);
        let mut psi_spec = vec![vec![C64::new(0.0, 0.0); l.len()]; cal.layout.ncomp().div_ceil(2)];
        for _ in 0..steps {
            let inc = integ.noise_increment(&mut driver, x.step);
            integ.step_symh(&mut x, &inc, &ct);
            for (s, dz) in psi_spec.iter_mut().zip(&inc) {
                for k in 0..s.len() {
                    s[k] = s[k] * integ.prop.decay[k] + dz[k];
                }
            }
        }
        let Some(xf) = x.field() else {
            return Ok(f64::INFINITY);
        };
        let vol = h.powi(l.d as i32);
        let a2: f64 = xf.comps[..na].iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>() * vol;
        let value = match cal.probe {
            Probe::MeanSquare => a2,
            Probe::CoupledExcess => {
                let pf = integ.sp.inverse_real(psi_spec, cal.layout.ncomp());
                let p2: f64 = pf[..na].iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>() * vol;
                a2 - p2
            }
        };
        acc += value;
    }
    Ok(acc / cal.members as f64)
}

/// For each ε (largest first) finds the mass `m(ε)` with
/// `probe(ε, m(ε)) = probe(ε₀, 0)` by bracketing and bisection, using the
/// same noise members at every level.
pub fn calibrate_mass_counterterm(cal: &Calibration, eps_ladder: &[f64]) -> Result<CountertermTable, DynamicsError> {
    let mut ladder = eps_ladder.to_vec();
    ladder.sort_by(|a, b| b.total_cmp(a));
    let mut entries = Vec::new();
    let Some(&e0) = ladder.first() else {
        return Ok(CountertermTable { probe: format!("{:?}", cal.probe), entries });
    };
    let target = probe_value(cal, e0, 0.0)?;
    entries.push((e0, 0.0));
    for &eps in &ladder[1..] {
        let f = |m: f64| probe_value(cal, eps, m).map(|v| v - target);
        let f0 = f(0.0)?;
        if f0.abs() <= cal.tolerance * (1.0 + target.abs()) {
            entries.push((eps, 0.0));
            continue;
        }
        // the probe increases with m: search on the side that reduces |f|
        let dir = if f0 > 0.0 { -1.0 } else { 1.0 };
        let (mut lo, mut flo) = (0.0, f0);
        let mut width = cal.bracket;
        let mut hi = dir * width;
        let mut fhi = f(hi)?;
        let mut tries = 0;
        while fhi.signum() == flo.signum() && tries < 12 {
            lo = hi;
            flo = fhi;
            width *= 2.0;
            hi = dir * width;
            fhi = f(hi)?;
            tries += 1;
        }
        if fhi.signum() == flo.signum() || !fhi.is_finite() {
            return Err(DynamicsError::NotBracketed { eps, m_low: lo, low: flo, m_high: hi, high: fhi });
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
            if (hi - lo).abs() < cal.tolerance * (1.0 + hi.abs()) {
                break;
            }
        }
        entries.push((eps, 0.5 * (lo + hi)));
    }
    Ok(CountertermTable { probe: format!("{:?}", cal.probe), entries })
}

/// Sup-norm remainders of the short-time expansion at one recorded time.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PicardRecord {
    pub t: f64,
    /// `|X_t − B₀|_∞`, `|X_t − B₀ − B₁|_∞`, `|X_t − B₀ − B₁ − B₂|_∞`.
    pub remainders: [f64; 3],
    /// `|X_t − X(0) − Ψ_t − 𝒫⋆Q(Ψ,Ψ)_t|_∞`.
    pub short_time: f64,
}

/// Integrates X together with the Picard iterates
/// `B₀ = P X(0) + Ψ`, `B₁ = 𝒫 Q(B₀,B₀)`, `B₂ = 𝒫[Q(B₀,B₁) + Q(B₁,B₀) + K(B₀)]`
/// and `Z = 𝒫 Q(Ψ,Ψ)`, all with the same noise and the same explicit
/// exponential-Euler scheme. Records at the given step counts.
pub fn picard_expansion(integ: &Integrator, x0: &LatticeField, driver: &mut NoiseDriver, record_steps: &[usize]) -> Vec<PicardRecord> {
    let sp = integ.sp.clone();
    let nc = integ.layout().ncomp();
    let kernel = &integ.kernel;
    let ct = Counterterm::zero(integ.layout());
    let mut x = SpdeState::new(x0, None);
    let zero = vec![vec![C64::new(0.0, 0.0); sp.len()]; nc.div_ceil(2)];
    let mut heat = x.spectrum.clone();
    let mut psi = zero.clone();
    let mut b1 = zero.clone();
    let mut b2 = zero.clone();
    let mut z = zero;
    let last = record_steps.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    let add = |a: &[Vec<C64>], b: &[Vec<C64>]| -> Vec<Vec<C64>> { a.iter().zip(b).map(|(p, q)| p.iter().zip(q).map(|(u, v)| u + v).collect()).collect() };
    for step in 0..=last {
        if record_steps.contains(&step) {
            let xf = x.field();
            let phys = |s: &[Vec<C64>]| sp.inverse_real(s.to_vec(), nc);
            let b0 = add(&heat, &psi);
            let s0 = b0.clone();
            let s1 = add(&s0, &b1);
            let s2 = add(&s1, &b2);
            let init = SpdeState::new(x0, None).spectrum;
            let st = add(&add(&init, &psi), &z);
            let sup_diff = |p: &[Vec<f64>], q: &[Vec<f64>]| -> f64 {
                let len = p[0].len();
                (0..len).map(|i| p.iter().zip(q).map(|(a, b)| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()).fold(0.0, f64::max)
            };
            let (rem, short) = match &xf {
                Some(f) => (
                    [sup_diff(&f.comps, &phys(&s0)), sup_diff(&f.comps, &phys(&s1)), sup_diff(&f.comps, &phys(&s2))],
                    sup_diff(&f.comps, &phys(&st)),
                ),
                None => ([f64::INFINITY; 3], f64::INFINITY),
            };
            out.push(PicardRecord { t: step as f64 * integ.cfg.dt, remainders: rem, short_time: short });
        }
        if step == last {
            break;
        }
        let inc = integ.noise_increment(driver, x.step);
        let b0 = add(&heat, &psi);
        let jb0 = Jet::from_spectrum(&sp, &b0, nc, true);
        let jb1 = Jet::from_spectrum(&sp, &b1, nc, true);
        let jpsi = Jet::from_spectrum(&sp, &psi, nc, true);
        let q00 = kernel.evaluate(&jb0.x, &jb0.dx, true, false);
        let mut n2 = kernel.evaluate(&jb0.x, &jb1.dx, true, true);
        // the cubic flag above adds K(B₀) through B₀'s values
        let q10 = kernel.evaluate(&jb1.x, &jb0.dx, true, false);
        for (a, b) in n2.iter_mut().zip(&q10) {
            for (u, v) in a.iter_mut().zip(b) {
                *u += v;
            }
        }
        let qpp = kernel.evaluate(&jpsi.x, &jpsi.dx, true, false);
        integ.step_symh(&mut x, &inc, &ct);
        for s in heat.iter_mut() {
            for (v, e) in s.iter_mut().zip(&integ.prop.decay) {
                *v *= e;
            }
        }
        for (s, dz) in psi.iter_mut().zip(&inc) {
            for k in 0..s.len() {
                s[k] = s[k] * integ.prop.decay[k] + dz[k];
            }
        }
        integ.advance_spectrum(&mut b1, &q00);
        integ.advance_spectrum(&mut b2, &n2);
        integ.advance_spectrum(&mut z, &qpp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie_core::{su2_pauli_half, GroupElement};
    use crate::noise::solve_she;
    use crate::noise::NoiseSlab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn smooth_field(l: Lattice, layout: FieldLayout, amp: f64) -> LatticeField {
        LatticeField::from_fn(l, layout, |p, o| {
            for (c, v) in o.iter_mut().enumerate() {
                let k = (c % 3 + 1) as f64;
                *v = amp * ((2.0 * PI * (p[0] + k * p[1])).sin() + 0.5 * (2.0 * PI * (p[1] - p[2] * k)).cos());
            }
        })
    }

    #[test]
    fn zero_data_without_noise_stays_zero() {
        let l = Lattice::new(3, 8).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 3);
        let integ = Integrator::new(&spec, layout, l, IntegratorConfig::for_lattice(l)).unwrap();
        let mut s = SpdeState::new(&LatticeField::zeros(l, layout), None);
        let zero = vec![vec![C64::new(0.0, 0.0); l.len()]; 5];
        for _ in 0..10 {
            integ.step_symh(&mut s, &zero, &Counterterm::zero(layout));
        }
        assert_eq!(s.field().unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn abelian_trajectory_equals_mollified_she() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::u1();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let cfg = IntegratorConfig::for_lattice(l);
        let integ = Integrator::new(&spec, layout, l, cfg).unwrap();
        let mut driver = integ.driver(11, 1.0).unwrap();
        let mut s = SpdeState::new(&LatticeField::zeros(l, layout), None);
        integ.run_symh(&mut s, &mut driver, &Counterterm::zero(layout), 20);
        let slab = NoiseSlab { seed: 11, lattice: l, dt: cfg.dt, first: 0, slices: vec![Vec::new(); 20] };
        let she = solve_she(&slab, layout, cfg.mollifier()).unwrap();
        assert!(s.field().unwrap().max_abs_diff(&she.states[20]) < 1e-9);
    }

    #[test]
    fn deterministic_forcing_converges_at_first_order() {
        let l = Lattice::new(2, 8).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let x0 = smooth_field(l, layout, 0.3);
        let horizon = 1.0 / 256.0;
        let run = |steps: usize| -> LatticeField {
            let cfg = IntegratorConfig { dt: horizon / steps as f64, eps: None, non_anticipative: true, blowup: 1e6 };
            let integ = Integrator::new(&spec, layout, l, cfg).unwrap();
            let mut s = SpdeState::new(&x0, None);
            for k in 0..steps {
                let t = k as f64 * cfg.dt;
                let f = LatticeField::from_fn(l, layout, |p, o| {
                    for (c, v) in o.iter_mut().enumerate() {
                        *v = (1.0 + 40.0 * t) * (2.0 * PI * (p[0] - c as f64 * p[1])).cos();
                    }
                });
                let refs: Vec<&[f64]> = f.comps.iter().map(|c| c.as_slice()).collect();
                let mut inc = integ.sp.forward_real(&refs);
                for z in inc.iter_mut() {
                    for (v, p) in z.iter_mut().zip(&integ.prop.phi1) {
                        *v *= p;
                    }
                }
                integ.step_symh(&mut s, &inc, &Counterterm::zero(layout));
            }
            s.field().unwrap()
        };
        let reference = run(2048);
        let errs: Vec<f64> = [16, 32, 64].iter().map(|&m| run(m).max_abs_diff(&reference)).collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..2.4).contains(&ratio), "ratio {ratio} from {errs:?}");
        }
    }

    #[test]
    fn cemetery_is_absorbing() {
        let l = Lattice::new(2, 8).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let mut cfg = IntegratorConfig::for_lattice(l);
        cfg.blowup = 1.0;
        let integ = Integrator::new(&spec, layout, l, cfg).unwrap();
        let mut s = SpdeState::new(&smooth_field(l, layout, 5.0), None);
        let zero = vec![vec![C64::new(0.0, 0.0); l.len()]; 2];
        integ.step_symh(&mut s, &zero, &Counterterm::zero(layout));
        assert!(!s.alive && s.field().is_none());
        let t = s.t;
        integ.step_symh(&mut s, &zero, &Counterterm::zero(layout));
        assert!(!s.alive && s.t == t);
    }

    #[test]
    fn future_noise_does_not_affect_past() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::new(&spec, 2);
        let integ = Integrator::new(&spec, layout, l, IntegratorConfig::for_lattice(l)).unwrap();
        let run = |cutoff: Option<i64>| {
            let mut d = integ.driver(5, 1.0).unwrap();
            d.stream.cutoff = cutoff;
            let mut s = SpdeState::new(&LatticeField::zeros(l, layout), None);
            integ.run_symh(&mut s, &mut d, &Counterterm::zero(layout), 12);
            s.field().unwrap()
        };
        let full = run(None);
        let cut = run(Some(12));
        assert_eq!(full.comps, cut.comps);
        // step i reads slices strictly before i
        assert_eq!(full.comps, run(Some(11)).comps);
        assert_ne!(full.comps, run(Some(10)).comps);
    }

    #[test]
    fn gauge_flow_keeps_constant_and_unitary() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let integ = Integrator::new(&spec, layout, l, IntegratorConfig::for_lattice(l)).unwrap();
        let g0 = spec.exp_coords(&[0.3, -0.2, 0.9]);
        let mut s = SpdeState::new(&LatticeField::zeros(l, layout), Some(GaugeTransformField::from_fn(l, 2, |_| g0.clone())));
        let a = vec![vec![0.0; l.len()]; 6];
        for _ in 0..5 {
            integ.step_gauge_flow(&mut s, &a).unwrap();
        }
        let g = s.g.as_ref().unwrap();
        for idx in [0, 17, 100] {
            assert!((&g.at(idx).mat - &g0.mat).norm() < 1e-12);
        }

        let gf = GaugeTransformField::from_fn(l, 2, |p| {
            spec.exp_coords(&[(2.0 * PI * p[0]).sin(), 0.5 * (2.0 * PI * p[1]).cos(), 0.3 * (2.0 * PI * (p[0] + p[1])).sin()])
        });
        let mut s = SpdeState::new(&smooth_field(l, layout, 0.5), Some(gf));
        let a = s.field().unwrap().comps;
        for _ in 0..100 {
            integ.step_gauge_flow(&mut s, &a).unwrap();
        }
        assert!(s.alive);
        assert!(s.g.as_ref().unwrap().unitarity_defect() < 1e-8);
        let g = s.g.as_ref().unwrap();
        for idx in 0..l.len() {
            assert!((g.at(idx).mat.determinant() - C64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn scalar_gauge_flow_matches_step_halving() {
        // g = exp(φ T) with A = 0: the commuting flow reduces to ∂_tφ = Δφ
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let t = su2_pauli_half(2).mat;
        let phi = |p: [f64; 3]| 0.8 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos();
        let horizon = 1.0 / 512.0;
        let run = |steps: usize| {
            let cfg = IntegratorConfig { dt: horizon / steps as f64, eps: None, non_anticipative: true, blowup: 1e6 };
            let integ = Integrator::new(&spec, layout, l, cfg).unwrap();
            let g = GaugeTransformField::from_fn(l, 2, |p| GroupElement { mat: (&t * C64::new(phi(p), 0.0)).exp() });
            let mut s = SpdeState::new(&LatticeField::zeros(l, layout), Some(g));
            let a = vec![vec![0.0; l.len()]; 6];
            for _ in 0..steps {
                integ.step_gauge_flow(&mut s, &a).unwrap();
            }
            s.g.unwrap()
        };
        let coarse = run(8);
        let fine = run(16);
        let ref_g = GaugeTransformField::from_fn(l, 2, |p| {
            // exact heat evolution of the single mode φ
            let decay = (-8.0 * PI * PI * horizon).exp();
            GroupElement { mat: (&t * C64::new(decay * phi(p), 0.0)).exp() }
        });
        let diff = |a: &GaugeTransformField, b: &GaugeTransformField| {
            (0..l.len()).map(|i| (&a.at(i).mat - &b.at(i).mat).norm()).fold(0.0, f64::max)
        };
        let ratio = diff(&coarse, &ref_g) / diff(&fine, &ref_g);
        assert!((1.8..2.2).contains(&ratio), "{ratio}");
        assert!(diff(&run(256), &ref_g) < 1e-6);
    }

    #[test]
    fn zero_perturbation_is_bitwise_identical() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::new(&spec, 2);
        let integ = Integrator::new(&spec, layout, l, IntegratorConfig::for_lattice(l)).unwrap();
        let x0 = smooth_field(l, layout, 0.2);
        let g = GaugeTransformField::from_fn(l, 2, |p| spec.exp_coords(&[(2.0 * PI * p[1]).sin(), 0.0, 0.0]));
        let mut a = SpdeState::new(&x0, None);
        let mut b = SpdeState::new(&x0, Some(g));
        let mut d = integ.driver(3, 1.0).unwrap();
        let c = BlockOperator::zero(2, 3);
        let ct = Counterterm::zero(layout);
        for _ in 0..10 {
            let inc = integ.noise_increment(&mut d, a.step);
            integ.step_symh(&mut a, &inc, &ct);
            integ.step_perturbed(&mut b, &inc, &ct, &c).unwrap();
        }
        assert_eq!(a.spectrum, b.spectrum);
    }

    #[test]
    fn constant_gauge_gives_small_perturbation() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let integ = Integrator::new(&spec, layout, l, IntegratorConfig::for_lattice(l)).unwrap();
        let x0 = smooth_field(l, layout, 0.01);
        let g0 = spec.exp_coords(&[0.4, 0.1, -0.3]);
        let mut a = SpdeState::new(&x0, None);
        let mut b = SpdeState::new(&x0, Some(GaugeTransformField::from_fn(l, 2, |_| g0.clone())));
        let c = BlockOperator::identity(2, 3, 1.0);
        let ct = Counterterm::zero(layout);
        let zero = vec![vec![C64::new(0.0, 0.0); l.len()]; 3];
        for _ in 0..20 {
            integ.step_symh(&mut a, &zero, &ct);
            integ.step_perturbed(&mut b, &zero, &ct, &c).unwrap();
        }
        assert!(a.field().unwrap().max_abs_diff(&b.field().unwrap()) < 1e-6);
    }

    #[test]
    fn counterterm_linearity_and_equivariance() {
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ct = Counterterm::mass(layout, 2.5, 0.0);
        assert!(ct.linearity_defect(&mut rng, 10) < 1e-12);
        assert!(ct.equivariance_defect(&spec, &mut rng, 10) < 1e-9);
        let mut skew = BlockOperator::zero(3, 3);
        skew.mat[(0, 1)] = 1.0;
        let ct = Counterterm { c_a: skew, c_phi: DMatrix::zeros(0, 0) };
        assert!(ct.equivariance_defect(&spec, &mut rng, 10) > 1e-3);
    }

    #[test]
    fn table_interpolates_in_log_eps() {
        let t = CountertermTable { probe: "x".into(), entries: vec![(0.4, 0.0), (0.1, 2.0)] };
        assert!((t.mass_at(0.2) - 1.0).abs() < 1e-12);
        assert_eq!(t.mass_at(1.0), 0.0);
        assert_eq!(t.mass_at(0.01), 2.0);
    }

    #[test]
    fn abelian_calibration_returns_zero() {
        let l = Lattice::new(2, 8).unwrap();
        let spec = GroupSpec::u1();
        let cal = Calibration {
            spec: spec.clone(),
            layout: FieldLayout::gauge_only(&spec, 2),
            lattice: l,
            t: 0.02,
            members: 4,
            seed: 2,
            probe: Probe::CoupledExcess,
            bracket: 1.0,
            tolerance: 1e-9,
        };
        let table = calibrate_mass_counterterm(&cal, &[4.0 * l.h(), 2.0 * l.h()]).unwrap();
        assert!(table.entries.iter().all(|(_, m)| m.abs() < 1e-6), "{table:?}");
    }

    #[test]
    fn picard_remainders_improve_with_order() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let integ = Integrator::new(&spec, layout, l, IntegratorConfig::for_lattice(l)).unwrap();
        let x0 = smooth_field(l, layout, 0.5);
        let mut d = integ.driver(9, 1.0).unwrap();
        let rec = picard_expansion(&integ, &x0, &mut d, &[0, 8, 16]);
        assert_eq!(rec[0].remainders, [0.0; 3]);
        let r = rec[2].remainders;
        assert!(r[1] < r[0] && r[2] < r[1], "{r:?}");
        assert!(rec[1].short_time < rec[2].short_time);
    }
}

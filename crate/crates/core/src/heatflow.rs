//! DeTurck–Yang–Mills heat flow `∂_sA_i = ΔA_i + [A_j, 2∂_jA_i − ∂_iA_j + [A_j,A_i]]`
//! with blow-up detection, and its quadratic and linear-response expansions.

use crate::drift::Jet;
use crate::dynamics::{Counterterm, Integrator, IntegratorConfig, SpdeState};
use crate::lattice_field::{FieldLayout, LatticeField, Spectral};
use crate::lie_core::{GroupSpec, C64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("flow time {s} exceeds s_max = {s_max}")]
    TooLong { s: f64, s_max: f64 },
    #[error("flow reached the cemetery at s = {0}")]
    Cemetery(f64),
    #[error("step fraction must be positive, got {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    /// Upper bound on the flow time accepted by the expansions.
    pub s_max: f64,
    pub blowup: f64,
    /// Step is `min(h2_fraction·h², s/min_steps)`.
    pub h2_fraction: f64,
    pub min_steps: usize,
    /// Optional further cap on the step.
    pub max_step: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { s_max: 0.25, blowup: 1e6, h2_fraction: 0.125, min_steps: 16, max_step: None }
    }
}

/// Outcome of a flow run; `field` is `None` in the cemetery.
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub s: f64,
    pub field: Option<LatticeField>,
    /// Largest `|ℱ_r a|_∞` and `|∂ℱ_r a|_∞` seen over the run.
    pub max_sup: f64,
    pub max_grad_sup: f64,
    /// Flow time at which the threshold was exceeded.
    pub blowup_time: Option<f64>,
}

impl FlowResult {
    pub fn is_cemetery(&self) -> bool {
        self.field.is_none()
    }
}

fn step_count(a: &LatticeField, s: f64, cfg: &FlowConfig) -> usize {
    let h = a.lattice.h();
    let mut ds = (cfg.h2_fraction * h * h).min(s / cfg.min_steps.max(1) as f64);
    if let Some(m) = cfg.max_step {
        ds = ds.min(m);
    }
    (s / ds).ceil().max(1.0) as usize
}

fn site_sup<'a>(comps: impl IntoIterator<Item = &'a Vec<f64>>) -> f64 {
    let mut acc: Vec<f64> = Vec::new();
    for c in comps {
        if acc.is_empty() {
            acc = c.iter().map(|v| v * v).collect();
        } else {
            for (a, v) in acc.iter_mut().zip(c) {
                *a += v * v;
            }
        }
    }
    acc.into_iter().fold(0.0, f64::max).sqrt()
}

/// `ℱ_s a` by exponential Euler with `⌈s/Δs⌉` steps. Any Higgs component of
/// `a` is dropped.
pub fn ym_flow(spec: &GroupSpec, a: &LatticeField, s: f64, cfg: &FlowConfig) -> Result<FlowResult, FlowError> {
    if s < 0.0 {
        return Err(FlowError::NegativeTime(s));
    }
    if !(cfg.h2_fraction > 0.0) {
        return Err(FlowError::BadStep(cfg.h2_fraction));
    }
    let a = if a.layout.dim_v > 0 { a.gauge_part() } else { a.clone() };
    if s == 0.0 {
        let sup = a.sup_norm();
        let grad = site_sup(Jet::from_field(&Spectral::cached(a.lattice), &a, false).dx.iter().flatten());
        return Ok(FlowResult { s, field: Some(a), max_sup: sup, max_grad_sup: grad, blowup_time: None });
    }
    let steps = step_count(&a, s, cfg);
    let icfg = IntegratorConfig { dt: s / steps as f64, eps: None, non_anticipative: true, blowup: cfg.blowup };
    let integ = Integrator::unchecked(spec, a.layout, a.lattice, icfg);
    let ct = Counterterm::zero(a.layout);
    let mut state = SpdeState::new(&a, None);
    let mut max_sup: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for _ in 0..steps {
        let jet = integ.jet(&state);
        max_sup = max_sup.max(site_sup(&jet.x));
        max_grad = max_grad.max(site_sup(jet.dx.iter().flatten()));
        integ.check_blowup(&mut state, &jet.x);
        if !state.alive {
            return Ok(FlowResult { s, field: None, max_sup, max_grad_sup: max_grad, blowup_time: Some(state.t) });
        }
        let n = integ.drift(&jet, &ct, None);
        integ.advance_spectrum(&mut state.spectrum, &n);
        state.t += icfg.dt;
    }
    let field = state.field().expect("alive");
    if !field.is_finite() || field.sup_norm() > cfg.blowup {
        return Ok(FlowResult { s, field: None, max_sup, max_grad_sup: max_grad, blowup_time: Some(s) });
    }
    let jet = Jet::from_field(&integ.sp, &field, false);
    max_sup = max_sup.max(site_sup(&jet.x));
    max_grad = max_grad.max(site_sup(jet.dx.iter().flatten()));
    Ok(FlowResult { s, field: Some(field), max_sup, max_grad_sup: max_grad, blowup_time: None })
}

/// `P_s a + ∫₀ˢ P_{s−r} 𝒩ᶜ(P_r a) dr` and the measured remainder.
#[derive(Debug, Clone)]
pub struct QuadraticApprox {
    pub approx: LatticeField,
    /// `|ℱ_s a − approx|_∞`.
    pub remainder: f64,
    /// `|ℱ_s a − P_s a|_∞`.
    pub linear_defect: f64,
}

/// Quadratic expansion of the flow. The integral is evaluated with `F(r) =
/// 𝒩ᶜ(P_r a)` linearly interpolated on `nodes` subintervals and integrated
/// exactly against the heat factor.
pub fn flow_quadratic_approx(spec: &GroupSpec, a: &LatticeField, s: f64, cfg: &FlowConfig) -> Result<QuadraticApprox, FlowError> {
    if s > cfg.s_max {
        return Err(FlowError::TooLong { s, s_max: cfg.s_max });
    }
    let a = if a.layout.dim_v > 0 { a.gauge_part() } else { a.clone() };
    let sp = Spectral::cached(a.lattice);
    let layout = a.layout;
    let nc = layout.ncomp();
    let kernel = crate::drift::DriftKernel::new(spec, layout);
    let refs: Vec<&[f64]> = a.comps.iter().map(|c| c.as_slice()).collect();
    let ahat = sp.forward_real(&refs);
    let nodes = 64;
    let dr = s / nodes as f64;
    let ksq = sp.ksq();
    let f_at = |r: f64| -> Vec<Vec<C64>> {
        let pr: Vec<Vec<C64>> = ahat
            .iter()
            .map(|z| z.iter().zip(ksq).map(|(v, q)| v * (-q * r).exp()).collect())
            .collect();
        let jet = Jet::from_spectrum(&sp, &pr, nc, true);
        let q = kernel.evaluate(&jet.x, &jet.dx, true, false);
        let qr: Vec<&[f64]> = q.iter().map(|c| c.as_slice()).collect();
        let mut out = sp.forward_real(&qr);
        for z in out.iter_mut() {
            sp.apply_mask(z);
        }
        out
    };
    let mut acc: Vec<Vec<C64>> = ahat.iter().map(|z| z.iter().zip(ksq).map(|(v, q)| v * (-q * s).exp()).collect()).collect();
    let mut f_lo = f_at(0.0);
    for m in 0..nodes {
        let r0 = m as f64 * dr;
        let f_hi = f_at(r0 + dr);
        for ((out, lo), hi) in acc.iter_mut().zip(&f_lo).zip(&f_hi) {
            for k in 0..out.len() {
                // ∫_{r0}^{r0+dr} e^{−λ(s−r)} [lo + (hi−lo)(r−r0)/dr] dr
                let lam = ksq[k];
                let (w0, w1) = linear_weights(lam, s - r0 - dr, dr);
                out[k] += lo[k] * w0 + hi[k] * w1;
            }
        }
        f_lo = f_hi;
    }
    let approx = LatticeField { lattice: a.lattice, layout, comps: sp.inverse_real(acc, nc) };
    let flow = ym_flow(spec, &a, s, cfg)?;
    let f = flow.field.ok_or(FlowError::Cemetery(s))?;
    let heat = crate::lattice_field::heat_semigroup(&a, s).expect("s is nonnegative");
    Ok(QuadraticApprox { remainder: f.max_abs_diff(&approx), linear_defect: f.max_abs_diff(&heat), approx })
}

/// Weights `(w0, w1)` with `∫₀^{dr} e^{−λ(τ + u')}·[(1 − u/dr), u/dr] du`
/// where `u' = dr − u` and `τ` is the distance from the interval's right end
/// to `s`.
fn linear_weights(lam: f64, tau: f64, dr: f64) -> (f64, f64) {
    let z = lam * dr;
    let scale = (-lam * tau).exp();
    if z < 1e-6 {
        // series in z
        let w0 = dr * (0.5 - z / 3.0 + z * z / 8.0);
        let w1 = dr * (0.5 - z / 6.0 + z * z / 24.0);
        return (scale * w0, scale * w1);
    }
    let e = (-z).exp();
    // ∫₀¹ e^{−z(1−v)}(1−v) dv and ∫₀¹ e^{−z(1−v)} v dv
    let w1 = (1.0 - (1.0 - e) / z) / z;
    let w0 = ((1.0 - e) / z - e) / z;
    (scale * dr * w0, scale * dr * w1)
}

/// `ℱ_s(a + r) − ℱ_s a − P_s r` with its sup norm and the sup norm of its
/// component orthogonal to `[𝔤, 𝔤]`.
#[derive(Debug, Clone)]
pub struct LinearResponse {
    pub difference: LatticeField,
    pub sup: f64,
    pub non_derived_residual: f64,
}

pub fn flow_linear_response(spec: &GroupSpec, a: &LatticeField, r: &LatticeField, s: f64, cfg: &FlowConfig) -> Result<LinearResponse, FlowError> {
    let a = if a.layout.dim_v > 0 { a.gauge_part() } else { a.clone() };
    let r = if r.layout.dim_v > 0 { r.gauge_part() } else { r.clone() };
    let fa = ym_flow(spec, &a, s, cfg)?.field.ok_or(FlowError::Cemetery(s))?;
    let far = ym_flow(spec, &a.axpy(1.0, &r), s, cfg)?.field.ok_or(FlowError::Cemetery(s))?;
    let pr = crate::lattice_field::heat_semigroup(&r, s).expect("s is nonnegative");
    let difference = far.sub(&fa).sub(&pr);
    let residual = non_derived_part(spec, &difference);
    Ok(LinearResponse { sup: difference.sup_norm(), non_derived_residual: residual, difference })
}

/// Sup over sites of the norm of the component orthogonal to `[𝔤, 𝔤]`.
pub fn non_derived_part(spec: &GroupSpec, f: &LatticeField) -> f64 {
    let l: FieldLayout = f.layout;
    let mut worst: f64 = 0.0;
    for idx in 0..f.lattice.len() {
        let v = f.value_at(idx);
        let mut s = 0.0;
        for i in 0..l.d {
            let x = &v[i * l.dim_g..(i + 1) * l.dim_g];
            let p = spec.project_derived_coords(x);
            s += x.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        worst = worst.max(s.sqrt());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_field::{heat_semigroup, Lattice};
    use crate::lie_core::{GroupKind, Representation};
    use std::f64::consts::PI;

    fn smooth(l: Lattice, layout: FieldLayout, amp: f64) -> LatticeField {
        LatticeField::from_fn(l, layout, |p, o| {
            for (c, v) in o.iter_mut().enumerate() {
                let k = (c % 3 + 1) as f64;
                *v = amp * ((2.0 * PI * (p[0] + k * p[1])).sin() + 0.5 * (2.0 * PI * (k * p[0] - p[1])).cos());
            }
        })
    }

    #[test]
    fn abelian_flow_is_heat_semigroup() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::u1();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = smooth(l, layout, 1.0);
        let f = ym_flow(&spec, &a, 0.01, &FlowConfig::default()).unwrap().field.unwrap();
        assert!(f.max_abs_diff(&heat_semigroup(&a, 0.01).unwrap()) < 1e-10);
    }

    #[test]
    fn zero_is_fixed_and_zero_time_is_identity() {
        let l = Lattice::new(2, 8).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let z = LatticeField::zeros(l, layout);
        assert_eq!(ym_flow(&spec, &z, 0.05, &FlowConfig::default()).unwrap().field.unwrap().sup_norm(), 0.0);
        let a = smooth(l, layout, 0.7);
        assert_eq!(ym_flow(&spec, &a, 0.0, &FlowConfig::default()).unwrap().field.unwrap().comps, a.comps);
    }

    #[test]
    fn semigroup_property_with_common_step() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = smooth(l, layout, 0.8);
        let h2 = l.h() * l.h() / 8.0;
        let cfg = FlowConfig { max_step: Some(h2), ..FlowConfig::default() };
        let (s1, s2) = (64.0 * h2, 128.0 * h2);
        let two = ym_flow(&spec, &ym_flow(&spec, &a, s1, &cfg).unwrap().field.unwrap(), s2, &cfg).unwrap();
        let one = ym_flow(&spec, &a, s1 + s2, &cfg).unwrap();
        assert!(two.field.unwrap().max_abs_diff(&one.field.unwrap()) < 1e-7);
    }

    #[test]
    fn blowup_goes_to_cemetery() {
        let l = Lattice::new(2, 8).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = smooth(l, layout, 3.0);
        let r = ym_flow(&spec, &a, 0.01, &FlowConfig { blowup: 1.0, ..FlowConfig::default() }).unwrap();
        assert!(r.is_cemetery() && r.blowup_time.is_some());
    }

    #[test]
    fn quadratic_approx_abelian_and_scaling() {
        let l = Lattice::new(2, 16).unwrap();
        let u1 = GroupSpec::u1();
        let layout = FieldLayout::gauge_only(&u1, 2);
        let q = flow_quadratic_approx(&u1, &smooth(l, layout, 1.0), 0.01, &FlowConfig::default()).unwrap();
        assert!(q.remainder < 1e-9);

        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = smooth(l, layout, 1.0);
        let s = 0.004;
        let quad = |lam: f64| {
            let al = a.scale(lam);
            let q = flow_quadratic_approx(&spec, &al, s, &FlowConfig::default()).unwrap();
            q.approx.sub(&heat_semigroup(&al, s).unwrap()).sup_norm()
        };
        let base = quad(1.0);
        for lam in [0.5, 0.25] {
            assert!((quad(lam) / (lam * lam * base) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn quadratic_remainder_beats_linear_defect() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = smooth(l, layout, 1.0);
        let cfg = FlowConfig::default();
        let q1 = flow_quadratic_approx(&spec, &a, 1.0 / 256.0, &cfg).unwrap();
        let q2 = flow_quadratic_approx(&spec, &a, 1.0 / 1024.0, &cfg).unwrap();
        let lin = (q1.linear_defect / q2.linear_defect).log(4.0);
        let rem = (q1.remainder / q2.remainder).log(4.0);
        assert!(rem > lin + 0.3, "{rem} vs {lin}");
    }

    #[test]
    fn linear_response_vanishes_for_zero_and_abelian() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::su2();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = smooth(l, layout, 0.5);
        let zero = LatticeField::zeros(l, layout);
        let lr = flow_linear_response(&spec, &a, &zero, 0.01, &FlowConfig::default()).unwrap();
        assert_eq!(lr.sup, 0.0);
        let u1 = GroupSpec::u1();
        let lay1 = FieldLayout::gauge_only(&u1, 2);
        let lr = flow_linear_response(&u1, &smooth(l, lay1, 1.0), &smooth(l, lay1, 0.3).scale(-1.0), 0.01, &FlowConfig::default()).unwrap();
        assert!(lr.sup < 1e-9);
    }

    #[test]
    fn linear_response_lives_in_derived_algebra() {
        let l = Lattice::new(2, 16).unwrap();
        let spec = GroupSpec::new(GroupKind::U, 2, Representation::Trivial).unwrap();
        let layout = FieldLayout::gauge_only(&spec, 2);
        let a = smooth(l, layout, 0.6);
        let r = LatticeField::from_fn(l, layout, |p, o| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = 0.2 * (2.0 * PI * (c as f64 * p[0] + 2.0 * p[1])).cos();
            }
        });
        let lr = flow_linear_response(&spec, &a, &r, 0.01, &FlowConfig::default()).unwrap();
        assert!(lr.sup > 1e-4);
        assert!(lr.non_derived_residual < 1e-8);
    }
}

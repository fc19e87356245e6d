//! Pointwise nonlinearities of the Yang–Mills–Higgs drift in algebra
//! coordinates, and their grid-level evaluation.
//!
//! The drift splits as `Q(X, X) + K(X)` where the quadratic part `Q(X, Y)`
//! carries one derivative on `Y`:
//!
//! * A-part: `[A^X_j, 2∂_jA^Y_i − ∂_iA^Y_j] − B(∂_iΦ^Y ⊗ Φ^X)`
//! * Φ-part: `2A^X_j ∂_jΦ^Y`
//!
//! and the cubic part `K` is `[A_j,[A_j,A_i]] − B(A_iΦ ⊗ Φ)` and
//! `A_j²Φ − |Φ|²Φ`.

use crate::lattice_field::{FieldLayout, LatticeField, Spectral};
use crate::lie_core::{GroupSpec, C64};

/// Physical values and first derivatives of a field.
#[derive(Debug, Clone)]
pub struct Jet {
    pub x: Vec<Vec<f64>>,
    /// `dx[j][c]` is `∂_j` of component `c`.
    pub dx: Vec<Vec<Vec<f64>>>,
}

impl Jet {
    /// Derivatives from a packed spectrum; the dealiasing mask is applied to
    /// the spectrum first and the returned values are those of the masked
    /// field.
    pub fn from_spectrum(sp: &Spectral, packed: &[Vec<C64>], ncomp: usize, dealias: bool) -> Self {
        let d = sp.lattice.d;
        let base: Vec<Vec<C64>> = packed
            .iter()
            .map(|z| {
                let mut z = z.clone();
                if dealias {
                    sp.apply_mask(&mut z);
                }
                z
            })
            .collect();
        let dx = (0..d)
            .map(|j| {
                let p: Vec<Vec<C64>> = base.iter().map(|z| sp.derivative(z, j)).collect();
                sp.inverse_real(p, ncomp)
            })
            .collect();
        let x = sp.inverse_real(base, ncomp);
        Self { x, dx }
    }

    pub fn from_field(sp: &Spectral, f: &LatticeField, dealias: bool) -> Self {
        let refs: Vec<&[f64]> = f.comps.iter().map(|c| c.as_slice()).collect();
        let packed = sp.forward_real(&refs);
        Self::from_spectrum(sp, &packed, f.ncomp(), dealias)
    }
}

/// `out += w·a·b` elementwise.
#[inline]
fn fma(out: &mut [f64], w: f64, a: &[f64], b: &[f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o += w * x * y;
    }
}

/// Evaluator of the drift terms for one group and layout.
#[derive(Debug, Clone)]
pub struct DriftKernel {
    pub spec: GroupSpec,
    pub layout: FieldLayout,
}

impl DriftKernel {
    pub fn new(spec: &GroupSpec, layout: FieldLayout) -> Self {
        Self { spec: spec.clone(), layout }
    }

    /// `Q(x, y)` at one site; `dy[j * ncomp + c]` holds `∂_j y_c`.
    pub fn quadratic_site(&self, x: &[f64], dy: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        let l = self.layout;
        let (d, dg, dv, nc) = (l.d, l.dim_g, l.dim_v, l.ncomp());
        let spec = &self.spec;
        let phi_x = &x[d * dg..];
        for i in 0..d {
            let oi = &mut out[i * dg..(i + 1) * dg];
            for j in 0..d {
                let aj = &x[j * dg..(j + 1) * dg];
                // 2∂_jA_i − ∂_iA_j
                for a in 0..dg {
                    tmp[a] = 2.0 * dy[j * nc + i * dg + a] - dy[i * nc + j * dg + a];
                }
                spec.bracket_acc(aj, &tmp[..dg], 1.0, oi);
            }
            if dv > 0 {
                let dphi_i = &dy[i * nc + d * dg..i * nc + nc];
                spec.coupling_acc(dphi_i, phi_x, -1.0, oi);
            }
        }
        if dv > 0 {
            let (_, op) = out.split_at_mut(d * dg);
            for j in 0..d {
                let aj = &x[j * dg..(j + 1) * dg];
                let dphi_j = &dy[j * nc + d * dg..j * nc + nc];
                spec.act_acc(aj, dphi_j, 2.0, op);
            }
        }
    }

    /// Cubic part `K(x)` at one site.
    pub fn cubic_site(&self, x: &[f64], out: &mut [f64], tmp: &mut [f64], w: &mut [f64]) {
        let l = self.layout;
        let (d, dg, dv) = (l.d, l.dim_g, l.dim_v);
        let spec = &self.spec;
        let phi = &x[d * dg..];
        for i in 0..d {
            let ai = &x[i * dg..(i + 1) * dg];
            for j in 0..d {
                if i == j {
                    continue;
                }
                let aj = &x[j * dg..(j + 1) * dg];
                tmp[..dg].iter_mut().for_each(|v| *v = 0.0);
                spec.bracket_acc(aj, ai, 1.0, &mut tmp[..dg]);
                spec.bracket_acc(aj, &tmp[..dg], 1.0, &mut out[i * dg..(i + 1) * dg]);
            }
            if dv > 0 {
                w[..dv].iter_mut().for_each(|v| *v = 0.0);
                spec.act_acc(ai, phi, 1.0, &mut w[..dv]);
                spec.coupling_acc(&w[..dv], phi, -1.0, &mut out[i * dg..(i + 1) * dg]);
            }
        }
        if dv > 0 {
            let norm2: f64 = phi.iter().map(|v| v * v).sum();
            let (_, op) = out.split_at_mut(d * dg);
            for j in 0..d {
                let aj = &x[j * dg..(j + 1) * dg];
                w[..dv].iter_mut().for_each(|v| *v = 0.0);
                spec.act_acc(aj, phi, 1.0, &mut w[..dv]);
                spec.act_acc(aj, &w[..dv], 1.0, op);
            }
            for (o, p) in op.iter_mut().zip(phi) {
                *o -= norm2 * p;
            }
        }
    }

    /// Grid evaluation of `Q(X, Y) + [cubic] K(X)` where `x` holds values of X
    /// and `dy` the derivatives of Y. Works on whole arrays, one structure
    /// constant at a time.
    pub fn evaluate(&self, x: &[Vec<f64>], dy: &[Vec<Vec<f64>>], quadratic: bool, cubic: bool) -> Vec<Vec<f64>> {
        let l = self.layout;
        let (d, dg, dv, nc) = (l.d, l.dim_g, l.dim_v, l.ncomp());
        let len = x.first().map_or(0, |c| c.len());
        let mut out = vec![vec![0.0; len]; nc];
        let structure = self.spec.structure_constants();
        let higgs: &[(usize, usize, usize, f64)] = if dv > 0 { self.spec.higgs_entries() } else { &[] };
        let na = d * dg;
        if quadratic {
            let mut tmp = vec![vec![0.0; len]; dg];
            for i in 0..d {
                for j in 0..d {
                    // 2∂_jA_i − ∂_iA_j
                    for (a, t) in tmp.iter_mut().enumerate() {
                        for ((v, p), q) in t.iter_mut().zip(&dy[j][i * dg + a]).zip(&dy[i][j * dg + a]) {
                            *v = 2.0 * p - q;
                        }
                    }
                    for &(a, b, c, f) in structure {
                        fma(&mut out[i * dg + c], f, &x[j * dg + a], &tmp[b]);
                    }
                }
                for &(a, p, q, r) in higgs {
                    fma(&mut out[i * dg + a], -r, &dy[i][na + p], &x[na + q]);
                }
            }
            for j in 0..d {
                for &(a, p, q, r) in higgs {
                    fma(&mut out[na + p], 2.0 * r, &x[j * dg + a], &dy[j][na + q]);
                }
            }
        }
        if cubic {
            let mut tmp = vec![vec![0.0; len]; dg];
            let mut w = vec![vec![0.0; len]; dv];
            for i in 0..d {
                for j in 0..d {
                    if i == j {
                        continue;
                    }
                    tmp.iter_mut().for_each(|t| t.fill(0.0));
                    for &(a, b, c, f) in structure {
                        fma(&mut tmp[c], f, &x[j * dg + a], &x[i * dg + b]);
                    }
                    for &(a, b, c, f) in structure {
                        fma(&mut out[i * dg + c], f, &x[j * dg + a], &tmp[b]);
                    }
                }
                if dv > 0 {
                    w.iter_mut().for_each(|t| t.fill(0.0));
                    for &(a, p, q, r) in higgs {
                        fma(&mut w[p], r, &x[i * dg + a], &x[na + q]);
                    }
                    for &(a, p, q, r) in higgs {
                        fma(&mut out[i * dg + a], -r, &w[p], &x[na + q]);
                    }
                }
            }
            if dv > 0 {
                for j in 0..d {
                    w.iter_mut().for_each(|t| t.fill(0.0));
                    for &(a, p, q, r) in higgs {
                        fma(&mut w[p], r, &x[j * dg + a], &x[na + q]);
                    }
                    for &(a, p, q, r) in higgs {
                        fma(&mut out[na + p], r, &x[j * dg + a], &w[q]);
                    }
                }
                let mut norm2 = vec![0.0; len];
                for c in &x[na..] {
                    for (n, v) in norm2.iter_mut().zip(c) {
                        *n += v * v;
                    }
                }
                for (o, c) in out[na..].iter_mut().zip(&x[na..]) {
                    for ((v, n), p) in o.iter_mut().zip(&norm2).zip(c) {
                        *v -= n * p;
                    }
                }
            }
        }
        out
    }

    /// Full drift `Q(X,X) + K(X)` on the grid from a jet.
    pub fn full_drift(&self, jet: &Jet) -> Vec<Vec<f64>> {
        self.evaluate(&jet.x, &jet.dx, true, true)
    }
}

/// `Q(X, Y)` as a lattice field (dealiased inputs).
pub fn quadratic_field(kernel: &DriftKernel, x: &LatticeField, y: &LatticeField) -> LatticeField {
    let sp = Spectral::cached(x.lattice);
    let jx = Jet::from_field(&sp, x, true);
    let jy = Jet::from_field(&sp, y, true);
    LatticeField { lattice: x.lattice, layout: x.layout, comps: kernel.evaluate(&jx.x, &jy.dx, true, false) }
}

/// `K(X)` as a lattice field (dealiased input).
pub fn cubic_field(kernel: &DriftKernel, x: &LatticeField) -> LatticeField {
    let sp = Spectral::cached(x.lattice);
    let jx = Jet::from_field(&sp, x, true);
    LatticeField { lattice: x.lattice, layout: x.layout, comps: kernel.evaluate(&jx.x, &jx.dx, false, true) }
}

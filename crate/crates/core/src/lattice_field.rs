//! Periodic lattice fields valued in E = 𝔤^d ⊕ V, spectral operators and
//! space-time mollifiers.

use crate::fft::FftNd;
use crate::lie_core::{GroupElement, GroupSpec, C64};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("negative flow time {0}")]
    NegativeTime(f64),
    #[error("mollifier scale {eps} not resolvable (needs eps >= {min})")]
    Unresolvable { eps: f64, min: f64 },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Periodic grid on the unit torus in dimension 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Lattice {
    pub d: usize,
    pub n: usize,
}

impl Lattice {
    pub fn new(d: usize, n: usize) -> Result<Self, FieldError> {
        if !(d == 2 || d == 3) {
            return Err(FieldError::InvalidLattice(format!("dimension {d} not in {{2,3}}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(FieldError::InvalidLattice(format!("n = {n} must be a power of two >= 4")));
        }
        Ok(Self { d, n })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of a flat site index (unused trailing axes are 0).
    pub fn site(&self, mut idx: usize) -> [usize; 3] {
        let mut m = [0usize; 3];
        for a in (0..self.d).rev() {
            m[a] = idx % self.n;
            idx /= self.n;
        }
        m
    }

    pub fn index(&self, m: &[usize]) -> usize {
        m.iter().take(self.d).fold(0, |acc, &v| acc * self.n + (v % self.n))
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let m = self.site(idx);
        [m[0] as f64 * self.h(), m[1] as f64 * self.h(), m[2] as f64 * self.h()]
    }

    /// Signed wavenumber of a 1D index; the Nyquist index maps to `n/2`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if j <= n / 2 {
            j
        } else {
            j - n
        }
    }
}

/// Component layout of E = 𝔤^d ⊕ V in real coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldLayout {
    pub d: usize,
    pub dim_g: usize,
    pub dim_v: usize,
}

impl FieldLayout {
    pub fn new(spec: &GroupSpec, d: usize) -> Self {
        Self { d, dim_g: spec.dim(), dim_v: spec.higgs_dim() }
    }

    pub fn gauge_only(spec: &GroupSpec, d: usize) -> Self {
        Self { d, dim_g: spec.dim(), dim_v: 0 }
    }

    pub fn ncomp(&self) -> usize {
        self.d * self.dim_g + self.dim_v
    }

    pub fn a(&self, i: usize, a: usize) -> usize {
        i * self.dim_g + a
    }

    pub fn phi(&self, k: usize) -> usize {
        self.d * self.dim_g + k
    }
}

/// Physical-space lattice field with one real array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    pub lattice: Lattice,
    pub layout: FieldLayout,
    pub comps: Vec<Vec<f64>>,
}

impl LatticeField {
    pub fn zeros(lattice: Lattice, layout: FieldLayout) -> Self {
        Self { lattice, layout, comps: vec![vec![0.0; lattice.len()]; layout.ncomp()] }
    }

    pub fn from_fn(lattice: Lattice, layout: FieldLayout, f: impl Fn([f64; 3], &mut [f64])) -> Self {
        let mut out = Self::zeros(lattice, layout);
        let mut buf = vec![0.0; layout.ncomp()];
        for idx in 0..lattice.len() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            f(lattice.position(idx), &mut buf);
            for (c, v) in buf.iter().enumerate() {
                out.comps[c][idx] = *v;
            }
        }
        out
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn value_at(&self, idx: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c[idx]).collect()
    }

    /// Gauge part only (drops V).
    pub fn gauge_part(&self) -> LatticeField {
        let layout = FieldLayout { dim_v: 0, ..self.layout };
        Self { lattice: self.lattice, layout, comps: self.comps[..layout.ncomp()].to_vec() }
    }

    /// `max_x |X(x)|_E`.
    pub fn sup_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for idx in 0..self.lattice.len() {
            let s: f64 = self.comps.iter().map(|c| c[idx] * c[idx]).sum();
            best = best.max(s);
        }
        best.sqrt()
    }

    /// `(∫ |X|²)^{1/2}` with cell volume `h^d`.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.comps.iter().flat_map(|c| c.iter()).map(|v| v * v).sum();
        (s * self.lattice.h().powi(self.lattice.d as i32)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.comps.iter_mut().for_each(|c| c.iter_mut().for_each(|v| *v *= s));
        out
    }

    /// `self + w·other`.
    pub fn axpy(&self, w: f64, other: &Self) -> Self {
        let mut out = self.clone();
        for (c, o) in out.comps.iter_mut().zip(&other.comps) {
            for (v, x) in c.iter_mut().zip(o) {
                *v += w * x;
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).sup_norm()
    }

    /// Flat binary snapshot: header (d, n, N, component count) as little-endian
    /// u64, then row-major complex doubles indexed by (component, site).
    pub fn write_binary<W: Write>(&self, group_n: usize, mut w: W) -> Result<(), FieldError> {
        for v in [self.lattice.d, self.lattice.n, group_n, self.ncomp()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for c in &self.comps {
            for v in c {
                w.write_all(&v.to_le_bytes())?;
                w.write_all(&0f64.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(layout: FieldLayout, mut r: R) -> Result<(Self, usize), FieldError> {
        let mut word = [0u8; 8];
        let mut header = [0usize; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word) as usize;
        }
        let lattice = Lattice::new(header[0], header[1])?;
        if header[3] != layout.ncomp() {
            return Err(FieldError::Layout(format!("{} components on disk, layout expects {}", header[3], layout.ncomp())));
        }
        let mut out = Self::zeros(lattice, layout);
        for c in out.comps.iter_mut() {
            for v in c.iter_mut() {
                r.read_exact(&mut word)?;
                *v = f64::from_le_bytes(word);
                r.read_exact(&mut word)?;
            }
        }
        Ok((out, header[2]))
    }

    /// CSV with columns `site,x0,x1[,x2],c0,c1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), FieldError> {
        let mut head = vec!["site".to_string()];
        head.extend((0..self.lattice.d).map(|a| format!("x{a}")));
        head.extend((0..self.ncomp()).map(|c| format!("c{c}")));
        writeln!(w, "{}", head.join(","))?;
        for idx in 0..self.lattice.len() {
            let p = self.lattice.position(idx);
            let mut row = vec![idx.to_string()];
            row.extend(p.iter().take(self.lattice.d).map(|v| format!("{v}")));
            row.extend(self.comps.iter().map(|c| format!("{:.17e}", c[idx])));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Spectral toolkit for one lattice: FFT plans and wavenumber tables.
#[derive(Debug)]
pub struct Spectral {
    pub lattice: Lattice,
    fft: FftNd,
    /// `2πk_axis` per flat index, one array per axis, Nyquist entries zeroed.
    dk_flat: Vec<Vec<f64>>,
    /// `4π²|k|²` per flat index.
    ksq: Vec<f64>,
    /// 2/3-rule mask per flat index.
    mask: Vec<f64>,
}

thread_local! {
    static SPECTRAL_CACHE: RefCell<HashMap<Lattice, Arc<Spectral>>> = RefCell::new(HashMap::new());
}

impl Spectral {
    pub fn new(lattice: Lattice) -> Self {
        let n = lattice.n;
        let dk: Vec<f64> = (0..n)
            .map(|j| if 2 * j == n { 0.0 } else { 2.0 * PI * lattice.wavenumber(j) as f64 })
            .collect();
        let mut ksq = vec![0.0; lattice.len()];
        let mut mask = vec![0.0; lattice.len()];
        for (idx, (q, m)) in ksq.iter_mut().zip(mask.iter_mut()).enumerate() {
            let s = lattice.site(idx);
            let mut k2 = 0.0;
            let mut keep = true;
            for &sa in s.iter().take(lattice.d) {
                let k = lattice.wavenumber(sa);
                k2 += (k * k) as f64;
                keep &= 3 * k.unsigned_abs() < n as u64;
            }
            *q = 4.0 * PI * PI * k2;
            *m = if keep { 1.0 } else { 0.0 };
        }
        let dk_flat = (0..lattice.d)
            .map(|axis| {
                let stride = n.pow((lattice.d - 1 - axis) as u32);
                (0..lattice.len()).map(|idx| dk[(idx / stride) % n]).collect()
            })
            .collect();
        Self { lattice, fft: FftNd::new(lattice.d, n), dk_flat, ksq, mask }
    }

    /// Per-thread shared instance.
    pub fn cached(lattice: Lattice) -> Arc<Spectral> {
        SPECTRAL_CACHE.with(|c| c.borrow_mut().entry(lattice).or_insert_with(|| Arc::new(Spectral::new(lattice))).clone())
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `4π²|k|²` per flat index.
    pub fn ksq(&self) -> &[f64] {
        &self.ksq
    }

    pub fn dealias_mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn forward(&self, z: &mut [C64]) {
        self.fft.forward(z);
    }

    pub fn inverse(&self, z: &mut [C64]) {
        self.fft.inverse(z);
    }

    /// Packs pairs of real arrays as `f + i g` and transforms them.
    pub fn forward_real(&self, comps: &[&[f64]]) -> Vec<Vec<C64>> {
        comps
            .chunks(2)
            .map(|pair| {
                let mut z: Vec<C64> = match pair {
                    [a, b] => a.iter().zip(b.iter()).map(|(x, y)| C64::new(*x, *y)).collect(),
                    [a] => a.iter().map(|x| C64::new(*x, 0.0)).collect(),
                    _ => unreachable!(),
                };
                self.fft.forward(&mut z);
                z
            })
            .collect()
    }

    /// Inverse of [`forward_real`] returning `ncomp` real arrays.
    pub fn inverse_real(&self, packed: Vec<Vec<C64>>, ncomp: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(ncomp);
        for mut z in packed {
            self.fft.inverse(&mut z);
            out.push(z.iter().map(|v| v.re).collect());
            if out.len() < ncomp {
                out.push(z.iter().map(|v| v.im).collect());
            }
        }
        out
    }

    /// Multiplies by `exp(-4π²|k|²t)`.
    pub fn apply_heat(&self, z: &mut [C64], t: f64) {
        for (v, q) in z.iter_mut().zip(&self.ksq) {
            *v *= (-q * t).exp();
        }
    }

    pub fn apply_mask(&self, z: &mut [C64]) {
        for (v, m) in z.iter_mut().zip(&self.mask) {
            *v *= m;
        }
    }

    /// Spectral derivative along `axis` of a transformed array.
    pub fn derivative(&self, z: &[C64], axis: usize) -> Vec<C64> {
        let mut out = z.to_vec();
        self.apply_derivative(&mut out, axis);
        out
    }

    pub fn apply_derivative(&self, z: &mut [C64], axis: usize) {
        for (v, k) in z.iter_mut().zip(&self.dk_flat[axis]) {
            *v = C64::new(-v.im * k, v.re * k);
        }
    }

    /// Spectral Laplacian of a transformed array.
    pub fn apply_laplacian(&self, z: &mut [C64]) {
        for (v, q) in z.iter_mut().zip(&self.ksq) {
            *v *= -q;
        }
    }

    /// Transforms a complex-valued physical array, applies `f`, and inverts.
    pub fn filter_complex(&self, data: &[C64], f: impl Fn(&Self, &mut [C64])) -> Vec<C64> {
        let mut z = data.to_vec();
        self.fft.forward(&mut z);
        f(self, &mut z);
        self.fft.inverse(&mut z);
        z
    }

    /// Physical derivative of a real array along `axis`.
    pub fn derivative_real(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let packed = self.forward_real(&[f]);
        let packed = packed.into_iter().map(|z| self.derivative(&z, axis)).collect();
        self.inverse_real(packed, 1).pop().unwrap()
    }
}

/// Fourier representation of a [`LatticeField`]: transformed pairs of
/// components packed as `f + i g`.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub lattice: Lattice,
    pub layout: FieldLayout,
    pub packed: Vec<Vec<C64>>,
}

impl SpectralField {
    pub fn from_physical(sp: &Spectral, f: &LatticeField) -> Self {
        let refs: Vec<&[f64]> = f.comps.iter().map(|c| c.as_slice()).collect();
        Self { lattice: f.lattice, layout: f.layout, packed: sp.forward_real(&refs) }
    }

    pub fn to_physical(&self, sp: &Spectral) -> LatticeField {
        LatticeField { lattice: self.lattice, layout: self.layout, comps: sp.inverse_real(self.packed.clone(), self.layout.ncomp()) }
    }

    /// Fourier coefficient of component `c` at flat frequency index `k`.
    pub fn coefficient(&self, c: usize, k: usize) -> C64 {
        let z = &self.packed[c / 2];
        let l = self.lattice;
        let m = l.site(k);
        let neg: Vec<usize> = m.iter().take(l.d).map(|&j| (l.n - j) % l.n).collect();
        let zk = z[k];
        let zm = z[l.index(&neg)].conj();
        if c % 2 == 0 {
            (zk + zm) * 0.5
        } else {
            (zk - zm) * C64::new(0.0, -0.5)
        }
    }
}

/// `P_t f`: multiplies every Fourier mode by `exp(-4π²|k|²t)`.
pub fn heat_semigroup(f: &LatticeField, t: f64) -> Result<LatticeField, FieldError> {
    if t < 0.0 {
        return Err(FieldError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let sp = Spectral::cached(f.lattice);
    let mut s = SpectralField::from_physical(&sp, f);
    for z in s.packed.iter_mut() {
        sp.apply_heat(z, t);
    }
    Ok(s.to_physical(&sp))
}

/// Spectral gradient: entry `j` holds `∂_j f`.
pub fn gradient(f: &LatticeField) -> Vec<LatticeField> {
    let sp = Spectral::cached(f.lattice);
    let s = SpectralField::from_physical(&sp, f);
    (0..f.lattice.d)
        .map(|j| {
            let packed = s.packed.iter().map(|z| sp.derivative(z, j)).collect();
            LatticeField { lattice: f.lattice, layout: f.layout, comps: sp.inverse_real(packed, f.ncomp()) }
        })
        .collect()
}

/// Interpolation weights of the symmetric trigonometric interpolant along one
/// axis; a coordinate on a grid point yields a single unit weight.
fn axis_weights(n: usize, x: f64) -> Vec<(usize, f64)> {
    let u = (x * n as f64).rem_euclid(n as f64);
    let nearest = u.round();
    if (u - nearest).abs() < 1e-13 {
        return vec![((nearest as usize) % n, 1.0)];
    }
    let nf = n as f64;
    (0..n)
        .map(|j| {
            let th = 2.0 * PI * (u - j as f64) / nf;
            let half = 0.5 * th;
            // Σ_{|k|<n/2} e^{ikθ} plus the Nyquist cosine
            let body = ((nf - 1.0) * half).sin() / half.sin();
            let w = (body + (0.5 * nf * th).cos()) / nf;
            (j, w)
        })
        .collect()
}

/// Trigonometric interpolation of every component at an off-grid point.
pub fn evaluate_offgrid(f: &LatticeField, x: &[f64]) -> Vec<f64> {
    let l = f.lattice;
    let w: Vec<Vec<(usize, f64)>> = (0..l.d).map(|a| axis_weights(l.n, x[a])).collect();
    let mut out = vec![0.0; f.ncomp()];
    let mut accumulate = |idx: usize, wt: f64| {
        for (o, c) in out.iter_mut().zip(&f.comps) {
            *o += wt * c[idx];
        }
    };
    match l.d {
        2 => {
            for &(i, wi) in &w[0] {
                for &(j, wj) in &w[1] {
                    accumulate(i * l.n + j, wi * wj);
                }
            }
        }
        _ => {
            for &(i, wi) in &w[0] {
                for &(j, wj) in &w[1] {
                    let wij = wi * wj;
                    for &(k, wk) in &w[2] {
                        accumulate((i * l.n + j) * l.n + k, wij * wk);
                    }
                }
            }
        }
    }
    out
}

/// Bump `exp(-1/(1-u²))` on `|u| < 1`.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Space-time mollifier χ^ε(t,x) = ε^{-(2+d)} χ(ε^{-2}t, ε^{-1}x) with a tensor
/// bump profile supported in parabolic radius 1/4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub eps: f64,
    pub non_anticipative: bool,
    time_norm: f64,
    space_norm: f64,
}

impl Mollifier {
    pub fn new(eps: f64, non_anticipative: bool) -> Self {
        let mut chi = Self { eps, non_anticipative, time_norm: 1.0, space_norm: 1.0 };
        let (gx, gw) = gauss_legendre(256);
        let (lo, hi) = chi.time_support();
        chi.time_norm = gx.iter().zip(&gw).map(|(u, wi)| wi * 0.5 * (hi - lo) * chi.time_profile(lo + 0.5 * (hi - lo) * (u + 1.0))).sum();
        chi.space_norm = gx.iter().zip(&gw).map(|(u, wi)| wi * bump(*u)).sum::<f64>() / 4.0;
        chi
    }

    /// Checks `ε ≥ 2h` and `ε ≥ 2Δt^{1/2}`.
    pub fn check_resolvable(&self, lattice: &Lattice, dt: f64) -> Result<(), FieldError> {
        let min = (2.0 * lattice.h()).max(2.0 * dt.sqrt());
        if self.eps < min * (1.0 - 1e-12) {
            return Err(FieldError::Unresolvable { eps: self.eps, min });
        }
        Ok(())
    }

    /// Normalised time profile on its support (rescaled units).
    fn time_profile(&self, tau: f64) -> f64 {
        // support (0, 1/16] if non-anticipative, [-1/16, 1/16] otherwise
        if self.non_anticipative {
            bump(32.0 * tau - 1.0)
        } else {
            bump(16.0 * tau)
        }
    }

    fn time_support(&self) -> (f64, f64) {
        if self.non_anticipative {
            (0.0, 1.0 / 16.0)
        } else {
            (-1.0 / 16.0, 1.0 / 16.0)
        }
    }

    /// Weights `w_m = ∫ ρ_ε` over lag cells. Non-anticipative kernels use lags
    /// `m = 1, 2, …` (cell `((m-1)Δt, mΔt]`) so slice `i` only reads slices
    /// `i - m < i`; the symmetric kernel uses centred cells `m ∈ [-M, M]`.
    /// Returns `(first_lag, weights)`.
    pub fn time_weights(&self, dt: f64) -> (i64, Vec<f64>) {
        let (lo, hi) = self.time_support();
        let e2 = self.eps * self.eps;
        let integrate = |a: f64, b: f64| -> f64 {
            let a = a.max(lo * e2);
            let b = b.min(hi * e2);
            if b <= a {
                return 0.0;
            }
            let (x, w) = gauss_legendre(64);
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            x.iter().zip(&w).map(|(xi, wi)| wi * half * self.time_profile((mid + half * xi) / e2)).sum()
        };
        let (first, cells): (i64, Vec<(f64, f64)>) = if self.non_anticipative {
            let m = ((hi * e2) / dt).ceil() as i64;
            (1, (1..=m.max(1)).map(|k| ((k - 1) as f64 * dt, k as f64 * dt)).collect())
        } else {
            let m = ((hi * e2) / dt + 0.5).ceil() as i64;
            (-m, (-m..=m).map(|k| ((k as f64 - 0.5) * dt, (k as f64 + 0.5) * dt)).collect())
        };
        // refine each cell to resolve the bump when Δt exceeds its width
        let raw: Vec<f64> = cells
            .iter()
            .map(|&(a, b)| {
                let pieces = 16;
                (0..pieces).map(|p| integrate(a + (b - a) * p as f64 / pieces as f64, a + (b - a) * (p + 1) as f64 / pieces as f64)).sum()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        (first, raw.iter().map(|v| v / total).collect())
    }

    /// Fourier multiplier of the spatial profile for each 1D index:
    /// `∫ φ(u) e^{-2πi k ε u / 4} du / ∫ φ`.
    pub fn spatial_symbol(&self, lattice: &Lattice) -> Vec<f64> {
        let (x, w) = gauss_legendre(256);
        let norm: f64 = x.iter().zip(&w).map(|(u, wi)| wi * bump(*u)).sum();
        (0..lattice.n)
            .map(|j| {
                let k = lattice.wavenumber(j) as f64;
                let om = 2.0 * PI * k * self.eps / 4.0;
                x.iter().zip(&w).map(|(u, wi)| wi * bump(*u) * (om * u).cos()).sum::<f64>() / norm
            })
            .collect()
    }

    /// Multiplier on flat frequency indices.
    pub fn spatial_multiplier(&self, lattice: &Lattice) -> Vec<f64> {
        let s = self.spatial_symbol(lattice);
        (0..lattice.len())
            .map(|idx| {
                let m = lattice.site(idx);
                m.iter().take(lattice.d).map(|&j| s[j]).product()
            })
            .collect()
    }

    /// Kernel value `χ^ε(t,x)` in physical units.
    pub fn kernel(&self, t: f64, x: &[f64]) -> f64 {
        let d = x.len() as i32;
        let e2 = self.eps * self.eps;
        let (lo, hi) = self.time_support();
        let tau = t / e2;
        if tau < lo || tau > hi {
            return 0.0;
        }
        let spatial: f64 = x.iter().map(|xi| bump(4.0 * xi / self.eps) / self.space_norm).product();
        self.eps.powi(-(2 + d)) * self.time_profile(tau) / self.time_norm * spatial
    }
}

/// Discrete space-time convolution of a slab (time × component × site) with
/// χ^ε. Slices outside the slab contribute zero.
pub fn mollify(slices: &[Vec<Vec<f64>>], lattice: Lattice, dt: f64, chi: &Mollifier) -> Result<Vec<Vec<Vec<f64>>>, FieldError> {
    chi.check_resolvable(&lattice, dt)?;
    let sp = Spectral::cached(lattice);
    let mult = chi.spatial_multiplier(&lattice);
    let spatial: Vec<Vec<Vec<f64>>> = slices
        .iter()
        .map(|slice| {
            let refs: Vec<&[f64]> = slice.iter().map(|c| c.as_slice()).collect();
            let mut packed = sp.forward_real(&refs);
            for z in packed.iter_mut() {
                for (v, m) in z.iter_mut().zip(&mult) {
                    *v *= m;
                }
            }
            sp.inverse_real(packed, slice.len())
        })
        .collect();
    let (first, w) = chi.time_weights(dt);
    let nt = slices.len();
    Ok((0..nt)
        .map(|i| {
            let mut out = vec![vec![0.0; lattice.len()]; slices.first().map_or(0, |s| s.len())];
            for (m, wm) in w.iter().enumerate() {
                let src = i as i64 - (first + m as i64);
                if src < 0 || src >= nt as i64 {
                    continue;
                }
                for (o, s) in out.iter_mut().zip(&spatial[src as usize]) {
                    for (a, b) in o.iter_mut().zip(s) {
                        *a += wm * b;
                    }
                }
            }
            out
        })
        .collect())
}

/// G-valued lattice field; entry `(r, c)` of the matrix is array `r·N + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeTransformField {
    pub lattice: Lattice,
    pub n: usize,
    pub entries: Vec<Vec<C64>>,
}

impl GaugeTransformField {
    pub fn identity(lattice: Lattice, n: usize) -> Self {
        let mut entries = vec![vec![C64::new(0.0, 0.0); lattice.len()]; n * n];
        for r in 0..n {
            entries[r * n + r].iter_mut().for_each(|z| *z = C64::new(1.0, 0.0));
        }
        Self { lattice, n, entries }
    }

    pub fn from_fn(lattice: Lattice, n: usize, f: impl Fn([f64; 3]) -> GroupElement) -> Self {
        let mut out = Self::identity(lattice, n);
        for idx in 0..lattice.len() {
            let g = f(lattice.position(idx));
            for r in 0..n {
                for c in 0..n {
                    out.entries[r * n + c][idx] = g.mat[(r, c)];
                }
            }
        }
        out
    }

    pub fn at(&self, idx: usize) -> GroupElement {
        let n = self.n;
        GroupElement { mat: nalgebra::DMatrix::from_fn(n, n, |r, c| self.entries[r * n + c][idx]) }
    }

    pub fn set(&mut self, idx: usize, g: &nalgebra::DMatrix<C64>) {
        let n = self.n;
        for r in 0..n {
            for c in 0..n {
                self.entries[r * n + c][idx] = g[(r, c)];
            }
        }
    }

    /// Largest `|gᴴg - I|` over sites.
    pub fn unitarity_defect(&self) -> f64 {
        (0..self.lattice.len()).map(|i| crate::lie_core::unitarity_defect(&self.at(i).mat)).fold(0.0, f64::max)
    }

    /// Spectral derivative of every entry along `axis`.
    pub fn derivative(&self, axis: usize) -> Vec<Vec<C64>> {
        let sp = Spectral::cached(self.lattice);
        self.entries.iter().map(|e| sp.filter_complex(e, |s, z| s.apply_derivative(z, axis))).collect()
    }

    /// Pointwise product `self · other`.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for idx in 0..self.lattice.len() {
            let m = self.at(idx).mat * other.at(idx).mat;
            out.set(idx, &m);
        }
        out
    }
}

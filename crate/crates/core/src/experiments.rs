//! Ensemble experiments: the paired covariance-breaking run, the good-event
//! filter, moment profiles of the stochastic heat equation and of the
//! quadratic functional, and run output (CSV rows plus a JSON manifest).

use crate::drift::Jet;
use crate::dynamics::{
    calibrate_mass_counterterm, BlockOperator, Calibration, Counterterm, CountertermTable, DynamicsError, Integrator,
    IntegratorConfig, Probe, SpdeState,
};
use crate::heatflow::{FlowConfig, FlowError};
use crate::lattice_field::{FieldError, FieldLayout, GaugeTransformField, Lattice, LatticeField, Spectral};
use crate::lie_core::{GroupKind, GroupSpec, LieError, Representation, C64};
use crate::noise::{member_seed, sample_she_exact};
use crate::norms::{
    heatgr_norm, holder_neg_norm, quad_norm, segment_integrals, ComponentField, NormError, NormParams, SLadder,
    SegmentFamily,
};
use crate::observables::{
    build_case_initial_data, default_case_two_direction, iterated_integral, path_from_fn, wilson_after_flow,
    CaseInitialData, CaseKind, Loop, ObservableError, SteeringOptions,
};
use crate::stats::{fit_exponent, mean_stderr, Fit, FitError};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialise: {0}")]
    Serialise(#[from] toml::ser::Error),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("cemetery fraction {fraction:.3} at t = {t} exceeds 1/2 (resolution insufficient): {diagnostics}")]
    Cemetery { t: f64, fraction: f64, diagnostics: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed rows file: {0}")]
    Rows(String),
}

/// Flat key-value run configuration (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"SU(N)"`, `"U(N)"` or `"U(1)"`.
    pub group: String,
    /// Fundamental Higgs field; otherwise pure Yang–Mills.
    pub higgs: bool,
    pub d: usize,
    pub n: usize,
    /// Time step; defaults to `h²/8`. Each grid time uses `t/⌈t/Δt⌉`.
    pub dt: Option<f64>,
    /// Mollification scale in units of `h`.
    pub eps_h: f64,
    pub blowup: f64,
    /// `ε` of the default Greek block.
    pub greek_eps: f64,
    /// `"zero"`, `"mass:<m>"`, `"table:<path>"` or `"calibrate"`.
    pub counterterm: String,
    /// `"zero"`, `"identity[:scale]"` or `"block:i,k,scale;..."` with
    /// 1-based block indices (block `(i, k)` is `c_i^{(k)}`).
    pub c: String,
    /// Initial-data construction, 1 or 2.
    pub case: u8,
    /// Steering functional `j` (case 1) or `X` (case 2) in algebra coordinates.
    pub direction: Option<Vec<f64>>,
    pub t_grid: Option<Vec<f64>>,
    /// Largest grid time of the default dyadic grid.
    pub t_max: f64,
    pub t_points: usize,
    pub r: f64,
    /// `s = t^β`; defaults to `−r/(4λ)`.
    pub beta: Option<f64>,
    /// Ensemble size (members, counting both antithetic branches).
    pub members: usize,
    pub antithetic: bool,
    pub seed: u64,
    pub loop_nodes: usize,
    pub flow_blowup: f64,
    /// Threshold `M` of the good-event filter; `None` disables it.
    pub filter_m: Option<f64>,
    pub filter_q: f64,
    pub filter_eps_hat: f64,
    /// Times at which the time-supremum filter terms are sampled.
    pub filter_checkpoints: usize,
    pub filter_ladder_points: usize,
    pub filter_levels: usize,
    pub bootstrap: usize,
    pub steering_segments: usize,
    pub steering_restarts: usize,
    pub steering_seed: u64,
    pub calibration_members: usize,
    pub threads: Option<usize>,
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            group: "SU(2)".into(),
            higgs: true,
            d: 3,
            n: 32,
            dt: None,
            eps_h: 4.0,
            blowup: 1e6,
            greek_eps: 0.05,
            counterterm: "zero".into(),
            c: "block:1,2,1".into(),
            case: 2,
            direction: None,
            t_grid: None,
            t_max: 2f64.powi(-7),
            t_points: 6,
            r: 0.1,
            beta: None,
            members: 1024,
            antithetic: true,
            seed: 1,
            loop_nodes: 2048,
            flow_blowup: 1e6,
            filter_m: None,
            filter_q: 4.0,
            filter_eps_hat: 0.01,
            filter_checkpoints: 4,
            filter_ladder_points: 6,
            filter_levels: 3,
            bootstrap: 2000,
            steering_segments: 8,
            steering_restarts: 20,
            steering_seed: 7,
            calibration_members: 8,
            threads: None,
            out: None,
        }
    }
}

/// Parses `"SU(2)"`, `"U(3)"`, `"U(1)"`.
pub fn parse_group(s: &str, higgs: bool) -> Result<GroupSpec, ExperimentError> {
    let t = s.trim().to_ascii_uppercase();
    let bad = || ExperimentError::Config(format!("unknown group {s:?}"));
    let (kind, rest) = if let Some(r) = t.strip_prefix("SU(") {
        (GroupKind::SU, r)
    } else if let Some(r) = t.strip_prefix("U(") {
        (GroupKind::U, r)
    } else {
        return Err(bad());
    };
    let n: usize = rest.strip_suffix(')').ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let kind = if kind == GroupKind::U && n == 1 { GroupKind::U1 } else { kind };
    let rep = if higgs { Representation::Fundamental } else { Representation::Trivial };
    Ok(GroupSpec::new(kind, n, rep)?)
}

/// Parses the `c` operator description.
pub fn parse_c(s: &str, d: usize, dim: usize) -> Result<BlockOperator, ExperimentError> {
    let s = s.trim();
    if s == "zero" {
        return Ok(BlockOperator::zero(d, dim));
    }
    if let Some(rest) = s.strip_prefix("identity") {
        let scale = match rest.strip_prefix(':') {
            Some(v) => v.trim().parse().map_err(|_| ExperimentError::Config(format!("bad scale in {s:?}")))?,
            None if rest.is_empty() => 1.0,
            None => return Err(ExperimentError::Config(format!("bad c {s:?}"))),
        };
        return Ok(BlockOperator::identity(d, dim, scale));
    }
    let Some(rest) = s.strip_prefix("block:") else {
        return Err(ExperimentError::Config(format!("bad c {s:?}")));
    };
    let mut c = BlockOperator::zero(d, dim);
    for entry in rest.split(';').filter(|e| !e.trim().is_empty()) {
        let parts: Vec<&str> = entry.split(',').map(str::trim).collect();
        let parsed = (parts.len() == 3)
            .then(|| Some((parts[0].parse::<usize>().ok()?, parts[1].parse::<usize>().ok()?, parts[2].parse::<f64>().ok()?)))
            .flatten();
        let Some((i, k, scale)) = parsed else {
            return Err(ExperimentError::Config(format!("bad block entry {entry:?}")));
        };
        if i == 0 || k == 0 || i > d || k > d {
            return Err(ExperimentError::Config(format!("block index out of range in {entry:?}")));
        }
        let b = c.block(i - 1, k - 1) + DMatrix::identity(dim, dim) * scale;
        c.set_block(i - 1, k - 1, &b);
    }
    Ok(c)
}

/// Resolved run setup shared by all experiments.
#[derive(Debug, Clone)]
pub struct Setup {
    pub spec: GroupSpec,
    pub lattice: Lattice,
    pub layout: FieldLayout,
    pub c: BlockOperator,
    pub counterterm: Counterterm,
    pub params: NormParams,
    pub beta: f64,
    pub t_grid: Vec<f64>,
    pub eps: f64,
    pub dt: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fails for seeds above `i64::MAX`, which TOML integers cannot hold.
    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML serialisation.
    pub fn hash(&self) -> Result<String, ExperimentError> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn grid(&self) -> Vec<f64> {
        match &self.t_grid {
            Some(g) => g.clone(),
            None => (0..self.t_points).rev().map(|k| self.t_max * 2f64.powi(-(k as i32))).collect(),
        }
    }

    /// Validates the configuration and resolves derived quantities.
    pub fn setup(&self) -> Result<Setup, ExperimentError> {
        if self.seed > i64::MAX as u64 || self.steering_seed > i64::MAX as u64 {
            return Err(ExperimentError::Config("seeds must not exceed 2^63 - 1".into()));
        }
        let spec = parse_group(&self.group, self.higgs)?;
        let lattice = Lattice::new(self.d, self.n)?;
        let layout = FieldLayout::new(&spec, self.d);
        let h = lattice.h();
        if self.eps_h < 2.0 {
            return Err(ExperimentError::Config(format!("eps = {}h below 2h", self.eps_h)));
        }
        let eps = self.eps_h * h;
        let dt = self.dt.unwrap_or(h * h / 8.0);
        let params = NormParams::block(self.greek_eps, self.r);
        params.validate()?;
        let beta = self.beta.unwrap_or(params.beta);
        let t_grid = self.grid();
        if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
            return Err(ExperimentError::Config("t-grid must be nonempty and positive".into()));
        }
        for &t in &t_grid {
            let s = t.powf(beta);
            if !(s > dt && s < 0.25) {
                return Err(ExperimentError::Config(format!("s = t^beta = {s:e} at t = {t:e} outside (dt, 0.25)")));
            }
        }
        if self.members == 0 || (self.antithetic && self.members % 2 != 0) {
            return Err(ExperimentError::Config("members must be positive (and even with antithetic pairs)".into()));
        }
        IntegratorConfig { dt, eps: Some(eps), non_anticipative: true, blowup: self.blowup }.validate(lattice)?;
        let c = parse_c(&self.c, self.d, spec.dim())?;
        let counterterm = self.resolve_counterterm(&spec, lattice, layout, eps)?;
        Ok(Setup { spec, lattice, layout, c, counterterm, params, beta, t_grid, eps, dt })
    }

    fn resolve_counterterm(&self, spec: &GroupSpec, l: Lattice, layout: FieldLayout, eps: f64) -> Result<Counterterm, ExperimentError> {
        let s = self.counterterm.trim();
        if s == "zero" {
            return Ok(Counterterm::zero(layout));
        }
        if let Some(m) = s.strip_prefix("mass:") {
            let m: f64 = m.trim().parse().map_err(|_| ExperimentError::Config(format!("bad mass {m:?}")))?;
            return Ok(Counterterm::mass(layout, m, 0.0));
        }
        if let Some(path) = s.strip_prefix("table:") {
            let table: CountertermTable = serde_json::from_str(&std::fs::read_to_string(path.trim())?)?;
            return Ok(table.counterterm(layout, eps));
        }
        if s == "calibrate" {
            let table = calibrate_mass_counterterm(&self.calibration(spec, l, layout), &[4.0 * eps, 2.0 * eps, eps])?;
            return Ok(table.counterterm(layout, eps));
        }
        Err(ExperimentError::Config(format!("unknown counterterm source {s:?}")))
    }

    /// Calibration settings derived from this config.
    pub fn calibration(&self, spec: &GroupSpec, l: Lattice, layout: FieldLayout) -> Calibration {
        Calibration {
            spec: spec.clone(),
            layout,
            lattice: l,
            t: self.grid().into_iter().fold(0.0, f64::max),
            members: self.calibration_members,
            seed: self.seed ^ 0xca11b,
            probe: Probe::CoupledExcess,
            bracket: 1.0,
            tolerance: 1e-3,
        }
    }

    pub fn steering(&self) -> SteeringOptions {
        SteeringOptions { segments: self.steering_segments, restarts: self.steering_restarts, seed: self.steering_seed, ..Default::default() }
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig { blowup: self.flow_blowup, ..Default::default() }
    }

    pub fn wilson_loop(&self) -> Loop {
        Loop::default_axis().with_nodes(self.loop_nodes)
    }

    /// Initial data at grid time `t`. With `c = 0` the case-2 transformation
    /// is still used for `g(0)` while `A(0) = t^r c h(0)` vanishes.
    pub fn case_data(&self, setup: &Setup, t: f64) -> Result<CaseInitialData, ExperimentError> {
        if setup.c.is_zero() {
            let x = self.direction.clone().unwrap_or_else(|| default_case_two_direction(&setup.spec));
            return Ok(CaseInitialData { spec: setup.spec.clone(), c: setup.c.clone(), kind: CaseKind::Two(x), t, r: self.r });
        }
        Ok(build_case_initial_data(&setup.spec, &setup.c, self.case, t, self.r, self.direction.clone(), &self.steering())?)
    }

    /// Integrator for grid time `t` with `⌈t/Δt⌉` equal steps.
    pub fn integrator(&self, setup: &Setup, t: f64) -> Result<(Integrator, usize), ExperimentError> {
        let steps = ((t / setup.dt) - 1e-9).ceil().max(1.0) as usize;
        let cfg = IntegratorConfig { dt: t / steps as f64, eps: Some(setup.eps), non_anticipative: true, blowup: self.blowup };
        Ok((Integrator::new(&setup.spec, setup.layout, setup.lattice, cfg)?, steps))
    }
}

/// The two explicit terms of the leading-order Wilson-loop difference:
/// `t·Tr ∫_ℓ c h(0)` and `t·Tr ∬ dℓ_{A(0)} dℓ_{c h(0)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadingTerms {
    pub first: (f64, f64),
    pub second: (f64, f64),
}

impl LeadingTerms {
    pub fn total(&self) -> (f64, f64) {
        (self.first.0 + self.second.0, self.first.1 + self.second.1)
    }

    /// Component of the total in the given channel.
    pub fn channel(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Re => self.total().0,
            Channel::Im => self.total().1,
        }
    }
}

/// Real or imaginary part of the complex Wilson-loop trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Re,
    Im,
}

/// Quadrature of the two explicit terms along `lp` (no SPDE run). The
/// double integral over `[0,1]²` factorises into the product of the two
/// driving-path endpoints.
pub fn predicted_leading_terms(data: &CaseInitialData, lp: &Loop) -> LeadingTerms {
    let spec = &data.spec;
    let (dim, d) = (spec.dim(), data.d());
    let ch = path_from_fn(dim, d, lp, |p| data.ch_at(p));
    let a0 = path_from_fn(dim, d, lp, |p| data.a0_at(p));
    let int_ch = spec.from_coords(ch.endpoint()).mat;
    let int_a0 = spec.from_coords(a0.endpoint()).mat;
    let first = int_ch.trace() * data.t;
    let second = (int_a0 * int_ch).trace() * data.t;
    LeadingTerms { first: (first.re, first.im), second: (second.re, second.im) }
}

/// Trace of the ordered cross term `∬_{x₁<x₂}(dℓ_A dℓ_{ch} + dℓ_{ch} dℓ_A)`
/// times `t`, which has the same trace as the second leading term.
pub fn ordered_cross_term(data: &CaseInitialData, lp: &Loop) -> (f64, f64) {
    let spec = &data.spec;
    let (dim, d) = (spec.dim(), data.d());
    let ch = path_from_fn(dim, d, lp, |p| data.ch_at(p));
    let a0 = path_from_fn(dim, d, lp, |p| data.a0_at(p));
    let m = iterated_integral(spec, &a0, &ch) + iterated_integral(spec, &ch, &a0);
    let tr = m.trace() * data.t;
    (tr.re, tr.im)
}

/// Norm estimates entering the good event, for one sample at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterTerms {
    /// `sup_r |Ψ_r|_{𝒞^{−1/2−κ}}` over the checkpoints.
    pub psi_sup: f64,
    /// `sup_r |𝒫_r⋆(ΨdΨ)|_{𝒞^{−2κ}}` over the checkpoints.
    pub duhamel_sup: f64,
    pub heatgr_psi: f64,
    pub duhamel_eta_bar: f64,
    pub quadnorm_psi: f64,
}

/// The event `Q_t` with threshold `M` and the time cut `τ = M^{−q}`.
#[derive(Debug, Clone)]
pub struct GoodEventFilter {
    pub m: f64,
    pub q: f64,
    pub eps_hat: f64,
    pub params: NormParams,
    pub ladder: SLadder,
    pub family: SegmentFamily,
    pub checkpoints: usize,
}

impl GoodEventFilter {
    pub fn from_config(cfg: &ExperimentConfig, params: NormParams, m: f64) -> Self {
        Self {
            m,
            q: cfg.filter_q,
            eps_hat: cfg.filter_eps_hat,
            params,
            ladder: SLadder::log(2f64.powi(-14), 0.5, cfg.filter_ladder_points.max(2)),
            family: SegmentFamily::dyadic(cfg.d, cfg.filter_levels.max(1), 0, cfg.seed),
            checkpoints: cfg.filter_checkpoints.max(1),
        }
    }

    /// Weighted sum of the terms defining the event.
    pub fn total(&self, terms: &FilterTerms, t: f64) -> f64 {
        let w = t.powf(-self.eps_hat);
        terms.psi_sup + terms.duhamel_sup + w * (terms.heatgr_psi + terms.duhamel_eta_bar + terms.quadnorm_psi)
    }

    pub fn indicator(&self, terms: &FilterTerms, t: f64) -> bool {
        self.total(terms, t) < self.m
    }

    pub fn tau(&self) -> f64 {
        self.m.powf(-self.q)
    }

    /// Time-supremum terms at one checkpoint.
    pub fn checkpoint_terms(&self, psi: &ComponentField, duhamel: &ComponentField) -> Result<(f64, f64), NormError> {
        let kappa = self.params.kappa();
        Ok((holder_neg_norm(psi, -0.5 - kappa, &self.ladder)?, holder_neg_norm(duhamel, -2.0 * kappa, &self.ladder)?))
    }

    /// Final-time terms.
    pub fn final_terms(&self, psi: &ComponentField, duhamel: &ComponentField) -> Result<(f64, f64, f64), NormError> {
        let p = &self.params;
        let heat = heatgr_norm(psi, p.alpha, p.theta, &self.ladder, &self.family);
        let eta = holder_neg_norm(duhamel, p.eta_bar, &self.ladder)?;
        let zero = ComponentField::zeros(psi.lattice, psi.comps.len());
        let quad = quad_norm(psi, &zero, p.gamma, p.delta, &self.ladder, &self.family)?;
        Ok((heat, eta, quad))
    }
}

/// `Ψ` driven by the run's noise and `𝒫⋆(ΨdΨ)` by exponential Euler, with
/// the filter terms accumulated at checkpoints.
struct SheTracker {
    psi: Vec<Vec<C64>>,
    duhamel: Vec<Vec<C64>>,
    psi_sup: f64,
    duhamel_sup: f64,
}

impl SheTracker {
    fn new(integ: &Integrator) -> Self {
        let zero = vec![vec![C64::new(0.0, 0.0); integ.sp.len()]; integ.layout().ncomp().div_ceil(2)];
        Self { psi: zero.clone(), duhamel: zero, psi_sup: 0.0, duhamel_sup: 0.0 }
    }

    fn step(&mut self, integ: &Integrator, noise: &[Vec<C64>]) {
        let nc = integ.layout().ncomp();
        let jet = Jet::from_spectrum(&integ.sp, &self.psi, nc, true);
        let q = integ.kernel.evaluate(&jet.x, &jet.dx, true, false);
        integ.advance_spectrum(&mut self.duhamel, &q);
        for (s, z) in self.psi.iter_mut().zip(noise) {
            for k in 0..s.len() {
                s[k] = s[k] * integ.prop.decay[k] + z[k];
            }
        }
    }

    fn fields(&self, integ: &Integrator) -> (ComponentField, ComponentField) {
        let nc = integ.layout().ncomp();
        let l = integ.lattice();
        let psi = ComponentField { lattice: l, comps: integ.sp.inverse_real(self.psi.clone(), nc) };
        let duh = ComponentField { lattice: l, comps: integ.sp.inverse_real(self.duhamel.clone(), nc) };
        (psi, duh)
    }

    fn checkpoint(&mut self, integ: &Integrator, filter: &GoodEventFilter) -> Result<(), NormError> {
        let (psi, duh) = self.fields(integ);
        let (a, b) = filter.checkpoint_terms(&psi, &duh)?;
        self.psi_sup = self.psi_sup.max(a);
        self.duhamel_sup = self.duhamel_sup.max(b);
        Ok(())
    }

    fn finish(&self, integ: &Integrator, filter: &GoodEventFilter) -> Result<FilterTerms, NormError> {
        let (psi, duh) = self.fields(integ);
        let (heatgr_psi, duhamel_eta_bar, quadnorm_psi) = filter.final_terms(&psi, &duh)?;
        Ok(FilterTerms { psi_sup: self.psi_sup, duhamel_sup: self.duhamel_sup, heatgr_psi, duhamel_eta_bar, quadnorm_psi })
    }
}

fn is_checkpoint(step: usize, steps: usize, count: usize) -> bool {
    let every = steps.div_ceil(count).max(1);
    (step + 1) % every == 0 || step + 1 == steps
}

/// One ensemble member: both Wilson loops of a paired trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub t: f64,
    pub s: f64,
    pub pair: usize,
    /// `+1` or `−1` (antithetic branch).
    pub sign: i8,
    pub seed: u64,
    pub w_re: f64,
    pub w_im: f64,
    pub w_tilde_re: f64,
    pub w_tilde_im: f64,
    pub alive: bool,
    pub alive_tilde: bool,
    /// Weighted filter total (NaN without a filter).
    pub filter_total: f64,
    pub good: bool,
}

impl SampleRow {
    /// `W̃ − W` in the channel, zero off the good event.
    pub fn diff(&self, ch: Channel) -> f64 {
        if !self.good {
            return 0.0;
        }
        match ch {
            Channel::Re => self.w_tilde_re - self.w_re,
            Channel::Im => self.w_tilde_im - self.w_im,
        }
    }

    pub const CSV_HEADER: &'static str = "t,s,pair,sign,seed,w_re,w_im,w_tilde_re,w_tilde_im,alive,alive_tilde,filter_total,good";

    pub fn csv(&self) -> String {
        format!(
            "{:e},{:e},{},{},{},{:e},{:e},{:e},{:e},{},{},{:e},{}",
            self.t,
            self.s,
            self.pair,
            self.sign,
            self.seed,
            self.w_re,
            self.w_im,
            self.w_tilde_re,
            self.w_tilde_im,
            self.alive,
            self.alive_tilde,
            self.filter_total,
            self.good
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self, ExperimentError> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || ExperimentError::Rows(line.to_string());
        if f.len() != 13 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        let flag = |i: usize| f[i].parse::<bool>().map_err(|_| bad());
        Ok(Self {
            t: num(0)?,
            s: num(1)?,
            pair: f[2].parse().map_err(|_| bad())?,
            sign: f[3].parse().map_err(|_| bad())?,
            seed: f[4].parse().map_err(|_| bad())?,
            w_re: num(5)?,
            w_im: num(6)?,
            w_tilde_re: num(7)?,
            w_tilde_im: num(8)?,
            alive: flag(9)?,
            alive_tilde: flag(10)?,
            filter_total: num(11)?,
            good: flag(12)?,
        })
    }
}

/// Aggregates at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub t: f64,
    pub s: f64,
    pub members: usize,
    pub pairs: usize,
    pub alive_fraction: f64,
    pub good_fraction: f64,
    pub mean_w: f64,
    pub mean_w_tilde: f64,
    /// Mean of `W̃ − W` over pair averages.
    pub mean_diff: f64,
    pub stderr_diff: f64,
    pub z: f64,
    pub predicted: LeadingTerms,
    /// Fraction of bootstrap resamples whose mean has the predicted sign.
    pub sign_agreement: f64,
    /// `(fail fraction)·2N`, bounding the excluded samples' contribution.
    pub excluded_bound: f64,
    pub below_tau: bool,
}

/// Per-sample rows plus aggregates and the fitted exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub channel: Channel,
    pub rows: Vec<SampleRow>,
    pub summaries: Vec<TimeSummary>,
    /// Fit of `log|E ΔW|` against `log t`.
    pub fit: Option<Fit>,
    /// `exp(intercept)` of the fit: the empirical `σ`.
    pub sigma: Option<f64>,
    pub r: f64,
    pub beta: f64,
    pub eps: f64,
}

/// Picks the channel carrying the larger predicted term at the largest time.
pub fn choose_channel(predicted: &[LeadingTerms]) -> Channel {
    match predicted.last() {
        Some(p) if p.total().1.abs() > p.total().0.abs() => Channel::Im,
        _ => Channel::Re,
    }
}

/// Recomputes all aggregates from stored rows.
pub fn summarize(
    rows: &[SampleRow],
    predicted: &[(f64, LeadingTerms)],
    channel: Channel,
    group_n: usize,
    bootstrap: usize,
    seed: u64,
    tau: Option<f64>,
) -> (Vec<TimeSummary>, Option<Fit>) {
    let mut out = Vec::new();
    for &(t, pred) in predicted {
        let at: Vec<&SampleRow> = rows.iter().filter(|r| r.t == t).collect();
        if at.is_empty() {
            continue;
        }
        let npairs = at.iter().map(|r| r.pair).max().map_or(0, |m| m + 1);
        let mut sums = vec![(0.0, 0usize); npairs];
        for r in &at {
            sums[r.pair].0 += r.diff(channel);
            sums[r.pair].1 += 1;
        }
        let pair_means: Vec<f64> = sums.iter().filter(|s| s.1 > 0).map(|s| s.0 / s.1 as f64).collect();
        let (mean_diff, stderr_diff) = mean_stderr(&pair_means);
        let m = at.len() as f64;
        let value = |r: &SampleRow, tilde: bool| match (channel, tilde) {
            (Channel::Re, false) => r.w_re,
            (Channel::Re, true) => r.w_tilde_re,
            (Channel::Im, false) => r.w_im,
            (Channel::Im, true) => r.w_tilde_im,
        };
        let good = at.iter().filter(|r| r.good).count() as f64;
        let want = pred.channel(channel).signum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t.to_bits());
        let agree = (0..bootstrap)
            .filter(|_| {
                let s: f64 = (0..pair_means.len()).map(|_| pair_means[rng.gen_range(0..pair_means.len())]).sum();
                s.signum() == want && s != 0.0
            })
            .count();
        out.push(TimeSummary {
            t,
            s: at[0].s,
            members: at.len(),
            pairs: pair_means.len(),
            alive_fraction: at.iter().filter(|r| r.alive && r.alive_tilde).count() as f64 / m,
            good_fraction: good / m,
            mean_w: at.iter().map(|r| value(r, false)).sum::<f64>() / m,
            mean_w_tilde: at.iter().map(|r| value(r, true)).sum::<f64>() / m,
            mean_diff,
            stderr_diff,
            z: if stderr_diff > 0.0 { mean_diff / stderr_diff } else { f64::NAN },
            predicted: pred,
            sign_agreement: if bootstrap == 0 { f64::NAN } else { agree as f64 / bootstrap as f64 },
            excluded_bound: (1.0 - good / m) * 2.0 * group_n as f64,
            below_tau: tau.is_some_and(|tau| t < tau),
        });
    }
    let series: Vec<(f64, f64)> = out.iter().map(|s| (s.t, s.mean_diff)).collect();
    (out, fit_exponent(&series, None).ok())
}

struct TimeContext<'a> {
    cfg: &'a ExperimentConfig,
    setup: &'a Setup,
    integ: Integrator,
    steps: usize,
    t: f64,
    s: f64,
    x_tilde: LatticeField,
    g0: GaugeTransformField,
    filter: Option<GoodEventFilter>,
    lp: Loop,
}

fn negate(z: &[Vec<C64>]) -> Vec<Vec<C64>> {
    z.iter().map(|v| v.iter().map(|c| -c).collect()).collect()
}

fn run_pair(ctx: &TimeContext, pair: usize) -> Result<(Vec<SampleRow>, Vec<String>), ExperimentError> {
    let cfg = ctx.cfg;
    let integ = &ctx.integ;
    let seed = member_seed(cfg.seed, pair as u64);
    let mut driver = integ.driver(seed, 1.0)?;
    let branches = if cfg.antithetic { 2 } else { 1 };
    let mut plain: Vec<SpdeState> = (0..branches).map(|_| SpdeState::new(&ctx.x_tilde, None)).collect();
    let mut perturbed: Vec<SpdeState> = (0..branches).map(|_| SpdeState::new(&ctx.x_tilde, Some(ctx.g0.clone()))).collect();
    let mut tracker = ctx.filter.as_ref().map(|_| SheTracker::new(integ));
    for step in 0..ctx.steps {
        let inc = integ.noise_increment(&mut driver, step as i64);
        let neg = if cfg.antithetic { Some(negate(&inc)) } else { None };
        for b in 0..branches {
            let z = if b == 0 { &inc } else { neg.as_ref().expect("antithetic") };
            integ.step_symh(&mut plain[b], z, &ctx.setup.counterterm);
            integ.step_perturbed(&mut perturbed[b], z, &ctx.setup.counterterm, &ctx.setup.c)?;
        }
        if let (Some(tr), Some(f)) = (tracker.as_mut(), ctx.filter.as_ref()) {
            tr.step(integ, &inc);
            if is_checkpoint(step, ctx.steps, f.checkpoints) {
                tr.checkpoint(integ, f)?;
            }
        }
    }
    let (filter_total, good) = match (tracker.as_ref(), ctx.filter.as_ref()) {
        (Some(tr), Some(f)) => {
            let terms = tr.finish(integ, f)?;
            (f.total(&terms, ctx.t), f.indicator(&terms, ctx.t))
        }
        _ => (f64::NAN, true),
    };
    let flow = cfg.flow();
    let mut rows = Vec::with_capacity(branches);
    let mut diagnostics = Vec::new();
    for b in 0..branches {
        let a = plain[b].field().map(|f| f.gauge_part());
        let at = perturbed[b].field().map(|f| f.gauge_part());
        let w = wilson_after_flow(&ctx.setup.spec, a.as_ref(), ctx.s, &flow, &ctx.lp)?;
        let wt = wilson_after_flow(&ctx.setup.spec, at.as_ref(), ctx.s, &flow, &ctx.lp)?;
        for st in [&plain[b], &perturbed[b]] {
            if let Some(d) = &st.diagnostic {
                diagnostics.push(d.clone());
            }
        }
        rows.push(SampleRow {
            t: ctx.t,
            s: ctx.s,
            pair,
            sign: if b == 0 { 1 } else { -1 },
            seed,
            w_re: w.re,
            w_im: w.im,
            w_tilde_re: wt.re,
            w_tilde_im: wt.im,
            alive: w.alive,
            alive_tilde: wt.alive,
            filter_total,
            good,
        });
    }
    Ok((rows, diagnostics))
}

/// Paired trajectories `X` (plain drift) and `X̃` (drift `+ c·dg̃ g̃⁻¹`)
/// from the same initial data and the same noise, flowed to `s = t^β` and
/// observed through the Wilson loop along `(x, 0, 0)`.
pub fn run_covariance_experiment(cfg: &ExperimentConfig) -> Result<EnsembleReport, ExperimentError> {
    let setup = cfg.setup()?;
    let pairs = if cfg.antithetic { cfg.members / 2 } else { cfg.members };
    let lp = cfg.wilson_loop();
    let filter = cfg.filter_m.map(|m| GoodEventFilter::from_config(cfg, setup.params, m));
    let mut rows = Vec::new();
    let mut predicted = Vec::new();
    for &t in &setup.t_grid {
        let data = cfg.case_data(&setup, t)?;
        predicted.push((t, predicted_leading_terms(&data, &lp)));
        let (integ, steps) = cfg.integrator(&setup, t)?;
        let ctx = TimeContext {
            cfg,
            setup: &setup,
            x_tilde: data.x_tilde(setup.lattice, setup.layout),
            g0: data.g0(setup.lattice),
            integ,
            steps,
            t,
            s: t.powf(setup.beta),
            filter: filter.clone(),
            lp,
        };
        let results: Vec<(Vec<SampleRow>, Vec<String>)> =
            (0..pairs).into_par_iter().map(|p| run_pair(&ctx, p)).collect::<Result<_, _>>()?;
        let mut diagnostics = Vec::new();
        let before = rows.len();
        for (r, d) in results {
            rows.extend(r);
            diagnostics.extend(d);
        }
        let at = &rows[before..];
        let dead = at.iter().filter(|r| !(r.alive && r.alive_tilde)).count();
        let fraction = dead as f64 / at.len() as f64;
        if fraction > 0.5 {
            diagnostics.truncate(3);
            return Err(ExperimentError::Cemetery { t, fraction, diagnostics: diagnostics.join("; ") });
        }
    }
    let preds: Vec<LeadingTerms> = predicted.iter().map(|p| p.1).collect();
    let channel = choose_channel(&preds);
    let tau = filter.as_ref().map(|f| f.tau());
    let (summaries, fit) = summarize(&rows, &predicted, channel, setup.spec.n, cfg.bootstrap, cfg.seed, tau);
    let sigma = fit.as_ref().map(|f| f.intercept.exp());
    Ok(EnsembleReport { channel, rows, summaries, fit, sigma, r: cfg.r, beta: setup.beta, eps: setup.eps })
}

/// Pass fractions of the good event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStatsRow {
    pub t: f64,
    pub m: f64,
    pub pass_fraction: f64,
    /// `min(1, E[total²]/M²)`.
    pub markov_tail: f64,
    /// `(fail fraction)·2N`.
    pub excluded_bound: f64,
    pub below_tau: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    /// `(t, member, terms, total)` per sample.
    pub samples: Vec<(f64, usize, FilterTerms, f64)>,
    pub rows: Vec<FilterStatsRow>,
}

/// Ensemble statistics of the good event over the t-grid and thresholds.
/// Only `Ψ` and `𝒫⋆(ΨdΨ)` are simulated.
pub fn run_filter_stats(cfg: &ExperimentConfig, thresholds: &[f64]) -> Result<FilterStats, ExperimentError> {
    let setup = cfg.setup()?;
    let base = GoodEventFilter::from_config(cfg, setup.params, f64::INFINITY);
    let mut samples = Vec::new();
    let mut rows = Vec::new();
    for &t in &setup.t_grid {
        let (integ, steps) = cfg.integrator(&setup, t)?;
        let terms: Vec<FilterTerms> = (0..cfg.members)
            .into_par_iter()
            .map(|m| -> Result<FilterTerms, ExperimentError> {
                let mut driver = integ.driver(member_seed(cfg.seed, m as u64), 1.0)?;
                let mut tr = SheTracker::new(&integ);
                for step in 0..steps {
                    let inc = integ.noise_increment(&mut driver, step as i64);
                    tr.step(&integ, &inc);
                    if is_checkpoint(step, steps, base.checkpoints) {
                        tr.checkpoint(&integ, &base)?;
                    }
                }
                Ok(tr.finish(&integ, &base)?)
            })
            .collect::<Result<_, _>>()?;
        let totals: Vec<f64> = terms.iter().map(|x| base.total(x, t)).collect();
        let second = totals.iter().map(|v| v * v).sum::<f64>() / totals.len() as f64;
        for &m in thresholds {
            let pass = totals.iter().filter(|&&v| v < m).count() as f64 / totals.len() as f64;
            rows.push(FilterStatsRow {
                t,
                m,
                pass_fraction: pass,
                markov_tail: (second / (m * m)).min(1.0),
                excluded_bound: (1.0 - pass) * 2.0 * setup.spec.n as f64,
                below_tau: t < m.powf(-cfg.filter_q),
            });
        }
        samples.extend(terms.into_iter().zip(totals).enumerate().map(|(i, (x, v))| (t, i, x, v)));
    }
    Ok(FilterStats { samples, rows })
}

/// One row of a moment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProfileRow {
    pub quantity: String,
    pub scale: f64,
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProfile {
    pub rows: Vec<MomentProfileRow>,
    pub fit: Fit,
    pub target_slope: f64,
}

impl MomentProfile {
    /// CSV with columns `quantity,scale,estimate,stderr,fitted_slope,target_slope`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "quantity,scale,estimate,stderr,fitted_slope,target_slope")?;
        for r in &self.rows {
            writeln!(w, "{},{:e},{:e},{:e},{},{}", r.quantity, r.scale, r.estimate, r.stderr, self.fit.slope, self.target_slope)?;
        }
        Ok(())
    }
}

/// Translation- and axis-averaged `E⟨Ψ(t,0),Ψ(t,x)⟩` at `|x| = kh` for
/// `k ∈ [k_lo, k_hi]`, from exact SHE samples, with a log-log fit.
pub fn she_covariance_profile(
    lattice: Lattice,
    layout: FieldLayout,
    t: f64,
    samples: usize,
    seed: u64,
    window: (usize, usize),
) -> Result<MomentProfile, ExperimentError> {
    let (lo, hi) = window;
    if lo == 0 || hi < lo || hi > lattice.n / 2 {
        return Err(ExperimentError::Config(format!("bad lag window {window:?}")));
    }
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|m| {
            let f = sample_she_exact(member_seed(seed, m as u64), lattice, layout, t);
            autocorrelation_axes(&f, lo, hi)
        })
        .collect();
    let h = lattice.h();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (i, k) in (lo..=hi).enumerate() {
        let vals: Vec<f64> = per_sample.iter().map(|v| v[i]).collect();
        let (mean, se) = mean_stderr(&vals);
        rows.push(MomentProfileRow { quantity: "she_covariance".into(), scale: k as f64 * h, estimate: mean, stderr: se });
        series.push((k as f64 * h, mean));
    }
    Ok(MomentProfile { rows, fit: fit_exponent(&series, None)?, target_slope: -1.0 })
}

/// `N⁻¹ Σ_y ⟨f(y), f(y + k h e_a)⟩` averaged over the axes `a`.
fn autocorrelation_axes(f: &LatticeField, lo: usize, hi: usize) -> Vec<f64> {
    let sp = Spectral::cached(f.lattice);
    let refs: Vec<&[f64]> = f.comps.iter().map(|c| c.as_slice()).collect();
    let packed = sp.forward_real(&refs);
    let len = sp.len();
    let mut power = vec![C64::new(0.0, 0.0); len];
    let l = f.lattice;
    let neg = |k: usize| {
        let m = l.site(k);
        let nm: Vec<usize> = m.iter().take(l.d).map(|&j| (l.n - j) % l.n).collect();
        l.index(&nm)
    };
    let conj_index: Vec<usize> = (0..len).map(neg).collect();
    for z in &packed {
        // |f̂|² + |ĝ|² for the pair packed as f + i g
        for k in 0..len {
            let a = z[k];
            let b = z[conj_index[k]].conj();
            power[k] += C64::new(0.5 * (a.norm_sqr() + b.norm_sqr()), 0.0);
        }
    }
    let mut corr = power;
    sp.inverse(&mut corr);
    let norm = 1.0 / len as f64;
    (lo..=hi)
        .map(|k| {
            (0..l.d)
                .map(|a| {
                    let mut site = [0usize; 3];
                    site[a] = k;
                    corr[l.index(&site[..l.d])].re * norm
                })
                .sum::<f64>()
                / l.d as f64
        })
        .collect()
}

/// `sup_s E|∫_ℓ Z_{s,t}|²` with `Z_{s,t} = s^δ 𝒩_sΨ_t`, per segment length,
/// averaged over base points and axis directions, with a log-log fit.
pub fn segment_moment_profile(
    lattice: Lattice,
    layout: FieldLayout,
    params: &NormParams,
    t: f64,
    samples: usize,
    seed: u64,
    lengths: &[f64],
    ladder: &SLadder,
) -> Result<MomentProfile, ExperimentError> {
    let d = lattice.d;
    let per_sample: Vec<Vec<Vec<f64>>> = (0..samples)
        .into_par_iter()
        .map(|m| -> Result<Vec<Vec<f64>>, ExperimentError> {
            let psi = sample_she_exact(member_seed(seed, m as u64), lattice, layout, t);
            let a = ComponentField::from(&psi);
            ladder
                .points
                .iter()
                .map(|&s| {
                    let z = crate::norms::quadratic_functional(&a, s)?;
                    let w = s.powf(params.delta);
                    Ok(lengths
                        .iter()
                        .map(|&len| {
                            let mut acc = 0.0;
                            for axis in 0..d {
                                let mut v = [0.0; 3];
                                v[axis] = len;
                                let ints = segment_integrals(&z, v);
                                let total: f64 = ints.iter().flat_map(|c| c.iter()).map(|x| x * x).sum();
                                acc += w * w * total / lattice.len() as f64;
                            }
                            acc / d as f64
                        })
                        .collect())
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (li, &len) in lengths.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for si in 0..ladder.points.len() {
            let vals: Vec<f64> = per_sample.iter().map(|v| v[si][li]).collect();
            let (mean, se) = mean_stderr(&vals);
            if mean > best.0 {
                best = (mean, se);
            }
        }
        rows.push(MomentProfileRow { quantity: "segment_moment".into(), scale: len, estimate: best.0, stderr: best.1 });
        series.push((len, best.0));
    }
    let target = 4.0 * params.delta - 2.0 - 2.0 * params.kappa();
    Ok(MomentProfile { rows, fit: fit_exponent(&series, None)?, target_slope: target })
}

/// JSON run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub member_seeds: Vec<u64>,
    pub wall_time_s: f64,
    pub threads: usize,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, wall_time_s: f64, notes: Vec<String>) -> Result<Self, ExperimentError> {
        let count = if cfg.antithetic { cfg.members / 2 } else { cfg.members };
        Ok(Self {
            command: command.to_string(),
            config: cfg.clone(),
            config_hash: cfg.hash()?,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            member_seeds: (0..count as u64).map(|i| member_seed(cfg.seed, i)).collect(),
            wall_time_s,
            threads: rayon::current_num_threads(),
            notes,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Writes `rows.csv`, `summary.csv` and `report.json` into `dir`.
pub fn write_ensemble_report(report: &EnsembleReport, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("rows.csv"))?);
    writeln!(w, "{}", SampleRow::CSV_HEADER)?;
    for r in &report.rows {
        writeln!(w, "{}", r.csv())?;
    }
    w.flush()?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("summary.csv"))?);
    writeln!(w, "t,s,members,pairs,alive_fraction,good_fraction,mean_w,mean_w_tilde,mean_diff,stderr_diff,z,predicted_first_re,predicted_first_im,predicted_second_re,predicted_second_im,sign_agreement,excluded_bound,below_tau")?;
    for s in &report.summaries {
        writeln!(
            w,
            "{:e},{:e},{},{},{},{},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{},{},{}",
            s.t,
            s.s,
            s.members,
            s.pairs,
            s.alive_fraction,
            s.good_fraction,
            s.mean_w,
            s.mean_w_tilde,
            s.mean_diff,
            s.stderr_diff,
            s.z,
            s.predicted.first.0,
            s.predicted.first.1,
            s.predicted.second.0,
            s.predicted.second.1,
            s.sign_agreement,
            s.excluded_bound,
            s.below_tau
        )?;
    }
    w.flush()?;
    let brief = serde_json::json!({
        "channel": report.channel,
        "fit": report.fit,
        "sigma": report.sigma,
        "r": report.r,
        "beta": report.beta,
        "eps": report.eps,
        "note": "fixed mollification scale; the eps -> 0 limit is not taken",
    });
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&brief)?)?;
    Ok(())
}

/// Reads rows written by [`write_ensemble_report`].
pub fn read_rows(path: &Path) -> Result<Vec<SampleRow>, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(SampleRow::parse_csv).collect()
}

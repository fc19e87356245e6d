use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;
use ymh_core::dynamics::{calibrate_mass_counterterm, write_diagnostics_csv, SpdeState};
use ymh_core::experiments::{
    choose_channel, predicted_leading_terms, read_rows, run_covariance_experiment, run_filter_stats, segment_moment_profile,
    she_covariance_profile, summarize, write_ensemble_report, ExperimentConfig, Manifest,
};
use ymh_core::lattice_field::{FieldLayout, LatticeField};
use ymh_core::norms::SLadder;
use ymh_core::observables::{chow_rashevskii_curve, default_case_two_direction, default_functional};

#[derive(Parser, Debug)]
#[command(name = "ymh", version, about = "Stochastic Yang-Mills-Higgs lattice laboratory")]
struct Cli {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "YMH_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrates the SPDE from the configured initial data up to `t`.
    Simulate {
        /// Final time; defaults to the largest grid time.
        #[arg(long)]
        t: Option<f64>,
        /// Also write the final field as CSV.
        #[arg(long)]
        field: bool,
    },
    /// Paired gauge-covariance-breaking ensemble over the t-grid.
    CovarianceExperiment,
    /// Good-event filter statistics for a list of thresholds.
    Norms {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        thresholds: Vec<f64>,
    },
    /// Moment profiles of the stochastic heat equation.
    SheMoments {
        #[arg(long, value_enum, default_value_t = MomentKind::Covariance)]
        kind: MomentKind,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long)]
        t: Option<f64>,
        /// Fit window in lattice units (covariance only).
        #[arg(long, num_args = 2, default_values_t = [4usize, 12])]
        window: Vec<usize>,
        /// Segment lengths in lattice units (segment only).
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,6,8")]
        lengths: Vec<f64>,
    },
    /// Builds a steering curve with identity holonomy.
    CurveSteering {
        /// Sample points written to curve.csv.
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Tabulates the mass counterterm over a mollifier ladder.
    CalibrateCounterterm {
        /// Mollifier scales in units of h.
        #[arg(long, value_delimiter = ',', default_value = "16,8,4")]
        eps_h: Vec<f64>,
    },
    /// Recomputes summaries from stored ensemble rows.
    Report {
        /// Directory holding rows.csv and manifest.json.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MomentKind {
    Covariance,
    Segment,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("thread pool")?;
    }
    let out = cli.out.clone().or_else(|| cfg.out.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let start = Instant::now();
    let (name, notes) = match cli.command {
        Command::Simulate { t, field } => ("simulate", simulate(&cfg, t, field, &out)?),
        Command::CovarianceExperiment => ("covariance-experiment", covariance(&cfg, &out)?),
        Command::Norms { thresholds } => ("norms", norms(&cfg, &thresholds, &out)?),
        Command::SheMoments { kind, samples, t, window, lengths } => ("she-moments", moments(&cfg, kind, samples, t, (window[0], window[1]), &lengths, &out)?),
        Command::CurveSteering { points } => ("curve-steering", steering(&cfg, points, &out)?),
        Command::CalibrateCounterterm { eps_h } => ("calibrate-counterterm", calibrate(&cfg, &eps_h, &out)?),
        Command::Report { input, bootstrap } => ("report", report(&input, bootstrap, &out)?),
    };
    Manifest::new(name, &cfg, start.elapsed().as_secs_f64(), notes)?.write(&out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, t: Option<f64>, field: bool, out: &Path) -> Result<Vec<String>> {
    let setup = cfg.setup()?;
    let t = t.unwrap_or_else(|| setup.t_grid.iter().copied().fold(0.0, f64::max));
    let x0 = if setup.c.is_zero() {
        LatticeField::zeros(setup.lattice, setup.layout)
    } else {
        cfg.case_data(&setup, t)?.x_tilde(setup.lattice, setup.layout)
    };
    let (integ, steps) = cfg.integrator(&setup, t)?;
    let mut driver = integ.driver(cfg.seed, 1.0)?;
    let mut state = SpdeState::new(&x0, None);
    let rows = integ.run_with_diagnostics(&mut state, &mut driver, &setup.counterterm, steps);
    write_diagnostics_csv(&rows, std::io::BufWriter::new(std::fs::File::create(out.join("diagnostics.csv"))?))?;
    if field {
        match state.field() {
            Some(f) => f.write_csv(std::io::BufWriter::new(std::fs::File::create(out.join("field.csv"))?))?,
            None => eprintln!("trajectory reached the cemetery; no field written"),
        }
    }
    Ok(vec![format!("t = {t:e}, steps = {steps}, alive = {}", state.alive)])
}

fn covariance(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let rep = run_covariance_experiment(cfg)?;
    write_ensemble_report(&rep, out)?;
    println!("{:>11} {:>11} {:>12} {:>10} {:>7} {:>12} {:>6}", "t", "s", "mean_diff", "stderr", "z", "predicted", "agree");
    for s in &rep.summaries {
        println!(
            "{:>11.4e} {:>11.4e} {:>12.4e} {:>10.3e} {:>7.2} {:>12.4e} {:>6.3}",
            s.t,
            s.s,
            s.mean_diff,
            s.stderr_diff,
            s.z,
            s.predicted.channel(rep.channel),
            s.sign_agreement
        );
    }
    let mut notes = vec![format!("channel {:?}", rep.channel)];
    if let Some(f) = &rep.fit {
        notes.push(format!("fitted exponent {:.3} ± {:.3}, sigma {:.4e}", f.slope, f.ci_half_width, rep.sigma.unwrap_or(f64::NAN)));
        println!("fitted exponent {:.3} ± {:.3} (1 + r = {:.3})", f.slope, f.ci_half_width, 1.0 + cfg.r);
    }
    Ok(notes)
}

fn norms(cfg: &ExperimentConfig, thresholds: &[f64], out: &Path) -> Result<Vec<String>> {
    let stats = run_filter_stats(cfg, thresholds)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("filter_stats.csv"))?);
    writeln!(w, "t,m,pass_fraction,markov_tail,excluded_bound,below_tau")?;
    for r in &stats.rows {
        writeln!(w, "{:e},{},{},{},{},{}", r.t, r.m, r.pass_fraction, r.markov_tail, r.excluded_bound, r.below_tau)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("filter_samples.csv"))?);
    writeln!(w, "t,member,psi_sup,duhamel_sup,heatgr_psi,duhamel_eta_bar,quadnorm_psi,total")?;
    for (t, m, x, total) in &stats.samples {
        writeln!(w, "{t:e},{m},{},{},{},{},{},{}", x.psi_sup, x.duhamel_sup, x.heatgr_psi, x.duhamel_eta_bar, x.quadnorm_psi, total)?;
    }
    Ok(vec![format!("{} samples", stats.samples.len())])
}

fn moments(
    cfg: &ExperimentConfig,
    kind: MomentKind,
    samples: usize,
    t: Option<f64>,
    window: (usize, usize),
    lengths: &[f64],
    out: &Path,
) -> Result<Vec<String>> {
    let setup = cfg.setup()?;
    let layout = FieldLayout::gauge_only(&setup.spec, cfg.d);
    let l = setup.lattice;
    let prof = match kind {
        MomentKind::Covariance => she_covariance_profile(l, layout, t.unwrap_or(0.1), samples, cfg.seed, window)?,
        MomentKind::Segment => {
            let h = l.h();
            let lens: Vec<f64> = lengths.iter().map(|k| k * h).collect();
            let ladder = SLadder::log(h * h / 4.0, 0.5, 24);
            segment_moment_profile(l, layout, &setup.params, t.unwrap_or(1.0), samples, cfg.seed, &lens, &ladder)?
        }
    };
    prof.write_csv(std::io::BufWriter::new(std::fs::File::create(out.join("moments.csv"))?))?;
    let line = format!("slope {:.3} ± {:.3}, target {:.3}", prof.fit.slope, prof.fit.ci_half_width, prof.target_slope);
    println!("{line}");
    Ok(vec![line])
}

fn steering(cfg: &ExperimentConfig, points: usize, out: &Path) -> Result<Vec<String>> {
    let setup = cfg.setup()?;
    let c11 = setup.c.block(0, 0);
    let j = match &cfg.direction {
        Some(j) => j.clone(),
        None if c11.iter().any(|v| *v != 0.0) => default_functional(&c11),
        None => default_case_two_direction(&setup.spec),
    };
    let curve = chow_rashevskii_curve(&setup.spec, &j, &cfg.steering())?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("curve.csv"))?);
    let dim = setup.spec.dim();
    let cols: Vec<String> = (0..dim).map(|a| format!("zeta{a}")).chain((0..dim).map(|a| format!("dzeta{a}"))).collect();
    writeln!(w, "x,{}", cols.join(","))?;
    for k in 0..points.max(2) {
        let x = k as f64 / (points.max(2) - 1) as f64;
        let vals: Vec<String> = curve.zeta(x).into_iter().chain(curve.zeta_dot(x)).map(|v| format!("{v:e}")).collect();
        writeln!(w, "{x},{}", vals.join(","))?;
    }
    let line = format!(
        "holonomy defect {:.2e}, j(zeta(1)) = {:.6}, flat-end residual {:.2e}",
        curve.holonomy_defect(&setup.spec),
        curve.j_value(),
        curve.flat_end_residual()
    );
    println!("{line}");
    Ok(vec![line])
}

fn calibrate(cfg: &ExperimentConfig, eps_h: &[f64], out: &Path) -> Result<Vec<String>> {
    let setup = cfg.setup()?;
    let h = setup.lattice.h();
    let ladder: Vec<f64> = eps_h.iter().map(|e| e * h).collect();
    let table = calibrate_mass_counterterm(&cfg.calibration(&setup.spec, setup.lattice, setup.layout), &ladder)?;
    std::fs::write(out.join("counterterm.json"), serde_json::to_string_pretty(&table)?)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("counterterm.csv"))?);
    writeln!(w, "eps,m")?;
    for (e, m) in &table.entries {
        writeln!(w, "{e:e},{m:e}")?;
        println!("eps = {e:.4e}  m = {m:.6e}");
    }
    Ok(vec![format!("use counterterm = \"table:{}\"", out.join("counterterm.json").display())])
}

fn report(input: &Path, bootstrap: Option<usize>, out: &Path) -> Result<Vec<String>> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(input.join("manifest.json"))?)?;
    if manifest.command != "covariance-experiment" {
        bail!("{} holds a {} run", input.display(), manifest.command);
    }
    let cfg = manifest.config;
    let setup = cfg.setup()?;
    let rows = read_rows(&input.join("rows.csv"))?;
    let lp = cfg.wilson_loop();
    let predicted = setup
        .t_grid
        .iter()
        .map(|&t| Ok((t, predicted_leading_terms(&cfg.case_data(&setup, t)?, &lp))))
        .collect::<Result<Vec<_>>>()?;
    let channel = choose_channel(&predicted.iter().map(|p| p.1).collect::<Vec<_>>());
    let (summaries, fit) = summarize(&rows, &predicted, channel, setup.spec.n, bootstrap.unwrap_or(cfg.bootstrap), cfg.seed, None);
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("summary.csv"))?);
    writeln!(w, "t,s,members,pairs,mean_diff,stderr_diff,z,predicted,sign_agreement")?;
    for s in &summaries {
        writeln!(
            w,
            "{:e},{:e},{},{},{:e},{:e},{},{:e},{}",
            s.t,
            s.s,
            s.members,
            s.pairs,
            s.mean_diff,
            s.stderr_diff,
            s.z,
            s.predicted.channel(channel),
            s.sign_agreement
        )?;
        println!("t = {:.4e}: mean diff {:.4e} ± {:.2e}, z = {:.2}, agreement {:.3}", s.t, s.mean_diff, s.stderr_diff, s.z, s.sign_agreement);
    }
    Ok(fit.map(|f| vec![format!("fitted exponent {:.3} ± {:.3}", f.slope, f.ci_half_width)]).unwrap_or_default())
}

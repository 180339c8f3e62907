//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a subcommand's built-in check fails,
//! 2 on usage, configuration or I/O errors.

use std::f64::consts::{PI, SQRT_2};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::ModelConfig;
use crate::ergodic::{
    empirical_tv, ergodic_average, marginal_gof, observable_decay, tv_decay, tv_noise_floor,
    x_over_t_summary, NestedDesign, TvBins,
};
use crate::flow::{classify_leaf, first_integral_h, rk4_flow, xi_forward, FlowSystem, RotatedState};
use crate::hormander::check_condition_eprime;
use crate::hypo::{compute_constants, decay_rate, epsilon_route, rate_vs_sigma_table, sigma_star};
use crate::model::{CircleModel, State};
use crate::output::{header, write_csv, write_json, LinePlot};
use crate::period::{level_grid, period_table, phi, phi_roots, PERIOD_INF, PERIOD_SUP};
use crate::rng::RngStream;
use crate::sde::{ensemble_snapshots, simulate, EnsembleInit, SimConfig};
use crate::stats::variance;

#[derive(Debug, Parser)]
#[command(name = "selfrepel", version, about = "Self-repelling diffusion on the circle")]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Model config (TOML with modes, coeffs, sigma).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in model instead of --config.
    #[arg(long, global = true, conflicts_with = "config")]
    pub model: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

/// Snapshot times for `tv-decay`. Most of the decay happens before t = 10.
pub const TV_TIMES: [f64; 17] =
    [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0, 30.0, 50.0, 75.0, 100.0];

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitKind {
    Point,
    Mu,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SystemKind {
    Full,
    Rotated,
    Rescaled,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one path or an ensemble of the lifted SDE.
    Simulate {
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 100.0)]
        t_final: f64,
        #[arg(long, default_value_t = 100)]
        record_every: usize,
        #[arg(long, default_value_t = 1)]
        ensemble: usize,
        #[arg(long, value_enum, default_value = "point")]
        init: InitKind,
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        /// Initial u (normalized coordinates), comma separated; zeros if omitted.
        #[arg(long, value_delimiter = ',')]
        u0: Vec<f64>,
        /// Snapshot times for ensembles, comma separated (default: t_final).
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<f64>,
    },
    /// Integrate the zero-noise flow with RK4.
    Ode {
        #[arg(long, value_enum, default_value = "rotated")]
        system: SystemKind,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.0, 2.0])]
        y0: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 100.0)]
        t_final: f64,
        #[arg(long, default_value_t = 10)]
        record_every: usize,
    },
    /// Tabulate the period function by quadrature and by event detection.
    PeriodTable {
        #[arg(long, default_value_t = 0.5001)]
        cmin: f64,
        #[arg(long, default_value_t = 100.0)]
        cmax: f64,
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Space c linearly instead of c - 1/2 logarithmically.
        #[arg(long)]
        linear: bool,
    },
    /// Hypocoercivity constants and decay rates.
    Constants {
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        /// Override the model's sigma.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Numerical rank of the derivative tower at sampled angles.
    Hormander {
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// KS goodness of fit of ensemble marginals to the invariant law.
    InvariantCheck {
        #[arg(long, default_value_t = 10_000)]
        ensemble: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 10.0, 100.0])]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, value_enum, default_value = "mu")]
        init: InitKind,
    },
    /// L2(mu) decay of an observable, compared with the theoretical rate.
    Decay {
        /// u<k> (1-based), cos-x or sin-x.
        #[arg(long, default_value = "u1")]
        observable: String,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 400)]
        outer: usize,
        #[arg(long, default_value_t = 32)]
        inner: usize,
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0.5)]
        t_step: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// Binned total-variation distance to the invariant law from a point mass.
    TvDecay {
        #[arg(long, default_value_t = 10_000)]
        ensemble: usize,
        #[arg(long, value_delimiter = ',', default_values_t = TV_TIMES.to_vec())]
        times: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        angle_bins: usize,
        #[arg(long, default_value_t = 8)]
        u_bins: usize,
        #[arg(long, default_value_t = 5.0)]
        half_width_sd: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
    },
    /// Terminal X_T / T over an ensemble and the ergodic average of the drift.
    Xovert {
        #[arg(long, default_value_t = 48)]
        ensemble: usize,
        #[arg(long, default_value_t = 1e4)]
        t_final: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// Data (CSV) and quick-look SVG for the figures.
    Figures {
        #[arg(long, value_enum, default_value = "all")]
        preset: Figure,
    },
}

/// A subcommand either ran clean or one of its checks failed.
pub enum Outcome {
    Pass,
    Fail(String),
}

enum CliError {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Run(e)
    }
}

pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_model(cli: &Cli) -> Result<(ModelConfig, CircleModel), CliError> {
    let cfg = match (&cli.config, &cli.model) {
        (Some(path), _) => ModelConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, Some(name)) => ModelConfig::preset(name).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, None) => {
            return Err(CliError::Usage("this subcommand needs --config <FILE> or --model <NAME>".into()))
        }
    };
    let model = cfg.build().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((cfg, model))
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Run(anyhow!(e)))?;
    }
    let out = cli.out_dir.as_path();
    let prepare = || -> Result<(), CliError> {
        fs::create_dir_all(out)
            .with_context(|| format!("creating {}", out.display()))
            .map_err(CliError::Run)
    };
    match &cli.command {
        Command::Simulate { dt, t_final, record_every, ensemble, init, x0, u0, snapshots } => {
            let (_, model) = load_model(cli)?;
            if *record_every == 0 || *ensemble == 0 {
                return usage("--record-every and --ensemble must be >= 1");
            }
            let u = if u0.is_empty() { vec![0.0; model.dim()] } else { u0.clone() };
            if u.len() != model.dim() {
                return usage(format!("--u0 needs {} values", model.dim()));
            }
            let cfg = SimConfig::new(*dt, *t_final, *record_every, cli.seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            prepare()?;
            cmd_simulate(out, &model, &cfg, *ensemble, *init, State::new(*x0, u), snapshots)?;
            Ok(Outcome::Pass)
        }
        Command::Ode { system, y0, dt, t_final, record_every } => {
            if y0.len() != 3 {
                return usage("--y0 needs three values");
            }
            prepare()?;
            cmd_ode(out, *system, [y0[0], y0[1], y0[2]], *dt, *t_final, *record_every)?;
            Ok(Outcome::Pass)
        }
        Command::PeriodTable { cmin, cmax, points, linear } => {
            if !(*cmin > 0.5 && cmax > cmin && *points >= 2) {
                return usage("need 1/2 < cmin < cmax and points >= 2");
            }
            prepare()?;
            Ok(cmd_period_table(out, *cmin, *cmax, *points, !*linear)?)
        }
        Command::Constants { eta, sigma } => {
            let (cfg, mut model) = load_model(cli)?;
            if let Some(s) = sigma {
                model = model.with_sigma(*s).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            if !(*eta > 0.0) || !(model.sigma() > 0.0) {
                return usage("constants need eta > 0 and sigma > 0");
            }
            prepare()?;
            cmd_constants(out, &cfg, &model, *eta)?;
            Ok(Outcome::Pass)
        }
        Command::Hormander { samples } => {
            let (_, model) = load_model(cli)?;
            if *samples == 0 {
                return usage("--samples must be >= 1");
            }
            prepare()?;
            let report = check_condition_eprime(&model, *samples);
            write_json(&out.join("hormander.json"), &report)?;
            Ok(if report.pass {
                Outcome::Pass
            } else {
                Outcome::Fail(format!("min singular value {:e}", report.min_singular_value))
            })
        }
        Command::InvariantCheck { ensemble, times, dt, init } => {
            let (_, model) = load_model(cli)?;
            if *ensemble < crate::ergodic::MIN_GOF_SAMPLES || times.is_empty() {
                return usage("invariant-check needs --ensemble >= 1000 and at least one time");
            }
            prepare()?;
            Ok(cmd_invariant(out, &model, *ensemble, times, *dt, *init, cli.seed)?)
        }
        Command::Decay { observable, eta, outer, inner, t_max, t_step, dt } => {
            let (_, model) = load_model(cli)?;
            let obs = Observable::parse(observable, model.dim()).map_err(|e| CliError::Usage(e.to_string()))?;
            if !(*t_step > 0.0 && t_max >= t_step) || *outer < 2 || *inner < 2 || !(*eta > 0.0) {
                return usage("decay needs t_max >= t_step > 0, outer, inner >= 2, eta > 0");
            }
            if !(model.sigma() > 0.0) {
                return usage("decay needs sigma > 0");
            }
            prepare()?;
            let d = DecayArgs { eta: *eta, outer: *outer, inner: *inner, t_max: *t_max, t_step: *t_step, dt: *dt };
            Ok(cmd_decay(out, &model, obs, &d, cli.seed)?)
        }
        Command::TvDecay { ensemble, times, angle_bins, u_bins, half_width_sd, dt, eta } => {
            let (_, model) = load_model(cli)?;
            if model.n_modes() != 1 {
                return usage("tv-decay is defined for one-mode models only");
            }
            if *angle_bins == 0 || *u_bins == 0 || !(*half_width_sd >= 5.0) || times.len() < 3 {
                return usage("tv-decay needs positive bin counts, half-width >= 5 sd and >= 3 times");
            }
            if !(model.sigma() > 0.0) {
                return usage("tv-decay needs sigma > 0");
            }
            prepare()?;
            let bins = TvBins { angle_bins: *angle_bins, u_bins: *u_bins, half_width_sd: *half_width_sd };
            Ok(cmd_tv(out, &model, *ensemble, times, bins, *dt, *eta, cli.seed)?)
        }
        Command::Xovert { ensemble, t_final, dt } => {
            let (_, model) = load_model(cli)?;
            if *ensemble == 0 {
                return usage("--ensemble must be >= 1");
            }
            let cfg = SimConfig::new(*dt, *t_final, 1, cli.seed).map_err(|e| CliError::Usage(e.to_string()))?;
            prepare()?;
            Ok(cmd_xovert(out, &model, *ensemble, &cfg)?)
        }
        Command::Figures { preset } => {
            prepare()?;
            Ok(cmd_figures(out, *preset, cli.seed)?)
        }
    }
}

fn u_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|k| format!("u_{k}")).collect()
}

fn fmt_time(t: f64) -> String {
    format!("{t}").replace('.', "p")
}

fn cmd_simulate(
    out: &Path,
    model: &CircleModel,
    cfg: &SimConfig,
    ensemble: usize,
    init: InitKind,
    s0: State,
    snapshots: &[f64],
) -> Result<()> {
    let init = match init {
        InitKind::Point => EnsembleInit::Fixed(s0),
        InitKind::Mu => EnsembleInit::Measure(model.product_measure()),
    };
    #[derive(Serialize)]
    struct Summary {
        ensemble: usize,
        dt: f64,
        t_final: f64,
        seed: u64,
        files: Vec<String>,
    }
    let mut files = Vec::new();
    if ensemble == 1 {
        let mut stream = RngStream::new(cfg.seed, 0);
        let start = match &init {
            EnsembleInit::Fixed(s) => s.clone(),
            EnsembleInit::Measure(m) => m.sample(&mut stream),
        };
        let traj = simulate(model, &start, cfg, &mut stream)?;
        let mut h = header(&["t", "x", "unwrapped_x"]);
        h.extend(u_names(model.dim()));
        let rows = (0..traj.len()).map(|i| {
            let mut r = vec![traj.times[i], traj.states[i].x, traj.unwrapped_x[i]];
            r.extend(&traj.states[i].u);
            r
        });
        write_csv(&out.join("trajectory.csv"), &h, rows)?;
        files.push("trajectory.csv".into());
    } else {
        let times = if snapshots.is_empty() { vec![cfg.t_final] } else { snapshots.to_vec() };
        let snap = ensemble_snapshots(model, &init, ensemble, cfg, &times)?;
        let mut h = header(&["x"]);
        h.extend(u_names(model.dim()));
        for (t, states) in snap.times.iter().zip(&snap.states) {
            let name = format!("snapshot_t{}.csv", fmt_time(*t));
            write_csv(
                &out.join(&name),
                &h,
                states.iter().map(|s| {
                    let mut r = vec![s.x];
                    r.extend(&s.u);
                    r
                }),
            )?;
            files.push(name);
        }
    }
    write_json(
        &out.join("simulate.json"),
        &Summary { ensemble, dt: cfg.dt, t_final: cfg.t_final, seed: cfg.seed, files },
    )
}

fn cmd_ode(out: &Path, system: SystemKind, y0: [f64; 3], dt: f64, t_final: f64, every: usize) -> Result<()> {
    let sys = match system {
        SystemKind::Full => FlowSystem::Full,
        SystemKind::Rotated => FlowSystem::Rotated,
        SystemKind::Rescaled => FlowSystem::Rescaled,
    };
    let path = rk4_flow(sys, y0, dt, t_final, every)?;
    let energy = |y: &[f64; 3]| match sys {
        FlowSystem::Full => xi_forward(*y).energy(),
        _ => first_integral_h(y[1], y[2]),
    };
    let h0 = energy(&y0);
    let mut drift: f64 = 0.0;
    let rows: Vec<Vec<f64>> = path
        .times
        .iter()
        .zip(&path.states)
        .map(|(t, y)| {
            let h = energy(y);
            if h0.is_finite() {
                drift = drift.max((h - h0).abs());
            }
            vec![*t, y[0], y[1], y[2], h]
        })
        .collect();
    let names: &[&str] = match sys {
        FlowSystem::Full => &["t", "X", "U", "V", "H"],
        FlowSystem::Rotated => &["t", "x", "u", "v", "H"],
        FlowSystem::Rescaled => &["t", "s", "u2", "v2", "H"],
    };
    write_csv(&out.join("path.csv"), &header(names), rows)?;
    let rotated = match sys {
        FlowSystem::Full => xi_forward(y0),
        _ => RotatedState::from_array(y0),
    };
    #[derive(Serialize)]
    struct Summary {
        system: String,
        y0: [f64; 3],
        dt: f64,
        t_final: f64,
        h0: f64,
        max_h_drift: f64,
        leaf: crate::flow::LeafDescriptor,
    }
    write_json(
        &out.join("ode.json"),
        &Summary {
            system: format!("{sys:?}").to_lowercase(),
            y0,
            dt,
            t_final,
            h0,
            max_h_drift: drift,
            leaf: classify_leaf(&rotated, crate::flow::LEAF_TOL),
        },
    )
}

fn cmd_period_table(out: &Path, cmin: f64, cmax: f64, points: usize, log: bool) -> Result<Outcome> {
    let levels = level_grid(cmin, cmax, points, log);
    let rows = period_table(&levels)?;
    write_csv(
        &out.join("period_table.csv"),
        &header(&["c", "c1", "c2", "T_quad", "T_ode", "lower_bound", "T_over_2pi"]),
        rows.iter().map(|r| vec![r.c, r.c1, r.c2, r.t_quad, r.t_ode, r.lower_bound, r.t_over_2pi]),
    )?;
    LinePlot::new("period function", "c", "T(c)")
        .with_series("quadrature", rows.iter().map(|r| (r.c, r.t_quad)).collect())
        .with_series("lower bound", rows.iter().map(|r| (r.c, r.lower_bound)).collect())
        .write(&out.join("period_table.svg"))?;
    let monotone = rows.windows(2).all(|w| w[0].t_quad > w[1].t_quad);
    let bounded = rows
        .iter()
        .all(|r| r.t_quad > PERIOD_INF && r.t_quad < PERIOD_SUP && r.t_quad >= r.lower_bound);
    let cross = rows.iter().map(|r| (r.t_quad - r.t_ode).abs() / r.t_quad).fold(0.0, f64::max);
    #[derive(Serialize)]
    struct Summary {
        points: usize,
        strictly_decreasing: bool,
        within_bounds: bool,
        max_cross_oracle_rel_diff: f64,
        pass: bool,
    }
    let pass = monotone && bounded && cross < 1e-6;
    write_json(
        &out.join("period_table.json"),
        &Summary { points, strictly_decreasing: monotone, within_bounds: bounded, max_cross_oracle_rel_diff: cross, pass },
    )?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail("period table checks".into()) })
}

fn cmd_constants(out: &Path, cfg: &ModelConfig, model: &CircleModel, eta: f64) -> Result<()> {
    let constants = compute_constants(model)?;
    let rate = decay_rate(&constants, eta, model.sigma())?;
    let eps = epsilon_route(&constants, eta)?;
    let star = sigma_star(&constants);
    let sigmas: Vec<f64> = (0..61).map(|i| 10f64.powf(-2.0 + i as f64 * 0.075)).collect();
    let table = rate_vs_sigma_table(model, eta, &sigmas)?;
    write_csv(
        &out.join("rate_vs_sigma.csv"),
        &header(&["sigma", "lambda", "kappa2"]),
        table.rows.iter().map(|r| vec![r.sigma, r.lambda, r.kappa2]),
    )?;
    #[derive(Serialize)]
    struct Report<'a> {
        model: &'a ModelConfig,
        eta: f64,
        constants: &'a crate::hypo::HypoConstants,
        decay_rate: crate::hypo::DecayRate,
        epsilon_route: crate::hypo::EpsilonRoute,
        sigma_star: f64,
        lambda_star: f64,
    }
    let shown = ModelConfig { sigma: model.sigma(), ..cfg.clone() };
    write_json(
        &out.join("constants.json"),
        &Report {
            model: &shown,
            eta,
            constants: &constants,
            decay_rate: rate,
            epsilon_route: eps,
            sigma_star: star,
            lambda_star: table.lambda_star,
        },
    )
}

fn cmd_invariant(
    out: &Path,
    model: &CircleModel,
    n: usize,
    times: &[f64],
    dt: f64,
    init: InitKind,
    seed: u64,
) -> Result<Outcome> {
    let t_final = times.iter().cloned().fold(dt, f64::max);
    let cfg = SimConfig::new(dt, t_final, 1, seed)?;
    let measure = model.product_measure();
    let init = match init {
        InitKind::Point => EnsembleInit::Fixed(model.origin(0.0)),
        InitKind::Mu => EnsembleInit::Measure(measure.clone()),
    };
    let snap = ensemble_snapshots(model, &init, n, &cfg, times)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (t, states) in snap.times.iter().zip(&snap.states) {
        let r = marginal_gof(states, &measure)?;
        let vars: Vec<f64> = (0..model.dim())
            .map(|k| variance(&states.iter().map(|s| s.u[k]).collect::<Vec<_>>()))
            .collect();
        let mut row = vec![*t, r.ks_x];
        row.extend(&r.ks_u);
        row.push(r.critical);
        row.extend(&vars);
        rows.push(row);
        reports.push((t, r, vars));
    }
    let mut h = header(&["t", "ks_x"]);
    h.extend((1..=model.dim()).map(|k| format!("ks_u_{k}")));
    h.push("critical".into());
    h.extend((1..=model.dim()).map(|k| format!("var_u_{k}")));
    write_csv(&out.join("invariant_check.csv"), &h, rows)?;
    #[derive(Serialize)]
    struct Entry {
        t: f64,
        gof: crate::ergodic::GofReport,
        u_variances: Vec<f64>,
    }
    #[derive(Serialize)]
    struct Summary {
        ensemble: usize,
        dt: f64,
        target_variances: Vec<f64>,
        snapshots: Vec<Entry>,
        pass: bool,
    }
    let pass = reports.iter().all(|(_, r, _)| r.pass);
    write_json(
        &out.join("invariant_check.json"),
        &Summary {
            ensemble: n,
            dt,
            target_variances: measure.variances.clone(),
            snapshots: reports.into_iter().map(|(t, gof, v)| Entry { t: *t, gof, u_variances: v }).collect(),
            pass,
        },
    )?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail("KS statistic above the 1% critical value".into()) })
}

#[derive(Debug, Clone, Copy)]
enum Observable {
    U(usize),
    CosX,
    SinX,
}

impl Observable {
    fn parse(s: &str, dim: usize) -> Result<Self> {
        match s {
            "cos-x" => Ok(Self::CosX),
            "sin-x" => Ok(Self::SinX),
            _ => {
                let k: usize = s
                    .strip_prefix('u')
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| anyhow!("unknown observable {s:?} (use u<k>, cos-x or sin-x)"))?;
                if k == 0 || k > dim {
                    bail!("observable {s} out of range 1..={dim}");
                }
                Ok(Self::U(k - 1))
            }
        }
    }

    fn eval(self, x: f64, u: &[f64]) -> f64 {
        match self {
            Self::U(k) => u[k],
            Self::CosX => x.cos(),
            Self::SinX => x.sin(),
        }
    }
}

struct DecayArgs {
    eta: f64,
    outer: usize,
    inner: usize,
    t_max: f64,
    t_step: f64,
    dt: f64,
}

fn cmd_decay(out: &Path, model: &CircleModel, obs: Observable, a: &DecayArgs, seed: u64) -> Result<Outcome> {
    let count = (a.t_max / a.t_step + 1e-9).floor() as usize;
    let times: Vec<f64> = (1..=count).map(|i| i as f64 * a.t_step).collect();
    // Every listed observable is centred under the invariant law.
    let d = observable_decay(
        model,
        move |x, u| obs.eval(x, u),
        0.0,
        &times,
        NestedDesign { outer: a.outer, inner: a.inner },
        a.dt,
        seed,
    )?;
    write_csv(
        &out.join("decay.csv"),
        &header(&["t", "sq_norm", "sq_norm_se", "censored"]),
        (0..times.len()).map(|i| vec![times[i], d.sq_norm[i], d.sq_norm_se[i], d.censored[i] as u8 as f64]),
    )?;
    let c = compute_constants(model)?;
    let theory = decay_rate(&c, a.eta, model.sigma())?;
    #[derive(Serialize)]
    struct Summary<'a> {
        observable: String,
        outer: usize,
        inner: usize,
        dt: f64,
        fit: &'a Option<crate::ergodic::RateFit>,
        lambda_theory: f64,
        pass: bool,
    }
    let pass = d.fit.map(|f| f.rate >= theory.lambda).unwrap_or(false);
    write_json(
        &out.join("decay.json"),
        &Summary {
            observable: format!("{obs:?}"),
            outer: a.outer,
            inner: a.inner,
            dt: a.dt,
            fit: &d.fit,
            lambda_theory: theory.lambda,
            pass,
        },
    )?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail("fitted rate below the theoretical rate".into()) })
}

#[allow(clippy::too_many_arguments)]
fn cmd_tv(
    out: &Path,
    model: &CircleModel,
    n: usize,
    times: &[f64],
    bins: TvBins,
    dt: f64,
    eta: f64,
    seed: u64,
) -> Result<Outcome> {
    let t_final = times.iter().cloned().fold(dt, f64::max);
    let cfg = SimConfig::new(dt, t_final, 1, seed)?;
    let measure = model.product_measure();
    let snap = ensemble_snapshots(model, &EnsembleInit::Fixed(model.origin(0.0)), n, &cfg, times)?;
    let floor = tv_noise_floor(&measure, bins, n, 8, seed);
    let d = tv_decay(&snap.times, &snap.states, &measure, bins, floor);
    write_csv(&out.join("tv_decay.csv"), &header(&["t", "tv"]), d.times.iter().zip(&d.tv).map(|(t, v)| vec![*t, *v]))?;
    let theory = decay_rate(&compute_constants(model)?, eta, model.sigma())?;
    #[derive(Serialize)]
    struct Summary<'a> {
        ensemble: usize,
        bins: TvBins,
        decay: &'a crate::ergodic::TvDecay,
        lambda_theory: f64,
        pass: bool,
    }
    let pass = d.fit.map(|f| f.rate >= theory.lambda).unwrap_or(false);
    write_json(&out.join("tv_decay.json"), &Summary { ensemble: n, bins, decay: &d, lambda_theory: theory.lambda, pass })?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail("no TV decay rate at or above the theoretical rate".into()) })
}

fn drift_observable(x: f64, u: &[f64]) -> f64 {
    // sin(x) U - cos(x) V in raw coordinates, U = sqrt(pi) u_1, V = sqrt(pi) u_2.
    PI.sqrt() * (x.sin() * u[0] - x.cos() * u[1])
}

fn cmd_xovert(out: &Path, model: &CircleModel, n: usize, cfg: &SimConfig) -> Result<Outcome> {
    let snap = ensemble_snapshots(model, &EnsembleInit::Fixed(model.origin(0.0)), n, cfg, &[cfg.t_final])?;
    let t = snap.times[0];
    let summary = x_over_t_summary(t, &snap.unwrapped_x[0], cfg.seed);
    write_csv(
        &out.join("xovert.csv"),
        &header(&["member", "x_over_t"]),
        summary.values.iter().enumerate().map(|(i, v)| vec![i as f64, *v]),
    )?;
    let avg = ergodic_average(model, &model.origin(0.0), cfg, drift_observable, 50)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        t: f64,
        ensemble: usize,
        median_abs_x_over_t: crate::stats::Band,
        drift_time_average: f64,
        drift_se_bootstrap: f64,
        drift_se_batch: f64,
        median_pass: bool,
        average_pass: bool,
        #[serde(skip)]
        _p: std::marker::PhantomData<&'a ()>,
    }
    let median_pass = summary.median_abs.estimate < 0.05;
    let average_pass = avg.average.abs() < 3.0 * avg.se_bootstrap;
    write_json(
        &out.join("xovert.json"),
        &Summary {
            t,
            ensemble: n,
            median_abs_x_over_t: summary.median_abs,
            drift_time_average: avg.average,
            drift_se_bootstrap: avg.se_bootstrap,
            drift_se_batch: avg.se_batch,
            median_pass,
            average_pass,
            _p: std::marker::PhantomData,
        },
    )?;
    Ok(if median_pass && average_pass { Outcome::Pass } else { Outcome::Fail("ergodic checks".into()) })
}

const FIG_SIGMAS: [f64; 3] = [0.1, 1.0, 4.0];

fn cmd_figures(out: &Path, which: Figure, seed: u64) -> Result<Outcome> {
    let wants = |f: Figure| which == Figure::All || which == f;
    let mut failures = Vec::new();
    if wants(Figure::Fig1) {
        fig_sde(out, seed, 750.0, true)?;
    }
    if wants(Figure::Fig2) {
        fig_sde(out, seed, 100.0, false)?;
    }
    if wants(Figure::Fig3) {
        let drift = fig3(out)?;
        if drift >= 1e-8 {
            failures.push(format!("fig3 H drift {drift:e}"));
        }
    }
    if wants(Figure::Fig4) {
        fig4(out)?;
    }
    if wants(Figure::Fig5) {
        let vs: Vec<f64> = (1..=400).map(|i| i as f64 * 0.01).collect();
        let pts: Vec<(f64, f64)> = vs.iter().map(|&v| (v, phi(v).expect("v > 0"))).collect();
        write_csv(&out.join("fig5_phi.csv"), &header(&["v", "phi"]), pts.iter().map(|p| vec![p.0, p.1]))?;
        LinePlot::new("phi(v) = v^2/2 - ln v", "v", "phi").with_series("phi", pts).write(&out.join("fig5_phi.svg"))?;
    }
    if wants(Figure::Fig6) {
        if let Outcome::Fail(m) = cmd_period_table(out, 0.5001, 100.0, 50, true)? {
            failures.push(m);
        }
        for ext in ["csv", "svg", "json"] {
            fs::rename(out.join(format!("period_table.{ext}")), out.join(format!("fig6_period.{ext}")))?;
        }
    }
    Ok(if failures.is_empty() { Outcome::Pass } else { Outcome::Fail(failures.join("; ")) })
}

/// Figure 1 ((U, V) traces) or figure 2 (angle traces) for the motivating model.
fn fig_sde(out: &Path, seed: u64, t_final: f64, uv: bool) -> Result<()> {
    #[derive(Serialize)]
    struct LeafDrift {
        sigma: f64,
        window: f64,
        max_level_change: f64,
    }
    let mut drifts = Vec::new();
    let mut plot = if uv {
        LinePlot::new("(U, V) up to T = 750", "U", "V")
    } else {
        LinePlot::new("angle up to T = 100", "t", "X (unwrapped)")
    };
    for (i, &sigma) in FIG_SIGMAS.iter().enumerate() {
        let model = CircleModel::motivating(sigma);
        let cfg = SimConfig::new(1e-3, t_final, 10, seed)?;
        let traj = simulate(&model, &model.origin(0.0), &cfg, &mut RngStream::new(seed, i as u64))?;
        let tag = format!("sigma_{}", fmt_time(sigma));
        if uv {
            let raw: Vec<Vec<f64>> = traj.states.iter().map(|s| s.raw_u()).collect();
            write_csv(
                &out.join(format!("fig1_{tag}.csv")),
                &header(&["t", "U", "V"]),
                traj.times.iter().zip(&raw).map(|(t, r)| vec![*t, r[0], r[1]]),
            )?;
            plot = plot.with_series(&format!("sigma = {sigma}"), raw.iter().step_by(10).map(|r| (r[0], r[1])).collect());
            // Largest change of the leaf level H over windows of length 10.
            let levels: Vec<f64> = traj
                .states
                .iter()
                .zip(&raw)
                .map(|(s, r)| xi_forward([s.x, r[0], r[1]]).energy())
                .collect();
            let per = ((10.0 / (cfg.dt * cfg.record_every as f64)).round() as usize).max(1);
            let max_change = levels
                .chunks(per)
                .map(|w| {
                    let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    hi - lo
                })
                .fold(0.0, f64::max);
            drifts.push(LeafDrift { sigma, window: 10.0, max_level_change: max_change });
        } else {
            write_csv(
                &out.join(format!("fig2_{tag}.csv")),
                &header(&["t", "x", "unwrapped_x"]),
                (0..traj.len()).map(|k| vec![traj.times[k], traj.states[k].x, traj.unwrapped_x[k]]),
            )?;
            plot = plot.with_series(
                &format!("sigma = {sigma}"),
                traj.times.iter().zip(&traj.unwrapped_x).step_by(10).map(|(t, x)| (*t, *x)).collect(),
            );
        }
    }
    if uv {
        plot.write(&out.join("fig1_uv.svg"))?;
        write_json(&out.join("fig1_leaf_drift.json"), &drifts)?;
    } else {
        plot.write(&out.join("fig2_angle.svg"))?;
    }
    Ok(())
}

/// Deterministic run from (X, U, V) = (0, 0, 2); returns the largest H drift.
fn fig3(out: &Path) -> Result<f64> {
    let y0 = [0.0, 0.0, 2.0];
    let path = rk4_flow(FlowSystem::Full, y0, 1e-3, 1000.0, 10)?;
    let h0 = xi_forward(y0).energy();
    let mut drift: f64 = 0.0;
    let rows: Vec<Vec<f64>> = path
        .times
        .iter()
        .zip(&path.states)
        .map(|(t, y)| {
            let h = xi_forward(*y).energy();
            drift = drift.max((h - h0).abs());
            vec![*t, y[0], y[1], y[2], h]
        })
        .collect();
    write_csv(&out.join("fig3_path.csv"), &header(&["t", "X", "U", "V", "H"]), rows)?;
    LinePlot::new("(U, V) up to T = 1000", "U", "V")
        .with_series("deterministic", path.states.iter().step_by(5).map(|y| (y[1], y[2])).collect())
        .write(&out.join("fig3_uv.svg"))?;
    LinePlot::new("X up to T = 70", "t", "X")
        .with_series(
            "deterministic",
            path.times.iter().zip(&path.states).take_while(|(t, _)| **t <= 70.0).map(|(t, y)| (*t, y[0])).collect(),
        )
        .write(&out.join("fig3_x.svg"))?;
    write_json(&out.join("fig3_conservation.json"), &serde_json::json!({ "h0": h0, "max_h_drift": drift }))?;
    Ok(drift)
}

/// Level sets of H: a grid of values and explicit curves of the upper leaves.
fn fig4(out: &Path) -> Result<()> {
    let n = 121;
    let grid: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect();
    let mut rows = Vec::with_capacity(n * n);
    for &u in &grid {
        for &v in &grid {
            rows.push(vec![u, v, first_integral_h(u, v)]);
        }
    }
    write_csv(&out.join("fig4_grid.csv"), &header(&["u", "v", "H"]), rows)?;
    let mut plot = LinePlot::new("level sets of H (v > 0)", "u", "v");
    let mut curve_rows = Vec::new();
    for &c in &[0.6, 1.0, SQRT_2, 2.0, 3.0] {
        let (c1, c2) = phi_roots(c)?;
        let m = 400;
        let mut upper = Vec::with_capacity(m + 1);
        let mut lower = Vec::with_capacity(m + 1);
        for i in 0..=m {
            // Cosine spacing resolves the turning points at c1 and c2.
            let s = 0.5 - 0.5 * (PI * i as f64 / m as f64).cos();
            let v = c1 + s * (c2 - c1);
            let u = (2.0 * (c - phi(v)?)).max(0.0).sqrt();
            upper.push((u, v));
            lower.push((-u, v));
            curve_rows.push(vec![c, u, v]);
            curve_rows.push(vec![c, -u, v]);
        }
        lower.reverse();
        upper.extend(lower);
        plot = plot.with_series(&format!("c = {c:.3}"), upper);
    }
    write_csv(&out.join("fig4_curves.csv"), &header(&["c", "u", "v"]), curve_rows)?;
    plot.write(&out.join("fig4_levels.svg"))?;
    Ok(())
}

/// TV of a snapshot, exposed for the CLI's quick-look tooling.
pub fn snapshot_tv(states: &[State], model: &CircleModel, bins: TvBins) -> f64 {
    empirical_tv(states, &model.product_measure(), bins)
}

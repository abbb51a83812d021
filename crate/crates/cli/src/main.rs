mod files;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use opamp_core::design::{propose, run_design, DesignConfig, DesignState, VerdictStatus};
use opamp_core::library;
use opamp_core::netlist::{elaborate, parse_netlist, Topology};
use opamp_core::oracle::{ac_sweep, simulate, write_sweep_csv, MeasuredMetrics};
use opamp_core::symbolic::derive_transfer_function;
use rayon::prelude::*;
use serde::Serialize;

const EXIT_CODES: &str = "Exit codes:
  0  success (design: every run accepted)
  2  bad input (usage, netlist or spec syntax, unbound variable)
  3  design rejected
  4  file read or write failed
  5  analysis failed";

#[derive(Parser)]
#[command(name = "opamp", version, about = "White-box behavioral op-amp design", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the transfer functions, hypotheses, pole/zero expressions and metric formulas.
    Derive {
        /// Netlist file, or a built-in topology name (mzc, smc, nmc, single_stage).
        netlist: String,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run the propose, optimize, simulate and check loop; write a JSON report.
    Design {
        /// One or more netlist files or built-in names.
        #[arg(required = true)]
        netlists: Vec<String>,
        /// key = value file with spec targets and margin overrides.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_iter: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
        /// Report path; a directory when several netlists are given.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel runs across netlists.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// AC-sweep a design point; write a CSV sweep and measured metrics.
    Simulate {
        netlist: String,
        /// key = value design values, or a design report (its final x* is used).
        values: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        from: f64,
        #[arg(long, default_value_t = 1e10)]
        to: f64,
        /// Points per decade.
        #[arg(long, default_value_t = 20)]
        ppd: usize,
        /// Output prefix: writes PREFIX.csv and PREFIX.json.
        #[arg(long, default_value = "sim")]
        out: PathBuf,
    },
    /// Pretty-print a design report.
    Report { report: PathBuf },
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Rule id to switch off (c-dominance, c-zero-lhp, c-zero-rhp, c-complex, c-cancel, b-separation).
    #[arg(long = "disable-rule")]
    disable_rule: Vec<String>,
    #[arg(long)]
    k_dom: Option<f64>,
    #[arg(long)]
    k_sep: Option<f64>,
    #[arg(long)]
    kappa_p: Option<f64>,
    #[arg(long)]
    kappa_z: Option<f64>,
    #[arg(long)]
    zeta_min: Option<f64>,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Io(anyhow::Error),
    Analysis(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Io(_) => 4,
            Failure::Analysis(_) => 5,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Io(e) | Failure::Analysis(e) => e,
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Derive { netlist, model } => cmd_derive(&netlist, &model),
        Command::Design {
            netlists,
            spec,
            seed,
            max_iter,
            model,
            out,
            jobs,
        } => cmd_design(&netlists, spec.as_deref(), seed, max_iter, &model, out.as_deref(), jobs),
        Command::Simulate {
            netlist,
            values,
            from,
            to,
            ppd,
            out,
        } => cmd_simulate(&netlist, &values, from, to, ppd, &out),
        Command::Report { report } => cmd_report(&report),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

/// Read a netlist file, falling back to the built-in library by name.
fn load_topology(arg: &str) -> Result<(String, Topology), Failure> {
    let path = Path::new(arg);
    let (name, src) = if path.exists() {
        let src = std::fs::read_to_string(path)
            .with_context(|| format!("reading {arg}"))
            .map_err(Failure::Io)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| arg.into());
        (stem, src)
    } else if let Some(src) = library::by_name(arg) {
        (arg.to_ascii_lowercase(), src.to_string())
    } else {
        return Err(Failure::Io(anyhow!("{arg}: no such file or built-in topology")));
    };
    let t = parse_netlist(&src)
        .and_then(|t| elaborate(&t))
        .map_err(|e| Failure::Input(anyhow!("{arg}: {e}")))?;
    Ok((name, t))
}

fn apply_model_args(args: &ModelArgs, cfg: &mut DesignConfig) -> Result<(), Failure> {
    for id in &args.disable_rule {
        if !cfg.rules.set(id, false) {
            return Err(Failure::Input(anyhow!("unknown rule `{id}`")));
        }
    }
    let m = &mut cfg.margins;
    for (value, slot) in [
        (args.k_dom, &mut m.k_dom),
        (args.k_sep, &mut m.k_sep),
        (args.kappa_p, &mut m.kappa_p),
        (args.kappa_z, &mut m.kappa_z),
        (args.zeta_min, &mut m.zeta_min),
    ] {
        if let Some(v) = value {
            if !(v.is_finite() && v > 0.0) {
                return Err(Failure::Input(anyhow!("margins must be positive, got {v}")));
            }
            *slot = v;
        }
    }
    Ok(())
}

fn cmd_derive(netlist: &str, model: &ModelArgs) -> CmdResult {
    let (_, t) = load_topology(netlist)?;
    let mut cfg = DesignConfig::default();
    apply_model_args(model, &mut cfg)?;
    let p = propose(&t, &cfg.margins, &cfg.rules).map_err(|e| Failure::Analysis(e.into()))?;
    let mut s = String::new();
    let _ = writeln!(s, "Raw transfer function\n{}", indent(&p.raw.to_string()));
    let _ = writeln!(s, "Intermediate transfer function\n{}", indent(&p.intermediate.to_string()));
    let _ = writeln!(s, "Coefficients");
    for r in &p.simplification.reports {
        let _ = writeln!(s, "  {} = {}", r.label, r.exact);
        if r.simplified != r.exact {
            let _ = writeln!(s, "  {} ~ {}", r.label, r.simplified);
        }
    }
    let _ = writeln!(s, "\nSimplified transfer function\n{}", indent(&p.simplification.tf.to_string()));
    let _ = writeln!(s, "Hypotheses");
    for h in &p.hypotheses {
        let _ = writeln!(s, "  {h}");
    }
    let _ = writeln!(s, "\nPoles and zeros");
    for r in p.pz.zeros.iter().chain(&p.pz.poles) {
        let _ = writeln!(s, "  {} = {}  ({:?})", r.label, r.root, r.plane);
    }
    for c in p.pz.zero_pairs.iter().chain(&p.pz.pole_pairs) {
        let _ = writeln!(s, "  {}: omega_n^2 = {}, zeta^2 = {}", c.label, c.omega_n_sq, c.zeta_sq);
    }
    let _ = writeln!(s, "\nMetric formulas\n{}", p.formulas);
    print!("{s}");
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_design(
    netlists: &[String],
    spec: Option<&Path>,
    seed: u64,
    max_iter: Option<usize>,
    model: &ModelArgs,
    out: Option<&Path>,
    jobs: usize,
) -> CmdResult {
    let mut cfg = DesignConfig::default();
    if let Some(path) = spec {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Io)?;
        files::apply_spec_file(&text, &mut cfg)
            .with_context(|| path.display().to_string())
            .map_err(Failure::Input)?;
    }
    if let Some(n) = max_iter {
        if n == 0 {
            return Err(Failure::Input(anyhow!("--max-iter must be at least 1")));
        }
        cfg.max_iter = n;
    }
    apply_model_args(model, &mut cfg)?;
    cfg.specs.validate().map_err(|e| Failure::Input(e.into()))?;
    cfg.settings.seed = seed;

    let topologies = netlists.iter().map(|n| load_topology(n)).collect::<Result<Vec<_>, _>>()?;
    let targets: Vec<PathBuf> = if topologies.len() == 1 {
        vec![out.map(Path::to_path_buf).unwrap_or_else(|| report_name(&topologies[0].0))]
    } else {
        let dir = out.unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::Io)?;
        topologies.iter().map(|(name, _)| dir.join(report_name(name))).collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::Analysis(e.into()))?;
    let states: Vec<DesignState> = pool.install(|| {
        topologies
            .par_iter()
            .map(|(_, t)| run_design(t, &cfg, seed))
            .collect()
    });
    let mut all_accepted = true;
    for ((name, _), (state, path)) in topologies.iter().zip(states.iter().zip(&targets)) {
        let json = serde_json::to_vec_pretty(state).map_err(|e| Failure::Analysis(e.into()))?;
        files::write_atomic(path, &json)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Io)?;
        let outcome = match (state.status, state.accepted) {
            (VerdictStatus::Accept, Some(i)) => format!("ACCEPT at iteration {i}"),
            _ => format!("REJECT after {} iteration(s)", state.iterations.len()),
        };
        println!("{name}: {outcome}; report {}", path.display());
        if let Some(last) = state.final_iteration() {
            println!("  {}", last.rationale);
        }
        all_accepted &= state.status == VerdictStatus::Accept;
    }
    Ok(if all_accepted { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn report_name(name: &str) -> PathBuf {
    PathBuf::from(format!("{name}.report.json"))
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    values: &'a BTreeMap<String, f64>,
    measured: &'a MeasuredMetrics,
    exact_zeros: &'a [num_complex::Complex64],
    exact_poles: &'a [num_complex::Complex64],
    warnings: &'a [String],
}

fn cmd_simulate(netlist: &str, values_path: &Path, from: f64, to: f64, ppd: usize, out: &Path) -> CmdResult {
    let (_, t) = load_topology(netlist)?;
    let values = files::read_values(values_path).map_err(|e| {
        if e.downcast_ref::<std::io::Error>().is_some() {
            Failure::Io(e)
        } else {
            Failure::Input(e)
        }
    })?;
    let mut warnings = Vec::new();
    for name in values.keys() {
        match t.variable(name) {
            None => return Err(Failure::Input(anyhow!("`{name}` is not a variable of the netlist"))),
            Some(v) if v.is_fixed() => warnings.push(format!("{name} is fixed in the netlist; value ignored")),
            Some(_) => {}
        }
    }
    let missing: Vec<&str> = t
        .free_variables()
        .filter(|v| !values.contains_key(&v.name))
        .map(|v| v.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Failure::Input(anyhow!("unbound variable(s): {}", missing.join(", "))));
    }
    for v in t.free_variables() {
        let x = values[&v.name];
        if !(x.is_finite() && x > 0.0) {
            return Err(Failure::Input(anyhow!("{} must be positive, got {x}", v.name)));
        }
        let (lo, hi) = v.range();
        if x < lo * (1.0 - 1e-9) || x > hi * (1.0 + 1e-9) {
            warnings.push(format!("{} = {x:e} is outside its range [{lo:e}, {hi:e}]", v.name));
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let analysis = |e: &dyn std::fmt::Display| Failure::Analysis(anyhow!("{e}"));
    let (raw, _) = derive_transfer_function(&t).map_err(|e| analysis(&e))?;
    let sim = simulate(&t, &raw, &values).map_err(|e| analysis(&e))?;
    let sweep = ac_sweep(&sim.tf, from, to, ppd).map_err(|e| Failure::Input(e.into()))?;

    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &sweep, sim.tf.dc_sign()).map_err(|e| analysis(&e))?;
    let csv_path = out.with_extension("csv");
    files::write_atomic(&csv_path, &csv)
        .with_context(|| format!("writing {}", csv_path.display()))
        .map_err(Failure::Io)?;
    let summary = SimulationOutput {
        values: &values,
        measured: &sim.measured,
        exact_zeros: &sim.exact.zeros,
        exact_poles: &sim.exact.poles,
        warnings: &warnings,
    };
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| analysis(&e))?;
    let json_path = out.with_extension("json");
    files::write_atomic(&json_path, &json)
        .with_context(|| format!("writing {}", json_path.display()))
        .map_err(Failure::Io)?;
    println!("{}", measured_line(&sim.measured));
    println!("sweep {}, metrics {}", csv_path.display(), json_path.display());
    Ok(ExitCode::SUCCESS)
}

fn measured_line(m: &MeasuredMetrics) -> String {
    let opt = |v: Option<f64>, scale: f64, digits: usize| {
        v.map(|x| format!("{:.*}", digits, x * scale)).unwrap_or_else(|| "n/a".into())
    };
    format!(
        "gain {:.2} dB, GBW {} MHz, PM {} deg, power {:.2} uW, FoM {}",
        m.gain_db,
        opt(m.gbw_hz, 1e-6, 4),
        opt(m.pm_deg, 1.0, 2),
        m.power_w * 1e6,
        opt(m.fom, 1.0, 1)
    )
}

fn cmd_report(path: &Path) -> CmdResult {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Io)?;
    let state: DesignState = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::Input)?;
    print!("{}", render_report(&state));
    Ok(ExitCode::SUCCESS)
}

fn render_report(state: &DesignState) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} (seed {}): {:?}", state.schema, state.seed, state.status);
    if let Some(i) = state.accepted {
        let _ = writeln!(s, "accepted at iteration {i}");
    }
    for it in &state.iterations {
        let _ = writeln!(
            s,
            "\nIteration {}: K_dom {}, K_sep {}, kappa_p {}, PM band [{}, {}] deg",
            it.index, it.margins.k_dom, it.margins.k_sep, it.margins.kappa_p, it.pm_opt_band.0, it.pm_opt_band.1
        );
        if let Some(e) = &it.error {
            let _ = writeln!(s, "  error: {e}");
        }
        let _ = writeln!(s, "  {} hypotheses", it.hypotheses.len());
        if let Some(o) = &it.opt {
            let _ = writeln!(s, "  optimizer: {:?}, {} of {} starts feasible", o.status, o.starts_feasible, o.starts_tried);
            let x: Vec<String> = o.x_star.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
            let _ = writeln!(s, "  x*: {}", x.join(" "));
            if let Some(p) = &o.predicted {
                let _ = writeln!(s, "  predicted: {p}");
            }
            if !o.active_constraints.is_empty() {
                let _ = writeln!(s, "  active: {}", o.active_constraints.join(", "));
            }
        }
        if let Some(m) = &it.measured {
            let _ = writeln!(s, "  measured:  {}", measured_line(m));
        }
        for m in &it.pz_comparison {
            let label = m.label.as_deref().unwrap_or("-");
            let hz = |c: Option<num_complex::Complex64>| {
                c.map(|c| format!("{:.4e} Hz", c.norm() / (2.0 * std::f64::consts::PI)))
                    .unwrap_or_else(|| "n/a".into())
            };
            let err = m.rel_error.map(|e| format!("{:.1}%", e * 100.0)).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(s, "  {label}: approx {}, exact {}, error {err}", hz(m.approx), hz(m.exact));
        }
        let _ = writeln!(s, "  {}", it.rationale);
    }
    s
}

fn indent(text: &str) -> String {
    text.lines().filter(|l| !l.is_empty()).map(|l| format!("  {l}\n")).collect()
}

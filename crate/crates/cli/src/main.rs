use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use fracinv::corpus::{load_corpus, run_corpus, CorpusMode};
use fracinv::fracnum::{delay_fode_oracle, DelayProblem, UniformGrid};
use fracinv::funcalg::{f64_to_q, SymExpr};
use fracinv::invariance::{check_invariance_mode, reduce_to_fode_system_mode, FODESystem, Mode};
use fracinv::report::{fmt_f64, Report};
use fracinv::solutions::{
    assemble_solution, check_initial_conditions, solve_delay_linear_fode, solve_fode_system, verify_with_refinement,
    DelaySpec, SpaceTimeSolution, TimeProfile, MIN_STEPS,
};
use fracinv::specfun::{ml_eval, MLParams};

mod problem;
use problem::{parse_problem, Problem};

/// Residual tolerance for closed forms checked against the operator.
const RESIDUAL_TOL: f64 = 5e-3;
/// Sup-norm tolerance for delay profiles against the step oracle.
const DELAY_TOL: f64 = 1e-4;
const TRAJECTORY_SAMPLES: usize = 100;

#[derive(Parser)]
#[command(
    name = "fracinv",
    version,
    about = "Invariant subspaces and exact solutions of time-fractional CRD-wave equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Also write the key = value report here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Time step, overriding the problem grid.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Seed for random draws.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Invariance of the subspace under the operator.
    Check { problem: PathBuf },
    /// The reduced fractional ODE system.
    Reduce { problem: PathBuf },
    /// Closed-form profiles and a sampled trajectory.
    Solve {
        problem: PathBuf,
        /// Trajectory CSV; defaults to the problem path with extension `traj.csv`.
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Residual and initial-data checks of the closed form.
    Verify { problem: PathBuf },
    /// Batch invariance run over a corpus file.
    Corpus {
        file: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Rational)]
        mode: ModeArg,
    },
    /// Mittag-Leffler function E^rho_{alpha,beta}(z).
    #[command(alias = "ml-eval", allow_negative_numbers = true)]
    Ml {
        alpha: f64,
        beta: f64,
        z: f64,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Rational,
    Numeric,
}

enum Failure {
    /// Bad arguments or files; exit 2.
    Input(String),
    /// The check ran and did not pass; exit 1. The report, if any, is
    /// still printed.
    Check(String, Option<Report>),
}

use Failure::{Check, Input};

type Outcome = Result<Report, Failure>;

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Input(e.to_string())
}

fn fail<E: std::fmt::Display>(e: E) -> Failure {
    Check(e.to_string(), None)
}

fn load(path: &Path) -> Result<Problem, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Input(format!("{}: {e}", path.display())))?;
    parse_problem(&text, &path.display().to_string()).map_err(Input)
}

fn mode_of(p: &Problem) -> Mode {
    p.instance.check_mode(false)
}

fn header(r: &mut Report, kind: &str, path: &Path, p: &Problem) {
    r.push("report", kind);
    r.push("problem", path.display());
    r.push("entry", &p.entry.id);
    r.push("class", p.entry.class);
    r.push("basis.kind", p.instance.basis.kind);
    r.push("basis.dimension", p.instance.basis.dimension());
    for (m, xi) in p.instance.basis.members().iter().enumerate() {
        r.push(format!("basis.member.{}", m + 1), xi);
    }
    for (v, x) in p.instance.basis.bindings.iter() {
        r.push(format!("basis.binding.{v}"), fmt_f64(*x));
    }
}

fn check(path: &Path) -> Outcome {
    let p = load(path)?;
    let mode = mode_of(&p);
    let rep = check_invariance_mode(&p.instance.operator, &p.instance.basis, &mode).map_err(input)?;
    let mut r = Report::new();
    header(&mut r, "check", path, &p);
    r.push("checked", if matches!(mode, Mode::Exact) { "exact" } else { "numeric" });
    r.push("invariant", rep.invariant);
    r.push_f64("max_residual", rep.max_residual);
    for (m, c) in rep.psi.iter().enumerate() {
        r.push(format!("psi.{}", m + 1), c);
    }
    if !rep.invariant {
        r.push("residual", &rep.residual);
        if let Some(w) = &rep.witness {
            r.push("witness", w.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(","));
        }
    }
    finish(r, rep.invariant, "subspace is not invariant")
}

fn finish(mut r: Report, pass: bool, why: &str) -> Outcome {
    r.push("status", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(r)
    } else {
        // the report is still written before failing
        Err(Check(why.into(), Some(r)))
    }
}

fn reduced(p: &Problem) -> Result<FODESystem, Failure> {
    reduce_to_fode_system_mode(&p.instance.operator, &p.instance.basis, &mode_of(p)).map_err(fail)
}

fn reduce(path: &Path) -> Outcome {
    let p = load(path)?;
    let sys = reduced(&p)?;
    let mut r = Report::new();
    header(&mut r, "reduce", path, &p);
    for (m, line) in sys.render().iter().enumerate() {
        r.push(format!("equation.{}", m + 1), line);
    }
    Ok(r)
}

/// Profiles for the problem's time data; delay problems get delay series.
fn profiles(p: &Problem, sys: &FODESystem, horizon: f64) -> Result<(f64, Vec<TimeProfile>), Failure> {
    let t = p.time.as_ref().ok_or_else(|| Input("the problem has no [time] block".into()))?;
    let bindings = p.instance.basis.bindings.clone();
    let base = solve_fode_system(sys, &bindings, t.alpha, &t.nu, t.mu.as_deref()).map_err(input)?;
    let Some(d) = &p.delay else { return Ok((t.alpha, base)) };
    let mut out = Vec::with_capacity(base.len());
    for (i, prof) in base.into_iter().enumerate() {
        let TimeProfile::MLLinear { gamma, .. } = prof else {
            return Err(Input(format!("delay problems need diagonal linear equations; equation {} is not", i + 1)));
        };
        let history: Arc<dyn Fn(f64) -> f64 + Send + Sync> = match &d.history {
            None => {
                let k = t.nu[i];
                Arc::new(move |_| k)
            }
            Some(hs) => {
                let e = hs
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Input(format!("delay.history has {} entries, need {}", hs.len(), t.nu.len())))?;
                Arc::new(move |s| e.eval_f64(&|n| (n == "t").then_some(s)).unwrap_or(f64::NAN))
            }
        };
        let spec = DelaySpec {
            gamma,
            mu: d.mu,
            tau: d.tau,
            alpha: t.alpha,
            history,
            kappa: t.nu[i],
            kappa_hat: t.mu.as_ref().map(|m| m[i]),
        };
        out.push(solve_delay_linear_fode(spec, horizon).map_err(input)?);
    }
    Ok((t.alpha, out))
}

fn describe(r: &mut Report, profiles: &[TimeProfile]) {
    for (m, p) in profiles.iter().enumerate() {
        let k = format!("profile.{}", m + 1);
        r.push(format!("{k}.kind"), p.kind());
        match p {
            TimeProfile::MLLinear { alpha, gamma, nu, mu } => {
                r.push_f64(format!("{k}.gamma"), *gamma);
                r.push_f64(format!("{k}.nu"), *nu);
                let mut f = format!("{nu} E({alpha},1; {gamma} t^{alpha})");
                if *alpha > 1.0 {
                    r.push_f64(format!("{k}.mu"), *mu);
                    f += &format!(" + {mu} t E({alpha},2; {gamma} t^{alpha})");
                }
                r.push(format!("{k}.formula"), f);
            }
            TimeProfile::PowerChain { alpha, nu, mu, source } => {
                r.push_f64(format!("{k}.nu"), *nu);
                if *alpha > 1.0 {
                    r.push_f64(format!("{k}.mu"), *mu);
                }
                let src: Vec<String> = source.iter().map(|c| fmt_f64(*c)).collect();
                r.push(format!("{k}.source"), src.join(","));
                let mut f = if *alpha > 1.0 { format!("{nu} + {mu} t") } else { format!("{nu}") };
                for (j, c) in source.iter().enumerate() {
                    if *c != 0.0 {
                        f += &format!(
                            " + {c} Gamma({}) / Gamma({}) t^{}",
                            j + 1,
                            alpha + j as f64 + 1.0,
                            alpha + j as f64
                        );
                    }
                }
                r.push(format!("{k}.formula"), f);
            }
            TimeProfile::DelaySeries(d) => {
                let s = &d.spec;
                r.push_f64(format!("{k}.gamma"), s.gamma);
                r.push_f64(format!("{k}.delay_mu"), s.mu);
                r.push_f64(format!("{k}.tau"), s.tau);
                r.push_f64(format!("{k}.kappa"), s.kappa);
                r.push_opt_f64(format!("{k}.kappa_hat"), s.kappa_hat);
                r.push(
                    format!("{k}.formula"),
                    format!(
                        "sum over m <= t/{tau} of {kappa} {mu}^m (t - m {tau})^({a} m) E^(m+1)({a},{a} m + 1; {g} (t - m {tau})^{a}) + history term",
                        tau = s.tau,
                        kappa = s.kappa,
                        mu = s.mu,
                        a = s.alpha,
                        g = s.gamma
                    ),
                );
                if let Some(w) = &d.warning {
                    r.push(format!("{k}.warning"), w);
                }
            }
        }
    }
}

fn solve(path: &Path, traj: Option<PathBuf>) -> Outcome {
    let p = load(path)?;
    let sys = reduced(&p)?;
    let (alpha, profs) = profiles(&p, &sys, p.grid.t_final)?;
    let sol = assemble_solution(p.instance.basis.clone(), profs, alpha).map_err(input)?;
    let mut r = Report::new();
    header(&mut r, "solve", path, &p);
    r.push("alpha", alpha);
    describe(&mut r, &sol.profiles);
    let terms: Vec<String> =
        sol.spatial_parts().iter().enumerate().map(|(m, s)| format!("Phi{}(t) * ({s})", m + 1)).collect();
    r.push("solution", terms.join(" + "));

    let traj = traj.unwrap_or_else(|| path.with_extension("traj.csv"));
    let mut csv = String::from("t");
    for m in 0..sol.profiles.len() {
        csv += &format!(",Phi{}", m + 1);
    }
    csv.push('\n');
    for k in 0..=TRAJECTORY_SAMPLES {
        let t = p.grid.t_final * k as f64 / TRAJECTORY_SAMPLES as f64;
        csv += &fmt_f64(t);
        for prof in &sol.profiles {
            csv.push(',');
            csv += &fmt_f64(prof.value(t).map_err(fail)?);
        }
        csv.push('\n');
    }
    fs::write(&traj, csv).map_err(|e| Input(format!("{}: {e}", traj.display())))?;
    r.push("trajectory", traj.display());
    r.push("trajectory.samples", TRAJECTORY_SAMPLES + 1);
    Ok(r)
}

/// u(x, 0) and, for orders above 1, du/dt(x, 0) from the time data.
fn initial_data(
    sol: &SpaceTimeSolution,
    nu: &[f64],
    mu: Option<&[f64]>,
) -> Result<(SymExpr, Option<SymExpr>), Failure> {
    let combine = |c: &[f64]| -> Result<SymExpr, Failure> {
        let mut e = SymExpr::zero();
        for (v, xi) in c.iter().zip(sol.basis.members()) {
            let q = f64_to_q(*v).ok_or_else(|| Input(format!("initial coefficient {v} is not finite")))?;
            e = e.add(&xi.scale_q(&q));
        }
        Ok(e)
    };
    Ok((combine(nu)?, mu.map(combine).transpose()?))
}

fn verify(path: &Path, h: Option<f64>) -> Outcome {
    let p = load(path)?;
    let h = h.unwrap_or(p.grid.h);
    let grid = UniformGrid::covering(p.grid.t_final, h).map_err(input)?;
    if grid.n_steps < MIN_STEPS {
        return Err(Input(format!("{} time steps, at least {MIN_STEPS} needed", grid.n_steps)));
    }
    let sys = reduced(&p)?;
    let (alpha, profs) = profiles(&p, &sys, p.grid.t_final)?;
    let sol = assemble_solution(p.instance.basis.clone(), profs, alpha).map_err(input)?;
    let t = p.time.as_ref().expect("checked in profiles");
    let points = p.grid.space_points();

    let mut r = Report::new();
    header(&mut r, "verify", path, &p);
    r.push("alpha", alpha);
    r.push_f64("grid.h", grid.h);
    r.push("grid.n_steps", grid.n_steps);
    r.push("grid.space_points", points.len());
    describe(&mut r, &sol.profiles);

    let mut pass = true;
    if let Some(d) = &p.delay {
        let tol = p.grid.tol.unwrap_or(DELAY_TOL);
        r.push_f64("delay.tol", tol);
        let mut worst = 0.0f64;
        for (m, prof) in sol.profiles.iter().enumerate() {
            let TimeProfile::DelaySeries(s) = prof else { unreachable!() };
            let problem = DelayProblem { gamma: s.spec.gamma, mu: d.mu, tau: d.tau, alpha };
            let history = s.spec.history.clone();
            let tr = delay_fode_oracle(problem, &move |x| history(x), s.spec.kappa, s.spec.kappa_hat, grid)
                .map_err(input)?;
            let mut sup = 0.0f64;
            for (k, tk) in grid.times().into_iter().enumerate().skip(1) {
                let v = prof.value(tk).map_err(fail)?;
                let diff = (v - tr.values[k][0]).abs();
                if diff > sup || diff.is_nan() {
                    sup = diff;
                }
            }
            r.push_f64(format!("delay.{}.sup_vs_oracle", m + 1), sup);
            worst = if sup.is_nan() { f64::NAN } else { worst.max(sup) };
        }
        r.push_f64("delay.max", worst);
        pass &= worst <= tol;
    } else {
        let tol = p.grid.tol.unwrap_or(RESIDUAL_TOL);
        let (coarse, fine) =
            verify_with_refinement(&p.instance.operator, &sol, &points, grid, p.grid.t_min).map_err(fail)?;
        r.push_f64("residual.tol", tol);
        r.push_f64("residual.t_min", coarse.t_min);
        r.push_f64("residual.max", coarse.max_residual);
        r.push_f64("residual.max_half_step", fine.max_residual);
        r.push_opt_f64("residual.slope", coarse.convergence_slope);
        let (a, b, c) = coarse.argmax;
        r.push("residual.argmax", format!("{},{},{}", fmt_f64(a), fmt_f64(b), fmt_f64(c)));
        let settled = coarse.max_residual <= 1e-10 || fine.max_residual < coarse.max_residual;
        r.push("residual.decreasing", settled);
        pass &= coarse.max_residual <= tol && settled;
    }

    let (phi1, phi2) = initial_data(&sol, &t.nu, t.mu.as_deref())?;
    let ic = check_initial_conditions(&sol, &phi1, phi2.as_ref(), &points).map_err(fail)?;
    r.push("initial.exact", ic.exact);
    r.push_f64("initial.max_spot_error", ic.max_spot_error);
    for (i, (which, m, want, got)) in ic.mismatches.iter().enumerate() {
        r.push(
            format!("initial.mismatch.{}", i + 1),
            format!("{which} coordinate {} want {} got {}", m + 1, fmt_f64(*want), fmt_f64(*got)),
        );
    }
    pass &= ic.passed();
    finish(r, pass, "verification failed")
}

fn corpus(file: &Path, trials: usize, mode: ModeArg, seed: u64) -> Outcome {
    let c = load_corpus(file).map_err(input)?;
    for w in &c.warnings {
        eprintln!("warning: {w}");
    }
    let mode = match mode {
        ModeArg::Rational => CorpusMode::Rational,
        ModeArg::Numeric => CorpusMode::Numeric,
    };
    let rep = run_corpus(&c.entries, trials, mode, seed).map_err(input)?;
    let mut r = Report::new();
    r.push("file", file.display());
    r.extend("corpus", &rep.to_report());
    let pass = rep.all_as_expected();
    for e in rep.discrepancies() {
        eprintln!("{}: expected {}, got {}", e.id, e.expect, e.verdict);
    }
    if pass {
        Ok(r)
    } else {
        Err(Check("corpus has unexpected verdicts".into(), Some(r)))
    }
}

fn ml(alpha: f64, beta: f64, rho: f64, z: f64) -> Outcome {
    let v = ml_eval(MLParams::new(alpha, beta, rho), z).map_err(input)?;
    let mut r = Report::new();
    r.push("report", "ml");
    r.push("alpha", alpha);
    r.push("beta", beta);
    r.push("rho", rho);
    r.push("z", z);
    r.push("value", v.value);
    r.push_f64("condition", v.condition);
    r.push("terms", v.terms);
    Ok(r)
}

fn write_out(out: &Option<PathBuf>, r: &str) -> Result<(), Failure> {
    if let Some(path) = out {
        fs::write(path, r).map_err(|e| Input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check { problem } => check(problem),
        Command::Reduce { problem } => reduce(problem),
        Command::Solve { problem, traj } => solve(problem, traj.clone()),
        Command::Verify { problem } => verify(problem, cli.h),
        Command::Corpus { file, trials, mode } => corpus(file, *trials, *mode, cli.seed),
        Command::Ml { alpha, beta, z, rho } => ml(*alpha, *beta, *rho, *z),
    };
    match result {
        Ok(r) => {
            if let Command::Ml { .. } = cli.command {
                println!("{}", r.get("value").unwrap_or("nan"));
            } else {
                print!("{}", r.render());
            }
            match write_out(&cli.out, &r.render()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(Input(m)) | Err(Check(m, _)) => {
                    eprintln!("error: {m}");
                    ExitCode::from(2)
                }
            }
        }
        Err(Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Check(why, report)) => {
            if let Some(r) = report {
                print!("{}", r.render());
                if let Err(Input(m)) = write_out(&cli.out, &r.render()) {
                    eprintln!("error: {m}");
                }
            }
            eprintln!("FAIL: {why}");
            ExitCode::from(1)
        }
    }
}

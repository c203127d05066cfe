//! One function per subcommand. Each writes its result tables through a
//! [`Sink`] and reports what it resolved for the manifest.

use std::path::PathBuf;

use serde_json::{json, Value};
use spmoran::birth_death::{
    exit_point_law, log_mean_hitting_time_down, log_mean_hitting_time_up, mean_hitting_time_down,
    mean_hitting_time_up, pi_products_log,
};
use spmoran::bounds::{conditioned_rates, CoupledTriple};
use spmoran::harness::{
    estimate_discovery_time, estimate_persistence_time, renewal_decomposition, HittingConfig, PersistenceStart,
    RenewalMode, DEFAULT_STEP_CAP,
};
use spmoran::linalg::{absorption_probability, hitting_times, stationary_distribution};
use spmoran::moran::{full_transition_matrix, jump_rate, occupancy_transition_matrix, run_trajectory};
use spmoran::quasispecies::{
    classify_phase, critical_alpha, generating_function_coefficients, quasispecies_curve, rho_star_closed,
    rho_star_recurrence,
};
use spmoran::stats::batch_means;
use spmoran::{
    replica_rng, BirthDeathSpec, BoundingChainKind, BoundingMaps, InitialState, LumpedMutationMatrix, OccupancyDistribution,
    Parameters, Population, SimulationConfig, Trajectory,
};

use crate::config::Settings;
use crate::output::{Format, Sink, Table};
use crate::CliError;

pub const DEFAULT_OUTPUT: &str = "spmoran-out";
const SUMMARY_BATCHES: usize = 32;

/// What a finished command hands back for the manifest.
#[derive(Debug, Default)]
pub struct Report {
    pub parameters: Option<Parameters>,
    pub config: Option<Value>,
    /// 0, or 2/3 when results were written but a check failed or statistics are incomplete.
    pub status: u8,
    pub message: Option<String>,
}

fn need<T: Copy>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Validation(format!("missing required parameter {key}")))
}

pub fn parameters(s: &Settings) -> Result<Parameters, CliError> {
    let (ell, m, sigma) = (need(s.ell, "ell")?, need(s.m, "m")?, need(s.sigma, "sigma")?);
    let (kappa, k) = (s.kappa.unwrap_or(2), s.k.unwrap_or(0));
    let p = match (s.q, s.a) {
        (Some(_), Some(_)) => return Err(CliError::Validation("give q or a, not both".into())),
        (Some(q), None) => Parameters::new(ell, m, q, sigma, kappa, k)?,
        (None, Some(a)) => Parameters::from_a(ell, m, a, sigma, kappa, k)?,
        (None, None) => return Err(CliError::Validation("missing required parameter q (or a)".into())),
    };
    Ok(p)
}

pub fn sink(s: &Settings) -> Result<Sink, CliError> {
    let format = Format::parse(s.format.as_deref().unwrap_or("csv"))?;
    let dir = s.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    Sink::new(&dir, format)
}

fn theta(s: &Settings) -> Result<BoundingChainKind, CliError> {
    match s.theta.as_deref().unwrap_or("lower") {
        "lower" => Ok(BoundingChainKind::Lower),
        "upper" => Ok(BoundingChainKind::Upper),
        t => Err(CliError::Validation(format!("theta must be lower or upper, got {t:?}"))),
    }
}

pub fn simulate(s: &Settings, out: &mut Sink) -> Result<Report, CliError> {
    let p = parameters(s)?;
    let burn_in = s.burn_in.unwrap_or(10 * (p.m * p.ell) as u64);
    let thin = s.thin.unwrap_or(p.m as u64);
    let steps = s.steps.unwrap_or(burn_in + 1000 * thin);
    let cfg = SimulationConfig::new(s.seed.unwrap_or(0), steps, burn_in, s.replicas.unwrap_or(1), thin)?;
    let start = match s.start.as_deref().unwrap_or("master") {
        "master" => OccupancyDistribution::concentrated(p.ell, p.m, 0),
        "exit" => OccupancyDistribution::neutral_exit(p.ell, p.m, p.k),
        o => return Err(CliError::Validation(format!("start must be master or exit, got {o:?}"))),
    };
    let initial = match s.chain.as_deref().unwrap_or("occupancy") {
        "occupancy" => InitialState::Occupancy(start),
        "full" => InitialState::Population(Population::from_occupancy(&start, p.kappa)),
        c => return Err(CliError::Validation(format!("chain must be occupancy or full, got {c:?}"))),
    };
    let trajectories = run_trajectory(&cfg, &p, initial)?;

    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..=p.k).map(|c| format!("class{c}")));
    header.push("nK_over_m".into());
    for tr in &trajectories {
        let mut t = Table::new(header.clone());
        for smp in &tr.samples {
            let mut row = vec![smp.t.into()];
            row.extend(smp.classes.iter().map(|&x| x.into()));
            row.push(smp.nk_over_m.into());
            t.push(row);
        }
        out.table(&format!("trajectory_r{}", tr.replica), &t)?;
    }
    let mut mh_table = Table::new(["b", "c", "prob"]);
    for (b, c, prob) in LumpedMutationMatrix::new(&p).triples() {
        mh_table.push(vec![b.into(), c.into(), prob.into()]);
    }
    out.table("mutation_matrix", &mh_table)?;

    let mut report = Report { parameters: Some(p), config: Some(json!(cfg)), ..Default::default() };
    match summarise(&trajectories, &header[1..]) {
        Ok(t) => out.table("summary", &t)?,
        Err(e) => {
            report.status = 3;
            report.message = Some(format!("summary skipped: {e}"));
        }
    }
    Ok(report)
}

/// Batch-means summary per column, pooled over replicas.
fn summarise(trajectories: &[Trajectory], names: &[String]) -> spmoran::Result<Table> {
    let mut t = Table::new(["statistic", "mean", "standard_error", "effective_samples"]);
    let r = trajectories.len() as f64;
    for (col, name) in names.iter().enumerate() {
        let (mut mean, mut se2, mut ess) = (0.0, 0.0, 0.0);
        for tr in trajectories {
            let xs: Vec<f64> = tr
                .samples
                .iter()
                .map(|smp| if col < smp.classes.len() { smp.classes[col] } else { smp.nk_over_m })
                .collect();
            let bm = batch_means(&xs, SUMMARY_BATCHES)?;
            mean += bm.mean / r;
            se2 += bm.standard_error * bm.standard_error;
            ess += bm.effective_samples;
        }
        t.push(vec![name.as_str().into(), mean.into(), (se2.sqrt() / r).into(), ess.into()]);
    }
    Ok(t)
}

pub fn quasispecies(s: &Settings, out: &mut Sink) -> Result<Report, CliError> {
    let sigma = need(s.sigma, "sigma")?;
    let a_max = s.a_max.unwrap_or(sigma.ln());
    let classes = s.classes.unwrap_or(10);
    let points = s.points.unwrap_or(160);
    let curve = quasispecies_curve(sigma, a_max, classes, points)?;
    let mut header = vec!["a".to_string()];
    header.extend((0..=classes).map(|k| format!("rho{k}")));
    let mut t = Table::new(header);
    for (a, w) in curve {
        let mut row = vec![a.into()];
        row.extend(w.into_iter().map(Into::into));
        t.push(row);
    }
    out.table("quasispecies_curve", &t)?;
    Ok(Report {
        config: Some(json!({"sigma": sigma, "a_max": a_max, "classes": classes, "points": points})),
        ..Default::default()
    })
}

pub fn phase_diagram(s: &Settings, out: &mut Sink) -> Result<Report, CliError> {
    let sigma = need(s.sigma, "sigma")?;
    if !(sigma > 1.0) {
        return Err(CliError::Validation(format!("sigma must be > 1, got {sigma}")));
    }
    let kappa = s.kappa.unwrap_or(2);
    if kappa < 2 {
        return Err(CliError::Validation(format!("kappa must be >= 2, got {kappa}")));
    }
    let grid = s.grid.unwrap_or(100);
    if grid == 0 {
        return Err(CliError::Validation("grid must be positive".into()));
    }
    let a_max = s.a_max.unwrap_or(1.25 * sigma.ln());
    let alpha_max = s.alpha_max.unwrap_or(10.0);
    let mut t = Table::new(["a", "alpha", "regime", "alpha_critical"]);
    for i in 1..=grid {
        let a = a_max * i as f64 / grid as f64;
        let crit = critical_alpha(sigma, a, kappa);
        for j in 1..=grid {
            let alpha = alpha_max * j as f64 / grid as f64;
            let pt = classify_phase(a, alpha, sigma, kappa);
            t.push(vec![a.into(), alpha.into(), pt.regime.as_str().into(), crit.into()]);
        }
    }
    out.table("phase_diagram", &t)?;
    Ok(Report {
        config: Some(json!({"sigma": sigma, "kappa": kappa, "grid": grid, "a_max": a_max, "alpha_max": alpha_max})),
        ..Default::default()
    })
}

pub fn bd_analyze(s: &Settings, out: &mut Sink) -> Result<Report, CliError> {
    let p = parameters(s)?;
    let class = s.class.unwrap_or(p.k);
    let th = theta(s)?;
    let rho = rho_star_recurrence(p.sigma, p.a(), class)?;
    let rates = conditioned_rates(class, th, &LumpedMutationMatrix::new(&p), &p)?;
    let spec = rates.spec_at(&rho[..class])?;
    let m = p.m;
    let mut log_pi = pi_products_log(&spec)?;
    log_pi.push(log_pi[m - 1] + spec.delta(m).ln() - spec.gamma(m).ln());
    let mut t = Table::new(["i", "delta", "gamma", "log_pi"]);
    for i in 0..=m {
        t.push(vec![i.into(), spec.delta(i).into(), spec.gamma(i).into(), log_pi[i].into()]);
    }
    out.table("bd_chain", &t)?;

    let argmax = (0..=m).max_by(|&i, &j| log_pi[i].total_cmp(&log_pi[j])).expect("m >= 1");
    let mut summary = Table::new(["quantity", "value"]);
    summary.push(vec!["rho_star".into(), rho[class].into()]);
    summary.push(vec!["argmax_log_pi_over_m".into(), (argmax as f64 / m as f64).into()]);
    summary.push(vec!["log_mean_time_up_0_to_m".into(), log_mean_hitting_time_up(&spec, 0, m)?.into()]);
    summary.push(vec!["log_mean_time_down_m_to_0".into(), log_mean_hitting_time_down(&spec, 0, m)?.into()]);
    out.table("bd_summary", &summary)?;
    Ok(Report {
        parameters: Some(p),
        config: Some(json!({"class": class, "theta": th, "rho_star": rho})),
        ..Default::default()
    })
}

pub fn hitting(s: &Settings, out: &mut Sink) -> Result<Report, CliError> {
    let p = parameters(s)?;
    let hc = HittingConfig::new(s.replicas.unwrap_or(100), s.seed.unwrap_or(0)).with_cap(s.cap.unwrap_or(DEFAULT_STEP_CAP));
    let which = s.which.as_deref().unwrap_or("discovery");
    let (est, start) = match which {
        "discovery" => (estimate_discovery_time(&p, p.k, &hc)?, "exit"),
        "persistence" => {
            let start = match s.start.as_deref().unwrap_or("exit") {
                "exit" => PersistenceStart::Exit,
                "upper" => PersistenceStart::Upper,
                "lower" => PersistenceStart::Lower,
                o => return Err(CliError::Validation(format!("start must be exit, upper or lower, got {o:?}"))),
            };
            (estimate_persistence_time(&p, p.k, start, &hc)?, start.as_str())
        }
        w => return Err(CliError::Validation(format!("which must be discovery or persistence, got {w:?}"))),
    };
    let mut t = Table::new([
        "which", "start", "K", "mean", "standard_error", "count", "censored", "cap", "log_scale_per_unit",
    ]);
    t.push(vec![
        which.into(),
        start.into(),
        p.k.into(),
        est.mean.into(),
        est.standard_error.into(),
        est.count.into(),
        est.censored.into(),
        est.cap.into(),
        est.log_scale_per_unit.into(),
    ]);
    out.table("hitting_times", &t)?;
    let mut report = Report { parameters: Some(p), config: Some(json!(hc)), ..Default::default() };
    if est.censored > 0 {
        report.status = 3;
        report.message = Some(format!("{} of {} replicas hit the step cap {}", est.censored, hc.replicas, hc.cap));
    }
    Ok(report)
}

pub fn renewal(s: &Settings, out: &mut Sink) -> Result<Report, CliError> {
    let p = parameters(s)?;
    let th = theta(s)?;
    let (mode, config) = match s.mode.as_deref().unwrap_or("exact") {
        "exact" => (RenewalMode::Exact, json!({"mode": "exact"})),
        "mc" => {
            let cfg = SimulationConfig::new(
                s.seed.unwrap_or(0),
                s.steps.unwrap_or(200_000),
                s.burn_in.unwrap_or(1000),
                s.replicas.unwrap_or(4),
                s.thin.unwrap_or(1),
            )?;
            let cycles = s.cycles.unwrap_or(10_000);
            (RenewalMode::MonteCarlo { config: cfg, cycles }, json!({"mode": "mc", "simulation": cfg, "cycles": cycles}))
        }
        o => return Err(CliError::Validation(format!("mode must be exact or mc, got {o:?}"))),
    };
    let d = renewal_decomposition(th, &p, p.k, mode, |x| x)?;
    let mut t = Table::new([
        "theta",
        "exact",
        "e_tau_star",
        "e_tau_zero",
        "pre_entry_integral",
        "excursion_integral",
        "nu_integral",
        "lhs",
        "rhs",
        "residual",
        "residual_se",
    ]);
    t.push(vec![
        th.as_str().into(),
        d.exact.into(),
        d.e_tau_star.into(),
        d.e_tau_zero.into(),
        d.pre_entry_integral.into(),
        d.excursion_integral.into(),
        d.nu_integral.into(),
        d.lhs.into(),
        d.rhs.into(),
        d.residual.into(),
        d.residual_se.into(),
    ]);
    out.table("renewal", &t)?;
    Ok(Report { parameters: Some(p), config: Some(json!({"theta": th, "run": config})), ..Default::default() })
}

struct Check {
    name: &'static str,
    error: f64,
    tolerance: f64,
}

fn lumping_check() -> spmoran::Result<f64> {
    let params = Parameters::new(2, 2, 0.1, 2.0, 2, 0)?;
    let (pops, pf) = full_transition_matrix(&params)?;
    let (occs, po) = occupancy_transition_matrix(&params)?;
    let mut worst = 0.0f64;
    for (a, x) in pops.iter().enumerate() {
        let o = x.occupancy();
        let h = jump_rate(&o, params.sigma);
        let ia = occs.iter().position(|s| *s == o).expect("occupancy enumerated");
        for (ib, ob) in occs.iter().enumerate() {
            let lumped: f64 = (0..pops.len()).filter(|&b| pops[b].occupancy() == *ob).map(|b| pf[(a, b)]).sum();
            let lazy = h * po[(ia, ib)] + if ia == ib { 1.0 - h } else { 0.0 };
            worst = worst.max((lumped - lazy).abs());
        }
    }
    Ok(worst)
}

fn birth_death_check() -> spmoran::Result<f64> {
    let mut worst = 0.0f64;
    for m in [3usize, 7, 12] {
        let delta: Vec<f64> = (0..m).map(|i| 0.1 + 0.3 * ((i * 7 % 5) as f64 / 5.0)).collect();
        let gamma: Vec<f64> = (0..m).map(|i| 0.15 + 0.2 * ((i * 3 % 4) as f64 / 4.0)).collect();
        let spec = BirthDeathSpec::new(delta, gamma)?;
        let p = spec.transition_matrix();
        let mut top = vec![false; m + 1];
        top[m] = true;
        let mut bottom = vec![false; m + 1];
        bottom[0] = true;
        let up = hitting_times(&p, &top)?[0];
        let down = hitting_times(&p, &bottom)?[m];
        worst = worst.max(((mean_hitting_time_up(&spec, 0, m)? - up) / up).abs());
        worst = worst.max(((mean_hitting_time_down(&spec, 0, m)? - down) / down).abs());
        let h = absorption_probability(&p, &bottom, &top)?[1];
        worst = worst.max((exit_point_law(&spec, 0, 1, m)?.0 - h).abs());
    }
    Ok(worst)
}

fn quasispecies_check() -> spmoran::Result<f64> {
    let (sigma, a) = (5.0, 0.5);
    let rec = rho_star_recurrence(sigma, a, 20)?;
    let gf = generating_function_coefficients(sigma, a, 20)?;
    let mut worst = 0.0f64;
    for k in 0..=20 {
        let c = rho_star_closed(sigma, a, k, 1e-15)?;
        worst = worst.max(((rec[k] - c) / c).abs()).max(((gf[k] - c) / c).abs());
    }
    Ok(worst)
}

fn renewal_check() -> spmoran::Result<f64> {
    let params = Parameters::from_a(6, 4, 0.5, 4.0, 2, 0)?;
    let mut worst = 0.0f64;
    for th in [BoundingChainKind::Lower, BoundingChainKind::Upper] {
        worst = worst.max(renewal_decomposition(th, &params, 0, RenewalMode::Exact, |x| x)?.residual.abs());
    }
    Ok(worst)
}

fn coupling_check() -> spmoran::Result<f64> {
    let params = Parameters::from_a(8, 6, 0.4, 4.0, 2, 1)?;
    let maps = std::sync::Arc::new(BoundingMaps::new(&params)?);
    let mut tri = CoupledTriple::new(maps, OccupancyDistribution::concentrated(8, 6, 0));
    let mut rng = replica_rng(1, 0);
    let mut broken = 0u32;
    for _ in 0..10_000 {
        tri.step(&mut rng);
        broken += u32::from(!tri.ordered());
    }
    Ok(broken as f64)
}

fn stationary_check() -> spmoran::Result<f64> {
    let params = Parameters::new(3, 3, 0.2, 3.0, 2, 0)?;
    let (_, po) = occupancy_transition_matrix(&params)?;
    let nu = stationary_distribution(&po)?;
    let back = nu.transpose() * &po;
    Ok((back.transpose() - &nu).amax() + (nu.sum() - 1.0).abs())
}

pub fn verify() -> Result<(Report, Table), CliError> {
    let checks: [(&'static str, fn() -> spmoran::Result<f64>, f64); 6] = [
        ("lumped full chain equals lazy occupancy kernel", lumping_check, 1e-12),
        ("birth-death hitting times and exit law", birth_death_check, 1e-9),
        ("quasispecies recurrence, closed form and generating function", quasispecies_check, 1e-10),
        ("renewal identity, exact", renewal_check, 1e-9),
        ("coupled bounding chains stay ordered", coupling_check, 0.0),
        ("occupancy stationary law", stationary_check, 1e-12),
    ];
    let mut t = Table::new(["check", "pass", "error", "tolerance"]);
    let mut failed = 0;
    for (name, run, tol) in checks {
        let c = match run() {
            Ok(error) => Check { name, error, tolerance: tol },
            Err(e) => {
                println!("FAIL {name}: {e}");
                failed += 1;
                t.push(vec![name.into(), false.into(), f64::NAN.into(), tol.into()]);
                continue;
            }
        };
        let pass = c.error <= c.tolerance;
        failed += usize::from(!pass);
        println!("{} {}: error {:.3e} (tolerance {:.0e})", if pass { "PASS" } else { "FAIL" }, c.name, c.error, c.tolerance);
        t.push(vec![c.name.into(), pass.into(), c.error.into(), c.tolerance.into()]);
    }
    let mut report = Report { config: Some(json!({"checks": checks.len()})), ..Default::default() };
    if failed > 0 {
        report.status = 2;
        report.message = Some(format!("{failed} checks failed"));
    }
    Ok((report, t))
}

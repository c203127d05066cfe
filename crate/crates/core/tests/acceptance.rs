//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use spmoran::birth_death::{
    binomial_rate, binomial_rate_limit, exit_point_law, ld_integral, mean_hitting_time_down, mean_hitting_time_up,
    pi_products_log,
};
use spmoran::bounds::{conditioned_rates, CoupledTriple, SandwichRun};
use spmoran::harness::{
    estimate_discovery_time, estimate_equilibrium, estimate_persistence_time, renewal_decomposition, HittingConfig,
    PersistenceStart, RenewalMode,
};
use spmoran::linalg::{absorption_probability, hitting_times, stationary_distribution};
use spmoran::moran::{
    full_chain_occupancy_law, full_transition_matrix, jump_rate, occupancy_transition_matrix, push_to_occupancy,
    run_trajectory, OccupancyChain, Steppable,
};
use spmoran::quasispecies::{
    classify_phase, finite_quasispecies, generating_function_coefficients, phi_threshold, q_moments, rho_star_closed,
    rho_star_recurrence,
};
use spmoran::stats::linear_fit;
use spmoran::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn quasispecies_identities() -> Result<Outcome> {
    let mut worst_rel = 0.0f64;
    let mut worst_sum = 0.0f64;
    let mut worst_moment = 0.0f64;
    for &sigma in &[2.0, 5.0, 10.0, 1e6] {
        for &a in &[0.1, 0.5, 1.0] {
            if sigma * (-a as f64).exp() <= 1.0 {
                continue;
            }
            let rec = rho_star_recurrence(sigma, a, 30)?;
            let gf = generating_function_coefficients(sigma, a, 30)?;
            for k in 0..=30 {
                let closed = rho_star_closed(sigma, a, k, 1e-15)?;
                worst_rel = worst_rel.max(rel(rec[k], closed)).max(rel(gf[k], closed));
            }
            let long = rho_star_recurrence(sigma, a, 2000)?;
            worst_sum = worst_sum.max((long.iter().sum::<f64>() - 1.0).abs());
            let m1: f64 = long.iter().enumerate().map(|(k, r)| k as f64 * r).sum();
            let m2: f64 = long.iter().enumerate().map(|(k, r)| (k * k) as f64 * r).sum();
            let (mean, var) = q_moments(sigma, a)?;
            worst_moment = worst_moment.max((mean - m1).abs()).max((var - (m2 - m1 * m1)).abs());
        }
    }
    outcome(
        worst_rel < 1e-10 && worst_sum < 1e-9 && worst_moment < 1e-8,
        format!("max rel {worst_rel:.2e}, |sum-1| {worst_sum:.2e}, moments {worst_moment:.2e}"),
    )
}

fn birth_death_exactness() -> Result<Outcome> {
    let mut rng = replica_rng(2024, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(2..=25);
        let delta: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.5)).collect();
        let gamma: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.5)).collect();
        let spec = BirthDeathSpec::new(delta, gamma)?;
        let p = spec.transition_matrix();
        let a = rng.random_range(0..m);
        let b = rng.random_range(a + 1..=m);
        let mut target = vec![false; m + 1];
        target[b] = true;
        worst = worst.max(rel(mean_hitting_time_up(&spec, a, b)?, hitting_times(&p, &target)?[a]));
        let mut target = vec![false; m + 1];
        target[a] = true;
        worst = worst.max(rel(mean_hitting_time_down(&spec, a, b)?, hitting_times(&p, &target)?[b]));
        if b >= a + 2 {
            let i = rng.random_range(a + 1..b);
            let (pa, pb) = exit_point_law(&spec, a, i, b)?;
            let mut sa = vec![false; m + 1];
            let mut sb = vec![false; m + 1];
            sa[a] = true;
            sb[b] = true;
            let h = absorption_probability(&p, &sa, &sb)?[i];
            worst = worst.max((pa - h).abs()).max((pb - (1.0 - h)).abs());
        }
    }
    outcome(worst < 1e-9, format!("max error {worst:.2e} over 100 specs"))
}

fn lumping_exactness() -> Result<Outcome> {
    let params = Parameters::new(2, 2, 0.1, 2.0, 2, 0)?;
    let (pops, pf) = full_transition_matrix(&params)?;
    let (occs, po) = occupancy_transition_matrix(&params)?;
    let mu = stationary_distribution(&pf)?;
    let nu = stationary_distribution(&po)?;
    let pushed = push_to_occupancy(&pops, mu.as_slice(), &occs);
    let literal = pushed.iter().zip(nu.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let law = full_chain_occupancy_law(&occs, nu.as_slice(), params.sigma);
    let corrected = pushed.iter().zip(&law).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut kernel = 0.0f64;
    for (a, x) in pops.iter().enumerate() {
        let o = x.occupancy();
        let h = jump_rate(&o, params.sigma);
        let ia = occs.iter().position(|s| *s == o).expect("occupancy state");
        for (ib, ob) in occs.iter().enumerate() {
            let lumped: f64 = (0..pops.len()).filter(|&b| pops[b].occupancy() == *ob).map(|b| pf[(a, b)]).sum();
            let lazy = h * po[(ia, ib)] + if ia == ib { 1.0 - h } else { 0.0 };
            kernel = kernel.max((lumped - lazy).abs());
        }
    }
    println!(
        "     lumped full kernel vs h(o) p_O + (1 - h(o)) I: {kernel:.2e}; pushforward vs nu/h reweighted: {corrected:.2e}"
    );
    outcome(literal < 1e-10, format!("pushforward vs p_O stationary law: max gap {literal:.3e}"))
}

fn coupling_order() -> Result<Outcome> {
    let params = Parameters::from_a(20, 30, 0.3, 6.0, 2, 2)?;
    let maps = Arc::new(BoundingMaps::new(&params)?);
    let mut rng = replica_rng(4, 0);
    let mut tri = CoupledTriple::new(maps, OccupancyDistribution::concentrated(20, 30, 0));
    let mut broken = 0u64;
    for _ in 0..100_000 {
        tri.step(&mut rng);
        broken += u64::from(!tri.ordered());
    }
    let rho_star = rho_star_recurrence(6.0, 0.3, 2)?;
    let mh = LumpedMutationMatrix::new(&params);
    let (mut excursions, mut violations, mut mismatches, mut inside) = (0, 0, 0, 0);
    for theta in [BoundingChainKind::Lower, BoundingChainKind::Upper] {
        for k in 1..=2 {
            let run = SandwichRun::new(EkChain::new(theta, &params)?, conditioned_rates(k, theta, &mh, &params)?, &rho_star, 0.1)?;
            let mut rng = replica_rng(4, 1 + k as u64 + 10 * theta as u64);
            let rep = run.run(ClassVector::zero(2), 100_000, &mut rng);
            excursions += rep.excursions;
            violations += rep.violations;
            mismatches += rep.mismatches;
            inside += rep.in_window_steps;
        }
    }
    outcome(
        broken == 0 && violations == 0 && mismatches == 0 && excursions > 0,
        format!(
            "order broken at {broken} of 1e5 steps; sandwich: {excursions} excursions, {inside} in-window steps, {violations} violations"
        ),
    )
}

struct ClassRun {
    est: spmoran::harness::EquilibriumEstimate,
    c: f64,
}

fn occupancy_run(m: usize, a: f64, sweeps: u64, seed: u64) -> Result<ClassRun> {
    let params = Parameters::from_a(50, m, a, 8.0, 2, 2)?;
    let centre: f64 = if a < 1.0 { finite_quasispecies(&params)?.iter().sum() } else { 0.0 };
    let chain = OccupancyChain::new(&params, OccupancyDistribution::concentrated(50, m, 0))?;
    let burn = 10 * (m * 50) as u64;
    let cfg = SimulationConfig::new(seed, burn + sweeps * m as u64, burn, 4, m as u64)?;
    let est = estimate_equilibrium(
        &chain,
        |c| {
            let y = c.state.n_k(2) as f64 / m as f64;
            let mut v = c.class_frequencies(2);
            v.push(y);
            v.push((y - centre) * (y - centre));
            v
        },
        &cfg,
    )?;
    Ok(ClassRun { est, c: centre })
}

impl ClassRun {
    /// `Var(N^K/m)` from moments centred at `c`, with a conservative standard error.
    fn variance(&self) -> (f64, f64) {
        let (d, m2) = (self.est.mean[3] - self.c, self.est.mean[4]);
        (m2 - d * d, self.est.standard_error[4] + 2.0 * d.abs() * self.est.standard_error[3])
    }
}

fn quasispecies_regime() -> Result<Outcome> {
    let (a, sigma) = (0.3, 8.0);
    let phase = classify_phase(a, 150.0 / 50.0, sigma, 2);
    let rho = rho_star_recurrence(sigma, a, 2)?;
    let finite = finite_quasispecies(&Parameters::from_a(50, 150, a, sigma, 2, 2)?)?;
    let run = occupancy_run(150, a, 8000, 5)?;
    let mut ok = phase.regime == Regime::Quasispecies;
    let mut parts = Vec::new();
    for k in 0..3 {
        let (mean, se) = (run.est.mean[k], run.est.standard_error[k]);
        ok &= (mean - rho[k]).abs() <= 0.05 && (mean - finite[k]).abs() <= 3.0 * se;
        parts.push(format!(
            "class {k}: {mean:.4} (rho* {:.4}, finite-ell {:.4}, se {se:.1e})",
            rho[k], finite[k]
        ));
    }
    let vars: Vec<(f64, f64)> = [50usize, 100, 200]
        .iter()
        .map(|&m| occupancy_run(m, a, 8000, 6).map(|r| r.variance()))
        .collect::<Result<_>>()?;
    for w in vars.windows(2) {
        ok &= w[0].0 - w[1].0 > 3.0 * (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt();
    }
    parts.push(format!(
        "Var(N^K/m) at m=50,100,200: {:.2e}, {:.2e}, {:.2e} (se {:.1e}, {:.1e}, {:.1e})",
        vars[0].0, vars[1].0, vars[2].0, vars[0].1, vars[1].1, vars[2].1
    ));
    outcome(ok, parts.join("; "))
}

fn disordered_regime() -> Result<Outcome> {
    let (a, sigma) = (2.5, 8.0);
    let phase = classify_phase(a, 3.0, sigma, 2);
    let run = occupancy_run(150, a, 8000, 7)?;
    let (mean, se) = (run.est.mean[3], run.est.standard_error[3]);
    outcome(
        phase.regime == Regime::Disordered && phi_threshold(sigma, a) == 0.0 && mean + 3.0 * se < 0.02,
        format!("N^K/m = {mean:.2e} (se {se:.1e}), regime {}", phase.regime.as_str()),
    )
}

fn time_scales() -> Result<Outcome> {
    let ln2 = 2f64.ln();
    let mut devs = Vec::new();
    for &ell in &[6usize, 8, 10] {
        let p = Parameters::boundary(ell, 3, 0.5 / ell as f64, 1.0, 2, 0)?;
        let est = estimate_discovery_time(&p, 0, &HittingConfig::new(4000, 71))?.require_uncensored()?;
        devs.push((est.log_scale_per_unit - ln2).abs());
    }
    let discovery_ok = devs.iter().all(|&d| d < 0.15) && devs.windows(2).all(|w| w[1] < w[0]);
    let (sigma, a) = (10.0, 1.2);
    let phi = phi_threshold(sigma, a);
    let ms = [20usize, 40, 80];
    let mut slopes = Vec::new();
    for start in [PersistenceStart::Lower, PersistenceStart::Upper] {
        let mut logs = Vec::new();
        for &m in &ms {
            let p = Parameters::from_a(50, m, a, sigma, 2, 0)?;
            let est = estimate_persistence_time(&p, 0, start, &HittingConfig::new(200, 72))?.require_uncensored()?;
            logs.push(est.mean.ln());
        }
        let xs: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
        slopes.push(linear_fit(&xs, &logs).0);
    }
    let persistence_ok = slopes.iter().all(|s| (s - phi).abs() <= 0.25 * phi);
    outcome(
        discovery_ok && persistence_ok,
        format!(
            "discovery |(1/l) ln E - ln 2| at l=6,8,10: {:.3}, {:.3}, {:.3}; persistence slope {:.4} (lower start), {:.4} (upper start) vs phi(a) {phi:.4}",
            devs[0], devs[1], devs[2], slopes[0], slopes[1]
        ),
    )
}

fn large_deviation_profiles() -> Result<Outcome> {
    let (sigma, a, m) = (4.0, 0.5, 2000);
    let params = Parameters::from_a(50, m, a, sigma, 2, 0)?;
    let mut rates = conditioned_rates(0, BoundingChainKind::Lower, &LumpedMutationMatrix::new(&params), &params)?;
    rates.beta = vec![(-a as f64).exp()];
    let pi = pi_products_log(&rates.spec_at(&[])?)?;
    let mut ld_gap = 0.0f64;
    for i in 1..20 {
        let rho = i as f64 / 20.0;
        let finite = pi[(rho * m as f64).floor() as usize] / m as f64;
        ld_gap = ld_gap.max((finite - ld_integral(a, sigma, rho)?).abs());
    }
    let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
    let vals: Vec<f64> = grid.iter().map(|&r| ld_integral(a, sigma, r)).collect::<Result<_>>()?;
    let arg = (0..vals.len()).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).expect("grid");
    let rho0 = (sigma * (-a as f64).exp() - 1.0) / (sigma - 1.0);
    let arg_gap = (grid[arg] - rho0).abs();
    let mut bin_gap = 0.0f64;
    for i in 0..=20 {
        let rho = i as f64 / 20.0;
        bin_gap = bin_gap.max((binomial_rate(2000, 2, rho) - binomial_rate_limit(2, rho)).abs());
    }
    outcome(
        ld_gap < 0.01 && arg_gap < 2e-3 && bin_gap < 5e-3,
        format!("(1/m) ln pi vs integral {ld_gap:.2e}; argmax gap {arg_gap:.1e}; binomial rate gap {bin_gap:.2e}"),
    )
}

fn renewal_identity() -> Result<Outcome> {
    let params = Parameters::from_a(6, 4, 0.5, 4.0, 2, 0)?;
    let f = |x: f64| x;
    let mut ok = true;
    let mut parts = Vec::new();
    for theta in [BoundingChainKind::Lower, BoundingChainKind::Upper] {
        let exact = renewal_decomposition(theta, &params, 0, RenewalMode::Exact, f)?;
        let cfg = SimulationConfig::new(92, 400_000, 2000, 4, 1)?;
        let mc = renewal_decomposition(theta, &params, 0, RenewalMode::MonteCarlo { config: cfg, cycles: 20_000 }, f)?;
        ok &= exact.residual.abs() < 1e-9 && mc.residual.abs() <= 3.0 * mc.residual_se;
        parts.push(format!(
            "{}: exact residual {:.1e}, MC residual {:.1e} (se {:.1e})",
            theta.as_str(),
            exact.residual.abs(),
            mc.residual,
            mc.residual_se
        ));
    }
    outcome(ok, parts.join("; "))
}

fn reproducibility() -> Result<Outcome> {
    let params = Parameters::from_a(12, 10, 0.4, 4.0, 2, 2)?;
    let artifact = |seed: u64| -> Result<Vec<u8>> {
        let cfg = SimulationConfig::with_defaults(&params, seed, 20_000, 3)?;
        let traj = run_trajectory(&cfg, &params, InitialState::Occupancy(OccupancyDistribution::concentrated(12, 10, 0)))?;
        let hit = estimate_discovery_time(&params.with_k(0)?, 0, &HittingConfig::new(50, seed))?;
        let ren = renewal_decomposition(
            BoundingChainKind::Upper,
            &Parameters::from_a(6, 4, 0.5, 4.0, 2, 0)?,
            0,
            RenewalMode::MonteCarlo { config: SimulationConfig::new(seed, 20_000, 100, 2, 1)?, cycles: 200 },
            |x| x,
        )?;
        let mut out = serde_json::to_vec(&traj).expect("serialise");
        out.extend(serde_json::to_vec(&hit).expect("serialise"));
        out.extend(serde_json::to_vec(&ren).expect("serialise"));
        Ok(out)
    };
    let (a, b, c) = (artifact(10)?, artifact(10)?, artifact(11)?);
    outcome(a == b && a != c, format!("{} bytes, identical on rerun: {}, differs across seeds: {}", a.len(), a == b, a != c))
}

type Criterion = (&'static str, Duration, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 quasispecies identities", Duration::from_secs(1), quasispecies_identities),
        ("2 birth-death exactness", Duration::from_secs(10), birth_death_exactness),
        ("3 lumping exactness", Duration::from_secs(1), lumping_exactness),
        ("4 coupling order", Duration::from_secs(30), coupling_order),
        ("5 quasispecies regime", Duration::from_secs(300), quasispecies_regime),
        ("6 disordered regime", Duration::from_secs(300), disordered_regime),
        ("7 time-scale separation", Duration::from_secs(600), time_scales),
        ("8 large-deviation profiles", Duration::from_secs(30), large_deviation_profiles),
        ("9 renewal identity", Duration::from_secs(60), renewal_identity),
        ("10 reproducibility", Duration::from_secs(60), reproducibility),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let res = run();
        let took = start.elapsed();
        let (pass, detail) = match res {
            Ok(o) => (o.pass && took <= limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} {name}: {detail} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

//! One function per command, each turning a resolved config into a report.

use rayon::prelude::*;
use serde_json::{json, Value};

use spinglass::amp::{amp_run, AmpOptions, AmpResult};
use spinglass::bp::{
    bp_run, couplings_from_rates, ks_threshold, linear_growth_rate, population_dynamics, sbm_to_ks,
    BpMode, BpOptions, GROWTH_WINDOW,
};
use spinglass::exact::{
    exact_posterior_marginals, gibbs_minimizes_free_energy, ExactSummary,
    GibbsSpec, MarginalFixture, PairwiseHamiltonian, MAX_SPINS, MAX_SPINS_VARIATIONAL,
};
use spinglass::models::{gen_sbm, gen_sbm_null, gen_spiked_wigner, InstanceRecord};
use spinglass::replica::{landscape, thresholds};
use spinglass::state_evolution::{prediction_from, se_fixed_point, se_predict};
use spinglass::SeedSpec;

use crate::config::{lambda_grid, Command, ExperimentConfig};
use crate::report::{format_real, Cell, Table};
use crate::CliError;

pub struct Plot {
    pub table: Table,
    pub x: &'static str,
    pub ys: Vec<&'static str>,
    pub title: String,
}

/// Everything a command produces before it is written out.
pub struct Report {
    pub table: Table,
    /// Command-specific JSON fields merged next to `config` and `rows`.
    pub extra: serde_json::Map<String, Value>,
    pub plot: Plot,
    /// One summary line per sweep point.
    pub lines: Vec<String>,
    /// Additional JSON documents written as `<command>.<suffix>.json`.
    pub attachments: Vec<(&'static str, Value)>,
}

fn failure(context: String, err: spinglass::Error) -> CliError {
    CliError::Failure(format!("{context}: {err}"))
}

fn r(v: f64) -> String {
    format_real(v)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

pub fn execute(config: &ExperimentConfig) -> Result<Report, CliError> {
    match config.command {
        Command::SeSweep => se_sweep(config),
        Command::AmpRun => amp_runs(config),
        Command::AmpVsSe => amp_vs_se(config),
        Command::Landscape => landscape_report(config),
        Command::Phases => phases(config),
        Command::SbmBp => sbm_bp(config),
        Command::Popdyn => popdyn(config),
        Command::OracleCheck => oracle_check(config),
    }
}

fn se_sweep(c: &ExperimentConfig) -> Result<Report, CliError> {
    let grid = lambda_grid(c.real("lambda-min"), c.real("lambda-max"), c.real("step"))?;
    let (gamma0, tol, max_iters) = (c.real("gamma0"), c.real("tol"), c.count("max-iters"));
    let preds = grid
        .par_iter()
        .map(|&l| {
            se_fixed_point(l, gamma0, tol, max_iters)
                .map(|t| prediction_from(&t))
                .map_err(|e| failure(format!("se-sweep at lambda={l}"), e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(&[
        "lambda",
        "gamma_inf",
        "mu_inf",
        "sigma_inf",
        "q_star",
        "iterations",
        "converged",
    ]);
    let mut lines = Vec::new();
    for p in &preds {
        table.push(vec![
            p.lambda.into(),
            p.gamma_inf.into(),
            p.mu_inf.into(),
            p.sigma_inf.into(),
            p.q_star.into(),
            p.iterations.into(),
            p.converged.into(),
        ]);
        lines.push(format!(
            "lambda={} gamma_inf={} q_star={} converged={}",
            p.lambda,
            r(p.gamma_inf),
            r(p.q_star),
            p.converged
        ));
    }
    Ok(Report {
        plot: Plot {
            table: table.clone(),
            x: "lambda",
            ys: vec!["q_star"],
            title: "state-evolution overlap".into(),
        },
        table,
        extra: Default::default(),
        lines,
        attachments: Vec::new(),
    })
}

fn amp_options(c: &ExperimentConfig) -> AmpOptions {
    AmpOptions {
        init_scale: c.real("init-scale"),
        max_iters: c.count("max-iters"),
        tol: c.real("tol"),
        onsager: c.flag("onsager"),
    }
}

struct AmpSeedRun {
    seed: u64,
    result: AmpResult,
    record: InstanceRecord,
}

/// Instance `s` uses stream `s` of the master seed; AMP's own start uses a
/// stream derived from it.
fn run_amp_seeds(c: &ExperimentConfig) -> Result<Vec<AmpSeedRun>, CliError> {
    let (n, lambda, seeds) = (c.count("n"), c.real("lambda"), c.count("seeds") as u64);
    if seeds == 0 {
        return Err(CliError::Usage("seeds: must be at least 1".into()));
    }
    let opts = amp_options(c);
    (0..seeds)
        .into_par_iter()
        .map(|s| {
            let context = || format!("{} at n={n}, lambda={lambda}, seed={s}", c.command);
            let inst_seed = SeedSpec::new(c.seed.master_seed, s);
            let inst = gen_spiked_wigner(n, lambda, inst_seed).map_err(|e| failure(context(), e))?;
            let result = amp_run(&inst, &opts, inst_seed.derive(1)).map_err(|e| failure(context(), e))?;
            Ok(AmpSeedRun {
                seed: s,
                record: inst.record(c.store_observation),
                result,
            })
        })
        .collect()
}

fn amp_runs(c: &ExperimentConfig) -> Result<Report, CliError> {
    let runs = run_amp_seeds(c)?;
    let columns = ["seed", "t", "overlap", "iterate_rms_change", "b_t"];
    let mut table = Table::new(&columns);
    let mut first = Table::new(&columns);
    let mut lines = Vec::new();
    let mut summary = Vec::new();
    for run in &runs {
        for row in &run.result.trace {
            let cells: Vec<Cell> = vec![
                run.seed.into(),
                row.t.into(),
                row.overlap.into(),
                row.iterate_rms_change.into(),
                row.b_t.into(),
            ];
            if run.seed == 0 {
                first.push(cells.clone());
            }
            table.push(cells);
        }
        lines.push(format!(
            "seed={} iterations={} converged={} overlap={}",
            run.seed,
            run.result.iterations,
            run.result.converged,
            r(run.result.final_overlap())
        ));
        summary.push(json!({
            "seed": run.seed,
            "iterations": run.result.iterations,
            "converged": run.result.converged,
            "final_overlap": run.result.final_overlap(),
            "instance": to_value(&run.record),
        }));
    }
    let mut extra = serde_json::Map::new();
    extra.insert("runs".into(), Value::Array(summary));
    Ok(Report {
        table,
        extra,
        plot: Plot {
            table: first,
            x: "t",
            ys: vec!["overlap"],
            title: "AMP overlap, seed 0".into(),
        },
        lines,
        attachments: Vec::new(),
    })
}

fn amp_vs_se(c: &ExperimentConfig) -> Result<Report, CliError> {
    let (n, lambda) = (c.count("n"), c.real("lambda"));
    let runs = run_amp_seeds(c)?;
    let pred = se_predict(lambda).map_err(|e| failure(format!("amp-vs-se at lambda={lambda}"), e))?;
    let overlaps: Vec<f64> = runs.iter().map(|r| r.result.final_overlap()).collect();
    let m = overlaps.len() as f64;
    let mean = overlaps.iter().sum::<f64>() / m;
    let std = if overlaps.len() > 1 {
        (overlaps.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut table = Table::new(&[
        "lambda",
        "n",
        "seeds",
        "mean_overlap",
        "std_overlap",
        "q_star",
        "abs_error",
    ]);
    table.push(vec![
        lambda.into(),
        n.into(),
        runs.len().into(),
        mean.into(),
        std.into(),
        pred.q_star.into(),
        (mean - pred.q_star).abs().into(),
    ]);
    let mut per_seed = Table::new(&["seed", "overlap", "q_star"]);
    let mut lines = Vec::new();
    for run in &runs {
        per_seed.push(vec![run.seed.into(), run.result.final_overlap().into(), pred.q_star.into()]);
        lines.push(format!(
            "seed={} overlap={} q_star={}",
            run.seed,
            r(run.result.final_overlap()),
            r(pred.q_star)
        ));
    }
    lines.push(format!(
        "lambda={lambda} mean_overlap={} q_star={} abs_error={}",
        r(mean),
        r(pred.q_star),
        r((mean - pred.q_star).abs())
    ));
    let mut extra = serde_json::Map::new();
    extra.insert("per_seed".into(), per_seed.to_json_rows());
    extra.insert("prediction".into(), to_value(&pred));
    extra.insert(
        "instances".into(),
        Value::Array(runs.iter().map(|r| to_value(&r.record)).collect()),
    );
    Ok(Report {
        table,
        extra,
        plot: Plot {
            table: per_seed,
            x: "seed",
            ys: vec!["overlap", "q_star"],
            title: format!("AMP vs state evolution, lambda = {lambda}"),
        },
        lines,
        attachments: Vec::new(),
    })
}

fn landscape_report(c: &ExperimentConfig) -> Result<Report, CliError> {
    let lambda = c.real("lambda");
    let grid_size = c.count("grid-size");
    let curve = landscape(lambda, grid_size).map_err(|e| match e {
        spinglass::Error::InvalidArgument(m) => CliError::Usage(format!("grid-size: {m}")),
        other => failure(format!("landscape at lambda={lambda}"), other),
    })?;
    let mut table = Table::new(&["lambda", "q", "F"]);
    for &(q, f) in &curve.grid {
        table.push(vec![lambda.into(), q.into(), f.into()]);
    }
    let mut extra = serde_json::Map::new();
    extra.insert(
        "summary".into(),
        json!({
            "lambda": lambda,
            "minima": curve.minima_q(),
            "global_min_q": curve.global_min_q,
            "global_tie": curve.global_tie,
            "phase": curve.phase,
            "lambda_stat": Value::Null,
            "lambda_comp": Value::Null,
        }),
    );
    let line = format!(
        "lambda={lambda} minima={:?} global_min_q={} phase={}",
        curve.minima_q(),
        r(curve.global_min_q),
        curve.phase
    );
    Ok(Report {
        plot: Plot {
            table: table.clone(),
            x: "q",
            ys: vec!["F"],
            title: format!("free energy F(q), lambda = {lambda}"),
        },
        table,
        extra,
        lines: vec![line],
        attachments: Vec::new(),
    })
}

fn phases(c: &ExperimentConfig) -> Result<Report, CliError> {
    let grid = lambda_grid(c.real("lambda-min"), c.real("lambda-max"), c.real("step"))?;
    let t = thresholds(&grid, c.count("grid-size")).map_err(|e| failure("phases".into(), e))?;
    let mut table = Table::new(&["lambda", "phase", "global_min_q", "minima_count"]);
    let mut lines = Vec::new();
    for row in &t.rows {
        table.push(vec![
            row.lambda.into(),
            row.phase.as_str().into(),
            row.global_min_q.into(),
            row.minima.len().into(),
        ]);
        lines.push(format!(
            "lambda={} phase={} global_min_q={}",
            row.lambda,
            row.phase,
            r(row.global_min_q)
        ));
    }
    lines.push(format!(
        "lambda_stat={} lambda_comp={}",
        t.lambda_stat.map_or("none".into(), |v| v.to_string()),
        t.lambda_comp.map_or("none".into(), |v| v.to_string())
    ));
    let mut extra = serde_json::Map::new();
    extra.insert("phases".into(), to_value(&t.rows));
    extra.insert("lambda_stat".into(), to_value(&t.lambda_stat));
    extra.insert("lambda_comp".into(), to_value(&t.lambda_comp));
    Ok(Report {
        plot: Plot {
            table: table.clone(),
            x: "lambda",
            ys: vec!["global_min_q"],
            title: "global minimiser of F(q)".into(),
        },
        table,
        extra,
        lines,
        attachments: Vec::new(),
    })
}

fn sbm_bp(c: &ExperimentConfig) -> Result<Report, CliError> {
    let (n, a, b) = (c.count("n"), c.real("a"), c.real("b"));
    let mode: BpMode = c.text("mode").parse().map_err(|e| CliError::Usage(format!("mode: {e}")))?;
    let seeds = c.count("seeds") as u64;
    if seeds == 0 {
        return Err(CliError::Usage("seeds: must be at least 1".into()));
    }
    let context = |s: u64| format!("sbm-bp at n={n}, a={a}, b={b}, mode={mode}, seed={s}");
    let couplings = couplings_from_rates(a, b, n).map_err(|e| failure(context(0), e))?;
    let (k, eps) = sbm_to_ks(a, b).map_err(|e| failure(context(0), e))?;
    let ks = ks_threshold(k, eps).map_err(|e| failure(context(0), e))?;
    let opts = BpOptions {
        mode,
        init_scale: c.real("init-scale"),
        max_iters: c.count("max-iters"),
        tol: c.real("tol"),
        ..BpOptions::default()
    };
    let runs = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let inst_seed = SeedSpec::new(c.seed.master_seed, s);
            let inst = gen_sbm(n, a, b, inst_seed).map_err(|e| failure(context(s), e))?;
            let run = bp_run(&inst, &couplings, &opts, inst_seed.derive(1)).map_err(|e| failure(context(s), e))?;
            Ok((s, run, inst.record(c.store_observation)))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut table = Table::new(&["seed", "mode", "iterations", "converged", "overlap"]);
    let mut lines = Vec::new();
    let mut summaries = Vec::new();
    for (s, run, record) in &runs {
        table.push(vec![
            (*s).into(),
            mode.to_string().into(),
            run.iterations.into(),
            run.converged.into(),
            run.overlap.into(),
        ]);
        lines.push(format!(
            "seed={s} mode={mode} iterations={} converged={} overlap={}",
            run.iterations,
            run.converged,
            r(run.overlap)
        ));
        summaries.push(json!({
            "a": a, "b": b, "n": n, "mode": mode,
            "iterations": run.iterations,
            "converged": run.converged,
            "overlap": run.overlap,
            "ks_value": ks.value,
            "seed": s,
            "instance": to_value(record),
        }));
    }
    let mean = runs.iter().map(|(_, r, _)| r.overlap).sum::<f64>() / runs.len() as f64;
    lines.push(format!("mean_overlap={} ks_value={}", r(mean), r(ks.value)));
    let mut extra = serde_json::Map::new();
    extra.insert("runs".into(), Value::Array(summaries));
    extra.insert("mean_overlap".into(), json!(mean));
    extra.insert("ks_value".into(), json!(ks.value));
    Ok(Report {
        plot: Plot {
            table: table.clone(),
            x: "seed",
            ys: vec!["overlap"],
            title: format!("BP overlap, a = {a}, b = {b}"),
        },
        table,
        extra,
        lines,
        attachments: Vec::new(),
    })
}

fn popdyn(c: &ExperimentConfig) -> Result<Report, CliError> {
    let (k, eps, pool, iters, init) = (
        c.real("k"),
        c.real("eps"),
        c.count("pool"),
        c.count("iters"),
        c.real("init"),
    );
    let context = || format!("popdyn at k={k}, eps={eps}, pool={pool}");
    let trace = population_dynamics(k, eps, pool, iters, init, c.seed.derive(0)).map_err(|e| failure(context(), e))?;
    let ks = ks_threshold(k, eps).map_err(|e| failure(context(), e))?;
    let growth = if iters >= GROWTH_WINDOW {
        Some(linear_growth_rate(k, eps, pool, iters, c.seed.derive(1)).map_err(|e| failure(context(), e))?)
    } else {
        None
    };
    let mut table = Table::new(&["iteration", "mean", "second_moment"]);
    let mut lines = Vec::new();
    for (t, &(m, m2)) in trace.iter().enumerate() {
        table.push(vec![t.into(), m.into(), m2.into()]);
        lines.push(format!("iteration={t} mean={} second_moment={}", r(m), r(m2)));
    }
    let mut extra = serde_json::Map::new();
    extra.insert("k".into(), json!(k));
    extra.insert("eps".into(), json!(eps));
    extra.insert("ks_value".into(), json!(ks.value));
    extra.insert("unstable".into(), json!(ks.unstable));
    extra.insert("growth_rate".into(), to_value(&growth));
    if let Some(g) = growth {
        lines.push(format!("growth_rate={} ks_value={}", r(g), r(ks.value)));
    }
    Ok(Report {
        plot: Plot {
            table: table.clone(),
            x: "iteration",
            ys: vec!["mean", "second_moment"],
            title: format!("population dynamics, k = {k}, eps = {eps}"),
        },
        table,
        extra,
        lines,
        attachments: Vec::new(),
    })
}

fn oracle_check(c: &ExperimentConfig) -> Result<Report, CliError> {
    let n = c.count("n");
    if n > MAX_SPINS {
        return Err(CliError::Usage(format!("n: exact enumeration is limited to {MAX_SPINS} spins")));
    }
    let inst_seed = SeedSpec::new(c.seed.master_seed, 0);
    let trials = c.count("trials");
    let mut params = std::collections::BTreeMap::new();
    let context = || format!("oracle-check at n={n}");
    let (summary, truth, record, gibbs): (ExactSummary, Vec<i8>, InstanceRecord, Option<bool>) =
        if let Some(lambda) = c.real_opt("lambda") {
            params.insert("lambda".to_string(), lambda);
            let inst = gen_spiked_wigner(n, lambda, inst_seed).map_err(|e| failure(context(), e))?;
            let summary = exact_posterior_marginals(&inst).map_err(|e| failure(context(), e))?;
            let gibbs = if n <= MAX_SPINS_VARIATIONAL {
                let h = PairwiseHamiltonian::spiked_wigner_posterior(&inst);
                let spec = GibbsSpec::new(h, 1.0, n).map_err(|e| failure(context(), e))?;
                Some(gibbs_minimizes_free_energy(&spec, trials, inst_seed.derive(1)).map_err(|e| failure(context(), e))?)
            } else {
                None
            };
            (summary, inst.truth.clone(), inst.record(c.store_observation), gibbs)
        } else {
            let (a, b) = (c.real("a"), c.real("b"));
            params.insert("a".to_string(), a);
            params.insert("b".to_string(), b);
            let inst = if a == b {
                gen_sbm_null(n, a, inst_seed)
            } else {
                gen_sbm(n, a, b, inst_seed)
            }
            .map_err(|e| failure(context(), e))?;
            let summary = exact_posterior_marginals(&inst).map_err(|e| failure(context(), e))?;
            let gibbs = if n <= MAX_SPINS_VARIATIONAL {
                let h = PairwiseHamiltonian::sbm_posterior(&inst);
                let spec = GibbsSpec::new(h, 1.0, n).map_err(|e| failure(context(), e))?;
                Some(gibbs_minimizes_free_energy(&spec, trials, inst_seed.derive(1)).map_err(|e| failure(context(), e))?)
            } else {
                None
            };
            (summary, inst.truth.clone(), inst.record(c.store_observation), gibbs)
        };
    // F = -log Z at unit temperature
    let identity_gap = summary.free_energy + summary.log_partition;
    let fixture = MarginalFixture::from_summary(inst_seed, params, &summary);

    let mut table = Table::new(&["i", "truth", "marginal", "gauge_fixed"]);
    let mut lines = Vec::new();
    for i in 0..n {
        table.push(vec![
            i.into(),
            Cell::Int(truth[i].into()),
            summary.marginals[i].into(),
            summary.gauge_fixed[i].into(),
        ]);
        lines.push(format!(
            "i={i} truth={} gauge_fixed={}",
            truth[i],
            r(summary.gauge_fixed[i])
        ));
    }
    lines.push(format!(
        "logZ={} free_energy_identity_gap={} gibbs_minimizes={}",
        r(summary.log_partition),
        r(identity_gap),
        gibbs.map_or("skipped".into(), |g| g.to_string())
    ));
    let mut extra = serde_json::Map::new();
    extra.insert("fixture".into(), to_value(&fixture));
    extra.insert("log_partition".into(), json!(summary.log_partition));
    extra.insert("free_energy".into(), json!(summary.free_energy));
    extra.insert("entropy".into(), json!(summary.entropy));
    extra.insert("pair_means".into(), to_value(&summary.pair_means));
    extra.insert("gibbs_minimizes_free_energy".into(), to_value(&gibbs));
    extra.insert("instance".into(), to_value(&record));
    Ok(Report {
        plot: Plot {
            table: table.clone(),
            x: "i",
            ys: vec!["gauge_fixed"],
            title: "gauge-fixed posterior marginals".into(),
        },
        table,
        extra,
        lines,
        attachments: vec![("fixture", to_value(&fixture))],
    })
}

//! The subcommands. Each writes its artifacts and reports whether every check passed.

use std::collections::BTreeMap;
use std::fs;

use serde::Serialize;
use serde_json::Value;
use sipfield::coupling::CouplingReport;
use sipfield::covariance::{
    block_covariance_constant, block_variance_sandwich, susceptibility_gap_fit,
};
use sipfield::field::simulate_field;
use sipfield::geometry::{k_star, validate_parameters, BlockGeometry, HypothesisStatus};
use sipfield::lattice::{MultiIndex, Rect};
use sipfield::rng::{Stream, StreamKey};
use sipfield::verify::{
    clt_rate_check, coupling_profile_check, eta_correlation_check, lil_tracker,
    maximal_inequality_check, moment_bound_check, square, term_bound_suite,
    transform_residual_check, CheckResult, CltConfig, LilConfig, MaximalConfig, MomentConfig,
    ProfileWindow, Verdict,
};

use crate::config::LabConfig;
use crate::output::{index, num, Output};
use crate::CliError;

/// What a subcommand produced.
#[derive(Debug)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
}

pub fn validate_params(config: &LabConfig) -> Result<Outcome, CliError> {
    let report = validate_parameters(&config.parameters()?);
    let mut out = Output::new(config, "validate-params")?;
    let rows: Vec<Vec<String>> = report
        .checks
        .iter()
        .map(|c| {
            let status = match c.status {
                HypothesisStatus::Pass => "pass",
                HypothesisStatus::Fail => "fail",
                HypothesisStatus::Informational => "informational",
            };
            vec![
                c.name.clone(),
                c.inequality.clone(),
                num(c.lhs),
                num(c.rhs),
                status.into(),
                c.used_by.clone(),
                c.note.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.csv(
        "validation.csv",
        &[
            "name",
            "inequality",
            "lhs",
            "rhs",
            "status",
            "used_by",
            "note",
        ],
        &rows,
    )?;
    out.json("validation.json", &report)?;
    let lines = report
        .checks
        .iter()
        .map(|c| {
            let note = c
                .note
                .as_deref()
                .map(|n| format!("  [{n}]"))
                .unwrap_or_default();
            format!(
                "{:<24} {:?}  {}  ({} vs {}){note}",
                c.name, c.status, c.inequality, c.lhs, c.rhs
            )
        })
        .collect();
    Ok(Outcome {
        passed: report.all_pass(),
        lines,
    })
}

pub fn geometry(config: &LabConfig) -> Result<Outcome, CliError> {
    let params = config.parameters()?;
    let kmax = config.kmax();
    let geo = BlockGeometry::new(params.clone(), kmax.clone())?;
    let mut out = Output::new(config, "geometry")?;

    let boundary: Vec<Vec<String>> = geo
        .boundary()
        .iter()
        .enumerate()
        .map(|(l, n)| vec![l.to_string(), n.to_string()])
        .collect();
    out.csv("boundary.csv", &["l", "n_l"], &boundary)?;

    let mut blocks = Vec::new();
    for k in Rect::anchored(kmax.clone()).points() {
        let dec = geo.decompose(&k)?;
        blocks.push(vec![
            index(k.coords()),
            dec.volume_h().to_string(),
            dec.volume_i().to_string(),
            dec.volume_b().to_string(),
            u8::from(geo.is_good(&k)).to_string(),
        ]);
    }
    out.csv(
        "blocks.csv",
        &["k", "|H_k|", "|I_k|", "|B_k|", "good"],
        &blocks,
    )?;

    let psi: Vec<Vec<String>> = geo
        .psi()
        .iter()
        .enumerate()
        .map(|(m, k)| vec![(m + 1).to_string(), index(k.coords())])
        .collect();
    out.csv("psi.csv", &["m", "psi(m)"], &psi)?;

    let mut cores = Vec::new();
    let mut inconsistent = 0usize;
    for k in geo.good_set() {
        let core = geo.core_rectangle(k)?;
        inconsistent += usize::from(!core.is_consistent());
        cores.push(vec![
            index(k.coords()),
            index(core.m_k.coords()),
            index(core.r_k.hi.coords()),
            core.l_k.len().to_string(),
            core.violations.len().to_string(),
        ]);
    }
    out.csv(
        "core.csv",
        &["k", "M_k", "N_k", "|L_k|", "violations"],
        &cores,
    )?;

    let k_stars: BTreeMap<String, u64> = if params.d >= 2 {
        (1..=3)
            .map(|m| Ok((m.to_string(), k_star(&params, m)?)))
            .collect::<Result<_, CliError>>()?
    } else {
        BTreeMap::new()
    };
    #[derive(Serialize)]
    struct Summary {
        kmax: MultiIndex,
        boundary: Vec<u64>,
        good_blocks: usize,
        window_blocks: u64,
        k_star: BTreeMap<String, u64>,
        inconsistent_cores: usize,
    }
    let summary = Summary {
        kmax: kmax.clone(),
        boundary: geo.boundary().to_vec(),
        good_blocks: geo.good_set().len(),
        window_blocks: kmax.product()?,
        k_star: k_stars,
        inconsistent_cores: inconsistent,
    };
    out.json("geometry.json", &summary)?;
    Ok(Outcome {
        passed: true,
        lines: vec![
            format!("boundary n_0..: {:?}", geo.boundary()),
            format!(
                "good blocks: {} of {}",
                geo.good_set().len(),
                summary.window_blocks
            ),
        ],
    })
}

pub fn covariance(config: &LabConfig) -> Result<Outcome, CliError> {
    let model = config.covariance_model()?;
    let params = config.parameters()?;
    let geo = BlockGeometry::new(params.clone(), config.kmax())?;
    let mut out = Output::new(config, "covariance")?;

    let u: Vec<Vec<String>> = (0..=16)
        .map(|n| vec![n.to_string(), num(model.u(n))])
        .collect();
    out.csv("u.csv", &["n", "u(n)"], &u)?;

    let sides = [2u64, 4, 8, 16, 32, 64];
    let fit = susceptibility_gap_fit(&model, &sides)?;
    let gap_rows: Vec<Vec<String>> = (0..sides.len())
        .map(|i| vec![sides[i].to_string(), num(fit.volumes[i]), num(fit.gaps[i])])
        .collect();
    out.csv(
        "gap.csv",
        &["l", "|V|", "sigma^2 - sigma^2(V)/|V|"],
        &gap_rows,
    )?;

    let mut sandwich_rows = Vec::new();
    let mut all_hold = true;
    for k in geo.good_set() {
        let s = block_variance_sandwich(&model, &params, k)?;
        all_hold &= s.big.holds && s.small.holds;
        sandwich_rows.push(vec![
            index(k.coords()),
            num(s.big.sigma2_v),
            num(s.big.ratio),
            num(s.small.sigma2_v),
            num(s.small.ratio),
            u8::from(s.big.holds && s.small.holds).to_string(),
        ]);
    }
    out.csv(
        "block_variance.csv",
        &[
            "k",
            "lambda_k^2",
            "lambda_k^2/[k]^alpha",
            "tau_k^2",
            "tau_k^2/|I_k|",
            "sandwich_holds",
        ],
        &sandwich_rows,
    )?;
    let decay = block_covariance_constant(&model, &geo)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        model: &'a sipfield::covariance::CovarianceModel,
        sigma2: f64,
        rho0: f64,
        lambda: Option<f64>,
        nu: f64,
        gap_fit: sipfield::covariance::GapRateFit,
        sandwich_holds: bool,
        decay: sipfield::covariance::DecayConstantReport,
    }
    let summary = Summary {
        model: &model,
        sigma2: model.sigma2(),
        rho0: model.sigma0sq(),
        lambda: model.lambda(),
        nu: model.nu(),
        gap_fit: fit,
        sandwich_holds: all_hold,
        decay,
    };
    out.json("covariance.json", &summary)?;
    Ok(Outcome {
        passed: all_hold,
        lines: vec![
            format!("sigma^2 = {}", summary.sigma2),
            format!("gap slope = {:?}", summary.gap_fit.fitted_slope),
            format!("variance sandwich holds on every good block: {all_hold}"),
        ],
    })
}

pub fn simulate(
    config: &LabConfig,
    extent: Option<MultiIndex>,
    dump: bool,
) -> Result<Outcome, CliError> {
    let model = config.field_model()?;
    let geo = BlockGeometry::new(config.parameters()?, config.kmax())?;
    let extent = match extent {
        Some(e) => e,
        None => geo.corner(&MultiIndex::new(
            config.kmax().coords().iter().map(|&c| c + 1).collect(),
        )),
    };
    if extent.dim() != config.d {
        return Err(CliError::Config(format!(
            "extent must have {} entries",
            config.d
        )));
    }
    let sigma_v = model
        .covariance()?
        .sigma2_rect(&Rect::anchored(extent.clone()))?
        .sqrt();
    let mut out = Output::new(config, "simulate")?;
    let mut rows = Vec::new();
    let mut standardized = Vec::new();
    for r in 0..config.experiment.replicates as u64 {
        let sample = simulate_field(
            &model,
            &extent,
            StreamKey::new(config.experiment.seed, r, Stream::Field),
        )?;
        let values = sample.cells().values();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let s_n = sample.prefix().cumulative_at(extent.coords());
        standardized.push(s_n / sigma_v);
        rows.push(vec![
            r.to_string(),
            num(n),
            num(s_n),
            num(s_n / sigma_v),
            num(mean),
            num(var),
        ]);
        if dump {
            out.grid(&format!("field_r{r}.bin"), extent.coords(), values)?;
        }
    }
    out.csv(
        "samples.csv",
        &[
            "replicate",
            "[N]",
            "S_N",
            "S_N/sigma(N)",
            "mean",
            "variance",
        ],
        &rows,
    )?;
    let reps = standardized.len().max(1) as f64;
    let mean = standardized.iter().sum::<f64>() / reps;
    let second = standardized.iter().map(|x| x * x).sum::<f64>() / reps;
    let summary = BTreeMap::from([
        ("replicates", reps),
        ("sigma_N", sigma_v),
        ("mean_standardized_sum", mean),
        ("second_moment_standardized_sum", second),
    ]);
    out.json("simulate.json", &summary)?;
    Ok(Outcome {
        passed: true,
        lines: vec![format!(
            "{} replicates on extent {extent}",
            config.experiment.replicates
        )],
    })
}

fn coupling_checks(report: &CouplingReport) -> Result<Vec<CheckResult>, CliError> {
    let mut checks = Vec::new();
    if report.experiment.scales.len() >= 3 {
        checks.extend(term_bound_suite(report)?);
    }
    checks.push(coupling_profile_check(report, ProfileWindow::default())?);
    checks.push(transform_residual_check(report, None)?);
    if report.replicates.len() >= 10 {
        checks.push(eta_correlation_check(report)?);
    }
    Ok(checks)
}

pub fn couple(config: &LabConfig) -> Result<Outcome, CliError> {
    let experiment = config.coupling_experiment()?;
    let report = experiment.run()?;
    let mut out = Output::new(config, "couple")?;

    let mut stats_rows = Vec::new();
    let mut term_rows = Vec::new();
    let mut profile_rows = Vec::new();
    let mut remainder_rows = Vec::new();
    for rep in &report.replicates {
        let r = rep.replicate.to_string();
        for b in &rep.stats.records {
            stats_rows.push(vec![
                r.clone(),
                index(b.k.coords()),
                b.volume_b.to_string(),
                num(b.u),
                num(b.v),
                num(b.s_b),
                num(b.lambda2),
                num(b.tau2),
                num(b.w),
                num(b.xi),
                num(b.eta),
                num(b.e),
            ]);
        }
        for s in &rep.scales {
            let t = &s.terms;
            term_rows.push(vec![
                r.clone(),
                index(s.k.coords()),
                t.blocks.to_string(),
                num(t.t1),
                num(t.t2),
                num(t.t3),
                num(t.t4),
                num(t.t5),
                num(t.s_rk),
                num(t.relative_residual),
                num(t.abs_e),
                num(t.abs_t2),
                num(t.abs_w),
                num(t.abs_v),
                num(s.e_k),
            ]);
            let m = &s.remainder;
            for (axis, v) in m.d_s.iter().enumerate() {
                remainder_rows.push(vec![
                    r.clone(),
                    index(s.k.coords()),
                    num(m.volume),
                    "D_s".into(),
                    axis.to_string(),
                    num(*v),
                ]);
            }
            for (axis, v) in m.d_hat_s.iter().enumerate() {
                remainder_rows.push(vec![
                    r.clone(),
                    index(s.k.coords()),
                    num(m.volume),
                    "D^_s".into(),
                    axis.to_string(),
                    num(*v),
                ]);
            }
            for (j, v) in &m.m_j {
                remainder_rows.push(vec![
                    r.clone(),
                    index(s.k.coords()),
                    num(m.volume),
                    "M_k^J".into(),
                    axes(j),
                    num(*v),
                ]);
            }
            for (j, v) in &m.m_hat_j {
                remainder_rows.push(vec![
                    r.clone(),
                    index(s.k.coords()),
                    num(m.volume),
                    "M^_k^J".into(),
                    axes(j),
                    num(*v),
                ]);
            }
        }
        for p in &rep.profile.probes {
            profile_rows.push(vec![
                r.clone(),
                index(p.n.coords()),
                num(p.volume),
                num(p.s_n),
                num(p.w_n),
                num(p.gap),
                num(p.ratio),
            ]);
        }
    }
    out.csv(
        "block_stats.csv",
        &[
            "replicate",
            "k",
            "|B_k|",
            "u_k",
            "v_k",
            "S(B_k)",
            "lambda_k^2",
            "tau_k^2",
            "w_k",
            "xi_k",
            "eta_k",
            "e_k",
        ],
        &stats_rows,
    )?;
    out.csv(
        "terms.csv",
        &[
            "replicate",
            "k",
            "|L_k|",
            "T1",
            "T2",
            "T3",
            "T4",
            "T5",
            "S(R_k)",
            "relative_residual",
            "sum|e_i|",
            "sum sqrt|B_i| a_i |eta_i|",
            "sum|w_i|",
            "sum|v_i|",
            "e_k",
        ],
        &term_rows,
    )?;
    out.csv(
        "profile.csv",
        &["replicate", "N", "[N]", "S_N", "W_N", "|S_N-W_N|", "ratio"],
        &profile_rows,
    )?;
    out.csv(
        "remainders.csv",
        &["replicate", "k", "[N_k]", "quantity", "axis_or_J", "value"],
        &remainder_rows,
    )?;

    let checks = coupling_checks(&report)?;
    let identity_failures = report.identity_failures();
    let passed = identity_failures == 0 && checks.iter().all(CheckResult::passed);
    #[derive(Serialize)]
    struct Summary {
        sigma: f64,
        extent: MultiIndex,
        replicates: usize,
        identity_failures: usize,
        worst_identity_residual: f64,
        checks: Vec<CheckResult>,
    }
    let mut lines = vec![format!(
        "decomposition identity failures: {identity_failures} (worst residual {})",
        report.worst_identity_residual()
    )];
    lines.extend(checks.iter().map(check_line));
    out.json(
        "couple.json",
        &Summary {
            sigma: report.sigma,
            extent: report.extent.clone(),
            replicates: report.replicates.len(),
            identity_failures,
            worst_identity_residual: report.worst_identity_residual(),
            checks,
        },
    )?;
    Ok(Outcome { passed, lines })
}

fn axes(j: &[usize]) -> String {
    j.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn check_line(c: &CheckResult) -> String {
    let verdict = match c.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Informational => "INFO",
    };
    let shown = match c.statistics.len() {
        0..=6 => format!("{:?}", c.statistics),
        n => format!("{n} values, last {}", c.statistics[n - 1]),
    };
    format!("{verdict} {:<20} {shown}", c.name)
}

/// Names accepted by `verify --check`.
pub const CHECK_NAMES: [&str; 5] = ["clt", "moment", "maximal", "lil", "terms"];

/// Side of the anchored square whose volume is close to `64^2`.
fn anchored_side(d: usize) -> u64 {
    (4096f64.powf(1.0 / d as f64)).round().max(2.0) as u64
}

pub fn verify(config: &LabConfig, checks: &[String]) -> Result<Outcome, CliError> {
    for c in checks {
        if c != "all" && !CHECK_NAMES.contains(&c.as_str()) {
            return Err(CliError::Config(format!(
                "unknown check '{c}'; expected one of {CHECK_NAMES:?} or all"
            )));
        }
    }
    let names: Vec<&str> = CHECK_NAMES
        .into_iter()
        .filter(|n| checks.iter().any(|c| c == "all" || c == n))
        .collect();
    let model = config.field_model()?;
    let exp = &config.experiment;
    let d = config.d;
    let mut results: Vec<CheckResult> = Vec::new();
    for name in &names {
        match *name {
            "clt" => results.push(clt_rate_check(
                &model,
                &CltConfig {
                    sides: exp.sizes.clone(),
                    replicates: exp.check_replicates,
                    master_seed: exp.seed,
                    ks_floor: 0.05,
                },
            )?),
            "moment" => results.push(moment_bound_check(
                &model,
                &MomentConfig {
                    sides: exp.sizes.clone(),
                    r: config.geometry.r,
                    replicates: exp.check_replicates,
                    master_seed: exp.seed,
                    max_spread: 3.0,
                    anchor_tolerance: 0.05,
                },
            )?),
            "maximal" => {
                let small_side = (1..=4u64)
                    .rev()
                    .find(|s| s.pow(d as u32) <= 64)
                    .unwrap_or(1);
                results.push(maximal_inequality_check(
                    &model,
                    &MaximalConfig {
                        small: square(d, small_side),
                        x_grid: vec![2.0, 3.0, 4.0],
                        r: config.geometry.r,
                        replicates: 2 * exp.check_replicates,
                        anchored_side: anchored_side(d),
                        anchored_replicates: (exp.check_replicates / 5).max(1),
                        master_seed: exp.seed,
                        c_max: 10.0,
                    },
                )?)
            }
            "lil" => {
                let side = (262144f64.powf(1.0 / d as f64)).round() as u64;
                results.push(lil_tracker(
                    &model,
                    &LilConfig {
                        tau: config.geometry.tau,
                        extent: square(d, side),
                        replicates: exp.replicates,
                        master_seed: exp.seed,
                        min_volume: 1e3,
                    },
                )?)
            }
            _ => {
                let report = config.coupling_experiment()?.run()?;
                results.extend(coupling_checks(&report)?);
            }
        }
    }
    let mut out = Output::new(config, "verify")?;
    for c in &results {
        let mut rows: Vec<Vec<String>> = c
            .sizes
            .iter()
            .zip(&c.statistics)
            .map(|(s, v)| vec![num(*s), num(*v)])
            .collect();
        if c.sizes.len() != c.statistics.len() {
            rows = c
                .statistics
                .iter()
                .map(|v| vec![String::new(), num(*v)])
                .collect();
        }
        out.csv(
            &format!("check_{}.csv", c.name),
            &["size", "statistic"],
            &rows,
        )?;
    }
    let keyed: BTreeMap<&str, &CheckResult> =
        results.iter().map(|c| (c.name.as_str(), c)).collect();
    out.json("verify.json", &keyed)?;
    Ok(Outcome {
        passed: results.iter().all(CheckResult::passed),
        lines: results.iter().map(check_line).collect(),
    })
}

/// Merges every JSON artifact in the output directory into `report.json`.
pub fn report(config: &LabConfig) -> Result<Outcome, CliError> {
    let dir = config.resolved_output_dir();
    let mut entries: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n != "report.json")
        })
        .collect();
    entries.sort();
    let mut merged: BTreeMap<String, Value> = BTreeMap::new();
    for path in &entries {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let name = path
            .file_name()
            .expect("file")
            .to_string_lossy()
            .into_owned();
        merged.insert(name, doc);
    }
    let mut out = Output::new(config, "report")?;
    out.json("report.json", &merged)?;
    Ok(Outcome {
        passed: true,
        lines: vec![format!("merged {} artifacts", merged.len())],
    })
}

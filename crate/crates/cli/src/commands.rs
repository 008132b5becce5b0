use std::fs::File;
use std::io::{self, Write};

use hoqs_core::hybrid::{self, legacy};
use hoqs_core::instruction::{unrank, Cipher};
use hoqs_core::optimizer::{feasibility_report, nu_scan, OptimizationCsvRow};
use hoqs_core::protocol::{self, BatchReport, CycleConfig, CycleCsvRow, CycleReport, SAMPLE_MESSAGE};
use hoqs_core::{GridPreset, OptimizationResult, OptimizerConfig, PeType, SecurityParams};
use serde::Serialize;

use crate::config::FileConfig;
use crate::{
    BatchArgs, CliError, Context, CycleArgs, ExportArgs, ExportKind, OptimizeArgs, ParamArgs, SizeModelArgs, SweepArgs,
    Table1Args,
};

const DEFAULT_DELTA: f64 = 0.0627;
const DEFAULT_CYCLES: u32 = 10;

/// Published `(pe, nu, l/N)` rows; `None` means no positive key.
fn reference_rows(s: u32) -> Option<[(PeType, Option<f64>, Option<f64>); 3]> {
    match s {
        6 => Some([
            (PeType::Serfling, Some(0.043), Some(0.003)),
            (PeType::Chernoff, Some(0.023), Some(0.027)),
            (PeType::CpExact, Some(0.006), Some(0.066)),
        ]),
        9 => Some([
            (PeType::Serfling, None, None),
            (PeType::Chernoff, None, Some(0.015)),
            (PeType::CpExact, None, Some(0.062)),
        ]),
        _ => None,
    }
}

const RATE_TOL: f64 = 0.002;
/// Half a unit in the last published digit.
const NU_ROUNDING: f64 = 0.0005;

fn csv_writer(ctx: &Context) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    let sink: Box<dyn Write> = match &ctx.out {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn write_rows<T: Serialize>(ctx: &Context, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv_writer(ctx)?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn security_params(file: &FileConfig, a: &ParamArgs, delta: f64) -> Result<SecurityParams, CliError> {
    let mut p = SecurityParams::new(
        a.s.or(file.s).unwrap_or(6),
        a.raw_bits.or(file.raw_bits).unwrap_or(20_000),
        delta,
    );
    p.syndrome_bits = a.r.or(file.syndrome_bits).unwrap_or(p.syndrome_bits);
    p.tag_count = a.q.or(file.tag_count).unwrap_or(p.tag_count);
    p.tag_bits = a.p.or(file.tag_bits).unwrap_or(p.tag_bits);
    p.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(p)
}

fn optimizer_config(file: &FileConfig, a: &ParamArgs, delta: Option<f64>) -> Result<OptimizerConfig, CliError> {
    let delta = delta.or(file.delta).unwrap_or(DEFAULT_DELTA);
    let params = security_params(file, a, delta)?;
    let pe = a.pe.or(file.pe).unwrap_or(PeType::CpExact);
    let grid = a.grid.or(file.grid).unwrap_or(GridPreset::Full);
    let mut cfg = OptimizerConfig::new(params, pe, grid);
    cfg.error_count_rule = a.cp_count.or(file.cp_count).unwrap_or_default();
    Ok(cfg)
}

fn run_optimizer(cfg: &OptimizerConfig) -> Result<OptimizationResult, CliError> {
    hoqs_core::optimize(cfg).map_err(|e| CliError::Validation(e.to_string()))
}

fn summarize(r: &OptimizationResult) {
    let p = &r.params;
    eprintln!(
        "{} s={} N={} n={} delta={} q={} r={}",
        r.pe_type, p.s, p.raw_bits, p.sample_bits, p.delta, p.tag_count, p.syndrome_bits
    );
    match (r.l_max, r.nu_star) {
        (Some(l), Some(nu)) => {
            eprint!("  l={l} l/N={:.5} nu*={nu:.6}", r.key_rate().unwrap_or(0.0));
            if let Some(mu) = r.mu_star {
                eprint!(" mu*={mu:.6}");
            }
            eprintln!(" ({:.2?})", r.elapsed);
        }
        _ => eprintln!("  no positive key ({:.2?})", r.elapsed),
    }
    eprint!("{}", feasibility_report(r));
}

pub fn optimize(ctx: &Context, a: &OptimizeArgs) -> Result<(), CliError> {
    let cfg = optimizer_config(&ctx.file, &a.params, a.delta)?;
    let r = run_optimizer(&cfg)?;
    write_rows(ctx, &[OptimizationCsvRow::from(&r)])?;
    summarize(&r);
    if r.is_feasible() {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!("no positive key for {} at s={}, delta={}", r.pe_type, r.params.s, r.params.delta)))
    }
}

#[derive(Debug, Serialize)]
struct Table1Row {
    pe_type: PeType,
    s: u32,
    nu_star: Option<f64>,
    mu_star: Option<f64>,
    l: Option<u64>,
    l_over_n: Option<f64>,
    ref_nu: Option<f64>,
    ref_l_over_n: Option<f64>,
    nu_tol: f64,
    l_over_n_tol: f64,
    within_tolerance: bool,
    elapsed_s: f64,
}

fn within(got: Option<f64>, want: Option<f64>, tol: f64) -> bool {
    match (got, want) {
        (Some(g), Some(w)) => (g - w).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

pub fn table1(ctx: &Context, a: &Table1Args) -> Result<(), CliError> {
    let refs = reference_rows(a.s);
    let mut rows = Vec::new();
    let mut breaches = Vec::new();
    for (i, pe) in PeType::ALL.into_iter().enumerate() {
        let params = SecurityParams::new(a.s, 20_000, DEFAULT_DELTA);
        let mut cfg = OptimizerConfig::new(params, pe, a.grid);
        cfg.error_count_rule = a.cp_count;
        let r = run_optimizer(&cfg)?;
        summarize(&r);
        let nu_tol = cfg.grid_step() + NU_ROUNDING;
        let (ref_nu, ref_rate, ok) = match refs {
            Some(rows) => {
                let (_, nu, rate) = rows[i];
                let nu_ok = nu.is_none() || within(r.nu_star, nu, nu_tol);
                let ok = nu_ok && within(r.key_rate(), rate, RATE_TOL);
                (nu, rate, ok)
            }
            None => (None, None, true),
        };
        if !ok {
            breaches.push(pe.as_str());
        }
        rows.push(Table1Row {
            pe_type: pe,
            s: a.s,
            nu_star: r.nu_star,
            mu_star: r.mu_star,
            l: r.l_max,
            l_over_n: r.key_rate(),
            ref_nu,
            ref_l_over_n: ref_rate,
            nu_tol,
            l_over_n_tol: RATE_TOL,
            within_tolerance: ok,
            elapsed_s: r.elapsed.as_secs_f64(),
        });
    }
    write_rows(ctx, &rows)?;
    if breaches.is_empty() {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!("outside the published tolerance: {}", breaches.join(", "))))
    }
}

pub fn cycle_config(ctx: &Context, a: &CycleArgs) -> Result<CycleConfig, CliError> {
    let f = &ctx.file;
    let d = CycleConfig::default();
    let cfg = CycleConfig {
        n_obs: a.nobs.or(f.n_obs).unwrap_or(d.n_obs),
        s: a.params.s.or(f.s).unwrap_or(d.s),
        raw_bits: a.params.raw_bits.or(f.raw_bits).unwrap_or(d.raw_bits),
        qber: a.qber.or(f.qber).unwrap_or(d.qber),
        pe_type: a.params.pe.or(f.pe).unwrap_or(d.pe_type),
        grid: a.params.grid.or(f.grid).unwrap_or(d.grid),
        kem: a.kem.or(f.kem).unwrap_or(d.kem),
        message: a.message.clone().or_else(|| f.message.clone()).map(String::into_bytes).unwrap_or(d.message),
        seed: ctx.seed.or(f.seed).unwrap_or(d.seed),
        psk_seed: a.psk_seed.or(f.psk_seed).unwrap_or(d.psk_seed),
        psk_bits: f.psk_bits.unwrap_or(d.psk_bits),
        max_bp_iters: f.max_bp_iters.unwrap_or(d.max_bp_iters),
        max_nobs: a.max_nobs.or(f.max_nobs).unwrap_or(d.max_nobs),
    };
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(cfg)
}

fn transport(ctx: &Context, a: &CycleArgs) -> protocol::Transport {
    a.transport.or(ctx.file.transport).unwrap_or_default()
}

fn cycle_summary(r: &CycleReport) {
    eprintln!(
        "cycle {} n_obs={} {} sequence={} qkd_bits={} keys_match={} message_recovered={}",
        r.cycle_id,
        r.n_obs,
        r.status,
        r.sequence.as_deref().unwrap_or("-"),
        r.qkd_bits_extracted,
        r.keys_match,
        r.message_recovered
    );
    for s in &r.sessions {
        eprintln!("  session {} {} alpha={:.5} l={}", s.index, s.status, s.alpha, s.l.map_or("-".into(), |l| l.to_string()));
    }
}

pub fn cycle(ctx: &Context, a: &CycleArgs) -> Result<(), CliError> {
    let cfg = cycle_config(ctx, a)?;
    let code = cfg.parity_check().map_err(|e| CliError::Validation(e.to_string()))?;
    let (mut la, mut lb) = protocol::ledgers(&cfg);
    let r = protocol::run_cycle_with(&cfg, &code, 1, transport(ctx, a), &mut la, &mut lb)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_rows(ctx, &[CycleCsvRow::from(&r)])?;
    cycle_summary(&r);
    if r.status.is_completed() {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!("cycle aborted: {}", r.status)))
    }
}

fn run_batch(ctx: &Context, cfg: &CycleConfig, cycles: u32, a: &CycleArgs) -> Result<BatchReport, CliError> {
    if cycles == 0 {
        return Err(CliError::Validation("cycles must be at least 1".into()));
    }
    protocol::run_batch(cfg, cycles, transport(ctx, a)).map_err(|e| CliError::Io(e.to_string()))
}

pub fn batch(ctx: &Context, a: &BatchArgs) -> Result<(), CliError> {
    let cfg = cycle_config(ctx, &a.cycle)?;
    let cycles = a.cycles.or(ctx.file.cycles).unwrap_or(DEFAULT_CYCLES);
    let report = run_batch(ctx, &cfg, cycles, &a.cycle)?;
    let rows: Vec<CycleCsvRow> = report.cycles.iter().map(CycleCsvRow::from).collect();
    write_rows(ctx, &rows)?;
    eprintln!(
        "{} of {} cycles completed, {} bits in {:.3?}, key rate {:.1} bit/s",
        report.completed,
        report.cycles.len(),
        report.total_bits,
        report.total_time,
        report.key_rate
    );
    if report.completed == report.cycles.len() {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!("{} cycles aborted", report.cycles.len() - report.completed)))
    }
}

#[derive(Debug, Serialize)]
struct SweepRow {
    n_obs: u32,
    cycles: usize,
    completed: usize,
    pe_type: PeType,
    qkd_bits: u64,
    key_rate_bps: f64,
    mean_alpha: Option<f64>,
    l_serfling: Option<u64>,
    l_chernoff: Option<u64>,
    l_cp_exact: Option<u64>,
    rate_serfling_bps: Option<f64>,
    rate_chernoff_bps: Option<f64>,
    rate_cp_exact_bps: Option<f64>,
    mean_qkd_s: f64,
    mean_pqc_s: f64,
    mean_he_s: f64,
    he_steps: usize,
    envelope_bytes: Option<usize>,
    plus_bits: u64,
    legacy_bits: u64,
    legacy_over_plus: f64,
    plus_over_legacy: f64,
}

/// Per-bound key lengths at the batch's mean sample QBER, with the projected rate over the batch time.
fn per_bound(cfg: &CycleConfig, report: &BatchReport, alpha: f64) -> Result<[(Option<u64>, Option<f64>); 3], CliError> {
    let code = cfg.parity_check().map_err(|e| CliError::Validation(e.to_string()))?;
    let sessions = (report.cycles.len() as u64) * u64::from(cfg.gamma());
    let secs = report.total_time.as_secs_f64();
    let mut out = [(None, None); 3];
    for (slot, pe) in out.iter_mut().zip(PeType::ALL) {
        let params = cfg.session_params(&code).with_delta(alpha);
        let r = run_optimizer(&OptimizerConfig::new(params, pe, cfg.grid))?;
        *slot = (r.l_max, r.l_max.filter(|_| secs > 0.0).map(|l| (sessions * l) as f64 / secs));
    }
    Ok(out)
}

pub fn sweep_nobs(ctx: &Context, a: &SweepArgs) -> Result<(), CliError> {
    let cycles = a.cycles.or(ctx.file.cycles).unwrap_or(DEFAULT_CYCLES);
    if a.nobs_list.is_empty() {
        return Err(CliError::Validation("empty n_obs list".into()));
    }
    let mut rows = Vec::new();
    let mut aborted = 0;
    for &n_obs in &a.nobs_list {
        let mut args = a.cycle.clone();
        args.nobs = Some(n_obs);
        let cfg = cycle_config(ctx, &args)?;
        let report = run_batch(ctx, &cfg, cycles, &args)?;
        aborted += report.cycles.len() - report.completed;
        let alphas: Vec<f64> = report.cycles.iter().flat_map(|c| c.sessions.iter().map(|s| s.alpha)).filter(|a| a.is_finite()).collect();
        let mean_alpha = (!alphas.is_empty()).then(|| alphas.iter().sum::<f64>() / alphas.len() as f64);
        let bounds = match mean_alpha {
            Some(alpha) if alpha <= hoqs_core::bounds::QBER_THRESHOLD => per_bound(&cfg, &report, alpha)?,
            _ => [(None, None); 3],
        };
        let k = report.cycles.len() as f64;
        let mean = |f: &dyn Fn(&CycleReport) -> f64| report.cycles.iter().map(f).sum::<f64>() / k;
        let plus_bytes = report
            .cycles
            .iter()
            .find_map(|c| c.final_ct_bytes)
            .unwrap_or_else(|| protocol::expected_final_ct_bytes(cfg.message.len(), n_obs));
        let plus_bits = 8 * plus_bytes as u64;
        let legacy_bits = legacy::legacy_size_model(n_obs, 8 * cfg.message.len() as u64)
            .map_err(|e| CliError::Validation(e.to_string()))?
            .final_bits;
        eprintln!("n_obs={n_obs}: {} of {} completed, rate {:.1} bit/s", report.completed, report.cycles.len(), report.key_rate);
        rows.push(SweepRow {
            n_obs,
            cycles: report.cycles.len(),
            completed: report.completed,
            pe_type: cfg.pe_type,
            qkd_bits: report.total_bits,
            key_rate_bps: report.key_rate,
            mean_alpha,
            l_serfling: bounds[0].0,
            l_chernoff: bounds[1].0,
            l_cp_exact: bounds[2].0,
            rate_serfling_bps: bounds[0].1,
            rate_chernoff_bps: bounds[1].1,
            rate_cp_exact_bps: bounds[2].1,
            mean_qkd_s: mean(&|c| c.qkd_time.as_secs_f64()),
            mean_pqc_s: mean(&|c| c.pqc_time.as_secs_f64()),
            mean_he_s: mean(&|c| c.he_time.as_secs_f64()),
            he_steps: protocol::he_step_count(n_obs),
            envelope_bytes: report.cycles.iter().find_map(|c| c.envelope_bytes),
            plus_bits,
            legacy_bits,
            legacy_over_plus: legacy_bits as f64 / plus_bits as f64,
            plus_over_legacy: plus_bits as f64 / legacy_bits as f64,
        });
    }
    write_rows(ctx, &rows)?;
    if aborted == 0 {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!("{aborted} cycles aborted")))
    }
}

#[derive(Debug, Serialize)]
struct SizeRow {
    model: &'static str,
    n_obs: u32,
    step: usize,
    layer: String,
    bits: u64,
}

pub fn size_model(ctx: &Context, a: &SizeModelArgs) -> Result<(), CliError> {
    let msg_bytes = a.msg_bytes.unwrap_or(SAMPLE_MESSAGE.len());
    let msg_bits = 8 * msg_bytes as u64;
    let mut rows = Vec::new();
    for &n_obs in &a.nobs_list {
        let is = unrank(0, n_obs).map_err(|e| CliError::Validation(e.to_string()))?;
        let model = legacy::legacy_size_model(n_obs, msg_bits).map_err(|e| CliError::Validation(e.to_string()))?;
        rows.push(SizeRow { model: "legacy", n_obs, step: 0, layer: "input".into(), bits: msg_bits });
        for (i, (layer, bits)) in model.layers.iter().zip(&model.sizes[1..]).enumerate() {
            rows.push(SizeRow { model: "legacy", n_obs, step: i + 1, layer: format!("{layer:?}").to_lowercase(), bits: *bits });
        }
        rows.push(SizeRow { model: "plus", n_obs, step: 0, layer: "input".into(), bits: msg_bits });
        let mut bits = 8 * hybrid::padded_len(msg_bytes) as u64;
        for (i, c) in is.steps.iter().enumerate() {
            if *c == Cipher::Ascon {
                bits += 8 * hybrid::TAG_BYTES as u64;
            }
            rows.push(SizeRow { model: "plus", n_obs, step: i + 1, layer: c.tag().to_lowercase(), bits });
        }
        debug_assert_eq!(bits, 8 * protocol::expected_final_ct_bytes(msg_bytes, n_obs) as u64);
    }
    write_rows(ctx, &rows)
}

pub fn export(ctx: &Context, a: &ExportArgs) -> Result<(), CliError> {
    match a.what {
        ExportKind::NuScan => {
            let cfg = optimizer_config(&ctx.file, &a.params, a.delta)?;
            let rows = nu_scan(&cfg).map_err(|e| CliError::Validation(e.to_string()))?;
            write_rows(ctx, &rows)
        }
        ExportKind::Config => {
            let text = toml::to_string(&FileConfig::template()).map_err(|e| CliError::Io(e.to_string()))?;
            match &ctx.out {
                Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

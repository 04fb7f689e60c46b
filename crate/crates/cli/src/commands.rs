use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mixlab_core::tensorfile::format_real;
use mixlab_core::vae::{evaluate_bound, train_from};
use mixlab_core::{
    fit_em, generate_gmm_data, init_grid, mean_field_fit, DMatrix, DVector, EmTrace, GaussianParams,
    LatentModel, MeanFieldState, MixtureParams, QuadraticJoint, Seed, VaeModel,
};

use crate::config::ExperimentConfig;
use crate::files::{csv_writer, params_to_text, read_dataset, read_params, write_dataset, write_text};
use crate::matching::match_components;
use crate::svg::ellipse_plot;

/// Stream for the final bound evaluation, clear of the training streams.
const EVAL_STREAM: u64 = 4;

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn vector(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m.row_iter().map(|r| vector(&r.transpose())).collect();
    format!("[{}]", rows.join(", "))
}

/// Component order for reports: means sorted lexicographically.
pub fn canonical_order(theta: &MixtureParams) -> Vec<usize> {
    let comps = theta.components();
    let mut order: Vec<usize> = (0..comps.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (comps[a].mean(), comps[b].mean());
        ma.iter()
            .zip(mb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<String> {
    create_out(&cfg.out)?;
    let (x, z) = generate_gmm_data(&cfg.truth, cfg.n_samples, Seed(cfg.seed))?;
    write_dataset(&cfg.out.join("data.csv"), &x, &z)?;
    write_text(&cfg.out.join("truth.txt"), &params_to_text(&cfg.truth))?;
    let mut summary = format!("{} samples written to {}\n", x.len(), cfg.out.join("data.csv").display());
    for j in 0..cfg.truth.n_components() {
        let count = z.iter().filter(|&&l| l == j).count();
        writeln!(summary, "label {}: {count}", j + 1)?;
    }
    Ok(summary)
}

pub fn em_report(trace: &EmTrace, order: &[usize]) -> Result<String> {
    let theta = trace.final_params();
    let k = theta.n_components();
    let mut s = String::new();
    writeln!(s, "EM results for K = {k} components. Stop at {} passes ({}).", trace.passes_used(), trace.stop_reason)?;
    writeln!(s, "final log-likelihood: {}", trace.final_log_likelihood())?;
    writeln!(s)?;
    let weights: Vec<String> = order.iter().map(|&j| theta.weights()[j].to_string()).collect();
    writeln!(s, "[pi_1, ..., pi_k]  [{}]", weights.join(", "))?;
    let means: Vec<String> = order.iter().map(|&j| vector(theta.components()[j].mean())).collect();
    writeln!(s, "mu_1, ..., mu_k    {}", means.join(" "))?;
    let covs: Vec<String> = order.iter().map(|&j| matrix(theta.components()[j].cov())).collect();
    writeln!(s, "P_1, ..., P_k      {}", covs.join(" "))?;
    Ok(s)
}

fn write_em_trace(path: &Path, trace: &EmTrace, order: &[usize]) -> Result<()> {
    let dim = trace.final_params().dim();
    let mut header = vec!["pass".to_string(), "loglik".to_string()];
    for c in 1..=order.len() {
        header.push(format!("weight_{c}"));
    }
    for c in 1..=order.len() {
        header.extend((1..=dim).map(|i| format!("mean_{c}_{i}")));
        for r in 1..=dim {
            header.extend((1..=dim).map(|i| format!("cov_{c}_{r}{i}")));
        }
    }
    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    for pass in &trace.passes {
        let theta = &pass.params;
        let mut row = vec![pass.pass.to_string(), format_real(pass.log_likelihood)];
        row.extend(order.iter().map(|&j| format_real(theta.weights()[j])));
        for &j in order {
            let g = &theta.components()[j];
            row.extend(g.mean().iter().map(|v| format_real(*v)));
            row.extend(g.cov().transpose().iter().map(|v| format_real(*v)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fit_em_cmd(cfg: &ExperimentConfig) -> Result<String> {
    let x = read_dataset(&cfg.data)?;
    let init = init_grid(&x, cfg.k_hat, Seed(cfg.seed))?;
    let trace = fit_em(&x, &cfg.stop, init).context("EM fit failed")?;
    create_out(&cfg.out)?;
    let order = canonical_order(trace.final_params());
    let mut rank = vec![0; order.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }

    let report = em_report(&trace, &order)?;
    write_text(&cfg.out.join("em_report.txt"), &report)?;
    let canonical = trace.final_params().permuted(&order)?;
    write_text(&cfg.out.join("params.txt"), &params_to_text(&canonical))?;
    write_em_trace(&cfg.out.join("em_trace.csv"), &trace, &order)?;
    let per_pass: Vec<Vec<GaussianParams>> = trace.passes[1..]
        .iter()
        .map(|p| p.params.components().to_vec())
        .collect();
    write_text(&cfg.out.join("em_ellipses.svg"), &ellipse_plot(&x, &per_pass, &rank)?)?;
    Ok(report)
}

pub fn fit_vb_cmd(cfg: &ExperimentConfig) -> Result<String> {
    let joint = QuadraticJoint::new(cfg.precision.clone(), cfg.linear.clone(), 0.0)?;
    let model = LatentModel::quadratic(joint.clone());
    let init = MeanFieldState::new(joint.dim())?;
    let state = mean_field_fit(&model, init, cfg.max_sweeps, cfg.sweep_tol)?;
    create_out(&cfg.out)?;

    let exact = joint.posterior();
    let mut s = String::new();
    writeln!(s, "mean-field fit of a {}-dimensional quadratic model", joint.dim())?;
    writeln!(
        s,
        "sweeps: {} ({} effective), converged: {}",
        state.sweeps,
        state.effective_sweeps(),
        if state.converged { "yes" } else { "no" }
    )?;
    writeln!(s, "final bound: {}", state.vlb_trace.last().copied().unwrap_or(f64::NAN))?;
    writeln!(s, "log evidence: {}", joint.log_evidence())?;
    writeln!(s)?;
    for (i, f) in state.factors.iter().enumerate() {
        writeln!(s, "factor {}: mean {} covariance {}", i + 1, vector(f.mean()), matrix(f.cov()))?;
    }
    writeln!(s, "exact posterior: mean {} covariance {}", vector(exact.mean()), matrix(exact.cov()))?;
    write_text(&cfg.out.join("vb_report.txt"), &s)?;

    let mut w = csv_writer(&cfg.out.join("vb_trace.csv"))?;
    w.write_record(["sweep", "vlb"])?;
    for (i, v) in state.vlb_trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format_real(*v)])?;
    }
    w.flush()?;
    Ok(s)
}

pub fn train_vae_cmd(cfg: &ExperimentConfig) -> Result<String> {
    let x = read_dataset(&cfg.data)?;
    let mut vae = cfg.vae.clone();
    vae.n_x = x[0].len();
    let init = VaeModel::init(&vae)?;
    let init_text = init.to_checkpoint();
    let outcome = train_from(init, &x, &vae, cfg.estimator).context("training failed")?;
    create_out(&cfg.out)?;
    write_text(&cfg.out.join("vae_init.txt"), &init_text)?;
    write_text(&cfg.out.join("vae_checkpoint.txt"), &outcome.model.to_checkpoint())?;
    let mut w = csv_writer(&cfg.out.join("vae_trace.csv"))?;
    w.write_record(["epoch", "bound"])?;
    for (i, v) in outcome.trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format_real(*v)])?;
    }
    w.flush()?;
    let est = evaluate_bound(
        &outcome.model,
        &x,
        cfg.eval_samples,
        Seed(cfg.seed).derive(&[EVAL_STREAM]),
        cfg.estimator,
    )?;
    Ok(format!(
        "mean bound per datapoint ({} draws each): {} +/- {}\n",
        cfg.eval_samples, est.value, est.std_error
    ))
}

pub fn comparison(estimate: &MixtureParams, truth: &MixtureParams) -> Result<String> {
    let means = |t: &MixtureParams| -> Vec<DVector<f64>> {
        t.components().iter().map(|c| c.mean().clone()).collect()
    };
    let m = match_components(&means(estimate), &means(truth))?;
    let mut s = String::new();
    writeln!(
        s,
        "{} estimated and {} true components; deltas are estimate minus truth",
        estimate.n_components(),
        truth.n_components()
    )?;
    for &(e, t) in &m.pairs {
        let (ge, gt) = (&estimate.components()[e], &truth.components()[t]);
        let (we, wt) = (estimate.weights()[e], truth.weights()[t]);
        writeln!(s)?;
        writeln!(s, "estimate {} -> truth {}", e + 1, t + 1)?;
        writeln!(s, "  weight      {we} vs {wt}, delta {}", we - wt)?;
        writeln!(s, "  mean        {} vs {}, delta {}", vector(ge.mean()), vector(gt.mean()), vector(&(ge.mean() - gt.mean())))?;
        writeln!(s, "  covariance  {} vs {}, delta {}", matrix(ge.cov()), matrix(gt.cov()), matrix(&(ge.cov() - gt.cov())))?;
    }
    let list = |v: &[usize]| {
        if v.is_empty() {
            "none".to_string()
        } else {
            v.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(", ")
        }
    };
    writeln!(s)?;
    writeln!(s, "unmatched estimated components: {}", list(&m.unmatched_estimated))?;
    writeln!(s, "unmatched true components: {}", list(&m.unmatched_true))?;
    Ok(s)
}

pub fn report_cmd(cfg: &ExperimentConfig) -> Result<String> {
    let estimate = read_params(&cfg.estimate_file)?;
    let truth = read_params(&cfg.truth_file)?;
    let text = comparison(&estimate, &truth)?;
    create_out(&cfg.out)?;
    write_text(&cfg.out.join("comparison.txt"), &text)?;
    Ok(text)
}

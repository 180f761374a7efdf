//! One function per subcommand. Each reads the resolved configuration, does
//! its work through the core library and writes tables into a [`RunDir`].

use std::path::Path;

use onlab::analysis::{
    alignment_curve, in_cell_radius, linearity_deviation, measure_map, robust_accuracy_curve,
    shared_activation_stats, singular_spectrum, top_sv_over_distance, verify_theorem1,
};
use onlab::attack::{pga_attack, AttackConfig};
use onlab::data::{gen_synthetic, Dataset, SplitDataset};
use onlab::experiment::{adversarial_perturbations, input_range, select_training_eps, uniform_in_cube};
use onlab::linalg::{p_norm, vector::norm2, NormOrder};
use onlab::opnorm::random_start;
use onlab::rng::derive;
use onlab::train::{accuracy, log_grid, train, EpochMetrics};
use onlab::{par, Network};
use tracing::{info, warn};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{read_dataset, read_network_file, write_dataset, write_network_file, RunDir};

pub const METRICS_HEADER: [&str; 4] = ["epoch", "objective", "clean_acc", "probe_sigma_mean"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisKind {
    Spectrum,
    Alignment,
    Linearity,
    Topsv,
    Activations,
    Accuracy,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<SplitDataset, CliError> {
    if let Some(path) = &cfg.data.path {
        return read_dataset(path);
    }
    let mut data = gen_synthetic(&cfg.synthetic_spec())?;
    if cfg.data.standardize {
        data.standardize();
    }
    Ok(data)
}

/// The leading `analysis.samples` points of `analysis.split`.
fn analysis_points(cfg: &ExperimentConfig, data: &SplitDataset) -> Dataset {
    let split = match cfg.analysis.split.as_str() {
        "train" => &data.train,
        "val" => &data.val,
        _ => &data.test,
    };
    match cfg.analysis.samples {
        0 => split.clone(),
        n => split.take(n),
    }
}

fn initial_network(cfg: &ExperimentConfig, input_dim: usize, classes: usize) -> Result<Network, CliError> {
    if let Some(path) = &cfg.model.checkpoint {
        return read_network_file(path);
    }
    let mut dims = vec![input_dim];
    dims.extend(&cfg.model.hidden);
    dims.push(classes);
    let mut net = Network::random_with_bias(&dims, cfg.model.bias_scale, cfg.model_seed());
    for layer in net.layers_mut() {
        layer.weight.scale(cfg.model.init_gain);
    }
    Ok(net)
}

fn trained_network(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<Network, CliError> {
    match model.or(cfg.model.checkpoint.as_deref()) {
        Some(p) => read_network_file(p),
        None => Err(CliError::Config("no network given: pass --model or set model.checkpoint".into())),
    }
}

fn check_shapes(net: &Network, data: &Dataset) -> Result<(), CliError> {
    if net.input_dim() != data.dim() {
        return Err(CliError::Config(format!(
            "network expects {} inputs but the data has {} features",
            net.input_dim(),
            data.dim()
        )));
    }
    if net.output_dim() < data.classes {
        return Err(CliError::Config(format!(
            "network has {} outputs but the data has {} classes",
            net.output_dim(),
            data.classes
        )));
    }
    Ok(())
}

fn collect<T>(results: Vec<onlab::Result<T>>) -> Result<Vec<T>, CliError> {
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

fn metrics_rows(metrics: &[EpochMetrics]) -> Vec<(usize, f64, f64, f64)> {
    metrics.iter().map(|m| (m.epoch, m.objective, m.clean_acc, m.probe_sigma_mean)).collect()
}

pub fn gen_data(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    write_dataset(run, "dataset.csv", &data)?;
    run.note("train", data.train.len());
    run.note("val", data.val.len());
    run.note("test", data.test.len());
    run.note("dim", data.train.dim());
    run.note("classes", data.train.classes);
    Ok(())
}

pub fn init_model(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    let net = initial_network(cfg, cfg.data.dim, cfg.data.classes)?;
    write_network_file(run, "model.onlab", &net)?;
    run.note("layers", net.specs().len());
    run.note("params", net.param_count());
    Ok(())
}

fn fit(cfg: &ExperimentConfig, data: &SplitDataset) -> Result<(Network, Vec<EpochMetrics>), CliError> {
    let net = initial_network(cfg, data.train.dim(), data.train.classes)?;
    check_shapes(&net, &data.train)?;
    Ok(train(&net, &data.train, &data.val, &cfg.train_config()?)?)
}

pub fn train_cmd(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    let (net, metrics) = fit(cfg, &data)?;
    write_network_file(run, "model.onlab", &net)?;
    run.write_csv("metrics.csv", &METRICS_HEADER, &metrics_rows(&metrics))?;
    run.note("val_accuracy", accuracy(&net, &data.val)?);
    run.note("test_accuracy", accuracy(&net, &data.test)?);
    Ok(())
}

fn per_sample_attack(cfg: &AttackConfig, i: usize) -> AttackConfig {
    AttackConfig { seed: derive(cfg.seed, i as u64), ..cfg.clone() }
}

pub fn attack_cmd(cfg: &ExperimentConfig, model: Option<&Path>, run: &mut RunDir) -> Result<(), CliError> {
    let net = trained_network(cfg, model)?;
    let data = load_data(cfg)?;
    let pts = analysis_points(cfg, &data);
    check_shapes(&net, &pts)?;
    let template = cfg.attack_config()?;
    let rows = collect(par::map_range(pts.len(), |i| {
        let x = &pts.inputs[i];
        let clean = net.predict(x)?;
        let r = pga_attack(&net, x, pts.labels[i], &per_sample_attack(&template, i))?;
        let adv = net.predict(&r.x_star)?;
        Ok((i, pts.labels[i], clean, adv, r.success, p_norm(&r.perturbation(x), template.p), r.cells_crossed))
    }))?;
    let successes = rows.iter().filter(|r| r.4).count();
    run.write_csv(
        "attack.csv",
        &["sample_id", "label", "clean_pred", "adv_pred", "success", "perturbation_norm", "cells_crossed"],
        &rows,
    )?;
    run.note("success_rate", successes as f64 / rows.len().max(1) as f64);
    Ok(())
}

fn radii(cfg: &ExperimentConfig) -> Vec<f64> {
    let [lo, hi] = cfg.analysis.radius_exponents;
    (lo..=hi).map(|k| cfg.attack.eps * 2f64.powi(k)).collect()
}

/// Unit attack directions, `None` where the attack did not move the point.
fn adversarial_directions(net: &Network, pts: &Dataset, attack: &AttackConfig) -> Result<Vec<Option<Vec<f64>>>, CliError> {
    Ok(adversarial_perturbations(net, pts, attack)?
        .into_iter()
        .map(|d| {
            let n = norm2(&d);
            (n > 0.0).then(|| d.iter().map(|v| v / n).collect())
        })
        .collect())
}

pub fn analyze(
    cfg: &ExperimentConfig,
    kind: AnalysisKind,
    model: Option<&Path>,
    method: &str,
    run: &mut RunDir,
) -> Result<(), CliError> {
    let net = trained_network(cfg, model)?;
    let data = load_data(cfg)?;
    let pts = analysis_points(cfg, &data);
    check_shapes(&net, &pts)?;
    let measured = measure_map(&net, cfg.measure_layer()?);
    let attack = cfg.attack_config()?;
    let seed = cfg.analysis_seed();
    let n = pts.len();
    match kind {
        AnalysisKind::Spectrum => {
            let per = collect(par::map_range(n, |i| singular_spectrum(&measured, &pts.inputs[i], i)))?;
            let rows: Vec<_> = per.iter().flatten().map(|r| (r.sample_id, r.rank, r.singular_value)).collect();
            run.write_csv("spectrum.csv", &["sample_id", "rank", "sigma"], &rows)?;
        }
        AnalysisKind::Alignment => {
            let perts = adversarial_perturbations(&net, &pts, &attack)?;
            let per = collect(par::map_range(n, |i| {
                if norm2(&perts[i]) == 0.0 {
                    return Ok(Vec::new());
                }
                alignment_curve(&perts[i], &measured, &pts.inputs[i], i)
            }))?;
            let skipped = per.iter().filter(|r| r.is_empty()).count();
            let rows: Vec<_> = per.iter().flatten().map(|r| (r.sample_id, r.rank, r.cosine)).collect();
            run.write_csv("alignment.csv", &["sample_id", "rank", "cosine"], &rows)?;
            run.note("skipped_zero_perturbation", skipped);
            run.notes.push("cosine is |cos| per sample and rank; aggregate across samples as mean with standard error".into());
        }
        AnalysisKind::Linearity | AnalysisKind::Topsv => {
            let radii = radii(cfg);
            let adv = adversarial_directions(&net, &pts, &attack)?;
            let per = collect(par::map_range(n, |i| {
                let x = &pts.inputs[i];
                let random = random_start(x.len(), NormOrder::Two, derive(seed, i as u64));
                let mut rows = Vec::new();
                for (label, dir) in [("random", Some(&random)), ("adversarial", adv[i].as_ref())] {
                    let Some(dir) = dir else { continue };
                    let values = match kind {
                        AnalysisKind::Linearity => linearity_deviation(&measured, x, dir, &radii)?,
                        _ => top_sv_over_distance(&measured, x, dir, &radii)?,
                    };
                    rows.extend(values.into_iter().map(|(r, v)| (i, label, r, v)));
                }
                Ok(rows)
            }))?;
            let rows: Vec<_> = per.into_iter().flatten().collect();
            let (name, value) = match kind {
                AnalysisKind::Linearity => ("linearity.csv", "deviation"),
                _ => ("topsv.csv", "sigma"),
            };
            run.write_csv(name, &["sample_id", "direction_kind", "radius", value], &rows)?;
        }
        AnalysisKind::Activations => {
            let (lo, hi) = input_range(&data.train);
            let off = uniform_in_cube(pts.dim(), lo, hi, n, derive(seed, 2));
            let mut rows = Vec::new();
            for (kind, bases, stream) in [("near_data", &pts.inputs, 3u64), ("off_manifold", &off, 4)] {
                for &eps in &cfg.analysis.eps_grid {
                    let (mean, se) =
                        shared_activation_stats(&net, bases, eps, attack.p, cfg.analysis.draws, derive(seed, stream))?;
                    rows.push((kind, eps, mean, se));
                }
            }
            run.write_csv("activations.csv", &["base_kind", "eps", "shared_fraction_mean", "stderr"], &rows)?;
            run.note("off_manifold_range", [lo, hi]);
        }
        AnalysisKind::Accuracy => {
            let curve = robust_accuracy_curve(&net, &pts, &cfg.analysis.eps_grid, &attack)?;
            let rows: Vec<_> = curve.iter().map(|p| (method, p.eps, p.accuracy, p.stderr)).collect();
            run.write_csv("accuracy.csv", &["method", "eps", "accuracy", "stderr"], &rows)?;
        }
    }
    run.note("samples", n);
    Ok(())
}

pub fn select_eps(cfg: &ExperimentConfig, model: Option<&Path>, method: &str, run: &mut RunDir) -> Result<(), CliError> {
    let net = trained_network(cfg, model)?;
    let data = load_data(cfg)?;
    let pts = analysis_points(cfg, &data);
    check_shapes(&net, &pts)?;
    let (eps, curve) =
        select_training_eps(&net, &pts, &cfg.analysis.eps_grid, &cfg.attack_config()?, cfg.analysis.fooled_fraction)?;
    let rows: Vec<_> = curve.iter().map(|p| (method, p.eps, p.accuracy, p.stderr)).collect();
    run.write_csv("accuracy.csv", &["method", "eps", "accuracy", "stderr"], &rows)?;
    run.note("selected_eps", eps);
    info!(eps, "selected ε");
    Ok(())
}

type EquivalenceRow = (usize, String, String, f64, usize, f64, bool, f64, f64);

pub fn verify_theorem(cfg: &ExperimentConfig, model: Option<&Path>, run: &mut RunDir) -> Result<(), CliError> {
    let net = trained_network(cfg, model)?;
    let data = load_data(cfg)?;
    let pts = analysis_points(cfg, &data);
    if net.input_dim() != pts.dim() {
        return Err(CliError::Config(format!(
            "network expects {} inputs but the data has {} features",
            net.input_dim(),
            pts.dim()
        )));
    }
    let a = &cfg.analysis;
    let seed = cfg.analysis_seed();
    let per = collect(par::map_range(pts.len(), |i| {
        let x = &pts.inputs[i];
        let mut rows: Vec<EquivalenceRow> = Vec::new();
        let mut skipped = 0usize;
        for p in &a.theorem_p {
            let v0 = random_start(x.len(), p.0, derive(seed, i as u64));
            let radius = in_cell_radius(&net, x, p.0)?;
            let eps = a.theorem_eps_fraction * if radius.is_finite() { radius } else { 1.0 };
            // A point on a cell boundary has no in-cell radius to work with.
            if eps <= 0.0 {
                skipped += a.theorem_q.len();
                continue;
            }
            for q in &a.theorem_q {
                let rep = match verify_theorem1(&net, x, p.0, q.0, eps, a.theorem_iters, &v0, i) {
                    Ok(r) => r,
                    Err(onlab::Error::ZeroJacobianProduct { .. }) | Err(onlab::Error::ZeroVector) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                for k in 0..rep.cosines.len() {
                    rows.push((
                        i,
                        p.0.to_string(),
                        q.0.to_string(),
                        eps,
                        k + 1,
                        rep.cosines[k],
                        rep.same_cell_throughout,
                        rep.sigmas_pga[k],
                        rep.sigmas_power[k],
                    ));
                }
            }
        }
        Ok((rows, skipped))
    }))?;
    let skipped: usize = per.iter().map(|p| p.1).sum();
    let rows: Vec<EquivalenceRow> = per.into_iter().flat_map(|p| p.0).collect();
    let in_cell: Vec<&EquivalenceRow> = rows.iter().filter(|r| r.6).collect();
    let worst = in_cell.iter().map(|r| r.5).fold(f64::INFINITY, f64::min);
    if skipped > 0 {
        warn!(skipped, "combinations skipped");
    }
    run.write_csv(
        "equivalence.csv",
        &["sample_id", "p", "q", "eps", "iter", "cosine", "in_cell", "sigma_pga", "sigma_power"],
        &rows,
    )?;
    run.note("rows", rows.len());
    run.note("in_cell_rows", in_cell.len());
    run.note("min_in_cell_cosine", if in_cell.is_empty() { None } else { Some(worst) });
    run.note("skipped", skipped);
    Ok(())
}

pub fn sweep(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    let a = &cfg.analysis;
    let data = load_data(cfg)?;
    if a.sweep_param == "train.weight" && cfg.train.objective == "standard" {
        warn!("sweeping train.weight under the standard objective changes nothing");
    }
    let mut rows = Vec::new();
    for (j, value) in log_grid(a.sweep_lo, a.sweep_hi, a.sweep_n).into_iter().enumerate() {
        let mut c = cfg.clone();
        match a.sweep_param.as_str() {
            "train.weight" => c.train.weight = value,
            _ => c.attack.eps = value,
        }
        let (net, metrics) = fit(&c, &data)?;
        let pts = analysis_points(&c, &data);
        let robust = robust_accuracy_curve(&net, &pts, &[c.attack.eps], &c.attack_config()?)?;
        let point = robust.last().expect("one ε");
        rows.push((a.sweep_param.as_str(), value, accuracy(&net, &data.val)?, point.accuracy, point.stderr));
        run.write_csv(&format!("metrics_{j:02}.csv"), &METRICS_HEADER, &metrics_rows(&metrics))?;
        info!(value, "sweep point done");
    }
    run.write_csv("sweep.csv", &["param", "value", "val_accuracy", "robust_accuracy", "robust_stderr"], &rows)?;
    Ok(())
}

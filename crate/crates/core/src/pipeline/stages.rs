use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::plot::{render_top_view, PlotStyle};
use super::{Baseline, PipelineConfig};
use crate::airsim::simulate;
use crate::autoencoder::{load_model, reconstruction_rmse, save_model, train, AutoencoderModel, TrainOutcome};
use crate::error::{Error, Result};
use crate::evalharness::{
    constraint_check, discriminative_score_run, export_embedding_features, make_sliding_pairs, mae_per_feature,
    predictive_score, relative_improvement, train_predictor, EvalReport,
};
use crate::latentstats::{
    fit_input_space, flatten_latents, load_latent_model, save_latent_model, smote_generate, unflatten_latents,
    BicSelection, LatentDensityModel, LatentMatrix, SmoteMode,
};
use crate::neuralcore::{Rng, Tensor};
use crate::trajdata::{
    arrays_to_trajectories, build_dataset, infer_valid_length, load_dataset, read_csv, repad, trajectories_to_array,
    write_csv, write_dataset, NormStats, ResampledDataset, Trajectory, FEATURES, MIN_ALT_FT,
};

fn prepare(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let out = &cfg.paths.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = cfg.out_path("effective_config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Simulated flights over the configured airspace, written as
/// `trajectories.csv` next to a copy of the airspace.
pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<PathBuf> {
    prepare(cfg)?;
    let trajs = simulate(&cfg.airspace, &cfg.sim)?;
    let path = cfg.out_path("trajectories.csv");
    let comment = format!("simulated flights: {} seed {}", trajs.len(), cfg.sim.seed);
    write_csv(&path, &trajs, Some(&comment))?;
    cfg.airspace.save(&cfg.out_path("airspace.toml"))?;
    log::info!("simulated {} flights into {}", trajs.len(), path.display());
    Ok(path)
}

pub fn cmd_build_dataset(cfg: &PipelineConfig) -> Result<ResampledDataset> {
    prepare(cfg)?;
    let trajs = read_csv(&cfg.trajectories_path())?;
    let ds = build_dataset(&trajs, cfg.dataset.dt, cfg.dataset.max_len)?;
    write_dataset(&cfg.dataset_path(), &ds)?;
    let longest = ds.lengths.iter().max().copied().unwrap_or(0);
    log::info!("dataset: {} sequences, longest {longest} of {} frames", ds.len(), ds.max_len());
    Ok(ds)
}

/// What the training stage leaves behind for later reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub n_train: usize,
    pub n_holdout: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Reconstruction RMSE over valid frames of the held-out sequences, in
    /// normalised units (training sequences when nothing is held out).
    pub recon_rmse: f64,
    pub autoencoder: String,
}

const TRAIN_SUMMARY: &str = "train_summary.toml";

fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let n_out = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut held = order[..n_out].to_vec();
    let mut kept = order[n_out..].to_vec();
    held.sort_unstable();
    kept.sort_unstable();
    (kept, held)
}

pub fn cmd_train_ae(cfg: &PipelineConfig) -> Result<TrainSummary> {
    prepare(cfg)?;
    let ds = load_dataset(&cfg.dataset_path())?;
    let (train_rows, holdout_rows) = holdout_split(ds.len(), cfg.dataset.holdout_fraction, cfg.train.seed);
    let model = AutoencoderModel::new(cfg.model.clone(), ds.norm.clone(), cfg.train.seed)?;
    let TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    } = train(model, &ds.select(&train_rows), &cfg.train)?;
    save_model(&cfg.checkpoint_path(), &model)?;

    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for r in &history {
        let val = r.val_loss.map_or(String::new(), |v| v.to_string());
        writeln!(csv, "{},{},{val}", r.epoch, r.train_loss).unwrap();
    }
    write_text(&cfg.out_path("train_history.csv"), &csv)?;

    let eval_rows = if holdout_rows.is_empty() { &train_rows } else { &holdout_rows };
    let recon_rmse = reconstruction_rmse(&model, &ds.select(eval_rows))?;
    let summary = TrainSummary {
        n_train: train_rows.len(),
        n_holdout: holdout_rows.len(),
        epochs_run: history.len(),
        best_epoch,
        stopped_early,
        recon_rmse,
        autoencoder: model.provenance(),
    };
    write_text(
        &cfg.out_path(TRAIN_SUMMARY),
        &toml::to_string(&summary).expect("summary serialises"),
    )?;
    log::info!(
        "autoencoder: {} epochs (best {best_epoch}), held-out RMSE {recon_rmse:.5}",
        history.len()
    );
    Ok(summary)
}

fn read_train_summary(cfg: &PipelineConfig) -> Result<Option<TrainSummary>> {
    let path = cfg.out_path(TRAIN_SUMMARY);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn load_checked_model(cfg: &PipelineConfig, ds: &ResampledDataset) -> Result<AutoencoderModel> {
    let model = load_model(&cfg.checkpoint_path())?;
    if model.config.max_len != ds.max_len() {
        return Err(Error::shape(format!(
            "checkpoint expects {} frames, dataset holds {}",
            model.config.max_len,
            ds.max_len()
        )));
    }
    Ok(model)
}

fn encode_dataset(model: &AutoencoderModel, ds: &ResampledDataset) -> Result<LatentMatrix> {
    flatten_latents(&model.encode(&ds.data, Some(&ds.lengths), None)?)
}

fn write_bic_table(path: &Path, sel: &BicSelection) -> Result<()> {
    let mut csv = String::from("k,bic,loglik\n");
    for e in &sel.table {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        writeln!(csv, "{},{},{}", e.k, opt(e.bic), opt(e.loglik)).unwrap();
    }
    write_text(path, &csv)
}

/// Fits the density model the configured baseline samples from: over
/// autoencoder latents for `atrada`, over flattened trajectories for
/// `gmm-input`. The SMOTE baselines need none.
pub fn cmd_fit_latent(cfg: &PipelineConfig) -> Result<Option<LatentDensityModel>> {
    prepare(cfg)?;
    let ds = load_dataset(&cfg.dataset_path())?;
    let (model, sel) = match cfg.generate.baseline {
        Baseline::Atrada => {
            let ae = load_checked_model(cfg, &ds)?;
            let latents = encode_dataset(&ae, &ds)?;
            let provenance = vec![
                ("space".to_string(), "latent".to_string()),
                ("autoencoder".to_string(), ae.provenance()),
            ];
            LatentDensityModel::fit(&latents, &cfg.latent, provenance)?
        }
        Baseline::GmmInput => fit_input_space(&ds, &cfg.latent)?,
        b => {
            log::info!("baseline {b} samples without a density model");
            return Ok(None);
        }
    };
    save_latent_model(&cfg.latent_model_path(), &model)?;
    write_bic_table(&cfg.out_path(&format!("bic_{}.csv", cfg.generate.baseline)), &sel)?;
    log::info!(
        "{} density: P = {}, K = {}",
        cfg.generate.baseline,
        model.pca.n_components(),
        model.gmm.k()
    );
    Ok(Some(model))
}

/// Generated sequences in normalised (`data`) and physical form.
#[derive(Clone, Debug)]
pub struct GeneratedSet {
    pub data: Tensor,
    pub lengths: Vec<usize>,
    pub trajectories: Vec<Trajectory>,
    /// `key: value` lines identifying the generator.
    pub provenance: Vec<(String, String)>,
}

fn checked_density(cfg: &PipelineConfig, ae: Option<&AutoencoderModel>, ds: &ResampledDataset) -> Result<LatentDensityModel> {
    let density = load_latent_model(&cfg.latent_model_path())?;
    let (hidden, steps) = match ae {
        Some(m) => (m.config.hidden, m.config.max_len),
        None => (FEATURES, ds.max_len()),
    };
    let fitted_on = density.provenance_value("autoencoder").unwrap_or("<none>").to_string();
    let expected = ae.map_or("<none>".to_string(), |m| m.provenance());
    if density.hidden != hidden || density.steps != steps || fitted_on != expected {
        return Err(Error::shape(format!(
            "density model ({}×{}, fitted on {fitted_on}) does not match the decoder ({hidden}×{steps}, {expected})",
            density.hidden, density.steps
        )));
    }
    Ok(density)
}

/// Raw synthetic arrays `M×F×S` in normalised units, before length
/// inference, plus provenance lines.
pub fn generate_arrays(cfg: &PipelineConfig, ds: &ResampledDataset) -> Result<(Tensor, Vec<(String, String)>)> {
    let g = &cfg.generate;
    let m = g.m_count.unwrap_or(ds.len());
    let mut provenance = vec![
        ("generator".to_string(), g.baseline.to_string()),
        ("seed".to_string(), g.seed.to_string()),
        ("count".to_string(), m.to_string()),
    ];
    let data = match g.baseline {
        Baseline::Atrada => {
            let ae = load_checked_model(cfg, ds)?;
            let density = checked_density(cfg, Some(&ae), ds)?;
            provenance.push(("autoencoder".into(), ae.provenance()));
            provenance.push(("density".into(), format!("P={} K={}", density.pca.n_components(), density.gmm.k())));
            ae.decode(&unflatten_latents(&density.generate(m, g.seed)?))?
        }
        Baseline::SmoteI | Baseline::SmoteE => {
            let ae = load_checked_model(cfg, ds)?;
            let latents = encode_dataset(&ae, ds)?;
            let mode = if g.baseline == Baseline::SmoteI {
                SmoteMode::Interpolate
            } else {
                SmoteMode::Extrapolate
            };
            let k = g.smote_k.min(latents.len().saturating_sub(1)).max(1);
            let rows = smote_generate(&latents.rows, mode, k, g.smote_degree, m, g.seed)?;
            provenance.push(("autoencoder".into(), ae.provenance()));
            provenance.push(("smote".into(), format!("k={k} degree={}", g.smote_degree)));
            ae.decode(&unflatten_latents(&LatentMatrix::new(rows, latents.hidden, latents.steps)?))?
        }
        Baseline::GmmInput => {
            let density = checked_density(cfg, None, ds)?;
            provenance.push(("density".into(), format!("P={} K={}", density.pca.n_components(), density.gmm.k())));
            unflatten_latents(&density.generate(m, g.seed)?)
        }
    };
    if data.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("{} produced non-finite values", g.baseline)));
    }
    Ok((data, provenance))
}

/// Physical validity limits of latitude, longitude and altitude.
const VALID_RANGE: [(f64, f64); FEATURES] = [(-90.0, 90.0), (-180.0, 180.0), (MIN_ALT_FT, f64::INFINITY)];

/// Clamps normalised values whose physical counterpart is not a valid
/// coordinate; returns how many were changed.
fn clamp_to_valid(data: &mut Tensor, norm: &NormStats) -> usize {
    let steps = data.shape()[2];
    let bounds: Vec<(f64, f64)> = VALID_RANGE
        .iter()
        .enumerate()
        .map(|(f, &(lo, hi))| (norm.normalize_value(f, lo), norm.normalize_value(f, hi)))
        .collect();
    let mut changed = 0;
    for (k, v) in data.data_mut().iter_mut().enumerate() {
        let (lo, hi) = bounds[(k / steps) % FEATURES];
        let c = v.clamp(lo, hi);
        if c != *v {
            *v = c;
            changed += 1;
        }
    }
    changed
}

/// Samples `M` sequences, trims the stationary tail of each, maps them to
/// physical units and writes `generated_<baseline>.csv`.
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<GeneratedSet> {
    prepare(cfg)?;
    let ds = load_dataset(&cfg.dataset_path())?;
    let (mut data, provenance) = generate_arrays(cfg, &ds)?;
    let steps = data.shape()[2];
    let block = FEATURES * steps;
    let lengths: Vec<usize> = data
        .data()
        .chunks(block)
        .map(|seq| infer_valid_length(seq, steps, cfg.generate.length_tol).max(2))
        .collect();
    repad(&mut data, &lengths);
    let clamped = clamp_to_valid(&mut data, &ds.norm);
    if clamped > 0 {
        log::warn!("{clamped} generated values lay outside valid coordinates and were clamped");
    }
    let prefix = format!("{}-", cfg.generate.baseline);
    let trajectories = arrays_to_trajectories(&data, &lengths, &ds.norm, ds.dt, &prefix)?;

    let mut comment = String::new();
    for (k, v) in &provenance {
        writeln!(comment, "{k}: {v}").unwrap();
    }
    comment.push_str("effective config:\n");
    comment.push_str(&cfg.to_toml());
    let path = cfg.generated_path();
    write_csv(&path, &trajectories, Some(&comment))?;
    log::info!("wrote {} synthetic trajectories to {}", trajectories.len(), path.display());
    Ok(GeneratedSet {
        data,
        lengths,
        trajectories,
        provenance,
    })
}

fn split_rows(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Scores `generated_<baseline>.csv` against the dataset and writes the
/// report, plus the feature tables, into `eval_<baseline>/`.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvalReport> {
    prepare(cfg)?;
    let e = &cfg.eval;
    let real = load_dataset(&cfg.dataset_path())?;
    let generated = read_csv(&cfg.generated_path())?;
    let (fake, fake_lengths) = trajectories_to_array(&generated, &real.norm, real.dt, real.max_len())?;

    let mut ds_per_seed = Vec::with_capacity(e.classifier_runs);
    let mut accuracies = Vec::with_capacity(e.classifier_runs);
    for r in 0..e.classifier_runs {
        let res = discriminative_score_run(&real.data, &fake, &e.net, e.seed.wrapping_add(r as u64))?;
        log::info!("classifier run {r}: accuracy {:.4}", res.accuracy);
        ds_per_seed.push(res.score);
        accuracies.push(res.accuracy);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ds_classifier = mean(&ds_per_seed);

    let (train_rows, test_rows) = split_rows(real.len(), e.test_fraction, e.seed);
    let pairs = |data: &Tensor, lengths: &[usize], what: &str, salt: u64| {
        make_sliding_pairs(data, lengths, e.window, e.stride)
            .map(|p| p.subsample(e.max_pairs, e.seed.wrapping_add(salt)))
            .map_err(|err| Error::invalid(format!("{what} windows: {err}")))
    };
    let test_set = real.select(&test_rows);
    let train_set = real.select(&train_rows);
    let test_pairs = pairs(&test_set.data, &test_set.lengths, "real test", 1)?;
    let trtr_pairs = pairs(&train_set.data, &train_set.lengths, "real training", 2)?;
    let tstr_pairs = pairs(&fake, &fake_lengths, "synthetic", 3)?;
    let physical = |p: &crate::evalharness::Predictor| -> Result<Vec<f64>> {
        let m = mae_per_feature(&p.predict(&test_pairs.past)?, &test_pairs.future)?;
        Ok(m.iter().enumerate().map(|(f, v)| v * real.norm.unit(f)).collect())
    };
    let tstr = train_predictor(&tstr_pairs, &e.net, e.seed.wrapping_add(10))?;
    let ps = predictive_score(&tstr, &test_pairs)?;
    let ps_physical = physical(&tstr)?;
    let trtr = train_predictor(&trtr_pairs, &e.net, e.seed.wrapping_add(10))?;
    let ps_trtr = predictive_score(&trtr, &test_pairs)?;
    let ps_trtr_physical = physical(&trtr)?;
    log::info!("predictive score: TSTR {ps:.5}, TRTR {ps_trtr:.5}");

    let real_trajs = real.to_trajectories("real-")?;
    let constraint_pass_rate = constraint_check(&generated, &cfg.airspace, e.entry_tol_nm, e.faf_tol_nm).pass_rate;
    let real_constraint_pass_rate = constraint_check(&real_trajs, &cfg.airspace, e.entry_tol_nm, e.faf_tol_nm).pass_rate;

    let dir = cfg.eval_dir();
    std::fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
    if e.export_features {
        let mut tables = export_embedding_features(&real.data, &real.lengths, real.dt, "real")?;
        tables.extend(export_embedding_features(&fake, &fake_lengths, real.dt, "generated")?);
        tables.write(&dir, "features_")?;
    }

    let report = EvalReport {
        method: cfg.generate.baseline.to_string(),
        n_real: real.len(),
        n_generated: generated.len(),
        ds_classifier,
        ds_accuracy: mean(&accuracies),
        ds_per_seed,
        ps,
        ps_trtr,
        ps_physical,
        ps_trtr_physical,
        reference_ds: e.reference_ds,
        reference_ps: e.reference_ps,
        ri_ds: relative_improvement(ds_classifier, e.reference_ds)?,
        ri_ps: relative_improvement(ps, e.reference_ps)?,
        constraint_pass_rate,
        real_constraint_pass_rate,
        recon_rmse: read_train_summary(cfg)?.map(|s| s.recon_rmse),
        config: cfg.to_table(),
    };
    report.validate()?;
    report.write(&dir)?;
    log::info!(
        "{}: DS {:.4}, PS {:.5} (TRTR {:.5}), constraints {:.3}",
        report.method,
        report.ds_classifier,
        report.ps,
        report.ps_trtr,
        report.constraint_pass_rate
    );
    Ok(report)
}

/// Top view of a trajectory CSV (the generated set by default) as
/// `top_view_<name>.svg` in the output directory.
pub fn cmd_plot(cfg: &PipelineConfig, input: Option<&Path>) -> Result<PathBuf> {
    prepare(cfg)?;
    let src = input.map_or_else(|| cfg.generated_path(), Path::to_path_buf);
    let trajs = read_csv(&src)?;
    let name = src.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectories").to_string();
    let style = PlotStyle {
        title: name.clone(),
        ..PlotStyle::default()
    };
    let svg = render_top_view(&trajs, &cfg.airspace, &style)?;
    let path = cfg.out_path(&format!("top_view_{name}.svg"));
    write_text(&path, &svg)?;
    Ok(path)
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| Error::in_stage(name, e))
}

/// Simulate (or ingest), build, train, fit, generate, evaluate and plot.
/// Artifacts of completed stages stay on disk when a later one fails.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<EvalReport> {
    stage("config", || prepare(cfg))?;
    if cfg.paths.input_csv.is_none() {
        stage("simulate", || cmd_simulate(cfg))?;
    }
    stage("build-dataset", || cmd_build_dataset(cfg))?;
    stage("train-ae", || cmd_train_ae(cfg))?;
    stage("fit-latent", || cmd_fit_latent(cfg))?;
    stage("generate", || cmd_generate(cfg))?;
    let report = stage("evaluate", || cmd_evaluate(cfg))?;
    stage("plot", || {
        cmd_plot(cfg, Some(&cfg.trajectories_path()))?;
        cmd_plot(cfg, None)
    })?;
    Ok(report)
}

use std::path::Path;

use pcp_core::checkpoint::{Checkpoint, ModelSpec};
use pcp_core::data::{
    interpolate_track, is_sample_file, load_dataset, prepare_dataset, write_atomic, write_dataset, ImageStore,
    ObservationSample, PrepareOptions, SampleSet,
};
use pcp_core::metrics::MetricsReport;
use pcp_core::model::{Classifier, Modalities, Network, TrajectoryBaseline};
use pcp_core::synth::generate as synthesize;
use pcp_core::training::{ablation_study, evaluate, train as fit};

use crate::config::RunConfig;
use crate::CliError;

fn required<'a>(out: Option<&'a Path>, what: &str) -> Result<&'a Path, CliError> {
    out.ok_or_else(|| CliError::Usage(format!("--out is required to write the {what}")))
}

/// Writes to `out` atomically, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => Ok(write_atomic(path, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parent(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Loads a prepared sample file, or prepares a dataset file on the fly.
fn load_samples(path: &Path, opts: &PrepareOptions) -> Result<Vec<ObservationSample>, CliError> {
    if is_sample_file(path)? {
        let set = SampleSet::load(path)?;
        if set.options != *opts {
            return Err(pcp_core::Error::Data(format!(
                "{} was prepared for {:?} but the model expects {:?}",
                path.display(),
                set.options,
                opts
            ))
            .into());
        }
        return Ok(set.samples);
    }
    let tracks = load_dataset(path, opts.mode)?;
    let mut store = ImageStore::new(parent(path));
    let samples = prepare_dataset(&tracks, &mut store, opts)?;
    if samples.is_empty() {
        return Err(pcp_core::Error::Data(format!("{}: no track yields an observation window", path.display())).into());
    }
    Ok(samples)
}

pub fn generate(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let path = required(out, "dataset")?;
    let ds = synthesize(&cfg.scenario)?;
    ds.write(path)?;
    // read back what was written so a broken file never goes unnoticed
    let back = load_dataset(path, pcp_core::config::InputMode::ThreeD)?;
    let positives = back.iter().filter(|t| t.label.as_u8() == 1).count();
    println!(
        "tracks={} positives={} positive_fraction={:.4} path={}",
        back.len(),
        positives,
        positives as f64 / back.len() as f64,
        path.display()
    );
    Ok(())
}

pub fn prepare(cfg: &RunConfig, dataset: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let path = required(out, "sample file")?;
    let options = PrepareOptions::from_config(&cfg.model);
    let samples = load_samples(dataset, &options)?;
    let positives = samples.iter().filter(|s| s.label == 1).count();
    let set = SampleSet { options, samples };
    set.save(path)?;
    println!("samples={} positives={} path={}", set.samples.len(), positives, path.display());
    Ok(())
}

pub fn train(
    cfg: &RunConfig,
    data: &Path,
    val: Option<&Path>,
    modalities: &str,
    baseline: bool,
    log: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let path = required(out, "checkpoint")?;
    let opts = PrepareOptions::from_config(&cfg.model);
    let train_set = load_samples(data, &opts)?;
    let val_set = val.map(|v| load_samples(v, &opts)).transpose()?;
    let (model, spec): (Box<dyn Classifier>, ModelSpec) = if baseline {
        let b = TrajectoryBaseline::new(cfg.model.ped_feature_dim / 2, cfg.model.lstm_hidden)?;
        (Box::new(b), ModelSpec::baseline(&b))
    } else {
        let m: Modalities = modalities.parse()?;
        let net = Network::new(cfg.model.clone())?.with_modalities(m);
        let spec = ModelSpec::network(&net);
        (Box::new(net), spec)
    };
    let mut lines = String::new();
    let outcome = fit(model.as_ref(), &train_set, val_set.as_deref(), &cfg.train, |s| {
        let line = s.log_line();
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    })?;
    let fin = format!("final selected_epoch={} {}", outcome.selected_epoch, outcome.final_train);
    println!("{fin}");
    lines.push_str(&fin);
    lines.push('\n');
    Checkpoint {
        model: spec,
        params: outcome.params,
    }
    .save(path)?;
    if let Some(log) = log {
        write_atomic(log, lines.as_bytes())?;
    }
    Ok(())
}

/// A checkpoint and the classifier it describes.
fn restore(checkpoint: &Path) -> Result<(Checkpoint, Box<dyn Classifier + Send + Sync>), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model.classifier()?;
    Ok((ck, model))
}

fn options_for(cfg: &RunConfig, ck: &Checkpoint) -> PrepareOptions {
    match ck.model.model_config() {
        Some(c) => PrepareOptions::from_config(c),
        None => PrepareOptions::from_config(&cfg.model),
    }
}

fn check_mode(cfg: &RunConfig, ck: &Checkpoint, explicit_mode: bool) -> Result<(), CliError> {
    if let Some(c) = ck.model.model_config() {
        if explicit_mode && c.mode != cfg.mode {
            return Err(pcp_core::Error::Data(format!(
                "checkpoint was trained for {} data, not {}",
                c.mode, cfg.mode
            ))
            .into());
        }
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, explicit_mode: bool, checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (ck, model) = restore(checkpoint)?;
    check_mode(cfg, &ck, explicit_mode)?;
    let samples = load_samples(data, &options_for(cfg, &ck))?;
    let (_, report) = evaluate(model.as_ref(), &ck.params, &samples, cfg.train.threshold)?;
    emit(out, &report.to_kv())
}

pub fn predict(
    cfg: &RunConfig,
    explicit_mode: bool,
    checkpoint: &Path,
    data: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (ck, model) = restore(checkpoint)?;
    check_mode(cfg, &ck, explicit_mode)?;
    let samples = load_samples(data, &options_for(cfg, &ck))?;
    let mut text = String::from("track_id\twindow\tscore\tlabel\n");
    for s in &samples {
        let p = model.predict(&ck.params, s)?;
        text.push_str(&format!("{}\t{}\t{p}\t{}\n", s.track_id, s.window, s.label));
    }
    emit(out, &text)
}

pub fn interpolate(cfg: &RunConfig, input: &Path, factor: usize, out: Option<&Path>) -> Result<(), CliError> {
    let path = required(out, "interpolated dataset")?;
    if factor == 0 {
        return Err(CliError::Usage("--factor must be positive".into()));
    }
    let tracks = load_dataset(input, cfg.mode)?;
    let dense = tracks.iter().map(|t| interpolate_track(t, factor)).collect::<Result<Vec<_>, _>>()?;
    write_dataset(path, &dense)?;
    let frames: usize = dense.iter().map(|t| t.frames.len()).sum();
    println!("tracks={} frames={} path={}", dense.len(), frames, path.display());
    Ok(())
}

pub fn ablate(
    cfg: &RunConfig,
    train_data: &Path,
    held_out: &Path,
    subsets: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let subsets: Vec<Modalities> = if subsets.is_empty() {
        Modalities::STUDY.to_vec()
    } else {
        subsets.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    };
    let opts = PrepareOptions::from_config(&cfg.model);
    let train_set = load_samples(train_data, &opts)?;
    let held = load_samples(held_out, &opts)?;
    let base = Network::new(cfg.model.clone())?;
    let rows = ablation_study(&base, &subsets, &train_set, &held, &cfg.train, |m, s| {
        eprintln!("modalities={m} {}", s.log_line());
    })?;
    let text: String = rows.iter().map(|r| row_line(r.modalities, &r.held_out)).collect();
    emit(out, &text)?;
    if out.is_some() {
        print!("{text}");
    }
    Ok(())
}

fn row_line(m: Modalities, report: &MetricsReport) -> String {
    format!("modalities={m} {report}\n")
}

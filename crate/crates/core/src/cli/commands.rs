use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use serde_json::json;

use super::config::{OutputFormat, RunConfig};
use super::{selftest, CliError, Command, DatagenArgs, ImportArgs, TrainArgs};
use crate::audio::read_wav;
use crate::cascade::{run_offline, InProcessProvider, VerdictProvider};
use crate::datagen::{generate_corpus, import_real, DatagenConfig, Manifest, Split, Variant};
use crate::eval::{
    binary_table, compute_table, evaluate_binary_task, evaluate_stream_with, flops_iou_svg, load_stream_samples,
    seg_table, StreamMode, StreamOptions, StreamOutcome,
};
use crate::labels::segments_from_frames;
use crate::nn::{heavy_examples, light_sequences, train, Arch, ArchKind, Dataset, LightStream, Params};
use crate::wire::{serve, spawn_server, RemoteProvider};

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    out.write_all(text.as_bytes()).map_err(CliError::runtime)?;
    out.flush().map_err(CliError::runtime)
}

fn emit_text(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(CliError::runtime)?;
    out.flush().map_err(CliError::runtime)
}

fn load_params(path: &Path, kind: ArchKind) -> Result<Params, CliError> {
    let params = Params::load(path).map_err(CliError::runtime)?;
    params.expect_kind(kind).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(params)
}

fn load_manifest(cfg: &RunConfig, split: Option<Split>) -> Result<Manifest, CliError> {
    let manifest = Manifest::load(&cfg.paths.manifest).map_err(CliError::runtime)?;
    let manifest = match split {
        Some(s) => manifest.split(s).map_err(CliError::runtime)?,
        None => manifest,
    };
    if manifest.is_empty() {
        return Err(CliError::Runtime(format!("{}: no entries in the selected split", cfg.paths.manifest.display())));
    }
    Ok(manifest)
}

pub(super) fn dispatch(command: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Datagen(a) => datagen(&a, cfg, out)?,
        Command::ImportReal(a) => import(&a, cfg, out)?,
        Command::Train(a) => train_model(&a, cfg, out)?,
        Command::Serve(_) => serve_cmd(cfg, out)?,
        Command::Cascade(a) => cascade(&a.wav, cfg, out)?,
        Command::EvalBinary(_) => eval_binary(cfg, out)?,
        Command::EvalStream(_) => eval_stream(cfg, out)?,
        Command::Bench(_) => bench(cfg, out)?,
        Command::Selftest => {
            let results = selftest::run_selftest();
            let text: String = results.iter().map(|r| r.line() + "\n").collect();
            emit_text(out, &text)?;
            return Ok(if results.iter().all(|r| r.passed) { 0 } else { 2 });
        }
    }
    Ok(0)
}

fn datagen(a: &DatagenArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let variants = match a.variant.as_deref() {
        Some("mix") => Variant::SYNTHETIC.to_vec(),
        _ => vec![cfg.datagen.variant],
    };
    let mut parts = Vec::new();
    for variant in variants {
        let dc = DatagenConfig { variant, ..cfg.datagen.clone() };
        parts.push(generate_corpus(&dc).map_err(CliError::runtime)?);
    }
    let manifest = if parts.len() == 1 { parts.remove(0) } else { Manifest::merge(&parts).map_err(CliError::runtime)? };
    let path = manifest.save().map_err(CliError::runtime)?;
    emit(out, &json!({ "manifest": path, "samples": manifest.len(), "stats": manifest.stats }))
}

fn import(a: &ImportArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if !a.files.len().is_multiple_of(2) {
        return Err(CliError::Usage("import-real takes DIAR WAV pairs".into()));
    }
    let pairs: Vec<_> = a.files.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    let manifest = import_real(&pairs, &cfg.import).map_err(CliError::runtime)?;
    let path = manifest.save().map_err(CliError::runtime)?;
    emit(
        out,
        &json!({ "manifest": path, "samples": manifest.len(), "skipped_inputs": manifest.skipped_inputs, "stats": manifest.stats }),
    )
    
}

fn train_model(a: &TrainArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let kind: ArchKind = a.model.parse().map_err(|_| CliError::Usage(format!("--model must be light or heavy, got {:?}", a.model)))?;
    let manifest = load_manifest(cfg, Some(Split::Train))?;
    let floor = cfg.features.floor_value();
    let (dataset, arch, tc, path) = match kind {
        ArchKind::Light => (
            Dataset::Light(light_sequences(&manifest, &cfg.features, cfg.light.arch.frames_per_step).map_err(CliError::runtime)?),
            Arch::Light(cfg.light.arch),
            &cfg.light.train,
            &cfg.paths.light_params,
        ),
        ArchKind::Heavy => (
            Dataset::Heavy(heavy_examples(&manifest, &cfg.features, cfg.heavy.arch.window_frames).map_err(CliError::runtime)?),
            Arch::Heavy(cfg.heavy.arch),
            &cfg.heavy.train,
            &cfg.paths.heavy_params,
        ),
    };
    let (params, epochs) = train(&dataset, arch, tc, floor, |_| {}).map_err(CliError::runtime)?;
    params.save(path).map_err(CliError::runtime)?;
    emit(
        out,
        &json!({ "model": kind.as_str(), "path": path, "num_params": params.num_params(), "epochs": epochs }),
    )
    
}

fn serve_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let params = load_params(&cfg.paths.heavy_params, ArchKind::Heavy)?;
    let latency = Duration::from_millis(cfg.server.latency_ms);
    if cfg.server.listen.ends_with(":0") {
        // An ephemeral port is only useful if it is reported.
        let handle = spawn_server(params, &cfg.features, &cfg.server.listen, latency).map_err(CliError::runtime)?;
        emit(out, &json!({ "listening": handle.addr().to_string(), "latency_ms": cfg.server.latency_ms }))?;
        handle.join();
        return Ok(());
    }
    emit(out, &json!({ "listening": cfg.server.listen, "latency_ms": cfg.server.latency_ms }))?;
    serve(params, &cfg.features, &cfg.server.listen, latency).map_err(CliError::runtime)?;
    Ok(())
}

fn cascade(wav: &Path, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let light = load_params(&cfg.paths.light_params, ArchKind::Light)?;
    let audio = read_wav(wav).map_err(CliError::runtime)?;
    let heavy;
    let mut provider: Box<dyn VerdictProvider> = match &cfg.server.address {
        Some(addr) => Box::new(RemoteProvider::connect(addr.as_str()).map_err(CliError::runtime)?),
        None => {
            heavy = load_params(&cfg.paths.heavy_params, ArchKind::Heavy)?;
            Box::new(InProcessProvider::new(&heavy, &cfg.features).map_err(CliError::runtime)?)
        }
    };
    let run = run_offline(&audio, &light, provider.as_mut(), &cfg.cascade, &cfg.features).map_err(CliError::runtime)?;
    let labels: Vec<&str> = run.track.labels.iter().map(|l| l.as_str()).collect();
    emit(
        out,
        &json!({
            "steps": run.track.len(),
            "step_ms": run.track.step_ms,
            "escalations": run.escalations,
            "labels": labels,
            "segments": segments_from_frames(&run.track),
        }),
    )
    
}

fn eval_binary(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = load_manifest(cfg, cfg.eval.split)?;
    let heavy = load_params(&cfg.paths.heavy_params, ArchKind::Heavy)?;
    let report = evaluate_binary_task(&manifest, &heavy, &cfg.features).map_err(CliError::runtime)?;
    match cfg.eval.format {
        OutputFormat::Json => emit(out, &report),
        OutputFormat::Table => emit_text(out, &binary_table(&report)),
    }
    
}

fn stream_outcomes(cfg: &RunConfig, modes: &[StreamMode]) -> Result<Vec<StreamOutcome>, CliError> {
    let manifest = load_manifest(cfg, cfg.eval.split)?;
    let light = load_params(&cfg.paths.light_params, ArchKind::Light)?;
    let heavy = load_params(&cfg.paths.heavy_params, ArchKind::Heavy)?;
    let mut opts = StreamOptions::for_models(&light, &heavy, cfg.cascade.clone(), cfg.features.clone()).map_err(CliError::runtime)?;
    opts.fallback = cfg.eval.fallback;
    let samples = load_stream_samples(&manifest).map_err(CliError::runtime)?;
    modes
        .iter()
        .map(|&mode| {
            log::info!("evaluating {mode} on {} samples", samples.len());
            let mut outcome = evaluate_stream_with(
                &samples,
                |_| Ok(LightStream::new(&light)?),
                |_| Ok(InProcessProvider::new(&heavy, &cfg.features)?),
                mode,
                &opts,
            )
            .map_err(CliError::runtime)?;
            if !cfg.eval.timing {
                outcome.compute.wall_ms_per_step = None;
            }
            Ok(outcome)
        })
        .collect()
}

fn stream_json(o: &StreamOutcome) -> serde_json::Value {
    json!({
        "mode": o.compute.mode,
        "macro_f1": o.seg.macro_f1,
        "macro_iou": o.seg.macro_iou,
        "total_flops": o.compute.total_flops,
        "segmentation": o.seg,
        "compute": o.compute,
    })
}

fn eval_stream(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let o = stream_outcomes(cfg, &[cfg.eval.mode])?.remove(0);
    match cfg.eval.format {
        OutputFormat::Json => emit(out, &stream_json(&o)),
        OutputFormat::Table => emit_text(out, &(seg_table(&o.seg) + &compute_table(&[(&o.compute, &o.seg)]))),
    }
    
}

fn bench(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let outcomes = stream_outcomes(cfg, &StreamMode::ALL)?;
    if let Some(path) = &cfg.eval.svg {
        let rows: Vec<_> =
            outcomes.iter().map(|o| (o.compute.mode.as_str().to_string(), o.compute.flops_per_sample, o.seg.macro_iou)).collect();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(CliError::runtime)?;
        }
        std::fs::write(path, flops_iou_svg(&rows)).map_err(CliError::runtime)?;
    }
    let by_mode = |m: StreamMode| outcomes.iter().find(|o| o.compute.mode == m).expect("all modes ran");
    let heavy = by_mode(StreamMode::HeavyEverywhere).compute.total_flops as f64;
    let spec = by_mode(StreamMode::Speculative).compute.total_flops as f64;
    let saving = if spec > 0.0 { heavy / spec } else { f64::INFINITY };
    match cfg.eval.format {
        OutputFormat::Json => emit(
            out,
            &json!({ "modes": outcomes.iter().map(stream_json).collect::<Vec<_>>(), "flops_saving": saving }),
        ),
        OutputFormat::Table => {
            let rows: Vec<_> = outcomes.iter().map(|o| (&o.compute, &o.seg)).collect();
            emit_text(out, &format!("{}flops saving (heavy_everywhere / speculative): {saving:.2}x\n", compute_table(&rows)))
        }
    }
    
}

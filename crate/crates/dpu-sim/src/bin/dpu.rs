//! Experiment driver: config-driven pipeline stages over the diffractive
//! processing unit simulator.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime error.
//! `DPU_THREADS` overrides the evaluation worker count.

use clap::{Parser, Subcommand};
use dpu_sim::config::{
    load_image_sets, load_video_sets, Arch, ExperimentConfig, InitKind,
};
use dpu_sim::dpu::{DpuConfig, DpuEngine, ErrorModel};
use dpu_sim::error::DpuError;
use dpu_sim::field::PhaseLayer;
use dpu_sim::io::{load_model, save_model, write_intensity_pgm, write_phase_pgm, ModelSpec};
use dpu_sim::network::{
    D2nnSpec, DetectorRegions, DninBlock, DninSpec, DrnnReadout, DrnnSpec,
};
use dpu_sim::report::{evaluate_images, evaluate_video, RunReport};
use dpu_sim::trainer::{
    adaptive_train_d2nn, adaptive_train_drnn_readout, drnn_plus_plus_assemble, pretrain,
    subsequence_accuracy, ConvergenceTrace, TrainSet,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "dpu",
    about = "Train and evaluate diffractive optoelectronic networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Verb {
    /// Train a model in silico and write its manifest plus an ideal report.
    Pretrain(Common),
    /// Evaluate an existing model under the configured error model and
    /// report the degradation against the ideal system.
    Inject(Common),
    /// Adaptive training against the configured physical twin.
    Adapt(Common),
    /// Fit the electronic read-out (ridge regression for recurrent models,
    /// decision coefficients otherwise) on an existing model.
    Readout(Common),
    /// Evaluate an existing model and emit a full run report.
    Eval(Common),
    /// Sweep pooled read-out nodes and write an accuracy-vs-nodes CSV.
    Sweep(Common),
    /// Re-emit CSV matrices from an existing JSON run report.
    Report(Common),
}

fn main() {
    let cli = Cli::parse();
    let (verb, common): (&str, &Common) = match &cli.verb {
        Verb::Pretrain(c) => ("pretrain", c),
        Verb::Inject(c) => ("inject", c),
        Verb::Adapt(c) => ("adapt", c),
        Verb::Readout(c) => ("readout", c),
        Verb::Eval(c) => ("eval", c),
        Verb::Sweep(c) => ("sweep", c),
        Verb::Report(c) => ("report", c),
    };
    match run(verb, common) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                DpuError::Usage(_) | DpuError::Config(_) => 1,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}

fn run(verb: &str, common: &Common) -> Result<(), DpuError> {
    let cfg = ExperimentConfig::load(&common.config)?;
    std::fs::create_dir_all(&common.out)?;
    cfg.write_echo(&common.out)?;
    match verb {
        "pretrain" => cmd_pretrain(&cfg, &common.out),
        "inject" => cmd_inject(&cfg, &common.out),
        "adapt" => cmd_adapt(&cfg, &common.out),
        "readout" => cmd_readout(&cfg, &common.out),
        "eval" => cmd_eval(&cfg, &common.out),
        "sweep" => cmd_sweep(&cfg, &common.out),
        "report" => cmd_report(&cfg, &common.out),
        _ => unreachable!(),
    }
}

fn init_phase(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng, n: usize) -> PhaseLayer<f64> {
    match cfg.model.init {
        InitKind::Zeros => PhaseLayer::zeros(n, n),
        InitKind::Random => PhaseLayer::random(n, n, rng),
    }
}

fn build_model(
    cfg: &ExperimentConfig,
    dcfg: &DpuConfig<f64>,
    classes: usize,
) -> Result<ModelSpec<f64>, DpuError> {
    let n = dcfg.grid.0;
    let regions = DetectorRegions::layout(dcfg.grid, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(match cfg.arch {
        Arch::D2nn => {
            let layers = (0..cfg.model.layers).map(|_| init_phase(cfg, &mut rng, n)).collect();
            ModelSpec::D2nn(D2nnSpec::new(layers, regions)?)
        }
        Arch::Dnin => {
            let mut blocks = Vec::new();
            let mut maps_in = 1usize;
            for &maps in &cfg.model.blocks {
                let dpu_layers = (0..maps).map(|_| init_phase(cfg, &mut rng, n)).collect();
                let beta = Array2::from_elem((maps, maps_in), 1.0 / maps_in as f64);
                blocks.push(DninBlock { dpu_layers, beta });
                maps_in = maps;
            }
            let fusion = vec![1.0 / maps_in as f64; maps_in];
            let electronic_fc = cfg
                .model
                .electronic_fc
                .then(|| Array2::from_elem((classes, n * n), 1.0 / (n * n) as f64));
            let spec = DninSpec {
                blocks,
                fusion,
                readout_layer: init_phase(cfg, &mut rng, n),
                electronic_fc,
                regions: regions.clone(),
                decision_coeffs: vec![1.0; classes],
            };
            spec.validate()?;
            ModelSpec::Dnin(spec)
        }
        Arch::Drnn => ModelSpec::Drnn(DrnnSpec {
            memory_layer: init_phase(cfg, &mut rng, n),
            readin_layer: init_phase(cfg, &mut rng, n),
            fusing_lambda: cfg.model.fusing_lambda,
            seq_len: cfg.model.seq_len,
            readout: DrnnReadout::Dpu { layer: init_phase(cfg, &mut rng, n) },
            regions,
            decision_coeffs: vec![1.0; classes],
        }),
    })
}

fn err_opt(cfg: &ExperimentConfig) -> Option<&ErrorModel> {
    cfg.error_model.enabled.then_some(&cfg.error_model)
}

/// Phase-layer PGMs plus one example layer-output PGM chain.
fn write_visuals(
    out: &Path,
    engine: &DpuEngine<f64>,
    model: &ModelSpec<f64>,
    example: Option<&Array2<f64>>,
) -> Result<(), DpuError> {
    let vis = out.join("visuals");
    std::fs::create_dir_all(&vis)?;
    match model {
        ModelSpec::D2nn(spec) => {
            for (i, layer) in spec.layers.iter().enumerate() {
                write_phase_pgm(&vis.join(format!("phase_layer_{i:02}.pgm")), layer)?;
            }
            if let Some(img) = example {
                let mut x = img.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                for (i, layer) in spec.layers.iter().enumerate() {
                    let mode =
                        if i == 0 { engine.cfg.input_mode } else { engine.cfg.hidden_mode };
                    x = engine.forward(&x, layer, mode)?;
                    let _ = &mut rng;
                    write_intensity_pgm(&vis.join(format!("example_out_{i:02}.pgm")), &x)?;
                }
            }
        }
        ModelSpec::Dnin(spec) => {
            for (b, block) in spec.blocks.iter().enumerate() {
                for (j, layer) in block.dpu_layers.iter().enumerate() {
                    write_phase_pgm(
                        &vis.join(format!("phase_block_{b:02}_layer_{j:02}.pgm")),
                        layer,
                    )?;
                }
            }
            write_phase_pgm(&vis.join("phase_readout.pgm"), &spec.readout_layer)?;
            if let Some(img) = example {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let out_i =
                    dpu_sim::network::dnin_forward(engine, spec, img, None, &mut rng)?;
                write_intensity_pgm(&vis.join("example_out.pgm"), &out_i.intensity)?;
            }
        }
        ModelSpec::Drnn(spec) => {
            write_phase_pgm(&vis.join("phase_memory.pgm"), &spec.memory_layer)?;
            write_phase_pgm(&vis.join("phase_readin.pgm"), &spec.readin_layer)?;
            if let DrnnReadout::Dpu { layer } = &spec.readout {
                write_phase_pgm(&vis.join("phase_readout.pgm"), layer)?;
            }
            if let Some(img) = example {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let h = dpu_sim::network::drnn_step(
                    engine,
                    spec,
                    &Array2::zeros(engine.cfg.grid),
                    img,
                    None,
                    &mut rng,
                )?;
                write_intensity_pgm(&vis.join("example_hidden.pgm"), &h)?;
            }
        }
    }
    Ok(())
}

fn emit_report(out: &Path, report: &RunReport) -> Result<(), DpuError> {
    report.validate()?;
    report.write_json(&out.join("report.json"))?;
    report.write_csv(out)?;
    println!(
        "test accuracy {:.1}%  ({} samples, optical/electronic ops {} / {})",
        report.test_accuracy * 100.0,
        report.samples,
        report.ops_per_inference.optical,
        report.ops_per_inference.electronic
    );
    Ok(())
}

fn evaluate_any(
    cfg: &ExperimentConfig,
    engine: &DpuEngine<f64>,
    model: &ModelSpec<f64>,
    err: Option<&ErrorModel>,
    convergence: ConvergenceTrace,
) -> Result<RunReport, DpuError> {
    match model {
        ModelSpec::Drnn(spec) => {
            let (_, test, categories) = load_video_sets::<f64>(cfg)?;
            evaluate_video(
                engine,
                spec,
                &test,
                categories,
                err,
                cfg.seed,
                convergence,
                cfg.echo(),
            )
        }
        _ => {
            let (_, test) = load_image_sets::<f64>(cfg)?;
            evaluate_images(engine, model, &test, err, cfg.seed, convergence, cfg.echo())
        }
    }
}

fn cmd_pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<(), DpuError> {
    let dcfg: DpuConfig<f64> = cfg.dpu_config()?;
    let engine = DpuEngine::new(dcfg.clone())?;
    let (trace, model, example) = match cfg.arch {
        Arch::Drnn => {
            let (train, test, categories) = load_video_sets::<f64>(cfg)?;
            let mut model = build_model(cfg, &dcfg, categories)?;
            let trace = pretrain(
                &engine,
                &mut model,
                &TrainSet::Sequences(&train),
                Some(&TrainSet::Sequences(&test)),
                &cfg.train,
            )?;
            let example = train.first().map(|s| s.frames[0].clone());
            (trace, model, example)
        }
        _ => {
            let (train, test) = load_image_sets::<f64>(cfg)?;
            let mut model = build_model(cfg, &dcfg, cfg.model.classes)?;
            let trace = pretrain(
                &engine,
                &mut model,
                &TrainSet::Images(&train),
                Some(&TrainSet::Images(&test)),
                &cfg.train,
            )?;
            let example = train.first().map(|s| s.image.clone());
            (trace, model, example)
        }
    };
    let model_dir = out.join("model");
    save_model(&model_dir, &dcfg, &model)?;
    write_visuals(out, &engine, &model, example.as_ref())?;
    let report = evaluate_any(cfg, &engine, &model, None, trace)?;
    emit_report(out, &report)
}

fn model_dir_of(cfg: &ExperimentConfig) -> Result<PathBuf, DpuError> {
    cfg.model_dir
        .clone()
        .ok_or_else(|| DpuError::Usage("this verb needs model_dir in the config".into()))
}

fn cmd_inject(cfg: &ExperimentConfig, out: &Path) -> Result<(), DpuError> {
    if !cfg.error_model.enabled {
        return Err(DpuError::Usage("inject needs an enabled error_model".into()));
    }
    let (dcfg, model) = load_model::<f64>(&model_dir_of(cfg)?)?;
    let engine = DpuEngine::new(dcfg)?;
    let ideal = evaluate_any(cfg, &engine, &model, None, vec![])?;
    let physical = evaluate_any(cfg, &engine, &model, Some(&cfg.error_model), vec![])?;
    ideal.write_json(&out.join("report_ideal.json"))?;
    emit_report(out, &physical)?;
    let drop = (ideal.test_accuracy - physical.test_accuracy) * 100.0;
    let summary = serde_json::json!({
        "ideal_accuracy": ideal.test_accuracy,
        "physical_accuracy": physical.test_accuracy,
        "drop_points": drop,
    });
    std::fs::write(
        out.join("degradation.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!("accuracy drop under injected errors: {drop:.1} points");
    Ok(())
}

fn cmd_adapt(cfg: &ExperimentConfig, out: &Path) -> Result<(), DpuError> {
    if !cfg.error_model.enabled {
        return Err(DpuError::Usage("adapt needs an enabled error_model".into()));
    }
    let (dcfg, mut model) = load_model::<f64>(&model_dir_of(cfg)?)?;
    let engine = DpuEngine::new(dcfg.clone())?;
    let trace = match &mut model {
        ModelSpec::D2nn(spec) => {
            if cfg.adapt.stages.is_empty() {
                return Err(DpuError::Usage("adapt needs at least one stage for d2nn".into()));
            }
            let (train, test) = load_image_sets::<f64>(cfg)?;
            let stats = adaptive_train_d2nn(
                &engine,
                spec,
                &cfg.error_model,
                &train,
                Some(&test),
                &cfg.adapt.stages,
                &cfg.train,
            )?;
            std::fs::write(
                out.join("stages.json"),
                serde_json::to_string_pretty(&stats).expect("stages serialize"),
            )?;
            stats.into_iter().flat_map(|s| s.trace).collect()
        }
        ModelSpec::Drnn(spec) => {
            let (train, test, _) = load_video_sets::<f64>(cfg)?;
            let before = subsequence_accuracy(
                &engine,
                spec,
                &test,
                Some(&cfg.error_model),
                cfg.seed,
            )?;
            let trace = adaptive_train_drnn_readout(
                &engine,
                spec,
                &cfg.error_model,
                &train,
                Some(&test),
                &cfg.train,
            )?;
            println!("sub-sequence accuracy before adaptation: {:.1}%", before * 100.0);
            trace
        }
        ModelSpec::Dnin(_) => {
            return Err(DpuError::Usage(
                "staged adaptation is implemented for d2nn and drnn models".into(),
            ))
        }
    };
    let model_dir = out.join("model");
    save_model(&model_dir, &dcfg, &model)?;
    let report = evaluate_any(cfg, &engine, &model, Some(&cfg.error_model), trace)?;
    emit_report(out, &report)
}

fn cmd_readout(cfg: &ExperimentConfig, out: &Path) -> Result<(), DpuError> {
    let (dcfg, mut model) = load_model::<f64>(&model_dir_of(cfg)?)?;
    let engine = DpuEngine::new(dcfg.clone())?;
    let err = err_opt(cfg);
    match &mut model {
        ModelSpec::Drnn(spec) => {
            let (train, _, categories) = load_video_sets::<f64>(cfg)?;
            drnn_plus_plus_assemble(
                &engine,
                spec,
                err,
                &train,
                cfg.readout.pooled_nodes,
                cfg.readout.alpha,
                categories,
                cfg.seed,
            )?;
        }
        ModelSpec::D2nn(spec) => {
            let (train, _) = load_image_sets::<f64>(cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut energies = Vec::new();
            let mut labels = Vec::new();
            for s in &train {
                let o = match err {
                    Some(e) => {
                        dpu_sim::network::d2nn_forward(&engine, spec, &s.image, Some(e), &mut rng)?
                    }
                    None => dpu_sim::network::d2nn_forward(&engine, spec, &s.image, None, &mut rng)?,
                };
                let (e, _) = dpu_sim::network::region_energies(&o, &spec.regions);
                energies.push(e);
                labels.push(s.label);
            }
            spec.decision_coeffs =
                dpu_sim::trainer::fit_decision_coefficients(&energies, &labels, &cfg.train)?;
        }
        ModelSpec::Dnin(spec) => {
            let (train, _) = load_image_sets::<f64>(cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut energies = Vec::new();
            let mut labels = Vec::new();
            for s in &train {
                let o = dpu_sim::network::dnin_forward(&engine, spec, &s.image, err, &mut rng)?;
                let (e, _) = dpu_sim::network::region_energies(&o.intensity, &spec.regions);
                energies.push(e);
                labels.push(s.label);
            }
            spec.decision_coeffs =
                dpu_sim::trainer::fit_decision_coefficients(&energies, &labels, &cfg.train)?;
        }
    }
    let model_dir = out.join("model");
    save_model(&model_dir, &dcfg, &model)?;
    let report = evaluate_any(cfg, &engine, &model, err, vec![])?;
    emit_report(out, &report)
}

fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<(), DpuError> {
    let (dcfg, model) = load_model::<f64>(&model_dir_of(cfg)?)?;
    let engine = DpuEngine::new(dcfg)?;
    let report = evaluate_any(cfg, &engine, &model, err_opt(cfg), vec![])?;
    write_visuals(out, &engine, &model, None)?;
    emit_report(out, &report)
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(), DpuError> {
    let (dcfg, model) = load_model::<f64>(&model_dir_of(cfg)?)?;
    let engine = DpuEngine::new(dcfg)?;
    let spec = match model {
        ModelSpec::Drnn(s) => s,
        _ => return Err(DpuError::Usage("sweep applies to recurrent models".into())),
    };
    let (train, test, categories) = load_video_sets::<f64>(cfg)?;
    let err = err_opt(cfg);
    let mut lines = vec!["pooled_nodes,frame_accuracy,video_accuracy".to_string()];
    for &nodes in &cfg.sweep.pooled_nodes {
        let mut s = spec.clone();
        drnn_plus_plus_assemble(
            &engine,
            &mut s,
            err,
            &train,
            nodes,
            cfg.readout.alpha,
            categories,
            cfg.seed,
        )?;
        let r = evaluate_video(
            &engine,
            &s,
            &test,
            categories,
            err,
            cfg.seed,
            vec![],
            cfg.echo(),
        )?;
        let frame = r.frame_accuracy.unwrap_or(0.0) * 100.0;
        let video = r.video_accuracy.unwrap_or(0.0) * 100.0;
        println!("pooled nodes {nodes}: frame {frame:.1}%, video {video:.1}%");
        lines.push(format!("{nodes},{frame:.1},{video:.1}"));
    }
    std::fs::write(out.join("sweep.csv"), lines.join("\n") + "\n")?;
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig, out: &Path) -> Result<(), DpuError> {
    let path = cfg
        .report_path
        .clone()
        .ok_or_else(|| DpuError::Usage("report needs report_path in the config".into()))?;
    let text = std::fs::read_to_string(&path)?;
    let report: RunReport = serde_json::from_str(&text)
        .map_err(|e| DpuError::Format(format!("{}: {e}", path.display())))?;
    emit_report(out, &report)
}

//! End-to-end acceptance gate. Runs the ten release criteria in order and
//! prints one pass/fail line per criterion; the test fails if any criterion
//! fails. Run with `-- --nocapture` to watch progress.

use dpu_sim::config::ExperimentConfig;
use dpu_sim::datasets::{split_subsequences, ImageSample, Preprocess, SubSequence};
use dpu_sim::dpu::{DpuConfig, DpuEngine, ErrorModel};
use dpu_sim::field::{phase_modulate, ComplexField, InputMode, PhaseLayer};
use dpu_sim::io::ModelSpec;
use dpu_sim::network::{
    drnn_forward, drnn_readout, drnn_step, D2nnSpec, DetectorRegions,
    DninBlock, DninSpec, DrnnOutput, DrnnReadout, DrnnSpec,
};
use dpu_sim::propagation::PropagationOperator;
use dpu_sim::report::{evaluate_images, evaluate_video};
use dpu_sim::trainer::{
    adaptive_train_d2nn, adaptive_train_drnn_readout, drnn_plus_plus_assemble, image_accuracy,
    pretrain, AdaptiveStagePlan, Loss, RetrainSet, TrainConfig, TrainSet,
};
use ndarray::Array2;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

// ---------------------------------------------------------------------------
// harness

struct Gate {
    results: Vec<(usize, bool, String)>,
}

impl Gate {
    fn new() -> Self {
        Self { results: Vec::new() }
    }

    fn run(&mut self, index: usize, f: impl FnOnce() -> Result<String, String>) {
        let started = Instant::now();
        let outcome = f();
        let elapsed = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                println!("criterion {index:2}: PASS  ({elapsed:.1}s)  {detail}");
                self.results.push((index, true, detail));
            }
            Err(detail) => {
                println!("criterion {index:2}: FAIL  ({elapsed:.1}s)  {detail}");
                self.results.push((index, false, detail));
            }
        }
    }

    fn finish(self) {
        let failed: Vec<String> = self
            .results
            .iter()
            .filter(|(_, ok, _)| !ok)
            .map(|(i, _, d)| format!("criterion {i}: {d}"))
            .collect();
        assert!(failed.is_empty(), "acceptance failures:\n{}", failed.join("\n"));
    }
}

fn small_engine(n: usize, dist_px: f64) -> DpuEngine<f64> {
    let mut cfg = DpuConfig::<f64>::with_grid(n);
    cfg.pitch = 1e-6;
    cfg.post_distance = dist_px * cfg.pitch;
    DpuEngine::new(cfg).unwrap()
}

fn digit_sets(
    dir: &std::path::Path,
    grid: usize,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> (Vec<ImageSample<f64>>, Vec<ImageSample<f64>>) {
    let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "schema_version": 1,
        "arch": "d2nn",
        "grid": grid,
        "dataset": {
            "kind": "synth_digits",
            "dir": dir,
            "train_per_class": train_per_class,
            "test_per_class": test_per_class,
            "seed": seed
        }
    }))
    .unwrap();
    dpu_sim::config::load_image_sets::<f64>(&cfg).unwrap()
}

// ---------------------------------------------------------------------------
// criteria

/// 1. Analytic gradients vs central finite differences on a 12x12 grid.
fn criterion_1() -> Result<String, String> {
    let started = Instant::now();
    let n = 12;
    let engine = small_engine(n, 15.0);
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>());
        let layer = PhaseLayer::<f64>::random(n, n, &mut rng);
        let cot = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>() - 0.5);
        let (trace, _) = engine
            .forward_traced(&img, &layer, InputMode::Grayscale)
            .map_err(|e| e.to_string())?;
        let frozen_max = trace.frame_max();
        let (gp, _) = engine.backward(&trace, &cot).map_err(|e| e.to_string())?;
        // loss with normalization frozen at the unperturbed frame max
        let loss = |l: &PhaseLayer<f64>| -> f64 {
            let (t, _) = engine.forward_traced(&img, l, InputMode::Grayscale).unwrap();
            (t.sensor_intensity() / frozen_max * &cot).sum()
        };
        let h = 1e-6;
        let scale = gp.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for i in 0..n {
            for j in 0..n {
                let mut lp = layer.clone();
                lp.raw[[i, j]] += h;
                let mut lm = layer.clone();
                lm.raw[[i, j]] -= h;
                let fd = (loss(&lp) - loss(&lm)) / (2.0 * h);
                worst = worst.max((gp[[i, j]] - fd).abs() / scale.max(1e-12));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if worst >= 1e-4 {
        return Err(format!("max relative FD error {worst:.2e} >= 1e-4"));
    }
    if secs >= 60.0 {
        return Err(format!("runtime {secs:.1}s exceeds 1 min"));
    }
    Ok(format!("max relative FD error {worst:.2e} over 5 seeds, all 144 pixels"))
}

/// 2. Band-limited angular spectrum vs direct Rayleigh-Sommerfeld summation.
fn criterion_2() -> Result<String, String> {
    let started = Instant::now();
    let n = 16usize;
    let wl = 698e-9;
    let pitch = wl; // wavelength-scale sampling keeps the delta-vs-interpolant gap small
    let z = 20.0 * pitch;
    // tightly localized on-axis source (sigma = 1.5 px)
    let c = (n as f64 - 1.0) / 2.0;
    let grid = Array2::from_shape_fn((n, n), |(i, j)| {
        let d2 = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * 1.5 * 1.5);
        Complex::new((-d2).exp(), 0.0)
    });
    let field = ComplexField::new(grid.clone(), pitch, wl).unwrap();
    let op = PropagationOperator::new((n, n), pitch, wl, z, 2, true).unwrap();
    let asm = op.propagate(&field).map_err(|e| e.to_string())?;
    // direct first Rayleigh-Sommerfeld integral:
    // u(p) = sum_q u(q) * z * e^{ikr} / r^2 * (1/(2 pi r) - i/lambda) * dA
    let k = std::f64::consts::TAU / wl;
    let da = pitch * pitch;
    let mut rs = Array2::from_elem((n, n), Complex::new(0.0, 0.0));
    for oy in 0..n {
        for ox in 0..n {
            let mut acc = Complex::new(0.0, 0.0);
            for sy in 0..n {
                for sx in 0..n {
                    let dx = (ox as f64 - sx as f64) * pitch;
                    let dy = (oy as f64 - sy as f64) * pitch;
                    let r = (dx * dx + dy * dy + z * z).sqrt();
                    let kernel = Complex::new(0.0, k * r).exp() * (z / (r * r))
                        * Complex::new(1.0 / (std::f64::consts::TAU * r), -1.0 / wl);
                    acc += grid[[sy, sx]] * kernel * da;
                }
            }
            rs[[oy, ox]] = acc;
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in asm.grid.iter().zip(rs.iter()) {
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
    }
    let rel = (num / den).sqrt();
    let secs = started.elapsed().as_secs_f64();
    if rel >= 1e-2 {
        return Err(format!("ASM vs RS relative L2 error {rel:.2e} >= 1e-2"));
    }
    if secs >= 60.0 {
        return Err(format!("runtime {secs:.1}s exceeds 1 min"));
    }
    Ok(format!("ASM vs direct RS relative L2 error {rel:.2e}"))
}

/// 3. Energy conservation, modulation magnitude, adjoint identity.
fn criterion_3() -> Result<String, String> {
    let n = 32;
    let pitch = 1e-6;
    let wl = 698e-9;
    let mut worst_energy: f64 = 0.0;
    let mut worst_mag: f64 = 0.0;
    let mut worst_adj: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // smooth band-limited random field: Gaussian bumps under an envelope
        let mut g = Array2::from_elem((n, n), Complex::new(0.0, 0.0));
        for _ in 0..4 {
            let cy = rng.gen_range(0.4..0.6) * n as f64;
            let cx = rng.gen_range(0.4..0.6) * n as f64;
            let s = rng.gen_range(2.0..3.0);
            let amp = Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            for ((i, j), v) in g.indexed_iter_mut() {
                let d2 = ((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2)) / (2.0 * s * s);
                *v += amp * (-d2).exp();
            }
        }
        let half = n as f64 / 2.0;
        for ((i, j), v) in g.indexed_iter_mut() {
            let r = ((i as f64 - half).powi(2) + (j as f64 - half).powi(2)).sqrt()
                / (0.38 * n as f64);
            *v *= (-r.powi(8)).exp();
        }
        let f = ComplexField::new(g, pitch, wl).unwrap();
        let op = PropagationOperator::new((n, n), pitch, wl, 5.0 * pitch, 2, true)
            .map_err(|e| e.to_string())?;
        let out = op.propagate(&f).map_err(|e| e.to_string())?;
        worst_energy = worst_energy.max((out.energy() - f.energy()).abs() / f.energy());
        // phase modulation preserves per-pixel magnitude
        let phases = Array2::from_shape_fn((n, n), |_| rng.gen_range(-30.0..30.0));
        let m = phase_modulate(&f, &phases).map_err(|e| e.to_string())?;
        for (a, b) in f.grid.iter().zip(m.grid.iter()) {
            worst_mag = worst_mag.max((a.norm() - b.norm()).abs() / a.norm().max(1e-30));
        }
        // adjoint inner-product identity
        let v = ComplexField::new(
            Array2::from_shape_fn((n, n), |_| {
                Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            }),
            pitch,
            wl,
        )
        .unwrap();
        let pu = op.propagate(&f).unwrap();
        let pav = op.propagate_adjoint(&v).unwrap();
        let lhs: Complex<f64> = pu.grid.iter().zip(v.grid.iter()).map(|(x, y)| x.conj() * y).sum();
        let rhs: Complex<f64> = f.grid.iter().zip(pav.grid.iter()).map(|(x, y)| x.conj() * y).sum();
        worst_adj = worst_adj.max((lhs - rhs).norm() / rhs.norm());
    }
    if worst_energy >= 1e-6 {
        return Err(format!("energy drift {worst_energy:.2e} >= 1e-6"));
    }
    if worst_mag >= 16.0 * f64::EPSILON {
        return Err(format!("modulation magnitude error {worst_mag:.2e} above machine precision"));
    }
    if worst_adj >= 1e-12 {
        return Err(format!("adjoint identity error {worst_adj:.2e} >= 1e-12"));
    }
    Ok(format!(
        "energy drift {worst_energy:.1e}, modulation magnitude {worst_mag:.1e}, adjoint {worst_adj:.1e}"
    ))
}

struct DeskScale {
    engine: DpuEngine<f64>,
    spec: D2nnSpec<f64>,
    train: Vec<ImageSample<f64>>,
    test: Vec<ImageSample<f64>>,
    ideal_accuracy: f64,
}

/// 4. 3-layer 112x112 digit classifier: >= 90% on 2,000 held-out images.
fn criterion_4(data_dir: &std::path::Path) -> Result<(String, DeskScale), String> {
    let started = Instant::now();
    let grid = 112;
    let (train, test) = digit_sets(data_dir, grid, 1000, 200, 9);
    assert!(train.len() >= 10_000 && test.len() >= 2_000);
    let cfg = DpuConfig::<f64>::with_grid(grid);
    let engine = DpuEngine::new(cfg).map_err(|e| e.to_string())?;
    let regions = DetectorRegions::layout((grid, grid), 10).map_err(|e| e.to_string())?;
    let spec = D2nnSpec::new(vec![PhaseLayer::zeros(grid, grid); 3], regions)
        .map_err(|e| e.to_string())?;
    let mut model = ModelSpec::D2nn(spec);
    let tcfg = TrainConfig {
        epochs: 4,
        loss: Loss::CrossEntropy { temperature: 10.0 },
        ..TrainConfig::default()
    };
    pretrain(&engine, &mut model, &TrainSet::Images(&train), None, &tcfg)
        .map_err(|e| e.to_string())?;
    let spec = match model {
        ModelSpec::D2nn(s) => s,
        _ => unreachable!(),
    };
    let acc = image_accuracy(&engine, &ModelSpec::D2nn(spec.clone()), &test, None, 0)
        .map_err(|e| e.to_string())?;
    let hours = started.elapsed().as_secs_f64() / 3600.0;
    let detail = format!(
        "3-layer {grid}x{grid}, {} train / {} test images, accuracy {:.1}% in {:.2}h",
        train.len(),
        test.len(),
        acc * 100.0,
        hours
    );
    if acc < 0.90 {
        return Err(format!("{detail} (< 90%)"));
    }
    if hours > 4.0 {
        return Err(format!("{detail} (> 4h budget)"));
    }
    Ok((detail, DeskScale { engine, spec, train, test, ideal_accuracy: acc }))
}

/// 5. Injected-error degradation and staged adaptive recovery.
fn criterion_5(desk: &DeskScale) -> Result<String, String> {
    let err = ErrorModel {
        enabled: true,
        shift: (2.0, 3.0),
        phase_gamma: 1.15,
        readout_noise_sigma: 0.005,
    };
    let ideal = desk.ideal_accuracy;
    let direct = image_accuracy(
        &desk.engine,
        &ModelSpec::D2nn(desk.spec.clone()),
        &desk.test,
        Some(&err),
        0,
    )
    .map_err(|e| e.to_string())?;
    let drop = (ideal - direct) * 100.0;
    if drop < 10.0 {
        return Err(format!(
            "direct transfer dropped only {drop:.1} points ({:.1}% -> {:.1}%)",
            ideal * 100.0,
            direct * 100.0
        ));
    }
    let tcfg = TrainConfig {
        epochs: 3,
        loss: Loss::CrossEntropy { temperature: 10.0 },
        ..TrainConfig::default()
    };
    let stages = |set: RetrainSet| {
        vec![
            AdaptiveStagePlan { stage_index: 0, recorded_layer: 0, retrain_set: set },
            AdaptiveStagePlan { stage_index: 1, recorded_layer: 1, retrain_set: set },
        ]
    };
    // full-set two-stage adaptation
    let mut full_spec = desk.spec.clone();
    adaptive_train_d2nn(
        &desk.engine,
        &mut full_spec,
        &err,
        &desk.train,
        None,
        &stages(RetrainSet::Full),
        &tcfg,
    )
    .map_err(|e| e.to_string())?;
    let full = image_accuracy(
        &desk.engine,
        &ModelSpec::D2nn(full_spec),
        &desk.test,
        Some(&err),
        0,
    )
    .map_err(|e| e.to_string())?;
    // mini-set (2%) adaptation: only ~200 samples per stage, so many more
    // epochs with smaller batches for a comparable number of optimizer steps
    let mini_cfg = TrainConfig { epochs: 60, batch_size: 10, ..tcfg };
    let mut mini_spec = desk.spec.clone();
    adaptive_train_d2nn(
        &desk.engine,
        &mut mini_spec,
        &err,
        &desk.train,
        None,
        &stages(RetrainSet::Mini { fraction: 0.02 }),
        &mini_cfg,
    )
    .map_err(|e| e.to_string())?;
    let mini = image_accuracy(
        &desk.engine,
        &ModelSpec::D2nn(mini_spec),
        &desk.test,
        Some(&err),
        0,
    )
    .map_err(|e| e.to_string())?;
    let detail = format!(
        "ideal {:.1}%, direct {:.1}% (drop {:.1}), adapted full {:.1}%, mini(2%) {:.1}%",
        ideal * 100.0,
        direct * 100.0,
        drop,
        full * 100.0,
        mini * 100.0
    );
    if (ideal - full) * 100.0 > 3.0 {
        return Err(format!("{detail}: full recovery gap > 3 points"));
    }
    if (ideal - mini) * 100.0 > 6.0 {
        return Err(format!("{detail}: mini recovery gap > 6 points"));
    }
    Ok(detail)
}

/// 6. D-NIN-1 (3 feature maps) vs D2NN under the same training budget.
fn criterion_6(data_dir: &std::path::Path) -> Result<String, String> {
    let grid = 56;
    let (train, test) = digit_sets(data_dir, grid, 300, 100, 11);
    let engine = DpuEngine::new(DpuConfig::<f64>::with_grid(grid)).map_err(|e| e.to_string())?;
    let regions = DetectorRegions::layout((grid, grid), 10).map_err(|e| e.to_string())?;
    let mut d2nn_acc = Vec::new();
    let mut dnin_acc = Vec::new();
    for seed in 0..3u64 {
        let tcfg = TrainConfig {
            epochs: 4,
            seed,
            loss: Loss::CrossEntropy { temperature: 10.0 },
            ..TrainConfig::default()
        };
        // identical small random init for both architectures: with all-zero
        // phases the parallel feature maps of a block receive identical
        // gradients and never differentiate
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut init = || {
            let mut l = PhaseLayer::random(grid, grid, &mut rng);
            l.raw.mapv_inplace(|p| p * 0.08);
            l
        };
        let spec = D2nnSpec::new((0..3).map(|_| init()).collect(), regions.clone())
            .map_err(|e| e.to_string())?;
        let mut model = ModelSpec::D2nn(spec);
        pretrain(&engine, &mut model, &TrainSet::Images(&train), None, &tcfg)
            .map_err(|e| e.to_string())?;
        d2nn_acc.push(
            image_accuracy(&engine, &model, &test, None, 0).map_err(|e| e.to_string())?,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut init = || {
            let mut l = PhaseLayer::random(grid, grid, &mut rng);
            l.raw.mapv_inplace(|p| p * 0.08);
            l
        };
        let dnin = DninSpec {
            blocks: vec![
                DninBlock {
                    dpu_layers: (0..3).map(|_| init()).collect(),
                    beta: Array2::from_elem((3, 1), 1.0),
                },
                DninBlock {
                    dpu_layers: (0..3).map(|_| init()).collect(),
                    beta: Array2::from_elem((3, 3), 1.0 / 3.0),
                },
            ],
            fusion: vec![1.0 / 3.0; 3],
            readout_layer: init(),
            electronic_fc: None,
            regions: regions.clone(),
            decision_coeffs: vec![1.0; 10],
        };
        let mut model = ModelSpec::Dnin(dnin);
        pretrain(&engine, &mut model, &TrainSet::Images(&train), None, &tcfg)
            .map_err(|e| e.to_string())?;
        dnin_acc.push(
            image_accuracy(&engine, &model, &test, None, 0).map_err(|e| e.to_string())?,
        );
    }
    let median = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    let detail = format!(
        "d2nn {:?}%, dnin {:?}%, medians {:.1} vs {:.1}",
        d2nn_acc.iter().map(|a| (a * 1000.0).round() / 10.0).collect::<Vec<_>>(),
        dnin_acc.iter().map(|a| (a * 1000.0).round() / 10.0).collect::<Vec<_>>(),
        median(&d2nn_acc) * 100.0,
        median(&dnin_acc) * 100.0
    );
    for (a, b) in d2nn_acc.iter().zip(&dnin_acc) {
        if b < &(a - 0.002) {
            return Err(format!("{detail}: dnin below d2nn - 0.2 points for a seed"));
        }
    }
    if median(&dnin_acc) <= median(&d2nn_acc) {
        return Err(format!("{detail}: dnin median not strictly higher"));
    }
    Ok(detail)
}

/// 7. D-RNN structural identities.
fn criterion_7() -> Result<String, String> {
    let n = 24;
    let engine = small_engine(n, 30.0);
    let regions = DetectorRegions::layout((n, n), 6).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let make_spec = |lambda: f64, rng: &mut ChaCha8Rng| DrnnSpec {
        memory_layer: PhaseLayer::random(n, n, rng),
        readin_layer: PhaseLayer::random(n, n, rng),
        fusing_lambda: lambda,
        seq_len: 3,
        readout: DrnnReadout::Dpu { layer: PhaseLayer::random(n, n, rng) },
        regions: regions.clone(),
        decision_coeffs: vec![1.0; 6],
    };
    // lambda = 0: the rollout equals a per-frame two-layer network on the
    // last frame, bit-identically (sigma = 0).
    let spec0 = make_spec(0.0, &mut rng);
    for trial in 0..5u64 {
        let mut trng = ChaCha8Rng::seed_from_u64(trial);
        let frames: Vec<Array2<f64>> =
            (0..3).map(|_| Array2::from_shape_fn((n, n), |_| trng.gen::<f64>())).collect();
        let out = drnn_forward(&engine, &spec0, &frames, None, &mut trng)
            .map_err(|e| e.to_string())?;
        let rollout = match out {
            DrnnOutput::Dpu { intensity, .. } => intensity,
            _ => unreachable!(),
        };
        // manual per-frame two-layer network on the last frame
        let a = engine
            .forward_unquantized(&frames[2], &spec0.readin_layer, engine.cfg.hidden_mode)
            .map_err(|e| e.to_string())?;
        let h = engine.cfg.measure_quantizer.apply_map(&a);
        let layer = match &spec0.readout {
            DrnnReadout::Dpu { layer } => layer,
            _ => unreachable!(),
        };
        let two_layer = engine
            .forward(&h, layer, engine.cfg.hidden_mode)
            .map_err(|e| e.to_string())?;
        if rollout != two_layer {
            return Err(format!("lambda=0 rollout differs from per-frame net (trial {trial})"));
        }
    }
    // N-step rollout equals the manually unrolled recurrence
    let spec = make_spec(0.35, &mut rng);
    for trial in 0..5u64 {
        let mut trng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let frames: Vec<Array2<f64>> =
            (0..3).map(|_| Array2::from_shape_fn((n, n), |_| trng.gen::<f64>())).collect();
        let auto = drnn_forward(&engine, &spec, &frames, None, &mut trng)
            .map_err(|e| e.to_string())?;
        let mut h = Array2::zeros((n, n));
        let mut mrng = ChaCha8Rng::seed_from_u64(0);
        for x in &frames {
            h = drnn_step(&engine, &spec, &h, x, None, &mut mrng).map_err(|e| e.to_string())?;
        }
        let manual = drnn_readout(&engine, &spec, &h, None, &mut mrng)
            .map_err(|e| e.to_string())?;
        match (auto, manual) {
            (
                DrnnOutput::Dpu { intensity: a, energies: ea },
                DrnnOutput::Dpu { intensity: b, energies: eb },
            ) => {
                if a != b || ea != eb {
                    return Err(format!("manual unroll differs (trial {trial})"));
                }
            }
            _ => unreachable!(),
        }
    }
    Ok("lambda=0 equals per-frame net bit-exactly; rollout equals manual unroll".into())
}

struct VideoTask {
    engine: DpuEngine<f64>,
    spec: DrnnSpec<f64>,
    train: Vec<SubSequence<f64>>,
    test: Vec<SubSequence<f64>>,
    categories: usize,
    err: ErrorModel,
    adapted_video_accuracy: f64,
}

fn video_accuracy(
    engine: &DpuEngine<f64>,
    spec: &DrnnSpec<f64>,
    test: &[SubSequence<f64>],
    categories: usize,
    err: Option<&ErrorModel>,
) -> Result<f64, String> {
    let r = evaluate_video(engine, spec, test, categories, err, 0, vec![], serde_json::json!({}))
        .map_err(|e| e.to_string())?;
    r.validate().map_err(|e| e.to_string())?;
    Ok(r.video_accuracy.unwrap())
}

/// 8. Weizmann-style D-RNN: >= 85% ideal video accuracy, and read-out-only
/// adaptation recovers >= 15 points under injected errors.
fn criterion_8(video_dir: &std::path::Path) -> Result<(String, VideoTask), String> {
    let grid = 56;
    let params = dpu_sim::synth::VideoSynthParams::weizmann_style(grid, 21);
    if !video_dir.join("manifest.json").exists() {
        dpu_sim::synth::write_video_dataset(video_dir, &params).map_err(|e| e.to_string())?;
    }
    let ds = dpu_sim::datasets::load_video_dataset::<f64>(
        video_dir,
        (grid, grid),
        dpu_sim::datasets::VideoDatasetKind::Weizmann,
    )
    .map_err(|e| e.to_string())?;
    let categories = ds.categories;
    let subs = |videos: &[dpu_sim::datasets::VideoSample<f64>]| -> Vec<SubSequence<f64>> {
        let mut out = Vec::new();
        for v in videos {
            let frames = dpu_sim::datasets::preprocess_frames(
                &v.frames,
                Preprocess::ThresholdForeground { fraction: 0.2 },
            );
            let clean = dpu_sim::datasets::VideoSample {
                frames,
                label: v.label,
                source_id: v.source_id.clone(),
                subject: v.subject,
            };
            out.extend(split_subsequences(&clean, 3).unwrap());
        }
        out
    };
    let train = subs(&ds.train);
    let test = subs(&ds.test);
    let engine = DpuEngine::new(DpuConfig::<f64>::with_grid(grid)).map_err(|e| e.to_string())?;
    let regions =
        DetectorRegions::layout((grid, grid), categories).map_err(|e| e.to_string())?;
    let mut model = ModelSpec::Drnn(DrnnSpec {
        memory_layer: PhaseLayer::zeros(grid, grid),
        readin_layer: PhaseLayer::zeros(grid, grid),
        fusing_lambda: 0.2,
        seq_len: 3,
        readout: DrnnReadout::Dpu { layer: PhaseLayer::zeros(grid, grid) },
        regions,
        decision_coeffs: vec![1.0; categories],
    });
    let tcfg = TrainConfig {
        epochs: 10,
        loss: Loss::CrossEntropy { temperature: 10.0 },
        ..TrainConfig::default()
    };
    pretrain(&engine, &mut model, &TrainSet::Sequences(&train), None, &tcfg)
        .map_err(|e| e.to_string())?;
    let spec = match model {
        ModelSpec::Drnn(s) => s,
        _ => unreachable!(),
    };
    let ideal = video_accuracy(&engine, &spec, &test, categories, None)?;
    if ideal < 0.85 {
        return Err(format!("ideal video accuracy {:.1}% < 85%", ideal * 100.0));
    }
    let err = ErrorModel {
        enabled: true,
        shift: (3.0, 2.0),
        phase_gamma: 1.25,
        readout_noise_sigma: 0.01,
    };
    let direct = video_accuracy(&engine, &spec, &test, categories, Some(&err))?;
    let mut adapted = spec.clone();
    let acfg = TrainConfig { epochs: 4, ..tcfg };
    adaptive_train_drnn_readout(&engine, &mut adapted, &err, &train, None, &acfg)
        .map_err(|e| e.to_string())?;
    let recovered = video_accuracy(&engine, &adapted, &test, categories, Some(&err))?;
    let gain = (recovered - direct) * 100.0;
    let detail = format!(
        "ideal {:.1}%, direct transfer {:.1}%, read-out-adapted {:.1}% (gain {gain:.1} points), {} test videos",
        ideal * 100.0,
        direct * 100.0,
        recovered * 100.0,
        30
    );
    if gain < 15.0 {
        return Err(format!("{detail}: gain < 15 points"));
    }
    Ok((
        detail,
        VideoTask {
            engine,
            spec: adapted,
            train,
            test,
            categories,
            err,
            adapted_video_accuracy: recovered,
        },
    ))
}

/// 9. Ridge read-out: residual <= 1e-8 and D-RNN++ >= D-RNN at 2500 nodes.
fn criterion_9(task: &VideoTask) -> Result<String, String> {
    // normal-equation residual on the actual pooled design matrix
    let nodes = 2500;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Array2::<f64>::zeros((task.train.len(), nodes));
    let mut labels = Vec::with_capacity(task.train.len());
    for (i, s) in task.train.iter().enumerate() {
        let mut h = Array2::zeros(task.engine.cfg.grid);
        for x in &s.frames {
            h = drnn_step(&task.engine, &task.spec, &h, x, Some(&task.err), &mut rng)
                .map_err(|e| e.to_string())?;
        }
        let pooled =
            dpu_sim::network::average_pool(&h, nodes).map_err(|e| e.to_string())?;
        rows.row_mut(i).assign(&pooled);
        labels.push(s.label);
    }
    let alpha = dpu_sim::trainer::default_ridge_alpha(&rows);
    let w = dpu_sim::trainer::ridge_fit(&rows, &labels, task.categories, alpha)
        .map_err(|e| e.to_string())?;
    let x = nalgebra::DMatrix::from_fn(rows.nrows(), nodes, |i, j| rows[[i, j]]);
    let mut y = nalgebra::DMatrix::zeros(rows.nrows(), task.categories);
    for (i, &l) in labels.iter().enumerate() {
        y[(i, l)] = 1.0;
    }
    let wm = nalgebra::DMatrix::from_fn(nodes, task.categories, |i, j| w[[i, j]]);
    let xtx = x.transpose() * &x;
    let lhs = (&xtx + nalgebra::DMatrix::identity(nodes, nodes) * alpha) * wm;
    let rhs = x.transpose() * y;
    let residual = (&lhs - &rhs).norm() / rhs.norm();
    if residual > 1e-8 {
        return Err(format!("ridge normal-equation residual {residual:.2e} > 1e-8"));
    }
    // D-RNN++ vs the DPU read-out on the same injected-error system
    let mut plus = task.spec.clone();
    drnn_plus_plus_assemble(
        &task.engine,
        &mut plus,
        Some(&task.err),
        &task.train,
        nodes,
        None,
        task.categories,
        0,
    )
    .map_err(|e| e.to_string())?;
    let plus_acc = video_accuracy(&task.engine, &plus, &task.test, task.categories, Some(&task.err))?;
    let detail = format!(
        "residual {residual:.1e}; D-RNN++ {:.1}% vs D-RNN {:.1}% at {nodes} nodes",
        plus_acc * 100.0,
        task.adapted_video_accuracy * 100.0
    );
    if plus_acc < task.adapted_video_accuracy {
        return Err(format!("{detail}: D-RNN++ below DPU read-out"));
    }
    Ok(detail)
}

/// 10. Report invariants and chance-level sanity for random phases.
fn criterion_10(desk: Option<&DeskScale>) -> Result<String, String> {
    let desk = desk.ok_or("prerequisite criterion 4 did not produce a model")?;
    // full report on the trained desk-scale model passes its checks
    let report = evaluate_images(
        &desk.engine,
        &ModelSpec::D2nn(desk.spec.clone()),
        &desk.test[..500],
        None,
        0,
        vec![],
        serde_json::json!({}),
    )
    .map_err(|e| e.to_string())?;
    report.validate().map_err(|e| e.to_string())?;
    // random phases perform at chance on 1,000 samples
    let grid = desk.engine.cfg.grid.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let random = D2nnSpec::new(
        (0..3).map(|_| PhaseLayer::random(grid, grid, &mut rng)).collect(),
        desk.spec.regions.clone(),
    )
    .map_err(|e| e.to_string())?;
    let chance_set = &desk.test[..1000];
    let r = evaluate_images(
        &desk.engine,
        &ModelSpec::D2nn(random),
        chance_set,
        None,
        0,
        vec![],
        serde_json::json!({}),
    )
    .map_err(|e| e.to_string())?;
    r.validate().map_err(|e| e.to_string())?;
    let chance = r.test_accuracy * 100.0;
    let detail = format!(
        "report invariants hold; random-phase accuracy {chance:.1}% on 1000 samples"
    );
    if !(7.0..=13.0).contains(&chance) {
        return Err(format!("{detail}: outside 10% +- 3"));
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let data_root = tempfile::tempdir().unwrap();
    let mut gate = Gate::new();

    gate.run(1, criterion_1);
    gate.run(2, criterion_2);
    gate.run(3, criterion_3);

    let mut desk: Option<DeskScale> = None;
    gate.run(4, || {
        let (detail, state) = criterion_4(&data_root.path().join("digits112"))?;
        desk = Some(state);
        Ok(detail)
    });
    gate.run(5, || match &desk {
        Some(d) => criterion_5(d),
        None => Err("prerequisite criterion 4 failed".into()),
    });
    gate.run(6, || criterion_6(&data_root.path().join("digits56")));
    gate.run(7, criterion_7);

    let mut video: Option<VideoTask> = None;
    gate.run(8, || {
        let (detail, state) = criterion_8(&data_root.path().join("weizmann"))?;
        video = Some(state);
        Ok(detail)
    });
    gate.run(9, || match &video {
        Some(v) => criterion_9(v),
        None => Err("prerequisite criterion 8 failed".into()),
    });
    gate.run(10, || criterion_10(desk.as_ref()));

    gate.finish();
}

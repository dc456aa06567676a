//! In-silico pre-training, staged adaptive training against the physical
//! twin, decision-coefficient fitting, and the ridge-regression electronic
//! read-out.

use crate::datasets::{ImageSample, SubSequence};
use crate::dpu::{DpuEngine, ErrorModel};
use crate::error::{DpuError, Result};
use crate::io::ModelSpec;
use crate::network::{
    average_pool, classify, d2nn_backward, d2nn_forward_traced, dnin_backward,
    dnin_forward, dnin_forward_traced, drnn_backward, drnn_readout, drnn_rollout_traced,
    drnn_step, region_energies, DetectorRegions, DrnnReadout,
};
use crate::num::Real;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    /// Softmax cross-entropy on region-energy percentages scaled by a
    /// temperature. Percentages live on a 1/C scale, so temperatures well
    /// above 1 sharpen the softmax into a useful training signal.
    CrossEntropy { temperature: f64 },
    /// Mean squared error against one-hot energy-percentage targets.
    Mse,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 20,
            epochs: 15,
            loss: Loss::CrossEntropy { temperature: 10.0 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(DpuError::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) && self.lr != 0.0 {
            return Err(DpuError::Config("learning rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub type ConvergenceTrace = Vec<EpochStats>;

// ---------------------------------------------------------------------------
// Adam over an ordered set of tensors

struct Adam<R: Real> {
    lr: R,
    b1: R,
    b2: R,
    eps: R,
    t: i32,
    slots: Vec<(Array2<R>, Array2<R>)>,
}

impl<R: Real> Adam<R> {
    fn new(cfg: &TrainConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr: R::from_f64c(cfg.lr),
            b1: R::from_f64c(cfg.beta1),
            b2: R::from_f64c(cfg.beta2),
            eps: R::from_f64c(cfg.epsilon),
            t: 0,
            slots: shapes.iter().map(|&s| (Array2::zeros(s), Array2::zeros(s))).collect(),
        }
    }

    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn step(&mut self, slot: usize, param: &mut Array2<R>, grad: &Array2<R>) {
        let (m, v) = &mut self.slots[slot];
        let one = R::one();
        let bc1 = one - self.b1.powi(self.t);
        let bc2 = one - self.b2.powi(self.t);
        ndarray::Zip::from(param).and(&mut *m).and(&mut *v).and(grad).for_each(
            |p, m, v, &g| {
                *m = self.b1 * *m + (one - self.b1) * g;
                *v = self.b2 * *v + (one - self.b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p = *p - self.lr * mh / (vh.sqrt() + self.eps);
            },
        );
    }
}

fn as_row<R: Real>(v: &[R]) -> Array2<R> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

// ---------------------------------------------------------------------------
// Loss on region energies

/// Loss value, cotangent on the intensity image, and the argmax prediction
/// for one sample.
pub fn energy_loss<R: Real>(
    intensity: &Array2<R>,
    regions: &DetectorRegions,
    label: usize,
    loss: Loss,
) -> Result<(f64, Array2<R>, usize)> {
    let (e, pct) = region_energies(intensity, regions);
    let total: R = e.iter().cloned().sum();
    if total <= R::zero() {
        return Err(DpuError::Diverged("zero total detector energy".into()));
    }
    let pred = classify(&e, &vec![R::one(); e.len()])?;
    let (value, gp) = loss_on_percentages(&pct, label, loss);
    // d pct_c / d e_j = (delta_cj - pct_c) / total
    let dot: R = gp.iter().zip(pct.iter()).map(|(&g, &p)| g * p).sum();
    let ge: Vec<R> = gp.iter().map(|&g| (g - dot) / total).collect();
    let mut cot = Array2::zeros(intensity.dim());
    for (c, r) in regions.regions.iter().enumerate() {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                cot[[y, x]] += ge[c];
            }
        }
    }
    Ok((value, cot, pred))
}

/// Loss and gradient with respect to a probability-like vector p.
fn loss_on_percentages<R: Real>(p: &[R], label: usize, loss: Loss) -> (f64, Vec<R>) {
    match loss {
        Loss::CrossEntropy { temperature } => {
            let t = R::from_f64c(temperature);
            let z: Vec<R> = p.iter().map(|&v| v * t).collect();
            let zmax = z.iter().cloned().fold(R::neg_infinity(), R::max);
            let exps: Vec<R> = z.iter().map(|&v| (v - zmax).exp()).collect();
            let sum: R = exps.iter().cloned().sum();
            let q: Vec<R> = exps.iter().map(|&v| v / sum).collect();
            let value = -(q[label].to_f64c() + 1e-300).ln();
            let gp: Vec<R> = q
                .iter()
                .enumerate()
                .map(|(c, &qc)| (qc - if c == label { R::one() } else { R::zero() }) * t)
                .collect();
            (value, gp)
        }
        Loss::Mse => {
            let mut value = 0.0;
            let mut gp = Vec::with_capacity(p.len());
            for (c, &pc) in p.iter().enumerate() {
                let target = if c == label { R::one() } else { R::zero() };
                let d = pc - target;
                value += (d * d).to_f64c();
                gp.push(R::from_f64c(2.0) * d);
            }
            (value, gp)
        }
    }
}

/// Cross-entropy on raw logit scores (electronic read-outs).
fn logit_loss<R: Real>(scores: &Array1<R>, label: usize) -> (f64, Array1<R>, usize) {
    let zmax = scores.iter().cloned().fold(R::neg_infinity(), R::max);
    let exps = scores.mapv(|v| (v - zmax).exp());
    let sum: R = exps.iter().cloned().sum();
    let q = exps.mapv(|v| v / sum);
    let value = -(q[label].to_f64c() + 1e-300).ln();
    let mut g = q.clone();
    g[label] -= R::one();
    let mut pred = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[pred] {
            pred = i;
        }
    }
    (value, g, pred)
}

// ---------------------------------------------------------------------------
// Prediction (deployed forwards)

/// Deployed prediction of any architecture on one image or sub-sequence.
pub fn predict_image<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    model: &ModelSpec<R>,
    image: &Array2<R>,
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<usize> {
    match model {
        ModelSpec::D2nn(spec) => {
            let out = crate::network::d2nn_forward(engine, spec, image, err, rng)?;
            let (e, _) = region_energies(&out, &spec.regions);
            classify(&e, &spec.decision_coeffs)
        }
        ModelSpec::Dnin(spec) => {
            let out = dnin_forward(engine, spec, image, err, rng)?;
            match out.logits {
                Some(scores) => {
                    let mut best = 0;
                    for (i, &v) in scores.iter().enumerate() {
                        if v > scores[best] {
                            best = i;
                        }
                    }
                    Ok(best)
                }
                None => {
                    let (e, _) = region_energies(&out.intensity, &spec.regions);
                    classify(&e, &spec.decision_coeffs)
                }
            }
        }
        ModelSpec::Drnn(_) => Err(DpuError::Usage(
            "recurrent models predict on sub-sequences, not still images".into(),
        )),
    }
}

pub fn predict_subsequence<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    spec: &crate::network::DrnnSpec<R>,
    frames: &[Array2<R>],
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<usize> {
    let out = crate::network::drnn_forward(engine, spec, frames, err, rng)?;
    out.predict(&spec.decision_coeffs)
}

/// Accuracy of the deployed model over a labeled image set.
pub fn image_accuracy<R: Real>(
    engine: &DpuEngine<R>,
    model: &ModelSpec<R>,
    set: &[ImageSample<R>],
    err: Option<&ErrorModel>,
    seed: u64,
) -> Result<f64> {
    if set.is_empty() {
        return Err(DpuError::Usage("empty evaluation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for s in set {
        if predict_image(engine, model, &s.image, err, &mut rng)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

pub fn subsequence_accuracy<R: Real>(
    engine: &DpuEngine<R>,
    spec: &crate::network::DrnnSpec<R>,
    set: &[SubSequence<R>],
    err: Option<&ErrorModel>,
    seed: u64,
) -> Result<f64> {
    if set.is_empty() {
        return Err(DpuError::Usage("empty evaluation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for s in set {
        if predict_subsequence(engine, spec, &s.frames, err, &mut rng)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

// ---------------------------------------------------------------------------
// Pre-training

/// Dataset banked for one training run.
pub enum TrainSet<'a, R: Real> {
    Images(&'a [ImageSample<R>]),
    Sequences(&'a [SubSequence<R>]),
}

impl<R: Real> TrainSet<'_, R> {
    fn len(&self) -> usize {
        match self {
            TrainSet::Images(s) => s.len(),
            TrainSet::Sequences(s) => s.len(),
        }
    }
}

fn check_finite(loss: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(DpuError::Diverged(format!("loss became non-finite ({loss})")));
    }
    Ok(())
}

/// In-silico pre-training of any architecture. Updates the spec in place and
/// returns the per-epoch convergence trace. `test` is evaluated with the
/// deployed (quantized) forward after every epoch when present.
pub fn pretrain<R: Real>(
    engine: &DpuEngine<R>,
    model: &mut ModelSpec<R>,
    train: &TrainSet<R>,
    test: Option<&TrainSet<R>>,
    cfg: &TrainConfig,
) -> Result<ConvergenceTrace> {
    cfg.validate()?;
    if train.len() == 0 {
        return Err(DpuError::Usage("empty training set".into()));
    }
    match (model, train) {
        (ModelSpec::D2nn(spec), TrainSet::Images(samples)) => {
            let test_images = match test {
                Some(TrainSet::Images(t)) => Some(*t),
                Some(_) => return Err(DpuError::Usage("test set kind mismatch".into())),
                None => None,
            };
            pretrain_d2nn(engine, spec, samples, test_images, cfg, 0, None)
        }
        (ModelSpec::Dnin(spec), TrainSet::Images(samples)) => {
            let test_images = match test {
                Some(TrainSet::Images(t)) => Some(*t),
                Some(_) => return Err(DpuError::Usage("test set kind mismatch".into())),
                None => None,
            };
            pretrain_dnin(engine, spec, samples, test_images, cfg)
        }
        (ModelSpec::Drnn(spec), TrainSet::Sequences(seqs)) => {
            let test_seqs = match test {
                Some(TrainSet::Sequences(t)) => Some(*t),
                Some(_) => return Err(DpuError::Usage("test set kind mismatch".into())),
                None => None,
            };
            pretrain_drnn(engine, spec, seqs, test_seqs, cfg, false, None)
        }
        _ => Err(DpuError::Usage("dataset kind does not match the architecture".into())),
    }
}

/// D2NN training over layers `start..L`. When `inputs_override` is given it
/// supplies per-sample inputs fed directly into layer `start` (the adaptive
/// stages' recorded physical outputs).
fn pretrain_d2nn<R: Real>(
    engine: &DpuEngine<R>,
    spec: &mut crate::network::D2nnSpec<R>,
    samples: &[ImageSample<R>],
    test: Option<&[ImageSample<R>]>,
    cfg: &TrainConfig,
    start: usize,
    inputs_override: Option<&[Array2<R>]>,
) -> Result<ConvergenceTrace> {
    let n_layers = spec.layers.len();
    if start >= n_layers {
        return Err(DpuError::Usage("no layers left to train".into()));
    }
    let shapes: Vec<_> = (start..n_layers).map(|_| engine.cfg.grid).collect();
    let mut adam = Adam::new(cfg, &shapes);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = vec![Array2::<R>::zeros(engine.cfg.grid); n_layers - start];
            for &i in batch {
                let input = match inputs_override {
                    Some(cache) => &cache[i],
                    None => &samples[i].image,
                };
                let (traces, out) = d2nn_forward_traced(engine, spec, input, start)?;
                let (loss, cot, pred) =
                    energy_loss(&out, &spec.regions, samples[i].label, cfg.loss)?;
                check_finite(loss)?;
                loss_sum += loss;
                hits += (pred == samples[i].label) as usize;
                let g = d2nn_backward(engine, &traces, &cot)?;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    *acc = &*acc + gi;
                }
            }
            let scale = R::from_f64c(1.0 / batch.len() as f64);
            adam.begin_step();
            for (slot, g) in grads.iter().enumerate() {
                let g = g.mapv(|v| v * scale);
                adam.step(slot, &mut spec.layers[start + slot].raw, &g);
            }
        }
        let test_accuracy = match test {
            Some(t) => Some(image_accuracy(
                engine,
                &ModelSpec::D2nn(spec.clone()),
                t,
                None,
                cfg.seed,
            )?),
            None => None,
        };
        trace.push(EpochStats {
            epoch,
            train_loss: loss_sum / samples.len() as f64,
            train_accuracy: hits as f64 / samples.len() as f64,
            test_accuracy,
        });
    }
    Ok(trace)
}

fn pretrain_dnin<R: Real>(
    engine: &DpuEngine<R>,
    spec: &mut crate::network::DninSpec<R>,
    samples: &[ImageSample<R>],
    test: Option<&[ImageSample<R>]>,
    cfg: &TrainConfig,
) -> Result<ConvergenceTrace> {
    spec.validate()?;
    // slot order: per-block layers, per-block beta, fusion, readout, fc
    let mut shapes = Vec::new();
    for b in &spec.blocks {
        for _ in &b.dpu_layers {
            shapes.push(engine.cfg.grid);
        }
    }
    for b in &spec.blocks {
        shapes.push(b.beta.dim());
    }
    shapes.push((1, spec.fusion.len()));
    shapes.push(engine.cfg.grid);
    if let Some(fc) = &spec.electronic_fc {
        shapes.push(fc.dim());
    }
    let mut adam = Adam::new(cfg, &shapes);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut layer_acc: Vec<Vec<Array2<R>>> = spec
                .blocks
                .iter()
                .map(|b| vec![Array2::zeros(engine.cfg.grid); b.dpu_layers.len()])
                .collect();
            let mut beta_acc: Vec<Array2<R>> =
                spec.blocks.iter().map(|b| Array2::zeros(b.beta.dim())).collect();
            let mut fusion_acc = vec![R::zero(); spec.fusion.len()];
            let mut readout_acc = Array2::<R>::zeros(engine.cfg.grid);
            let mut fc_acc = spec.electronic_fc.as_ref().map(|fc| Array2::<R>::zeros(fc.dim()));
            for &i in batch {
                let tr = dnin_forward_traced(engine, spec, &samples[i].image)?;
                let (loss, cot, pred) = match (&spec.electronic_fc, &mut fc_acc) {
                    (Some(fc), Some(fc_g)) => {
                        let flat = Array1::from_iter(tr.intensity.iter().cloned());
                        let scores = fc.dot(&flat);
                        let (loss, glogits, pred) = logit_loss(&scores, samples[i].label);
                        // grad fc = glogits outer flat; cot intensity = fc^T glogits
                        for (c, &g) in glogits.iter().enumerate() {
                            for (j, &f) in flat.iter().enumerate() {
                                fc_g[[c, j]] += g * f;
                            }
                        }
                        let cot_flat = fc.t().dot(&glogits);
                        let cot = Array2::from_shape_vec(
                            engine.cfg.grid,
                            cot_flat.to_vec(),
                        )
                        .unwrap();
                        (loss, cot, pred)
                    }
                    _ => energy_loss(&tr.intensity, &spec.regions, samples[i].label, cfg.loss)?,
                };
                check_finite(loss)?;
                loss_sum += loss;
                hits += (pred == samples[i].label) as usize;
                let g = dnin_backward(engine, spec, &tr, &cot)?;
                for (bi, bg) in g.layer_grads.iter().enumerate() {
                    for (j, gj) in bg.iter().enumerate() {
                        layer_acc[bi][j] = &layer_acc[bi][j] + gj;
                    }
                }
                for (bi, gb) in g.beta_grads.iter().enumerate() {
                    beta_acc[bi] = &beta_acc[bi] + gb;
                }
                for (w, gw) in fusion_acc.iter_mut().zip(&g.fusion_grads) {
                    *w += *gw;
                }
                readout_acc = &readout_acc + &g.readout_grad;
            }
            let scale = R::from_f64c(1.0 / batch.len() as f64);
            adam.begin_step();
            let mut slot = 0;
            for (bi, block) in spec.blocks.iter_mut().enumerate() {
                for (j, layer) in block.dpu_layers.iter_mut().enumerate() {
                    let g = layer_acc[bi][j].mapv(|v| v * scale);
                    adam.step(slot, &mut layer.raw, &g);
                    slot += 1;
                }
            }
            for (bi, block) in spec.blocks.iter_mut().enumerate() {
                let g = beta_acc[bi].mapv(|v| v * scale);
                adam.step(slot, &mut block.beta, &g);
                slot += 1;
            }
            let mut fusion_row = as_row(&spec.fusion);
            let g = as_row(&fusion_acc).mapv(|v| v * scale);
            adam.step(slot, &mut fusion_row, &g);
            spec.fusion = fusion_row.iter().cloned().collect();
            slot += 1;
            let g = readout_acc.mapv(|v| v * scale);
            adam.step(slot, &mut spec.readout_layer.raw, &g);
            slot += 1;
            if let (Some(fc), Some(fc_g)) = (&mut spec.electronic_fc, &fc_acc) {
                let g = fc_g.mapv(|v| v * scale);
                adam.step(slot, fc, &g);
            }
        }
        let test_accuracy = match test {
            Some(t) => Some(image_accuracy(
                engine,
                &ModelSpec::Dnin(spec.clone()),
                t,
                None,
                cfg.seed,
            )?),
            None => None,
        };
        trace.push(EpochStats {
            epoch,
            train_loss: loss_sum / samples.len() as f64,
            train_accuracy: hits as f64 / samples.len() as f64,
            test_accuracy,
        });
    }
    Ok(trace)
}

/// D-RNN training. With `readout_only` the memory and read-in layers are
/// frozen (the adaptive fine-tuning mode). `h_override` supplies recorded
/// physical last hidden states keyed by sample index (used with
/// readout_only, skipping the rollout entirely).
fn pretrain_drnn<R: Real>(
    engine: &DpuEngine<R>,
    spec: &mut crate::network::DrnnSpec<R>,
    seqs: &[SubSequence<R>],
    test: Option<&[SubSequence<R>]>,
    cfg: &TrainConfig,
    readout_only: bool,
    h_override: Option<&[Array2<R>]>,
) -> Result<ConvergenceTrace> {
    spec.validate()?;
    if !matches!(spec.readout, DrnnReadout::Dpu { .. }) {
        return Err(DpuError::Usage(
            "gradient training applies to the DPU read-out; electronic read-outs use ridge_fit"
                .into(),
        ));
    }
    let shapes = vec![engine.cfg.grid; 3]; // memory, readin, readout
    let mut adam = Adam::new(cfg, &shapes);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut g_mem = Array2::<R>::zeros(engine.cfg.grid);
            let mut g_read = Array2::<R>::zeros(engine.cfg.grid);
            let mut g_out = Array2::<R>::zeros(engine.cfg.grid);
            for &i in batch {
                let (steps, h_n) = match h_override {
                    Some(cache) => (Vec::new(), cache[i].clone()),
                    None => drnn_rollout_traced(engine, spec, &seqs[i].frames)?,
                };
                let layer = match &spec.readout {
                    DrnnReadout::Dpu { layer } => layer,
                    _ => unreachable!(),
                };
                let (ro_trace, intensity) =
                    engine.forward_traced(&h_n, layer, engine.cfg.hidden_mode)?;
                let (loss, cot, pred) =
                    energy_loss(&intensity, &spec.regions, seqs[i].label, cfg.loss)?;
                check_finite(loss)?;
                loss_sum += loss;
                hits += (pred == seqs[i].label) as usize;
                let (g_ro, cot_h) = engine.backward(&ro_trace, &cot)?;
                g_out = &g_out + &g_ro;
                if !readout_only && !steps.is_empty() {
                    let (gm, gr) = drnn_backward(engine, spec, &steps, &cot_h)?;
                    g_mem = &g_mem + &gm;
                    g_read = &g_read + &gr;
                }
            }
            let scale = R::from_f64c(1.0 / batch.len() as f64);
            adam.begin_step();
            if !readout_only {
                adam.step(0, &mut spec.memory_layer.raw, &g_mem.mapv(|v| v * scale));
                adam.step(1, &mut spec.readin_layer.raw, &g_read.mapv(|v| v * scale));
            }
            if let DrnnReadout::Dpu { layer } = &mut spec.readout {
                adam.step(2, &mut layer.raw, &g_out.mapv(|v| v * scale));
            }
        }
        let test_accuracy = match test {
            Some(t) => Some(subsequence_accuracy(engine, spec, t, None, cfg.seed)?),
            None => None,
        };
        trace.push(EpochStats {
            epoch,
            train_loss: loss_sum / seqs.len() as f64,
            train_accuracy: hits as f64 / seqs.len() as f64,
            test_accuracy,
        });
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Adaptive training

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrainSet {
    Full,
    /// Class-stratified random fraction of the training set, fixed seed.
    Mini { fraction: f64 },
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AdaptiveStagePlan {
    pub stage_index: usize,
    /// Layer (D2NN) or block (D-NIN) whose physical outputs are recorded;
    /// layers up to and including it are frozen afterwards.
    pub recorded_layer: usize,
    pub retrain_set: RetrainSet,
}

/// Class-stratified sample of ceil(fraction * per-class count) per class.
pub fn stratified_indices<R: Real>(
    samples: &[ImageSample<R>],
    fraction: f64,
    seed: u64,
) -> Vec<usize> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * fraction).ceil() as usize).max(1).min(idx.len());
        picked.extend(idx.into_iter().take(k));
    }
    picked.sort();
    picked
}

/// Record of one adaptive stage.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct StageStats {
    pub stage_index: usize,
    pub recorded_layer: usize,
    pub set_size: usize,
    pub trace: ConvergenceTrace,
    /// Physical test accuracy after this stage (when a test set is given).
    pub physical_test_accuracy: Option<f64>,
}

/// Staged adaptive training of a pre-trained D2NN against the physical twin.
/// Every stage records physical outputs through the recorded layer for its
/// sample set, then re-trains all later layers in silico from the
/// pre-trained initialization. Decision coefficients are fitted last.
pub fn adaptive_train_d2nn<R: Real>(
    engine: &DpuEngine<R>,
    spec: &mut crate::network::D2nnSpec<R>,
    err: &ErrorModel,
    train: &[ImageSample<R>],
    test: Option<&[ImageSample<R>]>,
    plans: &[AdaptiveStagePlan],
    cfg: &TrainConfig,
) -> Result<Vec<StageStats>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DpuError::Usage("empty training set".into()));
    }
    let mut last_stage = None;
    for p in plans {
        if let Some(prev) = last_stage {
            if p.stage_index <= prev {
                return Err(DpuError::Usage("adaptive stages must run in increasing order".into()));
            }
        }
        if p.recorded_layer + 1 >= spec.layers.len() {
            return Err(DpuError::Usage(format!(
                "stage {} records layer {} but no later layers exist",
                p.stage_index, p.recorded_layer
            )));
        }
        last_stage = Some(p.stage_index);
    }
    let pretrained = spec.layers.clone();
    let mut stats = Vec::new();
    for plan in plans {
        let mini_storage: Vec<ImageSample<R>>;
        let subset: &[ImageSample<R>] = match plan.retrain_set {
            RetrainSet::Full => train,
            RetrainSet::Mini { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(DpuError::Usage("mini fraction must lie in (0, 1]".into()));
                }
                let indices = stratified_indices(train, fraction, cfg.seed);
                mini_storage = indices.iter().map(|&i| train[i].clone()).collect();
                &mini_storage
            }
        };
        // record physical outputs through the recorded layer
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut recorded = Vec::with_capacity(subset.len());
        for s in subset {
            let mut x = s.image.clone();
            for (l, layer) in spec.layers.iter().enumerate().take(plan.recorded_layer + 1) {
                let mode =
                    if l == 0 { engine.cfg.input_mode } else { engine.cfg.hidden_mode };
                x = engine.forward_physical(&x, layer, mode, err, &mut rng)?;
            }
            recorded.push(x);
        }
        // reset trainable layers to the pre-trained initialization
        for l in plan.recorded_layer + 1..spec.layers.len() {
            spec.layers[l] = pretrained[l].clone();
        }
        let frozen: Vec<_> =
            spec.layers[..=plan.recorded_layer].iter().map(|l| l.raw.clone()).collect();
        let trace = pretrain_d2nn(
            engine,
            spec,
            subset,
            None,
            cfg,
            plan.recorded_layer + 1,
            Some(&recorded),
        )?;
        for (l, f) in frozen.iter().enumerate() {
            if spec.layers[l].raw != *f {
                return Err(DpuError::Diverged(format!("frozen layer {l} was modified")));
            }
        }
        let physical_test_accuracy = match test {
            Some(t) => Some(image_accuracy(
                engine,
                &ModelSpec::D2nn(spec.clone()),
                t,
                Some(err),
                cfg.seed,
            )?),
            None => None,
        };
        stats.push(StageStats {
            stage_index: plan.stage_index,
            recorded_layer: plan.recorded_layer,
            set_size: subset.len(),
            trace,
            physical_test_accuracy,
        });
    }
    // decision coefficients fitted on the physical forward of the corrected net
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0ef);
    let mut energies = Vec::with_capacity(train.len());
    let mut labels = Vec::with_capacity(train.len());
    for s in train {
        let out = crate::network::d2nn_forward(engine, spec, &s.image, Some(err), &mut rng)?;
        let (e, _) = region_energies(&out, &spec.regions);
        energies.push(e);
        labels.push(s.label);
    }
    spec.decision_coeffs = fit_decision_coefficients(&energies, &labels, cfg)?;
    Ok(stats)
}

/// Read-out-only adaptive fine-tuning of a pre-trained D-RNN: last hidden
/// states are recorded through the physical rollout, then only the DPU
/// read-out layer is re-trained on them.
pub fn adaptive_train_drnn_readout<R: Real>(
    engine: &DpuEngine<R>,
    spec: &mut crate::network::DrnnSpec<R>,
    err: &ErrorModel,
    train: &[SubSequence<R>],
    test: Option<&[SubSequence<R>]>,
    cfg: &TrainConfig,
) -> Result<ConvergenceTrace> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DpuError::Usage("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut recorded = Vec::with_capacity(train.len());
    for s in train {
        let mut h = Array2::zeros(engine.cfg.grid);
        for x in &s.frames {
            h = drnn_step(engine, spec, &h, x, Some(err), &mut rng)?;
        }
        recorded.push(h);
    }
    let frozen_mem = spec.memory_layer.raw.clone();
    let frozen_read = spec.readin_layer.raw.clone();
    let trace = pretrain_drnn(engine, spec, train, None, cfg, true, Some(&recorded))?;
    if spec.memory_layer.raw != frozen_mem || spec.readin_layer.raw != frozen_read {
        return Err(DpuError::Diverged("recurrent layers were modified".into()));
    }
    if let Some(t) = test {
        // reported by the caller; recompute here only to validate
        let _ = subsequence_accuracy(engine, spec, t, Some(err), cfg.seed)?;
    }
    Ok(trace)
}

/// Fit per-class positive decision coefficients (exponential
/// parametrization) by the same gradient procedure and loss.
pub fn fit_decision_coefficients<R: Real>(
    energies: &[Vec<R>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<R>> {
    if energies.is_empty() || energies.len() != labels.len() {
        return Err(DpuError::Usage("energies and labels must be non-empty and equal".into()));
    }
    let classes = energies[0].len();
    let mut theta = vec![R::zero(); classes];
    let mut adam = Adam::new(cfg, &[(1, classes)]);
    let mut order: Vec<usize> = (0..energies.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![R::zero(); classes];
            for &i in batch {
                let coeffs: Vec<R> = theta.iter().map(|&t| t.exp()).collect();
                let scaled: Vec<R> =
                    energies[i].iter().zip(&coeffs).map(|(&e, &k)| e * k).collect();
                let total: R = scaled.iter().cloned().sum();
                if total <= R::zero() {
                    continue;
                }
                let pct: Vec<R> = scaled.iter().map(|&s| s / total).collect();
                let (loss, gp) = loss_on_percentages(&pct, labels[i], cfg.loss);
                check_finite(loss)?;
                let dot: R = gp.iter().zip(&pct).map(|(&g, &p)| g * p).sum();
                for c in 0..classes {
                    // ds_c/dtheta_c = s_c; through the normalization
                    grad[c] += (gp[c] - dot) / total * scaled[c];
                }
            }
            let scale = R::from_f64c(1.0 / batch.len() as f64);
            let g = as_row(&grad).mapv(|v| v * scale);
            let mut row = as_row(&theta);
            adam.begin_step();
            adam.step(0, &mut row, &g);
            theta = row.iter().cloned().collect();
        }
    }
    Ok(theta.iter().map(|&t| t.exp()).collect())
}

// ---------------------------------------------------------------------------
// Ridge read-out

/// Solve (X^T X + alpha I) W = X^T Y for one-hot labels.
/// X is samples x nodes; the result is nodes x classes.
pub fn ridge_fit<R: Real>(
    pooled: &Array2<R>,
    labels: &[usize],
    classes: usize,
    alpha: f64,
) -> Result<Array2<R>> {
    let (n, nodes) = pooled.dim();
    if n != labels.len() || n == 0 {
        return Err(DpuError::Usage("pooled rows must match label count".into()));
    }
    if alpha < 0.0 {
        return Err(DpuError::Usage("ridge alpha must be >= 0".into()));
    }
    let x = nalgebra::DMatrix::from_fn(n, nodes, |i, j| pooled[[i, j]].to_f64c());
    let mut y = nalgebra::DMatrix::zeros(n, classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(DpuError::Usage(format!("label {l} out of range")));
        }
        y[(i, l)] = 1.0;
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let a = &xtx + nalgebra::DMatrix::identity(nodes, nodes) * alpha;
    let chol = a.cholesky().ok_or_else(|| {
        DpuError::Usage(
            "normal equations are singular; ridge regression requires alpha > 0 here".into(),
        )
    })?;
    let w = chol.solve(&xty);
    Ok(Array2::from_shape_fn((nodes, classes), |(i, j)| R::from_f64c(w[(i, j)])))
}

/// Scale-aware default regularization: 1e-3 * trace(X^T X) / nodes.
pub fn default_ridge_alpha<R: Real>(pooled: &Array2<R>) -> f64 {
    let nodes = pooled.ncols();
    let tr: f64 = pooled.iter().map(|&v| v.to_f64c().powi(2)).sum();
    1e-3 * tr / nodes as f64
}

/// Replace a trained D-RNN's DPU read-out with a ridge-fit electronic
/// read-out over average-pooled last hidden states collected through the
/// physical forward.
pub fn drnn_plus_plus_assemble<R: Real>(
    engine: &DpuEngine<R>,
    spec: &mut crate::network::DrnnSpec<R>,
    err: Option<&ErrorModel>,
    train: &[SubSequence<R>],
    pooled_nodes: usize,
    alpha: Option<f64>,
    classes: usize,
    seed: u64,
) -> Result<()> {
    if train.is_empty() {
        return Err(DpuError::Usage("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Array2::<R>::zeros((train.len(), pooled_nodes));
    let mut labels = Vec::with_capacity(train.len());
    for (i, s) in train.iter().enumerate() {
        let mut h = Array2::zeros(engine.cfg.grid);
        for x in &s.frames {
            h = drnn_step(engine, spec, &h, x, err, &mut rng)?;
        }
        let pooled = average_pool(&h, pooled_nodes)?;
        rows.row_mut(i).assign(&pooled);
        labels.push(s.label);
    }
    let alpha = alpha.unwrap_or_else(|| default_ridge_alpha(&rows));
    let weights = ridge_fit(&rows, &labels, classes, alpha)?;
    spec.readout = DrnnReadout::Electronic { pooled_nodes, weights };
    Ok(())
}

/// Deployed D-RNN prediction helper shared by evaluation paths.
pub fn drnn_video_prediction<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    spec: &crate::network::DrnnSpec<R>,
    subs: &[SubSequence<R>],
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(subs.len());
    for s in subs {
        let mut h = Array2::zeros(engine.cfg.grid);
        for x in &s.frames {
            h = drnn_step(engine, spec, &h, x, err, rng)?;
        }
        let out = drnn_readout(engine, spec, &h, err, rng)?;
        preds.push(out.predict(&spec.decision_coeffs)?);
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpu::{full_cone_distance, DpuConfig};
    use crate::field::PhaseLayer;
    use crate::network::D2nnSpec;
    use crate::synth::render_digit;

    fn engine(n: usize) -> DpuEngine<f64> {
        let mut cfg = DpuConfig::with_grid(n);
        cfg.pitch = 1e-6;
        cfg.post_distance = full_cone_distance(n, cfg.pitch, cfg.wavelength);
        DpuEngine::new(cfg).unwrap()
    }

    fn tiny_digit_set(n: usize, per_class: usize, classes: usize, seed: u64) -> Vec<ImageSample<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for _ in 0..per_class {
            for label in 0..classes {
                let img = render_digit(label, &mut rng);
                out.push(ImageSample {
                    image: crate::datasets::fit_to_grid(&img, (n, n)),
                    label,
                });
            }
        }
        out
    }

    fn d2nn(n: usize, layers: usize, classes: usize) -> D2nnSpec<f64> {
        let regions = DetectorRegions::layout((n, n), classes).unwrap();
        D2nnSpec::new(vec![PhaseLayer::zeros(n, n); layers], regions).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let eng = engine(16);
        let mut model = ModelSpec::D2nn(d2nn(16, 2, 6));
        let before = match &model {
            ModelSpec::D2nn(s) => s.layers.iter().map(|l| l.raw.clone()).collect::<Vec<_>>(),
            _ => unreachable!(),
        };
        let train = tiny_digit_set(16, 2, 6, 0);
        let cfg = TrainConfig { lr: 0.0, epochs: 1, ..Default::default() };
        pretrain(&eng, &mut model, &TrainSet::Images(&train), None, &cfg).unwrap();
        match &model {
            ModelSpec::D2nn(s) => {
                for (l, b) in s.layers.iter().zip(&before) {
                    assert_eq!(l.raw, *b);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn single_class_training_raises_target_share() {
        let eng = engine(24);
        let mut spec = d2nn(24, 2, 6);
        // every sample is class 2
        let mut train = tiny_digit_set(24, 6, 3, 1);
        for s in &mut train {
            s.label = 2;
        }
        let share = |spec: &D2nnSpec<f64>| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut acc = 0.0;
            for s in &train {
                let out =
                    crate::network::d2nn_forward(&eng, spec, &s.image, None, &mut rng).unwrap();
                let (_, pct) = region_energies(&out, &spec.regions);
                acc += pct[2];
            }
            acc / train.len() as f64
        };
        let before = share(&spec);
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let mut model = ModelSpec::D2nn(spec);
        let trace =
            pretrain(&eng, &mut model, &TrainSet::Images(&train), None, &cfg).unwrap();
        let spec = match model {
            ModelSpec::D2nn(s) => s,
            _ => unreachable!(),
        };
        let after = share(&spec);
        assert!(after > before, "target share did not rise: {before} -> {after}");
        assert!(trace[cfg.epochs - 1].train_loss < trace[0].train_loss);
    }

    #[test]
    fn pretrain_reports_convergence_trace() {
        let eng = engine(16);
        let mut model = ModelSpec::D2nn(d2nn(16, 2, 6));
        let train = tiny_digit_set(16, 3, 6, 2);
        let test = tiny_digit_set(16, 1, 6, 3);
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let trace = pretrain(
            &eng,
            &mut model,
            &TrainSet::Images(&train),
            Some(&TrainSet::Images(&test)),
            &cfg,
        )
        .unwrap();
        assert_eq!(trace.len(), 2);
        assert!(trace.iter().all(|e| e.test_accuracy.is_some()));
        assert!(trace.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn adaptive_stage_freezes_recorded_layers_exactly() {
        let eng = engine(16);
        let mut spec = d2nn(16, 3, 6);
        let train = tiny_digit_set(16, 2, 6, 4);
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        // give layers distinct values so freezing is observable
        let mut model = ModelSpec::D2nn(spec.clone());
        pretrain(&eng, &mut model, &TrainSet::Images(&train), None, &cfg).unwrap();
        spec = match model {
            ModelSpec::D2nn(s) => s,
            _ => unreachable!(),
        };
        let err = ErrorModel {
            enabled: true,
            shift: (1.0, 0.5),
            phase_gamma: 1.1,
            readout_noise_sigma: 0.0,
        };
        let l0_before = spec.layers[0].raw.clone();
        let l2_before = spec.layers[2].raw.clone();
        let plans = [
            AdaptiveStagePlan { stage_index: 0, recorded_layer: 0, retrain_set: RetrainSet::Full },
            AdaptiveStagePlan { stage_index: 1, recorded_layer: 1, retrain_set: RetrainSet::Full },
        ];
        adaptive_train_d2nn(&eng, &mut spec, &err, &train, None, &plans, &cfg).unwrap();
        // layer 0 is frozen from stage 0 on; later layers are re-trained
        assert_eq!(spec.layers[0].raw, l0_before);
        assert_ne!(spec.layers[2].raw, l2_before);
        assert_eq!(spec.decision_coeffs.len(), 6);
        assert!(spec.decision_coeffs.iter().all(|&c| c > 0.0));
    }

    #[test]
    fn adaptive_stage_order_violation_is_usage_error() {
        let eng = engine(16);
        let mut spec = d2nn(16, 3, 6);
        let train = tiny_digit_set(16, 1, 6, 5);
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let plans = [
            AdaptiveStagePlan { stage_index: 1, recorded_layer: 0, retrain_set: RetrainSet::Full },
            AdaptiveStagePlan { stage_index: 0, recorded_layer: 1, retrain_set: RetrainSet::Full },
        ];
        let err = ErrorModel::disabled();
        assert!(matches!(
            adaptive_train_d2nn(&eng, &mut spec, &err, &train, None, &plans, &cfg),
            Err(DpuError::Usage(_))
        ));
    }

    #[test]
    fn stratified_mini_set_is_class_balanced() {
        let train = tiny_digit_set(8, 50, 6, 6);
        let idx = stratified_indices(&train, 0.02, 1);
        assert_eq!(idx.len(), 6); // ceil(50 * 0.02) = 1 per class
        let mut seen = std::collections::BTreeSet::new();
        for &i in &idx {
            seen.insert(train[i].label);
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn decision_coefficients_compensate_dim_class() {
        // class 1's detector is systematically 2x dimmer
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let classes = 4;
        let mut energies = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..200 {
            let label = rng.gen_range(0..classes);
            let mut e: Vec<f64> = (0..classes).map(|_| 0.5 + rng.gen::<f64>() * 0.2).collect();
            e[label] += 1.0;
            e[1] *= 0.5;
            energies.push(e);
            labels.push(label);
        }
        let cfg = TrainConfig { epochs: 30, ..Default::default() };
        let coeffs = fit_decision_coefficients(&energies, &labels, &cfg).unwrap();
        assert!(coeffs.iter().all(|&c| c > 0.0));
        let others = (coeffs[0] + coeffs[2] + coeffs[3]) / 3.0;
        assert!(
            coeffs[1] > 1.5 * others,
            "dim class coefficient did not grow: {coeffs:?}"
        );
        // balanced energies keep coefficients near-equal
        let balanced: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| {
                let mut e = vec![0.5; classes];
                e[l] = 1.5;
                e
            })
            .collect();
        let cb = fit_decision_coefficients(&balanced, &labels, &cfg).unwrap();
        let mean: f64 = cb.iter().sum::<f64>() / classes as f64;
        for &c in &cb {
            assert!((c / mean - 1.0).abs() < 0.2, "{cb:?}");
        }
    }

    #[test]
    fn ridge_identity_case_and_residual() {
        // X = I, Y = I, alpha = 0 -> W = I
        let x = Array2::<f64>::eye(4);
        let labels = [0usize, 1, 2, 3];
        let w = ridge_fit(&x, &labels, 4, 0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((w[[i, j]] - expect).abs() < 1e-12);
            }
        }
        // random well-conditioned system: normal-equation residual < 1e-8
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 60;
        let nodes = 12;
        let x = Array2::from_shape_fn((n, nodes), |_| rng.gen::<f64>() - 0.5);
        let labels: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let alpha = 0.1;
        let w = ridge_fit(&x, &labels, 5, alpha).unwrap();
        let xm = nalgebra::DMatrix::from_fn(n, nodes, |i, j| x[[i, j]]);
        let mut y = nalgebra::DMatrix::zeros(n, 5);
        for (i, &l) in labels.iter().enumerate() {
            y[(i, l)] = 1.0;
        }
        let wm = nalgebra::DMatrix::from_fn(nodes, 5, |i, j| w[[i, j]]);
        let xtx = xm.transpose() * &xm;
        let lhs = (&xtx + nalgebra::DMatrix::identity(nodes, nodes) * alpha) * wm;
        let rhs = xm.transpose() * y;
        let rel = (&lhs - &rhs).norm() / rhs.norm();
        assert!(rel < 1e-8, "residual {rel}");
        // large alpha drives W toward zero
        let w_big = ridge_fit(&x, &labels, 5, 1e9).unwrap();
        assert!(w_big.iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn ridge_singular_without_alpha_is_error() {
        // rank-deficient X (duplicate column)
        let mut x = Array2::<f64>::zeros((6, 3));
        for i in 0..6 {
            x[[i, 0]] = i as f64;
            x[[i, 1]] = i as f64;
            x[[i, 2]] = 1.0;
        }
        let labels = [0usize, 1, 0, 1, 0, 1];
        assert!(ridge_fit(&x, &labels, 2, 0.0).is_err());
        assert!(ridge_fit(&x, &labels, 2, 1e-6).is_ok());
    }

    #[test]
    fn diverged_loss_is_reported() {
        let eng = engine(12);
        let mut model = ModelSpec::D2nn(d2nn(12, 1, 6));
        // all-zero images produce zero detector energy -> divergence signal
        let train = vec![
            ImageSample { image: Array2::<f64>::zeros((12, 12)), label: 0 };
            4
        ];
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(
            pretrain(&eng, &mut model, &TrainSet::Images(&train), None, &cfg),
            Err(DpuError::Diverged(_))
        ));
    }
}

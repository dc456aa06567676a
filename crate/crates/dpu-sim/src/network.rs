//! Network architectures composed from DPU layers: the cascaded D2NN, the
//! multi-feature-map D-NIN-1 (optionally with an electronic fully connected
//! tail), and the recurrent D-RNN — plus detector-region read-out and the
//! classification decision.

use crate::dpu::{DpuEngine, DpuTrace, ErrorModel};
use crate::error::{DpuError, Result};
use crate::field::{InputMode, PhaseLayer};
use crate::num::Real;
use ndarray::{s, Array1, Array2};
use rand::Rng;

/// Axis-aligned rectangle on the sensor grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

/// Ordered per-category detector regions; order is left to right, then top
/// to bottom.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DetectorRegions {
    pub regions: Vec<Rect>,
    pub rows: usize,
    pub cols: usize,
}

impl DetectorRegions {
    /// Grid placement: rows x cols square regions of side grid/8, centered
    /// with uniform margins. 10 classes -> 2x5, 6 -> 2x3, others near-square.
    pub fn layout(grid: (usize, usize), classes: usize) -> Result<Self> {
        let (rows, cols) = match classes {
            10 => (2, 5),
            6 => (2, 3),
            c => {
                let r = (c as f64).sqrt().floor().max(1.0) as usize;
                (r, c.div_ceil(r))
            }
        };
        let side = (grid.0.min(grid.1)) / 8;
        if side == 0 {
            return Err(DpuError::Config("grid too small for detector regions".into()));
        }
        if rows * side > grid.0 || cols * side > grid.1 {
            return Err(DpuError::Config("detector regions do not fit the grid".into()));
        }
        let my = (grid.0 - rows * side) / (rows + 1);
        let mx = (grid.1 - cols * side) / (cols + 1);
        let mut regions = Vec::with_capacity(classes);
        'outer: for r in 0..rows {
            for c in 0..cols {
                if regions.len() == classes {
                    break 'outer;
                }
                regions.push(Rect {
                    y: my + (side + my) * r,
                    x: mx + (side + mx) * c,
                    h: side,
                    w: side,
                });
            }
        }
        let out = Self { regions, rows, cols };
        out.validate(grid)?;
        Ok(out)
    }

    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        for (i, r) in self.regions.iter().enumerate() {
            if r.y + r.h > grid.0 || r.x + r.w > grid.1 {
                return Err(DpuError::Config(format!("region {i} outside grid")));
            }
            for (j, o) in self.regions.iter().enumerate().skip(i + 1) {
                let disjoint =
                    r.y + r.h <= o.y || o.y + o.h <= r.y || r.x + r.w <= o.x || o.x + o.w <= r.x;
                if !disjoint {
                    return Err(DpuError::Config(format!("regions {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Summed intensity per region plus the percentage distribution (zero vector
/// if the total is zero).
pub fn region_energies<R: Real>(
    intensity: &Array2<R>,
    regions: &DetectorRegions,
) -> (Vec<R>, Vec<R>) {
    let energies: Vec<R> = regions
        .regions
        .iter()
        .map(|r| intensity.slice(s![r.y..r.y + r.h, r.x..r.x + r.w]).iter().cloned().sum())
        .collect();
    let total: R = energies.iter().cloned().sum();
    let pct = if total > R::zero() {
        energies.iter().map(|&e| e / total).collect()
    } else {
        vec![R::zero(); energies.len()]
    };
    (energies, pct)
}

/// argmax of coeffs[c] * energies[c]; ties break to the lowest index.
pub fn classify<R: Real>(energies: &[R], decision_coeffs: &[R]) -> Result<usize> {
    if energies.is_empty() {
        return Err(DpuError::Usage("empty energy vector".into()));
    }
    if energies.len() != decision_coeffs.len() {
        return Err(DpuError::Usage("energies and decision coefficients differ in length".into()));
    }
    let mut best = 0;
    let mut best_v = decision_coeffs[0] * energies[0];
    for (c, (&e, &k)) in energies.iter().zip(decision_coeffs.iter()).enumerate().skip(1) {
        let v = k * e;
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    Ok(best)
}

/// Majority vote over sub-sequence predictions; ties break to the lowest
/// category. Also returns the per-category vote fraction.
pub fn winner_takes_all(predictions: &[usize], num_categories: usize) -> Result<(usize, Vec<f64>)> {
    if predictions.is_empty() {
        return Err(DpuError::Usage("winner_takes_all over an empty prediction list".into()));
    }
    let mut votes = vec![0usize; num_categories];
    for &p in predictions {
        if p >= num_categories {
            return Err(DpuError::Usage(format!("prediction {p} out of range")));
        }
        votes[p] += 1;
    }
    let winner = votes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
        .unwrap();
    let n = predictions.len() as f64;
    Ok((winner, votes.iter().map(|&v| v as f64 / n).collect()))
}

/// Non-overlapping block means down to target_nodes = s^2 output nodes.
/// If s does not divide the grid, the grid is center-cropped to the nearest
/// multiple first.
pub fn average_pool<R: Real>(h: &Array2<R>, target_nodes: usize) -> Result<Array1<R>> {
    let side = (target_nodes as f64).sqrt().round() as usize;
    if side == 0 || side * side != target_nodes {
        return Err(DpuError::Usage(format!("target_nodes {target_nodes} is not a square")));
    }
    let (gh, gw) = h.dim();
    if side > gh || side > gw {
        return Err(DpuError::Usage(format!("cannot pool {gh}x{gw} up to {side}x{side}")));
    }
    let by = gh / side;
    let bx = gw / side;
    let oy = (gh - by * side) / 2;
    let ox = (gw - bx * side) / 2;
    let denom = R::from_f64c((by * bx) as f64);
    let mut out = Array1::zeros(target_nodes);
    for i in 0..side {
        for j in 0..side {
            let block = h.slice(s![
                oy + i * by..oy + (i + 1) * by,
                ox + j * bx..ox + (j + 1) * bx
            ]);
            out[i * side + j] = block.iter().cloned().sum::<R>() / denom;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// D2NN

#[derive(Clone)]
pub struct D2nnSpec<R: Real> {
    pub layers: Vec<PhaseLayer<R>>,
    pub regions: DetectorRegions,
    pub decision_coeffs: Vec<R>,
}

impl<R: Real> D2nnSpec<R> {
    pub fn new(layers: Vec<PhaseLayer<R>>, regions: DetectorRegions) -> Result<Self> {
        if layers.is_empty() {
            return Err(DpuError::Config("D2NN needs at least one layer".into()));
        }
        let coeffs = vec![R::one(); regions.len()];
        Ok(Self { layers, regions, decision_coeffs: coeffs })
    }

    pub fn classes(&self) -> usize {
        self.regions.len()
    }
}

fn layer_mode<R: Real>(engine: &DpuEngine<R>, index: usize) -> InputMode {
    if index == 0 {
        engine.cfg.input_mode
    } else {
        engine.cfg.hidden_mode
    }
}

/// Deployed cascade: each DPU output is re-encoded as the next DPU input.
/// With `err = None` (or a disabled model) this is the ideal forward.
pub fn d2nn_forward<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    spec: &D2nnSpec<R>,
    image: &Array2<R>,
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<Array2<R>> {
    let mut x = image.clone();
    for (l, layer) in spec.layers.iter().enumerate() {
        let mode = layer_mode(engine, l);
        x = match err {
            Some(e) => engine.forward_physical(&x, layer, mode, e, rng)?,
            None => engine.forward(&x, layer, mode)?,
        };
    }
    Ok(x)
}

/// Cascade forward starting from a cached intermediate: feeds `input` into
/// layer `start` (0-based). Used by adaptive training with recorded outputs.
pub fn d2nn_forward_from<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    spec: &D2nnSpec<R>,
    input: &Array2<R>,
    start: usize,
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<Array2<R>> {
    let mut x = input.clone();
    for (l, layer) in spec.layers.iter().enumerate().skip(start) {
        let mode = layer_mode(engine, l);
        x = match err {
            Some(e) => engine.forward_physical(&x, layer, mode, e, rng)?,
            None => engine.forward(&x, layer, mode)?,
        };
    }
    Ok(x)
}

/// Smooth training cascade with per-layer traces; starts at layer `start`.
pub fn d2nn_forward_traced<R: Real>(
    engine: &DpuEngine<R>,
    spec: &D2nnSpec<R>,
    image: &Array2<R>,
    start: usize,
) -> Result<(Vec<DpuTrace<R>>, Array2<R>)> {
    let mut traces = Vec::with_capacity(spec.layers.len() - start);
    let mut x = image.clone();
    for (l, layer) in spec.layers.iter().enumerate().skip(start) {
        let (trace, out) = engine.forward_traced(&x, layer, layer_mode(engine, l))?;
        traces.push(trace);
        x = out;
    }
    Ok((traces, x))
}

/// Reverse pass over a traced cascade. Returns per-traced-layer raw-phase
/// gradients (same order as the traces, i.e. layers start..L).
pub fn d2nn_backward<R: Real>(
    engine: &DpuEngine<R>,
    traces: &[DpuTrace<R>],
    cot_final: &Array2<R>,
) -> Result<Vec<Array2<R>>> {
    let mut grads = vec![Array2::zeros(engine.cfg.grid); traces.len()];
    let mut cot = cot_final.clone();
    for (i, trace) in traces.iter().enumerate().rev() {
        let (gp, gi) = engine.backward(trace, &cot)?;
        grads[i] = gp;
        cot = gi;
    }
    Ok(grads)
}

// ---------------------------------------------------------------------------
// D-NIN-1

/// One hidden block: `dpu_layers[j]` is the shared internal connectivity of
/// output feature map j; `beta[[j, k]]` weights input map k into output map
/// j. Negative weighted sums clamp at zero (buffered intensities are
/// physically non-negative).
#[derive(Clone)]
pub struct DninBlock<R: Real> {
    pub dpu_layers: Vec<PhaseLayer<R>>,
    pub beta: Array2<R>,
}

#[derive(Clone)]
pub struct DninSpec<R: Real> {
    pub blocks: Vec<DninBlock<R>>,
    /// Fuses the last block's maps into the single read-out input.
    pub fusion: Vec<R>,
    pub readout_layer: PhaseLayer<R>,
    /// Optional electronic fully connected tail (D-NIN-1++): classes x (H*W).
    pub electronic_fc: Option<Array2<R>>,
    pub regions: DetectorRegions,
    pub decision_coeffs: Vec<R>,
}

impl<R: Real> DninSpec<R> {
    pub fn validate(&self) -> Result<()> {
        let mut maps_in = 1usize;
        for (i, b) in self.blocks.iter().enumerate() {
            let (jn, kn) = b.beta.dim();
            if jn != b.dpu_layers.len() || kn != maps_in {
                return Err(DpuError::Config(format!(
                    "block {i}: beta {jn}x{kn} does not match {} layers / {} input maps",
                    b.dpu_layers.len(),
                    maps_in
                )));
            }
            maps_in = jn;
        }
        if self.fusion.len() != maps_in {
            return Err(DpuError::Config("fusion weight count must match last block maps".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.regions.len()
    }
}

pub struct DninOutput<R: Real> {
    pub intensity: Array2<R>,
    /// Present when the spec has an electronic fully connected tail.
    pub logits: Option<Array1<R>>,
}

fn clamp0<R: Real>(x: &mut Array2<R>) {
    x.mapv_inplace(|v| v.max(R::zero()));
}

/// Deployed D-NIN forward.
pub fn dnin_forward<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    spec: &DninSpec<R>,
    image: &Array2<R>,
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<DninOutput<R>> {
    spec.validate()?;
    let mut maps = vec![image.clone()];
    for (bi, block) in spec.blocks.iter().enumerate() {
        let mode = layer_mode(engine, bi);
        let mut next = Vec::with_capacity(block.dpu_layers.len());
        for (j, layer) in block.dpu_layers.iter().enumerate() {
            let mut acc: Array2<R> = Array2::zeros(engine.cfg.grid);
            for (k, m) in maps.iter().enumerate() {
                let out = match err {
                    Some(e) => engine.forward_physical(m, layer, mode, e, rng)?,
                    None => engine.forward(m, layer, mode)?,
                };
                acc.scaled_add(block.beta[[j, k]], &out);
            }
            clamp0(&mut acc);
            next.push(acc);
        }
        maps = next;
    }
    let mut fused: Array2<R> = Array2::zeros(engine.cfg.grid);
    for (j, m) in maps.iter().enumerate() {
        fused.scaled_add(spec.fusion[j], m);
    }
    clamp0(&mut fused);
    let intensity = match err {
        Some(e) => {
            engine.forward_physical(&fused, &spec.readout_layer, engine.cfg.hidden_mode, e, rng)?
        }
        None => engine.forward(&fused, &spec.readout_layer, engine.cfg.hidden_mode)?,
    };
    let logits = spec.electronic_fc.as_ref().map(|fc| {
        let flat = Array1::from_iter(intensity.iter().cloned());
        fc.dot(&flat)
    });
    Ok(DninOutput { intensity, logits })
}

/// Saved intermediates of a smooth D-NIN forward.
pub struct DninTrace<R: Real> {
    /// blocks[bi][j][k]: trace of DPU_j applied to input map k.
    pub blocks: Vec<Vec<Vec<DpuTrace<R>>>>,
    /// blocks_out[bi][j][k]: normalized DPU output before weighting.
    pub blocks_out: Vec<Vec<Vec<Array2<R>>>>,
    /// Pre-clamp weighted sums per block and output map.
    pub pre_clamp: Vec<Vec<Array2<R>>>,
    /// Input maps of each block (maps[0] = the image).
    pub maps: Vec<Vec<Array2<R>>>,
    pub fused_pre_clamp: Array2<R>,
    pub fused: Array2<R>,
    pub readout: DpuTrace<R>,
    pub intensity: Array2<R>,
}

/// Smooth traced D-NIN forward for training.
pub fn dnin_forward_traced<R: Real>(
    engine: &DpuEngine<R>,
    spec: &DninSpec<R>,
    image: &Array2<R>,
) -> Result<DninTrace<R>> {
    spec.validate()?;
    let mut maps_hist = vec![vec![image.clone()]];
    let mut blocks = Vec::new();
    let mut blocks_out = Vec::new();
    let mut pre_clamp = Vec::new();
    for (bi, block) in spec.blocks.iter().enumerate() {
        let mode = layer_mode(engine, bi);
        let maps = maps_hist.last().unwrap().clone();
        let mut btr = Vec::new();
        let mut bout = Vec::new();
        let mut bpre = Vec::new();
        let mut next = Vec::new();
        for (j, layer) in block.dpu_layers.iter().enumerate() {
            let mut jtr = Vec::new();
            let mut jout = Vec::new();
            let mut acc: Array2<R> = Array2::zeros(engine.cfg.grid);
            for (k, m) in maps.iter().enumerate() {
                let (t, out) = engine.forward_traced(m, layer, mode)?;
                acc.scaled_add(block.beta[[j, k]], &out);
                jtr.push(t);
                jout.push(out);
            }
            bpre.push(acc.clone());
            clamp0(&mut acc);
            next.push(acc);
            btr.push(jtr);
            bout.push(jout);
        }
        blocks.push(btr);
        blocks_out.push(bout);
        pre_clamp.push(bpre);
        maps_hist.push(next);
    }
    let last = maps_hist.last().unwrap();
    let mut fused_pre: Array2<R> = Array2::zeros(engine.cfg.grid);
    for (j, m) in last.iter().enumerate() {
        fused_pre.scaled_add(spec.fusion[j], m);
    }
    let mut fused = fused_pre.clone();
    clamp0(&mut fused);
    let (readout, intensity) =
        engine.forward_traced(&fused, &spec.readout_layer, engine.cfg.hidden_mode)?;
    Ok(DninTrace {
        blocks,
        blocks_out,
        pre_clamp,
        maps: maps_hist,
        fused_pre_clamp: fused_pre,
        fused,
        readout,
        intensity,
    })
}

/// Gradients of a traced D-NIN forward.
pub struct DninGrads<R: Real> {
    /// Per block, per output map: raw phase gradients.
    pub layer_grads: Vec<Vec<Array2<R>>>,
    /// Per block: gradient of beta.
    pub beta_grads: Vec<Array2<R>>,
    pub fusion_grads: Vec<R>,
    pub readout_grad: Array2<R>,
}

/// Reverse pass from a cotangent on the read-out intensity.
pub fn dnin_backward<R: Real>(
    engine: &DpuEngine<R>,
    spec: &DninSpec<R>,
    trace: &DninTrace<R>,
    cot_intensity: &Array2<R>,
) -> Result<DninGrads<R>> {
    let (readout_grad, cot_fused) = engine.backward(&trace.readout, cot_intensity)?;
    // Clamp subgradient: zero where the pre-clamp sum was negative.
    let mut cot_fused = cot_fused;
    ndarray::Zip::from(&mut cot_fused).and(&trace.fused_pre_clamp).for_each(|c, &p| {
        if p < R::zero() {
            *c = R::zero();
        }
    });
    let last_maps = trace.maps.last().unwrap();
    let fusion_grads: Vec<R> = last_maps
        .iter()
        .map(|m| m.iter().zip(cot_fused.iter()).map(|(&a, &b)| a * b).sum())
        .collect();
    // Cotangent on each map of the last block.
    let mut cot_maps: Vec<Array2<R>> =
        spec.fusion.iter().map(|&w| cot_fused.mapv(|v| v * w)).collect();

    let nb = spec.blocks.len();
    let mut layer_grads: Vec<Vec<Array2<R>>> = Vec::with_capacity(nb);
    let mut beta_grads: Vec<Array2<R>> = Vec::with_capacity(nb);
    for _ in 0..nb {
        layer_grads.push(Vec::new());
        beta_grads.push(Array2::zeros((0, 0)));
    }
    for bi in (0..nb).rev() {
        let block = &spec.blocks[bi];
        let maps_in = trace.maps[bi].clone();
        let mut grads_j = vec![Array2::zeros(engine.cfg.grid); block.dpu_layers.len()];
        let mut gbeta = Array2::zeros(block.beta.dim());
        let mut cot_in: Vec<Array2<R>> = maps_in.iter().map(|m| Array2::zeros(m.dim())).collect();
        for j in 0..block.dpu_layers.len() {
            // clamp subgradient on this output map
            let mut cot_j = cot_maps[j].clone();
            ndarray::Zip::from(&mut cot_j).and(&trace.pre_clamp[bi][j]).for_each(|c, &p| {
                if p < R::zero() {
                    *c = R::zero();
                }
            });
            for k in 0..maps_in.len() {
                let out = &trace.blocks_out[bi][j][k];
                gbeta[[j, k]] = out.iter().zip(cot_j.iter()).map(|(&a, &b)| a * b).sum();
                let cot_out = cot_j.mapv(|v| v * block.beta[[j, k]]);
                let (gp, gi) = engine.backward(&trace.blocks[bi][j][k], &cot_out)?;
                grads_j[j] = &grads_j[j] + &gp;
                cot_in[k] = &cot_in[k] + &gi;
            }
        }
        layer_grads[bi] = grads_j;
        beta_grads[bi] = gbeta;
        cot_maps = cot_in;
    }
    Ok(DninGrads { layer_grads, beta_grads, fusion_grads, readout_grad })
}

// ---------------------------------------------------------------------------
// D-RNN

#[derive(Clone)]
pub enum DrnnReadout<R: Real> {
    /// DPU read-out layer over detector regions.
    Dpu { layer: PhaseLayer<R> },
    /// Electronic ridge read-out over the average-pooled last hidden state.
    Electronic { pooled_nodes: usize, weights: Array2<R> },
}

#[derive(Clone)]
pub struct DrnnSpec<R: Real> {
    /// f1: memory mapping of the previous hidden state.
    pub memory_layer: PhaseLayer<R>,
    /// f2: read-in mapping of the current frame.
    pub readin_layer: PhaseLayer<R>,
    /// lambda in (0,1).
    pub fusing_lambda: R,
    pub seq_len: usize,
    pub readout: DrnnReadout<R>,
    pub regions: DetectorRegions,
    pub decision_coeffs: Vec<R>,
}

impl<R: Real> DrnnSpec<R> {
    pub fn validate(&self) -> Result<()> {
        if self.fusing_lambda < R::zero() || self.fusing_lambda >= R::one() {
            return Err(DpuError::Config("fusing lambda must lie in [0,1)".into()));
        }
        if self.seq_len < 1 {
            return Err(DpuError::Config("sequence length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.regions.len()
    }
}

/// One recurrence step on the deployed system:
/// h_t = lambda * f1(h_{t-1}) + (1 - lambda) * f2(x_t), fused on unquantized
/// normalized intensities, then measurement-quantized.
pub fn drnn_step<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    spec: &DrnnSpec<R>,
    h_prev: &Array2<R>,
    x_t: &Array2<R>,
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<Array2<R>> {
    let lambda = spec.fusing_lambda;
    let mode = engine.cfg.hidden_mode;
    let (m_t, i_t) = match err {
        Some(e) => (
            engine.forward_physical_unquantized(h_prev, &spec.memory_layer, mode, e, rng)?,
            engine.forward_physical_unquantized(x_t, &spec.readin_layer, mode, e, rng)?,
        ),
        None => (
            engine.forward_unquantized(h_prev, &spec.memory_layer, mode)?,
            engine.forward_unquantized(x_t, &spec.readin_layer, mode)?,
        ),
    };
    let mut h = Array2::zeros(engine.cfg.grid);
    ndarray::Zip::from(&mut h).and(&m_t).and(&i_t).for_each(|o, &m, &i| {
        *o = lambda * m + (R::one() - lambda) * i;
    });
    Ok(engine.cfg.measure_quantizer.apply_map(&h))
}

pub enum DrnnOutput<R: Real> {
    /// Final read-out intensity plus region energies.
    Dpu { intensity: Array2<R>, energies: Vec<R> },
    /// Electronic read-out scores.
    Electronic { scores: Array1<R> },
}

impl<R: Real> DrnnOutput<R> {
    pub fn predict(&self, decision_coeffs: &[R]) -> Result<usize> {
        match self {
            DrnnOutput::Dpu { energies, .. } => classify(energies, decision_coeffs),
            DrnnOutput::Electronic { scores } => {
                if scores.is_empty() {
                    return Err(DpuError::Usage("empty score vector".into()));
                }
                let mut best = 0;
                for (i, &v) in scores.iter().enumerate() {
                    if v > scores[best] {
                        best = i;
                    }
                }
                Ok(best)
            }
        }
    }
}

/// Deployed rollout from h_0 = 0 over exactly spec.seq_len frames.
pub fn drnn_forward<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    spec: &DrnnSpec<R>,
    frames: &[Array2<R>],
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<DrnnOutput<R>> {
    spec.validate()?;
    if frames.len() != spec.seq_len {
        return Err(DpuError::Usage(format!(
            "expected {} frames, got {}",
            spec.seq_len,
            frames.len()
        )));
    }
    let mut h = Array2::zeros(engine.cfg.grid);
    for x in frames {
        h = drnn_step(engine, spec, &h, x, err, rng)?;
    }
    drnn_readout(engine, spec, &h, err, rng)
}

/// Read out a final hidden state.
pub fn drnn_readout<R: Real, G: Rng>(
    engine: &DpuEngine<R>,
    spec: &DrnnSpec<R>,
    h_last: &Array2<R>,
    err: Option<&ErrorModel>,
    rng: &mut G,
) -> Result<DrnnOutput<R>> {
    match &spec.readout {
        DrnnReadout::Dpu { layer } => {
            let intensity = match err {
                Some(e) => {
                    engine.forward_physical(h_last, layer, engine.cfg.hidden_mode, e, rng)?
                }
                None => engine.forward(h_last, layer, engine.cfg.hidden_mode)?,
            };
            let (energies, _) = region_energies(&intensity, &spec.regions);
            Ok(DrnnOutput::Dpu { intensity, energies })
        }
        DrnnReadout::Electronic { pooled_nodes, weights } => {
            let pooled = average_pool(h_last, *pooled_nodes)?;
            Ok(DrnnOutput::Electronic { scores: pooled.dot(weights) })
        }
    }
}

/// Saved intermediates of a smooth rollout step.
pub struct DrnnStepTrace<R: Real> {
    pub memory: DpuTrace<R>,
    pub readin: DpuTrace<R>,
    /// h_t before quantization (training path keeps it unquantized).
    pub h: Array2<R>,
}

/// Smooth traced rollout for BPTT; returns step traces and h_N.
pub fn drnn_rollout_traced<R: Real>(
    engine: &DpuEngine<R>,
    spec: &DrnnSpec<R>,
    frames: &[Array2<R>],
) -> Result<(Vec<DrnnStepTrace<R>>, Array2<R>)> {
    spec.validate()?;
    if frames.len() != spec.seq_len {
        return Err(DpuError::Usage(format!(
            "expected {} frames, got {}",
            spec.seq_len,
            frames.len()
        )));
    }
    let lambda = spec.fusing_lambda;
    let mode = engine.cfg.hidden_mode;
    let mut h: Array2<R> = Array2::zeros(engine.cfg.grid);
    let mut steps = Vec::with_capacity(frames.len());
    for x in frames {
        let (tm, m_t) = engine.forward_traced(&h, &spec.memory_layer, mode)?;
        let (ti, i_t) = engine.forward_traced(x, &spec.readin_layer, mode)?;
        let mut hn = Array2::zeros(engine.cfg.grid);
        ndarray::Zip::from(&mut hn).and(&m_t).and(&i_t).for_each(|o, &m, &i| {
            *o = lambda * m + (R::one() - lambda) * i;
        });
        h = hn.clone();
        steps.push(DrnnStepTrace { memory: tm, readin: ti, h: hn });
    }
    Ok((steps, h))
}

/// BPTT over a traced rollout given the cotangent on h_N. Returns
/// (grad memory layer, grad readin layer).
pub fn drnn_backward<R: Real>(
    engine: &DpuEngine<R>,
    spec: &DrnnSpec<R>,
    steps: &[DrnnStepTrace<R>],
    cot_h_last: &Array2<R>,
) -> Result<(Array2<R>, Array2<R>)> {
    let lambda = spec.fusing_lambda;
    let mut g_mem: Array2<R> = Array2::zeros(engine.cfg.grid);
    let mut g_read: Array2<R> = Array2::zeros(engine.cfg.grid);
    let mut cot_h = cot_h_last.clone();
    for step in steps.iter().rev() {
        let cot_m = cot_h.mapv(|v| v * lambda);
        let cot_i = cot_h.mapv(|v| v * (R::one() - lambda));
        let (gm, gh_prev) = engine.backward(&step.memory, &cot_m)?;
        let (gr, _gx) = engine.backward(&step.readin, &cot_i)?;
        g_mem = &g_mem + &gm;
        g_read = &g_read + &gr;
        cot_h = gh_prev;
    }
    Ok((g_mem, g_read))
}

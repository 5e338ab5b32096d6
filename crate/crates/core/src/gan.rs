//! Losses and training procedures: baseline L1 U-Net training and the
//! three-phase WGAN-GP schedule (baseline, critic pretrain, joint).
//!
//! Reproducibility contract: every stochastic consumer owns a named ChaCha
//! stream derived from the run seed — 0 generator init, 1 critic init,
//! 2 generator batch sampler, 3 critic batch sampler, 4 validation patches,
//! 5 penalty interpolation. The generator's training trajectory therefore
//! depends only on streams 0/2 (and the loss graph), which is what makes a
//! `lambda_adv = 0` joint phase bit-identical to continued baseline training.
//!
//! Losses operate in surrogate space (inputs are scaled phase, targets are
//! tanh-surrogate susceptibility); the L1 terms use mean reduction so the
//! loss weights stay meaningful across patch sizes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{BnMode, NodeId, Tape};
use crate::nn::tensor::{Shape5, Tensor};
use crate::nn::{Adam, AdamConfig, Critic, CriticSpec, Generator, GeneratorSpec};
use crate::patching::{candidate_centers, extract_padded, split_by_mask, CenterPools, PatchGeometry, SamplerConfig};
use crate::phantom::Sample;
use crate::scalar::Real;
use crate::transform::{scale_phase, to_surrogate, TransformConfig};
use crate::volume::Volume;

/// Where the gradient penalty is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    /// At generated samples G(y) — the literal objective.
    #[default]
    AtGenerated,
    /// At ε·x + (1−ε)·G(y), ε ~ U(0,1) per sample — the cited WGAN-GP
    /// construction.
    AtInterpolates,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub lambda_gp: f64,
    pub lambda_c: f64,
    pub lambda_adv: f64,
    pub n_critic: usize,
    /// Learning rate for the standalone baseline phase.
    pub lr_baseline: f64,
    /// Learning rate for critic pretraining and the joint phase (G and D).
    pub lr_joint: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iters_baseline: usize,
    pub iters_critic_pretrain: usize,
    pub iters_joint: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gp_mode: GpMode,
    /// Validation cadence in iterations.
    pub val_every: usize,
    /// Number of fixed validation patches drawn up front.
    pub val_patches: usize,
    pub sampler: SamplerConfig,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lambda_gp: 100.0,
            lambda_c: 1.0,
            lambda_adv: 0.01,
            n_critic: 5,
            lr_baseline: 1e-4,
            lr_joint: 1e-5,
            beta1: 0.5,
            beta2: 0.999,
            iters_baseline: 40_000,
            iters_critic_pretrain: 20_000,
            iters_joint: 40_000,
            batch_size: 16,
            seed: 0,
            gp_mode: GpMode::AtGenerated,
            val_every: 200,
            val_patches: 16,
            sampler: SamplerConfig::default(),
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_gp", self.lambda_gp),
            ("lambda_c", self.lambda_c),
            ("lr_baseline", self.lr_baseline),
            ("lr_joint", self.lr_joint),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.lambda_adv < 0.0 || !self.lambda_adv.is_finite() {
            return Err(Error::invalid(format!(
                "lambda_adv must be finite and >= 0, got {}",
                self.lambda_adv
            )));
        }
        if self.n_critic < 1 {
            return Err(Error::invalid("n_critic must be >= 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive".to_string()));
        }
        if self.val_every == 0 {
            return Err(Error::invalid("val_every must be positive".to_string()));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.beta1, beta2: self.beta2, eps: 1e-8 }
    }
}

/// One subject prepared for patch sampling: scaled phase input, surrogate
/// susceptibility target, and its candidate center pools.
pub struct SubjectPatches<T> {
    pub input: Volume<T>,
    pub target: Volume<T>,
    pub pools: CenterPools,
}

pub struct TrainingSet<T> {
    pub geom: PatchGeometry,
    pub subjects: Vec<SubjectPatches<T>>,
}

/// Transforms raw (χ, field, mask) subjects into sampler-ready form:
/// input = phase × scale, target = tanh surrogate of χ, centers split by
/// the mask at the patch center voxel.
pub fn prepare_training_set<T: Real>(
    samples: &[Sample<f64>],
    geom: PatchGeometry,
    sampler: &SamplerConfig,
    tcfg: &TransformConfig,
) -> Result<TrainingSet<T>> {
    if samples.is_empty() {
        return Err(Error::invalid("training set needs at least one subject".to_string()));
    }
    geom.validate()?;
    let mut subjects = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        s.chi.same_grid(&s.field)?;
        s.chi.same_grid(&s.mask)?;
        let centers = candidate_centers(s.chi.dims(), &geom, sampler.grid_gap)
            .map_err(|e| Error::invalid(format!("subject {i}: {e}")))?;
        let pools = split_by_mask(&centers, &s.mask);
        subjects.push(SubjectPatches {
            input: scale_phase(&s.field, tcfg).cast::<T>(),
            target: to_surrogate(&s.chi, tcfg).cast::<T>(),
            pools,
        });
    }
    Ok(TrainingSet { geom, subjects })
}

fn batch_tensor<T: Real>(patches: Vec<Vec<T>>, size: usize) -> Tensor<T> {
    let b = patches.len();
    let mut data = Vec::with_capacity(b * size * size * size);
    for p in patches {
        data.extend(p);
    }
    Tensor::from_vec(Shape5::new(b, 1, size, size, size), data).expect("patch sizes are uniform")
}

/// Draws one (inputs, targets) batch. RNG order per sample: subject index,
/// then the center draw — fixed so trajectories are seed-reproducible.
pub fn draw_batch<T: Real>(
    set: &TrainingSet<T>,
    batch: usize,
    brain_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Tensor<T>) {
    let mut ins = Vec::with_capacity(batch);
    let mut tgts = Vec::with_capacity(batch);
    for _ in 0..batch {
        let s = &set.subjects[rng.random_range(0..set.subjects.len())];
        let c = s.pools.draw(brain_fraction, rng);
        ins.push(extract_padded(&s.input, c, set.geom.input_size));
        tgts.push(extract_padded(&s.target, c, set.geom.output_size));
    }
    (batch_tensor(ins, set.geom.input_size), batch_tensor(tgts, set.geom.output_size))
}

/// Fixed validation patches, drawn once from stream 4 of the run seed.
pub struct ValData<T> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
}

pub fn build_val_data<T: Real>(set: &TrainingSet<T>, cfg: &GanConfig) -> Option<ValData<T>> {
    if cfg.val_patches == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(4);
    let (inputs, targets) = draw_batch(set, cfg.val_patches, cfg.sampler.brain_fraction, &mut rng);
    Some(ValData { inputs, targets })
}

/// Mean absolute error of the generator over the validation patches,
/// evaluated in eval mode, chunked to bound memory. Exact (sums, then one
/// division), so chunking cannot change the value.
pub fn validation_l1<T: Real>(gen: &Generator<T>, val: &ValData<T>, chunk: usize) -> Result<f64> {
    let n = val.inputs.shape().b;
    let in_len = val.inputs.shape().spatial_len();
    let out_len = val.targets.shape().spatial_len();
    let size = val.inputs.shape().nx;
    let mut abs_sum = 0.0f64;
    let mut count = 0usize;
    let mut at = 0;
    while at < n {
        let take = chunk.min(n - at);
        let mut data = Vec::with_capacity(take * in_len);
        data.extend_from_slice(&val.inputs.data()[at * in_len..(at + take) * in_len]);
        let x = Tensor::from_vec(Shape5::new(take, 1, size, size, size), data)?;
        let y = gen.infer(&x)?;
        let t = &val.targets.data()[at * out_len..(at + take) * out_len];
        for (p, q) in y.data().iter().zip(t) {
            abs_sum += (p.tof() - q.tof()).abs();
            count += 1;
        }
        at += take;
    }
    Ok(abs_sum / count as f64)
}

// ---------------------------------------------------------------------------
// Standalone losses (reporting/tests; the trainers build these as tape ops).
// ---------------------------------------------------------------------------

/// Mean absolute difference over all elements.
pub fn l1_content_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!("l1: {} vs {}", pred.shape(), target.shape())));
    }
    let n = pred.shape().len();
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p.tof() - t.tof()).abs()).sum();
    Ok(sum / n as f64)
}

/// mean(d_fake) − mean(d_real); the critic minimizes this.
pub fn critic_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    if d_real.shape().b != d_fake.shape().b {
        return Err(Error::ShapeMismatch(format!(
            "critic_loss: batch {} vs {}",
            d_real.shape().b,
            d_fake.shape().b
        )));
    }
    let mean = |t: &Tensor<T>| t.data().iter().map(|v| v.tof()).sum::<f64>() / t.shape().len() as f64;
    Ok(mean(d_fake) - mean(d_real))
}

/// λc·L1 + λadv·(−mean(d_fake_scores)).
pub fn generator_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    d_fake: &Tensor<T>,
    cfg: &GanConfig,
) -> Result<f64> {
    let l1 = l1_content_loss(pred, target)?;
    let mean = d_fake.data().iter().map(|v| v.tof()).sum::<f64>() / d_fake.shape().len() as f64;
    Ok(cfg.lambda_c * l1 - cfg.lambda_adv * mean)
}

/// Points the penalty is evaluated at, per `gp_mode`. Interpolation draws
/// one ε per batch sample from `rng`.
pub fn penalty_points<T: Real>(
    mode: GpMode,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(Error::ShapeMismatch(format!(
            "penalty_points: {} vs {}",
            real.shape(),
            fake.shape()
        )));
    }
    match mode {
        GpMode::AtGenerated => Ok(fake.clone()),
        GpMode::AtInterpolates => {
            let s = real.shape();
            let per = s.len() / s.b;
            let mut out = fake.clone();
            for b in 0..s.b {
                let eps = T::fromf(rng.random_range(0.0..1.0));
                let one_m = T::one() - eps;
                for i in b * per..(b + 1) * per {
                    out.data_mut()[i] = eps * real.data()[i] + one_m * fake.data()[i];
                }
            }
            Ok(out)
        }
    }
}

/// λgp · mean over batch of (‖∇_x D(x)‖₂ − 1)², evaluated at `samples`.
pub fn gradient_penalty<T: Real>(critic: &Critic<T>, samples: &Tensor<T>, lambda_gp: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(samples.clone(), false);
    let fwd = critic.forward(&mut tape, x, false)?;
    let g = critic.input_gradient(&mut tape, &fwd)?;
    let s = tape.sq_norm_per_sample(g);
    let gp = tape.gp_from_sq_norms(s, T::fromf(lambda_gp));
    Ok(tape.value(gp).item().tof())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct HistoryRow {
    pub phase: &'static str,
    pub iteration: usize,
    pub g_l1: Option<f64>,
    pub g_adv: Option<f64>,
    pub critic_loss: Option<f64>,
    pub gp: Option<f64>,
    pub val_l1: Option<f64>,
}

pub struct TrainOutcome<T> {
    /// Parameters after the last iteration.
    pub model: Generator<T>,
    /// Snapshot at the best validation L1 (== final model if no val data).
    pub best: Generator<T>,
    pub best_val_l1: f64,
    pub critic: Option<Critic<T>>,
    pub history: Vec<HistoryRow>,
}

/// Builds the generator's training-step graph. The same function serves the
/// baseline trainer and the joint phase so that `lambda_adv = 0` produces a
/// graph identical to the baseline's, node for node.
fn generator_step_graph<T: Real>(
    tape: &mut Tape<T>,
    gen: &Generator<T>,
    critic: Option<&Critic<T>>,
    x: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &GanConfig,
) -> Result<(NodeId, crate::nn::GenForward<T>, NodeId, Option<NodeId>)> {
    let xid = tape.leaf(x.clone(), false);
    let tid = tape.leaf(target.clone(), false);
    let fwd = gen.forward(tape, xid, BnMode::Train, true)?;
    let l1 = tape.l1_mean(fwd.out, tid)?;
    let lc = T::fromf(cfg.lambda_c);
    // Baseline steps pass no critic: pure content loss by definition. In
    // the joint phase the adversarial term only exists for lambda_adv != 0,
    // so that a zero weight yields the baseline's graph node for node.
    match critic {
        Some(critic) if cfg.lambda_adv != 0.0 => {
            let cfwd = critic.forward(tape, fwd.out, true)?;
            let ms = tape.mean_all(cfwd.scores);
            let content = tape.scale(l1, lc);
            let adv = tape.scale(ms, T::fromf(-cfg.lambda_adv));
            let loss = tape.add(content, adv)?;
            Ok((loss, fwd, l1, Some(ms)))
        }
        _ if cfg.lambda_c != 1.0 => {
            let loss = tape.scale(l1, lc);
            Ok((loss, fwd, l1, None))
        }
        _ => Ok((l1, fwd, l1, None)),
    }
}

fn check_finite<T: Real>(v: T, what: &str, step: usize) -> Result<f64> {
    let f = v.tof();
    if !f.is_finite() {
        return Err(Error::NonFinite { what: what.to_string(), step });
    }
    Ok(f)
}

/// One generator update: draw from `rng_g`, build the step graph, fold BN
/// batch stats, apply Adam. Returns (train L1, adversarial mean score).
#[allow(clippy::too_many_arguments)]
fn generator_step<T: Real>(
    gen: &mut Generator<T>,
    critic: Option<&Critic<T>>,
    opt: &mut Adam<T>,
    set: &TrainingSet<T>,
    cfg: &GanConfig,
    rng_g: &mut ChaCha8Rng,
    what: &str,
    step: usize,
) -> Result<(f64, Option<f64>)> {
    let (x, t) = draw_batch(set, cfg.batch_size, cfg.sampler.brain_fraction, rng_g);
    let mut tape = Tape::new();
    let (loss, fwd, l1, ms) = generator_step_graph(&mut tape, gen, critic, &x, &t, cfg)?;
    let l1_val = check_finite(tape.value(l1).item(), what, step)?;
    let ms_val = ms.map(|m| tape.value(m).item().tof());
    check_finite(tape.value(loss).item(), what, step)?;
    let batch_count = cfg.batch_size * set.geom.input_size.pow(3);
    gen.apply_bn_updates(&fwd.bn_batch, batch_count);
    let grads = tape.backward(loss)?;
    let mut in_order = Vec::with_capacity(fwd.param_nodes.len());
    for id in &fwd.param_nodes {
        in_order.push(grads[id.0].clone());
    }
    opt.step(&mut gen.params, &in_order)?;
    Ok((l1_val, ms_val))
}

/// One critic update on real targets vs. frozen-generator fakes plus the
/// gradient penalty. Returns (Wasserstein estimate, penalty value).
#[allow(clippy::too_many_arguments)]
fn critic_step<T: Real>(
    critic: &mut Critic<T>,
    gen: &Generator<T>,
    opt: &mut Adam<T>,
    set: &TrainingSet<T>,
    cfg: &GanConfig,
    rng_d: &mut ChaCha8Rng,
    rng_eps: &mut ChaCha8Rng,
    step: usize,
) -> Result<(f64, f64)> {
    let (x, real) = draw_batch(set, cfg.batch_size, cfg.sampler.brain_fraction, rng_d);
    // Fakes come from the generator in eval mode on a private tape: no BN
    // running-stat writes, no gradient path into G.
    let fake = gen.infer(&x)?;
    let pts = penalty_points(cfg.gp_mode, &real, &fake, rng_eps)?;

    let mut tape = Tape::new();
    let leaves = critic.param_leaves(&mut tape, true);
    let rid = tape.leaf(real, false);
    let fid = tape.leaf(fake, false);
    let pid = tape.leaf(pts, false);
    let (d_real, _) = critic.forward_from_leaves(&mut tape, rid, &leaves)?;
    let (d_fake, _) = critic.forward_from_leaves(&mut tape, fid, &leaves)?;
    let (_, preacts) = critic.forward_from_leaves(&mut tape, pid, &leaves)?;
    let grad = critic.input_gradient_from(&mut tape, &leaves, &preacts, cfg.batch_size)?;
    let sq = tape.sq_norm_per_sample(grad);
    let gp = tape.gp_from_sq_norms(sq, T::fromf(cfg.lambda_gp));
    let mr = tape.mean_all(d_real);
    let mf = tape.mean_all(d_fake);
    let neg = tape.scale(mr, -T::one());
    let w = tape.add(mf, neg)?;
    let total = tape.add(w, gp)?;

    let w_val = check_finite(tape.value(w).item(), "critic loss", step)?;
    let gp_val = check_finite(tape.value(gp).item(), "gradient penalty", step)?;
    let grads = tape.backward(total)?;
    let mut in_order = Vec::with_capacity(leaves.len());
    for id in &leaves {
        in_order.push(grads[id.0].clone());
    }
    opt.step(&mut critic.params, &in_order)?;
    Ok((w_val, gp_val))
}

struct BestTracker<T> {
    best: Generator<T>,
    best_val: f64,
}

impl<T: Real> BestTracker<T> {
    /// Best-so-far over the *recorded* validation evaluations; the initial
    /// model is only a fallback snapshot in case nothing gets recorded.
    fn new(gen: &Generator<T>) -> Self {
        BestTracker { best: gen.clone(), best_val: f64::INFINITY }
    }

    fn observe(&mut self, gen: &Generator<T>, val_l1: f64) {
        if val_l1 < self.best_val {
            self.best_val = val_l1;
            self.best = gen.clone();
        }
    }
}

/// Baseline training: L1 only. `init` continues from an existing model
/// (fresh optimizer state); otherwise stream 0 initializes one.
pub fn train_baseline<T: Real>(
    train: &TrainingSet<T>,
    val: Option<&ValData<T>>,
    spec: GeneratorSpec,
    cfg: &GanConfig,
    init: Option<Generator<T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut gen = match init {
        Some(g) => g,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(0);
            Generator::init(spec, train.geom, &mut rng)?
        }
    };
    let mut rng_g = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_g.set_stream(2);
    let mut opt = Adam::new(cfg.adam(cfg.lr_baseline), &gen.params);
    let mut tracker = BestTracker::new(&gen);
    let mut history = Vec::new();

    for it in 0..cfg.iters_baseline {
        let (l1, _) =
            generator_step(&mut gen, None, &mut opt, train, cfg, &mut rng_g, "baseline generator loss", it)?;
        let at_cadence = (it + 1).is_multiple_of(cfg.val_every) || it + 1 == cfg.iters_baseline;
        let val_l1 = match (at_cadence, val) {
            (true, Some(v)) => {
                let vl = validation_l1(&gen, v, cfg.batch_size)?;
                check_finite(T::fromf(vl), "baseline validation loss", it)?;
                tracker.observe(&gen, vl);
                Some(vl)
            }
            _ => None,
        };
        history.push(HistoryRow {
            phase: "baseline",
            iteration: it + 1,
            g_l1: Some(l1),
            g_adv: None,
            critic_loss: None,
            gp: None,
            val_l1,
        });
    }
    let (best, best_val_l1) = if val.is_some() && cfg.iters_baseline > 0 {
        (tracker.best, tracker.best_val)
    } else {
        (gen.clone(), tracker.best_val)
    };
    Ok(TrainOutcome { model: gen, best, best_val_l1, critic: None, history })
}

/// Phases two and three: critic pretraining with a frozen generator, then
/// alternating updates (`n_critic` critic steps per generator step).
pub fn train_gan<T: Real>(
    train: &TrainingSet<T>,
    val: Option<&ValData<T>>,
    gen_spec: GeneratorSpec,
    critic_spec: CriticSpec,
    cfg: &GanConfig,
    init: Option<Generator<T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if critic_spec.input_size != train.geom.output_size {
        return Err(Error::invalid(format!(
            "critic input size {} must equal the patch output size {}",
            critic_spec.input_size, train.geom.output_size
        )));
    }
    let mut gen = match init {
        Some(g) => g,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(0);
            Generator::init(gen_spec, train.geom, &mut rng)?
        }
    };
    let mut critic: Critic<T> = {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Critic::init(critic_spec, &mut rng)?
    };
    let mut rng_g = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_g.set_stream(2);
    let mut rng_d = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_d.set_stream(3);
    let mut rng_eps = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_eps.set_stream(5);

    let mut opt_g = Adam::new(cfg.adam(cfg.lr_joint), &gen.params);
    let mut opt_d = Adam::new(cfg.adam(cfg.lr_joint), &critic.params);
    let mut tracker = BestTracker::new(&gen);
    let mut history = Vec::new();

    // Phase A: frozen generator, critic only.
    for it in 0..cfg.iters_critic_pretrain {
        let (w, gp) =
            critic_step(&mut critic, &gen, &mut opt_d, train, cfg, &mut rng_d, &mut rng_eps, it)?;
        history.push(HistoryRow {
            phase: "critic",
            iteration: it + 1,
            g_l1: None,
            g_adv: None,
            critic_loss: Some(w),
            gp: Some(gp),
            val_l1: None,
        });
    }

    // Phase B: alternating. One iteration = n_critic critic steps + 1 G step.
    for it in 0..cfg.iters_joint {
        let mut last = (0.0, 0.0);
        for _ in 0..cfg.n_critic {
            last = critic_step(&mut critic, &gen, &mut opt_d, train, cfg, &mut rng_d, &mut rng_eps, it)?;
        }
        let (l1, ms) = generator_step(
            &mut gen,
            Some(&critic),
            &mut opt_g,
            train,
            cfg,
            &mut rng_g,
            "joint generator loss",
            it,
        )?;
        let at_cadence = (it + 1).is_multiple_of(cfg.val_every) || it + 1 == cfg.iters_joint;
        let val_l1 = match (at_cadence, val) {
            (true, Some(v)) => {
                let vl = validation_l1(&gen, v, cfg.batch_size)?;
                check_finite(T::fromf(vl), "joint validation loss", it)?;
                tracker.observe(&gen, vl);
                Some(vl)
            }
            _ => None,
        };
        history.push(HistoryRow {
            phase: "joint",
            iteration: it + 1,
            g_l1: Some(l1),
            g_adv: ms,
            critic_loss: Some(last.0),
            gp: Some(last.1),
            val_l1,
        });
    }

    let (best, best_val_l1) = if val.is_some() && cfg.iters_joint > 0 {
        (tracker.best, tracker.best_val)
    } else {
        (gen.clone(), tracker.best_val)
    };
    Ok(TrainOutcome { model: gen, best, best_val_l1, critic: Some(critic), history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape5::new(vals.len(), 1, 1, 1, 1), vals.to_vec()).unwrap()
    }

    #[test]
    fn l1_loss_reference_values_and_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let a: Tensor<f64> = Tensor::from_vec(
            Shape5::new(2, 1, 3, 1, 1),
            (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        assert_eq!(l1_content_loss(&a, &a).unwrap(), 0.0);

        let mut b = a.clone();
        for v in b.data_mut() {
            *v += 0.5;
        }
        assert!((l1_content_loss(&a, &b).unwrap() - 0.5).abs() < 1e-15);

        let c = Tensor::from_vec(
            Shape5::new(2, 1, 3, 1, 1),
            (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let naive: f64 =
            a.data().iter().zip(c.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 6.0;
        assert!((l1_content_loss(&a, &c).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn critic_loss_reference_values() {
        let r = scores(&[1.0, 1.0]);
        let f = scores(&[0.0, 0.0]);
        assert_eq!(critic_loss(&r, &r).unwrap(), 0.0);
        assert!((critic_loss(&r, &f).unwrap() + 1.0).abs() < 1e-15);

        // Translation invariance.
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
        let base = critic_loss(&scores(&a), &scores(&b)).unwrap();
        let shift: Vec<f64> = a.iter().map(|v| v + 7.3).collect();
        let shift_b: Vec<f64> = b.iter().map(|v| v + 7.3).collect();
        let moved = critic_loss(&scores(&shift), &scores(&shift_b)).unwrap();
        assert!((base - moved).abs() < 1e-12);

        // Hand computation of a random pair.
        let naive = b.iter().sum::<f64>() / 5.0 - a.iter().sum::<f64>() / 5.0;
        assert!((base - naive).abs() < 1e-15);
    }

    #[test]
    fn generator_loss_arithmetic() {
        let cfg = GanConfig { lambda_c: 1.0, lambda_adv: 0.01, ..GanConfig::default() };
        let t = Tensor::from_vec(Shape5::new(1, 1, 2, 1, 1), vec![0.0, 0.0]).unwrap();
        let p = Tensor::from_vec(Shape5::new(1, 1, 2, 1, 1), vec![0.2, 0.2]).unwrap();
        let d = scores(&[3.0]);
        // L1 = 0.2, mean score 3 → 0.2 − 0.03.
        assert!((generator_loss(&p, &t, &d, &cfg).unwrap() - 0.17).abs() < 1e-15);
        // λadv = 0 reduces to λc·L1.
        let cfg0 = GanConfig { lambda_adv: 0.0, ..cfg };
        assert!((generator_loss(&p, &t, &d, &cfg0).unwrap() - 0.2).abs() < 1e-15);
        // pred == target, score 0 → 0.
        assert_eq!(generator_loss(&t, &t, &scores(&[0.0]), &cfg).unwrap(), 0.0);
    }

    /// A blockless critic is one valid conv: a pure linear functional whose
    /// input gradient IS its weight tensor, so the penalty is exactly
    /// computable.
    fn linear_critic(input: usize, w0: f64) -> Critic<f64> {
        let spec = CriticSpec { blocks: 0, base_channels: 1, input_size: input, ..CriticSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c: Critic<f64> = Critic::init(spec, &mut rng).unwrap();
        for p in &mut c.params {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
        // One-hot weight: gradient norm is exactly |w0|.
        c.params[0].value.data_mut()[0] = w0;
        c
    }

    #[test]
    fn gradient_penalty_exact_on_linear_critics() {
        let x = Tensor::filled(Shape5::new(3, 1, 4, 4, 4), 0.25);
        // Unit-norm weight → ‖∇‖ = 1 → penalty exactly 0.
        let unit = linear_critic(4, 1.0);
        assert_eq!(gradient_penalty(&unit, &x, 100.0).unwrap(), 0.0);
        // Doubled weight → (2−1)² → exactly λgp.
        let doubled = linear_critic(4, 2.0);
        assert_eq!(gradient_penalty(&doubled, &x, 100.0).unwrap(), 100.0);
    }

    #[test]
    fn gradient_penalty_batch_permutation_invariant() {
        let spec = CriticSpec { blocks: 2, base_channels: 2, input_size: 8, ..CriticSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let critic: Critic<f64> = Critic::init(spec, &mut rng).unwrap();
        let mut x = Tensor::zeros(Shape5::new(3, 1, 8, 8, 8));
        for v in x.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let per = x.shape().spatial_len();
        let mut swapped = x.clone();
        // Swap samples 0 and 2.
        let (a, rest) = swapped.data_mut().split_at_mut(per);
        let c = &mut rest[per..];
        a.swap_with_slice(c);
        let p1 = gradient_penalty(&critic, &x, 10.0).unwrap();
        let p2 = gradient_penalty(&critic, &swapped, 10.0).unwrap();
        assert!((p1 - p2).abs() < 1e-12, "{p1} vs {p2}");
    }

    #[test]
    fn penalty_points_modes() {
        let real = Tensor::filled(Shape5::new(2, 1, 2, 2, 2), 1.0);
        let fake = Tensor::filled(Shape5::new(2, 1, 2, 2, 2), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let at_gen = penalty_points(GpMode::AtGenerated, &real, &fake, &mut rng).unwrap();
        assert_eq!(at_gen.data(), fake.data());
        let interp = penalty_points(GpMode::AtInterpolates, &real, &fake, &mut rng).unwrap();
        // Each sample is a constant ε (real=1, fake=0), inside (0,1).
        let per = interp.shape().spatial_len();
        for b in 0..2 {
            let v = interp.data()[b * per];
            assert!(v > 0.0 && v < 1.0);
            assert!(interp.data()[b * per..(b + 1) * per].iter().all(|u| *u == v));
        }
        assert_ne!(interp.data()[0], interp.data()[per]);
    }

    #[test]
    fn config_validation() {
        assert!(GanConfig::default().validate().is_ok());
        assert!(GanConfig { n_critic: 0, ..GanConfig::default() }.validate().is_err());
        assert!(GanConfig { lambda_gp: 0.0, ..GanConfig::default() }.validate().is_err());
        assert!(GanConfig { lambda_adv: -0.1, ..GanConfig::default() }.validate().is_err());
        // λadv = 0 itself is legal (pure-content joint phase).
        assert!(GanConfig { lambda_adv: 0.0, ..GanConfig::default() }.validate().is_ok());
        // Round trip through JSON with defaults filled in.
        let j = serde_json::to_string(&GanConfig::default()).unwrap();
        let back: GanConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(back, GanConfig::default());
        let partial: GanConfig = serde_json::from_str(r#"{"lambda_adv": 0.5}"#).unwrap();
        assert_eq!(partial.lambda_adv, 0.5);
        assert_eq!(partial.n_critic, 5);
    }
}

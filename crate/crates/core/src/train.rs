//! Cross-entropy training of the copy/generation mixture.
//!
//! Gradients are derived by hand. For one query with copy distribution `a`,
//! generation distribution `b`, truth `y` and mixture probability
//! `P = alpha * a_y + (1 - alpha) * b_y`, the loss is `-ln P` and
//!
//! ```text
//! dL/dc_i = (alpha * a_y / P) * (a_i - [i == y])        copy logits
//! dL/dg_i = ((1 - alpha) * b_y / P) * (b_i - [i == y])  generation logits
//! ```
//!
//! The copy term is pushed through `tanh` (`1 - v_i^2`); the mask is a
//! constant. Both then flow into the affine maps and the features
//! `[e_s; r_p; (k + 1) t_u]`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, EntityId, Quadruple};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, FilterIndex, FilterRegime};
use crate::model::{check_alpha, ModelParams, ProbVector, Query, Real, TENSOR_NAMES};
use crate::vocab::{HistVocab, MaskStyle};

/// Lower bound on the truth probability inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossReduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mask: MaskStyle,
    pub reduction: LossReduction,
    /// Stop after this many epochs without validation MRR improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.8,
            dim: 200,
            learning_rate: 0.001,
            batch_size: 1024,
            epochs: 30,
            seed: 0,
            mask: MaskStyle::default(),
            reduction: LossReduction::Sum,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        let positive = [
            ("dim", self.dim > 0),
            ("batch_size", self.batch_size > 0),
            ("epochs", self.epochs > 0),
            ("learning_rate", self.learning_rate > 0.0),
            ("mask magnitude", self.mask.magnitude > 0.0),
        ];
        for (name, ok) in positive {
            if !ok {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Default mixture weight for the benchmark datasets.
pub fn default_alpha(dataset_name: &str) -> Option<f64> {
    let name = dataset_name.to_ascii_lowercase();
    match name.as_str() {
        "icews18" | "icews14" => Some(0.8),
        "gdelt" => Some(0.7),
        "wiki" | "yago" => Some(0.5),
        _ => None,
    }
}

/// A training query paired with its true object.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Example {
    pub query: Query,
    pub truth: EntityId,
}

impl From<&Quadruple> for Example {
    fn from(q: &Quadruple) -> Self {
        Example {
            query: Query::new(q.subject, q.relation, q.time as usize),
            truth: q.object,
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform `rows x cols` tensor (fan-in = cols, fan-out = rows).
pub fn xavier_uniform<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<F> {
    let bound = xavier_bound(cols, rows);
    (0..rows * cols)
        .map(|_| F::from_f64(rng.gen_range(-bound..=bound)).expect("finite"))
        .collect()
}

/// Xavier-initialized parameters; biases start at zero.
pub fn init_params<F: Real, R: Rng + ?Sized>(
    num_entities: usize,
    num_relations: usize,
    dim: usize,
    rng: &mut R,
) -> ModelParams<F> {
    let mut p = ModelParams::zeros(num_entities, num_relations, dim);
    p.entity_emb = xavier_uniform(num_entities, dim, rng);
    p.relation_emb = xavier_uniform(num_relations, dim, rng);
    p.time_unit = xavier_uniform(1, dim, rng);
    p.copy_weight = xavier_uniform(num_entities, 3 * dim, rng);
    p.gen_weight = xavier_uniform(num_entities, 3 * dim, rng);
    p
}

/// Gradient buffers, shaped like the parameters.
pub type Gradients<F> = ModelParams<F>;

struct Trace<F> {
    features: Vec<F>,
    /// dL/d(pre-tanh copy logits); `None` when the copy path has zero weight.
    copy_grad: Option<Vec<F>>,
    gen_grad: Option<Vec<F>>,
    feature_grad: Vec<F>,
    loss: F,
}

fn check_causal(vocab: &HistVocab, ex: &Example) -> Result<()> {
    if vocab.frontier() > ex.query.step {
        return Err(Error::Parameter(format!(
            "vocabulary frontier {} includes the query's own snapshot {}",
            vocab.frontier(),
            ex.query.step
        )));
    }
    Ok(())
}

fn validate_batch<F: Real>(params: &ModelParams<F>, batch: &[Example], vocab: &HistVocab, alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    for ex in batch {
        params.check_query(&ex.query)?;
        if ex.truth as usize >= params.num_entities() {
            return Err(Error::Parameter(format!("truth {} out of bounds", ex.truth)));
        }
        check_causal(vocab, ex)?;
    }
    Ok(())
}

fn trace<F: Real>(
    params: &ModelParams<F>,
    ex: &Example,
    vocab: &HistVocab,
    alpha: f64,
    mask: MaskStyle,
    with_grad: bool,
) -> Trace<F> {
    let n = params.num_entities();
    let y = ex.truth as usize;
    let x = params.features(&ex.query);
    let v = params.copy_index(&x);
    let m = vocab.copy_mask::<F>(ex.query.subject, ex.query.relation, n, mask);
    let mut c = v.clone();
    for (ci, &mi) in c.iter_mut().zip(m.as_slice()) {
        *ci += mi;
    }
    let a = ProbVector::softmax(c).into_vec();
    let b = ProbVector::softmax(params.generation_logits(&x)).into_vec();

    let wa = F::from_f64(alpha).unwrap();
    let wb = F::from_f64(1.0 - alpha).unwrap();
    let floor = F::from_f64(PROB_FLOOR).unwrap();
    let p = (wa * a[y] + wb * b[y]).max(floor);
    let loss = -p.ln();

    if !with_grad {
        return Trace {
            features: x,
            copy_grad: None,
            gen_grad: None,
            feature_grad: Vec::new(),
            loss,
        };
    }

    let width = x.len();
    let mut dx = vec![F::zero(); width];
    let ca = wa * a[y] / p;
    let copy_grad = (alpha > 0.0).then(|| {
        let mut dv: Vec<F> = a
            .iter()
            .zip(&v)
            .map(|(&ai, &vi)| ca * ai * (F::one() - vi * vi))
            .collect();
        dv[y] -= ca * (F::one() - v[y] * v[y]);
        accumulate_transposed(&params.copy_weight, &dv, &mut dx);
        dv
    });
    let cb = wb * b[y] / p;
    let gen_grad = (alpha < 1.0).then(|| {
        let mut dg: Vec<F> = b.iter().map(|&bi| cb * bi).collect();
        dg[y] -= cb;
        accumulate_transposed(&params.gen_weight, &dg, &mut dx);
        dg
    });
    Trace {
        features: x,
        copy_grad,
        gen_grad,
        feature_grad: dx,
        loss,
    }
}

/// `out += W^T * coeffs` for a row-major `W` with `coeffs.len()` rows.
fn accumulate_transposed<F: Real>(weight: &[F], coeffs: &[F], out: &mut [F]) {
    let width = out.len();
    for (row, &c) in weight.chunks_exact(width).zip(coeffs) {
        if c == F::zero() {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(row) {
            *o += c * w;
        }
    }
}

/// Summed cross-entropy `-sum ln p(truth)` of the mixture over `batch`.
pub fn batch_loss<F: Real>(
    params: &ModelParams<F>,
    batch: &[Example],
    vocab: &HistVocab,
    alpha: f64,
    mask: MaskStyle,
) -> Result<F> {
    validate_batch(params, batch, vocab, alpha)?;
    let losses: Vec<F> = batch
        .par_iter()
        .map(|ex| trace(params, ex, vocab, alpha, mask, false).loss)
        .collect();
    Ok(losses.into_iter().fold(F::zero(), |acc, l| acc + l))
}

/// Summed loss and its exact gradient. Per-query work runs in parallel;
/// every reduction runs in batch order so results do not depend on the
/// thread count.
pub fn batch_gradients<F: Real>(
    params: &ModelParams<F>,
    batch: &[Example],
    vocab: &HistVocab,
    alpha: f64,
    mask: MaskStyle,
) -> Result<(F, Gradients<F>)> {
    validate_batch(params, batch, vocab, alpha)?;
    let traces: Vec<Trace<F>> = batch
        .par_iter()
        .map(|ex| trace(params, ex, vocab, alpha, mask, true))
        .collect();
    let d = params.dim();
    let width = params.feature_dim();
    let mut grads = Gradients::zeros(params.num_entities(), params.num_relations(), d);

    let outer = |weight: &mut Vec<F>, bias: &mut Vec<F>, pick: fn(&Trace<F>) -> Option<&Vec<F>>| {
        weight
            .par_chunks_mut(width)
            .zip(bias.par_iter_mut())
            .enumerate()
            .for_each(|(i, (row, b))| {
                for t in &traces {
                    let Some(coeffs) = pick(t) else { continue };
                    let c = coeffs[i];
                    if c == F::zero() {
                        continue;
                    }
                    *b += c;
                    for (r, &xj) in row.iter_mut().zip(&t.features) {
                        *r += c * xj;
                    }
                }
            });
    };
    outer(&mut grads.copy_weight, &mut grads.copy_bias, |t| t.copy_grad.as_ref());
    outer(&mut grads.gen_weight, &mut grads.gen_bias, |t| t.gen_grad.as_ref());

    let mut loss = F::zero();
    for (ex, t) in batch.iter().zip(&traces) {
        loss += t.loss;
        let (ds, rest) = t.feature_grad.split_at(d);
        let (dp, dt) = rest.split_at(d);
        let s = ex.query.subject as usize;
        let r = ex.query.relation as usize;
        for (g, &v) in grads.entity_emb[s * d..(s + 1) * d].iter_mut().zip(ds) {
            *g += v;
        }
        for (g, &v) in grads.relation_emb[r * d..(r + 1) * d].iter_mut().zip(dp) {
            *g += v;
        }
        let scale = F::from_usize(ex.query.step + 1).unwrap();
        for (g, &v) in grads.time_unit.iter_mut().zip(dt) {
            *g += scale * v;
        }
    }

    for (name, tensor) in TENSOR_NAMES.iter().zip(grads.tensors()) {
        if tensor.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { param: name });
        }
    }
    Ok((loss, grads))
}

pub(crate) fn scale_gradients<F: Real>(grads: &mut Gradients<F>, factor: F) {
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|g| *g *= factor);
    }
}

#[derive(Clone, Debug)]
struct Moments<F> {
    m: Vec<F>,
    v: Vec<F>,
    v_hat: Vec<F>,
}

/// AMSGrad without bias correction:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, `v_hat <- max(v_hat, v)`,
/// `theta <- theta - lr * m / (sqrt(v_hat) + eps)`.
#[derive(Clone, Debug)]
pub struct AmsGrad<F> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Vec<Moments<F>>,
    steps: u64,
}

impl<F: Real> AmsGrad<F> {
    pub fn new(params: &ModelParams<F>, learning_rate: f64) -> Self {
        let moments = params
            .tensors()
            .iter()
            .map(|t| Moments {
                m: vec![F::zero(); t.len()],
                v: vec![F::zero(); t.len()],
                v_hat: vec![F::zero(); t.len()],
            })
            .collect();
        AmsGrad {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Running maximum of the second moment for tensor `index` (storage order).
    pub fn max_second_moment(&self, index: usize) -> &[F] {
        &self.moments[index].v_hat
    }

    pub fn step(&mut self, params: &mut ModelParams<F>, grads: &Gradients<F>) {
        let c = |x: f64| F::from_f64(x).unwrap();
        let (b1, b2, eps, lr) = (c(self.beta1), c(self.beta2), c(self.eps), c(self.learning_rate));
        let (one_b1, one_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        for ((theta, g), st) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.moments)
        {
            theta
                .par_iter_mut()
                .zip(g.par_iter())
                .zip(st.m.par_iter_mut())
                .zip(st.v.par_iter_mut())
                .zip(st.v_hat.par_iter_mut())
                .for_each(|((((theta, &g), m), v), v_hat)| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *v_hat = v_hat.max(*v);
                    *theta -= lr * *m / (v_hat.sqrt() + eps);
                });
        }
        self.steps += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub steps: usize,
    pub valid_mrr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub optimizer_steps: u64,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.6},{:.3}\n", e.epoch, e.loss, e.seconds));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub params: ModelParams<f32>,
    pub log: TrainingLog,
    /// Vocabulary over every training snapshot, frozen for evaluation.
    pub vocab: HistVocab,
}

pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<Trained> {
    fit_with_observer(dataset, config, |_| {})
}

/// Trains snapshot by snapshot. Within an epoch, snapshot `k` is trained
/// against the vocabulary of snapshots `0..k` and absorbed afterwards; the
/// vocabulary restarts empty every epoch. Batches within a snapshot are
/// shuffled by the seeded generator.
pub fn fit_with_observer(
    dataset: &Dataset,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochLog),
) -> Result<Trained> {
    config.validate()?;
    let snapshots = dataset.train_snapshots();
    if snapshots.num_facts() == 0 {
        return Err(Error::Parameter("training split is empty".into()));
    }
    let n = dataset.meta.num_entities as usize;
    let r = dataset.model_relations() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params: ModelParams<f32> = init_params(n, r, config.dim, &mut rng);
    let mut optim = AmsGrad::new(&params, config.learning_rate);

    let validation = match config.patience {
        Some(_) if !dataset.valid.is_empty() => Some((
            FilterIndex::build(dataset.all_facts(), FilterRegime::Static),
            EvalConfig {
                alpha: config.alpha,
                mask: config.mask,
                num_relations: dataset.meta.num_relations,
                augmented: dataset.is_augmented(),
                ..EvalConfig::default()
            },
        )),
        _ => None,
    };

    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ModelParams<f32>)> = None;
    let mut stale = 0;
    let mut vocab = HistVocab::new();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        vocab = HistVocab::new();
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for (k, facts) in snapshots.iter().enumerate() {
            let mut examples: Vec<Example> = facts.iter().map(Example::from).collect();
            examples.shuffle(&mut rng);
            for batch in examples.chunks(config.batch_size) {
                let (loss, mut grads) = batch_gradients(&params, batch, &vocab, config.alpha, config.mask)?;
                if config.reduction == LossReduction::Mean {
                    scale_gradients(&mut grads, 1.0 / batch.len() as f32);
                }
                optim.step(&mut params, &grads);
                epoch_loss += f64::from(loss);
                steps += 1;
            }
            vocab.absorb_snapshot(k, facts)?;
        }
        let valid_mrr = match &validation {
            Some((filter, eval_cfg)) => Some(evaluate(&params, &dataset.valid, &vocab, filter, eval_cfg)?.overall.mrr),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            loss: epoch_loss,
            seconds: start.elapsed().as_secs_f64(),
            steps,
            valid_mrr,
        };
        observe(&entry);
        log.epochs.push(entry);
        log.best_epoch = epoch;

        if let (Some(patience), Some(mrr)) = (config.patience, valid_mrr) {
            if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
                best = Some((mrr, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    log.optimizer_steps = optim.steps();
    if let Some((mrr, best_params)) = best {
        log.best_epoch = log
            .epochs
            .iter()
            .find(|e| e.valid_mrr == Some(mrr))
            .map_or(log.best_epoch, |e| e.epoch);
        params = best_params;
    }
    Ok(Trained { params, log, vocab })
}

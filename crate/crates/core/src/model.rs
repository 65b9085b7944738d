//! Forward pass of the copy-generation network.
//!
//! A query `(s, p, ?, k)` is encoded as the concatenation `x = [e_s; r_p; t_k]`
//! of subject, relation and time embeddings, where `t_k = (k + 1) * t_u`.
//!
//! * Copy mode scores `softmax(tanh(W_c x + b_c) + mask)`, where the mask
//!   pushes every entity outside the pair's historical vocabulary to `-M`.
//! * Generation mode scores `softmax(W_g x + b_g)` over all entities.
//!
//! The final distribution is the fixed convex mixture
//! `alpha * p_copy + (1 - alpha) * p_gen`.

use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::data::{EntityId, RelationId};
use crate::error::{Error, Result};
use crate::vocab::{CopyMask, HistVocab, MaskStyle};

/// Floating-point scalar used by the model: `f32` for training and
/// checkpoints, `f64` for gradient checks and reference comparisons.
pub trait Real: Float + FromPrimitive + NumAssign + Sum + Send + Sync + fmt::Debug + fmt::Display + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + NumAssign + Sum + Send + Sync + fmt::Debug + fmt::Display + 'static {}

/// Every learnable tensor, stored row-major. The affine maps are stored as
/// `N x 3d` so that row `i` produces logit `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F = f32> {
    num_entities: usize,
    num_relations: usize,
    dim: usize,
    pub entity_emb: Vec<F>,
    pub relation_emb: Vec<F>,
    pub time_unit: Vec<F>,
    pub copy_weight: Vec<F>,
    pub copy_bias: Vec<F>,
    pub gen_weight: Vec<F>,
    pub gen_bias: Vec<F>,
}

/// Tensor names in storage order, shared by checkpoints and diagnostics.
pub const TENSOR_NAMES: [&str; 7] = [
    "entity_emb",
    "relation_emb",
    "time_unit",
    "copy_weight",
    "copy_bias",
    "gen_weight",
    "gen_bias",
];

impl<F: Real> ModelParams<F> {
    pub fn zeros(num_entities: usize, num_relations: usize, dim: usize) -> Self {
        let z = |len| vec![F::zero(); len];
        ModelParams {
            num_entities,
            num_relations,
            dim,
            entity_emb: z(num_entities * dim),
            relation_emb: z(num_relations * dim),
            time_unit: z(dim),
            copy_weight: z(num_entities * 3 * dim),
            copy_bias: z(num_entities),
            gen_weight: z(num_entities * 3 * dim),
            gen_bias: z(num_entities),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.dim
    }

    pub fn tensors(&self) -> [&[F]; 7] {
        [
            &self.entity_emb,
            &self.relation_emb,
            &self.time_unit,
            &self.copy_weight,
            &self.copy_bias,
            &self.gen_weight,
            &self.gen_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [F]; 7] {
        [
            &mut self.entity_emb,
            &mut self.relation_emb,
            &mut self.time_unit,
            &mut self.copy_weight,
            &mut self.copy_bias,
            &mut self.gen_weight,
            &mut self.gen_bias,
        ]
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let conv = |v: &[F]| -> Vec<G> { v.iter().map(|x| G::from(*x).expect("representable")).collect() };
        ModelParams {
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            dim: self.dim,
            entity_emb: conv(&self.entity_emb),
            relation_emb: conv(&self.relation_emb),
            time_unit: conv(&self.time_unit),
            copy_weight: conv(&self.copy_weight),
            copy_bias: conv(&self.copy_bias),
            gen_weight: conv(&self.gen_weight),
            gen_bias: conv(&self.gen_bias),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn check_query(&self, query: &Query) -> Result<()> {
        if query.subject as usize >= self.num_entities || query.relation as usize >= self.num_relations {
            return Err(Error::Parameter(format!(
                "query ({}, {}) out of bounds for {} entities, {} relations",
                query.subject, query.relation, self.num_entities, self.num_relations
            )));
        }
        Ok(())
    }

    pub fn entity_row(&self, e: usize) -> &[F] {
        &self.entity_emb[e * self.dim..(e + 1) * self.dim]
    }

    pub fn relation_row(&self, r: usize) -> &[F] {
        &self.relation_emb[r * self.dim..(r + 1) * self.dim]
    }

    /// `t_k = (k + 1) * t_u`, the unrolled `t_k = t_{k-1} + t_u` with `t_0 = t_u`.
    pub fn time_embedding(&self, step: usize) -> Vec<F> {
        let scale = F::from_usize(step + 1).expect("step fits");
        self.time_unit.iter().map(|&u| scale * u).collect()
    }

    /// `[e_s; r_p; t_k]`.
    pub fn features(&self, query: &Query) -> Vec<F> {
        let mut x = Vec::with_capacity(self.feature_dim());
        x.extend_from_slice(self.entity_row(query.subject as usize));
        x.extend_from_slice(self.relation_row(query.relation as usize));
        x.extend(self.time_embedding(query.step));
        x
    }

    fn affine(weight: &[F], bias: &[F], x: &[F]) -> Vec<F> {
        let width = x.len();
        weight
            .chunks_exact(width)
            .zip(bias)
            .map(|(row, &b)| dot(row, x) + b)
            .collect()
    }

    /// Index vector of the copy mode, `tanh(W_c x + b_c)`, before masking.
    pub fn copy_index(&self, x: &[F]) -> Vec<F> {
        let mut v = Self::affine(&self.copy_weight, &self.copy_bias, x);
        v.iter_mut().for_each(|z| *z = z.tanh());
        v
    }

    /// Generation logits `W_g x + b_g`.
    pub fn generation_logits(&self, x: &[F]) -> Vec<F> {
        Self::affine(&self.gen_weight, &self.gen_bias, x)
    }

    pub fn copy_probs(&self, query: &Query, mask: &CopyMask<F>) -> ProbVector<F> {
        self.copy_probs_from_features(&self.features(query), mask)
    }

    pub fn copy_probs_from_features(&self, x: &[F], mask: &CopyMask<F>) -> ProbVector<F> {
        let mut c = self.copy_index(x);
        for (ci, &m) in c.iter_mut().zip(mask.as_slice()) {
            *ci += m;
        }
        ProbVector::softmax(c)
    }

    pub fn generation_probs(&self, query: &Query) -> ProbVector<F> {
        ProbVector::softmax(self.generation_logits(&self.features(query)))
    }
}

pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Query `(subject, relation, ?, step)`; `step` is the 0-based snapshot index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Query {
    pub subject: EntityId,
    pub relation: RelationId,
    pub step: usize,
}

impl Query {
    pub fn new(subject: EntityId, relation: RelationId, step: usize) -> Self {
        Query {
            subject,
            relation,
            step,
        }
    }
}

/// A probability distribution over entities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector<F>(Vec<F>);

impl<F: Real> ProbVector<F> {
    /// Max-shifted softmax; stable for logits around `-M`.
    pub fn softmax(mut logits: Vec<F>) -> Self {
        softmax_in_place(&mut logits);
        ProbVector(logits)
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<F> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> F {
        self.0.iter().copied().sum()
    }

    /// Wraps values that are already a distribution.
    pub fn from_vec_unchecked(values: Vec<F>) -> Self {
        ProbVector(values)
    }
}

pub fn softmax_in_place<F: Real>(logits: &mut [F]) {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in logits.iter_mut() {
        *z /= total;
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha {alpha} is outside [0, 1]")));
    }
    Ok(())
}

/// `alpha * copy + (1 - alpha) * gen`.
pub fn combine<F: Real>(copy: &ProbVector<F>, gen: &ProbVector<F>, alpha: f64) -> Result<ProbVector<F>> {
    check_alpha(alpha)?;
    if copy.len() != gen.len() {
        return Err(Error::Parameter(format!(
            "cannot mix distributions of length {} and {}",
            copy.len(),
            gen.len()
        )));
    }
    let a = F::from_f64(alpha).expect("alpha representable");
    let b = F::from_f64(1.0 - alpha).expect("alpha representable");
    Ok(ProbVector(
        copy.0.iter().zip(&gen.0).map(|(&c, &g)| a * c + b * g).collect(),
    ))
}

/// Which scoring paths contribute to the final distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Mixture of copy and generation.
    #[default]
    Full,
    CopyOnly,
    GenOnly,
    /// Mixture whose generation path excludes historical objects.
    GenNew,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::CopyOnly, Mode::GenOnly, Mode::GenNew, Mode::Full];
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "copy-only" => Ok(Mode::CopyOnly),
            "gen-only" => Ok(Mode::GenOnly),
            "gen-new" => Ok(Mode::GenNew),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::CopyOnly => "copy-only",
            Mode::GenOnly => "gen-only",
            Mode::GenNew => "gen-new",
        })
    }
}

/// Per-path and combined distributions for one query.
#[derive(Clone, Debug)]
pub struct Scores<F> {
    pub copy: Option<ProbVector<F>>,
    pub generation: Option<ProbVector<F>>,
    pub combined: ProbVector<F>,
    /// Weight applied to `copy` inside `combined`.
    pub copy_weight: f64,
}

impl<F: Real> Scores<F> {
    /// Fraction of `combined[e]` contributed by the copy path.
    pub fn copy_share(&self, entity: usize) -> f64 {
        let total = self.combined.as_slice()[entity].to_f64().unwrap_or(0.0);
        match &self.copy {
            Some(c) if total > 0.0 => self.copy_weight * c.as_slice()[entity].to_f64().unwrap_or(0.0) / total,
            _ => 0.0,
        }
    }
}

/// Read-only bundle of everything needed to score queries.
#[derive(Clone, Copy, Debug)]
pub struct Predictor<'a, F> {
    pub params: &'a ModelParams<F>,
    pub vocab: &'a HistVocab,
    pub mask: MaskStyle,
    pub alpha: f64,
    pub mode: Mode,
}

impl<'a, F: Real> Predictor<'a, F> {
    pub fn new(
        params: &'a ModelParams<F>,
        vocab: &'a HistVocab,
        mask: MaskStyle,
        alpha: f64,
        mode: Mode,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Predictor {
            params,
            vocab,
            mask,
            alpha,
            mode,
        })
    }

    pub fn scores(&self, query: &Query) -> Scores<F> {
        let n = self.params.num_entities();
        let x = self.params.features(query);
        let copy = || {
            let mask = self.vocab.copy_mask(query.subject, query.relation, n, self.mask);
            self.params.copy_probs_from_features(&x, &mask)
        };
        let gen = || ProbVector::softmax(self.params.generation_logits(&x));
        match self.mode {
            Mode::CopyOnly => {
                let pc = copy();
                Scores {
                    combined: pc.clone(),
                    copy: Some(pc),
                    generation: None,
                    copy_weight: 1.0,
                }
            }
            Mode::GenOnly => Scores {
                combined: gen(),
                copy: None,
                generation: None,
                copy_weight: 0.0,
            },
            Mode::Full | Mode::GenNew => {
                let pc = copy();
                let pg = if self.mode == Mode::GenNew {
                    let novelty: CopyMask<F> =
                        self.vocab
                            .novelty_mask(query.subject, query.relation, n, self.mask.magnitude);
                    let mut g = self.params.generation_logits(&x);
                    for (gi, &m) in g.iter_mut().zip(novelty.as_slice()) {
                        *gi += m;
                    }
                    ProbVector::softmax(g)
                } else {
                    gen()
                };
                let combined = combine(&pc, &pg, self.alpha).expect("alpha validated at construction");
                Scores {
                    combined,
                    copy: Some(pc),
                    generation: Some(pg),
                    copy_weight: self.alpha,
                }
            }
        }
    }

    pub fn predict(&self, query: &Query) -> Vec<EntityId> {
        rank_entities(self.scores(query).combined.as_slice())
    }
}

/// Entity ids by descending score; equal scores in ascending id order.
pub fn rank_entities<F: Real>(scores: &[F]) -> Vec<EntityId> {
    let mut ids: Vec<EntityId> = (0..scores.len() as EntityId).collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids
}

pub fn predict<F: Real>(
    params: &ModelParams<F>,
    query: &Query,
    vocab: &HistVocab,
    alpha: f64,
    mode: Mode,
    mask: MaskStyle,
) -> Result<Vec<EntityId>> {
    params.check_query(query)?;
    Ok(Predictor::new(params, vocab, mask, alpha, mode)?.predict(query))
}

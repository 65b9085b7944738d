//! Ranking evaluation: MRR and Hits@{1,3,10} under raw, static-filtered or
//! time-aware-filtered regimes, split by prediction direction.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{EntityId, Quadruple, RelationId};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelParams, Predictor, Query, Real};
use crate::vocab::{HistVocab, MaskStyle};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FilterRegime {
    Raw,
    /// Remove every other object known for `(s, p)` at any time.
    #[default]
    Static,
    /// Remove only other objects known for `(s, p)` at the query's own time.
    TimeAware,
}

impl FromStr for FilterRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FilterRegime::Raw),
            "static" => Ok(FilterRegime::Static),
            "time-aware" => Ok(FilterRegime::TimeAware),
            other => Err(Error::Config(format!("unknown filter {other:?}"))),
        }
    }
}

impl fmt::Display for FilterRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterRegime::Raw => "raw",
            FilterRegime::Static => "static",
            FilterRegime::TimeAware => "time-aware",
        })
    }
}

/// Known-true objects used to filter competing candidates.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    regime: FilterRegime,
    known: HashMap<(EntityId, RelationId, Option<u32>), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn build<'a>(facts: impl IntoIterator<Item = &'a Quadruple>, regime: FilterRegime) -> Self {
        let mut known: HashMap<_, Vec<EntityId>> = HashMap::new();
        if regime != FilterRegime::Raw {
            for q in facts {
                let time = (regime == FilterRegime::TimeAware).then_some(q.time);
                known.entry((q.subject, q.relation, time)).or_default().push(q.object);
            }
            for objs in known.values_mut() {
                objs.sort_unstable();
                objs.dedup();
            }
        }
        FilterIndex { regime, known }
    }

    pub fn regime(&self) -> FilterRegime {
        self.regime
    }

    /// Objects to drop for a query, sorted ascending. Empty for the raw regime.
    pub fn known_objects(&self, subject: EntityId, relation: RelationId, time: u32) -> &[EntityId] {
        let time = (self.regime == FilterRegime::TimeAware).then_some(time);
        self.known.get(&(subject, relation, time)).map_or(&[], Vec::as_slice)
    }

    /// Number of distinct indexed triples (or timed triples).
    pub fn len(&self) -> usize {
        self.known.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }
}

/// Static filter over the union of the given splits.
pub fn build_filter(splits: &[&[Quadruple]]) -> FilterIndex {
    FilterIndex::build(splits.iter().flat_map(|s| s.iter()), FilterRegime::Static)
}

/// 1-based rank of `truth`: one plus the candidates scoring strictly higher,
/// plus equal-scoring candidates with a smaller id. Ids in `excluded`
/// (sorted) other than the truth are not candidates.
pub fn rank_with_exclusions<F: Real>(scores: &[F], truth: EntityId, excluded: &[EntityId]) -> usize {
    let t = truth as usize;
    let target = scores[t];
    let beats = |e: usize| scores[e] > target || (scores[e] == target && e < t);
    let ahead = (0..scores.len()).filter(|&e| beats(e)).count();
    let removed = excluded.iter().filter(|&&e| e != truth && beats(e as usize)).count();
    1 + ahead - removed
}

pub fn rank_of_truth<F: Real>(scores: &[F], fact: &Quadruple, filter: &FilterIndex) -> usize {
    rank_with_exclusions(
        scores,
        fact.object,
        filter.known_objects(fact.subject, fact.relation, fact.time),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Direction {
    Object,
    Subject,
    #[default]
    Both,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Object => "object",
            Direction::Subject => "subject",
            Direction::Both => "both",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
    pub direction: Direction,
    pub mode: Mode,
    pub filter: FilterRegime,
}

impl EvalReport {
    /// Metrics over 1-based ranks; all metrics are NaN when `ranks` is empty.
    pub fn from_ranks(ranks: &[usize], direction: Direction, mode: Mode, filter: FilterRegime) -> Self {
        let count = ranks.len();
        let (mrr, hits1, hits3, hits10) = if count == 0 {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let n = count as f64;
            let hits = |k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
            let reciprocal: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum();
            (reciprocal / n, hits(1), hits(3), hits(10))
        };
        EvalReport {
            mrr,
            hits1,
            hits3,
            hits10,
            count,
            direction,
            mode,
            filter,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.count > 0
    }

    /// `mrr,hits1,hits3,hits10` as percentages with two decimals.
    pub fn metrics_csv(&self) -> String {
        format!(
            "{},{},{},{}",
            pct(self.mrr),
            pct(self.hits1),
            pct(self.hits3),
            pct(self.hits10)
        )
    }

    pub fn to_key_value_lines(&self) -> String {
        format!(
            "direction={}\nmode={}\nfilter={}\ncount={}\nmrr={}\nhits1={}\nhits3={}\nhits10={}\n",
            self.direction,
            self.mode,
            self.filter,
            self.count,
            pct(self.mrr),
            pct(self.hits1),
            pct(self.hits3),
            pct(self.hits10)
        )
    }
}

pub fn pct(x: f64) -> String {
    if x.is_nan() {
        "undefined".to_string()
    } else {
        format!("{:.2}", x * 100.0)
    }
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub overall: EvalReport,
    pub object: EvalReport,
    pub subject: EvalReport,
    pub per_snapshot: Vec<(u32, EvalReport)>,
    /// Rank of every evaluated fact, in input order.
    pub ranks: Vec<usize>,
}

impl EvalSummary {
    pub fn per_snapshot_csv(&self) -> String {
        let mut out = String::from("step,count,mrr,hits1,hits3,hits10\n");
        for (step, r) in &self.per_snapshot {
            out.push_str(&format!("{step},{},{}\n", r.count, r.metrics_csv()));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalConfig {
    pub alpha: f64,
    pub mode: Mode,
    pub mask: MaskStyle,
    /// Relation count before reciprocal augmentation.
    pub num_relations: u32,
    /// Whether relations `>= num_relations` are reciprocal (subject) queries.
    pub augmented: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alpha: 0.8,
            mode: Mode::Full,
            mask: MaskStyle::default(),
            num_relations: u32::MAX,
            augmented: false,
        }
    }
}

/// Ranks every fact's object against the frozen vocabulary.
pub fn evaluate<F: Real>(
    params: &ModelParams<F>,
    facts: &[Quadruple],
    vocab: &HistVocab,
    filter: &FilterIndex,
    config: &EvalConfig,
) -> Result<EvalSummary> {
    let predictor = Predictor::new(params, vocab, config.mask, config.alpha, config.mode)?;
    for q in facts {
        if q.object as usize >= params.num_entities() {
            return Err(Error::Parameter(format!("object {} out of bounds", q.object)));
        }
        params.check_query(&Query::new(q.subject, q.relation, q.time as usize))?;
    }
    let ranks: Vec<usize> = facts
        .par_iter()
        .map(|q| {
            let scores = predictor.scores(&Query::new(q.subject, q.relation, q.time as usize));
            rank_of_truth(scores.combined.as_slice(), q, filter)
        })
        .collect();

    let report = |rs: &[usize], direction| EvalReport::from_ranks(rs, direction, config.mode, filter.regime());
    let is_subject = |q: &Quadruple| config.augmented && q.relation >= config.num_relations;
    let (mut obj, mut subj) = (Vec::new(), Vec::new());
    let mut by_step: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (q, &r) in facts.iter().zip(&ranks) {
        if is_subject(q) {
            subj.push(r);
        } else {
            obj.push(r);
        }
        by_step.entry(q.time).or_default().push(r);
    }
    Ok(EvalSummary {
        overall: report(&ranks, Direction::Both),
        object: report(&obj, Direction::Object),
        subject: report(&subj, Direction::Subject),
        per_snapshot: by_step
            .into_iter()
            .map(|(t, rs)| (t, report(&rs, Direction::Both)))
            .collect(),
        ranks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: u32, p: u32, o: u32, t: u32) -> Quadruple {
        Quadruple::new(s, p, o, t)
    }

    #[test]
    fn filter_examples() {
        let f = build_filter(&[&[q(1, 0, 2, 0)], &[q(1, 0, 3, 5)]]);
        assert_eq!(f.known_objects(1, 0, 9), &[2, 3]);
        assert_eq!(f.len(), 2);
        assert!(build_filter(&[&[], &[]]).is_empty());
        let dup = build_filter(&[&[q(1, 0, 2, 0), q(1, 0, 2, 4)]]);
        assert_eq!(dup.len(), 1);

        let timed = FilterIndex::build(&[q(1, 0, 2, 0), q(1, 0, 3, 5)], FilterRegime::TimeAware);
        assert_eq!(timed.known_objects(1, 0, 5), &[3]);
        assert!(timed.known_objects(1, 0, 1).is_empty());
        let raw = FilterIndex::build(&[q(1, 0, 2, 0)], FilterRegime::Raw);
        assert!(raw.known_objects(1, 0, 0).is_empty());
    }

    #[test]
    fn rank_examples() {
        let scores = [0.1, 0.7, 0.2];
        assert_eq!(rank_with_exclusions(&scores, 1, &[]), 1);
        assert_eq!(rank_with_exclusions(&scores, 2, &[]), 2);
        assert_eq!(rank_with_exclusions(&scores, 2, &[1]), 1);
        assert_eq!(rank_with_exclusions(&scores, 2, &[1, 2]), 1);
        assert_eq!(rank_with_exclusions(&[0.5, 0.5], 1, &[]), 2);
        assert_eq!(rank_with_exclusions(&[0.5, 0.5], 0, &[]), 1);
    }

    #[test]
    fn report_examples() {
        let all_first = EvalReport::from_ranks(&[1, 1, 1], Direction::Both, Mode::Full, FilterRegime::Static);
        assert_eq!((all_first.mrr, all_first.hits1, all_first.hits10), (1.0, 1.0, 1.0));
        let fourth = EvalReport::from_ranks(&[4], Direction::Both, Mode::Full, FilterRegime::Static);
        assert_eq!(
            (fourth.mrr, fourth.hits1, fourth.hits3, fourth.hits10),
            (0.25, 0.0, 0.0, 1.0)
        );
        assert_eq!(fourth.metrics_csv(), "25.00,0.00,0.00,100.00");
        let empty = EvalReport::from_ranks(&[], Direction::Both, Mode::Full, FilterRegime::Static);
        assert!(!empty.is_defined());
        assert!(empty.mrr.is_nan());
        assert!(empty.to_key_value_lines().contains("mrr=undefined"));
    }

    #[test]
    fn evaluate_splits_directions() {
        let mut p = ModelParams::<f64>::zeros(3, 4, 1);
        p.gen_bias = vec![0.0, 1.0, 2.0];
        let facts = [q(0, 0, 2, 3), q(2, 2, 0, 3)];
        let cfg = EvalConfig {
            alpha: 0.0,
            num_relations: 2,
            augmented: true,
            ..EvalConfig::default()
        };
        let filter = FilterIndex::build(&facts, FilterRegime::Raw);
        let s = evaluate(&p, &facts, &HistVocab::new(), &filter, &cfg).unwrap();
        assert_eq!(s.ranks, vec![1, 3]);
        assert_eq!((s.object.count, s.subject.count), (1, 1));
        assert_eq!(s.object.mrr, 1.0);
        assert!((s.subject.mrr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.per_snapshot.len(), 1);
        assert!(s
            .per_snapshot_csv()
            .starts_with("step,count,mrr,hits1,hits3,hits10\n3,2,"));
        let empty = evaluate(&p, &[], &HistVocab::new(), &filter, &cfg).unwrap();
        assert_eq!(empty.overall.count, 0);
    }
}

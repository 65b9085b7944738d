//! Historical vocabulary: for every `(subject, relation)` pair, the objects
//! that completed it in any already-absorbed snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::data::{EntityId, Quadruple, RelationId, SnapshotSequence};
use crate::error::{Error, Result};
use crate::model::Real;

pub const DEFAULT_MASK_MAGNITUDE: f64 = 100.0;

/// Logit added at in-vocabulary positions of the copy mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PresentValue {
    /// Purely suppressive mask.
    #[default]
    Zero,
    /// Literal multi-hot indicator, 1 at every present entity.
    Indicator,
    /// Occurrence count (the unclamped sum of per-snapshot indicators).
    Count,
}

impl FromStr for PresentValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PresentValue::Zero),
            "indicator" => Ok(PresentValue::Indicator),
            "count" => Ok(PresentValue::Count),
            other => Err(Error::Config(format!("unknown mask present value {other:?}"))),
        }
    }
}

impl fmt::Display for PresentValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresentValue::Zero => "zero",
            PresentValue::Indicator => "indicator",
            PresentValue::Count => "count",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskStyle {
    /// `M`: absent entities receive `-M`.
    pub magnitude: f64,
    pub present: PresentValue,
}

impl Default for MaskStyle {
    fn default() -> Self {
        MaskStyle {
            magnitude: DEFAULT_MASK_MAGNITUDE,
            present: PresentValue::Zero,
        }
    }
}

impl MaskStyle {
    pub fn with_magnitude(magnitude: f64) -> Self {
        MaskStyle {
            magnitude,
            ..MaskStyle::default()
        }
    }
}

/// Dense length-`N` additive mask for the copy logits.
#[derive(Clone, Debug, PartialEq)]
pub struct CopyMask<F> {
    values: Vec<F>,
}

impl<F: Real> CopyMask<F> {
    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<F> {
        self.values
    }

    /// A mask with no absent entities.
    pub fn open(num_entities: usize) -> Self {
        CopyMask {
            values: vec![F::zero(); num_entities],
        }
    }

    pub fn from_values(values: Vec<F>) -> Self {
        CopyMask { values }
    }
}

/// Objects seen for one pair, with how many snapshots each appeared in.
pub type ObjectCounts = BTreeMap<EntityId, u32>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HistVocab {
    entries: HashMap<(EntityId, RelationId), ObjectCounts>,
    frontier: usize,
}

impl HistVocab {
    pub fn new() -> Self {
        HistVocab::default()
    }

    /// Absorbs snapshots `0..upto` of `seq` (missing trailing snapshots count as empty).
    pub fn from_sequence(seq: &SnapshotSequence, upto: usize) -> Self {
        let mut vocab = HistVocab::new();
        for k in 0..upto {
            vocab
                .absorb_snapshot(k, seq.get(k).unwrap_or(&[]))
                .expect("snapshots are absorbed in order");
        }
        vocab
    }

    /// First snapshot index not yet absorbed.
    pub fn frontier(&self) -> usize {
        self.frontier
    }

    /// Adds every `(s, p, o)` of snapshot `k` and advances the frontier.
    /// `k` must equal the current frontier; the facts' own `time` fields are
    /// not consulted.
    pub fn absorb_snapshot(&mut self, k: usize, facts: &[Quadruple]) -> Result<()> {
        if k != self.frontier {
            return Err(Error::Sequencing {
                expected: self.frontier,
                got: k,
            });
        }
        let distinct: BTreeSet<_> = facts.iter().map(Quadruple::triple).collect();
        for (s, p, o) in distinct {
            *self.entries.entry((s, p)).or_default().entry(o).or_insert(0) += 1;
        }
        self.frontier += 1;
        Ok(())
    }

    pub fn lookup(&self, subject: EntityId, relation: RelationId) -> Vec<EntityId> {
        self.objects(subject, relation)
            .map(|objs| objs.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn objects(&self, subject: EntityId, relation: RelationId) -> Option<&ObjectCounts> {
        self.entries.get(&(subject, relation))
    }

    pub fn contains(&self, subject: EntityId, relation: RelationId, object: EntityId) -> bool {
        self.objects(subject, relation)
            .is_some_and(|objs| objs.contains_key(&object))
    }

    pub fn num_pairs(&self) -> usize {
        self.entries.len()
    }

    /// Copy mask for `(s, p)`: the present value at every historical object, `-M` elsewhere.
    pub fn copy_mask<F: Real>(
        &self,
        subject: EntityId,
        relation: RelationId,
        num_entities: usize,
        style: MaskStyle,
    ) -> CopyMask<F> {
        let absent = F::from_f64(-style.magnitude).expect("finite mask magnitude");
        let mut values = vec![absent; num_entities];
        if let Some(objs) = self.objects(subject, relation) {
            for (&o, &count) in objs {
                values[o as usize] = match style.present {
                    PresentValue::Zero => F::zero(),
                    PresentValue::Indicator => F::one(),
                    PresentValue::Count => F::from_u32(count).expect("count fits"),
                };
            }
        }
        CopyMask { values }
    }

    /// Complement mask used by generation-new: `-M` at historical objects, 0 elsewhere.
    pub fn novelty_mask<F: Real>(
        &self,
        subject: EntityId,
        relation: RelationId,
        num_entities: usize,
        magnitude: f64,
    ) -> CopyMask<F> {
        let mut values = vec![F::zero(); num_entities];
        if let Some(objs) = self.objects(subject, relation) {
            let absent = F::from_f64(-magnitude).expect("finite mask magnitude");
            for &o in objs.keys() {
                values[o as usize] = absent;
            }
        }
        CopyMask { values }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecurrenceStats {
    /// Fraction of probe facts whose `(s, p, o)` occurs in the history.
    pub fact_repeat_rate: f64,
    /// Fraction of probe `(s, p)` groups with at least one historical object.
    pub group_repeat_rate: f64,
    pub probe_facts: usize,
    pub probe_groups: usize,
}

impl RecurrenceStats {
    pub fn to_key_value_lines(&self) -> String {
        format!(
            "fact_repeat_rate={:.6}\ngroup_repeat_rate={:.6}\nprobe_facts={}\nprobe_groups={}\n",
            self.fact_repeat_rate, self.group_repeat_rate, self.probe_facts, self.probe_groups
        )
    }
}

/// Recurrence of `probe` facts relative to `history`. Times are ignored;
/// callers pass a history that precedes the probe. Empty probes give 0 rates.
pub fn recurrence_stats(history: &[Quadruple], probe: &[Quadruple]) -> RecurrenceStats {
    let seen: HashSet<_> = history.iter().map(Quadruple::triple).collect();
    let repeated = probe.iter().filter(|q| seen.contains(&q.triple())).count();

    let mut groups: HashMap<(EntityId, RelationId), bool> = HashMap::new();
    for q in probe {
        *groups.entry((q.subject, q.relation)).or_insert(false) |= seen.contains(&q.triple());
    }
    let group_hits = groups.values().filter(|&&hit| hit).count();

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    RecurrenceStats {
        fact_repeat_rate: ratio(repeated, probe.len()),
        group_repeat_rate: ratio(group_hits, groups.len()),
        probe_facts: probe.len(),
        probe_groups: groups.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::group_snapshots;

    fn q(s: u32, p: u32, o: u32, t: u32) -> Quadruple {
        Quadruple::new(s, p, o, t)
    }

    #[test]
    fn absorb_and_lookup() {
        let mut v = HistVocab::new();
        assert!(v.lookup(1, 0).is_empty());
        v.absorb_snapshot(0, &[q(1, 0, 2, 0)]).unwrap();
        assert_eq!(v.lookup(1, 0), vec![2]);
        assert_eq!(v.frontier(), 1);
        v.absorb_snapshot(1, &[q(1, 0, 2, 1)]).unwrap();
        assert_eq!(v.lookup(1, 0), vec![2]);
        v.absorb_snapshot(2, &[q(1, 0, 3, 2)]).unwrap();
        assert_eq!(v.lookup(1, 0), vec![2, 3]);
        assert_eq!(v.objects(1, 0).unwrap()[&2], 2);
    }

    #[test]
    fn out_of_order_absorb_is_rejected() {
        let mut v = HistVocab::new();
        assert!(matches!(
            v.absorb_snapshot(1, &[]),
            Err(Error::Sequencing { expected: 0, got: 1 })
        ));
    }

    #[test]
    fn eighteen_prior_champions() {
        // One champion per season; the 2018 query sees every earlier one.
        let (league, champion) = (0, 0);
        let seasons: Vec<_> = (0..18).map(|t| q(league, champion, 100 + t, t)).collect();
        let v = HistVocab::from_sequence(&group_snapshots(&seasons), 18);
        assert_eq!(v.lookup(league, champion), (100..118).collect::<Vec<_>>());
    }

    #[test]
    fn mask_examples() {
        let mut v = HistVocab::new();
        v.absorb_snapshot(0, &[q(1, 0, 2, 0), q(1, 0, 5, 0)]).unwrap();
        let m: CopyMask<f64> = v.copy_mask(1, 0, 6, MaskStyle::default());
        assert_eq!(m.as_slice(), &[-100.0, -100.0, 0.0, -100.0, -100.0, 0.0]);
        let empty: CopyMask<f64> = v.copy_mask(4, 0, 3, MaskStyle::default());
        assert_eq!(empty.as_slice(), &[-100.0; 3]);

        let mut full = HistVocab::new();
        full.absorb_snapshot(0, &(0..4).map(|o| q(0, 0, o, 0)).collect::<Vec<_>>())
            .unwrap();
        let m: CopyMask<f32> = full.copy_mask(0, 0, 4, MaskStyle::default());
        assert_eq!(m.as_slice(), &[0.0; 4]);

        let novelty: CopyMask<f64> = v.novelty_mask(1, 0, 6, 100.0);
        assert_eq!(novelty.as_slice(), &[0.0, 0.0, -100.0, 0.0, 0.0, -100.0]);
    }

    #[test]
    fn mask_present_values() {
        let mut v = HistVocab::new();
        v.absorb_snapshot(0, &[q(0, 0, 1, 0)]).unwrap();
        v.absorb_snapshot(1, &[q(0, 0, 1, 1)]).unwrap();
        let style = |present| MaskStyle {
            magnitude: 50.0,
            present,
        };
        let ind: CopyMask<f64> = v.copy_mask(0, 0, 3, style(PresentValue::Indicator));
        assert_eq!(ind.as_slice(), &[-50.0, 1.0, -50.0]);
        let cnt: CopyMask<f64> = v.copy_mask(0, 0, 3, style(PresentValue::Count));
        assert_eq!(cnt.as_slice(), &[-50.0, 2.0, -50.0]);
    }

    #[test]
    fn recurrence_examples() {
        let s = recurrence_stats(&[q(1, 0, 2, 0)], &[q(1, 0, 2, 5)]);
        assert_eq!((s.fact_repeat_rate, s.group_repeat_rate), (1.0, 1.0));
        let s = recurrence_stats(&[q(1, 0, 2, 0)], &[q(3, 0, 2, 5)]);
        assert_eq!((s.fact_repeat_rate, s.group_repeat_rate), (0.0, 0.0));
        let s = recurrence_stats(
            &[q(1, 0, 2, 0)],
            &[q(1, 0, 2, 5), q(1, 0, 3, 5), q(2, 0, 2, 5), q(2, 1, 2, 5)],
        );
        assert_eq!(s.fact_repeat_rate, 0.25);
        assert!((s.group_repeat_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(recurrence_stats(&[], &[]).fact_repeat_rate, 0.0);
    }
}

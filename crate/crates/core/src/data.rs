//! Temporal fact quadruples: parsing, timestamp normalization, reciprocal
//! augmentation, chronological splitting and snapshot grouping.
//!
//! The on-disk format is the one used by the public ICEWS/GDELT/WIKI/YAGO
//! benchmark dumps: one fact per line, `subject<TAB>relation<TAB>object<TAB>time`
//! with any further columns ignored, plus a `stat.txt` holding `N R`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// One temporal fact `(subject, relation, object, time)`.
///
/// `time` holds the raw timestamp straight out of a file and the 0-based
/// snapshot index once [`normalize_timestamps`] has run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: u32,
}

impl Quadruple {
    pub const fn new(subject: EntityId, relation: RelationId, object: EntityId, time: u32) -> Self {
        Quadruple {
            subject,
            relation,
            object,
            time,
        }
    }

    pub fn triple(&self) -> (EntityId, RelationId, EntityId) {
        (self.subject, self.relation, self.object)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub num_entities: u32,
    /// Relation count before reciprocal augmentation.
    pub num_relations: u32,
    pub num_snapshots: u32,
    /// Raw time units per snapshot.
    pub granularity: u32,
}

impl DatasetMeta {
    pub fn new(num_entities: u32, num_relations: u32) -> Self {
        DatasetMeta {
            num_entities,
            num_relations,
            num_snapshots: 0,
            granularity: 1,
        }
    }

    pub fn with_granularity(mut self, granularity: u32) -> Self {
        self.granularity = granularity;
        self
    }
}

fn parse_field(line_no: usize, field: &str, name: &str) -> Result<u32> {
    field.parse::<u32>().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("{name} field {field:?} is not a non-negative integer"),
    })
}

fn check_bound(line: usize, field: &'static str, value: u32, bound: u32) -> Result<()> {
    if value >= bound {
        return Err(Error::Bounds {
            line,
            field,
            value: value.into(),
            bound: bound.into(),
        });
    }
    Ok(())
}

fn parse_line(line_no: usize, line: &str, meta: &DatasetMeta) -> Result<Option<Quadruple>> {
    let mut fields = line.split_whitespace();
    let mut next = || fields.next();
    let (Some(s), Some(p), Some(o), Some(t)) = (next(), next(), next(), next()) else {
        if line.trim().is_empty() {
            return Ok(None);
        }
        return Err(Error::Parse {
            line: line_no,
            message: "expected at least 4 fields".into(),
        });
    };
    let quad = Quadruple::new(
        parse_field(line_no, s, "subject")?,
        parse_field(line_no, p, "relation")?,
        parse_field(line_no, o, "object")?,
        parse_field(line_no, t, "time")?,
    );
    check_bound(line_no, "subject", quad.subject, meta.num_entities)?;
    check_bound(line_no, "relation", quad.relation, meta.num_relations)?;
    check_bound(line_no, "object", quad.object, meta.num_entities)?;
    Ok(Some(quad))
}

/// Parses a quadruple stream. Times are left raw; line numbers in errors are 1-based.
pub fn parse_quadruple_file<R: BufRead>(reader: R, meta: &DatasetMeta) -> Result<Vec<Quadruple>> {
    let mut quads = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if let Some(q) = parse_line(idx + 1, &line, meta)? {
            quads.push(q);
        }
    }
    Ok(quads)
}

pub fn parse_quadruples(text: &str, meta: &DatasetMeta) -> Result<Vec<Quadruple>> {
    parse_quadruple_file(text.as_bytes(), meta)
}

pub fn write_quadruples<W: Write>(mut out: W, quads: &[Quadruple]) -> io::Result<()> {
    for q in quads {
        writeln!(out, "{}\t{}\t{}\t{}", q.subject, q.relation, q.object, q.time)?;
    }
    Ok(())
}

/// Parses `stat.txt`: the first two whitespace-separated integers are `N R`.
pub fn parse_stat(text: &str) -> Result<(u32, u32)> {
    let mut fields = text.split_whitespace();
    let mut next = |name| -> Result<u32> {
        let f = fields.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("stat file is missing {name}"),
        })?;
        parse_field(1, f, name)
    };
    let n = next("entity count")?;
    let r = next("relation count")?;
    if n == 0 || r == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "entity and relation counts must be positive".into(),
        });
    }
    Ok((n, r))
}

/// Maps raw times to snapshot indices: `floor(raw / granularity)`, re-based
/// so the earliest snapshot is 0. Returns the facts and the snapshot count.
pub fn normalize_timestamps(quads: &[Quadruple], granularity: u32) -> Result<(Vec<Quadruple>, u32)> {
    if granularity == 0 {
        return Err(Error::Parameter("granularity must be positive".into()));
    }
    let origin = quads.iter().map(|q| q.time / granularity).min().unwrap_or(0);
    let out: Vec<Quadruple> = quads
        .iter()
        .map(|q| Quadruple {
            time: q.time / granularity - origin,
            ..*q
        })
        .collect();
    let num_snapshots = out.iter().map(|q| q.time + 1).max().unwrap_or(0);
    Ok((out, num_snapshots))
}

/// Adds the inverse `(o, p + R, s, t)` of every fact. Returns the augmented
/// facts (originals first, then inverses in the same order) and `2R`.
pub fn augment_reciprocal(quads: &[Quadruple], num_relations: u32) -> (Vec<Quadruple>, u32) {
    let mut out = Vec::with_capacity(quads.len() * 2);
    out.extend_from_slice(quads);
    out.extend(quads.iter().map(|q| Quadruple {
        subject: q.object,
        relation: q.relation + num_relations,
        object: q.subject,
        time: q.time,
    }));
    (out, num_relations * 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitScheme {
    /// 80/10/10 train/valid/test.
    ThreeWay,
    /// 80/20 train/test, no validation split.
    TwoWay,
}

impl SplitScheme {
    fn targets(self) -> &'static [f64] {
        match self {
            SplitScheme::ThreeWay => &[0.8, 0.1, 0.1],
            SplitScheme::TwoWay => &[0.8, 0.2],
        }
    }
}

impl FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "80/10/10" => Ok(SplitScheme::ThreeWay),
            "80/20" => Ok(SplitScheme::TwoWay),
            other => Err(Error::Config(format!(
                "unknown split {other:?}, expected 80/10/10 or 80/20"
            ))),
        }
    }
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitScheme::ThreeWay => "80/10/10",
            SplitScheme::TwoWay => "80/20",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Quadruple>,
    pub valid: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
    /// First snapshot index of each split after train (`[valid, test]` or `[test]`).
    pub boundaries: Vec<u32>,
}

/// Splits normalized facts on snapshot boundaries, choosing the boundaries
/// whose fact-count fractions have the smallest L1 distance to the scheme's
/// targets. Ties go to the earliest boundaries. Every split must receive at
/// least one fact.
pub fn chronological_split(quads: &[Quadruple], scheme: SplitScheme) -> Result<Split> {
    let parts = scheme.targets().len();
    let num_snapshots = quads.iter().map(|q| q.time as usize + 1).max().unwrap_or(0);
    if num_snapshots < parts {
        return Err(Error::Split(format!(
            "{num_snapshots} snapshots cannot be split {scheme}"
        )));
    }
    let mut prefix = vec![0usize; num_snapshots + 1];
    for q in quads {
        prefix[q.time as usize + 1] += 1;
    }
    for k in 0..num_snapshots {
        prefix[k + 1] += prefix[k];
    }
    let total = quads.len() as f64;
    let targets = scheme.targets();
    let deviation = |cuts: &[usize]| -> Option<f64> {
        let mut prev = 0;
        let mut dev = 0.0;
        for (i, &target) in targets.iter().enumerate() {
            let end = cuts.get(i).copied().unwrap_or(num_snapshots);
            let count = prefix[end] - prefix[prev];
            if count == 0 {
                return None;
            }
            dev += (count as f64 / total - target).abs();
            prev = end;
        }
        Some(dev)
    };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |cuts: Vec<usize>| {
        if let Some(dev) = deviation(&cuts) {
            if best.as_ref().is_none_or(|(b, _)| dev < *b) {
                best = Some((dev, cuts));
            }
        }
    };
    match scheme {
        SplitScheme::TwoWay => (1..num_snapshots).for_each(|a| consider(vec![a])),
        SplitScheme::ThreeWay => {
            for a in 1..num_snapshots {
                for b in a + 1..num_snapshots {
                    consider(vec![a, b]);
                }
            }
        }
    }
    let (_, cuts) = best.ok_or_else(|| Error::Split("no boundary gives every split a fact".into()))?;

    let mut split = Split {
        boundaries: cuts.iter().map(|&c| c as u32).collect(),
        ..Split::default()
    };
    for q in quads {
        let t = q.time as usize;
        let bucket = cuts.iter().filter(|&&c| t >= c).count();
        match (scheme, bucket) {
            (_, 0) => split.train.push(*q),
            (SplitScheme::ThreeWay, 1) => split.valid.push(*q),
            _ => split.test.push(*q),
        }
    }
    Ok(split)
}

/// Facts grouped by snapshot index; entry `k` holds the sorted, deduplicated
/// facts of snapshot `k`. Gaps are kept as empty snapshots.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SnapshotSequence {
    snapshots: Vec<Vec<Quadruple>>,
}

impl SnapshotSequence {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn get(&self, k: usize) -> Option<&[Quadruple]> {
        self.snapshots.get(k).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Quadruple]> {
        self.snapshots.iter().map(Vec::as_slice)
    }

    pub fn num_facts(&self) -> usize {
        self.snapshots.iter().map(Vec::len).sum()
    }

    /// Flattens back into a fact list, in snapshot order.
    pub fn facts(&self) -> Vec<Quadruple> {
        self.snapshots.iter().flatten().copied().collect()
    }

    /// Pads with empty snapshots up to `len` entries.
    pub fn pad_to(&mut self, len: usize) {
        if self.snapshots.len() < len {
            self.snapshots.resize_with(len, Vec::new);
        }
    }
}

pub fn group_snapshots(quads: &[Quadruple]) -> SnapshotSequence {
    let len = quads.iter().map(|q| q.time as usize + 1).max().unwrap_or(0);
    let mut sets: Vec<BTreeSet<Quadruple>> = vec![BTreeSet::new(); len];
    for q in quads {
        sets[q.time as usize].insert(*q);
    }
    SnapshotSequence {
        snapshots: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}

/// Options that override what a dataset directory's `dataset.cfg` says.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    pub granularity: Option<u32>,
    pub reciprocal: Option<bool>,
}

/// A prepared dataset: normalized train/valid/test splits sharing one time axis.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: Vec<Quadruple>,
    pub valid: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
    augmented: bool,
}

pub const DATASET_CONFIG: &str = "dataset.cfg";

impl Dataset {
    /// Normalizes the three raw splits jointly so they share one origin.
    pub fn from_raw_splits(
        meta: DatasetMeta,
        train: Vec<Quadruple>,
        valid: Vec<Quadruple>,
        test: Vec<Quadruple>,
    ) -> Result<Self> {
        let (n_train, n_valid) = (train.len(), valid.len());
        let all: Vec<Quadruple> = train.into_iter().chain(valid).chain(test).collect();
        let (mut all, num_snapshots) = normalize_timestamps(&all, meta.granularity)?;
        let test = all.split_off(n_train + n_valid);
        let valid = all.split_off(n_train);
        Ok(Dataset {
            meta: DatasetMeta { num_snapshots, ..meta },
            train: all,
            valid,
            test,
            augmented: false,
        })
    }

    /// Loads `train.txt`, `valid.txt` (optional), `test.txt`, `stat.txt` and
    /// the optional `dataset.cfg` from `dir`.
    pub fn load(dir: &Path, opts: LoadOptions) -> Result<Self> {
        let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| Error::io(dir.join(name), e));
        let (n, r) = parse_stat(&read("stat.txt")?)?;
        let cfg = match fs::read_to_string(dir.join(DATASET_CONFIG)) {
            Ok(text) => KeyValues::parse(&text)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => KeyValues::default(),
            Err(e) => return Err(Error::io(dir.join(DATASET_CONFIG), e)),
        };
        let granularity = match opts.granularity {
            Some(g) => g,
            None => cfg.get_parsed("granularity")?.unwrap_or(1),
        };
        let reciprocal = match opts.reciprocal {
            Some(r) => r,
            None => cfg.get_parsed("reciprocal")?.unwrap_or(true),
        };
        let meta = DatasetMeta::new(n, r).with_granularity(granularity);
        let load_split = |name: &str, required: bool| -> Result<Vec<Quadruple>> {
            let path = dir.join(name);
            match fs::File::open(&path) {
                Ok(f) => parse_quadruple_file(BufReader::new(f), &meta).map_err(|e| match e {
                    Error::Parse { line, message } => Error::Parse {
                        line,
                        message: format!("{}: {message}", path.display()),
                    },
                    other => other,
                }),
                Err(e) if !required && e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
                Err(e) => Err(Error::io(path, e)),
            }
        };
        let mut ds = Dataset::from_raw_splits(
            meta,
            load_split("train.txt", true)?,
            load_split("valid.txt", false)?,
            load_split("test.txt", true)?,
        )?;
        if reciprocal {
            ds.augment()?;
        }
        Ok(ds)
    }

    /// Writes the original (non-reciprocal) facts of every split plus
    /// `stat.txt` and a `dataset.cfg` recording the reciprocal preference.
    pub fn save(&self, dir: &Path, extra: &[(String, String)]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let r = self.meta.num_relations;
        for (name, facts) in [
            ("train.txt", &self.train),
            ("valid.txt", &self.valid),
            ("test.txt", &self.test),
        ] {
            let originals: Vec<Quadruple> = facts.iter().filter(|q| q.relation < r).copied().collect();
            let path = dir.join(name);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = io::BufWriter::new(file);
            write_quadruples(&mut out, &originals)
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
        let stat = dir.join("stat.txt");
        fs::write(&stat, format!("{}\t{}\n", self.meta.num_entities, r)).map_err(|e| Error::io(&stat, e))?;
        let mut cfg = KeyValues::default();
        cfg.set("granularity", "1");
        cfg.set("reciprocal", self.augmented.to_string());
        cfg.set("num_snapshots", self.meta.num_snapshots.to_string());
        for (k, v) in extra {
            cfg.set(k, v.clone());
        }
        let path = dir.join(DATASET_CONFIG);
        fs::write(&path, cfg.to_string()).map_err(|e| Error::io(&path, e))
    }

    /// Adds reciprocal facts to every split. Fails if already augmented.
    pub fn augment(&mut self) -> Result<()> {
        if self.augmented {
            return Err(Error::Parameter("dataset is already reciprocally augmented".into()));
        }
        let r = self.meta.num_relations;
        for split in [&mut self.train, &mut self.valid, &mut self.test] {
            *split = augment_reciprocal(split, r).0;
        }
        self.augmented = true;
        Ok(())
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Relation id bound seen by the model (`2R` once augmented).
    pub fn model_relations(&self) -> u32 {
        if self.augmented {
            self.meta.num_relations * 2
        } else {
            self.meta.num_relations
        }
    }

    /// Training facts grouped by snapshot.
    pub fn train_snapshots(&self) -> SnapshotSequence {
        group_snapshots(&self.train)
    }

    pub fn all_facts(&self) -> impl Iterator<Item = &Quadruple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: u32, p: u32, o: u32, t: u32) -> Quadruple {
        Quadruple::new(s, p, o, t)
    }

    #[test]
    fn parse_then_normalize_single_line() {
        let meta = DatasetMeta::new(20, 10);
        let quads = parse_quadruples("0\t0\t1\t0\n8\t4\t12\t48\n", &meta).unwrap();
        let (norm, t) = normalize_timestamps(&quads, 24).unwrap();
        assert_eq!(norm[1], q(8, 4, 12, 2));
        assert_eq!(t, 3);
    }

    #[test]
    fn parse_empty_and_extra_columns() {
        let meta = DatasetMeta::new(5, 5);
        assert!(parse_quadruples("", &meta).unwrap().is_empty());
        let quads = parse_quadruples("1\t2\t3\t4\t0\textra\n\n", &meta).unwrap();
        assert_eq!(quads, vec![q(1, 2, 3, 4)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let meta = DatasetMeta::new(5, 5);
        match parse_quadruples("1\t2\t3\t4\n1\t2\tx\t4\n", &meta) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_quadruples("1\t2\t3\n", &meta) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_quadruples("1\t2\t3\t0\n1\t5\t3\t0\n", &meta) {
            Err(Error::Bounds { line, field, .. }) => assert_eq!((line, field), (2, "relation")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_quadruples("1\t0\t-3\t0", &meta),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let times = |ts: &[u32], g| {
            let quads: Vec<_> = ts.iter().map(|&t| q(0, 0, 0, t)).collect();
            normalize_timestamps(&quads, g)
                .unwrap()
                .0
                .iter()
                .map(|q| q.time)
                .collect::<Vec<_>>()
        };
        assert_eq!(times(&[0, 15, 30], 15), vec![0, 1, 2]);
        assert_eq!(times(&[24, 48], 24), vec![0, 1]);
        assert_eq!(times(&[0, 0, 24], 24), vec![0, 0, 1]);
        assert!(normalize_timestamps(&[], 0).is_err());
    }

    #[test]
    fn reciprocal_examples() {
        let (aug, r) = augment_reciprocal(&[q(1, 0, 2, 0)], 3);
        assert_eq!(aug, vec![q(1, 0, 2, 0), q(2, 3, 1, 0)]);
        assert_eq!(r, 6);
        assert!(augment_reciprocal(&[], 3).0.is_empty());
        let ten: Vec<_> = (0..10).map(|i| q(i, i % 5, i + 1, i)).collect();
        let (aug, r) = augment_reciprocal(&ten, 5);
        assert_eq!((aug.len(), r), (20, 10));
        let restricted: Vec<_> = aug.iter().filter(|q| q.relation < 5).copied().collect();
        assert_eq!(restricted, ten);
    }

    #[test]
    fn dataset_refuses_double_augmentation() {
        let mut ds =
            Dataset::from_raw_splits(DatasetMeta::new(4, 2), vec![q(0, 0, 1, 0)], vec![], vec![q(1, 1, 2, 1)]).unwrap();
        ds.augment().unwrap();
        assert_eq!(ds.model_relations(), 4);
        assert!(ds.augment().is_err());
    }

    #[test]
    fn split_equal_snapshots() {
        let quads: Vec<_> = (0..10).flat_map(|t| (0..4).map(move |i| q(i, 0, i, t))).collect();
        let split = chronological_split(&quads, SplitScheme::ThreeWay).unwrap();
        assert_eq!(split.boundaries, vec![8, 9]);
        assert_eq!((split.train.len(), split.valid.len(), split.test.len()), (32, 4, 4));
    }

    #[test]
    fn split_two_way_and_too_few_snapshots() {
        let quads: Vec<_> = (0..5).map(|t| q(0, 0, 0, t)).collect();
        let split = chronological_split(&quads, SplitScheme::TwoWay).unwrap();
        assert_eq!(split.boundaries, vec![4]);
        assert!(split.valid.is_empty());
        let two = [q(0, 0, 0, 0), q(0, 0, 0, 1)];
        assert!(matches!(
            chronological_split(&two, SplitScheme::ThreeWay),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn group_dedups_and_keeps_gaps() {
        let seq = group_snapshots(&[q(1, 0, 2, 0), q(1, 0, 2, 0), q(3, 1, 4, 1)]);
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.get(0).unwrap(), &[q(1, 0, 2, 0)]);
        assert_eq!(seq.get(1).unwrap(), &[q(3, 1, 4, 1)]);
        assert!(group_snapshots(&[]).is_empty());
        let gap = group_snapshots(&[q(0, 0, 1, 0), q(0, 0, 2, 2), q(1, 0, 2, 2)]);
        assert_eq!(gap.len(), 3);
        assert!(gap.get(1).unwrap().is_empty());
    }

    #[test]
    fn stat_parsing() {
        assert_eq!(parse_stat("23033\t256\t0\n").unwrap(), (23033, 256));
        assert!(parse_stat("12").is_err());
        assert!(parse_stat("0 4").is_err());
    }
}

//! End-to-end gate: one numbered check per line, each printed as PASS or FAIL.
//!
//! Run with `cargo test -p copygen --test acceptance`. This target has no
//! libtest harness, so the lines print even when output is captured elsewhere.

// the reference implementations below are deliberately written as index loops
#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use copygen::data::{chronological_split, group_snapshots, SplitScheme};
use copygen::eval::{build_filter, rank_of_truth, rank_with_exclusions, FilterIndex, FilterRegime};
use copygen::synth::{generate, SynthConfig};
use copygen::train::{batch_gradients, batch_loss, init_params, Example};
use copygen::vocab::PresentValue;
use copygen::{
    evaluate, fit, Checkpoint, Dataset, EvalConfig, EvalReport, HistVocab, MaskStyle, Mode, ModelParams, Predictor,
    Quadruple, Query, TrainConfig, Trained,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_params(n: usize, r: usize, d: usize, scale: f64, g: &mut ChaCha8Rng) -> ModelParams<f64> {
    let mut p = ModelParams::zeros(n, r, d);
    for t in p.tensors_mut() {
        for x in t.iter_mut() {
            *x = g.gen_range(-scale..scale);
        }
    }
    p
}

fn random_facts(n: u32, r: u32, snapshots: u32, per: usize, g: &mut ChaCha8Rng) -> Vec<Quadruple> {
    let mut out = Vec::new();
    for t in 0..snapshots {
        for _ in 0..per {
            out.push(Quadruple::new(
                g.gen_range(0..n),
                g.gen_range(0..r),
                g.gen_range(0..n),
                t,
            ));
        }
    }
    out
}

fn vocab_upto(facts: &[Quadruple], frontier: usize) -> HistVocab {
    HistVocab::from_sequence(&group_snapshots(facts), frontier)
}

// 1
fn gradient_check() -> Outcome {
    const H: f64 = 1e-4;
    let mut g = rng(1);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for alpha in [0.0, 0.5, 1.0] {
        for _ in 0..8 {
            let n = g.gen_range(2..=10);
            let r = g.gen_range(1..=3);
            let d = g.gen_range(1..=5);
            let params = random_params(n, r, d, 0.8, &mut g);
            let history = random_facts(n as u32, r as u32, 3, 2 * n, &mut g);
            let step = g.gen_range(0..=3);
            let vocab = vocab_upto(&history, step);
            let batch: Vec<Example> = (0..g.gen_range(1..=4))
                .map(|_| {
                    // bias towards historical pairs so the copy path is active
                    let q = history[g.gen_range(0..history.len())];
                    let truth = if g.gen_bool(0.6) {
                        q.object
                    } else {
                        g.gen_range(0..n as u32)
                    };
                    Example {
                        query: Query::new(q.subject, q.relation, step),
                        truth,
                    }
                })
                .collect();
            let mask = MaskStyle::default();
            let (_, grads) = batch_gradients(&params, &batch, &vocab, alpha, mask).map_err(|e| e.to_string())?;
            let analytic = grads.tensors();
            for ti in 0..7 {
                for j in 0..analytic[ti].len() {
                    let at = |delta: f64| {
                        let mut p = params.clone();
                        p.tensors_mut()[ti][j] += delta;
                        batch_loss(&p, &batch, &vocab, alpha, mask).unwrap()
                    };
                    let numeric = (at(H) - at(-H)) / (2.0 * H);
                    let a = analytic[ti][j];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
            instances += 1;
        }
    }
    let msg = format!("{instances} instances, max relative error {worst:.2e}");
    if instances >= 20 && worst <= 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 2
fn normalization() -> Outcome {
    let mut g = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = g.gen_range(2..=40);
        let r = g.gen_range(1..=4);
        let d = g.gen_range(1..=8);
        let params = random_params(n, r, d, 1.0, &mut g);
        let history = random_facts(n as u32, r as u32, 2, n, &mut g);
        let vocab = vocab_upto(&history, 2);
        let alpha = g.gen_range(0.0..=1.0);
        let predictor = Predictor::new(&params, &vocab, MaskStyle::default(), alpha, Mode::Full).unwrap();
        let q = Query::new(g.gen_range(0..n as u32), g.gen_range(0..r as u32), 2);
        let s = predictor.scores(&q);
        for sum in [s.copy.unwrap().sum(), s.generation.unwrap().sum(), s.combined.sum()] {
            worst = worst.max((sum - 1.0).abs());
        }
    }
    let msg = format!("1000 queries, max |sum - 1| = {worst:.2e}");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 3
fn mask_dominance() -> Outcome {
    let mut g = rng(3);
    let bound = (-98.0f64).exp();
    let mut worst_ratio: f64 = 0.0;
    let mut queries = 0;
    while queries < 100 {
        let n = g.gen_range(3..=30);
        let params = random_params(n, 2, 4, 1.0, &mut g);
        let history = random_facts(n as u32, 2, 2, n / 2 + 1, &mut g);
        let vocab = vocab_upto(&history, 2);
        let q = history[g.gen_range(0..history.len())];
        let present = vocab.lookup(q.subject, q.relation);
        if present.is_empty() || present.len() == n {
            continue;
        }
        let mask = vocab.copy_mask(q.subject, q.relation, n, MaskStyle::with_magnitude(100.0));
        let pc = params.copy_probs(&Query::new(q.subject, q.relation, 2), &mask);
        let p = pc.as_slice();
        let min_present = present.iter().map(|&e| p[e as usize]).fold(f64::INFINITY, f64::min);
        let max_absent = (0..n as u32)
            .filter(|e| !present.contains(e))
            .map(|e| p[e as usize])
            .fold(0.0, f64::max);
        worst_ratio = worst_ratio.max(max_absent / min_present);
        queries += 1;
    }
    let msg = format!("100 queries, max absent/present = {worst_ratio:.3e} (bound {bound:.3e})");
    if worst_ratio <= bound {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 4
fn vocabulary_oracle() -> Outcome {
    let mut g = rng(4);
    let mut checks = 0;
    for dataset in 0..50 {
        let n = g.gen_range(2..=12);
        let r = g.gen_range(1..=3);
        let facts = random_facts(n, r, 10, g.gen_range(0..=15), &mut g);
        let seq = group_snapshots(&facts);
        let mut vocab = HistVocab::new();
        for k in 0..=10usize {
            // counts are the number of snapshots an object appeared in
            let distinct: BTreeSet<&Quadruple> = facts.iter().filter(|q| (q.time as usize) < k).collect();
            let mut brute: BTreeMap<(u32, u32), BTreeMap<u32, u32>> = BTreeMap::new();
            for q in distinct {
                *brute
                    .entry((q.subject, q.relation))
                    .or_default()
                    .entry(q.object)
                    .or_default() += 1;
            }
            if vocab.num_pairs() != brute.len() {
                return Err(format!("dataset {dataset} frontier {k}: pair count differs"));
            }
            for s in 0..n {
                for p in 0..r {
                    let want = brute.get(&(s, p));
                    if vocab.objects(s, p) != want {
                        return Err(format!("dataset {dataset} frontier {k}: ({s}, {p}) differs"));
                    }
                    let keys: Vec<u32> = want.map(|m| m.keys().copied().collect()).unwrap_or_default();
                    if vocab.lookup(s, p) != keys {
                        return Err(format!("dataset {dataset} frontier {k}: lookup ({s}, {p}) differs"));
                    }
                }
            }
            checks += 1;
            if k < 10 {
                vocab
                    .absorb_snapshot(k, seq.get(k).unwrap_or(&[]))
                    .map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(format!("50 datasets, {checks} frontiers identical"))
}

fn oracle_rank(scores: &[f64], truth: u32, excluded: &BTreeSet<u32>) -> usize {
    let mut order: Vec<u32> = (0..scores.len() as u32)
        .filter(|e| *e == truth || !excluded.contains(e))
        .collect();
    order.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.iter().position(|&e| e == truth).unwrap() + 1
}

// 5
fn ranking_oracle() -> Outcome {
    let mut g = rng(5);
    let mut compared = 0;
    for _ in 0..100 {
        let n = g.gen_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| g.gen_range(0..6) as f64 / 5.0).collect();
        let truth = g.gen_range(0..n as u32);
        let excluded: BTreeSet<u32> = (0..n as u32).filter(|_| g.gen_bool(0.3)).collect();
        let sorted: Vec<u32> = excluded.iter().copied().collect();
        if rank_with_exclusions(&scores, truth, &[]) != oracle_rank(&scores, truth, &BTreeSet::new())
            || rank_with_exclusions(&scores, truth, &sorted) != oracle_rank(&scores, truth, &excluded)
        {
            return Err(format!("rank mismatch on {scores:?} truth {truth}"));
        }
        compared += 2;
    }

    // Through the evaluator, on model scores.
    for _ in 0..5 {
        let n = g.gen_range(5..=50);
        let params = random_params(n, 2, 3, 0.5, &mut g);
        let mut facts = random_facts(n as u32, 2, 4, 3 * n, &mut g);
        facts.sort();
        facts.dedup();
        let (train, test): (Vec<Quadruple>, Vec<Quadruple>) = facts.iter().partition(|q| q.time < 3);
        let test: Vec<Quadruple> = test.into_iter().take(20).collect();
        let vocab = vocab_upto(&train, 3);
        for regime in [FilterRegime::Raw, FilterRegime::Static] {
            let filter = FilterIndex::build(&facts, regime);
            let cfg = EvalConfig {
                alpha: 0.7,
                mode: Mode::Full,
                ..EvalConfig::default()
            };
            let summary = evaluate(&params, &test, &vocab, &filter, &cfg).map_err(|e| e.to_string())?;
            let predictor = Predictor::new(&params, &vocab, cfg.mask, cfg.alpha, cfg.mode).unwrap();
            for (q, &got) in test.iter().zip(&summary.ranks) {
                let scores = predictor
                    .scores(&Query::new(q.subject, q.relation, q.time as usize))
                    .combined
                    .into_vec();
                let excluded: BTreeSet<u32> = if regime == FilterRegime::Raw {
                    BTreeSet::new()
                } else {
                    facts
                        .iter()
                        .filter(|f| f.subject == q.subject && f.relation == q.relation)
                        .map(|f| f.object)
                        .collect()
                };
                let want = oracle_rank(&scores, q.object, &excluded);
                if got != want || rank_of_truth(&scores, q, &filter) != want {
                    return Err(format!("evaluator rank {got}, oracle {want}, regime {regime}"));
                }
                compared += 1;
            }
        }
    }
    if compared >= 200 {
        Ok(format!("{compared} ranks identical"))
    } else {
        Err(format!("only {compared} ranks compared"))
    }
}

fn close(a: f64, b: f64) -> bool {
    if b == 0.0 {
        a == 0.0
    } else {
        (a - b).abs() <= 1e-12 * b.abs()
    }
}

fn scalar_softmax(z: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let mut total = 0.0;
    let mut e = vec![0.0; z.len()];
    for i in 0..z.len() {
        e[i] = (z[i] - m).exp();
        total += e[i];
    }
    for v in e.iter_mut() {
        *v /= total;
    }
    e
}

// 6
fn forward_oracle() -> Outcome {
    let mut g = rng(6);
    let mut values = 0;
    for _ in 0..200 {
        let n = g.gen_range(2..=12);
        let r = g.gen_range(1..=3);
        let d = g.gen_range(1..=6);
        let p = random_params(n, r, d, 1.0, &mut g);
        let history = random_facts(n as u32, r as u32, 2, n, &mut g);
        let vocab = vocab_upto(&history, 2);
        let (s, rel, step) = (g.gen_range(0..n), g.gen_range(0..r), g.gen_range(2..6));
        let alpha = g.gen_range(0.0..=1.0);
        let present = [PresentValue::Zero, PresentValue::Indicator, PresentValue::Count][g.gen_range(0..3)];
        let style = MaskStyle {
            magnitude: 100.0,
            present,
        };

        let mut x = vec![0.0; 3 * d];
        for j in 0..d {
            x[j] = p.entity_emb[s * d + j];
            x[d + j] = p.relation_emb[rel * d + j];
            x[2 * d + j] = (step + 1) as f64 * p.time_unit[j];
        }
        let mut c = vec![0.0; n];
        let mut gl = vec![0.0; n];
        for i in 0..n {
            let (mut zc, mut zg) = (p.copy_bias[i], p.gen_bias[i]);
            for j in 0..3 * d {
                zc += p.copy_weight[i * 3 * d + j] * x[j];
                zg += p.gen_weight[i * 3 * d + j] * x[j];
            }
            let m = match vocab.objects(s as u32, rel as u32).and_then(|o| o.get(&(i as u32))) {
                None => -100.0,
                Some(&count) => match present {
                    PresentValue::Zero => 0.0,
                    PresentValue::Indicator => 1.0,
                    PresentValue::Count => count as f64,
                },
            };
            c[i] = zc.tanh() + m;
            gl[i] = zg;
        }
        let pc = scalar_softmax(&c);
        let pg = scalar_softmax(&gl);
        let mut mix = vec![0.0; n];
        for i in 0..n {
            mix[i] = alpha * pc[i] + (1.0 - alpha) * pg[i];
        }

        let q = Query::new(s as u32, rel as u32, step);
        let got = Predictor::new(&p, &vocab, style, alpha, Mode::Full).unwrap().scores(&q);
        let pairs = [
            (got.copy.unwrap().into_vec(), pc),
            (got.generation.unwrap().into_vec(), pg),
            (got.combined.into_vec(), mix),
        ];
        for (vectorized, scalar) in &pairs {
            for (a, b) in vectorized.iter().zip(scalar) {
                if !close(*a, *b) {
                    return Err(format!("{a:e} vs scalar {b:e}"));
                }
                values += 1;
            }
        }
    }
    Ok(format!("{values} probabilities within 1e-12 relative"))
}

struct Experiment {
    dataset: Dataset,
}

impl Experiment {
    fn synthetic(cfg: SynthConfig) -> Self {
        let generated = generate(&cfg).unwrap();
        let split = chronological_split(&generated.sequence.facts(), SplitScheme::ThreeWay).unwrap();
        let mut dataset = Dataset::from_raw_splits(cfg.meta(), split.train, split.valid, split.test).unwrap();
        dataset.augment().unwrap();
        Experiment { dataset }
    }

    fn train(&self, alpha: f64) -> Trained {
        let cfg = TrainConfig {
            alpha,
            dim: 32,
            epochs: 30,
            ..TrainConfig::default()
        };
        fit(&self.dataset, &cfg).unwrap()
    }

    fn test_report(
        &self,
        params: &ModelParams<f32>,
        vocab: &HistVocab,
        alpha: f64,
        mode: Mode,
    ) -> (EvalReport, Vec<usize>) {
        let ds = &self.dataset;
        let filter = build_filter(&[&ds.train, &ds.valid, &ds.test]);
        let cfg = EvalConfig {
            alpha,
            mode,
            mask: MaskStyle::default(),
            num_relations: ds.meta.num_relations,
            augmented: ds.is_augmented(),
        };
        let s = evaluate(params, &ds.test, vocab, &filter, &cfg).unwrap();
        (s.overall, s.ranks)
    }
}

fn bitwise(a: &EvalReport, b: &EvalReport) -> bool {
    [
        (a.mrr, b.mrr),
        (a.hits1, b.hits1),
        (a.hits3, b.hits3),
        (a.hits10, b.hits10),
    ]
    .iter()
    .all(|(x, y)| x.to_bits() == y.to_bits())
        && a.count == b.count
}

// 7
fn ablation_identities() -> Outcome {
    let exp = Experiment::synthetic(SynthConfig {
        num_entities: 40,
        num_snapshots: 10,
        facts_per_snapshot: 60,
        ..SynthConfig::default()
    });
    let trained = fit(
        &exp.dataset,
        &TrainConfig {
            dim: 8,
            epochs: 2,
            ..TrainConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cyg");
    Checkpoint {
        params: trained.params.clone(),
        num_snapshots: exp.dataset.meta.num_snapshots,
        mask_magnitude: 100.0,
        alpha: 0.8,
    }
    .save(&path)
    .unwrap();
    let reloaded = Checkpoint::load(&path).unwrap().params;
    let untrained: ModelParams<f32> = init_params(40, 10, 8, &mut rng(7));

    let mut checked = 0;
    for params in [&reloaded, &untrained] {
        for stored_alpha in [0.0, 0.3, 0.8, 1.0] {
            let (copy, copy_ranks) = exp.test_report(params, &trained.vocab, stored_alpha, Mode::CopyOnly);
            let (full1, full1_ranks) = exp.test_report(params, &trained.vocab, 1.0, Mode::Full);
            let (gen, gen_ranks) = exp.test_report(params, &trained.vocab, stored_alpha, Mode::GenOnly);
            let (full0, full0_ranks) = exp.test_report(params, &trained.vocab, 0.0, Mode::Full);
            if !bitwise(&copy, &full1) || copy_ranks != full1_ranks {
                return Err(format!("copy-only {copy:?} != full(1) {full1:?}"));
            }
            if !bitwise(&gen, &full0) || gen_ranks != full0_ranks {
                return Err(format!("gen-only {gen:?} != full(0) {full0:?}"));
            }
            checked += 2;
        }
    }
    Ok(format!("{checked} report pairs bitwise equal"))
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

// 8
fn learnability() -> Outcome {
    let exp = Experiment::synthetic(SynthConfig {
        recurrence: 1.0,
        fixed_objects: true,
        ..SynthConfig::default()
    });
    let start = Instant::now();
    let (report, epochs) = single_threaded(|| {
        let trained = exp.train(0.8);
        let (report, _) = exp.test_report(&trained.params, &trained.vocab, 0.8, Mode::Full);
        (report, trained.log.epochs.len())
    });
    let secs = start.elapsed().as_secs_f64();
    let msg = format!(
        "{epochs} epochs in {secs:.1}s single-threaded, Hits@1 {:.4}, MRR {:.4}",
        report.hits1, report.mrr
    );
    if report.hits1 >= 0.95 && report.mrr >= 0.95 && secs < 120.0 && epochs <= 30 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 9
fn copy_advantage() -> Outcome {
    let exp = Experiment::synthetic(SynthConfig::default());
    let full = exp.train(0.8);
    let gen = exp.train(0.0);
    let (full_report, _) = exp.test_report(&full.params, &full.vocab, 0.8, Mode::Full);
    let (gen_report, _) = exp.test_report(&gen.params, &gen.vocab, 0.0, Mode::GenOnly);
    let curve: Vec<String> = [0.0, 0.2, 0.5, 0.8, 1.0]
        .iter()
        .map(|&a| {
            format!(
                "{a}:{:.3}",
                exp.test_report(&full.params, &full.vocab, a, Mode::Full).0.mrr
            )
        })
        .collect();
    let gap = full_report.mrr - gen_report.mrr;
    let msg = format!(
        "full MRR {:.4}, gen-only MRR {:.4}, gap {gap:.4}; remixed {}",
        full_report.mrr,
        gen_report.mrr,
        curve.join(" ")
    );
    if gap >= 0.10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient check", gradient_check),
        ("normalization", normalization),
        ("mask dominance", mask_dominance),
        ("vocabulary oracle", vocabulary_oracle),
        ("ranking oracle", ranking_oracle),
        ("forward oracle", forward_oracle),
        ("ablation identities", ablation_identities),
        ("learnability", learnability),
        ("copy advantage", copy_advantage),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {} {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

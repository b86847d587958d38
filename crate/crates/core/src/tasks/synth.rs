//! Synthetic token grammar with planted local and bracketed dependencies.
//!
//! Sequences are built from *units*:
//!
//! - a pair `a{i} b{π(i)}` where `π` is a fixed permutation of the pair indices,
//! - a bracket span `o{j} <1-2 pairs> c{j}`,
//! - a single noise token `n{k}`.
//!
//! The masked-LM corpus draws sequences straight from the grammar. The four
//! classification tasks reuse the same token distribution with a label
//! function on top:
//!
//! | task | classes | metric | label |
//! |------|---------|--------|-------|
//! | `grammar` | 2 | MCC | 1 if every pair and bracket is well formed |
//! | `polarity` | 2 | accuracy | 1 if `a{i}` with `i < n_pairs/2` outnumber the rest |
//! | `duplicate` | 2 | Avg Acc & F1 | 1 if the segment after `|` is a reordering of the one before |
//! | `topic` | 3 | accuracy | index of the most frequent `i mod 3` group of `a{i}` tokens |
//!
//! Train and dev splits are drawn from independent streams of the same seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Example, MetricKind, TaskKind, TaskSpec};
use super::vocab::{Vocab, CLS};
use super::TaskError;

pub const SEPARATOR: &str = "|";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarSpec {
    pub n_pairs: usize,
    pub n_brackets: usize,
    pub n_noise: usize,
    pub min_units: usize,
    pub max_units: usize,
    pub p_bracket: f64,
    pub p_noise: f64,
    /// Maximum sequence length including `[CLS]`.
    pub max_len: usize,
    pub permutation_seed: u64,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        Self {
            n_pairs: 12,
            n_brackets: 3,
            n_noise: 4,
            min_units: 4,
            max_units: 10,
            p_bracket: 0.2,
            p_noise: 0.05,
            max_len: 24,
            permutation_seed: 17,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    MaskedLm,
    Grammar,
    Polarity,
    Duplicate,
    Topic,
}

impl SynthTask {
    pub const DOWNSTREAM: [SynthTask; 4] = [
        SynthTask::Grammar,
        SynthTask::Polarity,
        SynthTask::Duplicate,
        SynthTask::Topic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthTask::MaskedLm => "mlm",
            SynthTask::Grammar => "grammar",
            SynthTask::Polarity => "polarity",
            SynthTask::Duplicate => "duplicate",
            SynthTask::Topic => "topic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            SynthTask::MaskedLm,
            SynthTask::Grammar,
            SynthTask::Polarity,
            SynthTask::Duplicate,
            SynthTask::Topic,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }

    pub fn spec(self) -> TaskSpec {
        let (kind, metric) = match self {
            SynthTask::MaskedLm => (TaskKind::MaskedLm, MetricKind::RecallAt1),
            SynthTask::Grammar => (TaskKind::Classification { n_classes: 2 }, MetricKind::Mcc),
            SynthTask::Polarity => (TaskKind::Classification { n_classes: 2 }, MetricKind::Accuracy),
            SynthTask::Duplicate => (TaskKind::Classification { n_classes: 2 }, MetricKind::AvgAccF1),
            SynthTask::Topic => (TaskKind::Classification { n_classes: 3 }, MetricKind::Accuracy),
        };
        TaskSpec {
            name: self.name().to_string(),
            kind,
            metric,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    #[serde(default)]
    pub grammar: GrammarSpec,
    pub task: SynthTask,
    pub n_train: usize,
    pub n_dev: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tok {
    A(usize),
    B(usize),
    Open(usize),
    Close(usize),
    Noise(usize),
    Sep,
}

impl Tok {
    fn name(self) -> String {
        match self {
            Tok::A(i) => format!("a{i}"),
            Tok::B(i) => format!("b{i}"),
            Tok::Open(j) => format!("o{j}"),
            Tok::Close(j) => format!("c{j}"),
            Tok::Noise(k) => format!("n{k}"),
            Tok::Sep => SEPARATOR.to_string(),
        }
    }
}

impl GrammarSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.n_pairs < 3 {
            return Err(TaskError::Config("grammar needs at least 3 pair tokens".into()));
        }
        if self.max_len < 5 {
            return Err(TaskError::Config("max_len must leave room for at least two units".into()));
        }
        if self.min_units == 0 || self.min_units > self.max_units {
            return Err(TaskError::Config("need 1 <= min_units <= max_units".into()));
        }
        for (name, p) in [("p_bracket", self.p_bracket), ("p_noise", self.p_noise)] {
            if !(0.0..1.0).contains(&p) {
                return Err(TaskError::Config(format!("{name} must be in [0, 1)")));
            }
        }
        if self.p_bracket + self.p_noise >= 1.0 {
            return Err(TaskError::Config("p_bracket + p_noise must be < 1".into()));
        }
        if self.p_bracket > 0.0 && self.n_brackets == 0 {
            return Err(TaskError::Config("p_bracket > 0 needs n_brackets > 0".into()));
        }
        if self.p_noise > 0.0 && self.n_noise == 0 {
            return Err(TaskError::Config("p_noise > 0 needs n_noise > 0".into()));
        }
        Ok(())
    }

    /// Content tokens in id order.
    pub fn inventory(&self) -> Vec<String> {
        let mut v: Vec<Tok> = (0..self.n_pairs).map(Tok::A).collect();
        v.extend((0..self.n_pairs).map(Tok::B));
        v.extend((0..self.n_brackets).map(Tok::Open));
        v.extend((0..self.n_brackets).map(Tok::Close));
        v.extend((0..self.n_noise).map(Tok::Noise));
        v.push(Tok::Sep);
        v.into_iter().map(Tok::name).collect()
    }

    pub fn vocab(&self) -> Result<Vocab, TaskError> {
        Vocab::from_tokens(self.inventory())
    }

    /// The fixed permutation `π`: `a{i}` is always followed by `b{partner(i)}`.
    pub fn partner(&self, i: usize) -> usize {
        self.permutation()[i]
    }

    pub fn permutation(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.permutation_seed);
        let mut p: Vec<usize> = (0..self.n_pairs).collect();
        p.shuffle(&mut rng);
        p
    }

    fn pair(&self, perm: &[usize], i: usize) -> [Tok; 2] {
        [Tok::A(i), Tok::B(perm[i])]
    }

    /// Grammar sentence of at most `budget` content tokens.
    fn sentence(&self, rng: &mut ChaCha8Rng, perm: &[usize], budget: usize) -> Vec<Tok> {
        let n_units = rng.random_range(self.min_units..=self.max_units);
        let mut out = Vec::new();
        for _ in 0..n_units {
            let r: f64 = rng.random();
            let unit: Vec<Tok> = if r < self.p_noise {
                vec![Tok::Noise(rng.random_range(0..self.n_noise))]
            } else if r < self.p_noise + self.p_bracket {
                let j = rng.random_range(0..self.n_brackets);
                let inner = rng.random_range(1..=2);
                let mut u = vec![Tok::Open(j)];
                for _ in 0..inner {
                    u.extend(self.pair(perm, rng.random_range(0..self.n_pairs)));
                }
                u.push(Tok::Close(j));
                u
            } else {
                self.pair(perm, rng.random_range(0..self.n_pairs)).to_vec()
            };
            if out.len() + unit.len() > budget {
                break;
            }
            out.extend(unit);
        }
        if out.is_empty() {
            out.extend(self.pair(perm, rng.random_range(0..self.n_pairs)));
        }
        out
    }
}

fn count_a(toks: &[Tok]) -> impl Iterator<Item = usize> + '_ {
    toks.iter().filter_map(|t| match t {
        Tok::A(i) => Some(*i),
        _ => None,
    })
}

struct Generator<'g> {
    g: &'g GrammarSpec,
    perm: Vec<usize>,
    budget: usize,
}

impl Generator<'_> {
    fn masked_lm(&self, rng: &mut ChaCha8Rng) -> (Vec<Tok>, Option<usize>) {
        (self.g.sentence(rng, &self.perm, self.budget), None)
    }

    fn grammar(&self, rng: &mut ChaCha8Rng) -> (Vec<Tok>, Option<usize>) {
        let mut toks = self.g.sentence(rng, &self.perm, self.budget);
        if rng.random::<bool>() {
            return (toks, Some(1));
        }
        let corruptible: Vec<usize> = toks
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t, Tok::B(_)) || (matches!(t, Tok::Close(_)) && self.g.n_brackets > 1))
            .map(|(i, _)| i)
            .collect();
        let at = corruptible[rng.random_range(0..corruptible.len())];
        toks[at] = match toks[at] {
            Tok::B(b) => Tok::B((b + rng.random_range(1..self.g.n_pairs)) % self.g.n_pairs),
            Tok::Close(c) => Tok::Close((c + rng.random_range(1..self.g.n_brackets)) % self.g.n_brackets),
            t => t,
        };
        (toks, Some(0))
    }

    fn polarity(&self, rng: &mut ChaCha8Rng) -> (Vec<Tok>, Option<usize>) {
        let half = self.g.n_pairs / 2;
        let mut toks = self.g.sentence(rng, &self.perm, self.budget);
        let score = |toks: &[Tok]| -> i64 { count_a(toks).map(|i| if i < half { 1 } else { -1 }).sum() };
        if score(&toks) == 0 {
            let pos = toks.iter().position(|t| matches!(t, Tok::A(_))).expect("sentence has a pair");
            let Tok::A(old) = toks[pos] else { unreachable!() };
            // flip the polarity of one pair, keeping it well formed
            let i = if old < half {
                rng.random_range(half..self.g.n_pairs)
            } else {
                rng.random_range(0..half)
            };
            toks[pos] = Tok::A(i);
            toks[pos + 1] = Tok::B(self.perm[i]);
        }
        let label = usize::from(score(&toks) > 0);
        (toks, Some(label))
    }

    fn duplicate(&self, rng: &mut ChaCha8Rng) -> (Vec<Tok>, Option<usize>) {
        let max_k = ((self.budget - 1) / 4).min(self.g.n_pairs - 1).max(1);
        let k = rng.random_range(2.min(max_k)..=max_k);
        let mut idx: Vec<usize> = (0..self.g.n_pairs).collect();
        idx.shuffle(rng);
        let first: Vec<usize> = idx[..k].to_vec();
        let mut second = first.clone();
        let label = if rng.random::<bool>() {
            1
        } else {
            let slot = rng.random_range(0..k);
            second[slot] = idx[k + rng.random_range(0..self.g.n_pairs - k)];
            0
        };
        second.shuffle(rng);
        let mut toks = Vec::with_capacity(4 * k + 1);
        for &i in &first {
            toks.extend(self.g.pair(&self.perm, i));
        }
        toks.push(Tok::Sep);
        for &i in &second {
            toks.extend(self.g.pair(&self.perm, i));
        }
        (toks, Some(label))
    }

    fn topic(&self, rng: &mut ChaCha8Rng) -> (Vec<Tok>, Option<usize>) {
        loop {
            let toks = self.g.sentence(rng, &self.perm, self.budget);
            let mut counts = [0usize; 3];
            for i in count_a(&toks) {
                counts[i % 3] += 1;
            }
            let max = *counts.iter().max().expect("three groups");
            if counts.iter().filter(|&&c| c == max).count() == 1 {
                let label = counts.iter().position(|&c| c == max).expect("max present");
                return (toks, Some(label));
            }
        }
    }
}

/// Generates a synthetic dataset. Train examples come from stream `(seed, 0)`,
/// dev examples from stream `(seed, 1)`.
pub fn synth_corpus(seed: u64, spec: &CorpusSpec) -> Result<Dataset, TaskError> {
    spec.grammar.validate()?;
    if spec.n_train == 0 {
        return Err(TaskError::Config("n_train must be positive".into()));
    }
    let vocab = spec.grammar.vocab()?;
    let generator = Generator {
        g: &spec.grammar,
        perm: spec.grammar.permutation(),
        budget: spec.grammar.max_len - 1,
    };
    let make = |stream: u64, n: usize| -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        (0..n)
            .map(|_| {
                let (toks, label) = match spec.task {
                    SynthTask::MaskedLm => generator.masked_lm(&mut rng),
                    SynthTask::Grammar => generator.grammar(&mut rng),
                    SynthTask::Polarity => generator.polarity(&mut rng),
                    SynthTask::Duplicate => generator.duplicate(&mut rng),
                    SynthTask::Topic => generator.topic(&mut rng),
                };
                let tokens = std::iter::once(CLS)
                    .chain(toks.into_iter().map(|t| vocab.id(&t.name())))
                    .collect();
                Example { tokens, label }
            })
            .collect()
    };
    Ok(Dataset {
        spec: spec.task.spec(),
        train: make(0, spec.n_train),
        dev: make(1, spec.n_dev),
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(task: SynthTask) -> CorpusSpec {
        CorpusSpec {
            grammar: GrammarSpec::default(),
            task,
            n_train: 300,
            n_dev: 50,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for task in [SynthTask::MaskedLm, SynthTask::Grammar, SynthTask::Duplicate] {
            let a = synth_corpus(5, &spec(task)).unwrap();
            let b = synth_corpus(5, &spec(task)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.train, synth_corpus(6, &spec(task)).unwrap().train);
        }
    }

    #[test]
    fn corpus_is_not_constant() {
        let d = synth_corpus(1, &spec(SynthTask::MaskedLm)).unwrap();
        let first = &d.train[0].tokens;
        assert!(d.train.iter().any(|e| &e.tokens != first));
        assert!(d.train.iter().all(|e| e.tokens[0] == CLS && e.tokens.len() <= 24));
    }

    #[test]
    fn labels_cover_every_class() {
        for task in SynthTask::DOWNSTREAM {
            let d = synth_corpus(2, &spec(task)).unwrap();
            let n = d.spec.n_classes().unwrap();
            for c in 0..n {
                assert!(d.train.iter().any(|e| e.label == Some(c)), "{task:?} lacks class {c}");
            }
        }
    }

    #[test]
    fn degenerate_grammar_rejected() {
        let mut s = spec(SynthTask::MaskedLm);
        s.grammar.n_pairs = 1;
        assert!(matches!(synth_corpus(0, &s), Err(TaskError::Config(_))));
        let mut s = spec(SynthTask::MaskedLm);
        s.grammar.max_len = 2;
        assert!(synth_corpus(0, &s).is_err());
    }
}

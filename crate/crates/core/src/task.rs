//! Sparse modular addition: the target is the sum of the first `k` tokens
//! modulo `p`; the remaining `L − k` tokens are noise.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::TaskError;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    /// Sequence length `L`.
    pub seq_len: usize,
    /// Number of leading positions that determine the target (`k`).
    #[serde(rename = "k")]
    pub prefix_len: usize,
    /// Vocabulary size `p`.
    #[serde(rename = "p")]
    pub vocab: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self { seq_len: 12, prefix_len: 5, vocab: 2 }
    }
}

impl TaskSpec {
    pub fn new(seq_len: usize, prefix_len: usize, vocab: usize) -> Result<Self, TaskError> {
        let spec = Self { seq_len, prefix_len, vocab };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.seq_len == 0 {
            return Err(TaskError::InvalidSpec("sequence length must be positive".into()));
        }
        if self.prefix_len > self.seq_len {
            return Err(TaskError::InvalidSpec(format!(
                "k = {} exceeds L = {}",
                self.prefix_len, self.seq_len
            )));
        }
        if self.vocab < 2 {
            return Err(TaskError::InvalidSpec(format!("p = {} must be at least 2", self.vocab)));
        }
        Ok(())
    }

    pub fn suffix_len(&self) -> usize {
        self.seq_len - self.prefix_len
    }

    pub fn check(&self, tokens: &[usize]) -> Result<(), TaskError> {
        if tokens.len() != self.seq_len {
            return Err(TaskError::LengthMismatch { expected: self.seq_len, found: tokens.len() });
        }
        if let Some((position, &token)) = tokens.iter().enumerate().find(|(_, &t)| t >= self.vocab) {
            return Err(TaskError::InvalidToken { position, token, vocab: self.vocab });
        }
        Ok(())
    }
}

pub type TokenSequence = Vec<usize>;

/// `(Σ_{t≤k} x_t) mod p`
pub fn target(tokens: &[usize], spec: &TaskSpec) -> Result<usize, TaskError> {
    spec.check(tokens)?;
    Ok(tokens[..spec.prefix_len].iter().sum::<usize>() % spec.vocab)
}

/// Token counts over the prefix: the invariance class of a sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrefixClass(pub Vec<usize>);

impl PrefixClass {
    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    /// Target shared by every sequence of this class.
    pub fn target(&self, vocab: usize) -> usize {
        self.0.iter().enumerate().map(|(v, &n)| v * n).sum::<usize>() % vocab
    }
}

pub fn prefix_class(tokens: &[usize], spec: &TaskSpec) -> Result<PrefixClass, TaskError> {
    spec.check(tokens)?;
    let mut counts = vec![0; spec.vocab];
    for &t in &tokens[..spec.prefix_len] {
        counts[t] += 1;
    }
    Ok(PrefixClass(counts))
}

/// Number of prefix classes, `C(k + p − 1, k)`.
pub fn ideal_cluster_count(spec: &TaskSpec) -> u64 {
    binomial((spec.prefix_len + spec.vocab - 1) as u64, spec.prefix_len as u64)
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<TokenSequence>,
    pub targets: Vec<usize>,
    pub spec: TaskSpec,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], usize)> {
        self.inputs.iter().map(Vec::as_slice).zip(self.targets.iter().copied())
    }

    /// Builds a dataset from sequences, computing their targets.
    pub fn from_inputs(inputs: Vec<TokenSequence>, spec: TaskSpec, seed: u64) -> Result<Self, TaskError> {
        let targets = inputs.iter().map(|x| target(x, &spec)).collect::<Result<_, _>>()?;
        Ok(Self { inputs, targets, spec, seed })
    }

    /// Rows `t1..tL,target`, with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TaskError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.spec.seq_len).map(|t| format!("t{t}")).collect();
        header.push("target".into());
        w.write_record(&header)?;
        for (x, y) in self.iter() {
            let mut row: Vec<String> = x.iter().map(usize::to_string).collect();
            row.push(y.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a CSV produced by [`Dataset::write_csv`]; stored targets must agree with the task.
    pub fn read_csv<R: Read>(reader: R, spec: TaskSpec) -> Result<Self, TaskError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (i, record) in r.records().enumerate() {
            let record = record?;
            let row = i + 1;
            if record.len() != spec.seq_len + 1 {
                return Err(TaskError::CsvRow {
                    row,
                    message: format!("expected {} columns, found {}", spec.seq_len + 1, record.len()),
                });
            }
            let values: Vec<usize> = record
                .iter()
                .map(|f| f.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| TaskError::CsvRow { row, message: e.to_string() })?;
            let (x, y) = values.split_at(spec.seq_len);
            let expected = target(x, &spec)?;
            if y[0] != expected {
                return Err(TaskError::CsvRow {
                    row,
                    message: format!("stored target {} but the prefix sums to {expected}", y[0]),
                });
            }
            inputs.push(x.to_vec());
            targets.push(expected);
        }
        Ok(Self { inputs, targets, spec, seed: 0 })
    }
}

/// `n` i.i.d. uniform sequences drawn from the training-data stream of `seed`.
pub fn sample_dataset(n: usize, spec: &TaskSpec, seed: u64) -> Result<Dataset, TaskError> {
    sample_from_stream(n, spec, seed, Stream::TrainData)
}

pub fn sample_from_stream(n: usize, spec: &TaskSpec, seed: u64, stream: Stream) -> Result<Dataset, TaskError> {
    spec.validate()?;
    if n == 0 {
        return Err(TaskError::EmptyDataset);
    }
    let mut rng = stream_rng(seed, stream);
    let inputs: Vec<TokenSequence> = (0..n)
        .map(|_| (0..spec.seq_len).map(|_| rng.random_range(0..spec.vocab)).collect())
        .collect();
    Dataset::from_inputs(inputs, *spec, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSequence {
    pub tokens: TokenSequence,
    pub class: PrefixClass,
    pub target: usize,
}

/// The three default probe suffixes: all zeros, all `p − 1`, and `0, p−1, 0, …`.
pub fn default_suffixes(spec: &TaskSpec) -> Vec<Vec<usize>> {
    let n = spec.suffix_len();
    let top = spec.vocab - 1;
    vec![
        vec![0; n],
        vec![top; n],
        (0..n).map(|i| if i % 2 == 0 { 0 } else { top }).collect(),
    ]
}

/// Every prefix in lexicographic order (first position most significant),
/// each combined with every suffix in the order given.
pub fn build_probe_set(spec: &TaskSpec, suffixes: &[Vec<usize>]) -> Result<Vec<ProbeSequence>, TaskError> {
    spec.validate()?;
    for (index, s) in suffixes.iter().enumerate() {
        if s.len() != spec.suffix_len() {
            return Err(TaskError::SuffixLengthMismatch { index, expected: spec.suffix_len(), found: s.len() });
        }
    }
    if suffixes.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for prefix in all_prefixes(spec) {
        for suffix in suffixes {
            let tokens: TokenSequence = prefix.iter().chain(suffix).copied().collect();
            let class = prefix_class(&tokens, spec)?;
            let target = target(&tokens, spec)?;
            out.push(ProbeSequence { tokens, class, target });
        }
    }
    Ok(out)
}

/// All `p^k` prefixes, lexicographically.
pub fn all_prefixes(spec: &TaskSpec) -> Vec<Vec<usize>> {
    let k = spec.prefix_len;
    let total = spec.vocab.pow(k as u32);
    (0..total)
        .map(|mut code| {
            let mut prefix = vec![0; k];
            for slot in prefix.iter_mut().rev() {
                *slot = code % spec.vocab;
                code /= spec.vocab;
            }
            prefix
        })
        .collect()
}

/// Prefix classes in sorted order; the index is a stable color/marker key.
pub fn enumerate_prefix_classes(spec: &TaskSpec) -> Vec<PrefixClass> {
    let mut classes: Vec<PrefixClass> = all_prefixes(spec)
        .into_iter()
        .map(|prefix| {
            let mut counts = vec![0; spec.vocab];
            for t in prefix {
                counts[t] += 1;
            }
            PrefixClass(counts)
        })
        .collect();
    classes.sort();
    classes.dedup();
    classes
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use std::collections::BTreeSet;

    fn spec(p: usize) -> TaskSpec {
        TaskSpec::new(12, 5, p).unwrap()
    }

    #[test]
    fn target_examples() {
        let s = spec(2);
        assert_eq!(target(&[1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0], &s).unwrap(), 1);
        assert_eq!(target(&[1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1], &s).unwrap(), 1);
        let s3 = spec(3);
        assert_eq!(target(&[2, 2, 1, 0, 1, 2, 1, 0, 2, 2, 1, 0], &s3).unwrap(), 0);
        assert!(matches!(
            target(&[2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0], &s),
            Err(TaskError::InvalidToken { position: 0, token: 2, vocab: 2 })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(TaskSpec::new(12, 13, 2).is_err());
        assert!(TaskSpec::new(12, 5, 1).is_err());
        assert!(TaskSpec::new(12, 0, 2).is_ok());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_dataset(2048, &spec(2), 0).unwrap();
        let b = sample_dataset(2048, &spec(2), 0).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(2048, &spec(2), 1).unwrap();
        assert_ne!(a.inputs, c.inputs);
        let one = sample_dataset(1, &spec(3), 5).unwrap();
        assert_eq!(one.targets[0], target(&one.inputs[0], &one.spec).unwrap());
        assert!(matches!(sample_dataset(0, &spec(2), 0), Err(TaskError::EmptyDataset)));
    }

    #[test]
    fn sampling_is_uniform_per_position() {
        let s = spec(2);
        let data = sample_dataset(100_000, &s, 3).unwrap();
        for t in 0..s.seq_len {
            let ones = data.inputs.iter().filter(|x| x[t] == 1).count() as f64;
            assert!((ones / 100_000.0 - 0.5).abs() <= 0.01, "position {t}");
        }
    }

    #[test]
    fn prefix_class_examples() {
        let s = spec(2);
        let x = [1, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0];
        assert_eq!(prefix_class(&x, &s).unwrap(), PrefixClass(vec![2, 3]));
        let permuted = [0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0];
        assert_eq!(prefix_class(&x, &s).unwrap(), prefix_class(&permuted, &s).unwrap());
        let resuffixed = [1, 0, 1, 0, 1, 1, 1, 0, 1, 1, 0, 1];
        assert_eq!(prefix_class(&x, &s).unwrap(), prefix_class(&resuffixed, &s).unwrap());
        assert_eq!(PrefixClass(vec![2, 3]).target(2), 1);
    }

    #[test]
    fn cluster_count_matches_enumeration() {
        assert_eq!(ideal_cluster_count(&spec(2)), 6);
        assert_eq!(ideal_cluster_count(&TaskSpec::new(12, 0, 2).unwrap()), 1);
        // (n0, n1, n2) with n0 + n1 + n2 = 5
        let mut brute = 0;
        for n0 in 0..=5 {
            for n1 in 0..=(5 - n0) {
                let _n2 = 5 - n0 - n1;
                brute += 1;
            }
        }
        assert_eq!(brute, 21);
        assert_eq!(ideal_cluster_count(&spec(3)), brute);
        for p in [2, 3] {
            let s = spec(p);
            let distinct: BTreeSet<PrefixClass> = all_prefixes(&s)
                .into_iter()
                .map(|prefix| {
                    let mut x = prefix;
                    x.resize(s.seq_len, 0);
                    prefix_class(&x, &s).unwrap()
                })
                .collect();
            assert_eq!(distinct.len() as u64, ideal_cluster_count(&s));
            assert_eq!(enumerate_prefix_classes(&s).len() as u64, ideal_cluster_count(&s));
        }
    }

    #[test]
    fn probe_set_examples() {
        let s = spec(2);
        let probe = build_probe_set(&s, &default_suffixes(&s)).unwrap();
        assert_eq!(probe.len(), 96);
        assert_eq!(probe[0].tokens, vec![0; 12]);
        assert!(build_probe_set(&s, &[]).unwrap().is_empty());
        let s3 = spec(3);
        let probe3 = build_probe_set(&s3, &[vec![0; 7]]).unwrap();
        assert_eq!(probe3.len(), 243);
        let classes: BTreeSet<_> = probe3.iter().map(|p| p.class.clone()).collect();
        assert_eq!(classes.len(), 21);
        assert!(matches!(
            build_probe_set(&s, &[vec![0; 6]]),
            Err(TaskError::SuffixLengthMismatch { index: 0, expected: 7, found: 6 })
        ));
        for p in &probe {
            assert_eq!(p.class.target(2), p.target);
        }
    }

    #[test]
    fn target_invariances() {
        let mut rng = stream_rng(11, Stream::TrainData);
        for p in [2, 3, 5] {
            let s = spec(p);
            let data = sample_dataset(1000, &s, 42).unwrap();
            for (x, y) in data.iter() {
                for _ in 0..10 {
                    let mut permuted = x.to_vec();
                    permuted[..s.prefix_len].shuffle(&mut rng);
                    assert_eq!(target(&permuted, &s).unwrap(), y);
                    let mut edited = x.to_vec();
                    for t in &mut edited[s.prefix_len..] {
                        *t = rng.random_range(0..p);
                    }
                    assert_eq!(target(&edited, &s).unwrap(), y);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let s = spec(3);
        let data = sample_dataset(20, &s, 9).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), s).unwrap();
        assert_eq!(back.inputs, data.inputs);
        assert_eq!(back.targets, data.targets);

        let bad = "t1,t2,t3,target\n1,0,0,0\n";
        let small = TaskSpec::new(3, 2, 2).unwrap();
        assert!(matches!(Dataset::read_csv(bad.as_bytes(), small), Err(TaskError::CsvRow { row: 1, .. })));
    }
}

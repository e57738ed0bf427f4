//! Sequence embeddings and the Tanimoto similarity between them.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqspace::{residue_index, MutationSpace, Sequence};

/// BLOSUM45, rows and columns in [`AMINO_ACIDS`](crate::seqspace::AMINO_ACIDS) order.
#[rustfmt::skip]
pub const BLOSUM45: [[i32; 20]; 20] = [
    //A   C   D   E   F   G   H   I   K   L   M   N   P   Q   R   S   T   V   W   Y
    [ 5, -1, -2, -1, -2,  0, -2, -1, -1, -1, -1, -1, -1, -1, -2,  1,  0,  0, -2, -2], // A
    [-1, 12, -3, -3, -2, -3, -3, -3, -3, -2, -2, -2, -4, -3, -3, -1, -1, -1, -5, -3], // C
    [-2, -3,  7,  2, -4, -1,  0, -4,  0, -3, -3,  2, -1,  0, -1,  0, -1, -3, -4, -2], // D
    [-1, -3,  2,  6, -3, -2,  0, -3,  1, -2, -2,  0,  0,  2,  0,  0, -1, -3, -3, -2], // E
    [-2, -2, -4, -3,  8, -3, -2,  0, -3,  1,  0, -2, -3, -4, -2, -2, -1,  0,  1,  3], // F
    [ 0, -3, -1, -2, -3,  7, -2, -4, -2, -3, -2,  0, -2, -2, -2,  0, -2, -3, -2, -3], // G
    [-2, -3,  0,  0, -2, -2, 10, -3, -1, -2,  0,  1, -2,  1,  0, -1, -2, -3, -3,  2], // H
    [-1, -3, -4, -3,  0, -4, -3,  5, -3,  2,  2, -2, -2, -2, -3, -2, -1,  3, -2,  0], // I
    [-1, -3,  0,  1, -3, -2, -1, -3,  5, -3, -1,  0, -1,  1,  3, -1, -1, -2, -2, -1], // K
    [-1, -2, -3, -2,  1, -3, -2,  2, -3,  5,  2, -3, -3, -2, -2, -3, -1,  1, -2,  0], // L
    [-1, -2, -3, -2,  0, -2,  0,  2, -1,  2,  6, -2, -2,  0, -1, -2, -1,  1, -2,  0], // M
    [-1, -2,  2,  0, -2,  0,  1, -2,  0, -3, -2,  6, -2,  0,  0,  1,  0, -3, -4, -2], // N
    [-1, -4, -1,  0, -3, -2, -2, -2, -1, -3, -2, -2,  9, -1, -2, -1, -1, -3, -3, -3], // P
    [-1, -3,  0,  2, -4, -2,  1, -2,  1, -2,  0,  0, -1,  6,  1,  0, -1, -3, -2, -1], // Q
    [-2, -3, -1,  0, -2, -2,  0, -3,  3, -2, -1,  0, -2,  1,  7, -1, -1, -2, -2, -1], // R
    [ 1, -1,  0,  0, -2,  0, -1, -2, -1, -3, -2,  1, -1,  0, -1,  4,  2, -1, -4, -2], // S
    [ 0, -1, -1, -1, -1, -2, -2, -1, -1, -1, -1,  0, -1, -1, -1,  2,  5,  0, -3, -1], // T
    [ 0, -1, -3, -3,  0, -3, -3,  3, -2,  1,  1, -3, -3, -3, -2, -1,  0,  5, -3, -1], // V
    [-2, -5, -4, -3,  1, -2, -3, -2, -2, -2, -2, -4, -3, -2, -2, -4, -3, -3, 15,  3], // W
    [-2, -3, -2, -2,  3, -3,  2,  0, -1,  0,  0, -2, -3, -1, -1, -2, -1, -1,  3,  8], // Y
];

/// Which encoder produced an embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderId {
    OneHot,
    Blosum,
    Bag,
    External,
}

impl fmt::Display for EncoderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderId::OneHot => "onehot",
            EncoderId::Blosum => "blosum",
            EncoderId::Bag => "bag",
            EncoderId::External => "external",
        })
    }
}

/// A dense real vector with its squared norm cached.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    norm_sq: f64,
    encoder: EncoderId,
}

impl Embedding {
    pub fn new(values: Vec<f64>, encoder: EncoderId) -> Self {
        let norm_sq = values.iter().map(|v| v * v).sum();
        Embedding { values, norm_sq, encoder }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn encoder(&self) -> EncoderId {
        self.encoder
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Tanimoto similarity `<x,y> / (|x|^2 + |y|^2 - <x,y>)`.
pub fn tanimoto(x: &Embedding, y: &Embedding) -> Result<f64> {
    if x.encoder != y.encoder {
        return Err(Error::EncoderMismatch { left: x.encoder.to_string(), right: y.encoder.to_string() });
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch { left: x.dim(), right: y.dim() });
    }
    if x.norm_sq == 0.0 && y.norm_sq == 0.0 {
        return Err(Error::ZeroVectors);
    }
    Ok(tanimoto_unchecked(x, y))
}

/// Tanimoto similarity without validation; two zero vectors give 1.
pub(crate) fn tanimoto_unchecked(x: &Embedding, y: &Embedding) -> f64 {
    let dot = x.dot(y);
    let denom = x.norm_sq + y.norm_sq - dot;
    if denom <= 0.0 {
        1.0
    } else {
        dot / denom
    }
}

/// Concatenated one-hot blocks, 20 entries per position.
pub fn encode_onehot(seq: &Sequence) -> Embedding {
    let mut values = vec![0.0; 20 * seq.len()];
    for (p, &r) in seq.residues().iter().enumerate() {
        values[20 * p + residue_index(r).expect("canonical residue")] = 1.0;
    }
    Embedding::new(values, EncoderId::OneHot)
}

/// Per-residue vectors `U |D|^{1/2}` from the eigendecomposition of a
/// substitution matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BlosumTable {
    rows: Vec<[f64; 20]>,
}

impl BlosumTable {
    pub fn build(matrix: &[[i32; 20]; 20]) -> Result<Self> {
        for i in 0..20 {
            for j in 0..i {
                if matrix[i][j] != matrix[j][i] {
                    return Err(Error::DecompositionFailure(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let m = Mat::<f64>::from_fn(20, 20, |i, j| matrix[i][j] as f64);
        let evd = m
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::DecompositionFailure(format!("{e:?}")))?;
        let u = evd.U();
        let d = evd.S().column_vector();
        let mut rows = vec![[0.0; 20]; 20];
        for (a, row) in rows.iter_mut().enumerate() {
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = u[(a, k)] * d[k].abs().sqrt();
            }
        }
        Ok(BlosumTable { rows })
    }

    /// The table for the built-in BLOSUM45 matrix.
    pub fn blosum45() -> Self {
        let sum: i32 = BLOSUM45.iter().flatten().sum();
        assert_eq!(sum, -367, "BLOSUM45 constant is corrupted");
        assert_eq!((BLOSUM45[0][0], BLOSUM45[1][1], BLOSUM45[18][18]), (5, 12, 15));
        assert_eq!((BLOSUM45[18][1], BLOSUM45[2][3]), (-5, 2));
        BlosumTable::build(&BLOSUM45).expect("BLOSUM45 decomposes")
    }

    pub fn vector(&self, residue: u8) -> &[f64; 20] {
        &self.rows[residue_index(residue).expect("canonical residue")]
    }

    /// Gram matrix of the per-residue vectors.
    pub fn gram(&self) -> [[f64; 20]; 20] {
        let mut g = [[0.0; 20]; 20];
        for i in 0..20 {
            for j in 0..20 {
                g[i][j] = self.rows[i].iter().zip(&self.rows[j]).map(|(a, b)| a * b).sum();
            }
        }
        g
    }

    pub fn encode(&self, seq: &Sequence) -> Embedding {
        let mut values = Vec::with_capacity(20 * seq.len());
        for &r in seq.residues() {
            values.extend_from_slice(self.vector(r));
        }
        Embedding::new(values, EncoderId::Blosum)
    }
}

/// Bag of overlapping n-grams over a fixed vocabulary plus one overflow bucket.
#[derive(Clone, Debug)]
pub struct BagOfNgrams {
    n: usize,
    vocabulary: HashMap<Vec<u8>, usize>,
}

impl BagOfNgrams {
    /// Vocabulary from every window of the given corpus.
    pub fn from_corpus<'a>(n: usize, corpus: impl IntoIterator<Item = &'a Sequence>) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("n-gram size must be positive"));
        }
        let mut grams = BTreeSet::new();
        for seq in corpus {
            if seq.len() < n {
                return Err(Error::SequenceTooShort { len: seq.len(), n });
            }
            for w in seq.residues().windows(n) {
                grams.insert(w.to_vec());
            }
        }
        let vocabulary = grams.into_iter().enumerate().map(|(i, g)| (g, i)).collect();
        Ok(BagOfNgrams { n, vocabulary })
    }

    /// Vocabulary from the parental sequence and all its feasible single
    /// mutants.
    pub fn for_space(space: &MutationSpace, n: usize) -> Result<Self> {
        let parental = space.parental();
        let mut corpus = vec![parental.clone()];
        for pos in space.positions() {
            for &alt in &pos.alternatives {
                let mut residues = parental.residues().to_vec();
                residues[pos.index] = alt;
                let mutant = Sequence::from_residues_unchecked(residues);
                if space.liabilities().is_clean(&mutant) {
                    corpus.push(mutant);
                }
            }
        }
        Self::from_corpus(n, &corpus)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Vocabulary size plus the overflow bucket.
    pub fn dim(&self) -> usize {
        self.vocabulary.len() + 1
    }

    pub fn encode(&self, seq: &Sequence) -> Result<Embedding> {
        if seq.len() < self.n {
            return Err(Error::SequenceTooShort { len: seq.len(), n: self.n });
        }
        let overflow = self.vocabulary.len();
        let mut values = vec![0.0; self.dim()];
        for w in seq.residues().windows(self.n) {
            let slot = self.vocabulary.get(w).copied().unwrap_or(overflow);
            values[slot] += 1.0;
        }
        Ok(Embedding::new(values, EncoderId::Bag))
    }
}

/// Embeddings computed outside the engine, keyed by sequence.
#[derive(Clone, Debug)]
pub struct ExternalEmbeddings {
    dim: usize,
    rows: HashMap<Sequence, Vec<f64>>,
}

impl ExternalEmbeddings {
    /// Parses the `dim=<D>` header followed by `<sequence>\t<v1> ... <vD>` rows.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::config("embedding file is empty"))?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| Error::config(format!("bad embedding header {header:?}, expected dim=<D>")))?;
        let mut rows = HashMap::new();
        for (lineno, line) in lines {
            let (seq, vector) = line
                .split_once('\t')
                .ok_or_else(|| Error::config(format!("line {}: missing tab separator", lineno + 1)))?;
            let seq = Sequence::parse(seq.trim())?;
            let values = vector
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
            if values.len() != dim {
                return Err(Error::DimensionMismatch { left: values.len(), right: dim });
            }
            rows.insert(seq, values);
        }
        Ok(ExternalEmbeddings { dim, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn encode(&self, seq: &Sequence) -> Result<Embedding> {
        self.rows
            .get(seq)
            .map(|v| Embedding::new(v.clone(), EncoderId::External))
            .ok_or_else(|| Error::MissingEmbedding(seq.to_string()))
    }
}

/// Any of the supported encoders.
#[derive(Clone, Debug)]
pub enum Encoder {
    OneHot,
    Blosum(BlosumTable),
    Bag(BagOfNgrams),
    External(ExternalEmbeddings),
}

impl Encoder {
    pub fn id(&self) -> EncoderId {
        match self {
            Encoder::OneHot => EncoderId::OneHot,
            Encoder::Blosum(_) => EncoderId::Blosum,
            Encoder::Bag(_) => EncoderId::Bag,
            Encoder::External(_) => EncoderId::External,
        }
    }

    pub fn encode(&self, seq: &Sequence) -> Result<Embedding> {
        match self {
            Encoder::OneHot => Ok(encode_onehot(seq)),
            Encoder::Blosum(table) => Ok(table.encode(seq)),
            Encoder::Bag(bag) => bag.encode(seq),
            Encoder::External(ext) => ext.encode(seq),
        }
    }

    pub fn encode_all<'a>(&self, seqs: impl IntoIterator<Item = &'a Sequence>) -> Result<Vec<Embedding>> {
        seqs.into_iter().map(|s| self.encode(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> Sequence {
        Sequence::parse(s).unwrap()
    }

    #[test]
    fn onehot_examples() {
        let e = encode_onehot(&seq("A"));
        assert_eq!(e.dim(), 20);
        assert_eq!(e.values()[0], 1.0);
        assert_eq!(e.values().iter().sum::<f64>(), 1.0);
        let a = encode_onehot(&seq("ACDEFGHIKL"));
        let b = encode_onehot(&seq("ACDEFGHIKY"));
        assert_eq!(a.norm_sq(), 10.0);
        assert_eq!(a.dot(&b), 9.0);
    }

    #[test]
    fn tanimoto_examples() {
        let a = encode_onehot(&seq("ACDEFGHIKL"));
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let b = encode_onehot(&seq("ACDEFGHIWW"));
        assert!((tanimoto(&a, &b).unwrap() - 8.0 / 12.0).abs() < 1e-15);
        let x = Embedding::new(vec![1.0, 0.0], EncoderId::Bag);
        let y = Embedding::new(vec![0.0, 1.0], EncoderId::Bag);
        assert_eq!(tanimoto(&x, &y).unwrap(), 0.0);
        let z = Embedding::new(vec![0.0, 0.0], EncoderId::Bag);
        assert!(matches!(tanimoto(&z, &z), Err(Error::ZeroVectors)));
        assert_eq!(tanimoto(&x, &z).unwrap(), 0.0);
        let w = Embedding::new(vec![0.0, 0.0, 1.0], EncoderId::Bag);
        assert!(matches!(tanimoto(&x, &w), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(tanimoto(&a, &x), Err(Error::EncoderMismatch { .. })));
    }

    #[test]
    fn diagonal_matrix_table() {
        let mut m = [[0i32; 20]; 20];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 4;
        }
        let table = BlosumTable::build(&m).unwrap();
        let g = table.gram();
        for i in 0..20 {
            for j in 0..20 {
                let want = if i == j { 4.0 } else { 0.0 };
                assert!((g[i][j] - want).abs() < 1e-12);
            }
            let norm: f64 = table.rows[i].iter().map(|v| v * v).sum();
            assert!((norm - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let mut m = BLOSUM45;
        m[0][1] = 3;
        assert!(matches!(BlosumTable::build(&m), Err(Error::DecompositionFailure(_))));
    }

    #[test]
    fn blosum_locality() {
        let table = BlosumTable::blosum45();
        let a = table.encode(&seq("ACDEF"));
        assert_eq!(a, table.encode(&seq("ACDEF")));
        let b = table.encode(&seq("ADCEF"));
        let changed: Vec<usize> = (0..5)
            .filter(|&p| a.values()[20 * p..20 * p + 20] != b.values()[20 * p..20 * p + 20])
            .collect();
        assert_eq!(changed, vec![1, 2]);
    }

    #[test]
    fn bag_examples() {
        let bag = BagOfNgrams::from_corpus(5, [&seq("AAAAAA")]).unwrap();
        let e = bag.encode(&seq("AAAAA")).unwrap();
        assert_eq!(e.values(), &[1.0, 0.0]);
        let e = bag.encode(&seq("AAAAAA")).unwrap();
        assert_eq!(e.values(), &[2.0, 0.0]);
        let e = bag.encode(&seq("AAAAAAC")).unwrap();
        assert_eq!(e.values(), &[2.0, 1.0]);
        assert!(matches!(bag.encode(&seq("AAAA")), Err(Error::SequenceTooShort { len: 4, n: 5 })));
    }

    #[test]
    fn external_file_round() {
        let text = "dim=3\nACD\t0.5 1 -2\nCCC\t0 0 1\n";
        let ext = ExternalEmbeddings::parse(text).unwrap();
        assert_eq!(ext.dim(), 3);
        assert_eq!(ext.encode(&seq("ACD")).unwrap().values(), &[0.5, 1.0, -2.0]);
        assert!(matches!(ext.encode(&seq("AAA")), Err(Error::MissingEmbedding(_))));
        assert!(ExternalEmbeddings::parse("dim=2\nACD\t1 2 3\n").is_err());
        assert!(ExternalEmbeddings::parse("size=2\n").is_err());
    }
}

//! Sequences, the constrained edit space around a parental sequence,
//! liability motifs, and the variation operators shared by every optimizer.
//!
//! All operators are closed over the feasible set: whatever they return has
//! canonical residues, differs from the parental only at editable positions,
//! carries at most `max_mutations` substitutions and matches no liability
//! motif.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// The 20 canonical amino acids in alphabetical order of their one-letter codes.
pub const AMINO_ACIDS: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

/// Default cap for exhaustive enumeration.
pub const DEFAULT_ENUMERATION_CAP: u128 = 100_000_000;

const MAX_REPAIR_ATTEMPTS: usize = 100;

/// Index of a residue in [`AMINO_ACIDS`], or `None` for anything non-canonical.
pub fn residue_index(residue: u8) -> Option<usize> {
    match residue {
        b'A' => Some(0),
        b'C' => Some(1),
        b'D' => Some(2),
        b'E' => Some(3),
        b'F' => Some(4),
        b'G' => Some(5),
        b'H' => Some(6),
        b'I' => Some(7),
        b'K' => Some(8),
        b'L' => Some(9),
        b'M' => Some(10),
        b'N' => Some(11),
        b'P' => Some(12),
        b'Q' => Some(13),
        b'R' => Some(14),
        b'S' => Some(15),
        b'T' => Some(16),
        b'V' => Some(17),
        b'W' => Some(18),
        b'Y' => Some(19),
        _ => None,
    }
}

/// A fixed-length string over the canonical amino-acid alphabet.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(Vec<u8>);

impl Sequence {
    /// Parses `text`, accepting only canonical uppercase residues.
    pub fn parse(text: &str) -> Result<Self> {
        for (index, ch) in text.chars().enumerate() {
            if !ch.is_ascii() || residue_index(ch as u8).is_none() {
                return Err(Error::InvalidResidue { index, found: ch });
            }
        }
        Ok(Sequence(text.as_bytes().to_vec()))
    }

    pub(crate) fn from_residues_unchecked(residues: Vec<u8>) -> Self {
        debug_assert!(residues.iter().all(|&r| residue_index(r).is_some()));
        Sequence(residues)
    }

    pub fn residues(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_str(&self) -> &str {
        // Only canonical ASCII letters are ever stored.
        std::str::from_utf8(&self.0).expect("sequence residues are ASCII")
    }

    /// Hamming distance to another sequence of the same length.
    pub fn hamming(&self, other: &Sequence) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { expected: self.len(), found: other.len() });
        }
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sequence({})", self.as_str())
    }
}

/// Parses `text` and checks that it has length `len`.
pub fn validate_sequence(text: &str, len: usize) -> Result<Sequence> {
    let seq = Sequence::parse(text)?;
    if seq.len() != len {
        return Err(Error::LengthMismatch { expected: len, found: seq.len() });
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum MotifToken {
    Literal(u8),
    Any,
    Class(Vec<u8>),
    NotClass(Vec<u8>),
}

impl MotifToken {
    fn matches(&self, residue: u8) -> bool {
        match self {
            MotifToken::Literal(r) => *r == residue,
            MotifToken::Any => true,
            MotifToken::Class(set) => set.contains(&residue),
            MotifToken::NotClass(set) => !set.contains(&residue),
        }
    }
}

/// A forbidden sequence pattern.
///
/// Pattern syntax: an uppercase letter matches itself, `x` matches any
/// residue, `[ST]` matches any listed residue and `[^P]` any residue except
/// the listed ones. A motif can carry a display label distinct from its
/// pattern, written `label=pattern`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Motif {
    label: String,
    pattern: String,
    tokens: Vec<MotifToken>,
}

impl Motif {
    pub fn parse(spec: &str) -> Result<Self> {
        let (label, pattern) = match spec.split_once('=') {
            Some((label, pattern)) => (label.trim().to_string(), pattern.trim().to_string()),
            None => (spec.trim().to_string(), spec.trim().to_string()),
        };
        let invalid = |reason: &str| Error::InvalidMotif {
            pattern: spec.to_string(),
            reason: reason.to_string(),
        };
        let mut tokens = Vec::new();
        let mut chars = pattern.bytes().peekable();
        while let Some(c) = chars.next() {
            let token = match c {
                b'x' => MotifToken::Any,
                b'[' => {
                    let negated = chars.peek() == Some(&b'^');
                    if negated {
                        chars.next();
                    }
                    let mut set = Vec::new();
                    loop {
                        match chars.next() {
                            Some(b']') => break,
                            Some(r) if residue_index(r).is_some() => set.push(r),
                            Some(_) => return Err(invalid("non-canonical residue in class")),
                            None => return Err(invalid("unterminated character class")),
                        }
                    }
                    if set.is_empty() {
                        return Err(invalid("empty character class"));
                    }
                    if negated {
                        MotifToken::NotClass(set)
                    } else {
                        MotifToken::Class(set)
                    }
                }
                r if residue_index(r).is_some() => MotifToken::Literal(r),
                _ => return Err(invalid("unexpected character")),
            };
            tokens.push(token);
        }
        if tokens.is_empty() {
            return Err(invalid("empty pattern"));
        }
        Ok(Motif { label, pattern, tokens })
    }

    /// N-linked glycosylation sequon: N, any residue but P, then S or T.
    pub fn n_glycosylation() -> Self {
        Motif::parse("Nx[ST]=N[^P][ST]").expect("built-in motif parses")
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn matches_at(&self, residues: &[u8], start: usize) -> bool {
        start + self.tokens.len() <= residues.len()
            && self.tokens.iter().zip(&residues[start..]).all(|(t, &r)| t.matches(r))
    }

    fn spec(&self) -> String {
        if self.label == self.pattern {
            self.pattern.clone()
        } else {
            format!("{}={}", self.label, self.pattern)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub motif: String,
}

/// The set of forbidden motifs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LiabilityRules {
    motifs: Vec<Motif>,
}

impl LiabilityRules {
    pub fn none() -> Self {
        LiabilityRules { motifs: Vec::new() }
    }

    pub fn new(motifs: Vec<Motif>) -> Self {
        LiabilityRules { motifs }
    }

    pub fn parse<S: AsRef<str>>(specs: &[S]) -> Result<Self> {
        let motifs = specs.iter().map(|s| Motif::parse(s.as_ref())).collect::<Result<_>>()?;
        Ok(LiabilityRules { motifs })
    }

    /// Default rule set: the N-glycosylation sequon.
    pub fn glycosylation() -> Self {
        LiabilityRules { motifs: vec![Motif::n_glycosylation()] }
    }

    pub fn motifs(&self) -> &[Motif] {
        &self.motifs
    }

    /// Motif specs in the `label=pattern` form accepted by [`Self::parse`].
    pub fn specs(&self) -> Vec<String> {
        self.motifs.iter().map(Motif::spec).collect()
    }

    /// Every match of every motif, ordered by motif then position.
    pub fn check(&self, seq: &Sequence) -> Vec<Violation> {
        let residues = seq.residues();
        let mut out = Vec::new();
        for motif in &self.motifs {
            for start in 0..residues.len() {
                if motif.matches_at(residues, start) {
                    out.push(Violation { position: start, motif: motif.label.clone() });
                }
            }
        }
        out
    }

    pub fn is_clean(&self, seq: &Sequence) -> bool {
        let residues = seq.residues();
        self.motifs
            .iter()
            .all(|m| (0..residues.len()).all(|start| !m.matches_at(residues, start)))
    }

    fn first_violation(&self, residues: &[u8]) -> Option<(usize, usize)> {
        for motif in &self.motifs {
            for start in 0..residues.len() {
                if motif.matches_at(residues, start) {
                    return Some((start, motif.len()));
                }
            }
        }
        None
    }
}

pub fn liability_check(seq: &Sequence, rules: &LiabilityRules) -> Vec<Violation> {
    rules.check(seq)
}

/// One editable position and the residues permitted there.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditablePosition {
    pub index: usize,
    /// Sorted, always contains the parental residue.
    pub allowed: Vec<u8>,
    /// `allowed` without the parental residue.
    pub alternatives: Vec<u8>,
}

/// The constrained neighbourhood of a parental sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MutationSpace {
    parental: Sequence,
    positions: Vec<EditablePosition>,
    max_mutations: usize,
    liabilities: LiabilityRules,
}

impl MutationSpace {
    /// Builds a space. The parental residue is added to every allowed set if
    /// missing; the parental sequence itself must be liability-clean.
    pub fn new(
        parental: Sequence,
        allowed: BTreeMap<usize, Vec<u8>>,
        max_mutations: usize,
        liabilities: LiabilityRules,
    ) -> Result<Self> {
        if max_mutations == 0 {
            return Err(Error::InvalidSpace("max_mutations must be positive".into()));
        }
        let mut positions = Vec::with_capacity(allowed.len());
        for (index, letters) in allowed {
            if index >= parental.len() {
                return Err(Error::InvalidSpace(format!(
                    "editable position {index} outside sequence of length {}",
                    parental.len()
                )));
            }
            let parent = parental.residues()[index];
            let mut set: Vec<u8> = letters;
            for (i, &r) in set.iter().enumerate() {
                if residue_index(r).is_none() {
                    return Err(Error::InvalidResidue { index: i, found: r as char });
                }
            }
            set.push(parent);
            set.sort_unstable();
            set.dedup();
            let alternatives = set.iter().copied().filter(|&r| r != parent).collect();
            positions.push(EditablePosition { index, allowed: set, alternatives });
        }
        if !liabilities.is_clean(&parental) {
            return Err(Error::InvalidSpace(format!(
                "parental sequence {parental} already matches a liability motif"
            )));
        }
        Ok(MutationSpace { parental, positions, max_mutations, liabilities })
    }

    pub fn parental(&self) -> &Sequence {
        &self.parental
    }

    pub fn len(&self) -> usize {
        self.parental.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parental.is_empty()
    }

    pub fn positions(&self) -> &[EditablePosition] {
        &self.positions
    }

    pub fn editable_indices(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p.index).collect()
    }

    pub fn max_mutations(&self) -> usize {
        self.max_mutations
    }

    pub fn liabilities(&self) -> &LiabilityRules {
        &self.liabilities
    }

    /// Number of sequences with at most `max_mutations` substitutions,
    /// ignoring liabilities. Saturates at `u128::MAX`.
    pub fn size(&self) -> u128 {
        self.size_within(self.max_mutations)
    }

    /// Number of sequences with at most `m` substitutions (capped at
    /// `max_mutations`), ignoring liabilities.
    pub fn size_within(&self, m: usize) -> u128 {
        let m = m.min(self.max_mutations);
        let counts = elementary_symmetric_u128(
            self.positions.iter().map(|p| p.alternatives.len() as u128),
            m,
        );
        counts.iter().fold(0u128, |acc, &c| acc.saturating_add(c))
    }

    /// Checks every feasibility invariant for `seq`.
    pub fn is_feasible(&self, seq: &Sequence) -> bool {
        if seq.len() != self.len() {
            return false;
        }
        let residues = seq.residues();
        let parent = self.parental.residues();
        let mut editable = vec![None; self.len()];
        for pos in &self.positions {
            editable[pos.index] = Some(pos);
        }
        let mut mutations = 0;
        for (i, (&r, &p)) in residues.iter().zip(parent).enumerate() {
            if residue_index(r).is_none() {
                return false;
            }
            if r != p {
                match editable[i] {
                    Some(pos) if pos.allowed.contains(&r) => mutations += 1,
                    _ => return false,
                }
            }
        }
        mutations <= self.max_mutations && self.liabilities.is_clean(seq)
    }
}

/// Elementary symmetric polynomials e_0..=e_m of `values`, saturating.
fn elementary_symmetric_u128(values: impl Iterator<Item = u128>, m: usize) -> Vec<u128> {
    let mut e = vec![0u128; m + 1];
    e[0] = 1;
    for d in values {
        for j in (1..=m).rev() {
            e[j] = e[j].saturating_add(e[j - 1].saturating_mul(d));
        }
    }
    e
}

/// Hamming distance between `seq` and the parental sequence.
pub fn mutation_count(seq: &Sequence, space: &MutationSpace) -> Result<usize> {
    seq.hamming(&space.parental)
}

/// Reverts substitutions until `residues` satisfies the mutation budget and
/// the liability rules.
fn repair_residues<R: Rng + ?Sized>(
    mut residues: Vec<u8>,
    space: &MutationSpace,
    rng: &mut R,
) -> Result<Sequence> {
    let parent = space.parental.residues();
    for _ in 0..MAX_REPAIR_ATTEMPTS {
        let mutated: Vec<usize> = (0..residues.len()).filter(|&i| residues[i] != parent[i]).collect();
        if mutated.len() > space.max_mutations {
            let excess = mutated.len() - space.max_mutations;
            for &i in mutated.choose_multiple(rng, excess) {
                residues[i] = parent[i];
            }
            continue;
        }
        match space.liabilities.first_violation(&residues) {
            None => return Ok(Sequence::from_residues_unchecked(residues)),
            Some((start, len)) => {
                let inside: Vec<usize> =
                    (start..start + len).filter(|&i| residues[i] != parent[i]).collect();
                match inside.choose(rng) {
                    Some(&i) => residues[i] = parent[i],
                    None => break,
                }
            }
        }
    }
    Err(Error::RepairFailure {
        sequence: String::from_utf8_lossy(&residues).into_owned(),
        attempts: MAX_REPAIR_ATTEMPTS,
    })
}

/// Brings `seq` back into the feasible set by reverting substitutions.
pub fn repair<R: Rng + ?Sized>(seq: Sequence, space: &MutationSpace, rng: &mut R) -> Result<Sequence> {
    if seq.len() != space.len() {
        return Err(Error::LengthMismatch { expected: space.len(), found: seq.len() });
    }
    repair_residues(seq.0, space, rng)
}

/// Resamples each editable position with probability `per_position_prob`,
/// uniformly among the allowed residues other than the current one.
pub fn mutate<R: Rng + ?Sized>(
    seq: &Sequence,
    space: &MutationSpace,
    per_position_prob: f64,
    rng: &mut R,
) -> Result<Sequence> {
    if seq.len() != space.len() {
        return Err(Error::LengthMismatch { expected: space.len(), found: seq.len() });
    }
    let mut residues = seq.0.clone();
    let mut changed = false;
    for pos in &space.positions {
        if pos.allowed.len() < 2 || !rng.gen_bool(per_position_prob) {
            continue;
        }
        let current = residues[pos.index];
        let pick = rng.gen_range(0..pos.allowed.len() - 1);
        let mut choices = pos.allowed.iter().filter(|&&r| r != current);
        residues[pos.index] = *choices.nth(pick).expect("pick is within range");
        changed = true;
    }
    if !changed {
        return Ok(seq.clone());
    }
    repair_residues(residues, space, rng)
}

/// Swaps the suffixes of `a` and `b` after `cut`.
pub fn crossover_at(a: &Sequence, b: &Sequence, cut: usize) -> Result<(Sequence, Sequence)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    let cut = cut.min(a.len());
    let mut left = a.0[..cut].to_vec();
    left.extend_from_slice(&b.0[cut..]);
    let mut right = b.0[..cut].to_vec();
    right.extend_from_slice(&a.0[cut..]);
    Ok((Sequence(left), Sequence(right)))
}

/// Single-point crossover with a cut drawn uniformly from `1..len`; children
/// are repaired into the feasible set.
pub fn single_point_crossover<R: Rng + ?Sized>(
    a: &Sequence,
    b: &Sequence,
    space: &MutationSpace,
    rng: &mut R,
) -> Result<(Sequence, Sequence)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    if a.len() < 2 {
        return Ok((a.clone(), b.clone()));
    }
    let cut = rng.gen_range(1..a.len());
    let (left, right) = crossover_at(a, b, cut)?;
    let left = if space.is_feasible(&left) { left } else { repair_residues(left.0, space, rng)? };
    let right = if space.is_feasible(&right) { right } else { repair_residues(right.0, space, rng)? };
    Ok((left, right))
}

/// Draws a sequence with exactly `m` substitutions at uniformly chosen
/// editable positions (restricted to positions that have alternatives).
fn random_mutant<R: Rng + ?Sized>(space: &MutationSpace, m: usize, rng: &mut R) -> Sequence {
    let candidates: Vec<&EditablePosition> =
        space.positions.iter().filter(|p| !p.alternatives.is_empty()).collect();
    let mut residues = space.parental.0.clone();
    for pos in candidates.choose_multiple(rng, m.min(candidates.len())) {
        residues[pos.index] = *pos.alternatives.choose(rng).expect("non-empty alternatives");
    }
    Sequence(residues)
}

/// Draws `n` distinct liability-clean sequences; element 0 is the parental
/// and the rest carry between 1 and `init_max_mut` substitutions.
pub fn sample_initial<R: Rng + ?Sized>(
    space: &MutationSpace,
    n: usize,
    init_max_mut: usize,
    rng: &mut R,
) -> Result<Vec<Sequence>> {
    let limit = init_max_mut.min(space.max_mutations);
    let available = space.size_within(limit);
    if (n as u128) > available {
        return Err(Error::SpaceTooSmall { requested: n, available });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut out = vec![space.parental.clone()];
    let mut seen: HashSet<Sequence> = out.iter().cloned().collect();
    if n == 1 {
        return Ok(out);
    }
    if limit == 0 {
        return Err(Error::SpaceTooSmall { requested: n, available: 1 });
    }

    // Small neighbourhoods are enumerated so that the request either succeeds
    // or fails deterministically.
    if available <= 4 * n as u128 {
        let mut pool: Vec<Sequence> = SpaceIter::new(space, limit)
            .filter(|s| s != &space.parental)
            .collect();
        if pool.len() + 1 < n {
            return Err(Error::SpaceTooSmall { requested: n, available: pool.len() as u128 + 1 });
        }
        pool.shuffle(rng);
        out.extend(pool.into_iter().take(n - 1));
        return Ok(out);
    }

    let max_attempts = 1000 * n;
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::SpaceTooSmall { requested: n, available: out.len() as u128 });
        }
        let m = rng.gen_range(1..=limit);
        let candidate = random_mutant(space, m, rng);
        if candidate == space.parental || !space.liabilities.is_clean(&candidate) {
            continue;
        }
        if seen.insert(candidate.clone()) {
            out.push(candidate);
        }
    }
    Ok(out)
}

/// Uniform sampler over the feasible set.
///
/// Draws uniformly over all sequences within the mutation budget and rejects
/// liability matches, which keeps the result uniform over clean sequences.
#[derive(Clone, Debug)]
pub struct UniformSampler {
    /// `tail[i][r]` = e_r of the alternative counts of positions `i..`.
    tail: Vec<Vec<f64>>,
    alternatives: Vec<usize>,
    max_mutations: usize,
}

impl UniformSampler {
    pub fn new(space: &MutationSpace) -> Self {
        let m = space.max_mutations;
        let alternatives: Vec<usize> = space.positions.iter().map(|p| p.alternatives.len()).collect();
        let k = alternatives.len();
        let mut tail = vec![vec![0.0; m + 1]; k + 1];
        tail[k][0] = 1.0;
        for i in (0..k).rev() {
            let d = alternatives[i] as f64;
            for r in 0..=m {
                let skip = tail[i + 1][r];
                let take = if r > 0 { d * tail[i + 1][r - 1] } else { 0.0 };
                tail[i][r] = skip + take;
            }
        }
        UniformSampler { tail, alternatives, max_mutations: m }
    }

    fn draw_unchecked<R: Rng + ?Sized>(&self, space: &MutationSpace, rng: &mut R) -> Sequence {
        let total: f64 = self.tail[0].iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut m = 0;
        for (j, &w) in self.tail[0].iter().enumerate() {
            m = j;
            if u < w {
                break;
            }
            u -= w;
        }
        let mut residues = space.parental.0.clone();
        let mut remaining = m;
        for (i, pos) in space.positions.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let here = self.tail[i][remaining];
            let take = self.alternatives[i] as f64 * self.tail[i + 1][remaining - 1];
            if here > 0.0 && rng.gen::<f64>() * here < take {
                residues[pos.index] = *pos.alternatives.choose(rng).expect("non-empty alternatives");
                remaining -= 1;
            }
        }
        debug_assert!(remaining <= self.max_mutations);
        Sequence(residues)
    }

    /// Draws one feasible sequence, or `None` after `max_attempts` liability
    /// rejections.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        space: &MutationSpace,
        rng: &mut R,
        max_attempts: usize,
    ) -> Option<Sequence> {
        (0..max_attempts)
            .map(|_| self.draw_unchecked(space, rng))
            .find(|s| space.liabilities.is_clean(s))
    }
}

/// Deterministic enumeration of every feasible sequence.
///
/// Order: mutation count ascending, then position subsets in lexicographic
/// order, then residues alphabetically with the last position varying
/// fastest.
pub fn enumerate_space(space: &MutationSpace, cap: u128) -> Result<SpaceIter<'_>> {
    let size = space.size();
    if size > cap {
        return Err(Error::SpaceTooLarge { size, cap });
    }
    Ok(SpaceIter::new(space, space.max_mutations))
}

pub struct SpaceIter<'a> {
    space: &'a MutationSpace,
    /// Positions that have at least one alternative.
    slots: Vec<usize>,
    limit: usize,
    count: usize,
    combo: Vec<usize>,
    letters: Vec<usize>,
    started: bool,
    done: bool,
}

impl<'a> SpaceIter<'a> {
    fn new(space: &'a MutationSpace, limit: usize) -> Self {
        let slots = (0..space.positions.len())
            .filter(|&i| !space.positions[i].alternatives.is_empty())
            .collect();
        SpaceIter {
            space,
            slots,
            limit: limit.min(space.max_mutations),
            count: 0,
            combo: Vec::new(),
            letters: Vec::new(),
            started: false,
            done: false,
        }
    }

    fn alternatives(&self, slot: usize) -> &[u8] {
        &self.space.positions[self.slots[slot]].alternatives
    }

    fn build(&self) -> Sequence {
        let mut residues = self.space.parental.0.clone();
        for (&slot, &letter) in self.combo.iter().zip(&self.letters) {
            let pos = &self.space.positions[self.slots[slot]];
            residues[pos.index] = pos.alternatives[letter];
        }
        Sequence(residues)
    }

    fn next_letters(&mut self) -> bool {
        for i in (0..self.combo.len()).rev() {
            self.letters[i] += 1;
            if self.letters[i] < self.alternatives(self.combo[i]).len() {
                return true;
            }
            self.letters[i] = 0;
        }
        false
    }

    fn next_combo(&mut self) -> bool {
        let k = self.slots.len();
        let r = self.combo.len();
        for i in (0..r).rev() {
            if self.combo[i] < k - r + i {
                self.combo[i] += 1;
                for j in i + 1..r {
                    self.combo[j] = self.combo[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }

    fn advance(&mut self) -> bool {
        if !self.started {
            self.started = true;
            return true;
        }
        if self.next_letters() || self.next_combo() {
            return true;
        }
        self.count += 1;
        if self.count > self.limit || self.count > self.slots.len() {
            return false;
        }
        self.combo = (0..self.count).collect();
        self.letters = vec![0; self.count];
        true
    }
}

impl Iterator for SpaceIter<'_> {
    type Item = Sequence;

    fn next(&mut self) -> Option<Sequence> {
        while !self.done {
            if !self.advance() {
                self.done = true;
                break;
            }
            let seq = self.build();
            if self.space.liabilities.is_clean(&seq) {
                return Some(seq);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(s: &str) -> Sequence {
        Sequence::parse(s).unwrap()
    }

    fn space(parental: &str, allowed: &[(usize, &str)], max: usize) -> MutationSpace {
        let map = allowed.iter().map(|(i, a)| (*i, a.as_bytes().to_vec())).collect();
        MutationSpace::new(seq(parental), map, max, LiabilityRules::none()).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate_sequence("ACDEF", 5).unwrap().as_str(), "ACDEF");
        match validate_sequence("ACDEB", 5) {
            Err(Error::InvalidResidue { index, found }) => assert_eq!((index, found), (4, 'B')),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(validate_sequence("ACDE", 5), Err(Error::LengthMismatch { .. })));
        assert!(matches!(Sequence::parse("acd"), Err(Error::InvalidResidue { index: 0, .. })));
    }

    #[test]
    fn mutation_count_examples() {
        let sp = space("AAAAA", &[(2, "AC")], 5);
        assert_eq!(mutation_count(&seq("AAAAA"), &sp).unwrap(), 0);
        assert_eq!(mutation_count(&seq("AACAA"), &sp).unwrap(), 1);
        assert_eq!(mutation_count(&seq("CCCCC"), &sp).unwrap(), 5);
        assert!(mutation_count(&seq("AAAA"), &sp).is_err());
    }

    #[test]
    fn glycosylation_motif() {
        let rules = LiabilityRules::glycosylation();
        assert_eq!(
            rules.check(&seq("ANAS")),
            vec![Violation { position: 1, motif: "Nx[ST]".into() }]
        );
        assert!(rules.check(&seq("ANPS")).is_empty());
        assert!(rules.check(&seq("AAAA")).is_empty());
        assert_eq!(rules.check(&seq("NATNGS")).len(), 2);
    }

    #[test]
    fn motif_parse_errors() {
        assert!(Motif::parse("N[ST").is_err());
        assert!(Motif::parse("N[]").is_err());
        assert!(Motif::parse("Nb").is_err());
        assert!(Motif::parse("").is_err());
        let m = Motif::parse("DG").unwrap();
        assert_eq!(m.label(), "DG");
        assert_eq!(LiabilityRules::glycosylation().specs(), vec!["Nx[ST]=N[^P][ST]".to_string()]);
    }

    #[test]
    fn parental_added_to_allowed() {
        let sp = space("AAAA", &[(1, "CD")], 2);
        assert_eq!(sp.positions()[0].allowed, b"ACD".to_vec());
        assert_eq!(sp.positions()[0].alternatives, b"CD".to_vec());
    }

    #[test]
    fn rejects_bad_spaces() {
        let map: BTreeMap<usize, Vec<u8>> = [(9, b"C".to_vec())].into();
        assert!(MutationSpace::new(seq("AAAA"), map, 1, LiabilityRules::none()).is_err());
        let map: BTreeMap<usize, Vec<u8>> = [(0, b"C".to_vec())].into();
        assert!(MutationSpace::new(seq("AAAA"), map.clone(), 0, LiabilityRules::none()).is_err());
        assert!(MutationSpace::new(seq("NAS"), map, 1, LiabilityRules::glycosylation()).is_err());
    }

    #[test]
    fn mutate_zero_probability_is_identity() {
        let sp = space("AAAAAA", &[(0, "CDE"), (3, "CDE")], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = seq("CAAAAA");
        for _ in 0..100 {
            assert_eq!(mutate(&s, &sp, 0.0, &mut rng).unwrap(), s);
        }
    }

    #[test]
    fn mutate_forced_flip() {
        let sp = space("A", &[(0, "AC")], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(mutate(&seq("A"), &sp, 1.0, &mut rng).unwrap(), seq("C"));
        assert_eq!(mutate(&seq("C"), &sp, 1.0, &mut rng).unwrap(), seq("A"));
    }

    #[test]
    fn mutate_expected_rate() {
        // Binomial(10, 0.1) mutated positions per draw: mean 1, variance 0.9.
        let allowed: Vec<(usize, &str)> = (0..10).map(|i| (i, "AC")).collect();
        let sp = space("AAAAAAAAAA", &allowed, 10);
        let parental = sp.parental().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let total: usize = (0..draws)
            .map(|_| mutation_count(&mutate(&parental, &sp, 0.1, &mut rng).unwrap(), &sp).unwrap())
            .sum();
        let mean = total as f64 / draws as f64;
        let se = (0.9f64 / draws as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn mutate_repairs_budget_and_liabilities() {
        let map: BTreeMap<usize, Vec<u8>> =
            (0..6).map(|i| (i, b"NST".to_vec())).collect();
        let sp = MutationSpace::new(seq("AAAAAA"), map, 2, LiabilityRules::glycosylation()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let out = mutate(sp.parental(), &sp, 0.9, &mut rng).unwrap();
            assert!(sp.is_feasible(&out), "{out}");
        }
    }

    #[test]
    fn crossover_examples() {
        let (l, r) = crossover_at(&seq("AAAA"), &seq("CCCC"), 2).unwrap();
        assert_eq!((l.as_str(), r.as_str()), ("AACC", "CCAA"));
        let sp = space("AAAA", &[(0, "C"), (1, "C"), (2, "C"), (3, "C")], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = seq("ACAC");
        assert_eq!(single_point_crossover(&a, &a, &sp, &mut rng).unwrap(), (a.clone(), a.clone()));
        assert!(crossover_at(&seq("AAA"), &seq("AA"), 1).is_err());
        for _ in 0..100 {
            let b = seq("CCAA");
            let (l, r) = single_point_crossover(&a, &b, &sp, &mut rng).unwrap();
            for p in 0..4 {
                let mut before = [a.residues()[p], b.residues()[p]];
                let mut after = [l.residues()[p], r.residues()[p]];
                before.sort();
                after.sort();
                assert_eq!(before, after);
            }
        }
    }

    #[test]
    fn sample_initial_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sp = space("AAAAAAAA", &(0..8).map(|i| (i, "CDE")).collect::<Vec<_>>(), 3);
        assert_eq!(sample_initial(&sp, 1, 2, &mut rng).unwrap(), vec![sp.parental().clone()]);
        let init = sample_initial(&sp, 100, 2, &mut rng).unwrap();
        assert_eq!(init.len(), 100);
        assert_eq!(&init[0], sp.parental());
        let distinct: HashSet<_> = init.iter().collect();
        assert_eq!(distinct.len(), 100);
        assert!(init.iter().all(|s| mutation_count(s, &sp).unwrap() <= 2 && sp.is_feasible(s)));
        assert!(init[1..].iter().all(|s| mutation_count(s, &sp).unwrap() >= 1));

        // 1 + 2 + 2 = 5 members.
        let tiny = space("AAA", &[(0, "CD"), (1, "CD")], 1);
        assert_eq!(tiny.size(), 5);
        assert!(matches!(
            sample_initial(&tiny, 6, 1, &mut rng),
            Err(Error::SpaceTooSmall { requested: 6, available: 5 })
        ));
        let all = sample_initial(&tiny, 5, 1, &mut rng).unwrap();
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 5);
    }

    #[test]
    fn enumerate_examples() {
        let one = space("A", &[(0, "ACD")], 1);
        let all: Vec<String> = enumerate_space(&one, DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(all, vec!["A", "C", "D"]);

        let two = space("AA", &[(0, "ACD"), (1, "ACD")], 1);
        let all: Vec<String> = enumerate_space(&two, DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(all, vec!["AA", "CA", "DA", "AC", "AD"]);

        assert!(matches!(enumerate_space(&two, 4), Err(Error::SpaceTooLarge { size: 5, cap: 4 })));
    }

    #[test]
    fn enumerate_skips_liabilities() {
        let map: BTreeMap<usize, Vec<u8>> = [(0, b"N".to_vec()), (2, b"S".to_vec())].into();
        let sp = MutationSpace::new(seq("AAA"), map, 2, LiabilityRules::glycosylation()).unwrap();
        let all: Vec<String> =
            enumerate_space(&sp, 100).unwrap().map(|s| s.to_string()).collect();
        assert_eq!(all, vec!["AAA", "NAA", "AAS"]);
    }

    #[test]
    fn uniform_sampler_is_uniform() {
        let sp = space("AAA", &[(0, "CD"), (1, "C"), (2, "CDE")], 2);
        let members: Vec<Sequence> = enumerate_space(&sp, 1000).unwrap().collect();
        let sampler = UniformSampler::new(&sp);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 60_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let s = sampler.sample(&sp, &mut rng, 10).unwrap();
            assert!(sp.is_feasible(&s));
            *counts.entry(s).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), members.len());
        let expect = draws as f64 / members.len() as f64;
        for c in counts.values() {
            assert!((*c as f64 - expect).abs() < 5.0 * expect.sqrt(), "{c} vs {expect}");
        }
    }

    #[test]
    fn operators_are_seed_reproducible() {
        let sp = space("AAAAAA", &(0..6).map(|i| (i, "CDEF")).collect::<Vec<_>>(), 3);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = sample_initial(&sp, 20, 2, &mut rng).unwrap();
            let m = mutate(&init[3], &sp, 0.5, &mut rng).unwrap();
            let c = single_point_crossover(&init[4], &init[5], &sp, &mut rng).unwrap();
            (init, m, c)
        };
        assert_eq!(run(11), run(11));
    }
}

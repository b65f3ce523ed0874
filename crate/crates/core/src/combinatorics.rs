//! Exact Wick moments, truncated correlations and Feynman diagram census.
//!
//! All values are `BigRational`. Diagrams are purely combinatorial: momenta
//! are integer combinations of symbols, parities are `±1`.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CombinatoricsError {
    #[error("word of odd length {0}")]
    OddLength(usize),
    #[error("{creations} creation letters against {annihilations} annihilation letters")]
    CountMismatch { creations: usize, annihilations: usize },
    #[error("word length {len} exceeds the cap {cap}")]
    LengthCap { len: usize, cap: usize },
    #[error("{count} objects exceed the enumeration cap {cap}")]
    SizeCap { count: u128, cap: u128 },
    #[error("mode {mode} has no occupation value ({modes} modes)")]
    ModeOutOfRange { mode: usize, modes: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Largest word handled by [`truncate`].
pub const TRUNCATION_CAP: usize = 8;
/// Largest number of histories or contracted diagrams enumerated.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// One field letter. `parity = +1` is annihilation-type, `-1` creation-type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter {
    pub mode: usize,
    pub parity: i8,
}

impl Letter {
    pub fn annihilation(mode: usize) -> Self {
        Letter { mode, parity: 1 }
    }

    pub fn creation(mode: usize) -> Self {
        Letter { mode, parity: -1 }
    }
}

/// Vanishes under the gauge symmetry unless the parities sum to zero.
pub fn is_gauge_neutral(word: &[Letter]) -> bool {
    word.iter().map(|l| l.parity as i64).sum::<i64>() == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldStatistics {
    Boson,
    Fermion,
    ClassicalGaussian,
}

/// Diagonal two-point function: `⟨a*(k)a(k)⟩ = W(k)`, `⟨a(k)a*(k)⟩ = 1 + θW(k)`.
/// The classical rule ignores the order.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointRule {
    pub statistics: FieldStatistics,
    pub occupation: Vec<BigRational>,
}

impl TwoPointRule {
    pub fn new(statistics: FieldStatistics, occupation: Vec<BigRational>) -> Self {
        TwoPointRule { statistics, occupation }
    }

    fn occupation_of(&self, mode: usize) -> Result<&BigRational, CombinatoricsError> {
        self.occupation
            .get(mode)
            .ok_or(CombinatoricsError::ModeOutOfRange { mode, modes: self.occupation.len() })
    }

    /// Contraction of `left` with `right`, in that operator order.
    pub fn contraction(&self, left: Letter, right: Letter) -> Result<BigRational, CombinatoricsError> {
        let w = self.occupation_of(left.mode)?;
        self.occupation_of(right.mode)?;
        if left.mode != right.mode || left.parity == right.parity {
            return Ok(BigRational::zero());
        }
        Ok(match (self.statistics, left.parity) {
            (FieldStatistics::ClassicalGaussian, _) | (_, -1) => w.clone(),
            (FieldStatistics::Boson, _) => BigRational::one() + w,
            (FieldStatistics::Fermion, _) => BigRational::one() - w,
        })
    }
}

fn check_word(word: &[Letter], rule: &TwoPointRule) -> Result<(), CombinatoricsError> {
    if word.len() % 2 == 1 {
        return Err(CombinatoricsError::OddLength(word.len()));
    }
    for l in word {
        rule.occupation_of(l.mode)?;
    }
    Ok(())
}

/// Sum over pairings of `positions`, each pair contracted in word order. With
/// `signed` each term carries the sign of its pairing permutation.
fn pairing_sum<F>(positions: &mut Vec<usize>, signed: bool, pair_value: &F) -> BigRational
where
    F: Fn(usize, usize) -> BigRational,
{
    if positions.is_empty() {
        return BigRational::one();
    }
    let first = positions.remove(0);
    let mut total = BigRational::zero();
    for r in 0..positions.len() {
        let partner = positions[r];
        let value = pair_value(first, partner);
        if value.is_zero() {
            continue;
        }
        positions.remove(r);
        let rest = pairing_sum(positions, signed, pair_value);
        positions.insert(r, partner);
        // the partner jumps over `r` letters to sit next to `first`
        let term = value * rest;
        if signed && r % 2 == 1 {
            total -= term;
        } else {
            total += term;
        }
    }
    positions.insert(0, first);
    total
}

/// Signed pairing sum with order-sensitive contractions.
pub fn quasifree_moment(word: &[Letter], rule: &TwoPointRule) -> Result<BigRational, CombinatoricsError> {
    check_word(word, rule)?;
    if !is_gauge_neutral(word) {
        return Ok(BigRational::zero());
    }
    let signed = rule.statistics == FieldStatistics::Fermion;
    let pair = |i: usize, j: usize| rule.contraction(word[i], word[j]).expect("modes checked");
    Ok(pairing_sum(&mut (0..word.len()).collect(), signed, &pair))
}

/// Gaussian-measure moment: every contraction is `W`, whatever the order.
pub fn classical_moment(word: &[Letter], rule: &TwoPointRule) -> Result<BigRational, CombinatoricsError> {
    let classical = TwoPointRule { statistics: FieldStatistics::ClassicalGaussian, occupation: rule.occupation.clone() };
    quasifree_moment(word, &classical)
}

/// `a*(c₁)…a*(cₙ) a(aₙ)…a(a₁)`.
pub fn normal_ordered_word(creations: &[usize], annihilations: &[usize]) -> Vec<Letter> {
    creations
        .iter()
        .map(|&m| Letter::creation(m))
        .chain(annihilations.iter().rev().map(|&m| Letter::annihilation(m)))
        .collect()
}

fn signed_permutation_sum(matrix: &[Vec<BigRational>], signed: bool) -> BigRational {
    fn go(matrix: &[Vec<BigRational>], row: usize, used: &mut Vec<bool>, signed: bool) -> BigRational {
        if row == matrix.len() {
            return BigRational::one();
        }
        let mut total = BigRational::zero();
        let mut skipped = 0;
        for col in 0..matrix.len() {
            if used[col] {
                continue;
            }
            if !matrix[row][col].is_zero() {
                used[col] = true;
                let term = &matrix[row][col] * go(matrix, row + 1, used, signed);
                used[col] = false;
                if signed && skipped % 2 == 1 {
                    total -= term;
                } else {
                    total += term;
                }
            }
            skipped += 1;
        }
        total
    }
    go(matrix, 0, &mut vec![false; matrix.len()], signed)
}

/// Determinant of `[[a,b],…]` (`signed`) or its permanent.
pub fn determinant_or_permanent(matrix: &[Vec<BigRational>], signed: bool) -> BigRational {
    signed_permutation_sum(matrix, signed)
}

/// Moment of [`normal_ordered_word`]: determinant (fermions) or permanent of
/// `⟨a*(cᵢ)a(aⱼ)⟩`.
pub fn normal_ordered_moment(
    creations: &[usize],
    annihilations: &[usize],
    rule: &TwoPointRule,
) -> Result<BigRational, CombinatoricsError> {
    if creations.len() != annihilations.len() {
        return Err(CombinatoricsError::CountMismatch { creations: creations.len(), annihilations: annihilations.len() });
    }
    let mut matrix = Vec::with_capacity(creations.len());
    for &c in creations {
        let mut row = Vec::with_capacity(annihilations.len());
        for &a in annihilations {
            row.push(rule.contraction(Letter::creation(c), Letter::annihilation(a))?);
        }
        matrix.push(row);
    }
    Ok(signed_permutation_sum(&matrix, rule.statistics == FieldStatistics::Fermion))
}

/// Parity of the permutation taking `mask` to `(J, mask∖J)`.
fn split_is_odd(mask: u32, block: u32) -> bool {
    let mut inversions = 0u32;
    let mut rest_seen = 0u32;
    for bit in 0..32 {
        let b = 1u32 << bit;
        if mask & b == 0 {
            continue;
        }
        if block & b != 0 {
            inversions += rest_seen;
        } else {
            rest_seen += 1;
        }
    }
    inversions % 2 == 1
}

fn sub_word(word: &[Letter], mask: u32) -> Vec<Letter> {
    (0..word.len()).filter(|i| mask & (1 << i) != 0).map(|i| word[i]).collect()
}

/// Full truncation of `moment` on `word`, using the block containing the
/// first letter:
/// `F(I) = Σ_{J ∋ min I} ε(J, I∖J) F_T(J) F(I∖J)` over even ordered `J`.
pub fn truncate<F>(word: &[Letter], statistics: FieldStatistics, moment: F) -> Result<BigRational, CombinatoricsError>
where
    F: Fn(&[Letter]) -> BigRational,
{
    if word.len() > TRUNCATION_CAP {
        return Err(CombinatoricsError::LengthCap { len: word.len(), cap: TRUNCATION_CAP });
    }
    if word.len() % 2 == 1 {
        return Err(CombinatoricsError::OddLength(word.len()));
    }
    if word.is_empty() {
        return Ok(BigRational::zero());
    }
    let signed = statistics == FieldStatistics::Fermion;
    let mut moments: HashMap<u32, BigRational> = HashMap::new();
    let mut truncated: HashMap<u32, BigRational> = HashMap::new();
    let full = (1u32 << word.len()) - 1;
    Ok(truncated_on(full, word, signed, &moment, &mut moments, &mut truncated))
}

fn moment_on<F>(mask: u32, word: &[Letter], moment: &F, cache: &mut HashMap<u32, BigRational>) -> BigRational
where
    F: Fn(&[Letter]) -> BigRational,
{
    if mask == 0 {
        return BigRational::one();
    }
    cache.entry(mask).or_insert_with(|| moment(&sub_word(word, mask))).clone()
}

fn truncated_on<F>(
    mask: u32,
    word: &[Letter],
    signed: bool,
    moment: &F,
    moments: &mut HashMap<u32, BigRational>,
    truncated: &mut HashMap<u32, BigRational>,
) -> BigRational
where
    F: Fn(&[Letter]) -> BigRational,
{
    if let Some(v) = truncated.get(&mask) {
        return v.clone();
    }
    let lowest = mask & mask.wrapping_neg();
    let others = mask & !lowest;
    let mut value = moment_on(mask, word, moment, moments);
    // proper blocks J = {lowest} ∪ S with S a strict subset of the others
    let mut s = others;
    loop {
        s = s.wrapping_sub(1) & others;
        let block = lowest | s;
        if block != mask && block.count_ones() % 2 == 0 {
            let rest = mask & !block;
            let term = truncated_on(block, word, signed, moment, moments, truncated) * moment_on(rest, word, moment, moments);
            if signed && split_is_odd(mask, block) {
                value += term;
            } else {
                value -= term;
            }
        }
        if s == 0 {
            break;
        }
    }
    truncated.insert(mask, value.clone());
    value
}

/// Sign of a permutation given as a list of images.
pub fn permutation_sign(perm: &[usize]) -> i8 {
    let mut inversions = 0;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 { 1 } else { -1 }
}

/// Fusion positions `ℓ₁…ℓₙ`, 1-based: fusion `i` merges lines `ℓᵢ, ℓᵢ+1,
/// ℓᵢ+2` of slice `i−1` into line `ℓᵢ` of slice `i`, which holds
/// `m_i = n₀ + 2n − 2i` lines.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InteractionHistory {
    pub external: usize,
    pub ell: Vec<usize>,
}

impl InteractionHistory {
    pub fn new(external: usize, ell: Vec<usize>) -> Result<Self, CombinatoricsError> {
        if external == 0 {
            return Err(CombinatoricsError::InvalidArgument("at least one external line".into()));
        }
        let h = InteractionHistory { external, ell };
        for (i, &l) in h.ell.iter().enumerate() {
            let m = h.lines_in_slice(i + 1);
            if l == 0 || l > m {
                return Err(CombinatoricsError::InvalidArgument(format!("ell_{} = {l} outside 1..={m}", i + 1)));
            }
        }
        Ok(h)
    }

    pub fn fusions(&self) -> usize {
        self.ell.len()
    }

    /// `m_i`; slice 0 holds the initial lines.
    pub fn lines_in_slice(&self, slice: usize) -> usize {
        self.external + 2 * self.fusions() - 2 * slice
    }
}

/// `|G_n| = m₁⋯mₙ`.
pub fn history_count(external: usize, fusions: usize) -> u128 {
    let h = InteractionHistory { external, ell: vec![1; fusions] };
    (1..=fusions).map(|i| h.lines_in_slice(i) as u128).product()
}

/// `G_n` as a Cartesian product; `n = 0` gives the single empty history.
pub fn enumerate_histories(external: usize, fusions: usize) -> Result<Vec<InteractionHistory>, CombinatoricsError> {
    if external == 0 {
        return Err(CombinatoricsError::InvalidArgument("at least one external line".into()));
    }
    let count = history_count(external, fusions);
    if count > ENUMERATION_CAP {
        return Err(CombinatoricsError::SizeCap { count, cap: ENUMERATION_CAP });
    }
    let shape = InteractionHistory { external, ell: vec![1; fusions] };
    let mut out = Vec::with_capacity(count as usize);
    let mut ell = vec![1usize; fusions];
    loop {
        out.push(InteractionHistory { external, ell: ell.clone() });
        // odometer, last fusion fastest
        let mut i = fusions;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if ell[i] < shape.lines_in_slice(i + 1) {
                ell[i] += 1;
                break;
            }
            ell[i] = 1;
        }
    }
}

/// Integer combination of momentum symbols.
pub type Momentum = BTreeMap<usize, i64>;

fn add_momenta(terms: &[&Momentum]) -> Momentum {
    let mut out = Momentum::new();
    for t in terms {
        for (&s, &c) in t.iter() {
            *out.entry(s).or_insert(0) += c;
        }
    }
    out.retain(|_, c| *c != 0);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub momentum: Momentum,
    pub parity: i8,
}

/// Lines of every slice, slice 0 first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDiagram {
    pub history: InteractionHistory,
    pub slices: Vec<Vec<Line>>,
}

impl LabeledDiagram {
    /// The fusing triplet of fusion `i` (1-based) and the fused line.
    pub fn fusion(&self, i: usize) -> (&[Line], &Line) {
        let l = self.history.ell[i - 1] - 1;
        (&self.slices[i - 1][l..l + 3], &self.slices[i][l])
    }

    /// Argument of the potential at fusion `i`: the left pair for a `+`
    /// fused line, the right pair otherwise.
    pub fn potential_argument(&self, i: usize) -> Momentum {
        let (triplet, fused) = self.fusion(i);
        if fused.parity > 0 {
            add_momenta(&[&triplet[0].momentum, &triplet[1].momentum])
        } else {
            add_momenta(&[&triplet[1].momentum, &triplet[2].momentum])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labeling {
    Feasible(LabeledDiagram),
    /// Fusion `fusion` (1-based) meets a triplet not of the form `(−,·,+)`.
    Infeasible { fusion: usize },
}

/// Propagates slice-0 labels upward. `momenta` defaults to one symbol per
/// initial line.
pub fn propagate_labels(
    history: &InteractionHistory,
    initial_parities: &[i8],
    momenta: Option<Vec<Momentum>>,
) -> Result<Labeling, CombinatoricsError> {
    let m0 = history.lines_in_slice(0);
    if initial_parities.len() != m0 {
        return Err(CombinatoricsError::InvalidArgument(format!("{} parities for {m0} lines", initial_parities.len())));
    }
    if initial_parities.iter().any(|p| p.abs() != 1) {
        return Err(CombinatoricsError::InvalidArgument("parities must be ±1".into()));
    }
    let momenta = match momenta {
        Some(m) if m.len() == m0 => m,
        Some(m) => return Err(CombinatoricsError::InvalidArgument(format!("{} momenta for {m0} lines", m.len()))),
        None => (0..m0).map(|j| Momentum::from([(j, 1)])).collect(),
    };
    let mut slices = vec![initial_parities
        .iter()
        .zip(momenta)
        .map(|(&parity, momentum)| Line { momentum, parity })
        .collect::<Vec<_>>()];
    for (i, &l) in history.ell.iter().enumerate() {
        let prev = &slices[i];
        let l = l - 1;
        if prev[l].parity != -1 || prev[l + 2].parity != 1 {
            return Ok(Labeling::Infeasible { fusion: i + 1 });
        }
        let fused = Line {
            momentum: add_momenta(&[&prev[l].momentum, &prev[l + 1].momentum, &prev[l + 2].momentum]),
            parity: prev[l + 1].parity,
        };
        let mut next = prev[..l].to_vec();
        next.push(fused);
        next.extend_from_slice(&prev[l + 3..]);
        slices.push(next);
    }
    Ok(Labeling::Feasible(LabeledDiagram { history: history.clone(), slices }))
}

/// Slice-0 parities forced by the parities of the last slice.
pub fn parities_from_final(history: &InteractionHistory, final_parities: &[i8]) -> Result<Vec<i8>, CombinatoricsError> {
    if final_parities.len() != history.external {
        return Err(CombinatoricsError::InvalidArgument(format!(
            "{} final parities for {} external lines",
            final_parities.len(),
            history.external
        )));
    }
    let mut current = final_parities.to_vec();
    for &l in history.ell.iter().rev() {
        let l = l - 1;
        let middle = current[l];
        current.splice(l..=l, [-1, middle, 1]);
    }
    Ok(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubleadingReason {
    /// The pairing is not a perfect matching of slice 0.
    InvalidPairing,
    /// A pair joins two lines of equal parity.
    EqualParityPair { slice: usize },
    /// Two fusing momenta cancel, forcing the potential at zero momentum.
    ZeroPotential { fusion: usize },
    /// The lines of an even slice admit no pairing.
    UnpairedSlice { slice: usize },
    OddOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Leadingness {
    Leading,
    Subleading(SubleadingReason),
}

fn match_lines(lines: &[Line], used: &mut Vec<bool>, out: &mut Vec<(usize, usize)>) -> bool {
    let Some(a) = used.iter().position(|u| !u) else { return true };
    used[a] = true;
    for b in a + 1..lines.len() {
        if used[b] || lines[a].parity == lines[b].parity {
            continue;
        }
        if add_momenta(&[&lines[a].momentum, &lines[b].momentum]).is_empty() {
            used[b] = true;
            out.push((a, b));
            if match_lines(lines, used, out) {
                return true;
            }
            out.pop();
            used[b] = false;
        }
    }
    used[a] = false;
    false
}

/// Pairs of opposite parity and cancelling momenta covering `lines`, if any.
pub fn slice_pairing(lines: &[Line]) -> Option<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    match_lines(lines, &mut vec![false; lines.len()], &mut out).then_some(out)
}

/// Relabels slice 0 so that pair `p = (a, b)` carries `+e_p` on `a` and
/// `−e_p` on `b`, then checks the even-slice pairing and the absence of
/// cancelling fusing momenta.
pub fn classify_leading(diagram: &LabeledDiagram, pairing: &[(usize, usize)]) -> Leadingness {
    use Leadingness::*;
    use SubleadingReason::*;
    let initial = &diagram.slices[0];
    let mut seen = vec![false; initial.len()];
    for &(a, b) in pairing {
        if a >= initial.len() || b >= initial.len() || a == b || seen[a] || seen[b] {
            return Subleading(InvalidPairing);
        }
        seen[a] = true;
        seen[b] = true;
    }
    if seen.iter().any(|s| !s) {
        return Subleading(InvalidPairing);
    }
    if diagram.history.fusions() % 2 == 1 {
        return Subleading(OddOrder);
    }
    let mut momenta = vec![Momentum::new(); initial.len()];
    for (p, &(a, b)) in pairing.iter().enumerate() {
        if initial[a].parity == initial[b].parity {
            return Subleading(EqualParityPair { slice: 0 });
        }
        momenta[a] = Momentum::from([(p, 1)]);
        momenta[b] = Momentum::from([(p, -1)]);
    }
    let parities: Vec<i8> = initial.iter().map(|l| l.parity).collect();
    let Ok(Labeling::Feasible(paired)) = propagate_labels(&diagram.history, &parities, Some(momenta)) else {
        return Subleading(InvalidPairing);
    };
    for i in 1..=paired.history.fusions() {
        let (t, _) = paired.fusion(i);
        let sums = [
            add_momenta(&[&t[0].momentum, &t[1].momentum]),
            add_momenta(&[&t[1].momentum, &t[2].momentum]),
            add_momenta(&[&t[0].momentum, &t[2].momentum]),
        ];
        if sums.iter().any(Momentum::is_empty) || paired.potential_argument(i).is_empty() {
            return Subleading(ZeroPotential { fusion: i });
        }
    }
    for slice in (2..=paired.history.fusions()).step_by(2) {
        if slice_pairing(&paired.slices[slice]).is_none() {
            return Subleading(UnpairedSlice { slice });
        }
    }
    Leading
}

/// All perfect matchings of `0..len` in canonical form: pairs `(a, b)` with
/// `a < b`, sorted by first element.
pub fn pairings(len: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(rest: &mut Vec<usize>, current: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(current.clone());
            return;
        }
        let first = rest.remove(0);
        for r in 0..rest.len() {
            let partner = rest.remove(r);
            current.push((first, partner));
            go(rest, current, out);
            current.pop();
            rest.insert(r, partner);
        }
        rest.insert(0, first);
    }
    let mut out = Vec::new();
    if len % 2 == 0 {
        go(&mut (0..len).collect(), &mut Vec::new(), &mut out);
    }
    out
}

/// Contracted history of a leading diagram: for each pair of fusions, read
/// from the top, the 0-based position of the contracted line that branches,
/// among the pairs of that slice ordered by their leftmost line.
pub fn contracted_history(diagram: &LabeledDiagram) -> Option<Vec<usize>> {
    let n = diagram.history.fusions();
    if n % 2 == 1 {
        return None;
    }
    let mut out = Vec::with_capacity(n / 2);
    for slice in (1..=n / 2).rev().map(|r| 2 * r) {
        let mut pairs = slice_pairing(&diagram.slices[slice])?;
        pairs.sort();
        // the second fusion's output line lies in exactly one pair
        let line = diagram.history.ell[slice - 1] - 1;
        out.push(pairs.iter().position(|&(a, b)| a == line || b == line)?);
    }
    Some(out)
}

/// Leading diagrams of all histories and slice-0 pairings, for the given
/// final parities. Returns the total and the count per contracted history.
pub fn leading_census(
    final_parities: &[i8],
    fusions: usize,
) -> Result<(u64, BTreeMap<Vec<usize>, u64>), CombinatoricsError> {
    let histories = enumerate_histories(final_parities.len(), fusions)?;
    let all_pairings = pairings(final_parities.len() + 2 * fusions);
    let mut total = 0;
    let mut classes = BTreeMap::new();
    for h in &histories {
        let initial = parities_from_final(h, final_parities)?;
        let Labeling::Feasible(diagram) = propagate_labels(h, &initial, None)? else { continue };
        for pairing in &all_pairings {
            if classify_leading(&diagram, pairing) == Leadingness::Leading {
                total += 1;
                let mut momenta = vec![Momentum::new(); initial.len()];
                for (p, &(a, b)) in pairing.iter().enumerate() {
                    momenta[a] = Momentum::from([(p, 1)]);
                    momenta[b] = Momentum::from([(p, -1)]);
                }
                if let Labeling::Feasible(paired) = propagate_labels(h, &initial, Some(momenta))? {
                    if let Some(c) = contracted_history(&paired) {
                        *classes.entry(c).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    Ok((total, classes))
}

/// `(2n+1)!/(2ⁿ n!)`.
pub fn contracted_closed_form(n: usize) -> BigUint {
    let factorial = |m: usize| (1..=m).fold(BigUint::one(), |acc, k| acc * BigUint::from(k));
    factorial(2 * n + 1) / (BigUint::from(2u32).pow(n as u32) * factorial(n))
}

/// Contracted diagrams with `n` collisions grown from one line: collision
/// `r` (from the top, 0-based) branches one of the `2r + 1` current lines
/// into three neighbours.
pub fn enumerate_contracted(n: usize) -> Result<Vec<Vec<usize>>, CombinatoricsError> {
    let count: u128 = (0..n).map(|r| 2 * r as u128 + 1).product();
    if count > ENUMERATION_CAP {
        return Err(CombinatoricsError::SizeCap { count, cap: ENUMERATION_CAP });
    }
    let mut out = vec![Vec::new()];
    for r in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                (0..2 * r + 1).map(move |j| {
                    let mut next = prefix.clone();
                    next.push(j);
                    next
                })
            })
            .collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractedCount {
    pub closed_form: BigUint,
    pub enumerated: BigUint,
}

impl ContractedCount {
    pub fn agrees(&self) -> bool {
        self.closed_form == self.enumerated
    }
}

pub fn contracted_diagram_count(n: usize) -> Result<ContractedCount, CombinatoricsError> {
    let enumerated = BigUint::from(enumerate_contracted(n)?.len());
    Ok(ContractedCount { closed_form: contracted_closed_form(n), enumerated })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensusRow {
    pub external: usize,
    pub fusions: usize,
    pub histories: u128,
    /// History and pairing combinations whose pairs all join opposite parities.
    pub feasible: u64,
    pub leading: u64,
}

/// Census for final parities alternating `−, +, …`, fusions `0..=max_fusions`.
pub fn diagram_census(external: usize, max_fusions: usize) -> Result<Vec<CensusRow>, CombinatoricsError> {
    if external % 2 == 1 {
        return Err(CombinatoricsError::OddLength(external));
    }
    let finals: Vec<i8> = (0..external).map(|j| if j % 2 == 0 { -1 } else { 1 }).collect();
    let mut rows = Vec::new();
    for n in 0..=max_fusions {
        let histories = enumerate_histories(external, n)?;
        let all_pairings = pairings(external + 2 * n);
        let mut feasible = 0;
        for h in &histories {
            let initial = parities_from_final(h, &finals)?;
            feasible += all_pairings
                .iter()
                .filter(|p| p.iter().all(|&(a, b)| initial[a] != initial[b]))
                .count() as u64;
        }
        let leading = if n % 2 == 0 { leading_census(&finals, n)?.0 } else { 0 };
        rows.push(CensusRow { external, fusions: n, histories: histories.len() as u128, feasible, leading });
    }
    Ok(rows)
}

/// Columns `n0,n,histories,feasible,leading,contracted_closed_form,contracted_enumerated`.
pub fn census_csv(rows: &[CensusRow]) -> Result<String, CombinatoricsError> {
    let mut out = String::from("n0,n,histories,feasible,leading,contracted_closed_form,contracted_enumerated\n");
    for r in rows {
        let count = contracted_diagram_count(r.fusions / 2)?;
        let (closed, enumerated) =
            if r.fusions % 2 == 0 { (count.closed_form.to_string(), count.enumerated.to_string()) } else { ("0".into(), "0".into()) };
        out.push_str(&format!("{},{},{},{},{},{closed},{enumerated}\n", r.external, r.fusions, r.histories, r.feasible, r.leading));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn two_point_values() {
        let rule = TwoPointRule::new(FieldStatistics::Boson, vec![q(1, 3)]);
        let w = quasifree_moment(&[Letter::creation(0), Letter::annihilation(0)], &rule).unwrap();
        assert_eq!(w, q(1, 3));
        let r = quasifree_moment(&[Letter::annihilation(0), Letter::creation(0)], &rule).unwrap();
        assert_eq!(r, q(4, 3));
        let fermi = TwoPointRule::new(FieldStatistics::Fermion, vec![q(1, 3)]);
        let r = quasifree_moment(&[Letter::annihilation(0), Letter::creation(0)], &fermi).unwrap();
        assert_eq!(r, q(2, 3));
    }

    #[test]
    fn odd_and_charged_words() {
        let rule = TwoPointRule::new(FieldStatistics::Boson, vec![q(1, 2)]);
        assert_eq!(quasifree_moment(&[Letter::creation(0)], &rule), Err(CombinatoricsError::OddLength(1)));
        let charged = [Letter::creation(0), Letter::creation(0)];
        assert!(quasifree_moment(&charged, &rule).unwrap().is_zero());
    }

    #[test]
    fn four_point_two_terms() {
        // ⟨a*₀ a*₂ a₄ a₃⟩ with modes 0=4 and 2=3 or 0=3 and 2=4
        let w = vec![q(1, 5), q(2, 7)];
        for (stats, theta) in [(FieldStatistics::Boson, 1), (FieldStatistics::Fermion, -1)] {
            let rule = TwoPointRule::new(stats, w.clone());
            let word = [Letter::creation(0), Letter::creation(1), Letter::annihilation(0), Letter::annihilation(1)];
            let got = quasifree_moment(&word, &rule).unwrap();
            // direct pair ⟨a*₀a₀⟩⟨a*₁a₁⟩ crosses once, so it carries θ
            assert_eq!(got, q(theta, 1) * &w[0] * &w[1]);
            let word = [Letter::creation(0), Letter::creation(0), Letter::annihilation(0), Letter::annihilation(0)];
            let got = quasifree_moment(&word, &rule).unwrap();
            let expected = &w[0] * &w[0] + q(theta, 1) * &w[0] * &w[0];
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn small_determinants() {
        let m = vec![vec![q(1, 1), q(2, 1)], vec![q(3, 1), q(4, 1)]];
        assert_eq!(determinant_or_permanent(&m, true), q(-2, 1));
        assert_eq!(determinant_or_permanent(&m, false), q(10, 1));
    }

    #[test]
    fn truncation_base_cases() {
        let rule = TwoPointRule::new(FieldStatistics::Boson, vec![q(1, 3)]);
        let word = [Letter::creation(0), Letter::annihilation(0)];
        let t = truncate(&word, FieldStatistics::Boson, |w| quasifree_moment(w, &rule).unwrap()).unwrap();
        assert_eq!(t, q(1, 3));
        let long = vec![Letter::creation(0); 10];
        assert!(matches!(truncate(&long, FieldStatistics::Boson, |_| BigRational::zero()), Err(CombinatoricsError::LengthCap { .. })));
    }

    #[test]
    fn history_enumeration() {
        assert_eq!(enumerate_histories(2, 0).unwrap(), vec![InteractionHistory { external: 2, ell: vec![] }]);
        assert_eq!(enumerate_histories(2, 1).unwrap().len(), 2);
        assert_eq!(enumerate_histories(2, 2).unwrap().len(), 8);
        assert!(matches!(enumerate_histories(2, 9), Err(CombinatoricsError::SizeCap { .. })));
    }

    #[test]
    fn single_fusion_labels() {
        let h = InteractionHistory::new(1, vec![1]).unwrap();
        for top in [-1, 1] {
            let initial = parities_from_final(&h, &[top]).unwrap();
            assert_eq!(initial, vec![-1, top, 1]);
            let Labeling::Feasible(d) = propagate_labels(&h, &initial, None).unwrap() else { panic!() };
            assert_eq!(d.slices[1][0].momentum, Momentum::from([(0, 1), (1, 1), (2, 1)]));
            assert_eq!(d.slices[1][0].parity, top);
        }
        assert_eq!(propagate_labels(&h, &[1, 1, 1], None).unwrap(), Labeling::Infeasible { fusion: 1 });
    }

    #[test]
    fn figure_history_is_leading() {
        let h = InteractionHistory::new(4, vec![3, 3, 5, 1]).unwrap();
        let initial = [-1, -1, -1, -1, 1, 1, 1, 1, -1, 1, 1, -1];
        let Labeling::Feasible(d) = propagate_labels(&h, &initial, None).unwrap() else { panic!() };
        let pairing = [(0, 9), (1, 10), (2, 5), (3, 6), (4, 8), (7, 11)];
        assert_eq!(classify_leading(&d, &pairing), Leadingness::Leading);
        // pairing two fusing lines of the first triplet
        let bad = [(0, 9), (1, 10), (2, 4), (3, 6), (5, 8), (7, 11)];
        assert!(matches!(classify_leading(&d, &bad), Leadingness::Subleading(SubleadingReason::ZeroPotential { fusion: 1 })));
    }

    #[test]
    fn contracted_enumeration_is_double_factorial() {
        let counts: Vec<usize> = (0..5).map(|n| enumerate_contracted(n).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 1, 3, 15, 105]);
        let closed: Vec<BigUint> = (1..5).map(contracted_closed_form).collect();
        assert_eq!(closed, [3u32, 15, 105, 945].map(BigUint::from).to_vec());
    }

    #[test]
    fn sixteen_per_vertex() {
        for finals in [[-1i8, 1], [1, -1]] {
            let (total, classes) = leading_census(&finals, 2).unwrap();
            assert_eq!(total, 16);
            assert_eq!(classes.len(), 1);
        }
    }
}

//! Reduced words in the free group on `a`, `b`, the shortlex order, balls,
//! the symmetric index sets `I_g` and the cliques `K_g`.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// A free generator or its inverse. Declaration order is the letter order
/// `a < b < A < B` used for every lexicographic comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gen {
    A,
    B,
    AInv,
    BInv,
}

impl Gen {
    pub const ALL: [Gen; 4] = [Gen::A, Gen::B, Gen::AInv, Gen::BInv];

    pub fn inverse(self) -> Gen {
        match self {
            Gen::A => Gen::AInv,
            Gen::B => Gen::BInv,
            Gen::AInv => Gen::A,
            Gen::BInv => Gen::B,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Gen::A => 'a',
            Gen::B => 'b',
            Gen::AInv => 'A',
            Gen::BInv => 'B',
        }
    }

    pub fn from_char(c: char) -> Option<Gen> {
        match c {
            'a' => Some(Gen::A),
            'b' => Some(Gen::B),
            'A' => Some(Gen::AInv),
            'B' => Some(Gen::BInv),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WordError {
    #[error("empty word string (write \"e\" for the identity)")]
    Empty,
    #[error("invalid letter {0:?} at position {1}")]
    BadLetter(char, usize),
    #[error("K_{0} is not a clique: {1} and {2} are not adjacent")]
    NotAClique(Word, Word, Word),
    #[error("the identity has no clique K_e")]
    Identity,
}

/// A reduced word. Construction always reduces, so equality of `Word`s is
/// equality of group elements.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Word(Vec<Gen>);

impl Word {
    pub fn identity() -> Word {
        Word(Vec::new())
    }

    pub fn gen(g: Gen) -> Word {
        Word(vec![g])
    }

    /// Free reduction of an arbitrary letter sequence.
    pub fn reduce<I: IntoIterator<Item = Gen>>(letters: I) -> Word {
        let mut out: Vec<Gen> = Vec::new();
        for x in letters {
            if out.last() == Some(&x.inverse()) {
                out.pop();
            } else {
                out.push(x);
            }
        }
        Word(out)
    }

    pub fn letters(&self) -> &[Gen] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|x| x.inverse()).collect())
    }

    pub fn mul(&self, other: &Word) -> Word {
        Word::reduce(self.0.iter().chain(other.0.iter()).copied())
    }

    /// `self⁻¹ · other`, the quantity that indexes Gram entries.
    pub fn ldiv(&self, other: &Word) -> Word {
        self.inverse().mul(other)
    }

    /// The first `s` letters.
    pub fn prefix(&self, s: usize) -> Word {
        Word(self.0[..s.min(self.0.len())].to_vec())
    }

    /// Of `{g, g⁻¹}` the shortlex-smaller one is the stored representative.
    pub fn is_canonical(&self) -> bool {
        *self <= self.inverse()
    }

    pub fn canonical(&self) -> Word {
        let inv = self.inverse();
        if inv < *self {
            inv
        } else {
            self.clone()
        }
    }

    /// Parse the text encoding: letters `a b A B`, identity `e`.
    /// Non-reduced input is reduced.
    pub fn parse(s: &str) -> Result<Word, WordError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(WordError::Empty);
        }
        if s == "e" {
            return Ok(Word::identity());
        }
        let mut letters = Vec::with_capacity(s.len());
        for (i, c) in s.chars().enumerate() {
            letters.push(Gen::from_char(c).ok_or(WordError::BadLetter(c, i))?);
        }
        Ok(Word::reduce(letters))
    }

    /// Immediate shortlex successor `g↓`.
    pub fn successor(&self) -> Word {
        let w = &self.0;
        let n = w.len();
        for i in (0..n).rev() {
            let prev = if i == 0 { None } else { Some(w[i - 1]) };
            let bigger = Gen::ALL
                .iter()
                .copied()
                .find(|&x| x > w[i] && Some(x.inverse()) != prev);
            if let Some(x) = bigger {
                let mut out = w[..i].to_vec();
                out.push(x);
                fill_min(&mut out, n);
                return Word(out);
            }
        }
        Word(vec![Gen::A; n + 1])
    }

    /// Immediate shortlex predecessor `g↑`; `None` for the identity.
    pub fn predecessor(&self) -> Option<Word> {
        let w = &self.0;
        let n = w.len();
        if n == 0 {
            return None;
        }
        for i in (0..n).rev() {
            let prev = if i == 0 { None } else { Some(w[i - 1]) };
            let smaller = Gen::ALL
                .iter()
                .rev()
                .copied()
                .find(|&x| x < w[i] && Some(x.inverse()) != prev);
            if let Some(x) = smaller {
                let mut out = w[..i].to_vec();
                out.push(x);
                fill_max(&mut out, n);
                return Some(Word(out));
            }
        }
        Some(Word(vec![Gen::BInv; n - 1]))
    }

    /// Next word whose inverse is not earlier, i.e. the next word that
    /// enlarges the index set.
    pub fn next_canonical(&self) -> Word {
        let mut w = self.successor();
        while !w.is_canonical() {
            w = w.successor();
        }
        w
    }
}

fn fill_min(out: &mut Vec<Gen>, n: usize) {
    while out.len() < n {
        let x = if out.last() == Some(&Gen::AInv) { Gen::B } else { Gen::A };
        out.push(x);
    }
}

fn fill_max(out: &mut Vec<Gen>, n: usize) {
    while out.len() < n {
        let x = if out.last() == Some(&Gen::B) { Gen::AInv } else { Gen::BInv };
        out.push(x);
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("e");
        }
        for x in &self.0 {
            write!(f, "{}", x.to_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word({self})")
    }
}

impl std::str::FromStr for Word {
    type Err = WordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Word::parse(s)
    }
}

pub fn shortlex_compare(u: &Word, v: &Word) -> Ordering {
    u.cmp(v)
}

/// All reduced words of length `≤ r`, in shortlex order.
pub fn ball(r: usize) -> Vec<Word> {
    let mut out = vec![Word::identity()];
    let mut layer = vec![Word::identity()];
    for _ in 0..r {
        let mut next = Vec::with_capacity(layer.len() * 3 + 1);
        for w in &layer {
            for x in Gen::ALL {
                if w.0.last() != Some(&x.inverse()) {
                    let mut v = w.0.clone();
                    v.push(x);
                    next.push(Word(v));
                }
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// `|B_r|`.
pub fn ball_size(r: usize) -> usize {
    if r == 0 {
        1
    } else {
        2 * 3usize.pow(r as u32) - 1
    }
}

/// The shortlex-last element of `B_r`; `I_{last(r)} = B_r`.
pub fn ball_last(r: usize) -> Word {
    Word(vec![Gen::BInv; r])
}

/// All words `h ⪯ g` in shortlex order.
pub fn words_upto(g: &Word) -> Vec<Word> {
    ball(g.len()).into_iter().filter(|h| h <= g).collect()
}

/// The symmetric index set `I_g = ∪{h, h⁻¹ : h ⪯ g}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSet {
    pub origin: Word,
    pub members: BTreeSet<Word>,
}

impl IndexSet {
    pub fn contains(&self, w: &Word) -> bool {
        self.members.contains(w)
    }

    /// Fast membership without materializing the set.
    pub fn test(g: &Word, w: &Word) -> bool {
        w <= g || w.inverse() <= *g
    }
}

pub fn index_set(g: &Word) -> IndexSet {
    let mut members = BTreeSet::new();
    for h in words_upto(g) {
        members.insert(h.inverse());
        members.insert(h);
    }
    IndexSet { origin: g.clone(), members }
}

/// Adjacency in the generalized Cayley graph `Cay(F, g)`.
pub fn adjacent(g: &Word, h: &Word, l: &Word) -> bool {
    h != l && IndexSet::test(g, &l.ldiv(h))
}

pub fn is_clique(level: &Word, vertices: &[Word]) -> bool {
    vertices
        .iter()
        .enumerate()
        .all(|(i, h)| vertices[i + 1..].iter().all(|l| adjacent(level, h, l)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clique {
    pub level: Word,
    pub vertices: Vec<Word>,
}

/// `K_g`: `{e, g}` plus the common `Cay(F,g)`-neighbours of `e` and `g`,
/// checked to be pairwise adjacent. Vertices come back in shortlex order.
///
/// Only a canonical `g` adds an edge to the Cayley graph; for the other
/// member of a pair we return the translate `g·K_{g⁻¹}`, which contains
/// `e` and `g` and is a clique at a lower level.
pub fn clique(g: &Word) -> Result<Clique, WordError> {
    if g.is_identity() {
        return Err(WordError::Identity);
    }
    if !g.is_canonical() {
        let base = clique(&g.inverse())?;
        let mut vertices: Vec<Word> = base.vertices.iter().map(|x| g.mul(x)).collect();
        vertices.sort();
        return Ok(Clique { level: g.clone(), vertices });
    }
    let ginv = g.inverse();
    let mut vertices: Vec<Word> = index_set(g)
        .members
        .into_iter()
        .filter(|h| !h.is_identity() && h != g && IndexSet::test(g, &ginv.mul(h)))
        .collect();
    vertices.push(Word::identity());
    vertices.push(g.clone());
    vertices.sort();
    for (i, h) in vertices.iter().enumerate() {
        for l in &vertices[i + 1..] {
            if !adjacent(g, h, l) {
                return Err(WordError::NotAClique(g.clone(), h.clone(), l.clone()));
            }
        }
    }
    Ok(Clique { level: g.clone(), vertices })
}

/// The shortlex-least `h ≠ e` at whose level `K_g \ {g}` is a clique, with
/// a translate `t` such that `K_g \ {g} ⊆ t·K_h`.
pub fn predecessor_clique(g: &Word) -> Result<(Word, Word), WordError> {
    let k = clique(g)?;
    let rest: Vec<Word> = k.vertices.into_iter().filter(|h| h != g).collect();
    let mut h = Word::gen(Gen::A);
    loop {
        if is_clique(&h, &rest) {
            let kh = clique(&h)?;
            // e ∈ t·K_h forces t = m⁻¹ for some m ∈ K_h.
            for m in &kh.vertices {
                let t = m.inverse();
                let translated: BTreeSet<Word> = kh.vertices.iter().map(|x| t.mul(x)).collect();
                if rest.iter().all(|x| translated.contains(x)) {
                    return Ok((h, t));
                }
            }
        }
        h = h.successor();
    }
}

/// Bron–Kerbosch enumeration of the maximal cliques of `Cay(F, level)`
/// restricted to `domain` that contain every word of `forced`.
pub fn maximal_cliques_containing(level: &Word, domain: &[Word], forced: &[Word]) -> Vec<Vec<Word>> {
    let cand: Vec<Word> = domain
        .iter()
        .filter(|v| !forced.contains(v) && forced.iter().all(|f| adjacent(level, v, f)))
        .cloned()
        .collect();
    let n = cand.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| adjacent(level, &cand[i], &cand[j])).collect())
        .collect();
    let mut out = Vec::new();
    let mut r = Vec::new();
    bron_kerbosch(&adj, &mut r, (0..n).collect(), Vec::new(), &mut out);
    out.into_iter()
        .map(|c| {
            let mut v: Vec<Word> = forced.to_vec();
            v.extend(c.into_iter().map(|i| cand[i].clone()));
            v.sort();
            v
        })
        .collect()
}

fn bron_kerbosch(adj: &[Vec<bool>], r: &mut Vec<usize>, p: Vec<usize>, x: Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if p.is_empty() && x.is_empty() {
        out.push(r.clone());
        return;
    }
    let pivot = p.iter().chain(x.iter()).copied().max_by_key(|&u| p.iter().filter(|&&v| adj[u][v]).count());
    let pivot = pivot.expect("p or x is nonempty");
    let mut p = p;
    let mut x = x;
    let todo: Vec<usize> = p.iter().copied().filter(|&v| !adj[pivot][v]).collect();
    for v in todo {
        r.push(v);
        let np = p.iter().copied().filter(|&u| adj[v][u]).collect();
        let nx = x.iter().copied().filter(|&u| adj[v][u]).collect();
        bron_kerbosch(adj, r, np, nx, out);
        r.pop();
        p.retain(|&u| u != v);
        x.push(v);
    }
}

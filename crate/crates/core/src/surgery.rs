//! Rewiring of a pair of permutations (a labeled 4-regular graph) into one
//! with short a- and b-cycles, a single long b-cycle through the `B`
//! vertices, and controlled distance distortion; plus a verifier for the
//! resulting conditions G-1 … G-7.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::words::{ball, ball_size, Gen, Word};

const INF: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    A,
    B,
}

impl Label {
    fn to_char(self) -> char {
        match self {
            Label::A => 'a',
            Label::B => 'b',
        }
    }
}

#[derive(Debug, Error)]
pub enum SurgeryError {
    #[error("perm_{label} is not a bijection of [{n}]: {detail}")]
    NotBijection { label: char, n: usize, detail: String },
    #[error("{label}-cycle through vertex {start} has length {len}, need at least {need}")]
    ShortCycle { label: char, start: usize, len: usize, need: usize },
    #[error("stage {stage}: {msg}")]
    Conflict { stage: usize, msg: String },
    #[error("R and r must be positive")]
    BadParameter,
}

/// Directed a-edges `v → perm_a[v]` and b-edges `v → perm_b[v]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledGraph {
    pub n: usize,
    pub perm_a: Vec<usize>,
    pub perm_b: Vec<usize>,
}

fn check_bijection(label: Label, p: &[usize], n: usize) -> Result<(), SurgeryError> {
    let err = |detail: String| SurgeryError::NotBijection { label: label.to_char(), n, detail };
    if p.len() != n {
        return Err(err(format!("length {}", p.len())));
    }
    let mut seen = vec![false; n];
    for (v, &t) in p.iter().enumerate() {
        if t >= n {
            return Err(err(format!("perm[{v}] = {t} out of range")));
        }
        if seen[t] {
            return Err(err(format!("{t} has two preimages")));
        }
        seen[t] = true;
    }
    Ok(())
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut q = vec![0; p.len()];
    for (v, &t) in p.iter().enumerate() {
        q[t] = v;
    }
    q
}

impl LabeledGraph {
    pub fn new(perm_a: Vec<usize>, perm_b: Vec<usize>) -> Result<Self, SurgeryError> {
        let g = LabeledGraph { n: perm_a.len(), perm_a, perm_b };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SurgeryError> {
        check_bijection(Label::A, &self.perm_a, self.n)?;
        check_bijection(Label::B, &self.perm_b, self.n)
    }

    pub fn perm(&self, label: Label) -> &[usize] {
        match label {
            Label::A => &self.perm_a,
            Label::B => &self.perm_b,
        }
    }

    /// `τ(g)v`; the rightmost letter acts first.
    pub fn act(&self, g: &Word, v: usize, inv: &Inverses) -> usize {
        let mut u = v;
        for x in g.letters().iter().rev() {
            u = match x {
                Gen::A => self.perm_a[u],
                Gen::B => self.perm_b[u],
                Gen::AInv => inv.a[u],
                Gen::BInv => inv.b[u],
            };
        }
        u
    }

    pub fn inverses(&self) -> Inverses {
        Inverses { a: invert(&self.perm_a), b: invert(&self.perm_b) }
    }

    fn undirected(&self) -> Vec<[usize; 4]> {
        let inv = self.inverses();
        (0..self.n).map(|v| [self.perm_a[v], self.perm_b[v], inv.a[v], inv.b[v]]).collect()
    }
}

pub struct Inverses {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

/// Cycle decomposition; each cycle starts at its least vertex and cycles are
/// listed by least vertex.
pub fn cycles(g: &LabeledGraph, label: Label) -> Vec<Vec<usize>> {
    perm_cycles(g.perm(label))
}

fn perm_cycles(p: &[usize]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; p.len()];
    let mut out = Vec::new();
    for s in 0..p.len() {
        if seen[s] {
            continue;
        }
        let mut c = Vec::new();
        let mut v = s;
        while !seen[v] {
            seen[v] = true;
            c.push(v);
            v = p[v];
        }
        out.push(c);
    }
    out
}

/// Greedy positions along a cycle of length `len`: the first eligible
/// position, then each next eligible position at least `sep` further on,
/// provided it is still at least `sep` before the first pick (cyclically).
fn separated_positions(len: usize, sep: usize, eligible: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    let Some(first) = (0..len).find(|&i| eligible(i)) else {
        return out;
    };
    out.push(first);
    let mut i = first + sep;
    while i + sep <= first + len {
        if eligible(i) {
            out.push(i);
            i += sep;
        } else {
            i += 1;
        }
    }
    out
}

/// Maximal `R`-separated subset of a cycle, greedy from its first entry.
pub fn r_separated(cycle: &[usize], big_r: usize) -> Result<Vec<usize>, SurgeryError> {
    if big_r == 0 {
        return Err(SurgeryError::BadParameter);
    }
    if cycle.len() < 4 * big_r {
        return Err(SurgeryError::ShortCycle {
            label: '?',
            start: cycle.first().copied().unwrap_or(0),
            len: cycle.len(),
            need: 4 * big_r,
        });
    }
    Ok(separated_positions(cycle.len(), big_r, |_| true).into_iter().map(|i| cycle[i]).collect())
}

/// Separation used for the cut points of the first two stages. Pieces of a
/// cut cycle have length at least the separation, and a-/b-cycles must stay
/// of length ≥ 4, so small `R` is raised to 4.
pub fn cut_separation(big_r: usize) -> usize {
    big_r.max(4)
}

/// Inserted-vertex classes.
pub const CLASSES: [&str; 5] = ["D", "D'", "E", "E'", "B"];

#[derive(Clone, Debug, PartialEq)]
pub struct StageStats {
    pub inserted: usize,
    pub max_a_cycle: usize,
    pub max_b_cycle: usize,
    pub min_cycle: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurgeryResult {
    pub graph: LabeledGraph,
    pub original: Vec<usize>,
    pub w: Vec<usize>,
    pub b: Vec<usize>,
    pub inserted: BTreeMap<String, Vec<usize>>,
    pub stages: Vec<StageStats>,
}

impl SurgeryResult {
    pub fn inserted_count(&self) -> usize {
        self.inserted.values().map(Vec::len).sum()
    }

    pub fn is_original(&self) -> Vec<bool> {
        let mut m = vec![false; self.graph.n];
        for &v in &self.original {
            m[v] = true;
        }
        m
    }
}

/// Growable pair of permutations; new vertices start as fixed points.
struct Work {
    a: Vec<usize>,
    b: Vec<usize>,
}

impl Work {
    fn add(&mut self) -> usize {
        let v = self.a.len();
        self.a.push(v);
        self.b.push(v);
        v
    }

    fn perm_mut(&mut self, label: Label) -> &mut Vec<usize> {
        match label {
            Label::A => &mut self.a,
            Label::B => &mut self.b,
        }
    }

    /// Places `x` in the middle of the `label`-edge out of `u`.
    fn insert_after(&mut self, label: Label, u: usize, x: usize) {
        let p = self.perm_mut(label);
        p[x] = p[u];
        p[u] = x;
    }

    fn graph(&self) -> LabeledGraph {
        LabeledGraph { n: self.a.len(), perm_a: self.a.clone(), perm_b: self.b.clone() }
    }

    fn stats(&self, inserted: usize) -> StageStats {
        let ca = perm_cycles(&self.a);
        let cb = perm_cycles(&self.b);
        StageStats {
            inserted,
            max_a_cycle: ca.iter().map(Vec::len).max().unwrap_or(0),
            max_b_cycle: cb.iter().map(Vec::len).max().unwrap_or(0),
            min_cycle: ca.iter().chain(&cb).map(Vec::len).min().unwrap_or(0),
        }
    }
}

fn other(label: Label) -> Label {
    match label {
        Label::A => Label::B,
        Label::B => Label::A,
    }
}

/// One shortening stage: cut the `label`-cycles at separated vertices,
/// reconnect each piece into a short cycle, and bypass each cut edge through
/// two new vertices placed on edges of the other label. Returns the two new
/// classes in order `(first, second)`.
fn shorten(
    w: &mut Work,
    label: Label,
    big_r: usize,
    stage: usize,
    eligible: impl Fn(&Work, usize) -> bool,
    anchor: impl Fn(&[usize], usize) -> usize,
) -> Result<(Vec<usize>, Vec<usize>), SurgeryError> {
    let before = match label {
        Label::A => w.a.clone(),
        Label::B => w.b.clone(),
    };
    let mut picks_all: Vec<Vec<usize>> = Vec::new();
    for cyc in perm_cycles(&before) {
        if cyc.len() < 4 * big_r {
            return Err(SurgeryError::ShortCycle {
                label: label.to_char(),
                start: cyc[0],
                len: cyc.len(),
                need: 4 * big_r,
            });
        }
        let len = cyc.len();
        let picks: Vec<usize> =
            separated_positions(len, cut_separation(big_r), |i| eligible(w, cyc[i % len])).into_iter().map(|i| cyc[i % len]).collect();
        if picks.len() < 2 {
            return Err(SurgeryError::Conflict {
                stage,
                msg: format!(
                    "{}-cycle through {} (length {len}) has {} admissible cut points",
                    label.to_char(),
                    cyc[0],
                    picks.len()
                ),
            });
        }
        picks_all.push(picks);
    }
    // Cut: the edge out of each pick now goes to the vertex after the previous pick.
    for picks in &picks_all {
        let k = picks.len();
        for i in 0..k {
            let prev = picks[(i + k - 1) % k];
            w.perm_mut(label)[picks[i]] = before[prev];
        }
    }
    let cross = other(label);
    let fresh = w.a.len();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut f_of = BTreeMap::new();
    for picks in &picks_all {
        for &v in picks {
            let x = w.add();
            w.insert_after(cross, v, x);
            f_of.insert(v, x);
            first.push(x);
        }
    }
    let mut fp_of = BTreeMap::new();
    for picks in &picks_all {
        for &v in picks {
            let t = anchor(&before, v);
            if t == v || before[t] == v {
                return Err(SurgeryError::Conflict { stage, msg: format!("cycle through {v} too short for a bypass") });
            }
            // If the edge out of t already carries vertices of this stage, chain after them.
            let mut tail = t;
            while w.perm_mut(cross)[tail] >= fresh {
                tail = w.perm_mut(cross)[tail];
            }
            let y = w.add();
            w.insert_after(cross, tail, y);
            fp_of.insert(v, y);
            second.push(y);
        }
    }
    for picks in &picks_all {
        for &v in picks {
            w.perm_mut(label)[f_of[&v]] = fp_of[&v];
        }
        let k = picks.len();
        let mut groups: Vec<&[usize]> = picks.chunks(2).collect();
        if k % 2 == 1 {
            groups.pop();
            groups.pop();
            groups.push(&picks[k - 3..]);
        }
        for grp in groups {
            let m = grp.len();
            for i in 0..m {
                w.perm_mut(label)[fp_of[&grp[i]]] = f_of[&grp[(i + 1) % m]];
            }
        }
    }
    Ok((first, second))
}

/// Undirected BFS distances from `src`, skipping `blocked` vertices and
/// stopping at depth `limit`.
fn bfs_undirected(adj: &[[usize; 4]], src: usize, blocked: Option<&[bool]>, limit: usize) -> Vec<usize> {
    let mut dist = vec![INF; adj.len()];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(v) = q.pop_front() {
        if dist[v] >= limit {
            continue;
        }
        for &u in &adj[v] {
            if dist[u] == INF && !blocked.is_some_and(|b| b[u]) {
                dist[u] = dist[v] + 1;
                q.push_back(u);
            }
        }
    }
    dist
}

/// Runs the three rewiring stages on `g`.
pub fn perform_surgery(g: &LabeledGraph, big_r: usize, r: usize) -> Result<SurgeryResult, SurgeryError> {
    if big_r == 0 || r == 0 {
        return Err(SurgeryError::BadParameter);
    }
    g.validate()?;
    for label in [Label::A, Label::B] {
        if let Some(c) = cycles(g, label).into_iter().find(|c| c.len() < 4 * big_r) {
            return Err(SurgeryError::ShortCycle { label: label.to_char(), start: c[0], len: c.len(), need: 4 * big_r });
        }
    }
    let n = g.n;
    let mut w = Work { a: g.perm_a.clone(), b: g.perm_b.clone() };
    let mut inserted = BTreeMap::new();
    let mut stages = Vec::new();

    // Stage 1: a-cycles, bypass vertices on b-edges out of original vertices.
    let (d, dp) = shorten(&mut w, Label::A, big_r, 1, |_, _| true, |p, v| p[p[v]])?;
    stages.push(w.stats(d.len() + dp.len()));
    inserted.insert("D".to_string(), d);
    inserted.insert("D'".to_string(), dp);

    // Stage 2: b-cycles. Cut points are original vertices, and the second
    // bypass vertex goes on the a-edge out of the first original vertex at
    // least two b-steps ahead, so every new vertex sits on an a-edge leaving
    // an original vertex.
    let first_original = |p: &[usize], v: usize| {
        let mut t = p[p[v]];
        while t >= n {
            t = p[t];
        }
        t
    };
    let (e, ep) = shorten(&mut w, Label::B, big_r, 2, |_, v| v < n, first_original)?;
    stages.push(w.stats(e.len() + ep.len()));
    inserted.insert("E".to_string(), e);
    inserted.insert("E'".to_string(), ep);

    // Stage 3: a maximal 10R-separated set A of original vertices in the
    // undirected graph, greedily in vertex order.
    let adj3 = w.graph().undirected();
    let sep = 10 * big_r;
    let mut blocked = vec![false; adj3.len()];
    let mut a_set = Vec::new();
    for v in 0..n {
        if blocked[v] {
            continue;
        }
        a_set.push(v);
        for (u, &dv) in bfs_undirected(&adj3, v, None, sep - 1).iter().enumerate() {
            if dv < sep {
                blocked[u] = true;
            }
        }
    }
    let a_inv3 = invert(&w.a);
    let mut bset = Vec::with_capacity(a_set.len());
    for &v in &a_set {
        let u = a_inv3[v];
        let l = w.add();
        w.insert_after(Label::A, u, l);
        bset.push(l);
    }
    let s = bset.len();
    for m in 0..s {
        w.b[bset[m]] = bset[(m + 1) % s];
    }
    let is_a = {
        let mut m = vec![false; w.a.len()];
        for &v in &a_set {
            m[v] = true;
        }
        m
    };
    // Splice the b-cycle of v with the b-cycle of τ₃(a)⁻¹v.
    for &v in &a_set {
        let v2 = a_inv3[v];
        let cyc = |b: &[usize], s: usize| {
            let mut c = vec![s];
            let mut u = b[s];
            while u != s {
                c.push(u);
                u = b[u];
            }
            c
        };
        let cv = cyc(&w.b, v);
        if cv.contains(&v2) {
            continue;
        }
        let cv2 = cyc(&w.b, v2);
        // Splice points: w is original with an original b-successor, so the
        // vertex after w keeps an original neighbour when its predecessor
        // becomes w'; w' is original when its cycle has one.
        let candidates = |c: &[usize], tight: bool| {
            c.iter().copied().filter(|&x| !is_a[x] && (!tight || (x < n && w.b[x] < n))).min()
        };
        let x = candidates(&cv, true).or_else(|| candidates(&cv, false));
        let y = cv2.iter().copied().filter(|&y| y < n && !is_a[y]).min().or_else(|| candidates(&cv2, false));
        let (Some(x), Some(y)) = (x, y) else {
            return Err(SurgeryError::Conflict { stage: 3, msg: format!("b-cycle at {v} has no vertex outside A") });
        };
        if bset.contains(&x) || bset.contains(&y) {
            return Err(SurgeryError::Conflict { stage: 3, msg: format!("splice at {v} meets the B ring") });
        }
        w.b.swap(x, y);
    }
    stages.push(w.stats(s));
    inserted.insert("B".to_string(), bset.clone());

    let graph = w.graph();
    graph.validate().map_err(|e| SurgeryError::Conflict { stage: 3, msg: e.to_string() })?;
    let original: Vec<usize> = (0..n).collect();
    let wset = undisturbed(g, &graph, r);
    Ok(SurgeryResult { graph, original, w: wset, b: bset, inserted, stages })
}

/// Original vertices whose labeled r-ball is the same in `before` and
/// `after`: the maps `g ↦ τ(g)w` agree on `B_r`, and so do the labeled edges
/// among the ball's vertices.
pub fn undisturbed(before: &LabeledGraph, after: &LabeledGraph, r: usize) -> Vec<usize> {
    let words = ball(r);
    let (ib, ia) = (before.inverses(), after.inverses());
    let mut out = Vec::new();
    'outer: for v in 0..before.n {
        let mut pts = Vec::with_capacity(words.len());
        for g in &words {
            let x = before.act(g, v, &ib);
            if after.act(g, v, &ia) != x {
                continue 'outer;
            }
            pts.push(x);
        }
        pts.sort_unstable();
        pts.dedup();
        for &u in &pts {
            for (t0, t) in [(before.perm_a[u], after.perm_a[u]), (before.perm_b[u], after.perm_b[u])] {
                let (in0, in1) = (pts.binary_search(&t0).is_ok(), pts.binary_search(&t).is_ok());
                if in0 != in1 || (in0 && t0 != t) {
                    continue 'outer;
                }
            }
        }
        out.push(v);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifierReport {
    pub conditions: Vec<ConditionReport>,
    pub inserted: usize,
    pub inserted_bound: f64,
}

impl VerifierReport {
    pub fn get(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass) && self.inserted as f64 <= self.inserted_bound
    }
}

fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<U>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("verifier worker panicked")).collect()
    })
}

fn as_measure(x: usize) -> f64 {
    if x == INF {
        f64::INFINITY
    } else {
        x as f64
    }
}

/// Sources for the distance-ratio check: every original vertex up to 2000,
/// otherwise 200 sampled ones.
const ALL_PAIRS_MAX: usize = 2000;
const SAMPLE_SOURCES: usize = 200;

/// Checks G-1 … G-7 for `result` against the unmodified graph `original`.
pub fn verify_conditions(original: &LabeledGraph, result: &SurgeryResult, r: usize, big_r: usize) -> VerifierReport {
    let g = &result.graph;
    let n0 = original.n;
    let rr = big_r as f64;
    let is_orig = result.is_original();
    let mut in_b = vec![false; g.n];
    for &v in &result.b {
        in_b[v] = true;
    }
    let mut conditions = Vec::new();

    let k_r = ball_size(r) as f64;
    let w = undisturbed(original, g, r).len();
    let g1_bound = (1.0 - 20.0 * k_r / rr) * n0 as f64;
    conditions.push(ConditionReport { name: "G-1".into(), pass: w as f64 >= g1_bound, measured: w as f64, bound: g1_bound });

    let ca = cycles(g, Label::A);
    let cb = cycles(g, Label::B);
    let ring = !result.b.is_empty()
        && cb.iter().any(|c| c.len() == result.b.len() && c.iter().all(|&v| in_b[v]));
    let longest_other = ca
        .iter()
        .map(Vec::len)
        .chain(cb.iter().filter(|c| !c.iter().all(|&v| in_b[v])).map(Vec::len))
        .max()
        .unwrap_or(0);
    let g2_bound = 2.0 * (4.0 * rr + 1.0);
    conditions.push(ConditionReport {
        name: "G-2".into(),
        pass: ring && longest_other as f64 <= g2_bound,
        measured: longest_other as f64,
        bound: g2_bound,
    });

    let adj0 = original.undirected();
    let adj = g.undirected();
    let sources: Vec<usize> = if n0 <= ALL_PAIRS_MAX {
        (0..n0).collect()
    } else {
        let mut all: Vec<usize> = (0..n0).collect();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
        all.truncate(SAMPLE_SOURCES);
        all.sort_unstable();
        all
    };
    let ratios = par_map(&sources, |&v| {
        let d0 = bfs_undirected(&adj0, v, None, INF);
        let d = bfs_undirected(&adj, v, Some(&in_b), INF);
        let mut worst: f64 = 0.0;
        for u in 0..n0 {
            if u == v || d[u] == INF {
                continue;
            }
            worst = worst.max(as_measure(d0[u]) / d[u] as f64);
        }
        worst
    });
    let g3 = ratios.into_iter().fold(0.0, f64::max);
    let g3_bound = (4.0 * rr + 1.0) * rr * rr;
    conditions.push(ConditionReport { name: "G-3".into(), pass: g3 <= g3_bound, measured: g3, bound: g3_bound });

    let mut dist = vec![INF; g.n];
    let mut q = VecDeque::new();
    for &v in &result.b {
        dist[v] = 0;
        q.push_back(v);
    }
    while let Some(v) = q.pop_front() {
        for u in [g.perm_a[v], g.perm_b[v]] {
            if dist[u] == INF {
                dist[u] = dist[v] + 1;
                q.push_back(u);
            }
        }
    }
    let g4 = dist.iter().copied().max().map_or(f64::INFINITY, as_measure);
    let g4_bound = 8.0 * (4.0 * rr + 1.0).powi(2) * (10.0 * rr + 1.0);
    conditions.push(ConditionReport { name: "G-4".into(), pass: g4 <= g4_bound, measured: g4, bound: g4_bound });

    let words = ball(r);
    let inv = g.inverses();
    let starts: Vec<usize> = (0..g.n).filter(|&v| is_orig[v]).collect();
    let g5_each = par_map(&starts, |&v| {
        let mut dist = vec![INF; g.n];
        dist[v] = 0;
        let mut q = VecDeque::from([v]);
        while let Some(x) = q.pop_front() {
            for u in [g.perm_a[x], g.perm_b[x]] {
                if dist[u] == INF && !in_b[u] {
                    dist[u] = dist[x] + 1;
                    q.push_back(u);
                }
            }
        }
        words
            .iter()
            .map(|w| g.act(w, v, &inv))
            .filter(|&t| is_orig[t])
            .map(|t| as_measure(dist[t]))
            .fold(0.0, f64::max)
    });
    let g5 = g5_each.into_iter().fold(0.0, f64::max);
    let g5_bound = 256.0 * r as f64 * (4.0 * rr + 1.0).powi(2);
    conditions.push(ConditionReport { name: "G-5".into(), pass: g5 <= g5_bound, measured: g5, bound: g5_bound });

    let lonely = (0..g.n).filter(|&v| !is_orig[v] && !adj[v].iter().any(|&u| is_orig[u])).count();
    conditions.push(ConditionReport { name: "G-6".into(), pass: lonely == 0, measured: lonely as f64, bound: 0.0 });

    let shortest = ca.iter().chain(&cb).map(Vec::len).min().unwrap_or(0);
    conditions.push(ConditionReport { name: "G-7".into(), pass: shortest >= 4, measured: shortest as f64, bound: 4.0 });

    VerifierReport { conditions, inserted: result.inserted_count(), inserted_bound: 9.0 * n0 as f64 / rr }
}

/// The trivial result: `graph` itself, nothing inserted, `B` empty.
pub fn identity_result(graph: &LabeledGraph) -> SurgeryResult {
    let original: Vec<usize> = (0..graph.n).collect();
    SurgeryResult {
        graph: graph.clone(),
        w: original.clone(),
        original,
        b: Vec::new(),
        inserted: CLASSES.iter().map(|c| (c.to_string(), Vec::new())).collect(),
        stages: Vec::new(),
    }
}

/// A randomly relabeled cylinder: vertices `(i, j)` with `i ∈ ℤ/length`,
/// `j ∈ ℤ/width`; `b` rotates `j`, and `a` steps `i → i + 1` while
/// permuting the `j` coordinate by a random permutation per column. Every
/// a-cycle has length a multiple of `length`, every b-cycle has length
/// `width`, and the undirected diameter grows with `length`.
pub fn random_cylinder(length: usize, width: usize, seed: u64) -> LabeledGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = length * width;
    let mut label: Vec<usize> = (0..n).collect();
    label.shuffle(&mut rng);
    let id = |i: usize, j: usize| label[i * width + j];
    let mut perm_a = vec![0; n];
    let mut perm_b = vec![0; n];
    for i in 0..length {
        let mut sigma: Vec<usize> = (0..width).collect();
        sigma.shuffle(&mut rng);
        for j in 0..width {
            perm_a[id(i, j)] = id((i + 1) % length, sigma[j]);
            perm_b[id(i, j)] = id(i, (j + 1) % width);
        }
    }
    LabeledGraph { n, perm_a, perm_b }
}

/// A folded strip: columns `0..length` of `width`
/// vertices (`width` even). `b` rotates each column. `a` runs forward on the
/// lower half of each column and backward on the upper half, turning around
/// at both ends, with a random matching of lanes between neighbouring
/// columns. Every a-cycle has length a multiple of `2·length`, every b-cycle
/// has length `width`, and the two ends are about `length` apart. Vertices
/// are numbered column by column, so greedy choices in vertex order sweep
/// along the strip.
pub fn random_strip(length: usize, width: usize, seed: u64) -> LabeledGraph {
    assert!(width.is_multiple_of(2) && width >= 2 && length >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = length * width;
    let half = width / 2;
    let id = |i: usize, j: usize| i * width + j;
    let mut perm_a = vec![0; n];
    let mut perm_b = vec![0; n];
    for i in 0..length {
        let mut fwd: Vec<usize> = (0..half).collect();
        let mut back: Vec<usize> = (0..half).collect();
        fwd.shuffle(&mut rng);
        back.shuffle(&mut rng);
        for j in 0..half {
            perm_a[id(i, j)] = if i + 1 < length { id(i + 1, fwd[j]) } else { id(i, half + j) };
            perm_a[id(i, half + j)] = if i > 0 { id(i - 1, half + back[j]) } else { id(i, j) };
        }
        for j in 0..width {
            perm_b[id(i, j)] = id(i, (j + 1) % width);
        }
    }
    LabeledGraph { n, perm_a, perm_b }
}

/// Uniformly random pair of `n`-cycles.
pub fn random_long_cycles(n: usize, seed: u64) -> LabeledGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cyc = |rng: &mut ChaCha8Rng| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut p = vec![0; n];
        for i in 0..n {
            p[order[i]] = order[(i + 1) % n];
        }
        p
    };
    let perm_a = cyc(&mut rng);
    let perm_b = cyc(&mut rng);
    LabeledGraph { n, perm_a, perm_b }
}

/// Strip with `width = 4R` and a random length in `[lo, hi]`.
pub fn random_strip_for(big_r: usize, lo: usize, hi: usize, seed: u64) -> LabeledGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let length = rng.random_range(lo..=hi);
    random_strip(length, 4 * big_r, seed)
}

/// Desk-scale input for a given `R`: a strip long enough (about `48R`
/// columns) that the 10R-separated set has at least four elements, with at
/// most 2000 vertices when that allows it.
pub fn desk_strip(big_r: usize, seed: u64) -> LabeledGraph {
    let lo = 48 * big_r;
    let hi = (2000 / (4 * big_r)).max(lo);
    random_strip_for(big_r, lo, hi, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ring(n: usize, step: usize) -> Vec<usize> {
        (0..n).map(|v| (v + step) % n).collect()
    }

    #[test]
    fn cycle_decomposition() {
        let g = LabeledGraph::new((0..5).collect(), ring(5, 1)).unwrap();
        assert_eq!(cycles(&g, Label::A).len(), 5);
        assert_eq!(cycles(&g, Label::B), vec![vec![0, 1, 2, 3, 4]]);
        let g = random_long_cycles(30, 3);
        assert_eq!(cycles(&g, Label::A).len(), 1);
    }

    #[test]
    fn bijection_check() {
        assert!(matches!(LabeledGraph::new(vec![0, 0], vec![0, 1]), Err(SurgeryError::NotBijection { label: 'a', .. })));
        assert!(matches!(LabeledGraph::new(vec![0, 1], vec![2, 1]), Err(SurgeryError::NotBijection { label: 'b', .. })));
    }

    #[test]
    fn separated_examples() {
        let c: Vec<usize> = (0..12).collect();
        let s = r_separated(&c, 3).unwrap();
        assert_eq!(s, vec![0, 3, 6, 9]);
        let c: Vec<usize> = (0..13).collect();
        let s = r_separated(&c, 3).unwrap();
        assert_eq!(s, vec![0, 3, 6, 9]);
        assert!(r_separated(&(0..11).collect::<Vec<_>>(), 3).is_err());
        let c: Vec<usize> = (0..8).collect();
        assert_eq!(r_separated(&c, 2).unwrap().len(), 4);
    }

    #[test]
    fn a_cycle_shortening_on_product() {
        // One a-cycle and one b-cycle of length 4R each would need n = 4R,
        // but a and b must both be n-cycles; use the 4R×k torus instead.
        let big_r = 2;
        let g = random_cylinder(4 * big_r * 3, 4 * big_r, 9);
        let res = perform_surgery(&g, big_r, 1).unwrap();
        let s = cut_separation(big_r);
        assert!(res.stages[0].max_a_cycle < 2 * s);
        assert!(res.stages[1].max_a_cycle < 4 * s && res.stages[1].max_b_cycle <= 2 * s + 1);
        let rep = verify_conditions(&g, &res, 1, big_r);
        assert!(rep.get("G-2").unwrap().pass, "{rep:?}");
    }

    #[test]
    fn verifier_sanity_on_unmodified_graph() {
        let g = random_cylinder(40, 8, 1);
        let rep = verify_conditions(&g, &identity_result(&g), 1, 2);
        let g1 = rep.get("G-1").unwrap();
        assert!(g1.pass && g1.measured == g.n as f64);
        assert!(!rep.get("G-2").unwrap().pass);
        assert_eq!(rep.get("G-3").unwrap().measured, 1.0);
    }

    #[test]
    fn surgery_passes_verifier() {
        for (big_r, seed) in [(2, 1u64), (2, 2), (3, 3)] {
            let g = desk_strip(big_r, seed);
            let res = perform_surgery(&g, big_r, 1).unwrap();
            let rep = verify_conditions(&g, &res, 1, big_r);
            assert!(rep.all_pass(), "R={big_r} seed={seed}: {rep:#?}\n{:?}", res.stages);
        }
    }

    #[test]
    fn expander_has_short_b_ring() {
        // A random pair of long cycles has diameter far below 10R, so A is
        // tiny and the B ring is shorter than 4.
        let g = random_long_cycles(400, 5);
        let res = perform_surgery(&g, 2, 1).unwrap();
        assert!(res.b.len() < 4);
        let rep = verify_conditions(&g, &res, 1, 2);
        assert!(!rep.get("G-7").unwrap().pass);
    }

    #[test]
    fn short_cycle_rejected() {
        let g = LabeledGraph::new(ring(12, 1), ring(12, 4)).unwrap();
        match perform_surgery(&g, 2, 1) {
            Err(SurgeryError::ShortCycle { label: 'b', len: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        let g = random_cylinder(60, 8, 4);
        assert_eq!(perform_surgery(&g, 2, 1).unwrap(), perform_surgery(&g, 2, 1).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cycles_partition(n in 1usize..60, seed in any::<u64>()) {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let g = LabeledGraph::new(p.clone(), p).unwrap();
            let cs = cycles(&g, Label::A);
            let mut all: Vec<usize> = cs.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn separated_gaps(len in 8usize..200, big_r in 1usize..6) {
            prop_assume!(len >= 4 * big_r);
            let c: Vec<usize> = (0..len).collect();
            let s = r_separated(&c, big_r).unwrap();
            prop_assert!(s.len() >= 2 && s.len() <= len / big_r);
            for i in 0..s.len() {
                let gap = (s[(i + 1) % s.len()] + len - s[i]) % len;
                prop_assert!(gap >= big_r && gap < 2 * big_r);
            }
        }

        #[test]
        fn surgery_output_is_valid(big_r in 2usize..4, len in 0usize..40, seed in any::<u64>()) {
            let g = random_cylinder(10 * big_r + len, 4 * big_r, seed);
            let res = perform_surgery(&g, big_r, 1).unwrap();
            prop_assert!(res.graph.validate().is_ok());
            let n = g.n as f64;
            let rr = big_r as f64;
            prop_assert!(res.inserted_count() as f64 <= 9.0 * n / rr);
            prop_assert!(res.stages[0].inserted as f64 <= 2.0 * n / rr);
            let s = cut_separation(big_r);
            prop_assert!(res.stages[0].max_a_cycle < 2 * s);
            prop_assert!(res.stages[0].min_cycle >= 4);
            prop_assert!(res.stages[1].max_a_cycle < 4 * s);
            prop_assert!(res.stages[1].max_b_cycle <= 2 * s + 1);
            prop_assert!(res.stages[1].min_cycle >= 4);
            // Stage-2 cut points are spaced along b-cycles that also carry the stage-1 vertices.
            prop_assert!(res.stages[1].inserted as f64 <= 2.0 * (n + res.stages[0].inserted as f64) / s as f64);
            prop_assert!(res.stages[2].inserted as f64 <= 5.0 * n / rr);
            prop_assert!(res.stages[2].min_cycle >= 4 || res.b.len() < 4);
        }
    }
}

//! Dyadic rationals, binary trees, oriented lattices on `[0, L]`, the
//! refinement order `⊂_L` and Thompson tree pairs.
//!
//! All combinatorics uses exact dyadic arithmetic on the unit interval; the
//! physical length `L` only rescales.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const MAX_EXP: u32 = 62;

/// `num / 2^exp`, normalised so that `num` is odd unless `exp == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    num: u64,
    exp: u32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { num: 0, exp: 0 };
    pub const ONE: Dyadic = Dyadic { num: 1, exp: 0 };

    pub fn new(num: u64, exp: u32) -> Self {
        let (mut num, mut exp) = (num, exp);
        if num == 0 {
            return Dyadic::ZERO;
        }
        while exp > 0 && num % 2 == 0 {
            num /= 2;
            exp -= 1;
        }
        assert!(exp <= MAX_EXP, "dyadic exponent {exp} exceeds {MAX_EXP}");
        Dyadic { num, exp }
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn exp(&self) -> u32 {
        self.exp
    }

    /// Level `ℓ` with `d = m / 2^ℓ`, `m` odd (0 for integers).
    pub fn level(&self) -> u32 {
        self.exp
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / (1u64 << self.exp) as f64
    }

    fn scaled(&self, e: u32) -> u128 {
        (self.num as u128) << (e - self.exp)
    }

    fn from_scaled(v: u128, e: u32) -> Self {
        let (mut v, mut e) = (v, e);
        while e > 0 && v % 2 == 0 && v > 0 {
            v /= 2;
            e -= 1;
        }
        assert!(v <= u64::MAX as u128, "dyadic numerator overflow");
        Dyadic::new(v as u64, e)
    }

    pub fn add(self, o: Dyadic) -> Dyadic {
        let e = self.exp.max(o.exp);
        Dyadic::from_scaled(self.scaled(e) + o.scaled(e), e)
    }

    pub fn checked_sub(self, o: Dyadic) -> Option<Dyadic> {
        let e = self.exp.max(o.exp);
        let (a, b) = (self.scaled(e), o.scaled(e));
        (a >= b).then(|| Dyadic::from_scaled(a - b, e))
    }

    pub fn mid(self, o: Dyadic) -> Dyadic {
        let e = self.exp.max(o.exp) + 1;
        Dyadic::from_scaled((self.scaled(e) + o.scaled(e)) / 2, e)
    }

    /// `self · 2^k`.
    pub fn mul_pow2(self, k: i32) -> Dyadic {
        if self.num == 0 {
            return self;
        }
        if k >= 0 {
            let mut v = self;
            for _ in 0..k {
                v = if v.exp > 0 {
                    Dyadic { num: v.num, exp: v.exp - 1 }
                } else {
                    Dyadic { num: v.num * 2, exp: 0 }
                };
            }
            v
        } else {
            Dyadic::new(self.num, self.exp + (-k) as u32)
        }
    }

    /// Exact base-2 logarithm of a positive power of two.
    pub fn log2_exact(self) -> Option<i32> {
        (self.num.is_power_of_two()).then(|| self.num.trailing_zeros() as i32 - self.exp as i32)
    }
}

impl Ord for Dyadic {
    fn cmp(&self, o: &Self) -> Ordering {
        let e = self.exp.max(o.exp);
        self.scaled(e).cmp(&o.scaled(e))
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, 1u64 << self.exp)
        }
    }
}

impl FromStr for Dyadic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("'{s}' is not a dyadic rational like 3/8"));
        let s = s.trim();
        match s.split_once('/') {
            None => Ok(Dyadic::new(s.parse().map_err(|_| bad())?, 0)),
            Some((n, d)) => {
                let n: u64 = n.trim().parse().map_err(|_| bad())?;
                let d: u64 = d.trim().parse().map_err(|_| bad())?;
                if !d.is_power_of_two() {
                    return Err(bad());
                }
                Ok(Dyadic::new(n, d.trailing_zeros()))
            }
        }
    }
}

/// Binary rooted tree; leaves are the standard dyadic intervals of `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum DyadicTree {
    Leaf,
    Node(Box<DyadicTree>, Box<DyadicTree>),
}

impl DyadicTree {
    pub fn node(l: DyadicTree, r: DyadicTree) -> Self {
        DyadicTree::Node(Box::new(l), Box::new(r))
    }

    pub fn complete(n: u32) -> Self {
        if n == 0 {
            DyadicTree::Leaf
        } else {
            DyadicTree::node(Self::complete(n - 1), Self::complete(n - 1))
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            DyadicTree::Leaf => 1,
            DyadicTree::Node(l, r) => l.leaves() + r.leaves(),
        }
    }

    pub fn depth(&self) -> u32 {
        match self {
            DyadicTree::Leaf => 0,
            DyadicTree::Node(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn intervals(&self) -> Vec<(Dyadic, Dyadic)> {
        fn go(t: &DyadicTree, lo: Dyadic, hi: Dyadic, out: &mut Vec<(Dyadic, Dyadic)>) {
            match t {
                DyadicTree::Leaf => out.push((lo, hi)),
                DyadicTree::Node(l, r) => {
                    let m = lo.mid(hi);
                    go(l, lo, m, out);
                    go(r, m, hi, out);
                }
            }
        }
        let mut out = Vec::new();
        go(self, Dyadic::ZERO, Dyadic::ONE, &mut out);
        out
    }

    pub fn partition(&self) -> Vec<Dyadic> {
        let iv = self.intervals();
        let mut p: Vec<Dyadic> = iv.iter().map(|x| x.0).collect();
        p.push(Dyadic::ONE);
        p
    }

    pub fn from_partition(points: &[Dyadic]) -> Result<Self> {
        fn go(lo: Dyadic, hi: Dyadic, inner: &[Dyadic]) -> Result<DyadicTree> {
            if inner.is_empty() {
                return Ok(DyadicTree::Leaf);
            }
            let m = lo.mid(hi);
            let k = inner.iter().position(|&p| p == m).ok_or_else(|| {
                Error::Contract(format!("partition is not dyadic: [{lo}, {hi}] lacks midpoint {m}"))
            })?;
            Ok(DyadicTree::node(go(lo, m, &inner[..k])?, go(m, hi, &inner[k + 1..])?))
        }
        let mut p = points.to_vec();
        p.sort();
        p.dedup();
        if p.first() != Some(&Dyadic::ZERO) || p.last() != Some(&Dyadic::ONE) {
            return Err(Error::Contract("partition must start at 0 and end at 1".into()));
        }
        go(Dyadic::ZERO, Dyadic::ONE, &p[1..p.len() - 1])
    }

    /// Smallest tree refining both.
    pub fn union(&self, o: &DyadicTree) -> DyadicTree {
        match (self, o) {
            (DyadicTree::Leaf, t) | (t, DyadicTree::Leaf) => t.clone(),
            (DyadicTree::Node(a, b), DyadicTree::Node(c, d)) => {
                DyadicTree::node(a.union(c), b.union(d))
            }
        }
    }

    /// True when `self` refines `o`.
    pub fn refines(&self, o: &DyadicTree) -> bool {
        match (self, o) {
            (_, DyadicTree::Leaf) => true,
            (DyadicTree::Leaf, DyadicTree::Node(..)) => false,
            (DyadicTree::Node(a, b), DyadicTree::Node(c, d)) => a.refines(c) && b.refines(d),
        }
    }

    /// Subtrees of `self` hanging below each leaf of the coarser `o`.
    pub fn subtrees_below(&self, o: &DyadicTree) -> Result<Vec<DyadicTree>> {
        match (self, o) {
            (t, DyadicTree::Leaf) => Ok(vec![t.clone()]),
            (DyadicTree::Node(a, b), DyadicTree::Node(c, d)) => {
                let mut v = a.subtrees_below(c)?;
                v.extend(b.subtrees_below(d)?);
                Ok(v)
            }
            _ => Err(Error::Contract("tree does not refine the reference tree".into())),
        }
    }

    /// Replaces leaf `i` (left to right) by `subs[i]`.
    pub fn graft_all(&self, subs: &[DyadicTree]) -> DyadicTree {
        fn go(t: &DyadicTree, subs: &[DyadicTree], next: &mut usize) -> DyadicTree {
            match t {
                DyadicTree::Leaf => {
                    *next += 1;
                    subs[*next - 1].clone()
                }
                DyadicTree::Node(l, r) => {
                    let a = go(l, subs, next);
                    DyadicTree::node(a, go(r, subs, next))
                }
            }
        }
        assert_eq!(subs.len(), self.leaves());
        go(self, subs, &mut 0)
    }

    /// Leaf indices `k` such that leaves `k, k+1` form a caret.
    fn carets(&self) -> Vec<usize> {
        fn go(t: &DyadicTree, off: usize, out: &mut Vec<usize>) -> usize {
            match t {
                DyadicTree::Leaf => 1,
                DyadicTree::Node(l, r) => {
                    if **l == DyadicTree::Leaf && **r == DyadicTree::Leaf {
                        out.push(off);
                        return 2;
                    }
                    let n = go(l, off, out);
                    n + go(r, off + n, out)
                }
            }
        }
        let mut out = Vec::new();
        go(self, 0, &mut out);
        out
    }

    fn collapse_caret(&self, k: usize) -> DyadicTree {
        fn go(t: &DyadicTree, off: usize, k: usize) -> (DyadicTree, usize) {
            match t {
                DyadicTree::Leaf => (DyadicTree::Leaf, 1),
                DyadicTree::Node(l, r) => {
                    if off == k && **l == DyadicTree::Leaf && **r == DyadicTree::Leaf {
                        return (DyadicTree::Leaf, 2);
                    }
                    let (a, n) = go(l, off, k);
                    let (b, m) = go(r, off + n, k);
                    (DyadicTree::node(a, b), n + m)
                }
            }
        }
        go(self, 0, k).0
    }
}

impl fmt::Display for DyadicTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DyadicTree::Leaf => Ok(()),
            DyadicTree::Node(l, r) => write!(f, "({l},{r})"),
        }
    }
}

impl FromStr for DyadicTree {
    type Err = Error;

    /// Balanced parentheses: `""` or `"."` is a leaf, `"(a,b)"` a node.
    fn from_str(s: &str) -> Result<Self> {
        fn parse(b: &[u8], i: &mut usize) -> Result<DyadicTree> {
            match b.get(*i) {
                Some(b'(') => {
                    *i += 1;
                    let l = parse(b, i)?;
                    if b.get(*i) != Some(&b',') {
                        return Err(Error::Config(format!("expected ',' at byte {i}")));
                    }
                    *i += 1;
                    let r = parse(b, i)?;
                    if b.get(*i) != Some(&b')') {
                        return Err(Error::Config(format!("expected ')' at byte {i}")));
                    }
                    *i += 1;
                    Ok(DyadicTree::node(l, r))
                }
                Some(b'.') => {
                    *i += 1;
                    Ok(DyadicTree::Leaf)
                }
                _ => Ok(DyadicTree::Leaf),
            }
        }
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let b = compact.as_bytes();
        let mut i = 0;
        let t = parse(b, &mut i)?;
        if i != b.len() {
            return Err(Error::Config(format!("trailing input in tree '{s}'")));
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    Left,
    Right,
}

impl Orientation {
    pub fn flip(self) -> Self {
        match self {
            Orientation::Left => Orientation::Right,
            Orientation::Right => Orientation::Left,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Orientation::Left => 'L',
            Orientation::Right => 'R',
        }
    }
}

/// An edge over `[lo, hi]`; a left edge points from `hi` to `lo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub lo: Dyadic,
    pub hi: Dyadic,
    pub orient: Orientation,
}

impl Edge {
    /// Final vertex `∂₊e`.
    pub fn head(&self) -> Dyadic {
        match self.orient {
            Orientation::Left => self.lo,
            Orientation::Right => self.hi,
        }
    }

    /// Initial vertex `∂₋e`.
    pub fn tail(&self) -> Dyadic {
        match self.orient {
            Orientation::Left => self.hi,
            Orientation::Right => self.lo,
        }
    }

    pub fn length(&self) -> Dyadic {
        self.hi.checked_sub(self.lo).expect("lo <= hi")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientedLattice {
    pub length: f64,
    pub edges: Vec<Edge>,
}

impl OrientedLattice {
    pub fn new(length: f64, edges: Vec<Edge>) -> Result<Self> {
        let l = OrientedLattice { length, edges };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::Config("lattice length must be positive".into()));
        }
        let mut at = Dyadic::ZERO;
        for e in &self.edges {
            if e.lo != at || e.hi <= e.lo {
                return Err(Error::Contract(format!("edges do not tile [0,1] at {at}")));
            }
            at = e.hi;
        }
        if at != Dyadic::ONE {
            return Err(Error::Contract("edges do not reach 1".into()));
        }
        Ok(())
    }

    pub fn from_tree(tree: &DyadicTree, orients: &[Orientation], length: f64) -> Result<Self> {
        let iv = tree.intervals();
        if iv.len() != orients.len() {
            return Err(Error::Contract(format!(
                "tree has {} leaves but {} orientations were given",
                iv.len(),
                orients.len()
            )));
        }
        let edges = iv
            .into_iter()
            .zip(orients)
            .map(|((lo, hi), &orient)| Edge { lo, hi, orient })
            .collect();
        OrientedLattice::new(length, edges)
    }

    /// `γ_N`: every edge splits into a left and a right child.
    pub fn cofinal(n: u32, seed: Orientation) -> Self {
        let tree = DyadicTree::complete(n);
        let orients: Vec<Orientation> = if n == 0 {
            vec![seed]
        } else {
            (0..1usize << n)
                .map(|i| if i % 2 == 0 { Orientation::Left } else { Orientation::Right })
                .collect()
        };
        OrientedLattice::from_tree(&tree, &orients, 1.0).expect("complete tree")
    }

    /// `γ̄_N`: all edges left-oriented.
    pub fn left_oriented(n: u32) -> Self {
        let tree = DyadicTree::complete(n);
        OrientedLattice::from_tree(&tree, &vec![Orientation::Left; 1 << n], 1.0)
            .expect("complete tree")
    }

    pub fn with_length(mut self, length: f64) -> Self {
        self.length = length;
        self
    }

    pub fn tree(&self) -> Result<DyadicTree> {
        DyadicTree::from_partition(&self.vertices())
    }

    pub fn vertices(&self) -> Vec<Dyadic> {
        let mut v: Vec<Dyadic> = self.edges.iter().map(|e| e.lo).collect();
        v.push(Dyadic::ONE);
        v
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn orientations(&self) -> Vec<Orientation> {
        self.edges.iter().map(|e| e.orient).collect()
    }

    pub fn edge_length(&self, i: usize) -> f64 {
        self.edges[i].length().to_f64() * self.length
    }

    pub fn describe(&self) -> String {
        self.edges
            .iter()
            .map(|e| format!("[{},{}]{}", e.lo, e.hi, e.orient.letter()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// How one coarse edge is composed from fine edges: `e = e' ∘ (e'_1)^{s_1} ∘ … `.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeDecomposition {
    pub head: usize,
    /// Fine edges after the head, moving towards the tail, with their signs.
    pub rest: Vec<(usize, i8)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementWitness {
    pub coarse: OrientedLattice,
    pub fine: OrientedLattice,
    pub decomp: Vec<EdgeDecomposition>,
}

impl RefinementWitness {
    /// Fine edges that are not heads, in spatial order.
    pub fn rest_edges(&self) -> Vec<usize> {
        let heads: Vec<usize> = self.decomp.iter().map(|d| d.head).collect();
        (0..self.fine.num_edges()).filter(|i| !heads.contains(i)).collect()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.decomp.iter().map(|d| d.head).collect()
    }
}

/// Decides `coarse ⊂_L fine` and returns the decomposition of every coarse edge.
pub fn is_refinement(coarse: &OrientedLattice, fine: &OrientedLattice) -> Option<RefinementWitness> {
    let mut decomp = Vec::with_capacity(coarse.num_edges());
    let mut j = 0;
    for e in &coarse.edges {
        let start = j;
        while j < fine.edges.len() && fine.edges[j].hi <= e.hi {
            j += 1;
        }
        let pieces: Vec<usize> = (start..j).collect();
        if pieces.is_empty()
            || fine.edges[start].lo != e.lo
            || fine.edges[j - 1].hi != e.hi
        {
            return None;
        }
        let ordered: Vec<usize> = match e.orient {
            Orientation::Left => pieces,
            Orientation::Right => pieces.into_iter().rev().collect(),
        };
        let head = ordered[0];
        if fine.edges[head].orient != e.orient {
            return None;
        }
        let rest = ordered[1..]
            .iter()
            .map(|&k| (k, if fine.edges[k].orient == e.orient { 1 } else { -1 }))
            .collect();
        decomp.push(EdgeDecomposition { head, rest });
    }
    if j != fine.edges.len() {
        return None;
    }
    Some(RefinementWitness {
        coarse: coarse.clone(),
        fine: fine.clone(),
        decomp,
    })
}

/// A lattice refining both inputs under `⊂_L`.
pub fn common_refinement(a: &OrientedLattice, b: &OrientedLattice) -> Result<OrientedLattice> {
    let mut points: Vec<Dyadic> = a.vertices();
    points.extend(b.vertices());
    points.sort();
    points.dedup();
    loop {
        let mut required: Vec<Option<Orientation>> = vec![None; points.len() - 1];
        let mut conflict = None;
        for e in a.edges.iter().chain(&b.edges) {
            let idx = match e.orient {
                Orientation::Left => points.iter().position(|&p| p == e.lo).expect("vertex"),
                Orientation::Right => points.iter().position(|&p| p == e.hi).expect("vertex") - 1,
            };
            match required[idx] {
                Some(o) if o != e.orient => conflict = Some(idx),
                _ => required[idx] = Some(e.orient),
            }
        }
        if let Some(idx) = conflict {
            let m = points[idx].mid(points[idx + 1]);
            points.insert(idx + 1, m);
            continue;
        }
        let tree = DyadicTree::from_partition(&points)?;
        let orients: Vec<Orientation> = required
            .into_iter()
            .map(|o| o.unwrap_or(Orientation::Left))
            .collect();
        return OrientedLattice::from_tree(&tree, &orients, a.length);
    }
}

/// Element of Thompson's group F as a reduced tree pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ThompsonElement {
    domain: DyadicTree,
    range: DyadicTree,
}

impl ThompsonElement {
    pub fn new(domain: DyadicTree, range: DyadicTree) -> Result<Self> {
        if domain.leaves() != range.leaves() {
            return Err(Error::Contract(format!(
                "tree pair needs equal leaf counts, got {} and {}",
                domain.leaves(),
                range.leaves()
            )));
        }
        Ok(ThompsonElement { domain, range }.reduced())
    }

    pub fn identity() -> Self {
        ThompsonElement {
            domain: DyadicTree::Leaf,
            range: DyadicTree::Leaf,
        }
    }

    /// `x₀`: `[0,½] → [0,¼]`, `[½,¾] → [¼,½]`, `[¾,1] → [½,1]`.
    pub fn x0() -> Self {
        let a: DyadicTree = "(,(,))".parse().expect("tree");
        let b: DyadicTree = "((,),)".parse().expect("tree");
        ThompsonElement::new(a, b).expect("generator")
    }

    /// `x₁`: `x₀` acting on `[½,1]`.
    pub fn x1() -> Self {
        let a: DyadicTree = "(,(,(,)))".parse().expect("tree");
        let b: DyadicTree = "(,((,),))".parse().expect("tree");
        ThompsonElement::new(a, b).expect("generator")
    }

    pub fn domain(&self) -> &DyadicTree {
        &self.domain
    }

    pub fn range(&self) -> &DyadicTree {
        &self.range
    }

    fn reduced(mut self) -> Self {
        loop {
            let dc = self.domain.carets();
            let rc = self.range.carets();
            match dc.iter().find(|k| rc.contains(k)) {
                Some(&k) => {
                    self.domain = self.domain.collapse_caret(k);
                    self.range = self.range.collapse_caret(k);
                }
                None => return self,
            }
        }
    }

    pub fn inverse(&self) -> Self {
        ThompsonElement {
            domain: self.range.clone(),
            range: self.domain.clone(),
        }
    }

    /// Tree pair with the domain enlarged to `t ⊇ domain`.
    pub fn expanded_domain(&self, t: &DyadicTree) -> Result<(DyadicTree, DyadicTree)> {
        let subs = t.subtrees_below(&self.domain)?;
        Ok((t.clone(), self.range.graft_all(&subs)))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &ThompsonElement) -> ThompsonElement {
        let u = other.range.union(&self.domain);
        let subs_other = u.subtrees_below(&other.range).expect("union refines");
        let dom = other.domain.graft_all(&subs_other);
        let (_, ran) = self.expanded_domain(&u).expect("union refines");
        ThompsonElement { domain: dom, range: ran }.reduced()
    }

    pub fn apply(&self, d: Dyadic) -> Result<Dyadic> {
        if d > Dyadic::ONE {
            return Err(Error::Domain(format!("{d} is outside [0,1]")));
        }
        if d == Dyadic::ONE {
            return Ok(Dyadic::ONE);
        }
        let di = self.domain.intervals();
        let ri = self.range.intervals();
        let k = di
            .iter()
            .position(|(lo, hi)| *lo <= d && d < *hi)
            .expect("intervals cover [0,1)");
        Ok(affine(di[k], ri[k], d))
    }

    /// Points of `(0,1)` where the slope changes.
    pub fn breakpoints(&self) -> Vec<Dyadic> {
        let di = self.domain.intervals();
        let ri = self.range.intervals();
        let slope = |k: usize| {
            let a = di[k].1.checked_sub(di[k].0).expect("interval");
            let b = ri[k].1.checked_sub(ri[k].0).expect("interval");
            b.log2_exact().expect("power of two") - a.log2_exact().expect("power of two")
        };
        (1..di.len())
            .filter(|&k| slope(k) != slope(k - 1))
            .map(|k| di[k].0)
            .collect()
    }

    /// Whether each edge lies in a single linear piece.
    pub fn is_adapted(&self, lattice: &OrientedLattice) -> bool {
        let di = self.domain.intervals();
        lattice
            .edges
            .iter()
            .all(|e| di.iter().any(|(lo, hi)| *lo <= e.lo && e.hi <= *hi))
    }

    /// Image lattice with orientations carried along.
    pub fn map_lattice(&self, lattice: &OrientedLattice) -> Result<OrientedLattice> {
        if !self.is_adapted(lattice) {
            let t = lattice.tree()?;
            return Err(Error::Contract(format!(
                "lattice is not adapted; refine to tree {} first",
                adapted_tree(self, &t)
            )));
        }
        let di = self.domain.intervals();
        let ri = self.range.intervals();
        let edges = lattice
            .edges
            .iter()
            .map(|e| {
                let k = di
                    .iter()
                    .position(|(lo, hi)| *lo <= e.lo && e.hi <= *hi)
                    .expect("adapted");
                Edge {
                    lo: affine(di[k], ri[k], e.lo),
                    hi: affine(di[k], ri[k], e.hi),
                    orient: e.orient,
                }
            })
            .collect();
        OrientedLattice::new(lattice.length, edges)
    }
}

fn affine(from: (Dyadic, Dyadic), to: (Dyadic, Dyadic), d: Dyadic) -> Dyadic {
    let a = from.1.checked_sub(from.0).expect("interval");
    let b = to.1.checked_sub(to.0).expect("interval");
    let k = b.log2_exact().expect("power of two") - a.log2_exact().expect("power of two");
    to.0.add(d.checked_sub(from.0).expect("inside").mul_pow2(k))
}

/// Smallest refinement of `t` on which `f` acts piecewise linearly and maps leaves to leaves.
pub fn adapted_tree(f: &ThompsonElement, t: &DyadicTree) -> DyadicTree {
    t.union(f.domain())
}

//! Field operators on `L²(G^E)` for finite `G`.
//!
//! Configurations are indexed lexicographically over edges in left-to-right
//! spatial order, edge 0 most significant. A convolution kernel `F(h, g)`
//! acts by `(λ(F)ψ)(g) = Σ_h F(h, g) ψ(h⁻¹g)`; the term `δ_h ⊗ δ_x` is the
//! operator `M(δ_x) λ_h`, i.e. the matrix unit `E_{x, h⁻¹x}`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::dyadic::{
    adapted_tree, is_refinement, Dyadic, DyadicTree, Edge, EdgeDecomposition, Orientation,
    OrientedLattice, RefinementWitness, ThompsonElement,
};
use crate::error::{Error, Result};
use crate::group_core::{GroupId, GroupValue, C64};

/// Largest operator dimension materialised as a dense matrix.
pub const MAX_DENSE_DIM: usize = 256;
/// Largest kernel table `|G|^{2E}`.
pub const MAX_KERNEL_ENTRIES: usize = 4096;
/// Largest configuration space handled by index maps.
pub const MAX_CONFIGS: usize = 1 << 22;

fn resource(what: &str, required: usize, limit: usize) -> Error {
    Error::Resource {
        what: what.to_string(),
        required,
        limit,
    }
}

/// Finite group given by its Cayley table; element 0 is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteGroup {
    name: String,
    n: usize,
    table: Vec<usize>,
    inv: Vec<usize>,
    abelian: bool,
}

impl FiniteGroup {
    pub fn from_table(name: &str, n: usize, table: Vec<usize>) -> Result<Self> {
        if n == 0 || table.len() != n * n || table.iter().any(|&x| x >= n) {
            return Err(Error::Config(format!("malformed Cayley table for {name}")));
        }
        for a in 0..n {
            if table[a] != a || table[a * n] != a {
                return Err(Error::Config(format!("{name}: element 0 is not the identity")));
            }
        }
        let mut inv = vec![usize::MAX; n];
        for a in 0..n {
            for b in 0..n {
                if table[a * n + b] == 0 {
                    inv[a] = b;
                }
            }
        }
        if inv.contains(&usize::MAX) {
            return Err(Error::Config(format!("{name}: missing inverses")));
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if table[table[a * n + b] * n + c] != table[a * n + table[b * n + c]] {
                        return Err(Error::Config(format!("{name}: table is not associative")));
                    }
                }
            }
        }
        let abelian = (0..n).all(|a| (0..n).all(|b| table[a * n + b] == table[b * n + a]));
        Ok(FiniteGroup {
            name: name.to_string(),
            n,
            table,
            inv,
            abelian,
        })
    }

    pub fn cyclic(n: usize) -> Self {
        let table = (0..n * n).map(|i| (i / n + i % n) % n).collect();
        FiniteGroup::from_table(&format!("Z{n}"), n, table).expect("cyclic table")
    }

    /// Symmetric group on three letters; the smallest nonabelian case.
    pub fn s3() -> Self {
        let mut perms: Vec<[usize; 3]> = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    if a != b && b != c && a != c {
                        perms.push([a, b, c]);
                    }
                }
            }
        }
        let idx = |p: [usize; 3]| perms.iter().position(|q| *q == p).expect("perm");
        let mut table = vec![0; 36];
        for (i, p) in perms.iter().enumerate() {
            for (j, q) in perms.iter().enumerate() {
                table[i * 6 + j] = idx([p[q[0]], p[q[1]], p[q[2]]]);
            }
        }
        FiniteGroup::from_table("S3", 6, table).expect("S3 table")
    }

    pub fn from_group_id(g: GroupId) -> Result<Self> {
        match g {
            GroupId::CyclicZn(n) => Ok(FiniteGroup::cyclic(n as usize)),
            other => Err(Error::Unsupported(format!(
                "operator-level tools need a finite group, got {other}"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn is_abelian(&self) -> bool {
        self.abelian
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.table[a * self.n + b]
    }

    pub fn inv(&self, a: usize) -> usize {
        self.inv[a]
    }

    /// `α_g(h) = g h g⁻¹`.
    pub fn conj(&self, g: usize, h: usize) -> usize {
        self.mul(self.mul(g, h), self.inv(g))
    }

    pub fn pow_sign(&self, a: usize, s: i8) -> usize {
        if s >= 0 {
            a
        } else {
            self.inv(a)
        }
    }

    /// Conjugacy-class label of every element.
    pub fn classes(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        for a in 0..self.n {
            if label[a] == usize::MAX {
                for g in 0..self.n {
                    label[self.conj(g, a)] = next;
                }
                next += 1;
            }
        }
        label
    }

    pub fn value(&self, a: usize) -> GroupValue {
        GroupValue::Residue(a as u32)
    }

    /// Elementwise product of configurations.
    pub fn mul_cfg(&self, a: &[usize], b: &[usize]) -> Vec<usize> {
        a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect()
    }

    pub fn inv_cfg(&self, a: &[usize]) -> Vec<usize> {
        a.iter().map(|&x| self.inv(x)).collect()
    }
}

/// Configuration space `G^E` with lexicographic indexing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfigSpace {
    pub order: usize,
    pub edges: usize,
}

impl ConfigSpace {
    pub fn new(order: usize, edges: usize) -> Result<Self> {
        let mut dim: usize = 1;
        for _ in 0..edges {
            dim = dim
                .checked_mul(order)
                .filter(|&d| d <= MAX_CONFIGS)
                .ok_or_else(|| resource("configuration space", usize::MAX, MAX_CONFIGS))?;
        }
        Ok(ConfigSpace { order, edges })
    }

    pub fn dim(&self) -> usize {
        self.order.pow(self.edges as u32)
    }

    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.edges];
        for e in (0..self.edges).rev() {
            out[e] = idx % self.order;
            idx /= self.order;
        }
        out
    }

    pub fn encode(&self, cfg: &[usize]) -> usize {
        cfg.iter().fold(0, |acc, &g| acc * self.order + g)
    }
}

/// Dense operator on `L²(G^E)` in the lexicographic configuration basis.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub order: usize,
    pub edges: usize,
    pub mat: DMatrix<C64>,
}

impl OperatorMatrix {
    pub fn new(order: usize, edges: usize, mat: DMatrix<C64>) -> Result<Self> {
        let dim = ConfigSpace::new(order, edges)?.dim();
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(Error::Contract(format!(
                "matrix is {}x{}, expected {dim}x{dim}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(OperatorMatrix { order, edges, mat })
    }

    fn checked_dim(space: ConfigSpace) -> Result<usize> {
        let dim = space.dim();
        if dim > MAX_DENSE_DIM {
            return Err(resource("dense operator dimension", dim, MAX_DENSE_DIM));
        }
        Ok(dim)
    }

    pub fn zeros(space: ConfigSpace) -> Result<Self> {
        let dim = Self::checked_dim(space)?;
        Ok(OperatorMatrix {
            order: space.order,
            edges: space.edges,
            mat: DMatrix::zeros(dim, dim),
        })
    }

    pub fn identity(space: ConfigSpace) -> Result<Self> {
        let dim = Self::checked_dim(space)?;
        Ok(OperatorMatrix {
            order: space.order,
            edges: space.edges,
            mat: DMatrix::identity(dim, dim),
        })
    }

    pub fn matrix_unit(space: ConfigSpace, i: usize, j: usize) -> Result<Self> {
        let mut m = Self::zeros(space)?;
        m.mat[(i, j)] = C64::new(1.0, 0.0);
        Ok(m)
    }

    /// `M(f)`.
    pub fn multiplication(space: ConfigSpace, f: impl Fn(&[usize]) -> C64) -> Result<Self> {
        let mut m = Self::zeros(space)?;
        for i in 0..space.dim() {
            m.mat[(i, i)] = f(&space.decode(i));
        }
        Ok(m)
    }

    /// `λ_h`: `(λ_h ψ)(g) = ψ(h⁻¹g)`.
    pub fn translation(group: &FiniteGroup, h: &[usize]) -> Result<Self> {
        let space = ConfigSpace::new(group.order(), h.len())?;
        let mut m = Self::zeros(space)?;
        let hinv = group.inv_cfg(h);
        for i in 0..space.dim() {
            let g = space.decode(i);
            m.mat[(i, space.encode(&group.mul_cfg(&hinv, &g)))] = C64::new(1.0, 0.0);
        }
        Ok(m)
    }

    pub fn space(&self) -> ConfigSpace {
        ConfigSpace {
            order: self.order,
            edges: self.edges,
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn adjoint(&self) -> Self {
        OperatorMatrix {
            order: self.order,
            edges: self.edges,
            mat: self.mat.adjoint(),
        }
    }

    pub fn compose(&self, o: &OperatorMatrix) -> Result<Self> {
        if self.space() != o.space() {
            return Err(Error::Contract("operators act on different spaces".into()));
        }
        Ok(OperatorMatrix {
            order: self.order,
            edges: self.edges,
            mat: &self.mat * &o.mat,
        })
    }

    /// `self ⊗ o`, with the edges of `self` to the left.
    pub fn kron(&self, o: &OperatorMatrix) -> Result<Self> {
        if self.order != o.order {
            return Err(Error::Contract("tensor factors over different groups".into()));
        }
        let space = ConfigSpace::new(self.order, self.edges + o.edges)?;
        Self::checked_dim(space)?;
        Ok(OperatorMatrix {
            order: self.order,
            edges: self.edges + o.edges,
            mat: self.mat.kronecker(&o.mat),
        })
    }

    pub fn max_abs_diff(&self, o: &OperatorMatrix) -> f64 {
        if self.mat.shape() != o.mat.shape() {
            return f64::INFINITY;
        }
        self.mat
            .iter()
            .zip(o.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn unitarity_residual(&self) -> f64 {
        let p = self.mat.adjoint() * &self.mat;
        let id = DMatrix::<C64>::identity(self.dim(), self.dim());
        (p - id).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Single term `c · M(δ_x) λ_h` of a kernel, with configuration indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelTerm {
    pub h: usize,
    pub x: usize,
    pub coef: C64,
}

/// Kernel stored as a list of terms; used when dense tables are too large.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseKernel {
    pub space: ConfigSpace,
    pub terms: Vec<KernelTerm>,
}

impl SparseKernel {
    /// `E_{ij} = M(δ_i) λ_{i j⁻¹}`.
    pub fn matrix_unit(group: &FiniteGroup, space: ConfigSpace, i: usize, j: usize) -> Self {
        let (gi, gj) = (space.decode(i), space.decode(j));
        let h = group.mul_cfg(&gi, &group.inv_cfg(&gj));
        SparseKernel {
            space,
            terms: vec![KernelTerm {
                h: space.encode(&h),
                x: i,
                coef: C64::new(1.0, 0.0),
            }],
        }
    }

    /// Row and column of the matrix unit carried by a term.
    pub fn term_position(group: &FiniteGroup, space: ConfigSpace, t: &KernelTerm) -> (usize, usize) {
        let h = space.decode(t.h);
        let x = space.decode(t.x);
        (t.x, space.encode(&group.mul_cfg(&group.inv_cfg(&h), &x)))
    }

    pub fn to_matrix(&self, group: &FiniteGroup) -> Result<OperatorMatrix> {
        let mut m = OperatorMatrix::zeros(self.space)?;
        for t in &self.terms {
            let (r, c) = Self::term_position(group, self.space, t);
            m.mat[(r, c)] += t.coef;
        }
        Ok(m)
    }

    /// Entry map `(row, col) → value` after merging duplicate terms.
    pub fn entries(&self, group: &FiniteGroup) -> HashMap<(usize, usize), C64> {
        let mut out: HashMap<(usize, usize), C64> = HashMap::new();
        for t in &self.terms {
            *out.entry(Self::term_position(group, self.space, t)).or_default() += t.coef;
        }
        out
    }

    /// Largest entrywise difference between two sparse operators.
    pub fn max_abs_diff(&self, o: &SparseKernel, group: &FiniteGroup) -> f64 {
        let a = self.entries(group);
        let b = o.entries(group);
        let mut worst: f64 = 0.0;
        for (k, v) in &a {
            worst = worst.max((v - b.get(k).copied().unwrap_or_default()).norm());
        }
        for (k, v) in &b {
            if !a.contains_key(k) {
                worst = worst.max(v.norm());
            }
        }
        worst
    }
}

/// Dense table `F(h, g)` over `G^E × G^E`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionKernel {
    pub group: FiniteGroup,
    pub edges: usize,
    data: Vec<C64>,
}

impl ConvolutionKernel {
    pub fn zeros(group: &FiniteGroup, edges: usize) -> Result<Self> {
        let space = ConfigSpace::new(group.order(), edges)?;
        let entries = space.dim().saturating_mul(space.dim());
        if entries > MAX_KERNEL_ENTRIES {
            return Err(resource("kernel table |G|^(2E)", entries, MAX_KERNEL_ENTRIES));
        }
        Ok(ConvolutionKernel {
            group: group.clone(),
            edges,
            data: vec![C64::default(); entries],
        })
    }

    pub fn from_fn(
        group: &FiniteGroup,
        edges: usize,
        mut f: impl FnMut(&[usize], &[usize]) -> C64,
    ) -> Result<Self> {
        let mut k = Self::zeros(group, edges)?;
        let space = k.space();
        for h in 0..space.dim() {
            let hc = space.decode(h);
            for g in 0..space.dim() {
                k.data[h * space.dim() + g] = f(&hc, &space.decode(g));
            }
        }
        Ok(k)
    }

    /// `δ_1 ⊗ f`, realised as `M(f)`.
    pub fn delta_mult(group: &FiniteGroup, edges: usize, f: impl Fn(&[usize]) -> C64) -> Result<Self> {
        Self::from_fn(group, edges, |h, g| {
            if h.iter().all(|&x| x == 0) {
                f(g)
            } else {
                C64::default()
            }
        })
    }

    /// `δ_{h₀} ⊗ 1`, realised as `λ_{h₀}`.
    pub fn translation(group: &FiniteGroup, h0: &[usize]) -> Result<Self> {
        Self::from_fn(group, h0.len(), |h, _| {
            if h == h0 {
                C64::new(1.0, 0.0)
            } else {
                C64::default()
            }
        })
    }

    pub fn space(&self) -> ConfigSpace {
        ConfigSpace {
            order: self.group.order(),
            edges: self.edges,
        }
    }

    pub fn get(&self, h: usize, g: usize) -> C64 {
        self.data[h * self.space().dim() + g]
    }

    pub fn set(&mut self, h: usize, g: usize, v: C64) {
        let d = self.space().dim();
        self.data[h * d + g] = v;
    }

    /// `F*(h, g) = conj F(h⁻¹, h⁻¹g)`.
    pub fn adjoint(&self) -> Self {
        let space = self.space();
        let grp = &self.group;
        let mut out = self.clone();
        for h in 0..space.dim() {
            let hinv = grp.inv_cfg(&space.decode(h));
            for g in 0..space.dim() {
                let hg = grp.mul_cfg(&hinv, &space.decode(g));
                out.set(h, g, self.get(space.encode(&hinv), space.encode(&hg)).conj());
            }
        }
        out
    }

    pub fn to_matrix(&self) -> Result<OperatorMatrix> {
        let space = self.space();
        let mut m = OperatorMatrix::zeros(space)?;
        for h in 0..space.dim() {
            let hinv = self.group.inv_cfg(&space.decode(h));
            for g in 0..space.dim() {
                let v = self.get(h, g);
                if v != C64::default() {
                    let col = space.encode(&self.group.mul_cfg(&hinv, &space.decode(g)));
                    m.mat[(g, col)] += v;
                }
            }
        }
        Ok(m)
    }

    pub fn from_matrix(group: &FiniteGroup, m: &OperatorMatrix) -> Result<Self> {
        let mut k = Self::zeros(group, m.edges)?;
        let space = k.space();
        for h in 0..space.dim() {
            let hinv = group.inv_cfg(&space.decode(h));
            for g in 0..space.dim() {
                let col = space.encode(&group.mul_cfg(&hinv, &space.decode(g)));
                k.set(h, g, m.mat[(g, col)]);
            }
        }
        Ok(k)
    }

    pub fn to_sparse(&self) -> SparseKernel {
        let space = self.space();
        let mut terms = Vec::new();
        for h in 0..space.dim() {
            for x in 0..space.dim() {
                let coef = self.get(h, x);
                if coef != C64::default() {
                    terms.push(KernelTerm { h, x, coef });
                }
            }
        }
        SparseKernel { space, terms }
    }
}

/// Permutation unitary `(Uψ)(u) = ψ(map[u])`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Perm {
    map: Vec<usize>,
}

impl Perm {
    pub fn identity(n: usize) -> Self {
        Perm { map: (0..n).collect() }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(Error::Contract("map is not a bijection".into()));
            }
            seen[m] = true;
        }
        Ok(Perm { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn at(&self, u: usize) -> usize {
        self.map[u]
    }

    /// Operator product `self · o`.
    pub fn then(&self, o: &Perm) -> Perm {
        Perm {
            map: self.map.iter().map(|&u| o.map[u]).collect(),
        }
    }

    pub fn inverse(&self) -> Perm {
        let mut inv = vec![0; self.map.len()];
        for (u, &m) in self.map.iter().enumerate() {
            inv[m] = u;
        }
        Perm { map: inv }
    }

    pub fn to_matrix(&self, space: ConfigSpace) -> Result<OperatorMatrix> {
        let mut m = OperatorMatrix::zeros(space)?;
        if m.dim() != self.map.len() {
            return Err(Error::Contract("permutation size does not match space".into()));
        }
        for (u, &v) in self.map.iter().enumerate() {
            m.mat[(u, v)] = C64::new(1.0, 0.0);
        }
        Ok(m)
    }

    /// `U a U*`.
    pub fn conjugate(&self, a: &OperatorMatrix) -> OperatorMatrix {
        let n = self.map.len();
        let mat = DMatrix::from_fn(n, n, |r, c| a.mat[(self.map[r], self.map[c])]);
        OperatorMatrix {
            order: a.order,
            edges: a.edges,
            mat,
        }
    }

    /// `U a U*` on a sparse operator.
    pub fn conjugate_sparse(&self, group: &FiniteGroup, a: &SparseKernel) -> SparseKernel {
        let inv = self.inverse();
        let space = a.space;
        let terms = a
            .terms
            .iter()
            .map(|t| {
                let (r, c) = SparseKernel::term_position(group, space, t);
                let (r, c) = (inv.map[r], inv.map[c]);
                let h = group.mul_cfg(&space.decode(r), &group.inv_cfg(&space.decode(c)));
                KernelTerm {
                    h: space.encode(&h),
                    x: r,
                    coef: t.coef,
                }
            })
            .collect();
        SparseKernel { space, terms }
    }
}

/// The elementary unitaries on `L²(G×G)` and `L²(G)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineUnitaries {
    /// `(U_L ψ)(g₂, g₁) = ψ(g₂g₁, g₁)`.
    pub u_l: OperatorMatrix,
    /// `(V_R ψ)(g₂, g₁) = ψ(g₂, g₁g₂)`.
    pub v_r: OperatorMatrix,
    /// `(U_ι φ)(g) = φ(g⁻¹)`.
    pub u_iota: OperatorMatrix,
    /// Swap of the two tensor factors.
    pub flip: OperatorMatrix,
}

pub fn refine_unitaries(group: &FiniteGroup) -> Result<RefineUnitaries> {
    let two = ConfigSpace::new(group.order(), 2)?;
    let one = ConfigSpace::new(group.order(), 1)?;
    let perm2 = |f: &dyn Fn(usize, usize) -> (usize, usize)| -> Result<OperatorMatrix> {
        let map = (0..two.dim())
            .map(|u| {
                let c = two.decode(u);
                let (a, b) = f(c[0], c[1]);
                two.encode(&[a, b])
            })
            .collect();
        Perm::from_map(map)?.to_matrix(two)
    };
    Ok(RefineUnitaries {
        u_l: perm2(&|g2, g1| (group.mul(g2, g1), g1))?,
        v_r: perm2(&|g2, g1| (g2, group.mul(g1, g2)))?,
        flip: perm2(&|g2, g1| (g1, g2))?,
        u_iota: Perm::from_map((0..group.order()).map(|g| group.inv(g)).collect())?
            .to_matrix(one)?,
    })
}

/// How the rest coordinates of a refinement are parametrised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestCoordinates {
    /// Raw configuration values of the non-head edges.
    Raw,
    /// Values raised to the sign of their piece in the decomposition.
    Signed,
}

/// A refining morphism `α` between two configuration spaces.
///
/// Fine configurations `y` are split as `Φ(y) = (p(y), r(y))`; then
/// `α(a) = U (a ⊗ 1) U*` with `(Uψ)(y) = ψ(Φ(y))`.
#[derive(Clone, Debug)]
pub struct Refinement {
    group: FiniteGroup,
    coarse: ConfigSpace,
    fine: ConfigSpace,
    decomp: Vec<EdgeDecomposition>,
    /// When set, coarse values sit on the head edges and the rest is ignored.
    trivial: bool,
    coords: RestCoordinates,
    rest: Vec<(usize, i8)>,
    rest_space: ConfigSpace,
}

impl Refinement {
    pub fn new(group: &FiniteGroup, w: &RefinementWitness, coords: RestCoordinates) -> Result<Self> {
        Self::from_decomposition(group, w.coarse.num_edges(), w.fine.num_edges(), &w.decomp, coords)
    }

    /// `α_triv`: the coarse operator acts on the head edges, identity on the rest.
    pub fn trivial(group: &FiniteGroup, w: &RefinementWitness, coords: RestCoordinates) -> Result<Self> {
        let mut r = Self::new(group, w, coords)?;
        r.trivial = true;
        Ok(r)
    }

    pub fn from_decomposition(
        group: &FiniteGroup,
        coarse_edges: usize,
        fine_edges: usize,
        decomp: &[EdgeDecomposition],
        coords: RestCoordinates,
    ) -> Result<Self> {
        if decomp.len() != coarse_edges {
            return Err(Error::Contract("decomposition does not match coarse edges".into()));
        }
        let rest: Vec<(usize, i8)> = decomp.iter().flat_map(|d| d.rest.iter().copied()).collect();
        if decomp.len() + rest.len() != fine_edges {
            return Err(Error::Contract("decomposition does not cover the fine edges".into()));
        }
        Ok(Refinement {
            group: group.clone(),
            coarse: ConfigSpace::new(group.order(), coarse_edges)?,
            fine: ConfigSpace::new(group.order(), fine_edges)?,
            decomp: decomp.to_vec(),
            trivial: false,
            coords,
            rest_space: ConfigSpace::new(group.order(), rest.len())?,
            rest,
        })
    }

    pub fn coarse_space(&self) -> ConfigSpace {
        self.coarse
    }

    pub fn fine_space(&self) -> ConfigSpace {
        self.fine
    }

    /// Coarse configuration `p(y)`: `g_e = g_{e'} g_{e'_1}^{s_1} ⋯`.
    pub fn project(&self, y: &[usize]) -> Vec<usize> {
        let g = &self.group;
        self.decomp
            .iter()
            .map(|d| {
                if self.trivial {
                    y[d.head]
                } else {
                    d.rest
                        .iter()
                        .fold(y[d.head], |acc, &(k, s)| g.mul(acc, g.pow_sign(y[k], s)))
                }
            })
            .collect()
    }

    fn rest_value(&self, v: usize, s: i8) -> usize {
        match self.coords {
            RestCoordinates::Raw => v,
            RestCoordinates::Signed => self.group.pow_sign(v, s),
        }
    }

    /// `Φ(y)` as an index of `coarse ⊗ rest`.
    pub fn split(&self, y_idx: usize) -> usize {
        let y = self.fine.decode(y_idx);
        let c = self.coarse.encode(&self.project(&y));
        let r: Vec<usize> = self.rest.iter().map(|&(k, s)| self.rest_value(y[k], s)).collect();
        c * self.rest_space.dim() + self.rest_space.encode(&r)
    }

    /// `Φ⁻¹`.
    pub fn join(&self, c_idx: usize, r_idx: usize) -> usize {
        let g = &self.group;
        let c = self.coarse.decode(c_idx);
        let r = self.rest_space.decode(r_idx);
        let mut y = vec![0; self.fine.edges];
        for (&(k, s), &v) in self.rest.iter().zip(&r) {
            y[k] = match self.coords {
                RestCoordinates::Raw => v,
                RestCoordinates::Signed => g.pow_sign(v, s),
            };
        }
        for (e, d) in self.decomp.iter().enumerate() {
            let tail = if self.trivial {
                0
            } else {
                d.rest
                    .iter()
                    .fold(0, |acc, &(k, s)| g.mul(acc, g.pow_sign(y[k], s)))
            };
            y[d.head] = g.mul(c[e], g.inv(tail));
        }
        self.fine.encode(&y)
    }

    /// `U` with `α(a) = U (a ⊗ 1) U*`.
    pub fn implementing_unitary(&self) -> Perm {
        Perm {
            map: (0..self.fine.dim()).map(|y| self.split(y)).collect(),
        }
    }

    /// Fine configurations over each coarse configuration.
    pub fn fibers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.coarse.dim()];
        for y in 0..self.fine.dim() {
            out[self.coarse.encode(&self.project(&self.fine.decode(y)))].push(y);
        }
        out
    }

    pub fn alpha_dense(&self, a: &OperatorMatrix) -> Result<OperatorMatrix> {
        if a.space() != self.coarse {
            return Err(Error::Contract("operator does not live on the coarse lattice".into()));
        }
        let mut out = OperatorMatrix::zeros(self.fine)?;
        let rd = self.rest_space.dim();
        let split: Vec<usize> = (0..self.fine.dim()).map(|y| self.split(y)).collect();
        for (r, &sr) in split.iter().enumerate() {
            for (c, &sc) in split.iter().enumerate() {
                if sr % rd == sc % rd {
                    out.mat[(r, c)] = a.mat[(sr / rd, sc / rd)];
                }
            }
        }
        Ok(out)
    }

    /// `α` on kernel terms: momenta move to the head edges, positions to their fibres.
    pub fn alpha_sparse(&self, a: &SparseKernel, fibers: &[Vec<usize>]) -> Result<SparseKernel> {
        if a.space != self.coarse {
            return Err(Error::Contract("kernel does not live on the coarse lattice".into()));
        }
        let mut terms = Vec::new();
        for t in &a.terms {
            let h = self.coarse.decode(t.h);
            let mut hf = vec![0; self.fine.edges];
            for (e, d) in self.decomp.iter().enumerate() {
                hf[d.head] = h[e];
            }
            let hf = self.fine.encode(&hf);
            for &y in &fibers[t.x] {
                terms.push(KernelTerm {
                    h: hf,
                    x: y,
                    coef: t.coef,
                });
            }
        }
        Ok(SparseKernel {
            space: self.fine,
            terms,
        })
    }

    /// `α(U)` for a permutation unitary `U` on the coarse space.
    pub fn alpha_perm(&self, u: &Perm) -> Perm {
        let rd = self.rest_space.dim();
        Perm {
            map: (0..self.fine.dim())
                .map(|y| {
                    let s = self.split(y);
                    self.join(u.at(s / rd), s % rd)
                })
                .collect(),
        }
    }
}

/// `D` with `D α_src(a) D* = α_dst(a)`; both must share coarse and rest spaces.
pub fn disentangler(src: &Refinement, dst: &Refinement) -> Result<Perm> {
    if src.coarse != dst.coarse || src.rest_space != dst.rest_space {
        return Err(Error::Contract("refinements are not comparable".into()));
    }
    let rd = src.rest_space.dim();
    Ok(Perm {
        map: (0..dst.fine.dim())
            .map(|z| {
                let s = dst.split(z);
                src.join(s / rd, s % rd)
            })
            .collect(),
    })
}

/// Vertex indices of the endpoints `(∂₊e, ∂₋e)` of every edge.
pub fn edge_endpoints(lattice: &OrientedLattice, periodic: bool) -> Vec<(usize, usize)> {
    let n = lattice.num_edges();
    let wrap = |v: usize| if periodic && v == n { 0 } else { v };
    lattice
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| match e.orient {
            Orientation::Left => (i, wrap(i + 1)),
            Orientation::Right => (wrap(i + 1), i),
        })
        .collect()
}

pub fn num_vertices(lattice: &OrientedLattice, periodic: bool) -> usize {
    lattice.num_edges() + usize::from(!periodic)
}

/// Configuration map `τ_g: c_e ↦ g_{∂₊e} c_e g_{∂₋e}⁻¹`.
pub fn gauge_map(group: &FiniteGroup, ends: &[(usize, usize)], g: &[usize], c: &[usize]) -> Vec<usize> {
    c.iter()
        .zip(ends)
        .map(|(&ce, &(p, m))| group.mul(group.mul(g[p], ce), group.inv(g[m])))
        .collect()
}

/// `U_τ(g)` with `(U_τ ψ)(c) = ψ(τ_g⁻¹(c))`.
pub fn gauge_perm(
    group: &FiniteGroup,
    lattice: &OrientedLattice,
    g: &[usize],
    periodic: bool,
) -> Result<Perm> {
    if g.len() != num_vertices(lattice, periodic) {
        return Err(Error::Contract(format!(
            "gauge tuple needs {} entries",
            num_vertices(lattice, periodic)
        )));
    }
    let ends = edge_endpoints(lattice, periodic);
    let space = ConfigSpace::new(group.order(), lattice.num_edges())?;
    let ginv = group.inv_cfg(g);
    Ok(Perm {
        map: (0..space.dim())
            .map(|u| space.encode(&gauge_map(group, &ends, &ginv, &space.decode(u))))
            .collect(),
    })
}

/// `Ad_{U_τ(g)}(a)`.
pub fn gauge_act(
    group: &FiniteGroup,
    lattice: &OrientedLattice,
    g: &[usize],
    periodic: bool,
    a: &OperatorMatrix,
) -> Result<OperatorMatrix> {
    Ok(gauge_perm(group, lattice, g, periodic)?.conjugate(a))
}

/// Gauge action on kernel terms: `(h, x) ↦ (α_{g₊}(h), τ_g(x))`.
pub fn gauge_act_sparse(
    group: &FiniteGroup,
    lattice: &OrientedLattice,
    g: &[usize],
    periodic: bool,
    a: &SparseKernel,
) -> SparseKernel {
    let ends = edge_endpoints(lattice, periodic);
    let space = a.space;
    let terms = a
        .terms
        .iter()
        .map(|t| {
            let h = space.decode(t.h);
            let h2: Vec<usize> = h
                .iter()
                .zip(&ends)
                .map(|(&he, &(p, _))| group.conj(g[p], he))
                .collect();
            KernelTerm {
                h: space.encode(&h2),
                x: space.encode(&gauge_map(group, &ends, g, &space.decode(t.x))),
                coef: t.coef,
            }
        })
        .collect();
    SparseKernel { space, terms }
}

/// Unitaries along a chain of `⊂_L` refinements, solving
/// `Ad_{U'} ∘ α = α_triv ∘ Ad_U` one step at a time.
pub fn eta_unitary_along(group: &FiniteGroup, chain: &[OrientedLattice]) -> Result<Perm> {
    let first = chain
        .first()
        .ok_or_else(|| Error::Contract("empty lattice chain".into()))?;
    let mut u = Perm::identity(ConfigSpace::new(group.order(), first.num_edges())?.dim());
    for pair in chain.windows(2) {
        let w = is_refinement(&pair[0], &pair[1]).ok_or_else(|| {
            Error::Contract(format!(
                "{} is not refined by {}",
                pair[0].describe(),
                pair[1].describe()
            ))
        })?;
        let dim = ConfigSpace::new(group.order(), pair[1].num_edges())?.dim();
        if dim > MAX_DENSE_DIM {
            return Err(resource("intertwiner dimension", dim, MAX_DENSE_DIM));
        }
        let src = Refinement::new(group, &w, RestCoordinates::Raw)?;
        let dst = Refinement::trivial(group, &w, RestCoordinates::Raw)?;
        u = dst.alpha_perm(&u).then(&disentangler(&src, &dst)?);
    }
    Ok(u)
}

/// Unitary implementing `η` at level `N` of the cofinal sequence.
pub fn eta_unitary(group: &FiniteGroup, n: u32) -> Result<Perm> {
    let chain: Vec<OrientedLattice> =
        (0..=n).map(|k| OrientedLattice::cofinal(k, Orientation::Left)).collect();
    eta_unitary_along(group, &chain)
}

/// Unitary implementing `ζ` at level `N`: `γ_N` onto the left-oriented `γ̄_N`.
pub fn zeta_unitary(group: &FiniteGroup, n: u32) -> Result<Perm> {
    let mut u = Perm::identity(group.order());
    for k in 0..n {
        let dim = ConfigSpace::new(group.order(), 1 << (k + 1))?.dim();
        if dim > MAX_DENSE_DIM {
            return Err(resource("intertwiner dimension", dim, MAX_DENSE_DIM));
        }
        let (src, dst) = zeta_step(group, k)?;
        u = dst.alpha_perm(&u).then(&disentangler(&src, &dst)?);
    }
    Ok(u)
}

fn zeta_step(group: &FiniteGroup, k: u32) -> Result<(Refinement, Refinement)> {
    let w = is_refinement(
        &OrientedLattice::cofinal(k, Orientation::Left),
        &OrientedLattice::cofinal(k + 1, Orientation::Left),
    )
    .expect("cofinal chain");
    let wb = is_refinement(
        &OrientedLattice::left_oriented(k),
        &OrientedLattice::left_oriented(k + 1),
    )
    .expect("left chain");
    Ok((
        Refinement::new(group, &w, RestCoordinates::Signed)?,
        Refinement::new(group, &wb, RestCoordinates::Signed)?,
    ))
}

/// `max |U' α_src(E) U'* − α_dst(U E U*)|` over all coarse matrix units `E`.
pub fn intertwining_residual(
    u_fine: &Perm,
    src: &Refinement,
    dst: &Refinement,
    u_coarse: &Perm,
) -> Result<f64> {
    let group = &src.group;
    let coarse = src.coarse;
    let fib_s = src.fibers();
    let fib_d = dst.fibers();
    let mut worst: f64 = 0.0;
    for i in 0..coarse.dim() {
        for j in 0..coarse.dim() {
            let e = SparseKernel::matrix_unit(group, coarse, i, j);
            let lhs = u_fine.conjugate_sparse(group, &src.alpha_sparse(&e, &fib_s)?);
            let inner = u_coarse.conjugate_sparse(group, &e);
            let rhs = dst.alpha_sparse(&inner, &fib_d)?;
            worst = worst.max(lhs.max_abs_diff(&rhs, group));
        }
    }
    Ok(worst)
}

/// Intertwining residuals of `η` and `ζ` for the step `N → N+1`.
pub fn eta_zeta_residuals(group: &FiniteGroup, n: u32) -> Result<(f64, f64)> {
    let w = is_refinement(
        &OrientedLattice::cofinal(n, Orientation::Left),
        &OrientedLattice::cofinal(n + 1, Orientation::Left),
    )
    .expect("cofinal chain");
    let src = Refinement::new(group, &w, RestCoordinates::Raw)?;
    let triv = Refinement::trivial(group, &w, RestCoordinates::Raw)?;
    let eta = intertwining_residual(
        &eta_unitary(group, n + 1)?,
        &src,
        &triv,
        &eta_unitary(group, n)?,
    )?;
    let (zs, zd) = zeta_step(group, n)?;
    let zeta = intertwining_residual(
        &zeta_unitary(group, n + 1)?,
        &zs,
        &zd,
        &zeta_unitary(group, n)?,
    )?;
    Ok((eta, zeta))
}

fn cyclic_order(group: &FiniteGroup) -> Result<usize> {
    if !group.is_abelian() || group.name() != format!("Z{}", group.order()) {
        return Err(Error::Unsupported(format!(
            "full Fourier matrices need a cyclic group, got {}",
            group.name()
        )));
    }
    Ok(group.order())
}

/// Unitary DFT `F[k, g] = e^{-2πi kg/n} / √n`.
pub fn fourier_matrix(group: &FiniteGroup) -> Result<OperatorMatrix> {
    let n = cyclic_order(group)?;
    let s = 1.0 / (n as f64).sqrt();
    let mat = DMatrix::from_fn(n, n, |k, g| {
        C64::from_polar(s, -2.0 * PI * ((k * g) % n) as f64 / n as f64)
    });
    OperatorMatrix::new(n, 1, mat)
}

/// `(Rφ)(g₂, g₁) = φ(g₂g₁)` in the orthonormal basis of `L²` with unit Haar mass.
pub fn refine_isometry(group: &FiniteGroup) -> DMatrix<C64> {
    let n = group.order();
    let s = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n * n, n, |row, g| {
        if group.mul(row / n, row % n) == g {
            C64::new(s, 0.0)
        } else {
            C64::default()
        }
    })
}

/// `R̂ = (F ⊗ F) R F*`.
pub fn dual_refine_isometry(group: &FiniteGroup) -> Result<DMatrix<C64>> {
    let f = fourier_matrix(group)?.mat;
    Ok(f.kronecker(&f) * refine_isometry(group) * f.adjoint())
}

/// Operator that is a tensor product of blocks of consecutive edges.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOperator {
    pub lattice: OrientedLattice,
    /// `(first edge, operator)`; blocks tile the edges in order.
    pub blocks: Vec<(usize, OperatorMatrix)>,
}

impl BlockOperator {
    pub fn new(lattice: OrientedLattice, blocks: Vec<(usize, OperatorMatrix)>) -> Result<Self> {
        let mut at = 0;
        for (start, op) in &blocks {
            if *start != at {
                return Err(Error::Contract("blocks do not tile the lattice".into()));
            }
            at += op.edges;
        }
        if at != lattice.num_edges() {
            return Err(Error::Contract("blocks do not cover the lattice".into()));
        }
        Ok(BlockOperator { lattice, blocks })
    }

    /// `⊗_e a_e`.
    pub fn elementary(lattice: OrientedLattice, factors: Vec<OperatorMatrix>) -> Result<Self> {
        let blocks = factors.into_iter().enumerate().collect();
        BlockOperator::new(lattice, blocks)
    }

    pub fn to_dense(&self) -> Result<OperatorMatrix> {
        let mut it = self.blocks.iter();
        let mut acc = it
            .next()
            .ok_or_else(|| Error::Contract("no blocks".into()))?
            .1
            .clone();
        for (_, op) in it {
            acc = acc.kron(op)?;
        }
        Ok(acc)
    }

    /// Block-wise `α` onto a `⊂_L` refinement.
    pub fn refine(&self, group: &FiniteGroup, fine: &OrientedLattice) -> Result<BlockOperator> {
        let w = is_refinement(&self.lattice, fine).ok_or_else(|| {
            Error::Contract(format!(
                "{} is not refined by {}",
                self.lattice.describe(),
                fine.describe()
            ))
        })?;
        let mut blocks = Vec::new();
        for (start, op) in &self.blocks {
            let ds = &w.decomp[*start..*start + op.edges];
            let lo = ds
                .iter()
                .flat_map(|d| std::iter::once(d.head).chain(d.rest.iter().map(|r| r.0)))
                .min()
                .expect("nonempty");
            let count: usize = ds.iter().map(|d| 1 + d.rest.len()).sum();
            let local: Vec<EdgeDecomposition> = ds
                .iter()
                .map(|d| EdgeDecomposition {
                    head: d.head - lo,
                    rest: d.rest.iter().map(|&(k, s)| (k - lo, s)).collect(),
                })
                .collect();
            let r = Refinement::from_decomposition(group, op.edges, count, &local, RestCoordinates::Raw)?;
            blocks.push((lo, r.alpha_dense(op)?));
        }
        BlockOperator::new(fine.clone(), blocks)
    }
}

/// Refines every edge into the pieces of `tree`, pieces keeping the parent's orientation.
pub fn refine_to_tree(lattice: &OrientedLattice, tree: &DyadicTree) -> Result<OrientedLattice> {
    let iv = tree.intervals();
    let mut edges = Vec::new();
    for (lo, hi) in iv {
        let parent = lattice
            .edges
            .iter()
            .find(|e| e.lo <= lo && hi <= e.hi)
            .ok_or_else(|| Error::Contract("tree does not refine the lattice".into()))?;
        edges.push(Edge {
            lo,
            hi,
            orient: parent.orient,
        });
    }
    OrientedLattice::new(lattice.length, edges)
}

/// Jones action on an operator given on an `f`-adapted lattice.
pub fn jones_act(f: &ThompsonElement, a: &BlockOperator) -> Result<BlockOperator> {
    let image = f.map_lattice(&a.lattice)?;
    BlockOperator::new(image, a.blocks.clone())
}

/// Jones action after refining to the adapted tree when needed.
pub fn jones_act_refining(
    group: &FiniteGroup,
    f: &ThompsonElement,
    a: &BlockOperator,
) -> Result<BlockOperator> {
    if f.is_adapted(&a.lattice) {
        return jones_act(f, a);
    }
    let t = adapted_tree(f, &a.lattice.tree()?);
    let fine = refine_to_tree(&a.lattice, &t)?;
    jones_act(f, &a.refine(group, &fine)?)
}

/// Largest entry difference after refining both operators to a common lattice.
pub fn block_difference(group: &FiniteGroup, a: &BlockOperator, b: &BlockOperator) -> Result<f64> {
    let t = a.lattice.tree()?.union(&b.lattice.tree()?);
    let la = refine_to_tree(&a.lattice, &t)?;
    let lb = refine_to_tree(&b.lattice, &t)?;
    let common = crate::dyadic::common_refinement(&la, &lb)?;
    let da = a.refine(group, &common)?.to_dense()?;
    let db = b.refine(group, &common)?.to_dense()?;
    Ok(da.max_abs_diff(&db))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JonesReport {
    /// `max ‖(fg)·a − f·(g·a)‖` over sampled pairs.
    pub group_law: f64,
    /// `max ‖f·α(a) − f·a‖` for `⊂_L` refinements `α`.
    pub compatibility: f64,
    pub samples: usize,
}

fn random_block_op<R: rand::Rng + ?Sized>(group: &FiniteGroup, lattice: &OrientedLattice, rng: &mut R) -> Result<BlockOperator> {
    let space = ConfigSpace::new(group.order(), 1)?;
    let n = space.dim();
    let factors = (0..lattice.num_edges())
        .map(|_| {
            let mat = DMatrix::from_fn(n, n, |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            OperatorMatrix::new(group.order(), 1, mat)
        })
        .collect::<Result<_>>()?;
    BlockOperator::elementary(lattice.clone(), factors)
}

/// Group law and refinement compatibility of the Jones action on random elementary operators.
pub fn jones_checks(group: &FiniteGroup, samples: usize, seed: u64) -> Result<JonesReport> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let gens = [
        ThompsonElement::x0(),
        ThompsonElement::x1(),
        ThompsonElement::x0().inverse(),
        ThompsonElement::x1().inverse(),
    ];
    let base = OrientedLattice::cofinal(1, Orientation::Left);
    let fine = OrientedLattice::cofinal(2, Orientation::Left);
    let mut report = JonesReport {
        group_law: 0.0,
        compatibility: 0.0,
        samples,
    };
    for _ in 0..samples {
        let f = &gens[rng.random_range(0..gens.len())];
        let g = &gens[rng.random_range(0..gens.len())];
        let a = random_block_op(group, &base, &mut rng)?;
        let lhs = jones_act_refining(group, &f.compose(g), &a)?;
        let rhs = jones_act_refining(group, f, &jones_act_refining(group, g, &a)?)?;
        report.group_law = report.group_law.max(block_difference(group, &lhs, &rhs)?);
        let moved = jones_act_refining(group, f, &a)?;
        let moved_fine = jones_act_refining(group, f, &a.refine(group, &fine)?)?;
        report.compatibility = report
            .compatibility
            .max(block_difference(group, &moved, &moved_fine)?);
    }
    Ok(report)
}

/// The explicit computation showing that the Jones action is not `η`-equivariant.
#[derive(Clone, Debug)]
pub struct NonEquivariance {
    /// `max |η_γ(f · η₁⁻¹(a⊗b)) − a⊗1⊗b|`.
    pub max_entry_diff: f64,
    /// Distance between `U_γ U_δ*` and the closed form `ψ(g₃ α_{g₁⁻¹}(g₂⁻¹), g₂, g₁)`,
    /// edges `e₁, e₂, e₃` read left to right.
    pub formula_residual: f64,
    pub delta: OrientedLattice,
    pub gamma: OrientedLattice,
    /// `U_γ U_δ*`.
    pub unitary: Perm,
}

pub fn eta_non_equivariance(
    group: &FiniteGroup,
    a: &OperatorMatrix,
    b: &OperatorMatrix,
) -> Result<NonEquivariance> {
    let d = |s: &str| -> Dyadic { s.parse().expect("dyadic") };
    let g0 = OrientedLattice::cofinal(0, Orientation::Left);
    let g1 = OrientedLattice::cofinal(1, Orientation::Left);
    let f = ThompsonElement::new("((,),)".parse()?, "(,(,))".parse()?)?;
    let delta = OrientedLattice::new(
        1.0,
        vec![
            Edge { lo: d("0"), hi: d("1/4"), orient: Orientation::Left },
            Edge { lo: d("1/4"), hi: d("1/2"), orient: Orientation::Right },
            Edge { lo: d("1/2"), hi: d("1"), orient: Orientation::Right },
        ],
    )?;
    let gamma = f.map_lattice(&delta)?;
    let u1 = eta_unitary_along(group, &[g0.clone(), g1.clone()])?;
    let ud = eta_unitary_along(group, &[g0.clone(), g1.clone(), delta.clone()])?;
    let ug = eta_unitary_along(group, &[g0, g1.clone(), gamma.clone()])?;

    let ab = a.kron(b)?;
    let x = u1.inverse().conjugate(&ab);
    let refined = BlockOperator::new(g1, vec![(0, x)])?.refine(group, &delta)?;
    let moved = jones_act(&f, &refined)?;
    if moved.lattice != gamma {
        return Err(Error::Contract("unexpected image lattice".into()));
    }
    let lhs = ug.conjugate(&moved.to_dense()?);
    let one = OperatorMatrix::identity(ConfigSpace::new(group.order(), 1)?)?;
    let rhs = a.kron(&one)?.kron(b)?;

    let space = ConfigSpace::new(group.order(), 3)?;
    let u = ug.then(&ud.inverse());
    let formula = Perm::from_map(
        (0..space.dim())
            .map(|i| {
                let c = space.decode(i);
                let (g1, g2, g3) = (c[0], c[1], c[2]);
                let t = group.conj(group.inv(g1), group.inv(g2));
                space.encode(&[g1, g2, group.mul(g3, t)])
            })
            .collect(),
    )?;
    let formula_residual = u
        .clone()
        .to_matrix(space)?
        .max_abs_diff(&formula.to_matrix(space)?);
    Ok(NonEquivariance {
        max_entry_diff: lhs.max_abs_diff(&rhs),
        formula_residual,
        delta,
        gamma,
        unitary: u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_op(space: ConfigSpace, rng: &mut ChaCha8Rng) -> OperatorMatrix {
        let n = space.dim();
        let mat = DMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        OperatorMatrix::new(space.order, space.edges, mat).unwrap()
    }

    fn lat(n: u32) -> OrientedLattice {
        OrientedLattice::cofinal(n, Orientation::Left)
    }

    #[test]
    fn groups() {
        let s3 = FiniteGroup::s3();
        assert!(!s3.is_abelian());
        assert_eq!(s3.classes().iter().max(), Some(&2));
        let z4 = FiniteGroup::cyclic(4);
        assert_eq!(z4.mul(3, 2), 1);
        assert_eq!(z4.inv(1), 3);
        assert!(FiniteGroup::from_table("bad", 2, vec![0, 1, 1, 1]).is_err());
    }

    #[test]
    fn basic_kernels() {
        let g = FiniteGroup::cyclic(3);
        let f = |c: &[usize]| C64::new(c[0] as f64 + 2.0 * c[1] as f64, 0.0);
        let m = ConvolutionKernel::delta_mult(&g, 2, f).unwrap().to_matrix().unwrap();
        let space = ConfigSpace::new(3, 2).unwrap();
        assert!(m.max_abs_diff(&OperatorMatrix::multiplication(space, f).unwrap()) == 0.0);
        let t = ConvolutionKernel::translation(&g, &[1, 2]).unwrap().to_matrix().unwrap();
        assert!(t.max_abs_diff(&OperatorMatrix::translation(&g, &[1, 2]).unwrap()) == 0.0);
        // Left translation sends δ_y to δ_{hy}.
        assert_eq!(t.mat[(space.encode(&[1, 2]), space.encode(&[0, 0]))], C64::new(1.0, 0.0));
    }

    #[test]
    fn z2_constant_kernel() {
        // F ≡ 1/4 on Z_2: both translations with weight 1/4 at every g.
        let g = FiniteGroup::cyclic(2);
        let m = ConvolutionKernel::from_fn(&g, 1, |_, _| C64::new(0.25, 0.0))
            .unwrap()
            .to_matrix()
            .unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(m.mat[(r, c)], C64::new(0.25, 0.0));
            }
        }
        let rank = m.mat.map(|z| z.re).rank(1e-12);
        assert_eq!(rank, 1);
    }

    #[test]
    fn kernel_adjoint_and_roundtrip() {
        let g = FiniteGroup::s3();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = ConvolutionKernel::from_fn(&g, 1, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap();
        let m = k.to_matrix().unwrap();
        assert!(k.adjoint().to_matrix().unwrap().max_abs_diff(&m.adjoint()) < 1e-15);
        let back = ConvolutionKernel::from_matrix(&g, &m).unwrap();
        assert_eq!(back, k);
        assert!(matches!(
            ConvolutionKernel::zeros(&FiniteGroup::cyclic(4), 4),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn elementary_unitaries() {
        for g in [FiniteGroup::cyclic(2), FiniteGroup::cyclic(5), FiniteGroup::s3()] {
            let u = refine_unitaries(&g).unwrap();
            assert!(u.u_l.unitarity_residual() < 1e-13);
            assert!(u.v_r.unitarity_residual() < 1e-13);
            assert!(u.u_iota.unitarity_residual() < 1e-13);
            let flipped = u.flip.compose(&u.u_l).unwrap().compose(&u.flip).unwrap();
            assert_eq!(flipped.max_abs_diff(&u.v_r), 0.0);
            let sq = u.u_iota.compose(&u.u_iota).unwrap();
            assert_eq!(sq.max_abs_diff(&OperatorMatrix::identity(sq.space()).unwrap()), 0.0);
        }
        // Z_2 U_L: (g₂, g₁) ↦ (g₂g₁, g₁) on the four basis states.
        let u = refine_unitaries(&FiniteGroup::cyclic(2)).unwrap().u_l;
        let expect = [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]];
        for (r, row) in expect.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert_eq!(u.mat[(r, c)].re, v as f64);
            }
        }
    }

    #[test]
    fn alpha_matches_u_l_for_left_composition() {
        let g = FiniteGroup::s3();
        let w = is_refinement(
            &OrientedLattice::left_oriented(0),
            &OrientedLattice::left_oriented(1),
        )
        .unwrap();
        let r = Refinement::new(&g, &w, RestCoordinates::Raw).unwrap();
        let u = refine_unitaries(&g).unwrap().u_l;
        assert_eq!(r.implementing_unitary().to_matrix(r.fine_space()).unwrap(), u);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_op(r.coarse_space(), &mut rng);
        let one = OperatorMatrix::identity(ConfigSpace::new(6, 1).unwrap()).unwrap();
        let direct = u.compose(&a.kron(&one).unwrap()).unwrap().compose(&u.adjoint()).unwrap();
        assert!(r.alpha_dense(&a).unwrap().max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn alpha_is_unital_multiplicative_star() {
        let g = FiniteGroup::cyclic(3);
        let w = is_refinement(&lat(1), &lat(2)).unwrap();
        let r = Refinement::new(&g, &w, RestCoordinates::Raw).unwrap();
        let id = OperatorMatrix::identity(r.coarse_space()).unwrap();
        assert_eq!(
            r.alpha_dense(&id).unwrap(),
            OperatorMatrix::identity(r.fine_space()).unwrap()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_op(r.coarse_space(), &mut rng);
            let b = random_op(r.coarse_space(), &mut rng);
            let ab = r.alpha_dense(&a.compose(&b).unwrap()).unwrap();
            let prod = r
                .alpha_dense(&a)
                .unwrap()
                .compose(&r.alpha_dense(&b).unwrap())
                .unwrap();
            assert!(ab.max_abs_diff(&prod) < 1e-12);
            assert!(r.alpha_dense(&a.adjoint()).unwrap().max_abs_diff(&r.alpha_dense(&a).unwrap().adjoint()) < 1e-15);
        }
    }

    #[test]
    fn alpha_is_transitive() {
        let g = FiniteGroup::cyclic(2);
        let w01 = is_refinement(&lat(0), &lat(1)).unwrap();
        let w12 = is_refinement(&lat(1), &lat(2)).unwrap();
        let w02 = is_refinement(&lat(0), &lat(2)).unwrap();
        let r01 = Refinement::new(&g, &w01, RestCoordinates::Raw).unwrap();
        let r12 = Refinement::new(&g, &w12, RestCoordinates::Raw).unwrap();
        let r02 = Refinement::new(&g, &w02, RestCoordinates::Raw).unwrap();
        let space = r01.coarse_space();
        for i in 0..2 {
            for j in 0..2 {
                let e = OperatorMatrix::matrix_unit(space, i, j).unwrap();
                let two = r12.alpha_dense(&r01.alpha_dense(&e).unwrap()).unwrap();
                assert!(two.max_abs_diff(&r02.alpha_dense(&e).unwrap()) < 1e-13);
            }
        }
    }

    #[test]
    fn sparse_alpha_matches_dense() {
        let g = FiniteGroup::s3();
        let w = is_refinement(&lat(0), &lat(1)).unwrap();
        let r = Refinement::new(&g, &w, RestCoordinates::Raw).unwrap();
        let fib = r.fibers();
        for i in 0..6 {
            for j in 0..6 {
                let e = SparseKernel::matrix_unit(&g, r.coarse_space(), i, j);
                let dense = r
                    .alpha_dense(&OperatorMatrix::matrix_unit(r.coarse_space(), i, j).unwrap())
                    .unwrap();
                let sparse = r.alpha_sparse(&e, &fib).unwrap().to_matrix(&g).unwrap();
                assert_eq!(dense, sparse);
            }
        }
    }

    #[test]
    fn covariance_relation() {
        // λ_h M(f) λ_{h⁻¹} = M(f(h⁻¹ ·)).
        let g = FiniteGroup::cyclic(5);
        let space = ConfigSpace::new(5, 1).unwrap();
        let f = |c: &[usize]| C64::new((c[0] as f64).sin(), c[0] as f64);
        for h in 0..5 {
            let lh = OperatorMatrix::translation(&g, &[h]).unwrap();
            let lhi = OperatorMatrix::translation(&g, &[g.inv(h)]).unwrap();
            let lhs = lh
                .compose(&OperatorMatrix::multiplication(space, f).unwrap())
                .unwrap()
                .compose(&lhi)
                .unwrap();
            let rhs = OperatorMatrix::multiplication(space, |c| f(&[g.mul(g.inv(h), c[0])])).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-13);
        }
    }

    #[test]
    fn locality_of_refined_operators() {
        let g = FiniteGroup::cyclic(2);
        let w = is_refinement(&lat(1), &lat(2)).unwrap();
        let r = Refinement::new(&g, &w, RestCoordinates::Raw).unwrap();
        let x = OperatorMatrix::translation(&g, &[1]).unwrap();
        let z = OperatorMatrix::multiplication(ConfigSpace::new(2, 1).unwrap(), |c| {
            C64::new(if c[0] == 0 { 1.0 } else { -1.0 }, 0.0)
        })
        .unwrap();
        let one = OperatorMatrix::identity(ConfigSpace::new(2, 1).unwrap()).unwrap();
        let a = r.alpha_dense(&x.kron(&one).unwrap()).unwrap();
        let b = r.alpha_dense(&one.kron(&z).unwrap()).unwrap();
        let ab = a.compose(&b).unwrap();
        let ba = b.compose(&a).unwrap();
        assert!(ab.max_abs_diff(&ba) < 1e-15);
    }

    #[test]
    fn gauge_action_properties() {
        let g = FiniteGroup::cyclic(3);
        let space = ConfigSpace::new(3, 2).unwrap();
        let f = |c: &[usize]| C64::new(c[0] as f64 - 0.5 * c[1] as f64, 1.0);
        let m = OperatorMatrix::multiplication(space, f).unwrap();
        // Constant gauge on an abelian group fixes multiplication operators.
        for h in 0..3 {
            let out = gauge_act(&g, &lat(1), &[h, h, h], false, &m).unwrap();
            assert_eq!(out.max_abs_diff(&m), 0.0);
        }
        // Sparse and dense actions agree.
        let gt = [1, 2, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let i = rng.random_range(0..9);
            let j = rng.random_range(0..9);
            let e = SparseKernel::matrix_unit(&g, space, i, j);
            let dense = gauge_act(&g, &lat(1), &gt, false, &e.to_matrix(&g).unwrap()).unwrap();
            let sparse = gauge_act_sparse(&g, &lat(1), &gt, false, &e).to_matrix(&g).unwrap();
            assert_eq!(dense, sparse);
        }
    }

    #[test]
    fn gauge_commutes_with_refinement() {
        let g = FiniteGroup::cyclic(3);
        let w = is_refinement(&lat(0), &lat(1)).unwrap();
        let r = Refinement::new(&g, &w, RestCoordinates::Raw).unwrap();
        let space = r.coarse_space();
        for gf in [[0, 1, 2], [2, 2, 1], [1, 0, 1]] {
            let gc = [gf[0], gf[2]];
            for i in 0..3 {
                for j in 0..3 {
                    let e = OperatorMatrix::matrix_unit(space, i, j).unwrap();
                    let lhs = gauge_act(&g, &lat(1), &gf, false, &r.alpha_dense(&e).unwrap()).unwrap();
                    let rhs = r
                        .alpha_dense(&gauge_act(&g, &lat(0), &gc, false, &e).unwrap())
                        .unwrap();
                    assert!(lhs.max_abs_diff(&rhs) < 1e-15);
                }
            }
        }
    }

    #[test]
    fn wilson_loop_is_gauge_invariant() {
        let g = FiniteGroup::cyclic(2);
        let space = ConfigSpace::new(2, 2).unwrap();
        // Periodic 2-edge lattice, L then R: the loop holonomy is g₁ g₂⁻¹.
        let w = OperatorMatrix::multiplication(space, |c| {
            C64::new(if g.mul(c[0], g.inv(c[1])) == 0 { 1.0 } else { -1.0 }, 0.0)
        })
        .unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let out = gauge_act(&g, &lat(1), &[a, b], true, &w).unwrap();
                assert_eq!(out.max_abs_diff(&w), 0.0);
            }
        }
    }

    #[test]
    fn eta_and_zeta_low_levels() {
        let g = FiniteGroup::cyclic(2);
        assert_eq!(eta_unitary(&g, 0).unwrap(), Perm::identity(2));
        assert_eq!(zeta_unitary(&g, 0).unwrap(), Perm::identity(2));
        let u = refine_unitaries(&g).unwrap();
        let space = ConfigSpace::new(2, 2).unwrap();
        assert_eq!(eta_unitary(&g, 1).unwrap().to_matrix(space).unwrap(), u.u_l);
        let one = OperatorMatrix::identity(ConfigSpace::new(2, 1).unwrap()).unwrap();
        assert_eq!(
            zeta_unitary(&g, 1).unwrap().to_matrix(space).unwrap(),
            one.kron(&u.u_iota).unwrap()
        );
        for grp in [FiniteGroup::cyclic(2), FiniteGroup::cyclic(3), FiniteGroup::s3()] {
            let (e, z) = eta_zeta_residuals(&grp, 0).unwrap();
            assert!(e < 1e-12 && z < 1e-12, "{} {e} {z}", grp.name());
        }
        let (e, z) = eta_zeta_residuals(&g, 1).unwrap();
        assert!(e < 1e-12 && z < 1e-12);
    }

    #[test]
    fn fourier_and_refinement_isometries() {
        let g = FiniteGroup::cyclic(4);
        let f = fourier_matrix(&g).unwrap();
        assert!(f.unitarity_residual() < 1e-13);
        let r = refine_isometry(&g);
        let rr = r.adjoint() * &r;
        assert!((rr - DMatrix::<C64>::identity(4, 4)).iter().all(|z| z.norm() < 1e-13));
        let rh = dual_refine_isometry(&g).unwrap();
        // Trivial irrep goes to the trivial pair.
        for row in 0..16 {
            let expect = if row == 0 { 1.0 } else { 0.0 };
            assert!((rh[(row, 0)] - C64::new(expect, 0.0)).norm() < 1e-13);
        }
        assert!(matches!(fourier_matrix(&FiniteGroup::s3()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn figure_refinements_of_a_right_edge() {
        let g = FiniteGroup::s3();
        let u = refine_unitaries(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random_op(ConfigSpace::new(6, 1).unwrap(), &mut rng);
        let one = OperatorMatrix::identity(ConfigSpace::new(6, 1).unwrap()).unwrap();
        let ib = one.kron(&b).unwrap();
        let coarse = OrientedLattice::cofinal(0, Orientation::Right);
        for (orients, expect) in [
            (
                [Orientation::Left, Orientation::Right],
                u.v_r.adjoint().compose(&ib).unwrap().compose(&u.v_r).unwrap(),
            ),
            (
                [Orientation::Right, Orientation::Right],
                u.v_r.compose(&ib).unwrap().compose(&u.v_r.adjoint()).unwrap(),
            ),
        ] {
            let fine = OrientedLattice::from_tree(&"(,)".parse().unwrap(), &orients, 1.0).unwrap();
            let w = is_refinement(&coarse, &fine).unwrap();
            let r = Refinement::new(&g, &w, RestCoordinates::Raw).unwrap();
            assert!(r.alpha_dense(&b).unwrap().max_abs_diff(&expect) < 1e-14);
        }
    }

    #[test]
    fn jones_identity_and_adaptation() {
        let g = FiniteGroup::cyclic(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = ConfigSpace::new(2, 1).unwrap();
        let ops: Vec<OperatorMatrix> = (0..2).map(|_| random_op(one, &mut rng)).collect();
        let a = BlockOperator::elementary(lat(1), ops).unwrap();
        assert_eq!(jones_act(&ThompsonElement::identity(), &a).unwrap(), a);
        let x0 = ThompsonElement::x0();
        assert!(matches!(jones_act(&x0, &a), Err(Error::Contract(_))));
        let moved = jones_act_refining(&g, &x0, &a).unwrap();
        let back = jones_act_refining(&g, &x0.inverse(), &moved).unwrap();
        assert!(block_difference(&g, &back, &a).unwrap() < 1e-14);
        let r = jones_checks(&g, 20, 3).unwrap();
        assert!(r.group_law < 1e-12 && r.compatibility < 1e-12, "{r:?}");
    }

    #[test]
    fn non_equivariance_witness() {
        let g = FiniteGroup::cyclic(2);
        let space = ConfigSpace::new(2, 1).unwrap();
        let z = OperatorMatrix::multiplication(space, |c| {
            C64::new(if c[0] == 0 { 1.0 } else { -1.0 }, 0.0)
        })
        .unwrap();
        let x = OperatorMatrix::translation(&g, &[1]).unwrap();
        assert_eq!(eta_non_equivariance(&g, &z, &x).unwrap().max_entry_diff, 0.0);
        let w = eta_non_equivariance(&g, &x, &z).unwrap();
        assert!(w.max_entry_diff > 0.1, "{}", w.max_entry_diff);
        assert!(w.formula_residual < 1e-15, "{}", w.formula_residual);
        let s3 = FiniteGroup::s3();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_op(ConfigSpace::new(6, 1).unwrap(), &mut rng);
        let w = eta_non_equivariance(&s3, &a, &a).unwrap();
        // Nonabelian: U_γ U_δ* = ψ(g₁, g₂, g₃g₂⁻¹) with no conjugation twist.
        let sp = ConfigSpace::new(6, 3).unwrap();
        for i in 0..sp.dim() {
            let c = sp.decode(i);
            let img = sp.encode(&[c[0], c[1], s3.mul(c[2], s3.inv(c[1]))]);
            assert_eq!(w.unitary.at(i), img);
        }
        assert!(w.formula_residual > 0.5);
    }
}

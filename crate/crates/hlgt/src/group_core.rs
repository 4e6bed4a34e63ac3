//! Structure groups: elements, Haar integration and Peter-Weyl data.
//!
//! Casimir normalisation: U(1) uses `n²`, SU(2) uses `j(j+1)` and Z_n uses the
//! eigenvalues `2(1 - cos 2πk/n)` of the cyclic discrete Laplacian. The
//! [`ZnCasimir::Quarter`] convention divides the Z_n values by four, which puts
//! the sign character of Z_2 at Casimir 1. A global scale multiplies all
//! backends.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Complex;
use rand::Rng;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

pub const DEFAULT_U1_CUTOFF: u32 = 32;
pub const DEFAULT_SU2_CUTOFF: u32 = 40;
pub const DEFAULT_ZDUAL_CUTOFF: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GroupId {
    CyclicZn(u32),
    /// Fourier modes `-K..=K`.
    CircleU1(u32),
    /// Spins `j = 0, 1/2, ..., j_max`, stored as `2 j_max`.
    Su2(u32),
    /// Configurations `-M..=M` where a finite window is needed.
    IntegersZ(u32),
    LineR,
    SUq2 { q: f64, cutoff: u32 },
}

impl GroupId {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Config(s.to_string()));
        match *self {
            GroupId::CyclicZn(0) => bad("Z_n needs n >= 1"),
            GroupId::CircleU1(0) => bad("U(1) mode cutoff must be positive"),
            GroupId::Su2(0) => bad("SU(2) spin cutoff must be positive"),
            GroupId::IntegersZ(0) => bad("Z range cutoff must be positive"),
            GroupId::SUq2 { q, cutoff } => {
                if cutoff == 0 {
                    bad("SU_q(2) level cutoff must be positive")
                } else if !q.is_finite() || q == 0.0 || (q.abs() - 1.0).abs() < 1e-15 {
                    bad("SU_q(2) needs q != 0 and |q| != 1")
                } else if q < 0.0 {
                    bad("SU_q(2) with negative q has complex Casimir values; use q > 0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn order(&self) -> Option<usize> {
        match *self {
            GroupId::CyclicZn(n) => Some(n as usize),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.order().is_some()
    }

    pub fn is_compact(&self) -> bool {
        matches!(
            self,
            GroupId::CyclicZn(_) | GroupId::CircleU1(_) | GroupId::Su2(_)
        )
    }

    pub fn is_abelian(&self) -> bool {
        !matches!(self, GroupId::Su2(_) | GroupId::SUq2 { .. })
    }

    pub fn identity(&self) -> GroupValue {
        match self {
            GroupId::CyclicZn(_) => GroupValue::Residue(0),
            GroupId::CircleU1(_) => GroupValue::Angle(0.0),
            GroupId::Su2(_) => GroupValue::Quat([1.0, 0.0, 0.0, 0.0]),
            GroupId::IntegersZ(_) => GroupValue::Int(0),
            GroupId::LineR => GroupValue::Real(0.0),
            GroupId::SUq2 { .. } => GroupValue::Quat([1.0, 0.0, 0.0, 0.0]),
        }
    }

    fn mismatch(&self, g: &GroupValue) -> Error {
        Error::Contract(format!("element {g} does not belong to {self}"))
    }

    pub fn multiply(&self, a: &GroupValue, b: &GroupValue) -> Result<GroupValue> {
        use GroupValue::*;
        match (self, a, b) {
            (GroupId::CyclicZn(n), Residue(x), Residue(y)) => Ok(Residue((x + y) % n)),
            (GroupId::CircleU1(_), Angle(x), Angle(y)) => Ok(Angle(wrap_angle(x + y))),
            (GroupId::Su2(_), Quat(p), Quat(q)) => Ok(Quat(quat_normalize(quat_mul(p, q)))),
            (GroupId::IntegersZ(_), Int(x), Int(y)) => Ok(Int(x + y)),
            (GroupId::LineR, Real(x), Real(y)) => Ok(Real(x + y)),
            (GroupId::SUq2 { .. }, _, _) => Err(Error::Unsupported(
                "SU_q(2) is exposed as spectral data only".into(),
            )),
            _ => Err(self.mismatch(if self.owns(a) { b } else { a })),
        }
    }

    pub fn invert(&self, g: &GroupValue) -> Result<GroupValue> {
        use GroupValue::*;
        match (self, g) {
            (GroupId::CyclicZn(n), Residue(x)) => Ok(Residue((n - x % n) % n)),
            (GroupId::CircleU1(_), Angle(x)) => Ok(Angle(wrap_angle(-x))),
            (GroupId::Su2(_), Quat(q)) => Ok(Quat([q[0], -q[1], -q[2], -q[3]])),
            (GroupId::IntegersZ(_), Int(x)) => Ok(Int(-x)),
            (GroupId::LineR, Real(x)) => Ok(Real(-x)),
            (GroupId::SUq2 { .. }, _) => Err(Error::Unsupported(
                "SU_q(2) is exposed as spectral data only".into(),
            )),
            _ => Err(self.mismatch(g)),
        }
    }

    fn owns(&self, g: &GroupValue) -> bool {
        matches!(
            (self, g),
            (GroupId::CyclicZn(_), GroupValue::Residue(_))
                | (GroupId::CircleU1(_), GroupValue::Angle(_))
                | (GroupId::Su2(_), GroupValue::Quat(_))
                | (GroupId::IntegersZ(_), GroupValue::Int(_))
                | (GroupId::LineR, GroupValue::Real(_))
        )
    }

    pub fn elements(&self) -> Result<Vec<GroupValue>> {
        match *self {
            GroupId::CyclicZn(n) => Ok((0..n).map(GroupValue::Residue).collect()),
            _ => Err(Error::Unsupported(format!("{self} is not finite"))),
        }
    }

    /// Haar-distributed sample (uniform window for Z).
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GroupValue> {
        match *self {
            GroupId::CyclicZn(n) => Ok(GroupValue::Residue(rng.random_range(0..n))),
            GroupId::CircleU1(_) => Ok(GroupValue::Angle(wrap_angle(
                rng.random_range(-PI..PI),
            ))),
            GroupId::Su2(_) => {
                // Hopf coordinates: u = sin²η is uniform under Haar measure.
                let u: f64 = rng.random();
                let a = rng.random_range(0.0..2.0 * PI);
                let b = rng.random_range(0.0..2.0 * PI);
                let (c, s) = ((1.0 - u).sqrt(), u.sqrt());
                Ok(GroupValue::Quat(quat_normalize([
                    c * a.cos(),
                    c * a.sin(),
                    s * b.cos(),
                    s * b.sin(),
                ])))
            }
            GroupId::IntegersZ(m) => {
                let m = m as i64;
                Ok(GroupValue::Int(rng.random_range(-m..=m)))
            }
            _ => Err(Error::Unsupported(format!("no sampling measure on {self}"))),
        }
    }

    /// Parses an element: residue, angle, quaternion `w,x,y,z` or SU(2) class angle, integer, real.
    pub fn parse_element(&self, s: &str) -> Result<GroupValue> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse '{s}' as an element of {self}"));
        match *self {
            GroupId::CyclicZn(n) => {
                let r: i64 = s.parse().map_err(|_| bad())?;
                Ok(GroupValue::Residue(r.rem_euclid(n as i64) as u32))
            }
            GroupId::CircleU1(_) => Ok(GroupValue::Angle(wrap_angle(
                s.parse().map_err(|_| bad())?,
            ))),
            GroupId::Su2(_) => {
                let parts: Vec<f64> = s
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                match parts.as_slice() {
                    [theta] => Ok(GroupValue::Quat([theta.cos(), theta.sin(), 0.0, 0.0])),
                    [w, x, y, z] => {
                        let q = [*w, *x, *y, *z];
                        if quat_norm(&q) == 0.0 {
                            return Err(bad());
                        }
                        Ok(GroupValue::Quat(quat_normalize(q)))
                    }
                    _ => Err(bad()),
                }
            }
            GroupId::IntegersZ(_) => Ok(GroupValue::Int(s.parse().map_err(|_| bad())?)),
            GroupId::LineR => Ok(GroupValue::Real(s.parse().map_err(|_| bad())?)),
            GroupId::SUq2 { .. } => Err(Error::Unsupported(
                "SU_q(2) is exposed as spectral data only".into(),
            )),
        }
    }

    /// Distance between elements: exact 0/1 for discrete backends.
    pub fn distance(&self, a: &GroupValue, b: &GroupValue) -> Result<f64> {
        use GroupValue::*;
        match (a, b) {
            (Residue(x), Residue(y)) => Ok(if x == y { 0.0 } else { 1.0 }),
            (Int(x), Int(y)) => Ok(if x == y { 0.0 } else { 1.0 }),
            (Angle(x), Angle(y)) => Ok(wrap_angle(x - y).abs()),
            (Real(x), Real(y)) => Ok((x - y).abs()),
            (Quat(p), Quat(q)) => {
                // q and -q are the same element of SU(2) only for SO(3); keep them distinct.
                Ok((0..4).map(|i| (p[i] - q[i]).powi(2)).sum::<f64>().sqrt())
            }
            _ => Err(self.mismatch(a)),
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::CyclicZn(n) => write!(f, "z{n}"),
            GroupId::CircleU1(k) => write!(f, "u1:{k}"),
            GroupId::Su2(j) => write!(f, "su2:{j}"),
            GroupId::IntegersZ(m) => write!(f, "zdual:{m}"),
            GroupId::LineR => write!(f, "line"),
            GroupId::SUq2 { q, cutoff } => write!(f, "suq2:{q},{cutoff}"),
        }
    }
}

impl FromStr for GroupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.to_string(), Some(a.to_string())),
            None => (s.clone(), None),
        };
        let int = |a: &str| -> Result<u32> {
            a.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("bad integer '{a}' in group spec '{s}'")))
        };
        let id = match (head.as_str(), arg.as_deref()) {
            ("zn", Some(a)) => GroupId::CyclicZn(int(a)?),
            ("u1", None) => GroupId::CircleU1(DEFAULT_U1_CUTOFF),
            ("u1", Some(a)) => GroupId::CircleU1(int(a)?),
            ("su2", None) => GroupId::Su2(DEFAULT_SU2_CUTOFF),
            ("su2", Some(a)) => GroupId::Su2(int(a)?),
            ("zdual", None) => GroupId::IntegersZ(DEFAULT_ZDUAL_CUTOFF),
            ("zdual", Some(a)) => GroupId::IntegersZ(int(a)?),
            ("line" | "r", None) => GroupId::LineR,
            ("suq2", Some(a)) => {
                let (q, c) = a.split_once(',').ok_or_else(|| {
                    Error::Config(format!("suq2 needs '<q>,<cutoff>', got '{a}'"))
                })?;
                let q: f64 = q
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad q '{q}'")))?;
                GroupId::SUq2 { q, cutoff: int(c)? }
            }
            (h, None) if h.len() > 1 && h.starts_with('z') && h[1..].chars().all(|c| c.is_ascii_digit()) => {
                GroupId::CyclicZn(int(&h[1..])?)
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown group '{s}'; expected z2|zN:<n>|u1:<K>|su2:<2jmax>|zdual:<M>|suq2:<q>,<cutoff>"
                )))
            }
        };
        id.validate()?;
        Ok(id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GroupValue {
    Residue(u32),
    Angle(f64),
    Quat([f64; 4]),
    Int(i64),
    Real(f64),
}

impl fmt::Display for GroupValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupValue::Residue(r) => write!(f, "{r}"),
            GroupValue::Angle(a) => write!(f, "{a}"),
            GroupValue::Quat(q) => write!(f, "{},{},{},{}", q[0], q[1], q[2], q[3]),
            GroupValue::Int(m) => write!(f, "{m}"),
            GroupValue::Real(x) => write!(f, "{x}"),
        }
    }
}

/// Maps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = x.rem_euclid(two_pi);
    if y > PI {
        y -= two_pi;
    }
    y
}

pub fn quat_mul(p: &[f64; 4], q: &[f64; 4]) -> [f64; 4] {
    [
        p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
        p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
        p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
        p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0],
    ]
}

fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn quat_normalize(q: [f64; 4]) -> [f64; 4] {
    let n = quat_norm(&q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZnCasimir {
    /// `2(1 - cos 2πk/n)`; Z_2 sign character at 4.
    Laplacian,
    /// `(1 - cos 2πk/n)/2`; Z_2 sign character at 1.
    Quarter,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conventions {
    pub zn: ZnCasimir,
    pub scale: f64,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            zn: ZnCasimir::Laplacian,
            scale: 1.0,
        }
    }
}

impl Conventions {
    pub fn quarter_zn() -> Self {
        Conventions {
            zn: ZnCasimir::Quarter,
            scale: 1.0,
        }
    }

    pub fn notes(&self) -> String {
        let zn = match self.zn {
            ZnCasimir::Laplacian => "Z_n: c_k = 2(1-cos(2pi k/n)), c_sgn(Z_2) = 4",
            ZnCasimir::Quarter => "Z_n: c_k = (1-cos(2pi k/n))/2, c_sgn(Z_2) = 1",
        };
        format!(
            "{zn}; U(1): c_n = n^2; SU(2): c_j = j(j+1); global Casimir scale {}",
            self.scale
        )
    }

    fn zn_casimir(&self, k: u32, n: u32) -> f64 {
        let lap = 2.0 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos());
        let base = match self.zn {
            ZnCasimir::Laplacian => lap,
            ZnCasimir::Quarter => lap / 4.0,
        };
        // cos(2πk/n) is inexact; snap the trivial and sign characters.
        let base = if k == 0 {
            0.0
        } else if 2 * k == n {
            match self.zn {
                ZnCasimir::Laplacian => 4.0,
                ZnCasimir::Quarter => 1.0,
            }
        } else {
            base
        };
        self.scale * base
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IrrepLabel {
    Zn { k: u32, n: u32 },
    U1(i64),
    Su2 { two_j: u32 },
    SUq2 { n: u32 },
}

impl fmt::Display for IrrepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            IrrepLabel::Zn { k: 0, .. } => write!(f, "triv"),
            IrrepLabel::Zn { k: 1, n: 2 } => write!(f, "sgn"),
            IrrepLabel::Zn { k, .. } => write!(f, "{k}"),
            IrrepLabel::U1(m) => write!(f, "{m}"),
            IrrepLabel::Su2 { two_j } if two_j % 2 == 0 => write!(f, "{}", two_j / 2),
            IrrepLabel::Su2 { two_j } => write!(f, "{two_j}/2"),
            IrrepLabel::SUq2 { n } => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Irrep {
    pub label: IrrepLabel,
    pub dim: u32,
    pub casimir: f64,
}

impl Irrep {
    pub fn character(&self, g: &GroupValue) -> Result<C64> {
        match (self.label, g) {
            (IrrepLabel::Zn { k, n }, GroupValue::Residue(r)) => {
                let e = ((k as u64 * *r as u64) % n as u64) as f64;
                Ok(C64::from_polar(1.0, 2.0 * PI * e / n as f64))
            }
            (IrrepLabel::U1(m), GroupValue::Angle(phi)) => Ok(C64::from_polar(1.0, m as f64 * phi)),
            (IrrepLabel::Su2 { two_j }, GroupValue::Quat(q)) => {
                Ok(C64::new(chebyshev_u(two_j, q[0].clamp(-1.0, 1.0)), 0.0))
            }
            (IrrepLabel::SUq2 { .. }, _) => Err(Error::Unsupported(
                "SU_q(2) characters are not modelled".into(),
            )),
            (l, g) => Err(Error::Contract(format!(
                "irrep {l} cannot be evaluated on {g}"
            ))),
        }
    }

    pub fn is_trivial(&self) -> bool {
        matches!(
            self.label,
            IrrepLabel::Zn { k: 0, .. } | IrrepLabel::U1(0) | IrrepLabel::Su2 { two_j: 0 }
        )
    }
}

/// Chebyshev polynomial of the second kind: the SU(2) character of spin `n/2` at `cos θ`.
pub fn chebyshev_u(n: u32, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, 2.0 * x);
    if n == 0 {
        return a;
    }
    for _ in 1..n {
        let c = 2.0 * x * b - a;
        a = b;
        b = c;
    }
    b
}

pub fn suq2_casimir(q: f64, n: u32) -> f64 {
    // ((q^{n/2} - q^{-n/2}) / (q - q^{-1}))² = (sinh(n h/2) / sinh h)², h = ln q.
    let h = q.ln();
    let r = (0.5 * n as f64 * h).sinh() / h.sinh();
    r * r
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrrepTable {
    pub group: GroupId,
    pub conventions: Conventions,
    /// Ordered by nondecreasing Casimir for the infinite families.
    pub entries: Vec<Irrep>,
}

impl IrrepTable {
    pub fn find(&self, label: &str) -> Result<usize> {
        let want = label.trim();
        self.entries
            .iter()
            .position(|e| e.label.to_string() == want)
            .or_else(|| match (self.group, want.parse::<i64>()) {
                (GroupId::CyclicZn(n), Ok(k)) => self.entries.iter().position(|e| {
                    e.label
                        == IrrepLabel::Zn {
                            k: k.rem_euclid(n as i64) as u32,
                            n,
                        }
                }),
                _ => None,
            })
            .ok_or_else(|| Error::Contract(format!("irrep '{label}' not in table for {}", self.group)))
    }

    pub fn index_of(&self, label: IrrepLabel) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }
}

pub fn irreps(group: GroupId, conv: Conventions) -> Result<IrrepTable> {
    group.validate()?;
    if !(conv.scale.is_finite() && conv.scale > 0.0) {
        return Err(Error::Config("Casimir scale must be positive".into()));
    }
    let entries = match group {
        GroupId::CyclicZn(n) => (0..n)
            .map(|k| Irrep {
                label: IrrepLabel::Zn { k, n },
                dim: 1,
                casimir: conv.zn_casimir(k, n),
            })
            .collect(),
        GroupId::CircleU1(kmax) => {
            let mut v = vec![Irrep {
                label: IrrepLabel::U1(0),
                dim: 1,
                casimir: 0.0,
            }];
            for m in 1..=kmax as i64 {
                for s in [m, -m] {
                    v.push(Irrep {
                        label: IrrepLabel::U1(s),
                        dim: 1,
                        casimir: conv.scale * (m * m) as f64,
                    });
                }
            }
            v
        }
        GroupId::Su2(two_jmax) => (0..=two_jmax)
            .map(|two_j| {
                let j = two_j as f64 / 2.0;
                Irrep {
                    label: IrrepLabel::Su2 { two_j },
                    dim: two_j + 1,
                    casimir: conv.scale * j * (j + 1.0),
                }
            })
            .collect(),
        GroupId::SUq2 { q, cutoff } => (1..=cutoff)
            .map(|n| Irrep {
                label: IrrepLabel::SUq2 { n },
                dim: n,
                casimir: conv.scale * suq2_casimir(q, n),
            })
            .collect(),
        GroupId::IntegersZ(_) => {
            return Err(Error::Unsupported(
                "the dual of Z is the circle; use the u1 backend for its characters".into(),
            ))
        }
        GroupId::LineR => {
            return Err(Error::Unsupported(
                "the line backend only carries closed forms".into(),
            ))
        }
    };
    Ok(IrrepTable {
        group,
        conventions: conv,
        entries,
    })
}

/// Declared node counts for the continuous backends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub u1_nodes: usize,
    pub su2_class_nodes: usize,
    pub su2_eta_nodes: usize,
    pub su2_xi_nodes: usize,
}

impl Quadrature {
    pub fn for_group(group: GroupId) -> Self {
        let mut q = Quadrature {
            u1_nodes: 256,
            su2_class_nodes: 256,
            su2_eta_nodes: 32,
            su2_xi_nodes: 64,
        };
        match group {
            GroupId::CircleU1(k) => q.u1_nodes = q.u1_nodes.max(4 * k as usize + 4),
            GroupId::Su2(j) => {
                q.su2_class_nodes = q.su2_class_nodes.max(4 * j as usize + 8);
                q.su2_xi_nodes = q.su2_xi_nodes.max(2 * j as usize + 8);
                q.su2_eta_nodes = q.su2_eta_nodes.max(j as usize + 8);
            }
            _ => {}
        }
        q
    }

    pub fn doubled(&self) -> Self {
        Quadrature {
            u1_nodes: 2 * self.u1_nodes,
            su2_class_nodes: 2 * self.su2_class_nodes,
            su2_eta_nodes: 2 * self.su2_eta_nodes,
            su2_xi_nodes: 2 * self.su2_xi_nodes,
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for k in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * k - 1) as f64 * z * p2 - (k - 1) as f64 * p3) / k as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

pub fn haar_integrate(group: GroupId, f: &dyn Fn(&GroupValue) -> C64) -> Result<C64> {
    haar_integrate_with(group, &Quadrature::for_group(group), f)
}

/// Exact average on Z_n, trapezoid on U(1), Hopf-coordinate product rule on SU(2).
pub fn haar_integrate_with(
    group: GroupId,
    quad: &Quadrature,
    f: &dyn Fn(&GroupValue) -> C64,
) -> Result<C64> {
    group.validate()?;
    match group {
        GroupId::CyclicZn(n) => {
            let s: C64 = (0..n).map(|r| f(&GroupValue::Residue(r))).sum();
            Ok(s / n as f64)
        }
        GroupId::CircleU1(_) => {
            let m = quad.u1_nodes;
            let s: C64 = (0..m)
                .map(|i| f(&GroupValue::Angle(wrap_angle(-PI + 2.0 * PI * i as f64 / m as f64))))
                .sum();
            Ok(s / m as f64)
        }
        GroupId::Su2(_) => {
            // q = (cos η e^{iξ1}, sin η e^{iξ2}), dμ = sin η cos η dη dξ1 dξ2 / (2π²).
            let (xs, ws) = gauss_legendre(quad.su2_eta_nodes);
            let m = quad.su2_xi_nodes;
            let mut total = C64::new(0.0, 0.0);
            for (x, w) in xs.iter().zip(&ws) {
                let eta = 0.25 * PI * (x + 1.0);
                let weight = w * 0.25 * PI * eta.sin() * eta.cos();
                let (c, s) = (eta.cos(), eta.sin());
                let mut inner = C64::new(0.0, 0.0);
                for a in 0..m {
                    let xi1 = 2.0 * PI * a as f64 / m as f64;
                    for b in 0..m {
                        let xi2 = 2.0 * PI * b as f64 / m as f64;
                        inner += f(&GroupValue::Quat([
                            c * xi1.cos(),
                            c * xi1.sin(),
                            s * xi2.cos(),
                            s * xi2.sin(),
                        ]));
                    }
                }
                total += inner * (weight * 4.0 * PI * PI / (m * m) as f64);
            }
            Ok(total / (2.0 * PI * PI))
        }
        GroupId::IntegersZ(_) => Err(Error::Unsupported(
            "Z carries counting measure, not a Haar probability".into(),
        )),
        GroupId::LineR => Err(Error::Unsupported(
            "Haar integration on the line is not provided; only closed forms are used there".into(),
        )),
        GroupId::SUq2 { .. } => Err(Error::Unsupported(
            "SU_q(2) is exposed as spectral data only".into(),
        )),
    }
}

/// Haar integral of a class function; SU(2) reduces to the Weyl integration formula.
pub fn haar_integrate_class(
    group: GroupId,
    quad: &Quadrature,
    f: &dyn Fn(&GroupValue) -> C64,
) -> Result<C64> {
    match group {
        GroupId::Su2(_) => {
            let m = quad.su2_class_nodes;
            let s: C64 = (0..m)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / m as f64;
                    f(&GroupValue::Quat([t.cos(), t.sin(), 0.0, 0.0])) * t.sin().powi(2)
                })
                .sum();
            Ok(s * (2.0 / m as f64))
        }
        _ => haar_integrate_with(group, quad, f),
    }
}

pub fn character_inner(tbl: &IrrepTable, a: usize, b: usize) -> Result<C64> {
    let (ia, ib) = (tbl.entries[a], tbl.entries[b]);
    let quad = Quadrature::for_group(tbl.group);
    let f = |g: &GroupValue| {
        ia.character(g).unwrap_or_default().conj() * ib.character(g).unwrap_or_default()
    };
    haar_integrate_class(tbl.group, &quad, &f)
}

/// Raw fusion integral `∫ χ_a χ_b conj(χ_p)`.
pub fn fusion_raw(tbl: &IrrepTable, p: usize, a: usize, b: usize) -> Result<f64> {
    let (ip, ia, ib) = (tbl.entries[p], tbl.entries[a], tbl.entries[b]);
    for e in [ip, ia, ib] {
        e.character(&tbl.group.identity())?;
    }
    let quad = Quadrature::for_group(tbl.group);
    let f = |g: &GroupValue| {
        ia.character(g).unwrap_or_default()
            * ib.character(g).unwrap_or_default()
            * ip.character(g).unwrap_or_default().conj()
    };
    Ok(haar_integrate_class(tbl.group, &quad, &f)?.re)
}

pub fn fusion_multiplicity(tbl: &IrrepTable, p: usize, a: usize, b: usize) -> Result<u32> {
    // Exact rules where the quadrature would only confirm them.
    match (tbl.entries[p].label, tbl.entries[a].label, tbl.entries[b].label) {
        (IrrepLabel::Zn { k, n }, IrrepLabel::Zn { k: ka, .. }, IrrepLabel::Zn { k: kb, .. }) => {
            return Ok(u32::from((ka + kb) % n == k));
        }
        (IrrepLabel::U1(m), IrrepLabel::U1(x), IrrepLabel::U1(y)) => {
            return Ok(u32::from(x + y == m));
        }
        _ => {}
    }
    let raw = fusion_raw(tbl, p, a, b)?;
    let rounded = raw.round();
    if (raw - rounded).abs() > 1e-6 {
        return Err(Error::Cutoff(format!(
            "fusion integral {raw} is not close to an integer; increase quadrature nodes"
        )));
    }
    Ok(rounded.max(0.0) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_group_specs() {
        assert_eq!("z2".parse::<GroupId>().unwrap(), GroupId::CyclicZn(2));
        assert_eq!("zN:5".parse::<GroupId>().unwrap(), GroupId::CyclicZn(5));
        assert_eq!("u1".parse::<GroupId>().unwrap(), GroupId::CircleU1(32));
        assert_eq!("su2:4".parse::<GroupId>().unwrap(), GroupId::Su2(4));
        assert_eq!(
            "suq2:1.001,200".parse::<GroupId>().unwrap(),
            GroupId::SUq2 { q: 1.001, cutoff: 200 }
        );
        assert!("u1:0".parse::<GroupId>().is_err());
        assert!("suq2:1,10".parse::<GroupId>().is_err());
        assert!("so3".parse::<GroupId>().is_err());
        for s in ["z7", "u1:12", "su2:6", "zdual:9", "line"] {
            let g: GroupId = s.parse().unwrap();
            assert_eq!(g.to_string(), s);
        }
    }

    #[test]
    fn z2_table_uses_laplacian_casimir() {
        let t = irreps(GroupId::CyclicZn(2), Conventions::default()).unwrap();
        let labels: Vec<String> = t.entries.iter().map(|e| e.label.to_string()).collect();
        assert_eq!(labels, ["triv", "sgn"]);
        assert_eq!(t.entries[1].casimir, 4.0);
        // Oracle: discrete Laplacian on the sign character, neighbours m ± 1 mod 2.
        let chi = |m: i64| if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let lap = (chi(0) - chi(1)) + (chi(0) - chi(-1));
        assert_eq!(lap / chi(0), 4.0);
        let q = irreps(GroupId::CyclicZn(2), Conventions::quarter_zn()).unwrap();
        assert_eq!(q.entries[1].casimir, 1.0);
    }

    #[test]
    fn u1_table() {
        let t = irreps(GroupId::CircleU1(3), Conventions::default()).unwrap();
        assert_eq!(t.entries.len(), 7);
        for e in &t.entries {
            let IrrepLabel::U1(n) = e.label else { panic!() };
            assert_eq!(e.casimir, (n * n) as f64);
            let z = e.character(&GroupValue::Angle(0.3)).unwrap();
            assert!((z - C64::from_polar(1.0, 0.3 * n as f64)).norm() < 1e-15);
        }
    }

    #[test]
    fn su2_casimir_matches_radial_laplacian() {
        // Oracle: χ_j(θ) solves f'' + 2 cot θ f' = -4 j(j+1) f on S³.
        let t = irreps(GroupId::Su2(2), Conventions::default()).unwrap();
        let h = 1e-4;
        for e in &t.entries {
            let IrrepLabel::Su2 { two_j } = e.label else { panic!() };
            let f = |th: f64| chebyshev_u(two_j, th.cos());
            let th: f64 = 0.7;
            let d1 = (f(th + h) - f(th - h)) / (2.0 * h);
            let d2 = (f(th + h) - 2.0 * f(th) + f(th - h)) / (h * h);
            let ev = -(d2 + 2.0 * d1 / th.tan()) / f(th) / 4.0;
            assert!((ev - e.casimir).abs() < 1e-5, "{} vs {}", ev, e.casimir);
            assert_eq!(e.dim, two_j + 1);
        }
    }

    #[test]
    fn orthogonality_all_backends() {
        for g in [GroupId::CyclicZn(5), GroupId::CircleU1(6), GroupId::Su2(6)] {
            let t = irreps(g, Conventions::default()).unwrap();
            let tol = if g.is_finite() { 1e-12 } else { 1e-10 };
            for a in 0..t.entries.len() {
                for b in 0..t.entries.len() {
                    let v = character_inner(&t, a, b).unwrap();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((v - want).norm() < tol, "{g} {a} {b} {v}");
                }
            }
        }
    }

    #[test]
    fn fusion_examples() {
        let t = irreps(GroupId::Su2(4), Conventions::default()).unwrap();
        let half = t.index_of(IrrepLabel::Su2 { two_j: 1 }).unwrap();
        let one = t.index_of(IrrepLabel::Su2 { two_j: 2 }).unwrap();
        let zero = t.index_of(IrrepLabel::Su2 { two_j: 0 }).unwrap();
        assert_eq!(fusion_multiplicity(&t, one, half, half).unwrap(), 1);
        assert_eq!(fusion_multiplicity(&t, zero, half, half).unwrap(), 1);
        assert_eq!(fusion_multiplicity(&t, half, half, half).unwrap(), 0);
        let raw = fusion_raw(&t, one, half, half).unwrap();
        assert!((raw - 1.0).abs() < 1e-8);

        let z2 = irreps(GroupId::CyclicZn(2), Conventions::default()).unwrap();
        assert_eq!(fusion_multiplicity(&z2, 1, 1, 0).unwrap(), 1);
        let u1 = irreps(GroupId::CircleU1(4), Conventions::default()).unwrap();
        let i = |n| u1.index_of(IrrepLabel::U1(n)).unwrap();
        assert_eq!(fusion_multiplicity(&u1, i(3), i(1), i(2)).unwrap(), 1);
        assert_eq!(fusion_multiplicity(&u1, i(2), i(1), i(2)).unwrap(), 0);
    }

    #[test]
    fn haar_examples() {
        let one = |_: &GroupValue| C64::new(1.0, 0.0);
        for g in [GroupId::CyclicZn(3), GroupId::CircleU1(8), GroupId::Su2(4)] {
            assert!((haar_integrate(g, &one).unwrap() - 1.0).norm() < 1e-12);
        }
        let chi = |g: &GroupValue| match g {
            GroupValue::Angle(p) => C64::from_polar(1.0, 3.0 * p),
            _ => unreachable!(),
        };
        assert!(haar_integrate(GroupId::CircleU1(8), &chi).unwrap().norm() < 1e-12);
        assert!(haar_integrate(GroupId::LineR, &one).is_err());
        // SU(2): ∫ |w|² = 1/4 for the scalar part of a Haar quaternion.
        let w2 = |g: &GroupValue| match g {
            GroupValue::Quat(q) => C64::new(q[0] * q[0], 0.0),
            _ => unreachable!(),
        };
        assert!((haar_integrate(GroupId::Su2(4), &w2).unwrap().re - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn quadrature_doubling_is_stable() {
        let g = GroupId::Su2(6);
        let f = |x: &GroupValue| match x {
            GroupValue::Quat(q) => C64::new((q[0] + 0.3 * q[2]).exp(), 0.0),
            _ => unreachable!(),
        };
        let q = Quadrature::for_group(g);
        let a = haar_integrate_with(g, &q, &f).unwrap();
        let b = haar_integrate_with(g, &q.doubled(), &f).unwrap();
        assert!((a - b).norm() < 1e-10);
    }
}

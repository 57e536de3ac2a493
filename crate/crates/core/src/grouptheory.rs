//! Exact representation theory for the double group C̄3v.
//!
//! The group has order 12 in six conjugacy classes (E, Ē, 2C3, 2C̄3, 3σv,
//! 3σ̄v) and six irreps: the single-group A1, A2, E plus the double-valued
//! Γ4 (two-dimensional) and the time-reversal pair Γ5, Γ6. Every character
//! lies in {0, ±1, ±2, ±i}, so all arithmetic here is over Gaussian
//! integers and decompositions carry no tolerance parameter — results are
//! exact or an error.
//!
//! Selection rules follow the standard criterion: a matrix element
//! ⟨ψ_i|H'|φ_j⟩ survives symmetry only if the product Γi* ⊗ Γop ⊗ Γj
//! contains the totally symmetric irrep A1.

use std::fmt;
use std::ops::{Add, Mul, Neg};

use serde::Serialize;

use crate::{Error, Result};

/// Order of the double group C̄3v.
pub const GROUP_ORDER: i64 = 12;

/// Number of conjugacy classes (= number of irreps).
pub const N_CLASSES: usize = 6;

// ---------------------------------------------------------------------------
// Gaussian integers
// ---------------------------------------------------------------------------

/// Exact complex number with integer components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Gaussian {
    pub re: i64,
    pub im: i64,
}

impl Gaussian {
    pub const ZERO: Gaussian = Gaussian { re: 0, im: 0 };
    pub const ONE: Gaussian = Gaussian { re: 1, im: 0 };
    pub const I: Gaussian = Gaussian { re: 0, im: 1 };

    pub const fn new(re: i64, im: i64) -> Self {
        Gaussian { re, im }
    }

    pub const fn conj(self) -> Self {
        Gaussian {
            re: self.re,
            im: -self.im,
        }
    }

    pub fn is_zero(self) -> bool {
        self.re == 0 && self.im == 0
    }

    /// Exact division by a real integer, or `None` if it does not divide
    /// both components.
    fn div_exact(self, d: i64) -> Option<Self> {
        if d == 0 || self.re % d != 0 || self.im % d != 0 {
            None
        } else {
            Some(Gaussian::new(self.re / d, self.im / d))
        }
    }
}

impl Add for Gaussian {
    type Output = Gaussian;
    fn add(self, rhs: Gaussian) -> Gaussian {
        Gaussian::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl Neg for Gaussian {
    type Output = Gaussian;
    fn neg(self) -> Gaussian {
        Gaussian::new(-self.re, -self.im)
    }
}

impl Mul for Gaussian {
    type Output = Gaussian;
    fn mul(self, rhs: Gaussian) -> Gaussian {
        Gaussian::new(
            self.re * rhs.re - self.im * rhs.im,
            self.re * rhs.im + self.im * rhs.re,
        )
    }
}

impl fmt::Display for Gaussian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.re, self.im) {
            (re, 0) => write!(f, "{re}"),
            (0, 1) => write!(f, "i"),
            (0, -1) => write!(f, "-i"),
            (0, im) => write!(f, "{im}i"),
            (re, 1) => write!(f, "{re}+i"),
            (re, -1) => write!(f, "{re}-i"),
            (re, im) if im > 0 => write!(f, "{re}+{im}i"),
            (re, im) => write!(f, "{re}{im}i"),
        }
    }
}

// ---------------------------------------------------------------------------
// Classes and irreps
// ---------------------------------------------------------------------------

/// Conjugacy classes of C̄3v in table order. A bar denotes the same
/// operation followed by the 2π rotation that flips spin-1/2 phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum GroupClass {
    Identity,
    IdentityBar,
    C3,
    C3Bar,
    SigmaV,
    SigmaVBar,
}

impl GroupClass {
    pub const ALL: [GroupClass; N_CLASSES] = [
        GroupClass::Identity,
        GroupClass::IdentityBar,
        GroupClass::C3,
        GroupClass::C3Bar,
        GroupClass::SigmaV,
        GroupClass::SigmaVBar,
    ];

    /// Number of group elements in the class.
    pub const fn size(self) -> i64 {
        match self {
            GroupClass::Identity | GroupClass::IdentityBar => 1,
            GroupClass::C3 | GroupClass::C3Bar => 2,
            GroupClass::SigmaV | GroupClass::SigmaVBar => 3,
        }
    }

    pub const fn label(self) -> &'static str {
        match self {
            GroupClass::Identity => "E",
            GroupClass::IdentityBar => "Ebar",
            GroupClass::C3 => "2C3",
            GroupClass::C3Bar => "2C3bar",
            GroupClass::SigmaV => "3sv",
            GroupClass::SigmaVBar => "3svbar",
        }
    }
}

/// The six irreducible representations of C̄3v.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Irrep {
    A1,
    A2,
    E,
    G4,
    G5,
    G6,
}

impl Irrep {
    pub const ALL: [Irrep; 6] = [
        Irrep::A1,
        Irrep::A2,
        Irrep::E,
        Irrep::G4,
        Irrep::G5,
        Irrep::G6,
    ];

    /// The double-valued (half-integer spin) irreps.
    pub const DOUBLE: [Irrep; 3] = [Irrep::G4, Irrep::G5, Irrep::G6];

    /// Exact class characters, in [`GroupClass::ALL`] order.
    pub fn characters(self) -> [Gaussian; N_CLASSES] {
        const P1: Gaussian = Gaussian::new(1, 0);
        const M1: Gaussian = Gaussian::new(-1, 0);
        const P2: Gaussian = Gaussian::new(2, 0);
        const M2: Gaussian = Gaussian::new(-2, 0);
        const Z: Gaussian = Gaussian::ZERO;
        const PI: Gaussian = Gaussian::new(0, 1);
        const MI: Gaussian = Gaussian::new(0, -1);
        match self {
            Irrep::A1 => [P1, P1, P1, P1, P1, P1],
            Irrep::A2 => [P1, P1, P1, P1, M1, M1],
            Irrep::E => [P2, P2, M1, M1, Z, Z],
            Irrep::G4 => [P2, M2, P1, M1, Z, Z],
            Irrep::G5 => [P1, M1, M1, P1, PI, MI],
            Irrep::G6 => [P1, M1, M1, P1, MI, PI],
        }
    }

    pub fn dimension(self) -> i64 {
        self.characters()[0].re
    }

    pub const fn label(self) -> &'static str {
        match self {
            Irrep::A1 => "A1",
            Irrep::A2 => "A2",
            Irrep::E => "E",
            Irrep::G4 => "G4",
            Irrep::G5 => "G5",
            Irrep::G6 => "G6",
        }
    }

    /// Parse an irrep label; accepts `A1`, `a1`, `G5`, `Gamma5`, `Γ5`, ...
    pub fn parse(label: &str) -> Result<Irrep> {
        let norm = label
            .trim()
            .to_ascii_lowercase()
            .replace("gamma", "g")
            .replace('Γ', "g");
        match norm.as_str() {
            "a1" => Ok(Irrep::A1),
            "a2" => Ok(Irrep::A2),
            "e" => Ok(Irrep::E),
            "g4" => Ok(Irrep::G4),
            "g5" => Ok(Irrep::G5),
            "g6" => Ok(Irrep::G6),
            _ => Err(Error::Usage(format!("unknown irrep label '{label}'"))),
        }
    }

    /// The conjugate representation. All single-group irreps here are real;
    /// conjugation swaps the time-reversal partners Γ5 and Γ6.
    pub fn conjugate(self) -> Irrep {
        match self {
            Irrep::G5 => Irrep::G6,
            Irrep::G6 => Irrep::G5,
            other => other,
        }
    }

    pub fn rep(self) -> RepCharacters {
        RepCharacters(self.characters())
    }
}

impl fmt::Display for Irrep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

// ---------------------------------------------------------------------------
// Reducible representations
// ---------------------------------------------------------------------------

/// Class characters of a (possibly reducible) representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RepCharacters(pub [Gaussian; N_CLASSES]);

impl RepCharacters {
    /// Class-wise product of two character vectors (character of the
    /// tensor product representation).
    pub fn product(&self, other: &RepCharacters) -> RepCharacters {
        let mut out = [Gaussian::ZERO; N_CLASSES];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.0[k] * other.0[k];
        }
        RepCharacters(out)
    }

    /// Character-wise complex conjugate (the conjugate representation).
    pub fn conjugate(&self) -> RepCharacters {
        let mut out = self.0;
        for c in &mut out {
            *c = c.conj();
        }
        RepCharacters(out)
    }

    /// Dimension, i.e. the character of the identity.
    pub fn dimension(&self) -> i64 {
        self.0[0].re
    }

    /// Exact inner product ⟨self, irrep⟩ = (1/|G|) Σ_k size_k χ(k) χ_i(k)*,
    /// or an error if it is not a nonnegative rational integer.
    fn multiplicity_of(&self, irrep: Irrep) -> Result<i64> {
        let chi_i = irrep.characters();
        let mut acc = Gaussian::ZERO;
        for (k, class) in GroupClass::ALL.iter().enumerate() {
            let w = Gaussian::new(class.size(), 0);
            acc = acc + w * self.0[k] * chi_i[k].conj();
        }
        let m = acc.div_exact(GROUP_ORDER).ok_or_else(|| {
            Error::NotARepresentation(format!(
                "inner product with {irrep} is {acc}/{GROUP_ORDER}, not an integer"
            ))
        })?;
        if !m.is_zero() && m.im != 0 {
            return Err(Error::NotARepresentation(format!(
                "inner product with {irrep} is complex: {m}"
            )));
        }
        if m.re < 0 {
            return Err(Error::NotARepresentation(format!(
                "negative multiplicity {m} for {irrep}"
            )));
        }
        Ok(m.re)
    }

    /// Decompose into irreps by character orthogonality. Fails if any
    /// multiplicity is non-integral or negative, or if the dimensions do
    /// not add up (both signal characters that are not a representation).
    pub fn decompose(&self) -> Result<Decomposition> {
        let mut parts = Vec::new();
        let mut dim = 0;
        for irrep in Irrep::ALL {
            let m = self.multiplicity_of(irrep)?;
            if m > 0 {
                dim += m * irrep.dimension();
                parts.push((irrep, m));
            }
        }
        if dim != self.dimension() {
            return Err(Error::NotARepresentation(format!(
                "decomposition dimension {dim} != character dimension {}",
                self.dimension()
            )));
        }
        Ok(Decomposition { parts })
    }
}

impl fmt::Display for RepCharacters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// A multiset of irreps with multiplicities, sorted in table order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decomposition {
    pub parts: Vec<(Irrep, i64)>,
}

impl Decomposition {
    pub fn contains(&self, irrep: Irrep) -> bool {
        self.parts.iter().any(|(i, _)| *i == irrep)
    }

    pub fn multiplicity(&self, irrep: Irrep) -> i64 {
        self.parts
            .iter()
            .find(|(i, _)| *i == irrep)
            .map_or(0, |(_, m)| *m)
    }

    pub fn dimension(&self) -> i64 {
        self.parts.iter().map(|(i, m)| m * i.dimension()).sum()
    }
}

impl fmt::Display for Decomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.parts.is_empty() {
            return write!(f, "0");
        }
        for (k, (irrep, m)) in self.parts.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            if *m == 1 {
                write!(f, "{irrep}")?;
            } else {
                write!(f, "{m}{irrep}")?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Character table
// ---------------------------------------------------------------------------

/// The full character table of C̄3v.
#[derive(Debug, Clone, Serialize)]
pub struct DoubleGroup {
    pub classes: [GroupClass; N_CLASSES],
    pub irreps: Vec<(Irrep, [Gaussian; N_CLASSES])>,
}

/// Build the character table. Verified exactly against row and column
/// orthogonality by the crate's tests.
pub fn character_table() -> DoubleGroup {
    DoubleGroup {
        classes: GroupClass::ALL,
        irreps: Irrep::ALL.iter().map(|&ir| (ir, ir.characters())).collect(),
    }
}

impl DoubleGroup {
    /// Render as an aligned text table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:>4} |", ""));
        for class in &self.classes {
            out.push_str(&format!(" {:>7}", class.label()));
        }
        out.push('\n');
        out.push_str(&"-".repeat(5 + 8 * N_CLASSES));
        out.push('\n');
        for (irrep, chars) in &self.irreps {
            out.push_str(&format!("{:>4} |", irrep.label()));
            for c in chars {
                out.push_str(&format!(" {:>7}", c.to_string()));
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Products and selection rules
// ---------------------------------------------------------------------------

/// Tensor product of two irreps, with optional conjugation of the first
/// factor (the bra side of a matrix element).
pub fn product(a: Irrep, conjugate_a: bool, b: Irrep) -> RepCharacters {
    let left = if conjugate_a {
        a.rep().conjugate()
    } else {
        a.rep()
    };
    left.product(&b.rep())
}

/// Decompose an arbitrary character vector; convenience wrapper.
pub fn decompose(rep: &RepCharacters) -> Result<Decomposition> {
    rep.decompose()
}

/// Static electric/magnetic field components and the irreps they
/// transform as: E∥ as z (A1), B∥ as R_z (A2), E⊥ as (x, y) and B⊥ as
/// (R_x, R_y) (both E).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FieldOperator {
    EParallel,
    EPerp,
    BParallel,
    BPerp,
}

impl FieldOperator {
    pub const ALL: [FieldOperator; 4] = [
        FieldOperator::EParallel,
        FieldOperator::EPerp,
        FieldOperator::BParallel,
        FieldOperator::BPerp,
    ];

    pub fn irrep(self) -> Irrep {
        match self {
            FieldOperator::EParallel => Irrep::A1,
            FieldOperator::BParallel => Irrep::A2,
            FieldOperator::EPerp | FieldOperator::BPerp => Irrep::E,
        }
    }

    pub const fn label(self) -> &'static str {
        match self {
            FieldOperator::EParallel => "E_par",
            FieldOperator::EPerp => "E_perp",
            FieldOperator::BParallel => "B_par",
            FieldOperator::BPerp => "B_perp",
        }
    }

    /// True for electric-field components; within a pure Kramers doublet
    /// these preserve time-reversal symmetry and cannot connect the pair.
    pub fn is_electric(self) -> bool {
        matches!(self, FieldOperator::EParallel | FieldOperator::EPerp)
    }

    pub fn parse(label: &str) -> Result<FieldOperator> {
        let norm = label.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "e_par" | "epar" | "e_parallel" => Ok(FieldOperator::EParallel),
            "e_perp" | "eperp" => Ok(FieldOperator::EPerp),
            "b_par" | "bpar" | "b_parallel" => Ok(FieldOperator::BParallel),
            "b_perp" | "bperp" => Ok(FieldOperator::BPerp),
            _ => Err(Error::Usage(format!("unknown field operator '{label}'"))),
        }
    }
}

impl fmt::Display for FieldOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Outcome of a selection-rule query, with the decomposition that decided
/// it.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionRule {
    pub bra: Irrep,
    pub ket: Irrep,
    pub operator: FieldOperator,
    pub allowed: bool,
    /// Decomposition of bra* ⊗ op ⊗ ket.
    pub decomposition: Decomposition,
}

/// A coupling ⟨bra|H'|ket⟩ is allowed iff bra* ⊗ Γop ⊗ ket contains A1.
pub fn selection_rule(bra: Irrep, ket: Irrep, op: FieldOperator) -> SelectionRule {
    let rep = product(bra, true, op.irrep()).product(&ket.rep());
    let decomposition = rep
        .decompose()
        .expect("product of irreps is always a representation");
    SelectionRule {
        bra,
        ket,
        operator: op,
        allowed: decomposition.contains(Irrep::A1),
        decomposition,
    }
}

// ---------------------------------------------------------------------------
// Kramers-doublet field profiles
// ---------------------------------------------------------------------------

/// The physical Kramers doublets of the defect: either the time-reversal
/// pair {Γ5, Γ6} or a doublet transforming as the two-dimensional Γ4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KramersDoublet {
    G56,
    G4,
}

impl KramersDoublet {
    /// The irreps spanned by the doublet's two states.
    pub fn members(self) -> Vec<Irrep> {
        match self {
            KramersDoublet::G56 => vec![Irrep::G5, Irrep::G6],
            KramersDoublet::G4 => vec![Irrep::G4],
        }
    }

    pub const fn label(self) -> &'static str {
        match self {
            KramersDoublet::G56 => "G5,G6",
            KramersDoublet::G4 => "G4",
        }
    }
}

/// Whether a field component can couple within a Kramers doublet, and why
/// not when it cannot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingStatus {
    Allowed,
    /// bra* ⊗ op ⊗ ket never contains A1 for any state pair in the doublet.
    ForbiddenBySymmetry,
    /// Character counting would allow it, but the operator preserves
    /// time-reversal symmetry and the doublet is a pure Kramers pair.
    ForbiddenByKramers,
}

impl CouplingStatus {
    pub fn is_allowed(self) -> bool {
        self == CouplingStatus::Allowed
    }
}

/// Field-coupling anisotropy summary for one Kramers doublet.
#[derive(Debug, Clone, Serialize)]
pub struct KdFieldProfile {
    pub doublet: KramersDoublet,
    pub couplings: Vec<(FieldOperator, CouplingStatus)>,
    /// The raw per-pair selection rules the summary was computed from.
    pub rules: Vec<SelectionRule>,
}

impl KdFieldProfile {
    pub fn status(&self, op: FieldOperator) -> CouplingStatus {
        self.couplings
            .iter()
            .find(|(o, _)| *o == op)
            .map(|(_, s)| *s)
            .expect("profile covers every field operator")
    }
}

/// Compute the within-doublet coupling profile for each field component.
///
/// Magnetic couplings come straight from aggregated [`selection_rule`]
/// calls over all (bra, ket) state pairs of the doublet. Electric
/// couplings that survive character counting are downgraded to
/// [`CouplingStatus::ForbiddenByKramers`] for the {Γ5, Γ6} pair: a pure
/// Kramers doublet cannot be connected by time-reversal-preserving
/// operators, which does not follow from A1 counting.
pub fn kd_field_profile(kd: KramersDoublet) -> KdFieldProfile {
    let members = kd.members();
    let mut rules = Vec::new();
    let mut couplings = Vec::new();
    for op in FieldOperator::ALL {
        let mut allowed = false;
        for &bra in &members {
            for &ket in &members {
                let rule = selection_rule(bra, ket, op);
                allowed |= rule.allowed;
                rules.push(rule);
            }
        }
        // Kramers' theorem overrides character counting for electric
        // fields inside the pure time-reversal pair, whether or not the
        // characters would already forbid the coupling.
        let status = if op.is_electric() && kd == KramersDoublet::G56 {
            CouplingStatus::ForbiddenByKramers
        } else if !allowed {
            CouplingStatus::ForbiddenBySymmetry
        } else {
            CouplingStatus::Allowed
        };
        couplings.push((op, status));
    }
    KdFieldProfile {
        doublet: kd,
        couplings,
        rules,
    }
}

//! Domain types shared by every stage of the construction: energies and their
//! quasimomenta, boundary angles, Prüfer states, solution traces, and the
//! piecewise potential itself.
//!
//! A [`Potential`] never stores the array `V(n)`. Each non-zero piece keeps
//! the coupling, shift and anchor angles of its generating recursion and
//! replays that recursion on demand, so evaluation is bit-for-bit
//! deterministic and files stay small at horizons of 10^7 sites.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::prufer;

/// Default exclusion zone around the band edges `E = ±2`.
pub const DEFAULT_EDGE_DELTA: f64 = 1e-3;

/// Energies closer than this are treated as the same eigenvalue.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

/// Constant offset inside the generating functions; it keeps `V` positive and
/// makes the pair phase `θ + θ̃` drift.
pub const DRIFT_OFFSET: f64 = 100.0;

/// An energy in the open band together with its quasimomentum.
///
/// `E = 2 cos(πk)` with `k ∈ (0, 1)` and `s = sin(πk) > 0`. Mirror energies
/// `E` and `-E` are computed from the same arccosine so that `k(-E) = 1 - k(E)`
/// and `s(-E) = s(E)` hold exactly in floating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyPoint {
    energy: f64,
    k: f64,
    s: f64,
}

impl EnergyPoint {
    pub fn new(energy: f64) -> Result<Self> {
        Self::with_edge_delta(energy, DEFAULT_EDGE_DELTA)
    }

    pub fn with_edge_delta(energy: f64, delta: f64) -> Result<Self> {
        if !energy.is_finite() || energy.abs() >= 2.0 - delta {
            return Err(Error::EdgeEnergy { energy, delta });
        }
        let k_abs = (energy.abs() / 2.0).acos() / PI;
        let s = (PI * k_abs).sin();
        let k = if energy < 0.0 { 1.0 - k_abs } else { k_abs };
        Ok(EnergyPoint { energy, k, s })
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Quasimomentum `k ∈ (0, 1)`.
    pub fn k(&self) -> f64 {
        self.k
    }

    /// `sin(πk)`.
    pub fn s(&self) -> f64 {
        self.s
    }

    /// `cos(πk) = E / 2`.
    pub fn c(&self) -> f64 {
        self.energy / 2.0
    }

    /// The resonant partner `-E`.
    pub fn mirror(&self) -> EnergyPoint {
        EnergyPoint { energy: -self.energy, k: 1.0 - self.k, s: self.s }
    }
}

/// `make_energy_point` with the default edge exclusion.
pub fn make_energy_point(energy: f64) -> Result<EnergyPoint> {
    EnergyPoint::new(energy)
}

/// Boundary condition `u(1)/u(0) = tan θ` with `θ ∈ [0, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryAngle(f64);

impl BoundaryAngle {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..PI).contains(&theta) {
            return Err(Error::InvalidAngle(theta));
        }
        Ok(BoundaryAngle(theta))
    }

    pub fn radians(&self) -> f64 {
        self.0
    }
}

/// Unwrapped Prüfer angle stored as an integer winding plus a fraction in
/// `[0, 1)`.
///
/// The recursions only depend on the angle modulo one; keeping the fraction
/// separate preserves full precision after millions of windings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    turns: i64,
    frac: f64,
}

impl Phase {
    pub fn new(value: f64) -> Self {
        let turns = value.floor();
        let mut phase = Phase { turns: turns as i64, frac: value - turns };
        phase.normalize();
        phase
    }

    pub fn from_parts(turns: i64, frac: f64) -> Self {
        let mut phase = Phase { turns, frac };
        phase.normalize();
        phase
    }

    pub fn turns(&self) -> i64 {
        self.turns
    }

    /// Fractional part in `[0, 1)`.
    pub fn frac(&self) -> f64 {
        self.frac
    }

    /// The unwrapped angle as a single real.
    pub fn value(&self) -> f64 {
        self.turns as f64 + self.frac
    }

    /// Adds an increment of magnitude below 2.
    pub(crate) fn advance(&mut self, increment: f64) {
        self.frac += increment;
        self.normalize();
    }

    fn normalize(&mut self) {
        while self.frac >= 1.0 {
            self.frac -= 1.0;
            self.turns += 1;
        }
        while self.frac < 0.0 {
            self.frac += 1.0;
            self.turns -= 1;
        }
    }

    /// Difference `self - other` as a real.
    pub fn minus(&self, other: &Phase) -> f64 {
        (self.turns - other.turns) as f64 + (self.frac - other.frac)
    }
}

/// Prüfer variables of one solution at one site: `ln R(n)` and the unwrapped
/// angle `θ(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruferState {
    pub log_r: f64,
    pub phase: Phase,
}

impl PruferState {
    pub fn new(log_r: f64, phi: f64) -> Self {
        PruferState { log_r, phase: Phase::new(phi) }
    }

    pub fn phi(&self) -> f64 {
        self.phase.value()
    }
}

/// One sample `(n, ln R(n), θ(n))` of a solution trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub n: u64,
    pub log_r: f64,
    pub phase: Phase,
}

impl TraceSample {
    pub fn state(&self) -> PruferState {
        PruferState { log_r: self.log_r, phase: self.phase }
    }
}

/// Recorded evolution of one eigenvalue's Prüfer variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTrace {
    pub id: usize,
    pub energy: EnergyPoint,
    pub samples: Vec<TraceSample>,
}

impl SolutionTrace {
    pub fn new(id: usize, energy: EnergyPoint) -> Self {
        SolutionTrace { id, energy, samples: Vec::new() }
    }

    /// Appends a sample; sites must increase strictly.
    pub fn push(&mut self, n: u64, state: &PruferState) {
        debug_assert!(self.samples.last().is_none_or(|s| s.n < n));
        self.samples.push(TraceSample { n, log_r: state.log_r, phase: state.phase });
    }

    pub fn first(&self) -> Option<&TraceSample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&TraceSample> {
        self.samples.last()
    }

    pub fn max_log_r(&self) -> f64 {
        self.samples.iter().map(|s| s.log_r).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Solution values `(n, u(n))` reconstructed from every sample.
    pub fn u_samples(&self) -> Vec<(u64, f64)> {
        self.samples
            .iter()
            .map(|s| (s.n, prufer::prufer_to_solution(&s.state(), &self.energy).u_cur))
            .collect()
    }

    /// Samples with `lo <= n < hi`.
    pub fn window(&self, lo: u64, hi: u64) -> &[TraceSample] {
        let a = self.samples.partition_point(|s| s.n < lo);
        let b = self.samples.partition_point(|s| s.n < hi);
        &self.samples[a..b]
    }
}

/// Which generating recursion a piece replays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PieceKind {
    Zero,
    Single(EnergyPoint),
    /// Represented by the member with `E > 0`; the partner is its mirror.
    ResonantPair(EnergyPoint),
}

impl PieceKind {
    pub fn name(&self) -> &'static str {
        match self {
            PieceKind::Zero => "zero",
            PieceKind::Single(_) => "single",
            PieceKind::ResonantPair(_) => "pair",
        }
    }

    pub fn energy(&self) -> Option<EnergyPoint> {
        match self {
            PieceKind::Zero => None,
            PieceKind::Single(ep) | PieceKind::ResonantPair(ep) => Some(*ep),
        }
    }

    fn angle_count(&self) -> usize {
        match self {
            PieceKind::Zero => 0,
            PieceKind::Single(_) => 1,
            PieceKind::ResonantPair(_) => 2,
        }
    }
}

/// Angle of a target solution (reduced to `[0, 1)`) at the first site of a
/// piece.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub id: usize,
    pub angle: f64,
}

/// One interval `[start, end)` of the potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPiece {
    pub start: u64,
    pub end: u64,
    pub kind: PieceKind,
    pub k1: f64,
    pub b: i64,
    /// Target anchor first, resonant partner second.
    pub anchors: Vec<Anchor>,
}

impl PotentialPiece {
    pub fn zero(start: u64, end: u64) -> Self {
        PotentialPiece { start, end, kind: PieceKind::Zero, k1: 0.0, b: 0, anchors: Vec::new() }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, n: u64) -> bool {
        (self.start..self.end).contains(&n)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::MalformedPotential(format!(
                "piece [{}, {}) is empty",
                self.start, self.end
            )));
        }
        if self.anchors.len() != self.kind.angle_count() {
            return Err(Error::MalformedPotential(format!(
                "{} piece at {} has {} anchors",
                self.kind.name(),
                self.start,
                self.anchors.len()
            )));
        }
        if self.kind != PieceKind::Zero {
            if !(self.k1 > 0.0 && self.k1.is_finite()) {
                return Err(Error::MalformedPotential(format!("coupling {} at {}", self.k1, self.start)));
            }
            if (self.start as i64) - self.b <= 0 {
                return Err(Error::MalformedPotential(format!(
                    "shift {} not below piece start {}",
                    self.b, self.start
                )));
            }
            if self.anchors.iter().any(|a| !(0.0..1.0).contains(&a.angle)) {
                return Err(Error::MalformedPotential(format!("anchor angle outside [0,1) at {}", self.start)));
            }
        }
        Ok(())
    }

    /// Replays the generating recursion over the whole piece.
    pub fn replay(&self) -> PieceReplay {
        PieceReplay::new(self)
    }

    /// `V(n)` by replay from the piece start.
    pub fn evaluate(&self, n: u64) -> f64 {
        debug_assert!(self.contains(n));
        match self.kind {
            PieceKind::Zero => 0.0,
            _ => self.replay().nth((n - self.start) as usize).expect("site inside piece").1,
        }
    }
}

/// Generating function evaluated from the current target angles.
///
/// Single: `K1 (sin 2πθ + 100)/(n - b)`; pair: `K1 (sin 2πθ + sin 2πθ̃ + 100)/(n - b)`.
#[inline]
pub(crate) fn generating_value(k1: f64, b: i64, n: u64, target: &Phase, partner: Option<&Phase>) -> f64 {
    let mut shape = (2.0 * PI * target.frac()).sin();
    if let Some(p) = partner {
        shape += (2.0 * PI * p.frac()).sin();
    }
    k1 * (shape + DRIFT_OFFSET) / ((n as i64 - b) as f64)
}

/// Iterator over `(n, V(n))` for one piece, advancing the target angles with
/// the same recursion that generated it.
pub struct PieceReplay {
    n: u64,
    end: u64,
    kind: PieceKind,
    k1: f64,
    b: i64,
    target: PruferState,
    partner: Option<PruferState>,
}

impl PieceReplay {
    fn new(piece: &PotentialPiece) -> Self {
        let state = |i: usize| PruferState { log_r: 0.0, phase: Phase::from_parts(0, piece.anchors[i].angle) };
        let (target, partner) = match piece.kind {
            PieceKind::Zero => (PruferState::new(0.0, 0.0), None),
            PieceKind::Single(_) => (state(0), None),
            PieceKind::ResonantPair(_) => (state(0), Some(state(1))),
        };
        PieceReplay { n: piece.start, end: piece.end, kind: piece.kind, k1: piece.k1, b: piece.b, target, partner }
    }
}

impl Iterator for PieceReplay {
    type Item = (u64, f64);

    fn next(&mut self) -> Option<(u64, f64)> {
        if self.n >= self.end {
            return None;
        }
        let n = self.n;
        self.n += 1;
        let v = match self.kind {
            PieceKind::Zero => 0.0,
            PieceKind::Single(ep) => {
                let v = generating_value(self.k1, self.b, n, &self.target.phase, None);
                prufer::advance_angle(&mut self.target.phase, v, &ep);
                v
            }
            PieceKind::ResonantPair(ep) => {
                let partner = self.partner.as_mut().expect("pair replay has a partner");
                let v = generating_value(self.k1, self.b, n, &self.target.phase, Some(&partner.phase));
                prufer::advance_angle(&mut self.target.phase, v, &ep);
                prufer::advance_angle(&mut partner.phase, v, &ep.mirror());
                v
            }
        };
        Some((n, v))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.n) as usize;
        (left, Some(left))
    }
}

/// Prescribed eigenvalue recorded in a potential's metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenvalueMeta {
    pub id: usize,
    pub energy: f64,
    pub theta: f64,
}

/// Reference value `V(n)` stored alongside the pieces for replay checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckValue {
    pub n: u64,
    pub v: f64,
}

/// Ordered, gap-free sequence of pieces covering `[0, horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pieces: Vec<PotentialPiece>,
    horizon: u64,
    /// Recorded `sup |V(n)| (1 + n)`.
    pub c_global: f64,
    pub eigenvalues: Vec<EigenvalueMeta>,
    pub checks: Vec<CheckValue>,
}

impl Potential {
    pub fn new(pieces: Vec<PotentialPiece>) -> Result<Self> {
        let horizon = pieces.last().map(|p| p.end).unwrap_or(0);
        let potential = Potential { pieces, horizon, c_global: 0.0, eigenvalues: Vec::new(), checks: Vec::new() };
        potential.validate()?;
        Ok(potential)
    }

    /// The all-zero potential on `[0, horizon)`.
    pub fn zero(horizon: u64) -> Result<Self> {
        Self::new(vec![PotentialPiece::zero(0, horizon)])
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.pieces.first().ok_or_else(|| Error::MalformedPotential("no pieces".into()))?;
        if first.start != 0 {
            return Err(Error::MalformedPotential(format!("first piece starts at {}", first.start)));
        }
        for piece in &self.pieces {
            piece.validate()?;
        }
        for pair in self.pieces.windows(2) {
            if pair[0].end != pair[1].start {
                return Err(Error::MalformedPotential(format!(
                    "gap or overlap between {} and {}",
                    pair[0].end, pair[1].start
                )));
            }
        }
        if self.pieces.last().map(|p| p.end) != Some(self.horizon) {
            return Err(Error::MalformedPotential("horizon does not match last piece".into()));
        }
        Ok(())
    }

    pub fn pieces(&self) -> &[PotentialPiece] {
        &self.pieces
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn piece_at(&self, n: u64) -> Result<&PotentialPiece> {
        if n >= self.horizon {
            return Err(Error::OutOfHorizon { site: n, horizon: self.horizon });
        }
        let i = self.pieces.partition_point(|p| p.end <= n);
        Ok(&self.pieces[i])
    }

    /// `V(n)`, replayed from the start of the containing piece.
    pub fn evaluate(&self, n: u64) -> Result<f64> {
        Ok(self.piece_at(n)?.evaluate(n))
    }

    /// Streams `(n, V(n))` over every site of `[0, horizon)`.
    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.pieces.iter().flat_map(|p| p.replay())
    }

    /// `V` on `[0, len)` as a dense vector.
    pub fn values(&self, len: u64) -> Result<Vec<f64>> {
        if len > self.horizon {
            return Err(Error::OutOfHorizon { site: len, horizon: self.horizon });
        }
        Ok(self.iter().take(len as usize).map(|(_, v)| v).collect())
    }

    /// `sup_n |V(n)| (1 + n)` computed by full replay, with the site attaining it.
    pub fn measured_c_global(&self) -> (f64, u64) {
        self.iter()
            .map(|(n, v)| (v.abs() * (1.0 + n as f64), n))
            .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
    }

    /// Records reference values at the given (sorted) sites.
    pub fn record_checks(&mut self, sites: &[u64]) {
        let mut wanted = sites.iter().copied().filter(|&n| n < self.horizon).peekable();
        let mut checks = Vec::new();
        for (n, v) in self.iter() {
            match wanted.peek() {
                None => break,
                Some(&w) if w == n => {
                    checks.push(CheckValue { n, v });
                    while wanted.peek() == Some(&n) {
                        wanted.next();
                    }
                }
                _ => {}
            }
        }
        self.checks = checks;
    }

    /// Sites whose stored reference value disagrees with the replay.
    pub fn replay_mismatches(&self) -> Vec<CheckValue> {
        let mut bad = Vec::new();
        let mut checks = self.checks.iter().peekable();
        for (n, v) in self.iter() {
            while let Some(c) = checks.peek() {
                if c.n < n {
                    bad.push(**c);
                    checks.next();
                } else {
                    break;
                }
            }
            match checks.peek() {
                None => break,
                Some(c) if c.n == n => {
                    if c.v.to_bits() != v.to_bits() {
                        bad.push(**c);
                    }
                    checks.next();
                }
                _ => {}
            }
        }
        bad.extend(checks.copied());
        bad
    }
}

/// A set of prescribed energies closed under `E ↦ -E` resonance.
#[derive(Debug, Clone, PartialEq)]
pub enum ResonanceClass {
    Single(EnergyPoint),
    /// `members[0]` has `E > 0`, `members[1]` is its mirror.
    Pair([EnergyPoint; 2]),
}

impl ResonanceClass {
    pub fn representative(&self) -> EnergyPoint {
        match self {
            ResonanceClass::Single(ep) => *ep,
            ResonanceClass::Pair(members) => members[0],
        }
    }

    pub fn members(&self) -> Vec<EnergyPoint> {
        match self {
            ResonanceClass::Single(ep) => vec![*ep],
            ResonanceClass::Pair(members) => members.to_vec(),
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(self, ResonanceClass::Pair(_))
    }
}

/// Partitions energies into resonance classes `{E, -E}` and singletons.
///
/// Classes are ordered by the position of their first member in the input;
/// the result does not depend on the order of the members themselves.
pub fn resonance_classes(energies: &[EnergyPoint]) -> Result<Vec<ResonanceClass>> {
    for (i, a) in energies.iter().enumerate() {
        for b in &energies[i + 1..] {
            if (a.energy() - b.energy()).abs() <= DUPLICATE_TOLERANCE {
                return Err(Error::DuplicateEnergy { a: a.energy(), b: b.energy() });
            }
        }
    }
    let mut used = vec![false; energies.len()];
    let mut classes = Vec::new();
    for i in 0..energies.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let e = energies[i];
        let partner = (i + 1..energies.len())
            .find(|&j| !used[j] && e.energy() != 0.0 && (e.energy() + energies[j].energy()).abs() <= DUPLICATE_TOLERANCE);
        match partner {
            Some(j) => {
                used[j] = true;
                let (pos, neg) = if e.energy() > 0.0 { (e, energies[j]) } else { (energies[j], e) };
                classes.push(ResonanceClass::Pair([pos, neg]));
            }
            None => classes.push(ResonanceClass::Single(e)),
        }
    }
    Ok(classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(e: f64) -> EnergyPoint {
        EnergyPoint::new(e).unwrap()
    }

    #[test]
    fn energy_point_examples() {
        let zero = ep(0.0);
        assert!((zero.k() - 0.5).abs() < 1e-15);
        assert!((zero.s() - 1.0).abs() < 1e-15);
        let one = ep(1.0);
        assert!((one.k() - 1.0 / 3.0).abs() < 1e-15);
        assert!((one.s() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        let r2 = ep(2f64.sqrt());
        assert!((r2.k() - 0.25).abs() < 1e-15);
        assert!((r2.s() - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn energy_point_invariants_and_mirror() {
        for i in -199..200 {
            let e = i as f64 * 0.00995;
            let p = ep(e);
            assert!(p.k() > 0.0 && p.k() < 1.0);
            assert!((2.0 * (PI * p.k()).cos() - e).abs() <= 1e-14 * e.abs().max(1.0));
            assert!((p.s() - (PI * p.k()).sin()).abs() < 1e-14);
            if e > 0.0 {
                let m = ep(-e);
                assert_eq!(m.k(), 1.0 - p.k());
                assert_eq!(m.s(), p.s());
                assert_eq!(p.mirror(), m);
            }
        }
    }

    #[test]
    fn edge_energies_rejected() {
        assert!(matches!(EnergyPoint::new(1.9995), Err(Error::EdgeEnergy { .. })));
        assert!(matches!(EnergyPoint::new(-2.0), Err(Error::EdgeEnergy { .. })));
        assert!(EnergyPoint::with_edge_delta(1.9995, 1e-4).is_ok());
    }

    #[test]
    fn boundary_angle_range() {
        assert!(BoundaryAngle::new(0.0).is_ok());
        assert!(BoundaryAngle::new(PI).is_err());
        assert!(BoundaryAngle::new(-0.1).is_err());
    }

    #[test]
    fn phase_keeps_fraction_reduced() {
        let mut p = Phase::new(-0.25);
        assert_eq!(p.turns(), -1);
        assert_eq!(p.frac(), 0.75);
        p.advance(0.5);
        assert_eq!(p.turns(), 0);
        assert_eq!(p.frac(), 0.25);
        assert_eq!(Phase::new(3.5).minus(&Phase::new(1.25)), 2.25);
    }

    fn energies(list: &[f64]) -> Vec<f64> {
        let eps: Vec<_> = list.iter().map(|&e| ep(e)).collect();
        let classes = resonance_classes(&eps).unwrap();
        let mut out: Vec<f64> = classes
            .iter()
            .map(|c| c.members().iter().map(|m| m.energy()).sum::<f64>() + 10.0 * c.members().len() as f64)
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    #[test]
    fn resonance_class_examples() {
        let eps: Vec<_> = [1.0, -1.0, 0.5].iter().map(|&e| ep(e)).collect();
        let classes = resonance_classes(&eps).unwrap();
        assert_eq!(classes.len(), 2);
        assert_eq!(classes[0], ResonanceClass::Pair([ep(1.0), ep(-1.0)]));
        assert_eq!(classes[1], ResonanceClass::Single(ep(0.5)));

        let classes = resonance_classes(&[ep(0.0)]).unwrap();
        assert_eq!(classes, vec![ResonanceClass::Single(ep(0.0))]);

        let eps: Vec<_> = [0.3, 0.7, -0.3].iter().map(|&e| ep(e)).collect();
        let classes = resonance_classes(&eps).unwrap();
        assert_eq!(classes[0], ResonanceClass::Pair([ep(0.3), ep(-0.3)]));
        assert_eq!(classes[1], ResonanceClass::Single(ep(0.7)));
        // Representative is the positive member even when listed second.
        let eps: Vec<_> = [-0.3, 0.3].iter().map(|&e| ep(e)).collect();
        assert_eq!(resonance_classes(&eps).unwrap()[0].representative().energy(), 0.3);
    }

    #[test]
    fn resonance_classes_order_independent() {
        let a = energies(&[0.3, 0.7, -0.3, 1.2, 0.0]);
        let b = energies(&[0.0, -0.3, 1.2, 0.7, 0.3]);
        assert_eq!(a, b);
    }

    #[test]
    fn duplicates_rejected() {
        let eps = [ep(1.0), ep(1.0 + 1e-10)];
        assert!(matches!(resonance_classes(&eps), Err(Error::DuplicateEnergy { .. })));
    }

    #[test]
    fn zero_piece_and_pair_start_values() {
        let zero = PotentialPiece::zero(0, 10);
        assert_eq!(zero.evaluate(7), 0.0);

        let pair = PotentialPiece {
            start: 500,
            end: 600,
            kind: PieceKind::ResonantPair(ep(1.0)),
            k1: 0.3,
            b: 100,
            anchors: vec![Anchor { id: 0, angle: 0.0 }, Anchor { id: 1, angle: 0.0 }],
        };
        assert_eq!(pair.evaluate(500), 100.0 * 0.3 / 400.0);

        let single = PotentialPiece {
            start: 500,
            end: 600,
            kind: PieceKind::Single(ep(0.0)),
            k1: 0.3,
            b: 100,
            anchors: vec![Anchor { id: 0, angle: 0.25 }],
        };
        assert!((single.evaluate(500) - 101.0 * 0.3 / 400.0).abs() < 1e-15);
    }

    #[test]
    fn potential_contiguity_enforced() {
        let gap = Potential::new(vec![PotentialPiece::zero(0, 10), PotentialPiece::zero(11, 20)]);
        assert!(gap.is_err());
        let late = Potential::new(vec![PotentialPiece::zero(1, 10)]);
        assert!(late.is_err());
        let ok = Potential::new(vec![PotentialPiece::zero(0, 10), PotentialPiece::zero(10, 20)]).unwrap();
        assert_eq!(ok.horizon(), 20);
        assert!(matches!(ok.evaluate(20), Err(Error::OutOfHorizon { .. })));
    }
}

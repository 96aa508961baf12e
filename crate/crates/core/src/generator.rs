//! Generating functions attached to one eigenvalue or to a resonant pair.
//!
//! For a pair `E, -E` (quasimomenta `k` and `1 - k`) the potential on
//! `[n0, end)` is
//!
//! ```text
//! V(n) = K1 (sin 2πθ(n) + sin 2πθ̃(n) + 100) / (n - b)
//! ```
//!
//! where `θ`, `θ̃` are the Prüfer angles of the two target solutions, evolved
//! by the exact step under this same `V`. Each `V(n)` is computed from the
//! angles at `n` before they advance. A single energy uses
//! `V(n) = K1 (sin 2πθ(n) + 100)/(n - b)`. The offset 100 keeps the pair phase
//! `θ + θ̃` drifting so it cannot park where the decay term `1 - cos 2π(θ + θ̃)`
//! vanishes.
//!
//! Averaging the log-radius decrement over the fast phases gives
//! `d ln R / d ln(n - b) ≈ -K1/(4s)`, so a desk target exponent `p` uses
//! `K1 = 4 s p`.

use crate::error::{Error, Result};
use crate::model::{
    generating_value, Anchor, EnergyPoint, PieceKind, PotentialPiece, PruferState, SolutionTrace, DRIFT_OFFSET,
    DUPLICATE_TOLERANCE,
};
use crate::prufer;

/// `|V|/s` must stay below this from the first site of a piece on.
pub const START_RATIO: f64 = 0.1;

/// Upper bound of the shape factor `sin + sin + 100`.
pub const SHAPE_MAX: f64 = DRIFT_OFFSET + 2.0;

/// `K1 = 4 s p`.
pub fn coupling_for_exponent(ep: &EnergyPoint, target_exponent: f64) -> f64 {
    4.0 * ep.s() * target_exponent
}

/// Smallest `K2` with `102 K1 / (K2 s_min) ≤ 1/10`.
pub fn min_k2(k1: f64, s_min: f64) -> u64 {
    min_k2_for_ratio(k1, s_min, START_RATIO)
}

/// Smallest `K2` with `102 K1 / (K2 s_min) ≤ ratio`.
pub fn min_k2_for_ratio(k1: f64, s_min: f64, ratio: f64) -> u64 {
    (SHAPE_MAX * k1 / (ratio * s_min)).ceil() as u64
}

/// Constants of one generator run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub k1: f64,
    pub k2: u64,
    /// Block length for diagnostics and block-boundary sampling.
    pub block_len: usize,
    pub b: i64,
    /// Exclusive end of the generated piece.
    pub horizon: u64,
    pub target_exponent: f64,
}

impl GeneratorParams {
    /// Parameters for exponent `p` with the smallest admissible `K2` and
    /// `b = n0 - K2`.
    pub fn for_exponent(
        target: &EnergyPoint,
        others: &[EnergyPoint],
        target_exponent: f64,
        n0: u64,
        horizon: u64,
    ) -> Self {
        let k1 = coupling_for_exponent(target, target_exponent);
        let k2 = min_k2(k1, s_min(target, others));
        GeneratorParams { k1, k2, block_len: default_block_len(target), b: n0 as i64 - k2 as i64, horizon, target_exponent }
    }

    pub fn validate(&self, n0: u64, target: &EnergyPoint, others: &[EnergyPoint]) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidParams(format!("K1 = {} must be positive", self.k1)));
        }
        if self.block_len == 0 {
            return Err(Error::InvalidParams("block length must be positive".into()));
        }
        if self.horizon <= n0 {
            return Err(Error::HorizonTooShort { start: n0, horizon: self.horizon });
        }
        let gap = n0 as i64 - self.b;
        if gap < self.k2 as i64 {
            return Err(Error::InvalidParams(format!("n0 - b = {gap} is below K2 = {}", self.k2)));
        }
        let needed = min_k2(self.k1, s_min(target, others));
        if self.k2 < needed {
            return Err(Error::InvalidParams(format!(
                "K2 = {} is below {needed} required for |V|/s <= 1/10",
                self.k2
            )));
        }
        Ok(())
    }
}

fn s_min(target: &EnergyPoint, others: &[EnergyPoint]) -> f64 {
    others.iter().map(|e| e.s()).fold(target.s(), f64::min)
}

/// Block length used for a target: 2 at `E = 0`, otherwise the averaging
/// block for the default tolerance, or the best continued-fraction block when
/// that tolerance is out of reach.
pub fn default_block_len(target: &EnergyPoint) -> usize {
    use crate::averaging::{self, ALL_COMBINATIONS, DEFAULT_NMAX};
    if target.energy() == 0.0 {
        return 2;
    }
    averaging::choose_block_length(target, averaging::default_epsilon(target), DEFAULT_NMAX)
        .map(|c| c.n)
        .unwrap_or_else(|_| averaging::best_block_length(target, DEFAULT_NMAX, &ALL_COMBINATIONS).n)
}

/// An eigenvalue solution carried through a piece.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tracked {
    pub id: usize,
    pub energy: EnergyPoint,
    pub state: PruferState,
}

impl Tracked {
    pub fn new(id: usize, energy: EnergyPoint, state: PruferState) -> Self {
        Tracked { id, energy, state }
    }

    #[inline]
    fn step(&mut self, v: f64) -> Result<()> {
        prufer::check_step(v, &self.energy)?;
        prufer::step_in_place(&mut self.state, v, &self.energy);
        Ok(())
    }
}

/// Which sites a generator run records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePolicy {
    /// Record every `stride` sites from the piece start (0 disables).
    pub stride: u64,
    /// Log-spaced samples per decade of `n - b` (0 disables).
    pub per_decade: usize,
    /// Record every site in `[lo, hi)`.
    pub window: Option<(u64, u64)>,
}

impl Default for SamplePolicy {
    fn default() -> Self {
        SamplePolicy { stride: 0, per_decade: 200, window: None }
    }
}

impl SamplePolicy {
    /// Block-boundary sampling, thinned to at most `max_samples` per run.
    pub fn blocks(block_len: usize, len: u64, max_samples: u64) -> Self {
        let block = block_len.max(1) as u64;
        let blocks = len / block + 1;
        let thin = blocks.div_ceil(max_samples.max(1)).max(1);
        SamplePolicy { stride: block * thin, per_decade: 0, window: None }
    }
}

/// Decides sample sites on the fly.
struct Sampler {
    policy: SamplePolicy,
    n0: u64,
    next_log: f64,
    log_step: f64,
    b: i64,
}

impl Sampler {
    fn new(policy: SamplePolicy, n0: u64, b: i64) -> Self {
        let log_step = if policy.per_decade > 0 { 10f64.ln() / policy.per_decade as f64 } else { f64::INFINITY };
        Sampler { policy, n0, next_log: ((n0 as i64 - b) as f64).ln(), log_step, b }
    }

    fn wants(&mut self, n: u64) -> bool {
        let mut hit = n == self.n0;
        if self.policy.stride > 0 && (n - self.n0).is_multiple_of(self.policy.stride) {
            hit = true;
        }
        if let Some((lo, hi)) = self.policy.window {
            if (lo..hi).contains(&n) {
                hit = true;
            }
        }
        if self.log_step.is_finite() {
            let x = ((n as i64 - self.b) as f64).ln();
            if x >= self.next_log {
                hit = true;
                while self.next_log <= x {
                    self.next_log += self.log_step;
                }
            }
        }
        hit
    }
}

/// Steps a generating recursion one site at a time.
///
/// Targets are the one or two solutions whose angles define `V`; every other
/// tracked solution only feels the emitted values.
#[derive(Debug, Clone)]
pub struct PieceRunner {
    pub kind: PieceKind,
    pub k1: f64,
    pub b: i64,
    pub start: u64,
    n: u64,
    pub targets: Vec<Tracked>,
    pub bystanders: Vec<Tracked>,
}

impl PieceRunner {
    pub fn new(kind: PieceKind, k1: f64, b: i64, n0: u64, targets: Vec<Tracked>, bystanders: Vec<Tracked>) -> Self {
        PieceRunner { kind, k1, b, start: n0, n: n0, targets, bystanders }
    }

    /// Site whose value the next call to [`step`](Self::step) emits.
    pub fn site(&self) -> u64 {
        self.n
    }

    /// `V` at the current site from the current target angles.
    #[inline]
    pub fn value(&self) -> f64 {
        match self.kind {
            PieceKind::Zero => 0.0,
            PieceKind::Single(_) => generating_value(self.k1, self.b, self.n, &self.targets[0].state.phase, None),
            PieceKind::ResonantPair(_) => generating_value(
                self.k1,
                self.b,
                self.n,
                &self.targets[0].state.phase,
                Some(&self.targets[1].state.phase),
            ),
        }
    }

    /// Emits `V(n)` and advances every tracked solution to `n + 1`.
    #[inline]
    pub fn step(&mut self) -> Result<f64> {
        let v = self.value();
        for t in self.targets.iter_mut().chain(self.bystanders.iter_mut()) {
            t.step(v)?;
        }
        self.n += 1;
        Ok(v)
    }

    /// The piece covering `[start, current site)`.
    pub fn piece(&self) -> PotentialPiece {
        PotentialPiece {
            start: self.start,
            end: self.n,
            kind: self.kind,
            k1: self.k1,
            b: self.b,
            anchors: Vec::new(),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Tracked> {
        self.targets.iter().chain(self.bystanders.iter())
    }
}

/// Per-block inversion of the decay and drift identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDiagnostic {
    pub m: u64,
    pub n: u64,
    /// Decrement defect: `Δ ln F^2 = -K/(2(n-b)s) (model + δ)`.
    pub delta: f64,
    /// Drift defect: `Δφ = L + K/((n-b)πs) (drift + ε)`.
    pub eps: f64,
}

/// Output of one generator run.
#[derive(Debug, Clone)]
pub struct GeneratedPiece {
    pub piece: PotentialPiece,
    pub target_traces: Vec<SolutionTrace>,
    pub bystander_traces: Vec<SolutionTrace>,
    /// States at `piece.end`, targets first.
    pub final_targets: Vec<Tracked>,
    pub final_bystanders: Vec<Tracked>,
    pub params: GeneratorParams,
    pub diagnostics: Vec<BlockDiagnostic>,
    /// Largest `|V(n)| (n - b)` emitted.
    pub max_scaled: f64,
    /// Smallest `V(n) (n - b)` emitted.
    pub min_scaled: f64,
}

fn check_hypothesis(target: &EnergyPoint, bystanders: &[Tracked]) -> Result<()> {
    for by in bystanders {
        let e = by.energy.energy();
        let clash = (e - target.energy()).abs() <= DUPLICATE_TOLERANCE
            || (e + target.energy()).abs() <= DUPLICATE_TOLERANCE;
        if clash {
            return Err(Error::ResonantHypothesisViolated { target: target.energy() });
        }
    }
    Ok(())
}

/// Generating function for a resonant pair `E > 0`, `-E`.
pub fn generate_pair(
    target: Tracked,
    partner: Tracked,
    bystanders: Vec<Tracked>,
    n0: u64,
    params: &GeneratorParams,
    sampling: SamplePolicy,
) -> Result<GeneratedPiece> {
    let e = target.energy;
    if e.energy() <= 0.0 {
        return Err(Error::InvalidParams(format!("pair representative must have E > 0, got {}", e.energy())));
    }
    if partner.energy != e.mirror() {
        return Err(Error::InvalidParams("partner must be the mirror energy of the target".into()));
    }
    check_hypothesis(&e, &bystanders)?;
    let others: Vec<EnergyPoint> = bystanders.iter().map(|b| b.energy).collect();
    params.validate(n0, &e, &others)?;
    let runner = PieceRunner::new(PieceKind::ResonantPair(e), params.k1, params.b, n0, vec![target, partner], bystanders);
    run(runner, params, sampling)
}

/// Generating function for a single energy with no resonant partner among
/// the bystanders; covers `E = 0`.
pub fn generate_single(
    target: Tracked,
    bystanders: Vec<Tracked>,
    n0: u64,
    params: &GeneratorParams,
    sampling: SamplePolicy,
) -> Result<GeneratedPiece> {
    let e = target.energy;
    check_hypothesis(&e, &bystanders)?;
    let others: Vec<EnergyPoint> = bystanders.iter().map(|b| b.energy).collect();
    params.validate(n0, &e, &others)?;
    let runner = PieceRunner::new(PieceKind::Single(e), params.k1, params.b, n0, vec![target], bystanders);
    run(runner, params, sampling)
}

/// Starting states with angles `θ0` (and `θ̃0`) and unit radius.
pub fn tracked_from_angle(id: usize, energy: EnergyPoint, theta0: f64) -> Tracked {
    Tracked::new(id, energy, PruferState::new(0.0, theta0))
}

fn run(mut runner: PieceRunner, params: &GeneratorParams, sampling: SamplePolicy) -> Result<GeneratedPiece> {
    let n0 = runner.start;
    let anchors: Vec<Anchor> =
        runner.targets.iter().map(|t| Anchor { id: t.id, angle: t.state.phase.frac() }).collect();
    let mut target_traces: Vec<SolutionTrace> =
        runner.targets.iter().map(|t| SolutionTrace::new(t.id, t.energy)).collect();
    let mut bystander_traces: Vec<SolutionTrace> =
        runner.bystanders.iter().map(|t| SolutionTrace::new(t.id, t.energy)).collect();
    let mut sampler = Sampler::new(sampling, n0, runner.b);
    let record = |runner: &PieceRunner, tt: &mut [SolutionTrace], bt: &mut [SolutionTrace]| {
        let n = runner.site();
        for (trace, t) in tt.iter_mut().zip(&runner.targets) {
            trace.push(n, &t.state);
        }
        for (trace, t) in bt.iter_mut().zip(&runner.bystanders) {
            trace.push(n, &t.state);
        }
    };

    let mut max_scaled: f64 = 0.0;
    let mut min_scaled = f64::INFINITY;
    while runner.site() < params.horizon {
        let n = runner.site();
        if sampler.wants(n) {
            record(&runner, &mut target_traces, &mut bystander_traces);
        }
        let v = runner.step()?;
        let scaled = v * (n as i64 - runner.b) as f64;
        max_scaled = max_scaled.max(scaled.abs());
        min_scaled = min_scaled.min(scaled);
    }
    record(&runner, &mut target_traces, &mut bystander_traces);

    let mut piece = runner.piece();
    piece.anchors = anchors;
    let diagnostics = if sampling.stride > 0 && sampling.stride.is_multiple_of(params.block_len as u64) {
        block_diagnostics(&target_traces, piece.kind, params.k1, params.b, sampling.stride as usize)?
    } else {
        Vec::new()
    };
    Ok(GeneratedPiece {
        piece,
        target_traces,
        bystander_traces,
        final_targets: runner.targets,
        final_bystanders: runner.bystanders,
        params: *params,
        diagnostics,
        max_scaled,
        min_scaled,
    })
}

/// Inverts the block identities on traces sampled every `block` sites.
///
/// * pair: `F = R` (first trace), `φ = θ + θ̃`, `L = block`, `K = K1 block`,
///   model decrement `1 - cos 2πφ`, drift 100;
/// * `E = 0`: `φ = 2θ`, `L = block`, same `K`, decrement `1 - cos 2πφ`, drift 100;
/// * other single energies: no resonant phase, decrement 1, drift 50,
///   `L = block·k`.
pub fn block_diagnostics(
    traces: &[SolutionTrace],
    kind: PieceKind,
    k1: f64,
    b: i64,
    block: usize,
) -> Result<Vec<BlockDiagnostic>> {
    if k1 <= 0.0 {
        return Err(Error::InvalidParams("block diagnostics need K1 > 0".into()));
    }
    let ep = kind.energy().ok_or_else(|| Error::InvalidParams("zero piece has no diagnostics".into()))?;
    let big_k = k1 * block as f64;
    let s = ep.s();
    let main = traces.first().ok_or_else(|| Error::InvalidParams("no target trace".into()))?;
    let partner = match kind {
        PieceKind::ResonantPair(_) => {
            Some(traces.get(1).ok_or_else(|| Error::InvalidParams("pair diagnostics need two traces".into()))?)
        }
        _ => None,
    };
    let phase_of = |i: usize| -> f64 {
        match (kind, partner) {
            (PieceKind::ResonantPair(_), Some(p)) => main.samples[i].phase.value() + p.samples[i].phase.value(),
            (PieceKind::Single(e), _) if e.energy() == 0.0 => 2.0 * main.samples[i].phase.value(),
            _ => main.samples[i].phase.value(),
        }
    };
    let resonant = partner.is_some() || ep.energy() == 0.0;
    let (drift, advance) = if resonant { (DRIFT_OFFSET, block as f64) } else { (DRIFT_OFFSET / 2.0, block as f64 * ep.k()) };

    let n0 = main.samples.first().map(|s| s.n).unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..main.samples.len().saturating_sub(1) {
        let (a, c) = (&main.samples[i], &main.samples[i + 1]);
        if c.n - a.n != block as u64 {
            continue;
        }
        let scale = (a.n as i64 - b) as f64;
        let phi = phase_of(i);
        let model = if resonant { 1.0 - (2.0 * std::f64::consts::PI * phi).cos() } else { 1.0 };
        let dlog2 = 2.0 * (c.log_r - a.log_r);
        let delta = -dlog2 * 2.0 * scale * s / big_k - model;
        let dphi = phase_of(i + 1) - phi - advance;
        let eps = dphi * scale * std::f64::consts::PI * s / big_k - drift;
        out.push(BlockDiagnostic { m: (a.n - n0) / block as u64, n: a.n, delta, eps });
    }
    Ok(out)
}

//! Piecewise assembly of the full potential.
//!
//! The half line is cut into steps `r = 1, 2, ...`. Step `r` starts at
//! `J_{r-1}` and consists of `N_r` pieces of common length `T_r`, one per
//! active resonance class, so `J_r = J_{r-1} + N_r T_r`. Every piece runs the
//! generating recursion for its class while all other eigenvalue solutions are
//! threaded through the emitted values as bystanders.
//!
//! Each piece of step `r` starts with `n - b = D_i`, where
//! `D_r = max(K2, J_{r-1})` and `D_i = max(D_r, ceil((1 + start)/ρ))`. Then
//! `|V|/s ≤ 102 K1/(K2 s_min)` at every site, and
//! `|V(n)| (1 + n) ≤ 102 K1 max(ρ, 1 + N_r T_r/D_r)`, which is what the
//! global envelope needs.
//!
//! `T_r` is adaptive: a trial of the whole step is accepted once every target
//! radius shrinks by at least `stopFactor` across its own piece. Otherwise the
//! failing piece is extended until it does, `T_r` is raised to that length
//! (and at least 5%), and the step is regenerated from the same states.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::generator::{min_k2_for_ratio, PieceRunner, Tracked, SHAPE_MAX};
use crate::model::{
    resonance_classes, Anchor, BoundaryAngle, EigenvalueMeta, EnergyPoint, PieceKind, Potential, PotentialPiece,
    ResonanceClass, SolutionTrace, DEFAULT_EDGE_DELTA,
};
use crate::prufer;
use crate::verify::{l2_report_with_sums, L2Accumulator, L2Report};

/// Non-decreasing, unbounded envelope `h` for countable mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    /// `h(n) = ln(2 + n)`.
    Log,
    /// `h(n) = (1 + n)^α`, `α > 0`.
    Power(f64),
    /// Step function: the value of the last entry with `site ≤ n`, 0 before
    /// the first entry. Sites strictly increasing, values non-decreasing.
    Table(Vec<(u64, f64)>),
}

impl Envelope {
    pub fn value(&self, n: u64) -> f64 {
        match self {
            Envelope::Log => (2.0 + n as f64).ln(),
            Envelope::Power(a) => (1.0 + n as f64).powf(*a),
            Envelope::Table(t) => {
                let i = t.partition_point(|e| e.0 <= n);
                if i == 0 {
                    0.0
                } else {
                    t[i - 1].1
                }
            }
        }
    }

    /// Monotonicity on sampled points and well-formed parameters.
    pub fn validate(&self) -> Result<()> {
        match self {
            Envelope::Power(a) if !(*a > 0.0 && a.is_finite()) => {
                return Err(Error::InvalidParams(format!("envelope exponent {a} must be positive")))
            }
            Envelope::Table(t) => {
                if t.is_empty() {
                    return Err(Error::InvalidParams("empty envelope table".into()));
                }
                for w in t.windows(2) {
                    if w[1].0 <= w[0].0 || w[1].1 < w[0].1 {
                        return Err(Error::InvalidParams("envelope table must be increasing".into()));
                    }
                }
            }
            _ => {}
        }
        let mut prev = self.value(0);
        for j in 0..63 {
            let v = self.value(1u64 << j);
            if v < prev || v.is_nan() {
                return Err(Error::InvalidParams(format!("envelope decreases near n = 2^{j}")));
            }
            prev = v;
        }
        Ok(())
    }

    /// Smallest `n` in `[from, horizon)` with `h(n) ≥ level`.
    pub fn first_site_at_least(&self, level: f64, from: u64, horizon: u64) -> Option<u64> {
        if from >= horizon || self.value(horizon - 1) < level {
            return None;
        }
        let (mut lo, mut hi) = (from, horizon - 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.value(mid) >= level {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Some(lo)
    }
}

/// Finite mode (all classes active from the first step) or countable mode
/// (classes activated in order under an envelope).
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Finite,
    Countable(Envelope),
}

/// Tunable rules of the construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GlueOptions {
    /// Desk exponent `p`: each class uses `K1 = 4 s p`.
    pub target_exponent: f64,
    /// Per-piece decay goal for the targeted radii.
    pub stop_factor: f64,
    /// Bound on `102 K1/((n - b) s)` for every tracked `s`; sets `K2`.
    pub start_ratio: f64,
    /// `ρ ≥ 1` with `(1 + n)/(n - b) ≤ ρ` at every piece start.
    pub envelope_ratio: f64,
    /// Length of the initial `V = 0` segment, at least 1 (`V(0)` never
    /// enters the recursion).
    pub initial_gap: u64,
    pub min_piece_len: u64,
    /// Log-spaced trace samples per decade of `n`.
    pub per_decade: usize,
    /// Record every site of every trace in `[lo, hi)`.
    pub full_trace_window: Option<(u64, u64)>,
    pub edge_delta: f64,
}

impl Default for GlueOptions {
    fn default() -> Self {
        GlueOptions {
            target_exponent: 5.0,
            stop_factor: 8.0,
            start_ratio: 0.1,
            envelope_ratio: 4.0,
            initial_gap: 1,
            min_piece_len: 1,
            per_decade: 200,
            full_trace_window: None,
            edge_delta: DEFAULT_EDGE_DELTA,
        }
    }
}

impl GlueOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.target_exponent > 0.0 && self.target_exponent.is_finite()) {
            return bad(format!("target exponent {} must be positive", self.target_exponent));
        }
        if !(self.stop_factor > 1.0 && self.stop_factor.is_finite()) {
            return bad(format!("stop factor {} must exceed 1", self.stop_factor));
        }
        if !(self.start_ratio > 0.0 && self.start_ratio < prufer::STEP_LIMIT) {
            return bad(format!("start ratio {} must lie in (0, 1/2)", self.start_ratio));
        }
        if !(self.envelope_ratio >= 1.0 && self.envelope_ratio.is_finite()) {
            return bad(format!("envelope ratio {} must be at least 1", self.envelope_ratio));
        }
        if self.initial_gap == 0 {
            return bad("initial gap must be at least 1".into());
        }
        if let Some((lo, hi)) = self.full_trace_window {
            if lo >= hi {
                return bad(format!("empty trace window [{lo}, {hi})"));
            }
        }
        Ok(())
    }
}

/// A prescribed eigenvalue and its boundary condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen {
    pub id: usize,
    pub energy: EnergyPoint,
    pub theta: BoundaryAngle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPlan {
    pub class: ResonanceClass,
    /// Eigenvalue ids, representative first.
    pub members: Vec<usize>,
    pub k1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GluingPlan {
    pub eigen: Vec<Eigen>,
    pub classes: Vec<ClassPlan>,
    pub mode: Mode,
    pub options: GlueOptions,
    pub k2: u64,
}

impl GluingPlan {
    pub fn validate(&self) -> Result<()> {
        self.options.validate()?;
        if self.classes.is_empty() {
            return Err(Error::InvalidParams("no resonance classes".into()));
        }
        if let Mode::Countable(h) = &self.mode {
            h.validate()?;
        }
        Ok(())
    }

    pub fn initial_gap(&self) -> u64 {
        self.options.initial_gap
    }

    /// `102 K1 ρ`, the bound on `|V(n)| (1 + n)` inside pieces of a class.
    pub fn class_bound(&self, class: usize) -> f64 {
        SHAPE_MAX * self.classes[class].k1 * self.options.envelope_ratio
    }

    /// First site at or after `from` where the envelope admits the class.
    pub fn activation_site(&self, class: usize, from: u64, horizon: u64) -> Option<u64> {
        match &self.mode {
            Mode::Finite => Some(from),
            Mode::Countable(h) => h.first_site_at_least(self.class_bound(class), from, horizon),
        }
    }
}

/// Groups energies into resonance classes and fixes the coupling rules.
pub fn plan(energies: &[f64], angles: &[BoundaryAngle], mode: Mode, options: GlueOptions) -> Result<GluingPlan> {
    if energies.len() != angles.len() {
        return Err(Error::InvalidParams(format!("{} energies but {} angles", energies.len(), angles.len())));
    }
    if energies.is_empty() {
        return Err(Error::InvalidParams("no energies".into()));
    }
    options.validate()?;
    let points = energies
        .iter()
        .map(|&e| EnergyPoint::with_edge_delta(e, options.edge_delta))
        .collect::<Result<Vec<_>>>()?;
    let eigen: Vec<Eigen> =
        points.iter().zip(angles).enumerate().map(|(id, (&energy, &theta))| Eigen { id, energy, theta }).collect();
    let classes: Vec<ClassPlan> = resonance_classes(&points)?
        .into_iter()
        .map(|class| {
            let members = class
                .members()
                .iter()
                .map(|m| points.iter().position(|p| p == m).expect("member comes from the input"))
                .collect();
            let k1 = 4.0 * class.representative().s() * options.target_exponent;
            ClassPlan { class, members, k1 }
        })
        .collect();
    let s_min = points.iter().map(|p| p.s()).fold(f64::INFINITY, f64::min);
    let k1_max = classes.iter().map(|c| c.k1).fold(0.0, f64::max);
    let k2 = min_k2_for_ratio(k1_max, s_min, options.start_ratio);
    let plan = GluingPlan { eigen, classes, mode, options, k2 };
    plan.validate()?;
    Ok(plan)
}

/// Realized step of the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    pub r: usize,
    pub n_r: usize,
    pub t_r: u64,
    pub j_prev: u64,
    pub j_r: u64,
    pub d_r: u64,
    /// Trials needed before the stop condition held in every piece.
    pub attempts: usize,
    /// False only for a final step cut by the horizon.
    pub complete: bool,
}

/// One line of the run log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PieceLog {
    pub r: usize,
    pub class: usize,
    pub start: u64,
    pub end: u64,
    pub b: i64,
    /// `min R(start)/R(end)` over the targeted solutions.
    pub decay_factor: f64,
    /// `max |V(n)| (1 + n)` over the piece.
    pub sup_scaled: f64,
}

impl fmt::Display for PieceLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "r={} class={} start={} end={} b={} decay={:.6e} sup|V|(1+n)={:.6e}",
            self.r, self.class, self.start, self.end, self.b, self.decay_factor, self.sup_scaled
        )
    }
}

/// Everything recorded about one eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct GluedEigen {
    pub id: usize,
    pub energy: EnergyPoint,
    pub theta: BoundaryAngle,
    pub trace: SolutionTrace,
    /// `(n, u(n))` at the trace samples.
    pub u_samples: Vec<(u64, f64)>,
    /// `(n, max |u|)` over log bins (ten per decade), exact over every site.
    pub envelope: Vec<(u64, f64)>,
    pub sums: L2Accumulator,
    pub l2: L2Report,
    /// `max ln R` over each realized step.
    pub step_sup_log_r: Vec<f64>,
    /// Site where the eigenvalue's class first became active.
    pub activation: Option<u64>,
    /// Envelope fits use sites from here on: the end of the first complete
    /// step after activation.
    pub fit_from: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GluedResult {
    pub potential: Potential,
    pub eigen: Vec<GluedEigen>,
    pub schedule: Vec<ScheduleEntry>,
    pub pieces: Vec<PieceLog>,
    pub horizon_exhausted: bool,
    /// `sup |V(n)| (1 + n)` and the site attaining it.
    pub c_global: (f64, u64),
    pub k2: u64,
}

impl GluedResult {
    pub fn run_log(&self) -> String {
        self.pieces.iter().map(|p| format!("{p}\n")).collect()
    }
}

/// Advances every state through a piece by the exact step under the piece's
/// replayed `V`. For a piece starting at 0 the states sit at site 1 (the
/// boundary data fixes `u(0)` and `u(1)`), so `V(0)` is skipped.
pub fn boundary_thread(states: &mut [Tracked], piece: &PotentialPiece) -> Result<()> {
    for (n, v) in piece.replay() {
        if n == 0 {
            continue;
        }
        for t in states.iter_mut() {
            prufer::check_step(v, &t.energy)?;
            prufer::step_in_place(&mut t.state, v, &t.energy);
        }
    }
    Ok(())
}

/// Sites `ceil(10^(k/per_decade))` crossed in increasing order.
#[derive(Debug, Clone, Copy)]
struct Ladder {
    per_decade: f64,
    k: i64,
    next: u64,
}

impl Ladder {
    fn new(per_decade: usize) -> Self {
        Ladder { per_decade: per_decade.max(1) as f64, k: 0, next: 1 }
    }

    #[inline]
    fn crossed(&mut self, n: u64) -> bool {
        if n < self.next {
            return false;
        }
        while self.next <= n {
            self.k += 1;
            self.next = 10f64.powf(self.k as f64 / self.per_decade).ceil() as u64;
        }
        true
    }
}

#[derive(Debug, Clone)]
struct Recorder {
    trace: SolutionTrace,
    sums: L2Accumulator,
    envelope: Vec<(u64, f64)>,
    bin: (u64, f64),
    step_sup: f64,
}

#[derive(Debug, Clone)]
struct Observer {
    samples: Ladder,
    bins: Ladder,
    window: Option<(u64, u64)>,
    recorders: Vec<Recorder>,
}

impl Observer {
    /// Records site `n` for every tracked state (all eigenvalues).
    #[inline]
    fn observe<'a>(&mut self, n: u64, force: bool, states: impl Iterator<Item = &'a Tracked>) {
        let sample = self.samples.crossed(n) | force | self.window.is_some_and(|(lo, hi)| (lo..hi).contains(&n));
        let new_bin = self.bins.crossed(n);
        for t in states {
            let rec = &mut self.recorders[t.id];
            let sign = if t.state.phase.turns() & 1 == 0 { 1.0 } else { -1.0 };
            let u = sign * t.state.log_r.exp() * (PI * t.state.phase.frac()).sin();
            rec.sums.add(n, u);
            if new_bin && rec.bin.0 > 0 {
                rec.envelope.push(rec.bin);
                rec.bin = (0, 0.0);
            }
            if rec.bin.0 == 0 || u.abs() > rec.bin.1 {
                rec.bin = (n, u.abs());
            }
            rec.step_sup = rec.step_sup.max(t.state.log_r);
            if sample && rec.trace.last().is_none_or(|s| s.n < n) {
                rec.trace.push(n, &t.state);
            }
        }
    }
}

/// Mutable construction state, cloned as a snapshot before each step trial.
#[derive(Debug, Clone)]
struct Build {
    states: Vec<Tracked>,
    observer: Observer,
    pieces: Vec<PotentialPiece>,
    logs: Vec<PieceLog>,
    c_global: (f64, u64),
}

enum Trial {
    Done { end: u64, complete: bool },
    Retry(u64),
}

struct StepSpec<'a> {
    r: usize,
    j: u64,
    d_r: u64,
    t: u64,
    active: &'a [usize],
}

impl Build {
    fn runner_for(&self, plan: &GluingPlan, class: usize, start: u64, d: u64) -> PieceRunner {
        let cp = &plan.classes[class];
        let kind = match cp.class {
            ResonanceClass::Single(ep) => PieceKind::Single(ep),
            ResonanceClass::Pair(m) => PieceKind::ResonantPair(m[0]),
        };
        let targets: Vec<Tracked> = cp.members.iter().map(|&id| self.states[id]).collect();
        let bystanders: Vec<Tracked> =
            self.states.iter().filter(|t| !cp.members.contains(&t.id)).copied().collect();
        PieceRunner::new(kind, cp.k1, start as i64 - d as i64, start, targets, bystanders)
    }

    fn absorb(&mut self, runner: &PieceRunner) {
        for t in runner.all() {
            self.states[t.id] = *t;
        }
    }

    /// Runs `runner` up to `end`, observing every site.
    fn advance(&mut self, runner: &mut PieceRunner, end: u64, sup: &mut (f64, u64)) -> Result<()> {
        while runner.site() < end {
            let n = runner.site();
            self.observer.observe(n, n == runner.start, runner.all());
            let v = runner.step()?;
            let scaled = v.abs() * (1.0 + n as f64);
            if scaled > sup.0 {
                *sup = (scaled, n);
            }
        }
        Ok(())
    }

    fn decayed(runner: &PieceRunner, start_logs: &[f64], target: f64) -> (bool, f64) {
        let mut ok = true;
        let mut factor = f64::INFINITY;
        for (t, l0) in runner.targets.iter().zip(start_logs) {
            let drop = l0 - t.state.log_r;
            ok &= drop >= target;
            factor = factor.min(drop.exp());
        }
        (ok, factor)
    }

    fn run_step(&mut self, plan: &GluingPlan, spec: &StepSpec, horizon: u64) -> Result<Trial> {
        let ln_stop = plan.options.stop_factor.ln();
        let rho = plan.options.envelope_ratio;
        for (i, &class) in spec.active.iter().enumerate() {
            let start = spec.j + i as u64 * spec.t;
            if start >= horizon {
                return Ok(Trial::Done { end: horizon, complete: false });
            }
            let d = spec.d_r.max(((1.0 + start as f64) / rho).ceil() as u64);
            let mut runner = self.runner_for(plan, class, start, d);
            let start_logs: Vec<f64> = runner.targets.iter().map(|t| t.state.log_r).collect();
            let anchors: Vec<Anchor> =
                runner.targets.iter().map(|t| Anchor { id: t.id, angle: t.state.phase.frac() }).collect();
            let mut sup = (0.0, start);
            let end = (start + spec.t).min(horizon);
            self.advance(&mut runner, end, &mut sup)?;
            let (mut ok, mut factor) = Self::decayed(&runner, &start_logs, ln_stop);
            let cut = end < start + spec.t;
            if !ok && !cut {
                // Extend until the stop condition holds to learn the length needed.
                while runner.site() < horizon && !ok {
                    let next = runner.site() + 1;
                    self.advance(&mut runner, next, &mut sup)?;
                    (ok, factor) = Self::decayed(&runner, &start_logs, ln_stop);
                }
                if ok {
                    return Ok(Trial::Retry(runner.site() - start));
                }
            }
            if let Some(h) = match &plan.mode {
                Mode::Countable(h) => Some(h),
                Mode::Finite => None,
            } {
                let bound = h.value(start);
                if sup.0 > bound {
                    return Err(Error::EnvelopeViolated { site: sup.1, scaled: sup.0, bound });
                }
            }
            if sup.0 > self.c_global.0 {
                self.c_global = sup;
            }
            self.absorb(&runner);
            let mut piece = runner.piece();
            piece.anchors = anchors;
            self.logs.push(PieceLog {
                r: spec.r,
                class,
                start,
                end: piece.end,
                b: piece.b,
                decay_factor: factor,
                sup_scaled: sup.0,
            });
            let end = piece.end;
            self.pieces.push(piece);
            if end >= horizon && (cut || !ok || i + 1 < spec.active.len()) {
                return Ok(Trial::Done { end, complete: false });
            }
        }
        Ok(Trial::Done { end: spec.j + spec.active.len() as u64 * spec.t, complete: true })
    }
}

/// Whether a piece's generating recursion targets this energy.
fn targets(piece: &PotentialPiece, e: &EnergyPoint) -> bool {
    match piece.kind {
        PieceKind::Zero => false,
        PieceKind::Single(t) => t == *e,
        PieceKind::ResonantPair(t) => t == *e || t.mirror() == *e,
    }
}

fn finish_eigen(
    e: &Eigen,
    mut rec: Recorder,
    last: &Tracked,
    horizon: u64,
    pieces: &[PotentialPiece],
    step_sup_log_r: Vec<f64>,
) -> GluedEigen {
    if rec.bin.0 > 0 {
        rec.envelope.push(rec.bin);
    }
    if rec.trace.last().is_none_or(|s| s.n < horizon) {
        rec.trace.push(horizon, &last.state);
    }
    let own = pieces.iter().find(|p| targets(p, &e.energy));
    let fit_from = own.map(|p| p.end).unwrap_or(horizon);
    let tail: Vec<(u64, f64)> = rec.envelope.iter().copied().filter(|p| p.0 >= fit_from).collect();
    let l2 = l2_report_with_sums(&tail, &rec.sums);
    GluedEigen {
        id: e.id,
        energy: e.energy,
        theta: e.theta,
        u_samples: rec.trace.u_samples(),
        trace: rec.trace,
        envelope: rec.envelope,
        sums: rec.sums,
        l2,
        step_sup_log_r,
        activation: own.map(|p| p.start),
        fit_from,
    }
}

fn observer_for(eigen: &[Eigen], horizon: u64, per_decade: usize, window: Option<(u64, u64)>) -> Observer {
    let recorders = eigen
        .iter()
        .map(|e| {
            let mut sums = L2Accumulator::new(horizon);
            sums.add(0, e.theta.radians().cos());
            Recorder {
                trace: SolutionTrace::new(e.id, e.energy),
                sums,
                envelope: Vec::new(),
                bin: (0, 0.0),
                step_sup: f64::NEG_INFINITY,
            }
        })
        .collect();
    Observer { samples: Ladder::new(per_decade), bins: Ladder::new(10), window, recorders }
}

fn boundary_states(eigen: &[Eigen]) -> Vec<Tracked> {
    eigen.iter().map(|e| Tracked::new(e.id, e.energy, prufer::boundary_to_prufer(e.theta, &e.energy))).collect()
}

/// Threads every eigenvalue through a stored potential and records the same
/// traces, ℓ² sums and envelopes that [`build`] records.
pub fn thread_potential(
    potential: &Potential,
    eigen: &[Eigen],
    per_decade: usize,
    window: Option<(u64, u64)>,
) -> Result<Vec<GluedEigen>> {
    if eigen.iter().enumerate().any(|(i, e)| e.id != i) {
        return Err(Error::InvalidParams("eigenvalue ids must be 0, 1, 2, ...".into()));
    }
    let horizon = potential.horizon();
    let mut states = boundary_states(eigen);
    let mut observer = observer_for(eigen, horizon, per_decade, window);
    for piece in potential.pieces() {
        for (n, v) in piece.replay() {
            if n == 0 {
                continue;
            }
            observer.observe(n, n == piece.start || n == 1, states.iter());
            for t in states.iter_mut() {
                prufer::check_step(v, &t.energy)?;
                prufer::step_in_place(&mut t.state, v, &t.energy);
            }
        }
    }
    Ok(eigen
        .iter()
        .zip(observer.recorders)
        .map(|(e, rec)| finish_eigen(e, rec, &states[e.id], horizon, potential.pieces(), Vec::new()))
        .collect())
}

/// Runs the schedule up to `horizon` and assembles the potential.
pub fn build(plan: &GluingPlan, horizon: u64) -> Result<GluedResult> {
    plan.validate()?;
    let opts = &plan.options;
    let gap = plan.initial_gap();
    let j0 = plan.activation_site(0, gap, horizon).ok_or(Error::EnvelopeNeverFits { class: 0, horizon })?;
    if j0 >= horizon {
        return Err(Error::HorizonTooShort { start: j0, horizon });
    }

    let observer = observer_for(&plan.eigen, horizon, opts.per_decade, opts.full_trace_window);
    let mut st =
        Build { states: boundary_states(&plan.eigen), observer, pieces: Vec::new(), logs: Vec::new(), c_global: (0.0, 0) };

    // Free evolution over [1, j0): the states start at site 1.
    for n in 1..j0 {
        st.observer.observe(n, n == 1, st.states.iter());
        for t in st.states.iter_mut() {
            prufer::step_in_place(&mut t.state, 0.0, &t.energy);
        }
    }
    st.pieces.push(PotentialPiece::zero(0, j0));

    let mut active: Vec<usize> = vec![0];
    if plan.mode == Mode::Finite {
        active = (0..plan.classes.len()).collect();
    }
    let mut step_sups: Vec<Vec<f64>> = vec![Vec::new(); plan.eigen.len()];
    let mut schedule = Vec::new();
    let mut j = j0;
    let mut prev: Option<(u64, u64)> = None;
    let mut exhausted = false;
    let growth = opts.stop_factor.powf(1.0 / opts.target_exponent) - 1.0;

    let mut r = 1;
    while j < horizon {
        if let Mode::Countable(h) = &plan.mode {
            let next = active.len();
            if r > 1 && next < plan.classes.len() && plan.class_bound(next) <= h.value(j) {
                active.push(next);
            }
        }
        let d_r = plan.k2.max(j);
        let estimate = match prev {
            None => (d_r as f64 * growth * 1.1).ceil() as u64,
            Some((t, d)) => (t as f64 * d_r as f64 / d as f64 * 0.95).ceil() as u64,
        };
        let mut t = estimate.max(opts.min_piece_len).max(1);
        for rec in st.observer.recorders.iter_mut() {
            rec.step_sup = f64::NEG_INFINITY;
        }
        let snapshot = st.clone();
        let mut attempts = 0;
        let (end, complete) = loop {
            attempts += 1;
            let spec = StepSpec { r, j, d_r, t, active: &active };
            match st.run_step(plan, &spec, horizon)? {
                Trial::Done { end, complete } => break (end, complete),
                Trial::Retry(needed) => {
                    t = needed.max((t as f64 * 1.05).ceil() as u64);
                    st = snapshot.clone();
                }
            }
        };
        for (sups, rec) in step_sups.iter_mut().zip(&st.observer.recorders) {
            sups.push(rec.step_sup);
        }
        schedule.push(ScheduleEntry { r, n_r: active.len(), t_r: t, j_prev: j, j_r: end, d_r, attempts, complete });
        if !complete {
            exhausted = true;
            j = end;
            break;
        }
        prev = Some((t, d_r));
        j = end;
        r += 1;
    }
    debug_assert_eq!(j, horizon);

    let eigen_out = plan
        .eigen
        .iter()
        .zip(st.observer.recorders)
        .map(|(e, rec)| finish_eigen(e, rec, &st.states[e.id], horizon, &st.pieces, step_sups[e.id].clone()))
        .collect();

    let mut potential = Potential::new(st.pieces)?;
    potential.c_global = st.c_global.0;
    potential.eigenvalues =
        plan.eigen.iter().map(|e| EigenvalueMeta { id: e.id, energy: e.energy.energy(), theta: e.theta.radians() }).collect();
    let mut sites: Vec<u64> = potential.pieces().iter().flat_map(|p| [p.start, p.start + p.len() / 2]).collect();
    sites.sort_unstable();
    sites.dedup();
    potential.record_checks(&sites);

    Ok(GluedResult {
        potential,
        eigen: eigen_out,
        schedule,
        pieces: st.logs,
        horizon_exhausted: exhausted,
        c_global: st.c_global,
        k2: plan.k2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angles(v: &[f64]) -> Vec<BoundaryAngle> {
        v.iter().map(|&t| BoundaryAngle::new(t).unwrap()).collect()
    }

    #[test]
    fn finite_plan_classes() {
        let p = plan(&[1.0, -1.0, 0.5], &angles(&[0.1, 0.2, 0.3]), Mode::Finite, GlueOptions::default()).unwrap();
        assert_eq!(p.classes.len(), 2);
        assert!(p.classes[0].class.is_pair());
        assert_eq!(p.classes[0].members, vec![0, 1]);
        assert_eq!(p.classes[1].members, vec![2]);
        let single = plan(&[0.0], &angles(&[0.0]), Mode::Finite, GlueOptions::default()).unwrap();
        assert_eq!(single.classes.len(), 1);
    }

    #[test]
    fn plan_rejects_bad_input() {
        let o = GlueOptions::default();
        assert!(matches!(plan(&[1.0, 1.0], &angles(&[0.1, 0.2]), Mode::Finite, o.clone()), Err(Error::DuplicateEnergy { .. })));
        assert!(matches!(plan(&[2.0], &angles(&[0.1]), Mode::Finite, o.clone()), Err(Error::EdgeEnergy { .. })));
        assert!(plan(&[1.0], &angles(&[0.1, 0.2]), Mode::Finite, o.clone()).is_err());
        let bad = GlueOptions { stop_factor: 1.0, ..o };
        assert!(plan(&[1.0], &angles(&[0.1]), Mode::Finite, bad).is_err());
    }

    #[test]
    fn log_envelope_activation() {
        let h = Envelope::Log;
        // ln(2 + n) ≥ 3 first at n = 19.
        assert_eq!(h.first_site_at_least(3.0, 0, 1000), Some(19));
        assert_eq!(h.first_site_at_least(50.0, 0, 1_000_000), None);
        assert!(Envelope::Table(vec![(0, 1.0), (10, 0.5)]).validate().is_err());
        assert!(Envelope::Power(0.5).validate().is_ok());
    }

    #[test]
    fn zero_piece_threading() {
        let e = EnergyPoint::new(1.0).unwrap();
        let mut states = vec![Tracked::new(0, e, crate::model::PruferState::new(0.25, 0.3))];
        boundary_thread(&mut states, &PotentialPiece::zero(5, 605)).unwrap();
        assert_eq!(states[0].state.log_r, 0.25);
        assert!((states[0].state.phi() - 0.3 - 600.0 / 3.0).abs() < 1e-9);
    }

    fn small_options() -> GlueOptions {
        GlueOptions { target_exponent: 1.0, stop_factor: 2.0, start_ratio: 0.3, per_decade: 50, ..Default::default() }
    }

    #[test]
    fn single_zero_energy_halves_each_piece() {
        let p = plan(&[0.0], &angles(&[0.4]), Mode::Finite, small_options()).unwrap();
        let out = build(&p, 200_000).unwrap();
        let sched = &out.schedule;
        assert!(sched.len() >= 3);
        for w in sched.windows(2) {
            assert_eq!(w[1].j_prev, w[0].j_r);
        }
        for s in sched.iter().filter(|s| s.complete) {
            assert_eq!(s.j_r, s.j_prev + s.n_r as u64 * s.t_r);
        }
        for log in out.pieces.iter().filter(|l| l.end - l.start == sched[l.r - 1].t_r) {
            assert!(log.decay_factor >= 2.0);
        }
        let sups = &out.eigen[0].step_sup_log_r;
        for w in sups.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn finite_build_is_consistent_and_replays() {
        let p = plan(&[1.0, -1.0, 0.5], &angles(&[0.7, 1.0, 0.5]), Mode::Finite, small_options()).unwrap();
        let out = build(&p, 300_000).unwrap();
        assert!(out.potential.replay_mismatches().is_empty());
        let (c, site) = out.potential.measured_c_global();
        assert_eq!(c, out.c_global.0);
        assert_eq!(site, out.c_global.1);
        // Rebuilding the trajectories from the stored potential alone.
        let mut states: Vec<Tracked> = p
            .eigen
            .iter()
            .map(|e| Tracked::new(e.id, e.energy, prufer::boundary_to_prufer(e.theta, &e.energy)))
            .collect();
        for piece in out.potential.pieces() {
            boundary_thread(&mut states, piece).unwrap();
        }
        for (s, g) in states.iter().zip(&out.eigen) {
            let last = g.trace.last().unwrap();
            assert_eq!(last.n, 300_000);
            assert_eq!(s.state.log_r.to_bits(), last.log_r.to_bits());
            assert_eq!(s.state.phase, last.phase);
        }
    }

    #[test]
    fn threading_the_file_reproduces_build_records() {
        let p = plan(&[1.0, -1.0, 0.5], &angles(&[0.7, 1.0, 0.5]), Mode::Finite, small_options()).unwrap();
        let out = build(&p, 100_000).unwrap();
        let again = thread_potential(&out.potential, &p.eigen, p.options.per_decade, None).unwrap();
        for (a, b) in out.eigen.iter().zip(&again) {
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.envelope, b.envelope);
            assert_eq!(a.sums, b.sums);
            assert_eq!(a.fit_from, b.fit_from);
        }
    }

    #[test]
    fn countable_respects_envelope() {
        let opts = GlueOptions {
            target_exponent: 0.01,
            stop_factor: 1.002,
            start_ratio: 0.3,
            envelope_ratio: 1.5,
            initial_gap: 1,
            per_decade: 20,
            ..Default::default()
        };
        let h = Envelope::Log;
        let p = plan(&[0.3, -0.3, 1.1], &angles(&[0.5, 0.5, 0.5]), Mode::Countable(h.clone()), opts).unwrap();
        let out = build(&p, 200_000).unwrap();
        let first = out.schedule[0].j_prev;
        for (n, v) in out.potential.iter().filter(|(n, _)| *n >= first) {
            assert!(v.abs() * (1.0 + n as f64) <= h.value(n));
        }
        for w in out.schedule.windows(2) {
            assert!(w[1].n_r == w[0].n_r || w[1].n_r == w[0].n_r + 1);
        }
    }

    #[test]
    fn bystander_matches_transfer_recursion() {
        let p = plan(&[1.0, -1.0, 0.5], &angles(&[0.7, 1.0, 0.5]), Mode::Finite, small_options()).unwrap();
        let out = build(&p, 20_000).unwrap();
        let g = &out.eigen[2];
        let u = crate::verify::solution_by_transfer(&out.potential, g.theta, g.energy.energy(), 19_999).unwrap();
        let norm_u = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut err: f64 = 0.0;
        for &(n, un) in g.u_samples.iter().filter(|s| s.0 < 20_000) {
            err = err.max((un - u[n as usize]).abs());
        }
        assert!(err / norm_u < 1e-8, "{err}");
    }
}

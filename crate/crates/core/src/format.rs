//! Text formats: the potential file (TOML) and comma-separated tables.
//!
//! Reals are written as strings with 17 significant digits (`{:.16e}`), which
//! round-trip every finite `f64` exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gluer::{GluedResult, ScheduleEntry};
use crate::model::{
    Anchor, CheckValue, EigenvalueMeta, EnergyPoint, PieceKind, Potential, PotentialPiece, SolutionTrace,
};
use crate::prufer;

pub const POTENTIAL_FORMAT: &str = "embedded-eigs-potential";
pub const POTENTIAL_VERSION: u32 = 1;

/// Exact decimal form of a real.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_real(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("bad real {s:?}: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
struct PotentialDoc {
    format: String,
    version: u32,
    horizon: u64,
    c_global: String,
    #[serde(default)]
    eigenvalues: Vec<EigenDoc>,
    pieces: Vec<PieceDoc>,
    #[serde(default)]
    checks: Vec<CheckDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EigenDoc {
    id: usize,
    energy: String,
    theta: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PieceDoc {
    start: u64,
    end: u64,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    energy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k1: Option<String>,
    #[serde(default)]
    b: i64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    anchors: Vec<AnchorDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnchorDoc {
    id: usize,
    angle: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckDoc {
    n: u64,
    v: String,
}

/// Serializes a potential with its metadata and reference values.
pub fn write_potential(p: &Potential) -> String {
    let doc = PotentialDoc {
        format: POTENTIAL_FORMAT.into(),
        version: POTENTIAL_VERSION,
        horizon: p.horizon(),
        c_global: real(p.c_global),
        eigenvalues: p
            .eigenvalues
            .iter()
            .map(|e| EigenDoc { id: e.id, energy: real(e.energy), theta: real(e.theta) })
            .collect(),
        pieces: p
            .pieces()
            .iter()
            .map(|piece| {
                let energy = piece.kind.energy();
                PieceDoc {
                    start: piece.start,
                    end: piece.end,
                    kind: piece.kind.name().into(),
                    energy: energy.map(|e| real(e.energy())),
                    k1: energy.map(|_| real(piece.k1)),
                    b: piece.b,
                    anchors: piece.anchors.iter().map(|a| AnchorDoc { id: a.id, angle: real(a.angle) }).collect(),
                }
            })
            .collect(),
        checks: p.checks.iter().map(|c| CheckDoc { n: c.n, v: real(c.v) }).collect(),
    };
    toml::to_string(&doc).expect("potential document serializes")
}

fn piece_from_doc(d: &PieceDoc) -> Result<PotentialPiece> {
    let energy = || -> Result<EnergyPoint> {
        let e = d.energy.as_deref().ok_or_else(|| Error::Parse(format!("piece at {} lacks an energy", d.start)))?;
        EnergyPoint::with_edge_delta(parse_real(e)?, 0.0)
    };
    let kind = match d.kind.as_str() {
        "zero" => PieceKind::Zero,
        "single" => PieceKind::Single(energy()?),
        "pair" => PieceKind::ResonantPair(energy()?),
        other => return Err(Error::Parse(format!("unknown piece kind {other:?}"))),
    };
    let k1 = match (&kind, &d.k1) {
        (PieceKind::Zero, _) => 0.0,
        (_, Some(k)) => parse_real(k)?,
        (_, None) => return Err(Error::Parse(format!("piece at {} lacks K1", d.start))),
    };
    let anchors =
        d.anchors.iter().map(|a| Ok(Anchor { id: a.id, angle: parse_real(&a.angle)? })).collect::<Result<_>>()?;
    Ok(PotentialPiece { start: d.start, end: d.end, kind, k1, b: d.b, anchors })
}

/// Parses and validates a potential file.
pub fn read_potential(text: &str) -> Result<Potential> {
    let doc: PotentialDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.format != POTENTIAL_FORMAT {
        return Err(Error::Parse(format!("unexpected format tag {:?}", doc.format)));
    }
    if doc.version != POTENTIAL_VERSION {
        return Err(Error::Parse(format!("unsupported version {}", doc.version)));
    }
    let pieces = doc.pieces.iter().map(piece_from_doc).collect::<Result<Vec<_>>>()?;
    let mut p = Potential::new(pieces)?;
    if p.horizon() != doc.horizon {
        return Err(Error::MalformedPotential(format!(
            "declared horizon {} but pieces end at {}",
            doc.horizon,
            p.horizon()
        )));
    }
    p.c_global = parse_real(&doc.c_global)?;
    p.eigenvalues = doc
        .eigenvalues
        .iter()
        .map(|e| Ok(EigenvalueMeta { id: e.id, energy: parse_real(&e.energy)?, theta: parse_real(&e.theta)? }))
        .collect::<Result<_>>()?;
    p.checks = doc.checks.iter().map(|c| Ok(CheckValue { n: c.n, v: parse_real(&c.v)? })).collect::<Result<_>>()?;
    Ok(p)
}

/// `n,log_r,theta,u` rows, one per sample.
pub fn trace_table(trace: &SolutionTrace) -> String {
    let mut out = String::from("n,log_r,theta,u\n");
    for s in &trace.samples {
        let u = prufer::prufer_to_solution(&s.state(), &trace.energy).u_cur;
        let _ = writeln!(out, "{},{},{},{}", s.n, real(s.log_r), real(s.phase.value()), real(u));
    }
    out
}

pub fn schedule_table(schedule: &[ScheduleEntry]) -> String {
    let mut out = String::from("r,n_r,t_r,j_prev,j_r,d_r,attempts,complete\n");
    for s in schedule {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.r, s.n_r, s.t_r, s.j_prev, s.j_r, s.d_r, s.attempts, s.complete
        );
    }
    out
}

/// One row per eigenvalue: ℓ² totals and envelope exponent.
pub fn l2_table(result: &GluedResult) -> String {
    let mut out = String::from("id,energy,theta,l2_total,last_decade_fraction,abs_exponent,fit_from\n");
    for g in &result.eigen {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            g.id,
            real(g.energy.energy()),
            real(g.theta.radians()),
            real(g.l2.total),
            real(g.l2.last_decade_fraction),
            real(g.l2.abs_exponent),
            g.fit_from
        );
    }
    out
}

/// Every site `n, V(n)` in `[lo, hi)`.
pub fn potential_table(p: &Potential, lo: u64, hi: u64) -> String {
    let mut out = String::from("n,v\n");
    for (n, v) in p.iter().skip(lo as usize).take(hi.saturating_sub(lo) as usize) {
        let _ = writeln!(out, "{n},{}", real(v));
    }
    out
}

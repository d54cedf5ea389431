//! Piecewise-affine realization of the staircase laminate on the unit square.
//!
//! Starting from f(x) = Jx, every cell whose gradient sits on the climb ray
//! n·J·R₀ is replaced by a striped perturbation f ← f + a·m with
//!
//! ```text
//!     m(x) = max(0, φ(x·ν) − Σ_E η·(w − d_E(x))₊),
//! ```
//!
//! where φ is the h-periodic sawtooth realizing one rank-one split
//! (slope 1−λ on a λh-band, −λ elsewhere, so the textured gradients are the
//! two split legs exactly), and the subtracted ramps taper m to zero at the
//! cell boundary, which keeps f globally continuous and pins f = Jx on the
//! boundary of the square bitwise. The taper costs a thin frame of "ramp"
//! pieces whose gradient deviates from the legs by at most 2·tilt·|a|; those
//! freeze. Flat frame pieces (m = 0, gradient unchanged) are re-split with a
//! halved period until an area floor. Two such splits per level (first onto
//! the T₁ atom, then onto the T₂ atom and the next climb gradient) implement
//! one staircase step with ρ = 0, θ = 0.
//!
//! Everything the construction claims is re-measurable from the mesh alone,
//! and [`audit_map`] does exactly that: partition of unity, continuity at
//! every vertex (including hanging nodes), exact boundary trace, retirement
//! distances, mean-gradient conservation (the divergence theorem makes
//! ∫ ∇f = A·|cell| exact for every phase), and nesting of the climb regions.

use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalMatrix, RealMatrix};
use crate::geometry::{HalfPlane, Poly, Vec2};
use crate::staircase::{iterate, StaircaseSequence};
use crate::targets::{Phase, TargetSpec};
use crate::{Error, Result};

fn c64(v: Vec2) -> Complex64 {
    Complex64::new(v.x, v.y)
}

/// An affine map f(x) = G·x + b with the plane identified with ℂ.
#[derive(Clone, Copy, Debug)]
pub struct AffineMap {
    pub grad: ConformalMatrix,
    pub off: Complex64,
}

impl AffineMap {
    pub fn new(grad: ConformalMatrix, off: Complex64) -> Self {
        Self { grad, off }
    }

    pub fn eval(&self, p: Vec2) -> Complex64 {
        self.grad.apply(c64(p)) + self.off
    }
}

/// One materialized rank-one split A = λ·left + (1−λ)·right with
/// left − right = a⊗ν.
#[derive(Clone, Copy, Debug)]
pub struct SplitLaw {
    pub parent: ConformalMatrix,
    pub lambda: f64,
    pub left: ConformalMatrix,
    pub right: ConformalMatrix,
    /// Real amplitude vector a of the rank-one difference.
    pub amp: Vec2,
    /// Real unit stripe normal ν.
    pub normal: Vec2,
}

impl SplitLaw {
    pub fn new(
        parent: ConformalMatrix,
        lambda: f64,
        left: ConformalMatrix,
        right: ConformalMatrix,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidInput(format!(
                "split weight λ = {lambda} outside (0, 1)"
            )));
        }
        let recombined = left.scale(lambda) + right.scale(1.0 - lambda);
        let scale = parent.hs_norm().max(left.hs_norm()).max(right.hs_norm());
        if (recombined - parent).hs_norm() > 1e-9 * scale.max(1.0) {
            return Err(Error::InvalidInput(
                "split legs do not recombine to the parent".into(),
            ));
        }
        let diff = left - right;
        let (a_c, n_c) = diff.rank_one_factor(1e-8).ok_or_else(|| {
            Error::InvalidInput("split legs do not differ by a rank-one matrix".into())
        })?;
        Ok(Self {
            parent,
            lambda,
            left,
            right,
            amp: Vec2::new(a_c.re, a_c.im),
            normal: Vec2::new(n_c.re, n_c.im),
        })
    }
}

/// How a single piece of a realized split relates to the split law.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PieceKind {
    /// Textured, gradient exactly `law.left`.
    Left,
    /// Textured, gradient exactly `law.right`.
    Right,
    /// m = 0: untouched datum (recycle candidate).
    Flat,
    /// Taper frame: gradient off the parent by ≤ (1 + 2·tilt)·|a|.
    Ramp,
}

#[derive(Clone, Debug)]
pub struct Piece {
    pub poly: Poly,
    pub f: AffineMap,
    pub kind: PieceKind,
}

/// Knobs of the single-split realization.
///
/// The taper eats a margin of width λ(1−λ)h/tilt from every tapered cell
/// edge, so a steep tilt keeps the frame thin at a coarse period: the lost
/// margin mass scales like frame_frac while stripe counts scale like
/// 1/(tilt·frame_frac). Steep tilts only affect frame pieces, which never
/// carry the split legs, and push their gradients to norms far above the
/// measured range.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Ramp slope η: taper pieces deviate from the parent gradient by at
    /// most (1 + 2·tilt)·|a| in Hilbert–Schmidt norm.
    pub tilt: f64,
    /// Maximum total taper width as a fraction of the narrow cell width.
    pub frame_frac: f64,
    pub min_stripes: u32,
    /// Stripe budget per split: the mesh builder freezes a leftover piece
    /// instead of re-splitting it when the taper constraint would demand
    /// more stripes than this.
    pub max_stripes: u32,
    /// Fraction of one period by which the stripe phase may be randomized.
    /// Zero keeps every split aligned to its cell, which exempts the faces
    /// perpendicular to the split normal from tapering.
    pub phase_jitter: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            tilt: 24.0,
            frame_frac: 0.015,
            min_stripes: 1,
            max_stripes: 64,
            phase_jitter: 0.0,
        }
    }
}

/// Stripe count that realizing `law` on `poly` requires. The period must be
/// fine enough that the taper margin, λ(1−λ)h/tilt eaten from each untapered
/// side, stays within frame_frac of the narrow cell width; the count follows
/// from the cell's extent along the split normal. Callers can compare this
/// against their stripe budget before committing to the split.
pub fn stripes_needed(poly: &Poly, law: &SplitLaw, opts: &SplitOptions, h_cap: Option<f64>) -> u32 {
    let (t_lo, t_hi) = poly.linear_range(law.normal);
    let (p_lo, p_hi) = poly.linear_range(law.normal.perp());
    let w_nu = t_hi - t_lo;
    let w_min = w_nu.min(p_hi - p_lo);
    let curvature = law.lambda * (1.0 - law.lambda);
    let h_max = (opts.tilt * opts.frame_frac * w_min / (2.0 * curvature))
        .min(h_cap.unwrap_or(f64::INFINITY));
    ((w_nu / h_max).ceil() as u32).max(1)
}

/// Realize one rank-one split on a convex cell carrying the affine datum
/// `f` (whose gradient must be `law.parent`). The returned pieces tile the
/// cell, agree with `f` on its boundary, and carry constant gradients; the
/// second component is the stripe period that was actually used, so callers
/// that recycle leftover flat pieces can retry them at a strictly finer
/// period. `phase` ∈ [0, 1) shifts the stripe pattern; `h_cap` optionally
/// caps the period.
pub fn realize_split(
    poly: &Poly,
    f: &AffineMap,
    law: &SplitLaw,
    opts: &SplitOptions,
    phase: f64,
    h_cap: Option<f64>,
) -> Result<(Vec<Piece>, f64)> {
    let nu = law.normal;
    let (t_lo, t_hi) = poly.linear_range(nu);
    let w_nu = t_hi - t_lo;
    if !(w_nu > 0.0) {
        return Err(Error::InvalidInput("degenerate cell".into()));
    }
    let lam = law.lambda;
    let curvature = lam * (1.0 - lam); // sawtooth amplitude per unit period
    let eta = opts.tilt;
    let stripes = stripes_needed(poly, law, opts, h_cap).max(opts.min_stripes);
    let h = w_nu / stripes as f64;
    let w_ramp = curvature * h / eta;

    // Stripe boundary lines: periods at t0 + j·h, switches at t0 + j·h + λh.
    let t0 = t_lo + (phase - 1.0) * h;
    let mut pieces: Vec<Poly> = vec![poly.clone()];
    let cut = |pieces: &mut Vec<Poly>, hp: HalfPlane| {
        let mut next = Vec::with_capacity(pieces.len() + 2);
        for p in pieces.drain(..) {
            let (a, b) = p.split(&hp);
            next.extend(a);
            next.extend(b);
        }
        *pieces = next;
    };
    let interior = 1e-9 * h;
    for j in 0..=(stripes + 1) {
        for line_t in [t0 + j as f64 * h, t0 + j as f64 * h + lam * h] {
            if line_t > t_lo + interior && line_t < t_hi - interior {
                cut(&mut pieces, HalfPlane::new(nu, line_t));
            }
        }
    }

    // Taper margin lines, one per cell edge, at inward distance w_ramp. An
    // edge lying in a period-node plane (perpendicular to ν, at t ≡ t0 mod
    // h) needs no taper: the sawtooth already vanishes there, so the datum
    // is preserved on that face without sacrificing any margin. With phase
    // 0 on a rectangle this exempts both faces perpendicular to ν.
    let edges: Vec<(Vec2, Vec2)> = poly
        .edges()
        .filter_map(|(a, b)| {
            let e = b - a;
            let len = e.norm();
            let inward = e.perp() * (1.0 / len);
            let on_node = nu.dot(e).abs() <= 1e-12 * len && {
                let r = (nu.dot(a) - t0) / h;
                (r - r.round()).abs() <= 1e-9
            };
            if on_node {
                None
            } else {
                Some((inward, a))
            }
        })
        .collect();
    for (inward, base) in &edges {
        let c = inward.dot(*base) + w_ramp;
        cut(&mut pieces, HalfPlane::new(*inward, c));
    }

    // Classify; pieces straddling their zero line get cut once more.
    let mut out: Vec<Piece> = Vec::with_capacity(pieces.len() * 2);
    let mut work: VecDeque<Poly> = pieces.into();
    let amp_c = c64(law.amp);
    let g_tol = 1e-13 * (w_nu + w_ramp).max(1.0);
    let mut guard = 0usize;
    while let Some(p) = work.pop_front() {
        guard += 1;
        if guard > 100_000 {
            return Err(Error::Invariant(
                "realize_split: piece classification did not terminate".into(),
            ));
        }
        let cen = p.centroid();
        // Sawtooth branch at the centroid.
        let tc = nu.dot(cen);
        let j = ((tc - t0) / h).floor();
        let frac = tc - t0 - j * h;
        let rising = frac < lam * h;
        let (slope, phi0) = if rising {
            (1.0 - lam, -(1.0 - lam) * (t0 + j * h))
        } else {
            (-lam, lam * (t0 + j * h + h))
        };
        // Active taper edges at the centroid. The taper r(x) = Σ η(w − d_E)
        // pulls m down toward each nearby edge, so ∇m gains +η·ν_inward per
        // active edge and the constant loses r(0).
        let mut ramp_grad = Vec2::new(0.0, 0.0);
        let mut ramp_off = 0.0;
        let mut ramp_edges = 0u32;
        for (inward, base) in &edges {
            if inward.dot(cen - *base) < w_ramp {
                ramp_grad = ramp_grad + *inward * eta;
                ramp_off += eta * (w_ramp + inward.dot(*base));
                ramp_edges += 1;
            }
        }
        // m(x) = ξ·x + m₀ on the textured side of the zero line.
        let xi = nu * slope + ramp_grad;
        let m0 = phi0 - ramp_off;
        let (g_min, g_max) = p
            .vertices()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                let g = xi.dot(*v) + m0;
                (lo.min(g), hi.max(g))
            });
        if g_max <= g_tol {
            out.push(Piece {
                poly: p,
                f: *f,
                kind: PieceKind::Flat,
            });
        } else if g_min >= -g_tol {
            let (kind, grad) = if ramp_edges == 0 {
                if rising {
                    (PieceKind::Left, law.left)
                } else {
                    (PieceKind::Right, law.right)
                }
            } else {
                (
                    PieceKind::Ramp,
                    law.parent + ConformalMatrix::tensor(amp_c, c64(xi)),
                )
            };
            out.push(Piece {
                poly: p,
                f: AffineMap::new(grad, f.off + amp_c * m0),
                kind,
            });
        } else {
            // Straddles m = 0: cut by the zero line and reclassify.
            let hp = HalfPlane::new(xi, -m0);
            let (flat_side, tex_side) = p.split(&hp);
            work.extend(flat_side);
            work.extend(tex_side);
        }
    }

    // Conservation audits: the pieces tile the cell and preserve its mean
    // gradient exactly (divergence theorem), for any phase. Shoelace areas
    // carry absolute rounding noise ≈ ε·D² per piece (D = coordinate scale),
    // independent of how small the cell is, and clipping a thin sliver by a
    // nearly parallel line amplifies that noise by the conditioning of the
    // intersection (measured up to ~500·ε per piece on recycled frame
    // strips). The tolerance is anchored to that noise floor rather than to
    // the cell area; genuine misassignment bugs produce drifts several
    // orders of magnitude above it because they scale with the piece areas.
    let dd = poly.diameter_bound().max(1e-30);
    let noise = 1e-11 * (out.len() as f64).max(1.0) * dd * dd;
    let total: f64 = out.iter().map(|p| p.poly.area()).sum();
    if (total - poly.area()).abs() > noise + 1e-12 * poly.area() {
        return Err(Error::Invariant(format!(
            "realize_split: pieces cover {total:.15} of cell area {:.15}",
            poly.area()
        )));
    }
    let mut mean = ConformalMatrix::zero();
    for piece in &out {
        mean = mean + piece.f.grad.scale(piece.poly.area());
    }
    let drift = (mean - law.parent.scale(poly.area())).hs_norm();
    let grad_scale = law.parent.hs_norm() + law.amp.norm();
    if drift > grad_scale * noise + 1e-11 * law.parent.hs_norm() * poly.area() {
        return Err(Error::Invariant(format!(
            "realize_split: mean gradient drifts by {drift:.3e} \
             (pieces {}, |parent| {:.3}, |amp| {:.3}, area {:.3e}, diam {:.3e})",
            out.len(),
            law.parent.hs_norm(),
            law.amp.norm(),
            poly.area(),
            dd
        )));
    }
    Ok((out, h))
}

/// Final status of a mesh cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// Gradient within γ of T₁ ∪ T₂ (measured, not assumed).
    Retired,
    /// Construction gave up here (taper deviation, area floor, or rounds).
    Frozen,
    /// Still on the climb ray when the level budget ran out.
    Climbing,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshCell {
    pub id: u64,
    /// Level at which the cell was finalized (climbing cells: n_levels + 1).
    pub level: u32,
    pub status: CellStatus,
    /// 1 or 2 when retired onto that target, else 0.
    pub retired_on: u8,
    pub poly: Poly,
    pub grad: RealMatrix,
    pub off: [f64; 2],
    /// Measured dist(∇f, T₁ ∪ T₂).
    pub target_dist: f64,
}

impl MeshCell {
    pub fn affine(&self) -> AffineMap {
        AffineMap::new(self.grad.into(), Complex64::new(self.off[0], self.off[1]))
    }
}

/// Per-level accounting of the construction.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LevelStats {
    pub n: u32,
    pub cells_in: u64,
    pub area_in: f64,
    pub retired_t1_area: f64,
    pub retired_t2_area: f64,
    pub frozen_area: f64,
    pub climb_cells_out: u64,
    pub climb_area_out: f64,
    /// Measured climb ratio |Ω_{n+1}|/|Ω_n|.
    pub ratio: f64,
    /// Ideal sandwich for the ratio: [max(0, β_n), β_{n+2}].
    pub beta_lo: f64,
    pub beta_hi: f64,
}

/// Snapshot of the climb region Ω_n (disjoint convex polygons).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OmegaLevel {
    pub level: u32,
    pub polys: Vec<Poly>,
}

/// Run parameters of the mesh construction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RealizeConfig {
    pub n_levels: u32,
    /// Retirement radius γ.
    pub gamma: f64,
    /// Hard cap on the number of final cells.
    pub budget: u64,
    pub seed: u64,
    pub split: SplitOptions,
    /// Cells are pre-cut to aspect ratio ≤ this before splitting.
    pub aspect_cap: f64,
    /// Flat-frame recycle attempts per split before freezing.
    pub recycle_rounds: u32,
    /// Pieces below this area freeze immediately.
    pub area_floor: f64,
}

impl Default for RealizeConfig {
    fn default() -> Self {
        Self {
            n_levels: 8,
            gamma: 0.05,
            budget: 1_000_000,
            seed: 1,
            split: SplitOptions::default(),
            aspect_cap: 3.0,
            recycle_rounds: 0,
            area_floor: 1e-12,
        }
    }
}

/// The realized map: final cells plus all construction metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StaircaseMap {
    pub schema: String,
    pub big_k: f64,
    pub big_s1: f64,
    pub big_s2: f64,
    pub config: RealizeConfig,
    pub levels: Vec<LevelStats>,
    pub omega: Vec<OmegaLevel>,
    pub cells: Vec<MeshCell>,
    pub retired_area: f64,
    pub frozen_area: f64,
    pub climbing_area: f64,
}

pub const MESH_SCHEMA: &str = "gradint-mesh/1";

impl StaircaseMap {
    pub fn write_json(&self, w: impl std::io::Write) -> Result<()> {
        serde_json::to_writer(w, self)
            .map_err(|e| Error::InvalidInput(format!("mesh serialization: {e}")))
    }

    pub fn read_json(r: impl std::io::Read) -> Result<Self> {
        let map: StaircaseMap = serde_json::from_reader(r)
            .map_err(|e| Error::InvalidInput(format!("mesh parse: {e}")))?;
        if map.schema != MESH_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "unsupported mesh schema {:?} (expected {MESH_SCHEMA:?})",
                map.schema
            )));
        }
        Ok(map)
    }

    /// (area, |∇f|_HS) samples over all cells.
    pub fn gradient_samples(&self) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .map(|c| {
                let g: ConformalMatrix = c.grad.into();
                (c.poly.area(), g.hs_norm())
            })
            .collect()
    }
}

struct WorkItem {
    poly: Poly,
    f: AffineMap,
    stage: Stage,
    rounds: u32,
    h_cap: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    /// Split towards the T₁ atom (law 2 of the level).
    Two,
    /// Split towards the T₂ atom and the next climb gradient (law 3).
    Three,
}

/// Build the piecewise-affine staircase map for the exact θ = 0 cascade.
pub fn build_staircase_map(spec: &TargetSpec, cfg: &RealizeConfig) -> Result<StaircaseMap> {
    if cfg.n_levels == 0 {
        return Err(Error::InvalidInput("n_levels must be ≥ 1".into()));
    }
    if !(cfg.gamma > 0.0) {
        return Err(Error::InvalidInput("gamma must be positive".into()));
    }
    let seq: StaircaseSequence = iterate(spec, 0.0, cfg.n_levels)?;
    let conn = spec.connect_to_conjugation(0.0, seq.tf.a)?;

    // Per-level split laws (exact atoms of the ρ = 0 cascade).
    let mut law2: Vec<SplitLaw> = Vec::new();
    let mut law3: Vec<SplitLaw> = Vec::new();
    for row in &seq.levels {
        let nf = row.n as f64;
        let jr_n = ConformalMatrix::conjugation().scale(nf);
        let jr_next = ConformalMatrix::conjugation().scale(nf + 1.0);
        let atom_t1 = conn.q1.scale(nf);
        let atom_t2 = conn.q2.scale(nf + 1.0);
        let p_mid = (jr_n - atom_t1.scale(row.mu2)).scale(1.0 / (1.0 - row.mu2));
        law2.push(SplitLaw::new(jr_n, row.mu2, atom_t1, p_mid)?);
        law3.push(SplitLaw::new(p_mid, row.mu3, atom_t2, jr_next)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cells: Vec<MeshCell> = Vec::new();
    let mut levels: Vec<LevelStats> = Vec::new();
    let mut omega: Vec<OmegaLevel> = Vec::new();
    let mut next_id: u64 = 0;

    let square = Poly::rect(0.0, 0.0, 1.0, 1.0)?;
    let f1 = AffineMap::new(ConformalMatrix::conjugation(), Complex64::new(0.0, 0.0));
    omega.push(OmegaLevel {
        level: 1,
        polys: vec![square.clone()],
    });
    let mut active: Vec<(Poly, AffineMap)> = vec![(square, f1)];
    let mut area_in = 1.0;

    for n in 1..=cfg.n_levels {
        let li = (n - 1) as usize;
        let mut stats = LevelStats {
            n,
            cells_in: active.len() as u64,
            area_in,
            beta_lo: seq.tf.beta(n).max(0.0),
            beta_hi: seq.tf.beta(n + 2),
            ..LevelStats::default()
        };
        let mut next_active: Vec<(Poly, AffineMap)> = Vec::new();
        let mut queue: VecDeque<WorkItem> = active
            .drain(..)
            .map(|(poly, f)| WorkItem {
                poly,
                f,
                stage: Stage::Two,
                rounds: 0,
                h_cap: None,
            })
            .collect();

        while let Some(item) = queue.pop_front() {
            let budget_used = cells.len() as u64 + queue.len() as u64 + next_active.len() as u64;
            if budget_used > cfg.budget {
                return Err(Error::BudgetExhausted(format!(
                    "cell budget {} exceeded at level {n}",
                    cfg.budget
                )));
            }
            let area = item.poly.area();
            let law = match item.stage {
                Stage::Two => &law2[li],
                Stage::Three => &law3[li],
            };

            // Give up on dust and on cells that resisted too many rounds.
            if area < cfg.area_floor || item.rounds > cfg.recycle_rounds {
                finalize(
                    &mut cells,
                    &mut next_id,
                    spec,
                    cfg,
                    n,
                    item.poly,
                    item.f,
                    &mut stats,
                );
                continue;
            }

            // Pre-cut to bounded aspect ratio: a straight cut through an
            // affine cell is free (both sides keep the same affine map).
            if let Some((a, b)) = chunk(&item.poly, law.normal, cfg.aspect_cap) {
                for poly in [a, b] {
                    queue.push_back(WorkItem {
                        poly,
                        f: item.f,
                        stage: item.stage,
                        rounds: item.rounds,
                        h_cap: item.h_cap,
                    });
                }
                continue;
            }

            // A piece whose taper constraint demands more stripes than the
            // budget allows (recycled margins of margins need quadratically
            // many) is frozen rather than shattered.
            if stripes_needed(&item.poly, law, &cfg.split, item.h_cap) > cfg.split.max_stripes {
                finalize(
                    &mut cells,
                    &mut next_id,
                    spec,
                    cfg,
                    n,
                    item.poly,
                    item.f,
                    &mut stats,
                );
                continue;
            }

            let phase: f64 = rng.gen::<f64>() * cfg.split.phase_jitter;
            let (pieces, used_h) =
                realize_split(&item.poly, &item.f, law, &cfg.split, phase, item.h_cap)?;

            // No-progress guard: if nearly everything stayed flat, retry the
            // whole cell with a finer period instead of recursing on frames.
            let flat_area: f64 = pieces
                .iter()
                .filter(|p| p.kind == PieceKind::Flat)
                .map(|p| p.poly.area())
                .sum();
            if flat_area > 0.9 * area && item.rounds < cfg.recycle_rounds {
                queue.push_back(WorkItem {
                    poly: item.poly,
                    f: item.f,
                    stage: item.stage,
                    rounds: item.rounds + 1,
                    h_cap: Some(used_h / 2.0),
                });
                continue;
            }

            for piece in pieces {
                match (piece.kind, item.stage) {
                    (PieceKind::Flat, _) if item.rounds < cfg.recycle_rounds => {
                        queue.push_back(WorkItem {
                            poly: piece.poly,
                            f: piece.f,
                            stage: item.stage,
                            rounds: item.rounds + 1,
                            h_cap: Some(used_h / 2.0),
                        })
                    }
                    (PieceKind::Flat, _) => finalize(
                        &mut cells,
                        &mut next_id,
                        spec,
                        cfg,
                        n,
                        piece.poly,
                        piece.f,
                        &mut stats,
                    ),
                    (PieceKind::Left, _) | (PieceKind::Ramp, _) => finalize(
                        &mut cells,
                        &mut next_id,
                        spec,
                        cfg,
                        n,
                        piece.poly,
                        piece.f,
                        &mut stats,
                    ),
                    (PieceKind::Right, Stage::Two) => queue.push_back(WorkItem {
                        poly: piece.poly,
                        f: piece.f,
                        stage: Stage::Three,
                        rounds: 0,
                        h_cap: None,
                    }),
                    (PieceKind::Right, Stage::Three) => {
                        stats.climb_cells_out += 1;
                        stats.climb_area_out += piece.poly.area();
                        next_active.push((piece.poly, piece.f));
                    }
                }
            }
        }

        stats.ratio = stats.climb_area_out / stats.area_in.max(f64::MIN_POSITIVE);
        area_in = stats.climb_area_out;
        omega.push(OmegaLevel {
            level: n + 1,
            polys: next_active.iter().map(|(p, _)| p.clone()).collect(),
        });
        levels.push(stats);
        active = next_active;
    }

    // Whatever still climbs is finalized as such.
    for (poly, f) in active.drain(..) {
        let id = next_id;
        next_id += 1;
        let grad = f.grad;
        let (dist, _) = nearest_target(spec, grad);
        cells.push(MeshCell {
            id,
            level: cfg.n_levels + 1,
            status: CellStatus::Climbing,
            retired_on: 0,
            poly,
            grad: grad.into(),
            off: [f.off.re, f.off.im],
            target_dist: dist,
        });
    }

    let mut retired_area = 0.0;
    let mut frozen_area = 0.0;
    let mut climbing_area = 0.0;
    for c in &cells {
        match c.status {
            CellStatus::Retired => retired_area += c.poly.area(),
            CellStatus::Frozen => frozen_area += c.poly.area(),
            CellStatus::Climbing => climbing_area += c.poly.area(),
        }
    }

    Ok(StaircaseMap {
        schema: MESH_SCHEMA.to_string(),
        big_k: spec.params.big_k,
        big_s1: spec.params.big_s1,
        big_s2: spec.params.big_s2,
        config: *cfg,
        levels,
        omega,
        cells,
        retired_area,
        frozen_area,
        climbing_area,
    })
}

/// Cut a cell across its long direction once if its aspect ratio (measured
/// in the split frame ν, ν⊥) exceeds the cap.
fn chunk(poly: &Poly, nu: Vec2, cap: f64) -> Option<(Poly, Poly)> {
    let (t_lo, t_hi) = poly.linear_range(nu);
    let perp = nu.perp();
    let (p_lo, p_hi) = poly.linear_range(perp);
    let (w_t, w_p) = (t_hi - t_lo, p_hi - p_lo);
    let (dir, lo, hi) = if w_t >= w_p {
        (nu, t_lo, t_hi)
    } else {
        (perp, p_lo, p_hi)
    };
    if (hi - lo) <= cap * w_t.min(w_p) {
        return None;
    }
    let mid = 0.5 * (lo + hi);
    let (a, b) = poly.split(&HalfPlane::new(dir, mid));
    match (a, b) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    }
}

fn nearest_target(spec: &TargetSpec, g: ConformalMatrix) -> (f64, u8) {
    let (phase, dist) = spec.dist_to_union(g);
    let which = match phase {
        Phase::One => 1,
        Phase::Two => 2,
    };
    (dist, which)
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    cells: &mut Vec<MeshCell>,
    next_id: &mut u64,
    spec: &TargetSpec,
    cfg: &RealizeConfig,
    level: u32,
    poly: Poly,
    f: AffineMap,
    stats: &mut LevelStats,
) {
    let (dist, which) = nearest_target(spec, f.grad);
    let area = poly.area();
    let (status, retired_on) = if dist < cfg.gamma {
        match which {
            1 => stats.retired_t1_area += area,
            _ => stats.retired_t2_area += area,
        }
        (CellStatus::Retired, which)
    } else {
        stats.frozen_area += area;
        (CellStatus::Frozen, 0)
    };
    let id = *next_id;
    *next_id += 1;
    cells.push(MeshCell {
        id,
        level,
        status,
        retired_on,
        poly,
        grad: f.grad.into(),
        off: [f.off.re, f.off.im],
        target_dist: dist,
    });
}

/// Everything `verify` re-measures from a mesh.
#[derive(Clone, Debug, Serialize)]
pub struct MapAudit {
    /// |Σ cell areas − 1|.
    pub partition_err: f64,
    /// Max |f_i(v) − f_j(v)| over all vertices v and incident cells i, j
    /// (hanging nodes included).
    pub continuity_max: f64,
    /// Max |f(v) − Jv| over boundary vertices.
    pub boundary_max: f64,
    /// Max measured dist(∇f, T) over retired cells.
    pub retired_max_dist: f64,
    pub retired_cells: u64,
    /// |Σ area·∇f − J| (must vanish: divergence theorem).
    pub mean_grad_err: f64,
    /// Ω areas by level (index 0 = level 1).
    pub omega_areas: Vec<f64>,
    /// True when every Ω_{n+1} polygon sits inside some Ω_n polygon.
    pub omega_nested: bool,
    /// Worst |ratio − sandwich| excess over levels (0 when all inside).
    pub sandwich_excess: f64,
    pub frozen_area: f64,
}

impl MapAudit {
    /// Human-readable list of violated invariants, empty when the mesh is
    /// sound. Comparisons are written so that NaN counts as a failure.
    pub fn failures(&self, gamma: f64) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.partition_err < 1e-9) {
            out.push(format!(
                "partition: |Σ cell areas − 1| = {:.3e} (gate 1e-9)",
                self.partition_err
            ));
        }
        if !(self.continuity_max < 1e-9) {
            out.push(format!(
                "continuity: max vertex jump = {:.3e} (gate 1e-9)",
                self.continuity_max
            ));
        }
        if !(self.boundary_max < 1e-12) {
            out.push(format!(
                "boundary: max |f(v) − Jv| = {:.3e} (gate 1e-12)",
                self.boundary_max
            ));
        }
        if !(self.retired_max_dist < gamma) {
            out.push(format!(
                "retirement: max dist(∇f, T) = {:.6} over retired cells (gate γ = {gamma})",
                self.retired_max_dist
            ));
        }
        if !(self.mean_grad_err < 1e-7) {
            out.push(format!(
                "mean gradient: |Σ area·∇f − J| = {:.3e} (gate 1e-7)",
                self.mean_grad_err
            ));
        }
        if !self.omega_nested {
            out.push("nesting: some Ω_{n+1} polygon is not inside Ω_n".into());
        }
        out
    }

    /// The pass/fail gate used by the verify command.
    pub fn passes(&self, gamma: f64) -> bool {
        self.failures(gamma).is_empty()
    }
}

/// Re-measure all mesh invariants from the cells alone.
pub fn audit_map(map: &StaircaseMap, spec: &TargetSpec) -> MapAudit {
    let total: f64 = map.cells.iter().map(|c| c.poly.area()).sum();
    let partition_err = (total - 1.0).abs();

    // Mean gradient.
    let mut mean = ConformalMatrix::zero();
    for c in &map.cells {
        let g: ConformalMatrix = c.grad.into();
        mean = mean + g.scale(c.poly.area());
    }
    let mean_grad_err = (mean - ConformalMatrix::conjugation()).hs_norm();

    // Spatial index over cells for point queries.
    let index = GridIndex::build(&map.cells);

    // Continuity at every (quantized) vertex over all containing cells.
    let mut verts: HashMap<(i64, i64), Vec2> = HashMap::new();
    for c in &map.cells {
        for v in c.poly.vertices() {
            verts.entry(quantize(*v)).or_insert(*v);
        }
    }
    let mut continuity_max = 0.0f64;
    let mut boundary_max = 0.0f64;
    for v in verts.values() {
        let mut lo_re = f64::INFINITY;
        let mut hi_re = f64::NEG_INFINITY;
        let mut lo_im = f64::INFINITY;
        let mut hi_im = f64::NEG_INFINITY;
        let mut any = false;
        for &ci in index.candidates(*v) {
            let cell = &map.cells[ci];
            if cell.poly.contains(*v, 1e-10) {
                let fv = cell.affine().eval(*v);
                lo_re = lo_re.min(fv.re);
                hi_re = hi_re.max(fv.re);
                lo_im = lo_im.min(fv.im);
                hi_im = hi_im.max(fv.im);
                any = true;
            }
        }
        if any {
            continuity_max = continuity_max
                .max(hi_re - lo_re)
                .max(hi_im - lo_im);
        }
        if on_boundary(*v) {
            // f must equal Jx = conj(x) here.
            let expect = Complex64::new(v.x, -v.y);
            for &ci in index.candidates(*v) {
                let cell = &map.cells[ci];
                if cell.poly.contains(*v, 1e-10) {
                    let fv = cell.affine().eval(*v);
                    boundary_max = boundary_max.max((fv - expect).norm());
                }
            }
        }
    }

    // Retirement distances, recomputed from stored gradients.
    let mut retired_max_dist = 0.0f64;
    let mut retired_cells = 0u64;
    let mut frozen_area = 0.0;
    for c in &map.cells {
        match c.status {
            CellStatus::Retired => {
                retired_cells += 1;
                let g: ConformalMatrix = c.grad.into();
                retired_max_dist = retired_max_dist.max(spec.dist_to_union(g).1);
            }
            CellStatus::Frozen => frozen_area += c.poly.area(),
            CellStatus::Climbing => {}
        }
    }

    // Ω nesting: every deeper polygon inside some parent polygon.
    let mut omega_nested = true;
    let mut omega_areas = Vec::new();
    for (i, level) in map.omega.iter().enumerate() {
        omega_areas.push(level.polys.iter().map(Poly::area).sum::<f64>());
        if i == 0 {
            continue;
        }
        let parents = &map.omega[i - 1].polys;
        for child in &level.polys {
            let inside = parents.iter().any(|parent| {
                child
                    .vertices()
                    .iter()
                    .all(|v| parent.contains(*v, 1e-9))
            });
            if !inside {
                omega_nested = false;
            }
        }
    }
    for w in omega_areas.windows(2) {
        if w[1] > w[0] + 1e-9 {
            omega_nested = false;
        }
    }

    // Level-ratio sandwich excess.
    let mut sandwich_excess = 0.0f64;
    for row in &map.levels {
        if row.ratio < row.beta_lo {
            sandwich_excess = sandwich_excess.max(row.beta_lo - row.ratio);
        }
        if row.ratio > row.beta_hi {
            sandwich_excess = sandwich_excess.max(row.ratio - row.beta_hi);
        }
    }

    MapAudit {
        partition_err,
        continuity_max,
        boundary_max,
        retired_max_dist,
        retired_cells,
        mean_grad_err,
        omega_areas,
        omega_nested,
        sandwich_excess,
        frozen_area,
    }
}

fn quantize(v: Vec2) -> (i64, i64) {
    ((v.x * 1e12).round() as i64, (v.y * 1e12).round() as i64)
}

fn on_boundary(v: Vec2) -> bool {
    let near = |a: f64, b: f64| (a - b).abs() < 1e-12;
    near(v.x, 0.0) || near(v.x, 1.0) || near(v.y, 0.0) || near(v.y, 1.0)
}

/// Uniform-grid spatial index over cell bounding boxes.
struct GridIndex {
    buckets: HashMap<(i32, i32), Vec<usize>>,
    inv: f64,
}

impl GridIndex {
    fn build(cells: &[MeshCell]) -> Self {
        let inv = 64.0;
        let mut buckets: HashMap<(i32, i32), Vec<usize>> = HashMap::new();
        for (i, c) in cells.iter().enumerate() {
            let (mut x0, mut y0, mut x1, mut y1) =
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for v in c.poly.vertices() {
                x0 = x0.min(v.x);
                y0 = y0.min(v.y);
                x1 = x1.max(v.x);
                y1 = y1.max(v.y);
            }
            let eps = 1e-9;
            let (bx0, by0) = (((x0 - eps) * inv).floor() as i32, ((y0 - eps) * inv).floor() as i32);
            let (bx1, by1) = (((x1 + eps) * inv).floor() as i32, ((y1 + eps) * inv).floor() as i32);
            for bx in bx0..=bx1 {
                for by in by0..=by1 {
                    buckets.entry((bx, by)).or_default().push(i);
                }
            }
        }
        Self { buckets, inv }
    }

    fn candidates(&self, v: Vec2) -> &[usize] {
        let key = ((v.x * self.inv).floor() as i32, (v.y * self.inv).floor() as i32);
        self.buckets.get(&key).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Area-weighted σ assignment on retired cells: σ_{phase} where the cell
/// retired. Returns (cell index, σ as rows) pairs.
pub fn sigma_field(map: &StaircaseMap, spec: &TargetSpec) -> Vec<(usize, [[f64; 2]; 2])> {
    let s1 = spec.params.sigma1();
    let s2 = spec.params.sigma2();
    map.cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.status == CellStatus::Retired)
        .map(|(i, c)| (i, if c.retired_on == 1 { s1 } else { s2 }))
        .collect()
}

//! Finitely supported gradient measures (laminates) and their splitting trees.
//!
//! A laminate of finite order is built from a Dirac mass by repeatedly
//! splitting an atom A into λ·B + (1−λ)·C with B − C rank one. The tree of
//! splits is the construction plan the mesh layer replays; the flattened
//! leaves with their product weights are the measure itself. Both are kept:
//! the tree for realization, the atom list for moments, tails and export.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalMatrix, RealMatrix};
use crate::{tol, Error, Result};

/// One atom of a laminate: a matrix with its mass.
#[derive(Clone, Copy, Debug)]
pub struct Atom {
    pub matrix: ConformalMatrix,
    pub weight: f64,
}

/// Binary splitting tree. Every interior node records the matrix it splits
/// and the weight λ of its left child; leaves carry the support points.
#[derive(Clone, Debug)]
pub enum SplitTree {
    Leaf {
        matrix: ConformalMatrix,
    },
    Split {
        matrix: ConformalMatrix,
        lambda: f64,
        left: Box<SplitTree>,
        right: Box<SplitTree>,
    },
}

impl SplitTree {
    pub fn leaf(matrix: ConformalMatrix) -> Self {
        SplitTree::Leaf { matrix }
    }

    /// Combine two subtrees into a split node. The parent matrix is computed
    /// as λ·left + (1−λ)·right; the difference must be rank one within
    /// `rank_tol` (relative defect) and λ must lie in (0, 1).
    pub fn split(lambda: f64, left: SplitTree, right: SplitTree, rank_tol: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidInput(format!(
                "split weight λ = {lambda} outside (0, 1)"
            )));
        }
        let lm = left.matrix();
        let rm = right.matrix();
        let diff = lm - rm;
        if !diff.is_rank_one(rank_tol) {
            return Err(Error::Invariant(format!(
                "split legs differ by a non-rank-one matrix: defect {:.3e} > {rank_tol:.0e}",
                diff.rank_one_defect()
            )));
        }
        Ok(SplitTree::Split {
            matrix: lm.scale(lambda) + rm.scale(1.0 - lambda),
            lambda,
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    pub fn matrix(&self) -> ConformalMatrix {
        match self {
            SplitTree::Leaf { matrix } | SplitTree::Split { matrix, .. } => *matrix,
        }
    }

    /// Leaves with product weights, depth-first left-to-right. Iterative so
    /// that chain-shaped trees of arbitrary depth are safe.
    pub fn leaves(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        let mut stack = vec![(self, 1.0f64)];
        while let Some((node, w)) = stack.pop() {
            match node {
                SplitTree::Leaf { matrix } => out.push(Atom {
                    matrix: *matrix,
                    weight: w,
                }),
                SplitTree::Split {
                    lambda,
                    left,
                    right,
                    ..
                } => {
                    // Push right first so the left leg is emitted first.
                    stack.push((right, w * (1.0 - lambda)));
                    stack.push((left, w * lambda));
                }
            }
        }
        out
    }

    /// Walk every split node, checking the barycenter identity and the
    /// rank-one constraint.
    pub fn validate(&self, rank_tol: f64) -> Result<()> {
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if let SplitTree::Split {
                matrix,
                lambda,
                left,
                right,
            } = node
            {
                let combo = left.matrix().scale(*lambda) + right.matrix().scale(1.0 - lambda);
                let scale = matrix.hs_norm().max(1.0);
                if (combo - *matrix).hs_norm() > 1e-12 * scale {
                    return Err(Error::Invariant(format!(
                        "split node barycenter mismatch: |λB+(1−λ)C − A| = {:.3e}",
                        (combo - *matrix).hs_norm()
                    )));
                }
                let diff = left.matrix() - right.matrix();
                if !diff.is_rank_one(rank_tol) {
                    return Err(Error::Invariant(format!(
                        "split legs not rank-one connected: defect {:.3e}",
                        diff.rank_one_defect()
                    )));
                }
                stack.push(left);
                stack.push(right);
            }
        }
        Ok(())
    }
}

/// A laminate: the splitting tree plus its flattened atoms.
#[derive(Clone, Debug)]
pub struct Laminate {
    tree: SplitTree,
    atoms: Vec<Atom>,
}

/// Serialized atom row (one JSON object per line).
#[derive(Serialize, Deserialize)]
struct AtomRow {
    matrix: RealMatrix,
    weight: f64,
}

impl Laminate {
    /// The Dirac mass at a single matrix.
    pub fn dirac(matrix: ConformalMatrix) -> Self {
        Self {
            tree: SplitTree::leaf(matrix),
            atoms: vec![Atom {
                matrix,
                weight: 1.0,
            }],
        }
    }

    /// Wrap a finished tree, validating its structure and flattening the
    /// leaves. Duplicate leaves (same matrix within the merge tolerance) are
    /// combined in the atom list; the tree keeps its shape.
    pub fn from_tree(tree: SplitTree, rank_tol: f64) -> Result<Self> {
        tree.validate(rank_tol)?;
        let mut atoms = tree.leaves();
        merge_atoms(&mut atoms, tol::MERGE);
        let lam = Self { tree, atoms };
        lam.check_mass()?;
        Ok(lam)
    }

    fn check_mass(&self) -> Result<()> {
        let total: f64 = self.atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > tol::WEIGHT_SUM * self.atoms.len().max(1) as f64 {
            return Err(Error::Invariant(format!(
                "laminate mass {total:.17} deviates from 1 beyond tolerance"
            )));
        }
        Ok(())
    }

    pub fn tree(&self) -> &SplitTree {
        &self.tree
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// First moment ∫ ξ dν.
    pub fn barycenter(&self) -> ConformalMatrix {
        self.atoms
            .iter()
            .fold(ConformalMatrix::zero(), |acc, a| {
                acc + a.matrix.scale(a.weight)
            })
    }

    /// ∫ |ξ|^p dν in the Hilbert–Schmidt norm.
    pub fn p_moment(&self, p: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * a.matrix.hs_norm().powf(p))
            .sum()
    }

    /// ν({|ξ| > t}).
    pub fn tail_mass(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.matrix.hs_norm() > t)
            .map(|a| a.weight)
            .sum()
    }

    /// Drop atoms with weight below [`tol::PRUNE`] (numerically extinct mass).
    pub fn prune(&mut self) {
        self.atoms.retain(|a| a.weight >= tol::PRUNE);
    }

    /// Atoms one JSON object per line.
    pub fn write_atoms_jsonl(&self, mut w: impl Write) -> Result<()> {
        for a in &self.atoms {
            let row = AtomRow {
                matrix: a.matrix.into(),
                weight: a.weight,
            };
            serde_json::to_writer(&mut w, &row)
                .map_err(|e| Error::InvalidInput(format!("serialize atom: {e}")))?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parse atoms from JSON-lines (no tree; the result is a flat measure
    /// wrapped in a single-level tree for inspection purposes only).
    pub fn read_atoms_jsonl(r: impl BufRead) -> Result<Vec<Atom>> {
        let mut atoms = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: AtomRow = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("parse atom line: {e}")))?;
            atoms.push(Atom {
                matrix: row.matrix.into(),
                weight: row.weight,
            });
        }
        Ok(atoms)
    }
}

/// Merge atoms whose matrices agree within `rel` of the larger scale.
/// Sort-based: exact duplicates (the common case from tree flattening) land
/// adjacent and are combined in one pass.
pub fn merge_atoms(atoms: &mut Vec<Atom>, rel: f64) {
    if atoms.len() < 2 {
        return;
    }
    atoms.sort_by(|a, b| {
        let ka = atom_key(a);
        let kb = atom_key(b);
        ka.partial_cmp(&kb).expect("finite matrices")
    });
    let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms.drain(..) {
        if let Some(last) = merged.last_mut() {
            let scale = last.matrix.hs_norm().max(a.matrix.hs_norm()).max(1e-300);
            if (last.matrix - a.matrix).hs_norm() <= rel * scale {
                // Weighted average keeps the barycenter exact under merge.
                let w = last.weight + a.weight;
                if w > 0.0 {
                    last.matrix = last
                        .matrix
                        .scale(last.weight / w)
                        .add(a.matrix.scale(a.weight / w));
                }
                last.weight = w;
                continue;
            }
        }
        merged.push(a);
    }
    *atoms = merged;
}

fn atom_key(a: &Atom) -> [f64; 4] {
    [
        a.matrix.plus.re,
        a.matrix.plus.im,
        a.matrix.minus.re,
        a.matrix.minus.im,
    ]
}

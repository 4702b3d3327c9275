//! The local-parallel refinement schedule.
//!
//! A quarter of the high-resolution cells survive as context; every other
//! cell is assigned to one decoding iteration. The compressed plan runs a
//! fixed 6 iterations with `iteration(r, c) = (r + c) mod 6`, which keeps
//! orthogonal neighbors in different iterations by construction. The
//! uncompressed plan groups cells by the diagonal index of their local
//! `sigma x sigma` window, `(r mod sigma) + (c mod sigma)`, giving
//! `2*sigma - 1` groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const COMPRESSED_ITERATIONS: usize = 6;

pub const KEPT: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeepPattern {
    /// Cells with even row and even column within each sigma tile;
    /// exactly 25% when sigma is even.
    Grid,
    /// Seeded random choice with a per-tile quota of sigma^2/4 cells.
    SeededRandom { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanKind {
    /// 6 iterations, `(r + c) mod 6`.
    Compressed,
    /// `2*sigma - 1` diagonal groups within each local window.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoParSchedule {
    pub height: usize,
    pub width: usize,
    pub sigma: usize,
    /// Total iteration count T.
    pub iterations: usize,
    /// Row-major cell plan: [`KEPT`] or an iteration index in `0..T`.
    pub cells: Vec<i32>,
}

impl LoParSchedule {
    #[inline]
    pub fn cell(&self, r: usize, c: usize) -> i32 {
        self.cells[r * self.width + c]
    }

    pub fn is_kept(&self, r: usize, c: usize) -> bool {
        self.cell(r, c) == KEPT
    }

    pub fn kept_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v == KEPT).count()
    }

    /// Cells of one iteration, raster order.
    pub fn group(&self, t: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.cell(r, c) == t as i32 {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Orthogonally adjacent cell pairs sharing an iteration index.
    pub fn adjacent_same_iteration_pairs(&self) -> usize {
        let mut bad = 0;
        for r in 0..self.height {
            for c in 0..self.width {
                let v = self.cell(r, c);
                if v == KEPT {
                    continue;
                }
                if r + 1 < self.height && self.cell(r + 1, c) == v {
                    bad += 1;
                }
                if c + 1 < self.width && self.cell(r, c + 1) == v {
                    bad += 1;
                }
            }
        }
        bad
    }

    /// Structural invariants: every cell kept or assigned exactly one
    /// iteration in range, and no orthogonal neighbors share one.
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.height * self.width {
            return Err(Error::InvalidArgument("cell plan size mismatch".into()));
        }
        for &v in &self.cells {
            if v != KEPT && !(0..self.iterations as i32).contains(&v) {
                return Err(Error::InvalidArgument(format!("iteration index {v} out of range")));
            }
        }
        if self.adjacent_same_iteration_pairs() != 0 {
            return Err(Error::InvalidArgument(
                "orthogonally adjacent cells share an iteration".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<&[i32]> = self.cells.chunks(self.width).collect();
        serde_json::json!({
            "height": self.height,
            "width": self.width,
            "sigma": self.sigma,
            "iterations": self.iterations,
            "cells": rows,
        })
        .to_string()
    }

    pub fn from_json(s: &str) -> Result<LoParSchedule> {
        #[derive(Deserialize)]
        struct Wire {
            height: usize,
            width: usize,
            sigma: usize,
            iterations: usize,
            cells: Vec<Vec<i32>>,
        }
        let w: Wire = serde_json::from_str(s)?;
        let sched = LoParSchedule {
            height: w.height,
            width: w.width,
            sigma: w.sigma,
            iterations: w.iterations,
            cells: w.cells.into_iter().flatten().collect(),
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Per-window row index of a 1-based linear cell index, as used by the
/// diagonal plan: `floor((i-1)/width) mod sigma`.
pub fn window_row(i: usize, width: usize, sigma: usize) -> usize {
    ((i - 1) / width) % sigma
}

/// Per-window column index of a 1-based linear cell index:
/// `(i-1) mod sigma` (equal to the grid column mod sigma whenever sigma
/// divides the width).
pub fn window_col(i: usize, sigma: usize) -> usize {
    (i - 1) % sigma
}

pub fn build_lopar_schedule(
    height: usize,
    width: usize,
    sigma: usize,
    pattern: KeepPattern,
    kind: PlanKind,
) -> Result<LoParSchedule> {
    if sigma == 0 || height % sigma != 0 || width % sigma != 0 {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} must divide the {height}x{width} grid"
        )));
    }

    let kept = match pattern {
        KeepPattern::Grid => {
            let mut kept = vec![false; height * width];
            for r in 0..height {
                for c in 0..width {
                    if (r % sigma) % 2 == 0 && (c % sigma) % 2 == 0 {
                        kept[r * width + c] = true;
                    }
                }
            }
            kept
        }
        KeepPattern::SeededRandom { seed } => {
            use rand::seq::SliceRandom;
            let quota = sigma * sigma / 4;
            let mut kept = vec![false; height * width];
            for tr in 0..height / sigma {
                for tc in 0..width / sigma {
                    let mut cells: Vec<(usize, usize)> = (0..sigma)
                        .flat_map(|r| (0..sigma).map(move |c| (tr * sigma + r, tc * sigma + c)))
                        .collect();
                    let mut trng = rng::seeded(rng::substream(
                        seed,
                        71,
                        (tr * (width / sigma) + tc) as u64,
                    ));
                    cells.shuffle(&mut trng);
                    for &(r, c) in cells.iter().take(quota) {
                        kept[r * width + c] = true;
                    }
                }
            }
            kept
        }
    };

    let iterations = match kind {
        PlanKind::Compressed => COMPRESSED_ITERATIONS,
        PlanKind::Diagonal => 2 * sigma - 1,
    };
    let mut cells = vec![0i32; height * width];
    for r in 0..height {
        for c in 0..width {
            let idx = r * width + c;
            cells[idx] = if kept[idx] {
                KEPT
            } else {
                match kind {
                    PlanKind::Compressed => ((r + c) % COMPRESSED_ITERATIONS) as i32,
                    PlanKind::Diagonal => ((r % sigma) + (c % sigma)) as i32,
                }
            };
        }
    }
    let sched = LoParSchedule { height, width, sigma, iterations, cells };
    sched.validate()?;
    Ok(sched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_window_indices() {
        // 1-based linear index 1 -> (0,0), diagonal group 0
        assert_eq!((window_row(1, 60, 6), window_col(1, 6)), (0, 0));
        // index 62 on a 60-wide grid -> (1,1), group 2
        assert_eq!((window_row(62, 60, 6), window_col(62, 6)), (1, 1));
    }

    #[test]
    fn paper_counts_for_60x60_sigma_6() {
        let compressed =
            build_lopar_schedule(60, 60, 6, KeepPattern::Grid, PlanKind::Compressed).unwrap();
        assert_eq!(compressed.iterations, 6);
        assert_eq!(compressed.kept_count(), 900); // exactly 25%
        assert_eq!(compressed.adjacent_same_iteration_pairs(), 0);
        let diagonal =
            build_lopar_schedule(60, 60, 6, KeepPattern::Grid, PlanKind::Diagonal).unwrap();
        assert_eq!(diagonal.iterations, 11); // 2*sigma - 1
        // under the grid keep pattern, diagonal group 0 is the kept cell
        // (0,0) of every window; all other groups are populated
        assert!(diagonal.group(0).is_empty());
        for t in 1..11 {
            assert!(!diagonal.group(t).is_empty(), "group {t} empty");
        }
    }

    #[test]
    fn every_masked_cell_in_exactly_one_group() {
        let s = build_lopar_schedule(24, 24, 6, KeepPattern::Grid, PlanKind::Compressed).unwrap();
        let masked: usize = (0..s.iterations).map(|t| s.group(t).len()).sum();
        assert_eq!(masked + s.kept_count(), 24 * 24);
    }

    #[test]
    fn random_pattern_keeps_tile_quota() {
        let s = build_lopar_schedule(
            24,
            24,
            6,
            KeepPattern::SeededRandom { seed: 5 },
            PlanKind::Compressed,
        )
        .unwrap();
        assert_eq!(s.kept_count(), 24 * 24 / 4);
        // per-tile quota of 9
        for tr in 0..4 {
            for tc in 0..4 {
                let mut n = 0;
                for r in 0..6 {
                    for c in 0..6 {
                        if s.is_kept(tr * 6 + r, tc * 6 + c) {
                            n += 1;
                        }
                    }
                }
                assert_eq!(n, 9, "tile ({tr},{tc})");
            }
        }
        // deterministic
        let s2 = build_lopar_schedule(
            24,
            24,
            6,
            KeepPattern::SeededRandom { seed: 5 },
            PlanKind::Compressed,
        )
        .unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn sigma_must_divide_grid() {
        assert!(build_lopar_schedule(25, 24, 6, KeepPattern::Grid, PlanKind::Compressed).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let s = build_lopar_schedule(12, 12, 6, KeepPattern::Grid, PlanKind::Compressed).unwrap();
        let j = s.to_json();
        let back = LoParSchedule::from_json(&j).unwrap();
        assert_eq!(back, s);
    }
}

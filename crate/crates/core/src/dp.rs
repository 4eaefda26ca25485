//! Exact dynamic programming for maximizing tr(AM) over contiguous
//! segmentations, with penalized and fixed-segment-count variants, optional
//! cut constraints, and a brute-force enumeration oracle for small inputs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::partition::Partition;

/// Cumulative 2-D prefix sums of a square matrix, giving O(1) block sums.
#[derive(Debug, Clone)]
pub struct SummedAreaTable {
    table: DMatrix<f64>,
}

impl SummedAreaTable {
    /// Builds the summed area table (integral image) of `a`.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::invalid(format!(
                "summed area table needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let t = a.nrows();
        let mut table = DMatrix::zeros(t, t);
        for r in 0..t {
            for c in 0..t {
                let mut v = a[(r, c)];
                if r > 0 {
                    v += table[(r - 1, c)];
                }
                if c > 0 {
                    v += table[(r, c - 1)];
                }
                if r > 0 && c > 0 {
                    v -= table[(r - 1, c - 1)];
                }
                table[(r, c)] = v;
            }
        }
        Ok(SummedAreaTable { table })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.table.nrows() == 0
    }

    /// Sum of the block with rows and columns in `[s, e]` (inclusive).
    pub fn block_sum(&self, s: usize, e: usize) -> f64 {
        let mut v = self.table[(e, e)];
        if s > 0 {
            v -= self.table[(s - 1, e)] + self.table[(e, s - 1)] - self.table[(s - 1, s - 1)];
        }
        v
    }

    /// Contribution of the segment `[s, e]` to tr(AM): the block sum divided
    /// by the segment length.
    pub fn segment_gain(&self, s: usize, e: usize) -> Result<f64> {
        if s > e || e >= self.len() {
            return Err(Error::invalid(format!(
                "segment [{s}, {e}] out of range for T = {}",
                self.len()
            )));
        }
        Ok(self.block_sum(s, e) / (e - s + 1) as f64)
    }
}

/// Objective variant for the segmentation solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentMode {
    /// Maximize tr(AM) − λ·(number of segments); the segment count is free.
    Penalized(f64),
    /// Maximize tr(AM) over segmentations with exactly K segments.
    FixedK(usize),
}

/// Restrictions on admissible cut positions. Positions use the boundary
/// convention of [`Partition::boundaries`]: a cut at position `b ∈ [1, T-1]`
/// separates items `b-1` and `b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequentialConstraints {
    /// Cuts that must appear in the output.
    pub forced_breaks: Vec<usize>,
    /// Inclusive position ranges `[a, b]` inside which no cut may occur.
    pub forbidden_intervals: Vec<(usize, usize)>,
    /// Minimum admissible segment length (0 and 1 both mean unconstrained).
    pub min_segment_len: usize,
}

impl SequentialConstraints {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.forced_breaks.is_empty()
            && self.forbidden_intervals.is_empty()
            && self.min_segment_len <= 1
    }

    fn validate(&self, t: usize) -> Result<()> {
        for &b in &self.forced_breaks {
            if b == 0 || b >= t {
                return Err(Error::infeasible(format!(
                    "forced break {b} outside [1, {}]",
                    t - 1
                )));
            }
            if self
                .forbidden_intervals
                .iter()
                .any(|&(a, bb)| a <= b && b <= bb)
            {
                return Err(Error::infeasible(format!(
                    "forced break {b} lies inside a forbidden interval"
                )));
            }
        }
        for &(a, b) in &self.forbidden_intervals {
            if a > b {
                return Err(Error::infeasible(format!(
                    "forbidden interval ({a}, {b}) is reversed"
                )));
            }
        }
        Ok(())
    }

    fn cut_allowed(&self, pos: usize) -> bool {
        !self
            .forbidden_intervals
            .iter()
            .any(|&(a, b)| a <= pos && pos <= b)
    }
}

/// A segmentation together with its achieved objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub partition: Partition,
    /// tr(AM), minus λ·K in penalized mode.
    pub value: f64,
}

/// Evaluates the objective of an explicit segmentation (used by tests and to
/// check returned values).
pub fn evaluate_segmentation(
    sat: &SummedAreaTable,
    lengths: &[usize],
    mode: SegmentMode,
) -> Result<f64> {
    let mut value = 0.0;
    let mut start = 0usize;
    for &len in lengths {
        value += sat.segment_gain(start, start + len - 1)?;
        start += len;
    }
    if let SegmentMode::Penalized(lambda) = mode {
        value -= lambda * lengths.len() as f64;
    }
    Ok(value)
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("matrix must be square"));
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

// Candidate ordering: higher value wins; ties prefer fewer segments, then an
// earlier start of the final segment.
fn better(
    cand: (f64, usize, usize),
    best: Option<(f64, usize, usize)>,
) -> bool {
    match best {
        None => true,
        Some((bv, bsegs, bstart)) => {
            cand.0 > bv
                || (cand.0 == bv && (cand.1 < bsegs || (cand.1 == bsegs && cand.2 < bstart)))
        }
    }
}

/// Exact maximizer of tr(AM) − λ·K (penalized) or tr(AM) with K segments
/// (fixed) over contiguous segmentations, in O(T²) resp. O(KT²).
pub fn dp_segment(
    a: &DMatrix<f64>,
    mode: SegmentMode,
    constraints: Option<&SequentialConstraints>,
) -> Result<SegmentationResult> {
    check_symmetric(a)?;
    let t = a.nrows();
    if t == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let default = SequentialConstraints::none();
    let cons = constraints.unwrap_or(&default);
    cons.validate(t)?;
    let min_len = cons.min_segment_len.max(1);
    let sat = SummedAreaTable::new(a)?;

    // last_forced[e] = largest forced break <= e (0 when none): segment
    // [s, e] is admissible only if s >= last_forced[e].
    let mut last_forced = vec![0usize; t + 1];
    for &b in &cons.forced_breaks {
        last_forced[b] = last_forced[b].max(b);
    }
    for e in 1..=t {
        last_forced[e] = last_forced[e].max(last_forced[e - 1]);
    }
    let cut_ok: Vec<bool> = (0..=t)
        .map(|p| p == 0 || p == t || cons.cut_allowed(p))
        .collect();

    match mode {
        SegmentMode::Penalized(lambda) => {
            let mut best = vec![f64::NEG_INFINITY; t + 1];
            let mut back = vec![0usize; t + 1];
            let mut segs = vec![0usize; t + 1];
            best[0] = 0.0;
            for e in 1..=t {
                if !cut_ok[e] {
                    continue;
                }
                let mut chosen: Option<(f64, usize, usize)> = None;
                let s_min = last_forced[e - 1].max(if e >= 1 { 0 } else { 0 });
                for s in s_min..=(e - 1) {
                    // segment covers items s..e-1; its interior positions are
                    // s+1..e-1 and must contain no forced break
                    if !cut_ok[s] || best[s] == f64::NEG_INFINITY {
                        continue;
                    }
                    if e - s < min_len {
                        continue;
                    }
                    let v = best[s] + sat.segment_gain(s, e - 1)? - lambda;
                    let cand = (v, segs[s] + 1, s);
                    if better(cand, chosen) {
                        chosen = Some(cand);
                    }
                }
                if let Some((v, k, s)) = chosen {
                    best[e] = v;
                    segs[e] = k;
                    back[e] = s;
                }
            }
            if best[t] == f64::NEG_INFINITY {
                return Err(Error::infeasible(
                    "no segmentation satisfies the constraints",
                ));
            }
            let lengths = backtrack(&back, t);
            Ok(SegmentationResult {
                partition: Partition::from_segment_lengths(&lengths)?,
                value: best[t],
            })
        }
        SegmentMode::FixedK(k) => {
            if k == 0 || k > t {
                return Err(Error::invalid(format!(
                    "segment count {k} outside [1, {t}]"
                )));
            }
            let neg = f64::NEG_INFINITY;
            let mut best = vec![vec![neg; t + 1]; k + 1];
            let mut back = vec![vec![0usize; t + 1]; k + 1];
            best[0][0] = 0.0;
            for kk in 1..=k {
                for e in kk..=t {
                    if !cut_ok[e] {
                        continue;
                    }
                    let mut chosen: Option<(f64, usize, usize)> = None;
                    for s in last_forced[e - 1]..=(e - 1) {
                        if !cut_ok[s] || best[kk - 1][s] == neg {
                            continue;
                        }
                        if e - s < min_len {
                            continue;
                        }
                        let v = best[kk - 1][s] + sat.segment_gain(s, e - 1)?;
                        let cand = (v, kk, s);
                        if better(cand, chosen) {
                            chosen = Some(cand);
                        }
                    }
                    if let Some((v, _, s)) = chosen {
                        best[kk][e] = v;
                        back[kk][e] = s;
                    }
                }
            }
            if best[k][t] == neg {
                return Err(Error::infeasible(format!(
                    "no segmentation with {k} segments satisfies the constraints"
                )));
            }
            // backtrack through the layered table
            let mut lengths = Vec::with_capacity(k);
            let mut e = t;
            for kk in (1..=k).rev() {
                let s = back[kk][e];
                lengths.push(e - s);
                e = s;
            }
            lengths.reverse();
            Ok(SegmentationResult {
                partition: Partition::from_segment_lengths(&lengths)?,
                value: best[k][t],
            })
        }
    }
}

fn backtrack(back: &[usize], t: usize) -> Vec<usize> {
    let mut lengths = Vec::new();
    let mut e = t;
    while e > 0 {
        let s = back[e];
        lengths.push(e - s);
        e = s;
    }
    lengths.reverse();
    lengths
}

const BRUTE_FORCE_MAX: usize = 14;

/// Exhaustive maximizer over all 2^(T−1) contiguous segmentations; the
/// definitional oracle for [`dp_segment`].
pub fn brute_force_segment(a: &DMatrix<f64>, mode: SegmentMode) -> Result<SegmentationResult> {
    check_symmetric(a)?;
    let t = a.nrows();
    if t == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    if t > BRUTE_FORCE_MAX {
        return Err(Error::invalid(format!(
            "brute force enumeration limited to T <= {BRUTE_FORCE_MAX}, got {t}"
        )));
    }
    let sat = SummedAreaTable::new(a)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0..(1u32 << (t - 1)) {
        let mut lengths = Vec::new();
        let mut run = 1usize;
        for bit in 0..(t - 1) {
            if mask >> bit & 1 == 1 {
                lengths.push(run);
                run = 1;
            } else {
                run += 1;
            }
        }
        lengths.push(run);
        if let SegmentMode::FixedK(k) = mode {
            if lengths.len() != k {
                continue;
            }
        }
        let value = evaluate_segmentation(&sat, &lengths, mode)?;
        let replace = match &best {
            None => true,
            Some((bv, bl)) => {
                value > *bv || (value == *bv && lengths.len() < bl.len())
            }
        };
        if replace {
            best = Some((value, lengths));
        }
    }
    let (value, lengths) =
        best.ok_or_else(|| Error::infeasible("no segmentation with the requested segment count"))?;
    Ok(SegmentationResult {
        partition: Partition::from_segment_lengths(&lengths)?,
        value,
    })
}

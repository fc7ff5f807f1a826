//! Four-phase segmentation of a sharpness trajectory.
//!
//! Per-step rule, with `S` the centered moving average of `Lambda`:
//!
//! | condition                         | phase |
//! |-----------------------------------|-------|
//! | `Lambda < 2/eta`, `D^T F < 0`     | I     |
//! | `Lambda >= 2/eta`, `dS >= 0`      | II    |
//! | `Lambda >= 2/eta`, `dS < 0`       | III   |
//! | `Lambda < 2/eta`, `D^T F >= 0`    | IV    |
//!
//! `dS(t) = S(t+1) - S(t)` (backward difference at the last step). Runs shorter
//! than `min_len` are then absorbed by their predecessor.

use crate::tracker::TrajectoryRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    I,
    II,
    III,
    IV,
}

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::I => 0,
            Phase::II => 1,
            Phase::III => 2,
            Phase::IV => 3,
        }
    }

    pub fn name(self) -> &'static str {
        ["I", "II", "III", "IV"][self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSegment {
    pub phase: Phase,
    /// First step (the `t` of the first record).
    pub start: usize,
    /// Last step, inclusive.
    pub end: usize,
    /// Number of records covered.
    pub len: usize,
}

/// Centered moving average; the window shrinks at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let h = window.max(1) / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Unmerged per-record labels.
pub fn classify(records: &[TrajectoryRecord], eta: f64, smooth_window: usize) -> Vec<Phase> {
    let two = 2.0 / eta;
    let lam: Vec<f64> = records.iter().map(|r| r.lambda1).collect();
    let s = smooth(&lam, smooth_window);
    let n = s.len();
    records
        .iter()
        .enumerate()
        .map(|(t, r)| {
            if r.lambda1 < two {
                if r.dtf < 0.0 {
                    Phase::I
                } else {
                    Phase::IV
                }
            } else {
                let ds = if t + 1 < n {
                    s[t + 1] - s[t]
                } else if t > 0 {
                    s[t] - s[t - 1]
                } else {
                    0.0
                };
                if ds >= 0.0 {
                    Phase::II
                } else {
                    Phase::III
                }
            }
        })
        .collect()
}

fn runs(records: &[TrajectoryRecord], labels: &[Phase]) -> Vec<PhaseSegment> {
    let mut out: Vec<PhaseSegment> = Vec::new();
    for (r, &p) in records.iter().zip(labels) {
        match out.last_mut() {
            Some(seg) if seg.phase == p => {
                seg.end = r.t;
                seg.len += 1;
            }
            _ => out.push(PhaseSegment { phase: p, start: r.t, end: r.t, len: 1 }),
        }
    }
    out
}

/// Segment a trajectory; see the module docs for the rule.
pub fn segment(records: &[TrajectoryRecord], eta: f64, smooth_window: usize, min_len: usize) -> Vec<PhaseSegment> {
    let labels = classify(records, eta, smooth_window);
    let raw = runs(records, &labels);
    let mut out: Vec<PhaseSegment> = Vec::new();
    for seg in raw {
        match out.last_mut() {
            Some(prev) if seg.len < min_len || prev.phase == seg.phase => {
                prev.end = seg.end;
                prev.len += seg.len;
            }
            _ => out.push(seg),
        }
    }
    // A short leading segment has no predecessor; it joins its successor.
    if out.len() >= 2 && out[0].len < min_len {
        let first = out.remove(0);
        out[0].start = first.start;
        out[0].len += first.len;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycles: usize,
    /// Mean number of records per counted cycle (0 without cycles).
    pub mean_period: f64,
    /// Mean segment length per phase, in records (0 for absent phases).
    pub per_phase_mean_len: [f64; 4],
}

/// Count cycles: the segments between consecutive Phase-I starts form a
/// cycle when they contain II, III and IV in that order.
pub fn cycle_stats(segments: &[PhaseSegment]) -> CycleStats {
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for s in segments {
        sums[s.phase.index()] += s.len as f64;
        counts[s.phase.index()] += 1;
    }
    let per_phase_mean_len = std::array::from_fn(|i| if counts[i] == 0 { 0.0 } else { sums[i] / counts[i] as f64 });

    let mut cycles = 0;
    let mut period_sum = 0.0;
    let mut i = 0;
    while i < segments.len() {
        if segments[i].phase != Phase::I {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        let mut want = Phase::II;
        let mut complete = false;
        let mut len = segments[i].len;
        while j < segments.len() && segments[j].phase != Phase::I {
            len += segments[j].len;
            if !complete && segments[j].phase == want {
                match want {
                    Phase::II => want = Phase::III,
                    Phase::III => want = Phase::IV,
                    _ => complete = true,
                }
            }
            j += 1;
        }
        if complete {
            cycles += 1;
            period_sum += len as f64;
        }
        i = j;
    }
    let mean_period = if cycles == 0 { 0.0 } else { period_sum / cycles as f64 };
    CycleStats { cycles, mean_period, per_phase_mean_len }
}

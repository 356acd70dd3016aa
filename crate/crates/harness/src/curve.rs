//! F1-vs-budget curves: per-run series, aggregation over evaluation runs,
//! sliding-window smoothing and the fixed-checkpoint comparison table.

use anyhow::{bail, Result};

pub const SMOOTHING_WINDOW: usize = 10;

/// One evaluation game: tracked F1 after each batch of added images.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub x: Vec<usize>,
    pub f1: Vec<f64>,
    /// the game hit the interaction cap before exhausting the budget; the
    /// tail of the series is padded with the last observed value
    pub truncated: bool,
}

/// Aggregated curve: mean over runs, then window smoothing.
#[derive(Debug, Clone)]
pub struct EvalCurve {
    pub strategy: String,
    pub x: Vec<usize>,
    pub runs: Vec<EvalRun>,
    pub mean: Vec<f64>,
    pub smoothed: Vec<f64>,
}

/// Sliding window of `window` points centered on each index, truncated at the
/// series edges, so the output has the input's length.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    debug_assert!(window >= 1);
    let n = values.len();
    let half_left = window / 2;
    let half_right = window - half_left - 1;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half_left);
        let hi = (i + half_right).min(n.saturating_sub(1));
        let slice = &values[lo..=hi];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    out
}

impl EvalCurve {
    /// All runs must share one x grid (truncated runs arrive pre-padded).
    pub fn aggregate(strategy: impl Into<String>, runs: Vec<EvalRun>) -> Result<Self> {
        if runs.is_empty() {
            bail!("cannot aggregate zero runs");
        }
        let x = runs[0].x.clone();
        for run in &runs {
            if run.x != x {
                bail!("evaluation runs disagree on the x grid");
            }
            if run.f1.len() != x.len() {
                bail!("run length does not match its x grid");
            }
        }
        let n = x.len();
        let mut mean = vec![0.0; n];
        for run in &runs {
            for (m, v) in mean.iter_mut().zip(&run.f1) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= runs.len() as f64;
        }
        let smoothed = smooth(&mean, SMOOTHING_WINDOW);
        Ok(Self { strategy: strategy.into(), x, runs, mean, smoothed })
    }

    /// Mean of the smoothed curve over x in [checkpoint - 10, checkpoint + 10]
    /// clipped to the domain.
    pub fn checkpoint_value(&self, checkpoint: usize) -> f64 {
        let lo = checkpoint.saturating_sub(10);
        let hi = checkpoint + 10;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (x, v) in self.x.iter().zip(&self.smoothed) {
            if *x >= lo && *x <= hi {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            // checkpoint outside the recorded domain: nearest point
            let idx = self
                .x
                .iter()
                .enumerate()
                .min_by_key(|(_, x)| x.abs_diff(checkpoint))
                .map(|(i, _)| i)
                .unwrap_or(0);
            return self.smoothed[idx];
        }
        sum / count as f64
    }

    /// Smoothed value at the final recorded budget point.
    pub fn final_value(&self) -> f64 {
        *self.smoothed.last().unwrap_or(&0.0)
    }
}

/// Strategy x checkpoint table of window-averaged F1 values.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub checkpoints: Vec<usize>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ComparisonTable {
    pub fn build(curves: &[EvalCurve], checkpoints: &[usize]) -> Self {
        let rows = curves
            .iter()
            .map(|c| {
                let values = checkpoints.iter().map(|cp| c.checkpoint_value(*cp)).collect();
                (c.strategy.clone(), values)
            })
            .collect();
        Self { checkpoints: checkpoints.to_vec(), rows }
    }

    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let name_width = self
            .rows
            .iter()
            .map(|(n, _)| n.len())
            .chain(["strategy".len()])
            .max()
            .unwrap_or(8);
        out.push_str(&format!("{:<name_width$}", "strategy"));
        for cp in &self.checkpoints {
            out.push_str(&format!(" {:>8}", format!("@{cp}")));
        }
        out.push('\n');
        for (name, values) in &self.rows {
            out.push_str(&format!("{name:<name_width$}"));
            for v in values {
                out.push_str(&format!(" {v:>8.3}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Pad a possibly-truncated run onto the full grid by carrying the last
/// value forward.
pub fn pad_run(mut x: Vec<usize>, mut f1: Vec<f64>, grid: &[usize]) -> EvalRun {
    let truncated = x.len() < grid.len();
    if truncated {
        let last = f1.last().copied().unwrap_or(0.0);
        while x.len() < grid.len() {
            x.push(grid[x.len()]);
            f1.push(last);
        }
    }
    EvalRun { x: grid.to_vec(), f1, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_of_constant_is_flat() {
        let v = vec![0.5; 40];
        let s = smooth(&v, 10);
        assert_eq!(s.len(), 40);
        assert!(s.iter().all(|x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn smoothing_edges_truncate_window() {
        let v: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let s = smooth(&v, 10);
        // first point: indices 0..=4 -> mean 2.0 (5 samples <= 10)
        assert!((s[0] - 2.0).abs() < 1e-12);
        // interior point 10: indices 5..=14 -> mean 9.5 (full 10 samples)
        assert!((s[10] - 9.5).abs() < 1e-12);
        assert_eq!(s.len(), v.len());
    }

    #[test]
    fn smoothed_stays_within_raw_bounds() {
        let v: Vec<f64> = (0..50).map(|i| ((i * 7919) % 100) as f64 / 100.0).collect();
        let s = smooth(&v, 10);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(s.iter().all(|x| *x >= lo - 1e-12 && *x <= hi + 1e-12));
    }

    #[test]
    fn aggregate_means_and_checkpoints() {
        let grid: Vec<usize> = (1..=100).collect();
        let run_a = EvalRun { x: grid.clone(), f1: vec![0.4; 100], truncated: false };
        let run_b = EvalRun { x: grid.clone(), f1: vec![0.6; 100], truncated: false };
        let curve = EvalCurve::aggregate("demo", vec![run_a, run_b]).unwrap();
        assert!(curve.mean.iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!((curve.checkpoint_value(50) - 0.5).abs() < 1e-12);
        // window [40,60] clipped at the domain edge still averages to 0.5
        assert!((curve.checkpoint_value(100) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_window_matches_hand_average() {
        let grid: Vec<usize> = (1..=60).collect();
        let f1: Vec<f64> = grid.iter().map(|x| *x as f64 / 60.0).collect();
        let curve = EvalCurve::aggregate(
            "ramp",
            vec![EvalRun { x: grid.clone(), f1, truncated: false }],
        )
        .unwrap();
        let lo = 20usize;
        let hi = 40usize;
        let expected: f64 = (lo..=hi).map(|x| curve.smoothed[x - 1]).sum::<f64>()
            / (hi - lo + 1) as f64;
        assert!((curve.checkpoint_value(30) - expected).abs() < 1e-12);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = EvalRun { x: vec![1, 2, 3], f1: vec![0.0; 3], truncated: false };
        let b = EvalRun { x: vec![1, 2, 4], f1: vec![0.0; 3], truncated: false };
        assert!(EvalCurve::aggregate("bad", vec![a, b]).is_err());
    }

    #[test]
    fn padding_marks_truncated_runs() {
        let grid: Vec<usize> = (1..=10).collect();
        let run = pad_run(vec![1, 2, 3], vec![0.1, 0.2, 0.3], &grid);
        assert!(run.truncated);
        assert_eq!(run.x, grid);
        assert_eq!(run.f1[9], 0.3);
        let full = pad_run(grid.clone(), vec![0.5; 10], &grid);
        assert!(!full.truncated);
    }

    #[test]
    fn table_text_alignment() {
        let grid: Vec<usize> = (1..=20).collect();
        let curve = EvalCurve::aggregate(
            "random",
            vec![EvalRun { x: grid, f1: vec![0.25; 20], truncated: false }],
        )
        .unwrap();
        let table = ComparisonTable::build(&[curve], &[10, 20]);
        let text = table.to_text();
        assert!(text.contains("strategy"));
        assert!(text.contains("random"));
        assert!(text.contains("0.250"));
    }
}

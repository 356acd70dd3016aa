//! CSV and SVG emission. Schemas:
//!   curves:       run,x,f1_raw,f1_smoothed
//!   mean curve:   x,f1_raw,f1_smoothed
//!   training log: interaction,game,loss,reward,tau,lr
//!   trace:        game,interaction,action,reward,labeled,raw_f1,tracked_f1
//!   table:        strategy,f1@<c1>,f1@<c2>,...
//!   diagnostics:  feature,slot,rep,value,q

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use crate::curve::{smooth, ComparisonTable, EvalCurve, SMOOTHING_WINDOW};
use crate::diagnose::SweepPoint;
use crate::train::TrainLogRow;
use alrl_core::env::TraceRow;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Per-run rows; each run's series is smoothed independently.
pub fn write_runs_csv(path: &Path, curve: &EvalCurve) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["run", "x", "f1_raw", "f1_smoothed"])?;
    for (run_idx, run) in curve.runs.iter().enumerate() {
        let smoothed = smooth(&run.f1, SMOOTHING_WINDOW);
        for ((x, raw), s) in run.x.iter().zip(&run.f1).zip(&smoothed) {
            w.write_record([
                run_idx.to_string(),
                x.to_string(),
                raw.to_string(),
                s.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// (run, x, f1_raw, f1_smoothed) tuples.
pub fn read_runs_csv(path: &Path) -> Result<Vec<(usize, usize, f64, f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != 4 {
            bail!("curve rows need 4 fields, got {}", record.len());
        }
        out.push((
            record[0].parse()?,
            record[1].parse()?,
            record[2].parse()?,
            record[3].parse()?,
        ));
    }
    Ok(out)
}

pub fn write_mean_csv(path: &Path, curve: &EvalCurve) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["x", "f1_raw", "f1_smoothed"])?;
    for ((x, raw), s) in curve.x.iter().zip(&curve.mean).zip(&curve.smoothed) {
        w.write_record([x.to_string(), raw.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_csv(path: &Path, table: &ComparisonTable) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["strategy".to_string()];
    header.extend(table.checkpoints.iter().map(|c| format!("f1@{c}")));
    w.write_record(&header)?;
    for (name, values) in &table.rows {
        let mut row = vec![name.clone()];
        row.extend(values.iter().map(|v| format!("{v:.3}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table_csv(path: &Path) -> Result<ComparisonTable> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let checkpoints = r
        .headers()?
        .iter()
        .skip(1)
        .map(|h| {
            h.strip_prefix("f1@")
                .ok_or_else(|| anyhow!("bad table header '{h}'"))
                .and_then(|v| v.parse::<usize>().map_err(Into::into))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let name = record[0].to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(Into::into))
            .collect::<Result<Vec<_>>>()?;
        rows.push((name, values));
    }
    Ok(ComparisonTable { checkpoints, rows })
}

pub fn write_training_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["interaction", "game", "loss", "reward", "tau", "lr"])?;
    for row in rows {
        w.write_record([
            row.interaction.to_string(),
            row.game.to_string(),
            row.loss.to_string(),
            row.reward.to_string(),
            row.tau.to_string(),
            row.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, rows: &[(usize, TraceRow)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["game", "interaction", "action", "reward", "labeled", "raw_f1", "tracked_f1"])?;
    for (game, row) in rows {
        w.write_record([
            game.to_string(),
            row.interaction.to_string(),
            row.action.to_string(),
            row.reward.to_string(),
            row.labeled.to_string(),
            row.raw_f1.to_string(),
            row.tracked_f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["feature", "slot", "rep", "value", "q"])?;
    for p in points {
        w.write_record([
            p.feature.name().to_string(),
            p.slot.to_string(),
            p.rep.to_string(),
            p.value.to_string(),
            p.q.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Static vector plot of the smoothed mean curves.
pub fn write_curves_svg(path: &Path, curves: &[EvalCurve], title: &str) -> Result<()> {
    if curves.is_empty() {
        bail!("nothing to plot");
    }
    let (width, height) = (860.0, 520.0);
    let (ml, mr, mt, mb) = (70.0, 30.0, 40.0, 50.0);
    let plot_w = width - ml - mr;
    let plot_h = height - mt - mb;
    let x_max = curves
        .iter()
        .flat_map(|c| c.x.last().copied())
        .max()
        .unwrap_or(1) as f64;

    let map_x = |x: f64| ml + x / x_max * plot_w;
    let map_y = |y: f64| mt + (1.0 - y) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        width / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h
    ));
    // y ticks every 0.1
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let y = map_y(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ml}\" y2=\"{y}\" stroke=\"black\"/>\n",
            ml - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.1}</text>\n",
            ml - 9.0,
            y + 4.0
        ));
        if i > 0 {
            svg.push_str(&format!(
                "<line x1=\"{ml}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n",
                ml + plot_w
            ));
        }
    }
    // x ticks, 8 divisions
    for i in 0..=8 {
        let v = x_max * i as f64 / 8.0;
        let x = map_x(v);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            mt + plot_h,
            mt + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            mt + plot_h + 18.0,
            v.round() as usize
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">images added</text>\n",
        ml + plot_w / 2.0,
        height - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">F1 (tracked, smoothed)</text>\n",
        mt + plot_h / 2.0,
        mt + plot_h / 2.0
    ));

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (j, (x, y)) in curve.x.iter().zip(&curve.smoothed).enumerate() {
            let cmd = if j == 0 { 'M' } else { 'L' };
            d.push_str(&format!("{cmd}{:.2},{:.2} ", map_x(*x as f64), map_y(*y)));
        }
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            d.trim_end()
        ));
        let ly = mt + 16.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            ml + plot_w - 150.0,
            ml + plot_w - 120.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            ml + plot_w - 112.0,
            ly + 4.0,
            curve.strategy
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

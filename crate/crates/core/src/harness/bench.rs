//! Per-component inference timings.

use std::time::Instant;

use serde::Serialize;

use super::model::{Generator, Model};
use crate::error::Result;
use crate::face::{Coefficients, FaceBasis};
use crate::tensor::{no_grad, Tensor};

pub const COMPONENTS: [&str; 5] = [
    "mesh regression",
    "motion net",
    "occlusion net",
    "encoder",
    "decoder",
];

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub component: &'static str,
    pub median_ms: f64,
    pub runs: usize,
}

fn median_ms(runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let m = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[m]
    } else {
        0.5 * (times[m - 1] + times[m])
    })
}

/// Median wall-clock time of each component over `runs` calls on one
/// source/driving pair, without recording a tape.
pub fn bench(
    model: &Model,
    basis: &FaceBasis,
    source: &Coefficients,
    driving: &Coefficients,
    image: &Tensor,
    runs: usize,
) -> Result<Vec<BenchRow>> {
    let runs = runs.max(1);
    let g = &model.generator;
    no_grad(|| {
        let stacked = Generator::stacked_input(basis, source, driving)?;
        let flow = g.motion.forward_features(std::slice::from_ref(&stacked))?;
        let warped = image.grid_sample(&flow)?;
        let features = g.reenact.encoder.forward(image)?;
        let times = [
            median_ms(runs, || {
                Generator::stacked_input(basis, source, driving).map(drop)
            })?,
            median_ms(runs, || {
                g.motion
                    .forward_features(std::slice::from_ref(&stacked))
                    .map(drop)
            })?,
            median_ms(runs, || g.reenact.occlusion.forward(&warped).map(drop))?,
            median_ms(runs, || g.reenact.encoder.forward(image).map(drop))?,
            median_ms(runs, || g.reenact.decoder.forward(&features).map(drop))?,
        ];
        Ok(COMPONENTS
            .iter()
            .zip(times)
            .map(|(&component, median_ms)| BenchRow {
                component,
                median_ms,
                runs,
            })
            .collect())
    })
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let mut s = format!("{:<16} {:>12} {:>6}\n", "component", "median ms", "runs");
    for r in rows {
        s.push_str(&format!(
            "{:<16} {:>12.3} {:>6}\n",
            r.component, r.median_ms, r.runs
        ));
    }
    s
}

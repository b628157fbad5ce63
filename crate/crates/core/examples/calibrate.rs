use bidifac::metrics::mean_rel_error;
use bidifac::penalty::PenaltyScheme;
use bidifac::sim::generate_noiseless_unifac;
use bidifac::solver::{unifac_fit, Init, SolverConfig};
use bidifac::BlockGrid;
use std::time::Instant;

fn main() {
    let (d, n, r) = (100, 100, 10);
    let (grid, truth) = generate_noiseless_unifac(d, d, n, r, r, r, 1000).unwrap();
    let sigma = 1e-4;
    let blocks: Vec<Vec<_>> = (0..2)
        .map(|i| vec![grid.block(i, 0).mapv(|v| v / sigma)])
        .collect();
    let scaled = BlockGrid::new(blocks).unwrap();
    let scheme = PenaltyScheme::rmt_default(&[d, d], &[n]).unwrap();
    let mut warm: Option<bidifac::Decomposition> = None;
    let t0 = Instant::now();
    let mut total = 0usize;
    for chunk in [50usize, 150, 300, 500, 1000, 2000, 4000] {
        let config = SolverConfig {
            rel_tol: 0.0,
            max_iter: chunk - total,
            init: warm.take().map(|t| Init::Warm(Box::new(t))).unwrap_or(Init::Zeros),
            ..SolverConfig::default()
        };
        let (theta, report) = unifac_fit(&scaled, &scheme, &config).unwrap();
        total = chunk;
        let truth_pairs: Vec<_> = (0..2)
            .map(|i| (truth.theta.col_shared_block(i, 0), truth.theta.individual[i][0].clone()))
            .collect();
        let est_pairs: Vec<_> = (0..2)
            .map(|i| {
                (
                    theta.col_shared_block(i, 0).mapv(|v| v * sigma),
                    theta.individual[i][0].mapv(|v| v * sigma),
                )
            })
            .collect();
        let err = mean_rel_error(&truth_pairs, &est_pairs).unwrap();
        let last_decrease = {
            let t = &report.objective_trace;
            if t.len() > 4 { t[t.len() - 4] - t[t.len() - 1] } else { f64::NAN }
        };
        println!(
            "sweeps={total}: err={err:.4} f2={:.6e} last_sweep_decrease={:.3e} ({:.0}s)",
            report.final_objective(),
            last_decrease,
            t0.elapsed().as_secs_f64()
        );
        warm = Some(theta);
    }
}

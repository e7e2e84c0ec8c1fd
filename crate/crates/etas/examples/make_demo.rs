//! Regenerates `demo/catalog.csv`: a two-year synthetic catalog whose
//! background rate swells to three times its base level around day 400
//! while the triggering law stays fixed. Run from the workspace root:
//!
//! ```text
//! cargo run -p etas --example make_demo
//! ```

use etas::nonstationary::{build_basis, AnomalyModel, Restriction, SmoothingDomain};
use etas::simulate::{branching_ratio, simulate_anomaly, GutenbergRichter, SimOptions};
use etas::{Catalog, EtasParams, Event};

fn main() -> etas::Result<()> {
    let reference = EtasParams {
        mu: 0.22,
        k0: 0.012,
        c: 0.01,
        alpha: 1.0,
        p: 1.3,
    };

    // Piecewise-linear background factor on coarse knots: flat at 1, a
    // swarm-like rise to 5x between days 300 and 430, then back down.
    let scaffold: Vec<Event> = [280.0, 310.0, 365.0, 420.0, 450.0]
        .iter()
        .map(|&time| Event {
            time,
            magnitude: 3.0,
        })
        .collect();
    let scaffold = Catalog::new(scaffold, 0.0, 730.0, 3.0)?;
    let basis = build_basis(&scaffold, SmoothingDomain::Ordinary, None)?;
    let model = AnomalyModel {
        basis,
        q_mu: vec![1.0, 1.0, 4.0, 5.0, 4.0, 1.0, 1.0],
        q_k: vec![1.0; 7],
        restriction: Restriction::FixQk,
        changepoint: None,
        reference,
    };

    let magnitudes = GutenbergRichter::new(3.0, 1.0)?;
    let options = SimOptions::new((0.0, 730.0), magnitudes, 812);
    let outcome = simulate_anomaly(&model, &options)?;

    std::fs::create_dir_all("demo")?;
    std::fs::write("demo/catalog.csv", outcome.catalog.to_csv())?;
    println!(
        "wrote demo/catalog.csv: {} events, branching ratio {:.3}",
        outcome.catalog.n_in_window(),
        branching_ratio(&reference, &magnitudes)
    );
    Ok(())
}

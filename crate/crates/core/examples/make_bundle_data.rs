//! Regenerates the synthetic spectra and trace under `data/spectra`.
//!
//! cargo run -p isospin --example make_bundle_data

use std::path::Path;

use isospin::fit::{AmplitudeLaw, LineOrder, MultipletModel};
use isospin::format::write_columns;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SEED: u64 = 20260101;

/// Four lines about the lower ESR transition at 760 G; noise is 1% of the
/// line signal at each point.
fn esr(model: &MultipletModel, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let noise = Normal::new(0.0, 0.01).unwrap();
    let freqs: Vec<f64> = (0..=1400).map(|k| 1000.0 + 0.5 * k as f64).collect();
    let values = freqs
        .iter()
        .map(|f| {
            let dip = model.baseline - model.eval(*f);
            model.baseline - dip * (1.0 + noise.sample(rng))
        })
        .collect();
    (freqs, values)
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/spectra");
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let unpolarized = MultipletModel::new(4, AmplitudeLaw::Unpolarized, 1352.0, -65.9, 55.0, 0.03).unwrap();
    let (f, v) = esr(&unpolarized, &mut rng);
    write_columns(&dir.join("esr_unpolarized.csv"), ["freq_MHz", "intensity"], &f, &v).unwrap();

    let mut polarized = MultipletModel::new(4, AmplitudeLaw::Polarized, 1352.0, 65.9, 25.0, 0.03)
        .unwrap()
        .with_order(LineOrder::Reversed)
        .unwrap();
    polarized.set_polarization(0.632, None).unwrap();
    let (f, v) = esr(&polarized, &mut rng);
    write_columns(&dir.join("esr_polarized.csv"), ["freq_MHz", "intensity"], &f, &v).unwrap();

    // exp(-t / 186 ns) with additive noise of 5% of the amplitude
    let noise = Normal::new(0.0, 0.05).unwrap();
    let t: Vec<f64> = (0..=100).map(|k| 0.01 * k as f64).collect();
    let p: Vec<f64> = t.iter().map(|t| (-t / 0.186).exp() + noise.sample(&mut rng)).collect();
    write_columns(&dir.join("coherence_decay.csv"), ["time_us", "population"], &t, &p).unwrap();
}

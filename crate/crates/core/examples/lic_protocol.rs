//! The full LIC protocol on a synthetic pair: the generated captions carry
//! gender-correlated markers far more often than the human ones.
//!
//!     cargo run --release --example lic_protocol [n_seeds]

use capbias::lic::{run_protocol, ProtocolConfig};
use capbias::synth::{generate_pair, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_seeds = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let spec = SynthSpec::default().with_images(4000).with_thetas(0.6, 0.9);
    let pair = generate_pair(&spec)?;
    let config = ProtocolConfig {
        n_seeds,
        ..ProtocolConfig::default()
    };

    let outcome = run_protocol(&pair.human, &pair.generated, &config)?;
    for seed in &outcome.seeds {
        println!(
            "seed {}: {} train / {} test images, |V_pre| = {}, LIC_M {:.1}, LIC_D {:.1}",
            seed.index, seed.train_images, seed.test_images, seed.v_pre_size, seed.lic_m, seed.lic_d
        );
    }
    println!();
    for r in &outcome.reports {
        let sd = r.std.map_or("n/a".to_string(), |s| format!("{s:.3}"));
        println!("{:<8} {:>8.3} ± {sd}", r.name, r.mean);
    }
    Ok(())
}

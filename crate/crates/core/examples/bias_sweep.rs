//! Sweep the bias strength of the generated side and watch BA and LIC
//! follow it.
//!
//!     cargo run --release --example bias_sweep

use capbias::cooccur::{bias_amplification, count_cooccurrence, AttributeSource, LabelSource, Provenance, TaskWordSet};
use capbias::lic::{run_protocol, ProtocolConfig};
use capbias::synth::{expected_ba, generate_pair, marker_task_words, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ProtocolConfig {
        n_seeds: 3,
        ..ProtocolConfig::default()
    };
    println!("theta_gen   BA   (oracle)    LIC_M   LIC_D     LIC");
    for theta_gen in [0.6, 0.75, 0.9, 1.0] {
        let spec = SynthSpec::default().with_images(4000).with_thetas(0.6, theta_gen);
        let pair = generate_pair(&spec)?;
        let words = TaskWordSet::new(marker_task_words(&spec), Provenance::UserSupplied)?;
        let count = |c| count_cooccurrence(c, &words, AttributeSource::CaptionWords, LabelSource::CaptionTokens);
        let ba = bias_amplification(&count(&pair.human)?, &count(&pair.generated)?)?;

        let outcome = run_protocol(&pair.human, &pair.generated, &config)?;
        let mean = |name: &str| outcome.report(name).map_or(f64::NAN, |r| r.mean);
        println!(
            "{theta_gen:>9.2} {:+.3} ({:+.3}) {:>7.1} {:>7.1} {:>7.1}",
            ba.value,
            expected_ba(&spec)?,
            mean("lic_m"),
            mean("lic_d"),
            mean("lic")
        );
    }
    Ok(())
}

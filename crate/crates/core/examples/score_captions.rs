//! Rank generated captions by how confidently a trained classifier can
//! recover gender from them once gender words are masked.
//!
//!     cargo run --release --example score_captions

use capbias::classifier::AttributeScorer;
use capbias::lic::{run_protocol_with, ProtocolConfig};
use capbias::masking::mask_tokens;
use capbias::synth::{generate_pair, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec::default().with_images(2000).with_thetas(0.6, 0.9);
    let pair = generate_pair(&spec)?;
    let config = ProtocolConfig {
        n_seeds: 1,
        ..ProtocolConfig::default()
    };
    let outcome = run_protocol_with(&pair.human, &pair.generated, &config, true)?;
    let f_hat = outcome.seeds[0].f_hat.as_ref().expect("models were kept");

    let attr = pair.generated.attribute_spec();
    let mut scored = Vec::new();
    for r in pair.generated.records().iter().take(200) {
        let masked = mask_tokens(&r.tokens, attr).0;
        let (pred, conf) = f_hat.predict(&masked)?;
        scored.push((conf[pred], attr.values()[pred].clone(), masked.join(" ")));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let show = |title: &str, rows: &[(f64, String, String)]| {
        println!("{title}");
        for (s, value, caption) in rows {
            println!("  {s:.3} {value:<6} {caption}");
        }
    };
    show("highest bias scores", &scored[..3]);
    let mid = scored.len() / 2;
    show("middle", &scored[mid - 1..mid + 2]);
    show("lowest", &scored[scored.len() - 3..]);
    Ok(())
}

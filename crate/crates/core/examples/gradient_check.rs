//! Compare analytic gradients with central finite differences for both
//! encoder kinds.
//!
//!     cargo run --example gradient_check

use capbias::classifier::{gradient_check, AttributeClassifier, ClassifierConfig, EncoderKind, LabeledCaption};
use capbias::vocab::Vocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let captions: Vec<Vec<String>> = ["a <gender> slicing bread in a kitchen", "a <gender> riding a skateboard"]
        .iter()
        .map(|c| c.split(' ').map(String::from).collect())
        .collect();
    let vocab = Vocabulary::build(captions.iter().map(Vec::as_slice), "<gender>", 1)?;

    for kind in [EncoderKind::BagMean, EncoderKind::BiRecurrent] {
        let config = ClassifierConfig {
            encoder_kind: kind,
            embed_dim: 8,
            hidden_dim: 6,
            ..ClassifierConfig::default()
        };
        let clf = AttributeClassifier::new(config, vocab.clone(), 2)?;
        let mut worst: f64 = 0.0;
        for (i, tokens) in captions.iter().enumerate() {
            let example = LabeledCaption { tokens: tokens.clone(), label: i % 2 };
            let check = gradient_check(&clf, &example, 1e-6, 200, i as u64)?;
            worst = worst.max(check.max_rel_error);
            println!(
                "{kind:?} caption {i}: {} params compared, {} below floor, max rel error {:.2e}",
                check.checked, check.skipped, check.max_rel_error
            );
        }
        println!("{kind:?}: worst {worst:.2e}\n");
    }
    Ok(())
}

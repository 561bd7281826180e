//! Tokenize captions, replace gender words with `<gender>` and label which
//! values each caption mentions.
//!
//!     cargo run --example mask_captions

use capbias::corpus::{tokenize, AttributeSpec};
use capbias::masking::{mask_tokens, mention_label, MentionLabel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = AttributeSpec::gender();
    let captions = [
        "A woman is cutting a cake in the kitchen.",
        "Two men riding skateboards down a ramp",
        "A boy and his mother's dog on the beach",
        "A plate of food on a wooden table",
    ];
    for text in captions {
        let tokens = tokenize(text)?;
        let (masked, n) = mask_tokens(&tokens, &spec);
        let label = match mention_label(&tokens, &spec) {
            MentionLabel::OnlyValue(a) => spec.values()[a].clone(),
            MentionLabel::Mixed => "mixed".to_string(),
            MentionLabel::None => "none".to_string(),
        };
        println!("{text}");
        println!("  -> {}  ({n} masked, mentions: {label})", masked.join(" "));
        // Masking is idempotent.
        assert_eq!(mask_tokens(&masked, &spec).0, masked);
    }
    Ok(())
}

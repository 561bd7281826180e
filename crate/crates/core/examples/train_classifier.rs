//! Train the bag-of-embeddings attribute classifier on masked synthetic
//! captions, evaluate it, and round-trip it through a checkpoint.
//!
//!     cargo run --release --example train_classifier

use capbias::classifier::{load_checkpoint, save_checkpoint, AttributeClassifier, AttributeScorer, ClassifierConfig, LabeledCaption};
use capbias::corpus::balanced_split;
use capbias::lic::sc_accuracy;
use capbias::masking::mask_tokens;
use capbias::synth::{generate, Side, SynthSpec};
use capbias::vocab::Vocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Markers agree with the annotated gender 90% of the time.
    let spec = SynthSpec::default().with_images(2000).with_thetas(0.9, 0.9);
    let corpus = generate(&spec, Side::Human)?;
    let split = balanced_split(&corpus, 0.1, 7)?;
    let attr = corpus.attribute_spec();

    let labeled = |c: &capbias::corpus::Corpus| -> Vec<LabeledCaption> {
        c.records()
            .iter()
            .map(|r| LabeledCaption {
                tokens: mask_tokens(&r.tokens, attr).0,
                label: r.attribute.expect("synthetic captions are annotated"),
            })
            .collect()
    };
    let (train, test) = (labeled(&split.train), labeled(&split.test));
    let vocab = Vocabulary::build(train.iter().map(|c| c.tokens.as_slice()), attr.mask_token(), 1)?;

    let mut clf = AttributeClassifier::new(ClassifierConfig::default(), vocab, attr.n_values())?;
    let log = clf.train(&train)?.clone();
    println!(
        "{} training captions, loss {:.4} -> {:.4} over {} epochs",
        train.len(),
        log.initial_loss,
        log.final_loss,
        log.epoch_losses.len()
    );
    println!("held-out accuracy {:.3} (Bayes rate {:.2})", sc_accuracy(&clf, &test)?, spec.theta_human);

    let path = std::env::temp_dir().join("capbias_example_classifier.json");
    save_checkpoint(&path, &clf, attr.values())?;
    let (restored, values) = load_checkpoint(&path, Some(&clf.vocabulary().hash()))?;
    let probe = &test[0].tokens;
    let (pred, conf) = restored.predict(probe)?;
    println!("restored from {}: '{}' -> {} ({:.3})", path.display(), probe.join(" "), values[pred], conf[pred]);
    assert_eq!(restored.logits(probe)?, clf.logits(probe)?);
    std::fs::remove_file(path)?;
    Ok(())
}

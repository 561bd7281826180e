//! Co-occurrence metrics on a synthetic pair whose generated side
//! over-uses gender-correlated words: BA against its closed form, DBA in
//! both directions, Ratio and Error.
//!
//!     cargo run --release --example cooccurrence_bias

use std::collections::BTreeMap;

use capbias::cooccur::{
    bias_amplification, count_cooccurrence, dba, error_rate, ratio, AttributeSource, DbaDirection, ErrorOptions,
    JointDistribution, LabelSource, ObjectLexicon, Provenance, TaskWordSet,
};
use capbias::synth::{expected_ba, generate_pair, marker_task_words, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = SynthSpec::default().with_images(10_000).with_thetas(0.6, 0.9);
    spec.marker_words = BTreeMap::from([
        ("female".to_string(), vec!["kitchen".to_string(), "umbrella".to_string()]),
        ("male".to_string(), vec!["skateboard".to_string(), "tie".to_string()]),
    ]);
    let pair = generate_pair(&spec)?;
    let words = TaskWordSet::new(marker_task_words(&spec), Provenance::UserSupplied)?;

    let gt = count_cooccurrence(&pair.human, &words, AttributeSource::CaptionWords, LabelSource::CaptionTokens)?;
    let gen = count_cooccurrence(&pair.generated, &words, AttributeSource::CaptionWords, LabelSource::CaptionTokens)?;
    let ba = bias_amplification(&gt, &gen)?;
    println!("BA    {:+.4} (closed form {:+.4}) over {} words", ba.value, expected_ba(&spec)?, ba.n_labels);

    // DBA_G: image objects as labels, gender read from caption words. The
    // generated captions never misgender anyone, so p(gender | object) is
    // unchanged and DBA_G is 0.
    let g_gt = count_cooccurrence(&pair.human, &words, AttributeSource::CaptionWords, LabelSource::ImageObjects)?;
    let g_gen = count_cooccurrence(&pair.generated, &words, AttributeSource::CaptionWords, LabelSource::ImageObjects)?;
    let dba_g = dba(
        &JointDistribution::from_table(&g_gt)?,
        &JointDistribution::from_table(&g_gen)?,
        DbaDirection::GenderGivenObject,
    )?;
    println!("DBA_G {:+.4} ({} cells)", dba_g.value, dba_g.cells_used);

    // DBA_O: object mentions in captions as labels, gender from annotations.
    let lexicon = ObjectLexicon::new(
        words.words().iter().map(|w| (w.clone(), vec![w.clone()])).collect(),
    )?;
    let o_gt = count_cooccurrence(&pair.human, &words, AttributeSource::Annotation, LabelSource::CaptionObjects(&lexicon))?;
    let o_gen =
        count_cooccurrence(&pair.generated, &words, AttributeSource::Annotation, LabelSource::CaptionObjects(&lexicon))?;
    let dba_o = dba(
        &JointDistribution::from_table(&o_gt)?,
        &JointDistribution::from_table(&o_gen)?,
        DbaDirection::ObjectGivenGender,
    )?;
    println!("DBA_O {:+.4} ({} cells)", dba_o.value, dba_o.cells_used);

    // Ratio and Error on a generated side that sometimes gets gender wrong.
    spec.mention_error_generated = 0.1;
    let noisy = generate_pair(&spec)?.generated;
    let n_gen = count_cooccurrence(&noisy, &words, AttributeSource::CaptionWords, LabelSource::ImageObjects)?;
    let noisy_dba_g = dba(
        &JointDistribution::from_table(&g_gt)?,
        &JointDistribution::from_table(&n_gen)?,
        DbaDirection::GenderGivenObject,
    )?;
    println!("DBA_G {:+.4} with 10% misgendered captions", noisy_dba_g.value);
    println!("Ratio {:.3}", ratio(&noisy)?);
    println!("Error {:.3}", error_rate(&noisy, ErrorOptions::default())?);
    Ok(())
}

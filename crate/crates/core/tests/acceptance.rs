//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capbias::classifier::{gradient_check, AttributeClassifier, ClassifierConfig, EncoderKind, LabeledCaption};
use capbias::cooccur::{
    bias_amplification, count_cooccurrence, dba, AttributeSource, DbaDirection, JointDistribution, LabelSource,
    Provenance, TaskWordSet,
};
use capbias::corpus::{self, balanced_split, tokenize, AttributeSpec};
use capbias::lic::{run_protocol, ProtocolConfig, ProtocolOutcome};
use capbias::masking::{mask_tokens, word_value};
use capbias::report::Report;
use capbias::synth::{self, expected_ba, generate_pair, marker_task_words, SynthSpec};
use capbias::vocab::{align_to_prediction_vocab, Vocabulary, OOV_TOKEN};

mod common;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn protocol(human_theta: f64, gen_theta: f64, n_images: usize) -> Result<ProtocolOutcome, String> {
    let spec = SynthSpec::default().with_images(n_images).with_thetas(human_theta, gen_theta);
    let pair = generate_pair(&spec).map_err(|e| e.to_string())?;
    run_protocol(&pair.human, &pair.generated, &ProtocolConfig::default()).map_err(|e| e.to_string())
}

fn mean(out: &ProtocolOutcome, name: &str) -> f64 {
    out.report(name).expect("protocol report").mean
}

fn unbiased_reference() -> Check {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = pool.install(|| protocol(0.5, 0.5, 4000))?;
    let elapsed = start.elapsed();
    let (lic_m, lic) = (mean(&out, "lic_m"), mean(&out, "lic"));
    let detail = format!("LIC_M {lic_m:.2}, LIC {lic:+.2}, {} seeds in {:.1}s on one thread", out.seeds.len(), elapsed.as_secs_f64());
    ensure(out.seeds.len() == 10, "expected 10 seeds")?;
    ensure((22.0..=28.0).contains(&lic_m), format!("LIC_M outside [22, 28]: {detail}"))?;
    ensure(lic.abs() <= 3.0, format!("|LIC| > 3: {detail}"))?;
    ensure(elapsed <= Duration::from_secs(120), format!("too slow: {detail}"))?;
    Ok(detail)
}

fn saturation() -> Check {
    let out = protocol(0.5, 1.0, 4000)?;
    let (lic_m, lic) = (mean(&out, "lic_m"), mean(&out, "lic"));
    let min_acc = out.seeds.iter().map(|s| s.sc_m).fold(f64::INFINITY, f64::min);
    let detail = format!("LIC_M {lic_m:.2}, LIC {lic:.2}, min held-out accuracy (generated) {min_acc:.4}");
    ensure(lic_m >= 90.0 && lic >= 60.0 && min_acc >= 0.99, detail.clone())?;
    Ok(detail)
}

fn monotonicity() -> Check {
    let mut lics = Vec::new();
    for theta in [0.6, 0.75, 0.9] {
        lics.push(mean(&protocol(0.6, theta, 4000)?, "lic"));
    }
    let detail = format!("LIC at θ_gen 0.6/0.75/0.9: {:.2} / {:.2} / {:.2}", lics[0], lics[1], lics[2]);
    ensure(lics[0] < lics[1] && lics[1] < lics[2], detail.clone())?;
    Ok(detail)
}

fn ba_oracle() -> Check {
    let mut worst: f64 = 0.0;
    let two_markers = BTreeMap::from([
        ("female".to_string(), vec!["kitchen".to_string(), "umbrella".to_string()]),
        ("male".to_string(), vec!["skateboard".to_string(), "tie".to_string()]),
    ]);
    // θ_human = 0.5 sits on the gate threshold: the closed form is 0 but a
    // finite sample opens the gate for whichever value it happens to favour.
    // That boundary is covered by the expected_ba unit tests instead.
    let cases = [(0.6, 0.9, false), (0.8, 0.8, false), (0.55, 0.95, false), (0.7, 1.0, true), (0.9, 0.6, true)];
    for (seed, (th, tg, two)) in cases.into_iter().enumerate() {
        let mut spec = SynthSpec::default().with_images(10_000).with_thetas(th, tg).with_seed(seed as u64);
        if two {
            spec.marker_words = two_markers.clone();
        }
        let pair = generate_pair(&spec).map_err(|e| e.to_string())?;
        let words = TaskWordSet::new(marker_task_words(&spec), Provenance::UserSupplied).map_err(|e| e.to_string())?;
        let count = |c| {
            count_cooccurrence(c, &words, AttributeSource::CaptionWords, LabelSource::CaptionTokens)
                .map_err(|e| e.to_string())
        };
        let measured = bias_amplification(&count(&pair.human)?, &count(&pair.generated)?)
            .map_err(|e| e.to_string())?
            .value;
        let expected = expected_ba(&spec).map_err(|e| e.to_string())?;
        worst = worst.max((measured - expected).abs());
        ensure(
            (measured - expected).abs() <= 0.02,
            format!("θ = ({th}, {tg}): measured {measured:.4}, expected {expected:.4}"),
        )?;
    }

    // Hand-sized corpora against exhaustive enumeration.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut compared = 0;
    let mut worst_small: f64 = 0.0;
    for _ in 0..2000 {
        let caption = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..rng.gen_range(1..7))
                .map(|_| common::POOL.choose(rng).unwrap().to_string())
                .collect()
        };
        let h: Vec<Vec<String>> = (0..rng.gen_range(1..=20)).map(|_| caption(&mut rng)).collect();
        let g: Vec<Vec<String>> = (0..rng.gen_range(1..=20)).map(|_| caption(&mut rng)).collect();
        match (common::brute_force_ba(&h, &g, &common::TASK), common::measured_ba(&h, &g)) {
            (Some(e), Ok(m)) => {
                compared += 1;
                worst_small = worst_small.max((e - m).abs());
            }
            (None, Err(_)) => {}
            (e, m) => return Err(format!("definedness differs: oracle {e:?}, measured {m:?}")),
        }
    }
    ensure(worst_small <= 1e-12, format!("small-corpus deviation {worst_small:e}"))?;
    Ok(format!(
        "max |BA − closed form| {worst:.4} over {} synthetic pairs; {compared} small corpora match brute force (max dev {worst_small:.1e})",
        cases.len()
    ))
}

fn dba_identity_and_sign() -> Check {
    let e = |x: capbias::Error| x.to_string();
    // p(a=0, l=0) = 0.3 > p(a)p(l) = 0.2, so y_00 = 1; cell (1, 0) has y = 0.
    let p_a = vec![0.5, 0.5];
    let p_l = vec![0.4, 0.5, 0.3];
    let base = vec![vec![0.3, 0.25, 0.1], vec![0.1, 0.25, 0.2]];
    let d = JointDistribution::from_parts(base.clone(), p_a.clone(), p_l.clone()).map_err(e)?;
    let cells = 6.0;
    for dir in [DbaDirection::GenderGivenObject, DbaDirection::ObjectGivenGender] {
        let same = dba(&d, &d, dir).map_err(e)?.value;
        ensure(same == 0.0, format!("dba(d, d) = {same} for {dir:?}"))?;
    }

    let shifted = |a: usize, joint: f64| {
        let mut p = base.clone();
        p[a][0] = joint;
        JointDistribution::from_parts(p, p_a.clone(), p_l.clone())
    };
    // p(a|l): 0.75 -> 0.95 via p̂(0,0) = 0.38; p(l|a): 0.6 -> 0.8 via p̂(0,0) = 0.4.
    let checks = [
        (DbaDirection::GenderGivenObject, 0, 0.38, 0.2 / cells),
        (DbaDirection::ObjectGivenGender, 0, 0.40, 0.2 / cells),
        (DbaDirection::GenderGivenObject, 1, 0.18, -0.2 / cells),
        (DbaDirection::ObjectGivenGender, 1, 0.20, -0.2 / cells),
    ];
    for (dir, a, joint, expected) in checks {
        let got = dba(&d, &shifted(a, joint).map_err(e)?, dir).map_err(e)?.value;
        ensure((got - expected).abs() <= 1e-12, format!("{dir:?} cell ({a},0): {got} vs {expected}"))?;
    }

    // Empirical tables from a synthetic corpus: identity is exact there too.
    let pair = generate_pair(&SynthSpec::default().with_images(2000).with_thetas(0.7, 0.9)).map_err(e)?;
    let words = TaskWordSet::new(vec!["kitchen".into(), "skateboard".into()], Provenance::ObjectLabels).map_err(e)?;
    let t = count_cooccurrence(&pair.human, &words, AttributeSource::Annotation, LabelSource::ImageObjects).map_err(e)?;
    let j = JointDistribution::from_table(&t).map_err(e)?;
    ensure(dba(&j, &j, DbaDirection::GenderGivenObject).map_err(e)?.value == 0.0, "empirical identity")?;
    Ok("dba(d, d) = 0 exactly; +0.2 shift gives ±0.2/6 in both directions".into())
}

fn leakage_null() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec::default().with_images(4000).with_thetas(0.7, 0.7);
    synth::write_pair(&spec, dir.path()).map_err(|e| e.to_string())?;
    // The generated side is a byte-for-byte copy of the human captions file.
    let copy = dir.path().join("copy.jsonl");
    std::fs::copy(dir.path().join(synth::HUMAN_FILE), &copy).map_err(|e| e.to_string())?;
    let load = |p: &Path| {
        corpus::load_corpus(p, &dir.path().join(synth::ANNOTATIONS_FILE), &AttributeSpec::gender(), None)
            .map(|(c, _)| c)
            .map_err(|e| e.to_string())
    };
    let (human, generated) = (load(&dir.path().join(synth::HUMAN_FILE))?, load(&copy)?);
    let out = run_protocol(&human, &generated, &ProtocolConfig::default()).map_err(|e| e.to_string())?;
    let leak = mean(&out, "leakage");
    let max_seed = out.seeds.iter().map(|s| s.leakage().abs()).fold(0.0, f64::max);
    let detail = format!("mean Leakage {leak:+.4}, max per-seed |Leakage| {max_seed:.4} over 10 seeds");
    ensure(leak.abs() <= 0.02 && out.seeds.len() == 10, detail.clone())?;
    Ok(detail)
}

fn gradients() -> Check {
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).chain(["<gender>".to_string()]).collect();
    let vocab = Vocabulary::build(std::iter::once(words.as_slice()), "<gender>", 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let examples: Vec<LabeledCaption> = (0..5)
        .map(|_| LabeledCaption {
            tokens: (0..rng.gen_range(3..12)).map(|_| words.choose(&mut rng).unwrap().clone()).collect(),
            label: rng.gen_range(0..2),
        })
        .collect();
    let mut parts = Vec::new();
    for (kind, bound) in [(EncoderKind::BagMean, 1e-4), (EncoderKind::BiRecurrent, 1e-3)] {
        let config = ClassifierConfig { encoder_kind: kind, ..ClassifierConfig::default() };
        let clf = AttributeClassifier::new(config, vocab.clone(), 2).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for (i, ex) in examples.iter().enumerate() {
            // Some deep recurrent weights have gradients near 1e-9; below
            // eps = 1e-4 the loss difference drowns in rounding.
            let check = gradient_check(&clf, ex, 1e-4, 200, i as u64).map_err(|e| e.to_string())?;
            ensure(check.checked >= 100, format!("{kind:?}: only {} parameters compared", check.checked))?;
            worst = worst.max(check.max_rel_error);
        }
        ensure(worst < bound, format!("{kind:?}: max relative error {worst:.2e} ≥ {bound:e}"))?;
        parts.push(format!("{kind:?} {worst:.1e}"));
    }
    Ok(format!("max relative error over 5 examples: {}", parts.join(", ")))
}

fn masking_completeness() -> Check {
    let spec = AttributeSpec::gender();
    let members: Vec<String> = spec.expanded_words().iter().flatten().cloned().collect();
    let fillers = ["a", "the", "on", "with", "dog", "table", "riding", "near", "red", "kitchen"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut seen = BTreeSet::new();
    let mut captions = Vec::new();
    for _ in 0..10_000 {
        let mut words = Vec::new();
        for _ in 0..rng.gen_range(4..12) {
            if rng.gen_bool(0.35) {
                let w = members.choose(&mut rng).unwrap().clone();
                seen.insert(w.clone());
                let w = match rng.gen_range(0..4) {
                    0 => w.to_uppercase(),
                    1 => format!("{w}'s"),
                    2 => format!("{w},"),
                    _ => w,
                };
                words.push(w);
            } else {
                words.push(fillers.choose(&mut rng).unwrap().to_string());
            }
        }
        captions.push(words.join(" ") + ".");
    }
    let hand = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/hand_captions.txt"))
        .map_err(|e| e.to_string())?;
    let hand: Vec<&str> = hand.lines().filter(|l| !l.trim().is_empty()).collect();
    ensure(hand.len() == 100, format!("expected 100 hand-written captions, found {}", hand.len()))?;
    ensure(seen.len() == members.len(), "synthetic captions miss some word-list members")?;

    let mut masked_total = 0;
    for text in captions.iter().map(String::as_str).chain(hand.iter().copied()) {
        let tokens = tokenize(text).map_err(|e| e.to_string())?;
        let (masked, n) = mask_tokens(&tokens, &spec);
        masked_total += n;
        if let Some(t) = masked.iter().find(|t| word_value(t, &spec).is_some() || members.contains(t)) {
            return Err(format!("'{t}' survived masking in: {text}"));
        }
        ensure(mask_tokens(&masked, &spec).0 == masked, format!("not idempotent: {text}"))?;
    }
    Ok(format!("10000 synthetic + 100 hand-written captions, {masked_total} words masked, none left; idempotent"))
}

fn vocabulary_alignment() -> Check {
    let e = |x: capbias::Error| x.to_string();
    let spec = SynthSpec::default().with_images(2000).with_thetas(0.6, 0.9);
    let pair = generate_pair(&spec).map_err(e)?;
    let attr = pair.human.attribute_spec();
    let split = balanced_split(&pair.generated, 0.1, 3).map_err(e)?;
    let masked = |c: &capbias::corpus::Corpus| -> Vec<Vec<String>> {
        c.records().iter().map(|r| mask_tokens(&r.tokens, attr).0).collect()
    };
    let train = masked(&split.train);
    let v_pre = Vocabulary::build(train.iter().map(Vec::as_slice), attr.mask_token(), 1).map_err(e)?;

    // Human captions plus captions with words V_pre has never seen.
    let mut probes = masked(&pair.human);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let mut caption = probes.choose(&mut rng).unwrap().clone();
        caption.push(format!("novel{}", rng.gen_range(0..50)));
        caption.shuffle(&mut rng);
        probes.push(caption);
    }
    let mut identities = 0;
    for caption in &probes {
        let aligned = align_to_prediction_vocab(caption, &v_pre);
        ensure(aligned.len() == caption.len(), "alignment changed caption length")?;
        if let Some(t) = aligned.iter().find(|t| !(v_pre.contains(t) || *t == OOV_TOKEN || *t == attr.mask_token())) {
            return Err(format!("aligned token '{t}' outside V_pre ∪ {{oov, mask}}"));
        }
        if caption.iter().all(|t| v_pre.contains(t)) {
            ensure(&aligned == caption, "covered caption was altered")?;
            identities += 1;
        }
    }
    for caption in &train {
        ensure(&align_to_prediction_vocab(caption, &v_pre) == caption, "training caption altered")?;
    }
    Ok(format!("{} captions aligned into |V_pre| = {}; {identities} fully covered captions unchanged", probes.len(), v_pre.len()))
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_capbias");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
    };
    let d = dir.path().to_str().unwrap();
    run(&["synth", "--out", d, "--n-images", "1000", "--theta-human", "0.6", "--theta-generated", "0.9", "-q"])?;
    let config = serde_json::json!({
        "human_captions": "human_captions.jsonl",
        "generated_captions": "generated_captions.jsonl",
        "annotations": "annotations.jsonl",
        "objects": "objects.jsonl",
        "object_lexicon": "object_lexicon.json",
        "metrics": ["ba", "dba_g", "dba_o", "ratio", "error", "sc", "leakage", "lic"],
        "top_k": 20,
        "min_per_value": 10,
        "protocol": {"n_seeds": 3}
    });
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, config.to_string()).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for name in ["first.json", "second.json"] {
        let out = dir.path().join(name);
        run(&["report", "--config", cfg.to_str().unwrap(), "--seed", "2024", "--out", out.to_str().unwrap(), "-q"])?;
        reports.push(Report::read_json(&out).map_err(|e| e.to_string())?);
    }
    let (a, b) = (&reports[0], &reports[1]);
    ensure(a.metrics == b.metrics, "metric values differ between runs")?;
    ensure(a.content_hash() == b.content_hash(), "reports differ outside the timestamp")?;
    Ok(format!("{} metric reports identical across two runs (content hash {})", a.metrics.len(), &a.content_hash()[..12]))
}

fn published_tables() -> Check {
    // The published model rankings need the original captioning outputs,
    // which are not available here. What can be checked is that caption
    // files in the usual shape (one raw sentence per line) go through.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let caps = dir.path().join("captions.jsonl");
    let ann = dir.path().join("annotations.jsonl");
    std::fs::write(
        &caps,
        concat!(
            r#"{"caption_id":"391895_0","image_id":"391895","caption":"A man with a red helmet on a small moped on a dirt road. ","source":"model"}"#, "\n",
            r#"{"caption_id":"522418_0","image_id":"522418","caption":"A woman wearing a net on her head cutting a cake. ","source":"model"}"#, "\n",
            r#"{"caption_id":"184613_0","image_id":"184613","caption":"A child holding a flowered umbrella and petting a yak.","source":"model"}"#, "\n",
        ),
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(
        &ann,
        "{\"image_id\":\"391895\",\"attribute\":\"male\"}\n{\"image_id\":\"522418\",\"attribute\":\"female\"}\n",
    )
    .map_err(|e| e.to_string())?;
    let (corpus, stats) = corpus::load_corpus(&caps, &ann, &AttributeSpec::gender(), None).map_err(|e| e.to_string())?;
    ensure(stats.loaded == 3 && corpus.len() == 3, "ingestion dropped captions")?;
    let ratio = capbias::cooccur::ratio(&corpus).map_err(|e| e.to_string())?;
    ensure(ratio == 1.0, format!("ratio {ratio}"))?;
    Ok("declared not reproducible (needs the original captioning outputs); ingestion path verified".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("unbiased reference: LIC_M ≈ 25, LIC ≈ 0, ≤ 2 min single-threaded", unbiased_reference),
        ("saturation: LIC_M ≥ 90, LIC ≥ 60, accuracy ≥ 0.99", saturation),
        ("monotonicity: LIC strictly increasing in θ_gen", monotonicity),
        ("BA oracle: closed form ±0.02, brute force 1e-12", ba_oracle),
        ("DBA identity and sign", dba_identity_and_sign),
        ("Leakage null on identical corpora", leakage_null),
        ("gradient correctness", gradients),
        ("masking completeness and idempotence", masking_completeness),
        ("vocabulary alignment", vocabulary_alignment),
        ("determinism of metric reports", cli_determinism),
        ("published model rankings", published_tables),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {:>2} [{secs:6.1}s] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} [{secs:6.1}s] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

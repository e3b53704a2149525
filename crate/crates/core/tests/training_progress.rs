use ncsr::data::{synth_corpus, SyntheticCorpusSpec};
use ncsr::model::{ModelConfig, Ncsr};
use ncsr::numerics::Rng;
use ncsr::trainer::{train, NoisePreset, TrainConfig, TrainCorpus};

/// 200 steps of a small x2 model on the 16-image synthetic corpus, without
/// noise injection.
#[test]
fn two_hundred_steps_cut_bits_per_dim_by_a_fifth() {
    let images = synth_corpus(&SyntheticCorpusSpec::default()).unwrap();
    let corpus = TrainCorpus::new(images.into_iter().map(|r| r.hr).collect(), 32).unwrap();
    let cfg = ModelConfig {
        scale_factor: 2,
        levels: 2,
        flow_steps_per_level: 2,
        ncl_blocks: vec![1],
        encoder_blocks: 1,
        encoder_width: 16,
        coupling_hidden: 16,
        ..ModelConfig::default()
    };
    let mut m = Ncsr::build(cfg, &mut Rng::seed_from_u64(0)).unwrap();
    let tc = TrainConfig {
        patch_hr: 32,
        total_steps: 200,
        noise_preset: NoisePreset::None,
        checkpoint_every: 0,
        log_every: 0,
        ..TrainConfig::default()
    };
    let out = train(&mut m, &corpus, &tc, None).unwrap();
    let bpd: Vec<f64> = out.records.iter().map(|r| r.bits_per_dim).collect();
    assert_eq!(bpd.len(), 200);
    let start = bpd[..10].iter().sum::<f64>() / 10.0;
    let end = bpd[180..].iter().sum::<f64>() / 20.0;
    println!("step-10 mean {start:.4}, last-20 mean {end:.4}");
    assert!(end <= 0.8 * start, "step-10 mean {start:.4}, last-20 mean {end:.4}");
}

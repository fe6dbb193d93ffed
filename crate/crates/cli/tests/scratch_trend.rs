use dsn_core::data::{generate_synthetic, make_zero_shot_split, SynthConfig};
use dsn_core::model::encode;
use dsn_core::numkit::Rng;
use dsn_core::retrieval::{evaluate, itq_fit, RetrievalMetric};
use dsn_core::trainer::{train, TrainConfig};

#[test]
fn dbg_trend() {
    let mean: f64 = std::env::var("DSN_SWEEP_MEAN").unwrap().parse().unwrap();
    let noise: f64 = std::env::var("DSN_SWEEP_NOISE").unwrap().parse().unwrap();
    let mut sums_cos = [0.0f64; 4];
    let mut sums_ham = [0.0f64; 4];
    let seeds: Vec<u64> = (1..=10).collect();
    for &seed in &seeds {
        let synth = SynthConfig {
            seed,
            image_noise_scale: noise,
            sketch_noise_scale: 2.0 * noise,
            ..SynthConfig::default()
        };
        let (img, ske) = generate_synthetic::<f64>(&synth).unwrap();
        let mut split_rng = Rng::with_stream(seed, 1);
        let split = make_zero_shot_split(&img.categories(), 5, &mut split_rng).unwrap();
        let seen_img = img.restrict(&split.seen);
        let seen_ske = ske.restrict(&split.seen);
        let unseen_img = img.restrict(&split.unseen);
        let unseen_ske = ske.restrict(&split.unseen);
        for (i, (use_cmcm, use_ml)) in [(false,false),(true,false),(false,true),(true,true)].into_iter().enumerate() {
            let tcfg = TrainConfig { seed, use_cmcm, use_ml, ..TrainConfig::default() };
            let out = train(&tcfg, &seen_img, &seen_ske, &split).unwrap();
            let rep_cos = evaluate(&out.params, &unseen_ske, &unseen_img, RetrievalMetric::Cosine, None).unwrap();
            let fit_emb = encode(&out.params, seen_img.features()).unwrap();
            let mut itq_rng = Rng::with_stream(seed, 6);
            let (itq, _) = itq_fit(&fit_emb, 64, 50, &mut itq_rng).unwrap();
            let rep_ham = evaluate(&out.params, &unseen_ske, &unseen_img, RetrievalMetric::Hamming, Some(&itq)).unwrap();
            sums_cos[i] += rep_cos.map_all;
            sums_ham[i] += rep_ham.map_all;
        }
    }
    let n = seeds.len() as f64;
    println!("SWEEPC mean={mean} noise={noise} cosine:  base={:.4} +cmcm={:.4} +ml={:.4} full={:.4}",
        sums_cos[0]/n, sums_cos[1]/n, sums_cos[2]/n, sums_cos[3]/n);
    println!("SWEEPH mean={mean} noise={noise} hamming: base={:.4} +cmcm={:.4} +ml={:.4} full={:.4}",
        sums_ham[0]/n, sums_ham[1]/n, sums_ham[2]/n, sums_ham[3]/n);
}

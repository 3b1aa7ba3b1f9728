use rand::SeedableRng;
use satn::config::RunConfig;
use satn::dataio::{generate_toy_dataset, load_dataset, Split, ToySpec};
use satn::train::{calibrate_batch_norm, embed_images, evaluate, stream};
use satn_core::attention::Noise;
use satn_core::evalkit::{self, Meta};
use satn_core::network::Model;
use satn_core::Rng;

#[test]
fn untrained_model_scores_near_the_random_ranking_oracle() {
    let dir = tempfile::tempdir().unwrap();
    generate_toy_dataset(&ToySpec::default(), 0, dir.path()).unwrap();
    let data = load_dataset(dir.path()).unwrap();
    let (q, g) = (data.indices(Split::Query), data.indices(Split::Gallery));
    let meta = |idx: &[usize]| idx.iter().map(|&i| Meta { identity: data.records[i].identity, camera: data.records[i].camera }).collect::<Vec<_>>();
    for seed in 0..3 {
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.apply_text("widths = 8,16,32,64\nhead_hidden = 256\ninput_h = 32\ninput_w = 16\n", "test").unwrap();
        let (model, mut store) = Model::build::<f32>(&cfg.model_config(), &mut stream(seed, 0)).unwrap();
        calibrate_batch_norm(&model, &mut store, &data, &cfg, 10).unwrap();
        let report = evaluate(&model, &store, &data, cfg.tau_init, None).unwrap();
        let qe = embed_images(&model, &store, &data, &q, cfg.tau_init, &mut Noise::Off).unwrap();
        let ge = embed_images(&model, &store, &data, &g, cfg.tau_init, &mut Noise::Off).unwrap();
        let table = evalkit::build_table(&qe, &meta(&q), &ge, &meta(&g));
        let chance = evalkit::random_ranking_map(&table, 200, &mut Rng::seed_from_u64(seed));
        assert!((report.map - chance).abs() < 0.05, "seed {seed}: mAP {} vs chance {chance}", report.map);
    }
}

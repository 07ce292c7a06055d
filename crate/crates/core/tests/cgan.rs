use dmimo_beam::cgan::{cgan_impute, dense_param_count, discriminator_accuracy, pretrain_generator, reconstruction_loss, train_gan, CganImputer, GanConfig, Normalizer};
use dmimo_beam::dataio::{oversample, MaskedSample};
use dmimo_beam::impute::Imputer;
use dmimo_beam::scenario::{generate_scenario, ScenarioConfig};

fn small_rows(p: f64, ues: usize) -> Vec<MaskedSample<f64>> {
    let cfg = ScenarioConfig {
        num_aps: 3,
        beams_per_ap: 8,
        ue_count: ues,
        seed: 11,
        ..Default::default()
    };
    let ds = generate_scenario::<f64>(&cfg).unwrap();
    oversample(&ds, 1, p, 5).unwrap().rows
}

fn small_config() -> GanConfig {
    GanConfig {
        latent_dim: 8,
        gen_hidden: vec![32, 32],
        disc_hidden: vec![16],
        pretrain_epochs: 30,
        gan_epochs: 3,
        batch_size: 32,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn reference_architecture_sizes() {
    let c = GanConfig::default();
    // 320 beams: generator input 100 + 320 + 320, discriminator input 3 * 320.
    let gen = 740 * 128 + 128 + 128 * 256 + 256 + 256 * 256 + 256 + 256 * 128 + 128 + 128 * 320 + 320;
    let disc = 960 * 64 + 64 + 2 * (64 * 64 + 64) + 64 + 1;
    assert_eq!(gen, 267_840);
    assert_eq!(disc, 69_889);
    let g = c.new_generator::<f32>(320, 0).unwrap();
    let d = c.new_discriminator::<f32>(320, 0).unwrap();
    assert_eq!(g.param_count(), gen);
    assert_eq!(d.param_count(), disc);
    assert_eq!(dense_param_count(&c.generator_widths(320)), gen);
}

#[test]
fn normaliser_round_trip_and_floor() {
    let rows = small_rows(0.5, 50);
    let norm = Normalizer::fit(&rows).unwrap();
    for c in 0..rows[0].len() {
        assert!(norm.std[c] > 0.0);
        let v = -73.25;
        assert!((norm.inverse(c, norm.transform(c, v)) - v).abs() < 1e-9);
    }
    let mut flat = rows[..2].to_vec();
    for r in &mut flat {
        r.observed.iter_mut().for_each(|v| *v = -80.0);
        r.mask.iter_mut().for_each(|m| *m = false);
    }
    let n = Normalizer::fit(&flat).unwrap();
    assert!(n.std.iter().all(|s| *s == 1.0));
}

#[test]
fn pretraining_lowers_held_out_reconstruction_loss() {
    let rows = small_rows(0.5, 240);
    let (train, held_out) = rows.split_at(200);
    for seed in 0..3 {
        let cfg = GanConfig {
            pretrain_epochs: 50,
            seed,
            ..small_config()
        };
        let norm = Normalizer::fit(train).unwrap();
        let gen0 = cfg.new_generator::<f64>(train[0].len(), seed).unwrap();
        let before = reconstruction_loss(&gen0, held_out, &norm, &cfg, 99).unwrap();
        let pre = pretrain_generator(train, &norm, &cfg, gen0).unwrap();
        let after = reconstruction_loss(&pre.generator, held_out, &norm, &cfg, 99).unwrap();
        assert_eq!(pre.losses.len(), 50);
        assert!(pre.losses.iter().all(|l| l.is_finite()));
        assert!(pre.losses[49] < pre.losses[0]);
        assert!(after < before, "seed {seed}: before {before}, after {after}");
    }
}

#[test]
fn constant_grid_is_reconstructed() {
    let mut rows = small_rows(0.5, 400);
    for r in &mut rows {
        r.truth.iter_mut().for_each(|v| *v = -70.0);
        for (o, m) in r.observed.iter_mut().zip(&r.mask) {
            *o = if *m { f64::NAN } else { -70.0 };
        }
    }
    let cfg = GanConfig {
        pretrain_epochs: 50,
        ..small_config()
    };
    let norm = Normalizer::fit(&rows).unwrap();
    let c = norm.transform(0, -70.0);
    assert_eq!(c, 0.0);
    let gen0 = cfg.new_generator::<f64>(rows[0].len(), 4).unwrap();
    let pre = pretrain_generator(&rows, &norm, &cfg, gen0).unwrap();
    for r in &rows[..10] {
        let out = cgan_impute(&pre.generator, r, &norm, cfg.latent_dim, 1).unwrap();
        for i in r.masked_indices() {
            assert!((norm.transform(i, out[i]) - c).abs() < 0.1, "entry {i}: {}", out[i]);
        }
    }
}

#[test]
fn untrained_discriminator_is_near_chance() {
    let rows = small_rows(0.8, 200);
    let cfg = small_config();
    let norm = Normalizer::fit(&rows).unwrap();
    let width = rows[0].len();
    let mut accs = Vec::new();
    for s in 0..5 {
        let g = cfg.new_generator::<f64>(width, 10 + s).unwrap();
        let d = cfg.new_discriminator::<f64>(width, 20 + s).unwrap();
        accs.push(discriminator_accuracy(&d, &g, &rows, &norm, cfg.latent_dim, s).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() < 0.2, "accuracies {accs:?}");
}

#[test]
fn imputation_contract() {
    let rows = small_rows(0.8, 120);
    let (imp, disc, curves) = CganImputer::train(&rows, &small_config(), Some((-140.0, 60.0))).unwrap();
    assert_eq!(curves.pretrain.len(), 30);
    assert_eq!(curves.gen.len(), 3);
    assert_eq!(curves.disc.len(), 3);
    assert!(curves.gen.iter().chain(&curves.disc).all(|l| l.is_finite()));
    assert!(disc.is_finite());

    let row = &rows[0];
    let a = imp.impute_with_seed(row, 7).unwrap();
    let b = imp.impute_with_seed(row, 7).unwrap();
    assert_eq!(a, b);
    for c in 0..row.len() {
        if row.mask[c] {
            assert!((-140.0..=60.0).contains(&a[c]));
        } else {
            assert_eq!(a[c], row.observed[c]);
        }
    }
    let free = cgan_impute(imp.generator().unwrap(), row, &imp.normalizer, 8, 7).unwrap();
    for c in row.observed_indices() {
        assert_eq!(free[c], row.observed[c]);
    }

    let mut full = row.clone();
    full.mask.iter_mut().for_each(|m| *m = false);
    full.observed.clone_from(&full.truth);
    assert_eq!(imp.impute(&full).unwrap(), full.truth);

    let dir = tempfile::tempdir().unwrap();
    imp.save(dir.path()).unwrap();
    let back = CganImputer::<f64>::load(dir.path()).unwrap();
    assert_eq!(back.impute_batch(&rows[..5]).unwrap(), imp.impute_batch(&rows[..5]).unwrap());
}

#[test]
fn missing_generator_is_a_state_error() {
    let rows = small_rows(0.5, 20);
    let imp = CganImputer {
        config: small_config(),
        normalizer: Normalizer::fit(&rows).unwrap(),
        generator: None,
        band: None,
        z_seed: 0,
    };
    assert!(matches!(imp.impute(&rows[0]), Err(dmimo_beam::Error::State(_))));
}

#[test]
fn recon_weight_is_validated() {
    for w in [-0.5, f64::NAN, f64::INFINITY] {
        let cfg = GanConfig { recon_weight: w, ..small_config() };
        assert!(matches!(cfg.validate(), Err(dmimo_beam::Error::Config(_))), "{w}");
    }
    assert!(GanConfig { recon_weight: 0.0, ..small_config() }.validate().is_ok());
}

#[test]
fn reconstruction_term_anchors_adversarial_phase() {
    let rows = small_rows(0.5, 240);
    let (train, held_out) = rows.split_at(200);
    let base = GanConfig {
        pretrain_epochs: 50,
        gan_epochs: 40,
        gan_lr: 1e-3,
        ..small_config()
    };
    let norm = Normalizer::fit(train).unwrap();
    let gen0 = base.new_generator::<f64>(train[0].len(), 1).unwrap();
    let pre = pretrain_generator(train, &norm, &base, gen0).unwrap().generator;
    let start = reconstruction_loss(&pre, held_out, &norm, &base, 7).unwrap();
    let loss = |w: f64| {
        let cfg = GanConfig { recon_weight: w, ..base.clone() };
        let out = train_gan(train, &norm, &cfg, pre.clone()).unwrap();
        assert_eq!(out.gen_losses.len(), 40);
        reconstruction_loss(&out.generator, held_out, &norm, &cfg, 7).unwrap()
    };
    let anchored = loss(1.0);
    let free = loss(0.0);
    assert!(anchored < free, "anchored {anchored}, free {free}, start {start}");
    assert!(anchored < 1.5 * start, "anchored {anchored}, start {start}");
}

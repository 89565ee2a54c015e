use geoprior_core::geodesic::SeedPolicies;
use geoprior_core::noise::{synthesize_noisy, NoiseSpec};
use geoprior_core::synth::{generate_phantom, PhantomSpec};
use geoprior_nn::gradcheck::check_model;
use geoprior_nn::{DenseBlockConfig, Gae, GaeConfig, Graph, ParamStore, SegmentorConfig, Tensor};
use geoprior_train::data::{prior_maps, EvalExample, PriorExample, SegExample};
use geoprior_train::{total_loss, train_gae, train_segmentor, Control, Error, LabelSource, PriorMode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 5], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny_gae() -> Gae<f64> {
    let cfg = GaeConfig {
        input: [2, 4, 4],
        in_channels: 3,
        classes: 4,
        blocks: 1,
        dense: DenseBlockConfig {
            layers: 1,
            growth: 2,
            first_conv: 2,
        },
        feat_len: 6,
        alpha: 0.1,
    };
    let mut g = Gae::new(cfg, 3).unwrap();
    g.store.freeze();
    g
}

fn targets(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i * 7 % 4) as u8).collect()
}

#[test]
fn total_loss_identities() {
    let mut gae = tiny_gae();
    let logits = random([2, 4, 2, 4, 4], 1);
    let t = targets(64);
    let feat_g = random([2, 6, 1, 1, 1], 2);

    let mut g = Graph::new();
    let l = g.leaf(logits.clone(), true);
    let f = g.constant(feat_g.clone());
    let n = total_loss(&mut g, l, &t, Some((&mut gae, f)), 0.0).unwrap();
    assert_eq!(g.value(n.total).item(), g.value(n.seg).item());
    assert!(g.value(n.gae.unwrap()).item() > 0.0);

    // Feed the encoder's own code of P back as the target.
    let mut g = Graph::new();
    let l = g.leaf(logits.clone(), true);
    let p = g.softmax(l);
    let fg = geoprior_nn::models::foreground_channels(&mut g, p).unwrap();
    let own = gae.encode(&mut g, fg, geoprior_nn::Mode::Eval).unwrap();
    let own = g.value(own).clone();
    let mut g = Graph::new();
    let l = g.leaf(logits, true);
    let f = g.constant(own);
    let n = total_loss(&mut g, l, &t, Some((&mut gae, f)), 1.0).unwrap();
    assert_eq!(g.value(n.gae.unwrap()).item(), 0.0);
    assert_eq!(g.value(n.total).item(), g.value(n.seg).item());
}

#[test]
fn total_loss_gradient_through_frozen_encoder() {
    let mut gae = tiny_gae();
    let before = gae.store.checksum();
    let t = targets(64);
    for (k, lambda) in [1.0, 0.5, 3.0].into_iter().enumerate() {
        let feat_g = random([2, 6, 1, 1, 1], 10 + k as u64);
        let r = check_model(
            &mut ParamStore::new(),
            &[random([2, 4, 2, 4, 4], 20 + k as u64)],
            |g, _, ids| {
                let f = g.constant(feat_g.clone());
                total_loss(g, ids[0], &t, Some((&mut gae, f)), lambda).map(|l| l.total).map_err(|e| geoprior_nn::Error::Config(e.to_string()))
            },
            1e-5,
            40,
            30 + k as u64,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
    assert_eq!(gae.store.checksum(), before);
}

struct Corpus {
    train: Vec<SegExample>,
    val: Vec<EvalExample>,
    gae_train: Vec<PriorExample>,
    gae_val: Vec<PriorExample>,
}

fn corpus(n_train: usize, n_val: usize, mode: PriorMode) -> Corpus {
    let spec = PhantomSpec::default();
    let pol = SeedPolicies::default();
    let mut c = Corpus {
        train: vec![],
        val: vec![],
        gae_train: vec![],
        gae_val: vec![],
    };
    for i in 0..(n_train + n_val) as u64 {
        let p = generate_phantom(&spec, i).unwrap();
        let noisy = synthesize_noisy(&p.labels, &NoiseSpec::l2().for_image(i)).unwrap();
        let prior = prior_maps(&noisy, mode, &pol).unwrap();
        if let Some(m) = &prior {
            let e = PriorExample {
                maps: m.clone(),
                labels: noisy.clone(),
            };
            if (i as usize) < n_train {
                c.gae_train.push(e)
            } else {
                c.gae_val.push(e)
            }
        }
        if (i as usize) < n_train {
            c.train.push(SegExample {
                image: p.image,
                labels: noisy,
                prior,
            });
        } else {
            c.val.push(EvalExample {
                image: p.image,
                clean: p.labels,
            });
        }
    }
    c
}

fn quick(mode: PriorMode, lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        lambda_gae: lambda,
        patience: 5,
        seed: 11,
        prior: mode,
        labels: LabelSource::L2,
        ..Default::default()
    }
}

#[test]
fn prior_modes_need_an_autoencoder() {
    let c = corpus(2, 1, PriorMode::Geodesic);
    let err = train_segmentor::<f64>(&c.train, &c.val, SegmentorConfig::toy(), &quick(PriorMode::Geodesic, 1.0), None, &mut |_, _| Ok(Control::Continue)).unwrap_err();
    assert!(matches!(err, Error::MissingStage(_)), "{err}");
    let bad = TrainConfig {
        lambda_gae: -0.5,
        ..quick(PriorMode::None, 1.0)
    };
    assert!(matches!(
        train_segmentor::<f64>(&c.train, &c.val, SegmentorConfig::toy(), &bad, None, &mut |_, _| Ok(Control::Continue)),
        Err(Error::Config(_))
    ));
}

#[test]
fn coupled_training_contracts() {
    let c = corpus(4, 2, PriorMode::Geodesic);
    let gcfg = quick(PriorMode::Geodesic, 1.0);
    let mut trained = train_gae::<f64>(&c.gae_train, &c.gae_val, GaeConfig::toy(), &gcfg, &mut |_, _| Ok(Control::Continue)).unwrap();
    assert!(trained.model.store.is_frozen());
    assert_eq!(trained.epochs.len(), 2);
    let gae_sum = trained.model.store.checksum();

    let seg = train_segmentor::<f64>(&c.train, &c.val, SegmentorConfig::toy(), &gcfg, Some(&mut trained.model), &mut |_, _| Ok(Control::Continue)).unwrap();
    assert_eq!(trained.model.store.checksum(), gae_sum);
    assert_eq!(seg.gae_checksum.as_deref(), Some(gae_sum.as_str()));
    assert_eq!(seg.steps.len(), 4);
    for s in &seg.steps {
        assert!((s.l_tot - (s.l_seg + s.l_gae.unwrap())).abs() < 1e-9);
    }

    // With no weight on the prior the trajectory is the plain segmentor's.
    let zero = train_segmentor::<f64>(&c.train, &c.val, SegmentorConfig::toy(), &quick(PriorMode::Geodesic, 0.0), Some(&mut trained.model), &mut |_, _| Ok(Control::Continue)).unwrap();
    let none = train_segmentor::<f64>(&c.train, &c.val, SegmentorConfig::toy(), &quick(PriorMode::None, 0.0), None, &mut |_, _| Ok(Control::Continue)).unwrap();
    assert_eq!(zero.model.store.checksum(), none.model.store.checksum());
    let seg_losses = |t: &geoprior_train::TrainedSegmentor<f64>| t.steps.iter().map(|s| s.l_seg.to_bits()).collect::<Vec<_>>();
    assert_eq!(seg_losses(&zero), seg_losses(&none));
    assert_eq!(zero.epochs, none.epochs);

    let again = train_segmentor::<f64>(&c.train, &c.val, SegmentorConfig::toy(), &quick(PriorMode::None, 0.0), None, &mut |_, _| Ok(Control::Continue)).unwrap();
    assert_eq!(again.model.store.checksum(), none.model.store.checksum());
}

#[test]
fn callback_and_step_cap_stop_training() {
    let c = corpus(4, 1, PriorMode::None);
    let cfg = TrainConfig {
        epochs: 10,
        max_steps: Some(3),
        ..quick(PriorMode::None, 1.0)
    };
    let out = train_segmentor::<f32>(&c.train, &c.val, SegmentorConfig::toy(), &cfg, None, &mut |_, _| Ok(Control::Continue)).unwrap();
    assert_eq!(out.steps.len(), 3);
    let cfg = TrainConfig { epochs: 10, ..quick(PriorMode::None, 1.0) };
    let out = train_segmentor::<f32>(&c.train, &c.val, SegmentorConfig::toy(), &cfg, None, &mut |_, e| {
        Ok(if e.epoch == 1 { Control::Stop } else { Control::Continue })
    })
    .unwrap();
    assert_eq!(out.epochs.len(), 2);
}

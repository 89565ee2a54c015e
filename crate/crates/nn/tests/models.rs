use geoprior_nn::checkpoint::{self, decode_params_into, encode_params};
use geoprior_nn::gradcheck::check_model;
use geoprior_nn::layers::DenseBlock;
use geoprior_nn::models::foreground_channels;
use geoprior_nn::params::Init;
use geoprior_nn::{DenseBlockConfig, Gae, GaeConfig, Graph, Mode, ParamStore, Segmentor, SegmentorConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 5], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dense(layers: usize, growth: usize, first_conv: usize) -> DenseBlockConfig {
    DenseBlockConfig {
        layers,
        growth,
        first_conv,
    }
}

#[test]
fn dense_block_channels() {
    for (cin, l, k, want) in [(8, 4, 4, 24), (16, 4, 16, 80), (3, 1, 1, 4), (5, 2, 7, 19), (1, 3, 2, 7)] {
        let mut store = ParamStore::<f64>::new();
        let db = DenseBlock::new(&mut store, &mut Init::new(0), "db", cin, dense(l, k, 1), 0.1).unwrap();
        assert_eq!(db.cout, want);
        let mut g = Graph::new();
        let x = g.constant(random([1, cin, 2, 4, 4], 1));
        let out = db.forward(&mut g, &mut store, x, Mode::Train).unwrap();
        assert_eq!(g.value(out.all).shape(), [1, want, 2, 4, 4]);
        assert_eq!(g.value(out.new).channels(), l * k);
    }
    assert!(dense(0, 4, 8).validate().is_err());
    assert!(dense(2, 0, 8).validate().is_err());
}

#[test]
fn full_config_is_valid() {
    let cfg = SegmentorConfig::full([2, 16, 16]);
    assert_eq!((cfg.blocks, cfg.dense.layers, cfg.dense.growth, cfg.dense.first_conv), (4, 4, 16, 16));
    let mut seg = Segmentor::<f64>::new(cfg, 0).unwrap();
    let p = seg.predict(&Tensor::zeros([1, 1, 2, 16, 16])).unwrap();
    assert_eq!(p.shape(), [1, 4, 2, 16, 16]);
    let gcfg = GaeConfig {
        input: [2, 16, 16],
        blocks: 4,
        dense: cfg.dense,
        ..GaeConfig::toy()
    };
    let mut gae = Gae::<f64>::new(gcfg, 0).unwrap();
    assert_eq!(gae.features(&Tensor::zeros([1, 3, 2, 16, 16])).unwrap().shape(), [1, 64, 1, 1, 1]);
    assert!(Segmentor::<f64>::new(SegmentorConfig::full([10, 200, 200]), 0).is_err());
}

#[test]
fn invalid_configs() {
    let mut cfg = SegmentorConfig::toy();
    cfg.input = [8, 30, 32];
    assert!(Segmentor::<f64>::new(cfg, 0).is_err());
    cfg.input = [8, 32, 32];
    cfg.blocks = 6;
    assert!(Segmentor::<f64>::new(cfg, 0).is_err());
    let mut gcfg = GaeConfig::toy();
    gcfg.feat_len = 0;
    assert!(Gae::<f64>::new(gcfg, 0).is_err());
    let mut seg = Segmentor::<f64>::new(SegmentorConfig::toy(), 0).unwrap();
    assert!(seg.predict(&Tensor::zeros([1, 1, 8, 16, 32])).is_err());
}

fn assert_normalized(p: &Tensor<f64>) {
    let [nb, c, ..] = p.shape();
    let v = p.voxels();
    for b in 0..nb {
        for i in 0..v {
            let s: f64 = (0..c).map(|ch| p.data()[(b * c + ch) * v + i]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn toy_segmentor_contract() {
    let mut seg = Segmentor::<f64>::new(SegmentorConfig::toy(), 3).unwrap();
    let p = seg.predict(&random([1, 1, 8, 32, 32], 4)).unwrap();
    assert_eq!(p.shape(), [1, 4, 8, 32, 32]);
    assert_normalized(&p);

    let mut g = Graph::new();
    let x = g.constant(Tensor::filled([2, 1, 8, 32, 32], 0.5));
    let l = seg.logits(&mut g, x, Mode::Train).unwrap();
    let loss = g.softmax_ce(l, &vec![2u8; 2 * 8 * 32 * 32]).unwrap();
    assert!(g.value(loss).item().is_finite());
    g.backward(loss).unwrap();
    seg.store.pull_grads(&g);
    seg.store.ensure_grads().unwrap();
    assert!(seg.store.entries().iter().all(|e| e.grad.iter().all(|v| v.is_finite())));
}

#[test]
fn toy_gae_contract() {
    let mut gae = Gae::<f64>::new(GaeConfig::toy(), 5).unwrap();
    let maps = random([2, 3, 8, 32, 32], 6);
    let f = gae.features(&maps).unwrap();
    assert_eq!(f.shape(), [2, 64, 1, 1, 1]);
    let f2 = gae.features(&Tensor::zeros([2, 3, 8, 32, 32])).unwrap();
    assert_eq!(f2.len(), f.len());
    let p = gae.predict(&maps).unwrap();
    assert_eq!(p.shape(), [2, 4, 8, 32, 32]);
    assert_normalized(&p);
}

fn tiny_segmentor() -> SegmentorConfig {
    SegmentorConfig {
        input: [2, 4, 4],
        in_channels: 1,
        classes: 3,
        blocks: 1,
        dense: dense(1, 2, 2),
        alpha: 0.1,
    }
}

#[test]
fn gradcheck_one_block_segmentor() {
    let mut seg = Segmentor::<f64>::new(tiny_segmentor(), 11).unwrap();
    let target: Vec<u8> = (0..2 * 2 * 16).map(|i| (i * 7 % 3) as u8).collect();
    let mut store = seg.store.clone();
    let x = random([2, 1, 2, 4, 4], 12);
    let r = check_model(
        &mut store,
        &[x],
        |g, store, ids| {
            std::mem::swap(&mut seg.store, store);
            let l = seg.logits(g, ids[0], Mode::Train);
            std::mem::swap(&mut seg.store, store);
            g.softmax_ce(l?, &target)
        },
        1e-5,
        12,
        13,
    )
    .unwrap();
    assert!(r.checked > 100);
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn gradcheck_gae() {
    let cfg = GaeConfig {
        input: [2, 4, 4],
        in_channels: 3,
        classes: 4,
        blocks: 1,
        dense: dense(1, 2, 2),
        feat_len: 5,
        alpha: 0.1,
    };
    let mut gae = Gae::<f64>::new(cfg, 21).unwrap();
    let target: Vec<u8> = (0..2 * 2 * 16).map(|i| (i * 5 % 4) as u8).collect();
    let mut store = gae.store.clone();
    let r = check_model(
        &mut store,
        &[random([2, 3, 2, 4, 4], 22)],
        |g, store, ids| {
            std::mem::swap(&mut gae.store, store);
            let l = gae.logits(g, ids[0], Mode::Train);
            std::mem::swap(&mut gae.store, store);
            g.softmax_ce(l?, &target)
        },
        1e-5,
        12,
        23,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn gradcheck_through_frozen_encoder() {
    let gcfg = GaeConfig {
        input: [2, 4, 4],
        in_channels: 2,
        classes: 3,
        blocks: 1,
        dense: dense(1, 2, 2),
        feat_len: 4,
        alpha: 0.1,
    };
    let mut gae = Gae::<f64>::new(gcfg, 31).unwrap();
    gae.store.freeze();
    let before = gae.store.checksum();
    let feat_g = gae.features(&random([2, 2, 2, 4, 4], 32)).unwrap();
    let mut seg = Segmentor::<f64>::new(tiny_segmentor(), 33).unwrap();
    let target: Vec<u8> = (0..2 * 2 * 16).map(|i| (i % 3) as u8).collect();
    let mut store = seg.store.clone();
    let r = check_model(
        &mut store,
        &[random([2, 1, 2, 4, 4], 34)],
        |g, store, ids| {
            std::mem::swap(&mut seg.store, store);
            let l = seg.logits(g, ids[0], Mode::Train);
            std::mem::swap(&mut seg.store, store);
            let l = l?;
            let ce = g.softmax_ce(l, &target)?;
            let p = g.softmax(l);
            let fg = foreground_channels(g, p)?;
            let f = gae.encode(g, fg, Mode::Eval)?;
            let fgt = g.constant(feat_g.clone());
            let mse = g.mse(f, fgt)?;
            g.add_scaled(ce, mse, 1.0)
        },
        1e-5,
        12,
        35,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
    assert_eq!(gae.store.checksum(), before);
}

#[test]
fn running_statistics_track_batches() {
    let mut seg = Segmentor::<f64>::new(SegmentorConfig::toy(), 1).unwrap();
    let id = seg.store.find("down0.l0.bn.running_mean").unwrap();
    assert!(seg.store.value(id).data().iter().all(|&v| v == 0.0));
    let mut g = Graph::new();
    let x = g.constant(Tensor::filled([1, 1, 8, 32, 32], 2.0));
    seg.logits(&mut g, x, Mode::Train).unwrap();
    seg.store.clear_bindings();
    assert!(seg.store.value(id).data().iter().any(|&v| v != 0.0));
    let before = seg.store.checksum();
    seg.predict(&Tensor::filled([1, 1, 8, 32, 32], 2.0)).unwrap();
    assert_eq!(seg.store.checksum(), before);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut seg = Segmentor::<f64>::new(SegmentorConfig::toy(), 8).unwrap();
    seg.store.step = 17;
    let m = seg.save(&dir.path().join("seg")).unwrap();
    assert_eq!((m.model.as_str(), m.step, m.dtype), ("segmentor", 17, 2));
    let mut back = Segmentor::<f64>::load(&dir.path().join("seg")).unwrap();
    assert_eq!(back.store.checksum(), seg.store.checksum());
    let x = random([1, 1, 8, 32, 32], 9);
    assert_eq!(back.predict(&x).unwrap().data(), seg.predict(&x).unwrap().data());
    assert!(Gae::<f64>::load(&dir.path().join("seg")).is_err());
    assert!(Segmentor::<f32>::load(&dir.path().join("seg")).is_err());

    let gae = Gae::<f32>::new(GaeConfig::toy(), 4).unwrap();
    gae.save(&dir.path().join("gae")).unwrap();
    assert_eq!(Gae::<f32>::load(&dir.path().join("gae")).unwrap().store.checksum(), gae.store.checksum());

    let params = dir.path().join("seg").join(checkpoint::PARAMS_FILE);
    let mut bytes = std::fs::read(&params).unwrap();
    bytes[100] ^= 1;
    std::fs::write(&params, &bytes).unwrap();
    assert!(Segmentor::<f64>::load(&dir.path().join("seg")).is_err());
}

#[test]
fn payload_must_match_model() {
    let a = Segmentor::<f64>::new(SegmentorConfig::toy(), 1).unwrap();
    let mut b = Segmentor::<f64>::new(tiny_segmentor(), 1).unwrap();
    assert!(decode_params_into(&mut b.store, &encode_params(&a.store)).is_err());
    let bytes = encode_params(&a.store);
    let mut c = Segmentor::<f64>::new(SegmentorConfig::toy(), 2).unwrap();
    assert!(decode_params_into(&mut c.store, &bytes[..bytes.len() - 1]).is_err());
    decode_params_into(&mut c.store, &bytes).unwrap();
    assert_eq!(c.store.checksum(), a.store.checksum());
}

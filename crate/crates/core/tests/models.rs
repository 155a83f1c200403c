use nucleonet::data::Standardizer;
use nucleonet::model::{
    combine_predictions, transfer_params, transfer_weights, Cae, Checkpoint, Cnn, HeadOutput, ModelKind, ModelSpec,
    TrainingMeta, TwoCycleModel, Variant,
};
use nucleonet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(seed: u64, shape: [usize; 3]) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0))
}

#[test]
fn default_network_layer_shapes() {
    let mut spec = ModelSpec::full(Variant::Default, 0);
    spec.n_attr = 19;
    spec.feedback_dim = 19;
    spec.validate().unwrap();
    let expected: Vec<(&str, Vec<usize>)> = vec![
        ("input", vec![3, 32, 32]),
        ("dropout", vec![3, 32, 32]),
        ("conv1", vec![80, 30, 30]),
        ("conv2", vec![80, 28, 28]),
        ("conv3", vec![120, 26, 26]),
        ("pool3", vec![120, 13, 13]),
        ("conv4", vec![100, 11, 11]),
        ("conv5", vec![140, 9, 9]),
        ("conv6", vec![140, 7, 7]),
        ("pool6", vec![140, 3, 3]),
        ("fc1", vec![400]),
        ("fc2", vec![100]),
        ("concat", vec![119]),
        ("fc_post", vec![100]),
        ("sigmoid", vec![19]),
    ];
    let trace = spec.trace().unwrap();
    let got: Vec<(&str, Vec<usize>)> = trace.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
    assert_eq!(got, expected);

    // The built network agrees with the trace.
    let net = Cnn::<f32>::build(&spec, 3).unwrap();
    assert_eq!(net.conv_features(&image(1, [3, 32, 32])).unwrap().shape(), &[140, 3, 3]);
    let out = net.infer(&image(1, [3, 32, 32]), &[0.0; 19], None).unwrap();
    assert!(matches!(out, HeadOutput::Flat(ref p) if p.len() == 19));
}

#[test]
fn variant_layouts() {
    let d = ModelSpec::full(Variant::Default, 0);
    assert_eq!(d.concat_width(), 100 + 15);
    assert!(d.trace().unwrap().iter().all(|(n, _)| n != "fc_inject"));
    let wf = ModelSpec::full(Variant::Wf, 150);
    assert_eq!(wf.concat_width(), 100 + 15 + 150);
    assert!(wf.trace().unwrap().iter().any(|(n, s)| n == "fc_inject" && s == &vec![1000]));
    let wfm = ModelSpec::full(Variant::Wfm, 150);
    assert_eq!((wfm.output_arity(), wfm.feedback_dim), (16, 16));

    let mut broken = ModelSpec::full(Variant::Wf, 150);
    broken.injected_dim = 0;
    assert!(broken.validate().unwrap_err().to_string().contains("injected_dim"));
}

#[test]
fn split_head_outputs_are_probabilities() {
    let spec = ModelSpec::full(Variant::Wfm, 20).with_width_divisor(4);
    let net = Cnn::<f64>::build(&spec, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let x = Tensor::from_fn(&[3, 32, 32], |_| rng.random_range(0.0..1.0));
        let inj: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fb: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        match net.infer(&x, &fb, Some(&inj)).unwrap() {
            HeadOutput::Split { attr, shape } => {
                assert!((shape.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(attr.iter().all(|&p| p > 0.0 && p < 1.0));
            }
            HeadOutput::Flat(_) => panic!("expected split heads"),
        }
    }
    assert!(net.infer(&Tensor::zeros(&[3, 32, 32]), &[0.0; 16], None).is_err());
}

fn cae_checkpoint(cae: &Cae<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new(ModelKind::Cae, cae.spec().clone(), TrainingMeta::default());
    ck.add_params("", cae.params());
    ck
}

#[test]
fn transfer_copies_the_encoder() {
    let spec = ModelSpec::full(Variant::W, 0).with_width_divisor(4);
    let cae = Cae::<f32>::build(&spec, 7).unwrap();
    let ck = Checkpoint::from_bytes(&cae_checkpoint(&cae).to_bytes()).unwrap();
    let x = image(3, [3, 32, 32]);

    let mut a = Cnn::<f32>::build(&spec, 100).unwrap();
    let mut b = Cnn::<f32>::build(&spec, 200).unwrap();
    transfer_weights(&ck, &mut a).unwrap();
    transfer_weights(&ck, &mut b).unwrap();
    assert_eq!(a.conv_features(&x).unwrap(), cae.encode(&x).unwrap());

    // Conv layers identical across init seeds, fully-connected layers not.
    for (name, t) in a.params().iter() {
        let other = b.params().by_name(name).unwrap();
        if name.starts_with("conv") {
            assert_eq!(t, other, "{name}");
        } else if name.ends_with("weight") {
            assert_ne!(t, other, "{name}");
        }
    }

    let once = a.clone();
    transfer_weights(&ck, &mut a).unwrap();
    assert_eq!(a.params(), once.params());
}

#[test]
fn transfer_rejects_mismatched_layers() {
    let small = ModelSpec::full(Variant::W, 0).with_width_divisor(4);
    let cae = Cae::<f32>::build(&small, 7).unwrap();
    let mut wide = Cnn::<f32>::build(&ModelSpec::full(Variant::W, 0).with_width_divisor(2), 1).unwrap();
    let err = transfer_params(cae.params(), &mut wide).unwrap_err();
    assert!(err.to_string().contains("conv1"), "{err}");

    let mut cnn_ck = Checkpoint::new(ModelKind::Cnn, small.clone(), TrainingMeta::default());
    cnn_ck.add_params("", cae.params());
    let mut net = Cnn::<f32>::build(&small, 1).unwrap();
    assert!(transfer_weights(&cnn_ck, &mut net).is_err());
}

fn two_cycle(variant: Variant, dim: usize, seed: u64) -> TwoCycleModel<f32> {
    let spec = ModelSpec::full(variant, dim).with_width_divisor(8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TwoCycleModel {
        cycle1: Cnn::build(&spec, seed).unwrap(),
        cycle2: Cnn::build(&spec, seed + 1).unwrap(),
        standardizer: (dim > 0).then(|| Standardizer {
            mean: (0..dim).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect(),
            std: (0..dim).map(|_| rng.random_range(0.5f32..2.0) as f64).collect(),
        }),
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model = two_cycle(Variant::Wfm, 12, 40);
    let meta = TrainingMeta {
        epoch: 60,
        cycle: 2,
        rng_state: 99,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nnck");
    model.to_checkpoint(meta).save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"NNCK");
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.meta, meta);
    assert_eq!(ck.to_bytes(), bytes);
    let loaded = TwoCycleModel::<f32>::from_checkpoint(&ck).unwrap();

    let raw: Vec<f32> = (0..12).map(|i| i as f32 * 0.3).collect();
    for s in 0..3 {
        let x = image(s, [3, 32, 32]);
        let (a1, a2) = model.infer(&x, Some(&raw)).unwrap();
        let (b1, b2) = loaded.infer(&x, Some(&raw)).unwrap();
        assert_eq!((a1, a2), (b1, b2));
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let bytes = two_cycle(Variant::Default, 0, 1).to_checkpoint(TrainingMeta::default()).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn feedback_changes_cycle_two_outputs() {
    let model = two_cycle(Variant::Wf, 8, 3);
    let x = image(9, [3, 32, 32]);
    let raw = vec![0.5f32; 8];
    let (first, second) = model.infer(&x, Some(&raw)).unwrap();
    let inj = model.prepare_injected(Some(&raw)).unwrap().unwrap();
    let zero_fb = model.cycle2.infer(&x, &[0.0; 15], Some(&inj)).unwrap();
    assert_ne!(zero_fb, second);
    assert_eq!(model.cycle2.infer(&x, &first.to_feedback(), Some(&inj)).unwrap(), second);
    assert_eq!(model.infer(&x, Some(&raw)).unwrap().1, second);
}

#[test]
fn combination_takes_attributes_and_shapes_from_each_side() {
    let wf = two_cycle(Variant::Wf, 8, 3);
    let wfm = two_cycle(Variant::Wfm, 8, 4);
    let raw = vec![0.25f32; 8];
    let x = image(2, [3, 32, 32]);
    let a = wf.predict(&x, Some(&raw)).unwrap();
    let b = wfm.predict(&x, Some(&raw)).unwrap();
    let c = combine_predictions(&a, &b).unwrap();
    assert_eq!(c.attributes, a.attributes);
    assert_eq!(c.shapes, b.shapes);
    assert_eq!(combine_predictions(&a, &a).unwrap(), a);
}

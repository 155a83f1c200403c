use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nucleonet::data::synth::{classify_axis_ratio, generate_labels, measured_axis_ratio, render};
use nucleonet::data::{
    extract_features, gen_synthetic, load_feature_file, load_manifest, FeatureMatrix, ShapeClass, SynthParams,
};
use nucleonet::training::{split_dataset, Dataset};
use nucleonet::Tensor;

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small(seed: u64, count: usize) -> SynthParams {
    SynthParams {
        seed,
        count,
        ..Default::default()
    }
}

#[test]
fn generator_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_synthetic(&small(7, 60), a.path()).unwrap();
    gen_synthetic(&small(7, 60), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 61);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    gen_synthetic(&small(8, 60), c.path()).unwrap();
    assert_ne!(tree(c.path()), ta);
}

#[test]
fn manifest_reloads_to_the_generated_labels() {
    let dir = tempfile::tempdir().unwrap();
    let made = gen_synthetic(&small(3, 40), dir.path()).unwrap();
    let loaded = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(loaded.records, made.records);
    assert!(loaded.records.iter().all(|r| r.labels.validate().is_ok()));
}

#[test]
fn rendered_outlines_agree_with_shape_labels() {
    let params = small(5, 1500);
    let labels = generate_labels(&params).unwrap();
    let (mut agree, mut total) = (0usize, 0usize);
    for (i, l) in labels.iter().enumerate() {
        if matches!(l.shape, ShapeClass::Irregular | ShapeClass::NoNucleus) {
            continue;
        }
        let img = render(&params, i, l);
        let ratio = measured_axis_ratio(&img.nucleus_mask, params.side).unwrap();
        total += 1;
        agree += (classify_axis_ratio(ratio) == Some(l.shape)) as usize;
    }
    let rate = agree as f64 / total as f64;
    println!("shape agreement {agree}/{total} = {rate:.4}");
    assert!(total > 700);
    assert!(rate >= 0.99, "{rate}");
}

#[test]
fn feature_file_matches_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_synthetic(&small(4, 12), dir.path()).unwrap();
    let feats = extract_features(&manifest, 150).unwrap();
    assert_eq!((feats.count(), feats.dim), (12, 150));
    let path = dir.path().join("f.nfv");
    feats.save(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 12);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 150);
    let back = load_feature_file(&path).unwrap();
    assert_eq!(
        back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        feats.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    // Regeneration gives the same rows in the same order.
    assert_eq!(extract_features(&manifest, 150).unwrap(), feats);
}

#[test]
fn feature_file_layout() {
    let m = FeatureMatrix::new(4, (0..12).map(|i| i as f32 - 5.5).collect()).unwrap();
    let bytes = m.to_bytes();
    assert_eq!(&bytes[..4], b"NFV1");
    assert_eq!(bytes.len(), 12 + 3 * 4 * 4);
    let mut short = bytes.clone();
    short.pop();
    assert!(FeatureMatrix::from_bytes(&short).is_err());
    let mut magic = bytes;
    magic[3] = b'2';
    assert!(FeatureMatrix::from_bytes(&magic).is_err());
}

#[test]
fn dataset_rejects_feature_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_synthetic(&small(4, 6), dir.path()).unwrap();
    let feats = FeatureMatrix::new(3, vec![0.0; 15]).unwrap();
    assert!(Dataset::<f32>::load(&manifest, 32, Some(feats)).is_err());
    let data = Dataset::<f32>::load(&manifest, 32, None).unwrap();
    assert!(data.images.iter().all(|x| x.shape() == [3, 32, 32]));
}

#[test]
fn center_crop_reembeds_exactly() {
    let x = Tensor::<f64>::from_fn(&[3, 50, 50], |i| (i as f64 * 0.37).sin());
    let crop = x.center_crop(32).unwrap();
    let off = (50 - 32) / 2;
    let mut back = x.data().to_vec();
    for c in 0..3 {
        for i in 0..32 {
            for j in 0..32 {
                back[(c * 50 + i + off) * 50 + j + off] = crop.data()[(c * 32 + i) * 32 + j];
            }
        }
    }
    assert_eq!(back, x.data());
}

#[test]
fn splits_partition_the_indices() {
    for round in 0..5 {
        let (train, test) = split_dataset(2078, 0, 400.0 / 2078.0, round).unwrap();
        assert_eq!((train.len(), test.len()), (1678, 400));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..2078).collect::<Vec<_>>());
        assert_eq!(split_dataset(2078, 0, 400.0 / 2078.0, round).unwrap().1, test);
    }
    let a = split_dataset(100, 0, 0.2, 0).unwrap().1;
    assert_ne!(a, split_dataset(100, 0, 0.2, 1).unwrap().1);
    assert_ne!(a, split_dataset(100, 1, 0.2, 0).unwrap().1);
}

use nucleonet::evaluation::{auroc, roc_curve, ScoredLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn samples(scores: &[f64], truths: &[bool]) -> Vec<ScoredLabel> {
    scores
        .iter()
        .zip(truths)
        .map(|(&score, &truth)| ScoredLabel { score, truth })
        .collect()
}

/// Fraction of positive/negative pairs ranked correctly, ties worth half.
fn mann_whitney(s: &[ScoredLabel]) -> f64 {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for p in s.iter().filter(|x| x.truth) {
        for n in s.iter().filter(|x| !x.truth) {
            pairs += 1.0;
            credit += if p.score > n.score {
                1.0
            } else if p.score == n.score {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / pairs
}

/// Random instance with at least one of each class and injected ties.
fn random_instance(rng: &mut ChaCha8Rng) -> Vec<ScoredLabel> {
    let n = rng.random_range(2..=60usize);
    let levels = rng.random_range(1..=n);
    let mut out: Vec<ScoredLabel> = (0..n)
        .map(|_| {
            let score = if rng.random_bool(0.5) {
                rng.random_range(0..levels) as f64 / levels as f64
            } else {
                rng.random_range(0.0..1.0)
            };
            ScoredLabel {
                score,
                truth: rng.random_bool(0.4),
            }
        })
        .collect();
    out[0].truth = true;
    out[1].truth = false;
    if rng.random_bool(0.3) {
        out[1].score = out[0].score;
    }
    out
}

#[test]
fn trapezoid_equals_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    let mut tied = 0;
    for _ in 0..500 {
        let s = random_instance(&mut rng);
        let mut scores: Vec<f64> = s.iter().map(|x| x.score).collect();
        scores.sort_by(f64::total_cmp);
        scores.dedup();
        tied += (scores.len() < s.len()) as usize;
        worst = worst.max((auroc(&s).unwrap() - mann_whitney(&s)).abs());
    }
    println!("auroc max deviation over 500 instances ({tied} with ties): {worst:e}");
    assert!(tied > 100);
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn worked_example() {
    let s = samples(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]);
    assert_eq!(auroc(&s).unwrap(), 0.75);
}

#[test]
fn degenerate_rankings() {
    let t = [true, false, true, false];
    assert_eq!(auroc(&samples(&[0.9, 0.1, 0.8, 0.2], &t)).unwrap(), 1.0);
    assert_eq!(auroc(&samples(&[0.1, 0.9, 0.2, 0.8], &t)).unwrap(), 0.0);
    let flat = samples(&[0.5; 4], &t);
    assert_eq!(auroc(&flat).unwrap(), 0.5);
    assert_eq!(roc_curve(&flat).unwrap(), vec![(0.0, 0.0), (1.0, 1.0)]);
    assert!(auroc(&samples(&[0.3, 0.4], &[true, true])).is_err());
}

#[test]
fn invariant_under_monotone_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let s = random_instance(&mut rng);
        let mapped: Vec<ScoredLabel> = s
            .iter()
            .map(|x| ScoredLabel {
                score: (3.0 * x.score - 1.0).exp(),
                truth: x.truth,
            })
            .collect();
        assert!((auroc(&s).unwrap() - auroc(&mapped).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn flipping_truths_complements() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let s = random_instance(&mut rng);
        let flipped: Vec<ScoredLabel> = s
            .iter()
            .map(|x| ScoredLabel {
                score: x.score,
                truth: !x.truth,
            })
            .collect();
        assert!((auroc(&s).unwrap() + auroc(&flipped).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn curve_is_monotone_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..200 {
        let pts = roc_curve(&random_instance(&mut rng)).unwrap();
        assert_eq!(pts[0], (0.0, 0.0));
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        for w in pts.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert!(pts.iter().all(|&(x, y)| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)));
    }
}

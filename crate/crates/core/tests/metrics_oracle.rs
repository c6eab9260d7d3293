//! Metrics against brute-force reimplementations on random small instances.

use fairdp::metrics::{accuracy, f1_binary, group_disparity, mse, scores_by_group};
use fairdp::{Dataset, Example, GroupScores, MetricKind, RngStream, TaskKind};

fn labels(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect()
}

fn brute_accuracy(p: &[f64], y: &[f64]) -> f64 {
    let mut correct = 0;
    for i in 0..p.len() {
        if p[i] == y[i] {
            correct += 1;
        }
    }
    correct as f64 / p.len() as f64
}

fn brute_f1(p: &[f64], y: &[f64]) -> (f64, f64) {
    let tp = (0..p.len()).filter(|&i| p[i] == 1.0 && y[i] == 1.0).count() as f64;
    let fp = (0..p.len()).filter(|&i| p[i] == 1.0 && y[i] == 0.0).count() as f64;
    let fne = (0..p.len()).filter(|&i| p[i] == 0.0 && y[i] == 1.0).count() as f64;
    if tp == 0.0 {
        return (0.0, 0.0);
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fne);
    (2.0 * tp / (2.0 * tp + fp + fne), 2.0 * precision * recall / (precision + recall))
}

#[test]
fn classification_metrics_match_brute_force() {
    let mut rng = RngStream::new(10, "metrics");
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 12) as usize;
        let p = labels(&mut rng, n);
        let y = labels(&mut rng, n);
        assert_eq!(accuracy(&p, &y).unwrap(), brute_accuracy(&p, &y));
        let (counted, from_pr) = brute_f1(&p, &y);
        let f1 = f1_binary(&p, &y).unwrap();
        assert_eq!(f1, counted);
        assert!((f1 - from_pr).abs() < 1e-12);
    }
}

#[test]
fn mse_matches_brute_force() {
    let mut rng = RngStream::new(11, "mse");
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 12) as usize;
        let p: Vec<f64> = (0..n).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let mut sse = 0.0;
        for i in 0..n {
            sse += (p[i] - y[i]) * (p[i] - y[i]);
        }
        assert_eq!(mse(&p, &y).unwrap(), sse / n as f64);
    }
}

#[test]
fn disparity_matches_pairwise_maximum() {
    let mut rng = RngStream::new(12, "gd");
    for _ in 0..1000 {
        let g = 1 + (rng.next_u64() % 6) as usize;
        // coarse values so ties are common
        let s: Vec<f64> = (0..g).map(|_| (rng.next_u64() % 5) as f64 / 4.0).collect();
        let kind = if rng.bernoulli(0.5) { MetricKind::Accuracy } else { MetricKind::Mse };
        let report = group_disparity(&GroupScores::new(s.clone(), kind)).unwrap();
        let mut widest = 0.0f64;
        for a in &s {
            for b in &s {
                widest = widest.max((a - b).abs());
            }
        }
        assert_eq!(report.delta, widest);
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = |v: f64| s.iter().position(|x| *x == v).unwrap();
        let (best, worst) = if kind.higher_is_better() {
            (first(max), first(min))
        } else {
            (first(min), first(max))
        };
        assert_eq!((report.best_group, report.worst_group), (best, worst));
    }
}

#[test]
fn pooled_accuracy_is_size_weighted_group_mean() {
    let mut rng = RngStream::new(13, "pooled");
    for _ in 0..200 {
        let n = 4 + (rng.next_u64() % 30) as usize;
        let y = labels(&mut rng, n);
        let p = labels(&mut rng, n);
        let examples: Vec<Example> = (0..n)
            .map(|i| Example::new(vec![0.0], i % 3, y[i]))
            .collect();
        let ds = Dataset::new(examples, 3, TaskKind::Classification).unwrap();
        let per = scores_by_group(&p, &ds, MetricKind::Accuracy).unwrap();
        let sizes: Vec<f64> = ds.group_indices().iter().map(|g| g.len() as f64).collect();
        let weighted: f64 = per.per_group.iter().zip(&sizes).map(|(a, s)| a * s).sum::<f64>() / n as f64;
        assert!((weighted - accuracy(&p, &y).unwrap()).abs() < 1e-12);
    }
}

mod common;

use common::{random_hypergraph, uniform};
use ihnn::hypergraph::Hypergraph;
use ihnn::linalg::DenseMatrix;
use ihnn::model::{
    build_edge_features, classification_loss, classify, head_gradients, membership_loss, sample_membership,
    MembershipBatch, MembershipPair, ModelParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a − b|` relative to the larger magnitude, floored so that `≤ 1e-7`
/// also accepts absolute differences up to 1e-10.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Membership by scanning the raw edge list.
fn is_member(hg: &Hypergraph, e: usize, v: usize) -> bool {
    hg.hyperedges()[e].iter().any(|&m| m == v)
}

#[test]
fn sampler_labels_match_incidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hg = random_hypergraph(&mut rng, 40, 30);
    let batch = sample_membership(&hg, 100_000, &mut rng);
    assert_eq!(batch.len(), 100_000);
    for p in &batch.pairs {
        assert!(p.edge < hg.edge_count() && p.node < hg.node_count());
        assert_eq!(p.member, is_member(&hg, p.edge, p.node));
    }
}

#[test]
fn sampler_member_fraction_is_half() {
    let hg = Hypergraph::new(10, vec![vec![0, 1, 2], vec![3, 4, 5, 6, 7]]).unwrap();
    let fraction = |seed: u64| {
        let batch = sample_membership(&hg, 10_000, &mut ChaCha8Rng::seed_from_u64(seed));
        batch.pairs.iter().filter(|p| p.member).count() as f64 / 1e4
    };
    let frac = fraction(0);
    assert!((0.49..=0.51).contains(&frac), "member fraction {frac}");
    // binomial σ over 10⁴ fair draws is 0.005
    for seed in 1..50 {
        assert!((fraction(seed) - 0.5).abs() <= 0.015);
    }
}

#[test]
fn sampler_non_members_are_uniform() {
    let hg = Hypergraph::new(6, vec![vec![1, 3]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0usize; 6];
    for p in sample_membership(&hg, 40_000, &mut rng)
        .pairs
        .iter()
        .filter(|p| !p.member)
    {
        counts[p.node] += 1;
    }
    assert_eq!(counts[1] + counts[3], 0);
    let total: usize = counts.iter().sum();
    for v in [0, 2, 4, 5] {
        let share = counts[v] as f64 / total as f64;
        assert!((share - 0.25).abs() < 0.02, "node {v}: {share}");
    }
}

#[test]
fn full_edge_and_singleton_edge() {
    let hg = Hypergraph::new(3, vec![vec![0, 1, 2], vec![1]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for p in sample_membership(&hg, 2000, &mut rng).pairs {
        if p.edge == 0 {
            assert!(p.member);
        } else if p.member {
            assert_eq!(p.node, 1);
        }
    }
}

#[test]
fn edge_features_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let hg = random_hypergraph(&mut rng, 30, 20);
        let x = uniform(&mut rng, hg.node_count(), 4, 2.0);
        let got = build_edge_features(&hg, &x).unwrap();
        // H_eᵀ X / |e| through the dense incidence matrix
        let h = hg.incidence().to_dense();
        let sums = h.t_matmul(&x).unwrap();
        for e in 0..hg.edge_count() {
            let size = hg.edge(e).len() as f64;
            for k in 0..4 {
                assert!((got[(e, k)] - sums[(e, k)] / size).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn classify_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let hg = random_hypergraph(&mut rng, 20, 15);
        let (n, e, d, c) = (hg.node_count(), hg.edge_count(), 3, 4);
        let z = uniform(&mut rng, n + e, d, 1.0);
        let theta = uniform(&mut rng, 2 * d, c, 1.0);
        let bias: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logits = classify(&hg, &z, &theta, &bias).unwrap();
        let h = hg.incidence().to_dense();
        for v in 0..n {
            let deg: f64 = h.row(v).iter().sum();
            let mut feat = z.row(v).to_vec();
            for k in 0..d {
                let pooled: f64 = (0..e).map(|j| h[(v, j)] * z[(n + j, k)]).sum();
                feat.push(if deg > 0.0 { pooled / deg } else { 0.0 });
            }
            for j in 0..c {
                let want: f64 = bias[j] + (0..2 * d).map(|i| feat[i] * theta[(i, j)]).sum::<f64>();
                assert!((logits[(v, j)] - want).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn classification_loss_matches_naive_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = uniform(&mut rng, 5, 3, 3.0);
    let labels = vec![0, 2, 1, 1, 0];
    let mask = vec![true, false, true, true, true];
    let (loss, grad) = classification_loss(&logits, &labels, &mask).unwrap();
    let mut want = 0.0;
    for i in (0..5).filter(|&i| mask[i]) {
        let z: f64 = logits.row(i).iter().map(|x| x.exp()).sum();
        want -= (logits[(i, labels[i])].exp() / z).ln();
        for j in 0..3 {
            let p = logits[(i, j)].exp() / z;
            let y = if j == labels[i] { 1.0 } else { 0.0 };
            assert!((grad[(i, j)] - (p - y) / 4.0).abs() <= 1e-12);
        }
    }
    assert!((loss - want / 4.0).abs() <= 1e-12);
    assert!(grad.row(1).iter().all(|&g| g == 0.0));
}

#[test]
fn membership_loss_matches_naive_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, d) = (5, 3);
    let z = uniform(&mut rng, n + 2, d, 1.0);
    let phi: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = MembershipBatch {
        pairs: vec![
            MembershipPair {
                edge: 0,
                node: 1,
                member: true,
            },
            MembershipPair {
                edge: 1,
                node: 4,
                member: false,
            },
            MembershipPair {
                edge: 0,
                node: 3,
                member: false,
            },
        ],
    };
    let got = membership_loss(&z, n, &batch, &phi, 0.2).unwrap();
    let mut want = 0.0;
    for p in &batch.pairs {
        let s: f64 = 0.2
            + (0..d)
                .map(|k| phi[k] * z[(n + p.edge, k)] + phi[d + k] * z[(p.node, k)])
                .sum::<f64>();
        let prob = 1.0 / (1.0 + (-s).exp());
        want -= if p.member { prob.ln() } else { (1.0 - prob).ln() };
    }
    assert!((got.loss - want / 3.0).abs() <= 1e-12);
}

struct HeadCase {
    hg: Hypergraph,
    z: DenseMatrix,
    params: ModelParams,
    labels: Vec<usize>,
    mask: Vec<bool>,
    batch: MembershipBatch,
}

fn head_case(rng: &mut ChaCha8Rng) -> HeadCase {
    let hg = random_hypergraph(rng, 12, 8);
    let (n, d, c) = (hg.node_count(), 3, 3);
    let mut params = ModelParams::zeros(2, d, c);
    params.theta = uniform(rng, 2 * d, c, 1.0);
    params.theta_bias = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    params.phi = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    params.phi_bias = 0.1;
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    mask[0] = true;
    let batch = sample_membership(&hg, 16, rng);
    let z = uniform(rng, n + hg.edge_count(), d, 1.0);
    HeadCase {
        hg,
        z,
        params,
        labels,
        mask,
        batch,
    }
}

fn head_total(case: &HeadCase, z: &DenseMatrix, params: &ModelParams, gamma: f64) -> f64 {
    head_gradients(&case.hg, z, params, &case.labels, &case.mask, Some(&case.batch), gamma)
        .unwrap()
        .total
}

#[test]
fn head_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps = 1e-5;
    for _ in 0..20 {
        let case = head_case(&mut rng);
        let gamma = 0.7;
        let g = head_gradients(
            &case.hg,
            &case.z,
            &case.params,
            &case.labels,
            &case.mask,
            Some(&case.batch),
            gamma,
        )
        .unwrap();

        let analytic_theta = [
            g.grad_theta.as_slice(),
            &g.grad_theta_bias,
            &g.grad_phi,
            std::slice::from_ref(&g.grad_phi_bias),
        ];
        for (group, analytic) in [3usize, 4, 5, 6].into_iter().zip(analytic_theta) {
            for i in 0..analytic.len() {
                let mut plus = case.params.clone();
                plus.groups_mut()[group].1[i] += eps;
                let mut minus = case.params.clone();
                minus.groups_mut()[group].1[i] -= eps;
                let num = (head_total(&case, &case.z, &plus, gamma) - head_total(&case, &case.z, &minus, gamma))
                    / (2.0 * eps);
                assert!(
                    rel_err(analytic[i], num) <= 1e-7,
                    "group {group}[{i}]: {} vs {num}",
                    analytic[i]
                );
            }
        }
        for i in 0..case.z.as_slice().len() {
            let mut zp = case.z.clone();
            zp.as_mut_slice()[i] += eps;
            let mut zm = case.z.clone();
            zm.as_mut_slice()[i] -= eps;
            let num = (head_total(&case, &zp, &case.params, gamma) - head_total(&case, &zm, &case.params, gamma))
                / (2.0 * eps);
            assert!(rel_err(g.grad_z.as_slice()[i], num) <= 1e-6);
        }
    }
}

#[test]
fn zero_gamma_reports_but_ignores_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let case = head_case(&mut rng);
    let with = head_gradients(
        &case.hg,
        &case.z,
        &case.params,
        &case.labels,
        &case.mask,
        Some(&case.batch),
        0.0,
    )
    .unwrap();
    let without = head_gradients(&case.hg, &case.z, &case.params, &case.labels, &case.mask, None, 0.0).unwrap();
    assert!(with.member_loss > 0.0);
    assert_eq!(with.total, with.class_loss);
    assert_eq!(with.grad_z, without.grad_z);
    assert!(with.grad_phi.iter().all(|&g| g == 0.0));

    // hyperedge rows not pooled by any training node stay zero
    let n = case.hg.node_count();
    for e in 0..case.hg.edge_count() {
        let pooled = case.hg.edge(e).iter().any(|&v| case.mask[v]);
        if !pooled {
            assert!(with.grad_z.row(n + e).iter().all(|&g| g == 0.0));
        }
    }
}

#[test]
fn isolated_node_still_classifies() {
    let hg = Hypergraph::new(3, vec![vec![0, 1]]).unwrap();
    let z = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]).unwrap();
    let theta = DenseMatrix::from_fn(4, 2, |i, j| (i + j) as f64 * 0.1);
    let logits = classify(&hg, &z, &theta, &[0.0, 0.0]).unwrap();
    assert!(logits.is_finite());
    // node 2 sees [z_2, 0]
    assert!((logits[(2, 0)] - (5.0 * 0.0 + 6.0 * 0.1)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn loss_is_finite_for_extreme_logits(values in prop::collection::vec(-1e4f64..1e4, 6)) {
        let logits = DenseMatrix::from_vec(2, 3, values).unwrap();
        let (loss, grad) = classification_loss(&logits, &[0, 2], &[true, true]).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        prop_assert!(grad.is_finite());
        for r in 0..2 {
            prop_assert!(grad.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
    }
}

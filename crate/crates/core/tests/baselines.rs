mod common;

use common::{random_hypergraph, uniform};
use ihnn::baselines::{
    hgnn_backprop, hgnn_forward, hgnn_step, mlp_backprop, mlp_forward, train_hgnn, train_mlp, BaselineConfig,
    HgnnModel, MlpModel, Propagation,
};
use ihnn::data::{generate_synthetic, SynthConfig};
use ihnn::equilibrium::Activation;
use ihnn::hypergraph::{build_lve, dense_laplacian_oracle};
use ihnn::linalg::DenseMatrix;
use ihnn::model::classification_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scaled(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

#[test]
fn identity_layers_apply_laplacian_powers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 1..=5 {
        let hg = random_hypergraph(&mut rng, 30, 25);
        let d = 3;
        let x = uniform(&mut rng, hg.node_count(), d, 1.0);
        let model = HgnnModel::new(
            vec![DenseMatrix::identity(d); k],
            DenseMatrix::identity(d),
            vec![0.0; d],
            Activation::Identity,
        )
        .unwrap();
        let prop = Propagation::new(build_lve(&hg));
        let (logits, cache) = hgnn_forward(&prop, &x, &model).unwrap();

        let l = dense_laplacian_oracle(&hg).unwrap();
        let mut want = x.clone();
        for _ in 0..k {
            want = l.matmul(&want).unwrap();
        }
        assert!(cache.output.max_abs_diff(&want).unwrap() <= 1e-10);
        assert!(logits.max_abs_diff(&want).unwrap() <= 1e-10);
    }
}

#[test]
fn zero_input_gives_bias_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hg = random_hypergraph(&mut rng, 10, 8);
    let model = HgnnModel::init(2, 3, 4, 2, Activation::Relu, 0).unwrap();
    let bias = vec![0.3, -0.7];
    let model = HgnnModel {
        head_bias: bias.clone(),
        ..model
    };
    let (logits, _) = hgnn_forward(
        &Propagation::new(build_lve(&hg)),
        &DenseMatrix::zeros(hg.node_count(), 3),
        &model,
    )
    .unwrap();
    assert!(logits.row_iter().all(|r| r == bias.as_slice()));

    let mlp = MlpModel {
        b2: bias.clone(),
        ..MlpModel::init(3, 4, 2, 0).unwrap()
    };
    let (logits, _) = mlp_forward(&DenseMatrix::zeros(5, 3), &mlp).unwrap();
    assert!(logits.row_iter().all(|r| r == bias.as_slice()));
}

#[test]
fn zero_learning_rate_keeps_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hg = random_hypergraph(&mut rng, 10, 8);
    let prop = Propagation::new(build_lve(&hg));
    let x = uniform(&mut rng, hg.node_count(), 3, 1.0);
    let mut model = HgnnModel::init(2, 3, 4, 2, Activation::Relu, 0).unwrap();
    let before = model.clone();
    let (logits, cache) = hgnn_forward(&prop, &x, &model).unwrap();
    let labels: Vec<usize> = (0..hg.node_count()).map(|v| v % 2).collect();
    let (_, dlogits) = classification_loss(&logits, &labels, &vec![true; hg.node_count()]).unwrap();
    let grads = hgnn_backprop(&prop, &model, &cache, &dlogits).unwrap();
    hgnn_step(&mut model, &grads, 0.0);
    assert_eq!(model, before);
}

fn hgnn_loss(prop: &Propagation, x: &DenseMatrix, model: &HgnnModel, labels: &[usize], mask: &[bool]) -> f64 {
    let (logits, _) = hgnn_forward(prop, x, model).unwrap();
    classification_loss(&logits, labels, mask).unwrap().0
}

#[test]
fn three_layer_hgnn_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = 1e-6;
    let mut cases = 0;
    while cases < 10 {
        let hg = random_hypergraph(&mut rng, 12, 10);
        let n = hg.node_count();
        let prop = Propagation::new(build_lve(&hg));
        let x = uniform(&mut rng, n, 3, 1.0);
        let model = HgnnModel::init(3, 3, 4, 3, Activation::Relu, rng.random()).unwrap();
        let (logits, cache) = hgnn_forward(&prop, &x, &model).unwrap();
        // keep finite differences off the ReLU kink
        if cache
            .pre_activations
            .iter()
            .flat_map(|p| p.as_slice())
            .any(|v| v.abs() < 1e-4)
        {
            continue;
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mask: Vec<bool> = (0..n).map(|v| v % 3 != 1).collect();
        let (_, dlogits) = classification_loss(&logits, &labels, &mask).unwrap();
        let grads = hgnn_backprop(&prop, &model, &cache, &dlogits).unwrap();

        for layer in 0..3 {
            for i in 0..model.layers[layer].as_slice().len() {
                let mut plus = model.clone();
                plus.layers[layer].as_mut_slice()[i] += eps;
                let mut minus = model.clone();
                minus.layers[layer].as_mut_slice()[i] -= eps;
                let num = (hgnn_loss(&prop, &x, &plus, &labels, &mask) - hgnn_loss(&prop, &x, &minus, &labels, &mask))
                    / (2.0 * eps);
                let a = grads.layers[layer].as_slice()[i];
                assert!(scaled(a, num) <= 1e-5, "layer {layer}[{i}]: {a} vs {num}");
            }
        }
        for i in 0..model.head.as_slice().len() {
            let mut plus = model.clone();
            plus.head.as_mut_slice()[i] += eps;
            let mut minus = model.clone();
            minus.head.as_mut_slice()[i] -= eps;
            let num = (hgnn_loss(&prop, &x, &plus, &labels, &mask) - hgnn_loss(&prop, &x, &minus, &labels, &mask))
                / (2.0 * eps);
            assert!(scaled(grads.head.as_slice()[i], num) <= 1e-5);
        }
        for j in 0..3 {
            let mut plus = model.clone();
            plus.head_bias[j] += eps;
            let mut minus = model.clone();
            minus.head_bias[j] -= eps;
            let num = (hgnn_loss(&prop, &x, &plus, &labels, &mask) - hgnn_loss(&prop, &x, &minus, &labels, &mask))
                / (2.0 * eps);
            assert!(scaled(grads.head_bias[j], num) <= 1e-5);
        }
        cases += 1;
    }
}

#[test]
fn linear_single_layer_gradient_is_closed_form() {
    // with σ = identity and an identity head, ∂loss/∂W₁ = (L X)ᵀ ∂loss/∂logits
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hg = random_hypergraph(&mut rng, 10, 8);
    let n = hg.node_count();
    let prop = Propagation::new(build_lve(&hg));
    let x = uniform(&mut rng, n, 2, 1.0);
    let model = HgnnModel::new(
        vec![uniform(&mut rng, 2, 2, 1.0)],
        DenseMatrix::identity(2),
        vec![0.0; 2],
        Activation::Identity,
    )
    .unwrap();
    let (logits, cache) = hgnn_forward(&prop, &x, &model).unwrap();
    let labels: Vec<usize> = (0..n).map(|v| v % 2).collect();
    let (_, dlogits) = classification_loss(&logits, &labels, &vec![true; n]).unwrap();
    let grads = hgnn_backprop(&prop, &model, &cache, &dlogits).unwrap();
    let lx = dense_laplacian_oracle(&hg).unwrap().matmul(&x).unwrap();
    assert!(grads.layers[0].max_abs_diff(&lx.t_matmul(&dlogits).unwrap()).unwrap() <= 1e-12);
}

#[test]
fn mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let eps = 1e-6;
    let x = uniform(&mut rng, 9, 4, 1.0);
    let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let mask = vec![true; 9];
    let model = MlpModel::init(4, 5, 3, 11).unwrap();
    let (logits, cache) = mlp_forward(&x, &model).unwrap();
    assert!(cache.pre_hidden.as_slice().iter().all(|v| v.abs() > 1e-4));
    let (_, dlogits) = classification_loss(&logits, &labels, &mask).unwrap();
    let grads = mlp_backprop(&x, &model, &cache, &dlogits).unwrap();
    let loss = |m: &MlpModel| {
        classification_loss(&mlp_forward(&x, m).unwrap().0, &labels, &mask)
            .unwrap()
            .0
    };

    let fields: [fn(&mut MlpModel) -> &mut [f64]; 4] = [
        |m| m.w1.as_mut_slice(),
        |m| &mut m.b1,
        |m| m.w2.as_mut_slice(),
        |m| &mut m.b2,
    ];
    for field in fields {
        let mut g = grads.clone();
        let analytic = field(&mut g).to_vec();
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            field(&mut plus)[i] += eps;
            let mut minus = model.clone();
            field(&mut minus)[i] -= eps;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            assert!(scaled(*a, num) <= 1e-5, "{a} vs {num}");
        }
    }
}

#[test]
fn zero_width_is_rejected() {
    assert!(MlpModel::init(3, 0, 2, 0).is_err());
    assert!(HgnnModel::init(2, 3, 0, 2, Activation::Relu, 0).is_err());
    assert!(HgnnModel::init(0, 3, 4, 2, Activation::Relu, 0).is_err());
}

fn quick(seed: u64) -> BaselineConfig {
    BaselineConfig {
        epochs: 150,
        learning_rate: 0.05,
        momentum: 0.9,
        hidden_dim: 16,
        seed,
        ..BaselineConfig::default()
    }
}

#[test]
fn features_suffice_for_mlp_when_every_node_is_informative() {
    let ds = generate_synthetic(&SynthConfig {
        impurity: 0.0,
        informative: 1.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let (_, r) = train_mlp(&ds, &quick(0)).unwrap();
    assert!(r.test_accuracy >= 0.95, "MLP accuracy {}", r.test_accuracy);
}

#[test]
fn structure_lifts_hgnn_over_mlp_with_sparse_signal() {
    let ds = generate_synthetic(&SynthConfig {
        impurity: 0.0,
        informative: 0.1,
        edges: 1000,
        ..SynthConfig::default()
    })
    .unwrap();
    let (_, mlp) = train_mlp(&ds, &quick(0)).unwrap();
    let (_, hgnn) = train_hgnn(&ds, 2, &quick(0)).unwrap();
    assert!(
        hgnn.test_accuracy >= mlp.test_accuracy + 0.10,
        "HGNN {} vs MLP {}",
        hgnn.test_accuracy,
        mlp.test_accuracy
    );
}

use approx::assert_abs_diff_eq;
use hybridhash::nn::{Init, LayerNorm, Mlp, MultiHeadAttention, ParamStore};
use hybridhash::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn attention(dim: usize, heads: usize, seed: u64) -> (MultiHeadAttention, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let mut init = Init { store: &mut store, rng: &mut r, std: 0.3 };
    let msa = MultiHeadAttention::new(&mut init, "msa", dim, heads).unwrap();
    // Non-zero biases so the oracle covers them too.
    for name in ["query", "key", "value", "output"] {
        let b = Tensor::randn(&[dim], 0.1, &mut rng(seed + 1));
        store.set(&format!("msa.{name}.bias"), b).unwrap();
    }
    (msa, store)
}

fn run_attention(msa: &MultiHeadAttention, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let p = store.bind_constants(&tape);
    let y = msa.forward(&p, tape.constant(x.clone()), None).unwrap();
    let out = y.value().clone();
    out
}

/// `x @ W + b` for one token.
fn affine(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    (0..dout)
        .map(|j| b.data()[j] + (0..din).map(|i| x[i] * w.data()[i * dout + j]).sum::<f64>())
        .collect()
}

fn attention_oracle(store: &ParamStore<f64>, x: &[Vec<f64>], heads: usize) -> Vec<Vec<f64>> {
    let get = |n: &str| store.get_by_name(n).unwrap();
    let proj = |name: &str| -> Vec<Vec<f64>> {
        x.iter()
            .map(|t| affine(t, get(&format!("msa.{name}.weight")), get(&format!("msa.{name}.bias"))))
            .collect()
    };
    let (q, k, v) = (proj("query"), proj("key"), proj("value"));
    let (n, d) = (x.len(), x[0].len());
    let hd = d / heads;
    let mut ctx = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exp.iter().sum();
            for c in cols.clone() {
                ctx[i][c] = (0..n).map(|j| exp[j] / z * v[j][c]).sum();
            }
        }
    }
    ctx.iter()
        .map(|t| affine(t, get("msa.output.weight"), get("msa.output.bias")))
        .collect()
}

#[test]
fn attention_matches_per_head_loop() {
    let (msa, store) = attention(8, 2, 1);
    let x = Tensor::randn(&[2, 5, 8], 1.0, &mut rng(2));
    let got = run_attention(&msa, &store, &x);
    for b in 0..2 {
        let tokens: Vec<Vec<f64>> = (0..5).map(|i| x.data()[(b * 5 + i) * 8..][..8].to_vec()).collect();
        let want = attention_oracle(&store, &tokens, 2);
        for (i, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                assert_abs_diff_eq!(got.data()[(b * 5 + i) * 8 + c], *w, epsilon = 1e-10);
            }
        }
    }
}

#[test]
fn single_token_attention_is_projected_value() {
    let (msa, store) = attention(8, 4, 3);
    let x = Tensor::randn(&[1, 1, 8], 1.0, &mut rng(4));
    let got = run_attention(&msa, &store, &x);
    let get = |n: &str| store.get_by_name(n).unwrap();
    let v = affine(x.data(), get("msa.value.weight"), get("msa.value.bias"));
    let want = affine(&v, get("msa.output.weight"), get("msa.output.bias"));
    for (g, w) in got.data().iter().zip(&want) {
        assert_abs_diff_eq!(g, w, epsilon = 1e-12);
    }
}

#[test]
fn identical_tokens_get_identical_outputs() {
    let (msa, store) = attention(8, 2, 5);
    let token = Tensor::randn(&[8], 1.0, &mut rng(6));
    let x = Tensor::from_fn(&[1, 6, 8], |i| token.data()[i % 8]);
    let got = run_attention(&msa, &store, &x);
    for row in got.data().chunks(8).skip(1) {
        for (a, b) in row.iter().zip(&got.data()[..8]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn attention_is_invariant_to_head_order() {
    let (msa, store) = attention(8, 2, 7);
    let x = Tensor::randn(&[1, 4, 8], 1.0, &mut rng(8));
    let base = run_attention(&msa, &store, &x);

    // Swap the two heads' columns in Q, K, V and the matching rows of the output.
    let swap = |i: usize| (i + 4) % 8;
    let mut swapped = store.clone();
    for name in ["query", "key", "value"] {
        let w = store.get_by_name(&format!("msa.{name}.weight")).unwrap();
        let b = store.get_by_name(&format!("msa.{name}.bias")).unwrap();
        let w2 = Tensor::from_fn(&[8, 8], |k| w.data()[(k / 8) * 8 + swap(k % 8)]);
        let b2 = Tensor::from_fn(&[8], |k| b.data()[swap(k)]);
        swapped.set(&format!("msa.{name}.weight"), w2).unwrap();
        swapped.set(&format!("msa.{name}.bias"), b2).unwrap();
    }
    let w = store.get_by_name("msa.output.weight").unwrap();
    swapped
        .set("msa.output.weight", Tensor::from_fn(&[8, 8], |k| w.data()[swap(k / 8) * 8 + k % 8]))
        .unwrap();

    let permuted = run_attention(&msa, &swapped, &x);
    for (a, b) in base.data().iter().zip(permuted.data()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(0);
    let mut init = Init { store: &mut store, rng: &mut r, std: 0.1 };
    assert!(MultiHeadAttention::new(&mut init, "msa", 10, 4).is_err());
}

fn layer_norm(dim: usize) -> (LayerNorm, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut r = rng(0);
    let mut init = Init { store: &mut store, rng: &mut r, std: 0.1 };
    (LayerNorm::new(&mut init, "ln", dim).unwrap(), store)
}

#[test]
fn layer_norm_worked_example() {
    let (mut ln, store) = layer_norm(3);
    ln.eps = 0.0;
    let tape = Tape::new();
    let p = store.bind_constants(&tape);
    let y = ln.forward(&p, tape.constant(Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap())).unwrap();
    let expected = [-1.224744871391589, 0.0, 1.224744871391589];
    for (g, w) in y.value().data().iter().zip(expected) {
        assert_abs_diff_eq!(*g, w, epsilon = 1e-5);
    }
}

#[test]
fn layer_norm_of_constant_row_is_beta() {
    let (ln, mut store) = layer_norm(4);
    let beta = Tensor::new(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    store.set("ln.beta", beta.clone()).unwrap();
    store.set("ln.gamma", Tensor::full(&[4], 3.0)).unwrap();
    let tape = Tape::new();
    let p = store.bind_constants(&tape);
    let y = ln.forward(&p, tape.constant(Tensor::full(&[2, 4], 7.25))).unwrap();
    for row in y.value().data().chunks(4) {
        assert_eq!(row, beta.data());
    }
}

#[test]
fn layer_norm_standardises_rows() {
    let (ln, store) = layer_norm(16);
    let tape = Tape::new();
    let p = store.bind_constants(&tape);
    let x = Tensor::randn(&[5, 16], 4.0, &mut rng(9)).map(|v| v + 3.0);
    let y = ln.forward(&p, tape.constant(x)).unwrap();
    for row in y.value().data().chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-3);
    }
}

#[test]
fn gelu_reference_points() {
    let tape = Tape::new();
    let y = tape.constant(Tensor::new(&[3], vec![0.0, 1.0, -1.0]).unwrap()).gelu();
    let v = y.value();
    assert_eq!(v.data()[0], 0.0);
    assert_abs_diff_eq!(v.data()[1], 0.8413447460685429, epsilon = 1e-12);
    assert_abs_diff_eq!(v.data()[2], -0.15865525393145707, epsilon = 1e-12);
}

#[test]
fn mlp_with_zero_output_weights_returns_bias() {
    let mut store = ParamStore::new();
    let mut r = rng(10);
    let mut init = Init { store: &mut store, rng: &mut r, std: 0.5 };
    let mlp = Mlp::new(&mut init, "mlp", 4, 4).unwrap();
    store.set("mlp.fc2.weight", Tensor::zeros(&[16, 4])).unwrap();
    let bias = Tensor::new(&[4], vec![1.0, -2.0, 0.5, 0.0]).unwrap();
    store.set("mlp.fc2.bias", bias.clone()).unwrap();
    let tape = Tape::new();
    let p = store.bind_constants(&tape);
    let y = mlp.forward(&p, tape.constant(Tensor::randn(&[3, 4], 1.0, &mut rng(11)))).unwrap();
    for row in y.value().data().chunks(4) {
        assert_eq!(row, bias.data());
    }
    assert_eq!(store.get_by_name("mlp.fc1.weight").unwrap().shape(), [4, 16]);
}

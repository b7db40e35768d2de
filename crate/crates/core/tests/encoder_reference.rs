//! The toy encoder against a longhand forward pass of the same block
//! equations, written with nested vectors and no library helpers.

use asac_core::data::Vocab;
use asac_core::encoder::{EncoderLayerParams, EncoderParams, ToyEncoder, ToyEncoderConfig};
use asac_core::params::Parameters;
use asac_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Rows = Vec<Vec<f64>>;

fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn linear(x: &Rows, w: &Matrix, b: &[f64]) -> Rows {
    x.iter()
        .map(|r| (0..w.cols()).map(|j| b[j] + (0..w.rows()).map(|i| r[i] * w[(i, j)]).sum::<f64>()).collect())
        .collect()
}

fn norm(x: &Rows, g: &[f64], b: &[f64]) -> Rows {
    x.iter()
        .map(|r| {
            let d = r.len() as f64;
            let mean = r.iter().sum::<f64>() / d;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            r.iter().enumerate().map(|(i, v)| g[i] * (v - mean) / (var + 1e-5).sqrt() + b[i]).collect()
        })
        .collect()
}

fn block(x: &Rows, p: &EncoderLayerParams, heads: usize) -> Rows {
    let l = x.len();
    let d = x[0].len();
    let dh = d / heads;
    let a = norm(x, &p.ln1_gain, &p.ln1_bias);
    let (q, k, v) = (linear(&a, &p.w_query, &p.b_query), linear(&a, &p.w_key, &p.b_key), linear(&a, &p.w_value, &p.b_value));
    let mut ctx = vec![vec![0.0; d]; l];
    for h in 0..heads {
        for i in 0..l {
            let logits: Vec<f64> = (0..l)
                .map(|j| (h * dh..(h + 1) * dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|s| (s - m).exp()).sum();
            for j in 0..l {
                let w = (logits[j] - m).exp() / z;
                for c in h * dh..(h + 1) * dh {
                    ctx[i][c] += w * v[j][c];
                }
            }
        }
    }
    let attn = linear(&ctx, &p.w_out, &p.b_out);
    let mid: Rows = x.iter().zip(&attn).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
    let f = norm(&mid, &p.ln2_gain, &p.ln2_bias);
    let hidden: Rows = linear(&f, &p.w_ff1, &p.b_ff1)
        .into_iter()
        .map(|r| r.into_iter().map(|u| 0.5 * u * (1.0 + libm::erf(u / 2f64.sqrt()))).collect())
        .collect();
    let ff = linear(&hidden, &p.w_ff2, &p.b_ff2);
    mid.iter().zip(&ff).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

fn reference(params: &EncoderParams, cfg: &ToyEncoderConfig, ids: &[u32]) -> Vec<Rows> {
    let mut tokens = vec![Vocab::CLS];
    tokens.extend_from_slice(ids);
    tokens.push(Vocab::SEP);
    let d = cfg.d_model;
    let h0: Rows = tokens
        .iter()
        .enumerate()
        .map(|(pos, &t)| {
            (0..d)
                .map(|i| {
                    let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                    let pe = if i % 2 == 0 { angle.sin() } else { angle.cos() };
                    params.token_embedding[(t as usize, i)] + pe
                })
                .collect()
        })
        .collect();
    let mut states = vec![h0];
    for p in &params.layers {
        let next = block(states.last().unwrap(), p, cfg.n_heads);
        states.push(next);
    }
    states
}

#[test]
fn matches_longhand_forward_pass() {
    let cfg = ToyEncoderConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 12,
        max_len: 16,
        dropout: 0.1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut params = EncoderParams::new(&cfg, &mut rng);
    params.visit_mut("", &mut |_, t| t.iter_mut().for_each(|x| *x += rng.gen_range(-0.1..=0.1)));
    let ids = [4, 9, 11, 5, 4];
    let states = ToyEncoder::new(&cfg, &params).encode(&ids).unwrap();
    let expect = reference(&params, &cfg, &ids);
    for j in 0..=2 {
        let got = rows(states.state(j));
        let norm_got: f64 = got.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let norm_expect: f64 = expect[j].iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm_got - norm_expect).abs() < 1e-5, "layer {j} norm");
        for (a, b) in got.iter().flatten().zip(expect[j].iter().flatten()) {
            assert!((a - b).abs() < 1e-5, "layer {j}");
        }
    }
    // padding positions beyond the sentence read as zero
    assert_eq!(states.get(2, ids.len() + 2, 0), 0.0);
    assert_eq!(states.max_len(), 16);
}

//! Invariants of co-attention, glimpse filterbanks and the comparator, with
//! brute-force and hand-rolled oracles.

use dcc_core::coattention::co_attend;
use dcc_core::comparator::{select_stream, Comparator, ComparatorConfig, ComparatorState};
use dcc_core::encoder::FeatureMap;
use dcc_core::glimpse::{extract_glimpse, filterbanks, unpack_glimpse, GlimpseConfig, GlimpseParams, Kernel};
use dcc_core::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn feature_map(c: usize, m: usize, v: Vec<f64>) -> FeatureMap {
    FeatureMap::new(c, m, Tensor::new(&[c, m * m], v).unwrap()).unwrap()
}

fn maps() -> impl Strategy<Value = (FeatureMap, FeatureMap, Tensor)> {
    (1usize..=4, 1usize..=3).prop_flat_map(|(c, m)| {
        let n = c * m * m;
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-2.0f64..2.0, c * c),
        )
            .prop_map(move |(a, b, w)| {
                (feature_map(c, m, a), feature_map(c, m, b), Tensor::new(&[c, c], w).unwrap())
            })
    })
}

fn rows_sum_to_one(t: &Tensor, tol: f64) -> bool {
    let (_, c) = t.dims2();
    t.data().chunks(c).all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= tol && r.iter().all(|&v| v >= 0.0))
}

fn kernel() -> impl Strategy<Value = Kernel> {
    prop_oneof![Just(Kernel::Cauchy), Just(Kernel::Gaussian)]
}

fn glimpse_params(max_side: usize, max_k: usize) -> impl Strategy<Value = GlimpseParams> {
    (1..=max_side, 1..=max_k, -1.5f64..1.5, -1.5f64..1.5, -3.0f64..3.0)
        .prop_map(|(m, k, gx, gy, d)| unpack_glimpse([gx, gy, d], m, m, k).unwrap())
}

/// `γ Σ_a Σ_b F_Y[j,b] Z[c,b,a] F_X[i,a]`, looped over every index.
fn brute_force_read(p: &GlimpseParams, z: &Tensor, cfg: &GlimpseConfig) -> Vec<f64> {
    let f = filterbanks(p, cfg).unwrap();
    let (c, _) = z.dims2();
    let (m, k) = (p.a, p.k);
    let mut out = vec![0.0; c * k * k];
    for ch in 0..c {
        for j in 0..k {
            for i in 0..k {
                let mut s = 0.0;
                for b in 0..m {
                    for a in 0..m {
                        s += f.fy.at(j, b) * z.at(ch, b * m + a) * f.fx.at(i, a);
                    }
                }
                out[(ch * k + j) * k + i] = p.gamma * s;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn attention_weights_are_row_stochastic((a, b, w) in maps()) {
        let co = co_attend(&a, &b, &w).unwrap();
        prop_assert!(rows_sum_to_one(&co.weights_a, 1e-9));
        prop_assert!(rows_sum_to_one(&co.weights_b, 1e-9));
    }

    #[test]
    fn filterbanks_are_row_stochastic(p in glimpse_params(6, 4), kernel in kernel(), div in any::<bool>()) {
        let cfg = GlimpseConfig { k: p.k, kernel, eq7_division: div };
        let f = filterbanks(&p, &cfg).unwrap();
        prop_assert_eq!(f.fx.shape(), &[p.k, p.a]);
        prop_assert!(rows_sum_to_one(&f.fx, 1e-9));
        prop_assert!(rows_sum_to_one(&f.fy, 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn extract_matches_quadruple_loop(
        (p, z) in glimpse_params(3, 2).prop_flat_map(|p| {
            let n = p.a * p.a;
            (Just(p), (1usize..=3).prop_flat_map(move |c| {
                prop::collection::vec(-2.0f64..2.0, c * n)
                    .prop_map(move |v| Tensor::new(&[c, n], v).unwrap())
            }))
        }),
        kernel in kernel(),
    ) {
        let cfg = GlimpseConfig { k: p.k, kernel, eq7_division: false };
        let got = extract_glimpse(&p, &z, &cfg).unwrap();
        let want = brute_force_read(&p, &z, &cfg);
        for (g, w) in got.data().iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }

    #[test]
    fn extract_is_linear_in_z(
        p in glimpse_params(3, 2),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = p.a * p.a;
        let z1 = Tensor::new(&[2, n], (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let z2 = Tensor::new(&[2, n], (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mix = Tensor::new(
            &[2, n],
            z1.data().iter().zip(z2.data()).map(|(a, b)| alpha * a + beta * b).collect(),
        ).unwrap();
        let cfg = GlimpseConfig { k: p.k, ..GlimpseConfig::default() };
        let (g1, g2) = (extract_glimpse(&p, &z1, &cfg).unwrap(), extract_glimpse(&p, &z2, &cfg).unwrap());
        let gm = extract_glimpse(&p, &mix, &cfg).unwrap();
        for i in 0..gm.len() {
            prop_assert!((gm.data()[i] - (alpha * g1.data()[i] + beta * g2.data()[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_inputs_under_identity_give_identical_summaries(
        (a, _, _) in maps()
    ) {
        let w = Tensor::identity(a.channels());
        let co = co_attend(&a, &a, &w).unwrap();
        for (x, y) in co.summary_a.data().iter().zip(co.summary_b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn narrower_kernels_concentrate_rows() {
    let cfg = GlimpseConfig { k: 3, ..GlimpseConfig::default() };
    let peak = |gamma: f64| {
        let p = GlimpseParams { g_x: 3.2, g_y: 2.7, delta: 1.3, gamma, k: 3, a: 7, b: 7 };
        let f = filterbanks(&p, &cfg).unwrap();
        f.fx.data().chunks(7).map(|r| r.iter().cloned().fold(0.0, f64::max)).collect::<Vec<_>>()
    };
    let grid = [4.0, 2.0, 1.0, 0.5, 0.25, 0.1];
    for w in grid.windows(2) {
        let (wide, narrow) = (peak(w[0]), peak(w[1]));
        assert!(wide.iter().zip(&narrow).all(|(a, b)| b >= a), "{wide:?} {narrow:?}");
    }
}

#[test]
fn row_peaks_land_on_rounded_centres() {
    let p = GlimpseParams { g_x: 3.0, g_y: 3.0, delta: 1.0, gamma: 0.3, k: 3, a: 7, b: 7 };
    let f = filterbanks(&p, &GlimpseConfig { k: 3, ..GlimpseConfig::default() }).unwrap();
    let argmax: Vec<usize> = f
        .fx
        .data()
        .chunks(7)
        .map(|r| (0..7).max_by(|&i, &j| r[i].total_cmp(&r[j])).unwrap())
        .collect();
    assert_eq!(argmax, [2, 3, 4]);
}

#[test]
fn broad_single_filter_is_nearly_uniform() {
    let p = GlimpseParams { g_x: 2.0, g_y: 2.0, delta: 1.0, gamma: 1e4, k: 1, a: 5, b: 5 };
    let f = filterbanks(&p, &GlimpseConfig { k: 1, ..GlimpseConfig::default() }).unwrap();
    assert!(f.fx.data().iter().all(|v| (v - 0.2).abs() < 1e-6));
}

fn comparator(hidden: usize, glimpses: usize, k: usize, c: usize, m: usize) -> (Comparator, ParamStore) {
    let mut store = ParamStore::new();
    let cfg = ComparatorConfig {
        hidden,
        glimpses,
        dropout: 0.3,
        glimpse: GlimpseConfig { k, ..GlimpseConfig::default() },
    };
    let cmp = Comparator::new(cfg, c, m, &mut store, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    (cmp, store)
}

#[test]
fn eight_glimpses_make_sixteen_alternating_steps() {
    let (cmp, store) = comparator(4, 8, 2, 2, 3);
    let za = Tensor::full(&[2, 9], 0.5);
    let zb = Tensor::full(&[2, 9], -0.5);
    let (h, traj) = cmp.compare(&store, &za, &zb, None).unwrap();
    assert_eq!(h.len(), 4);
    assert_eq!(traj.len(), 16);
    let order: String = (0..16).map(|t| select_stream(t, 'a', 'b')).collect();
    assert_eq!(order, "abababababababab");

    let mut state = ComparatorState::zeros(4);
    for t in 0..16 {
        state = cmp.step(&store, &state, &za, &zb).unwrap();
        assert_eq!(state.t, t + 1);
    }
    assert_eq!(state.h, h);
    assert!(cmp.step(&store, &state, &za, &zb).is_err());
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar LSTM with one channel on a 2×2 grid and a single filter.
struct Oracle {
    w_g: Vec<f64>,
    b_g: Vec<f64>,
    w_x: Vec<f64>,
    w_h: Vec<f64>,
    bias: Vec<f64>,
    hidden: usize,
}

impl Oracle {
    fn read(&self, raw: [f64; 3], z: &[f64]) -> f64 {
        let (a, m) = (2.0f64, 2usize);
        let gx = (a - 1.0) * (raw[0] + 1.0) / 2.0;
        let gy = (a - 1.0) * (raw[1] + 1.0) / 2.0;
        let gamma = (1.0 - 2.0 * raw[2].abs()).exp();
        let bank = |mu: f64| {
            let w: Vec<f64> = (0..m)
                .map(|v| 1.0 / (std::f64::consts::PI * gamma * (1.0 + ((v as f64 - mu) / gamma).powi(2))))
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        // one filter: offset (1 − 1/2 − 1/2)·δ is zero
        let (fx, fy) = (bank(gx), bank(gy));
        let mut s = 0.0;
        for b in 0..m {
            for x in 0..m {
                s += fy[b] * z[b * m + x] * fx[x];
            }
        }
        gamma * s
    }

    fn step(&self, h: &[f64], c: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hs = self.hidden;
        let mut raw = [0.0; 3];
        for (r, out) in raw.iter_mut().enumerate() {
            *out = self.b_g[r] + (0..hs).map(|k| self.w_g[r * hs + k] * h[k]).sum::<f64>();
        }
        let x = self.read(raw, z);
        let pre: Vec<f64> = (0..4 * hs)
            .map(|r| self.w_x[r] * x + self.bias[r] + (0..hs).map(|k| self.w_h[r * hs + k] * h[k]).sum::<f64>())
            .collect();
        let mut h2 = vec![0.0; hs];
        let mut c2 = vec![0.0; hs];
        for u in 0..hs {
            let i = sigmoid(pre[u]);
            let f = sigmoid(pre[hs + u]);
            let g = pre[2 * hs + u].tanh();
            let o = sigmoid(pre[3 * hs + u]);
            c2[u] = f * c[u] + i * g;
            h2[u] = o * c2[u].tanh();
        }
        (h2, c2)
    }
}

#[test]
fn lstm_steps_match_scalar_oracle() {
    let (cmp, mut store) = comparator(2, 1, 1, 1, 2);
    store.get_mut(cmp.b_g).data_mut().copy_from_slice(&[0.3, -0.4, 0.7]);
    let oracle = Oracle {
        w_g: store.get(cmp.w_g).data().to_vec(),
        b_g: store.get(cmp.b_g).data().to_vec(),
        w_x: store.get(cmp.w_x).data().to_vec(),
        w_h: store.get(cmp.w_h).data().to_vec(),
        bias: store.get(cmp.bias).data().to_vec(),
        hidden: 2,
    };
    let za = Tensor::new(&[1, 4], vec![0.9, -0.3, 0.4, 1.2]).unwrap();
    let zb = Tensor::new(&[1, 4], vec![-0.5, 0.8, 0.1, -1.1]).unwrap();
    let s1 = cmp.step(&store, &ComparatorState::zeros(2), &za, &zb).unwrap();
    let (h1, c1) = oracle.step(&[0.0, 0.0], &[0.0, 0.0], za.data());
    let s2 = cmp.step(&store, &s1, &za, &zb).unwrap();
    let (h2, _) = oracle.step(&h1, &c1, zb.data());
    for (got, want) in s1.h.data().iter().zip(&h1).chain(s2.h.data().iter().zip(&h2)) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn dropout_mask_only_scales_the_final_state() {
    let (cmp, store) = comparator(5, 2, 2, 2, 2);
    let za = Tensor::new(&[2, 4], vec![0.1, 0.5, -0.2, 0.3, 0.9, -0.8, 0.0, 0.4]).unwrap();
    let zb = Tensor::new(&[2, 4], vec![-0.3, 0.2, 0.6, -0.1, 0.2, 0.2, 0.7, -0.5]).unwrap();
    let mask = cmp.dropout_mask(&mut ChaCha8Rng::seed_from_u64(4));
    let (plain, t1) = cmp.compare(&store, &za, &zb, None).unwrap();
    let (dropped, t2) = cmp.compare(&store, &za, &zb, Some(&mask)).unwrap();
    assert_eq!(t1, t2);
    for i in 0..5 {
        assert_eq!(dropped.data()[i], plain.data()[i] * mask.data()[i]);
    }
}

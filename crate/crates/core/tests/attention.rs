use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempgate::attention::*;
use tempgate::autodiff::{segment_softmax_values, Segments, Tape, Tensor};
use tempgate::graph::Graph;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, rand_vec(rng, r * c)).unwrap()
}

fn lrelu(x: f64, s: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        s * x
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn gat_logit_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let f = rng.random_range(1..6);
        let (hi, hj, a) = (rand_vec(&mut rng, f), rand_vec(&mut rng, f), rand_vec(&mut rng, 2 * f));
        let mut s = 0.0;
        for k in 0..f {
            s += a[k] * hi[k];
        }
        for k in 0..f {
            s += a[f + k] * hj[k];
        }
        let got = gat_logit(&hi, &hj, &a, 0.2).unwrap();
        assert!((got - lrelu(s, 0.2)).abs() < 1e-12);
    }
}

#[test]
fn gatv2_logit_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let d = rng.random_range(1..5);
        let k = rng.random_range(1..5);
        let (hi, hj) = (rand_vec(&mut rng, d), rand_vec(&mut rng, d));
        let w = rand_tensor(&mut rng, k, 2 * d);
        let q = rand_vec(&mut rng, k);
        let cat: Vec<f64> = hi.iter().chain(&hj).copied().collect();
        let mut want = 0.0;
        for r in 0..k {
            let z: f64 = (0..2 * d).map(|c| w.get(r, c) * cat[c]).sum();
            want += q[r] * lrelu(z, 0.3);
        }
        let got = gatv2_logit(&hi, &hj, &w, &q, 0.3).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn l1_embedding_holds_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..9);
        let (hi, hj) = (rand_vec(&mut rng, d), rand_vec(&mut rng, d));
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..3.0)).collect();
        let beta = rng.random_range(0.01..0.99);
        let (m, q) = embed_l1_as_gatv2(&w, beta).unwrap();
        let diff = gatv2_logit(&hi, &hj, &m, &q, beta).unwrap() - weighted_l1_logit(&hi, &hj, &w).unwrap();
        worst = worst.max(diff.abs());
    }
    assert!(worst < 1e-12, "max difference {worst}");
}

#[test]
fn gate_values_match_scalar_sigmoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = rand_tensor(&mut rng, 5, 3);
    let wg = rand_tensor(&mut rng, 3, 4);
    let bg = rand_vec(&mut rng, 4);
    let g = gate_values(&h, &wg, &bg).unwrap();
    for i in 0..5 {
        for c in 0..4 {
            let z = h.get(i, 0) * wg.get(0, c) + h.get(i, 1) * wg.get(1, c) + h.get(i, 2) * wg.get(2, c) + bg[c];
            assert!((g.get(i, c) - sigmoid(z)).abs() < 1e-12);
            assert!(g.get(i, c) > 0.0 && g.get(i, c) < 1.0);
        }
    }
}

#[test]
fn parameter_counts() {
    let gat = AttentionSpec::for_method(Method::Gat, 10, 8, 3);
    let temp = AttentionSpec::for_method(Method::TempOnly, 10, 8, 3);
    assert_eq!(parameter_count(&temp) - parameter_count(&gat), 2);

    let one = |m| AttentionSpec::for_method(m, 8, 4, 16).with_heads(1, 1).with_layers(1);
    assert_eq!(parameter_count(&one(Method::Gated)) - parameter_count(&one(Method::Gat)), 144);

    let gcn = AttentionSpec::for_method(Method::Gcn, 10, 16, 3);
    assert_eq!(parameter_count(&gcn), 10 * 16 + 16 + 16 * 3 + 3);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for m in Method::ALL {
        let spec = AttentionSpec::for_method(m, 7, 4, 3).with_heads(if m == Method::Gcn { 1 } else { 3 }, 2);
        let spec = if m == Method::Gcn { spec.with_heads(1, 1) } else { spec };
        let model = Model::new(spec.clone(), &mut rng).unwrap();
        assert_eq!(model.num_parameters(), parameter_count(&spec), "{m}");
    }
}

#[test]
fn init_temperature_is_one() {
    assert!((temperature_from_theta(theta_for_temperature(1.0)) - 1.0).abs() < 1e-12);
    assert!((temperature_from_theta(theta_for_temperature(50.0)) - 50.0).abs() < 1e-9);
    assert!(temperature_from_theta(-1e3) >= TEMPERATURE_EPS);
}

fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges, false).unwrap().add_self_loops()
}

/// Runs `model` without dropout and returns the output rows and each
/// layer's attention coefficients.
fn run(model: &Model, g: &Graph, x: &Tensor) -> (Tensor, Vec<Option<Tensor>>) {
    let ctx = GraphContext::new(g).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = model.forward::<ChaCha8Rng>(&mut tape, &ctx, xv, None).unwrap();
    let alphas = out.layers.iter().map(|l| l.alpha.map(|a| tape.value(a).clone())).collect();
    (tape.value(out.logits).clone(), alphas)
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            out.data_mut()[i * b.cols() + j] = (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum();
        }
    }
    out
}

/// Dense per-node evaluation of one layer, written independently of the tape.
fn oracle_layer(spec: &AttentionSpec, shape: &LayerShape, p: &LayerParams, g: &Graph, x: &Tensor) -> Tensor {
    let n = g.num_nodes();
    let (heads, f) = (shape.heads, shape.head_dim);
    let mut proj = matmul(x, &p.weight);
    let gate = p.gate_weight.as_ref().map(|wg| {
        let mut z = matmul(x, wg);
        for i in 0..z.rows() {
            for c in 0..z.cols() {
                let v = z.get(i, c) + p.gate_bias.as_ref().unwrap().get(0, c);
                let cols = z.cols();
                z.data_mut()[i * cols + c] = sigmoid(v);
            }
        }
        z
    });
    let gate_first = spec.gate == GateMode::GateFirst;
    if gate_first {
        let gv = gate.as_ref().unwrap();
        for (v, gg) in proj.data_mut().iter_mut().zip(gv.data()) {
            *v *= gg;
        }
    }
    let t = p.temperature().unwrap_or(1.0);
    let mut out = Tensor::zeros(n, shape.out_dim());
    for i in 0..n {
        let nbrs = g.neighbors(i);
        let mut combined = vec![0.0; shape.out_dim()];
        for k in 0..heads {
            let logits: Vec<f64> = nbrs
                .iter()
                .map(|&j| match &p.attn {
                    AttnParams::Gat { a_dst, a_src } => {
                        let a: Vec<f64> = (0..f).map(|r| a_dst.get(r, k)).chain((0..f).map(|r| a_src.get(r, k))).collect();
                        gat_logit(&proj.row(i)[k * f..(k + 1) * f], &proj.row(j)[k * f..(k + 1) * f], &a, spec.leaky_slope)
                            .unwrap()
                    }
                    AttnParams::GatV2 { w_dst, q } => {
                        let mut s = 0.0;
                        for r in 0..f {
                            let c = k * f + r;
                            let mut zi: f64 = (0..x.cols()).map(|m| x.get(i, m) * w_dst.get(m, c)).sum();
                            if gate_first {
                                zi *= gate.as_ref().unwrap().get(i, c);
                            }
                            s += q.get(r, k) * lrelu(zi + proj.get(j, c), spec.leaky_slope);
                        }
                        s
                    }
                    AttnParams::None => unreachable!(),
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = logits.iter().map(|e| ((e - mx) / t).exp()).collect();
            let z: f64 = ex.iter().sum();
            for r in 0..f {
                let v: f64 = nbrs.iter().zip(&ex).map(|(&j, e)| e / z * proj.get(j, k * f + r)).sum();
                if shape.concat {
                    combined[k * f + r] = v;
                } else {
                    combined[r] += v / heads as f64;
                }
            }
        }
        for c in 0..shape.out_dim() {
            let mut v = combined[c] + p.bias.get(0, c);
            if spec.gate == GateMode::Post {
                v *= gate.as_ref().unwrap().get(i, c);
            }
            out.data_mut()[i * shape.out_dim() + c] = v;
        }
    }
    out
}

fn perturb_bias(model: &mut Model, rng: &mut ChaCha8Rng) {
    for l in &mut model.layers {
        for v in l.bias.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        if let Some(b) = &mut l.gate_bias {
            for v in b.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        if let Some(t) = &mut l.theta {
            t.data_mut()[0] = rng.random_range(-1.0..2.0);
        }
    }
}

#[test]
fn layer_matches_dense_oracle_for_every_attention_variant() {
    let g = random_graph(7, 0.35, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, 7, 5);
    for m in Method::ALL.into_iter().filter(|m| *m != Method::Gcn) {
        for (heads, concat_heads) in [(1, 1), (3, 2)] {
            let spec = AttentionSpec::for_method(m, 5, 4, 3).with_heads(heads, concat_heads);
            let mut model = Model::new(spec.clone(), &mut rng).unwrap();
            perturb_bias(&mut model, &mut rng);
            let shapes = spec.layer_shapes();
            let hidden = oracle_layer(&spec, &shapes[0], &model.layers[0], &g, &x);
            let hidden = hidden.map(|v| if v > 0.0 { v } else { v.exp_m1() });
            let want = oracle_layer(&spec, &shapes[1], &model.layers[1], &g, &hidden);
            let (got, _) = run(&model, &g, &x);
            let err = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{m} heads={heads}: {err}");
        }
    }
}

#[test]
fn coefficients_are_distributions() {
    let g = random_graph(12, 0.3, 5);
    let segs = Segments::from_ids(&g.edge_targets(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, 12, 4);
    for m in Method::ALL.into_iter().filter(|m| *m != Method::Gcn) {
        let model = Model::new(AttentionSpec::for_method(m, 4, 3, 2).with_heads(2, 2), &mut rng).unwrap();
        let (_, alphas) = run(&model, &g, &x);
        for a in alphas.into_iter().flatten() {
            for h in 0..a.cols() {
                for s in 0..12 {
                    let r = segs.range(s);
                    let total: f64 = r.clone().map(|e| a.get(e, h)).sum();
                    assert!((total - 1.0).abs() < 1e-12, "{m}");
                    assert!(r.clone().all(|e| a.get(e, h) >= 0.0));
                }
            }
        }
    }
}

#[test]
fn temperature_preserves_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let k = rng.random_range(2..12);
        let logits = Tensor::column(rand_vec(&mut rng, k));
        let segs = Segments::from_ids(&vec![0; k], 1).unwrap();
        let argmax = |t: &Tensor| (0..k).max_by(|&a, &b| t.data()[a].total_cmp(&t.data()[b])).unwrap();
        let base = argmax(&logits);
        for t in [0.05, 0.5, 1.0, 3.0, 100.0] {
            assert_eq!(argmax(&segment_softmax_values(&logits, &segs, t)), base);
        }
    }
}

fn copy_shared(from: &Model, to: &mut Model) {
    for (a, b) in from.layers.iter().zip(&mut to.layers) {
        b.weight = a.weight.clone();
        b.bias = a.bias.clone();
        b.attn = a.attn.clone();
        b.theta = a.theta.clone();
    }
}

#[test]
fn saturated_gate_first_matches_ungated() {
    let g = random_graph(9, 0.3, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_tensor(&mut rng, 9, 4);
    for (gated, plain) in [(Method::GatedTemp, Method::TempOnly), (Method::GatedTempV2, Method::TempOnlyV2)] {
        let base = Model::new(AttentionSpec::for_method(plain, 4, 3, 2).with_heads(2, 1), &mut rng).unwrap();
        let mut spec = AttentionSpec::for_method(gated, 4, 3, 2).with_heads(2, 1);
        spec.gate_bias_init = 40.0;
        let mut model = Model::new(spec, &mut rng).unwrap();
        copy_shared(&base, &mut model);
        let (a, _) = run(&base, &g, &x);
        let (b, _) = run(&model, &g, &x);
        let err = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{gated}: {err}");
    }
}

fn single_layer(m: Method, rng: &mut ChaCha8Rng) -> Model {
    Model::new(AttentionSpec::for_method(m, 4, 3, 3).with_heads(2, 2).with_layers(1), rng).unwrap()
}

#[test]
fn post_gate_is_ungated_times_gate() {
    let g = random_graph(8, 0.4, 31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let x = rand_tensor(&mut rng, 8, 4);
    for (gated, plain) in [
        (Method::Gated, Method::Gat),
        (Method::TempGated, Method::TempOnly),
        (Method::GatedV2, Method::GatV2),
        (Method::TempGatedV2, Method::TempOnlyV2),
    ] {
        let base = single_layer(plain, &mut rng);
        let mut model = single_layer(gated, &mut rng);
        copy_shared(&base, &mut model);
        let l = &model.layers[0];
        let gv = gate_values(&x, l.gate_weight.as_ref().unwrap(), l.gate_bias.as_ref().unwrap().data()).unwrap();
        let (a, _) = run(&base, &g, &x);
        let (b, _) = run(&model, &g, &x);
        for ((p, q), gg) in a.data().iter().zip(b.data()).zip(gv.data()) {
            assert!((p * gg - q).abs() < 1e-12, "{gated}");
        }
    }
}

#[test]
fn closed_gates_silence_messages() {
    let g = random_graph(6, 0.5, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = rand_tensor(&mut rng, 6, 4);
    for m in [Method::Gated, Method::GatedTemp, Method::GatedTempV2] {
        let mut model = single_layer(m, &mut rng);
        model.layers[0].gate_bias.as_mut().unwrap().data_mut().fill(-40.0);
        let bias = model.layers[0].bias.clone();
        let (out, _) = run(&model, &g, &x);
        for i in 0..6 {
            for c in 0..out.cols() {
                // post-gate also scales the bias; gate-first leaves it alone
                let want = if m == Method::Gated { 0.0 } else { bias.get(0, c) };
                assert!((out.get(i, c) - want).abs() < 1e-12, "{m}");
            }
        }
    }
}

#[test]
fn self_loop_only_node_returns_its_projection() {
    let g = Graph::empty(1).add_self_loops();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x = rand_tensor(&mut rng, 1, 4);
    for m in [Method::Gat, Method::TempOnlyV2] {
        let model = single_layer(m, &mut rng);
        let (out, _) = run(&model, &g, &x);
        let proj = matmul(&x, &model.layers[0].weight);
        // the two output heads are averaged
        for c in 0..out.cols() {
            let want = 0.5 * (proj.get(0, c) + proj.get(0, 3 + c));
            assert!((out.get(0, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn gcn_on_regular_graph_is_symmetric() {
    // 6-cycle, every node has degree 3 with its self-loop
    let edges: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
    let g = Graph::from_edges(6, &edges, true).unwrap().add_self_loops();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let row = rand_vec(&mut rng, 4);
    let x = Tensor::new(6, 4, row.repeat(6)).unwrap();
    let model = Model::new(AttentionSpec::for_method(Method::Gcn, 4, 5, 3), &mut rng).unwrap();
    let (out, _) = run(&model, &g, &x);
    for i in 1..6 {
        assert_eq!(out.row(i), out.row(0));
    }
}

#[test]
fn empty_neighborhood_is_an_error() {
    let g = Graph::from_edges(3, &[(0, 1), (1, 0)], false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = single_layer(Method::Gat, &mut rng);
    let ctx = GraphContext::new(&g).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::zeros(3, 4));
    let err = model.forward::<ChaCha8Rng>(&mut tape, &ctx, xv, None).unwrap_err();
    assert!(matches!(err, tempgate::Error::EmptyNeighborhood(2)));
}

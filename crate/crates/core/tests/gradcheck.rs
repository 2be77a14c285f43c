use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempgate::attention::{AttentionSpec, Method, Model};
use tempgate::autodiff::GradCheckOptions;
use tempgate::training::{model_grad_check, random_dataset, Prepared};

fn problem(seed: u64) -> Prepared {
    let ds = random_dataset(20, 5, 3, 0.2, seed).unwrap();
    Prepared::new(&ds).unwrap()
}

fn spec(m: Method) -> AttentionSpec {
    let s = AttentionSpec::for_method(m, 5, 4, 3);
    let mut s = if m == Method::Gcn { s } else { s.with_heads(2, 2) };
    s.init_temp = 1.7;
    s.gate_bias_init = 0.3;
    s
}

#[test]
fn full_objective_matches_finite_differences_for_every_method() {
    let data = problem(11);
    for (k, m) in Method::ALL.into_iter().enumerate() {
        let model = Model::new(spec(m), &mut ChaCha8Rng::seed_from_u64(k as u64)).unwrap();
        let r = model_grad_check(&model, &data, 0.1, GradCheckOptions::default()).unwrap();
        assert_eq!(r.checked, model.num_parameters());
        assert!(r.max_rel_error < 1e-4, "{m}: {} at {:?}", r.max_rel_error, r.worst);
    }
}

#[test]
fn regularizer_reaches_gate_bias() {
    // A large lambda makes the regularizer dominate the gate-bias gradient.
    // The objective grows with lambda, so the step is widened to keep
    // cancellation error in the difference quotient small.
    let data = problem(3);
    for m in [Method::Gated, Method::GatedTempV2] {
        let model = Model::new(spec(m), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let r = model_grad_check(&model, &data, 50.0, GradCheckOptions { eps: 1e-4, ..Default::default() }).unwrap();
        assert!(r.max_rel_error < 1e-4, "{m}: {}", r.max_rel_error);
    }
}

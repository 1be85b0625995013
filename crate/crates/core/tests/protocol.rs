mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uapdfl_core::datagen::gen_gaussian_mixture;
use uapdfl_core::harness::{probe_divergence, ExperimentSpec, ProbeSpec};
use uapdfl_core::nn::{LayeredModel, OptimizerState};
use uapdfl_core::protocol::{
    build_queue, layerwise_aggregate, local_train, run_experiment, run_round, Algorithm,
    ClientState, ExperimentSetup, RoundConfig, Simulation,
};
use uapdfl_core::representation::make_unit_tensor;

fn small_setup(arm: Algorithm) -> ExperimentSetup {
    let mut s = ExperimentSetup {
        clients: 6,
        ..Default::default()
    };
    s.protocol.n_com = 3;
    s.protocol.rounds = 3;
    s.protocol.algorithm = arm;
    s
}

#[test]
fn queue_frequencies_are_uniform() {
    let mut hits = vec![0usize; 30];
    for t in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        for j in build_queue(4, 30, 5, &mut rng).unwrap() {
            hits[j] += 1;
        }
    }
    assert_eq!(hits[4], 0);
    for (j, &h) in hits.iter().enumerate().filter(|(j, _)| *j != 4) {
        let f = h as f64 / 1e4;
        assert!((f - 5.0 / 29.0).abs() <= 0.02, "peer {j}: {f}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(build_queue(1, 2, 1, &mut rng).unwrap(), vec![0]);
}

#[test]
fn identical_clients_all_drop_out_first() {
    let mut sim = Simulation::new(&small_setup(Algorithm::UaPdfl), 1).unwrap();
    let r1 = sim.step().unwrap();
    assert!(r1.clients.iter().all(|c| c.dropout && c.donor.is_some()));
    assert!(r1.clients.iter().all(|c| c.divergences.iter().all(|(_, d)| *d == 0.0)));
}

#[test]
fn no_cd_never_drops_out() {
    let out = run_experiment(&small_setup(Algorithm::UaPdflNoCd), 2).unwrap();
    assert!(out.records.iter().all(|r| r.dropout_count() == 0));
}

#[test]
fn ledger_counts_per_arm() {
    // [16, 64, 32, 4], split 2: g = 3168, h = 132, C = 4, F = 32, N_com = 3
    let cases = [
        (Algorithm::Local, 0u64),
        (Algorithm::DFedAvg, 3 * 3300),
        (Algorithm::DFedPer, 3 * 3168),
    ];
    for (arm, per_round) in cases {
        let out = run_experiment(&small_setup(arm), 3).unwrap();
        for r in 1..=3 {
            for c in out.ledger.round(r).unwrap() {
                assert_eq!(c.total(), per_round, "{arm} round {r}");
            }
        }
    }
    let out = run_experiment(&small_setup(Algorithm::UaPdflNoLp), 3).unwrap();
    for (r, rec) in out.records.iter().enumerate().skip(1) {
        for c in &rec.clients {
            let want = if c.dropout { 3 * 4 + 3300 } else { 3 * 4 + 3 * 3300 };
            assert_eq!(out.ledger.round(r).unwrap()[c.client].total(), want);
        }
    }
    let out = run_experiment(&small_setup(Algorithm::UaPdfl), 3).unwrap();
    for (r, rec) in out.records.iter().enumerate().skip(1) {
        for c in &rec.clients {
            let reps = 3 * 36;
            let want = if c.dropout {
                reps + 3300
            } else {
                reps + 3 * 3168 + 132 * c.h_peers as u64
            };
            assert_eq!(out.ledger.round(r).unwrap()[c.client].total(), want);
        }
    }
}

#[test]
fn cumulative_ledger_sums_rounds() {
    let out = run_experiment(&small_setup(Algorithm::DFedAvg), 4).unwrap();
    assert_eq!(out.ledger.cumulative(2, 0), 0);
    assert_eq!(out.ledger.cumulative(2, 3), 3 * 3 * 3300);
}

#[test]
fn head_gate_is_monotone_in_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = [5, 6, 4, 3];
    let own = LayeredModel::mlp(&dims, 2, &mut rng).unwrap();
    let peers: Vec<_> = (0..5)
        .map(|i| common::full_payload(i + 1, &LayeredModel::mlp(&dims, 2, &mut rng).unwrap(), 10))
        .collect();
    let divs: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..0.3)).collect();
    let mut prev: Vec<usize> = Vec::new();
    for k in 0..=40 {
        let th = k as f64 * 0.01;
        let got = layerwise_aggregate(&own, 10, &peers, &divs, th).unwrap().h_peers;
        assert!(prev.iter().all(|p| got.contains(p)), "th {th}");
        prev = got;
    }
    assert_eq!(prev.len(), 5);
}

#[test]
fn aggregation_is_convex_per_entry() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dims = [4, 5, 5, 3];
    let own = LayeredModel::mlp(&dims, 1, &mut rng).unwrap();
    let others: Vec<LayeredModel> = (0..4).map(|_| LayeredModel::mlp(&dims, 1, &mut rng).unwrap()).collect();
    let payloads: Vec<_> = others
        .iter()
        .enumerate()
        .map(|(i, m)| common::full_payload(i + 1, m, rng.random_range(1..50)))
        .collect();
    let out = layerwise_aggregate(&own, 20, &payloads, &[0.0, 0.5, 0.05, 0.2], 0.1).unwrap();
    let all: Vec<Vec<f64>> = std::iter::once(&own)
        .chain(&others)
        .map(|m| m.params().copied().collect())
        .collect();
    for (k, v) in out.model.params().enumerate() {
        let lo = all.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        assert!(*v >= lo - 1e-15 && *v <= hi + 1e-15);
    }
}

#[test]
fn zero_learning_rate_leaves_client_unchanged() {
    let ds = gen_gaussian_mixture(4, 16, 50, 6.0, 0).unwrap();
    let unit = make_unit_tensor(16, 1.0).unwrap();
    let mut cfg = RoundConfig::default();
    cfg.sgd.learning_rate = 0.0;
    let model = LayeredModel::mlp(&[16, 8, 6, 4], 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let train: Vec<usize> = ds.train_indices()[..40].to_vec();
    let mut client = ClientState::new(0, model, OptimizerState::new(&LayeredModel::zeros(&[16, 8, 6, 4], 2).unwrap(), cfg.sgd), train, vec![], &unit).unwrap();
    let before = client.clone();
    local_train(&mut client, &ds, &unit, None, &cfg, 0, 9).unwrap();
    assert_eq!(client.model, before.model);
    assert_eq!(client.unit_rep, before.unit_rep);
    assert_eq!(client.aux_rep, before.aux_rep);
}

#[test]
fn training_loss_decreases_on_separable_data() {
    let ds = gen_gaussian_mixture(2, 16, 200, 6.0, 2).unwrap();
    let unit = make_unit_tensor(16, 1.0).unwrap();
    let mut cfg = RoundConfig::default();
    cfg.local_epochs = 5;
    cfg.sgd.learning_rate = 0.01;
    let model = LayeredModel::mlp(&[16, 8, 6, 2], 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let opt = OptimizerState::new(&model, cfg.sgd);
    let mut client =
        ClientState::new(0, model, opt, ds.train_indices().to_vec(), vec![], &unit).unwrap();
    let losses = local_train(&mut client, &ds, &unit, None, &cfg, 0, 3).unwrap();
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn runs_are_deterministic_and_order_free() {
    let setup = small_setup(Algorithm::UaPdfl);
    let a = run_experiment(&setup, 11).unwrap();
    let b = run_experiment(&setup, 11).unwrap();
    assert_eq!(a, b);

    // a single worker thread gives the same round as the default pool
    let mut s1 = Simulation::new(&setup, 12).unwrap();
    let mut s2 = s1.clone();
    let cfg = *s1.config();
    let ds = s1.dataset().clone();
    let unit = s1.unit_tensor().clone();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (m1, _) = pool
        .install(|| run_round(s1.states_mut(), &ds, &unit, &cfg, 1, 12))
        .unwrap();
    let (m2, _) = run_round(s2.states_mut(), &ds, &unit, &cfg, 1, 12).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(s1.states(), s2.states());
}

#[test]
fn zero_rounds_only_evaluates() {
    let mut setup = small_setup(Algorithm::UaPdfl);
    setup.protocol.rounds = 0;
    match run_experiment(&setup, 0) {
        Ok(out) => {
            assert_eq!(out.records.len(), 1);
            assert_eq!(out.records[0].round, 0);
            assert_eq!(out.ledger.total().total(), 0);
        }
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn four_client_divergence_trajectory() {
    let mut spec = ExperimentSpec::default();
    spec.probe = ProbeSpec {
        class_sets: vec![vec![0, 1], vec![0, 1], vec![2, 3], vec![2, 3]],
        rounds: 30,
        n_com: 3,
        arm: Algorithm::UaPdfl,
    };
    let out = probe_divergence(&spec, 5).unwrap();
    assert_eq!(out.matrices.len(), 31);
    for m in &out.matrices {
        for i in 0..4 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..4 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }
    let avg = |i: usize, j: usize, range: std::ops::Range<usize>| {
        let n = range.len() as f64;
        range.map(|r| out.matrices[r][i][j]).sum::<f64>() / n
    };
    let var = |i: usize, j: usize, range: std::ops::Range<usize>| {
        let m = avg(i, j, range.clone());
        let n = range.len() as f64;
        range.map(|r| (out.matrices[r][i][j] - m).powi(2)).sum::<f64>() / n
    };
    let last = 21..31;
    let same = avg(0, 1, last.clone());
    for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
        assert!(same < avg(i, j, last.clone()), "pair ({i},{j})");
        assert!(var(i, j, last.clone()) < var(i, j, 1..11), "pair ({i},{j}) did not settle");
    }
}

#[test]
fn identical_probe_clients_have_zero_divergence() {
    let mut spec = ExperimentSpec::default();
    spec.probe = ProbeSpec {
        class_sets: vec![vec![0, 1, 2, 3]; 3],
        rounds: 1,
        n_com: 2,
        arm: Algorithm::Local,
    };
    spec.protocol.sgd.learning_rate = 0.0;
    let out = probe_divergence(&spec, 0).unwrap();
    for m in &out.matrices {
        assert!(m.iter().flatten().all(|&d| d == 0.0));
    }
}

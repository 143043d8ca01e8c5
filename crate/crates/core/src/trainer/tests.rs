use super::*;
use crate::graph::Group;
use crate::synth::{two_class, SyntheticSpec};
use proptest::prelude::*;

fn identity_scaler(p: usize) -> ScalerStats {
    ScalerStats {
        min: vec![-1.0; p],
        max: vec![1.0; p],
        epsilon: DEFAULT_EPSILON,
    }
}

fn scaled(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> ScaledData {
    let p = rows[0].len();
    let n_classes = labels.iter().max().unwrap() + 1;
    ScaledData {
        rows,
        labels,
        n_classes,
        scaler: identity_scaler(p),
    }
}

fn config(dim: usize, embed_dim: usize) -> TrainConfig {
    TrainConfig {
        dim,
        embed_dim,
        epochs: 1,
        ..TrainConfig::default()
    }
}

fn one_group_per_param(p: usize) -> GraphSpec {
    GraphSpec {
        groups: (0..p)
            .map(|j| Group {
                name: format!("g{j}"),
                params: vec![j],
            })
            .collect(),
        edges: vec![],
    }
}

fn standard_basis(rows: usize, dim: usize) -> Arc<RandomBasis> {
    let rows = (0..rows)
        .map(|r| (0..dim).map(|t| if t == r { 1.0 } else { 0.0 }).collect())
        .collect();
    Arc::new(RandomBasis::from_rows(0, rows).unwrap())
}

/// Central differences over every embedding coordinate.
fn finite_differences(trainer: &mut Trainer, emb: &EmbeddingSet, step: f64) -> Vec<f64> {
    (0..emb.values.len())
        .map(|q| {
            let mut plus = emb.clone();
            plus.values[q] += step;
            let mut minus = emb.clone();
            minus.values[q] -= step;
            let lp = trainer.forward(&plus).unwrap().loss;
            let lm = trainer.forward(&minus).unwrap().loss;
            (lp - lm) / (2.0 * step)
        })
        .collect()
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1e-12))
        .fold(0.0, f64::max)
}

#[test]
fn orthogonal_prototypes_give_softplus_loss() {
    // Each row activates only its own group; prototypes are e1 and e2.
    let data = scaled(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
    let cfg = config(4, 2);
    let mut tr = Trainer::from_scaled(
        data,
        &[0, 1],
        &[],
        &one_group_per_param(2),
        standard_basis(2, 4),
        &cfg,
    )
    .unwrap();
    let emb = EmbeddingSet::from_rows(vec![vec![0.7, 0.0], vec![0.0, 0.7]]).unwrap();
    let pass = tr.forward(&emb).unwrap();
    assert_eq!(pass.logits, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let softplus = (1.0 + (-1.0f64).exp()).ln();
    assert!((pass.loss - softplus).abs() < 1e-15);
    assert!((pass.loss - 0.3133).abs() < 1e-4);
    assert_eq!(pass.degeneracy.zero_groups, 2);
}

#[test]
fn zero_inputs_give_log_c_and_zero_gradient() {
    let data = scaled(vec![vec![0.0, 0.0]; 4], vec![0, 1, 0, 1]);
    let cfg = config(16, 3);
    let basis = Arc::new(RandomBasis::generate(1, 3, 16));
    let mut tr = Trainer::from_scaled(
        data,
        &[0, 1, 2, 3],
        &[],
        &one_group_per_param(2),
        basis,
        &cfg,
    )
    .unwrap();
    let emb = EmbeddingSet::init(5, 2, 3);
    let (loss, grad) = tr.loss_and_gradient(&emb).unwrap();
    assert_eq!(loss, 2f64.ln());
    assert!(grad.values.iter().all(|&g| g == 0.0));
    assert!(grad.degeneracy.total() > 0);
}

/// Independent scalar evaluation of the loss with libm tanh and plain loops.
fn oracle_loss(
    x: &[Vec<f64>],
    y: &[usize],
    emb: &EmbeddingSet,
    basis: &RandomBasis,
    spec: &GraphSpec,
) -> f64 {
    let dim = basis.dim();
    let unit = |v: Vec<f64>| -> Vec<f64> {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n == 0.0 {
            v
        } else {
            v.into_iter().map(|a| a / n).collect()
        }
    };
    let samples: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let groups: Vec<Vec<f64>> = spec
                .groups
                .iter()
                .map(|g| {
                    let mut acc = vec![0.0; dim];
                    for &j in &g.params {
                        for (t, a) in acc.iter_mut().enumerate() {
                            let mut u = 0.0;
                            for r in 0..basis.rows() {
                                u += emb.get(j)[r] * basis.row(r)[t];
                            }
                            *a += (row[j] * u).tanh();
                        }
                    }
                    unit(acc)
                })
                .collect();
            let mut s = vec![0.0; dim];
            for k in 0..groups.len() {
                for t in 0..dim {
                    let mut b = groups[k][t];
                    for &(from, to) in &spec.edges {
                        if to == k {
                            b *= groups[from][t];
                        }
                    }
                    s[t] += b;
                }
            }
            unit(s)
        })
        .collect();
    let c = y.iter().max().unwrap() + 1;
    let protos: Vec<Vec<f64>> = (0..c)
        .map(|cls| {
            let mut m = vec![0.0; dim];
            for (h, &yi) in samples.iter().zip(y) {
                if yi == cls {
                    for t in 0..dim {
                        m[t] += h[t];
                    }
                }
            }
            unit(m)
        })
        .collect();
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let mut total = 0.0;
    for (h, &yi) in samples.iter().zip(y) {
        let z: Vec<f64> = protos.iter().map(|m| cos(h, m)).collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        total -= (z[yi].exp() / denom).ln();
    }
    total / y.len() as f64
}

#[test]
fn loss_matches_scalar_oracle() {
    let x = vec![
        vec![0.2, -0.7, 0.9],
        vec![-0.4, 0.5, 0.1],
        vec![0.8, 0.3, -0.6],
        vec![-0.9, -0.2, 0.4],
    ];
    let y = vec![0, 1, 0, 1];
    let spec = GraphSpec {
        groups: vec![
            Group {
                name: "a".into(),
                params: vec![0, 1],
            },
            Group {
                name: "b".into(),
                params: vec![2],
            },
        ],
        edges: vec![(0, 1)],
    };
    let cfg = config(32, 3);
    let basis = Arc::new(RandomBasis::generate(11, 3, 32));
    let emb = EmbeddingSet::init(4, 3, 3);
    let mut tr = Trainer::from_scaled(
        scaled(x.clone(), y.clone()),
        &[0, 1, 2, 3],
        &[],
        &spec,
        Arc::clone(&basis),
        &cfg,
    )
    .unwrap();
    let loss = tr.forward(&emb).unwrap().loss;
    let oracle = oracle_loss(&x, &y, &emb, &basis, &spec);
    assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
}

#[test]
fn tiny_fixture_gradient_matches_finite_differences() {
    let data = scaled(vec![vec![0.3], vec![-0.8]], vec![0, 1]);
    let cfg = config(4, 2);
    let basis = Arc::new(
        RandomBasis::from_rows(
            0,
            vec![vec![0.9, -0.3, 0.5, 0.2], vec![-0.1, 0.8, 0.4, -0.6]],
        )
        .unwrap(),
    );
    let mut tr =
        Trainer::from_scaled(data, &[0, 1], &[], &one_group_per_param(1), basis, &cfg).unwrap();
    let emb = EmbeddingSet::from_rows(vec![vec![1.3, -0.7]]).unwrap();
    let (_, grad) = tr.loss_and_gradient(&emb).unwrap();
    let fd = finite_differences(&mut tr, &emb, 1e-5);
    assert!(
        grad.values.iter().any(|g| g.abs() > 1e-6),
        "{:?}",
        grad.values
    );
    let err = max_relative_error(&grad.values, &fd);
    assert!(
        err < 1e-6,
        "relative error {err}: {:?} vs {fd:?}",
        grad.values
    );
}

#[test]
fn edged_fixture_gradient_matches_finite_differences() {
    let x = vec![
        vec![0.2, -0.7, 0.9, 0.1, -0.3],
        vec![-0.4, 0.5, 0.1, 0.6, 0.7],
        vec![0.8, 0.3, -0.6, -0.2, 0.2],
        vec![-0.9, -0.2, 0.4, 0.3, -0.8],
        vec![0.5, 0.9, -0.1, -0.7, 0.0],
        vec![-0.3, -0.5, 0.6, 0.9, 0.4],
    ];
    let y = vec![0, 1, 2, 0, 1, 2];
    let spec = GraphSpec {
        groups: vec![
            Group {
                name: "a".into(),
                params: vec![0, 1],
            },
            Group {
                name: "b".into(),
                params: vec![2],
            },
            Group {
                name: "c".into(),
                params: vec![3, 4],
            },
        ],
        edges: vec![(0, 2), (1, 2), (0, 1)],
    };
    let cfg = config(24, 3);
    let basis = Arc::new(RandomBasis::generate(3, 3, 24));
    let mut tr =
        Trainer::from_scaled(scaled(x, y), &[0, 1, 2, 3, 4, 5], &[], &spec, basis, &cfg).unwrap();
    let emb = EmbeddingSet::init(8, 5, 3);
    let (_, grad) = tr.loss_and_gradient(&emb).unwrap();
    let fd = finite_differences(&mut tr, &emb, 1e-5);
    let err = max_relative_error(&grad.values, &fd);
    assert!(err < 1e-5, "relative error {err}");
}

fn synthetic(n: usize, seed: u64) -> (DatasetTable, GraphSpec) {
    two_class(&SyntheticSpec {
        n_samples: n,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

#[test]
fn one_epoch_equals_manual_step() {
    let (table, spec) = synthetic(20, 1);
    let train_idx: Vec<usize> = (0..16).collect();
    let cfg = TrainConfig {
        dim: 256,
        embed_dim: 8,
        epochs: 1,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&table, &train_idx, &[16, 17, 18, 19], &spec, &cfg).unwrap();

    let mut tr = Trainer::new(&table, &train_idx, &[16, 17, 18, 19], &spec, &cfg).unwrap();
    let mut emb = tr.initial_embeddings();
    let (loss0, grad) = tr.loss_and_gradient(&emb).unwrap();
    let mut adam = Adam::new(cfg.learning_rate, cfg.adam, emb.values.len());
    adam.step(&mut emb.values, &grad.values);
    let loss1 = tr.forward(&emb).unwrap().loss;

    assert_eq!(out.final_state.embeddings, emb);
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.history[0].loss, loss0);
    assert_eq!(out.history[1].loss, loss1);
    assert_eq!(out.final_state.memory, tr.pass().memory);
}

#[test]
fn learns_separable_set() {
    let (table, spec) = synthetic(60, 2);
    let train_idx: Vec<usize> = (0..48).collect();
    let test_idx: Vec<usize> = (48..60).collect();
    let cfg = TrainConfig {
        dim: 1000,
        embed_dim: 16,
        epochs: 60,
        learning_rate: 1e-2,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(&table, &train_idx, &test_idx, &spec, &cfg).unwrap();
    let first = &out.history[0];
    let last = out.history.last().unwrap();
    assert!(last.loss < first.loss, "{} -> {}", first.loss, last.loss);
    assert!(last.train_acc >= 0.95, "train accuracy {}", last.train_acc);
    for r in &out.history[1..] {
        let rho = r.rho_bar.unwrap();
        assert!((-1.0..=1.0).contains(&rho));
    }
    assert!(prototype_stability(&out.history).unwrap().len() == 60);
}

#[test]
fn runs_are_bit_identical_and_basis_is_untouched() {
    let (table, spec) = synthetic(24, 3);
    let train_idx: Vec<usize> = (0..18).collect();
    let test_idx: Vec<usize> = (18..24).collect();
    let cfg = TrainConfig {
        dim: 128,
        embed_dim: 4,
        epochs: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train(&table, &train_idx, &test_idx, &spec, &cfg).unwrap();
    let b = train(&table, &train_idx, &test_idx, &spec, &cfg).unwrap();
    assert_eq!(
        history_csv_bytes(&a.history).unwrap(),
        history_csv_bytes(&b.history).unwrap()
    );
    assert_eq!(a.history, b.history);
    let fresh = RandomBasis::generate(9, 4, 128);
    assert_eq!(a.final_state.basis.fingerprint(), fresh.fingerprint());
    assert!(Arc::ptr_eq(&a.initial.basis, &a.final_state.basis));
}

#[test]
fn test_rows_never_reach_the_embeddings() {
    let (table, spec) = synthetic(24, 4);
    let train_idx: Vec<usize> = (0..18).collect();
    let cfg = TrainConfig {
        dim: 128,
        embed_dim: 4,
        epochs: 4,
        seed: 2,
        ..TrainConfig::default()
    };
    let with = train(&table, &train_idx, &[18, 19, 20, 21, 22, 23], &spec, &cfg).unwrap();
    let without = train(&table, &train_idx, &[], &spec, &cfg).unwrap();
    assert_eq!(with.final_state.embeddings, without.final_state.embeddings);
    assert!(without.history.iter().all(|r| r.test_acc.is_none()));
    assert!(with.history.iter().all(|r| r.test_acc.is_some()));
}

#[test]
fn frozen_embeddings_have_unit_stability() {
    let (table, spec) = synthetic(20, 5);
    let cfg = TrainConfig {
        dim: 200,
        embed_dim: 4,
        ..TrainConfig::default()
    };
    let train_idx: Vec<usize> = (0..20).collect();
    let mut tr = Trainer::new(&table, &train_idx, &[], &spec, &cfg).unwrap();
    let emb = tr.initial_embeddings();
    let before = tr.forward(&emb).unwrap().memory.clone();
    let after = tr.forward(&emb).unwrap().memory.clone();
    assert!((prototype_similarity(&before, &after) - 1.0).abs() < 1e-12);
}

#[test]
fn trainer_prototypes_match_memory_module() {
    let (table, spec) = synthetic(20, 6);
    let cfg = TrainConfig {
        dim: 64,
        embed_dim: 4,
        epochs: 2,
        ..TrainConfig::default()
    };
    let train_idx: Vec<usize> = (0..15).collect();
    let test_idx: Vec<usize> = (15..20).collect();
    let out = train(&table, &train_idx, &test_idx, &spec, &cfg).unwrap();
    let st = &out.final_state;
    let all: Vec<usize> = (0..20).collect();
    let samples = st.sample_hvs(&table, &all);
    let rebuilt = PrototypeMemory::build(&samples, table.labels().unwrap(), &train_idx, 2).unwrap();
    assert_eq!(rebuilt, st.memory);
    let preds = st.predict(&table, &test_idx);
    let acc = preds
        .iter()
        .zip(&test_idx)
        .filter(|(p, &i)| p.class == table.labels().unwrap()[i])
        .count() as f64
        / 5.0;
    assert_eq!(Some(acc), out.history.last().unwrap().test_acc);
}

#[test]
fn checkpoint_round_trip_restores_the_model() {
    let (table, spec) = synthetic(20, 7);
    let cfg = TrainConfig {
        dim: 64,
        embed_dim: 4,
        epochs: 3,
        seed: 17,
        ..TrainConfig::default()
    };
    let train_idx: Vec<usize> = (0..16).collect();
    let out = train(&table, &train_idx, &[16, 17, 18, 19], &spec, &cfg).unwrap();
    let ckpt = Checkpoint::from_state(&out.final_state, &table);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let restored = loaded.restore(&table).unwrap();
    assert_eq!(restored.embeddings, out.final_state.embeddings);
    assert_eq!(restored.memory, out.final_state.memory);
    assert_eq!(restored.spec, spec);
    assert_eq!(restored.epoch, 3);
}

#[test]
fn non_finite_loss_aborts() {
    let (table, spec) = synthetic(12, 8);
    let cfg = TrainConfig {
        dim: 32,
        embed_dim: 2,
        epochs: 2,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(&table, &(0..12).collect::<Vec<_>>(), &[], &spec, &cfg).unwrap();
    let mut emb = tr.initial_embeddings();
    emb.values[0] = f64::NAN;
    match tr.run(emb) {
        Err(Error::NonFinite { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_class_in_train_is_an_error() {
    let (table, spec) = synthetic(12, 9);
    let y = table.labels().unwrap();
    let only_zero: Vec<usize> = (0..12).filter(|&i| y[i] == 0).collect();
    let err = train(&table, &only_zero, &[], &spec, &config(32, 2)).unwrap_err();
    assert!(matches!(err, Error::EmptyClass { class: 1 }));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig {
            embed_dim: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            dim: 8,
            embed_dim: 16,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn history_csv_layout() {
    let h = vec![
        EpochRecord {
            epoch: 0,
            loss: 0.5,
            train_acc: 1.0,
            test_acc: None,
            rho_bar: None,
        },
        EpochRecord {
            epoch: 1,
            loss: 0.25,
            train_acc: 0.75,
            test_acc: Some(0.5),
            rho_bar: Some(0.999),
        },
    ];
    let text = String::from_utf8(history_csv_bytes(&h).unwrap()).unwrap();
    assert_eq!(
        text,
        "epoch,loss,train_acc,test_acc,rho_bar\n0,0.5,1,,\n1,0.25,0.75,0.5,0.999\n"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn initial_loss_is_bounded(seed in 0u64..1000) {
        let (table, spec) = synthetic(16, seed);
        let cfg = TrainConfig { dim: 64, embed_dim: 4, seed, ..TrainConfig::default() };
        let mut tr = Trainer::new(&table, &(0..16).collect::<Vec<_>>(), &[], &spec, &cfg).unwrap();
        let emb = tr.initial_embeddings();
        let loss = tr.forward(&emb).unwrap().loss;
        prop_assert!((0.0..=2f64.ln() + 2.0).contains(&loss));
        for p in &tr.pass().probabilities {
            for &v in p {
                prop_assert!((0.1192..=0.8808).contains(&v));
            }
        }
    }
}

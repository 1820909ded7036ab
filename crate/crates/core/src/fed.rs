//! The FedAvg communication loop.

use rand::Rng;
use rayon::prelude::*;

use crate::data::{ClientDataset, LabeledSample};
use crate::error::{Error, Result};
use crate::nn::{self, GradientSet, ModelWeights, TrainConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    /// Number of completed rounds.
    pub round: u64,
    pub weights: ModelWeights,
    pub seed: u64,
}

impl GlobalState {
    pub fn new(weights: ModelWeights, seed: u64) -> Self {
        Self {
            round: 0,
            weights,
            seed,
        }
    }
}

/// What a client uploads after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Trained local weights minus the global weights it started from.
    pub delta: GradientSet,
    pub num_samples: usize,
}

/// Denominator of the FedAvg weights `n_k / Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// `Z` is the total sample count of the participating clients.
    Selected,
    /// `Z` is a fixed total over all clients, participating or not.
    AllClients { total_samples: usize },
}

/// Runs local SGD on `client` starting from `global_weights`.
///
/// Every epoch takes `batches_per_epoch` steps on mini-batches drawn uniformly
/// with replacement (or on the whole shard when `full_batch` is set). The
/// learning rate is `learning_rate * lr_decay^round`. Batch sampling uses a
/// stream derived from `(seed, round, client id)`.
pub fn local_train(
    global_weights: &ModelWeights,
    client: &ClientDataset,
    cfg: &TrainConfig,
    round: u64,
    seed: u64,
) -> Result<ClientUpdate> {
    let samples = client.samples();
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "client {} has no samples",
            client.id()
        )));
    }
    let lr = cfg.lr_at(round);
    let mut rng = rng::rng_from(seed, &[round, client.id() as u64]);
    let mut local = global_weights.clone();
    for _ in 0..cfg.epochs * cfg.batches_per_epoch {
        let grads = if cfg.full_batch {
            nn::mean_gradient(&local, samples)?
        } else {
            nn::mean_gradient(
                &local,
                (0..cfg.batch_size).map(|_| &samples[rng.gen_range(0..samples.len())]),
            )?
        };
        local = nn::sgd_step(&local, &grads, lr)?;
    }
    Ok(ClientUpdate {
        client_id: client.id(),
        delta: local.difference(global_weights)?,
        num_samples: samples.len(),
    })
}

/// FedAvg: `W + sum_k (n_k / Z) delta_k`.
pub fn aggregate(
    updates: &[ClientUpdate],
    global_weights: &ModelWeights,
    normalization: Normalization,
) -> Result<ModelWeights> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument(
            "no client updates to aggregate".into(),
        ));
    }
    let z = match normalization {
        Normalization::Selected => updates.iter().map(|u| u.num_samples).sum(),
        Normalization::AllClients { total_samples } => total_samples,
    };
    if z == 0 {
        return Err(Error::InvalidArgument(
            "aggregation weights sum to zero".into(),
        ));
    }
    let mut combined = GradientSet::zeros_like(global_weights);
    for u in updates {
        combined.add_scaled(&u.delta, u.num_samples as f64 / z as f64)?;
    }
    global_weights.add_scaled(&combined, 1.0)
}

/// Test accuracy (argmax, ties to the lowest class) and mean cross-entropy.
pub fn evaluate(weights: &ModelWeights, test_set: &[LabeledSample]) -> Result<(f64, f64)> {
    nn::accuracy_and_loss(weights, test_set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    /// 1-based index of the round just completed.
    pub round: u64,
    pub selected: Vec<usize>,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

/// One communication round: local training on every selected client (in
/// parallel), aggregation, evaluation.
pub fn run_round(
    state: &GlobalState,
    selection: &[usize],
    clients: &[ClientDataset],
    cfg: &TrainConfig,
    normalization: Normalization,
    test_set: &[LabeledSample],
) -> Result<(GlobalState, RoundSummary, Vec<ClientUpdate>)> {
    if selection.is_empty() {
        return Err(Error::InvalidArgument("empty client selection".into()));
    }
    let mut seen = vec![false; clients.len()];
    for &id in selection {
        match seen.get_mut(id) {
            None => {
                return Err(Error::InvalidArgument(format!(
                    "client id {id} out of range for {} clients",
                    clients.len()
                )))
            }
            Some(true) => {
                return Err(Error::InvalidArgument(format!(
                    "client {id} selected twice"
                )))
            }
            Some(s) => *s = true,
        }
    }
    let updates = selection
        .par_iter()
        .map(|&id| local_train(&state.weights, &clients[id], cfg, state.round, state.seed))
        .collect::<Result<Vec<_>>>()?;
    let weights = aggregate(&updates, &state.weights, normalization)?;
    let (test_accuracy, test_loss) = evaluate(&weights, test_set)?;
    let next = GlobalState {
        round: state.round + 1,
        weights,
        seed: state.seed,
    };
    let summary = RoundSummary {
        round: next.round,
        selected: selection.to_vec(),
        test_accuracy,
        test_loss,
    };
    Ok((next, summary, updates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, partition_iid, partition_non_iid, PartitionConfig};
    use crate::nn::Matrix;

    fn setup() -> (ModelWeights, Vec<ClientDataset>, Vec<LabeledSample>) {
        let data = generate_dataset(40, 4, 6, 1.0, 3).unwrap();
        let cfg = PartitionConfig {
            num_clients: 6,
            classes_per_client: (1, 3),
            samples_per_client: (20, 40),
            seed: 3,
            disjoint: false,
        };
        let clients = partition_non_iid(&data, 4, &cfg).unwrap();
        let model = ModelWeights::glorot_uniform(&[6, 8, 4], 3).unwrap();
        (model, clients, data)
    }

    fn scalar_model(w: f64) -> ModelWeights {
        ModelWeights::from_parts(
            vec![1, 1],
            vec![Matrix::from_vec(1, 1, vec![w]).unwrap()],
            vec![vec![0.0]],
        )
        .unwrap()
    }

    fn scalar_update(id: usize, d: f64, n: usize) -> ClientUpdate {
        let mut delta = GradientSet::zeros_like(&scalar_model(0.0));
        delta.weights[0].set(0, 0, d);
        ClientUpdate {
            client_id: id,
            delta,
            num_samples: n,
        }
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let (model, clients, _) = setup();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let u = local_train(&model, &clients[0], &cfg, 0, 1).unwrap();
        assert!(u.delta.values().all(|v| v == 0.0));
        assert_eq!(u.num_samples, clients[0].len());
    }

    #[test]
    fn single_full_batch_step_matches_backward_and_sgd() {
        let (model, clients, _) = setup();
        let cfg = TrainConfig {
            epochs: 1,
            batches_per_epoch: 1,
            full_batch: true,
            ..Default::default()
        };
        let u = local_train(&model, &clients[2], &cfg, 0, 9).unwrap();
        let g = nn::backward(&model, clients[2].samples()).unwrap();
        let expected = nn::sgd_step(&model, &g, 0.1)
            .unwrap()
            .difference(&model)
            .unwrap();
        for (a, b) in u.delta.values().zip(expected.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn local_train_is_deterministic_and_decays() {
        let (model, clients, _) = setup();
        let cfg = TrainConfig::default();
        let a = local_train(&model, &clients[1], &cfg, 4, 7).unwrap();
        let b = local_train(&model, &clients[1], &cfg, 4, 7).unwrap();
        assert_eq!(a, b);
        assert!((cfg.lr_at(2) - 0.1 * 0.996f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn aggregate_arithmetic() {
        let w = scalar_model(2.0);
        let one = aggregate(&[scalar_update(0, 0.5, 7)], &w, Normalization::Selected).unwrap();
        assert!((one.weights()[0].get(0, 0) - 2.5).abs() < 1e-15);

        let equal = aggregate(
            &[scalar_update(0, 1.0, 5), scalar_update(1, 3.0, 5)],
            &w,
            Normalization::Selected,
        )
        .unwrap();
        assert!((equal.weights()[0].get(0, 0) - 4.0).abs() < 1e-15);

        let weighted = aggregate(
            &[scalar_update(0, 1.0, 10), scalar_update(1, 2.0, 30)],
            &w,
            Normalization::Selected,
        )
        .unwrap();
        assert!((weighted.weights()[0].get(0, 0) - 3.75).abs() < 1e-15);

        // paper-literal denominator shrinks partial participation
        let literal = aggregate(
            &[scalar_update(0, 1.0, 10), scalar_update(1, 2.0, 30)],
            &w,
            Normalization::AllClients { total_samples: 80 },
        )
        .unwrap();
        assert!((literal.weights()[0].get(0, 0) - (2.0 + 70.0 / 80.0)).abs() < 1e-15);
    }

    #[test]
    fn aggregate_errors() {
        let w = scalar_model(0.0);
        assert!(aggregate(&[], &w, Normalization::Selected).is_err());
        assert!(aggregate(&[scalar_update(0, 1.0, 0)], &w, Normalization::Selected).is_err());
        let other = ModelWeights::zeros(&[1, 2]).unwrap();
        assert!(matches!(
            aggregate(&[scalar_update(0, 1.0, 1)], &other, Normalization::Selected),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn aggregate_is_affine_equivariant() {
        let w = scalar_model(0.0);
        let base = [scalar_update(0, 1.0, 3), scalar_update(1, -2.0, 9)];
        let shifted = [scalar_update(0, 1.5, 3), scalar_update(1, -1.5, 9)];
        let a = aggregate(&base, &w, Normalization::Selected).unwrap();
        let b = aggregate(&shifted, &w, Normalization::Selected).unwrap();
        assert!((b.weights()[0].get(0, 0) - a.weights()[0].get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_model_accuracy_is_first_class_share() {
        let data = generate_dataset(10, 10, 4, 1.0, 0).unwrap();
        let (acc, loss) = evaluate(&ModelWeights::zeros(&[4, 5, 10]).unwrap(), &data).unwrap();
        assert!((acc - 0.1).abs() < 1e-15);
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_matches_recount() {
        let (model, _, data) = setup();
        let (acc, _) = evaluate(&model, &data[..100]).unwrap();
        let mut correct = 0;
        for s in &data[..100] {
            let p = nn::forward(&model, &s.features).unwrap();
            let mut best = 0;
            for i in 1..p.len() {
                if p[i] > p[best] {
                    best = i;
                }
            }
            correct += (best == s.label) as usize;
        }
        assert_eq!(acc, correct as f64 / 100.0);
        assert!(evaluate(&model, &[]).is_err());
    }

    #[test]
    fn full_participation_matches_centralized_step() {
        let data = generate_dataset(12, 3, 5, 1.0, 8).unwrap();
        let clients = partition_iid(&data, 3, 4, 8).unwrap();
        let union: Vec<_> = clients
            .iter()
            .flat_map(|c| c.samples().iter().cloned())
            .collect();
        let model = ModelWeights::glorot_uniform(&[5, 6, 3], 8).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batches_per_epoch: 1,
            full_batch: true,
            ..Default::default()
        };
        let state = GlobalState::new(model.clone(), 8);
        let ids: Vec<_> = (0..4).collect();
        let (next, summary, updates) =
            run_round(&state, &ids, &clients, &cfg, Normalization::Selected, &data).unwrap();
        assert_eq!(summary.round, 1);
        assert_eq!(next.round, 1);
        assert_eq!(updates.len(), 4);
        let g = nn::backward(&model, &union).unwrap();
        let central = nn::sgd_step(&model, &g, 0.1).unwrap();
        for (a, b) in next.weights.params().zip(central.params()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_epochs_leave_weights_unchanged() {
        let (model, clients, data) = setup();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let state = GlobalState::new(model.clone(), 0);
        let (next, _, _) = run_round(
            &state,
            &[0, 3],
            &clients,
            &cfg,
            Normalization::Selected,
            &data,
        )
        .unwrap();
        assert_eq!(next.weights, model);
    }

    #[test]
    fn run_round_validates_selection() {
        let (model, clients, data) = setup();
        let state = GlobalState::new(model, 0);
        let cfg = TrainConfig::default();
        for bad in [&[][..], &[0, 0][..], &[99][..]] {
            assert!(
                run_round(&state, bad, &clients, &cfg, Normalization::Selected, &data).is_err()
            );
        }
    }
}

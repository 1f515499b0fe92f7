use std::cell::Cell;

use rand::seq::SliceRandom;

use crate::data::TimeSeriesDataset;
use crate::nn::train::{run_epoch, EpochStats, GradientStep};
use crate::nn::{rng_from_seed, Model, NnError, Rng, TrainOutcome};
use crate::tensor::{ParamSet, Tensor};

thread_local! {
    static SCOPE: Cell<Option<usize>> = const { Cell::new(None) };
}

/// Id of the client whose local computation is running on this thread.
pub fn current_client() -> Option<usize> {
    SCOPE.with(Cell::get)
}

struct ScopeGuard(Option<usize>);

impl ScopeGuard {
    fn enter(id: usize) -> Self {
        ScopeGuard(SCOPE.with(|s| s.replace(Some(id))))
    }
}

impl Drop for ScopeGuard {
    fn drop(&mut self) {
        SCOPE.with(|s| s.set(self.0));
    }
}

/// Raw training data held by one client.
pub trait ClientData {
    fn dataset(&self) -> &TimeSeriesDataset;
}

impl ClientData for TimeSeriesDataset {
    fn dataset(&self) -> &TimeSeriesDataset {
        self
    }
}

/// A federated participant. The silo is private: other code sees only the
/// sample count, model parameters and predictions.
pub struct ClientState<D> {
    client_id: usize,
    silo: D,
    model: Model,
    rng: Rng,
    step: u64,
}

impl<D: ClientData> ClientState<D> {
    /// `seed` drives this client's shuffling and dropout stream.
    pub fn new(client_id: usize, silo: D, model: Model, seed: u64) -> Self {
        Self { client_id, silo, model, rng: rng_from_seed(seed), step: 0 }
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn num_samples(&self) -> usize {
        let _g = ScopeGuard::enter(self.client_id);
        self.silo.dataset().len()
    }

    pub fn params(&self) -> &ParamSet {
        &self.model.params
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Replaces the local weights by the server's.
    pub fn receive(&mut self, params: &ParamSet) {
        self.model.params.clone_from(params);
    }

    /// `epochs` local passes, or one minibatch when `epochs` is 0.
    pub fn local_train(
        &mut self,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        grad: &mut dyn GradientStep,
    ) -> Result<EpochStats, NnError> {
        let _g = ScopeGuard::enter(self.client_id);
        let data = self.silo.dataset();
        let mut stats = EpochStats::default();
        if epochs == 0 {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut self.rng);
            order.truncate(batch_size);
            let labels = data.labels_of(&order);
            let out = grad.compute(&self.model, &data.batch(&order), &labels, self.step, &mut self.rng)?;
            self.model.params.axpy(-lr, &out.grads);
            self.step += 1;
            stats.merge(EpochStats { loss_sum: out.loss_sum, labels, preds: out.preds, steps: 1 });
        }
        for _ in 0..epochs {
            stats.merge(run_epoch(&mut self.model, data, batch_size, lr, &mut self.rng, &mut self.step, grad)?);
        }
        Ok(stats)
    }

    /// Runs a self-contained local training routine on a copy of the local
    /// model and keeps the trained model.
    pub fn train_independent<X, E>(
        &self,
        routine: impl FnOnce(Model, &TimeSeriesDataset) -> Result<(TrainOutcome, X), E>,
    ) -> Result<(TrainOutcome, X), E> {
        let _g = ScopeGuard::enter(self.client_id);
        routine(self.model.clone(), self.silo.dataset())
    }

    pub fn predict_logits(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        self.model.forward(batch)
    }
}

use super::RoundConfig;
use crate::datagen::{batches_from_indices, SyntheticDataset};
use crate::error::{Error, Result};
use crate::nn::{backward, cross_entropy_logits, LayeredModel, OptimizerState};
use crate::representation::{aux_representation, unit_representation, AuxRep, UnitRep, UnitTensor};
use crate::seed::derive_seed;

/// One participant: its model, optimizer, data view and cached representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub model: LayeredModel,
    pub opt: OptimizerState,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub unit_rep: UnitRep,
    pub aux_rep: AuxRep,
}

impl ClientState {
    pub fn new(
        id: usize,
        model: LayeredModel,
        opt: OptimizerState,
        train: Vec<usize>,
        test: Vec<usize>,
        unit: &UnitTensor,
    ) -> Result<Self> {
        let unit_rep = unit_representation(&model, unit)?;
        let aux_rep = aux_representation(&model, unit)?;
        Ok(Self {
            id,
            model,
            opt,
            train,
            test,
            unit_rep,
            aux_rep,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.train.len()
    }

    pub fn refresh_representations(&mut self, unit: &UnitTensor) -> Result<()> {
        self.unit_rep = unit_representation(&self.model, unit)?;
        self.aux_rep = aux_representation(&self.model, unit)?;
        Ok(())
    }

    pub fn test_accuracy(&self, ds: &SyntheticDataset) -> Result<f64> {
        let (x, y) = ds.gather(&self.test);
        self.model.accuracy(&x, &y)
    }

    pub fn train_loss(&self, ds: &SyntheticDataset) -> Result<f64> {
        if self.train.is_empty() {
            return Ok(0.0);
        }
        let (x, y) = ds.gather(&self.train);
        cross_entropy_logits(&self.model.forward(&x)?, &y)
    }
}

/// Runs `cfg.local_epochs` epochs of momentum SGD on the client's data and
/// refreshes its representations. Returns per-epoch mean mini-batch losses.
///
/// The learning rate is `initial * decay^round_index` and the momentum buffers
/// start from zero each round. When `aux_avg` is given and the arm uses the
/// proximal term, each mini-batch gradient includes `mu * |g(x_unit) - aux_avg|^2`.
pub fn local_train(
    client: &mut ClientState,
    ds: &SyntheticDataset,
    unit: &UnitTensor,
    aux_avg: Option<&AuxRep>,
    cfg: &RoundConfig,
    round_index: usize,
    epoch_seed: u64,
) -> Result<Vec<f64>> {
    let mu = cfg.effective_mu();
    let target = aux_avg.map(AuxRep::features).filter(|_| mu > 0.0);
    client.opt.learning_rate = cfg.sgd.learning_rate_at(round_index);
    client.opt.momentum = cfg.sgd.momentum;
    client.opt.reset_buffers();
    let mut epoch_losses = Vec::with_capacity(cfg.local_epochs);
    for epoch in 0..cfg.local_epochs {
        let stream = batches_from_indices(
            ds,
            &client.train,
            client.id,
            cfg.batch_size,
            derive_seed(epoch_seed, &[round_index as u64, epoch as u64]),
        )?;
        let mut total = 0.0;
        for batch in &stream {
            let grads = backward(
                &client.model,
                &batch.inputs,
                &batch.labels,
                unit.values(),
                target,
                mu,
            )?;
            if !grads.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "client {} diverged in round {round_index}",
                    client.id
                )));
            }
            total += grads.loss;
            client.opt.step(&mut client.model, &grads)?;
        }
        epoch_losses.push(if stream.is_empty() {
            0.0
        } else {
            total / stream.len() as f64
        });
    }
    client.refresh_representations(unit)?;
    Ok(epoch_losses)
}

use ndarray::Array2;

use super::{ActionValue, AgentError, Result};
use crate::nn::{
    adam_update, Activation, AdamConfig, AdamState, DenseNet, GradientBundle, NnError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticCount {
    Two,
    One,
    None,
}

impl CriticCount {
    pub fn len(self) -> usize {
        match self {
            CriticCount::Two => 2,
            CriticCount::One => 1,
            CriticCount::None => 0,
        }
    }

    pub fn is_empty(self) -> bool {
        self == CriticCount::None
    }
}

/// Up to two independently trained action-value networks, combined by minimum.
#[derive(Debug, Clone)]
pub struct CriticPair {
    count: CriticCount,
    nets: Vec<DenseNet>,
    adams: Vec<AdamState>,
    grad_clip: f64,
}

impl CriticPair {
    /// Critics `action_dim - hidden... - 1`; critic `k` is initialized from `seed + k`
    /// with its output-layer weights multiplied by `output_scale`.
    pub fn new(
        count: CriticCount,
        action_dim: usize,
        hidden: &[usize],
        output_scale: f64,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut signature = vec![action_dim];
        signature.extend_from_slice(hidden);
        signature.push(1);
        let nets = (0..count.len())
            .map(|k| {
                let mut net =
                    DenseNet::new(&signature, Activation::Relu, seed.wrapping_add(k as u64))?;
                net.scale_output_layer(output_scale);
                Ok(net)
            })
            .collect::<std::result::Result<Vec<_>, NnError>>()?;
        Ok(Self::from_nets(count, nets, lr))
    }

    /// Wraps prebuilt networks. `nets.len()` must match `count`.
    pub fn from_nets(count: CriticCount, nets: Vec<DenseNet>, lr: f64) -> Self {
        assert_eq!(
            nets.len(),
            count.len(),
            "critic count and network list disagree"
        );
        let adams = nets
            .iter()
            .map(|n| AdamState::for_net(n, AdamConfig::with_lr(lr)))
            .collect();
        CriticPair {
            count,
            nets,
            adams,
            grad_clip: f64::INFINITY,
        }
    }

    pub fn with_grad_clip(mut self, max_norm: f64) -> Self {
        self.grad_clip = max_norm;
        self
    }

    pub fn count(&self) -> CriticCount {
        self.count
    }

    pub fn nets(&self) -> &[DenseNet] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [DenseNet] {
        &mut self.nets
    }

    /// Each critic's estimate at `action`.
    pub fn values(&self, action: &[f64]) -> Result<Vec<f64>> {
        self.nets
            .iter()
            .map(|n| Ok(n.predict(action)?[0]))
            .collect()
    }

    /// Pointwise minimum over the present critics.
    pub fn value(&self, action: &[f64]) -> Result<f64> {
        if self.count == CriticCount::None {
            return Err(AgentError::UnsupportedVariant(
                "critic value requested from a critic-free agent".into(),
            ));
        }
        Ok(self
            .values(action)?
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }

    /// `mean_j 1/2 (Q_k(a_j) - r_j)^2` and its parameter gradient for critic `k`.
    pub fn loss_gradient(
        &self,
        k: usize,
        batch: &[(Vec<f64>, f64)],
    ) -> Result<(f64, GradientBundle)> {
        if batch.is_empty() {
            return Err(AgentError::InvalidArgument("empty critic batch".into()));
        }
        let net = &self.nets[k];
        let inputs = stack(batch.iter().map(|(a, _)| a.as_slice()), net.input_dim())?;
        let cache = net.forward_batch(&inputs)?;
        let n = batch.len() as f64;
        let errors: Vec<f64> = cache
            .output()
            .column(0)
            .iter()
            .zip(batch)
            .map(|(q, (_, r))| q - r)
            .collect();
        let loss = errors.iter().map(|e| 0.5 * e * e).sum::<f64>() / n;
        let upstream = Array2::from_shape_fn((batch.len(), 1), |(i, _)| errors[i] / n);
        let (grad, _) = net.backward_batch(&cache, &upstream)?;
        Ok((loss, grad))
    }

    pub fn loss(&self, k: usize, batch: &[(Vec<f64>, f64)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(AgentError::InvalidArgument("empty critic batch".into()));
        }
        let net = &self.nets[k];
        let mut loss = 0.0;
        for (action, reward) in batch {
            let err = net.predict(action)?[0] - reward;
            loss += 0.5 * err * err;
        }
        Ok(loss / batch.len() as f64)
    }

    /// One Adam step per critic on the squared-error loss; returns pre-step losses.
    pub fn update(&mut self, batch: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(AgentError::InvalidArgument("empty critic batch".into()));
        }
        if let Some((_, r)) = batch.iter().find(|(_, r)| !(0.0..=1.0).contains(r)) {
            return Err(AgentError::InvalidReward(*r));
        }
        let mut losses = Vec::with_capacity(self.nets.len());
        for k in 0..self.nets.len() {
            let (loss, mut grad) = self.loss_gradient(k, batch)?;
            grad.clip_global_norm(self.grad_clip);
            adam_update(&mut self.nets[k], &grad, &mut self.adams[k])?;
            losses.push(loss);
        }
        Ok(losses)
    }
}

impl ActionValue for CriticPair {
    /// Minimum critic value and the input gradient of the critic attaining it.
    fn value_and_gradient(&self, action: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.count == CriticCount::None {
            return Err(AgentError::UnsupportedVariant(
                "critic value requested from a critic-free agent".into(),
            ));
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for net in &self.nets {
            let cache = net.forward(action)?;
            let v = cache.output()[0];
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                let (_, dx) = net.backward(&cache, &[1.0])?;
                best = Some((v, dx));
            }
        }
        Ok(best.expect("at least one critic"))
    }

    fn values_and_gradients(&self, actions: &[Vec<f64>]) -> Result<Vec<(f64, Vec<f64>)>> {
        if self.count == CriticCount::None {
            return Err(AgentError::UnsupportedVariant(
                "critic value requested from a critic-free agent".into(),
            ));
        }
        if actions.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.nets[0].input_dim();
        let inputs = stack(actions.iter().map(|a| a.as_slice()), dim)?;
        let caches = self
            .nets
            .iter()
            .map(|n| n.forward_batch(&inputs))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        // Index of the critic attaining the minimum for each row; first wins ties.
        let argmin: Vec<usize> = (0..actions.len())
            .map(|i| {
                (0..caches.len()).fold(0, |best, k| {
                    if caches[k].output()[[i, 0]] < caches[best].output()[[i, 0]] {
                        k
                    } else {
                        best
                    }
                })
            })
            .collect();
        let mut out: Vec<(f64, Vec<f64>)> = argmin
            .iter()
            .enumerate()
            .map(|(i, &k)| (caches[k].output()[[i, 0]], vec![0.0; dim]))
            .collect();
        for (k, (net, cache)) in self.nets.iter().zip(&caches).enumerate() {
            let upstream =
                Array2::from_shape_fn(
                    (actions.len(), 1),
                    |(i, _)| if argmin[i] == k { 1.0 } else { 0.0 },
                );
            if upstream.iter().all(|&u| u == 0.0) {
                continue;
            }
            let (_, dx) = net.backward_batch(cache, &upstream)?;
            for (i, row) in dx.rows().into_iter().enumerate() {
                if argmin[i] == k {
                    out[i]
                        .1
                        .copy_from_slice(row.as_slice().expect("standard layout"));
                }
            }
        }
        Ok(out)
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::new();
    let mut n = 0;
    for row in rows {
        if row.len() != dim {
            return Err(AgentError::Shape {
                expected: dim,
                got: row.len(),
            });
        }
        flat.extend_from_slice(row);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, dim), flat).expect("rows have equal length"))
}

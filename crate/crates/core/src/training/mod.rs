//! Three-phase training: supervised SR pretraining, the LR cleaning cycle,
//! then joint fine-tuning that alternates the LR and HR objectives.
//!
//! Within one side of one iteration the discriminator steps first on a
//! detached fake, then the generators step against the updated
//! discriminator. Generator steps back-propagate through the discriminator
//! without touching its parameters.

mod checkpoint;
mod log;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use log::RunLog;

use crate::config::RunConfig;
use crate::dataset::{sample_training_batch, TrainingBatch, UnpairedSplit};
use crate::error::{Error, Result};
use crate::losses::{
    cycle_loss, identity_loss_hr, identity_loss_lr, lsgan_d_loss, lsgan_g_loss, total_loss_hr, total_loss_lr,
    tv_loss, LossBreakdown, LossParts, LossWeights,
};
use crate::networks::{Network, NetworkKind, NetworkParams};
use crate::nn::{Mode, Trace};
use crate::optim::{lr_at, Adam, OptimizerConfig};
use crate::tensor::Tensor;

/// Entries kept in [`TrainState::history`].
pub const HISTORY_CAPACITY: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetId {
    G1,
    G2,
    G3,
    D1,
    D2,
    Sr,
}

impl NetId {
    pub const ALL: [NetId; 6] = [NetId::G1, NetId::G2, NetId::G3, NetId::D1, NetId::D2, NetId::Sr];

    pub fn kind(self) -> NetworkKind {
        match self {
            NetId::G1 | NetId::G2 => NetworkKind::GeneratorSameSize,
            NetId::G3 => NetworkKind::GeneratorDownscale,
            NetId::D1 => NetworkKind::DiscriminatorPatch16,
            NetId::D2 => NetworkKind::DiscriminatorPatch70,
            NetId::Sr => NetworkKind::SrBackbone,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NetId::G1 => "g1",
            NetId::G2 => "g2",
            NetId::G3 => "g3",
            NetId::D1 => "d1",
            NetId::D2 => "d2",
            NetId::Sr => "sr",
        }
    }

    pub fn from_name(s: &str) -> Option<NetId> {
        NetId::ALL.into_iter().find(|id| id.name() == s)
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Weight-initialisation seed for this network.
    pub fn init_seed(self, seed: u64) -> u64 {
        seed ^ ((self.index() as u64 + 1) << 40)
    }
}

/// Network subsets compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// Every network and loss.
    Full,
    /// SR, G3 and D2 only; the HR cycle starts from the raw input.
    Structure1,
    /// The LR cycle plus HR identity and smoothness; no D2 or G3.
    Structure2,
    /// The HR cycle with G1 kept on LR identity and smoothness; no D1 or G2.
    Structure3,
}

impl Structure {
    pub const ALL: [Structure; 4] = [
        Structure::Full,
        Structure::Structure1,
        Structure::Structure2,
        Structure::Structure3,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Structure::Full),
            "structure1" => Ok(Structure::Structure1),
            "structure2" => Ok(Structure::Structure2),
            "structure3" => Ok(Structure::Structure3),
            _ => Err(Error::InvalidArgument(format!(
                "unknown structure `{s}` (expected full, structure1, structure2 or structure3)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Structure::Full => "full",
            Structure::Structure1 => "structure1",
            Structure::Structure2 => "structure2",
            Structure::Structure3 => "structure3",
        }
    }

    /// Networks trained during the joint stage.
    pub fn active_networks(self) -> &'static [NetId] {
        match self {
            Structure::Full => &NetId::ALL,
            Structure::Structure1 => &[NetId::G3, NetId::D2, NetId::Sr],
            Structure::Structure2 => &[NetId::G1, NetId::G2, NetId::D1, NetId::Sr],
            Structure::Structure3 => &[NetId::G1, NetId::G3, NetId::D2, NetId::Sr],
        }
    }

    /// Whether inference runs the input through G1 before SR.
    pub fn uses_g1(self) -> bool {
        self != Structure::Structure1
    }
}

/// The six architectures built from one configuration.
#[derive(Clone, Debug)]
pub struct Networks {
    nets: Vec<Network>,
}

impl Networks {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let nets = NetId::ALL
            .iter()
            .map(|id| Network::build(cfg.spec(id.kind())))
            .collect::<Result<_>>()?;
        Ok(Networks { nets })
    }

    pub fn get(&self, id: NetId) -> &Network {
        &self.nets[id.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub params: NetworkParams<f32>,
    pub adam: Adam<f32>,
}

/// One logged iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: u8,
    pub iteration: u64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sr_l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lr_side: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hr_side: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lr_weights: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hr_weights: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// 1 for the LR cycle, 2 for joint training.
    pub phase: u8,
    /// Iterations completed in the current phase.
    pub iteration: u64,
    pub structure: Structure,
    slots: Vec<Option<Slot>>,
    pub rng: ChaCha8Rng,
    pub history: VecDeque<LogRecord>,
    /// Hash chain over every batch drawn in the current phase.
    pub data_digest: [u8; 32],
}

/// Optional side effects of a training run.
#[derive(Default)]
pub struct RunHooks<'a> {
    pub log: Option<&'a mut RunLog>,
    /// Written every `checkpoint_interval` iterations.
    pub checkpoint: Option<&'a std::path::Path>,
    pub config: Option<&'a RunConfig>,
}

fn phase_rng(seed: u64, phase: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase as u64 + 1);
    rng
}

fn new_slot(nets: &Networks, id: NetId, seed: u64) -> Slot {
    let net = nets.get(id);
    Slot {
        params: net.init_weights(id.init_seed(seed)),
        adam: Adam::new(net.decls()),
    }
}

fn check_loss(iteration: u64, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            message: format!("{what} loss is {v}"),
        })
    }
}

impl TrainState {
    /// Fresh phase-1 state with G1, G2 and D1 initialised.
    pub fn new(cfg: &RunConfig, nets: &Networks) -> Self {
        let mut slots: Vec<Option<Slot>> = vec![None; 6];
        for id in [NetId::G1, NetId::G2, NetId::D1] {
            slots[id.index()] = Some(new_slot(nets, id, cfg.seed));
        }
        TrainState {
            phase: 1,
            iteration: 0,
            structure: Structure::Full,
            slots,
            rng: phase_rng(cfg.seed, 1),
            history: VecDeque::new(),
            data_digest: [0; 32],
        }
    }

    pub(crate) fn from_parts(
        phase: u8,
        iteration: u64,
        structure: Structure,
        slots: Vec<Option<Slot>>,
        rng: ChaCha8Rng,
        history: VecDeque<LogRecord>,
        data_digest: [u8; 32],
    ) -> Self {
        TrainState {
            phase,
            iteration,
            structure,
            slots,
            rng,
            history,
            data_digest,
        }
    }

    pub fn slot(&self, id: NetId) -> Option<&Slot> {
        self.slots[id.index()].as_ref()
    }

    pub fn params(&self, id: NetId) -> Option<&NetworkParams<f32>> {
        self.slot(id).map(|s| &s.params)
    }

    pub fn set_params(&mut self, id: NetId, nets: &Networks, params: NetworkParams<f32>) -> Result<()> {
        nets.get(id).check_params(&params)?;
        let adam = Adam::new(nets.get(id).decls());
        self.slots[id.index()] = Some(Slot { params, adam });
        Ok(())
    }

    /// Networks currently instantiated.
    pub fn census(&self) -> Vec<NetId> {
        NetId::ALL.into_iter().filter(|id| self.slot(*id).is_some()).collect()
    }

    /// Switches to joint training for `structure`: installs the pretrained
    /// SR, initialises G3 and D2, drops inactive networks and resets every
    /// optimiser moment and the data stream.
    pub fn begin_phase2(
        &mut self,
        cfg: &RunConfig,
        nets: &Networks,
        sr: NetworkParams<f32>,
        structure: Structure,
    ) -> Result<()> {
        if self.phase != 1 {
            return Err(Error::InvalidArgument(format!(
                "joint training starts from a phase-1 state, got phase {}",
                self.phase
            )));
        }
        self.set_params(NetId::Sr, nets, sr)?;
        for id in [NetId::G3, NetId::D2] {
            self.slots[id.index()] = Some(new_slot(nets, id, cfg.seed));
        }
        let active = structure.active_networks();
        for id in NetId::ALL {
            if !active.contains(&id) {
                self.slots[id.index()] = None;
            }
        }
        for slot in self.slots.iter_mut().flatten() {
            slot.adam.reset();
        }
        self.phase = 2;
        self.iteration = 0;
        self.structure = structure;
        self.rng = phase_rng(cfg.seed, 2);
        self.data_digest = [0; 32];
        Ok(())
    }

    fn slot_mut(&mut self, id: NetId) -> Result<&mut Slot> {
        self.slots[id.index()]
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("network {} is not instantiated", id.name())))
    }

    fn forward(&mut self, nets: &Networks, id: NetId, x: Tensor<f32>) -> Result<Trace<f32>> {
        let slot = self.slot_mut(id)?;
        nets.get(id).forward(&mut slot.params, x, Mode::Train)
    }

    fn backward(
        &self,
        nets: &Networks,
        id: NetId,
        trace: &Trace<f32>,
        grad: &Tensor<f32>,
        param_grads: Option<&mut [Tensor<f32>]>,
        input_grad: bool,
    ) -> Result<Option<Tensor<f32>>> {
        let slot = self.slot(id).expect("forward succeeded on this slot");
        nets.get(id)
            .backward(&slot.params, trace, grad, param_grads, input_grad)
    }

    fn apply(
        &mut self,
        nets: &Networks,
        id: NetId,
        opt: &OptimizerConfig,
        lr: f64,
        clip: f64,
        mut grads: Vec<Tensor<f32>>,
    ) -> Result<()> {
        if clip > 0.0 {
            let norm = grads.iter().map(|g| g.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sum::<f64>().sqrt();
            if norm > clip {
                let k = (clip / norm) as f32;
                for g in &mut grads {
                    g.data_mut().iter_mut().for_each(|v| *v *= k);
                }
            }
        }
        let iteration = self.iteration;
        let slot = self.slot_mut(id)?;
        slot.adam
            .update(opt, lr, nets.get(id).decls(), &mut slot.params.tensors, &grads)?;
        if !slot.params.all_finite() {
            return Err(Error::Diverged {
                iteration,
                message: format!("non-finite parameters in {}", id.name()),
            });
        }
        Ok(())
    }

    /// One discriminator step on `real` versus detached `fake`.
    fn discriminator_step(
        &mut self,
        nets: &Networks,
        id: NetId,
        real: &Tensor<f32>,
        fake: &Tensor<f32>,
        opt: &OptimizerConfig,
        lr: f64,
        clip: f64,
    ) -> Result<f64> {
        let tr = self.forward(nets, id, real.clone())?;
        let tf = self.forward(nets, id, fake.clone())?;
        let (loss, gr, gf) = lsgan_d_loss(tr.output(), tf.output())?;
        check_loss(self.iteration, "discriminator", loss)?;
        let mut grads = nets.get(id).zero_grads();
        self.backward(nets, id, &tr, &gr, Some(&mut grads), false)?;
        self.backward(nets, id, &tf, &gf, Some(&mut grads), false)?;
        self.apply(nets, id, opt, lr, clip, grads)?;
        Ok(loss)
    }

    /// Adversarial loss of `fake` under a frozen discriminator and its
    /// gradient with respect to `fake`.
    fn adversarial_grad(&mut self, nets: &Networks, id: NetId, fake: &Tensor<f32>) -> Result<(f64, Tensor<f32>)> {
        let t = self.forward(nets, id, fake.clone())?;
        let l = lsgan_g_loss(t.output())?;
        let g = self
            .backward(nets, id, &t, &l.grad, None, true)?
            .expect("input gradient requested");
        Ok((l.value, g))
    }

    /// LR-side update. With `adversarial` unset only G1 is trained, on the
    /// identity and smoothness terms.
    fn lr_side(
        &mut self,
        nets: &Networks,
        batch: &TrainingBatch<f32>,
        w: &LossWeights,
        opt: &OptimizerConfig,
        lr: f64,
        clip: f64,
        adversarial: bool,
    ) -> Result<(LossBreakdown, Option<f64>)> {
        let [w1, w2, w3] = w.lr();
        let t_x = self.forward(nets, NetId::G1, batch.x.clone())?;
        let fake = t_x.output().clone();
        let mut parts = LossParts::default();
        let mut g_fake = Tensor::zeros(fake.shape());
        let mut g1_grads = nets.get(NetId::G1).zero_grads();
        let mut d1 = None;
        if adversarial {
            d1 = Some(self.discriminator_step(nets, NetId::D1, &batch.y, &fake, opt, lr, clip)?);
            let (gan, g) = self.adversarial_grad(nets, NetId::D1, &fake)?;
            parts.gan = gan;
            g_fake.add_scaled(&g, 1.0)?;

            let t_rec = self.forward(nets, NetId::G2, fake.clone())?;
            let l = cycle_loss(t_rec.output(), &batch.x)?;
            parts.cyc = l.value;
            let mut g2_grads = nets.get(NetId::G2).zero_grads();
            let scaled = l.grad.map(|v| v * w1 as f32);
            let g = self
                .backward(nets, NetId::G2, &t_rec, &scaled, Some(&mut g2_grads), true)?
                .expect("input gradient requested");
            g_fake.add_scaled(&g, 1.0)?;
            self.apply(nets, NetId::G2, opt, lr, clip, g2_grads)?;
        }
        let l = tv_loss(&fake)?;
        parts.tv = l.value;
        g_fake.add_scaled(&l.grad, w3 as f32)?;
        self.backward(nets, NetId::G1, &t_x, &g_fake, Some(&mut g1_grads), false)?;
        drop(t_x);

        let t_y = self.forward(nets, NetId::G1, batch.y.clone())?;
        let l = identity_loss_lr(t_y.output(), &batch.y)?;
        parts.idt = l.value;
        let scaled = l.grad.map(|v| v * w2 as f32);
        self.backward(nets, NetId::G1, &t_y, &scaled, Some(&mut g1_grads), false)?;
        drop(t_y);

        let total = total_loss_lr(parts, w)?;
        check_loss(self.iteration, "LR-cycle", total.total)?;
        self.apply(nets, NetId::G1, opt, lr, clip, g1_grads)?;
        Ok((total, d1))
    }

    /// HR-side update. `from_g1` feeds `SR(G1(x))` rather than `SR(x)`;
    /// `adversarial` enables D2 and the G3 cycle.
    #[allow(clippy::too_many_arguments)]
    fn hr_side(
        &mut self,
        nets: &Networks,
        batch: &TrainingBatch<f32>,
        w: &LossWeights,
        opt: &OptimizerConfig,
        lr: f64,
        clip: f64,
        from_g1: bool,
        adversarial: bool,
    ) -> Result<(LossBreakdown, Option<f64>)> {
        let [l1, l2, l3] = w.hr();
        let t_a = if from_g1 {
            Some(self.forward(nets, NetId::G1, batch.x.clone())?)
        } else {
            None
        };
        let sr_in = t_a.as_ref().map_or_else(|| batch.x.clone(), |t| t.output().clone());
        let t_b = self.forward(nets, NetId::Sr, sr_in)?;
        let zt = t_b.output().clone();
        let mut parts = LossParts::default();
        let mut g_zt = Tensor::zeros(zt.shape());
        let mut d2 = None;
        if adversarial {
            d2 = Some(self.discriminator_step(nets, NetId::D2, &batch.z, &zt, opt, lr, clip)?);
            let (gan, g) = self.adversarial_grad(nets, NetId::D2, &zt)?;
            parts.gan = gan;
            g_zt.add_scaled(&g, 1.0)?;

            let t_c = self.forward(nets, NetId::G3, zt.clone())?;
            let l = cycle_loss(t_c.output(), &batch.x)?;
            parts.cyc = l.value;
            let mut g3_grads = nets.get(NetId::G3).zero_grads();
            let scaled = l.grad.map(|v| v * l1 as f32);
            let g = self
                .backward(nets, NetId::G3, &t_c, &scaled, Some(&mut g3_grads), true)?
                .expect("input gradient requested");
            g_zt.add_scaled(&g, 1.0)?;
            self.apply(nets, NetId::G3, opt, lr, clip, g3_grads)?;
        }
        let l = tv_loss(&zt)?;
        parts.tv = l.value;
        g_zt.add_scaled(&l.grad, l3 as f32)?;
        let mut sr_grads = nets.get(NetId::Sr).zero_grads();
        let g_in = self.backward(nets, NetId::Sr, &t_b, &g_zt, Some(&mut sr_grads), from_g1)?;
        drop(t_b);
        if let (Some(t_a), Some(g_in)) = (t_a, g_in) {
            let mut g1_grads = nets.get(NetId::G1).zero_grads();
            self.backward(nets, NetId::G1, &t_a, &g_in, Some(&mut g1_grads), false)?;
            self.apply(nets, NetId::G1, opt, lr, clip, g1_grads)?;
        }

        let t_d = self.forward(nets, NetId::Sr, batch.y.clone())?;
        let l = identity_loss_hr(t_d.output(), &batch.z)?;
        parts.idt = l.value;
        let scaled = l.grad.map(|v| v * l2 as f32);
        self.backward(nets, NetId::Sr, &t_d, &scaled, Some(&mut sr_grads), false)?;
        drop(t_d);

        let total = total_loss_hr(parts, w)?;
        check_loss(self.iteration, "HR-cycle", total.total)?;
        self.apply(nets, NetId::Sr, opt, lr, clip, sr_grads)?;
        Ok((total, d2))
    }

    fn draw_batch(&mut self, split: &UnpairedSplit, batch_size: usize) -> Result<TrainingBatch<f32>> {
        let batch = sample_training_batch(split, batch_size, &mut self.rng)?;
        let mut h = Sha256::new();
        h.update(self.data_digest);
        h.update(batch.fingerprint());
        self.data_digest = h.finalize().into();
        Ok(batch)
    }

    fn record(&mut self, rec: LogRecord, hooks: &mut RunHooks<'_>, interval: u64, last: bool) -> Result<()> {
        if self.history.len() == HISTORY_CAPACITY {
            self.history.pop_front();
        }
        self.history.push_back(rec.clone());
        if let Some(log) = hooks.log.as_deref_mut() {
            if rec.iteration % interval == 0 || last {
                log.write(&rec)?;
            }
        }
        Ok(())
    }

    fn maybe_checkpoint(&self, hooks: &RunHooks<'_>, interval: u64) -> Result<()> {
        if let (Some(path), Some(cfg)) = (hooks.checkpoint, hooks.config) {
            if interval > 0 && self.iteration % interval == 0 {
                save_checkpoint(self, cfg, path)?;
            }
        }
        Ok(())
    }
}

/// Phase 0: fits SR to bicubic pairs from domain Z with an L1 loss.
pub fn pretrain_sr(
    cfg: &RunConfig,
    nets: &Networks,
    split: &UnpairedSplit,
    steps: u64,
    hooks: &mut RunHooks<'_>,
) -> Result<(NetworkParams<f32>, Vec<f64>)> {
    let net = nets.get(NetId::Sr);
    let mut params = net.init_weights::<f32>(NetId::Sr.init_seed(cfg.seed));
    let mut adam = Adam::new(net.decls());
    let mut rng = phase_rng(cfg.seed, 0);
    let opt = &cfg.optim.phase0;
    let mut losses = Vec::with_capacity(steps as usize);
    if let Some(log) = hooks.log.as_deref_mut() {
        log.phase_start(0, cfg, opt, None)?;
    }
    for it in 0..steps {
        let batch: TrainingBatch<f32> = sample_training_batch(split, cfg.split.batch_size, &mut rng)?;
        let lr = lr_at(it, opt);
        let trace = net.forward(&mut params, batch.y, Mode::Train)?;
        let l = identity_loss_lr(trace.output(), &batch.z)?;
        check_loss(it, "SR pretraining", l.value)?;
        let mut grads = net.zero_grads();
        net.backward(&params, &trace, &l.grad, Some(&mut grads), false)?;
        drop(trace);
        adam.update(opt, lr, net.decls(), &mut params.tensors, &grads)?;
        if !params.all_finite() {
            return Err(Error::Diverged {
                iteration: it,
                message: "non-finite SR parameters".into(),
            });
        }
        losses.push(l.value);
        if let Some(log) = hooks.log.as_deref_mut() {
            if it % cfg.log_interval == 0 || it + 1 == steps {
                log.write(&LogRecord {
                    phase: 0,
                    iteration: it,
                    lr,
                    sr_l1: Some(l.value),
                    lr_side: None,
                    hr_side: None,
                    d1: None,
                    d2: None,
                    lr_weights: None,
                    hr_weights: None,
                })?;
            }
        }
    }
    Ok((params, losses))
}

/// Phase 1: `steps` iterations of the LR cleaning cycle.
pub fn train_phase1(
    state: &mut TrainState,
    cfg: &RunConfig,
    nets: &Networks,
    split: &UnpairedSplit,
    steps: u64,
    hooks: &mut RunHooks<'_>,
) -> Result<()> {
    if state.phase != 1 {
        return Err(Error::InvalidArgument(format!(
            "phase-1 training needs a phase-1 state, got phase {}",
            state.phase
        )));
    }
    let opt = cfg.optim.phase1;
    let w = cfg.loss.phase1();
    if state.iteration == 0 {
        if let Some(log) = hooks.log.as_deref_mut() {
            log.phase_start(1, cfg, &opt, Some(&w))?;
        }
    }
    for k in 0..steps {
        let lr = lr_at(state.iteration, &opt);
        let batch = state.draw_batch(split, cfg.split.batch_size)?;
        let (lr_side, d1) = state.lr_side(nets, &batch, &w, &opt, lr, cfg.grad_clip, true)?;
        let rec = LogRecord {
            phase: 1,
            iteration: state.iteration,
            lr,
            sr_l1: None,
            lr_side: Some(lr_side),
            hr_side: None,
            d1,
            d2: None,
            lr_weights: Some(w.lr()),
            hr_weights: None,
        };
        state.record(rec, hooks, cfg.log_interval, k + 1 == steps)?;
        state.iteration += 1;
        state.maybe_checkpoint(hooks, cfg.checkpoint_interval)?;
    }
    Ok(())
}

/// Phase 2: `steps` joint iterations for the state's structure, each
/// running the LR side then the HR side.
pub fn train_phase2(
    state: &mut TrainState,
    cfg: &RunConfig,
    nets: &Networks,
    split: &UnpairedSplit,
    steps: u64,
    hooks: &mut RunHooks<'_>,
) -> Result<()> {
    if state.phase != 2 || state.slot(NetId::Sr).is_none() {
        return Err(Error::InvalidArgument(
            "joint training needs a phase-2 state with a pretrained SR network".into(),
        ));
    }
    let opt = cfg.optim.phase2;
    let w = cfg.loss.phase2();
    if state.iteration == 0 {
        if let Some(log) = hooks.log.as_deref_mut() {
            log.phase_start(2, cfg, &opt, Some(&w))?;
        }
    }
    let s = state.structure;
    for k in 0..steps {
        let lr = lr_at(state.iteration, &opt);
        let batch = state.draw_batch(split, cfg.split.batch_size)?;
        let (lr_side, d1) = match s {
            Structure::Full | Structure::Structure2 => {
                let (b, d) = state.lr_side(nets, &batch, &w, &opt, lr, cfg.grad_clip, true)?;
                (Some(b), d)
            }
            Structure::Structure3 => {
                let (b, d) = state.lr_side(nets, &batch, &w, &opt, lr, cfg.grad_clip, false)?;
                (Some(b), d)
            }
            Structure::Structure1 => (None, None),
        };
        let (hr_side, d2) = state.hr_side(
            nets,
            &batch,
            &w,
            &opt,
            lr,
            cfg.grad_clip,
            s.uses_g1(),
            s != Structure::Structure2,
        )?;
        let rec = LogRecord {
            phase: 2,
            iteration: state.iteration,
            lr,
            sr_l1: None,
            lr_side,
            hr_side: Some(hr_side),
            d1,
            d2,
            lr_weights: lr_side.map(|_| w.lr()),
            hr_weights: Some(w.hr()),
        };
        state.record(rec, hooks, cfg.log_interval, k + 1 == steps)?;
        state.iteration += 1;
        state.maybe_checkpoint(hooks, cfg.checkpoint_interval)?;
    }
    Ok(())
}

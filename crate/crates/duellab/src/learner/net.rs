//! Policy/value network: a two-hidden-layer perceptron with batch
//! normalization, rectified-linear activations, and dropout, ending in a
//! masked-softmax policy head and a tanh value head.
//!
//! Everything is hand-rolled on flat `Vec<T>` storage: forward, analytic
//! backward (train mode differentiates through the batch statistics, eval
//! mode treats the running statistics as constants), and an Adam update.
//! No tensor library; the shapes here are small and the finite-difference
//! gradient check in the tests is the correctness anchor.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;

const BN_EPS: f64 = 1.0e-5;
const BN_MOMENTUM: f64 = 0.1;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1.0e-8;
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input width {found} does not match the network ({expected})")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("no legal action to put probability on")]
    AllIllegal,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint version {0} is not supported")]
    Version(u32),
}

/// Layer widths and the dropout rate (the only knob that differs between
/// the two agents).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input: usize,
    pub hidden: usize,
    pub actions: usize,
    pub dropout: f64,
}

impl NetConfig {
    pub fn new(input: usize, actions: usize, dropout: f64) -> Self {
        NetConfig {
            input,
            hidden: 256,
            actions,
            dropout,
        }
    }
}

/// Forward-pass mode. Train uses batch statistics, updates the running
/// statistics, and applies dropout; eval is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One training example: encoded state, search probabilities over the
/// action alphabet (zero on illegal entries), the legality mask that
/// produced them, and the binarized outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Example<T> {
    pub state: Vec<T>,
    pub pi: Vec<T>,
    pub legal: Vec<bool>,
    pub z: T,
}

/// Offsets of each parameter block inside the flat vector, in order:
/// (w1, b1, g1, be1, w2, b2, g2, be2, wp, bp, wv, bv).
#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    g1: usize,
    be1: usize,
    w2: usize,
    b2: usize,
    g2: usize,
    be2: usize,
    wp: usize,
    bp: usize,
    wv: usize,
    bv: usize,
    total: usize,
}

impl Offsets {
    fn of(cfg: &NetConfig) -> Self {
        let (i, h, a) = (cfg.input, cfg.hidden, cfg.actions);
        let w1 = 0;
        let b1 = w1 + i * h;
        let g1 = b1 + h;
        let be1 = g1 + h;
        let w2 = be1 + h;
        let b2 = w2 + h * h;
        let g2 = b2 + h;
        let be2 = g2 + h;
        let wp = be2 + h;
        let bp = wp + h * a;
        let wv = bp + a;
        let bv = wv + h;
        Offsets {
            w1,
            b1,
            g1,
            be1,
            w2,
            b2,
            g2,
            be2,
            wp,
            bp,
            wv,
            bv,
            total: bv + 1,
        }
    }
}

/// The network. Parameters live in one flat vector; running batch-norm
/// statistics in another (mu1, var1, mu2, var2). Adam moments persist with
/// the network so training can resume from a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyValueNet<T> {
    version: u32,
    cfg: NetConfig,
    params: Vec<T>,
    running: Vec<T>,
    adam_m: Vec<T>,
    adam_v: Vec<T>,
    adam_t: u64,
}

impl<T: Float> PolicyValueNet<T> {
    /// Symmetric uniform initialization scaled by fan-in, seeded. Batch-norm
    /// scales start at one, shifts at zero; running stats at (0, 1).
    pub fn new(cfg: NetConfig, seed: u64) -> Self {
        let mut net = Self::zeros(cfg);
        let off = Offsets::of(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, params: &mut [T]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
        };
        fill(off.w1..off.b1, cfg.input, &mut net.params);
        fill(off.b1..off.g1, cfg.input, &mut net.params);
        fill(off.w2..off.b2, cfg.hidden, &mut net.params);
        fill(off.b2..off.g2, cfg.hidden, &mut net.params);
        fill(off.wp..off.bp, cfg.hidden, &mut net.params);
        fill(off.bp..off.wv, cfg.hidden, &mut net.params);
        fill(off.wv..off.bv, cfg.hidden, &mut net.params);
        fill(off.bv..off.bv + 1, cfg.hidden, &mut net.params);
        for g in &mut net.params[off.g1..off.be1] {
            *g = T::one();
        }
        for g in &mut net.params[off.g2..off.be2] {
            *g = T::one();
        }
        net
    }

    /// All-zero parameters: uniform policy over legal actions and value 0.
    pub fn zeros(cfg: NetConfig) -> Self {
        let off = Offsets::of(&cfg);
        let mut running = vec![T::zero(); 4 * cfg.hidden];
        for v in running[cfg.hidden..2 * cfg.hidden].iter_mut() {
            *v = T::one();
        }
        for v in running[3 * cfg.hidden..].iter_mut() {
            *v = T::one();
        }
        PolicyValueNet {
            version: CHECKPOINT_VERSION,
            cfg,
            params: vec![T::zero(); off.total],
            running,
            adam_m: vec![T::zero(); off.total],
            adam_v: vec![T::zero(); off.total],
            adam_t: 0,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Deterministic (eval-mode) forward pass for one state: masked policy
    /// over the action alphabet and the value in (-1, 1).
    pub fn forward(&self, x: &[T], legal: &[bool]) -> Result<(Vec<T>, T), NetError> {
        if x.len() != self.cfg.input {
            return Err(NetError::ShapeMismatch {
                expected: self.cfg.input,
                found: x.len(),
            });
        }
        if legal.len() != self.cfg.actions {
            return Err(NetError::ShapeMismatch {
                expected: self.cfg.actions,
                found: legal.len(),
            });
        }
        if !legal.iter().any(|&l| l) {
            return Err(NetError::AllIllegal);
        }
        let cache = self.forward_batch(x, 1, Mode::Eval, None);
        let policy = masked_softmax(&cache.logits, legal);
        Ok((policy, cache.v[0]))
    }

    /// Value head only; usable on any state (no legality mask involved).
    pub fn value(&self, x: &[T]) -> Result<T, NetError> {
        if x.len() != self.cfg.input {
            return Err(NetError::ShapeMismatch {
                expected: self.cfg.input,
                found: x.len(),
            });
        }
        Ok(self.forward_batch(x, 1, Mode::Eval, None).v[0])
    }

    /// Mean loss over the batch at the current parameters, eval mode
    /// (running statistics, no dropout). The finite-difference anchor.
    pub fn eval_loss(&self, batch: &[&Example<T>]) -> Result<T, NetError> {
        let (loss, _, _) = self.loss_and_grad(batch, Mode::Eval, None)?;
        Ok(loss)
    }

    /// Analytic gradient of the mean batch loss in eval mode.
    pub fn eval_grad(&self, batch: &[&Example<T>]) -> Result<Vec<T>, NetError> {
        let (_, grad, _) = self.loss_and_grad(batch, Mode::Eval, None)?;
        Ok(grad)
    }

    /// One Adam step on a mini-batch (train mode): returns the loss at the
    /// pre-update parameters and refreshes the running statistics.
    pub fn train_step(
        &mut self,
        batch: &[&Example<T>],
        lr: T,
        rng: &mut ChaCha8Rng,
    ) -> Result<T, NetError> {
        let (loss, grad, stats) = self.loss_and_grad(batch, Mode::Train, Some(rng))?;
        let m = T::lit(BN_MOMENTUM);
        if let Some(stats) = stats {
            for (r, s) in self.running.iter_mut().zip(stats) {
                *r = (T::one() - m) * *r + m * s;
            }
        }
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let b1 = T::lit(ADAM_BETA1);
        let b2 = T::lit(ADAM_BETA2);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for i in 0..self.params.len() {
            let g = grad[i];
            self.adam_m[i] = b1 * self.adam_m[i] + (T::one() - b1) * g;
            self.adam_v[i] = b2 * self.adam_v[i] + (T::one() - b2) * g * g;
            let mhat = self.adam_m[i] / c1;
            let vhat = self.adam_v[i] / c2;
            self.params[i] -= lr * mhat / (vhat.sqrt() + T::lit(ADAM_EPS));
        }
        Ok(loss)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), NetError> {
        let file = File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, NetError> {
        let file = File::open(path)?;
        let net: Self = serde_json::from_reader(BufReader::new(file))?;
        if net.version != CHECKPOINT_VERSION {
            return Err(NetError::Version(net.version));
        }
        let off = Offsets::of(&net.cfg);
        if net.params.len() != off.total || net.running.len() != 4 * net.cfg.hidden {
            return Err(NetError::ShapeMismatch {
                expected: off.total,
                found: net.params.len(),
            });
        }
        Ok(net)
    }

    /// Forward through both hidden blocks for a row-major batch of
    /// `rows` inputs. Dropout masks come pre-scaled (inverted dropout).
    fn forward_batch(&self, x: &[T], rows: usize, mode: Mode, drop: Option<&Dropout<T>>) -> Cache<T> {
        let off = Offsets::of(&self.cfg);
        let h = self.cfg.hidden;
        let p = &self.params;

        let z1 = dense(x, rows, self.cfg.input, h, &p[off.w1..off.b1], &p[off.b1..off.g1]);
        let bn1 = self.batch_norm(&z1, rows, 0, mode);
        let mut h1 = bn1.y.clone();
        relu(&mut h1);
        if let Some(d) = drop {
            mul_mask(&mut h1, &d.mask1);
        }

        let z2 = dense(&h1, rows, h, h, &p[off.w2..off.b2], &p[off.b2..off.g2]);
        let bn2 = self.batch_norm(&z2, rows, 1, mode);
        let mut h2 = bn2.y.clone();
        relu(&mut h2);
        if let Some(d) = drop {
            mul_mask(&mut h2, &d.mask2);
        }

        let logits = dense(&h2, rows, h, self.cfg.actions, &p[off.wp..off.bp], &p[off.bp..off.wv]);
        let mut v = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut u = p[off.bv];
            for j in 0..h {
                u += p[off.wv + j] * h2[r * h + j];
            }
            v.push(u.tanh());
        }
        Cache {
            h1,
            h2,
            bn1,
            bn2,
            logits,
            v,
        }
    }

    /// Batch normalization of layer `layer` (0 or 1). Train mode normalizes
    /// with batch statistics (population variance) and reports them for the
    /// running update; eval mode uses the stored running statistics.
    fn batch_norm(&self, z: &[T], rows: usize, layer: usize, mode: Mode) -> BnCache<T> {
        let h = self.cfg.hidden;
        let off = Offsets::of(&self.cfg);
        let (g_at, b_at) = if layer == 0 {
            (off.g1, off.be1)
        } else {
            (off.g2, off.be2)
        };
        let run_at = 2 * layer * h;
        let eps = T::lit(BN_EPS);
        let n = T::from_usize(rows).expect("batch size fits in T");

        let (mean, var) = match mode {
            Mode::Eval => (
                self.running[run_at..run_at + h].to_vec(),
                self.running[run_at + h..run_at + 2 * h].to_vec(),
            ),
            Mode::Train => {
                let mut mean = vec![T::zero(); h];
                for r in 0..rows {
                    for j in 0..h {
                        mean[j] += z[r * h + j];
                    }
                }
                for m in &mut mean {
                    *m /= n;
                }
                let mut var = vec![T::zero(); h];
                for r in 0..rows {
                    for j in 0..h {
                        let d = z[r * h + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                for v in &mut var {
                    *v /= n;
                }
                (mean, var)
            }
        };

        let inv_sd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); rows * h];
        let mut y = vec![T::zero(); rows * h];
        for r in 0..rows {
            for j in 0..h {
                let xh = (z[r * h + j] - mean[j]) * inv_sd[j];
                xhat[r * h + j] = xh;
                y[r * h + j] = self.params[g_at + j] * xh + self.params[b_at + j];
            }
        }
        BnCache {
            xhat,
            y,
            inv_sd,
            mean,
            var,
        }
    }

    /// Mean batch loss, its gradient, and (train mode) the batch statistics
    /// for the running update, concatenated (mu1, var1, mu2, var2).
    #[allow(clippy::type_complexity)]
    fn loss_and_grad(
        &self,
        batch: &[&Example<T>],
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(T, Vec<T>, Option<Vec<T>>), NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyTrainingSet);
        }
        let cfg = &self.cfg;
        let rows = batch.len();
        let h = cfg.hidden;
        for ex in batch {
            if ex.state.len() != cfg.input {
                return Err(NetError::ShapeMismatch {
                    expected: cfg.input,
                    found: ex.state.len(),
                });
            }
            if ex.pi.len() != cfg.actions || ex.legal.len() != cfg.actions {
                return Err(NetError::ShapeMismatch {
                    expected: cfg.actions,
                    found: ex.pi.len(),
                });
            }
            if !ex.legal.iter().any(|&l| l) {
                return Err(NetError::AllIllegal);
            }
        }
        let mut x = Vec::with_capacity(rows * cfg.input);
        for ex in batch {
            x.extend_from_slice(&ex.state);
        }

        let drop = match (mode, rng) {
            (Mode::Train, Some(rng)) if cfg.dropout > 0.0 => Some(Dropout::sample(
                rows * h,
                cfg.dropout,
                rng,
            )),
            _ => None,
        };
        let cache = self.forward_batch(&x, rows, mode, drop.as_ref());

        // Loss and head gradients.
        let nb = T::from_usize(rows).expect("batch size fits in T");
        let mut loss = T::zero();
        let mut dlogits = vec![T::zero(); rows * cfg.actions];
        let mut dv = vec![T::zero(); rows];
        for (r, ex) in batch.iter().enumerate() {
            let row = &cache.logits[r * cfg.actions..(r + 1) * cfg.actions];
            let p = masked_softmax(row, &ex.legal);
            let mut pi_sum = T::zero();
            for a in 0..cfg.actions {
                if ex.legal[a] && ex.pi[a] > T::zero() {
                    loss -= ex.pi[a] * p[a].max(T::lit(1e-30)).ln() / nb;
                }
                if ex.legal[a] {
                    pi_sum += ex.pi[a];
                }
            }
            for a in 0..cfg.actions {
                if ex.legal[a] {
                    dlogits[r * cfg.actions + a] = (p[a] * pi_sum - ex.pi[a]) / nb;
                }
            }
            let v = cache.v[r];
            loss += (ex.z - v) * (ex.z - v) / nb;
            dv[r] = T::lit(2.0) * (v - ex.z) * (T::one() - v * v) / nb;
        }
        if !loss.is_finite() {
            return Err(NetError::NonFiniteLoss { step: 0 });
        }

        // Backward.
        let off = Offsets::of(cfg);
        let p = &self.params;
        let mut grad = vec![T::zero(); off.total];

        // Policy / value heads into dh2.
        let mut dh2 = vec![T::zero(); rows * h];
        for r in 0..rows {
            for a in 0..cfg.actions {
                let d = dlogits[r * cfg.actions + a];
                if d == T::zero() {
                    continue;
                }
                grad[off.bp + a] += d;
                for j in 0..h {
                    grad[off.wp + j * cfg.actions + a] += d * cache.h2[r * h + j];
                    dh2[r * h + j] += d * p[off.wp + j * cfg.actions + a];
                }
            }
            // dv is already dL/du (the tanh factor is folded in above).
            let du = dv[r];
            grad[off.bv] += du;
            for j in 0..h {
                grad[off.wv + j] += du * cache.h2[r * h + j];
                dh2[r * h + j] += du * p[off.wv + j];
            }
        }

        // Block 2 backward: dropout -> relu -> bn -> dense.
        if let Some(d) = &drop {
            mul_mask(&mut dh2, &d.mask2);
        }
        relu_backward(&mut dh2, &cache.bn2.y);
        let (dz2, dg2, dbe2) = self.bn_backward(&dh2, &cache.bn2, rows, off.g2, mode);
        grad[off.g2..off.be2].copy_from_slice(&dg2);
        grad[off.be2..off.wp].copy_from_slice(&dbe2);
        let mut dh1 = vec![T::zero(); rows * h];
        let (dw2, db2) = grad[off.w2..off.g2].split_at_mut(off.b2 - off.w2);
        dense_backward(
            &dz2,
            &cache.h1,
            rows,
            h,
            h,
            &p[off.w2..off.b2],
            dw2,
            db2,
            Some(&mut dh1),
        );

        // Block 1 backward.
        if let Some(d) = &drop {
            mul_mask(&mut dh1, &d.mask1);
        }
        relu_backward(&mut dh1, &cache.bn1.y);
        let (dz1, dg1, dbe1) = self.bn_backward(&dh1, &cache.bn1, rows, off.g1, mode);
        grad[off.g1..off.be1].copy_from_slice(&dg1);
        grad[off.be1..off.w2].copy_from_slice(&dbe1);
        let (dw1, db1) = grad[off.w1..off.g1].split_at_mut(off.b1 - off.w1);
        dense_backward(
            &dz1,
            &x,
            rows,
            cfg.input,
            h,
            &p[off.w1..off.b1],
            dw1,
            db1,
            None,
        );

        let stats = match mode {
            Mode::Train => {
                let mut s = Vec::with_capacity(4 * h);
                s.extend_from_slice(&cache.bn1.mean);
                s.extend_from_slice(&cache.bn1.var);
                s.extend_from_slice(&cache.bn2.mean);
                s.extend_from_slice(&cache.bn2.var);
                Some(s)
            }
            Mode::Eval => None,
        };
        Ok((loss, grad, stats))
    }

    /// Gradient through batch normalization. Eval mode treats the running
    /// statistics as constants; train mode propagates through the batch
    /// mean and variance.
    fn bn_backward(
        &self,
        dy: &[T],
        bn: &BnCache<T>,
        rows: usize,
        g_at: usize,
        mode: Mode,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let h = self.cfg.hidden;
        let n = T::from_usize(rows).expect("batch size fits in T");
        let mut dg = vec![T::zero(); h];
        let mut dbe = vec![T::zero(); h];
        for r in 0..rows {
            for j in 0..h {
                dg[j] += dy[r * h + j] * bn.xhat[r * h + j];
                dbe[j] += dy[r * h + j];
            }
        }
        let mut dx = vec![T::zero(); rows * h];
        match mode {
            Mode::Eval => {
                for r in 0..rows {
                    for j in 0..h {
                        dx[r * h + j] = dy[r * h + j] * self.params[g_at + j] * bn.inv_sd[j];
                    }
                }
            }
            Mode::Train => {
                // Per unit: dx = g * inv_sd * (dy - mean(dy) - xhat * mean(dy * xhat)).
                let mut mean_dy = vec![T::zero(); h];
                let mut mean_dy_xhat = vec![T::zero(); h];
                for r in 0..rows {
                    for j in 0..h {
                        mean_dy[j] += dy[r * h + j];
                        mean_dy_xhat[j] += dy[r * h + j] * bn.xhat[r * h + j];
                    }
                }
                for j in 0..h {
                    mean_dy[j] /= n;
                    mean_dy_xhat[j] /= n;
                }
                for r in 0..rows {
                    for j in 0..h {
                        dx[r * h + j] = self.params[g_at + j]
                            * bn.inv_sd[j]
                            * (dy[r * h + j] - mean_dy[j] - bn.xhat[r * h + j] * mean_dy_xhat[j]);
                    }
                }
            }
        }
        (dx, dg, dbe)
    }
}

struct Cache<T> {
    h1: Vec<T>,
    h2: Vec<T>,
    bn1: BnCache<T>,
    bn2: BnCache<T>,
    logits: Vec<T>,
    v: Vec<T>,
}

struct BnCache<T> {
    xhat: Vec<T>,
    y: Vec<T>,
    inv_sd: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
}

/// Pre-scaled inverted-dropout masks for both hidden layers.
struct Dropout<T> {
    mask1: Vec<T>,
    mask2: Vec<T>,
}

impl<T: Float> Dropout<T> {
    fn sample(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Self {
        let keep = 1.0 - rate;
        let mut draw = |_: usize| {
            if rng.random::<f64>() < keep {
                T::lit(1.0 / keep)
            } else {
                T::zero()
            }
        };
        Dropout {
            mask1: (0..len).map(&mut draw).collect(),
            mask2: (0..len).map(&mut draw).collect(),
        }
    }
}

/// `y = x W + b` for a row-major batch; W is `(in, out)`.
fn dense<T: Float>(x: &[T], rows: usize, n_in: usize, n_out: usize, w: &[T], b: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); rows * n_out];
    for r in 0..rows {
        let row = &x[r * n_in..(r + 1) * n_in];
        let out = &mut y[r * n_out..(r + 1) * n_out];
        out.copy_from_slice(b);
        for (i, &xi) in row.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let wrow = &w[i * n_out..(i + 1) * n_out];
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
    y
}

/// Accumulate dW, db and (optionally) dx for `y = x W + b`.
#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Float>(
    dy: &[T],
    x: &[T],
    rows: usize,
    n_in: usize,
    n_out: usize,
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut Vec<T>>,
) {
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (o, &d) in dyr.iter().enumerate() {
            db[o] += d;
        }
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
            for (g, &d) in dwrow.iter_mut().zip(dyr) {
                *g += xi * d;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            let dxr = &mut dx[r * n_in..(r + 1) * n_in];
            for (i, slot) in dxr.iter_mut().enumerate() {
                let wrow = &w[i * n_out..(i + 1) * n_out];
                let mut s = T::zero();
                for (&wv, &d) in wrow.iter().zip(dyr) {
                    s += wv * d;
                }
                *slot += s;
            }
        }
    }
}

fn relu<T: Float>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// In-place `d *= (pre-activation > 0)`, where `pre` is the ReLU input.
fn relu_backward<T: Float>(d: &mut [T], pre: &[T]) {
    for (g, &y) in d.iter_mut().zip(pre) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

fn mul_mask<T: Float>(x: &mut [T], mask: &[T]) {
    for (v, &m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
}

/// Softmax over the legal entries only; illegal entries get exactly zero.
fn masked_softmax<T: Float>(logits: &[T], legal: &[bool]) -> Vec<T> {
    let mut mx = T::neg_infinity();
    for (l, &ok) in logits.iter().zip(legal) {
        if ok && *l > mx {
            mx = *l;
        }
    }
    let mut out = vec![T::zero(); logits.len()];
    let mut sum = T::zero();
    for (i, (&l, &ok)) in logits.iter().zip(legal).enumerate() {
        if ok {
            let e = (l - mx).exp();
            out[i] = e;
            sum += e;
        }
    }
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Optimizer and schedule knobs for one training call.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainHyper<T> {
    pub lr: T,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl<T: Float> Default for TrainHyper<T> {
    fn default() -> Self {
        TrainHyper {
            lr: T::lit(1.0e-3),
            batch_size: 64,
            epochs: 10,
            seed: 0,
        }
    }
}

/// Train on the example set: seeded shuffle each epoch, mini-batches, one
/// Adam step per batch. Returns the mean loss per epoch.
pub fn net_train<T: Float>(
    net: &mut PolicyValueNet<T>,
    examples: &[Example<T>],
    hyper: &TrainHyper<T>,
) -> Result<Vec<T>, NetError> {
    if examples.is_empty() {
        return Err(NetError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::with_capacity(hyper.epochs);
    let mut step = 0;
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        let mut batches = 0;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &examples[i]).collect();
            step += 1;
            let loss = net
                .train_step(&batch, hyper.lr, &mut rng)
                .map_err(|e| match e {
                    NetError::NonFiniteLoss { .. } => NetError::NonFiniteLoss { step },
                    other => other,
                })?;
            epoch_loss += loss;
            batches += 1;
        }
        losses.push(epoch_loss / T::from_usize(batches).expect("batch count fits in T"));
    }
    Ok(losses)
}

//! Progressive training: one forward of the analysis transform per image,
//! one synthesis pass per stage, a single backward over the weighted stage
//! losses, one Adam step per batch, and EMA codebook updates from the stage
//! assignments. Dead codewords are reseeded once per epoch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::metrics;
use crate::rvq::{kmeans_init, RvqStack};
use crate::tensor::{Tape, Tensor, Tracked};

use super::loss::{commitment_loss, lambda_weights, progressive_loss};
use super::pipeline::pad_to_multiple;
use super::{Model, ModelError, ModelResult};

/// Cap on latent vectors fed to k-means, to bound initialization cost.
const KMEANS_SAMPLE_CAP: usize = 8192;

#[derive(Clone, Copy, Debug)]
pub struct TrainerOptions {
    /// EMA decay for codebook counts and sums.
    pub ema_decay: f32,
    /// Commitment coefficient beta.
    pub commit_beta: f32,
    /// Weight of the codebook loss inside the progressive objective.
    pub lambda_cb: f32,
    /// Dead-codeword threshold as a fraction of the mean EMA count,
    /// checked once per epoch.
    pub reseed_fraction: f32,
    pub adam_eps: f32,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        TrainerOptions {
            ema_decay: 0.99,
            commit_beta: 0.25,
            lambda_cb: 1.0,
            reseed_fraction: 1e-3,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageTrainMetrics {
    pub stage: usize,
    pub l1: f64,
    pub mse: f64,
    pub usage: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub steps: usize,
    pub stages: Vec<StageTrainMetrics>,
    pub reseeded: Vec<usize>,
}

/// Initialize the codebook stack by k-means on actual residuals: stage 1 on
/// latent vectors from the (untrained) analysis transform, stage 2 on what
/// stage 1 leaves, and so on.
pub fn init_stack_kmeans(
    model: &Model,
    images: &[Tensor],
    rng: &mut ChaCha20Rng,
) -> ModelResult<RvqStack> {
    if images.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let cfg = &model.config;
    let d = cfg.c2 as usize;
    let k = cfg.codebook_size();

    let mut samples: Vec<f32> = Vec::new();
    for img in images {
        let (padded, _) = pad_to_multiple(img, cfg.total_downsample as usize)?;
        let mut tape = Tape::new();
        let xt = tape.constant(padded);
        let y = model.analysis_forward(&mut tape, xt)?;
        let yv = tape.value(y);
        let (_, h, w) = yv.dims3("kmeans latent")?;
        let positions = h * w;
        let data = yv.data();
        for p in 0..positions {
            for c in 0..d {
                samples.push(data[c * positions + p]);
            }
        }
    }
    let rows = samples.len() / d;
    if rows > KMEANS_SAMPLE_CAP {
        // Deterministic stride subsample keeps image diversity.
        let stride = rows.div_ceil(KMEANS_SAMPLE_CAP);
        let mut kept = Vec::with_capacity(KMEANS_SAMPLE_CAP * d);
        for r in (0..rows).step_by(stride) {
            kept.extend_from_slice(&samples[r * d..(r + 1) * d]);
        }
        samples = kept;
    }

    let mut books = Vec::with_capacity(cfg.n_stages as usize);
    let mut residuals = samples;
    for _ in 0..cfg.n_stages {
        let cb = kmeans_init(&residuals, d, k, rng)?;
        let rows = residuals.len() / d;
        for r in 0..rows {
            let row = &mut residuals[r * d..(r + 1) * d];
            let (_, cw) = cb.nearest(row)?;
            let cw = cw.to_vec();
            for i in 0..d {
                row[i] -= cw[i];
            }
        }
        books.push(cb);
    }
    Ok(RvqStack::new(books)?)
}

struct EpochAccum {
    loss: f64,
    items: usize,
    l1: Vec<f64>,
    mse: Vec<f64>,
    usage: Vec<Vec<u64>>,
}

pub struct Trainer {
    pub model: Model,
    pub stack: RvqStack,
    pub options: TrainerOptions,
    pub steps_done: usize,
    rng: ChaCha20Rng,
    lambda: Vec<f32>,
    /// Stage-input vectors from the most recent step, the sample pool for
    /// dead-codeword reseeding.
    last_stage_inputs: Vec<Vec<Vec<f32>>>,
}

impl Trainer {
    pub fn new(
        model: Model,
        stack: RvqStack,
        seed: u64,
        options: TrainerOptions,
    ) -> ModelResult<Self> {
        model.config.validate()?;
        let cfg = &model.config;
        if stack.stages() != cfg.n_stages as usize
            || stack.dim() != cfg.c2 as usize
            || stack.codebook_size() != cfg.codebook_size()
        {
            return Err(ModelError::BadConfig(
                "codebook stack does not match the model config".into(),
            ));
        }
        let lambda = lambda_weights(cfg.p_weight, cfg.n_stages as usize)?;
        Ok(Trainer {
            model,
            stack,
            options,
            steps_done: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            lambda,
            last_stage_inputs: Vec::new(),
        })
    }

    /// One pass of `len(dataset) / batch` steps (at least one), each on a
    /// batch of random crops with random horizontal flips, followed by the
    /// per-epoch dead-codeword check.
    pub fn train_epoch(&mut self, dataset: &[Tensor]) -> ModelResult<EpochMetrics> {
        if dataset.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let cfg = self.model.config;
        let n = cfg.n_stages as usize;
        let k = cfg.codebook_size();
        let batch_size = cfg.batch as usize;
        let steps = (dataset.len() / batch_size).max(1);
        let mut accum = EpochAccum {
            loss: 0.0,
            items: 0,
            l1: vec![0.0; n],
            mse: vec![0.0; n],
            usage: vec![vec![0u64; k]; n],
        };
        for _ in 0..steps {
            let batch: Vec<Tensor> = (0..batch_size)
                .map(|_| {
                    let img = &dataset[self.rng.random_range(0..dataset.len())];
                    self.crop_and_flip(img)
                })
                .collect::<ModelResult<_>>()?;
            self.step(&batch, &mut accum)?;
        }

        let reseeded = self.reseed_dead_codewords()?;
        let items = accum.items.max(1) as f64;
        let stages = (0..n)
            .map(|i| StageTrainMetrics {
                stage: i + 1,
                l1: accum.l1[i] / items,
                mse: accum.mse[i] / items,
                usage: std::mem::take(&mut accum.usage[i]),
            })
            .collect();
        Ok(EpochMetrics {
            mean_loss: accum.loss / steps as f64,
            steps,
            stages,
            reseeded,
        })
    }

    fn crop_and_flip(&mut self, img: &Tensor) -> ModelResult<Tensor> {
        let crop = self.model.config.crop as usize;
        let (c, h, w) = img.dims3("crop")?;
        if h < crop || w < crop {
            return Err(ModelError::BadConfig(format!(
                "dataset image {w}x{h} smaller than crop {crop}"
            )));
        }
        let oy = self.rng.random_range(0..=h - crop);
        let ox = self.rng.random_range(0..=w - crop);
        let flip = self.rng.random::<bool>();
        let src = img.data();
        let mut data = vec![0.0f32; c * crop * crop];
        for ci in 0..c {
            for y in 0..crop {
                for x in 0..crop {
                    let sx = if flip { ox + crop - 1 - x } else { ox + x };
                    data[ci * crop * crop + y * crop + x] =
                        src[ci * h * w + (oy + y) * w + sx];
                }
            }
        }
        Ok(Tensor::new(vec![c, crop, crop], data)?)
    }

    /// One batch: accumulate the progressive loss over all items on a single
    /// tape, one backward, one Adam step, then EMA codebook updates.
    fn step(&mut self, batch: &[Tensor], accum: &mut EpochAccum) -> ModelResult<()> {
        let cfg = self.model.config;
        let n = cfg.n_stages as usize;
        let opts = self.options;
        let mut tape = Tape::new();
        let mut total: Option<Tracked> = None;
        // (stage -> (codeword, quantized vector)) pairs for the EMA updates.
        let mut stage_pairs: Vec<Vec<(usize, Vec<f32>)>> = vec![Vec::new(); n];

        for img in batch {
            let xt = tape.constant(img.clone());
            let y = self.model.analysis_forward(&mut tape, xt)?;
            let y_val = tape.value(y).clone();
            let encoding = self.stack.encode(&y_val, n)?;
            let partials = self.stack.partial_reconstructions(&encoding.indices)?;
            let stage_inputs = self.stack.stage_inputs(&y_val, &encoding.indices)?;
            let d = cfg.c2 as usize;

            let mut recons = Vec::with_capacity(n);
            let mut cb_losses = Vec::with_capacity(n);
            for i in 0..n {
                let st = tape.straight_through(y, &partials[i])?;
                let xhat = self.model.synthesis_forward(&mut tape, st, i + 1)?;
                recons.push(xhat);
                cb_losses.push(commitment_loss(&mut tape, y, &partials[i], opts.commit_beta)?);

                accum.l1[i] += l1_value(img, tape.value(xhat)) as f64;
                accum.mse[i] += metrics::mse(img, tape.value(xhat));
                for (&idx, row) in encoding.indices[i]
                    .grid
                    .iter()
                    .zip(stage_inputs[i].chunks_exact(d))
                {
                    accum.usage[i][idx as usize] += 1;
                    stage_pairs[i].push((idx as usize, row.to_vec()));
                }
            }
            accum.items += 1;

            let item_loss =
                progressive_loss(&mut tape, xt, &recons, &cb_losses, &self.lambda, opts.lambda_cb)?;
            let scaled = tape.scale(item_loss, 1.0 / batch.len() as f32);
            total = Some(match total {
                None => scaled,
                Some(t) => tape.add(t, scaled)?,
            });
        }

        let total = total.expect("non-empty batch");
        let loss_value = tape.value(total).scalar_value();
        if !loss_value.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step: self.steps_done,
                value: loss_value,
            });
        }
        accum.loss += loss_value as f64;

        tape.backward(total)?;
        let (lr, b1, b2, eps) = (cfg.lr, cfg.beta1, cfg.beta2, opts.adam_eps);
        let mut failure: Option<ModelError> = None;
        self.model.visit_params_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            if let Some(g) = tape.grad_of_param(p) {
                if let Err(e) = p.adam_step(g, lr, b1, b2, eps) {
                    failure = Some(e.into());
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }

        let mut sample_pool: Vec<Vec<Vec<f32>>> = Vec::with_capacity(n);
        for (i, pairs) in stage_pairs.iter().enumerate() {
            let refs: Vec<(usize, &[f32])> =
                pairs.iter().map(|(j, v)| (*j, v.as_slice())).collect();
            self.stack
                .codebook_mut(i)
                .ema_update(&refs, opts.ema_decay)?;
            sample_pool.push(pairs.iter().map(|(_, v)| v.clone()).collect());
        }
        self.last_stage_inputs = sample_pool;
        self.steps_done += 1;
        Ok(())
    }

    fn reseed_dead_codewords(&mut self) -> ModelResult<Vec<usize>> {
        let n = self.stack.stages();
        let mut reseeded = vec![0usize; n];
        if self.last_stage_inputs.len() != n {
            return Ok(reseeded);
        }
        for i in 0..n {
            let samples = &self.last_stage_inputs[i];
            if samples.is_empty() {
                continue;
            }
            let cb = self.stack.codebook_mut(i);
            let mean: f32 = cb.ema_counts().iter().sum::<f32>() / cb.len() as f32;
            let threshold = self.options.reseed_fraction * mean;
            reseeded[i] = cb.reseed_dead(samples, threshold, &mut self.rng)?;
        }
        Ok(reseeded)
    }
}

fn l1_value(a: &Tensor, b: &Tensor) -> f32 {
    let mut acc = 0.0f32;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        acc += (x - y).abs();
    }
    acc / a.numel() as f32
}

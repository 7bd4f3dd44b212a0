//! Analysis and synthesis transforms.
//!
//! Block wiring: a depthwise block is pointwise-expand, ReLU, depthwise 3x3,
//! ReLU, pointwise-project with an input residual; an FFN is pointwise up to
//! 2rC, chunk2, an elementwise product of the halves, and pointwise back
//! down, again with an input residual. In the synthesis transform every
//! block branch passes through a stage-indexed per-channel scale and bias
//! immediately before its residual addition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::tensor::{Parameter, Tape, Tensor, TensorResult, Tracked};

use super::{ModelConfig, ModelError, ModelResult};

const DEPTHWISE_KERNEL: usize = 3;

fn uniform_init(rng: &mut ChaCha20Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::new(shape, data).expect("shape by construction")
}

/// 1x1 convolution layer.
#[derive(Clone, Debug)]
pub struct PointwiseConv {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl PointwiseConv {
    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut ChaCha20Rng) -> Self {
        PointwiseConv {
            weight: Parameter::new(
                format!("{name}.w"),
                uniform_init(rng, vec![c_out, c_in], c_in),
            ),
            bias: Parameter::new(format!("{name}.b"), Tensor::zeros(vec![c_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Tracked) -> TensorResult<Tracked> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.conv_pointwise(x, w, b)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Expand, ReLU, depthwise 3x3, ReLU, project, plus the input residual.
#[derive(Clone, Debug)]
pub struct DepthwiseBlock {
    pub expand: PointwiseConv,
    pub kernels: Parameter,
    pub dw_bias: Parameter,
    pub project: PointwiseConv,
}

impl DepthwiseBlock {
    pub fn new(name: &str, c: usize, rng: &mut ChaCha20Rng) -> Self {
        DepthwiseBlock {
            expand: PointwiseConv::new(&format!("{name}.expand"), c, c, rng),
            kernels: Parameter::new(
                format!("{name}.kernels"),
                uniform_init(
                    rng,
                    vec![c, DEPTHWISE_KERNEL, DEPTHWISE_KERNEL],
                    DEPTHWISE_KERNEL * DEPTHWISE_KERNEL,
                ),
            ),
            dw_bias: Parameter::new(format!("{name}.dw_bias"), Tensor::zeros(vec![c])),
            project: PointwiseConv::new(&format!("{name}.project"), c, c, rng),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Tracked,
        modulation: Option<(&Parameter, &Parameter)>,
    ) -> TensorResult<Tracked> {
        let t = self.expand.forward(tape, x)?;
        let t = tape.relu(t);
        let k = tape.param(&self.kernels);
        let b = tape.param(&self.dw_bias);
        let t = tape.conv_depthwise(t, k, b)?;
        let t = tape.relu(t);
        let mut t = self.project.forward(tape, t)?;
        if let Some((scale, bias)) = modulation {
            let s = tape.param(scale);
            let m = tape.param(bias);
            t = tape.channel_affine(t, s, m)?;
        }
        tape.add(t, x)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.expand.visit(f);
        f(&self.kernels);
        f(&self.dw_bias);
        self.project.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.expand.visit_mut(f);
        f(&mut self.kernels);
        f(&mut self.dw_bias);
        self.project.visit_mut(f);
    }
}

/// Pointwise up to 2rC, chunk2, gate by elementwise product, pointwise down,
/// plus the input residual.
#[derive(Clone, Debug)]
pub struct FfnBlock {
    pub up: PointwiseConv,
    pub down: PointwiseConv,
}

impl FfnBlock {
    pub fn new(name: &str, c: usize, expansion: usize, rng: &mut ChaCha20Rng) -> Self {
        FfnBlock {
            up: PointwiseConv::new(&format!("{name}.up"), c, 2 * expansion * c, rng),
            down: PointwiseConv::new(&format!("{name}.down"), expansion * c, c, rng),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Tracked,
        modulation: Option<(&Parameter, &Parameter)>,
    ) -> TensorResult<Tracked> {
        let t = self.up.forward(tape, x)?;
        let (a, b) = tape.chunk2(t)?;
        let t = tape.mul(a, b)?;
        let mut t = self.down.forward(tape, t)?;
        if let Some((scale, bias)) = modulation {
            let s = tape.param(scale);
            let m = tape.param(bias);
            t = tape.channel_affine(t, s, m)?;
        }
        tape.add(t, x)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.up.visit(f);
        self.down.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.up.visit_mut(f);
        self.down.visit_mut(f);
    }
}

/// One (scale, bias) pair per progressive stage for a modulated site.
#[derive(Clone, Debug)]
pub struct ModulationTable {
    pub stages: Vec<(Parameter, Parameter)>,
}

impl ModulationTable {
    pub fn new(name: &str, c: usize, n_stages: usize) -> Self {
        let stages = (1..=n_stages)
            .map(|s| {
                (
                    Parameter::new(
                        format!("{name}.stage{s}.scale"),
                        Tensor::filled(vec![c], 1.0),
                    ),
                    Parameter::new(format!("{name}.stage{s}.bias"), Tensor::zeros(vec![c])),
                )
            })
            .collect();
        ModulationTable { stages }
    }

    /// Scale/bias pair for a 1-based stage.
    pub fn pair(&self, stage: usize) -> (&Parameter, &Parameter) {
        let (s, b) = &self.stages[stage - 1];
        (s, b)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for (s, b) in &self.stages {
            f(s);
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for (s, b) in &mut self.stages {
            f(s);
            f(b);
        }
    }
}

/// Pixels to latents: unshuffle, trunk projection, block stack, 2x
/// downsample, latent projection.
#[derive(Clone, Debug)]
pub struct AnalysisTransform {
    pub head: PointwiseConv,
    pub blocks: Vec<(DepthwiseBlock, FfnBlock)>,
    pub down: PointwiseConv,
}

impl AnalysisTransform {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha20Rng) -> Self {
        let u = cfg.unshuffle_factor as usize;
        let c1 = cfg.c1 as usize;
        let blocks = (0..cfg.m_enc as usize)
            .map(|i| {
                (
                    DepthwiseBlock::new(&format!("ga.block{i}.dw"), c1, rng),
                    FfnBlock::new(
                        &format!("ga.block{i}.ffn"),
                        c1,
                        cfg.ffn_expansion as usize,
                        rng,
                    ),
                )
            })
            .collect();
        AnalysisTransform {
            head: PointwiseConv::new("ga.head", 3 * u * u, c1, rng),
            blocks,
            down: PointwiseConv::new("ga.down", 4 * c1, cfg.c2 as usize, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Tracked, cfg: &ModelConfig) -> ModelResult<Tracked> {
        let (_, h, w) = tape.value(x).dims3("analysis input")?;
        let f = cfg.total_downsample as usize;
        if h % f != 0 || w % f != 0 {
            return Err(ModelError::NeedsPadding {
                height: h,
                width: w,
                factor: f,
            });
        }
        let mut t = tape.pixel_unshuffle(x, cfg.unshuffle_factor as usize)?;
        t = self.head.forward(tape, t)?;
        for (dw, ffn) in &self.blocks {
            t = dw.forward(tape, t, None)?;
            t = ffn.forward(tape, t, None)?;
        }
        t = tape.pixel_unshuffle(t, 2)?;
        Ok(self.down.forward(tape, t)?)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.head.visit(f);
        for (dw, ffn) in &self.blocks {
            dw.visit(f);
            ffn.visit(f);
        }
        self.down.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.head.visit_mut(f);
        for (dw, ffn) in &mut self.blocks {
            dw.visit_mut(f);
            ffn.visit_mut(f);
        }
        self.down.visit_mut(f);
    }
}

/// One synthesis block pair with its modulation tables.
#[derive(Clone, Debug)]
pub struct SynthesisBlock {
    pub dw: DepthwiseBlock,
    pub dw_mod: ModulationTable,
    pub ffn: FfnBlock,
    pub ffn_mod: ModulationTable,
}

/// Latents to pixels: up-projection, 2x upsample, modulated block stack,
/// tail projection, unshuffle inverse, clamp to [0, 1].
#[derive(Clone, Debug)]
pub struct SynthesisTransform {
    pub up: PointwiseConv,
    pub blocks: Vec<SynthesisBlock>,
    pub tail: PointwiseConv,
}

impl SynthesisTransform {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha20Rng) -> Self {
        let u = cfg.unshuffle_factor as usize;
        let c1 = cfg.c1 as usize;
        let n = cfg.n_stages as usize;
        let blocks = (0..cfg.m_dec as usize)
            .map(|i| SynthesisBlock {
                dw: DepthwiseBlock::new(&format!("gs.block{i}.dw"), c1, rng),
                dw_mod: ModulationTable::new(&format!("gs.block{i}.dw.mod"), c1, n),
                ffn: FfnBlock::new(
                    &format!("gs.block{i}.ffn"),
                    c1,
                    cfg.ffn_expansion as usize,
                    rng,
                ),
                ffn_mod: ModulationTable::new(&format!("gs.block{i}.ffn.mod"), c1, n),
            })
            .collect();
        let mut tail = PointwiseConv::new("gs.tail", c1, 3 * u * u, rng);
        // Start reconstructions mid-range so the output clamp is not pinned
        // at zero on the first training steps.
        tail.bias.value.data_mut().fill(0.5);
        SynthesisTransform {
            up: PointwiseConv::new("gs.up", cfg.c2 as usize, 4 * c1, rng),
            blocks,
            tail,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        y: Tracked,
        stage: usize,
        cfg: &ModelConfig,
    ) -> ModelResult<Tracked> {
        let n = cfg.n_stages as usize;
        if stage == 0 || stage > n {
            return Err(ModelError::StageOutOfRange { stage, n });
        }
        let mut t = self.up.forward(tape, y)?;
        t = tape.pixel_shuffle(t, 2)?;
        for block in &self.blocks {
            t = block.dw.forward(tape, t, Some(block.dw_mod.pair(stage)))?;
            t = block.ffn.forward(tape, t, Some(block.ffn_mod.pair(stage)))?;
        }
        t = self.tail.forward(tape, t)?;
        t = tape.pixel_shuffle(t, cfg.unshuffle_factor as usize)?;
        Ok(tape.clamp01(t))
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.up.visit(f);
        for b in &self.blocks {
            b.dw.visit(f);
            b.dw_mod.visit(f);
            b.ffn.visit(f);
            b.ffn_mod.visit(f);
        }
        self.tail.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.up.visit_mut(f);
        for b in &mut self.blocks {
            b.dw.visit_mut(f);
            b.dw_mod.visit_mut(f);
            b.ffn.visit_mut(f);
            b.ffn_mod.visit_mut(f);
        }
        self.tail.visit_mut(f);
    }
}

/// The complete transform pair plus its configuration.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub analysis: AnalysisTransform,
    pub synthesis: SynthesisTransform,
}

impl Model {
    /// Deterministic seeded initialization.
    pub fn init(config: ModelConfig, seed: u64) -> ModelResult<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Ok(Model {
            analysis: AnalysisTransform::init(&config, &mut rng),
            synthesis: SynthesisTransform::init(&config, &mut rng),
            config,
        })
    }

    /// Analysis transform g_a: 3xHxW to c2 x H/f x W/f.
    pub fn analysis_forward(&self, tape: &mut Tape, x: Tracked) -> ModelResult<Tracked> {
        self.analysis.forward(tape, x, &self.config)
    }

    /// Synthesis transform g_s at a 1-based progressive stage.
    pub fn synthesis_forward(
        &self,
        tape: &mut Tape,
        y: Tracked,
        stage: usize,
    ) -> ModelResult<Tracked> {
        self.synthesis.forward(tape, y, stage, &self.config)
    }

    /// Walk all parameters in canonical (serialization) order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&Parameter)) {
        self.analysis.visit(f);
        self.synthesis.visit(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.analysis.visit_mut(f);
        self.synthesis.visit_mut(f);
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |p| count += p.value.numel());
        count
    }
}

#[cfg(test)]
pub(crate) fn tiny_test_config() -> ModelConfig {
    ModelConfig {
        c1: 8,
        c2: 4,
        m_enc: 1,
        m_dec: 1,
        n_stages: 3,
        l_bits: 4,
        ffn_expansion: 2,
        unshuffle_factor: 2,
        total_downsample: 4,
        p_weight: 0.5,
        lr: 1e-3,
        beta1: 0.5,
        beta2: 0.9,
        batch: 2,
        crop: 8,
    }
}

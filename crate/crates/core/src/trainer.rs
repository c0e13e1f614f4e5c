//! Two-stage optimization: reconstruction-only warm-up, then adversarial
//! training against the multi-scale discriminators.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioBuffer, MODEL_RATE};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::degrade::degrade_example;
use crate::discriminator::DiscriminatorEnsemble;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::losses::{adversarial_g_graph, discriminator_graph, MultiResLoss};
use crate::nn::{Adam, AdamState, Graph, ParamSet, Tensor};
use crate::stft::StftPlan;

/// Random stream for `(seed, stage, step, purpose)`.
pub fn step_rng(seed: u64, stage: u8, step: usize, stream: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage as u64) << 56) | ((step as u64) << 8) | stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: String,
    pub value: f64,
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "loss_name", "value"])?;
    for r in rows {
        w.write_record([r.step.to_string(), r.loss.clone(), format!("{:e}", r.value)])?;
    }
    w.flush()?;
    Ok(())
}

/// Training material; segments are drawn at uniform offsets with replacement.
#[derive(Debug, Clone)]
pub struct Corpus {
    clips: Vec<AudioBuffer>,
    segment_len: usize,
    /// Cumulative count of valid start offsets.
    offsets: Vec<usize>,
}

impl Corpus {
    pub fn new(clips: Vec<AudioBuffer>, segment_len: usize) -> Result<Self> {
        if segment_len == 0 {
            return Err(Error::arg("segment length must be positive"));
        }
        if let Some(c) = clips.iter().find(|c| c.sample_rate() != MODEL_RATE) {
            return Err(Error::Data(format!("clip at {} Hz; resample to {MODEL_RATE} Hz first", c.sample_rate())));
        }
        let clips: Vec<_> = clips.into_iter().filter(|c| c.len() >= segment_len).collect();
        if clips.is_empty() {
            return Err(Error::Data(format!("corpus holds no clip of at least {segment_len} samples")));
        }
        let mut total = 0;
        let offsets = clips
            .iter()
            .map(|c| {
                total += c.len() - segment_len + 1;
                total
            })
            .collect();
        Ok(Self {
            clips,
            segment_len,
            offsets,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AudioBuffer {
        let pick = rng.random_range(0..*self.offsets.last().unwrap());
        let i = self.offsets.partition_point(|&o| o <= pick);
        let start = pick - if i == 0 { 0 } else { self.offsets[i - 1] };
        self.clips[i].slice(start, self.segment_len).expect("offset within clip")
    }
}

/// Degraded inputs as generator planes plus the matching targets.
pub struct Batch {
    pub planes: Tensor,
    pub targets: Tensor,
}

pub fn make_batch<R: Rng + ?Sized>(corpus: &Corpus, cfg: &TrainConfig, plan: &StftPlan, rng: &mut R) -> Result<Batch> {
    let (cutoff, noise, gain) = (cfg.cutoff(), cfg.noise(), cfg.gain());
    let len = corpus.segment_len();
    let frames = plan.num_frames(len);
    let plane = plan.bins() * frames;
    let mut planes = Vec::with_capacity(cfg.batch_size * 2 * plane);
    let mut targets = Vec::with_capacity(cfg.batch_size * len);
    for _ in 0..cfg.batch_size {
        let y = corpus.sample(rng);
        let ex = degrade_example(&y, &cutoff, &noise, &gain, rng)?;
        let (re, im) = plan.analyze(ex.input.samples())?;
        planes.extend(re);
        planes.extend(im);
        targets.extend_from_slice(ex.target.samples());
    }
    Ok(Batch {
        planes: Tensor::new(vec![cfg.batch_size, 2, plan.bins(), frames], planes)?,
        targets: Tensor::new(vec![cfg.batch_size, len], targets)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Reconstruction,
    Adversarial,
}

impl Stage {
    fn code(self) -> u8 {
        match self {
            Stage::Reconstruction => 1,
            Stage::Adversarial => 2,
        }
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    corpus: Corpus,
    gen: Generator,
    disc: DiscriminatorEnsemble,
    opt_g: Adam,
    opt_d: Adam,
    stage: Stage,
    step: usize,
    d_updates: usize,
    trace: Vec<TraceRow>,
    plan: Arc<StftPlan>,
    loss: MultiResLoss,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, clips: Vec<AudioBuffer>) -> Result<Self> {
        cfg.validate()?;
        let gen = Generator::new(cfg.generator(), &mut step_rng(cfg.seed, 0, 0, 0))?;
        let disc = DiscriminatorEnsemble::new(cfg.discriminator(), &mut step_rng(cfg.seed, 0, 0, 1))?;
        Self::with_models(cfg, clips, gen, disc)
    }

    pub fn with_models(cfg: TrainConfig, clips: Vec<AudioBuffer>, gen: Generator, disc: DiscriminatorEnsemble) -> Result<Self> {
        cfg.validate()?;
        let corpus = Corpus::new(clips, cfg.segment_len())?;
        let loss = MultiResLoss::new(&cfg.loss_weights())?;
        Ok(Self {
            opt_g: Adam::new(cfg.stage1_lr, cfg.adam_beta1, cfg.adam_beta2),
            opt_d: Adam::new(cfg.stage2_d_lr, cfg.adam_beta1, cfg.adam_beta2),
            cfg,
            corpus,
            gen,
            disc,
            stage: Stage::Reconstruction,
            step: 0,
            d_updates: 0,
            trace: Vec::new(),
            plan: Arc::new(StftPlan::model()),
            loss,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn discriminators(&self) -> &DiscriminatorEnsemble {
        &self.disc
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Steps completed within the current stage.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn d_updates(&self) -> usize {
        self.d_updates
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn fingerprint(&self) -> String {
        format!("{};{}", self.cfg.generator().fingerprint(), self.cfg.discriminator().fingerprint())
    }

    fn global_step(&self) -> usize {
        match self.stage {
            Stage::Reconstruction => self.step,
            Stage::Adversarial => self.cfg.stage1_steps + self.step,
        }
    }

    fn record(&mut self, name: &str, value: f64) -> Result<()> {
        let step = self.global_step();
        if !value.is_finite() {
            return Err(Error::Divergence {
                step,
                what: format!("loss `{name}` is {value}"),
            });
        }
        self.trace.push(TraceRow {
            step,
            loss: name.to_string(),
            value,
        });
        Ok(())
    }

    fn check_params(&self) -> Result<()> {
        if !self.gen.params().all_finite() || !self.disc.params().all_finite() {
            return Err(Error::Divergence {
                step: self.global_step(),
                what: "non-finite parameter".into(),
            });
        }
        Ok(())
    }

    fn batch(&self, stream: u8) -> Result<Batch> {
        let mut rng = step_rng(self.cfg.seed, self.stage.code(), self.step, stream);
        make_batch(&self.corpus, &self.cfg, &self.plan, &mut rng)
    }

    /// One reconstruction-only generator update.
    pub fn stage1_step(&mut self) -> Result<f64> {
        let batch = self.batch(0)?;
        let targets = self.loss.target_magnitudes(&batch.targets)?;
        let mut g = Graph::new();
        let p = self.gen.params().bind(&mut g);
        let spec = self.gen.forward_graph(&mut g, &p, &batch.planes)?;
        let yhat = g.istft(spec, self.plan.clone(), self.corpus.segment_len())?;
        let rec = self.loss.loss(&mut g, yhat, &targets)?;
        let value = g.value(rec).item();
        self.record("rec", value)?;
        let mut grads = g.backward(rec);
        let gg = self.gen.params().collect_grads(&p, &mut grads);
        self.opt_g.step(self.gen.params_mut(), &gg)?;
        self.step += 1;
        if self.step % 10 == 0 {
            self.check_params()?;
        }
        Ok(value)
    }

    fn generate(&self, planes: &Tensor) -> Result<Tensor> {
        let spec = self.gen.forward_tensor(planes)?;
        let (b, bins, frames) = (spec.dim(0), spec.dim(2), spec.dim(3));
        let len = self.corpus.segment_len();
        let plane = bins * frames;
        let mut out = Vec::with_capacity(b * len);
        for bi in 0..b {
            let d = &spec.data()[2 * bi * plane..(2 * bi + 2) * plane];
            out.extend(self.plan.synthesize(&d[..plane], &d[plane..], frames, len)?);
        }
        Tensor::new(vec![b, len], out)
    }

    /// One adversarial step: `d_updates_per_g` discriminator updates on fresh
    /// batches, then one generator update.
    pub fn stage2_step(&mut self) -> Result<()> {
        for k in 0..self.cfg.d_updates_per_g {
            let batch = self.batch(1 + k as u8)?;
            let fake = self.generate(&batch.planes)?;
            let losses = discriminator_update(&mut self.disc, &mut self.opt_d, &batch.targets, &fake)?;
            self.d_updates += 1;
            for (i, l) in losses.iter().enumerate() {
                self.record(&format!("d{}", i + 1), *l)?;
            }
        }
        let batch = self.batch(0)?;
        let targets = self.loss.target_magnitudes(&batch.targets)?;
        let mut g = Graph::new();
        let p = self.gen.params().bind(&mut g);
        let dp = self.disc.params().bind_frozen(&mut g);
        let spec = self.gen.forward_graph(&mut g, &p, &batch.planes)?;
        let yhat = g.istft(spec, self.plan.clone(), self.corpus.segment_len())?;
        let maps = self.disc.forward_graph(&mut g, &dp, yhat)?;
        let adv = adversarial_g_graph(&mut g, &maps)?;
        let rec = self.loss.loss(&mut g, yhat, &targets)?;
        let weighted = g.scale(rec, self.cfg.alpha);
        let total = g.add(adv, weighted)?;
        let (va, vr, vt) = (g.value(adv).item(), g.value(rec).item(), g.value(total).item());
        self.record("adv", va)?;
        self.record("rec", vr)?;
        self.record("g_total", vt)?;
        let mut grads = g.backward(total);
        let gg = self.gen.params().collect_grads(&p, &mut grads);
        self.opt_g.step(self.gen.params_mut(), &gg)?;
        self.step += 1;
        if self.step % 10 == 0 {
            self.check_params()?;
        }
        Ok(())
    }

    /// Moves to the adversarial stage with fresh optimizer moments.
    pub fn begin_stage2(&mut self) {
        self.stage = Stage::Adversarial;
        self.step = 0;
        self.opt_g = Adam::new(self.cfg.stage2_g_lr, self.cfg.adam_beta1, self.cfg.adam_beta2);
        self.opt_d = Adam::new(self.cfg.stage2_d_lr, self.cfg.adam_beta1, self.cfg.adam_beta2);
    }

    /// Runs until `stage1_steps` reconstruction steps are complete.
    pub fn run_stage1(&mut self) -> Result<()> {
        self.run_stage1_until(self.cfg.stage1_steps)
    }

    pub fn run_stage1_until(&mut self, step: usize) -> Result<()> {
        while self.stage == Stage::Reconstruction && self.step < step.min(self.cfg.stage1_steps) {
            self.stage1_step()?;
        }
        Ok(())
    }

    /// Runs the adversarial stage to completion, starting it if necessary.
    pub fn run_stage2(&mut self) -> Result<()> {
        self.run_stage2_until(self.cfg.stage2_steps)
    }

    pub fn run_stage2_until(&mut self, step: usize) -> Result<()> {
        if self.stage == Stage::Reconstruction {
            self.begin_stage2();
        }
        while self.step < step.min(self.cfg.stage2_steps) {
            self.stage2_step()?;
        }
        Ok(())
    }

    /// Full schedule with periodic checkpoints in `output_dir`.
    pub fn run(&mut self) -> Result<()> {
        let dir = self.cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let every = self.cfg.checkpoint_every;
        while self.stage == Stage::Reconstruction && self.step < self.cfg.stage1_steps {
            let l = self.stage1_step()?;
            if self.step % every == 0 {
                info!("stage 1 step {} rec {l:.4}", self.step);
                self.save_checkpoint(dir.join("latest.ckpt"))?;
            }
        }
        if self.stage == Stage::Reconstruction {
            self.begin_stage2();
        }
        while self.step < self.cfg.stage2_steps {
            self.stage2_step()?;
            if self.step % every == 0 {
                info!("stage 2 step {}", self.step);
                self.save_checkpoint(dir.join("latest.ckpt"))?;
            }
        }
        self.save_checkpoint(dir.join("final.ckpt"))?;
        let trace = dir.join("trace.csv");
        let f = std::fs::File::create(&trace).map_err(|e| Error::io(&trace, e))?;
        write_trace_csv(f, &self.trace)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.fingerprint());
        let gen_json = serde_json::to_string(self.gen.config()).expect("plain data");
        let meta = [
            ("generator_config", gen_json),
            ("stage", self.stage.code().to_string()),
            ("step", self.step.to_string()),
            ("d_updates", self.d_updates.to_string()),
            ("seed", self.cfg.seed.to_string()),
            ("opt_g_t", self.opt_g.state().t.to_string()),
            ("opt_d_t", self.opt_d.state().t.to_string()),
        ];
        for (k, v) in meta {
            c.meta.insert(k.into(), v);
        }
        push_params(&mut c, "g/", self.gen.params());
        push_params(&mut c, "d/", self.disc.params());
        push_adam(&mut c, "opt_g/", self.opt_g.state());
        push_adam(&mut c, "opt_d/", self.opt_d.state());
        c
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Restores models, optimizer moments and counters from `path`.
    pub fn resume(cfg: TrainConfig, clips: Vec<AudioBuffer>, path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let mut t = Self::new(cfg, clips)?;
        ckpt.require_fingerprint(&t.fingerprint())?;
        t.gen.params_mut().load(ckpt.namespace("g/"))?;
        t.disc.params_mut().load(ckpt.namespace("d/"))?;
        let parse = |k: &str| -> Result<u64> {
            ckpt.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata `{k}` is not an integer")))
        };
        if parse("stage")? == 2 {
            t.begin_stage2();
        }
        t.step = parse("step")? as usize;
        t.d_updates = parse("d_updates")? as usize;
        t.opt_g.set_state(read_adam(&ckpt, "opt_g/", parse("opt_g_t")?)?);
        t.opt_d.set_state(read_adam(&ckpt, "opt_d/", parse("opt_d_t")?)?);
        Ok(t)
    }
}

fn push_params(c: &mut Checkpoint, prefix: &str, p: &ParamSet) {
    for (n, t) in p.named() {
        c.tensors.push((format!("{prefix}{n}"), t.clone()));
    }
}

fn push_adam(c: &mut Checkpoint, prefix: &str, s: &AdamState) {
    for (i, (m, v)) in s.m.iter().zip(&s.v).enumerate() {
        c.tensors.push((format!("{prefix}m/{i}"), Tensor::new(vec![m.len()], m.clone()).unwrap()));
        c.tensors.push((format!("{prefix}v/{i}"), Tensor::new(vec![v.len()], v.clone()).unwrap()));
    }
}

fn read_adam(c: &Checkpoint, prefix: &str, t: u64) -> Result<AdamState> {
    let mut s = AdamState {
        t,
        ..AdamState::default()
    };
    for (name, tensor) in c.namespace(prefix) {
        let data = tensor.into_data();
        if name.starts_with("m/") {
            s.m.push(data);
        } else if name.starts_with("v/") {
            s.v.push(data);
        } else {
            return Err(Error::Checkpoint(format!("unexpected optimizer entry `{name}`")));
        }
    }
    if s.m.len() != s.v.len() {
        return Err(Error::Checkpoint("optimizer moments are incomplete".into()));
    }
    Ok(s)
}

/// One discriminator update on real and generated batches `[b, len]`;
/// returns the per-scale losses before the update.
pub fn discriminator_update(
    disc: &mut DiscriminatorEnsemble,
    opt: &mut Adam,
    real: &Tensor,
    fake: &Tensor,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = disc.params().bind(&mut g);
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let rm = disc.forward_graph(&mut g, &p, r)?;
    let fm = disc.forward_graph(&mut g, &p, f)?;
    let mut values = Vec::with_capacity(rm.len());
    let mut total = None;
    for (a, b) in rm.into_iter().zip(fm) {
        let l = discriminator_graph(&mut g, a, b)?;
        values.push(g.value(l).item());
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let total = total.expect("three scales");
    let mut grads = g.backward(total);
    let gd = disc.params().collect_grads(&p, &mut grads);
    opt.step(disc.params_mut(), &gd)?;
    Ok(values)
}

/// Reconstruction stage on a fresh trainer; returns the generator and trace.
pub fn train_stage1(cfg: TrainConfig, clips: Vec<AudioBuffer>) -> Result<(Generator, Vec<TraceRow>)> {
    let mut t = Trainer::new(cfg, clips)?;
    t.run_stage1()?;
    Ok((t.gen, t.trace))
}

/// Loads the generator stored in a trainer checkpoint.
pub fn load_generator(path: impl AsRef<Path>) -> Result<Generator> {
    let ckpt = Checkpoint::load(path)?;
    let cfg: crate::generator::GeneratorConfig = serde_json::from_str(ckpt.meta("generator_config")?)
        .map_err(|e| Error::Checkpoint(format!("generator_config: {e}")))?;
    let expected = cfg.fingerprint();
    let stored = ckpt.fingerprint.split(';').next().unwrap_or_default();
    if stored != expected {
        return Err(Error::Checkpoint(format!(
            "fingerprint mismatch: checkpoint has `{stored}`, configuration expects `{expected}`"
        )));
    }
    let mut gen = Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    gen.params_mut().load(ckpt.namespace("g/"))?;
    Ok(gen)
}

/// Writes a generator-only checkpoint loadable by [`load_generator`].
pub fn save_generator(gen: &Generator, path: impl AsRef<Path>) -> Result<()> {
    let mut c = Checkpoint::new(gen.config().fingerprint());
    c.meta.insert(
        "generator_config".into(),
        serde_json::to_string(gen.config()).expect("plain data"),
    );
    push_params(&mut c, "g/", gen.params());
    c.save(path)
}

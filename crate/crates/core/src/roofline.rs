//! Stage times, phase latencies and per-config metrics from a roofline
//! model: within a stage compute, memory and network overlap, so a stage
//! takes as long as its slowest resource.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hardware::GpuSpec;
use crate::workload::{
    decode_stage_costs, kv_cache_bytes, param_count, prefill_stage_costs, resident_bytes,
    ModelSpec, Phase, PhaseWorkload, StageCost, StageKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Compute,
    Memory,
    Network,
}

impl Resource {
    pub const fn as_str(self) -> &'static str {
        match self {
            Resource::Compute => "compute",
            Resource::Memory => "memory",
            Resource::Network => "network",
        }
    }
}

impl std::fmt::Display for Resource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attainable fraction of each peak rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Efficiency {
    pub compute: f64,
    pub memory: f64,
    pub network: f64,
}

impl Default for Efficiency {
    fn default() -> Self {
        Efficiency {
            compute: 1.0,
            memory: 1.0,
            network: 1.0,
        }
    }
}

impl Efficiency {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("compute", self.compute),
            ("memory", self.memory),
            ("network", self.network),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(
                    format!("efficiency {f}"),
                    format!("must lie in (0, 1], got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// How stage times combine into a phase latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    /// Every stage, collectives included, runs after the previous one.
    Serial,
    /// Each all-reduce overlaps with the stage producing its input: the
    /// pair takes the max over resources of their summed times.
    #[default]
    Collectives,
    /// Perfect pipelining across the whole pass: the phase takes as long as
    /// its busiest resource.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RooflineOptions {
    pub eff: Efficiency,
    pub overlap: Overlap,
    /// Treat the network as infinitely fast.
    pub ignore_network: bool,
}

/// Time each resource would need on its own.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ResourceTimes {
    pub compute: f64,
    pub memory: f64,
    pub network: f64,
}

impl ResourceTimes {
    pub fn of(cost: &StageCost, gpu: &GpuSpec, opts: &RooflineOptions) -> ResourceTimes {
        ResourceTimes {
            compute: cost.flops / (gpu.tflops * 1e12 * opts.eff.compute),
            memory: cost.mem_bytes / (gpu.mem_bw_gbps * 1e9 * opts.eff.memory),
            network: if opts.ignore_network {
                0.0
            } else {
                cost.net_bytes / (gpu.net_bw_gbps * 1e9 * opts.eff.network)
            },
        }
    }

    pub fn max(&self) -> f64 {
        self.compute.max(self.memory).max(self.network)
    }

    /// Ties go to compute, then memory.
    pub fn bottleneck(&self) -> Resource {
        if self.compute >= self.memory && self.compute >= self.network {
            Resource::Compute
        } else if self.memory >= self.network {
            Resource::Memory
        } else {
            Resource::Network
        }
    }

    fn add(&mut self, other: &ResourceTimes) {
        self.compute += other.compute;
        self.memory += other.memory;
        self.network += other.network;
    }
}

/// Timing of one stage, or of a stage fused with the collective after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTiming {
    pub kind: StageKind,
    pub layer: Option<u32>,
    /// An all-reduce was folded into this stage.
    pub fused_collective: bool,
    pub times: ResourceTimes,
    pub time: f64,
    pub bottleneck: Resource,
}

impl StageTiming {
    pub fn label(&self) -> &'static str {
        match (self.kind, self.fused_collective) {
            (StageKind::AttnOutProj, true) => "attn_out_proj+allreduce",
            (StageKind::Mlp, true) => "mlp+allreduce",
            (_, true) => "fused+allreduce",
            (k, false) => k.label(),
        }
    }

    fn from_times(
        kind: StageKind,
        layer: Option<u32>,
        fused: bool,
        times: ResourceTimes,
    ) -> StageTiming {
        StageTiming {
            kind,
            layer,
            fused_collective: fused,
            times,
            time: times.max(),
            bottleneck: times.bottleneck(),
        }
    }
}

/// Roofline time of a single stage.
pub fn stage_time(cost: &StageCost, gpu: &GpuSpec, eff: &Efficiency) -> StageTiming {
    let opts = RooflineOptions {
        eff: *eff,
        ..Default::default()
    };
    StageTiming::from_times(
        cost.kind,
        cost.layer,
        false,
        ResourceTimes::of(cost, gpu, &opts),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseLatency {
    pub total: f64,
    pub stages: Vec<StageTiming>,
}

impl PhaseLatency {
    /// Resource binding the largest share of the phase time. For
    /// [`Overlap::Full`] this is the busiest resource overall.
    pub fn bottleneck(&self) -> Resource {
        let mut share = ResourceTimes::default();
        for s in &self.stages {
            match s.bottleneck {
                Resource::Compute => share.compute += s.time,
                Resource::Memory => share.memory += s.time,
                Resource::Network => share.network += s.time,
            }
        }
        share.bottleneck()
    }
}

/// Walks the stages, grouping collectives per `opts.overlap`, and hands
/// each timed group to `visit`. Returns the phase latency.
fn fold_phase(
    work: &PhaseWorkload,
    gpu: &GpuSpec,
    opts: &RooflineOptions,
    mut visit: impl FnMut(StageTiming),
) -> f64 {
    let mut busy = ResourceTimes::default();
    let mut total = 0.0;
    let mut pending: Option<(StageKind, Option<u32>, bool, ResourceTimes)> = None;
    let mut flush = |group: Option<(StageKind, Option<u32>, bool, ResourceTimes)>,
                     total: &mut f64| {
        if let Some((kind, layer, fused, times)) = group {
            let timing = StageTiming::from_times(kind, layer, fused, times);
            *total += timing.time;
            visit(timing);
        }
    };
    for cost in &work.stages {
        let times = ResourceTimes::of(cost, gpu, opts);
        busy.add(&times);
        let merge = opts.overlap != Overlap::Serial && cost.kind.is_collective();
        match (&mut pending, merge) {
            (Some((_, _, fused, acc)), true) => {
                acc.add(&times);
                *fused = true;
            }
            _ => {
                flush(pending.take(), &mut total);
                pending = Some((cost.kind, cost.layer, false, times));
            }
        }
    }
    flush(pending, &mut total);
    match opts.overlap {
        Overlap::Full => busy.max(),
        _ => total,
    }
}

pub fn phase_latency(work: &PhaseWorkload, gpu: &GpuSpec, opts: &RooflineOptions) -> PhaseLatency {
    let mut stages = Vec::with_capacity(work.stages.len());
    let total = fold_phase(work, gpu, opts, |t| stages.push(t));
    PhaseLatency { total, stages }
}

/// A candidate deployment of one model instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterConfig {
    pub gpu: GpuSpec,
    pub tp: u32,
    pub batch: u64,
    pub prompt_len: u64,
    pub decode_ctx: u64,
    pub options: RooflineOptions,
}

pub const DEFAULT_PROMPT_LEN: u64 = 1500;
pub const DEFAULT_DECODE_CTX: u64 = 1500;

impl ClusterConfig {
    pub fn new(gpu: GpuSpec, tp: u32, batch: u64) -> ClusterConfig {
        ClusterConfig {
            gpu,
            tp,
            batch,
            prompt_len: DEFAULT_PROMPT_LEN,
            decode_ctx: DEFAULT_DECODE_CTX,
            options: RooflineOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gpu.validate()?;
        if self.tp == 0 || self.tp > self.gpu.max_gpus {
            return Err(Error::invalid(
                "tp",
                format!(
                    "{} is outside 1..={} for '{}'",
                    self.tp, self.gpu.max_gpus, self.gpu.name
                ),
            ));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch", "must be >= 1"));
        }
        if self.prompt_len == 0 {
            return Err(Error::invalid("prompt_len", "must be >= 1"));
        }
        self.options.eff.validate()
    }

    /// SMs across the whole instance.
    pub fn total_sms(&self) -> f64 {
        f64::from(self.tp) * f64::from(self.gpu.sms)
    }

    /// Context the KV cache must hold.
    pub fn kv_context(&self) -> u64 {
        self.prompt_len.max(self.decode_ctx)
    }
}

/// Headline numbers for one config, without per-stage breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseMetrics {
    pub ttft: f64,
    pub tbt: f64,
    /// Prompt tokens per second.
    pub prefill_tput: f64,
    /// Generated tokens per second.
    pub decode_tput: f64,
    pub prefill_tput_per_sm: f64,
    pub decode_tput_per_sm: f64,
    pub fits_memory: bool,
    /// Weights plus KV cache per GPU.
    pub mem_per_gpu_bytes: f64,
    pub prefill_bottleneck: Resource,
    pub decode_bottleneck: Resource,
}

impl PhaseMetrics {
    pub fn latency(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Prefill => self.ttft,
            Phase::Decode => self.tbt,
        }
    }

    pub fn tput(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Prefill => self.prefill_tput,
            Phase::Decode => self.decode_tput,
        }
    }

    pub fn tput_per_sm(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Prefill => self.prefill_tput_per_sm,
            Phase::Decode => self.decode_tput_per_sm,
        }
    }

    pub fn bottleneck(&self, phase: Phase) -> Resource {
        match phase {
            Phase::Prefill => self.prefill_bottleneck,
            Phase::Decode => self.decode_bottleneck,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseResult {
    #[serde(flatten)]
    pub metrics: PhaseMetrics,
    pub prefill: PhaseLatency,
    pub decode: PhaseLatency,
}

impl PhaseResult {
    pub fn breakdown(&self, phase: Phase) -> &PhaseLatency {
        match phase {
            Phase::Prefill => &self.prefill,
            Phase::Decode => &self.decode,
        }
    }
}

fn workloads(model: &ModelSpec, cfg: &ClusterConfig) -> Result<(PhaseWorkload, PhaseWorkload)> {
    cfg.validate()?;
    let tp = u64::from(cfg.tp);
    Ok((
        prefill_stage_costs(model, cfg.batch, cfg.prompt_len, tp)?,
        decode_stage_costs(model, cfg.batch, cfg.decode_ctx, tp)?,
    ))
}

fn metrics(
    model: &ModelSpec,
    cfg: &ClusterConfig,
    (ttft, prefill_bottleneck): (f64, Resource),
    (tbt, decode_bottleneck): (f64, Resource),
) -> Result<PhaseMetrics> {
    let mem = resident_bytes(model, cfg.batch, cfg.kv_context(), u64::from(cfg.tp))?;
    let batch = cfg.batch as f64;
    let prefill_tput = batch * cfg.prompt_len as f64 / ttft;
    let decode_tput = batch / tbt;
    let sms = cfg.total_sms();
    Ok(PhaseMetrics {
        ttft,
        tbt,
        prefill_tput,
        decode_tput,
        prefill_tput_per_sm: prefill_tput / sms,
        decode_tput_per_sm: decode_tput / sms,
        fits_memory: mem <= cfg.gpu.mem_capacity_gb * 1e9,
        mem_per_gpu_bytes: mem,
        prefill_bottleneck,
        decode_bottleneck,
    })
}

/// Full evaluation with per-stage breakdowns of both phases.
pub fn evaluate_config(model: &ModelSpec, cfg: &ClusterConfig) -> Result<PhaseResult> {
    let (pw, dw) = workloads(model, cfg)?;
    let prefill = phase_latency(&pw, &cfg.gpu, &cfg.options);
    let decode = phase_latency(&dw, &cfg.gpu, &cfg.options);
    let m = metrics(
        model,
        cfg,
        (prefill.total, prefill.bottleneck()),
        (decode.total, decode.bottleneck()),
    )?;
    Ok(PhaseResult {
        metrics: m,
        prefill,
        decode,
    })
}

/// Same numbers as [`evaluate_config`] without keeping the breakdowns.
pub fn evaluate_metrics(model: &ModelSpec, cfg: &ClusterConfig) -> Result<PhaseMetrics> {
    let (pw, dw) = workloads(model, cfg)?;
    let summarize = |w: &PhaseWorkload| {
        let mut share = ResourceTimes::default();
        let total = fold_phase(w, &cfg.gpu, &cfg.options, |s| match s.bottleneck {
            Resource::Compute => share.compute += s.time,
            Resource::Memory => share.memory += s.time,
            Resource::Network => share.network += s.time,
        });
        (total, share.bottleneck())
    };
    metrics(model, cfg, summarize(&pw), summarize(&dw))
}

/// Largest batch whose weights and KV cache at `context_len` fit in one
/// GPU's memory, or `None` when the weights alone do not fit.
pub fn max_batch(
    model: &ModelSpec,
    gpu: &GpuSpec,
    tp: u32,
    context_len: u64,
) -> Result<Option<u64>> {
    let tp = u64::from(tp);
    let cap = gpu.mem_capacity_gb * 1e9;
    let fits = |b: u64| resident_bytes(model, b, context_len, tp).map(|m| m <= cap);
    if !fits(1)? {
        return Ok(None);
    }
    let weights = param_count(model) as f64 * model.bytes_per_param / tp as f64;
    let per_seq = kv_cache_bytes(model, 1, context_len, tp)?;
    if per_seq == 0.0 {
        return Ok(Some(u64::MAX));
    }
    // Float estimate, then nudge onto the exact boundary of `fits`.
    let mut b = (((cap - weights) / per_seq).floor() as u64).max(1);
    while b > 1 && !fits(b)? {
        b -= 1;
    }
    while fits(b + 1)? {
        b += 1;
    }
    Ok(Some(b))
}

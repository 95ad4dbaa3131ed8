//! Transformer architectures and their per-stage resource demands under
//! tensor parallelism.
//!
//! Every per-GPU demand is the single-GPU demand divided by `tp`. Weights
//! are sharded by heads and MLP columns; activations between sharded regions
//! are treated as sequence-parallel, and KV storage is spread evenly even
//! when `tp` exceeds the number of KV heads. This keeps a cluster of `k·t`
//! quarter-size GPUs exactly equivalent to `t` full-size ones apart from
//! the network.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MODEL_CONFIG: &str = include_str!("../configs/models.toml");

/// Allowed deviation between the computed parameter count and
/// `nominal_params`.
pub const NOMINAL_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlpKind {
    /// up, gate and down projections (SwiGLU).
    Gated,
    /// up and down projections.
    Plain,
}

impl MlpKind {
    pub fn matrices(self) -> u64 {
        match self {
            MlpKind::Gated => 3,
            MlpKind::Plain => 2,
        }
    }
}

fn default_bytes() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: u64,
    pub hidden: u64,
    pub heads: u64,
    pub kv_heads: u64,
    /// Defaults to `hidden / heads`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<u64>,
    pub ffn_dim: u64,
    pub vocab: u64,
    pub mlp_kind: MlpKind,
    /// Input embedding shared with the LM head.
    #[serde(default)]
    pub tied_embeddings: bool,
    #[serde(default = "default_bytes")]
    pub bytes_per_param: f64,
    /// Activation and KV-cache datatype width.
    #[serde(default = "default_bytes")]
    pub bytes_per_act: f64,
    /// Advertised size; when present the computed count must fall within 5%.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_params: Option<f64>,
}

impl ModelSpec {
    pub fn head_dim(&self) -> u64 {
        self.head_dim.unwrap_or(self.hidden / self.heads.max(1))
    }

    /// Copy with different weight and activation datatypes.
    pub fn with_dtype(&self, bytes_per_param: f64, bytes_per_act: f64) -> ModelSpec {
        ModelSpec {
            bytes_per_param,
            bytes_per_act,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("model '{}' {f}", self.name);
        if self.name.trim().is_empty() {
            return Err(Error::invalid("model.name", "must not be empty"));
        }
        for (f, v) in [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("kv_heads", self.kv_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab", self.vocab),
        ] {
            if v == 0 {
                return Err(Error::invalid(field(f), "must be >= 1"));
            }
        }
        if !self.heads.is_multiple_of(self.kv_heads) {
            return Err(Error::invalid(
                field("kv_heads"),
                format!(
                    "{} heads are not divisible by {} kv_heads",
                    self.heads, self.kv_heads
                ),
            ));
        }
        match self.head_dim {
            Some(0) => return Err(Error::invalid(field("head_dim"), "must be >= 1")),
            Some(_) => {}
            None if !self.hidden.is_multiple_of(self.heads) => {
                return Err(Error::invalid(
                    field("hidden"),
                    format!(
                        "{} is not divisible by {} heads; set head_dim explicitly",
                        self.hidden, self.heads
                    ),
                ))
            }
            None => {}
        }
        for (f, v) in [
            ("bytes_per_param", self.bytes_per_param),
            ("bytes_per_act", self.bytes_per_act),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field(f), format!("must be > 0, got {v}")));
            }
        }
        if let Some(nominal) = self.nominal_params {
            if !(nominal.is_finite() && nominal > 0.0) {
                return Err(Error::invalid(field("nominal_params"), "must be > 0"));
            }
            let count = param_count(self) as f64;
            let dev = (count - nominal).abs() / nominal;
            if dev > NOMINAL_TOLERANCE {
                return Err(Error::invalid(
                    field("nominal_params"),
                    format!(
                        "computed parameter count {count:.4e} is {:.1}% away from nominal {nominal:.4e}",
                        dev * 100.0
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModels {
    #[serde(default)]
    model: Vec<ModelSpec>,
}

fn parse_error(e: toml::de::Error) -> Error {
    Error::Parse {
        what: "model config",
        message: e.to_string(),
    }
}

/// Parses a single model written as top-level fields.
pub fn load_model_spec(config_text: &str) -> Result<ModelSpec> {
    let model: ModelSpec = toml::from_str(config_text).map_err(parse_error)?;
    model.validate()?;
    Ok(model)
}

/// Parses a `[[model]]` list.
pub fn load_models(config_text: &str) -> Result<Vec<ModelSpec>> {
    let raw: RawModels = toml::from_str(config_text).map_err(parse_error)?;
    let mut seen = HashSet::new();
    for m in &raw.model {
        m.validate()?;
        if !seen.insert(m.name.to_ascii_lowercase()) {
            return Err(Error::invalid(
                "model.name",
                format!("duplicate model '{}'", m.name),
            ));
        }
    }
    Ok(raw.model)
}

pub fn default_models() -> Vec<ModelSpec> {
    load_models(DEFAULT_MODEL_CONFIG).expect("shipped model config is valid")
}

pub fn find_model<'a>(models: &'a [ModelSpec], name: &str) -> Result<&'a ModelSpec> {
    models
        .iter()
        .find(|m| m.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Unknown {
            kind: "model",
            name: name.to_string(),
        })
}

/// Parameters in the input embedding table.
pub fn embedding_params(model: &ModelSpec) -> u64 {
    model.vocab * model.hidden
}

/// Bias-free count: QKV and output projections, the MLP, the input
/// embedding and (unless tied) a separate LM head.
pub fn param_count(model: &ModelSpec) -> u64 {
    let (h, hd) = (model.hidden, model.head_dim());
    let attn = 2 * h * model.heads * hd + 2 * h * model.kv_heads * hd;
    let mlp = model.mlp_kind.matrices() * h * model.ffn_dim;
    let heads_out = if model.tied_embeddings { 1 } else { 2 };
    model.layers * (attn + mlp) + heads_out * embedding_params(model)
}

fn check_tp(tp: u64) -> Result<f64> {
    if tp == 0 {
        return Err(Error::invalid("tp", "must be >= 1"));
    }
    Ok(tp as f64)
}

/// Ring all-reduce traffic injected by each of `tp` participants.
pub fn allreduce_bytes_per_gpu(elements: f64, bytes_per_elem: f64, tp: u64) -> Result<f64> {
    let n = check_tp(tp)?;
    Ok(2.0 * (n - 1.0) / n * elements * bytes_per_elem)
}

/// KV cache bytes held by each GPU for `batch` sequences of `context_len`
/// tokens.
pub fn kv_cache_bytes(model: &ModelSpec, batch: u64, context_len: u64, tp: u64) -> Result<f64> {
    let n = check_tp(tp)?;
    if batch == 0 {
        return Err(Error::invalid("batch", "must be >= 1"));
    }
    Ok(2.0
        * model.layers as f64
        * model.kv_heads as f64
        * model.head_dim() as f64
        * context_len as f64
        * batch as f64
        * model.bytes_per_act
        / n)
}

/// Weight plus KV bytes each GPU must hold for `batch` sequences.
pub fn resident_bytes(model: &ModelSpec, batch: u64, context_len: u64, tp: u64) -> Result<f64> {
    let weights = param_count(model) as f64 * model.bytes_per_param / check_tp(tp)?;
    Ok(weights + kv_cache_bytes(model, batch, context_len, tp)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    QkvProj,
    Attention,
    AttnOutProj,
    AllreduceAttn,
    Mlp,
    AllreduceMlp,
    LmHead,
}

impl StageKind {
    pub const fn label(self) -> &'static str {
        match self {
            StageKind::QkvProj => "qkv_proj",
            StageKind::Attention => "attention",
            StageKind::AttnOutProj => "attn_out_proj",
            StageKind::AllreduceAttn => "allreduce_attn",
            StageKind::Mlp => "mlp",
            StageKind::AllreduceMlp => "allreduce_mlp",
            StageKind::LmHead => "lm_head",
        }
    }

    pub const fn is_collective(self) -> bool {
        matches!(self, StageKind::AllreduceAttn | StageKind::AllreduceMlp)
    }
}

/// Resource demand of one stage on one GPU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageCost {
    pub kind: StageKind,
    /// `None` for the LM head.
    pub layer: Option<u32>,
    pub flops: f64,
    /// Total memory traffic, weights included.
    pub mem_bytes: f64,
    /// Portion of `mem_bytes` spent streaming weights.
    pub weight_bytes: f64,
    pub net_bytes: f64,
}

impl StageCost {
    pub fn label(&self) -> &'static str {
        self.kind.label()
    }

    pub fn zero(kind: StageKind) -> StageCost {
        StageCost {
            kind,
            layer: None,
            flops: 0.0,
            mem_bytes: 0.0,
            weight_bytes: 0.0,
            net_bytes: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Prefill, Phase::Decode];

    pub const fn as_str(self) -> &'static str {
        match self {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseWorkload {
    pub phase: Phase,
    pub stages: Vec<StageCost>,
    pub tokens_processed: u64,
}

impl PhaseWorkload {
    pub fn total_flops(&self) -> f64 {
        self.stages.iter().map(|s| s.flops).sum()
    }

    pub fn total_mem_bytes(&self) -> f64 {
        self.stages.iter().map(|s| s.mem_bytes).sum()
    }

    pub fn total_weight_bytes(&self) -> f64 {
        self.stages.iter().map(|s| s.weight_bytes).sum()
    }

    pub fn total_net_bytes(&self) -> f64 {
        self.stages.iter().map(|s| s.net_bytes).sum()
    }
}

/// Shape shared by both phases. `tokens` is the number of new tokens in the
/// forward pass; `kv_read` is the cached context length attended over
/// (0 for prefill, which attends causally within the prompt).
struct Pass {
    batch: f64,
    seq: f64,
    tokens: f64,
    kv_read: f64,
    tp: f64,
}

fn check_shape(model: &ModelSpec, batch: u64, seq: u64, tp: u64) -> Result<()> {
    check_tp(tp)?;
    if batch == 0 {
        return Err(Error::invalid("batch", "must be >= 1"));
    }
    if seq == 0 {
        return Err(Error::invalid("seq", "must be >= 1"));
    }
    if !model.heads.is_multiple_of(tp) {
        return Err(Error::invalid(
            "tp",
            format!(
                "{tp} does not divide the {} attention heads of '{}'",
                model.heads, model.name
            ),
        ));
    }
    Ok(())
}

fn build(model: &ModelSpec, phase: Phase, pass: Pass) -> Result<PhaseWorkload> {
    let h = model.hidden as f64;
    let nh = model.heads as f64;
    let kv = model.kv_heads as f64;
    let hd = model.head_dim() as f64;
    let ffn = model.ffn_dim as f64;
    let vocab = model.vocab as f64;
    let p = model.bytes_per_param;
    let a = model.bytes_per_act;
    let Pass {
        batch,
        seq,
        tokens: t,
        kv_read,
        tp,
    } = pass;

    let qkv_width = (nh + 2.0 * kv) * hd;
    let matmul = |kind, layer, rows: f64, inner: f64, cols: f64| {
        let weights = inner * cols * p / tp;
        StageCost {
            kind,
            layer,
            flops: 2.0 * rows * inner * cols / tp,
            mem_bytes: weights + rows * (inner + cols) * a / tp,
            weight_bytes: weights,
            net_bytes: 0.0,
        }
    };
    let allreduce = |kind, layer| -> Result<StageCost> {
        Ok(StageCost {
            net_bytes: allreduce_bytes_per_gpu(t * h, a, tp as u64)?,
            layer,
            ..StageCost::zero(kind)
        })
    };

    // Scores and weighted sum: two matmuls of 2·q·k·hd per head. Causal
    // prefill touches half of the seq × seq square.
    let attn_flops = if phase == Phase::Prefill {
        2.0 * batch * seq * seq * hd * nh / tp
    } else {
        4.0 * batch * kv_read * hd * nh / tp
    };
    // Reads q, k, v, appends the new k, v to the cache, reads the cached
    // context, writes o. No score matrix reaches memory.
    let kv_entry = 2.0 * kv * hd * a;
    let attn_mem =
        (t * qkv_width * a + t * kv_entry + batch * kv_read * kv_entry + t * nh * hd * a) / tp;

    let mut stages = Vec::with_capacity(model.layers as usize * 6 + 1);
    let layers = u32::try_from(model.layers)
        .map_err(|_| Error::invalid(format!("model '{}' layers", model.name), "too many layers"))?;
    for layer in (0..layers).map(Some) {
        stages.push(matmul(StageKind::QkvProj, layer, t, h, qkv_width));
        stages.push(StageCost {
            kind: StageKind::Attention,
            layer,
            flops: attn_flops,
            mem_bytes: attn_mem,
            weight_bytes: 0.0,
            net_bytes: 0.0,
        });
        stages.push(matmul(StageKind::AttnOutProj, layer, t, nh * hd, h));
        stages.push(allreduce(StageKind::AllreduceAttn, layer)?);

        let n = model.mlp_kind.matrices() as f64;
        let weights = n * h * ffn * p / tp;
        // Input, the intermediate written then read back by down, output.
        let acts = (2.0 * t * h + 2.0 * t * ffn) * a / tp;
        stages.push(StageCost {
            kind: StageKind::Mlp,
            layer,
            flops: 2.0 * n * t * h * ffn / tp,
            mem_bytes: weights + acts,
            weight_bytes: weights,
            net_bytes: 0.0,
        });
        stages.push(allreduce(StageKind::AllreduceMlp, layer)?);
    }
    stages.push(matmul(StageKind::LmHead, None, t, h, vocab));

    Ok(PhaseWorkload {
        phase,
        stages,
        tokens_processed: t as u64,
    })
}

/// One forward pass over `batch` prompts of `seq` tokens. Logits are
/// produced for every prompt position.
pub fn prefill_stage_costs(
    model: &ModelSpec,
    batch: u64,
    seq: u64,
    tp: u64,
) -> Result<PhaseWorkload> {
    check_shape(model, batch, seq, tp)?;
    let tokens = batch
        .checked_mul(seq)
        .ok_or_else(|| Error::invalid("batch", "batch × seq overflows"))?;
    build(
        model,
        Phase::Prefill,
        Pass {
            batch: batch as f64,
            seq: seq as f64,
            tokens: tokens as f64,
            kv_read: 0.0,
            tp: tp as f64,
        },
    )
}

/// One decode step for `batch` sequences attending over `context_len`
/// cached tokens.
pub fn decode_stage_costs(
    model: &ModelSpec,
    batch: u64,
    context_len: u64,
    tp: u64,
) -> Result<PhaseWorkload> {
    check_shape(model, batch, 1, tp)?;
    build(
        model,
        Phase::Decode,
        Pass {
            batch: batch as f64,
            seq: 1.0,
            tokens: batch as f64,
            kv_read: context_len as f64,
            tp: tp as f64,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(name: &str) -> ModelSpec {
        find_model(&default_models(), name).unwrap().clone()
    }

    fn fp16(name: &str) -> ModelSpec {
        model(name).with_dtype(2.0, 2.0)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn shipped_architectures() {
        let m = model("llama3-70b");
        assert_eq!(
            (m.layers, m.hidden, m.heads, m.kv_heads, m.ffn_dim, m.vocab),
            (80, 8192, 64, 8, 28672, 128256)
        );
        assert_eq!(m.head_dim(), 128);
        let g = model("gpt3-175b");
        assert_eq!(
            (g.layers, g.hidden, g.heads, g.kv_heads, g.ffn_dim, g.vocab),
            (96, 12288, 96, 96, 49152, 50257)
        );
        let l = model("llama3-405b");
        assert_eq!(
            (l.layers, l.hidden, l.heads, l.kv_heads, l.ffn_dim, l.vocab),
            (126, 16384, 128, 8, 53248, 128256)
        );
    }

    #[test]
    fn param_counts_near_nominal() {
        for (name, nominal) in [
            ("llama3-70b", 70e9),
            ("gpt3-175b", 175e9),
            ("llama3-405b", 405e9),
        ] {
            let count = param_count(&model(name)) as f64;
            assert!(rel(count, nominal) < 0.05, "{name}: {count:e}");
        }
        assert!(rel(param_count(&model("llama3-70b")) as f64, 70.6e9) < 0.05);
    }

    #[test]
    fn degenerate_layer_count() {
        let mut m = model("llama3-70b");
        m.layers = 0;
        m.nominal_params = None;
        assert_eq!(param_count(&m), 2 * 128256 * 8192);
        m.tied_embeddings = true;
        assert_eq!(param_count(&m), 128256 * 8192);
        let w = prefill_stage_costs(&m, 1, 4, 1).unwrap();
        assert_eq!(w.stages.len(), 1);
    }

    #[test]
    fn nominal_mismatch_rejected() {
        let mut m = model("llama3-70b");
        m.nominal_params = Some(100e9);
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("nominal_params"), "{err}");
    }

    #[test]
    fn single_model_document() {
        let text = r#"
            name = "tiny"
            layers = 2
            hidden = 64
            heads = 8
            kv_heads = 2
            ffn_dim = 256
            vocab = 1000
            mlp_kind = "gated"
        "#;
        let m = load_model_spec(text).unwrap();
        assert_eq!(
            (m.head_dim(), m.bytes_per_param, m.bytes_per_act),
            (8, 2.0, 2.0)
        );
        assert!(!m.tied_embeddings);

        let bad = text.replace("kv_heads = 2", "kv_heads = 3");
        assert!(load_model_spec(&bad)
            .unwrap_err()
            .to_string()
            .contains("kv_heads"));
        let typo = text.replace("mlp_kind = \"gated\"", "mlp_kind = \"swiglu\"");
        assert!(load_model_spec(&typo)
            .unwrap_err()
            .to_string()
            .contains("line"));
    }

    #[test]
    fn allreduce_examples() {
        assert_eq!(allreduce_bytes_per_gpu(12345.0, 2.0, 1).unwrap(), 0.0);
        let gib = (1u64 << 30) as f64;
        assert_eq!(
            allreduce_bytes_per_gpu((1u64 << 29) as f64, 2.0, 4).unwrap(),
            1.5 * gib
        );
        assert_eq!(allreduce_bytes_per_gpu(1000.0, 2.0, 2).unwrap(), 2000.0);
        assert!(allreduce_bytes_per_gpu(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn kv_cache_examples() {
        let m = fp16("llama3-70b");
        assert_eq!(kv_cache_bytes(&m, 1, 1500, 1).unwrap(), 491_520_000.0);
        assert_eq!(kv_cache_bytes(&m, 1, 1500, 8).unwrap(), 61_440_000.0);
        assert!(kv_cache_bytes(&m, 0, 1500, 1).is_err());
        assert!(kv_cache_bytes(&m, 1, 1500, 0).is_err());
    }

    /// 2·P·tokens plus the causal attention term, from the fields directly.
    fn prefill_flops_oracle(m: &ModelSpec, batch: f64, seq: f64) -> f64 {
        let (h, f, v, l) = (
            m.hidden as f64,
            m.ffn_dim as f64,
            m.vocab as f64,
            m.layers as f64,
        );
        let kv_width = (m.kv_heads * m.head_dim()) as f64;
        let mats = if m.mlp_kind == MlpKind::Gated {
            3.0
        } else {
            2.0
        };
        let per_layer = 2.0 * h * h + 2.0 * h * kv_width + mats * h * f;
        let embed = if m.tied_embeddings { 1.0 } else { 2.0 } * v * h;
        2.0 * (l * per_layer + embed) * batch * seq + 2.0 * l * seq * seq * h * batch
    }

    #[test]
    fn prefill_total_flops() {
        let m = fp16("llama3-70b");
        let w = prefill_stage_costs(&m, 1, 1500, 1).unwrap();
        assert!(
            rel(w.total_flops(), 2.147e14) < 0.02,
            "{:e}",
            w.total_flops()
        );
        assert!(rel(w.total_flops(), prefill_flops_oracle(&m, 1.0, 1500.0)) < 0.02);
        assert_eq!(w.tokens_processed, 1500);
        assert_eq!(w.stages.len(), 80 * 6 + 1);
    }

    #[test]
    fn stage_order() {
        let w = prefill_stage_costs(&model("llama3-70b"), 1, 16, 2).unwrap();
        let first: Vec<_> = w.stages[..6].iter().map(|s| s.label()).collect();
        assert_eq!(
            first,
            [
                "qkv_proj",
                "attention",
                "attn_out_proj",
                "allreduce_attn",
                "mlp",
                "allreduce_mlp"
            ]
        );
        assert_eq!(w.stages.last().unwrap().kind, StageKind::LmHead);
        for s in &w.stages {
            assert_eq!(s.net_bytes > 0.0, s.kind.is_collective(), "{s:?}");
        }
    }

    #[test]
    fn no_network_alone() {
        for m in default_models() {
            assert_eq!(
                prefill_stage_costs(&m, 2, 100, 1)
                    .unwrap()
                    .total_net_bytes(),
                0.0
            );
            assert_eq!(
                decode_stage_costs(&m, 2, 100, 1).unwrap().total_net_bytes(),
                0.0
            );
        }
    }

    #[test]
    fn flops_conserved_across_tp() {
        for m in default_models() {
            let base = prefill_stage_costs(&m, 2, 300, 1).unwrap().total_flops();
            for tp in [2, 4, 8] {
                let per_gpu = prefill_stage_costs(&m, 2, 300, tp).unwrap().total_flops();
                assert!(rel(per_gpu * tp as f64, base) < 1e-12, "{} tp {tp}", m.name);
            }
        }
    }

    #[test]
    fn decode_reads_all_streamed_weights() {
        let m = fp16("llama3-70b");
        let w = decode_stage_costs(&m, 1, 1500, 1).unwrap();
        let streamed = (param_count(&m) - embedding_params(&m)) as f64 * 2.0;
        assert_eq!(w.total_weight_bytes(), streamed);
        assert!(w.total_mem_bytes() >= streamed);
        assert!(streamed > 1.38e11 && streamed < 1.412e11);
    }

    #[test]
    fn decode_attention_linear_in_context() {
        let m = fp16("llama3-70b");
        let attn = |ctx| -> f64 {
            decode_stage_costs(&m, 1, ctx, 1)
                .unwrap()
                .stages
                .iter()
                .filter(|s| s.kind == StageKind::Attention)
                .map(|s| s.mem_bytes)
                .sum()
        };
        let delta = attn(3000) - attn(1500);
        assert!(rel(delta, kv_cache_bytes(&m, 1, 1500, 1).unwrap()) < 1e-12);
    }

    #[test]
    fn tp_must_divide_heads() {
        let m = model("llama3-70b");
        let err = prefill_stage_costs(&m, 1, 10, 3).unwrap_err().to_string();
        assert!(err.contains("tp"), "{err}");
        assert!(decode_stage_costs(&m, 1, 10, 128).is_err());
        assert!(decode_stage_costs(&m, 1, 10, 0).is_err());
        assert!(prefill_stage_costs(&m, 1, 0, 1).is_err());
        assert!(decode_stage_costs(&m, 0, 10, 1).is_err());
    }

    #[test]
    fn weights_exceed_lite_memory_at_fp16() {
        let m = fp16("llama3-405b");
        let per_gpu = param_count(&m) as f64 * 2.0 / 8.0;
        assert!(per_gpu > 100e9);
        assert!(resident_bytes(&m, 1, 1500, 8).unwrap() > per_gpu);
    }

    fn arb_case() -> impl Strategy<Value = (usize, u64, u64, u64, bool)> {
        (0usize..3, 1u64..64, 1u64..4096, 0u32..6, any::<bool>())
            .prop_map(|(m, b, s, tp_exp, prefill)| (m, b, s, 1 << tp_exp, prefill))
    }

    fn phase(m: &ModelSpec, b: u64, s: u64, tp: u64, prefill: bool) -> PhaseWorkload {
        if prefill {
            prefill_stage_costs(m, b, s, tp).unwrap()
        } else {
            decode_stage_costs(m, b, s, tp).unwrap()
        }
    }

    proptest! {
        #[test]
        fn demands_nonnegative_and_finite((mi, b, s, tp, prefill) in arb_case()) {
            let m = &default_models()[mi];
            for st in phase(m, b, s, tp, prefill).stages {
                for v in [st.flops, st.mem_bytes, st.weight_bytes, st.net_bytes] {
                    prop_assert!(v.is_finite() && v >= 0.0);
                }
                prop_assert!(st.weight_bytes <= st.mem_bytes);
            }
        }

        #[test]
        fn batch_doubling((mi, b, s, tp, prefill) in arb_case()) {
            let m = &default_models()[mi];
            let one = phase(m, b, s, tp, prefill);
            let two = phase(m, 2 * b, s, tp, prefill);
            for (x, y) in one.stages.iter().zip(&two.stages) {
                prop_assert_eq!(y.weight_bytes, x.weight_bytes);
                prop_assert_eq!(y.net_bytes, 2.0 * x.net_bytes);
                if x.kind == StageKind::Attention {
                    prop_assert_eq!(y.flops, 2.0 * x.flops);
                }
            }
            let kv1 = kv_cache_bytes(m, b, s, tp).unwrap();
            prop_assert_eq!(kv_cache_bytes(m, 2 * b, s, tp).unwrap(), 2.0 * kv1);
        }

        #[test]
        fn weights_shard_evenly((mi, b, s, tp, prefill) in arb_case()) {
            let m = &default_models()[mi];
            let whole = phase(m, b, s, 1, prefill);
            let part = phase(m, b, s, tp, prefill);
            for (x, y) in whole.stages.iter().zip(&part.stages) {
                prop_assert!((y.weight_bytes * tp as f64 - x.weight_bytes).abs() <= 1e-12 * x.weight_bytes);
            }
        }

        #[test]
        fn allreduce_monotone_bounded(elements in 0.0f64..1e12, bytes in 0.5f64..8.0, tp in 1u64..1024) {
            let here = allreduce_bytes_per_gpu(elements, bytes, tp).unwrap();
            let next = allreduce_bytes_per_gpu(elements, bytes, tp + 1).unwrap();
            prop_assert!(next >= here);
            prop_assert!(here <= 2.0 * elements * bytes);
        }
    }
}

//! GPU capability descriptions and the die economics behind splitting a
//! large package into several smaller single-die GPUs.
//!
//! Rates follow the config file's units: TFLOP/s for compute, GB and GB/s
//! (decimal) for memory and network. Conversion to base units happens in
//! the roofline module.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shipped GPU config: H100, five Lite variants and the default die.
pub const DEFAULT_GPU_CONFIG: &str = include_str!("../configs/gpus.toml");

/// One GPU type's compute, memory and network capabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSpec {
    pub name: String,
    /// Peak compute, TFLOP/s.
    pub tflops: f64,
    pub mem_capacity_gb: f64,
    pub mem_bw_gbps: f64,
    /// Per-GPU network injection bandwidth.
    pub net_bw_gbps: f64,
    pub sms: u32,
    /// Largest cluster size (tensor-parallel degree) allowed for this type.
    pub max_gpus: u32,
}

impl GpuSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invalid("gpu.name", "must not be empty"));
        }
        let positive = [
            ("tflops", self.tflops),
            ("mem_capacity_gb", self.mem_capacity_gb),
            ("mem_bw_gbps", self.mem_bw_gbps),
            ("net_bw_gbps", self.net_bw_gbps),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(
                    format!("gpu '{}' {field}", self.name),
                    format!("must be a finite value > 0, got {value}"),
                ));
            }
        }
        if self.sms == 0 {
            return Err(Error::invalid(
                format!("gpu '{}' sms", self.name),
                "must be >= 1",
            ));
        }
        if self.max_gpus == 0 {
            return Err(Error::invalid(
                format!("gpu '{}' max_gpus", self.name),
                "must be >= 1",
            ));
        }
        Ok(())
    }

    /// True when every numeric capability matches `other` exactly. Names are
    /// ignored.
    pub fn same_capabilities(&self, other: &GpuSpec) -> bool {
        self.tflops == other.tflops
            && self.mem_capacity_gb == other.mem_capacity_gb
            && self.mem_bw_gbps == other.mem_bw_gbps
            && self.net_bw_gbps == other.net_bw_gbps
            && self.sms == other.sms
            && self.max_gpus == other.max_gpus
    }
}

/// Inputs to the negative-binomial die yield model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DieSpec {
    #[serde(rename = "area_cm2")]
    pub area: f64,
    #[serde(rename = "defect_density_per_cm2")]
    pub defect_density: f64,
    pub cluster_alpha: f64,
}

impl Default for DieSpec {
    /// H100-class die (8.14 cm²) at 0.1 defects/cm² with clustering α = 10.
    fn default() -> Self {
        DieSpec {
            area: 8.14,
            defect_density: 0.1,
            cluster_alpha: 10.0,
        }
    }
}

impl DieSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.area.is_finite() && self.area >= 0.0) {
            return Err(Error::invalid(
                "die.area_cm2",
                format!("must be >= 0, got {}", self.area),
            ));
        }
        if !(self.defect_density.is_finite() && self.defect_density >= 0.0) {
            return Err(Error::invalid(
                "die.defect_density_per_cm2",
                format!("must be >= 0, got {}", self.defect_density),
            ));
        }
        if !(self.cluster_alpha.is_finite() && self.cluster_alpha > 0.0) {
            return Err(Error::invalid(
                "die.cluster_alpha",
                format!("must be > 0, got {}", self.cluster_alpha),
            ));
        }
        Ok(())
    }

    /// The same die shrunk to `1/split` of its area.
    pub fn split(&self, split: u32) -> Result<DieSpec> {
        let k = check_split(split)?;
        Ok(DieSpec {
            area: self.area / k,
            ..*self
        })
    }
}

/// Parsed contents of a GPU config file.
#[derive(Debug, Clone, PartialEq)]
pub struct GpuConfig {
    pub gpus: Vec<GpuSpec>,
    pub die: Option<DieSpec>,
}

impl GpuConfig {
    pub fn find(&self, name: &str) -> Result<&GpuSpec> {
        find_gpu(&self.gpus, name)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGpuConfig {
    #[serde(default)]
    gpu: Vec<GpuSpec>,
    die: Option<DieSpec>,
}

/// Parses a GPU config file (TOML, `[[gpu]]` tables plus an optional
/// `[die]` table) and validates every entry.
pub fn load_gpu_config(config_text: &str) -> Result<GpuConfig> {
    let raw: RawGpuConfig = toml::from_str(config_text).map_err(|e| Error::Parse {
        what: "gpu config",
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    for gpu in &raw.gpu {
        gpu.validate()?;
        if !seen.insert(gpu.name.to_ascii_lowercase()) {
            return Err(Error::invalid(
                "gpu.name",
                format!("duplicate GPU type '{}'", gpu.name),
            ));
        }
    }
    if let Some(die) = &raw.die {
        die.validate()?;
    }
    Ok(GpuConfig {
        gpus: raw.gpu,
        die: raw.die,
    })
}

pub fn load_gpu_specs(config_text: &str) -> Result<Vec<GpuSpec>> {
    load_gpu_config(config_text).map(|c| c.gpus)
}

pub fn default_gpu_config() -> GpuConfig {
    load_gpu_config(DEFAULT_GPU_CONFIG).expect("shipped GPU config is valid")
}

pub fn default_gpu_specs() -> Vec<GpuSpec> {
    default_gpu_config().gpus
}

/// Case-insensitive lookup by name.
pub fn find_gpu<'a>(gpus: &'a [GpuSpec], name: &str) -> Result<&'a GpuSpec> {
    gpus.iter()
        .find(|g| g.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Unknown {
            kind: "GPU type",
            name: name.to_string(),
        })
}

/// Per-field multipliers applied after the even split.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LiteOverrides {
    pub tflops: Option<f64>,
    pub mem_capacity: Option<f64>,
    pub mem_bw: Option<f64>,
    pub net_bw: Option<f64>,
}

impl LiteOverrides {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("tflops", self.tflops),
            ("mem_capacity", self.mem_capacity),
            ("mem_bw", self.mem_bw),
            ("net_bw", self.net_bw),
        ];
        for (field, value) in fields {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid(
                        format!("override {field}"),
                        format!("multiplier must be > 0, got {v}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Splits `base` into `split_factor` equal single-die GPUs.
///
/// Every rate and the memory capacity are divided by `k`, the SM count is
/// divided exactly, and `max_gpus` grows by `k` so that a full cluster keeps
/// the same total SM count. `overrides` then scale individual fields.
pub fn derive_lite_spec(
    base: &GpuSpec,
    split_factor: u32,
    overrides: Option<&LiteOverrides>,
) -> Result<GpuSpec> {
    base.validate()?;
    let k = check_split(split_factor)?;
    if !base.sms.is_multiple_of(split_factor) {
        return Err(Error::invalid(
            "split_factor",
            format!(
                "{} SMs of '{}' are not divisible by {split_factor}",
                base.sms, base.name
            ),
        ));
    }
    let max_gpus = base
        .max_gpus
        .checked_mul(split_factor)
        .ok_or_else(|| Error::invalid("split_factor", "max_gpus overflows after splitting"))?;
    let mut lite = GpuSpec {
        name: if split_factor == 1 {
            base.name.clone()
        } else {
            format!("{}/{split_factor}", base.name)
        },
        tflops: base.tflops / k,
        mem_capacity_gb: base.mem_capacity_gb / k,
        mem_bw_gbps: base.mem_bw_gbps / k,
        net_bw_gbps: base.net_bw_gbps / k,
        sms: base.sms / split_factor,
        max_gpus,
    };
    if let Some(o) = overrides {
        o.validate()?;
        lite.tflops *= o.tflops.unwrap_or(1.0);
        lite.mem_capacity_gb *= o.mem_capacity.unwrap_or(1.0);
        lite.mem_bw_gbps *= o.mem_bw.unwrap_or(1.0);
        lite.net_bw_gbps *= o.net_bw.unwrap_or(1.0);
    }
    Ok(lite)
}

fn check_split(split_factor: u32) -> Result<f64> {
    if split_factor == 0 {
        return Err(Error::invalid("split_factor", "must be >= 1"));
    }
    Ok(f64::from(split_factor))
}

/// Growth of total die perimeter when one square die of area A is replaced
/// by `k` square dies of area A/k: √k. Shoreline bandwidth scales with
/// perimeter while compute scales with area, so this is also the gain in
/// aggregate bandwidth-to-compute.
pub fn shoreline_bandwidth_ratio(split_factor: u32) -> Result<f64> {
    let k = check_split(split_factor)?;
    Ok(k.sqrt())
}

/// Negative-binomial yield `(1 + A·D₀/α)^(−α)`.
pub fn die_yield(die: &DieSpec) -> Result<f64> {
    die.validate()?;
    let defects_per_die = die.area * die.defect_density;
    Ok((1.0 + defects_per_die / die.cluster_alpha).powf(-die.cluster_alpha))
}

/// Ratio of good-silicon cost per unit compute for `k` dies of area A/k
/// versus one die of area A, with raw die cost proportional to area.
/// Reduces to `Y(A) / Y(A/k)`; below 1 means the split is cheaper.
pub fn relative_cost_per_compute(base_die: &DieSpec, split_factor: u32) -> Result<f64> {
    let small = base_die.split(split_factor)?;
    Ok(die_yield(base_die)? / die_yield(&small)?)
}

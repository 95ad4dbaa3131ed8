//! Grid search over tensor-parallel degree and batch size per GPU type,
//! keeping the configuration with the highest tokens/s/SM for each phase
//! among those meeting the latency and memory constraints.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hardware::GpuSpec;
use crate::roofline::{
    evaluate_config, evaluate_metrics, max_batch, ClusterConfig, PhaseMetrics, PhaseResult,
    RooflineOptions, DEFAULT_DECODE_CTX, DEFAULT_PROMPT_LEN,
};
use crate::workload::{ModelSpec, Phase};

/// Service-level limits. A config is feasible only when it meets all of
/// them and fits in memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constraints {
    /// Seconds.
    pub max_ttft: f64,
    /// Seconds.
    pub max_tbt: f64,
    pub prompt_len: u64,
    pub decode_ctx: u64,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints {
            max_ttft: 1.0,
            max_tbt: 0.050,
            prompt_len: DEFAULT_PROMPT_LEN,
            decode_ctx: DEFAULT_DECODE_CTX,
        }
    }
}

impl Constraints {
    /// Zero limits are accepted and make every config infeasible.
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [("max_ttft", self.max_ttft), ("max_tbt", self.max_tbt)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::invalid(f, format!("must be >= 0, got {v}")));
            }
        }
        if self.prompt_len == 0 {
            return Err(Error::invalid("prompt_len", "must be >= 1"));
        }
        Ok(())
    }

    pub fn violations(&self, m: &PhaseMetrics) -> Vec<Violation> {
        let mut v = Vec::new();
        if !m.fits_memory {
            v.push(Violation::Memory);
        }
        if m.ttft.is_nan() || m.ttft > self.max_ttft {
            v.push(Violation::Ttft);
        }
        if m.tbt.is_nan() || m.tbt > self.max_tbt {
            v.push(Violation::Tbt);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Violation {
    Memory,
    Ttft,
    Tbt,
}

impl Violation {
    pub const ALL: [Violation; 3] = [Violation::Memory, Violation::Ttft, Violation::Tbt];

    pub const fn as_str(self) -> &'static str {
        match self {
            Violation::Memory => "memory",
            Violation::Ttft => "ttft",
            Violation::Tbt => "tbt",
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Batch sizes tried for each (GPU type, tp).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchGrid {
    /// 1, 2, 4, … up to `max`, plus the largest batch that fits in memory.
    PowersOfTwo {
        max: u64,
    },
    /// Every batch from 1 to the largest that fits in memory.
    Exhaustive,
    Explicit(Vec<u64>),
}

impl Default for BatchGrid {
    fn default() -> Self {
        BatchGrid::PowersOfTwo { max: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SweepGrid {
    /// Explicit tp values; by default powers of two up to `max_gpus`. Values
    /// that exceed a type's `max_gpus` or do not divide the head count are
    /// skipped for that type.
    pub tp: Option<Vec<u32>>,
    pub batch: BatchGrid,
    pub options: RooflineOptions,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        self.options.eff.validate()?;
        if let Some(tps) = &self.tp {
            if tps.is_empty() || tps.contains(&0) {
                return Err(Error::invalid(
                    "grid.tp",
                    "must be a non-empty list of values >= 1",
                ));
            }
        }
        match &self.batch {
            BatchGrid::PowersOfTwo { max: 0 } => {
                Err(Error::invalid("grid.batch", "max must be >= 1"))
            }
            BatchGrid::Explicit(b) if b.is_empty() || b.contains(&0) => Err(Error::invalid(
                "grid.batch",
                "must be a non-empty list of values >= 1",
            )),
            _ => Ok(()),
        }
    }

    pub fn tp_values(&self, model: &ModelSpec, gpu: &GpuSpec) -> Vec<u32> {
        let mut tps: Vec<u32> = match &self.tp {
            Some(v) => v.clone(),
            None => (0..32)
                .map(|e| 1u32 << e)
                .take_while(|&t| t <= gpu.max_gpus)
                .collect(),
        };
        tps.retain(|&t| t >= 1 && t <= gpu.max_gpus && model.heads.is_multiple_of(u64::from(t)));
        tps.sort_unstable();
        tps.dedup();
        tps
    }

    pub fn batch_values(&self, capacity_max: Option<u64>) -> Vec<u64> {
        let mut b: Vec<u64> = match &self.batch {
            BatchGrid::PowersOfTwo { max } => {
                let mut v: Vec<u64> = (0..64)
                    .map(|e| 1u64 << e)
                    .take_while(|b| b <= max)
                    .collect();
                v.extend(capacity_max);
                v
            }
            BatchGrid::Exhaustive => (1..=capacity_max.unwrap_or(1)).collect(),
            BatchGrid::Explicit(v) => v.clone(),
        };
        b.sort_unstable();
        b.dedup();
        b
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub tp: u32,
    pub batch: u64,
    pub metrics: PhaseMetrics,
    pub violations: Vec<Violation>,
}

impl Candidate {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Winning config for one phase, re-evaluated with full breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Best {
    pub config: ClusterConfig,
    pub result: PhaseResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpuSweep {
    pub gpu: GpuSpec,
    /// Every grid point in (tp, batch) order, feasible or not.
    pub candidates: Vec<Candidate>,
    pub best_prefill: Option<Best>,
    pub best_decode: Option<Best>,
}

impl GpuSweep {
    pub fn best(&self, phase: Phase) -> Option<&Best> {
        match phase {
            Phase::Prefill => self.best_prefill.as_ref(),
            Phase::Decode => self.best_decode.as_ref(),
        }
    }

    pub fn feasible(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.feasible())
    }

    /// Why nothing is feasible: the first constraint that alone rules out
    /// every grid point, else the one violated most often. `None` when a
    /// feasible config exists or the grid was empty.
    pub fn binding_constraint(&self) -> Option<Violation> {
        if self.candidates.is_empty() || self.candidates.iter().any(Candidate::feasible) {
            return None;
        }
        let count = |v: Violation| {
            self.candidates
                .iter()
                .filter(|c| c.violations.contains(&v))
                .count()
        };
        Violation::ALL
            .into_iter()
            .find(|&v| count(v) == self.candidates.len())
            .or_else(|| Violation::ALL.into_iter().rev().max_by_key(|&v| count(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub model: String,
    pub constraints: Constraints,
    pub gpus: Vec<GpuSweep>,
}

impl SweepResult {
    pub fn gpu(&self, name: &str) -> Option<&GpuSweep> {
        self.gpus
            .iter()
            .find(|g| g.gpu.name.eq_ignore_ascii_case(name))
    }

    /// GPU types with no feasible config.
    pub fn infeasible_gpus(&self) -> impl Iterator<Item = &GpuSweep> {
        self.gpus.iter().filter(|g| g.best_prefill.is_none())
    }
}

/// Highest tokens/s/SM for `phase` among feasible candidates. Ties go to
/// the smaller tp, then the smaller batch.
pub fn select_best(candidates: &[Candidate], phase: Phase) -> Option<&Candidate> {
    let mut best: Option<&Candidate> = None;
    for c in candidates.iter().filter(|c| c.feasible()) {
        let better = match best {
            None => true,
            Some(b) => {
                let (x, y) = (c.metrics.tput_per_sm(phase), b.metrics.tput_per_sm(phase));
                x > y || (x == y && (c.tp, c.batch) < (b.tp, b.batch))
            }
        };
        if better {
            best = Some(c);
        }
    }
    best
}

fn config_for(
    gpu: &GpuSpec,
    tp: u32,
    batch: u64,
    constraints: &Constraints,
    grid: &SweepGrid,
) -> ClusterConfig {
    ClusterConfig {
        gpu: gpu.clone(),
        tp,
        batch,
        prompt_len: constraints.prompt_len,
        decode_ctx: constraints.decode_ctx,
        options: grid.options,
    }
}

/// Evaluates every grid point for every GPU type. Points run in parallel
/// but results land in a fixed (gpu, tp, batch) order.
pub fn sweep(
    model: &ModelSpec,
    gpu_types: &[GpuSpec],
    constraints: &Constraints,
    grid: &SweepGrid,
) -> Result<SweepResult> {
    if gpu_types.is_empty() {
        return Err(Error::invalid("gpu_types", "must not be empty"));
    }
    model.validate()?;
    constraints.validate()?;
    grid.validate()?;
    let ctx = constraints.prompt_len.max(constraints.decode_ctx);

    let mut points = Vec::new();
    for (gi, gpu) in gpu_types.iter().enumerate() {
        gpu.validate()?;
        for tp in grid.tp_values(model, gpu) {
            let cap = max_batch(model, gpu, tp, ctx)?;
            points.extend(grid.batch_values(cap).into_iter().map(|b| (gi, tp, b)));
        }
    }

    let evaluated: Vec<(usize, Candidate)> = points
        .par_iter()
        .map(|&(gi, tp, batch)| {
            let cfg = config_for(&gpu_types[gi], tp, batch, constraints, grid);
            let metrics = evaluate_metrics(model, &cfg)?;
            let violations = constraints.violations(&metrics);
            Ok((
                gi,
                Candidate {
                    tp,
                    batch,
                    metrics,
                    violations,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut per_gpu: Vec<Vec<Candidate>> = vec![Vec::new(); gpu_types.len()];
    for (gi, c) in evaluated {
        per_gpu[gi].push(c);
    }

    let gpus = gpu_types
        .iter()
        .zip(per_gpu)
        .map(|(gpu, candidates)| {
            let best = |phase| -> Result<Option<Best>> {
                select_best(&candidates, phase)
                    .map(|c| {
                        let config = config_for(gpu, c.tp, c.batch, constraints, grid);
                        let result = evaluate_config(model, &config)?;
                        Ok(Best { config, result })
                    })
                    .transpose()
            };
            Ok(GpuSweep {
                gpu: gpu.clone(),
                best_prefill: best(Phase::Prefill)?,
                best_decode: best(Phase::Decode)?,
                candidates,
            })
        })
        .collect::<Result<_>>()?;

    Ok(SweepResult {
        model: model.name.clone(),
        constraints: *constraints,
        gpus,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub phase: Phase,
    pub gpu: String,
    /// `None` when the type has no feasible config.
    pub tput_per_sm: Option<f64>,
    /// Relative to the baseline type for the same model and phase.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, model: &str, gpu: &str, phase: Phase) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| {
            r.phase == phase
                && r.model.eq_ignore_ascii_case(model)
                && r.gpu.eq_ignore_ascii_case(gpu)
        })
    }

    pub fn ratio(&self, model: &str, gpu: &str, phase: Phase) -> Option<f64> {
        self.row(model, gpu, phase).and_then(|r| r.ratio)
    }

    /// GPU types for one model and phase, best ratio first. Types without a
    /// ratio come last.
    pub fn ordering(&self, model: &str, phase: Phase) -> Vec<&ComparisonRow> {
        let mut rows: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.phase == phase && r.model.eq_ignore_ascii_case(model))
            .collect();
        rows.sort_by(|a, b| {
            let key = |r: &ComparisonRow| r.ratio.unwrap_or(f64::NEG_INFINITY);
            key(b).total_cmp(&key(a))
        });
        rows
    }
}

/// Normalizes every type's best tokens/s/SM to `baseline`, per model and
/// phase. Rows follow sweep order: model, then phase, then GPU type.
pub fn compare_types(sweeps: &[SweepResult], baseline: &str) -> Result<Comparison> {
    if !sweeps.iter().any(|s| s.gpu(baseline).is_some()) {
        return Err(Error::Unknown {
            kind: "baseline GPU type",
            name: baseline.to_string(),
        });
    }
    let mut rows = Vec::new();
    for s in sweeps {
        for phase in Phase::ALL {
            let value = |g: &GpuSweep| g.best(phase).map(|b| b.result.metrics.tput_per_sm(phase));
            let base = s.gpu(baseline).and_then(value).filter(|&v| v > 0.0);
            for g in &s.gpus {
                let v = value(g);
                rows.push(ComparisonRow {
                    model: s.model.clone(),
                    phase,
                    gpu: g.gpu.name.clone(),
                    tput_per_sm: v,
                    ratio: v.zip(base).map(|(v, b)| v / b),
                });
            }
        }
    }
    Ok(Comparison {
        baseline: baseline.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::{default_gpu_specs, find_gpu};
    use crate::roofline::Resource;
    use crate::workload::{default_models, find_model};

    fn model(name: &str) -> ModelSpec {
        find_model(&default_models(), name).unwrap().clone()
    }

    fn gpus(names: &[&str]) -> Vec<GpuSpec> {
        let all = default_gpu_specs();
        names
            .iter()
            .map(|n| find_gpu(&all, n).unwrap().clone())
            .collect()
    }

    fn fake(tp: u32, batch: u64, per_sm: f64) -> Candidate {
        Candidate {
            tp,
            batch,
            metrics: PhaseMetrics {
                ttft: 0.1,
                tbt: 0.01,
                prefill_tput: per_sm,
                decode_tput: per_sm,
                prefill_tput_per_sm: per_sm,
                decode_tput_per_sm: per_sm,
                fits_memory: true,
                mem_per_gpu_bytes: 0.0,
                prefill_bottleneck: Resource::Compute,
                decode_bottleneck: Resource::Memory,
            },
            violations: vec![],
        }
    }

    #[test]
    fn tie_goes_to_smaller_tp() {
        let set = [fake(8, 1, 5.0), fake(2, 64, 2.0), fake(4, 2, 5.0)];
        let best = select_best(&set, Phase::Decode).unwrap();
        assert_eq!((best.tp, best.batch), (4, 2));
        let set = [fake(4, 8, 5.0), fake(4, 2, 5.0)];
        assert_eq!(select_best(&set, Phase::Prefill).unwrap().batch, 2);
        let mut infeasible = fake(1, 1, 9.0);
        infeasible.violations.push(Violation::Tbt);
        assert_eq!(select_best(&[infeasible], Phase::Decode), None);
    }

    #[test]
    fn grid_defaults() {
        let g = SweepGrid::default();
        let m = model("llama3-70b");
        assert_eq!(g.tp_values(&m, &gpus(&["H100"])[0]), [1, 2, 4, 8]);
        assert_eq!(g.tp_values(&m, &gpus(&["Lite"])[0]), [1, 2, 4, 8, 16, 32]);
        let b = g.batch_values(Some(300));
        assert_eq!(b.len(), 13);
        assert!(b.contains(&300) && b.contains(&2048));
        assert_eq!(g.batch_values(Some(512)).len(), 12);
        let custom = SweepGrid {
            tp: Some(vec![4, 3, 1, 64]),
            ..Default::default()
        };
        assert_eq!(custom.tp_values(&m, &gpus(&["Lite"])[0]), [1, 4]);
        assert_eq!(
            SweepGrid {
                batch: BatchGrid::Exhaustive,
                ..Default::default()
            }
            .batch_values(Some(5)),
            [1, 2, 3, 4, 5]
        );
    }

    #[test]
    fn tbt_violators_never_win() {
        let c = Constraints {
            max_tbt: 0.02,
            ..Default::default()
        };
        let r = sweep(
            &model("llama3-70b"),
            &gpus(&["H100", "Lite"]),
            &c,
            &SweepGrid::default(),
        )
        .unwrap();
        for g in &r.gpus {
            assert!(g
                .candidates
                .iter()
                .any(|x| x.violations.contains(&Violation::Tbt)));
            for phase in Phase::ALL {
                if let Some(b) = g.best(phase) {
                    assert!(b.result.metrics.tbt <= 0.02);
                }
            }
        }
    }

    #[test]
    fn best_may_use_fewer_gpus_than_allowed() {
        let all = default_gpu_specs();
        let models = default_models();
        let fewer = models.iter().any(|m| {
            let r = sweep(m, &all, &Constraints::default(), &SweepGrid::default()).unwrap();
            r.gpus.iter().any(|g| {
                Phase::ALL
                    .iter()
                    .any(|&p| g.best(p).is_some_and(|b| b.config.tp < g.gpu.max_gpus))
            })
        });
        assert!(fewer);
    }

    #[test]
    fn best_is_argmax_and_sound() {
        let c = Constraints::default();
        let m = model("gpt3-175b");
        let r = sweep(
            &m,
            &gpus(&["H100", "Lite+MemBW"]),
            &c,
            &SweepGrid::default(),
        )
        .unwrap();
        for g in &r.gpus {
            for phase in Phase::ALL {
                let best = g.best(phase).expect("feasible");
                let top = best.result.metrics.tput_per_sm(phase);
                assert!(g.feasible().all(|x| x.metrics.tput_per_sm(phase) <= top));
                let again = evaluate_metrics(&m, &best.config).unwrap();
                assert!(c.violations(&again).is_empty());
                assert_eq!(again, best.result.metrics);
            }
        }
    }

    #[test]
    fn no_feasible_config_reports_binding_constraint() {
        let m = model("llama3-405b").with_dtype(2.0, 2.0);
        let grid = SweepGrid {
            tp: Some(vec![8]),
            ..Default::default()
        };
        let r = sweep(&m, &gpus(&["Lite"]), &Constraints::default(), &grid).unwrap();
        assert!(r.gpus[0].best_prefill.is_none());
        assert_eq!(r.gpus[0].binding_constraint(), Some(Violation::Memory));

        let c = Constraints {
            max_tbt: 0.0,
            ..Default::default()
        };
        let r = sweep(
            &model("llama3-70b"),
            &gpus(&["H100"]),
            &c,
            &SweepGrid::default(),
        )
        .unwrap();
        assert_eq!(r.infeasible_gpus().count(), 1);
        assert_eq!(r.gpus[0].binding_constraint(), Some(Violation::Tbt));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let m = model("llama3-70b");
        let g = default_gpu_specs();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sweep(&m, &g, &Constraints::default(), &SweepGrid::default()).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn small_grid_matches_brute_force() {
        let m = model("llama3-70b");
        let g = gpus(&["H100", "Lite"]);
        let c = Constraints::default();
        let grid = SweepGrid {
            tp: Some(vec![1, 2, 4]),
            batch: BatchGrid::Explicit(vec![1, 4, 16]),
            ..Default::default()
        };
        let r = sweep(&m, &g, &c, &grid).unwrap();
        for (gs, gpu) in r.gpus.iter().zip(&g) {
            let mut i = 0;
            for tp in [1, 2, 4] {
                for batch in [1, 4, 16] {
                    let cfg = ClusterConfig {
                        prompt_len: 1500,
                        decode_ctx: 1500,
                        ..ClusterConfig::new(gpu.clone(), tp, batch)
                    };
                    let direct = evaluate_config(&m, &cfg).unwrap().metrics;
                    let cand = &gs.candidates[i];
                    assert_eq!((cand.tp, cand.batch), (tp, batch));
                    assert_eq!(cand.metrics, direct);
                    i += 1;
                }
            }
            assert_eq!(gs.candidates.len(), i);
        }
    }

    #[test]
    fn compare_baseline_is_one() {
        let r = sweep(
            &model("llama3-70b"),
            &gpus(&["H100", "Lite"]),
            &Constraints::default(),
            &SweepGrid::default(),
        )
        .unwrap();
        let cmp = compare_types(std::slice::from_ref(&r), "h100").unwrap();
        for phase in Phase::ALL {
            assert_eq!(cmp.ratio("llama3-70b", "H100", phase), Some(1.0));
            assert!(cmp.ratio("llama3-70b", "Lite", phase).is_some());
            assert_eq!(cmp.ordering("llama3-70b", phase).len(), 2);
        }
        assert!(compare_types(&[r], "B200").is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model("llama3-70b");
        assert!(sweep(&m, &[], &Constraints::default(), &SweepGrid::default()).is_err());
        let neg = Constraints {
            max_ttft: -1.0,
            ..Default::default()
        };
        assert!(sweep(&m, &gpus(&["H100"]), &neg, &SweepGrid::default()).is_err());
        let empty = SweepGrid {
            batch: BatchGrid::Explicit(vec![]),
            ..Default::default()
        };
        assert!(sweep(&m, &gpus(&["H100"]), &Constraints::default(), &empty).is_err());
    }
}

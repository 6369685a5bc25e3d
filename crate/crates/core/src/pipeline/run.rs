use std::time::{Duration, Instant};

use super::{
    activate_square, check_model, combine, oracle_forward, select_mode, Activation, AggMode,
    LayerSpec, ModeChoice, ModeDecision, VerifyReport,
};
use crate::error::{Error, Result};
use crate::graph_io::SampledAdjacency;
use crate::interca::{build_interca, exec_interca, pack_neighbor_layouts, plan_from_tokens};
use crate::matrix::Matrix;
use crate::noo::{order_backprop, run_noo, NodeOrder};
use crate::packing::{
    ceil_log2, feasible_widths, objective_j, pack, plan_packing, unpack, PackingCase, PackingPlan,
    SlotLayout,
};
use crate::slotvm::{CipherVec, CostModel, HocReport, OpCounts, OpKind, SlotVm};
use crate::spintra::{
    build_schedule, compute_shifts, exec_spintra, DeliveryMode, Op, RotationSchedule,
    ScheduleOptions, SpintraOutput,
};

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub slots: usize,
    pub levels: u32,
    /// Packing width; `None` picks it analytically.
    pub t: Option<usize>,
    pub cost: CostModel,
    pub aoo: bool,
    /// `0` disables CPOO.
    pub cpoo_threshold: f64,
    pub noo: bool,
    pub th: usize,
    /// Rotation-efficiency factor used when no schedule is available.
    pub c_init: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            slots: 4096,
            levels: 6,
            t: None,
            cost: CostModel::default(),
            aoo: true,
            cpoo_threshold: 0.25,
            noo: true,
            th: 1024,
            c_init: 0.5,
        }
    }
}

/// Everything decided before any ciphertext is touched.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub packing: PackingPlan,
    /// Layout of the first layer's input; later layers reuse its node order.
    pub layout: SlotLayout,
    pub order: Option<NodeOrder>,
    pub noo_time: Option<Duration>,
    pub schedule: Option<RotationSchedule>,
    pub decisions: Vec<ModeDecision>,
    pub depth: u32,
    pub levels: u32,
}

impl ExecutionPlan {
    pub fn t(&self) -> usize {
        self.packing.t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer: usize,
    pub mode: AggMode,
    pub f_in: usize,
    pub f_out: usize,
    pub counts: OpCounts,
    pub latency: f64,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub plan: ExecutionPlan,
    pub hoc: HocReport,
    pub layers: Vec<LayerReport>,
    pub output: Matrix,
    pub oracle: Matrix,
    pub verify: VerifyReport,
    pub final_level: u32,
}

#[derive(Debug, Clone)]
pub struct DryRun {
    pub plan: ExecutionPlan,
    pub hoc: HocReport,
    pub layers: Vec<LayerReport>,
    pub final_level: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub t: usize,
    pub objective: f64,
    pub hoc: HocReport,
}

fn choose_packing(
    adj: &SampledAdjacency,
    layers: &[LayerSpec],
    opts: &InferOptions,
) -> Result<PackingPlan> {
    let (f, f_out) = (layers[0].f_in, layers[0].f_out);
    let rot_weight = opts.cost.rot_ratio();
    let Some(t) = opts.t else {
        return plan_packing(opts.slots, adj.num_nodes(), f, f_out, adj.n(), rot_weight);
    };
    if !opts.slots.is_power_of_two() {
        return Err(Error::Config(format!(
            "slot count {} is not a power of two",
            opts.slots
        )));
    }
    if !t.is_power_of_two() || t > opts.slots {
        return Err(Error::Config(format!(
            "packing width {t} must be a power of two no larger than {}",
            opts.slots
        )));
    }
    let case = if opts.slots <= adj.num_nodes() * f_out {
        PackingCase::ColumnExceeds
    } else {
        PackingCase::ColumnFits
    };
    Ok(PackingPlan {
        t,
        case,
        objective: objective_j(t, f, adj.n(), rot_weight),
    })
}

/// Tokens that actually contribute; padding slots carry weight 0.
fn live_tokens(adj: &SampledAdjacency, layout: &SlotLayout) -> Result<Vec<crate::spintra::Token>> {
    let mut tokens = compute_shifts(adj, layout)?;
    tokens.retain(|t| t.weight != 0.0);
    Ok(tokens)
}

/// Packing, node order, rotation schedule and per-layer aggregation mode.
pub fn prepare(
    adj: &SampledAdjacency,
    layers: &[LayerSpec],
    opts: &InferOptions,
) -> Result<ExecutionPlan> {
    if layers.is_empty() {
        return Err(Error::Config("model has no layers".into()));
    }
    let depth: u32 = layers.iter().map(LayerSpec::depth).sum();
    if depth > opts.levels {
        return Err(Error::InsufficientLevels {
            required: depth,
            configured: opts.levels,
        });
    }
    if let Some(v) = (0..adj.num_nodes()).find(|&v| adj.self_weight(v) == 0.0) {
        return Err(Error::Unsupported(format!(
            "node {v} has zero self weight; the self term cannot be factored out"
        )));
    }
    let packing = choose_packing(adj, layers, opts)?;
    let t = packing.t;
    let ring = opts.slots / t;
    let num_nodes = adj.num_nodes();
    let f0 = layers[0].f_in;

    let (layout, order, noo_time) = if opts.noo && num_nodes <= ring {
        let start = Instant::now();
        let order = run_noo(adj, ring, opts.th)?;
        let elapsed = start.elapsed();
        let layout = order_backprop(&order, opts.slots, t, f0)?;
        (layout, Some(order), Some(elapsed))
    } else {
        (
            SlotLayout::identity(opts.slots, t, num_nodes, f0)?,
            None,
            None,
        )
    };

    let needs_schedule = layers.len() > 1 || layers.iter().any(|l| l.mode == ModeChoice::SpIntra);
    let schedule = if needs_schedule {
        if !layout.fits_ring() {
            return Err(Error::Unsupported(format!(
                "{num_nodes} nodes exceed the ring of {ring} slots; layers after the first \
                 need every node inside one ring"
            )));
        }
        let sched_opts = ScheduleOptions {
            aoo: opts.aoo,
            cpoo_threshold: opts.cpoo_threshold,
        };
        Some(build_schedule(
            &live_tokens(adj, &layout)?,
            &layout,
            &sched_opts,
        ))
    } else {
        None
    };

    let n = adj.n();
    let log_n = (num_nodes as f64).log2();
    let c = match &schedule {
        Some(s) if n > 0 && log_n > 0.0 => {
            (s.rot_count() as f64 / (n as f64 * log_n * log_n)).clamp(0.0, 1.0)
        }
        _ => opts.c_init,
    };
    let rot_weight = opts.cost.rot_ratio();
    let decisions = layers
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let mut d = select_mode(l, spec.f_in, n, t, num_nodes, c, rot_weight);
            match spec.mode {
                ModeChoice::Auto => {}
                ModeChoice::Inter => {
                    d.chosen = AggMode::Inter;
                    d.forced = true;
                }
                ModeChoice::SpIntra => {
                    d.chosen = AggMode::SpIntra;
                    d.forced = true;
                }
            }
            d
        })
        .collect();

    Ok(ExecutionPlan {
        packing,
        layout,
        order,
        noo_time,
        schedule,
        decisions,
        depth,
        levels: opts.levels,
    })
}

fn layer_reports(hoc: &HocReport, layers: &[LayerSpec], plan: &ExecutionPlan) -> Vec<LayerReport> {
    layers
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let prefix = format!("layer{l}.");
            let (counts, latency) = hoc
                .stages
                .iter()
                .filter(|s| s.name.starts_with(&prefix))
                .fold((OpCounts::default(), 0.0), |(c, lat), s| {
                    (c + s.counts, lat + s.latency)
                });
            LayerReport {
                layer: l,
                mode: plan.decisions[l].chosen,
                f_in: spec.f_in,
                f_out: spec.f_out,
                counts,
                latency,
            }
        })
        .collect()
}

fn schedule_of(plan: &ExecutionPlan) -> &RotationSchedule {
    plan.schedule
        .as_ref()
        .expect("schedule is built whenever a layer needs it")
}

/// Runs the model on the slot machine and checks it against the dense oracle.
pub fn infer(
    adj: &SampledAdjacency,
    x: &Matrix,
    weights: &[Matrix],
    layers: &[LayerSpec],
    opts: &InferOptions,
) -> Result<Inference> {
    check_model(x, weights, layers)?;
    if x.rows() != adj.num_nodes() {
        return Err(Error::Dimension(format!(
            "feature matrix has {} rows for {} nodes",
            x.rows(),
            adj.num_nodes()
        )));
    }
    let plan = prepare(adj, layers, opts)?;
    let mut vm = SlotVm::new(opts.slots, opts.cost.clone());
    let self_weights: Vec<f64> = (0..adj.num_nodes()).map(|v| adj.self_weight(v)).collect();

    let mut layout = plan.layout.clone();
    let mut cts = pack(x, &layout, opts.levels)?;
    for (l, (spec, w)) in layers.iter().zip(weights).enumerate() {
        layout = layout.with_features(spec.f_in);
        vm.begin_stage(format!("layer{l}.aggregate"));
        let agg = match plan.decisions[l].chosen {
            AggMode::Inter => {
                if l == 0 {
                    let ic = build_interca(adj, &layout)?;
                    let neighbors = pack_neighbor_layouts(&ic, x, &layout, opts.levels)?;
                    exec_interca(&mut vm, &ic, &neighbors, &cts, &layout)?
                } else {
                    let schedule = schedule_of(&plan);
                    let ic = plan_from_tokens(schedule.tokens(), schedule.outputs(), &self_weights);
                    let out = exec_spintra(&mut vm, schedule, &cts, &layout, DeliveryMode::Unit)?;
                    let SpintraOutput::Neighbors(neighbors) = out else {
                        unreachable!("unit delivery")
                    };
                    exec_interca(&mut vm, &ic, &neighbors, &cts, &layout)?
                }
            }
            AggMode::SpIntra => {
                let mode = DeliveryMode::Weighted {
                    self_weights: &self_weights,
                };
                match exec_spintra(&mut vm, schedule_of(&plan), &cts, &layout, mode)? {
                    SpintraOutput::Aggregated(a) => a,
                    SpintraOutput::Neighbors(_) => unreachable!("weighted delivery"),
                }
            }
        };
        vm.begin_stage(format!("layer{l}.combine"));
        cts = combine(&mut vm, &agg, w, &layout)?;
        layout = layout.with_features(spec.f_out);
        vm.begin_stage(format!("layer{l}.activate"));
        if spec.activation == Activation::Square {
            cts = activate_square(&mut vm, &cts)?;
        }
    }
    let output = unpack(&cts, &layout)?;
    let oracle = oracle_forward(adj, x, weights, layers)?;
    let verify = VerifyReport::compare(&output, &oracle);
    let final_level = cts
        .iter()
        .map(CipherVec::level)
        .min()
        .unwrap_or(opts.levels);
    let hoc = vm.into_hoc();
    let layers = layer_reports(&hoc, layers, &plan);
    Ok(Inference {
        plan,
        hoc,
        layers,
        output,
        oracle,
        verify,
        final_level,
    })
}

/// Schedule-level counts of one replay, by the level each op runs at.
struct Replay {
    rot: u64,
    mask: u64,
    add: u64,
    /// Deliveries per output.
    deliveries: Vec<u64>,
}

fn replay_counts(s: &RotationSchedule) -> Replay {
    let mut r = Replay {
        rot: 0,
        mask: 0,
        add: 0,
        deliveries: vec![0; s.outputs()],
    };
    for step in s.steps() {
        match step.op {
            Op::Rot { amount, .. } => r.rot += u64::from(amount % s.slots() != 0),
            Op::Mask { .. } => r.mask += 1,
            Op::Add { .. } => r.add += 1,
            Op::Deliver { delivery, .. } => r.deliveries[s.delivery(delivery).output] += 1,
        }
    }
    r
}

/// Operation counts of [`infer`] without touching any slot values.
pub fn dry_run(
    adj: &SampledAdjacency,
    layers: &[LayerSpec],
    opts: &InferOptions,
) -> Result<DryRun> {
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].f_out != pair[1].f_in {
            return Err(Error::Dimension(format!(
                "layer {i} outputs {} features but layer {} expects {}",
                pair[0].f_out,
                i + 1,
                pair[1].f_in
            )));
        }
    }
    let plan = prepare(adj, layers, opts)?;
    let cost = &opts.cost;
    let mut hoc = HocReport::default();
    let replay = plan.schedule.as_ref().map(replay_counts);
    let n = adj.n() as u64;
    let t = plan.t();
    let log_t = u64::from(ceil_log2(t));
    let mut level = opts.levels;

    for (l, spec) in layers.iter().enumerate() {
        let layout = plan.layout.with_features(spec.f_in);
        let cts = layout.num_ciphertexts() as u64;
        hoc.begin_stage(format!("layer{l}.aggregate"));
        let mut rec = |kind, lvl, count| hoc.record_many(kind, lvl, count, cost);
        match plan.decisions[l].chosen {
            AggMode::Inter => {
                let orders = if l > 0 {
                    let r = replay.as_ref().expect("schedule built");
                    rec(OpKind::Rot, level, cts * r.rot);
                    rec(
                        OpKind::PMult,
                        level,
                        cts * (r.mask + r.deliveries.iter().sum::<u64>()),
                    );
                    let acc_adds: u64 = r.deliveries.iter().map(|&d| d.saturating_sub(1)).sum();
                    rec(OpKind::Add, level, cts * (r.add + acc_adds));
                    r.deliveries.len() as u64
                } else {
                    n
                };
                if orders > 0 {
                    rec(OpKind::PMult, level, cts * orders);
                    rec(OpKind::Add, level - 1, cts * orders);
                    level -= 1;
                }
            }
            AggMode::SpIntra => {
                let r = replay.as_ref().expect("schedule built");
                let delivered: u64 = r.deliveries.iter().sum();
                rec(OpKind::Rot, level, cts * r.rot);
                rec(OpKind::PMult, level, cts * r.mask);
                rec(OpKind::Add, level, cts * r.add);
                if delivered > 0 {
                    rec(OpKind::PMult, level, cts * delivered);
                    rec(OpKind::Add, level - 1, cts * delivered);
                    level -= 1;
                }
            }
        }

        hoc.begin_stage(format!("layer{l}.combine"));
        let mut rec = |kind, lvl, count| hoc.record_many(kind, lvl, count, cost);
        let out_layout = layout.with_features(spec.f_out);
        let per_output = layout.row_blocks() as u64 * spec.f_out as u64;
        let groups_in = layout.column_groups() as u64;
        rec(OpKind::PMult, level, per_output * groups_in);
        rec(OpKind::Add, level - 1, per_output * (groups_in - 1));
        if t > 1 {
            rec(OpKind::Rot, level - 1, per_output * log_t);
            rec(OpKind::Add, level - 1, per_output * log_t);
            rec(OpKind::PMult, level - 1, per_output);
        }
        rec(
            OpKind::Add,
            level - 1,
            per_output - out_layout.num_ciphertexts() as u64,
        );
        level -= 1;

        hoc.begin_stage(format!("layer{l}.activate"));
        if spec.activation == Activation::Square {
            hoc.record_many(
                OpKind::CMult,
                level,
                out_layout.num_ciphertexts() as u64,
                cost,
            );
            level -= 1;
        }
    }
    let reports = layer_reports(&hoc, layers, &plan);
    Ok(DryRun {
        plan,
        hoc,
        layers: reports,
        final_level: level,
    })
}

/// Symbolic cost of every feasible packing width.
pub fn sweep_t(
    adj: &SampledAdjacency,
    layers: &[LayerSpec],
    opts: &InferOptions,
) -> Result<Vec<SweepPoint>> {
    let f = layers.first().map_or(1, |l| l.f_in);
    feasible_widths(opts.slots, adj.num_nodes(), f)
        .into_iter()
        .map(|t| {
            let run = dry_run(
                adj,
                layers,
                &InferOptions {
                    t: Some(t),
                    ..opts.clone()
                },
            )?;
            Ok(SweepPoint {
                t,
                objective: run.plan.packing.objective,
                hoc: run.hoc,
            })
        })
        .collect()
}

//! One line per acceptance criterion; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hegcn::cli;
use hegcn::graph_io::{sample_neighbors, synthetic, Graph, SampledAdjacency};
use hegcn::interca::{build_interca, exec_interca, pack_neighbor_layouts};
use hegcn::matrix::Matrix;
use hegcn::packing::{objective_j, pack, plan_packing, SlotLayout};
use hegcn::pipeline::{
    chain, combine, dry_run, infer, select_mode, AggMode, InferOptions, ModeChoice,
};
use hegcn::report::Report;
use hegcn::slotvm::{CipherVec, CostModel, SlotVm};
use hegcn::spintra::{
    build_schedule, compute_shifts, exec_spintra, DeliveryMode, RotationSchedule, ScheduleOptions,
    SpintraOutput, Token,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn live_tokens(adj: &SampledAdjacency, layout: &SlotLayout) -> Vec<Token> {
    let mut tokens = compute_shifts(adj, layout).unwrap();
    tokens.retain(|t| t.weight != 0.0);
    tokens
}

fn schedule(adj: &SampledAdjacency, layout: &SlotLayout, aoo: bool, cpoo: f64) -> RotationSchedule {
    build_schedule(
        &live_tokens(adj, layout),
        layout,
        &ScheduleOptions {
            aoo,
            cpoo_threshold: cpoo,
        },
    )
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num_nodes = rng.gen_range(8..=512);
        let n = rng.gen_range(1..=4);
        let g: Graph = if seed % 2 == 0 {
            synthetic::power_law(num_nodes, rng.gen_range(1..=3), seed)
        } else {
            synthetic::random(num_nodes, rng.gen_range(1.0..6.0), seed)
        };
        let adj = sample_neighbors(&g, n, seed).unwrap();
        let dims = [
            rng.gen_range(1..=8),
            rng.gen_range(1..=6),
            rng.gen_range(1..=4),
        ];
        let mut layers = chain(&dims).unwrap();
        layers[1].mode =
            [ModeChoice::Auto, ModeChoice::Inter, ModeChoice::SpIntra][rng.gen_range(0..3)];
        let x = Matrix::random(num_nodes, dims[0], seed);
        let weights: Vec<Matrix> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Matrix::random(w[0], w[1], seed * 7 + i as u64))
            .collect();
        let slots = num_nodes.next_power_of_two() << rng.gen_range(0..3);
        let opts = InferOptions {
            slots,
            aoo: rng.gen_bool(0.5),
            cpoo_threshold: if rng.gen_bool(0.5) { 0.25 } else { 0.0 },
            noo: rng.gen_bool(0.5),
            th: rng.gen_range(16..=1024),
            ..InferOptions::default()
        };
        let run = infer(&adj, &x, &weights, &layers, &opts).unwrap();
        worst = worst.max(run.verify.max_rel_error);
        failures += usize::from(!run.verify.passed());
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && worst < 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "100 graphs, max rel error {worst:.3e} (< 1e-6), {:.1}s (< 60s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// Plain-array reference for one ciphertext.
#[derive(Clone)]
struct Plain {
    slots: Vec<f64>,
    level: u32,
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut ops = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + seed);
        let s = 1usize << rng.gen_range(1..=6);
        let mut vm = SlotVm::new(s, CostModel::default());
        let mut cts = Vec::new();
        let mut plain = Vec::new();
        for _ in 0..3 {
            let v: Vec<f64> = (0..s).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let level = rng.gen_range(0..=4);
            cts.push(CipherVec::encrypt(v.clone(), level));
            plain.push(Plain { slots: v, level });
        }
        for _ in 0..rng.gen_range(1..=20) {
            let a = rng.gen_range(0..cts.len());
            let b = rng.gen_range(0..cts.len());
            let (c, p) = match rng.gen_range(0..5) {
                0 => {
                    let k = rng.gen_range(0..2 * s);
                    let p = Plain {
                        slots: (0..s).map(|i| plain[a].slots[(i + k) % s]).collect(),
                        level: plain[a].level,
                    };
                    (vm.rot(&cts[a], k), p)
                }
                1 => {
                    let m: Vec<f64> = (0..s).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    let res = vm.pmult(&cts[a], &m);
                    if plain[a].level == 0 {
                        if res.is_ok() {
                            mismatches += 1;
                        }
                        continue;
                    }
                    let p = Plain {
                        slots: plain[a].slots.iter().zip(&m).map(|(x, y)| x * y).collect(),
                        level: plain[a].level - 1,
                    };
                    (res.unwrap(), p)
                }
                2 => {
                    let m: Vec<f64> = (0..s).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
                    let p = Plain {
                        slots: plain[a].slots.iter().zip(&m).map(|(x, y)| x * y).collect(),
                        level: plain[a].level,
                    };
                    (vm.mask(&cts[a], &m), p)
                }
                3 => {
                    let p = Plain {
                        slots: plain[a]
                            .slots
                            .iter()
                            .zip(&plain[b].slots)
                            .map(|(x, y)| x + y)
                            .collect(),
                        level: plain[a].level.min(plain[b].level),
                    };
                    (vm.add(&cts[a], &cts[b]), p)
                }
                _ => {
                    let level = plain[a].level.min(plain[b].level);
                    let res = vm.cmult(&cts[a], &cts[b]);
                    if level == 0 {
                        if res.is_ok() {
                            mismatches += 1;
                        }
                        continue;
                    }
                    let p = Plain {
                        slots: plain[a]
                            .slots
                            .iter()
                            .zip(&plain[b].slots)
                            .map(|(x, y)| x * y)
                            .collect(),
                        level: level - 1,
                    };
                    (res.unwrap(), p)
                }
            };
            ops += 1;
            if c.decrypt() != p.slots || c.level() != p.level {
                mismatches += 1;
            }
            cts.push(c);
            plain.push(p);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!(
            "1000 sequences, {ops} ops, {mismatches} mismatches, {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut checked = 0;
    let mut bad = Vec::new();
    let g = synthetic::random(8, 3.0, 3);
    for f in 1..=16usize {
        for n in 1..=5usize {
            let adj = sample_neighbors(&g, n, 1).unwrap();
            for t in [1usize, 2, 4, 8, 16] {
                let slots = 8 * t;
                let layout = SlotLayout::identity(slots, t, 8, f).unwrap();
                let x = Matrix::random(8, f, (f * n * t) as u64);
                let plan = build_interca(&adj, &layout).unwrap();
                let nbrs = pack_neighbor_layouts(&plan, &x, &layout, 3).unwrap();
                let cts = pack(&x, &layout, 3).unwrap();
                let mut vm = SlotVm::new(slots, CostModel::default());
                let agg = exec_interca(&mut vm, &plan, &nbrs, &cts, &layout).unwrap();
                let agg_counts = vm.hoc().total;
                // Combination into a single output column exposes the column-sum rotations.
                vm.begin_stage("combine");
                combine(&mut vm, &agg, &Matrix::random(f, 1, 9), &layout).unwrap();
                let rot = vm.hoc().stage("combine").unwrap().counts.rot;
                let general = (n * f.div_ceil(t)) as u64;
                let expected_rot = u64::from(t.next_power_of_two().trailing_zeros());
                let mut ok = agg_counts.pmult == general
                    && agg_counts.add == general
                    && agg_counts.rot == 0
                    && rot == expected_rot;
                if f % t == 0 {
                    ok &= agg_counts.pmult == (f * n).div_ceil(t) as u64;
                }
                checked += 1;
                if !ok {
                    bad.push((f, n, t, agg_counts.pmult, rot));
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        match bad.first() {
            None => format!("{checked} (F, n, t) points exact"),
            Some(b) => format!(
                "{} of {checked} points wrong, first (F, n, t, PMult, Rot) = {b:?}",
                bad.len()
            ),
        },
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    let mut exceeds = 0;
    for _ in 0..200 {
        let slots = 1usize << rng.gen_range(8..=16);
        let f = rng.gen_range(1..=2048);
        let f_out = rng.gen_range(1..=64);
        // Half the draws keep a full output column inside one ciphertext.
        let num_nodes = if rng.gen_bool(0.5) {
            rng.gen_range(1..=slots)
        } else {
            rng.gen_range(1..=(slots / (2 * f_out)).max(1))
        };
        let n = rng.gen_range(1..=16);
        let plan = plan_packing(slots, num_nodes, f, f_out, n, 20.0).unwrap();
        let expected = if slots <= num_nodes * f_out {
            exceeds += 1;
            1
        } else {
            let mut best = (1usize, f64::INFINITY);
            let mut t = 1;
            while t <= f && num_nodes * t <= slots {
                let j = 2.0 * (f * n).div_ceil(t) as f64 + 20.0 * f64::from(t.trailing_zeros());
                if j < best.1 {
                    best = (t, j);
                }
                t *= 2;
            }
            best.0
        };
        if plan.t != expected || plan.objective != objective_j(plan.t, f, n, 20.0) {
            bad += 1;
        }
    }
    outcome(
        bad == 0,
        format!("200 tuples ({exceeds} with S <= N*F'), {bad} disagree with brute force"),
    )
}

fn criterion_5() -> Outcome {
    let (n, slots) = (4usize, 1024usize);
    let log_r = (slots as f64).log2();
    let bound = n as f64 * log_r * log_r + n as f64 * log_r;
    let mut rots = Vec::new();
    for seed in 0..50u64 {
        let g = if seed % 2 == 0 {
            synthetic::power_law(1024, 2, seed)
        } else {
            synthetic::random(1024, 4.0, seed)
        };
        let adj = sample_neighbors(&g, n, seed).unwrap();
        let layout = SlotLayout::identity(slots, 1, 1024, 1).unwrap();
        rots.push(schedule(&adj, &layout, true, 0.25).rot_count() as f64);
    }
    let max = rots.iter().cloned().fold(0.0, f64::max);
    let m = mean(&rots);
    outcome(
        max <= bound && m < 0.5 * bound,
        format!(
            "max Rot {max} <= bound {bound}, mean {m:.1} < {:.0}",
            0.5 * bound
        ),
    )
}

/// Per node and feature, the sorted values delivered across all outputs.
fn neighbor_multisets(sets: &[Vec<CipherVec>], layout: &SlotLayout) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    for v in 0..layout.num_nodes() {
        for f in 0..layout.num_features() {
            let (ct, slot) = layout.position(v, f);
            let mut vals: Vec<u64> = sets.iter().map(|s| s[ct].slots()[slot].to_bits()).collect();
            vals.retain(|&b| b != 0);
            vals.sort_unstable();
            out.push(vals);
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let mut value_mismatch = 0;
    let mut cpoo_worse = 0;
    for seed in 0..50u64 {
        let g = synthetic::power_law(256, 2, 600 + seed);
        let adj = sample_neighbors(&g, 4, seed).unwrap();
        let t = 1 << (seed % 3);
        let layout = SlotLayout::identity(256 * t * 2, t, 256, 3).unwrap();
        let x = Matrix::random(256, 3, seed);
        let cts = pack(&x, &layout, 2).unwrap();
        let mut reference: Option<Vec<Vec<u64>>> = None;
        for aoo in [false, true] {
            let base = schedule(&adj, &layout, aoo, 0.0);
            let opt = schedule(&adj, &layout, aoo, 0.25);
            cpoo_worse += usize::from(opt.rot_count() > base.rot_count());
            let mut per_output = Vec::new();
            for s in [&base, &opt] {
                let mut vm = SlotVm::new(layout.slots(), CostModel::default());
                let SpintraOutput::Neighbors(sets) =
                    exec_spintra(&mut vm, s, &cts, &layout, DeliveryMode::Unit).unwrap()
                else {
                    unreachable!()
                };
                let ms = neighbor_multisets(&sets, &layout);
                match &reference {
                    None => reference = Some(ms),
                    Some(r) => value_mismatch += usize::from(*r != ms),
                }
                per_output.push(sets);
            }
            value_mismatch += usize::from(per_output[0] != per_output[1]);
        }
    }
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in 0..10u64 {
        let g = synthetic::power_law(1024, 2, 700 + seed);
        let adj = sample_neighbors(&g, 4, seed).unwrap();
        let layout = SlotLayout::identity(1024, 1, 1024, 1).unwrap();
        without.push(schedule(&adj, &layout, false, 0.0).rot_count() as f64);
        with.push(schedule(&adj, &layout, true, 0.0).rot_count() as f64);
    }
    let reduction = 1.0 - mean(&with) / mean(&without);
    outcome(
        value_mismatch == 0 && cpoo_worse == 0 && reduction >= 0.05,
        format!(
            "50 seeds: {value_mismatch} value mismatches, {cpoo_worse} CPOO regressions; AOO Rot {:.1} -> {:.1} ({:.1}% >= 5%)",
            mean(&without),
            mean(&with),
            100.0 * reduction
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut reductions = Vec::new();
    for seed in 0..10u64 {
        let g = synthetic::power_law(1024, 2, 800 + seed);
        let adj = sample_neighbors(&g, 4, seed).unwrap();
        let direct = |noo: bool| {
            let opts = InferOptions {
                slots: 4096,
                noo,
                aoo: false,
                cpoo_threshold: 0.0,
                ..InferOptions::default()
            };
            let mut layers = chain(&[1, 1]).unwrap();
            layers[0].mode = ModeChoice::SpIntra;
            let plan = hegcn::pipeline::prepare(&adj, &layers, &opts).unwrap();
            plan.schedule.unwrap().rot_count() as f64
        };
        reductions.push(1.0 - direct(true) / direct(false));
    }
    let m = mean(&reductions);
    let elapsed = start.elapsed();
    outcome(
        m >= 0.30 && elapsed < Duration::from_secs(300),
        format!(
            "mean Rot reduction {:.1}% (>= 30%), {:.1}s (< 300s)",
            100.0 * m,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let g = synthetic::power_law(20_000, 2, 1);
    let adj = sample_neighbors(&g, 4, 1).unwrap();
    let layers = chain(&[8710, 32, 16]).unwrap();
    let opts = InferOptions {
        slots: 32768,
        th: 4096,
        ..InferOptions::default()
    };
    let run = dry_run(&adj, &layers, &opts).unwrap();
    let noo = run
        .plan
        .noo_time
        .expect("20K nodes fit one ring")
        .as_secs_f64();
    let online = run.hoc.latency * opts.cost.unit_seconds;
    let rho = noo / online;
    outcome(
        noo < 60.0 && rho < 0.10,
        format!(
            "NOO {noo:.2}s (< 60s), simulated online {online:.1}s, rho {:.2}% (< 10%)",
            100.0 * rho
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0;
    for i in 0..1000 {
        let f: usize = rng.gen_range(1..=10_000);
        let n = rng.gen_range(1..=32);
        let num_nodes = rng.gen_range(2..=1 << 20);
        let t: usize = 1 << rng.gen_range(0..=6);
        let c: f64 = rng.gen_range(0.0..=1.0);
        let layer = if i % 10 == 0 { 0 } else { 1 };
        let inter = 2.0 * (f * n).div_ceil(t) as f64;
        let spintra = 10.0 * c * n as f64 * (num_nodes as f64).log2().powi(2);
        let expected = if layer > 0 && spintra < inter {
            AggMode::SpIntra
        } else {
            AggMode::Inter
        };
        let d = select_mode(layer, f, n, t, num_nodes, c, 20.0);
        let close = (d.spintra_cost - spintra).abs() <= 1e-9 * spintra.max(1.0);
        if d.chosen != expected || d.inter_cost != inter || !close {
            bad += 1;
        }
    }
    outcome(
        bad == 0,
        format!("1000 tuples, {bad} disagree with the formulas"),
    )
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(
        std::iter::once("hegcn").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (code, String::from_utf8(out).unwrap())
}

fn criterion_10() -> Outcome {
    let (code, text) = run_cli(&["bench", "--synthetic", "2708", "--n", "4", "--seeds", "5"]);
    let metrics: BTreeMap<String, String> = Report::parse_metrics(&text).into_iter().collect();
    let sweep: Vec<String> = ["0.0", "0.1", "0.2", "0.3", "0.4", "0.5"]
        .iter()
        .map(|th| metrics[&format!("sweep.{th}.rot_mean")].clone())
        .collect();
    let best: f64 = metrics["sweep.best_threshold"].parse().unwrap();
    outcome(
        code == 0 && (0.1..=0.4).contains(&best),
        format!(
            "Rot by threshold 0..0.5: [{}], minimum at {best} (in [0.1, 0.4])",
            sweep.join(", ")
        ),
    )
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for i in 0..2 {
        let report = dir.path().join(format!("report{i}.txt"));
        let dump = dir.path().join(format!("dump{i}.txt"));
        let (code, _) = run_cli(&[
            "run",
            "--synthetic",
            "512",
            "--dims",
            "8-4-2",
            "--slots",
            "2048",
            "--seed",
            "7",
            "--report",
            report.to_str().unwrap(),
            "--dump-schedule",
            dump.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        files.push((
            std::fs::read(&report).unwrap(),
            std::fs::read(&dump).unwrap(),
        ));
    }
    let same = files[0] == files[1];
    outcome(
        same && !files[0].1.is_empty(),
        format!(
            "reports {} bytes, schedule dumps {} bytes, byte-identical: {same}",
            files[0].0.len(),
            files[0].1.len()
        ),
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 11] = [
        ("oracle equivalence", criterion_1),
        ("slot machine fuzz", criterion_2),
        ("inter-ciphertext HOC", criterion_3),
        ("packing optimality", criterion_4),
        ("rotation worst case", criterion_5),
        ("optimization semantics", criterion_6),
        ("node order effectiveness", criterion_7),
        ("node order overhead", criterion_8),
        ("mode selection", criterion_9),
        ("CPOO threshold sweep", criterion_10),
        ("determinism", criterion_11),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let r = check();
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{tag}] {name}: {}", r.detail);
        failed += usize::from(!r.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

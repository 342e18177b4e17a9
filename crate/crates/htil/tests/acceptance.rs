//! Acceptance suite. Prints one line per criterion and exits nonzero on any failure.
//!
//! Run with `cargo test -p htil --test acceptance`.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use htil::config::Config;
use htil::dataset::Dataset;
use htil::experiment::{compare_mode, task_sequence, til_mode, til_run, til_seed};
use htil::report::{RunReport, StageMetrics};
use htil_core::plasticity::LedgerState;
use htil_core::rng::{stream, Stream};
use htil_core::tensor::{batch_norm, conv2d_forward};
use htil_core::{
    backward_transfer, forgetting_measure, intransigence, AccuracyMatrix, BatchNormState, BnMode, ConvSpec,
    HebbianConvLayer, HebbianParams, LinearHead, PlasticityConfig, PlasticityLedger, RawUpdate, Tensor, TilRun,
    UpdateNorm,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Option<Outcome>);

enum Verdict {
    Pass,
    Fail,
    Skip,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// 1. metrics

struct MatrixOracle {
    a: Vec<Vec<f64>>,
}

impl MatrixOracle {
    fn at(&self, l: usize, j: usize) -> f64 {
        self.a[l - 1][j - 1]
    }

    fn fm(&self, k: usize) -> f64 {
        let mut total = 0.0;
        for j in 1..k {
            let mut peak = f64::NEG_INFINITY;
            for i in j..=k {
                if self.at(i, j) > peak {
                    peak = self.at(i, j);
                }
            }
            total += peak - self.at(k, j);
        }
        total / (k - 1) as f64
    }

    fn bwt(&self, k: usize) -> f64 {
        let mut total = 0.0;
        for j in 1..k {
            total += self.at(k, j) - self.at(j, j);
        }
        total / (k - 1) as f64
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut compared = 0;
    for case in 0..1000 {
        let tasks = rng.random_range(1..=8);
        let rows: Vec<Vec<f64>> = (1..=tasks)
            .map(|n| {
                (0..n)
                    .map(|_| {
                        if rng.random_bool(0.3) {
                            rng.random_range(0..=10) as f64 / 10.0
                        } else {
                            rng.random_range(0.0..=1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let oracle = MatrixOracle { a: rows.clone() };
        let m = AccuracyMatrix::from_rows(rows).map_err(|e| e.to_string())?;
        for k in 1..=tasks {
            if k >= 2 {
                let fm = forgetting_measure(&m, k).map_err(|e| e.to_string())?;
                let bwt = backward_transfer(&m, k).map_err(|e| e.to_string())?;
                ensure(fm.to_bits() == oracle.fm(k).to_bits(), || {
                    format!("matrix {case} FM at {k}: {fm} vs {}", oracle.fm(k))
                })?;
                ensure(bwt.to_bits() == oracle.bwt(k).to_bits(), || {
                    format!("matrix {case} BWT at {k}: {bwt} vs {}", oracle.bwt(k))
                })?;
                compared += 2;
            }
            let joint = rng.random_range(0.0..=1.0);
            let im = intransigence(&m, k, Some(joint)).map_err(|e| e.to_string())?;
            ensure(im.to_bits() == (joint - oracle.at(k, k)).to_bits(), || {
                format!("matrix {case} IM at {k}")
            })?;
            compared += 1;
        }
    }
    Ok(format!("1000 matrices, {compared} values bitwise equal"))
}

// 2. numerics

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn loop_conv(x: &Tensor, w: &Tensor, s: &ConvSpec) -> Vec<f64> {
    let [b, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (oh, ow) = s.output_size(h, wd).unwrap();
    let mut out = vec![0.0; b * s.out_channels * oh * ow];
    for n in 0..b {
        for co in 0..s.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..s.kernel_h {
                            for kx in 0..s.kernel_w {
                                let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                                let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * s.kernel_h + ky) * s.kernel_w + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((n * s.out_channels + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn conv_case(x: &Tensor, k: &Tensor, spec: &ConvSpec) -> Result<f64, String> {
    let fast = conv2d_forward(x, k, spec).map_err(|e| e.to_string())?;
    let slow = loop_conv(x, k, spec);
    ensure(fast.len() == slow.len(), || format!("{spec:?}: length {} vs {}", fast.len(), slow.len()))?;
    Ok(fast.data().iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut worst_conv: f64 = 0.0;
    let mut shapes = 0;
    while shapes < 50 {
        let spec = ConvSpec {
            in_channels: rng.random_range(1..=4),
            out_channels: rng.random_range(1..=5),
            kernel_h: rng.random_range(1..=4),
            kernel_w: rng.random_range(1..=4),
            stride: rng.random_range(1..=3),
            padding: rng.random_range(0..=2),
        };
        let (h, w) = (rng.random_range(1..=10), rng.random_range(1..=10));
        if spec.output_size(h, w).is_err() {
            continue;
        }
        let batch = rng.random_range(1..=3);
        let x = random_tensor(&mut rng, vec![batch, spec.in_channels, h, w], 2.0);
        let k = random_tensor(&mut rng, spec.weight_shape(), 1.0);
        worst_conv = worst_conv.max(conv_case(&x, &k, &spec)?);
        shapes += 1;
    }
    let spec = ConvSpec::same(3, 4, 3);
    let x = random_tensor(&mut rng, vec![1, 3, 8, 8], 1.0);
    let k = random_tensor(&mut rng, spec.weight_shape(), 1.0);
    worst_conv = worst_conv.max(conv_case(&x, &k, &spec)?);
    ensure(worst_conv < 1e-9, || format!("conv differs by {worst_conv:e}"))?;

    let h = 1e-5;
    let mut worst_grad: f64 = 0.0;
    for _ in 0..100 {
        let classes = rng.random_range(2..=6);
        let dim = rng.random_range(1..=8);
        let w: Vec<f64> = (0..classes * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let label = rng.random_range(0..classes);
        let loss = |w: &[f64], b: &[f64]| {
            LinearHead::from_parts(0, classes, dim, w.to_vec(), b.to_vec())
                .and_then(|head| head.loss_and_gradient(&f, label))
                .map(|r| r.0)
                .map_err(|e| e.to_string())
        };
        let head = LinearHead::from_parts(0, classes, dim, w.clone(), b.clone()).map_err(|e| e.to_string())?;
        let (_, gw, gb) = head.loss_and_gradient(&f, label).map_err(|e| e.to_string())?;
        let mut params = w.clone();
        params.extend_from_slice(&b);
        let analytic: Vec<f64> = gw.iter().chain(&gb).copied().collect();
        for (i, &g) in analytic.iter().enumerate() {
            let (mut up, mut down) = (params.clone(), params.clone());
            up[i] += h;
            down[i] -= h;
            let (wu, bu) = up.split_at(w.len());
            let (wd, bd) = down.split_at(w.len());
            let numeric = (loss(wu, bu)? - loss(wd, bd)?) / (2.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-3);
            worst_grad = worst_grad.max(rel);
        }
    }
    ensure(worst_grad < 1e-6, || format!("head gradient relative error {worst_grad:e}"))?;

    let (mut worst_mean, mut worst_var): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let (b, c, hh, ww) = (rng.random_range(2..=4), rng.random_range(1..=3), 3, 4);
        let offset = rng.random_range(-5.0..5.0);
        let mut x = random_tensor(&mut rng, vec![b, c, hh, ww], 10.0);
        x.data_mut().iter_mut().for_each(|v| *v += offset);
        let y = batch_norm(&x, &mut BatchNormState::new(c), BnMode::Train).map_err(|e| e.to_string())?;
        let plane = hh * ww;
        for ch in 0..c {
            let vals: Vec<f64> = (0..b)
                .flat_map(|n| y.data()[(n * c + ch) * plane..(n * c + ch + 1) * plane].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            worst_mean = worst_mean.max(mean.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }
    }
    ensure(worst_mean < 1e-7 && worst_var < 1e-5, || {
        format!("batch norm |mean| {worst_mean:e}, |var-1| {worst_var:e}")
    })?;
    Ok(format!(
        "conv max err {worst_conv:.1e} over 51 shapes, grad rel err {worst_grad:.1e}, bn |mean| {worst_mean:.1e} |var-1| {worst_var:.1e}"
    ))
}

// 3. modulation rule

const ALPHA: f64 = 0.15;
const BETA: f64 = 0.9;

fn kp_config() -> PlasticityConfig {
    PlasticityConfig {
        top_fraction: 0.6,
        alpha: ALPHA,
        beta: BETA,
        interval: 1,
        norm: UpdateNorm::L1,
    }
}

/// A ledger after one finished task with the given thresholds and protected set.
fn hand_ledger(avg_change: Vec<f64>, protected: Vec<usize>) -> Result<PlasticityLedger, String> {
    let k = avg_change.len();
    let state = LedgerState {
        avg_change,
        protected,
        tasks_finalized: 1,
        change_sum: vec![0.0; k],
        cum_activation: vec![0.0; k],
        intervals: 0,
        snapshot: None,
        pending_activation: vec![0.0; k],
        pending_batches: 0,
    };
    PlasticityLedger::from_state(k, kp_config(), state).map_err(|e| e.to_string())
}

/// Kernels of two cells each; `kernels[j]` is kernel j's raw update.
fn raw(kernels: &[[f64; 2]]) -> RawUpdate {
    let data = kernels.iter().flatten().copied().collect();
    RawUpdate {
        delta: Tensor::new(vec![kernels.len(), 1, 1, 2], data).unwrap(),
    }
}

fn expect_rule(
    name: &str,
    ledger: &PlasticityLedger,
    update: &RawUpdate,
    cond: bool,
    factors: &[f64],
) -> Result<(), String> {
    ensure(ledger.modulation_condition(update) == cond, || format!("{name}: condition should be {cond}"))?;
    let got = ledger.scale_factors(update);
    ensure(got == factors, || format!("{name}: factors {got:?}, expected {factors:?}"))?;
    let out = ledger.modulate(update);
    for (j, &f) in factors.iter().enumerate() {
        for (a, b) in out.kernel(j).iter().zip(update.kernel(j)) {
            ensure(a.to_bits() == (b * f).to_bits(), || format!("{name}: kernel {j} not scaled by {f}"))?;
        }
    }
    Ok(())
}

fn cell(v: f64) -> Tensor {
    Tensor::new(vec![1, 1, 1, 1], vec![v]).unwrap()
}

fn modulation_rule() -> Outcome {
    let e = |e: htil_core::Error| e.to_string();

    // Weight-change tracking and its running mean.
    let mut ledger = PlasticityLedger::new(1, kp_config());
    ledger.begin_task(&cell(1.0)).map_err(e)?;
    ledger.track_interval(&cell(3.0), &cell(1.0)).map_err(e)?;
    ensure(ledger.state().change_sum == [2.0], || format!("recorded {:?}", ledger.state().change_sum))?;
    ledger.track_interval(&cell(2.0), &cell(1.0)).map_err(e)?;
    ledger.finalize_task().map_err(e)?;
    ensure(ledger.avg_change() == [1.5], || format!("threshold {:?}", ledger.avg_change()))?;
    let mut fresh = PlasticityLedger::new(1, kp_config());
    ensure(fresh.finalize_task().is_err(), || "finalize with nothing tracked succeeded".into())?;

    // Selection by cumulative activation: A = [3, 1, 2] keeps {0, 2}.
    let mut ledger = PlasticityLedger::new(3, kp_config());
    let w = Tensor::zeros(vec![3, 1, 1, 1]);
    ledger.begin_task(&w).map_err(e)?;
    ledger
        .track_interval(&w, &Tensor::new(vec![1, 3, 1, 1], vec![3.0, 1.0, 2.0]).unwrap())
        .map_err(e)?;
    ledger.finalize_task().map_err(e)?;
    ensure(ledger.protected() == [0, 2], || format!("protected {:?}", ledger.protected()))?;
    ensure(kp_config().protected_count(10) == 6, || "k = 0.6 of 10 kernels is not 6".into())?;

    // Condition and the three factor branches.
    let none = hand_ledger(vec![1.0; 3], vec![]).map_err(|m| format!("empty set: {m}"))?;
    expect_rule("empty set", &none, &raw(&[[9.0, 9.0], [9.0, 9.0], [9.0, 9.0]]), false, &[1.0; 3])?;

    let one = hand_ledger(vec![1.0; 3], vec![0])?;
    let over = raw(&[[1.5, -0.5], [0.3, 0.2], [-4.0, 4.0]]);
    expect_rule("protected over threshold", &one, &over, true, &[BETA, ALPHA, ALPHA])?;
    let scaled: f64 = one.modulate(&over).kernel(0).iter().map(|v| v.abs()).sum();
    ensure((scaled - 1.8).abs() < 1e-12, || format!("kernel 0 norm {scaled}, expected 1.8"))?;

    let under = raw(&[[0.25, -0.25], [50.0, 50.0], [-50.0, 50.0]]);
    expect_rule("protected under threshold", &one, &under, false, &[1.0; 3])?;
    let equal = raw(&[[0.5, 0.5], [50.0, 50.0], [0.0, 0.0]]);
    expect_rule("norm equal to threshold", &one, &equal, false, &[1.0; 3])?;

    let two = hand_ledger(vec![1.0; 3], vec![0, 1])?;
    let mixed = raw(&[[2.0, 0.0], [0.25, 0.25], [0.1, 0.1]]);
    expect_rule("guard falls through", &two, &mixed, true, &[BETA, 1.0, ALPHA])?;

    let untrained = PlasticityLedger::new(2, kp_config());
    let big = raw(&[[9.0, 9.0], [9.0, 9.0]]);
    expect_rule("first task", &untrained, &big, false, &[1.0, 1.0])?;
    Ok("tracking, selection, condition and all three branches exact".into())
}

// 4. Hebbian convergence

const DIM: usize = 8;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn clustered(rng: &mut ChaCha8Rng, per_cluster: usize) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::new();
    while centers.len() < 3 {
        let mut c: Vec<f64> = (0..DIM).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for o in &centers {
            let d: f64 = o.iter().zip(&c).map(|(a, b)| a * b).sum();
            c.iter_mut().zip(o).for_each(|(x, y)| *x -= d * y);
        }
        centers.push(unit(c));
    }
    let mut points = Vec::new();
    for c in &centers {
        for _ in 0..per_cluster {
            let noise: Vec<f64> = (0..DIM)
                .map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
                .collect();
            points.push(unit(c.iter().zip(&noise).map(|(a, b)| a + b).collect()));
        }
    }
    points.shuffle(rng);
    points
}

fn kmeans(points: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[0].clone()];
    while centroids.len() < k {
        let nearest = |p: &Vec<f64>| centroids.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min);
        let far = points.iter().max_by(|a, b| nearest(a).total_cmp(&nearest(b))).unwrap().clone();
        centroids.push(far);
    }
    for _ in 0..100 {
        let mut sums = vec![vec![0.0; DIM]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let i = (0..k)
                .min_by(|&i, &j| dist2(p, &centroids[i]).total_cmp(&dist2(p, &centroids[j])))
                .unwrap();
            counts[i] += 1;
            sums[i].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for i in 0..k {
            if counts[i] > 0 {
                centroids[i] = sums[i].iter().map(|s| s / counts[i] as f64).collect();
            }
        }
    }
    centroids
}

fn hebbian_convergence() -> Outcome {
    let seed = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = clustered(&mut rng, 300);
    let centroids = kmeans(&points, 3);
    let spec = ConvSpec {
        in_channels: DIM,
        out_channels: 3,
        kernel_h: 1,
        kernel_w: 1,
        stride: 1,
        padding: 0,
    };
    let params = HebbianParams {
        base_lr: 1.0,
        temperature: 0.2,
        ..HebbianParams::default()
    };
    let radius = params.radius;
    let e = |e: htil_core::Error| e.to_string();
    let mut layer = HebbianConvLayer::new(spec, params, &mut stream(seed, Stream::ExtractorInit)).map_err(e)?;
    for p in &points {
        let x = Tensor::new(vec![1, DIM, 1, 1], p.clone()).unwrap();
        let (pre, post) = layer.forward(&x).map_err(e)?;
        let update = layer.compute_raw_update(&x, &pre, &post).map_err(e)?;
        layer.apply_update(&update).map_err(e)?;
    }
    let best: Vec<f64> = (0..3)
        .map(|j| centroids.iter().map(|c| cosine(layer.kernel(j), c)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let norms = layer.kernel_norms();
    ensure(best.iter().all(|&c| c > 0.9), || format!("best cosines {best:.4?}"))?;
    ensure(norms.iter().all(|&n| n <= radius * 1.1), || format!("kernel norms {norms:.4?}"))?;
    Ok(format!("cosines {best:.3?}, norms {norms:.3?}"))
}

// 5. KP effect

fn arm_means(report: &RunReport, kp: bool, f: fn(&StageMetrics) -> Option<f64>) -> Result<Vec<f64>, String> {
    report
        .mean_by_stage(kp, f)
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| "a stage has no value".into())
}

fn final_mean(report: &RunReport, kp: bool, f: fn(&StageMetrics) -> Option<f64>) -> Result<f64, String> {
    report
        .mean_by_stage(kp, f)
        .last()
        .copied()
        .flatten()
        .ok_or_else(|| "final stage has no value".into())
}

fn fm_pairs(off: &RunReport, on: &RunReport) -> Result<(Vec<f64>, Vec<f64>), String> {
    let fm = |r: &RunReport, kp| -> Result<Vec<f64>, String> {
        Ok(arm_means(r, kp, |s| s.fm.or(Some(f64::NAN)))?.into_iter().skip(1).collect())
    };
    Ok((fm(off, false)?, fm(on, true)?))
}

fn pct(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:.1}", 100.0 * x)).collect();
    format!("[{}]", parts.join(", "))
}

fn kp_effect() -> Outcome {
    let config = Config::load(&repo_root().join("configs/desk-synthetic.toml")).map_err(|e| e.to_string())?;
    let dataset = Dataset::load(&config).map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = (0..5).collect();
    let off = til_mode(&config, &dataset, &seeds, false, false, None).map_err(|e| e.to_string())?;
    let on = til_mode(&config, &dataset, &seeds, true, false, None).map_err(|e| e.to_string())?;
    ensure(off.til.len() == 5 && on.til.len() == 5, || "missing seeds".into())?;
    ensure(off.til.iter().chain(&on.til).all(|t| t.error.is_none()), || "a run failed".into())?;
    let (fm_off, fm_on) = fm_pairs(&off, &on)?;
    let bwt_off = final_mean(&off, false, |s| s.bwt)?;
    let bwt_on = final_mean(&on, true, |s| s.bwt)?;
    let detail = format!(
        "FM no-KP {} KP {}, final BWT no-KP {:.1} KP {:.1}",
        pct(&fm_off),
        pct(&fm_on),
        100.0 * bwt_off,
        100.0 * bwt_on
    );
    ensure(fm_on.iter().zip(&fm_off).all(|(a, b)| a < b), || detail.clone())?;
    ensure(bwt_on.abs() < bwt_off.abs(), || detail.clone())?;
    Ok(detail)
}

// 6. protocol

fn parse_table1(csv: &str) -> Vec<(bool, usize, f64)> {
    csv.lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            (f[0] == "til").then(|| (f[1] == "true", f[2].parse().unwrap(), f[3].parse().unwrap()))
        })
        .collect()
}

fn protocol() -> Outcome {
    let e = |e: htil::Error| e.to_string();
    let config = common::tiny_config();
    let dataset = Dataset::load(&config).map_err(e)?;
    let data = dataset.task_data();

    for seed in 0..3 {
        let (off, _) = til_seed(&config, &data, seed, false, None).map_err(e)?;
        let (on, _) = til_seed(&config, &data, seed, true, None).map_err(e)?;
        ensure(off.matrix[0] == on.matrix[0], || format!("seed {seed}: task-0 rows differ"))?;
    }

    let mut run = TilRun::new(config.harness(1, true), task_sequence(&config, 1).map_err(e)?).map_err(|x| x.to_string())?;
    let mut before: Vec<Vec<usize>> = run.ledgers().iter().map(|l| l.protected().to_vec()).collect();
    while !run.is_done() {
        run.step(&data).map_err(|x| x.to_string())?;
        let after: Vec<Vec<usize>> = run.ledgers().iter().map(|l| l.protected().to_vec()).collect();
        for (b, (old, new)) in before.iter().zip(&after).enumerate() {
            ensure(old.iter().all(|k| new.contains(k)), || {
                format!("block {b}: protected set shrank from {old:?} to {new:?}")
            })?;
        }
        before = after;
    }

    let (full, full_run) = til_seed(&config, &data, 2, true, None).map_err(e)?;
    let mut partial = TilRun::new(config.harness(2, true), task_sequence(&config, 2).map_err(e)?).map_err(|x| x.to_string())?;
    for _ in 1..config.tasks.sizes.len() {
        partial.step(&data).map_err(|x| x.to_string())?;
        let bytes = htil::checkpoint::Checkpoint {
            config: config.clone(),
            seed: 2,
            kp_enabled: true,
            run: partial.clone(),
        }
        .to_bytes();
        let restored = htil::checkpoint::Checkpoint::from_bytes(&bytes).map_err(e)?;
        let (resumed, resumed_run) = til_run(&restored.config, &data, restored.run, None);
        ensure(resumed.matrix == full.matrix && resumed_run == full_run, || {
            format!("resume after stage {} diverged", partial.next_task())
        })?;
    }

    let desk = Config::load(&repo_root().join("configs/desk-synthetic.toml")).map_err(e)?;
    ensure(desk.run.seeds == 10 && Config::default().run.seeds == 10, || "default seed count is not 10".into())?;
    let seeds: Vec<u64> = (0..10).collect();
    let report = compare_mode(&config, &dataset, &seeds).map_err(e)?;
    for kp in [false, true] {
        let arm: Vec<_> = report.til.iter().filter(|t| t.kp_enabled == kp).collect();
        ensure(arm.len() == 10, || format!("kp {kp}: {} seed records", arm.len()))?;
    }
    ensure(report.joint.len() == 10, || format!("{} joint records", report.joint.len()))?;
    let rows = parse_table1(&report.table1_csv());
    ensure(rows.len() == 2 * config.tasks.sizes.len(), || format!("{} table rows", rows.len()))?;
    for (kp, stage, value) in rows {
        let arm: Vec<f64> = report
            .til
            .iter()
            .filter(|t| t.kp_enabled == kp)
            .map(|t| t.stages[stage].overall)
            .collect();
        let mean = 100.0 * arm.iter().sum::<f64>() / arm.len() as f64;
        ensure((mean - value).abs() <= 5e-5, || format!("kp {kp} stage {stage}: table {value} vs mean {mean}"))?;
    }
    Ok("task-0 rows equal, protected sets grow, resume exact, 10-seed table matches".into())
}

// 7. full-scale stretch

fn esc_stretch() -> Option<Outcome> {
    let root = repo_root();
    if !root.join("data/ESC-50/meta/esc50.csv").exists() {
        return None;
    }
    Some((|| {
        let config = Config::load(&root.join("configs/paper-esc50.toml")).map_err(|e| e.to_string())?;
        let dataset = Dataset::load(&config).map_err(|e| e.to_string())?;
        let report = compare_mode(&config, &dataset, &config.seeds()).map_err(|e| e.to_string())?;
        let overall_off = final_mean(&report, false, |s| Some(s.overall))?;
        let overall_on = final_mean(&report, true, |s| Some(s.overall))?;
        let (fm_off, fm_on) = fm_pairs(&report, &report)?;
        let detail = format!(
            "final overall no-KP {:.1} KP {:.1}, FM no-KP {} KP {}",
            100.0 * overall_off,
            100.0 * overall_on,
            pct(&fm_off),
            pct(&fm_on)
        );
        ensure(100.0 * (overall_on - overall_off) >= 3.0, || detail.clone())?;
        ensure(fm_on.iter().zip(&fm_off).all(|(a, b)| a < b), || detail.clone())?;
        Ok(detail)
    })())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("metric oracles", Some(Duration::from_secs(5)), || Some(metric_oracles())),
        ("numerics oracles", Some(Duration::from_secs(30)), || Some(numerics())),
        ("modulation rule", Some(Duration::from_secs(1)), || Some(modulation_rule())),
        ("hebbian convergence", Some(Duration::from_secs(60)), || Some(hebbian_convergence())),
        ("kp effect", Some(Duration::from_secs(600)), || Some(kp_effect())),
        ("protocol invariants", None, || Some(protocol())),
        ("esc-50 full scale", None, esc_stretch),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let over = limit.is_some_and(|l| took > l);
        let (verdict, detail) = match outcome {
            None => (Verdict::Skip, "dataset not present under data/ESC-50".to_string()),
            Some(Ok(d)) if over => (Verdict::Fail, format!("{d}; too slow")),
            Some(Ok(d)) => (Verdict::Pass, d),
            Some(Err(d)) => (Verdict::Fail, d),
        };
        let tag = match verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        let budget = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
        println!("{tag} {}. {name} ({:.2}s{budget}): {detail}", i + 1, took.as_secs_f64());
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

//! Acceptance checks. Criteria run one after another inside a single test so
//! their timings do not compete for cores; each prints one PASS/FAIL line.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use comerge_core::dynamics::{flat_recover, step, ControlInput, FlatSample, VehicleParams, VehicleState};
use comerge_core::geometry::{obb_iou, OrientedBox};
use comerge_core::harness::dataset::{from_records, TrackRecord, DATASET_HZ};
use comerge_core::harness::eval::{evaluate_open_loop, ConstVelPredictor, EchoPredictor};
use comerge_core::harness::reflect::write_records;
use comerge_core::harness::{reflection_records, run_episode, run_episode_with, RunConfig};
use comerge_core::metrics::{
    collision_rate, comfort_score, driving_score, efficiency_score, l2_error, rmse, safety_score, ttc, ComfortLimits,
    ComfortSample, ScoreWeights,
};
use comerge_core::perception::{cross_attention_align, FeatureMatrix};
use comerge_core::planning::tokenizer::VOCAB;
use comerge_core::planning::{detokenize_trajectory, mean_lm_loss, tokenize_trajectory, TokenSequence};
use comerge_core::reflection::{reflection_loss, FailureKind};
use comerge_core::scenario::AgentId;
use comerge_core::simulation::{EventKind, Outcome};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got}, expected {want} (tol {tol:e})"))
}

// 1. Flatness round trip on a simulated path.

fn flatness_max_error(dt: f64) -> Result<f64, String> {
    let params = VehicleParams::default();
    let steps = (10.0 / dt).round() as usize;
    let control = |t: f64| ControlInput::new(8.0 + 2.0 * (0.5 * t).sin(), 0.2 * (0.8 * t).sin());
    let mut states = vec![VehicleState::new(0.0, 0.0, 0.3, 0.0)];
    for k in 0..steps {
        let s = step(&states[k], &control(k as f64 * dt), &params, dt).map_err(|e| e.to_string())?;
        states.push(s);
    }
    let pos = |k: usize, i: usize| if i == 0 { states[k].x } else { states[k].y };
    let mut worst: f64 = 0.0;
    for k in 2..steps - 2 {
        let mut d1 = [0.0; 2];
        let mut d2 = [0.0; 2];
        let mut d3 = [0.0; 2];
        for i in 0..2 {
            d1[i] = (pos(k + 1, i) - pos(k - 1, i)) / (2.0 * dt);
            d2[i] = (pos(k + 1, i) - 2.0 * pos(k, i) + pos(k - 1, i)) / (dt * dt);
            d3[i] = (pos(k + 2, i) - 2.0 * pos(k + 1, i) + 2.0 * pos(k - 1, i) - pos(k - 2, i)) / (2.0 * dt.powi(3));
        }
        let r = flat_recover(
            &FlatSample {
                position: [pos(k, 0), pos(k, 1)],
                d1,
                d2,
                d3,
            },
            &params,
        )
        .map_err(|e| e.to_string())?;
        let c = control(k as f64 * dt);
        let dalpha = comerge_core::dynamics::normalize_angle(r.alpha - states[k].alpha);
        for e in [r.u - c.u, dalpha, r.beta - states[k].beta, r.omega - c.omega] {
            worst = worst.max(e.abs());
        }
    }
    Ok(worst)
}

fn flatness() -> Check {
    let coarse = flatness_max_error(0.01)?;
    let fine = flatness_max_error(0.001)?;
    ensure(coarse < 1e-2, || format!("dt=0.01 max error {coarse:.3e}"))?;
    ensure(fine < 1e-3, || format!("dt=0.001 max error {fine:.3e}"))?;
    Ok(format!("max error {coarse:.2e} at dt=0.01, {fine:.2e} at dt=0.001"))
}

// 2. Order of the integrator on a circular arc. A whole lap integrates a
// periodic integrand, which the integrator gets right to rounding, so the
// error is taken against the closed-form arc after three quarters of a lap.

fn arc_error(steps: usize) -> Result<f64, String> {
    let params = VehicleParams {
        wheelbase: 2.5,
        length: 4.5,
        ..VehicleParams::default()
    };
    let beta: f64 = 0.2;
    let radius = params.wheelbase / beta.tan();
    let angle = 1.5 * PI;
    let dt = angle * radius / steps as f64;
    let mut s = VehicleState::new(0.0, 0.0, 0.0, beta);
    for _ in 0..steps {
        s = step(&s, &ControlInput::new(1.0, 0.0), &params, dt).map_err(|e| e.to_string())?;
    }
    Ok((s.x - radius * angle.sin()).hypot(s.y - radius * (1.0 - angle.cos())))
}

fn integrator() -> Check {
    let coarse = arc_error(40)?;
    let fine = arc_error(80)?;
    let ratio = coarse / fine;
    ensure((12.0..=20.0).contains(&ratio), || format!("ratio {ratio:.3} ({coarse:.3e} / {fine:.3e})"))?;
    Ok(format!("error ratio {ratio:.2} between dt and dt/2"))
}

// 3. Box overlap against sampling.

fn monte_carlo_iou(a: &OrientedBox, b: &OrientedBox, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    // Uniform points in `a`; the hit fraction estimates |a ∩ b| / |a|.
    let (s, c) = a.heading.sin_cos();
    let mut hits = 0usize;
    for _ in 0..samples {
        let u = (rng.random::<f64>() - 0.5) * a.length;
        let v = (rng.random::<f64>() - 0.5) * a.width;
        let p = [a.center[0] + u * c - v * s, a.center[1] + u * s + v * c];
        if b.contains(p) {
            hits += 1;
        }
    }
    let inter = a.area() * hits as f64 / samples as f64;
    inter / (a.area() + b.area() - inter)
}

fn obb() -> Check {
    let unit = OrientedBox::new([0.0, 0.0], 0.0, 2.0, 2.0);
    close("identical", obb_iou(&unit, &unit).map_err(|e| e.to_string())?, 1.0, 0.0)?;
    let far = OrientedBox::new([10.0, 0.0], 0.0, 2.0, 2.0);
    close("disjoint", obb_iou(&unit, &far).map_err(|e| e.to_string())?, 0.0, 0.0)?;
    let shifted = OrientedBox::new([1.0, 0.0], 0.0, 2.0, 2.0);
    close("half overlap", obb_iou(&unit, &shifted).map_err(|e| e.to_string())?, 1.0 / 3.0, 1e-12)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let mut random_box = |spread: f64| {
            OrientedBox::new(
                [rng.random_range(-spread..spread), rng.random_range(-spread..spread)],
                rng.random_range(-PI..PI),
                rng.random_range(1.0..5.0),
                rng.random_range(0.5..3.0),
            )
        };
        let a = random_box(0.5);
        let b = random_box(2.0);
        let exact = obb_iou(&a, &b).map_err(|e| e.to_string())?;
        let sampled = monte_carlo_iou(&a, &b, 1_000_000, &mut rng);
        worst = worst.max((exact - sampled).abs());
    }
    ensure(worst < 1e-2, || format!("max deviation from sampling {worst:.3e}"))?;
    Ok(format!("exact cases hold; max deviation from sampling {worst:.2e} over 200 pairs"))
}

// 4. Metric values.

fn metric_values() -> Check {
    let tol = 1e-12;
    let e = |r: Result<f64, comerge_core::metrics::MetricError>| r.map_err(|e| e.to_string());
    close("ES ahead", e(efficiency_score(10.0, 8.0, 11.11, 0.0))?, 1.0, tol)?;
    close("ES half", e(efficiency_score(4.0, 8.0, 11.11, 0.0))?, 0.5, tol)?;
    close("ES stopped", e(efficiency_score(0.0, 8.0, 11.11, 0.0))?, 0.0, tol)?;

    let limits = ComfortLimits::default();
    let calm = ComfortSample {
        accel_lon: 1.0,
        accel_lat: 0.5,
        jerk_lon: 0.5,
        jerk_lat: 0.1,
    };
    close("CS calm", comfort_score(&[calm], &limits), 1.0, tol)?;
    let harsh = ComfortSample {
        accel_lon: 2.0 * limits.accel_lon,
        ..calm
    };
    close("CS one doubled", comfort_score(&[harsh], &limits), 0.875, tol)?;
    // two sub-scores at 1, two at limit / peak -> 0 as the peak grows
    let extreme = ComfortSample {
        accel_lon: 0.0,
        accel_lat: 0.0,
        jerk_lon: 1e300,
        jerk_lat: 1e300,
    };
    close("CS (1,1,0,0)", comfort_score(&[extreme], &limits), 0.5, tol)?;

    close("TTC", ttc(50.0, 20.0, 10.0), 5.0, tol)?;
    ensure(ttc(50.0, 10.0, 10.0).is_infinite(), || "TTC not closing".into())?;
    ensure(ttc(50.0, 8.0, 10.0).is_infinite(), || "TTC opening".into())?;
    close("TTC touching", ttc(0.0, 12.0, 10.0), 0.0, tol)?;

    close("SS above", e(safety_score(10.0, 5.0))?, 1.0, tol)?;
    close("SS half", e(safety_score(2.5, 5.0))?, 0.5, tol)?;
    close("SS infinite", e(safety_score(f64::INFINITY, 5.0))?, 1.0, tol)?;

    let w = ScoreWeights::default();
    close("DS", driving_score(0.8, 0.4, 1.0, &w, 0, 0), 0.8, tol)?;
    close("DS one collision", driving_score(0.8, 0.4, 1.0, &w, 1, 0), 0.48, tol)?;
    close("DS zero", driving_score(0.0, 0.0, 0.0, &w, 0, 0), 0.0, tol)?;

    let truth = vec![vec![[1.0, 2.0], [3.0, 4.0]]];
    close("L2 equal", e(l2_error(&truth, &truth))?, 0.0, tol)?;
    close("L2 3-4-5", e(l2_error(&[vec![[3.0, 4.0]]], &[vec![[0.0, 0.0]]]))?, 5.0, tol)?;
    close(
        "L2 mean",
        e(l2_error(&[vec![[5.0, 0.0]], vec![[0.0, 0.0]]], &[vec![[0.0, 0.0]], vec![[0.0, 0.0]]]))?,
        2.5,
        tol,
    )?;

    close("rate zero", e(collision_rate(&[0, 0], 4.0))?, 0.0, tol)?;
    close("rate one", e(collision_rate(&[2], 4.0))?, 0.5, tol)?;
    close("rate two", e(collision_rate(&[2, 0], 4.0))?, 0.25, tol)?;

    close("RMSE equal", e(rmse(&[1.0, 2.0], &[1.0, 2.0]))?, 0.0, tol)?;
    close("RMSE offset", e(rmse(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]))?, 1.0, tol)?;
    close("RMSE sqrt2", e(rmse(&[0.0, 2.0], &[0.0, 0.0]))?, 2f64.sqrt(), tol)?;
    Ok("ES, CS, TTC, SS, DS, L2, collision rate and RMSE values reproduced".into())
}

// 5. Tokenizer round trip.

fn tokenizer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-500.0..500.0), rng.random_range(-50.0..50.0)])
            .collect();
        let back = detokenize_trajectory(&tokenize_trajectory(&pts).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(back.len() == pts.len(), || "length changed".into())?;
        for (a, b) in pts.iter().zip(&back) {
            worst = worst.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
        let grid: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-50_000i64..50_000) as f64 / 100.0,
                    rng.random_range(-5_000i64..5_000) as f64 / 100.0,
                ]
            })
            .collect();
        let back = detokenize_trajectory(&tokenize_trajectory(&grid).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(back == grid, || format!("grid points changed: {grid:?} -> {back:?}"))?;
    }
    ensure(worst <= 0.005, || format!("max error {worst}"))?;
    Ok(format!("max error {worst:.4} m; grid inputs exact"))
}

// 6. Baseline closed loop.

fn closed_loop() -> Check {
    let mut ramp_vehicles = 0;
    for seed in 0..20u64 {
        let mut cfg = RunConfig::with_defaults();
        cfg.run.seed = seed;
        let first = run_episode(&cfg).map_err(|e| e.to_string())?;
        let again = run_episode(&cfg).map_err(|e| e.to_string())?;
        ensure(first.to_jsonl() == again.to_jsonl(), || format!("seed {seed}: traces differ on re-run"))?;
        let collisions = first
            .ticks
            .iter()
            .flat_map(|t| &t.events)
            .filter(|e| e.kind == EventKind::Collision)
            .count();
        ensure(collisions == 0, || format!("seed {seed}: {collisions} collision events"))?;
        let net = cfg.scenario.network().map_err(|e| e.to_string())?;
        for a in first.header.agents.iter().filter(|a| a.route.is_ramp_route(&net)) {
            ramp_vehicles += 1;
            let outcome = first.footer.outcomes.iter().find(|(id, _)| *id == a.id).map(|(_, o)| *o);
            ensure(outcome == Some(Outcome::MergeCompleted), || {
                format!("seed {seed}: ramp vehicle {} ended with {outcome:?}", a.id)
            })?;
        }
    }
    Ok(format!("20 seeds reproducible, no collisions, {ramp_vehicles} ramp vehicles merged"))
}

// 7. Communication ablation.

fn ablation() -> Check {
    let enabled = common::load_fixture("fixtures/comm_ablation.toml");
    let mut disabled = enabled.clone();
    disabled.channel.enabled = false;
    let run = |cfg: &RunConfig| run_episode_with(cfg, common::with_pushy(cfg, AgentId(1), common::PUSHY_MERGE_AT));
    let on = run(&enabled).map_err(|e| e.to_string())?.footer.metrics;
    let off = run(&disabled).map_err(|e| e.to_string())?.footer.metrics;
    ensure(off.ss < on.ss, || format!("SS off {} vs on {}", off.ss, on.ss))?;
    ensure(off.ds < on.ds, || format!("DS off {} vs on {}", off.ds, on.ds))?;
    ensure(on.low_ttc_steps == 0 && off.low_ttc_steps > 0, || {
        format!("low-TTC steps on {} off {}", on.low_ttc_steps, off.low_ttc_steps)
    })?;
    Ok(format!(
        "SS {:.4} -> {:.4}, DS {:.4} -> {:.4}, low-TTC steps 0 -> {} without messages",
        on.ss, off.ss, on.ds, off.ds, off.low_ttc_steps
    ))
}

// 8. Reflection pipeline.

fn reflection() -> Check {
    let cfg = common::load_fixture("fixtures/reflection.toml");
    let trace = run_episode_with(&cfg, common::faulty_policies(&cfg)).map_err(|e| e.to_string())?;
    let failures: Vec<_> = trace.ticks.iter().flat_map(|t| t.failures.iter().cloned()).collect();
    let keys: Vec<_> = failures.iter().map(|f| (f.kind, f.tick, f.agent, f.other)).collect();
    let expected = vec![
        (FailureKind::RouteDeviation, common::DRIFT_TICK, AgentId(0), None),
        (FailureKind::Collision, common::LUNGE_TICK, AgentId(0), Some(AgentId(1))),
    ];
    ensure(keys == expected, || format!("failure set {keys:?}"))?;

    // The drifted last waypoint against evenly spaced samples of a straight lane.
    let drift = &failures[0];
    let tick = &trace.ticks[common::DRIFT_TICK as usize];
    let plan = &tick.decisions.iter().find(|d| d.agent == AgentId(0)).unwrap().decision.trajectory;
    let k = drift.waypoint.ok_or("deviation without waypoint")?;
    let x_from = plan.points[0][0];
    let x_to = plan.points.iter().map(|p| p[0]).fold(x_from, f64::max) + 1.0;
    let n = cfg.scenario.centerline_samples;
    let lane_y = plan.points[0][1];
    let expected_dev = (0..n)
        .map(|i| {
            let x = x_from + (x_to - x_from) * i as f64 / (n - 1) as f64;
            (plan.points[k][0] - x).hypot(plan.points[k][1] - lane_y)
        })
        .fold(f64::INFINITY, f64::min);
    close("deviation", drift.measured, expected_dev, 1e-9)?;
    ensure(failures[1].measured > cfg.thresholds.eps_col, || "collision below threshold".into())?;

    let records = reflection_records(&trace).map_err(|e| e.to_string())?;
    ensure(records.len() == 2, || format!("{} records", records.len()))?;
    let mut bytes = Vec::new();
    write_records(&records, &mut bytes).map_err(|e| e.to_string())?;
    let again = run_episode_with(&cfg, common::faulty_policies(&cfg)).map_err(|e| e.to_string())?;
    let mut bytes_again = Vec::new();
    write_records(&reflection_records(&again).map_err(|e| e.to_string())?, &mut bytes_again).map_err(|e| e.to_string())?;
    ensure(bytes == bytes_again, || "records differ between runs".into())?;
    let golden = common::fixture_path("golden/reflection_records.jsonl");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &bytes).map_err(|e| e.to_string())?;
    }
    let stored = std::fs::read(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    ensure(stored == bytes, || "records differ from the golden file".into())?;

    // Loss of the failed plan against the corrected one.
    let mut worst: f64 = 0.0;
    for (rec, f) in records.iter().zip(&failures) {
        let tick = &trace.ticks[f.tick as usize];
        let failed = &tick.decisions.iter().find(|d| d.agent == f.agent).unwrap().decision.trajectory;
        let origin = failed.points[0];
        let predicted: Vec<[f64; 2]> = failed.points.iter().map(|p| [p[0] - origin[0], p[1] - origin[1]]).collect();
        let tokens = TokenSequence::from_text(&rec.target_trajectory).map_err(|e| e.to_string())?;
        let target = detokenize_trajectory(&tokens).map_err(|e| e.to_string())?;
        // Half the mass on the right token, the rest spread evenly: -ln(1/2) per token.
        let ids = tokens.ids();
        let dists: Vec<Vec<f64>> = ids
            .iter()
            .map(|&t| {
                (0..VOCAB.len())
                    .map(|j| if j == t { 0.5 } else { 0.5 / (VOCAB.len() - 1) as f64 })
                    .collect()
            })
            .collect();
        let lm = mean_lm_loss(&ids, &dists).map_err(|e| e.to_string())?;
        let alpha = cfg.thresholds.alpha_weight;
        let got = reflection_loss(lm, &predicted, &target, alpha).map_err(|e| e.to_string())?;
        let mut sq = 0.0;
        for (p, t) in predicted.iter().zip(&target) {
            sq += (p[0] - t[0]) * (p[0] - t[0]) + (p[1] - t[1]) * (p[1] - t[1]);
        }
        let want = 2f64.ln() + alpha * sq / predicted.len() as f64;
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-12, || format!("loss deviates by {worst:e}"))?;
    Ok(format!("deviation {:.4} m and collision IoU {:.3} detected; records stable; loss within {worst:.1e}", drift.measured, failures[1].measured))
}

// 9. Open-loop evaluation.

fn open_loop() -> Check {
    let track = |id: u64, y: f64, v0: f64, a: f64| -> Vec<TrackRecord> {
        (0..200)
            .map(|f| {
                let t = f as f64 / DATASET_HZ;
                TrackRecord {
                    id,
                    frame: f,
                    x: v0 * t + 0.5 * a * t * t,
                    y,
                    vx: v0 + a * t,
                    vy: 0.0,
                }
            })
            .collect()
    };
    let mut records = track(1, 0.0, 5.0, 0.8);
    records.extend(track(2, 8.0, 12.0, -0.4));
    let ds = from_records(records, 50).map_err(|e| e.to_string())?;
    let echo = evaluate_open_loop(&ds, &mut EchoPredictor).map_err(|e| e.to_string())?;
    ensure(echo.l2.iter().chain(&echo.rmse).all(|v| *v == 0.0), || format!("echo {echo:?}"))?;

    let single = from_records(track(1, 0.0, 5.0, 0.8), 50).map_err(|e| e.to_string())?;
    let cv = evaluate_open_loop(&single, &mut ConstVelPredictor).map_err(|e| e.to_string())?;
    // Error k frames ahead is a/2 (k/10)^2 for every window.
    let err = |k: usize| 0.5 * 0.8 * (k as f64 / DATASET_HZ).powi(2);
    for (i, h) in [1usize, 2, 3].into_iter().enumerate() {
        let n = 10 * h;
        let mean = (1..=n).map(err).sum::<f64>() / n as f64;
        close(&format!("L2 at {h} s"), cv.l2[i], mean, 1e-9)?;
    }
    for (i, h) in [1usize, 2, 3, 4].into_iter().enumerate() {
        let n = 10 * h;
        let rms = ((1..=n).map(|k| err(k).powi(2)).sum::<f64>() / n as f64).sqrt();
        close(&format!("RMSE at {h} s"), cv.rmse[i], rms, 1e-9)?;
    }
    Ok(format!(
        "echo scores zero; constant velocity RMSE {:.4}/{:.4}/{:.4}/{:.4} m matches a t^2 / 2",
        cv.rmse[0], cv.rmse[1], cv.rmse[2], cv.rmse[3]
    ))
}

// 10. Cross-attention kernel.

fn dense_reference(q: &[Vec<f64>], f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = f[0].len();
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = f
                .iter()
                .map(|fj| qi.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = w.iter().sum();
            (0..d).map(|c| f.iter().zip(&w).map(|(fj, wj)| wj / z * fj[c]).sum()).collect()
        })
        .collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<FeatureMatrix, String> {
    FeatureMatrix::new(rows.len(), rows[0].len(), rows.concat()).map_err(|e| e.to_string())
}

fn cross_attention() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (m, n, d) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        let mut rand_rows = |r: usize| -> Vec<Vec<f64>> {
            (0..r).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
        };
        let q = rand_rows(m);
        let f = rand_rows(n);
        let out = cross_attention_align(&matrix(&q)?, &matrix(&f)?).map_err(|e| e.to_string())?;
        let want = dense_reference(&q, &f);
        for (i, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                worst = worst.max((out.row(i)[c] - v).abs());
            }
        }

        // Zero queries attend uniformly: every output row is the mean of F.
        let zero = cross_attention_align(&matrix(&vec![vec![0.0; d]; m])?, &matrix(&f)?).map_err(|e| e.to_string())?;
        for i in 0..m {
            for c in 0..d {
                let mean = f.iter().map(|r| r[c]).sum::<f64>() / n as f64;
                close("zero-query mean", zero.row(i)[c], mean, 1e-12)?;
            }
        }
        // A single feature row is returned unchanged.
        let one = cross_attention_align(&matrix(&q)?, &matrix(&f[..1])?).map_err(|e| e.to_string())?;
        for i in 0..m {
            for c in 0..d {
                close("single row", one.row(i)[c], f[0][c], 1e-12)?;
            }
        }
    }
    ensure(worst <= 1e-12, || format!("dense reference deviates by {worst:e}"))?;
    Ok(format!("100 instances within {worst:.1e} of the dense reference"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Check); 10] = [
        ("1 flatness round trip", Duration::from_secs(1), flatness),
        ("2 integrator convergence", Duration::from_secs(1), integrator),
        ("3 box IoU vs sampling", Duration::from_secs(30), obb),
        ("4 metric values", Duration::from_secs(1), metric_values),
        ("5 tokenizer round trip", Duration::from_secs(1), tokenizer),
        ("6 baseline closed loop", Duration::from_secs(10), closed_loop),
        ("7 communication ablation", Duration::from_secs(5), ablation),
        ("8 reflection pipeline", Duration::from_secs(5), reflection),
        ("9 open-loop evaluation", Duration::from_secs(5), open_loop),
        ("10 cross-attention kernel", Duration::from_secs(1), cross_attention),
    ];
    let mut failed = Vec::new();
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let verdict = match result {
            Ok(detail) if took <= limit => Ok(detail),
            Ok(detail) => Err(format!("{detail}; took {took:.2?}, limit {limit:?}")),
            Err(e) => Err(e),
        };
        match verdict {
            Ok(detail) => println!("PASS {name} ({took:.2?}): {detail}"),
            Err(e) => {
                println!("FAIL {name} ({took:.2?}): {e}");
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}

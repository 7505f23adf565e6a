use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chip::{detection_probabilities, solve_compensation, DecoderSettings, PhaseSettings};
use crate::exec::{derive_seed, Execution};
use crate::feedback::{run_feedback, Checkpoint, ControllerState, FeedbackConfig, QberPair, QberProbe, TraceEntry};
use crate::link::{
    expected_tally, qber, sample_tally_at, total_qber, ChannelConfig, DriftSchedule, SourceConfig, TallyBlock,
};
use crate::polarization::{drifted_bb84, Basis, Bb84State, DriftParams};
use crate::reference::ReferenceRun;
use crate::security::{analyze, asymptotic_bounds, KeyRateReport, SecurityParams};
use crate::{Error, Result};

use super::{json_report, Artifact, Csv, LinkProbe, Mode, Scenario, ScenarioKind};

const STABILITY_STREAM: u64 = 1;
const SCHEDULE_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;
const TRIAL_STREAM: u64 = 4;
const SWEEP_STREAM: u64 = 5;

/// Port probabilities of the ideal decoder for the four ideal input states.
const IDEAL_TABLE: [[f64; 4]; 4] = [
    [0.5, 0.0, 0.25, 0.25],
    [0.0, 0.5, 0.25, 0.25],
    [0.25, 0.25, 0.5, 0.0],
    [0.25, 0.25, 0.0, 0.5],
];

fn f(x: f64) -> String {
    format!("{x}")
}

fn seed_of(s: &Scenario) -> Result<u64> {
    s.seed
        .ok_or_else(|| Error::config(format!("{} needs a seed", s.kind.label())))
}

fn chip_settings(s: &Scenario) -> DecoderSettings {
    if s.compensate {
        DecoderSettings {
            phases: solve_compensation(&s.channel.drift.initial),
            voa_db: s.decoder.voa_db,
        }
    } else {
        s.decoder
    }
}

/// Dispatches on the scenario kind.
pub fn run(s: &Scenario, exec: Execution) -> Result<Artifact> {
    match s.kind {
        ScenarioKind::PovmTable => run_povm_table(s),
        ScenarioKind::Stability => run_stability(s, exec),
        ScenarioKind::Scramble => run_scramble(s, exec),
        ScenarioKind::Sweep => run_sweep(s, &s.distances_km, exec),
        ScenarioKind::Keyrate => {
            let path = s
                .tally_file
                .as_ref()
                .ok_or_else(|| Error::config("keyrate needs a tally file"))?;
            let text = std::fs::read_to_string(path)?;
            run_keyrate(s, &super::tally_io::parse_tally(&text)?)
        }
    }
}

/// Port-probability table of the four BB84 states (drifted by the channel's
/// initial drift) at the scenario's chip settings.
pub fn run_povm_table(s: &Scenario) -> Result<Artifact> {
    let meta = s.metadata();
    let settings = chip_settings(s);
    let drift = s.channel.drift.initial;
    let mut csv = Csv::new(&meta, &["state", "p_H", "p_V", "p_D", "p_A", "row_sum"]);
    let mut rows = Vec::new();
    let mut max_dev: f64 = 0.0;
    let mut diagonal = true;
    for state in Bb84State::ALL {
        let p = detection_probabilities(&drifted_bb84(state, &drift), &settings.phases);
        let a = p.as_array();
        for (x, y) in a.iter().zip(IDEAL_TABLE[state.index()]) {
            max_dev = max_dev.max((x - y).abs());
        }
        diagonal &= (p.get(state) - 0.5).abs() <= 1e-9 && p.get(state.partner()).abs() <= 1e-9;
        let mut cells = vec![state.label().to_string()];
        cells.extend(a.iter().map(|&x| f(x)));
        cells.push(f(p.sum()));
        csv.row(&cells);
        rows.push(json!({ "state": state.label(), "p": a, "sum": p.sum() }));
    }
    let summary = json!({
        "settings": settings.phases,
        "drift": drift,
        "rows": rows,
        "max_abs_dev_from_ideal_table": max_dev,
        "diagonal_structure": diagonal,
    });
    Ok(Artifact {
        files: vec![
            ("povm_table.csv".into(), csv.finish()),
            ("povm_report.json".into(), json_report(&meta, summary.clone())),
        ],
        summary,
        non_converged: false,
    })
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Fixed chip settings, no feedback: QBER per window over the whole span.
pub fn run_stability(s: &Scenario, exec: Execution) -> Result<Artifact> {
    let meta = s.metadata();
    let settings = chip_settings(s);
    let windows = (s.duration_s / s.window_s + 1e-9).floor() as usize;
    let seed = match s.mode {
        Mode::Mc => seed_of(s)?,
        Mode::Expect => 0,
    };
    let tallies = exec.map_indexed(windows, |i| {
        let t0 = i as f64 * s.window_s;
        match s.mode {
            Mode::Expect => {
                crate::link::expected_tally_at(&s.source, &s.channel, &s.detector, &settings, t0, s.window_s)
            }
            Mode::Mc => sample_tally_at(
                &s.source,
                &s.channel,
                &s.detector,
                &settings,
                t0,
                s.window_s,
                derive_seed(seed, &[STABILITY_STREAM, i as u64]),
                Execution::Sequential,
            ),
        }
    });
    let mut csv = Csv::new(&meta, &["window", "t_start_s", "qber_z", "qber_x", "qber_total"]);
    let mut totals = Vec::with_capacity(windows);
    let (mut zs, mut xs) = (Vec::new(), Vec::new());
    for (i, t) in tallies.into_iter().enumerate() {
        let t = t?;
        let cell = |q: Option<f64>| q.map_or_else(String::new, f);
        let (qz, qx, qt) = (qber(&t, Basis::Z), qber(&t, Basis::X), total_qber(&t));
        csv.row(&[i.to_string(), f(i as f64 * s.window_s), cell(qz), cell(qx), cell(qt)]);
        totals.extend(qt);
        zs.extend(qz);
        xs.extend(qx);
    }
    let (mean, stderr) = mean_and_stderr(&totals);
    let summary = json!({
        "windows": windows,
        "mean_qber": mean,
        "stderr": stderr,
        "mean_qber_z": mean_and_stderr(&zs).0,
        "mean_qber_x": mean_and_stderr(&xs).0,
    });
    Ok(Artifact {
        files: vec![
            ("stability.csv".into(), csv.finish()),
            ("stability_report.json".into(), json_report(&meta, summary.clone())),
        ],
        summary,
        non_converged: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeedbackRun {
    start_t: f64,
    end_t: f64,
    converged: bool,
    evaluations: usize,
    cycles: usize,
    final_qber: Option<QberPair>,
    /// Index range of this run's windows in the probe log.
    first_window: usize,
    last_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventReport {
    t_event_s: f64,
    drift: DriftParams,
    triggered: bool,
    recovered: bool,
    recovery_time_s: Option<f64>,
    evaluations: usize,
    qber_at_convergence: Option<f64>,
    settled_qber: Option<f64>,
}

/// Timeline with scrambler events and closed-loop compensation, plus the
/// independent recovery trials when `trials > 0`.
pub fn run_scramble(s: &Scenario, exec: Execution) -> Result<Artifact> {
    let meta = s.metadata();
    let seed = seed_of(s)?;
    let fb = s
        .feedback
        .clone()
        .ok_or_else(|| Error::config("scramble needs a feedback block"))?;
    fb.validate()?;

    let mut chan = s.channel.clone();
    if chan.scrambler.enabled {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SCHEDULE_STREAM]));
        chan.drift = DriftSchedule::scrambled(chan.drift.initial, &chan.scrambler, s.duration_s, &mut rng);
    }
    let schedule = chan.drift.clone();
    let mut probe = LinkProbe::new(
        s.source,
        chan,
        s.detector,
        fb.calibrations,
        s.mode,
        derive_seed(seed, &[PROBE_STREAM]),
    )
    .recording();

    let mut v = fb.voltages_for(&chip_settings(s).phases)?;
    v.voa_h_db = s.decoder.voa_db[0];
    v.voa_v_db = s.decoder.voa_db[1];

    let mut t = 0.0;
    let mut runs: Vec<FeedbackRun> = Vec::new();
    let mut traces: Vec<Vec<TraceEntry>> = Vec::new();
    while t + s.window_s <= s.duration_s + 1e-9 {
        let q = probe.measure(&v, t, s.window_s);
        t += s.window_s;
        let Some(q) = q else { continue };
        if q.e_z <= fb.e_z_th && q.e_x <= fb.e_x_th {
            continue;
        }
        let remaining = ((s.duration_s - t) / fb.window_s + 1e-9).floor() as usize;
        if remaining == 0 {
            break;
        }
        let cfg = FeedbackConfig {
            max_evaluations: Some(fb.max_evaluations.map_or(remaining, |m| m.min(remaining))),
            ..fb.clone()
        };
        let first_window = probe.windows_measured() as usize - 1;
        let mut st = ControllerState::starting_at(v, t);
        st.last = Some(q);
        st.trace.push(TraceEntry {
            cycle: 0,
            t_seconds: t,
            v: v.v,
            e_z: q.e_z,
            e_x: q.e_x,
            converged: false,
            checkpoint: Checkpoint::Start,
            gradients: [None; 4],
        });
        let r = run_feedback(&mut probe, st, &cfg)?;
        v = r.state.voltages;
        t = r.state.t_seconds;
        runs.push(FeedbackRun {
            start_t: r.state.trace[0].t_seconds - s.window_s,
            end_t: t,
            converged: r.converged,
            evaluations: r.evaluations,
            cycles: r.cycles_used,
            final_qber: r.final_qber,
            first_window,
            last_window: probe.windows_measured() as usize - 1,
        });
        traces.push(r.state.trace);
    }
    let log = probe.take_log();

    // Per-second series.
    let mut series = Csv::new(
        &meta,
        &[
            "t_s",
            "V1",
            "V2",
            "V3",
            "V4",
            "qber_z",
            "qber_x",
            "qber_total",
            "in_feedback",
        ],
    );
    let mut run_idx = 0;
    for (i, w) in log.iter().enumerate() {
        while run_idx < runs.len() && runs[run_idx].last_window < i {
            run_idx += 1;
        }
        let in_fb = runs
            .get(run_idx)
            .is_some_and(|r| r.first_window < i && i <= r.last_window);
        let cell = |q: Option<f64>| q.map_or_else(String::new, f);
        let mut cells = vec![f(w.t)];
        cells.extend(w.v.iter().map(|&x| f(x)));
        cells.push(cell(qber(&w.tally, Basis::Z)));
        cells.push(cell(qber(&w.tally, Basis::X)));
        cells.push(cell(total_qber(&w.tally)));
        cells.push(u8::from(in_fb).to_string());
        series.row(&cells);
    }

    let mut trace_csv = Csv::new(
        &meta,
        &[
            "cycle",
            "t_seconds",
            "V1",
            "V2",
            "V3",
            "V4",
            "E_Z",
            "E_X",
            "converged_flag",
            "run",
        ],
    );
    for (k, tr) in traces.iter().enumerate() {
        for e in tr {
            let mut cells = vec![e.cycle.to_string(), f(e.t_seconds)];
            cells.extend(e.v.iter().map(|&x| f(x)));
            cells.extend([f(e.e_z), f(e.e_x), u8::from(e.converged).to_string(), k.to_string()]);
            trace_csv.row(&cells);
        }
    }

    // Recovery statistics per disturbance (the initial state counts as event 0).
    let mut starts: Vec<(f64, DriftParams)> = vec![(0.0, schedule.initial)];
    starts.extend(schedule.events.iter().map(|e| (e.t, e.drift)));
    let mut events = Vec::new();
    for (k, &(te, drift)) in starts.iter().enumerate() {
        let next = starts.get(k + 1).map_or(f64::INFINITY, |e| e.0);
        let mine: Vec<&FeedbackRun> = runs
            .iter()
            .filter(|r| r.start_t >= te - 1e-9 && r.start_t < next)
            .collect();
        let triggered = !mine.is_empty();
        let evaluations = mine.iter().map(|r| r.evaluations).sum();
        // Recovery is the first converged run; later runs are re-triggers by
        // window noise near the threshold.
        let first_ok = mine.iter().find(|r| r.converged);
        let recovered = !triggered || first_ok.is_some();
        let (recovery_time_s, qber_at_convergence, settled_qber) = match first_ok {
            Some(r) => {
                let at = total_qber(&log[r.last_window].tally);
                let after: Vec<f64> = log
                    .iter()
                    .enumerate()
                    .filter(|(i, w)| *i > r.last_window && w.t < next)
                    .filter_map(|(_, w)| total_qber(&w.tally))
                    .collect();
                let settled = (!after.is_empty()).then(|| mean_and_stderr(&after).0);
                (Some(r.end_t - te), at, settled)
            }
            None if triggered => (None, None, None),
            None => (Some(0.0), None, None),
        };
        events.push(EventReport {
            t_event_s: te,
            drift,
            triggered,
            recovered,
            recovery_time_s,
            evaluations,
            qber_at_convergence,
            settled_qber,
        });
    }
    let mut ev_csv = Csv::new(
        &meta,
        &[
            "event",
            "t_event_s",
            "varphi",
            "phi",
            "triggered",
            "recovered",
            "recovery_time_s",
            "evaluations",
            "qber_at_convergence",
            "settled_qber",
        ],
    );
    for (k, e) in events.iter().enumerate() {
        let opt = |x: Option<f64>| x.map_or_else(String::new, f);
        ev_csv.row(&[
            k.to_string(),
            f(e.t_event_s),
            f(e.drift.varphi()),
            f(e.drift.phi()),
            u8::from(e.triggered).to_string(),
            u8::from(e.recovered).to_string(),
            opt(e.recovery_time_s),
            e.evaluations.to_string(),
            opt(e.qber_at_convergence),
            opt(e.settled_qber),
        ]);
    }

    let non_converged = events.iter().any(|e| !e.recovered);
    let converged_q: Vec<f64> = events.iter().filter_map(|e| e.qber_at_convergence).collect();
    let mut summary = json!({
        "windows": log.len(),
        "scramble_events": schedule.events.len(),
        "feedback_runs": runs.len(),
        "non_converged_runs": runs.iter().filter(|r| !r.converged).count(),
        "all_recovered": !non_converged,
        "mean_qber_at_convergence": (!converged_q.is_empty()).then(|| mean_and_stderr(&converged_q).0),
        "events": events,
    });
    let mut files = vec![
        ("scramble_qber.csv".to_string(), series.finish()),
        ("feedback_trace.csv".to_string(), trace_csv.finish()),
        ("scramble_events.csv".to_string(), ev_csv.finish()),
    ];
    if s.trials > 0 {
        let trials = run_recovery_trials(s, s.trials, exec)?;
        let mut t_csv = Csv::new(
            &meta,
            &[
                "trial",
                "varphi",
                "phi",
                "initial_qber_z",
                "initial_qber_x",
                "converged",
                "evaluations",
                "elapsed_s",
                "final_qber_total",
            ],
        );
        for (i, o) in trials.outcomes.iter().enumerate() {
            let opt = |x: Option<f64>| x.map_or_else(String::new, f);
            t_csv.row(&[
                i.to_string(),
                f(o.drift.varphi()),
                f(o.drift.phi()),
                opt(o.initial.map(|q| q.e_z)),
                opt(o.initial.map(|q| q.e_x)),
                u8::from(o.converged).to_string(),
                o.evaluations.to_string(),
                f(o.elapsed_s),
                opt(o.final_qber_total),
            ]);
        }
        files.push(("recovery_trials.csv".to_string(), t_csv.finish()));
        summary["recovery_trials"] = serde_json::to_value(trials.stats())?;
    }
    files.push(("scramble_report.json".to_string(), json_report(&meta, summary.clone())));
    Ok(Artifact {
        files,
        summary,
        non_converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub drift: DriftParams,
    pub initial: Option<QberPair>,
    pub converged: bool,
    pub evaluations: usize,
    pub elapsed_s: f64,
    /// Error fraction over both bases in the converging window.
    pub final_qber_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoverySummary {
    pub outcomes: Vec<TrialOutcome>,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub trials: usize,
    pub converged: usize,
    pub fraction: f64,
    pub evaluation_budget: usize,
    pub median_evaluations: Option<usize>,
    pub median_recovery_s: Option<f64>,
    pub mean_recovered_qber: Option<f64>,
}

impl RecoverySummary {
    pub fn converged(&self) -> usize {
        self.outcomes.iter().filter(|o| o.converged).count()
    }

    pub fn stats(&self) -> RecoveryStats {
        let ok: Vec<&TrialOutcome> = self.outcomes.iter().filter(|o| o.converged).collect();
        let mut evals: Vec<usize> = ok.iter().map(|o| o.evaluations).collect();
        evals.sort_unstable();
        let mut times: Vec<f64> = ok.iter().map(|o| o.elapsed_s).collect();
        times.sort_by(f64::total_cmp);
        let qs: Vec<f64> = ok.iter().filter_map(|o| o.final_qber_total).collect();
        RecoveryStats {
            trials: self.outcomes.len(),
            converged: ok.len(),
            fraction: ok.len() as f64 / self.outcomes.len().max(1) as f64,
            evaluation_budget: self.budget,
            median_evaluations: evals.get(evals.len() / 2).copied(),
            median_recovery_s: times.get(times.len() / 2).copied(),
            mean_recovered_qber: (!qs.is_empty()).then(|| qs.iter().sum::<f64>() / qs.len() as f64),
        }
    }
}

/// Independent disturbances: each trial draws a drift from the scrambler
/// distribution, starts from the ideal settings and runs the controller with
/// an evaluation budget (`max_evaluations`, default 500).
pub fn run_recovery_trials(s: &Scenario, trials: usize, exec: Execution) -> Result<RecoverySummary> {
    let seed = seed_of(s)?;
    let fb = s
        .feedback
        .clone()
        .ok_or_else(|| Error::config("recovery trials need a feedback block"))?;
    fb.validate()?;
    let budget = fb.max_evaluations.unwrap_or(500);
    let cfg = FeedbackConfig {
        max_evaluations: Some(budget),
        ..fb
    };
    let v0 = cfg.voltages_for(&PhaseSettings::ideal())?;
    let outcomes = exec.map_indexed(trials, |i| -> Result<TrialOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TRIAL_STREAM, i as u64]));
        let drift = s.channel.scrambler.distribution.sample(&mut rng);
        let chan = ChannelConfig {
            drift: DriftSchedule::constant(drift),
            scrambler: crate::link::ScramblerConfig {
                enabled: false,
                ..s.channel.scrambler
            },
            ..s.channel.clone()
        };
        let mut probe = LinkProbe::new(
            s.source,
            chan,
            s.detector,
            cfg.calibrations,
            s.mode,
            derive_seed(seed, &[TRIAL_STREAM, i as u64, 1]),
        )
        .recording();
        let r = run_feedback(&mut probe, ControllerState::new(v0), &cfg)?;
        let log = probe.take_log();
        let initial = r.state.trace.first().map(|e| QberPair { e_z: e.e_z, e_x: e.e_x });
        Ok(TrialOutcome {
            drift,
            initial,
            converged: r.converged,
            evaluations: r.evaluations,
            elapsed_s: r.elapsed_s,
            final_qber_total: log.last().and_then(|w| total_qber(&w.tally)),
        })
    });
    Ok(RecoverySummary {
        outcomes: outcomes.into_iter().collect::<Result<_>>()?,
        budget,
    })
}

struct SweepPoint {
    distance_km: f64,
    loss_db: f64,
    tally: TallyBlock,
    report: KeyRateReport,
}

fn sweep_setup(s: &Scenario, km: f64, nearest: bool) -> (SourceConfig, ChannelConfig) {
    let preset = if !s.reference_presets {
        None
    } else if nearest {
        crate::reference::RUNS
            .iter()
            .min_by(|a, b| (a.distance_km - km).abs().total_cmp(&(b.distance_km - km).abs()))
    } else {
        ReferenceRun::at_distance(km)
    };
    let mut chan = ChannelConfig {
        length_km: km,
        fiber_loss_db: None,
        ..s.channel.clone()
    };
    let mut src = s.source;
    if let Some(run) = preset {
        src = SourceConfig {
            intrinsic_error: s.source.intrinsic_error,
            rep_rate: s.source.rep_rate,
            ..run.source()
        };
        if !nearest {
            chan.fiber_loss_db = Some(run.fiber_loss_db);
        }
    }
    (src, chan)
}

fn sweep_point(s: &Scenario, sec: &SecurityParams, km: f64, nearest: bool, seed: Option<u64>) -> Result<SweepPoint> {
    let (src, chan) = sweep_setup(s, km, nearest);
    let settings = DecoderSettings {
        phases: solve_compensation(&chan.drift.initial),
        voa_db: s.decoder.voa_db,
    };
    let duration = sec.n_pulses / src.rep_rate;
    let tally = match seed {
        None => expected_tally(&src, &chan, &s.detector, &settings, duration)?,
        Some(seed) => sample_tally_at(
            &src,
            &chan,
            &s.detector,
            &settings,
            0.0,
            duration,
            seed,
            Execution::Sequential,
        )?,
    };
    let report = match analyze(&tally, &src, sec) {
        Ok(r) => r,
        // No detections in some category: no key.
        Err(Error::Domain(_)) => KeyRateReport {
            s_z0_l: 0.0,
            s_z1_l: 0.0,
            phi_z_u: 0.5,
            lambda_ec: 0.0,
            l: 0.0,
            skr: 0.0,
            floored: true,
        },
        Err(e) => return Err(e),
    };
    Ok(SweepPoint {
        distance_km: km,
        loss_db: chan.loss_db(),
        tally,
        report,
    })
}

/// Secret key rate per distance, plus a dense expectation-mode curve.
pub fn run_sweep(s: &Scenario, distances: &[f64], exec: Execution) -> Result<Artifact> {
    let meta = s.metadata();
    let sec = s
        .security
        .ok_or_else(|| Error::config("sweep needs a security block"))?;
    sec.validate()?;
    if distances.is_empty() || distances.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
        return Err(Error::config("sweep needs distances >= 0 km"));
    }
    let base_seed = match s.mode {
        Mode::Mc => Some(seed_of(s)?),
        Mode::Expect => None,
    };
    let indexed: Vec<(usize, f64)> = distances.iter().copied().enumerate().collect();
    let points = exec.map_slice(&indexed, |&(i, km)| {
        let seed = base_seed.map(|b| derive_seed(b, &[SWEEP_STREAM, i as u64]));
        sweep_point(s, &sec, km, false, seed)
    });
    let mut csv = Csv::new(
        &meta,
        &[
            "distance_km",
            "loss_db",
            "n_z_mu",
            "n_z_nu",
            "n_x_mu",
            "n_x_nu",
            "m_z_mu",
            "m_z_nu",
            "m_x_mu",
            "m_x_nu",
            "qber_z",
            "s_z0_l",
            "s_z1_l",
            "phi_z_u",
            "lambda_ec",
            "l_bits",
            "skr_bps",
            "floored",
        ],
    );
    let mut rows = Vec::new();
    for p in points {
        let p = p?;
        let t = &p.tally;
        let r = &p.report;
        let mut cells = vec![f(p.distance_km), f(p.loss_db)];
        cells.extend(t.n.iter().flatten().map(|&x| f(x)));
        cells.extend(t.m.iter().flatten().map(|&x| f(x)));
        cells.push(qber(t, Basis::Z).map_or_else(String::new, f));
        cells.extend([r.s_z0_l, r.s_z1_l, r.phi_z_u, r.lambda_ec, r.l, r.skr].map(f));
        cells.push(u8::from(r.floored).to_string());
        csv.row(&cells);
        rows.push(json!({ "distance_km": p.distance_km, "loss_db": p.loss_db, "tally": t, "report": r }));
    }

    let max_km = distances.iter().copied().fold(0.0, f64::max);
    let grid: Vec<f64> = (0..)
        .map(|k| 2.5 * k as f64)
        .take_while(|&d| d <= max_km + 20.0 + 1e-9)
        .collect();
    let curve = exec.map_slice(&grid, |&km| sweep_point(s, &sec, km, true, None));
    let mut curve_csv = Csv::new(&meta, &["distance_km", "loss_db", "skr_bps"]);
    for p in curve {
        let p = p?;
        curve_csv.row(&[f(p.distance_km), f(p.loss_db), f(p.report.skr)]);
    }
    let summary = json!({ "points": rows });
    Ok(Artifact {
        files: vec![
            ("sweep.csv".into(), csv.finish()),
            ("sweep_curve.csv".into(), curve_csv.finish()),
            ("sweep_report.json".into(), json_report(&meta, summary.clone())),
        ],
        summary,
        non_converged: false,
    })
}

/// Key-rate analysis of a measured tally with the scenario's source settings.
pub fn run_keyrate(s: &Scenario, tally: &TallyBlock) -> Result<Artifact> {
    let meta = s.metadata();
    let sec = s
        .security
        .ok_or_else(|| Error::config("keyrate needs a security block"))?;
    tally.validate()?;
    if tally.n.iter().flatten().all(|&x| x == 0.0) {
        return Err(Error::domain("tally is empty"));
    }
    let report = analyze(tally, &s.source, &sec)?;
    let asym = asymptotic_bounds(tally, &s.source)?;
    let qz = qber(tally, Basis::Z);
    let qx = qber(tally, Basis::X);
    let mut csv = Csv::new(
        &meta,
        &[
            "qber_z",
            "qber_x",
            "s_z0_l",
            "s_z1_l",
            "phi_z_u",
            "lambda_ec",
            "l_bits",
            "skr_bps",
            "floored",
        ],
    );
    let opt = |x: Option<f64>| x.map_or_else(String::new, f);
    let mut cells = vec![opt(qz), opt(qx)];
    cells.extend(
        [
            report.s_z0_l,
            report.s_z1_l,
            report.phi_z_u,
            report.lambda_ec,
            report.l,
            report.skr,
        ]
        .map(f),
    );
    cells.push(u8::from(report.floored).to_string());
    csv.row(&cells);
    let summary = json!({
        "qber_z": qz,
        "qber_x": qx,
        "report": report,
        "asymptotic": asym,
    });
    Ok(Artifact {
        files: vec![
            ("keyrate.csv".into(), csv.finish()),
            ("keyrate_report.json".into(), json_report(&meta, summary.clone())),
        ],
        summary,
        non_converged: false,
    })
}

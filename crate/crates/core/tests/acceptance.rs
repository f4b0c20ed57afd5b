//! End-to-end acceptance run: one pass/fail line per criterion, non-zero exit on any failure.

use std::sync::Arc;
use std::time::Instant;

use modir_core::autodiff::{Graph, Tensor};
use modir_core::dataset::{synthesize_grid, BuildConfig, DatasetBundle, Split};
use modir_core::eval::{
    fit_line, latent_to_x, mde, mde_from_sweep, probe_direction, sweep, synthesize_reference, tsr, weight_ablation,
    AblationConfig, Line, Reference, SWEEP_COMMANDS,
};
use modir_core::inference::{ChunkBuffer, EngineConfig, WeightScheme};
use modir_core::model::ModelCheckpoint;
use modir_core::par::Parallelism;
use modir_core::sim::{Outcome, ScenarioConfig};
use modir_core::train::{history_csv, losses, train, HistoryRow, Preset};

mod common;

type Verdict = Result<String, String>;
type Criterion = Box<dyn FnOnce(&mut Lab) -> Verdict>;

const SEEDS: [u64; 3] = [0, 1, 2];

fn main() {
    let started = Instant::now();
    let mut lab = Lab::new();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("autodiff fidelity", Box::new(|_| autodiff_fidelity())),
        ("loss identities", Box::new(|_| loss_identities())),
        ("chunk blending oracle", Box::new(|_| blending_oracle())),
        ("smoke training", Box::new(smoke_training)),
        ("disentanglement direction", Box::new(disentanglement)),
        ("chunking ablation", Box::new(chunking_ablation)),
        ("protocol fidelity", Box::new(|_| protocol_fidelity())),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let verdict = run(&mut lab);
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += verdict.is_err() as usize;
        println!("{tag} criterion {}: {name} ({:.1} s): {detail}", i + 1, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of 8 criteria pass in {:.0} s", 8 - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn autodiff_fidelity() -> Verdict {
    let t = Instant::now();
    let report = common::full_model(0..20);
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "{} parameter entries over 20 seeds, worst rel err {:.2e}, {} kink skips, {secs:.1} s",
        report.checked, report.worst, report.skipped
    );
    check(report.failures.is_empty() && report.skipped * 1000 < report.checked && secs < 30.0, detail)
}

fn scalar_loss(build: impl FnOnce(&mut Graph) -> modir_core::autodiff::Var) -> f64 {
    let mut g = Graph::new();
    let v = build(&mut g);
    g.value(v).item()
}

fn loss_identities() -> Verdict {
    let kl_zero = scalar_loss(|g| {
        let mu = g.constant(Tensor::row(vec![0.0]));
        let lv = g.constant(Tensor::row(vec![0.0]));
        losses::kl_loss(g, mu, lv).unwrap()
    });
    let kl_one = scalar_loss(|g| {
        let mu = g.constant(Tensor::row(vec![1.0]));
        let lv = g.constant(Tensor::row(vec![0.0]));
        losses::kl_loss(g, mu, lv).unwrap()
    });
    let bce = scalar_loss(|g| {
        let y = g.constant(Tensor::row(vec![1.0]));
        let l = g.constant(Tensor::row(vec![0.0]));
        losses::bce_loss(g, y, l).unwrap()
    });
    let line = Line { slope: 2.0, intercept: 4.0 };
    let same = mde(&line, &line).map_err(|e| e.to_string())?;
    let half = mde(&line, &Line { slope: 1.0, intercept: 2.0 }).map_err(|e| e.to_string())?;
    let ok = close(kl_zero, 0.0, 1e-9)
        && close(kl_one, 0.5, 1e-9)
        && close(bce, std::f64::consts::LN_2, 1e-9)
        && close(same, 0.0, 1e-9)
        && close(half, 0.5f64.sqrt(), 1e-9);
    check(ok, format!("kl {kl_zero}, {kl_one}; bce {bce}; mde {same}, {half}"))
}

fn blending_oracle() -> Verdict {
    let width = 50;
    let rows = |values: &[(usize, f64)]| {
        let mut r = vec![vec![f64::NAN]; width];
        for &(k, v) in values {
            r[k] = vec![v];
        }
        r
    };
    let mut buf = ChunkBuffer::new(width);
    buf.push(0, rows(&[(1, 5.0)])).unwrap();
    let first = buf.blend(0, &WeightScheme::default()).unwrap()[0];
    buf.push(1, rows(&[(2, 0.0)])).unwrap();
    buf.push(2, rows(&[(1, 1.0)])).unwrap();
    let v = buf.blend(2, &WeightScheme::default()).unwrap()[0];
    // Direct evaluation with w1 = 1/ln 2 and w2 = 1/ln 3. The printed 0.6132 comes from
    // weights rounded to four places (1.4427 / 2.3529), so it only holds to that precision.
    let (w1, w2) = (1.0 / 2f64.ln(), 1.0 / 3f64.ln());
    let oracle = w1 / (w1 + w2);
    #[allow(clippy::approx_constant)]
    let printed = 1.4427 / 2.3529;

    let (hull, idem) = hull_and_idempotence(1000);
    let ok = first == 5.0 && close(v, oracle, 1e-6) && close(v, printed, 1e-4) && close(v, 0.6132, 1e-4) && hull == 1000 && idem == 1000;
    check(
        ok,
        format!(
            "t=0 {first}; t=2 {v:.7} (exact oracle {oracle:.7}, four-place weights {printed:.7}); hull {hull}/1000, idempotent {idem}/1000"
        ),
    )
}

fn hull_and_idempotence(cases: usize) -> (usize, usize) {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let schemes = [
        WeightScheme::None,
        WeightScheme::Inverse,
        WeightScheme::Exponential { m: 0.05 },
        WeightScheme::default(),
    ];
    let (mut hull, mut idem) = (0, 0);
    for case in 0..cases {
        let width = r.gen_range(2..20);
        let t = r.gen_range(0..40);
        let scheme = schemes[case % schemes.len()];
        let mut buf = ChunkBuffer::new(width);
        let mut same = ChunkBuffer::new(width);
        let constant = r.gen_range(-5.0..5.0);
        let mut contributions = Vec::new();
        for g in 0..=t {
            let rows: Vec<Vec<f64>> = (0..width).map(|_| vec![r.gen_range(-5.0..5.0)]).collect();
            let age = t - g + 1;
            if g == t && (t == 0 || scheme == WeightScheme::None) {
                contributions.push(rows[1][0]);
            } else if t > 0 && scheme != WeightScheme::None && age <= t && age < width {
                contributions.push(rows[age][0]);
            }
            buf.push(g, rows).unwrap();
            same.push(g, vec![vec![constant]; width]).unwrap();
        }
        let v = buf.blend(t, &scheme).unwrap()[0];
        let lo = contributions.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = contributions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hull += (v >= lo - 1e-12 && v <= hi + 1e-12) as usize;
        idem += close(same.blend(t, &scheme).unwrap()[0], constant, 1e-12) as usize;
    }
    (hull, idem)
}

/// Datasets, trained models and sweeps shared by the heavier criteria.
struct Lab {
    scenario: ScenarioConfig,
    bundle: Option<DatasetBundle>,
    proposed: Vec<Option<Arc<ModelCheckpoint>>>,
    baseline: Vec<Option<Arc<ModelCheckpoint>>>,
}

impl Lab {
    fn new() -> Self {
        Self {
            scenario: ScenarioConfig::wiping(3),
            bundle: None,
            proposed: vec![None; SEEDS.len()],
            baseline: vec![None; SEEDS.len()],
        }
    }

    fn bundle(&mut self) -> Result<&DatasetBundle, String> {
        if self.bundle.is_none() {
            let demos = synthesize_grid(&self.scenario, 2).map_err(|e| e.to_string())?;
            let build = BuildConfig {
                hop: Preset::smoke().hop,
                ..Default::default()
            };
            self.bundle = Some(DatasetBundle::build(&self.scenario, &demos, &build).map_err(|e| e.to_string())?);
        }
        Ok(self.bundle.as_ref().unwrap())
    }

    fn preset(seed: u64, baseline: bool) -> Preset {
        let mut p = Preset::smoke();
        p.train.seed = seed;
        if baseline {
            p = p.baseline();
        }
        p
    }

    /// Trains (once) and returns the model with its wall time and history.
    fn fit(&mut self, seed_index: usize, baseline: bool) -> Result<Arc<ModelCheckpoint>, String> {
        let cached = if baseline { &self.baseline[seed_index] } else { &self.proposed[seed_index] };
        if let Some(m) = cached {
            return Ok(m.clone());
        }
        let (model, _, _) = self.fit_fresh(SEEDS[seed_index], baseline)?;
        let slot = if baseline { &mut self.baseline[seed_index] } else { &mut self.proposed[seed_index] };
        *slot = Some(model.clone());
        Ok(model)
    }

    fn fit_fresh(&mut self, seed: u64, baseline: bool) -> Result<(Arc<ModelCheckpoint>, Vec<HistoryRow>, f64), String> {
        let preset = Self::preset(seed, baseline);
        let bundle = self.bundle()?;
        let config = preset.model_config(bundle);
        let t = Instant::now();
        let out = train(bundle, &config, &preset.train, None).map_err(|e| e.to_string())?;
        Ok((Arc::new(out.checkpoint), out.history, t.elapsed().as_secs_f64()))
    }
}

fn smoke_training(lab: &mut Lab) -> Verdict {
    let preset = Lab::preset(SEEDS[0], false);
    let demos = lab.bundle()?.num_demos();
    let (model, history, secs) = lab.fit_fresh(SEEDS[0], false)?;
    lab.proposed[0] = Some(model.clone());
    let train_rows: Vec<_> = history.iter().filter(|r| r.split == Split::Train).collect();
    let first = train_rows.first().ok_or("no history")?;
    let last = train_rows.last().ok_or("no history")?;
    let ratio = last.total / first.total;

    let bundle = lab.bundle()?;
    let m = &model.model;
    let (mut err, mut n) = (0.0, 0usize);
    for w in bundle.windows_in(Split::Validation) {
        let (mu, _) = m.encode_window(&bundle.normalized(w)).map_err(|e| e.to_string())?;
        for (s, &value) in mu.iter().enumerate().take(m.latent().constrained) {
            err += (m.label_probability(s, value).map_err(|e| e.to_string())? - w.labels[s]).abs();
            n += 1;
        }
    }
    let mae = err / n as f64;
    let ok = demos == 18
        && preset.hidden_dim == 64
        && preset.train.batch_size == 32
        && preset.train.epochs == 150
        && secs < 300.0
        && ratio <= 0.5
        && mae < 0.15;
    check(
        ok,
        format!(
            "{demos} demos, {} epochs in {secs:.0} s; total {:.4} -> {:.4} (ratio {ratio:.4}); held-out label MAE {mae:.4}",
            last.epoch, first.total, last.total
        ),
    )
}

fn references(scenario: &ScenarioConfig) -> Result<Vec<(String, Reference)>, String> {
    scenario
        .directives()
        .iter()
        .map(|d| Ok((d.to_string(), synthesize_reference(scenario, d, 4, true, 0).map_err(|e| e.to_string())?)))
        .collect()
}

/// MDE of every (directive, dim) pair the criterion needs: the constrained dim for the
/// proposed model, every dim for the baseline.
fn scores(model: &Arc<ModelCheckpoint>, dims: &[usize], refs: &[(String, Reference)]) -> Result<Vec<(String, usize, f64)>, String> {
    let engine = EngineConfig::default();
    let mut out = Vec::new();
    for &d in dims {
        let s = sweep(model, &engine, d, &SWEEP_COMMANDS, Parallelism::Rayon).map_err(|e| e.to_string())?;
        let flip = probe_direction(model, d, &SWEEP_COMMANDS).map_err(|e| e.to_string())?;
        for (directive, reference) in refs {
            match mde_from_sweep(&s, directive, reference, flip) {
                Ok(r) => out.push((directive.clone(), d, r.mde)),
                // A dim whose motions yield no feature line cannot realize the directive.
                Err(e) => {
                    eprintln!("{directive} dim {d}: {e}");
                    out.push((directive.clone(), d, f64::INFINITY));
                }
            }
        }
    }
    Ok(out)
}

fn disentanglement(lab: &mut Lab) -> Verdict {
    let refs = references(&lab.scenario)?;
    let mut wins = 0;
    let mut lines = Vec::new();
    for (i, seed) in SEEDS.iter().enumerate() {
        let proposed = lab.fit(i, false)?;
        let baseline = lab.fit(i, true)?;
        let spec = proposed.model.latent().clone();
        let own: Vec<usize> = refs.iter().map(|(d, _)| spec.index_of(d).unwrap()).collect();
        let mut dims = own.clone();
        dims.dedup();
        let p = scores(&proposed, &dims, &refs)?;
        let b = scores(&baseline, &(0..spec.dim()).collect::<Vec<_>>(), &refs)?;
        let mut seed_ok = true;
        let mut parts = Vec::new();
        for ((directive, _), &dim) in refs.iter().zip(&own) {
            let mine = p.iter().find(|(d, k, _)| d == directive && *k == dim).map(|t| t.2).unwrap();
            let theirs = b.iter().filter(|(d, _, _)| d == directive).map(|t| t.2).fold(f64::INFINITY, f64::min);
            seed_ok &= mine < 0.7 && mine < theirs;
            parts.push(format!("{directive} {mine:.3} vs {theirs:.3}"));
        }
        wins += seed_ok as usize;
        lines.push(format!("seed {seed} [{}] {}", parts.join(", "), if seed_ok { "ok" } else { "miss" }));
    }
    check(wins >= 2, format!("{wins}/3 seeds; {}", lines.join("; ")))
}

fn chunking_ablation(lab: &mut Lab) -> Verdict {
    let model = lab.fit(0, false)?;
    let cfg = AblationConfig {
        schemes: vec![WeightScheme::None, WeightScheme::default()],
        ..Default::default()
    };
    let rows = weight_ablation(&model, &cfg, Parallelism::Rayon).map_err(|e| e.to_string())?;
    let (none, log) = (&rows[0], &rows[1]);
    let paired = none.trials.iter().zip(&log.trials).filter(|(a, b)| a.jerk > b.jerk).count();
    let ok = none.trials.len() == 5 && paired == 5 && log.tsr.successes >= 4;
    check(
        ok,
        format!(
            "jerk none > inverse_log on {paired}/5 seeds (mean {:.3e} vs {:.3e}); inverse_log TSR {}",
            none.mean_jerk, log.mean_jerk, log.tsr
        ),
    )
}

fn protocol_fidelity() -> Verdict {
    let xs: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|&z| latent_to_x(z).unwrap()).collect();
    let mapped = xs == [0.0, 0.25, 0.5, 0.75, 1.0];
    let (a, b) = (-6.379, 12.414);
    let px = [0.0, 0.0, 0.5, 0.5, 1.0, 1.0];
    let py: Vec<f64> = px.iter().map(|x| a * x + b).collect();
    let line = fit_line(&px, &py).map_err(|e| e.to_string())?;
    let fitted = close(line.slope, a, 1e-9) && close(line.intercept, b, 1e-9);
    let mut outcomes = vec![Outcome::pass(); 8];
    outcomes.push(Outcome::fail("contact lost"));
    let report = tsr(&outcomes).map_err(|e| e.to_string())?;
    let text = report.to_string();
    let ok = mapped && fitted && text == "88.9% [8/9]";
    check(ok, format!("x {xs:?}; fit ({}, {}); tsr {text}", line.slope, line.intercept))
}

fn determinism(lab: &mut Lab) -> Verdict {
    let synth = || -> Result<Vec<u8>, String> {
        let demos = synthesize_grid(&lab.scenario, 2).map_err(|e| e.to_string())?;
        let bundle = DatasetBundle::build(&lab.scenario, &demos, &BuildConfig { hop: 8, ..Default::default() })
            .map_err(|e| e.to_string())?;
        Ok(bundle.to_bytes())
    };
    let synth_same = synth()? == synth()?;

    let bundle = lab.bundle()?.clone();
    let mut preset = Preset::smoke();
    preset.train.epochs = 4;
    preset.train.eval_every = 2;
    let config = preset.model_config(&bundle);
    let run = || -> Result<(String, String), String> {
        let out = train(&bundle, &config, &preset.train, None).map_err(|e| e.to_string())?;
        Ok((out.checkpoint.to_checkpoint(Some(&out.optimizer)).to_json(), history_csv(&out.history)))
    };
    let train_same = run()? == run()?;

    let model = lab.fit(0, false)?;
    let short = EngineConfig {
        duration_ticks: 2000,
        ..Default::default()
    };
    let eval = || -> Result<String, String> {
        let s = sweep(&model, &short, 1, &SWEEP_COMMANDS, Parallelism::Rayon).map_err(|e| e.to_string())?;
        serde_json::to_string(&s).map_err(|e| e.to_string())
    };
    let eval_same = eval()? == eval()?;
    check(
        synth_same && train_same && eval_same,
        format!("synth {synth_same}, train {train_same}, eval {eval_same}"),
    )
}

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use condwalk::apps::{
    abc_auto_tolerance, abc_conditional_oracle, is_rare_event_estimate, tv_distance_estimate, HistogramPair,
};
use condwalk::edgeworth::exponential_sup_error;
use condwalk::krule::select_k as run_select_k;
use condwalk::sampler::sample_batch;
use condwalk::schema::{build_spec, parse_json, LoadedSpec, SpecJson, TrajectoryRecord};
use condwalk::trajectory::trajectory_log_density;
use condwalk::{
    CenterRule, Direction, Event, FirstStepRule, GOptions, IsConfig, KRuleConfig, RatioConvention, SamplerConfig,
    SamplingMethod, StepMeanRule, Vector,
};

use crate::output::{io_err, open_output, read_text, resolve_seed, sibling, CliError, CliResult, Manifest};
use crate::{
    ConventionArg, DirectionArg, EdgeworthArgs, EstimateArgs, GFlags, LogpdfArgs, MethodArg, SampleArgs,
    SelectKArgs, ValidateArgs,
};

fn load(path: &Path) -> CliResult<(LoadedSpec, Value)> {
    let text = read_text(path)?;
    let raw: SpecJson = parse_json(&text)?;
    let value = serde_json::to_value(&raw).expect("spec serializes");
    Ok((build_spec(&raw)?, value))
}

fn g_options(flags: &GFlags, loaded: &LoadedSpec) -> GOptions {
    GOptions {
        step_mean: if flags.compat_mi {
            StepMeanRule::Literal
        } else {
            StepMeanRule::Remaining
        },
        center: if flags.compat_center {
            CenterRule::Target
        } else {
            CenterRule::StepMean
        },
        first_step: if flags.compat_g0 {
            FirstStepRule::Tilted
        } else {
            FirstStepRule::Kernel
        },
        normalization: loaded.normalization,
        ..GOptions::default()
    }
}

fn g_flags_json(flags: &GFlags) -> Value {
    json!({
        "compat_mi": flags.compat_mi,
        "compat_center": flags.compat_center,
        "compat_g0": flags.compat_g0,
    })
}

fn method(m: MethodArg) -> SamplingMethod {
    match m {
        MethodArg::Auto => SamplingMethod::Auto,
        MethodArg::Ar => SamplingMethod::AcceptReject,
        MethodArg::Mcmc => SamplingMethod::Mcmc,
    }
}

fn write_line(w: &mut dyn Write, value: &impl Serialize, out: Option<&Path>) -> CliResult<()> {
    serde_json::to_writer(&mut *w, value).expect("record serializes");
    w.write_all(b"\n").map_err(io_err(out))
}

pub fn sample(a: &SampleArgs) -> CliResult<()> {
    let (loaded, spec_json) = load(&a.spec)?;
    let seed = resolve_seed(a.common.seed);
    let opts = g_options(&a.g, &loaded);
    let cfg = SamplerConfig {
        method: method(a.method),
        seed,
        evaluate_density: !a.no_density,
        ..SamplerConfig::default()
    };
    let mut manifest = Manifest::new(
        "sample",
        seed,
        json!({"spec": spec_json, "count": a.count, "method": format!("{:?}", a.method), "g": g_flags_json(&a.g)}),
    );
    let draws = sample_batch(&loaded.spec, &opts, &cfg, a.count, a.common.workers)?;
    let out = a.common.out.as_deref();
    let mut w = open_output(out)?;
    for d in &draws {
        write_line(&mut *w, &TrajectoryRecord::from_trajectory(&d.trajectory), out)?;
    }
    w.flush().map_err(io_err(out))?;
    if let Some(p) = out {
        manifest.output(p);
    }
    manifest.finish(out)
}

#[derive(Serialize)]
struct LogpdfRecord {
    index: usize,
    log_g: Option<f64>,
    per_step: Vec<f64>,
    normalization_se: Vec<f64>,
}

pub fn logpdf(a: &LogpdfArgs) -> CliResult<()> {
    let (loaded, spec_json) = load(&a.spec)?;
    let opts = g_options(&a.g, &loaded);
    let file = std::fs::File::open(&a.input).map_err(io_err(Some(&a.input)))?;
    let mut manifest = Manifest::new(
        "logpdf",
        loaded.normalization.seed,
        json!({"spec": spec_json, "input": a.input.display().to_string(), "g": g_flags_json(&a.g)}),
    );
    let out = a.common.out.as_deref();
    let mut w = open_output(out)?;
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(Some(&a.input)))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = parse_json(&line)
            .map_err(|e| CliError::Config(format!("{} line {}: {e}", a.input.display(), index + 1)))?;
        let eval = trajectory_log_density(&loaded.spec, &record.step_vectors(), &opts)
            .map_err(|e| CliError::Core(e.at_trajectory(index)))?;
        write_line(
            &mut *w,
            &LogpdfRecord {
                index,
                log_g: eval.log_g,
                per_step: eval.per_step,
                normalization_se: eval.normalization_se,
            },
            out,
        )?;
    }
    w.flush().map_err(io_err(out))?;
    if let Some(p) = out {
        manifest.output(p);
    }
    manifest.finish(out)
}

pub fn select_k(a: &SelectKArgs) -> CliResult<()> {
    let (loaded, spec_json) = load(&a.spec)?;
    let seed = resolve_seed(a.common.seed);
    let opts = g_options(&a.g, &loaded);
    let cfg = KRuleConfig {
        l: a.l,
        delta: a.delta,
        k_grid: a.grid.clone(),
        seed,
        convention: match a.convention {
            ConventionArg::Consistent => RatioConvention::Consistent,
            ConventionArg::Displayed => RatioConvention::Displayed,
        },
        workers: a.common.workers,
        ..KRuleConfig::default()
    };
    let mut manifest = Manifest::new(
        "select-k",
        seed,
        json!({"spec": spec_json, "grid": a.grid, "L": a.l, "delta": a.delta,
               "convention": format!("{:?}", a.convention), "g": g_flags_json(&a.g)}),
    );
    let (k_star, reports) = run_select_k(&loaded.spec, &opts, &cfg)?;
    let out = a.common.out.as_deref();
    let mut w = open_output(out)?;
    writeln!(w, "k,ERE,VRE,CI_lo,CI_hi,accepted").map_err(io_err(out))?;
    for r in &reports {
        writeln!(w, "{},{},{},{},{},{}", r.k, r.ere, r.vre, r.ci.0, r.ci.1, r.accepted).map_err(io_err(out))?;
    }
    w.flush().map_err(io_err(out))?;
    match k_star {
        Some(k) => eprintln!("k* = {k}"),
        None => eprintln!("no k in the grid was accepted"),
    }
    if let Some(p) = out {
        manifest.output(p);
    }
    manifest.result("k_star", json!(k_star));
    manifest.finish(out)
}

pub fn estimate(a: &EstimateArgs) -> CliResult<()> {
    let (loaded, spec_json) = load(&a.spec)?;
    let seed = resolve_seed(a.common.seed);
    let threshold = Vector::from_column_slice(&a.threshold);
    let event = match a.direction {
        DirectionArg::Above => Event::above(threshold),
        DirectionArg::Below => Event::below(threshold),
    };
    let cfg = IsConfig {
        budget: a.budget,
        k: a.k,
        seed,
        workers: a.common.workers,
        sampler: SamplerConfig {
            method: method(a.method),
            seed,
            ..SamplerConfig::default()
        },
        g: g_options(&a.g, &loaded),
    };
    let mut manifest = Manifest::new(
        "estimate",
        seed,
        json!({"spec": spec_json, "threshold": a.threshold, "direction": format!("{:?}", a.direction),
               "budget": a.budget, "k": a.k, "g": g_flags_json(&a.g)}),
    );
    let spec = &loaded.spec;
    let est = is_rare_event_estimate(&spec.model, spec.umap(), spec.n, &event, &cfg)?;
    let report = json!({
        "p_hat": est.p_hat,
        "se": est.se,
        "budget": est.budget,
        "k": est.k,
        "max_weight": est.max_weight,
        "ess": est.ess,
        "dominating_point": est.dominating_point.as_slice(),
        "direction": match event.directions[0] {
            Direction::Above => "above",
            Direction::Below => "below",
        },
        "warning": est.warning,
    });
    let out = a.common.out.as_deref();
    let mut w = open_output(out)?;
    writeln!(w, "{}", serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))?;
    if let Some(p) = out {
        manifest.output(p);
    }
    manifest.finish(out)
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    let (loaded, spec_json) = load(&a.spec)?;
    let seed = resolve_seed(a.common.seed);
    let spec = &loaded.spec;
    let opts = g_options(&a.g, &loaded);
    let h = match a.tolerance {
        Some(h) => h,
        None => abc_auto_tolerance(spec, a.budget, (45 * a.bins).max(200), seed)?,
    };
    let mut manifest = Manifest::new(
        "validate",
        seed,
        json!({"spec": spec_json, "count": a.count, "budget": a.budget, "tolerance": h,
               "bins": a.bins, "g": g_flags_json(&a.g)}),
    );
    let abc = abc_conditional_oracle(spec, h, a.budget, seed, a.common.workers)?;
    let cfg = SamplerConfig {
        method: method(a.method),
        seed: seed.wrapping_add(1),
        evaluate_density: false,
        ..SamplerConfig::default()
    };
    let draws = sample_batch(spec, &opts, &cfg, a.count, a.common.workers)?;
    let d = spec.dim();
    let mut tv = Vec::with_capacity(spec.k);
    let mut hist_rows = Vec::new();
    for step in 0..spec.k {
        let abc_rows = abc.step_rows(step);
        let g_rows: Vec<Vec<f64>> =
            draws.iter().map(|t| t.trajectory.steps[step].as_slice().to_vec()).collect();
        tv.push(tv_distance_estimate(&abc_rows, &g_rows, a.bins)?);
        for coord in 0..d.min(2) {
            let xa: Vec<f64> = abc_rows.iter().map(|r| r[coord]).collect();
            let xg: Vec<f64> = g_rows.iter().map(|r| r[coord]).collect();
            let pair = HistogramPair::new(&xa, &xg, a.bins);
            for bin in 0..a.bins {
                let lo = if bin == 0 { f64::NEG_INFINITY } else { pair.edges[bin - 1] };
                let hi = pair.edges.get(bin).copied().unwrap_or(f64::INFINITY);
                hist_rows.push(format!("{step},{coord},{bin},{lo},{hi},{},{}", pair.a[bin], pair.b[bin]));
            }
        }
    }
    let report = json!({
        "tolerance": h,
        "proposals": abc.proposals,
        "accepted": abc.accepted(),
        "acceptance_rate": abc.acceptance_rate(),
        "acceptance_rate_se": abc.rate_se(),
        "g_samples": draws.len(),
        "bins": a.bins,
        "tv_per_step": tv,
        "tv_max": tv.iter().copied().fold(0.0, f64::max),
    });
    let out = a.common.out.as_deref();
    let mut w = open_output(out)?;
    writeln!(w, "{}", serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))?;
    if let Some(p) = out {
        manifest.output(p);
        let hist = sibling(p, ".hist.csv");
        let mut body = String::from("step,coord,bin,lo,hi,abc,g\n");
        for row in hist_rows {
            body.push_str(&row);
            body.push('\n');
        }
        std::fs::write(&hist, body).map_err(io_err(Some(&hist)))?;
        manifest.output(&hist);
    }
    manifest.finish(out)
}

pub fn edgeworth_check(a: &EdgeworthArgs) -> CliResult<()> {
    let seed = a.common.seed.unwrap_or(0);
    let mut manifest = Manifest::new("edgeworth-check", seed, json!({"grid": a.grid}));
    let out = a.common.out.as_deref();
    let mut w = open_output(out)?;
    writeln!(w, "n,sup_error,ratio_to_previous").map_err(io_err(out))?;
    let mut previous: Option<f64> = None;
    for &n in &a.grid {
        let e = exponential_sup_error(n)?;
        let ratio = previous.map_or(String::new(), |p| (e / p).to_string());
        writeln!(w, "{n},{e},{ratio}").map_err(io_err(out))?;
        previous = Some(e);
    }
    w.flush().map_err(io_err(out))?;
    if let Some(p) = out {
        manifest.output(p);
    }
    manifest.finish(out)
}

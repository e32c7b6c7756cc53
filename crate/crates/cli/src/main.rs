#![allow(clippy::neg_cmp_op_on_partial_ord)]
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use assignflow::counterexample::{
    build_nonpos_diag_example, circulant_from_params, parameter_sweep, regime_classify, run_representative,
    run_wflow_demo, seeded_start, CirculantParams, RunConfig, Scheme,
};
use assignflow::linear_flow::{laf_spectrum_report, predict_limit, LimitPrediction, LinearSystem};
use assignflow::pipeline::{
    build_uniform_weights, label, read_edge_list, read_feature_csv, read_labeling_csv, read_pnm, tricolor_instance,
    phase_portrait, write_labeling_csv, GridSpec, LabelSet, PortraitSystem,
};
use assignflow::simplex::{project_tangent, AssignmentState, SimplexPoint};
use assignflow::stability::{jacobian, write_spectrum_csv};
use assignflow::{classify, sflow_init, DistanceMatrix, IntegratorConfig, TerminationMode, WeightMatrix};

#[derive(Parser)]
#[command(name = "assignflow", version, about = "Graph labeling with S-flows and certified rounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label a grid or graph and write labeling, certificate and trajectory.
    Label(LabelArgs),
    /// Classify an integral labeling as an equilibrium of the S-flow.
    Stability(StabilityArgs),
    /// Sample an S-flow or representative vector field on a regular grid.
    Portrait(PortraitArgs),
    /// Run the circulant and zero-diagonal counterexamples.
    Counterexample(CounterexampleArgs),
    /// Spectrum and limit prediction of the linear assignment flow.
    Linflow(LinflowArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Edge list `i,k,omega` (0-based). Overrides grid weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Grid size as HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Chebyshev neighborhood radius for grid weights.
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct IntegratorArgs {
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value_t = 1e-3)]
    entropy_eps: f64,
    #[arg(long, default_value_t = 100_000)]
    max_steps: usize,
    #[arg(long, default_value_t = 10)]
    record_every: usize,
    #[arg(long, value_enum, default_value_t = Mode::Certified)]
    mode: Mode,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Certified,
    Entropy,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    Tricolor,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    integrator: IntegratorArgs,
    /// Feature CSV (one row per vertex) or binary PGM/PPM image.
    #[arg(long, conflicts_with = "example")]
    input: Option<PathBuf>,
    /// Bundled instance instead of --input.
    #[arg(long, value_enum)]
    example: Option<Example>,
    /// Prototype CSV, one feature vector per label. Defaults to unit vectors.
    #[arg(long)]
    prototypes: Option<PathBuf>,
    /// Multiplier on distances.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    common: Common,
    /// Integer labeling CSV; one grid row per line.
    #[arg(long, conflicts_with = "example")]
    labeling: Option<PathBuf>,
    #[arg(long, value_enum)]
    example: Option<Example>,
    /// Number of labels (default: largest label + 1).
    #[arg(long)]
    labels: Option<usize>,
}

#[derive(Args)]
struct PortraitArgs {
    #[command(flatten)]
    common: Common,
    /// Representative flow with these circulant parameters instead of --weights.
    #[arg(long, requires = "gamma", allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha", allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 21)]
    resolution: usize,
}

#[derive(Args)]
struct CounterexampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0 / 3.0, allow_hyphen_values = true)]
    gamma: f64,
    /// Start point `p1,p2,p3`; drawn from --seed when absent.
    #[arg(long, value_delimiter = ',')]
    p0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.01)]
    h: f64,
    #[arg(long, default_value_t = 200.0)]
    t_end: f64,
    /// Sweep an N×N grid over (alpha, gamma) instead of a single run.
    #[arg(long)]
    sweep: Option<usize>,
    /// Also write the S/W trajectory of the demonstration instance.
    #[arg(long)]
    wflow: bool,
    /// Write the zero-diagonal example spectra.
    #[arg(long)]
    nonpos: bool,
}

#[derive(Args)]
struct LinflowArgs {
    #[command(flatten)]
    common: Common,
    /// Distance matrix CSV, one row per vertex.
    #[arg(long)]
    distances: PathBuf,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HEIGHTxWIDTH")?;
    let h = h.trim().parse().map_err(|_| "bad height")?;
    let w = w.trim().parse().map_err(|_| "bad width")?;
    if h == 0 || w == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((h, w))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
}

/// Weights from --weights, else from --grid (or the fallback shape).
fn weights(common: &Common, shape: Option<(usize, usize)>, m: usize) -> Result<(WeightMatrix, usize)> {
    if let Some(p) = &common.weights {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return Ok((read_edge_list(&text, Some(m))?, 1));
    }
    let (h, w) = common.grid.or(shape).ok_or_else(|| anyhow!("either --weights or --grid is required"))?;
    if h * w != m {
        bail!("grid {h}x{w} has {} pixels but the data has {m} vertices", h * w);
    }
    Ok((build_uniform_weights(&GridSpec::new(h, w, common.radius))?, w))
}

fn integrator_config(a: &IntegratorArgs) -> IntegratorConfig {
    IntegratorConfig {
        h: a.h,
        max_steps: a.max_steps,
        entropy_threshold: a.entropy_eps,
        record_every: a.record_every,
        termination_mode: match a.mode {
            Mode::Certified => TerminationMode::AttractionCertified,
            Mode::Entropy => TerminationMode::Entropy,
            Mode::Fixed => TerminationMode::FixedSteps,
        },
    }
}

fn cmd_label(a: LabelArgs) -> Result<ExitCode> {
    let (data, shape, default_labels) = match (&a.input, a.example) {
        (_, Some(Example::Tricolor)) => {
            let inst = tricolor_instance();
            (inst.data, Some((inst.grid.height, inst.grid.width)), Some(inst.labels))
        }
        (Some(p), None) => {
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
            if ext == "pgm" || ext == "ppm" {
                let img = read_pnm(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)?;
                (img.features, Some((img.height, img.width)), None)
            } else {
                (read_feature_csv(&fs::read_to_string(p)?)?, None, None)
            }
        }
        (None, None) => bail!("one of --input or --example is required"),
    };
    let labels = match (&a.prototypes, default_labels) {
        (Some(p), _) => LabelSet::new(read_feature_csv(&fs::read_to_string(p)?)?, a.scale.unwrap_or(1.0))?,
        (None, Some(l)) => LabelSet::new(l.prototypes().to_vec(), a.scale.unwrap_or(l.scale))?,
        (None, None) => LabelSet::unit_vectors(data[0].len(), a.scale.unwrap_or(1.0))?,
    };
    let (omega, width) = weights(&a.common, shape, data.len())?;
    let out = label(&data, &labels, &omega, &integrator_config(&a.integrator))?;

    let dir = &a.common.out_dir;
    fs::create_dir_all(dir)?;
    write_labeling_csv(&out.labeling, width, create(dir, "labeling.csv")?)?;
    create(dir, "certificate.txt")?.write_all(out.certificate_kv().as_bytes())?;
    out.trajectory.write_long_csv(create(dir, "trajectory.csv")?)?;
    out.trajectory.write_diagnostics_csv(create(dir, "diagnostics.csv")?)?;
    if let Some(r) = &out.report {
        r.write_spectrum_csv(create(dir, "spectrum.csv")?)?;
    }
    let certified = out.certified();
    println!(
        "certified={certified} steps={} criterion={}",
        out.termination.steps,
        out.termination.criterion.as_str()
    );
    Ok(if certified { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_stability(a: StabilityArgs) -> Result<ExitCode> {
    let (labeling, shape) = match (&a.labeling, a.example) {
        (_, Some(Example::Tricolor)) => {
            let inst = tricolor_instance();
            (inst.input_labels, Some((inst.grid.height, inst.grid.width)))
        }
        (Some(p), None) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let width = rows.first().map_or(0, |r| r.split(',').count());
            (read_labeling_csv(&text)?, Some((rows.len(), width)))
        }
        (None, None) => bail!("one of --labeling or --example is required"),
    };
    let n = a.labels.unwrap_or_else(|| labeling.iter().max().map_or(0, |m| m + 1)).max(2);
    let (omega, _) = weights(&a.common, shape, labeling.len())?;
    let sstar = AssignmentState::from_labels(&labeling, n)?;
    let report = classify(&sstar, &omega)?;
    let dir = &a.common.out_dir;
    fs::create_dir_all(dir)?;
    create(dir, "report.txt")?.write_all(report.to_kv().as_bytes())?;
    report.write_spectrum_csv(create(dir, "spectrum.csv")?)?;
    println!("classification={}", report.classification.as_str());
    Ok(ExitCode::SUCCESS)
}

fn cmd_portrait(a: PortraitArgs) -> Result<ExitCode> {
    let dir = &a.common.out_dir;
    fs::create_dir_all(dir)?;
    let out = create(dir, "portrait.csv")?;
    let count = match (a.alpha, a.gamma, &a.common.weights) {
        (Some(al), Some(g), _) => {
            let omega = circulant_from_params(&CirculantParams::n3(al, g))?;
            phase_portrait(PortraitSystem::Representative(&omega), a.resolution, out)?
        }
        (_, _, Some(p)) => {
            let omega = read_edge_list(&fs::read_to_string(p)?, None)?;
            phase_portrait(PortraitSystem::SFlow(&omega), a.resolution, out)?
        }
        _ => bail!("either --weights or --alpha/--gamma is required"),
    };
    println!("samples={count}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_counterexample(a: CounterexampleArgs) -> Result<ExitCode> {
    let dir = &a.common.out_dir;
    fs::create_dir_all(dir)?;
    if !(a.h > 0.0) || !(a.t_end > 0.0) {
        bail!("--h and --t-end must be positive");
    }
    let steps = (a.t_end / a.h).round() as usize;
    let cfg = RunConfig { h: a.h, steps, record_every: (steps / 2000).max(1), scheme: Scheme::LiftedRk4 };

    if a.nonpos {
        let ex = build_nonpos_diag_example();
        let mut f = create(dir, "nonpos_spectrum.csv")?;
        writeln!(f, "p,re,im")?;
        for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let ev = assignflow::eigen::eigenvalues(&jacobian(&ex.line_point(p)?, &ex.omega)?)?;
            for z in ev {
                writeln!(f, "{p},{},{}", z.re, z.im)?;
            }
        }
    }

    if let Some(k) = a.sweep {
        if k < 2 {
            bail!("--sweep needs at least 2 points per axis");
        }
        let lin = |lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect() };
        let sweep = parameter_sweep(&lin(-0.5, 0.9), &lin(-0.5, 0.5), &cfg, a.common.seed)?;
        sweep.write_csv(create(dir, "sweep.csv")?)?;
        writeln!(create(dir, "sweep_meta.txt")?, "seed={}\nh={}\nsteps={}", sweep.seed, cfg.h, cfg.steps)?;
        println!("sweep_rows={}", sweep.rows.len());
        return Ok(ExitCode::SUCCESS);
    }

    let params = CirculantParams::n3(a.alpha, a.gamma);
    let p0 = match &a.p0 {
        Some(v) if v.len() == 3 => SimplexPoint::new(v.clone())?,
        Some(_) => bail!("--p0 needs three comma-separated values"),
        None => seeded_start(a.common.seed, 3),
    };
    let run = run_representative(&params, &p0, &cfg)?;
    let regime = regime_classify(&params)?;
    let mut f = create(dir, "representative.csv")?;
    writeln!(f, "t,p1,p2,p3,pi")?;
    for (t, p) in run.times.iter().zip(&run.samples) {
        writeln!(f, "{t},{},{},{},{}", p[0], p[1], p[2], p.iter().product::<f64>())?;
    }
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
    let summary = format!(
        "alpha={}\ngamma={}\nseed={}\nregime={}\nfinal_p={:?}\nmin_p={}\nwinding={}\npi_initial={}\npi_final={}\n\
         max_pi_drift={}\nsign_violations={}\nperiod={}\nreturn_distance={}\n",
        a.alpha,
        a.gamma,
        a.common.seed,
        regime.as_str(),
        run.final_p,
        run.min_p,
        run.winding,
        run.pi_initial,
        run.pi_final,
        run.max_pi_drift,
        run.sign_violations,
        opt(run.period),
        opt(run.return_distance),
    );
    create(dir, "summary.txt")?.write_all(summary.as_bytes())?;

    if a.wflow {
        let demo = run_wflow_demo(&params, &cfg)?;
        let mut f = create(dir, "wflow.csv")?;
        writeln!(f, "t,i,j,s,w")?;
        for ((t, s), w) in demo.times.iter().zip(&demo.s).zip(&demo.w) {
            for i in 0..3 {
                for j in 0..3 {
                    writeln!(f, "{t},{i},{j},{},{}", s.get(i, j), w.get(i, j))?;
                }
            }
        }
    }
    println!("regime={} winding={} min_p={}", regime.as_str(), run.winding, run.min_p);
    Ok(ExitCode::SUCCESS)
}

fn cmd_linflow(a: LinflowArgs) -> Result<ExitCode> {
    let rows = read_feature_csv(&fs::read_to_string(&a.distances)?)?;
    let d = DistanceMatrix::from_rows(&rows)?;
    let (omega, width) = weights(&a.common, None, d.m())?;
    let shat = sflow_init(&d, &omega)?;
    let w0 = AssignmentState::barycenter(d.m(), d.n());
    let v0: Vec<f64> = rows
        .iter()
        .flat_map(|r| project_tangent(&r.iter().map(|v| -v).collect::<Vec<_>>()).into_vec())
        .collect();
    let sys = LinearSystem::homogeneous(omega, shat, w0)?;
    let report = laf_spectrum_report(&sys)?;
    let dir = &a.common.out_dir;
    fs::create_dir_all(dir)?;
    write_spectrum_csv(&report.eigenvalues, create(dir, "spectrum.csv")?)?;
    let mut summary = format!(
        "rank={}\nnullspace_dim={}\nrealness={}\npositivity_class={:?}\n",
        report.rank, report.nullspace_dim, report.realness, report.positivity_class
    );
    match predict_limit(&sys, &v0)? {
        LimitPrediction::Determinate { dominant, c1, limit } => {
            summary += &format!("prediction=determinate\ndominant_eigenvalue={}\nc1={c1}\n", dominant.value);
            let labels = limit.labels();
            summary += &format!("tie_rows={}\n", limit.tie_rows.len());
            let mut f = create(dir, "prediction.csv")?;
            for row in labels.chunks(width) {
                let line: Vec<String> = row.iter().map(|l| l.map_or("-1".into(), |v| v.to_string())).collect();
                writeln!(f, "{}", line.join(","))?;
            }
        }
        LimitPrediction::Indeterminate { dominant, c1 } => {
            summary += &format!("prediction=indeterminate\ndominant_eigenvalue={}\nc1={c1}\n", dominant.value);
        }
    }
    create(dir, "summary.txt")?.write_all(summary.as_bytes())?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("AF_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow!("AF_THREADS must be a positive integer"))?;
        if n == 0 {
            bail!("AF_THREADS must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    // usage errors exit with 1; 2 is reserved for uncertified labelings
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|_| match cli.command {
        Command::Label(a) => cmd_label(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Portrait(a) => cmd_portrait(a),
        Command::Counterexample(a) => cmd_counterexample(a),
        Command::Linflow(a) => cmd_linflow(a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

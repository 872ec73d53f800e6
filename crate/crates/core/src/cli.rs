//! Command-line interface: dataset synthesis, training, inference, noise
//! sweeps, self-tests, and the end-to-end annulus-and-disks scenario.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 numeric failure.

use crate::baselines::{select_lambda, CHI_MAX_DEFAULT};
use crate::error::{Error, Result};
use crate::eval::{noise_sweep, render_map, sweep_to_csv, Method};
use crate::forward::{
    green_domain, green_measure, incident_fields, scattered_field, solve_total_field,
    GreenDomain, GreenMeasure,
};
use crate::io::{load_dataset, load_model, save_dataset, save_model, save_raw_map};
use crate::linop::BornOperator;
use crate::lmn::{lmn_infer, LmnModel};
use crate::scene::{
    austria_profile, derive_seed, load_idx_images, procedural_glyph, procedural_ring_or_disk,
    rasterize_glyph, resample_contrast, ContrastMap, Scenario,
};
use crate::train::{calibrate_input_scale, train, AdamState, Sample, TrainConfig};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "lmn-isp", version, about = "2D TM inverse scattering: forward solver, linear baselines, and an unrolled denoiser-CG network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of scatterers and scattered-field data.
    GenData(GenDataArgs),
    /// Train the unrolled network on a dataset.
    Train(TrainArgs),
    /// Reconstruct one dataset sample with a trained model.
    Infer(InferArgs),
    /// Evaluate methods across noise levels and write a CSV report.
    Sweep(SweepArgs),
    /// Run built-in numerical health checks.
    Selftest,
    /// End-to-end annulus-and-disks benchmark: generate, train, sweep.
    Austria(AustriaArgs),
}

/// Options shared by data-producing commands; a JSON config file provides
/// defaults and explicit flags override it.
#[derive(Args, Clone, Default)]
struct ScenarioArgs {
    /// JSON configuration file (flags override its values).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Forward (data synthesis) grid cells per side.
    #[arg(long)]
    forward_n: Option<usize>,
    /// Inversion grid cells per side.
    #[arg(long)]
    inversion_n: Option<usize>,
    /// Fractional measurement noise level (e.g. 0.1 for 10%).
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Scatterer family: "glyphs" or "rings".
    #[arg(long)]
    source: Option<String>,
    /// IDX image file; takes precedence over the procedural glyphs.
    #[arg(long)]
    idx_images: Option<PathBuf>,
    /// Lower relative permittivity bound.
    #[arg(long)]
    eps_lo: Option<f64>,
    /// Upper relative permittivity bound.
    #[arg(long)]
    eps_hi: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for the final model and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// JSON configuration file (flags override its values).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Unroll depth K.
    #[arg(long)]
    k: Option<usize>,
    /// Denoiser depth D.
    #[arg(long)]
    depth: Option<usize>,
    /// Denoiser channels.
    #[arg(long)]
    channels: Option<usize>,
    /// Disable batch normalization.
    #[arg(long)]
    no_bn: bool,
    /// Checkpoint cadence in epochs (0 disables).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    /// Model checkpoint directory.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Sample index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Output directory (PNG render plus raw array).
    #[arg(long)]
    out: PathBuf,
    /// Noise level applied to the stored clean data.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Model checkpoint directory (required for the lmn method).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Test dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated noise levels, e.g. 0,0.1,0.15,0.2.
    #[arg(long, default_value = "0,0.1,0.15,0.2")]
    levels: String,
    /// Comma-separated methods from {lmn, ba_tikhonov, ba_tsvd}.
    #[arg(long, default_value = "lmn,ba_tikhonov")]
    methods: String,
    /// TSVD truncation rank.
    #[arg(long, default_value_t = 150)]
    rank: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Record measured wall times in the CSV (off keeps bytes reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct AustriaArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of ring/disk training samples.
    #[arg(long, default_value_t = 100)]
    train_samples: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Unroll depth K.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Denoiser depth D.
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Comma-separated noise levels for the test sweep.
    #[arg(long, default_value = "0,0.1,0.2,0.3")]
    levels: String,
    /// Record measured wall times in the CSV.
    #[arg(long)]
    timing: bool,
}

/// JSON configuration file contents; every field optional.
#[derive(serde::Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    frequency: Option<f64>,
    extent: Option<f64>,
    forward_n: Option<usize>,
    inversion_n: Option<usize>,
    tx_count: Option<usize>,
    tx_diameter: Option<f64>,
    rx_count: Option<usize>,
    rx_diameter: Option<f64>,
    noise_level: Option<f64>,
    seed: Option<u64>,
    samples: Option<usize>,
    source: Option<String>,
    eps_lo: Option<f64>,
    eps_hi: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    unroll_depth: Option<usize>,
    denoiser_depth: Option<usize>,
    channels: Option<usize>,
    use_bn: Option<bool>,
    checkpoint_every: Option<usize>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::argument(format!("config {p:?}: {e}")))
        }
    }
}

fn build_scenario(args: &ScenarioArgs, file: &FileConfig) -> Result<Scenario> {
    let mut s = Scenario::reference(
        args.forward_n.or(file.forward_n).unwrap_or(64),
        args.inversion_n.or(file.inversion_n).unwrap_or(30),
        args.seed.or(file.seed).unwrap_or(0),
    )?;
    if let Some(f) = file.frequency {
        s.frequency = f;
    }
    if let Some(e) = file.extent {
        s.forward_grid = crate::scene::Grid::new(e, s.forward_grid.n())?;
        s.inversion_grid = crate::scene::Grid::new(e, s.inversion_grid.n())?;
    }
    if let (Some(c), d) = (file.tx_count, file.tx_diameter) {
        s.tx_ring = crate::scene::SensorRing::new(c, d.unwrap_or(s.tx_ring.diameter()))?;
    } else if let Some(d) = file.tx_diameter {
        s.tx_ring = crate::scene::SensorRing::new(s.tx_ring.count(), d)?;
    }
    if let (Some(c), d) = (file.rx_count, file.rx_diameter) {
        s.rx_ring = crate::scene::SensorRing::new(c, d.unwrap_or(s.rx_ring.diameter()))?;
    } else if let Some(d) = file.rx_diameter {
        s.rx_ring = crate::scene::SensorRing::new(s.rx_ring.count(), d)?;
    }
    s.noise_level = args.noise.or(file.noise_level).unwrap_or(0.0);
    s.validate()?;
    Ok(s)
}

/// Forward-model machinery shared by every sample of one scenario.
pub struct ForwardContext {
    pub scenario: Scenario,
    pub gd: GreenDomain,
    pub gs: GreenMeasure,
    pub e_inc: crate::linalg::CMat,
}

impl ForwardContext {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let k0 = scenario.wavenumber();
        Ok(ForwardContext {
            scenario: scenario.clone(),
            gd: green_domain(&scenario.forward_grid, k0)?,
            gs: green_measure(&scenario.forward_grid, &scenario.rx_ring, k0)?,
            e_inc: incident_fields(&scenario.forward_grid, &scenario.tx_ring, k0)?,
        })
    }

    /// Solve the full nonlinear forward problem for one contrast and build
    /// the (clean) sample with its inversion-grid label.
    pub fn synthesize(&self, forward_map: &ContrastMap) -> Result<Sample> {
        let e_tot = solve_total_field(&self.gd, forward_map, &self.e_inc)?;
        let data = scattered_field(&self.gs, forward_map, &e_tot)?;
        let label = resample_contrast(forward_map, &self.scenario.inversion_grid)?;
        Ok(Sample { label, data })
    }
}

/// Generate glyph samples: IDX images when provided, else procedural.
pub fn glyph_samples(
    ctx: &ForwardContext,
    count: usize,
    idx: Option<&Path>,
    eps_lo: f64,
    eps_hi: f64,
    master_seed: u64,
) -> Result<Vec<Sample>> {
    if !(1.0 < eps_lo && eps_lo < eps_hi) {
        return Err(Error::argument("permittivity range must satisfy 1 < lo < hi"));
    }
    let images = match idx {
        Some(p) => Some(load_idx_images(p)?),
        None => None,
    };
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let sample_seed = derive_seed(master_seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let eps = rng.gen_range(eps_lo..eps_hi);
        let mut map = None;
        for attempt in 0..100u64 {
            let bitmap = match &images {
                Some(imgs) => imgs[(i + attempt as usize) % imgs.len()].clone(),
                None => procedural_glyph(derive_seed(sample_seed, attempt)),
            };
            let (m, empty) = rasterize_glyph(&bitmap, eps, &ctx.scenario.forward_grid)?;
            if !empty {
                map = Some(m);
                break;
            }
        }
        let map = map.ok_or_else(|| Error::numeric("could not draw a non-empty scatterer"))?;
        samples.push(ctx.synthesize(&map)?);
    }
    Ok(samples)
}

/// Generate annulus/disk samples in a permittivity range.
pub fn ring_samples(
    ctx: &ForwardContext,
    count: usize,
    eps_lo: f64,
    eps_hi: f64,
    master_seed: u64,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let seed = derive_seed(master_seed, i as u64);
        let map = procedural_ring_or_disk(seed, eps_lo, eps_hi, &ctx.scenario.forward_grid);
        samples.push(ctx.synthesize(&map)?);
    }
    Ok(samples)
}

fn parse_levels(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| Error::argument(format!("bad noise level {part:?}")))?;
        if !(0.0..1.0).contains(&v) {
            return Err(Error::argument(format!("noise level {v} outside [0, 1)")));
        }
        out.push(v);
    }
    Ok(out)
}

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::argument(format!("missing required flag {flag}")))
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let file = load_config(&args.scenario.config)?;
    let scenario = build_scenario(&args.scenario, &file)?;
    let count = args.samples.or(file.samples).unwrap_or(200);
    let source = args
        .source
        .clone()
        .or(file.source.clone())
        .unwrap_or_else(|| "glyphs".to_string());
    let ctx = ForwardContext::new(&scenario)?;
    let samples = match source.as_str() {
        "glyphs" => glyph_samples(
            &ctx,
            count,
            args.idx_images.as_deref(),
            args.eps_lo.or(file.eps_lo).unwrap_or(1.5),
            args.eps_hi.or(file.eps_hi).unwrap_or(2.4),
            scenario.seed,
        )?,
        "rings" => ring_samples(
            &ctx,
            count,
            args.eps_lo.or(file.eps_lo).unwrap_or(1.1),
            args.eps_hi.or(file.eps_hi).unwrap_or(2.0),
            scenario.seed,
        )?,
        other => return Err(Error::argument(format!("unknown source {other:?}"))),
    };
    save_dataset(&args.out, &scenario, &samples)?;
    println!("wrote {} samples to {:?}", samples.len(), args.out);
    Ok(())
}

fn train_config_from(args: &TrainArgs, file: &FileConfig) -> TrainConfig {
    let defaults = TrainConfig::default();
    TrainConfig {
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        learning_rate: args
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        checkpoint_every: args
            .checkpoint_every
            .or(file.checkpoint_every)
            .unwrap_or(defaults.checkpoint_every),
        ..defaults
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = load_config(&args.config)?;
    let dataset = require(&args.dataset, "--dataset")?;
    let (scenario, samples) = load_dataset(dataset)?;
    let cfg = train_config_from(args, &file);
    let depth = args.depth.or(file.denoiser_depth).unwrap_or(5);
    let channels = args.channels.or(file.channels).unwrap_or(64);
    let use_bn = if args.no_bn {
        false
    } else {
        file.use_bn.unwrap_or(true)
    };
    let k = args.k.or(file.unroll_depth).unwrap_or(5);
    let mut a = BornOperator::for_scenario(&scenario)?;
    a.cache_gram();
    let mut model = LmnModel::new(depth, channels, use_bn, k, derive_seed(cfg.seed, 0x6d6f64))?;
    std::fs::create_dir_all(&args.out)?;
    let out = args.out.clone();
    let cfg_for_ckpt = cfg.clone();
    let scenario_ckpt = scenario.clone();
    let history = train(&mut model, &a, &samples, &cfg, move |epoch, m, st| {
        save_model(
            &out.join(format!("checkpoint-{:04}", epoch + 1)),
            m,
            st,
            &cfg_for_ckpt,
            epoch + 1,
            Some(&scenario_ckpt),
        )
    })?;
    let final_state = AdamState::new(crate::train::model_params_flat(&model).len());
    save_model(
        &args.out.join("model"),
        &model,
        &final_state,
        &cfg,
        cfg.epochs,
        Some(&scenario),
    )?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (e, l) in history.iter().enumerate() {
        csv.push_str(&format!("{},{:.12e}\n", e + 1, l));
    }
    std::fs::write(args.out.join("loss.csv"), csv)?;
    println!(
        "trained {} epochs; final mean loss {:.6e}",
        history.len(),
        history.last().unwrap()
    );
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    let model_dir = require(&args.model, "--model")?;
    let dataset_dir = require(&args.dataset, "--dataset")?;
    let (model, _, _, _, _) = load_model(model_dir)?;
    let (scenario, samples) = load_dataset(dataset_dir)?;
    let sample = samples
        .get(args.index)
        .ok_or_else(|| Error::argument(format!("sample index {} out of range", args.index)))?;
    let a = BornOperator::for_scenario(&scenario)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let data = crate::forward::add_noise(&sample.data, args.noise, seed)?;
    let (rec, _) = lmn_infer(&model, &a, &data, true)?;
    std::fs::create_dir_all(&args.out)?;
    let png = render_map(&rec.values, rec.grid.n(), 0.0, CHI_MAX_DEFAULT)?;
    std::fs::write(args.out.join("recon.png"), png)?;
    save_raw_map(&args.out.join("recon"), &rec)?;
    let re = crate::eval::relative_error_contrast(&rec, &sample.label)?;
    println!("sample {} noise {}: relative error {:.6}", args.index, args.noise, re);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let dataset_dir = require(&args.dataset, "--dataset")?;
    let (scenario, samples) = load_dataset(dataset_dir)?;
    if samples.is_empty() {
        return Err(Error::argument("test dataset is empty"));
    }
    let levels = parse_levels(&args.levels)?;
    let mut a = BornOperator::for_scenario(&scenario)?;
    a.cache_gram();
    let method_names: Vec<&str> = args.methods.split(',').map(|s| s.trim()).collect();
    let model = if method_names.contains(&"lmn") {
        let dir = require(&args.model, "--model")?;
        Some(load_model(dir)?.0)
    } else {
        None
    };
    let lambda = if method_names.contains(&"ba_tikhonov") {
        select_lambda(&a, &samples[0].data, &samples[0].label)?
    } else {
        a.normal_scale()
    };
    let mut methods = Vec::new();
    for name in &method_names {
        match *name {
            "lmn" => methods.push(Method::Lmn {
                model: model.as_ref().unwrap(),
            }),
            "ba_tikhonov" => methods.push(Method::Tikhonov { lambda }),
            "ba_tsvd" => methods.push(Method::Tsvd { rank: args.rank }),
            other => return Err(Error::argument(format!("unknown method {other:?}"))),
        }
    }
    let seed = args.seed.unwrap_or(scenario.seed);
    let report = noise_sweep(&methods, &a, &levels, &samples, seed)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("sweep.csv"), sweep_to_csv(&report, args.timing))?;
    for row in &report.rows {
        println!(
            "{} @ {:>4}%: mean R_e {:.4} ({:.3} s/sample, M_t = {})",
            row.method,
            row.noise_level * 100.0,
            row.mean_re,
            row.mean_time_s,
            row.m_t
        );
    }
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    use crate::specfun::{bessel_j, bessel_y};
    let mut failures = 0;

    // Wronskian identity J1 Y0 - J0 Y1 = 2 / (pi x).
    let mut worst: f64 = 0.0;
    for i in 1..=100 {
        let x = 0.5 * i as f64;
        let w = bessel_j(1, x)? * bessel_y(0, x)? - bessel_j(0, x)? * bessel_y(1, x)?;
        let expect = 2.0 / (std::f64::consts::PI * x);
        worst = worst.max(((w - expect) / expect).abs());
    }
    report("bessel wronskian", worst < 1e-9, &mut failures);

    // Born operator adjoint identity <A x, y> = <x, A^H y>.
    let scenario = Scenario::reference(16, 10, 3)?;
    let a = BornOperator::for_scenario(&scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..a.unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<num_complex::Complex64> = (0..a.measurements())
        .map(|_| num_complex::Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let ax = a.apply(&x)?;
    let aty = a.adjoint(&y)?;
    let lhs: f64 = ax.iter().zip(&y).map(|(p, q)| (p.conj() * q).re).sum();
    let rhs: f64 = x.iter().zip(&aty).map(|(p, q)| p * q).sum();
    let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    report("adjoint identity", ((lhs - rhs) / scale).abs() < 1e-12, &mut failures);

    // CG on the normal equations vs a dense Cholesky solve.
    let mut ac = a;
    ac.cache_gram();
    let chi: Vec<f64> = (0..ac.unknowns()).map(|_| rng.gen_range(0.0..0.5)).collect();
    let data = ac.apply(&chi)?;
    let lambda = 1e-3 * ac.normal_scale();
    let (cg_sol, _) = crate::linop::cg_solve_normal(&ac, lambda, &data, &vec![0.0; ac.unknowns()], 1e-12, 4000)?;
    let n = ac.unknowns();
    let mut m = vec![0.0f64; n * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = ac.normal_apply(&e)?;
        for r in 0..n {
            m[r * n + c] = col[r] + if r == c { lambda } else { 0.0 };
        }
    }
    let rhs_v = ac.adjoint(&data)?;
    let direct = crate::linalg::cholesky_solve(&m, n, &rhs_v)?;
    let diff = cg_sol
        .iter()
        .zip(&direct)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
        / direct.iter().map(|v| v * v).sum::<f64>().sqrt();
    report("cg vs dense solve", diff < 1e-8, &mut failures);

    // Unrolled gradient check on the toy instance.
    let toy_scenario = {
        let mut s = Scenario::reference(16, 8, 0)?;
        s.tx_ring = crate::scene::SensorRing::new(2, 12.0)?;
        s.rx_ring = crate::scene::SensorRing::new(4, 6.0)?;
        s
    };
    let mut toy = BornOperator::for_scenario(&toy_scenario)?;
    toy.cache_gram();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let chi: Vec<f64> = (0..toy.unknowns()).map(|_| rng.gen_range(0.0..0.3)).collect();
    let label = ContrastMap::from_values(toy.grid().clone(), chi.clone())?;
    let yv = toy.apply(&chi)?;
    let mut values = crate::linalg::CMat::zeros(toy.receivers(), toy.incidences());
    values.data.copy_from_slice(&yv);
    let sample = Sample {
        label: label.clone(),
        data: crate::forward::ScatteredData {
            values,
            noise_level: 0.0,
            seed: 0,
        },
    };
    let mut model = LmnModel::new(3, 4, false, 2, 13)?;
    calibrate_input_scale(&mut model, &toy, std::slice::from_ref(&sample))?;
    let worst = crate::train::grad_check(&model, &toy, &sample.data, &label)?;
    report("unrolled gradient check", worst < 1e-5, &mut failures);

    if failures > 0 {
        return Err(Error::numeric(format!("{failures} self-test(s) failed")));
    }
    Ok(())
}

fn report(name: &str, ok: bool, failures: &mut usize) {
    println!("{name}: {}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        *failures += 1;
    }
}

fn cmd_austria(args: &AustriaArgs) -> Result<()> {
    let file = load_config(&args.scenario.config)?;
    let scenario = build_scenario(&args.scenario, &file)?;
    let levels = parse_levels(&args.levels)?;
    let ctx = ForwardContext::new(&scenario)?;
    println!("synthesizing {} ring/disk training samples", args.train_samples);
    let train_set = ring_samples(&ctx, args.train_samples, 1.1, 2.0, scenario.seed)?;
    let test_map = austria_profile(&ctx.scenario.forward_grid, 1.5)?;
    let test_set = vec![ctx.synthesize(&test_map)?];

    let mut a = BornOperator::for_scenario(&scenario)?;
    a.cache_gram();
    let cfg = TrainConfig {
        epochs: args.epochs,
        seed: scenario.seed,
        ..TrainConfig::default()
    };
    let mut model = LmnModel::new(
        args.depth,
        args.channels,
        true,
        args.k,
        derive_seed(cfg.seed, 0x6d6f64),
    )?;
    println!("training {} epochs on {} samples", cfg.epochs, train_set.len());
    let history = train(&mut model, &a, &train_set, &cfg, |_, _, _| Ok(()))?;
    std::fs::create_dir_all(&args.out)?;
    save_model(
        &args.out.join("model"),
        &model,
        &AdamState::new(crate::train::model_params_flat(&model).len()),
        &cfg,
        cfg.epochs,
        Some(&scenario),
    )?;
    let lambda = select_lambda(&a, &train_set[0].data, &train_set[0].label)?;
    let methods = [Method::Lmn { model: &model }, Method::Tikhonov { lambda }];
    let report = noise_sweep(&methods, &a, &levels, &test_set, scenario.seed)?;
    std::fs::write(args.out.join("austria.csv"), sweep_to_csv(&report, args.timing))?;
    let (rec, _) = lmn_infer(&model, &a, &test_set[0].data, true)?;
    let png = render_map(&rec.values, rec.grid.n(), 0.0, CHI_MAX_DEFAULT)?;
    std::fs::write(args.out.join("austria.png"), png)?;
    for row in &report.rows {
        println!(
            "{} @ {:>4}%: mean R_e {:.4}",
            row.method,
            row.noise_level * 100.0,
            row.mean_re
        );
    }
    println!("final training loss {:.6e}", history.last().unwrap());
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::Format(_) | Error::Io(_) => 2,
        Error::Solver { .. } | Error::Numeric(_) => 3,
    }
}

/// Entry point; returns the process exit code.
pub fn cli_main(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Selftest => cmd_selftest(),
        Command::Austria(a) => cmd_austria(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ngmkl::bench::{self, ExperimentConfig, Method, ReportFormat};
use ngmkl::kernels::{base_kernel_bank, KernelSpec};
use ngmkl::matrix::Matrix;
use ngmkl::ngmkl::{backward, cross_entropy, forward, init_model, SelectedKernel, TrainConfig};

#[derive(Parser)]
#[command(name = "bench", about = "Kernel network benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to one dataset from the manifest.
        #[arg(long)]
        dataset: Option<String>,
        /// Restrict to one method (mkl, ngmkl1, ngmkl2, ngmkl3).
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the report, curves and selection diagnostics.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
    },
    /// Check backprop against central finite differences on random small networks.
    VerifyGradients {
        #[arg(long, default_value_t = 25)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the base kernel bank.
    ListKernels,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            dataset,
            method,
            reps,
            seed,
            out,
            format,
        } => run(config, dataset, method, reps, seed, out, format),
        Command::VerifyGradients { instances, seed } => verify_gradients(instances, seed),
        Command::ListKernels => {
            for (i, k) in base_kernel_bank().iter().enumerate() {
                println!("{i:2}  {k}");
            }
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(
    config_path: PathBuf,
    dataset: Option<String>,
    method: Option<String>,
    reps: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<String>,
) -> Result<bool, bench::BenchError> {
    let mut config = ExperimentConfig::load(&config_path)?;
    if let Some(d) = dataset {
        config.datasets = vec![d];
    }
    if let Some(m) = method {
        config.methods = vec![m.parse::<Method>()?];
    }
    if reps.is_some() {
        config.repetitions = reps;
    }
    if let Some(s) = seed {
        config.base_seed = s;
    }
    if out.is_some() {
        config.output = out;
    }
    if let Some(f) = format {
        config.format = f.parse::<ReportFormat>()?;
    }

    let (report, artifacts) = bench::run_experiment_with_artifacts(&config)?;
    print!("{}", bench::render_report(&report, config.format));
    for row in &report.rows {
        for f in &row.failures {
            match f.repetition {
                Some(r) => eprintln!("{} {} rep {r}: {}", row.dataset, row.method, f.reason),
                None => eprintln!("{} {}: {}", row.dataset, row.method, f.reason),
            }
        }
    }
    if let Some(dir) = &config.output {
        let path = bench::write_outputs(dir, &report, &artifacts, config.format)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(!report.all_failed())
}

/// Partials whose analytic and numeric values differ by at most this pass
/// without a relative check; below it, central differences are dominated by round-off.
const ABS_FLOOR: f64 = 1e-8;
const REL_TOL: f64 = 1e-5;

fn verify_gradients(instances: usize, seed: u64) -> Result<bool, bench::BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures, mut worst_abs) = (0usize, 0usize, 0.0f64);
    for _ in 0..instances {
        let s = [1, 3, 5][rng.gen_range(0..3)];
        let n = rng.gen_range(5..=20);
        let width = rng.gen_range(2..=8);
        let classes = rng.gen_range(2..=3);
        let anchors = Matrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
        let kernels: Vec<SelectedKernel> = (0..s)
            .map(|j| SelectedKernel {
                bank_index: j,
                spec: KernelSpec::Gaussian { sigma: 0.5 + j as f64 },
            })
            .collect();
        let config = TrainConfig {
            hidden_widths: vec![width],
            ..TrainConfig::default()
        };
        let model = init_model(&kernels, anchors, classes, &config, &mut rng);
        let rows: Vec<Vec<f64>> = (0..s).map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let target = rng.gen_range(0..classes);
        let (_, cache) = forward(&model, &refs)?;
        let analytic = backward(&model, &cache, target)?.flatten();
        let theta = model.flat_params();
        let mut probe = model.clone();
        let h = 1e-5;
        for p in 0..theta.len() {
            let mut t = theta.clone();
            t[p] += h;
            probe.set_flat_params(&t);
            let up = cross_entropy(&forward(&probe, &refs)?.0, target)?;
            t[p] -= 2.0 * h;
            probe.set_flat_params(&t);
            let down = cross_entropy(&forward(&probe, &refs)?.0, target)?;
            let numeric = (up - down) / (2.0 * h);
            let diff = (analytic[p] - numeric).abs();
            worst_abs = worst_abs.max(diff);
            checked += 1;
            if diff > ABS_FLOOR && diff / analytic[p].abs().max(numeric.abs()) >= REL_TOL {
                failures += 1;
            }
        }
    }
    let ok = failures == 0;
    println!(
        "{instances} instances, {checked} partials, {failures} failing, worst absolute difference {worst_abs:.3e}: {}",
        if ok { "ok" } else { "FAILED" }
    );
    Ok(ok)
}

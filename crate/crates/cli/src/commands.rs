use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use unfold_core::harness::{
    coverage_vs_nbc, run_coverage_study, run_unfolding, run_zboson, simulate_data, synthesize_zboson, CoverageReport,
    EstimatorPath, ExperimentConfig, UnfoldingResult,
};
use unfold_core::io;
use unfold_core::simulate::BinnedCounts;

use crate::manifest::RunManifest;
use crate::plot::{Band, Line, Plot};
use crate::{Command, Common, MethodFlags, PathFlags};

pub fn run(command: Command) -> Result<PathBuf> {
    match command {
        Command::Simulate { common } => {
            let config = load(&common, None, None)?;
            in_pool(common.workers, || simulate(&config, &common.out))
        }
        Command::Unfold {
            common,
            data,
            path,
            methods,
        } => {
            let config = load(&common, Some(&path), Some(&methods))?;
            in_pool(common.workers, || unfold(&config, &data, &common.out))
        }
        Command::Coverage {
            common,
            n_replicates,
            nbc_sweep,
            path,
            methods,
        } => {
            let mut config = load(&common, Some(&path), Some(&methods))?;
            if !(path.fast || path.full) {
                config.estimator = EstimatorPath::Fast;
            }
            in_pool(common.workers, || coverage(&config, n_replicates, &nbc_sweep, &common.out))
        }
        Command::Zboson {
            common,
            data,
            fit_data,
            path,
            methods,
        } => {
            let config = load(&common, Some(&path), Some(&methods))?;
            in_pool(common.workers, || {
                zboson(&config, data.as_deref(), fit_data.as_deref(), &common.out)
            })
        }
    }
}

fn load(common: &Common, path: Option<&PathFlags>, methods: Option<&MethodFlags>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(p) = path {
        if p.fast {
            config.estimator = EstimatorPath::Fast;
        } else if p.full {
            config.estimator = EstimatorPath::Full;
        }
    }
    if let Some(m) = methods {
        if !m.methods.is_empty() {
            config.methods = m.methods.clone();
        }
    }
    config.validate()?;
    Ok(config)
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .context("building worker pool")?
            .install(f),
        None => f(),
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_svg(path: &Path, plot: &Plot, manifest: &mut RunManifest) -> Result<()> {
    std::fs::write(path, plot.to_svg()).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(path);
    Ok(())
}

fn simulate(config: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let mut manifest = RunManifest::start("simulate", config);
    let clock = Instant::now();
    let y = simulate_data(config)?;
    manifest.stage("simulate", clock.elapsed().as_secs_f64());
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    io::write_counts_file(out, &y)?;
    manifest.output(out);
    info!("{} events in {} bins", y.total(), y.len());
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    manifest.finish(Path::new(&name))
}

fn read_data(path: &Path) -> Result<BinnedCounts> {
    io::read_counts_file(path).with_context(|| format!("reading {}", path.display()))
}

/// Intensity table `s,f_hat,f_bc,f_true`.
fn write_intensity(path: &Path, r: &UnfoldingResult, truth_label: &str) -> Result<()> {
    let mut w = create(path)?;
    use std::io::Write;
    writeln!(w, "s,f_hat,f_bc,{truth_label}")?;
    for i in 0..r.grid.len() {
        writeln!(w, "{},{},{},{}", r.grid[i], r.f_hat[i], r.f_bc[i], r.f_true[i])?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(
    r: &UnfoldingResult,
    dir: &Path,
    truth: Option<(&str, &[f64])>,
    smeared: Option<&BinnedCounts>,
    manifest: &mut RunManifest,
) -> Result<()> {
    let bands = dir.join("bands.csv");
    io::write_bands(create(&bands)?, &r.bands)?;
    manifest.output(&bands);
    let intensity = dir.join("intensity.csv");
    write_intensity(&intensity, r, "f_true")?;
    manifest.output(&intensity);
    if let Some(trace) = &r.trace {
        let path = dir.join("trace.csv");
        io::write_trace(create(&path)?, trace)?;
        manifest.output(&path);
        let iters: Vec<f64> = (0..trace.deltas.len()).map(|i| i as f64).collect();
        let plot = Plot {
            title: "Monte Carlo EM convergence".into(),
            x_label: "iteration".into(),
            y_label: "delta".into(),
            lines: vec![Line::new("delta", &iters, &trace.deltas)],
            log_y: true,
            ..Plot::default()
        };
        write_svg(&dir.join("trace.svg"), &plot, manifest)?;
    }
    if let Some(chain) = &r.chain {
        let path = dir.join("chain.csv");
        io::write_chain(create(&path)?, chain)?;
        manifest.output(&path);
    }
    for band in &r.bands {
        let mut lines = vec![Line::new("estimate", &r.grid, &band.bc_point)];
        if let Some((label, t)) = truth {
            lines.push(Line::new(label, &r.grid, t).dashed());
        }
        if let Some(y) = smeared {
            let density: Vec<f64> = y.counts().iter().zip(y.widths()).map(|(&c, w)| c as f64 / w).collect();
            lines.push(Line::new("smeared histogram", y.bin_edges(), &density).steps());
        }
        let plot = Plot {
            title: format!("Unfolded intensity, {} band", band.method),
            x_label: "s (GeV)".into(),
            y_label: "intensity".into(),
            lines,
            bands: vec![Band {
                label: format!("{:.0}% {}", 100.0 * (1.0 - 2.0 * band.alpha), band.method),
                x: r.grid.clone(),
                lower: band.lower.clone(),
                upper: band.upper.clone(),
            }],
            ..Plot::default()
        };
        write_svg(&dir.join(format!("unfolded_{}.svg", band.method)), &plot, manifest)?;
    }
    for (stage, secs) in &r.timings {
        manifest.stage(stage, *secs);
    }
    Ok(())
}

fn unfold(config: &ExperimentConfig, data: &Path, out: &Path) -> Result<PathBuf> {
    out_dir(out)?;
    let mut manifest = RunManifest::start("unfold", config);
    let y = read_data(data)?;
    let r = run_unfolding(config, &y)?;
    info!("delta_hat = {:e}, cond(K) = {:e}", r.delta_hat, r.condition_number);
    write_outputs(&r, out, Some(("configured truth", &r.f_true)), None, &mut manifest)?;
    manifest.finish(&out.join("manifest.json"))
}

fn coverage(config: &ExperimentConfig, n: usize, nbc_sweep: &[usize], out: &Path) -> Result<PathBuf> {
    out_dir(out)?;
    let mut manifest = RunManifest::start("coverage", config);
    let clock = Instant::now();
    let reports: Vec<CoverageReport> = if nbc_sweep.is_empty() {
        let study = run_coverage_study(config, n, &config.methods)?;
        if study.failures > 0 {
            log::warn!("{} replicate(s) failed and were skipped", study.failures);
        }
        study.reports
    } else {
        coverage_vs_nbc(config, nbc_sweep, n)?
    };
    manifest.stage("coverage", clock.elapsed().as_secs_f64());
    let path = out.join("coverage.csv");
    io::write_coverage(create(&path)?, &reports)?;
    manifest.output(&path);
    for r in &reports {
        info!(
            "{}: average coverage {:.3}, average width {:.4}",
            r.label(),
            r.average_coverage(),
            r.average_width()
        );
    }
    let Some(first) = reports.first() else {
        anyhow::bail!("no coverage reports produced");
    };
    let mut lines: Vec<Line> = reports
        .iter()
        .map(|r| Line::new(&r.label(), &r.grid, &r.coverage))
        .collect();
    lines.push(Line::new("nominal", &first.grid, &vec![first.nominal; first.grid.len()]).dashed());
    let plot = Plot {
        title: format!("Empirical coverage, {} replicates", first.n_rep),
        x_label: "s (GeV)".into(),
        y_label: "coverage".into(),
        lines,
        y_range: Some((0.0, 1.0)),
        ..Plot::default()
    };
    write_svg(&out.join("coverage.svg"), &plot, &mut manifest)?;
    manifest.finish(&out.join("manifest.json"))
}

fn zboson(config: &ExperimentConfig, data: Option<&Path>, fit_data: Option<&Path>, out: &Path) -> Result<PathBuf> {
    out_dir(out)?;
    let mut manifest = RunManifest::start("zboson", config);
    let (unfold, fit) = match data {
        Some(path) => (read_data(path)?, fit_data.map(read_data).transpose()?),
        None => {
            let clock = Instant::now();
            let synthetic = synthesize_zboson(config)?;
            manifest.stage("synthesize", clock.elapsed().as_secs_f64());
            for (name, y) in [
                ("synthetic_full.csv", &synthetic.full),
                ("synthetic_unfold.csv", &synthetic.unfold),
                ("synthetic_fit.csv", &synthetic.fit),
            ] {
                let path = out.join(name);
                io::write_counts_file(&path, y)?;
                manifest.output(&path);
            }
            (synthetic.unfold, Some(synthetic.fit))
        }
    };
    let clock = Instant::now();
    let z = run_zboson(config, &unfold, fit.as_ref())?;
    manifest.stage("zboson", clock.elapsed().as_secs_f64());
    if let Some(f) = &z.fit {
        let path = out.join("crystal_ball_fit.json");
        let json = serde_json::json!({
            "delta_m_gev": f.cb.delta_m,
            "sigma_gev": f.cb.sigma,
            "alpha": f.cb.alpha,
            "gamma": f.cb.gamma,
            "scale": f.scale,
            "log_likelihood": f.log_likelihood,
            "converged_starts": f.converged_starts,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&json)?)?;
        manifest.output(&path);
    }
    let overlay = out.join("overlay.csv");
    {
        use std::io::Write;
        let mut w = create(&overlay)?;
        writeln!(w, "s,f_hat,f_bc,truth_overlay")?;
        let r = &z.unfolding;
        for i in 0..r.grid.len() {
            writeln!(w, "{},{},{},{}", r.grid[i], r.f_hat[i], r.f_bc[i], z.truth_overlay[i])?;
        }
        w.flush()?;
    }
    manifest.output(&overlay);
    let smeared = out.join("smeared.csv");
    io::write_counts_file(&smeared, &unfold)?;
    manifest.output(&smeared);
    info!("unfolded mode at {:.3} GeV", z.mode_gev);
    write_outputs(
        &z.unfolding,
        out,
        Some(("Breit-Wigner truth", &z.truth_overlay)),
        Some(&unfold),
        &mut manifest,
    )?;
    manifest.finish(&out.join("manifest.json"))
}

//! Batch runner: scenario loading, FFIR caching and the per-subcommand jobs.

pub mod cache;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use uvlc::ber_analytic::{Averaging, LinkSystem, NoiseVariance};
use uvlc::config::load_scenario;
use uvlc::curve::{sweep, BerCurve};
use uvlc::dump::read_dump_file;
use uvlc::metrics::{full_loss_profile, loss_coefficients, rms_delay_spread, spatial_map};
use uvlc::photon_counting::{CountNoise, PhotonCounting};
use uvlc::scenario::{presets, validate_scenario, Scenario};
use uvlc::waveform_mc::{simulate_curves, Detector, McConfig};
use uvlc::Error;

use cache::VERSION;

pub const DEFAULT_PHOTONS: u64 = 10_000_000;
pub const PAPER_SCALE_PHOTONS: u64 = 100_000_000;
/// Integration window of the first spatial map (s); the second uses 5x.
pub const MAP_WINDOW: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "uvlc", version, about = "Underwater optical link channel and BER toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Trace photons, cache per-link FFIRs and report loss coefficients.
    SimulateChannel {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        transport: Transport,
        /// Also write every receiver-plane crossing for spatial maps.
        #[arg(long)]
        dump_photons: bool,
    },
    /// Analytic and saddle-point BER curves over a power sweep.
    AnalyzeBer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        transport: Transport,
        #[arg(long = "method", value_enum, default_values_t = [MethodArg::Ghqf])]
        methods: Vec<MethodArg>,
        /// Power sweep in dBm as start:stop:step.
        #[arg(long, value_parser = parse_sweep)]
        sweep: Sweep,
        /// Extra MxN configurations of the same link (default: as in the scenario).
        #[arg(long = "configuration", value_parser = parse_configuration)]
        configurations: Vec<(usize, usize)>,
        #[arg(long, default_value_t = uvlc::ber_analytic::DEFAULT_GHQ_ORDER)]
        ghq_order: usize,
    },
    /// Waveform Monte Carlo with symbol-by-symbol and sequence detectors.
    SimulateBer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        transport: Transport,
        /// Detectors such as sbsd, gmsd:4, msd:2.
        #[arg(long = "detector", default_values = ["sbsd", "gmsd:2", "gmsd:4"])]
        detectors: Vec<DetectorArg>,
        #[arg(long, value_parser = parse_sweep)]
        sweep: Sweep,
        #[arg(long, default_value_t = 1000)]
        payload_bits: usize,
        #[arg(long, default_value_t = 100)]
        min_errors: u64,
        #[arg(long, default_value_t = 1_000_000)]
        max_frames: u64,
        /// Drop receiver noise (smoke runs; results are flagged degenerate).
        #[arg(long)]
        noiseless: bool,
    },
    /// Illumination maps over the receiver plane from a photon dump.
    SpatialMap {
        #[command(flatten)]
        common: Common,
        /// Photon dump (default: <out>/<scenario>.photons).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Check a scenario file and print the derived parameters.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario TOML file or preset name.
    #[arg(long)]
    pub scenario: String,
    /// Override a scenario key, e.g. --set layout.link_length_m=20.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct Transport {
    #[arg(long, default_value_t = DEFAULT_PHOTONS)]
    pub photons: u64,
    /// Trace 1e8 photons per transmitter.
    #[arg(long)]
    pub paper_scale: bool,
    /// FFIR cache directory (default: <out>/cache).
    #[arg(long, env = "UVLC_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
}

impl Transport {
    fn photons(&self) -> u64 {
        if self.paper_scale {
            PAPER_SCALE_PHOTONS
        } else {
            self.photons
        }
    }

    fn cache_root(&self, out: &Path) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| out.join("cache"))
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodArg {
    /// Gauss-Hermite averaging (tensor product for MIMO).
    Ghqf,
    /// Adaptive quadrature (SISO) or fading Monte Carlo (MIMO).
    Exact,
    LognormalSum,
    /// Shot-noise-aware saddle-point approximation.
    Saddle,
}

#[derive(Debug, Clone)]
pub struct Sweep(pub Vec<f64>);

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    let [a, b, c] = parts[..] else {
        return Err("expected start:stop:step".into());
    };
    sweep(a, b, c).map(Sweep).map_err(|e| e.to_string())
}

fn parse_configuration(s: &str) -> Result<(usize, usize), String> {
    let (m, n) = s.split_once(['x', 'X']).ok_or("expected MxN")?;
    let m: usize = m.parse().map_err(|_| "bad transmitter count")?;
    let n: usize = n.parse().map_err(|_| "bad receiver count")?;
    if m == 0 || n == 0 {
        return Err("counts must be positive".into());
    }
    Ok((m, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorArg(pub Detector);

impl FromStr for DetectorArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, p) = s.split_once(':').unwrap_or((s, "1"));
        let p: usize = p.parse().map_err(|_| format!("bad window in '{s}'"))?;
        match kind.to_ascii_lowercase().as_str() {
            "sbsd" => Ok(DetectorArg(Detector::Sbsd)),
            "gmsd" => Ok(DetectorArg(Detector::Gmsd(p))),
            "msd" => Ok(DetectorArg(Detector::Msd(p))),
            _ => Err(format!("unknown detector '{kind}'")),
        }
    }
}

/// Process exit code for an error: 2 configuration, 3 refusal, 4 I/O.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config { .. } | Error::InvalidScenario(_) | Error::Domain(_) => 2,
                Error::Refused(_) => 3,
                Error::Corrupt(_) | Error::Io(_) => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SimulateChannel {
            common,
            transport,
            dump_photons,
        } => simulate_channel(&common, &transport, dump_photons),
        Command::AnalyzeBer {
            common,
            transport,
            methods,
            sweep,
            configurations,
            ghq_order,
        } => analyze_ber(&common, &transport, &methods, &sweep.0, &configurations, ghq_order),
        Command::SimulateBer {
            common,
            transport,
            detectors,
            sweep,
            payload_bits,
            min_errors,
            max_frames,
            noiseless,
        } => {
            let cfg = McConfig {
                payload_bits,
                min_errors,
                max_frames,
                seed: common.seed,
                noiseless,
                ..McConfig::default()
            };
            let detectors: Vec<Detector> = detectors.iter().map(|d| d.0).collect();
            simulate_ber(&common, &transport, &detectors, &sweep.0, &cfg)
        }
        Command::SpatialMap { common, dump } => spatial_maps(&common, dump),
        Command::Validate { common } => validate(&common),
    }
}

/// Loads a scenario file, or a preset when no such file exists.
pub fn scenario(common: &Common) -> anyhow::Result<Scenario> {
    let path = Path::new(&common.scenario);
    if path.exists() || common.scenario.ends_with(".toml") {
        return load_scenario(path, &common.overrides).with_context(|| format!("loading {}", path.display()));
    }
    let Some(s) = presets::by_name(&common.scenario) else {
        return Err(Error::Config {
            line: 0,
            message: format!("no scenario file or preset named '{}'", common.scenario),
        }
        .into());
    };
    if !common.overrides.is_empty() {
        bail!(Error::Config {
            line: 0,
            message: "--set needs a scenario file".into()
        });
    }
    Ok(s)
}

fn header(s: &Scenario, seed: u64, extra: &[(&str, String)]) -> String {
    let mut h = format!("# uvlc {VERSION}\n# scenario={}\n# scenario_hash={}\n# seed={seed}\n", s.name, s.hash());
    for (k, v) in extra {
        let _ = writeln!(h, "# {k}={v}");
    }
    h
}

fn write(out: &Path, name: &str, text: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn dump_path(common: &Common, s: &Scenario) -> PathBuf {
    common.out.join(format!("{}.photons", s.name))
}

fn simulate_channel(common: &Common, transport: &Transport, dump_photons: bool) -> anyhow::Result<()> {
    let s = scenario(common)?;
    let photons = transport.photons();
    let dump = dump_photons.then(|| dump_path(common, &s));
    if dump.is_some() {
        fs::create_dir_all(&common.out)?;
    }
    let (ffirs, hit) = cache::ffirs(&transport.cache_root(&common.out), &s, photons, common.seed, dump.as_deref())?;
    eprintln!("{}", if hit { "cache hit" } else { "traced" });
    let slot = 1.0 / s.modem.bit_rate();
    let mut text = header(&s, common.seed, &[("photons", photons.to_string())]);
    text.push_str("tx,rx,rho0,rho1,rho2,rho3,rho4,tau0_ns,tau_rms_ns,memory\n");
    for f in &ffirs {
        let rho = loss_coefficients(f, slot, 5)?.coefficients;
        let memory = full_loss_profile(f, slot)?.memory();
        let (tau0, rms) = match rms_delay_spread(f) {
            Some(d) => (format!("{}", (f.start + 0.5 * f.bin_width) * 1e9), format!("{}", d.rms * 1e9)),
            None => (String::new(), String::new()),
        };
        let rho: Vec<String> = rho.iter().map(|r| format!("{r:e}")).collect();
        let _ = writeln!(text, "{},{},{},{tau0},{rms},{memory}", f.transmitter, f.receiver, rho.join(","));
    }
    print!("{}", text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n") + "\n");
    write(&common.out, &format!("{}-channel.csv", s.name), &text)?;
    Ok(())
}

fn system(common: &Common, transport: &Transport, s: &Scenario) -> anyhow::Result<LinkSystem> {
    let (ffirs, _) = cache::ffirs(&transport.cache_root(&common.out), s, transport.photons(), common.seed, None)?;
    Ok(LinkSystem::from_ffirs(s, &ffirs)?)
}

fn configured(base: &Scenario, m: usize, n: usize) -> Scenario {
    if (m, n) == (base.layout.transmitters, base.layout.receivers) {
        return base.clone();
    }
    base.with_configuration(m, n)
}

fn write_curve(common: &Common, s: &Scenario, curve: &BerCurve, extra: &[(&str, String)], file: &str) -> anyhow::Result<()> {
    curve.validate()?;
    let mut text = header(s, common.seed, extra);
    text.push_str(&curve.to_csv());
    write(&common.out, file, &text)?;
    Ok(())
}

fn analyze_ber(common: &Common, transport: &Transport, methods: &[MethodArg], powers: &[f64], configurations: &[(usize, usize)], order: usize) -> anyhow::Result<()> {
    let base = scenario(common)?;
    let own = [(base.layout.transmitters, base.layout.receivers)];
    let configurations = if configurations.is_empty() { &own[..] } else { configurations };
    for &(m, n) in configurations {
        let s = configured(&base, m, n);
        let sys = system(common, transport, &s)?;
        let hash = s.hash();
        for &method in methods {
            let curve = match method {
                MethodArg::Ghqf => sys.curve(powers, Averaging::Ghqf(order), &hash)?,
                MethodArg::Exact => sys.curve(powers, Averaging::Exact, &hash)?,
                MethodArg::LognormalSum => sys.curve(powers, Averaging::LognormalSum, &hash)?,
                MethodArg::Saddle => PhotonCounting::new(&sys, CountNoise::for_scenario(&s)).curve(powers, Averaging::Ghqf(order), &hash)?,
            };
            let extra = [
                ("configuration", curve.configuration.clone()),
                ("photons", transport.photons().to_string()),
                ("memory", sys.memory().to_string()),
            ];
            write_curve(common, &s, &curve, &extra, &format!("{}-{m}x{n}-{}.csv", base.name, curve.method.tag()))?;
        }
    }
    Ok(())
}

fn simulate_ber(common: &Common, transport: &Transport, detectors: &[Detector], powers: &[f64], cfg: &McConfig) -> anyhow::Result<()> {
    let s = scenario(common)?;
    if s.layout.links() != 1 {
        bail!(Error::Refused(format!(
            "waveform simulation covers SISO links only; scenario '{}' is {}x{}",
            s.name, s.layout.transmitters, s.layout.receivers
        )));
    }
    let sys = system(common, transport, &s)?;
    let chip_variance = NoiseVariance::for_scenario(&s).total();
    let curves = simulate_curves(&sys.links[0], chip_variance, s.fading.log_amplitude_variance[0], powers, cfg, detectors, &s.hash())?;
    for (curve, d) in curves.iter().zip(detectors) {
        let extra = [
            ("photons", transport.photons().to_string()),
            ("payload_bits", cfg.payload_bits.to_string()),
            ("min_errors", cfg.min_errors.to_string()),
            ("max_frames", cfg.max_frames.to_string()),
            ("noiseless", cfg.noiseless.to_string()),
            ("degenerate", curve.points.iter().any(|p| p.degenerate).to_string()),
        ];
        let tag = match d {
            Detector::Sbsd => "sbsd".to_string(),
            Detector::Gmsd(p) => format!("gmsd-p{p}"),
            Detector::Msd(p) => format!("msd-p{p}"),
        };
        write_curve(common, &s, curve, &extra, &format!("{}-{tag}.csv", s.name))?;
    }
    Ok(())
}

fn spatial_maps(common: &Common, dump: Option<PathBuf>) -> anyhow::Result<()> {
    let s = scenario(common)?;
    let path = dump.unwrap_or_else(|| dump_path(common, &s));
    if !path.exists() {
        bail!(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("photon dump {} not found; re-run simulate-channel with --dump-photons", path.display()),
        )));
    }
    let (h, photons) = read_dump_file(&path)?;
    if h.transport_hash != s.transport_hash() {
        bail!(Error::Corrupt(format!("{} was written for a different scenario", path.display())));
    }
    let all: Vec<_> = photons.into_iter().flatten().collect();
    let gate = all.iter().map(|p| p.time).fold(f64::INFINITY, f64::min);
    let gate = if gate.is_finite() { gate } else { 0.0 };
    for k in [1.0, 5.0] {
        let window = k * MAP_WINDOW;
        let map = spatial_map(&all, h.photons, window, gate)?;
        let mut text = header(&s, h.seed, &[("photons", h.photons.to_string()), ("window_ns", format!("{}", window * 1e9)), ("gate_start_ns", format!("{}", gate * 1e9))]);
        text.push_str(&map.to_csv());
        write(&common.out, &format!("{}-map-{}ns.csv", s.name, k), &text)?;
    }
    Ok(())
}

fn validate(common: &Common) -> anyhow::Result<()> {
    let s = scenario(common)?;
    let report = validate_scenario(&s);
    if !report.is_valid() {
        bail!(Error::InvalidScenario(report.to_string()));
    }
    println!("{}: valid", s.name);
    println!("  hash           {}", s.hash());
    println!("  transport hash {}", s.transport_hash());
    println!("  extinction     {} 1/m, albedo {:.4}", s.water.extinction, s.water.albedo());
    println!("  configuration  {}x{}", s.layout.transmitters, s.layout.receivers);
    println!("  bit rate       {:.6e} bps", s.modem.bit_rate());
    println!("  responsivity   {:.4} A/W", s.responsivity());
    Ok(())
}

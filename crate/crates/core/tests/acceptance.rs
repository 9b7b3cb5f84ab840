//! End-to-end acceptance checks. Runs every criterion in order, prints one
//! `criterion N: PASS|FAIL` line each, and exits nonzero if any failed.
//!
//! Photon counts default to the desk scale; set `UVLC_ACCEPT_PHOTONS` to
//! change the count used by the channel criterion.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvlc::ber_analytic::{Averaging, LinkResponse, LinkSystem, NoiseVariance};
use uvlc::curve::{dbm_to_watts, required_power, sweep};
use uvlc::detection::{gmsd_detect, gmsd_estimate_fading, sbsd_detect, synthesize_frame, CorrelationBank, Waveform};
use uvlc::fading::sample_fading;
use uvlc::metrics::{link_ffirs, loss_coefficients, rms_delay_spread, DEFAULT_BINS};
use uvlc::photon_counting::{brute_force_ber, saddle_ber, CountModel, CountNoise, PhotonCounting};
use uvlc::rng::StreamFactory;
use uvlc::scenario::{presets, ModemConfig, Scenario, SourceModel, WaterProperties, WaterType};
use uvlc::transport::{trace_photons, TraceResult, TransportConfig};
use uvlc::waveform_mc::{simulate_curves, simulate_point, Detector, McConfig, Z99};

const CHANNEL_PHOTONS: u64 = 10_000_000;
/// Photons for criteria that only need a representative channel.
const BER_PHOTONS: u64 = 1_000_000;
const TRACE_SEED: u64 = 1;

type Outcome = (bool, String);

type TraceCache = Mutex<HashMap<(String, u64), Arc<TraceResult>>>;

fn traces() -> &'static TraceCache {
    static CACHE: OnceLock<TraceCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn trace(s: &Scenario, photons: u64) -> Arc<TraceResult> {
    let key = (s.hash(), photons);
    if let Some(t) = traces().lock().unwrap().get(&key) {
        return t.clone();
    }
    let t = Arc::new(trace_photons(s, &TransportConfig::with_photons(photons, TRACE_SEED)).unwrap());
    traces().lock().unwrap().insert(key, t.clone());
    t
}

fn system(s: &Scenario, photons: u64) -> LinkSystem {
    let ffirs = link_ffirs(&trace(s, photons), DEFAULT_BINS).unwrap();
    LinkSystem::from_ffirs(s, &ffirs).unwrap()
}

fn ghqf_power(sys: &LinkSystem, order: usize, target: f64) -> Option<f64> {
    required_power(|p| sys.average_ber(dbm_to_watts(p), Averaging::Ghqf(order)).unwrap(), target, -60.0, 80.0)
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn criterion_1() -> Outcome {
    let photons = std::env::var("UVLC_ACCEPT_PHOTONS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(CHANNEL_PHOTONS);
    let mut tau = HashMap::new();
    let mut rho0 = HashMap::new();
    for s in presets::channel_study() {
        let t = trace(&s, photons);
        let ffir = &link_ffirs(&t, DEFAULT_BINS).unwrap()[0];
        let profile = loss_coefficients(ffir, 1.0 / s.modem.bit_rate(), 5).unwrap();
        rho0.insert(s.name.clone(), profile.coefficients[0]);
        tau.insert(s.name.clone(), rms_delay_spread(ffir).map_or(0.0, |d| d.rms));
    }
    let rho = rho0["laser-clear-60m"];
    let rho_ok = (0.5..=2.0).contains(&(rho / 2.4889e-5));
    let harbor = tau["laser-harbor-10m"];
    let tau_ok = rel(harbor, 1.0413e-9) <= 0.5;
    let t = |n: &str| tau[n];
    let order_ok = t("laser-clear-60m") < t("laser-coastal-25m")
        && t("laser-coastal-25m") < t("laser-harbor-10m")
        && t("led-clear-30m") < t("led-coastal-15m")
        && t("led-coastal-15m") < t("led-harbor-10m")
        && t("led-clear-30m") >= t("laser-clear-60m")
        && t("led-coastal-15m") >= t("laser-coastal-25m")
        && t("led-harbor-10m") >= t("laser-harbor-10m");
    (
        rho_ok && tau_ok && order_ok,
        format!(
            "N_t={photons:e}; clear laser rho0={rho:.4e} (ref 2.4889e-5, ratio {:.2}, {}); harbor laser tau_rms={:.4} ns (ref 1.0413, {}); orderings {}",
            rho / 2.4889e-5,
            ok(rho_ok),
            harbor * 1e9,
            ok(tau_ok),
            ok(order_ok)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "out of tolerance"
    }
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut mimo_ok = true;
    let mut worst_z: f64 = 0.0;
    let mut skipped = Vec::new();
    for s in presets::all() {
        let sys = system(&s, BER_PHOTONS);
        if s.layout.links() == 1 {
            for target in [1e-1, 1e-3, 1e-6, 1e-9] {
                let Some(p) = ghqf_power(&sys, 30, target) else {
                    skipped.push(format!("{}@{target:e}", s.name));
                    continue;
                };
                let w = dbm_to_watts(p);
                let g = sys.average_ber(w, Averaging::Ghqf(30)).unwrap();
                let e = sys.average_ber(w, Averaging::Exact).unwrap();
                if rel(g, e) > worst {
                    worst = rel(g, e);
                    worst_at = format!("{} at BER {target:e}", s.name);
                }
            }
        } else {
            for target in [1e-1, 1e-3, 1e-6] {
                let Some(p) = ghqf_power(&sys, 8, target) else {
                    skipped.push(format!("{}@{target:e}", s.name));
                    continue;
                };
                let w = dbm_to_watts(p);
                let g = sys.average_ber(w, Averaging::Ghqf(30)).unwrap();
                let (m, se) = sys.monte_carlo(w, 10_000_000, 7);
                let z = (g - m).abs() / se;
                worst_z = worst_z.max(z);
                mimo_ok &= z <= Z99;
            }
        }
    }
    let siso_ok = worst < 1e-3;
    (
        siso_ok && mimo_ok,
        format!(
            "SISO GHQF(30) vs adaptive oracle worst rel err {worst:.2e} ({worst_at}, limit 1e-3); MIMO tensor GHQF vs 1e7-draw MC worst |z|={worst_z:.2} (limit {Z99:.3}); unattainable targets skipped: {}",
            if skipped.is_empty() { "none".to_string() } else { skipped.join(", ") }
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for &wrong in &[0.1, 1.0, 5.0, 20.0, 100.0] {
        for &thermal in &[1.0, 10.0, 100.0, 1e3, 1e4] {
            for &target in &[1e-2, 1e-5] {
                let ber = |right: f64| saddle_ber(&CountModel { wrong, right, thermal }).ber;
                // saddle BER falls monotonically with the right-chip mean
                let (mut lo, mut hi) = (wrong + 1e-9, wrong + 1e6);
                for _ in 0..200 {
                    let mid = (lo * hi).sqrt();
                    if ber(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let m = CountModel { wrong, right: hi, thermal };
                let max_count = (hi + 15.0 * hi.sqrt() + 60.0).ceil() as usize;
                let exact = brute_force_ber(&m, max_count);
                if !(1e-8..=1e-1).contains(&exact) {
                    continue;
                }
                points += 1;
                worst = worst.max(rel(saddle_ber(&m).ber, exact));
            }
        }
    }
    (
        points == 50 && worst < 0.05,
        format!("{points} grid points in range; worst saddle vs brute-force rel err {:.2}% (limit 5%)", worst * 100.0),
    )
}

fn criterion_4() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["siso-laser-clear-60m", "siso-laser-coastal-25m"] {
        let s = presets::by_name(name).unwrap();
        let sys = system(&s, BER_PHOTONS);
        let pc = PhotonCounting::new(&sys, CountNoise::for_scenario(&s));
        let a = ghqf_power(&sys, 30, 1e-6).unwrap();
        let b = required_power(|p| pc.average_ber(dbm_to_watts(p), Averaging::Ghqf(30)).unwrap(), 1e-6, -60.0, 80.0).unwrap();
        let gap = (a - b).abs();
        pass &= gap < 0.2;
        parts.push(format!("{name} gap {gap:.3} dB"));
    }
    (pass, format!("{} (limit 0.2 dB at BER 1e-6)", parts.join(", ")))
}

fn criterion_5() -> Outcome {
    let siso = presets::led_harbor_6m();
    let miso = siso.with_configuration(3, 1);
    let p1 = ghqf_power(&system(&siso, BER_PHOTONS), 30, 1e-9);
    let p3 = ghqf_power(&system(&miso, BER_PHOTONS), 30, 1e-9);
    match (p1, p3) {
        (Some(a), Some(b)) => {
            let gain = a - b;
            ((gain - 8.0).abs() <= 1.5, format!("3x1 MISO gain over SISO at BER 1e-9: {gain:.2} dB (target 8 +/- 1.5)"))
        }
        _ => (false, "BER 1e-9 not reached".into()),
    }
}

fn chip_variance(s: &Scenario) -> f64 {
    NoiseVariance::for_scenario(s).total()
}

fn criterion_6() -> Outcome {
    let s = presets::by_name("siso-laser-coastal-25m").unwrap();
    let sys = system(&s, BER_PHOTONS);
    let var = s.fading.log_amplitude_variance[0];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, target) in [1e-2, 2e-3, 5e-4].into_iter().enumerate() {
        let p = ghqf_power(&sys, 30, target).unwrap();
        let analytic = sys.average_ber(dbm_to_watts(p), Averaging::Ghqf(30)).unwrap();
        let wf = Waveform::new(&sys.links[0], dbm_to_watts(p), chip_variance(&s));
        let cfg = McConfig {
            payload_bits: 1,
            min_errors: 500,
            max_frames: 20_000_000,
            seed: 6,
            ..McConfig::default()
        };
        let t = &simulate_point(&wf, var, &cfg, &[Detector::Sbsd], StreamFactory::new(6).child(i as u64)).unwrap()[0];
        let (lo, hi) = t.interval(Z99);
        let inside = (lo..=hi).contains(&analytic);
        pass &= inside;
        parts.push(format!("{p:.2} dBm analytic {analytic:.3e} MC {:.3e} [{lo:.3e}, {hi:.3e}] {}", t.ber(), if inside { "in" } else { "OUT" }));
    }
    (pass, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let s = presets::laser_harbor_10m_500mbps();
    let sys = system(&s, BER_PHOTONS);
    let var = s.fading.log_amplitude_variance[0];
    let cfg = McConfig {
        payload_bits: 1000,
        min_errors: 100,
        max_frames: 200_000,
        seed: 7,
        ..McConfig::default()
    };
    let detectors = [Detector::Sbsd, Detector::Gmsd(2), Detector::Gmsd(4)];
    let powers = sweep(31.0, 35.0, 1.0).unwrap();
    let curves = simulate_curves(&sys.links[0], chip_variance(&s), var, &powers, &cfg, &detectors, &s.hash()).unwrap();
    let enough = curves.iter().flat_map(|c| &c.points).all(|p| p.errors.unwrap_or(0) >= 100);
    let at = |i: usize| curves[i].power_at(1e-3);
    let (g2, g4) = match (at(0), at(1), at(2)) {
        (Some(a), Some(b), Some(c)) => (a - b, a - c),
        _ => (f64::NAN, f64::NAN),
    };
    let gain_ok = g2 > 0.0 && g4 >= g2;

    // decision-level equivalence of GMSD(1) and SBSD on an ISI-free link
    let link = LinkResponse::delta(&ModemConfig::from_bit_rate(100e6), 0.34, 1e-4);
    let wf = Waveform::new(&link, dbm_to_watts(-27.0), chip_variance(&presets::by_name("laser-clear-60m").unwrap()));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut same = true;
    for _ in 0..10_000 {
        let bits: Vec<bool> = (0..32).map(|_| rng.gen()).collect();
        let h = sample_fading(0.1, &mut rng, 1)[0];
        let frame = synthesize_frame(&wf, &bits, 0, h, Some(&mut rng));
        same &= gmsd_detect(&wf, &frame, 1).unwrap().bits == sbsd_detect(&wf, &frame);
    }
    (
        enough && gain_ok && same,
        format!(
            "gain at BER 1e-3: P=2 {g2:.2} dB, P=4 {g4:.2} dB ({}); >=100 errors per point {}; GMSD(1)==SBSD over 1e4 frames {}",
            if gain_ok { "ok" } else { "not ordered" },
            if enough { "yes" } else { "no" },
            if same { "yes" } else { "no" }
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, cond: bool, detail: String| {
        if !cond {
            failures.push(format!("{name}: {detail}"));
        }
    };

    // weights, energy bound
    let s = presets::by_name("laser-harbor-10m").unwrap();
    let t = trace_photons(&s, &TransportConfig::with_photons(50_000, 3)).unwrap();
    let weights_ok = t.links.iter().flatten().all(|p| p.weight > 0.0 && p.weight <= 1.0);
    check("weights", weights_ok, "detected weight outside (0, 1]".into());
    check("energy bound", t.total_detected_weight() <= t.photons as f64, format!("{}", t.total_detected_weight()));

    // ballistic limit
    let mut b = Scenario::builder(WaterType::ClearOcean, SourceModel::laser(1e-12, 0.0, 532e-9), 20.0).build();
    b.water = WaterProperties::new(0.05, 0.0);
    let bt = trace_photons(&b, &TransportConfig::with_photons(20_000, 5)).unwrap();
    let t0 = 20.0 / b.constants.speed_in_water();
    let exact = bt.link(0, 0).iter().all(|p| p.weight == 1.0 && rel(p.time, t0) < 1e-14);
    let frac = bt.link(0, 0).len() as f64 / 20_000.0;
    let expect = (-0.05f64 * 20.0).exp();
    let sd = (expect * (1.0 - expect) / 20_000.0).sqrt();
    check("ballistic", exact && (frac - expect).abs() < 5.0 * sd, format!("fraction {frac} vs {expect}"));

    // quadrature convergence on shipped scenarios
    // a 60^3-node tensor rule over 2^13 histories is minutes per point, so
    // MIMO links are checked at BER 1e-3 only
    let mut conv: f64 = 0.0;
    let mut conv_at = String::new();
    for s in presets::all() {
        let sys = system(&s, BER_PHOTONS);
        let (order, targets): (usize, &[f64]) = if s.layout.links() == 1 { (30, &[1e-3, 1e-6]) } else { (8, &[1e-3]) };
        for &target in targets {
            if let Some(p) = ghqf_power(&sys, order, target) {
                let w = dbm_to_watts(p);
                let a = sys.average_ber(w, Averaging::Ghqf(30)).unwrap();
                let c = sys.average_ber(w, Averaging::Ghqf(60)).unwrap();
                if rel(a, c) > conv {
                    conv = rel(a, c);
                    conv_at = format!("{} at BER {target:e}", s.name);
                }
            }
        }
    }
    check("GHQF convergence", conv < 1e-4, format!("worst |V30-V60|/V60 = {conv:.2e} ({conv_at}, limit 1e-4)"));

    // lognormal normalization
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = sample_fading(0.16, &mut rng, 1_000_000);
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    check("E[h]=1", (mean - 1.0).abs() < 0.01, format!("{mean}"));

    // noiseless fading estimate
    let s = presets::laser_harbor_10m_500mbps();
    let sys = system(&s, BER_PHOTONS);
    let wf = Waveform::new(&sys.links[0], dbm_to_watts(33.0), chip_variance(&s));
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let bits: Vec<bool> = (0..wf.memory + 8).map(|_| rng.gen()).collect();
        let h = sample_fading(0.04, &mut rng, 1)[0];
        let frame = synthesize_frame::<ChaCha8Rng>(&wf, &bits, wf.memory, h, None);
        let bank = CorrelationBank::new(&wf, &frame, wf.memory, 4, &bits[..wf.memory]);
        if let Some(est) = gmsd_estimate_fading(&wf, &bank, &bits[wf.memory..wf.memory + 4]) {
            worst = worst.max(rel(est, h));
        } else {
            worst = f64::INFINITY;
        }
    }
    check("noiseless h estimate", worst < 1e-9, format!("rel err {worst:.2e}"));

    // lognormal-sum overestimates
    let base = presets::laser_clear_60m_5gbps();
    let mut sign_ok = true;
    for (m, n) in [(1, 2), (1, 3)] {
        let sc = base.with_configuration(m, n);
        let sys = system(&sc, BER_PHOTONS);
        for p in sweep(-20.0, 60.0, 2.0).unwrap() {
            let w = dbm_to_watts(p);
            let g = sys.average_ber(w, Averaging::Ghqf(30)).unwrap();
            if g > 1e-2 || g < 1e-12 {
                continue;
            }
            let l = sys.average_ber(w, Averaging::LognormalSum).unwrap();
            sign_ok &= l >= g;
        }
    }
    check("lognormal-sum >= GHQF", sign_ok, "sign violated".into());

    // thread and seed determinism
    let s = presets::by_name("led-coastal-15m").unwrap();
    let cfg = TransportConfig::with_photons(20_000, 9);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| trace_photons(&s, &cfg).unwrap());
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| trace_photons(&s, &cfg).unwrap());
    let other = trace_photons(&s, &TransportConfig::with_photons(20_000, 10)).unwrap();
    check("determinism", one == four && one != other, "thread count or seed changed the trace".into());

    (
        failures.is_empty(),
        if failures.is_empty() {
            format!("all properties hold (GHQF V30 vs V60 worst {conv:.2e})")
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (n, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = f();
        println!(
            "criterion {n}: {} ({:.0} s) {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

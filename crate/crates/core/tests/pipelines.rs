use zplsim::emission_sim::tagfile::TagFile;
use zplsim::emission_sim::{
    simulate_cw_stream, simulate_pulsed_stream, DetectionChain, DetectorModel, PulseTrain,
    SimConfig, SpectralWindow,
};
use zplsim::estimators::{fit_antibunching, fit_lateral_peak_decay, FitResult};
use zplsim::hbt_correlator::{
    full_correlation_histogram, io, peak_areas, symmetric_start_stop_histogram,
    CoincidenceHistogram,
};
use zplsim::photophysics::MoleculeModel;

fn chain(background_rate: f64) -> DetectionChain {
    DetectionChain {
        window: SpectralWindow::BandPass {
            center: 785.0,
            half_width: 2.0,
        },
        background_rate,
        detector: DetectorModel {
            efficiency: 0.15,
            dead_time: 20.0,
            jitter_sigma: 40.0,
            dark_rate: 25.0,
        },
    }
}

fn add(total: &mut Option<CoincidenceHistogram>, h: CoincidenceHistogram) {
    match total {
        Some(t) => t
            .counts
            .iter_mut()
            .zip(&h.counts)
            .for_each(|(a, b)| *a += b),
        None => *total = Some(h),
    }
}

fn cw_lifetime(molecule: &MoleculeModel, s: f64, seconds: u64) -> FitResult {
    let master = SimConfig::new(100, seconds as f64);
    let mut total = None;
    for i in 0..seconds * 20 {
        let cfg = SimConfig {
            duration: 0.05,
            ..master.derive(i)
        };
        let emitted = simulate_cw_stream(molecule, s * molecule.p_sat, &cfg).unwrap();
        let (a, b) = chain(1e5).detect_hbt(&emitted, 0.5, &cfg).unwrap();
        add(
            &mut total,
            full_correlation_histogram(a.times(), b.times(), 512, -61_440, 61_440).unwrap(),
        );
    }
    fit_antibunching(&total.unwrap(), s).unwrap()
}

fn pulsed_lifetime(molecule: &MoleculeModel, n_chunks: u64) -> FitResult {
    let train = PulseTrain {
        rep_rate: 16.0,
        pulse_duration: 300e-6,
        p_exc: 0.8,
        n_pulses: 1_000_000,
        reexcitation: false,
    };
    let master = SimConfig::new(200, 1.0);
    let mut total = None;
    for i in 0..n_chunks {
        let cfg = SimConfig {
            duration: train.n_pulses as f64 * train.period_ns() * 1e-9,
            ..master.derive(i)
        };
        let emitted = simulate_pulsed_stream(molecule, &train, &cfg).unwrap();
        let (a, b) = chain(5e5).detect_hbt(&emitted, 0.5, &cfg).unwrap();
        add(
            &mut total,
            full_correlation_histogram(a.times(), b.times(), 1000, -320_000, 320_000).unwrap(),
        );
    }
    let hist = total.unwrap();
    let table = peak_areas(&hist, train.period_ps(), 60_000.0, 4).unwrap();
    fit_lateral_peak_decay(&table, &hist, train.period_ps()).unwrap()
}

#[test]
fn cw_and_pulsed_lifetimes_agree() {
    let molecule = MoleculeModel::dbt_anthracene(4.5);
    let cw = cw_lifetime(&molecule, 0.5, 1);
    let pulsed = pulsed_lifetime(&molecule, 8);
    let (a, sa) = (cw.value("tau_f"), cw.sigma("tau_f"));
    let (b, sb) = (pulsed.value("tau_f"), pulsed.sigma("tau_f"));
    let joint = (sa * sa + sb * sb).sqrt();
    assert!(
        (a - b).abs() <= 2.0 * joint,
        "cw {a} ± {sa} vs pulsed {b} ± {sb}"
    );
    assert!((a - 4.5).abs() < 3.0 * sa && (b - 4.5).abs() < 3.0 * sb);
}

#[test]
fn tag_file_round_trip_preserves_correlation() {
    let molecule = MoleculeModel::default();
    let cfg = SimConfig::new(300, 0.02);
    let emitted = simulate_cw_stream(&molecule, 3.5, &cfg).unwrap();
    let (a, b) = chain(2e4).detect_hbt(&emitted, 0.5, &cfg).unwrap();
    let direct = symmetric_start_stop_histogram(a.times(), b.times(), 512, 51_200).unwrap();

    let dir = std::env::temp_dir().join(format!("zplsim-pipe-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.zplt");
    TagFile::from_streams(&[&a, &b]).save(&path).unwrap();
    let back = TagFile::load(&path).unwrap();
    let (ra, rb) = (back.channel_stream(0), back.channel_stream(1));
    assert_eq!(ra.times(), a.times());
    assert_eq!(rb.times(), b.times());
    let again = symmetric_start_stop_histogram(ra.times(), rb.times(), 512, 51_200).unwrap();
    assert_eq!(again, direct);

    let csv = dir.join("g2.csv");
    io::save(&direct, &csv, vec![300]).unwrap();
    let (loaded, meta) = io::load(&csv).unwrap();
    assert_eq!(loaded, direct);
    assert_eq!(meta.unwrap().seed_lineage, vec![300]);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn same_seed_same_histogram() {
    let molecule = MoleculeModel::default();
    let run = |seed| {
        let cfg = SimConfig::new(seed, 0.01);
        let emitted = simulate_cw_stream(&molecule, 1.0, &cfg).unwrap();
        let (a, b) = chain(1e4).detect_hbt(&emitted, 0.5, &cfg).unwrap();
        full_correlation_histogram(a.times(), b.times(), 512, -51_200, 51_200).unwrap()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7).counts, run(8).counts);
}

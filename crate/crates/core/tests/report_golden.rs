use std::path::PathBuf;

use sigvwap::evaluation::{report_tables, samples_from_csv, samples_to_csv, LossReport};
use sigvwap::training::average_over_seeds;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "{name} drifted from its golden copy");
}

fn variants() -> Vec<String> {
    vec!["GFT".into(), "GFT-Sig".into()]
}

#[test]
fn hand_computed_improvements() {
    let samples = samples_from_csv(&std::fs::read_to_string(golden("losses.csv")).unwrap()).unwrap();
    let r = report_tables(&samples, &variants());
    let gft = &r.pooled[1];
    assert_eq!((gft.variant.as_str(), gft.split.as_str(), gft.samples), ("GFT", "test", 3));
    let close = |a: Option<f64>, b: f64| assert!((a.unwrap() - b).abs() < 1e-12, "{a:?} vs {b}");
    close(gft.sample_weighted.absolute, 1.0 - 5.0 / 7.0);
    close(gft.sample_weighted.quadratic, 1.0 - 11.0 / 17.0);
    close(gft.asset_weighted.absolute, 0.25);
    close(gft.asset_weighted.quadratic, 0.375);
    let a = r.per_asset.iter().find(|row| row.split == "test" && row.asset == "A").unwrap();
    close(a.by_variant[1].unwrap().absolute, 1.0 - 0.75 / 2.0);
    assert_eq!(r.durations.len(), 4);
}

#[test]
fn report_renderings_match_golden() {
    let text = std::fs::read_to_string(golden("losses.csv")).unwrap();
    let samples = samples_from_csv(&text).unwrap();
    assert_eq!(samples_from_csv(&samples_to_csv(&samples)).unwrap(), samples);
    let r = report_tables(&samples, &variants());
    check("report.txt", &r.render_text());
    check("report.csv", &r.render_csv());
}

#[test]
fn seed_averaged_losses_survive_a_round_trip() {
    let samples = samples_from_csv(&std::fs::read_to_string(golden("losses.csv")).unwrap()).unwrap();
    let flipped: Vec<_> = samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.model = LossReport::from_deviation(-2.0 * s.model.signed);
            s
        })
        .collect();
    let averaged = average_over_seeds(&[samples.clone(), flipped]).unwrap();
    assert!((averaged[0].model.absolute - 1.5e-4).abs() < 1e-18);
    let direct = report_tables(&averaged, &variants());
    let reread = report_tables(&samples_from_csv(&samples_to_csv(&averaged)).unwrap(), &variants());
    assert_eq!(direct, reread);
}

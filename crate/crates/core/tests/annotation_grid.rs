use tog_core::annotation::{parse_directions, template_annotate, validate_description, Axis, Band, Precision};
use tog_core::grid::{enumerate_and_filter, select_convention};
use tog_core::GridSpec;

fn expected(v: f64) -> (i8, bool) {
    let b = Band::from_degrees(v);
    (b.sign(), b == Band::Center)
}

#[test]
fn low_round_trip_and_validity_over_grid() {
    let spec = GridSpec::default();
    let (conv, _) = select_convention(&spec).unwrap();
    let samples = enumerate_and_filter(&spec, conv).unwrap();
    let mut failures = Vec::new();
    for s in &samples {
        for seed in 0..3u64 {
            let low = template_annotate(s, Precision::Low, seed);
            let r = validate_description(&low, Precision::Low);
            if !r.passed() {
                failures.push(format!("low invalid {:?}: {low} {:?}", s, r.violations));
            }
            match parse_directions(&low) {
                Ok(est) => {
                    for a in Axis::ALL {
                        let (sign, center) = expected(a.value(s));
                        let got = est.get(a).band;
                        if got.sign() != sign || (got == Band::Center) != center {
                            failures.push(format!("{a:?} mismatch on `{low}` for {s:?}"));
                        }
                    }
                }
                Err(e) => failures.push(format!("{e}")),
            }
            let high = template_annotate(s, Precision::High, seed);
            let r = validate_description(&high, Precision::High);
            if !r.passed() {
                failures.push(format!("high invalid: {high} {:?}", r.violations));
            }
        }
    }
    assert!(failures.is_empty(), "{} failures, first: {:#?}", failures.len(), &failures[..failures.len().min(8)]);
}

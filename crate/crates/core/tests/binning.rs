use fgv_core::binning::{decode_bin, decode_box, encode_box, encode_value, enlarge_box, BinSpec, BoundingBox};
use proptest::prelude::*;

#[test]
fn exhaustive_scan_of_size_range() {
    let size = BinSpec::size(7.0);
    let mut prev = 0;
    for i in 0..2800 {
        let v = i as f64 / 10.0;
        let b = encode_value(v, &size).unwrap();
        assert!(b >= prev, "not monotone at {v}");
        assert!(b < 40);
        let back = decode_bin(b, &size).unwrap();
        assert!((back - v).abs() <= 3.5 + 1e-12, "{v} -> {b} -> {back}");
        prev = b;
    }
    for v in [280.0, 280.05, 300.0, 1e6] {
        assert_eq!(encode_value(v, &size).unwrap(), 39);
    }
    assert_eq!(decode_bin(0, &size).unwrap(), 3.5);
    assert_eq!(BinSpec::location(7.0).range(), 175.0);
    assert_eq!(size.range(), 280.0);
}

#[test]
fn decode_is_strictly_increasing() {
    let loc = BinSpec::location(7.0);
    let mids: Vec<f64> = (0..25).map(|b| decode_bin(b, &loc).unwrap()).collect();
    assert!(mids.windows(2).all(|w| w[0] < w[1]));
    assert!(decode_bin(25, &loc).is_err());
}

#[test]
fn negative_and_non_finite_rejected() {
    let loc = BinSpec::location(7.0);
    assert!(encode_value(-0.1, &loc).is_err());
    assert!(encode_value(f64::NAN, &loc).is_err());
}

proptest! {
    #[test]
    fn encode_monotone(a in 0.0f64..400.0, b in 0.0f64..400.0, size in 1.0f64..12.0) {
        let spec = BinSpec::size(size);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(encode_value(lo, &spec).unwrap() <= encode_value(hi, &spec).unwrap());
    }

    #[test]
    fn half_bin_roundtrip(frac in 0.0f64..1.0, size in 0.5f64..12.0) {
        let spec = BinSpec::location(size);
        let v = frac * spec.range();
        let back = decode_bin(encode_value(v, &spec).unwrap(), &spec).unwrap();
        prop_assert!((back - v).abs() <= size / 2.0 + 1e-9);
    }

    #[test]
    fn box_roundtrip_within_half_bin(cx in 0.0f64..175.0, cy in 0.0f64..175.0, w in 0.1f64..280.0, h in 0.1f64..280.0) {
        let (loc, size) = (BinSpec::location(7.0), BinSpec::size(7.0));
        let b = BoundingBox::new(cx, cy, w, h).unwrap();
        let d = decode_box(&encode_box(&b, &loc, &size).unwrap(), &loc, &size).unwrap();
        for (x, y) in [(d.cx, cx), (d.cy, cy), (d.w, w), (d.h, h)] {
            prop_assert!((x - y).abs() <= 3.5 + 1e-9);
        }
    }

    #[test]
    fn enlarge_commutes_with_translation(cx in -50.0f64..50.0, cy in -50.0f64..50.0, w in 1.0f64..100.0,
                                         h in 1.0f64..100.0, dx in -20.0f64..20.0, dy in -20.0f64..20.0, f in 0.5f64..2.0) {
        let b = BoundingBox::new(cx, cy, w, h).unwrap();
        let moved = BoundingBox::new(cx + dx, cy + dy, w, h).unwrap();
        let a = enlarge_box(&moved, f);
        let c = enlarge_box(&b, f);
        prop_assert_eq!((a.cx, a.cy, a.w, a.h), (c.cx + dx, c.cy + dy, c.w, c.h));
    }
}

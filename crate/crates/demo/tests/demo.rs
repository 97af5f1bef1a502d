use nvc_demo::{bd_rate_of_text, decompose_rgba, parse_curve, pmf, DemoError};

const ANCHOR: &str = "# bpp psnr\n0.1 30\n0.2 33\n0.4 36\n0.8 39\n";

#[test]
fn halved_rate_is_minus_fifty_percent() {
    let test = "0.05, 30\n0.1, 33\n0.2, 36\n0.4, 39\n";
    let bd = bd_rate_of_text(ANCHOR, test).unwrap();
    assert!((bd + 50.0).abs() < 1e-9, "{bd}");
    assert!(bd_rate_of_text(ANCHOR, ANCHOR).unwrap().abs() < 1e-12);
}

#[test]
fn bad_curve_text_names_the_line() {
    match parse_curve("a", "0.1 30\n0.2\n") {
        Err(DemoError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_curve("a", "0.1 30\n0.2 x\n"), Err(DemoError::Parse { line: 2, .. })));
    assert!(matches!(parse_curve("a", "0.1 30\n"), Err(DemoError::Core(_))));
}

#[test]
fn pmf_sums_to_one() {
    for sigma in [0.05, 0.5, 3.0, 40.0] {
        let p = pmf(sigma);
        assert_eq!(p.len() % 2, 1);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "sigma {sigma}");
    }
}

#[test]
fn flat_image_has_grey_detail() {
    let (w, h) = (9, 7);
    let rgba: Vec<u8> = (0..w * h).flat_map(|_| [200, 40, 90, 255]).collect();
    let out = decompose_rgba(&rgba, w, h).unwrap();
    assert_eq!(out.len(), 2 * rgba.len());
    assert_eq!(&out[..rgba.len()], &rgba[..]);
    assert!(out[rgba.len()..].chunks(4).all(|px| px[..3].iter().all(|&v| v.abs_diff(128) <= 1) && px[3] == 255));
    assert!(matches!(decompose_rgba(&rgba[4..], w, h), Err(DemoError::ImageSize { .. })));
}

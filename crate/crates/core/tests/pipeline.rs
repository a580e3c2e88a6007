use std::path::Path;

use polybesov::approx::{fit_rate, nterm_curve, predicted_rate, NTermPlan};
use polybesov::cli::{load_surface, parse_basis, parse_function};
use polybesov::spaces::{besov_norm, BesovSpec};
use polybesov::surface::PolyhedralSurface;
use polybesov::wavelet::{analyze, AnalyzeOptions};

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).to_string_lossy().into_owned()
}

#[test]
fn shipped_descriptions_match_builtins() {
    assert_eq!(load_surface(&data("cube.json")).unwrap().hash(), PolyhedralSurface::unit_cube().hash());
    assert_eq!(load_surface(&data("fichera.json")).unwrap().hash(), PolyhedralSurface::fichera().hash());
}

#[test]
fn norms_are_stable_under_refinement_for_a_smooth_function() {
    let s = PolyhedralSurface::fichera();
    let basis = parse_basis("linear").unwrap();
    let f = parse_function(&s, "exp:0.5,-0.3,0.2").unwrap();
    let spec = BesovSpec::new(0.8, 2.0, 2.0);
    let n4 = besov_norm(&s, &analyze(&s, |p| f.value(p), &basis, 4, &AnalyzeOptions::default()).unwrap(), &spec).unwrap();
    let n5 = besov_norm(&s, &analyze(&s, |p| f.value(p), &basis, 5, &AnalyzeOptions::default()).unwrap(), &spec).unwrap();
    assert!(n5.value >= n4.value);
    assert!((n5.value - n4.value) / n5.value < 0.02, "{} {}", n4.value, n5.value);
}

#[test]
fn nterm_errors_of_a_vertex_singularity_decay() {
    let s = PolyhedralSurface::unit_cube();
    let basis = parse_basis("haar").unwrap();
    let f = parse_function(&s, "vertex:0,0.4").unwrap();
    let field = analyze(&s, |p| f.value(p), &basis, 7, &AnalyzeOptions::default()).unwrap();
    let target = BesovSpec::new(0.0, 2.0, 2.0);
    let plan = NTermPlan::new(&field, &target).unwrap();
    let ns: Vec<usize> = (6..=12).map(|k| 1usize << k).collect();
    let curve = nterm_curve(&plan, &ns);
    assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
    let fit = fit_rate(&curve, None).unwrap();
    // Haar caps the rate at 1/2 in L2
    assert!(fit.slope < -0.3 && fit.slope > -0.7, "{}", fit.slope);
    assert_eq!(predicted_rate(&BesovSpec::new(1.0, 1.0, 1.0), &target).unwrap(), 0.5);
}

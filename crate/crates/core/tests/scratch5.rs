use nalgebra::{DMatrix, DVector};
use sparse_svm_core::domain::Dataset;
use sparse_svm_core::heuristics::tighten_big_m;
use sparse_svm_core::mip::MipOptions;

#[test]
fn tighten_fixture() {
    let data = Dataset::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
        DVector::from_vec(vec![1.0, -1.0]),
        None,
        "sparse",
    )
    .unwrap();
    match tighten_big_m(&data, 1.0, 1, 0.5, &MipOptions::default()) {
        Ok(b) => println!("ok m {} upper {:?} lower {:?}", b.m, b.upper.as_slice(), b.lower.as_slice()),
        Err(e) => println!("err {e}"),
    }
}

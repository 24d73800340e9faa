use nalgebra::{DMatrix, DVector};
use sparse_svm_core::domain::Dataset;
use sparse_svm_core::relaxations::solve_boxmp;

#[test]
fn boxmp_bigm_large() {
    let data = Dataset::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, -1.0]),
        DVector::from_vec(vec![1.0, -1.0]),
        None,
        "dense",
    )
    .unwrap();
    match solve_boxmp(&data, 10.0, 2, 1e4) {
        Ok(r) => println!("ok lb {}", r.lower_bound),
        Err(e) => println!("err {e}"),
    }
}

use afree_core::linalg::Mat;
use afree_core::operator::OperatorSpec;
use afree_core::scalar::Rat;
use afree_core::sphere::{lusin_approximate, UnitField};
use afree_core::witness::scalar_witness;
use std::time::Instant;

fn main() {
    let a = Mat::<Rat>::identity(2);
    let w = scalar_witness(&a).unwrap();
    let op = OperatorSpec::scalar(a);
    let f = UnitField::from_fn(2, 2, 64, |_| vec![0.7, 0.0]);
    let t = Instant::now();
    eprintln!("starting");
    match lusin_approximate(&op, &w, &f, 0.15, 0.05, 8, 1e-6) {
        Ok((approx, report)) => {
            println!(
                "balls={} uncovered={:.4} sup_err={:.2e} resid={:.2e} t={:?}",
                approx.covering.balls.len(),
                report.uncovered_fraction,
                report.sup_error_on_k,
                report.weak_residual,
                t.elapsed()
            );
        }
        Err(e) => println!("error after {:?}: {e}", t.elapsed()),
    }
}

use equisect_core::equivalence::*;
use equisect_core::body::{make_body, BodySpec};
use equisect_core::algebra::QuadForm;

fn main() {
    let cfg = EquivConfig::default();
    let e = make_body(&BodySpec::Ellipsoid {
        q: QuadForm::from_diagonal(&[0.25, 1.0]),
    }).unwrap();
    let alg = self_equivalence_algebra(&e, 1e-6, &cfg);
    println!("algebra dim = {}", alg.dim());
    for b in &alg.basis { println!("L = {}", b); }
    let m = invariant_inner_product(&e, 64, &cfg).unwrap();
    println!("M = {}", m.matrix());
}

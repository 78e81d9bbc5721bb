use drumsmith_nn::gradcheck::op_cases;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn every_op_matches_central_differences() {
    let mut rng = StdRng::seed_from_u64(0x6ead);
    for case in op_cases() {
        for shape in 0..20 {
            let report = (case.run)(&mut rng).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{} shape #{shape}: relative error {}",
                case.name,
                report.max_rel_error
            );
        }
    }
}

//! Draws complex envelopes from the Husimi function of `α|0⟩ + β|1⟩` and
//! compares their moments with the anti-normally ordered expectation values.

use qcorr::model::CavityPreparation;
use qcorr::sampler::HusimiSampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let draws = 200_000;
    for p1 in [0.0, 2.0 / 3.0, 1.0] {
        let prep = CavityPreparation::superposition(p1);
        let sampler = HusimiSampler::new(&prep);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut m1, mut m2, mut m4) = (num_complex::Complex64::new(0.0, 0.0), 0.0, 0.0);
        for _ in 0..draws {
            let s = sampler.sample(&mut rng);
            m1 += s;
            m2 += s.norm_sqr();
            m4 += s.norm_sqr().powi(2);
        }
        let n = draws as f64;
        println!(
            "p1 = {p1:.3}  envelope M = {:.3}  E[s] = {:.4} (expect {:.4})  E|s|^2 = {:.4} (expect {:.4})  E|s|^4 = {:.4} (expect {:.4})",
            sampler.envelope(),
            m1 / n,
            prep.alpha.conj() * prep.beta,
            m2 / n,
            1.0 + p1,
            m4 / n,
            2.0 + 4.0 * p1
        );
    }
}

//! Leave-one-out stability of a subsampling query, measured exactly and
//! set against its closed-form bound, plus the divergence inequalities
//! the bound feeds into.

use adasub::divergence::{
    alkl_bound_general, chi2_divergence, chi2_stability_bound, kl_divergence, measure_leave_one_out_chi2,
    measure_leave_one_out_kl, verify_kl_chi2_inequality, verify_kl_mixture_inequality, verify_variance_contraction,
};
use adasub::engine::ResponsePMF;
use adasub::model::{Dataset, Query, Sample, Symbol};
use adasub::Result;

fn main() -> Result<()> {
    let sample: Dataset<Symbol> = Dataset::new(vec![0, 1, 2, 2, 1, 0])?;
    let sum_mod_3 = Query::deterministic("sum mod 3", 2, vec![0.0, 1.0, 2.0], |xs: &[&Symbol]| {
        (*xs[0] + *xs[1]) as usize % 3
    })?;

    let report = measure_leave_one_out_chi2(&sum_mod_3, &sample)?;
    println!("leave-one-out chi2: measured {:.6}, bound {:.6}", report.measured, report.bound);
    let eps = chi2_stability_bound(sample.len(), 2, 3)?;
    let kl = measure_leave_one_out_kl(&sum_mod_3, &sample, eps)?;
    println!("mixed leave-one-out KL {:.6} <= {:.6}", kl.to_f64(), alkl_bound_general(eps, 3)?);

    let d = ResponsePMF::new(vec![0.0, 1.0, 2.0], vec![0.5, 0.3, 0.2])?;
    let e = ResponsePMF::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.3, 0.5])?;
    println!("KL(d||e) = {:?}, chi2(d||e) = {:?}", kl_divergence(&d, &e)?, chi2_divergence(&d, &e)?);
    println!("KL vs chi2: {:?}", verify_kl_chi2_inequality(&d, &e, 0.4)?);
    println!("KL of a mixture: {:?}", verify_kl_mixture_inequality(&d, &e, 0.1)?);

    // a linear function of the chosen indices meets the contraction with equality
    let weights = [0.3, -1.0, 0.5, 0.25, 0.9, -0.4];
    let (lhs, rhs) = verify_variance_contraction(|t| t.iter().map(|&i| weights[i]).sum(), 6, 2)?;
    println!("variance contraction (linear): {lhs:.12} vs {rhs:.12}");
    Ok(())
}

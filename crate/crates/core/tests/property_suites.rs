mod properties;

use properties::Check;

fn pass(check: Check) {
    match check {
        Ok(summary) => println!("{summary}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn autodiff_random_graphs() {
    pass(properties::autodiff_matches_finite_differences(100));
}

#[test]
fn elbo_bounded_by_exact_marginal() {
    pass(properties::elbo_below_log_marginal());
}

#[test]
fn elbo_gradient_common_random_numbers() {
    pass(properties::elbo_gradient_matches_finite_differences());
}

#[test]
fn iaf_log_jacobian_numeric() {
    pass(properties::iaf_log_jacobian());
}

#[test]
fn rbpf_conjugate_oracle() {
    pass(properties::rbpf_conjugate_regression());
}

#[test]
fn rbpf_kalman_oracle() {
    pass(properties::rbpf_single_particle_kalman());
}

#[test]
fn rbpf_many_particles_and_invariants() {
    pass(properties::rbpf_many_particles());
}

#[test]
fn crps_energy_integral_gaussian() {
    pass(properties::crps_forms_agree());
}

#[test]
fn var_generator_spectral_radius() {
    pass(properties::var_generator_is_stable());
}

#[test]
fn bit_identical_reruns() {
    pass(properties::runs_are_bit_identical());
}

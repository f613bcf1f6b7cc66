use super::{ControlError, InverterState};

/// Maximum power potential implied by last iteration's output and curtailment
/// ratio. A ratio below `alpha_floor` is treated as the floor.
pub fn estimate_impp(p_final_prev: f64, alpha_prev: f64, alpha_floor: f64) -> f64 {
    let alpha = if alpha_prev < alpha_floor {
        log::debug!("curtailment ratio {alpha_prev} below floor {alpha_floor}; clamped for estimation");
        alpha_floor
    } else {
        alpha_prev
    };
    p_final_prev.max(0.0) / alpha
}

pub fn system_mpp(states: &[InverterState]) -> f64 {
    states.iter().map(|s| s.p_impp_est).sum()
}

pub fn uniform_request(p_desired: f64, n: usize) -> Result<f64, ControlError> {
    if n == 0 {
        return Err(ControlError::Config("plant has no inverters".into()));
    }
    Ok(p_desired / n as f64)
}

/// Headroom against the uniform request and whether the inverter must ask for
/// help to meet it.
pub fn residual(p_impp_est: f64, p_request: f64) -> (f64, bool) {
    let p_res = p_impp_est - p_request;
    (p_res, p_res < 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_examples() {
        assert_eq!(estimate_impp(400.0, 0.8, 0.01), 500.0);
        assert_eq!(estimate_impp(123.4, 1.0, 0.01), 123.4);
        assert_eq!(estimate_impp(0.0, 0.5, 0.01), 0.0);
        assert_eq!(estimate_impp(1.0, 0.0, 0.01), 100.0);
    }

    #[test]
    fn request_and_residual_examples() {
        assert_eq!(uniform_request(6800.0, 17).unwrap(), 400.0);
        assert_eq!(uniform_request(0.0, 17).unwrap(), 0.0);
        assert!((uniform_request(1000.0, 3).unwrap() - 333.333_333_333_333_3).abs() < 1e-9);
        assert!(uniform_request(1.0, 0).is_err());
        assert_eq!(residual(500.0, 400.0), (100.0, false));
        assert_eq!(residual(300.0, 400.0), (-100.0, true));
        assert_eq!(residual(400.0, 400.0), (0.0, false));
    }

    #[test]
    fn system_mpp_sums_estimates() {
        let states: Vec<_> = [500.0, 300.0, 200.0]
            .iter()
            .enumerate()
            .map(|(i, &e)| InverterState { p_impp_est: e, ..InverterState::new(i, 0.0, 1.0) })
            .collect();
        assert_eq!(system_mpp(&states), 1000.0);
        assert_eq!(system_mpp(&[]), 0.0);
    }
}

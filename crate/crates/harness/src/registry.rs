//! Named models: the OU family `b(x) = -x, sigma = I` and a genuinely
//! multiplicative variant with certified constants.

use stabrate_core::sde::{ModelSpec, MultiplicativeOu, OrnsteinUhlenbeck};

use crate::error::{HarnessError, Result};

pub const MODEL_IDS: &[&str] = &["ou", "multiplicative"];

pub fn build_model(id: &str, dim: usize) -> Result<Box<dyn ModelSpec>> {
    match id {
        "ou" => Ok(Box::new(OrnsteinUhlenbeck::new(dim))),
        "multiplicative" => Ok(Box::new(MultiplicativeOu::new(dim, 1.0))),
        _ => Err(HarnessError::Config(format!("unknown model `{id}`"))),
    }
}

/// Whether exact oracles exist for the model (stationary and marginal laws).
pub fn has_oracle(id: &str) -> bool {
    id == "ou"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_known_models() {
        for id in MODEL_IDS {
            let m = build_model(id, 2).unwrap();
            assert_eq!(m.dim(), 2);
            assert!(m.theta().is_some());
        }
        assert!(build_model("nope", 1).is_err());
        assert!(has_oracle("ou") && !has_oracle("multiplicative"));
    }
}

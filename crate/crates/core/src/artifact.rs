//! JSON loss artifacts, tagged by `kind`.

use serde::{Deserialize, Serialize};

use crate::adalfl::MetaLossNet;
use crate::harness::LossFn;
use crate::lossnet::LossNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossArtifact {
    Network(LossNetwork),
    MetaMlp(MetaLossNet),
}

impl LossArtifact {
    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifacts serialise")
    }
}

impl From<LossArtifact> for LossFn {
    fn from(a: LossArtifact) -> Self {
        match a {
            LossArtifact::Network(n) => LossFn::Network(n),
            LossArtifact::MetaMlp(m) => LossFn::MetaMlp(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adalfl::MetaArch;
    use crate::lossnet::{transition, WeightInit};
    use crate::rng::rng_from;

    #[test]
    fn network_schema() {
        let net = transition(
            &"mul(y, log(f))".parse().unwrap(),
            WeightInit::Unit,
            true,
            &mut rng_from(0),
        );
        let a = LossArtifact::Network(net);
        let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(v["kind"], "network");
        assert_eq!(v["expression"], "mul(y, log(f))");
        assert_eq!(v["weights"].as_array().unwrap().len(), 3);
        assert_eq!(v["nonneg"], true);
        assert_eq!(LossArtifact::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn meta_mlp_schema() {
        let a = LossArtifact::MetaMlp(MetaLossNet::new(4, MetaArch::SmoothLeaky, &mut rng_from(1)));
        let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(v["kind"], "meta-mlp");
        assert_eq!(v["layers"], serde_json::json!([2, 4, 4, 1]));
        assert_eq!(LossArtifact::from_json(&a.to_json()).unwrap(), a);
        assert!(LossArtifact::from_json(r#"{"kind":"other"}"#).is_err());
    }
}

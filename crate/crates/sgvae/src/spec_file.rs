//! JSON model specifications.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sgvae_core::model::{define_model, Activation, Family, ModelGraph, ParamFn, Supervision, VariableSpec};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub variables: Vec<VariableSpec>,
}

/// A parsed and validated model file.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub file: ModelFile,
    pub graph: ModelGraph,
    /// Hex SHA-256 of the canonical JSON encoding.
    pub digest: String,
}

impl ModelFile {
    /// SHA-256 over the compact re-serialization, so formatting does not
    /// change the digest.
    pub fn digest(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(self).expect("model files always serialize");
        Sha256::digest(&canonical).into()
    }

    pub fn validate(self) -> Result<LoadedModel> {
        let graph = define_model(self.variables.clone()).map_err(|e| Error::Spec(e.to_string()))?;
        let digest = hex::encode(self.digest());
        Ok(LoadedModel {
            file: self,
            graph,
            digest,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model files always serialize")
    }
}

pub fn parse(text: &str) -> Result<LoadedModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
    file.validate()
}

pub fn load(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse(&text).map_err(|e| match e {
        Error::Spec(msg) => Error::Spec(format!("{}: {msg}", path.display())),
        e => e,
    })
}

/// The MNIST model: `q(y | x) q(z | x, y)` and `p(y) p(z) p(x | y, z)` with
/// Bernoulli pixels and one hidden layer per network.
pub fn mnist(style_dims: usize, hidden: usize) -> ModelFile {
    let mlp = || ParamFn::mlp(&[hidden], Activation::Relu);
    ModelFile {
        variables: vec![
            VariableSpec::new("y", Family::Categorical, 10, Supervision::Partial).recognition(&["x"], mlp()),
            VariableSpec::new("z", Family::Normal, style_dims, Supervision::Latent).recognition(&["x", "y"], mlp()),
            VariableSpec::new("x", Family::Bernoulli, 784, Supervision::Observed).generative(&["y", "z"], mlp()),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_formatting() {
        let m = mnist(10, 256);
        let pretty = parse(&m.to_json()).unwrap();
        let compact = parse(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(pretty.digest, compact.digest);
        assert_eq!(pretty.digest.len(), 64);
        assert_ne!(parse(&mnist(2, 256).to_json()).unwrap().digest, pretty.digest);
    }

    #[test]
    fn invalid_graphs_are_spec_errors() {
        let mut m = mnist(10, 256);
        m.variables[0].recognition_parents = vec!["w".into()];
        assert!(matches!(m.validate(), Err(Error::Spec(_))));
        assert!(matches!(parse("{\"variables\": 3}"), Err(Error::Spec(_))));
        assert!(matches!(
            parse("{\"variables\": [], \"extra\": 1}"),
            Err(Error::Spec(_))
        ));
    }
}

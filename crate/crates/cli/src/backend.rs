//! Backend specification strings: `mock`, `mock:flip=0.1`, `oracle`,
//! `oracle:flip=0.3`, `oracle:noisy=4,noisy_flip=0.4`, `http`. The oracle
//! forms answer from scene latent flags and need the dataset manifest.

use std::collections::BTreeMap;
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use vlcfusion::synth::{DatasetManifest, SyntheticConditionSpec, SyntheticOracleVlm};
use vlcfusion::vlm::{HttpVlm, HttpVlmConfig, MockVlm, MockVlmConfig, VlmBackend};

#[derive(Debug, Clone)]
pub struct BackendSpec {
    pub kind: String,
    pub options: BTreeMap<String, String>,
}

impl BackendSpec {
    pub fn parse(raw: &str) -> Result<Self> {
        let (kind, rest) = match raw.split_once(':') {
            Some((k, r)) => (k.trim().to_string(), Some(r)),
            None => (raw.trim().to_string(), None),
        };
        if !matches!(kind.as_str(), "mock" | "oracle" | "http") {
            bail!("unknown backend kind {kind:?} (expected mock, oracle or http)");
        }
        let mut options = BTreeMap::new();
        if let Some(rest) = rest {
            for pair in rest.split(',') {
                let Some((key, value)) = pair.split_once('=') else {
                    bail!("backend option {pair:?} is not key=value");
                };
                options.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(BackendSpec { kind, options })
    }

    fn f64_opt(&self, key: &str, default: f64) -> Result<f64> {
        match self.options.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .with_context(|| format!("backend option {key}={raw:?}")),
        }
    }

    fn usize_opt(&self, key: &str, default: usize) -> Result<usize> {
        match self.options.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .with_context(|| format!("backend option {key}={raw:?}")),
        }
    }

    /// The condition-question universe an oracle backend answers.
    pub fn oracle_condition_spec(&self, seed: u64) -> Result<SyntheticConditionSpec> {
        let flip = self.f64_opt("flip", 0.0)?;
        let noisy = self.usize_opt("noisy", 0)?;
        let noisy_flip = self.f64_opt("noisy_flip", 0.4)?;
        let _ = seed;
        let mut spec = SyntheticConditionSpec::informative(flip);
        if noisy > 0 {
            spec = SyntheticConditionSpec::with_noisy_tail(noisy, noisy_flip);
            if flip > 0.0 {
                for entry in spec.entries.iter_mut().take(6) {
                    entry.flip_prob = flip;
                }
            }
        }
        Ok(spec)
    }

    /// Instantiate the backend. Oracle backends need the dataset manifest.
    pub fn build(
        &self,
        seed: u64,
        manifest: Option<&DatasetManifest>,
    ) -> Result<Arc<dyn VlmBackend>> {
        match self.kind.as_str() {
            "mock" => {
                let flip = self.f64_opt("flip", 0.0)?;
                Ok(Arc::new(MockVlm::new(MockVlmConfig {
                    seed,
                    uniform_flip: flip,
                    ..MockVlmConfig::default()
                })))
            }
            "oracle" => {
                let manifest = manifest
                    .context("oracle backend needs --data-dir with a dataset manifest")?;
                let spec = self.oracle_condition_spec(seed)?;
                Ok(Arc::new(SyntheticOracleVlm::new(manifest, &spec, seed)))
            }
            "http" => {
                let config = HttpVlmConfig::from_env()?;
                Ok(Arc::new(HttpVlm::new(config)))
            }
            other => bail!("unknown backend kind {other:?}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings_parse() {
        let s = BackendSpec::parse("mock").unwrap();
        assert_eq!(s.kind, "mock");
        let s = BackendSpec::parse("oracle:flip=0.3").unwrap();
        assert_eq!(s.options["flip"], "0.3");
        let s = BackendSpec::parse("oracle:noisy=4,noisy_flip=0.4").unwrap();
        assert_eq!(s.options.len(), 2);
        assert!(BackendSpec::parse("quantum").is_err());
        assert!(BackendSpec::parse("mock:flip").is_err());
    }

    #[test]
    fn oracle_spec_shapes() {
        let s = BackendSpec::parse("oracle:noisy=4,noisy_flip=0.4").unwrap();
        let spec = s.oracle_condition_spec(0).unwrap();
        assert_eq!(spec.entries.len(), 10);
        assert_eq!(spec.entries[9].flip_prob, 0.4);
        assert_eq!(spec.entries[0].flip_prob, 0.0);

        let s = BackendSpec::parse("oracle:flip=0.3").unwrap();
        let spec = s.oracle_condition_spec(0).unwrap();
        assert_eq!(spec.entries.len(), 6);
        assert_eq!(spec.entries[0].flip_prob, 0.3);
    }
}

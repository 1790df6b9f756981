//! Turns `[providers.*]` declarations into live role-bound backends.
//!
//! Each declared name is constructed exactly once and shared by every role
//! bound to it, then wrapped according to the cache mode. In replay mode
//! nothing is constructed for HTTP backends at all — their fingerprint is
//! derived from the declaration — so a fully cached run needs neither
//! network access nor API keys.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use acgen_core::providers::{
    HttpProvider, HttpProviderConfig, MockProvider, Provider, ReplayProvider,
};
use acgen_core::retrieval::TextStrategy;

use crate::config::{CacheMode, PipelineConfig, ProviderSpec};
use crate::error::CliError;

/// One live provider per pipeline role.
pub struct RoleProviders {
    pub generator: Arc<dyn Provider>,
    pub embedder: Arc<dyn Provider>,
    pub converter: Arc<dyn Provider>,
    pub scorer: Arc<dyn Provider>,
    pub global_judge: Arc<dyn Provider>,
    pub polisher: Arc<dyn Provider>,
    /// Exactly three, in panel order.
    pub judges: Vec<Arc<dyn Provider>>,
    /// Role label -> backend fingerprint (replay wrapping is transparent,
    /// so these are stable across cache modes).
    pub fingerprints: BTreeMap<String, String>,
}

/// Builds the backend a declaration describes, without any cache wrapping.
fn base_provider(spec: &ProviderSpec) -> Result<Arc<dyn Provider>, CliError> {
    match spec {
        ProviderSpec::Mock { dim, label } => {
            let mut mock = MockProvider::new();
            if let Some(dim) = dim {
                mock = mock.with_dim(*dim);
            }
            if let Some(label) = label {
                mock = mock.with_label(label.clone());
            }
            Ok(Arc::new(mock))
        }
        ProviderSpec::Http {
            endpoint,
            model,
            embedding_model,
            api_key_env,
            timeout_secs,
            max_parallel,
            embedding_dim,
        } => {
            let defaults: HttpProviderConfig = serde_json::from_value(serde_json::json!({
                "endpoint": endpoint,
                "model": model,
                "api_key_env": api_key_env,
            }))
            .expect("static HTTP provider defaults deserialize");
            let config = HttpProviderConfig {
                embedding_model: embedding_model.clone(),
                timeout_secs: timeout_secs.unwrap_or(defaults.timeout_secs),
                max_parallel: max_parallel.unwrap_or(defaults.max_parallel),
                embedding_dim: *embedding_dim,
                ..defaults
            };
            Ok(Arc::new(HttpProvider::new(config)?))
        }
    }
}

/// The fingerprint a declaration's backend would report, computed without
/// constructing it (and so without needing its API key).
fn spec_fingerprint(spec: &ProviderSpec) -> String {
    match spec {
        ProviderSpec::Mock { dim, label } => {
            let mut mock = MockProvider::new();
            if let Some(dim) = dim {
                mock = mock.with_dim(*dim);
            }
            if let Some(label) = label {
                mock = mock.with_label(label.clone());
            }
            mock.fingerprint()
        }
        ProviderSpec::Http { endpoint, model, embedding_model, .. } => {
            HttpProvider::fingerprint_for(endpoint, model, embedding_model.as_deref())
        }
    }
}

/// Wraps one backend according to the cache mode.
fn wrap(
    spec: &ProviderSpec,
    mode: CacheMode,
    cache_dir: &Path,
) -> Result<Arc<dyn Provider>, CliError> {
    Ok(match mode {
        CacheMode::Off => base_provider(spec)?,
        CacheMode::Record => Arc::new(ReplayProvider::record(base_provider(spec)?, cache_dir)?),
        CacheMode::Auto => Arc::new(ReplayProvider::auto(base_provider(spec)?, cache_dir)?),
        CacheMode::Replay => Arc::new(ReplayProvider::replay(cache_dir, spec_fingerprint(spec))),
    })
}

/// Instantiates every provider a role references and binds the roles.
pub fn build_providers(config: &PipelineConfig) -> Result<RoleProviders, CliError> {
    let cache_dir = config.paths.cache_dir.join("providers");
    let mut by_name: BTreeMap<String, Arc<dyn Provider>> = BTreeMap::new();
    let mut fingerprints = BTreeMap::new();
    for (role, name) in config.role_bindings() {
        if !by_name.contains_key(&name) {
            let spec = config.providers.get(&name).ok_or_else(|| {
                CliError::Config(format!("role '{role}' references undeclared provider '{name}'"))
            })?;
            let provider = wrap(spec, config.cache.mode, &cache_dir)?;
            by_name.insert(name.clone(), provider);
        }
        fingerprints.insert(role, by_name[&name].fingerprint());
    }

    let get = |name: &String| Arc::clone(&by_name[name]);
    let roles = &config.roles;
    Ok(RoleProviders {
        generator: get(&roles.generator),
        embedder: get(&roles.embedder),
        converter: get(&roles.converter),
        scorer: get(&roles.scorer),
        global_judge: get(&roles.global_judge),
        polisher: get(&roles.polisher),
        judges: roles.judges.iter().map(get).collect(),
        fingerprints,
    })
}

impl RoleProviders {
    /// The provider that scores text chunks under the given retrieval
    /// strategy: the embedder for vector similarity, the generating LM
    /// itself for likelihood scoring.
    pub fn text_retriever(&self, strategy: TextStrategy) -> &Arc<dyn Provider> {
        match strategy {
            TextStrategy::DenseCosine => &self.embedder,
            TextStrategy::LmScored => &self.generator,
        }
    }
}

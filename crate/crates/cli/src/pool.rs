//! Resource-pool settings in TOML.

use paas_core::provisioning::PoolConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolFile {
    pub capacity: u32,
    pub certificate_file_path: String,
    pub certificate_password: String,
    pub certificate_thumbprint: String,
    pub hosted_service_name: String,
    pub subscription_id: String,
    pub storage_account_name: String,
    pub storage_account_key: String,
    #[serde(default = "default_container")]
    pub storage_container: String,
}

fn default_container() -> String {
    "aneka".into()
}

#[derive(Debug, thiserror::Error)]
pub enum PoolFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad pool file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] paas_core::provisioning::ProvisionError),
}

impl From<PoolFile> for PoolConfig {
    fn from(p: PoolFile) -> Self {
        PoolConfig {
            capacity: p.capacity,
            certificate_file_path: p.certificate_file_path,
            certificate_password: p.certificate_password,
            certificate_thumbprint: p.certificate_thumbprint,
            hosted_service_name: p.hosted_service_name,
            subscription_id: p.subscription_id,
            storage_account_name: p.storage_account_name,
            storage_account_key: p.storage_account_key,
            storage_container: p.storage_container,
        }
    }
}

impl From<PoolConfig> for PoolFile {
    fn from(p: PoolConfig) -> Self {
        PoolFile {
            capacity: p.capacity,
            certificate_file_path: p.certificate_file_path,
            certificate_password: p.certificate_password,
            certificate_thumbprint: p.certificate_thumbprint,
            hosted_service_name: p.hosted_service_name,
            subscription_id: p.subscription_id,
            storage_account_name: p.storage_account_name,
            storage_account_key: p.storage_account_key,
            storage_container: p.storage_container,
        }
    }
}

pub fn parse_pool(text: &str) -> Result<PoolConfig, PoolFileError> {
    let file: PoolFile = toml::from_str(text)?;
    let cfg = PoolConfig::from(file);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_pool(path: &Path) -> Result<PoolConfig, PoolFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| PoolFileError::Io { path: path.display().to_string(), source })?;
    parse_pool(&text)
}

pub fn emit_pool(cfg: &PoolConfig) -> String {
    toml::to_string(&PoolFile::from(cfg.clone())).expect("plain struct serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = PoolConfig::example(12);
        assert_eq!(parse_pool(&emit_pool(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_rejected() {
        let text = emit_pool(&PoolConfig::example(2)) + "colour = \"red\"\n";
        assert!(matches!(parse_pool(&text), Err(PoolFileError::Toml(_))));
    }

    #[test]
    fn zero_capacity_rejected() {
        let text = emit_pool(&PoolConfig::example(2)).replace("capacity = 2", "capacity = 0");
        assert!(matches!(parse_pool(&text), Err(PoolFileError::Invalid(_))));
    }
}

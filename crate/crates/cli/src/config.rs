//! Service configuration files.
//!
//! The accepted form is the cloud provider's service-configuration markup:
//! a `ServiceConfiguration` root holding one `Role` per deployable role, each
//! with `Instances count`, a `ConfigurationSettings` block of
//! `Setting name/value` pairs and an optional `Certificates` block.

use paas_core::sim::{DeploymentMode, ScenarioSpec};
use paas_core::{NodeUri, SharedKey};
use std::fmt::Write as _;
use std::path::Path;

pub const NAMESPACE: &str = "http://schemas.microsoft.com/ServiceHosting/2008/10/ServiceConfig";

/// Setting keys every role must carry.
pub const REQUIRED_KEYS: [&str; 9] = [
    "DiagnosticsConnectionString",
    "DataConnectionString",
    "SharedKey",
    "IndexServerUri",
    "ResourcePool",
    "SubscriptionID",
    "HostedServiceName",
    "CertificateThumbprint",
    "DeploymentLevel",
];

/// Keys that are accepted and then ignored.
pub const IGNORED_KEYS: [&str; 1] = ["AdoConnectionString"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: u32, column: u32, message: String },
    #[error("invalid {key}: {reason}")]
    Validation { key: String, reason: String },
    #[error("unknown setting {key:?} at line {line}")]
    UnknownKey { key: String, line: u32 },
}

impl ConfigError {
    /// The setting or element the error is about, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { key, .. } | ConfigError::UnknownKey { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeploymentLevel {
    Master,
    Worker,
}

impl DeploymentLevel {
    pub fn name(self) -> &'static str {
        match self {
            DeploymentLevel::Master => "Master",
            DeploymentLevel::Worker => "Worker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Master" => Some(DeploymentLevel::Master),
            "Worker" => Some(DeploymentLevel::Worker),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub name: String,
    pub thumbprint: String,
    pub algorithm: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleSettings {
    pub diagnostics_connection_string: String,
    pub data_connection_string: String,
    pub shared_key: String,
    pub index_server_uri: NodeUri,
    pub resource_pool: String,
    pub subscription_id: String,
    pub hosted_service_name: String,
    pub certificate_thumbprint: String,
    pub deployment_level: DeploymentLevel,
    /// Ignored keys that were present, in file order.
    pub ignored: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleConfig {
    pub name: String,
    pub instances: u32,
    pub settings: RoleSettings,
    pub certificates: Vec<Certificate>,
}

impl RoleConfig {
    pub fn is_master_role(&self) -> bool {
        self.name.ends_with("Master")
    }

    pub fn is_worker_role(&self) -> bool {
        self.name.ends_with("Worker")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub service_name: String,
    pub roles: Vec<RoleConfig>,
}

/// `(AccountName, AccountKey)` from a `Key=Value;...` connection string.
pub fn storage_account(conn: &str) -> Option<(String, String)> {
    let mut name = None;
    let mut key = None;
    for part in conn.split(';') {
        match part.split_once('=') {
            Some(("AccountName", v)) => name = Some(v.to_string()),
            Some(("AccountKey", v)) => key = Some(v.to_string()),
            _ => {}
        }
    }
    Some((name?, key?))
}

impl ServiceConfig {
    pub fn role(&self, name: &str) -> Option<&RoleConfig> {
        self.roles.iter().find(|r| r.name == name)
    }

    pub fn worker_role(&self) -> Option<&RoleConfig> {
        self.roles.iter().find(|r| r.is_worker_role())
    }

    pub fn master_role(&self) -> Option<&RoleConfig> {
        self.roles.iter().find(|r| r.is_master_role())
    }

    pub fn worker_count(&self) -> u32 {
        self.worker_role().map_or(0, |r| r.instances)
    }

    /// Checks the roles a deployment of `mode` needs.
    pub fn validate_for(&self, mode: DeploymentMode) -> Result<(), ConfigError> {
        let worker = self.worker_role().ok_or_else(|| invalid("Role", "no worker role"))?;
        if mode == DeploymentMode::CloudDeployment {
            if worker.instances < 1 {
                return Err(invalid("Instances", "cloud deployment needs at least one worker"));
            }
            let master = self.master_role().ok_or_else(|| invalid("Role", "cloud deployment needs a master role"))?;
            if master.settings.deployment_level != DeploymentLevel::Master {
                return Err(invalid("DeploymentLevel", format!("role {} must be Master", master.name)));
            }
        }
        Ok(())
    }

    /// Copies worker count, credentials and addresses into `spec`.
    pub fn apply(&self, spec: &mut ScenarioSpec) -> Result<(), ConfigError> {
        let role = self.worker_role().or(self.roles.first()).ok_or_else(|| invalid("Role", "no roles"))?;
        let s = &role.settings;
        spec.workers = self.worker_count();
        spec.key = SharedKey::new(s.shared_key.clone());
        spec.master_uri = s.index_server_uri.clone();
        spec.pool.hosted_service_name = s.hosted_service_name.clone();
        spec.pool.subscription_id = s.subscription_id.clone();
        spec.pool.certificate_thumbprint = s.certificate_thumbprint.clone();
        let (name, key) = storage_account(&s.data_connection_string).expect("validated on load");
        spec.pool.storage_account_name = name;
        spec.pool.storage_account_key = key;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ServiceConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

fn position(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'_, '_>) -> (u32, u32) {
    let p = doc.text_pos_at(node.range().start);
    (p.row, p.col)
}

fn structural(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'_, '_>, message: impl Into<String>) -> ConfigError {
    let (line, column) = position(doc, node);
    ConfigError::Parse { line, column, message: message.into() }
}

fn attr<'a>(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str, ConfigError> {
    node.attribute(name)
        .ok_or_else(|| structural(doc, node, format!("<{}> is missing attribute {name:?}", node.tag_name().name())))
}

fn elements<'a, 'i>(node: roxmltree::Node<'a, 'i>) -> impl Iterator<Item = roxmltree::Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

pub fn parse_config(text: &str) -> Result<ServiceConfig, ConfigError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let p = e.pos();
        ConfigError::Parse { line: p.row, column: p.col, message: e.to_string() }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "ServiceConfiguration" {
        return Err(structural(&doc, root, "root element must be <ServiceConfiguration>"));
    }
    let service_name = attr(&doc, root, "serviceName")?.to_string();
    let mut roles = Vec::new();
    for role in elements(root) {
        if role.tag_name().name() != "Role" {
            return Err(structural(&doc, role, format!("unexpected <{}>", role.tag_name().name())));
        }
        roles.push(parse_role(&doc, role)?);
    }
    if roles.is_empty() {
        return Err(invalid("Role", "no roles declared"));
    }
    Ok(ServiceConfig { service_name, roles })
}

fn parse_role(doc: &roxmltree::Document<'_>, role: roxmltree::Node<'_, '_>) -> Result<RoleConfig, ConfigError> {
    let name = attr(doc, role, "name")?.to_string();
    let mut instances = None;
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut certificates = Vec::new();
    for child in elements(role) {
        match child.tag_name().name() {
            "Instances" => {
                let raw = attr(doc, child, "count")?;
                let n = raw.parse::<u32>().map_err(|_| invalid("Instances", format!("count {raw:?} is not a number")))?;
                instances = Some(n);
            }
            "ConfigurationSettings" => {
                for s in elements(child) {
                    if s.tag_name().name() != "Setting" {
                        return Err(structural(doc, s, format!("unexpected <{}>", s.tag_name().name())));
                    }
                    let key = attr(doc, s, "name")?;
                    let value = attr(doc, s, "value")?;
                    if !REQUIRED_KEYS.contains(&key) && !IGNORED_KEYS.contains(&key) {
                        return Err(ConfigError::UnknownKey { key: key.to_string(), line: position(doc, s).0 });
                    }
                    if pairs.iter().any(|(k, _)| k == key) {
                        return Err(invalid(key, "set twice"));
                    }
                    pairs.push((key.to_string(), value.to_string()));
                }
            }
            "Certificates" => {
                for c in elements(child) {
                    certificates.push(Certificate {
                        name: attr(doc, c, "name")?.to_string(),
                        thumbprint: attr(doc, c, "thumbprint")?.to_string(),
                        algorithm: attr(doc, c, "thumbprintAlgorithm")?.to_string(),
                    });
                }
            }
            other => return Err(structural(doc, child, format!("unexpected <{other}>"))),
        }
    }
    let instances = instances.ok_or_else(|| invalid("Instances", format!("role {name} has no <Instances>")))?;
    let settings = settings_from(&pairs)?;
    Ok(RoleConfig { name, instances, settings, certificates })
}

fn settings_from(pairs: &[(String, String)]) -> Result<RoleSettings, ConfigError> {
    let get = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or_else(|| invalid(key, "missing"));
    let nonempty = |key: &str| {
        let v = get(key)?;
        if v.is_empty() {
            Err(invalid(key, "empty"))
        } else {
            Ok(v.to_string())
        }
    };
    let data = nonempty("DataConnectionString")?;
    if storage_account(&data).is_none() {
        return Err(invalid("DataConnectionString", "needs AccountName and AccountKey"));
    }
    let uri = get("IndexServerUri")?;
    let index_server_uri = NodeUri::parse(uri).map_err(|e| invalid("IndexServerUri", e.to_string()))?;
    let level = get("DeploymentLevel")?;
    let deployment_level =
        DeploymentLevel::parse(level).ok_or_else(|| invalid("DeploymentLevel", format!("{level:?} is neither Master nor Worker")))?;
    let thumbprint = nonempty("CertificateThumbprint")?;
    if !thumbprint.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(invalid("CertificateThumbprint", "not hexadecimal"));
    }
    Ok(RoleSettings {
        diagnostics_connection_string: get("DiagnosticsConnectionString")?.to_string(),
        data_connection_string: data,
        shared_key: nonempty("SharedKey")?,
        index_server_uri,
        resource_pool: nonempty("ResourcePool")?,
        subscription_id: nonempty("SubscriptionID")?,
        hosted_service_name: nonempty("HostedServiceName")?,
        certificate_thumbprint: thumbprint,
        deployment_level,
        ignored: pairs.iter().filter(|(k, _)| IGNORED_KEYS.contains(&k.as_str())).map(|(k, _)| k.clone()).collect(),
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Writes `cfg` back in the same markup. Ignored keys come out with empty values.
pub fn emit_config(cfg: &ServiceConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<ServiceConfiguration serviceName=\"{}\" xmlns=\"{NAMESPACE}\">", escape(&cfg.service_name));
    for role in &cfg.roles {
        let s = &role.settings;
        let _ = writeln!(out, "  <Role name=\"{}\">", escape(&role.name));
        let _ = writeln!(out, "    <Instances count=\"{}\" />", role.instances);
        out.push_str("    <ConfigurationSettings>\n");
        let uri = s.index_server_uri.to_string();
        let values = [
            ("DiagnosticsConnectionString", s.diagnostics_connection_string.as_str()),
            ("DataConnectionString", s.data_connection_string.as_str()),
            ("SharedKey", s.shared_key.as_str()),
            ("IndexServerUri", uri.as_str()),
            ("ResourcePool", s.resource_pool.as_str()),
            ("SubscriptionID", s.subscription_id.as_str()),
            ("HostedServiceName", s.hosted_service_name.as_str()),
            ("CertificateThumbprint", s.certificate_thumbprint.as_str()),
            ("DeploymentLevel", s.deployment_level.name()),
        ];
        for (k, v) in values {
            let _ = writeln!(out, "      <Setting name=\"{k}\" value=\"{}\" />", escape(v));
        }
        for k in &s.ignored {
            let _ = writeln!(out, "      <Setting name=\"{}\" value=\"\" />", escape(k));
        }
        out.push_str("    </ConfigurationSettings>\n");
        if !role.certificates.is_empty() {
            out.push_str("    <Certificates>\n");
            for c in &role.certificates {
                let _ = writeln!(
                    out,
                    "      <Certificate name=\"{}\" thumbprint=\"{}\" thumbprintAlgorithm=\"{}\" />",
                    escape(&c.name),
                    escape(&c.thumbprint),
                    escape(&c.algorithm)
                );
            }
            out.push_str("    </Certificates>\n");
        }
        out.push_str("  </Role>\n");
    }
    out.push_str("</ServiceConfiguration>\n");
    out
}

use paas_core::provisioning::PoolConfig;
use paas_core::sim::{DeploymentMode, ScenarioSpec};
use paas_core::NodeUri;
use paas_sim::config::{emit_config, load_config, parse_config, Certificate, ConfigError, DeploymentLevel, RoleConfig, RoleSettings, ServiceConfig};
use paas_sim::pool::emit_pool;
use paas_sim::scenario::ScenarioOptions;
use proptest::prelude::*;
use std::path::PathBuf;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/service.cscfg")
}

fn fixture_text() -> String {
    std::fs::read_to_string(fixture()).unwrap()
}

#[test]
fn published_configuration_loads() {
    let cfg = load_config(&fixture()).unwrap();
    assert_eq!(cfg.service_name, "AnekaOnWindowsAzure");
    assert_eq!(cfg.roles.len(), 2);
    assert_eq!(cfg.worker_count(), 5);
    let worker = cfg.worker_role().unwrap();
    assert_eq!(worker.name, "AnekaWorker");
    assert_eq!(worker.settings.index_server_uri, NodeUri::parse("tcp://localhost:3333/Aneka").unwrap());
    assert_eq!(worker.settings.deployment_level, DeploymentLevel::Master);
    assert_eq!(worker.settings.ignored, vec!["AdoConnectionString".to_string()]);
    assert_eq!(worker.certificates[0].algorithm, "sha1");
    assert_eq!(cfg.master_role().unwrap().instances, 1);
    cfg.validate_for(DeploymentMode::WorkerDeployment).unwrap();
    cfg.validate_for(DeploymentMode::CloudDeployment).unwrap();
}

#[test]
fn published_configuration_drives_a_scenario() {
    let spec = ScenarioOptions { config: Some(fixture()), ..Default::default() }.build().unwrap();
    assert_eq!(spec.workers, 5);
    assert_eq!(spec.master_uri.to_string(), "tcp://localhost:3333/Aneka");
    assert_eq!(spec.pool.hosted_service_name, "anekacloud");
    assert_eq!(spec.pool.storage_account_name, "anekacloud");
    assert_eq!(spec.pool.storage_account_key, "eGhauL194C9QA");
}

#[test]
fn missing_shared_key_is_named() {
    let text: String = fixture_text().lines().filter(|l| !l.contains("\"SharedKey\"")).collect::<Vec<_>>().join("\n");
    let err = parse_config(&text).unwrap_err();
    assert!(matches!(err, ConfigError::Validation { .. }), "{err}");
    assert_eq!(err.key(), Some("SharedKey"));
}

#[test]
fn unknown_deployment_level_is_rejected() {
    let text = fixture_text().replacen("value=\"Master\"", "value=\"Proxy\"", 1);
    let err = parse_config(&text).unwrap_err();
    assert_eq!(err.key(), Some("DeploymentLevel"));
}

#[test]
fn unknown_setting_reports_its_line() {
    let text = fixture_text().replacen("\"ResourcePool\"", "\"ResourcePools\"", 1);
    match parse_config(&text).unwrap_err() {
        ConfigError::UnknownKey { key, line } => {
            assert_eq!(key, "ResourcePools");
            assert_eq!(line, 10);
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn malformed_markup_reports_a_position() {
    let text = fixture_text().replacen("<Instances count=\"1\" />", "<Instances count=\"1\">", 1);
    assert!(matches!(parse_config(&text), Err(ConfigError::Parse { line, .. }) if line > 0));
}

#[test]
fn cloud_mode_needs_a_master_role() {
    let mut cfg = load_config(&fixture()).unwrap();
    cfg.roles.retain(|r| r.is_worker_role());
    cfg.validate_for(DeploymentMode::WorkerDeployment).unwrap();
    assert_eq!(cfg.validate_for(DeploymentMode::CloudDeployment).unwrap_err().key(), Some("Role"));
}

#[test]
fn flags_beat_files_and_config_beats_pool() {
    let dir = tempfile::tempdir().unwrap();
    let pool_path = dir.path().join("pool.toml");
    let mut pool = PoolConfig::example(20);
    pool.hosted_service_name = "frompool".into();
    std::fs::write(&pool_path, emit_pool(&pool)).unwrap();

    let opts = ScenarioOptions { pool: Some(pool_path.clone()), config: Some(fixture()), ..Default::default() };
    let spec = opts.build().unwrap();
    assert_eq!(spec.pool.capacity, 20);
    assert_eq!(spec.pool.hosted_service_name, "anekacloud");
    assert_eq!(spec.workers, 5);

    let opts = ScenarioOptions { workers: Some(9), capacity: Some(11), ..opts };
    let spec = opts.build().unwrap();
    assert_eq!((spec.workers, spec.pool.capacity), (9, 11));
}

fn text() -> impl Strategy<Value = String> {
    "[ -~]{1,24}"
}

fn word() -> impl Strategy<Value = String> {
    "[A-Za-z0-9]{1,12}"
}

fn settings() -> impl Strategy<Value = RoleSettings> {
    (
        ("[ -~]{0,24}", word(), word(), text()),
        ("[a-z][a-z0-9.]{0,12}", any::<u16>(), text(), text()),
        (text(), "[0-9A-F]{1,40}", any::<bool>(), any::<bool>()),
    )
        .prop_map(|((diag, account, key, shared), (host, port, pool, sub), (svc, thumb, master, ado))| RoleSettings {
            diagnostics_connection_string: diag,
            data_connection_string: format!("DefaultEndpointsProtocol=https;AccountName={account};AccountKey={key}"),
            shared_key: shared,
            index_server_uri: NodeUri::parse(&format!("tcp://{host}:{port}/Aneka")).unwrap(),
            resource_pool: pool,
            subscription_id: sub,
            hosted_service_name: svc,
            certificate_thumbprint: thumb,
            deployment_level: if master { DeploymentLevel::Master } else { DeploymentLevel::Worker },
            ignored: if ado { vec!["AdoConnectionString".into()] } else { Vec::new() },
        })
}

fn role() -> impl Strategy<Value = RoleConfig> {
    let cert = (text(), "[0-9A-F]{1,40}", "[a-z0-9]{1,8}").prop_map(|(name, thumbprint, algorithm)| Certificate { name, thumbprint, algorithm });
    ("[A-Za-z]{0,8}(Master|Worker)", 0u32..100, settings(), prop::collection::vec(cert, 0..3))
        .prop_map(|(name, instances, settings, certificates)| RoleConfig { name, instances, settings, certificates })
}

proptest! {
    #[test]
    fn emit_then_load_is_identity(service_name in text(), roles in prop::collection::vec(role(), 1..4)) {
        let cfg = ServiceConfig { service_name, roles };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svc.cscfg");
        std::fs::write(&path, emit_config(&cfg)).unwrap();
        prop_assert_eq!(load_config(&path).unwrap(), cfg);
    }
}

#[test]
fn config_applies_over_a_fresh_spec() {
    let cfg = load_config(&fixture()).unwrap();
    let mut spec = ScenarioSpec::new(DeploymentMode::CloudDeployment, 1, 3);
    cfg.apply(&mut spec).unwrap();
    assert_eq!(spec.workers, 5);
    assert_eq!(spec.pool.subscription_id, "a22fc8fe-5955-421f-a370-75e3f1246323");
}

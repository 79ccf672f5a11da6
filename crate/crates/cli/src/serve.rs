//! `edgectx serve`: TCP server plus periodic retraining on uploads.

use std::path::PathBuf;
use std::time::Duration;

use edgectx_core::data::StillMotionConfig;
use edgectx_core::nn::TrainingConfig;
use edgectx_core::sync::server::{server_serve, Retrainer, ServerHandle};
use edgectx_core::sync::{DataSink, ModelKind, ModelStore, RetrainConfig, ServerCore};

use crate::CliError;

pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: String,
    pub retrain_every: Duration,
    pub data_dir: Option<PathBuf>,
    pub kinds: Vec<ModelKind>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub dcl_epochs: usize,
    pub cl_epochs: usize,
    pub seed: u64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            addr: DEFAULT_ADDR.into(),
            retrain_every: Duration::from_secs(60),
            data_dir: None,
            kinds: vec![ModelKind::Dcl, ModelKind::Cl],
            feature_names: StillMotionConfig::feature_names(),
            class_names: StillMotionConfig::class_names(),
            dcl_epochs: TrainingConfig::DCL_EPOCHS,
            cl_epochs: TrainingConfig::CL_EPOCHS,
            seed: 1,
        }
    }
}

pub struct RunningServer {
    pub core: ServerCore,
    pub handle: ServerHandle,
    pub retrainer: Retrainer,
}

impl RunningServer {
    pub fn stop(self) {
        self.retrainer.stop();
        self.handle.stop();
    }
}

pub fn start_server(opts: &ServeOptions) -> Result<RunningServer, CliError> {
    if opts.kinds.is_empty() {
        return Err(CliError::Usage("at least one model kind must be served".into()));
    }
    if opts.feature_names.is_empty() || opts.class_names.len() < 2 {
        return Err(CliError::Usage("need at least one feature and two classes".into()));
    }
    let (models, data) = match &opts.data_dir {
        Some(dir) => (ModelStore::open(dir, &opts.kinds)?, DataSink::open(dir)?),
        None => (ModelStore::new(&opts.kinds), DataSink::new()),
    };
    for &k in &opts.kinds {
        let hw = models.high_water(k);
        if hw > 0 {
            log::info!("{k}: resuming after model_version {hw}");
        }
    }
    let core = ServerCore::new(models, data);
    let mut retrain = RetrainConfig::new(opts.feature_names.clone(), opts.class_names.clone());
    retrain.dcl = TrainingConfig::new(TrainingConfig::CLIENT_MODEL_LEARNING_RATE, opts.dcl_epochs, opts.seed);
    retrain.cl = TrainingConfig::new(TrainingConfig::SERVER_LEARNING_RATE, opts.cl_epochs, opts.seed);
    let handle = server_serve(&opts.addr, core.clone())?;
    let retrainer = Retrainer::spawn(core.clone(), retrain, opts.retrain_every);
    Ok(RunningServer { core, handle, retrainer })
}

/// Serves until the process is stopped, or for `run_for` if given.
pub fn cmd_serve(opts: &ServeOptions, run_for: Option<Duration>) -> Result<(), CliError> {
    let server = start_server(opts)?;
    eprintln!("edgectx: serving on {}", server.handle.local_addr());
    match run_for {
        Some(d) => std::thread::sleep(d),
        None => loop {
            std::thread::sleep(Duration::from_secs(3600));
        },
    }
    server.stop();
    Ok(())
}

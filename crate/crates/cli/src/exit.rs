use signalforge_core::catalog::CatalogError;
use signalforge_core::pipeline::PipelineError;
use signalforge_core::provider::ProviderError;

pub const OK: u8 = 0;
pub const SCHEMA: u8 = 2;
pub const INVARIANT: u8 = 3;
pub const FINDINGS: u8 = 4;
pub const STAGE: u8 = 5;
pub const USAGE: u8 = 64;

/// A command outcome that maps onto a process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub lines: Vec<String>,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            lines: vec![message.into()],
        }
    }

    pub fn stage(message: impl std::fmt::Display) -> Self {
        Failure::new(STAGE, message.to_string())
    }

    pub fn usage(message: impl std::fmt::Display) -> Self {
        Failure::new(USAGE, message.to_string())
    }
}

pub type CmdResult = Result<u8, Failure>;

impl From<CatalogError> for Failure {
    fn from(e: CatalogError) -> Self {
        let code = match e {
            CatalogError::Schema { .. } => SCHEMA,
            CatalogError::Invariant(_) | CatalogError::DuplicateName(_) => INVARIANT,
        };
        let mut lines: Vec<String> = e.diagnostics().iter().map(|d| d.to_string()).collect();
        if lines.is_empty() {
            lines.push(e.to_string());
        }
        Failure { code, lines }
    }
}

impl From<signalforge_core::Error> for Failure {
    fn from(e: signalforge_core::Error) -> Self {
        use signalforge_core::Error;
        match e {
            Error::Catalog(c) => c.into(),
            Error::Provider(p) => p.into(),
            other => Failure::new(SCHEMA, other.to_string()),
        }
    }
}

impl From<ProviderError> for Failure {
    fn from(e: ProviderError) -> Self {
        Failure::stage(format!("provider: {e}"))
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Input(inner) => inner.into(),
            PipelineError::Preflight(findings) => Failure {
                code: FINDINGS,
                lines: findings,
            },
            PipelineError::StageFailure { stage, diagnostics } => Failure {
                code: STAGE,
                lines: std::iter::once(format!("{} stage failed", stage.as_str()))
                    .chain(diagnostics)
                    .collect(),
            },
            other => Failure::stage(other),
        }
    }
}

/// Exit status contract: 2 for bad input, 3 for numerical or estimator
/// failure.
#[derive(Debug)]
pub enum Failure {
    User(anyhow::Error),
    Estimator(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::User(_) => 2,
            Failure::Estimator(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::User(e) | Failure::Estimator(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::User(e)
    }
}

impl From<elast_core::Error> for Failure {
    fn from(e: elast_core::Error) -> Self {
        if e.is_user_error() {
            Failure::User(e.into())
        } else {
            Failure::Estimator(e.into())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::User(e.into())
    }
}

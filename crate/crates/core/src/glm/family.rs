use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
    Negbin,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
    Log,
    Inverse,
}

const ETA_CAP: f64 = 30.0;

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
            Family::Negbin => "negbin",
            Family::Gamma => "gamma",
        }
    }

    pub fn default_link(&self) -> Link {
        match self {
            Family::Gaussian => Link::Identity,
            Family::Binomial => Link::Logit,
            Family::Poisson | Family::Negbin => Link::Log,
            Family::Gamma => Link::Inverse,
        }
    }

    pub fn allows(&self, link: Link) -> bool {
        matches!(
            (self, link),
            (Family::Gaussian, Link::Identity | Link::Log | Link::Inverse)
                | (Family::Binomial, Link::Logit | Link::Log)
                | (Family::Poisson | Family::Negbin, Link::Log | Link::Identity)
                | (Family::Gamma, Link::Inverse | Link::Log | Link::Identity)
        )
    }

    /// Dispersion estimated from the data rather than fixed at 1.
    pub fn estimates_dispersion(&self) -> bool {
        matches!(self, Family::Gaussian | Family::Gamma)
    }

    /// Variance function; `theta` only matters for negbin.
    pub fn variance(&self, mu: f64, theta: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
            Family::Negbin => mu + mu * mu / theta,
            Family::Gamma => mu * mu,
        }
    }

    pub fn valid_mu(&self, mu: f64) -> bool {
        mu.is_finite()
            && match self {
                Family::Gaussian => true,
                Family::Binomial => mu > 0.0 && mu < 1.0,
                Family::Poisson | Family::Negbin | Family::Gamma => mu > 0.0,
            }
    }

    /// Unit deviance for one observation (before the prior weight).
    pub fn unit_deviance(&self, y: f64, mu: f64, theta: f64) -> f64 {
        fn ylogy(y: f64, mu: f64) -> f64 {
            if y > 0.0 {
                y * (y / mu).ln()
            } else {
                0.0
            }
        }
        match self {
            Family::Gaussian => (y - mu).powi(2),
            Family::Binomial => 2.0 * (ylogy(y, mu) + ylogy(1.0 - y, 1.0 - mu)),
            Family::Poisson => 2.0 * (ylogy(y, mu) - (y - mu)),
            Family::Negbin => 2.0 * (ylogy(y, mu) - (y + theta) * ((y + theta) / (mu + theta)).ln()),
            Family::Gamma => 2.0 * (-(y / mu).ln() + (y - mu) / mu),
        }
    }

    /// Starting mean for IRLS.
    pub fn start_mu(&self, y: f64, weight: f64) -> f64 {
        match self {
            Family::Gaussian => y,
            Family::Binomial => (weight * y + 0.5) / (weight + 1.0),
            Family::Poisson | Family::Negbin => y + 0.1,
            Family::Gamma => y.max(1e-8),
        }
    }
}

impl Link {
    pub fn as_str(&self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logit => "logit",
            Link::Log => "log",
            Link::Inverse => "inverse",
        }
    }

    pub fn link(&self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Log => mu.ln(),
            Link::Inverse => 1.0 / mu,
        }
    }

    /// Inverse link. Logit and log cap |η| so fitted values stay finite
    /// under separation.
    pub fn inverse(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Logit => {
                let e = eta.clamp(-ETA_CAP, ETA_CAP);
                1.0 / (1.0 + (-e).exp())
            }
            Link::Log => eta.min(700.0).exp(),
            Link::Inverse => 1.0 / eta,
        }
    }

    /// dμ/dη.
    pub fn mu_eta(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logit => {
                let e = eta.clamp(-ETA_CAP, ETA_CAP);
                let p = 1.0 / (1.0 + (-e).exp());
                (p * (1.0 - p)).max(f64::MIN_POSITIVE)
            }
            Link::Log => eta.min(700.0).exp().max(f64::MIN_POSITIVE),
            Link::Inverse => -1.0 / (eta * eta),
        }
    }
}

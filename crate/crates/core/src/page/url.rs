use std::fmt;

use serde::{Serialize, Serializer};
use url::Url;

use super::PageError;
use crate::cryptowire::Origin;

/// Absolute URL of a loaded page (scheme://host[:port]/path).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PageUrl(Url);

impl PageUrl {
    pub fn parse(s: &str) -> Result<Self, PageError> {
        let url = Url::parse(s).map_err(|e| PageError::BadOriginUrl(format!("{s}: {e}")))?;
        origin_of(&url)?;
        Ok(PageUrl(url))
    }

    pub fn origin(&self) -> Origin {
        origin_of(&self.0).expect("checked at construction")
    }

    pub fn path(&self) -> &str {
        self.0.path()
    }

    pub fn as_str(&self) -> &str {
        self.0.as_str()
    }

    /// Resolves an `action`/`src` value; an empty reference is the page itself.
    pub fn resolve(&self, reference: &str) -> Result<Url, PageError> {
        let url = self
            .0
            .join(reference.trim())
            .map_err(|e| PageError::BadOriginUrl(format!("{reference}: {e}")))?;
        origin_of(&url)?;
        Ok(url)
    }
}

impl fmt::Display for PageUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.as_str())
    }
}

impl Serialize for PageUrl {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.0.as_str())
    }
}

/// `host:port`, defaulting to 443 for https-style schemes and 80 otherwise.
pub fn origin_of(url: &Url) -> Result<Origin, PageError> {
    let host = url
        .host_str()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| PageError::BadOriginUrl(format!("{url}: no host")))?;
    let default = match url.scheme() {
        "https" | "wss" => 443,
        _ => 80,
    };
    Origin::new(host, url.port().unwrap_or(default)).map_err(|e| PageError::BadOriginUrl(format!("{url}: {e}")))
}

//! `--guidance` specs: `mock:TARGET.json` or `remote:URL`.

use std::path::{Path, PathBuf};

use componerf::analytic::AnalyticScene;
use componerf::guidance::{GuidanceProvider, MockGuidance, RemoteClient, RemoteConfig};
use componerf::layout::Layout;
use componerf::scene::SceneConfig;

use crate::error::CliError;
use crate::GUIDANCE_URL_ENV;

#[derive(Clone, Debug, PartialEq)]
pub enum GuidanceSpec {
    Mock(PathBuf),
    Remote(String),
}

impl GuidanceSpec {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        match spec.split_once(':') {
            Some(("mock", path)) if !path.is_empty() => Ok(GuidanceSpec::Mock(path.into())),
            Some(("remote", url)) if !url.is_empty() => Ok(GuidanceSpec::Remote(url.trim_end_matches('/').into())),
            _ => Err(CliError::Config(format!("guidance must be mock:TARGET.json or remote:URL, got `{spec}`"))),
        }
    }

    /// The flag wins; otherwise the environment names a remote endpoint.
    pub fn resolve(flag: Option<&str>) -> Result<Option<Self>, CliError> {
        match flag {
            Some(s) => Self::parse(s).map(Some),
            None => match std::env::var(GUIDANCE_URL_ENV) {
                Ok(url) if !url.trim().is_empty() => Ok(Some(GuidanceSpec::Remote(url.trim().trim_end_matches('/').into()))),
                _ => Ok(None),
            },
        }
    }

    pub fn required(flag: Option<&str>) -> Result<Self, CliError> {
        Self::resolve(flag)?
            .ok_or_else(|| CliError::Config(format!("no guidance: pass --guidance or set {GUIDANCE_URL_ENV}")))
    }
}

pub fn load_target(path: &Path, layout: &Layout, channels: usize) -> Result<AnalyticScene, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    let target = AnalyticScene::parse(&text).map_err(|e| CliError::input(path, e))?;
    target.validate(layout).map_err(|e| CliError::input(path, e))?;
    if target.channels() != channels {
        return Err(CliError::Config(format!(
            "target {} has {} color channels, the scene renders {channels}",
            path.display(),
            target.channels()
        )));
    }
    Ok(target)
}

pub fn remote(url: &str) -> Result<RemoteClient, CliError> {
    Ok(RemoteClient::new(RemoteConfig::new(url))?)
}

pub fn provider(spec: &GuidanceSpec, layout: &Layout, config: &SceneConfig) -> Result<Box<dyn GuidanceProvider>, CliError> {
    Ok(match spec {
        GuidanceSpec::Mock(path) => {
            let target = load_target(path, layout, config.channels())?;
            Box::new(MockGuidance::new(target, config.background.clone()))
        }
        GuidanceSpec::Remote(url) => Box::new(remote(url)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs() {
        assert_eq!(GuidanceSpec::parse("mock:t.json").unwrap(), GuidanceSpec::Mock("t.json".into()));
        assert_eq!(
            GuidanceSpec::parse("remote:http://h:9/").unwrap(),
            GuidanceSpec::Remote("http://h:9".into())
        );
        for bad in ["", "mock:", "http://x", "sd:foo"] {
            assert!(matches!(GuidanceSpec::parse(bad), Err(CliError::Config(_))));
        }
    }
}

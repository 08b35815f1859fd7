//! The spoofed user-agent identities used for the scan passes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One spoofed browser identity. The five built-in profiles carry their
/// User-Agent strings byte-for-byte; additional profiles may be defined in
/// the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAgentProfile {
    pub label: String,
    pub ua_string: String,
    pub os_name: String,
    pub browser_name: String,
    pub is_mobile: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfileError {
    #[error("profile label must not be empty")]
    EmptyLabel,
    #[error("profile \"{label}\" has an empty User-Agent string")]
    EmptyUserAgent { label: String },
    #[error("unknown profile label \"{label}\"")]
    UnknownLabel { label: String },
}

pub const BUILTIN_LABELS: [&str; 5] = ["chrome", "ie", "iossafari", "firefox", "androidchrome"];

const CHROME_UA: &str = "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/69.0.3497.100 Safari/537.36";
const IE_UA: &str = "Mozilla/5.0 (Windows NT 6.1; WOW64; Trident/7.0; rv:11.0) like Gecko";
const IOSSAFARI_UA: &str = "Mozilla/5.0 (iPhone; CPU iPhone OS 12_0_1 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/12.0 Mobile/15E148 Safari/604.1";
const FIREFOX_UA: &str =
    "Mozilla/5.0 (Windows NT 10.0; WOW64; rv:46.0) Gecko/20100101 Firefox/46.0";
const ANDROIDCHROME_UA: &str = "Mozilla/5.0 (Linux; Android 8.1.0; TA-1053 Build/OPR1.170623.026) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/69.0.3497.100 Mobile Safari/537.3";

impl UserAgentProfile {
    pub fn new(
        label: &str,
        ua_string: &str,
        os_name: &str,
        browser_name: &str,
        is_mobile: bool,
    ) -> Result<Self, ProfileError> {
        if label.is_empty() {
            return Err(ProfileError::EmptyLabel);
        }
        if ua_string.is_empty() {
            return Err(ProfileError::EmptyUserAgent {
                label: label.to_string(),
            });
        }
        Ok(Self {
            label: label.to_string(),
            ua_string: ua_string.to_string(),
            os_name: os_name.to_string(),
            browser_name: browser_name.to_string(),
            is_mobile,
        })
    }

    pub fn builtin(label: &str) -> Result<Self, ProfileError> {
        let profile = match label {
            "chrome" => ("chrome", CHROME_UA, "Windows 10", "Chrome 69", false),
            "ie" => ("ie", IE_UA, "Windows 7", "Internet Explorer 11", false),
            "iossafari" => ("iossafari", IOSSAFARI_UA, "iOS 12", "Safari 12", true),
            "firefox" => ("firefox", FIREFOX_UA, "Windows 10", "Firefox 46", false),
            "androidchrome" => (
                "androidchrome",
                ANDROIDCHROME_UA,
                "Android 8.1",
                "Chrome 69",
                true,
            ),
            other => {
                return Err(ProfileError::UnknownLabel {
                    label: other.to_string(),
                })
            }
        };
        let (label, ua, os, browser, mobile) = profile;
        UserAgentProfile::new(label, ua, os, browser, mobile)
    }

    /// The five built-in profiles in scan-pass order.
    pub fn builtin_all() -> Vec<UserAgentProfile> {
        BUILTIN_LABELS
            .iter()
            .map(|label| UserAgentProfile::builtin(label).expect("built-in labels are valid"))
            .collect()
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Three labeled sources of secret chunks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretPool {
    /// Classical-Chinese-style phrases.
    pub classical_chinese: Vec<String>,
    /// Japanese katakana names.
    pub katakana_names: Vec<String>,
    /// Arbitrary vocabulary-token strings.
    pub vocabulary_tokens: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for SecretPool {
    fn default() -> Self {
        Self {
            classical_chinese: strings(&[
                "奉天承运皇帝诏曰",
                "应天顺时受兹明命",
                "布告天下咸使闻知",
                "长生天气力里大福荫护助里",
                "天命玄鸟降而生商",
                "天生蒸民有物有则",
                "民之秉彝好是懿德",
                "绝地天通罔有降格",
                "在登葆山群巫所从上下也",
                "昔者三苗大乱天命殛之日妖宵出雨血三朝龙生于庙犬哭乎市",
            ]),
            katakana_names: strings(&[
                "フシギダネ",
                "ヒトカゲ",
                "ゼニガメ",
                "ピカチュウ",
                "キモリ",
                "アチャモ",
                "ミズゴロウ",
                "グラードン",
                "レックウザ",
                "カイオーガ",
            ]),
            vocabulary_tokens: strings(&[
                "выпутельстваskih",
                "областьdateiмерW",
                "крайategory",
                "составрій",
                "která",
                "guaèche",
                "genitaldejrazione",
                "ocamp ISONethoxy",
                "omycesjcm",
                "photometryDEFINE",
                "HFDíses",
            ]),
        }
    }
}

impl SecretPool {
    pub fn validate(&self) -> Result<()> {
        for (label, list) in self.sources() {
            if list.is_empty() {
                return Err(Error::InvalidConfig(format!("secret source {label} is empty")));
            }
            if list.iter().any(|s| s.is_empty()) {
                return Err(Error::InvalidConfig(format!("secret source {label} holds an empty chunk")));
            }
        }
        Ok(())
    }

    pub fn sources(&self) -> [(&'static str, &[String]); 3] {
        [
            ("classical_chinese", &self.classical_chinese),
            ("katakana_names", &self.katakana_names),
            ("vocabulary_tokens", &self.vocabulary_tokens),
        ]
    }

    /// All chunks of all sources, in source order.
    pub fn chunks(&self) -> Vec<&str> {
        self.sources().iter().flat_map(|(_, l)| l.iter().map(String::as_str)).collect()
    }

    /// Reads a pool from a JSON or TOML file (chosen by extension).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let pool: SecretPool = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        pool.validate()?;
        Ok(pool)
    }
}

//! Minimal INI reader/writer: `[section]` headers, `key = value` lines,
//! `#`/`;` comments. Order is preserved so written files are stable.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    /// `(key, value, line)`; line is 0 for entries not read from a file.
    pub entries: Vec<(String, String, usize)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.0 == key).map(|e| e.1.as_str())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.iter().find(|e| e.0 == key).map_or(0, |e| e.2)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ini {
    pub sections: Vec<Section>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header `{line}`")))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {line_no}: empty section name")));
                }
                if ini.section(name).is_some() {
                    return Err(Error::Config(format!("line {line_no}: duplicate section [{name}]")));
                }
                ini.sections.push(Section { name: name.to_string(), entries: Vec::new() });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: missing key")));
            }
            let section = ini
                .sections
                .last_mut()
                .ok_or_else(|| Error::Config(format!("line {line_no}: `{key}` appears before any section")))?;
            if section.get(key).is_some() {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{key}` in [{}]", section.name)));
            }
            section.entries.push((key.to_string(), value.trim().to_string(), line_no));
        }
        Ok(ini)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ini::parse(&text)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.section(section)?.get(key)
    }

    /// Appends to `section`, creating it if needed.
    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        let idx = match self.sections.iter().position(|s| s.name == section) {
            Some(i) => i,
            None => {
                self.sections.push(Section { name: section.to_string(), entries: Vec::new() });
                self.sections.len() - 1
            }
        };
        let s = &mut self.sections[idx];
        match s.entries.iter_mut().find(|e| e.0 == key) {
            Some(e) => e.1 = value.to_string(),
            None => s.entries.push((key.to_string(), value.to_string(), 0)),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", s.name);
            for (k, v, _) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Rejects sections and keys outside `schema`, naming the offending line.
    pub fn check_keys(&self, schema: &[(&str, &[&str])]) -> Result<()> {
        for s in &self.sections {
            let Some((_, keys)) = schema.iter().find(|(name, _)| *name == s.name) else {
                return Err(Error::Config(format!("unknown section [{}]", s.name)));
            };
            for (k, _, line) in &s.entries {
                if !keys.contains(&k.as_str()) {
                    return Err(Error::Config(format!("line {line}: unknown key `{k}` in [{}]", s.name)));
                }
            }
        }
        Ok(())
    }
}

/// Parses `value` with the section/key/line in the error message.
pub fn parse_value<V: std::str::FromStr>(ini: &Ini, section: &str, key: &str) -> Result<Option<V>> {
    let Some(s) = ini.section(section) else { return Ok(None) };
    let Some(raw) = s.get(key) else { return Ok(None) };
    raw.parse().map(Some).map_err(|_| {
        Error::Config(format!("line {}: invalid value `{raw}` for [{section}] {key}", s.line_of(key)))
    })
}

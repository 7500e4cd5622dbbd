//! Drafts on disk, one file per stored version:
//! `<root>/<article>/<class>/v000001.json`, `v000002.json`, ...
//!
//! Article ids that are not safe path components are stored hex-encoded behind a `_`.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use finner_core::bench::{is_safe_name, AnnotationDraft};
use finner_core::corpus::EntityClass;

type Key = (String, EntityClass);

pub struct DraftStore {
    root: PathBuf,
    locks: Mutex<HashMap<Key, Arc<tokio::sync::Mutex<()>>>>,
}

fn article_dir_name(id: &str) -> String {
    if is_safe_name(id) && !id.starts_with('_') {
        id.to_string()
    } else {
        format!("_{}", hex::encode(id))
    }
}

fn version_of(file_name: &str) -> Option<u64> {
    file_name
        .strip_prefix('v')?
        .strip_suffix(".json")?
        .parse()
        .ok()
}

impl DraftStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, article_id: &str, class: EntityClass) -> PathBuf {
        self.root
            .join(article_dir_name(article_id))
            .join(class.as_str())
    }

    /// Serializes writers of one (article, class) stream.
    pub fn lock(&self, article_id: &str, class: EntityClass) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table")
            .entry((article_id.to_string(), class))
            .or_default()
            .clone()
    }

    /// Highest stored version, 0 when nothing was written.
    pub fn current_version(&self, article_id: &str, class: EntityClass) -> io::Result<u64> {
        let dir = self.dir(article_id, class);
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e),
        };
        let mut max = 0;
        for entry in entries {
            let name = entry?.file_name();
            if let Some(v) = name.to_str().and_then(version_of) {
                max = max.max(v);
            }
        }
        Ok(max)
    }

    pub fn latest(
        &self,
        article_id: &str,
        class: EntityClass,
    ) -> io::Result<Option<AnnotationDraft>> {
        let version = self.current_version(article_id, class)?;
        if version == 0 {
            return Ok(None);
        }
        let path = self
            .dir(article_id, class)
            .join(format!("v{version:06}.json"));
        let raw = std::fs::read_to_string(&path)?;
        let draft = serde_json::from_str(&raw).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            )
        })?;
        Ok(Some(draft))
    }

    /// Writes `draft` as the next version. The caller holds the stream lock and has
    /// checked that `draft.version` is the current one.
    pub fn append(&self, draft: &AnnotationDraft) -> io::Result<u64> {
        let dir = self.dir(&draft.article_id, draft.entity_class);
        std::fs::create_dir_all(&dir)?;
        let version = draft.version + 1;
        let stored = AnnotationDraft {
            version,
            ..draft.clone()
        };
        let path = dir.join(format!("v{version:06}.json"));
        let tmp = dir.join(format!(".v{version:06}.tmp"));
        let body = serde_json::to_string_pretty(&stored).expect("draft serializes");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(version)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versions_append() {
        let tmp = tempfile::tempdir().unwrap();
        let store = DraftStore::new(tmp.path());
        assert_eq!(
            store
                .current_version("a/1", EntityClass::Individual)
                .unwrap(),
            0
        );
        assert!(store
            .latest("a/1", EntityClass::Individual)
            .unwrap()
            .is_none());
        let mut d = AnnotationDraft::empty("a/1", EntityClass::Individual);
        assert_eq!(store.append(&d).unwrap(), 1);
        d.version = 1;
        assert_eq!(store.append(&d).unwrap(), 2);
        assert_eq!(
            store
                .latest("a/1", EntityClass::Individual)
                .unwrap()
                .unwrap()
                .version,
            2
        );
        assert!(tmp.path().join("_612f31/individual/v000002.json").exists());
        assert_eq!(
            store
                .current_version("a/1", EntityClass::Organization)
                .unwrap(),
            0
        );
    }

    #[test]
    fn dir_names_do_not_collide() {
        assert_eq!(article_dir_name("a01"), "a01");
        assert_ne!(article_dir_name("_6131"), article_dir_name("a1"));
        assert_eq!(article_dir_name(".."), "_2e2e");
    }
}

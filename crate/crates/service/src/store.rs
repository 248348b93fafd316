//! SQLite persistence for studies, interpretations and review sessions.
//! The schema lives in `schema.sql` next to this crate's manifest.

use std::path::Path;
use std::sync::Mutex;

use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = include_str!("../schema.sql");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Queued,
    Draft,
    Finalized,
    Failed,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Queued => "queued",
            Status::Draft => "draft",
            Status::Finalized => "finalized",
            Status::Failed => "failed",
        }
    }

    fn parse(s: &str) -> rusqlite::Result<Self> {
        Ok(match s {
            "queued" => Status::Queued,
            "draft" => Status::Draft,
            "finalized" => Status::Finalized,
            "failed" => Status::Failed,
            other => {
                return Err(rusqlite::Error::FromSqlConversionFailure(
                    0,
                    rusqlite::types::Type::Text,
                    format!("unknown status `{other}`").into(),
                ))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: String,
    pub action: String,
    pub text: String,
}

/// A study's review state. `version` is the audit length; writers must
/// quote it back in `If-Match`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub study_id: String,
    pub created_at: String,
    pub status: Status,
    pub version: u64,
    pub draft_report: Option<String>,
    pub audit: Vec<AuditEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Interpretation at the default threshold, as generated.
    pub original: Option<serde_json::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum WriteError {
    #[error("unknown study")]
    NotFound,
    #[error("study is {0:?}, not a draft")]
    NotDraft(Status),
    #[error("version mismatch: session is at {actual}, request expected {expected}")]
    Stale { expected: u64, actual: u64 },
    #[error(transparent)]
    Db(#[from] rusqlite::Error),
}

/// PNG renderings of one disease's heatmap.
pub struct HeatmapPngs {
    pub disease: String,
    pub overlay: Vec<u8>,
    pub raw: Vec<u8>,
}

/// Everything produced by the first interpretation of a study.
pub struct Completed<'a> {
    pub scores: &'a str,
    pub threshold: &'a str,
    pub result: &'a str,
    pub heatmaps: &'a [HeatmapPngs],
    pub draft: &'a str,
}

/// A single connection behind a mutex: every write is serialized, which is
/// what keeps the audit version check race-free.
pub struct Store {
    conn: Mutex<Connection>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Store {
    pub fn open(path: &Path) -> rusqlite::Result<Self> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> rusqlite::Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> rusqlite::Result<Self> {
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn: Mutex::new(conn) })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        // a panic mid-statement leaves SQLite consistent, so poisoning is moot
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn insert_study(&self, id: &str, image: &[u8]) -> rusqlite::Result<()> {
        self.conn().execute(
            "INSERT INTO studies (id, created_at, image, status) VALUES (?1, ?2, ?3, 'queued')",
            params![id, now(), image],
        )?;
        Ok(())
    }

    pub fn status(&self, id: &str) -> rusqlite::Result<Option<Status>> {
        let s: Option<String> = self
            .conn()
            .query_row("SELECT status FROM studies WHERE id = ?1", [id], |r| r.get(0))
            .optional()?;
        s.map(|s| Status::parse(&s)).transpose()
    }

    pub fn image(&self, id: &str) -> rusqlite::Result<Option<Vec<u8>>> {
        self.conn()
            .query_row("SELECT image FROM studies WHERE id = ?1", [id], |r| r.get(0))
            .optional()
    }

    pub fn scores(&self, id: &str) -> rusqlite::Result<Option<String>> {
        Ok(self
            .conn()
            .query_row("SELECT scores FROM studies WHERE id = ?1", [id], |r| r.get(0))
            .optional()?
            .flatten())
    }

    pub fn error(&self, id: &str) -> rusqlite::Result<Option<String>> {
        Ok(self
            .conn()
            .query_row("SELECT error FROM studies WHERE id = ?1", [id], |r| r.get(0))
            .optional()?
            .flatten())
    }

    /// Moves a queued study to draft with its first interpretation.
    pub fn complete(&self, id: &str, done: &Completed<'_>) -> rusqlite::Result<()> {
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        tx.execute(
            "UPDATE studies SET status = 'draft', scores = ?2, original = ?3, draft = ?4 WHERE id = ?1",
            params![id, done.scores, done.result, done.draft],
        )?;
        put_interpretation(&tx, id, done.threshold, done.result, done.heatmaps)?;
        tx.execute(
            "INSERT INTO audit (study_id, seq, at, action, text) VALUES (?1, 1, ?2, 'generated', ?3)",
            params![id, now(), done.draft],
        )?;
        tx.commit()
    }

    pub fn fail(&self, id: &str, error: &str) -> rusqlite::Result<()> {
        self.conn().execute(
            "UPDATE studies SET status = 'failed', error = ?2 WHERE id = ?1",
            params![id, error],
        )?;
        Ok(())
    }

    pub fn interpretation(&self, id: &str, threshold: &str) -> rusqlite::Result<Option<String>> {
        self.conn()
            .query_row(
                "SELECT result FROM interpretations WHERE study_id = ?1 AND threshold = ?2",
                [id, threshold],
                |r| r.get(0),
            )
            .optional()
    }

    /// Stores a result unless one is already there, and returns whichever
    /// is stored, so concurrent first reads agree byte for byte.
    pub fn put_interpretation(
        &self,
        id: &str,
        threshold: &str,
        result: &str,
        heatmaps: &[HeatmapPngs],
    ) -> rusqlite::Result<String> {
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        put_interpretation(&tx, id, threshold, result, heatmaps)?;
        let stored = tx.query_row(
            "SELECT result FROM interpretations WHERE study_id = ?1 AND threshold = ?2",
            [id, threshold],
            |r| r.get(0),
        )?;
        tx.commit()?;
        Ok(stored)
    }

    pub fn heatmap(&self, id: &str, disease: &str, raw: bool) -> rusqlite::Result<Option<Vec<u8>>> {
        self.conn()
            .query_row(
                "SELECT png FROM heatmaps WHERE study_id = ?1 AND disease = ?2 AND kind = ?3",
                params![id, disease, if raw { "raw" } else { "overlay" }],
                |r| r.get(0),
            )
            .optional()
    }

    pub fn session(&self, id: &str) -> rusqlite::Result<Option<Session>> {
        session(&self.conn(), id)
    }

    /// Replaces the draft. `expected` is the version the editor last saw.
    pub fn edit(&self, id: &str, text: &str, expected: u64) -> Result<Session, WriteError> {
        self.write(id, Some(expected), "edit", Some(text))
    }

    pub fn finalize(&self, id: &str, expected: Option<u64>) -> Result<Session, WriteError> {
        self.write(id, expected, "finalize", None)
    }

    fn write(&self, id: &str, expected: Option<u64>, action: &str, text: Option<&str>) -> Result<Session, WriteError> {
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let current = session(&tx, id)?.ok_or(WriteError::NotFound)?;
        if current.status != Status::Draft {
            return Err(WriteError::NotDraft(current.status));
        }
        if let Some(expected) = expected {
            if expected != current.version {
                return Err(WriteError::Stale {
                    expected,
                    actual: current.version,
                });
            }
        }
        let text = text.map(str::to_string).or(current.draft_report).unwrap_or_default();
        let status = if action == "finalize" { Status::Finalized } else { Status::Draft };
        tx.execute(
            "UPDATE studies SET draft = ?2, status = ?3 WHERE id = ?1",
            params![id, text, status.as_str()],
        )?;
        tx.execute(
            "INSERT INTO audit (study_id, seq, at, action, text) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![id, (current.version + 1) as i64, now(), action, text],
        )?;
        let out = session(&tx, id)?.ok_or(WriteError::NotFound)?;
        tx.commit()?;
        Ok(out)
    }
}

fn put_interpretation(
    conn: &Connection,
    id: &str,
    threshold: &str,
    result: &str,
    heatmaps: &[HeatmapPngs],
) -> rusqlite::Result<()> {
    conn.execute(
        "INSERT OR IGNORE INTO interpretations (study_id, threshold, result) VALUES (?1, ?2, ?3)",
        params![id, threshold, result],
    )?;
    let mut stmt = conn.prepare_cached(
        "INSERT OR IGNORE INTO heatmaps (study_id, disease, kind, png) VALUES (?1, ?2, ?3, ?4)",
    )?;
    for h in heatmaps {
        stmt.execute(params![id, h.disease, "overlay", h.overlay])?;
        stmt.execute(params![id, h.disease, "raw", h.raw])?;
    }
    Ok(())
}

fn session(conn: &Connection, id: &str) -> rusqlite::Result<Option<Session>> {
    let row = conn
        .query_row(
            "SELECT created_at, status, draft, error, original FROM studies WHERE id = ?1",
            [id],
            |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, Option<String>>(2)?,
                    r.get::<_, Option<String>>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            },
        )
        .optional()?;
    let Some((created_at, status, draft_report, error, original)) = row else {
        return Ok(None);
    };
    let mut stmt = conn.prepare_cached("SELECT seq, at, action, text FROM audit WHERE study_id = ?1 ORDER BY seq")?;
    let audit = stmt
        .query_map([id], |r| {
            Ok(AuditEntry {
                seq: r.get::<_, i64>(0)? as u64,
                at: r.get(1)?,
                action: r.get(2)?,
                text: r.get(3)?,
            })
        })?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    let original = original
        .map(|s| serde_json::from_str(&s))
        .transpose()
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, e.into()))?;
    Ok(Some(Session {
        study_id: id.to_string(),
        created_at,
        status: Status::parse(&status)?,
        version: audit.len() as u64,
        draft_report,
        audit,
        error,
        original,
    }))
}

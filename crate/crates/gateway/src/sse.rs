//! `/v1/events`: household events as server-sent events.
//!
//! Each message carries `event: <name>`, `id: <seq>` and the event as JSON in
//! `data:`. A client resumes with `Last-Event-ID` (or `?after=`); everything
//! still in the backlog after that sequence number is replayed first. When
//! the backlog no longer reaches back that far a `resync` message is sent so
//! the client knows to refetch state. Without a resume point the stream starts
//! at the newest event.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::State;
use axum::http::HeaderMap;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use futures::Stream;
use hearth_core::events::Sequenced;
use hearth_core::Household;
use serde::Deserialize;
use tokio::sync::broadcast;
use tokio::sync::broadcast::error::RecvError;

use crate::error::{ApiError, ApiResult};
use crate::extract::ApiQuery;
use crate::AppState;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsQuery {
    pub after: Option<u64>,
}

fn resume_point(headers: &HeaderMap, query: &EventsQuery) -> ApiResult<Option<u64>> {
    if let Some(v) = headers.get("last-event-id") {
        let parsed = v.to_str().ok().and_then(|s| s.trim().parse().ok());
        return parsed
            .map(Some)
            .ok_or_else(|| ApiError::validation("Last-Event-ID", "must be a sequence number"));
    }
    Ok(query.after)
}

fn message(item: &Sequenced) -> SseEvent {
    let data = serde_json::to_string(&item.event).unwrap_or_else(|_| "{}".into());
    SseEvent::default()
        .event(item.event.name())
        .id(item.seq.to_string())
        .data(data)
}

fn resync(after: u64, oldest: Option<u64>) -> SseEvent {
    SseEvent::default()
        .event("resync")
        .data(serde_json::json!({ "after": after, "oldest": oldest }).to_string())
}

struct Cursor {
    household: Arc<Household>,
    rx: broadcast::Receiver<Arc<Sequenced>>,
    pending: VecDeque<Sequenced>,
    notice: Option<SseEvent>,
    last: u64,
}

impl Cursor {
    fn refill(&mut self) {
        let r = self.household.events().since(self.last);
        if !r.complete {
            self.notice = Some(resync(self.last, r.events.first().map(|e| e.seq)));
        }
        self.pending.extend(r.events);
    }

    async fn next(mut self) -> Option<(Result<SseEvent, Infallible>, Self)> {
        loop {
            if let Some(n) = self.notice.take() {
                return Some((Ok(n), self));
            }
            if let Some(item) = self.pending.pop_front() {
                if item.seq <= self.last {
                    continue;
                }
                self.last = item.seq;
                return Some((Ok(message(&item)), self));
            }
            match self.rx.recv().await {
                Ok(item) => self.pending.push_back((*item).clone()),
                Err(RecvError::Lagged(_)) => self.refill(),
                Err(RecvError::Closed) => return None,
            }
        }
    }
}

pub fn stream(app: &AppState, after: Option<u64>) -> impl Stream<Item = Result<SseEvent, Infallible>> + Send + 'static {
    // Subscribe before reading the backlog so nothing falls in between;
    // duplicates are dropped by sequence number.
    let rx = app.events.subscribe();
    let household = app.household.clone();
    let mut cursor = Cursor {
        last: after.unwrap_or_else(|| household.events().last_seq()),
        household,
        rx,
        pending: VecDeque::new(),
        notice: None,
    };
    if after.is_some() {
        cursor.refill();
    }
    futures::stream::unfold(cursor, Cursor::next)
}

pub async fn events(
    State(app): State<AppState>,
    headers: HeaderMap,
    ApiQuery(query): ApiQuery<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let after = resume_point(&headers, &query)?;
    Ok(Sse::new(stream(&app, after)).keep_alive(KeepAlive::default()))
}

/// Deterministic request/response application run by victim and honey servers.
///
/// The response depends only on the app id, the request bytes and how many
/// requests this instance has served. Two instances with the same id fed the
/// same requests answer byte-for-byte identically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerApp {
    app_id: String,
    served: u64,
    log: Vec<Vec<u8>>,
}

impl ServerApp {
    pub fn new(app_id: impl Into<String>) -> Self {
        ServerApp {
            app_id: app_id.into(),
            served: 0,
            log: Vec::new(),
        }
    }

    pub fn app_id(&self) -> &str {
        &self.app_id
    }

    pub fn request_count(&self) -> u64 {
        self.served
    }

    /// Every request this instance has handled, in order.
    pub fn request_log(&self) -> &[Vec<u8>] {
        &self.log
    }

    pub fn handle(&mut self, request: &[u8]) -> Vec<u8> {
        self.served += 1;
        self.log.push(request.to_vec());
        respond(&self.app_id, request, self.served)
    }
}

/// Echo-style response: `"<app_id>#<n>:"` followed by the request bytes.
pub fn respond(app_id: &str, request: &[u8], count: u64) -> Vec<u8> {
    let mut out = format!("{app_id}#{count}:").into_bytes();
    out.extend_from_slice(request);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn response_shape() {
        let mut app = ServerApp::new("web");
        assert_eq!(app.handle(b"GET"), b"web#1:GET");
        assert_eq!(app.handle(b"x"), b"web#2:x");
        assert_eq!(app.request_count(), 2);
        assert_eq!(app.request_log(), &[b"GET".to_vec(), b"x".to_vec()]);
    }

    proptest! {
        #[test]
        fn same_id_same_history_same_responses(reqs in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..64), 0..40)) {
            let mut a = ServerApp::new("svc");
            let mut b = ServerApp::new("svc");
            for r in &reqs {
                prop_assert_eq!(a.handle(r), b.handle(r));
            }
        }
    }
}

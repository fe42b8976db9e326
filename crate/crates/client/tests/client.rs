use tsmor_client::{ApiError, Client, OnlineRequest};
use tsmor_core::ErrorKind;

#[test]
fn api_error_wire_format() {
    let e = ApiError {
        kind: ErrorKind::Numerical,
        message: "x".into(),
    };
    let text = serde_json::to_string(&e).unwrap();
    assert_eq!(text, r#"{"kind":"numerical","message":"x"}"#);
    assert_eq!(serde_json::from_str::<ApiError>(&text).unwrap(), e);
}

#[test]
fn online_request_fields_default_off() {
    let req: OnlineRequest = serde_json::from_str(r#"{"bundle":"b","z":[[0.1,1.0]]}"#).unwrap();
    assert!(!req.fields);
    assert_eq!(req.z, vec![vec![0.1, 1.0]]);
}

#[test]
fn base_url_drops_trailing_slash() {
    assert_eq!(Client::new("http://h:1/").base_url(), "http://h:1");
}

#[tokio::test]
async fn unreachable_service_is_an_io_error() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = Client::new(&format!("http://127.0.0.1:{port}")).health().await.unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Io);
}

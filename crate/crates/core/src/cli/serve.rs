use tiny_http::{Header, Response, Server};

use crate::verify::{CompletionRequest, CompletionResponse, Generator};

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header")
}

/// Answers completion requests until `max_requests` have been handled
/// (forever when `None`).
pub fn serve(server: &Server, gen: &dyn Generator, max_requests: Option<usize>) {
    let mut handled = 0;
    for mut request in server.incoming_requests() {
        let mut body = String::new();
        let reply = match request.as_reader().read_to_string(&mut body) {
            Err(e) => Response::from_string(format!("unreadable body: {e}")).with_status_code(400),
            Ok(_) => match serde_json::from_str::<CompletionRequest>(&body) {
                Err(e) => Response::from_string(format!("bad request: {e}")).with_status_code(400),
                Ok(req) => {
                    let seed = req.seed.unwrap_or(0);
                    match gen.generate(&req.prompt, req.policy(), req.max_new_tokens, seed) {
                        Ok(text) => {
                            let json = serde_json::to_string(&CompletionResponse { text }).expect("response serializes");
                            Response::from_string(json).with_header(json_header())
                        }
                        Err(e) => Response::from_string(e.to_string()).with_status_code(422),
                    }
                }
            },
        };
        let _ = request.respond(reply);
        handled += 1;
        if max_requests.is_some_and(|m| handled >= m) {
            break;
        }
    }
}

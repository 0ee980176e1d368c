"""Client/server loop: wire protocol, simulated experiment server and optimizer client."""

from .runner import (
    Client,
    RunManifest,
    ScanConfig,
    Step1Config,
    Step2Config,
    execute,
    replay,
    run_step1,
    run_step2,
)
from .server import ExperimentServer, LoopbackTransport, TcpTransport, make_tcp_server, serve
from .wire import EvalKind, EvalRequest, EvalResponse, ErrorResponse, ProtocolError

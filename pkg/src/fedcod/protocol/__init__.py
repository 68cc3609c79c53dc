"""Per-node state machines for the nine protocol variants."""
from .nodes import Client, Server
from .plans import Route, agr_relay, aggregation_weights, hierfl_route, upload_plan
from .variants import SERVER, Download, RoundSpec, Upload, Variant, parse_variant

__all__ = ["SERVER", "Client", "Download", "Route", "RoundSpec", "Server", "Upload", "Variant",
           "agr_relay", "aggregation_weights", "hierfl_route", "parse_variant", "upload_plan"]

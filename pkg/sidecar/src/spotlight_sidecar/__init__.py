"""Protocol server exposing latent-diffusion denoiser backbones, with echo
and analytic toy modes for conformance testing."""

from .backbones import CONDITIONING, BackboneAdapter, ModelUnavailable
from .models import EchoModel, ToyModel, alphas_bar
from .server import ServerConfig, SidecarServer, serve

__version__ = "0.1.0"

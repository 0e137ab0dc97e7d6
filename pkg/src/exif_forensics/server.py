"""exif-forensics MCP server: the workbench actions as stdio tools."""

import logging

from fastmcp import FastMCP

from .actions import (
    cmd_analyze,
    cmd_build_corpus,
    cmd_distortion_bench,
    cmd_evaluate,
    cmd_forensics_probe,
    cmd_probe_exif,
    cmd_synth_corpus,
    cmd_train,
)
from .config import load_config
from .models import (
    AnalyzeResult,
    BuildCorpusResult,
    DistortionBenchResult,
    EvaluationResult,
    ForensicsProbeResult,
    ProbeReport,
    SynthCorpusResult,
    TrainResult,
)

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("exif-forensics")

# Initialize FastMCP server
mcp = FastMCP("exif-forensics")


@mcp.tool()
async def build_corpus(
    source_dir: str, out_manifest: str | None = None, config_path: str | None = None
) -> BuildCorpusResult:
    """
    Parse EXIF metadata of every image in a directory and write a manifest.

    Args:
        source_dir: Directory of images with optional sidecars
        out_manifest: Manifest path (defaults to the run directory)
        config_path: Optional TOML configuration file

    Returns:
        BuildCorpusResult with filter counts and the manifest path
    """
    return await cmd_build_corpus(source_dir, load_config(config_path), out_manifest)


@mcp.tool()
async def train_encoder(
    manifest: str, config_path: str | None = None, resume: str | None = None
) -> TrainResult:
    """
    Train the patch/EXIF dual encoder on a manifest.

    Args:
        manifest: JSON Lines manifest from build_corpus or synth_corpus
        config_path: Optional TOML configuration file
        resume: Optional checkpoint to continue from

    Returns:
        TrainResult with checkpoint and training log paths
    """
    return await cmd_train(manifest, load_config(config_path), resume)


@mcp.tool()
async def analyze_images(
    source: str, checkpoint: str, config_path: str | None = None
) -> AnalyzeResult:
    """
    Detect and localize splices in an image or a directory of images.

    Args:
        source: Image file or directory
        checkpoint: Trained checkpoint
        config_path: Optional TOML configuration file

    Returns:
        AnalyzeResult with consistency scores and output map paths per image
    """
    return await cmd_analyze(source, checkpoint, load_config(config_path))


@mcp.tool()
async def evaluate_maps(
    manifest: str, checkpoint: str | None = None, config_path: str | None = None
) -> EvaluationResult:
    """Compute p-mAP, cIoU and detection mAP for a manifest with ground-truth masks."""
    return await cmd_evaluate(manifest, load_config(config_path), checkpoint)


@mcp.tool()
async def distortion_bench(
    manifest: str, checkpoint: str, config_path: str | None = None
) -> DistortionBenchResult:
    """Run the 20-bin radial distortion linear probe."""
    return await cmd_distortion_bench(manifest, checkpoint, load_config(config_path))


@mcp.tool()
async def probe_exif(
    manifest: str,
    checkpoint: str,
    preprocessing: str = "center-crop",
    config_path: str | None = None,
) -> ProbeReport:
    """Train per-tag EXIF linear probes on frozen features."""
    return await cmd_probe_exif(manifest, checkpoint, load_config(config_path), preprocessing)


@mcp.tool()
async def forensics_probe(
    manifest: str, checkpoint: str, config_path: str | None = None
) -> ForensicsProbeResult:
    """Train a real-versus-spliced linear probe under resize and center-crop."""
    return await cmd_forensics_probe(manifest, checkpoint, load_config(config_path))


@mcp.tool()
async def synth_corpus(
    out_dir: str,
    per_camera: int = 32,
    n_composites: int = 50,
    n_pristine: int = 50,
    config_path: str | None = None,
) -> SynthCorpusResult:
    """Render the synthetic eight-camera corpus and its splice evaluation set."""
    return await cmd_synth_corpus(
        out_dir, load_config(config_path), per_camera, n_composites, n_pristine
    )


def main():
    """Run the MCP server."""
    mcp.run()


if __name__ == "__main__":
    main()
